//! Single-file checkpoints: every parameter and batch-norm statistic keyed
//! by layer path, with the model configuration in the file metadata.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use candle_nn::VarMap;
use safetensors::tensor::{Dtype, SafeTensors, TensorView};

use crate::discriminator::{Discriminator, DiscriminatorConfig};
use crate::error::{Error, Result};
use crate::metrics::{IdentityBaseline, Relighter};
use crate::relightnet::params::named_vars;
use crate::relightnet::{RelightNet, VariantConfig};

const KIND_KEY: &str = "kind";
const CONFIG_KEY: &str = "variant_config";
const DISCRIMINATOR_KEY: &str = "discriminator_config";
const STEP_KEY: &str = "step";

/// A loaded checkpoint.
#[allow(clippy::large_enum_variant)]
pub enum Checkpoint {
    Model {
        net: RelightNet,
        discriminator: Option<Discriminator>,
        step: u64,
    },
    /// Copies the input; used as the reference point of the score.
    Identity,
}

impl Checkpoint {
    pub fn relighter(&self) -> &dyn Relighter {
        match self {
            Checkpoint::Model { net, .. } => net,
            Checkpoint::Identity => &IdentityBaseline,
        }
    }

    pub fn net(&self) -> Option<&RelightNet> {
        match self {
            Checkpoint::Model { net, .. } => Some(net),
            Checkpoint::Identity => None,
        }
    }
}

fn f32_bytes(t: &Tensor) -> Result<Vec<u8>> {
    let v = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    Ok(v.iter().flat_map(|x| x.to_le_bytes()).collect())
}

/// Name, shape and little-endian f32 bytes of one tensor.
type Entry = (String, Vec<usize>, Vec<u8>);

fn collect(varmaps: &[&VarMap]) -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    for vm in varmaps {
        for (name, var) in named_vars(vm) {
            out.push((name, var.dims().to_vec(), f32_bytes(var.as_tensor())?));
        }
    }
    Ok(out)
}

fn write(path: &Path, entries: &[Entry], meta: HashMap<String, String>) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let views = entries
        .iter()
        .map(|(n, shape, bytes)| {
            TensorView::new(Dtype::F32, shape.clone(), bytes)
                .map(|v| (n.clone(), v))
                .map_err(|e| Error::Checkpoint(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let bytes = safetensors::serialize(views, Some(meta)).map_err(|e| Error::Checkpoint(e.to_string()))?;
    std::fs::write(path, canonical_header(bytes)?)?;
    Ok(())
}

/// Rewrite the JSON header with sorted keys; the metadata map iterates in
/// random order, which would make identical models save to different bytes.
fn canonical_header(mut bytes: Vec<u8>) -> Result<Vec<u8>> {
    let n = u64::from_le_bytes(bytes[..8].try_into().expect("8-byte prefix")) as usize;
    let header: BTreeMap<String, serde_json::Value> = serde_json::from_slice(&bytes[8..8 + n])?;
    let sorted = serde_json::to_vec(&header)?;
    if sorted.len() > n {
        return Err(Error::Checkpoint("header grew while sorting".into()));
    }
    bytes[8..8 + sorted.len()].copy_from_slice(&sorted);
    bytes[8 + sorted.len()..8 + n].fill(b' ');
    Ok(bytes)
}

/// Save a model, and optionally its discriminator, at `step`.
pub fn save_checkpoint(path: &Path, net: &RelightNet, discriminator: Option<&Discriminator>, step: u64) -> Result<()> {
    let mut meta = HashMap::new();
    meta.insert(KIND_KEY.to_owned(), "relightnet".to_owned());
    meta.insert(CONFIG_KEY.to_owned(), serde_json::to_string(net.config())?);
    meta.insert(STEP_KEY.to_owned(), step.to_string());
    let mut maps = vec![net.varmap()];
    if let Some(d) = discriminator {
        meta.insert(DISCRIMINATOR_KEY.to_owned(), serde_json::to_string(d.config())?);
        maps.push(d.varmap());
    }
    write(path, &collect(&maps)?, meta)
}

/// Checkpoint of the identity baseline (no parameters).
pub fn save_identity_checkpoint(path: &Path) -> Result<()> {
    let meta = HashMap::from([(KIND_KEY.to_owned(), "identity".to_owned())]);
    write(path, &[], meta)
}

fn fill(varmap: &VarMap, st: &SafeTensors, device: &Device) -> Result<()> {
    for (name, var) in named_vars(varmap) {
        let view = st
            .tensor(&name)
            .map_err(|_| Error::Checkpoint(format!("checkpoint lacks variable {name}")))?;
        if view.dtype() != Dtype::F32 {
            return Err(Error::Checkpoint(format!("{name}: expected f32, found {:?}", view.dtype())));
        }
        if view.shape() != var.dims() {
            return Err(Error::Checkpoint(format!(
                "{name}: shape {:?} in file, model expects {:?}",
                view.shape(),
                var.dims()
            )));
        }
        let values: Vec<f32> = view
            .data()
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        var.set(&Tensor::from_vec(values, view.shape(), device)?)?;
    }
    Ok(())
}

/// Load a checkpoint. With `expect`, the stored variant must match it.
pub fn load_checkpoint(path: &Path, device: &Device, expect: Option<&VariantConfig>) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let (_, header) = SafeTensors::read_metadata(&bytes).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let meta = header.metadata().clone().unwrap_or_default();
    match meta.get(KIND_KEY).map(String::as_str) {
        Some("identity") => return Ok(Checkpoint::Identity),
        Some("relightnet") => {}
        other => return Err(Error::Checkpoint(format!("{}: unknown checkpoint kind {other:?}", path.display()))),
    }
    let config: VariantConfig = serde_json::from_str(
        meta.get(CONFIG_KEY)
            .ok_or_else(|| Error::Checkpoint("checkpoint has no variant configuration".into()))?,
    )?;
    if let Some(e) = expect {
        if e.variant != config.variant {
            return Err(Error::Config(format!(
                "checkpoint holds a {:?} model, expected {:?}",
                config.variant, e.variant
            )));
        }
        if e != &config {
            return Err(Error::Config(format!(
                "checkpoint configuration {config:?} differs from expected {e:?}"
            )));
        }
    }
    let st = SafeTensors::deserialize(&bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let net = RelightNet::uninitialised(config, device)?;
    fill(net.varmap(), &st, device)?;
    let discriminator = match meta.get(DISCRIMINATOR_KEY) {
        Some(json) => {
            let cfg: DiscriminatorConfig = serde_json::from_str(json)?;
            let d = Discriminator::uninitialised(cfg, device)?;
            fill(d.varmap(), &st, device)?;
            Some(d)
        }
        None => None,
    };
    let step = meta.get(STEP_KEY).and_then(|s| s.parse().ok()).unwrap_or(0);
    Ok(Checkpoint::Model { net, discriminator, step })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relightnet::Variant;

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt_3.safetensors");
        let cfg = VariantConfig::preset(Variant::IllumPredicter).with_image_size(32).with_base_width(4);
        let net = RelightNet::new(cfg.clone(), &Device::Cpu, 11).unwrap();
        let disc = Discriminator::new(
            DiscriminatorConfig { base_width: 4, ..Default::default() },
            &Device::Cpu,
            2,
        )
        .unwrap();
        save_checkpoint(&path, &net, Some(&disc), 3).unwrap();
        let loaded = load_checkpoint(&path, &Device::Cpu, Some(&cfg)).unwrap();
        let Checkpoint::Model { net: back, discriminator, step } = loaded else { panic!("kind") };
        assert_eq!(step, 3);
        let pairs = named_vars(net.varmap()).into_iter().zip(named_vars(back.varmap()));
        for ((na, a), (nb, b)) in pairs {
            assert_eq!(na, nb);
            let x = a.flatten_all().unwrap().to_vec1::<f32>().unwrap();
            let y = b.flatten_all().unwrap().to_vec1::<f32>().unwrap();
            assert!(x.iter().zip(&y).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
        assert_eq!(discriminator.as_ref().unwrap().parameter_count(), disc.parameter_count());

        let again = dir.path().join("again.safetensors");
        save_checkpoint(&again, &back, discriminator.as_ref(), 3).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }

    #[test]
    fn variant_mismatch_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.safetensors");
        let cfg = VariantConfig::preset(Variant::EnvmapOnly).with_image_size(32).with_base_width(2);
        save_checkpoint(&path, &RelightNet::new(cfg, &Device::Cpu, 0).unwrap(), None, 0).unwrap();
        let other = VariantConfig::preset(Variant::EnvmapScene);
        assert!(matches!(load_checkpoint(&path, &Device::Cpu, Some(&other)), Err(Error::Config(_))));
    }

    #[test]
    fn identity_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("id.safetensors");
        save_identity_checkpoint(&path).unwrap();
        assert!(matches!(load_checkpoint(&path, &Device::Cpu, None).unwrap(), Checkpoint::Identity));
        assert!(load_checkpoint(&dir.path().join("missing"), &Device::Cpu, None).is_err());
    }
}
