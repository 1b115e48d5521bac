//! Parameter bookkeeping on top of [`candle_nn::VarMap`]: seeded
//! initialisation and the trainable/statistics split.

use candle_core::{Tensor, Var};
use candle_nn::VarMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;

fn is_running_stat(name: &str) -> bool {
    name.ends_with("running_mean") || name.ends_with("running_var")
}

fn is_norm_param(name: &str) -> bool {
    name.contains(".bn.")
}

/// FNV-1a, so each variable's init stream depends only on `(seed, name)`.
fn name_hash(name: &str) -> u64 {
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// All variables sorted by name.
pub fn named_vars(varmap: &VarMap) -> Vec<(String, Var)> {
    let data = varmap.data().lock().expect("var map lock poisoned");
    let mut vars: Vec<(String, Var)> = data.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    vars.sort_by(|a, b| a.0.cmp(&b.0));
    vars
}

/// Variables that receive gradients (batch-norm running statistics excluded).
pub fn trainable_vars(varmap: &VarMap) -> Vec<Var> {
    named_vars(varmap)
        .into_iter()
        .filter(|(n, _)| !is_running_stat(n))
        .map(|(_, v)| v)
        .collect()
}

pub fn parameter_count(varmap: &VarMap) -> usize {
    trainable_vars(varmap).iter().map(|v| v.elem_count()).sum()
}

/// Re-initialise weights from a seeded generator: He-normal for conv/linear
/// weights (`gain / sqrt(fan_in)`), zero biases; batch-norm parameters and
/// statistics keep their constant defaults.
pub fn init_deterministic(varmap: &VarMap, seed: u64, gain: impl Fn(&str) -> f64) -> Result<()> {
    for (name, var) in named_vars(varmap) {
        if is_norm_param(&name) || is_running_stat(&name) {
            continue;
        }
        let shape = var.shape().clone();
        let dims = shape.dims();
        let values: Vec<f32> = if name.ends_with("bias") {
            vec![0.0; shape.elem_count()]
        } else {
            let fan_in: usize = dims[1..].iter().product::<usize>().max(1);
            let std = gain(&name) / (fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ name_hash(&name));
            (0..shape.elem_count()).map(|_| normal.sample(&mut rng) as f32).collect()
        };
        var.set(&Tensor::from_vec(values, shape, var.device())?.to_dtype(var.dtype())?)?;
    }
    Ok(())
}
