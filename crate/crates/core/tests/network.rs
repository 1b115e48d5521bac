mod common;

use candle_core::backprop::GradStore;
use candle_core::{Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use relight_core::discriminator::{generator_loss_t, Discriminator, DiscriminatorConfig};
use relight_core::objectives::l1_loss_t;
use relight_core::relightnet::{RelightNet, Variant};

fn images(n: usize, size: usize) -> Tensor {
    Tensor::rand(0f32, 1.0, (n, 3, size, size), &Device::Cpu).unwrap()
}

/// Fraction of elements with nonzero gradient over the generator's trainable
/// tensors whose name starts with one of `prefixes`; panics on any non-finite value.
fn nonzero_fraction(net: &RelightNet, grads: &GradStore, prefixes: &[&str]) -> f64 {
    let vars = net.varmap().data().lock().unwrap();
    let (mut nonzero, mut total) = (0usize, 0usize);
    for (name, var) in vars.iter() {
        if name.contains("running_") || !prefixes.iter().any(|p| name.starts_with(p)) {
            continue;
        }
        let g: Vec<f32> = match grads.get(var.as_tensor()) {
            Some(g) => g.flatten_all().unwrap().to_vec1().unwrap(),
            None => vec![0.0; var.elem_count()],
        };
        assert!(g.iter().all(|v| v.is_finite()), "{name} has a non-finite gradient");
        nonzero += g.iter().filter(|v| **v != 0.0).count();
        total += g.len();
    }
    assert!(total > 0);
    nonzero as f64 / total as f64
}

#[test]
fn l1_gradient_reaches_every_encoder_parameter() {
    for variant in [Variant::IllumPredicter, Variant::EnvmapScene] {
        let net = RelightNet::new(common::tiny(variant, 64, 4), &Device::Cpu, 1).unwrap();
        let (i, t, g) = (images(2, 64), images(2, 64), images(2, 64));
        let out = net.relight(&i, &t, true).unwrap();
        let grads = l1_loss_t(&out.relit, &g).unwrap().backward().unwrap();
        let enc = nonzero_fraction(&net, &grads, &["encoder."]);
        let all = nonzero_fraction(&net, &grads, &["encoder.", "decoder."]);
        assert!(enc >= 0.99, "{variant:?}: encoder {enc}");
        assert!(all >= 0.99, "{variant:?}: encoder+decoder {all}");
    }
}

#[test]
fn adversarial_gradient_reaches_the_generator() {
    let dev = Device::Cpu;
    let net = RelightNet::new(common::tiny(Variant::IllumPredicter, 64, 4), &dev, 2).unwrap();
    let disc = Discriminator::new(DiscriminatorConfig { base_width: 8, ..Default::default() }, &dev, 3).unwrap();
    let out = net.relight(&images(2, 64), &images(2, 64), true).unwrap();
    let fake = disc.forward_t(&out.relit, true).unwrap();
    let grads = generator_loss_t(&fake).unwrap().backward().unwrap();
    let frac = nonzero_fraction(&net, &grads, &["encoder.", "decoder."]);
    assert!(frac >= 0.99, "{frac}");
}

fn l1(a: &Tensor, b: &Tensor) -> f32 {
    l1_loss_t(a, b).unwrap().to_scalar().unwrap()
}

#[test]
fn converged_autoencoder_relights_an_image_to_itself() {
    let net = RelightNet::new(common::tiny(Variant::IllumPredicter, 64, 8), &Device::Cpu, 4).unwrap();
    let (_dir, index) = common::toy(2, 64, 4);
    let img = relight_core::data::load_image(&index.record(0).path, 64).unwrap().to_tensor(&Device::Cpu).unwrap().unsqueeze(0).unwrap();
    let untrained = l1(&net.relight(&img, &img, false).unwrap().relit, &img);

    let params = ParamsAdamW { lr: 3e-3, weight_decay: 0.0, ..Default::default() };
    let mut opt = AdamW::new(net.varmap().all_vars(), params).unwrap();
    let mut floor = f32::INFINITY;
    for _ in 0..300 {
        let relit = net.relight(&img, &img, true).unwrap().relit;
        let loss = l1_loss_t(&relit, &img).unwrap();
        floor = floor.min(loss.to_scalar::<f32>().unwrap());
        opt.backward_step(&loss).unwrap();
    }
    let converged = l1(&net.relight(&img, &img, false).unwrap().relit, &img);
    assert!(converged < 0.05, "L1 after training {converged} (train floor {floor}, untrained {untrained})");
    assert!(converged < untrained / 3.0, "{converged} vs untrained {untrained}");
}
