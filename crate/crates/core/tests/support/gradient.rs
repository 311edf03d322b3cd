use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tagc::trainer::{build_model, Batch, Model, TinyModelConfig};

use super::reference;

const H: f64 = 1e-3;

pub fn instance(tied_head: bool) -> (Model, Batch) {
    let cfg = TinyModelConfig {
        layers: 2,
        d_model: 32,
        heads: 4,
        ffn_mult: 2,
        vocab: 32,
        context: 8,
        tied_head,
    };
    let mut model = build_model(&cfg, 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for p in model.params.iter_mut() {
        *p += rng.random_range(-0.1f32..0.1);
    }
    let text: Vec<u8> = (0..18).map(|_| rng.random_range(0..32u8)).collect();
    (model, Batch::from_windows(&[&text[..9], &text[9..]]))
}

fn block_of(name: &str) -> &'static str {
    if name == "wte" {
        "embedding"
    } else if name == "wpe" {
        "positional"
    } else if name.contains(".attn.") {
        "attention"
    } else if name.contains(".mlp.") {
        "feed_forward"
    } else if name.contains("ln_") {
        "norm"
    } else {
        "head"
    }
}

/// Worst relative error per block over `samples` random coordinates.
pub fn check(model: &Model, batch: &Batch, samples: usize) -> Vec<(&'static str, f64)> {
    let (_, grads) = model.loss_and_gradients(batch).unwrap();
    let base: Vec<f64> = model.params.iter().map(|&v| v as f64).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut out = Vec::new();
    for block in [
        "embedding",
        "positional",
        "attention",
        "feed_forward",
        "norm",
        "head",
    ] {
        let coords: Vec<usize> = model
            .layout
            .iter()
            .filter(|s| block_of(&s.name) == block)
            .flat_map(|s| s.range.clone())
            .collect();
        if coords.is_empty() {
            continue;
        }
        let mut worst = 0.0f64;
        let mut q = base.clone();
        for _ in 0..samples {
            let p = coords[rng.random_range(0..coords.len())];
            q[p] = base[p] + H;
            let up = reference::loss(model, &q, batch);
            q[p] = base[p] - H;
            let down = reference::loss(model, &q, batch);
            q[p] = base[p];
            let numeric = (up - down) / (2.0 * H);
            let analytic = grads[p] as f64;
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        out.push((block, worst));
    }
    out
}
