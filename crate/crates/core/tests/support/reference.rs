//! Straight-line `f64` forward pass of the decoder transformer, written
//! independently of the tape, used as a finite-difference oracle.

use tagc::trainer::{Batch, Model};

fn tensor<'a>(model: &Model, params: &'a [f64], name: &str) -> &'a [f64] {
    let s = model
        .slot(name)
        .unwrap_or_else(|| panic!("missing tensor {name}"));
    &params[s.range.clone()]
}

/// `x[r x k] @ w[k x c]`.
fn mm(x: &[f64], w: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[i * c + j] = (0..k).map(|p| x[i * k + p] * w[p * c + j]).sum();
        }
    }
    out
}

fn add_bias(x: &mut [f64], b: &[f64]) {
    for row in x.chunks_mut(b.len()) {
        for (v, bb) in row.iter_mut().zip(b) {
            *v += bb;
        }
    }
}

fn layer_norm(x: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
    let c = g.len();
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(c) {
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
        let s = 1.0 / (var + 1e-5).sqrt();
        out.extend(
            row.iter()
                .enumerate()
                .map(|(j, v)| g[j] * (v - mean) * s + b[j]),
        );
    }
    out
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

fn attention(qkv: &[f64], batch: usize, seq: usize, d: usize, heads: usize) -> Vec<f64> {
    let hd = d / heads;
    let mut out = vec![0.0; batch * seq * d];
    for b in 0..batch {
        for h in 0..heads {
            for i in 0..seq {
                let q = |t: usize| qkv[(b * seq + i) * 3 * d + h * hd + t];
                let k = |j: usize, t: usize| qkv[(b * seq + j) * 3 * d + d + h * hd + t];
                let v = |j: usize, t: usize| qkv[(b * seq + j) * 3 * d + 2 * d + h * hd + t];
                let scores: Vec<f64> = (0..=i)
                    .map(|j| (0..hd).map(|t| q(t) * k(j, t)).sum::<f64>() / (hd as f64).sqrt())
                    .collect();
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let z: f64 = e.iter().sum();
                for t in 0..hd {
                    out[(b * seq + i) * d + h * hd + t] = (0..=i).map(|j| e[j] / z * v(j, t)).sum();
                }
            }
        }
    }
    out
}

/// Mean next-token cross-entropy for `params` laid out as in `model`.
pub fn loss(model: &Model, params: &[f64], batch: &Batch) -> f64 {
    let c = &model.config;
    let (d, f, n) = (c.d_model, c.ffn_mult * c.d_model, batch.batch * batch.seq);
    let p = |name: &str| tensor(model, params, name);
    let wte = p("wte");
    let wpe = p("wpe");
    let mut x = Vec::with_capacity(n * d);
    for (i, &tok) in batch.inputs.iter().enumerate() {
        let pos = i % batch.seq;
        x.extend((0..d).map(|j| wte[tok * d + j] + wpe[pos * d + j]));
    }
    for l in 0..c.layers {
        let q = |s: &str| p(&format!("h.{l}.{s}"));
        let h = layer_norm(&x, q("ln_1.weight"), q("ln_1.bias"));
        let mut qkv = mm(&h, q("attn.c_attn.weight"), n, d, 3 * d);
        add_bias(&mut qkv, q("attn.c_attn.bias"));
        let a = attention(&qkv, batch.batch, batch.seq, d, c.heads);
        let mut o = mm(&a, q("attn.c_proj.weight"), n, d, d);
        add_bias(&mut o, q("attn.c_proj.bias"));
        x.iter_mut().zip(&o).for_each(|(a, b)| *a += b);
        let h = layer_norm(&x, q("ln_2.weight"), q("ln_2.bias"));
        let mut u = mm(&h, q("mlp.c_fc.weight"), n, d, f);
        add_bias(&mut u, q("mlp.c_fc.bias"));
        u.iter_mut().for_each(|v| *v = gelu(*v));
        let mut o = mm(&u, q("mlp.c_proj.weight"), n, f, d);
        add_bias(&mut o, q("mlp.c_proj.bias"));
        x.iter_mut().zip(&o).for_each(|(a, b)| *a += b);
    }
    let x = layer_norm(&x, p("ln_f.weight"), p("ln_f.bias"));
    let v = c.vocab;
    let logits = if c.tied_head {
        let mut out = vec![0.0; n * v];
        for i in 0..n {
            for t in 0..v {
                out[i * v + t] = (0..d).map(|j| x[i * d + j] * wte[t * d + j]).sum();
            }
        }
        out
    } else {
        mm(&x, p("lm_head.weight"), n, d, v)
    };
    let mut total = 0.0;
    for (i, &t) in batch.targets.iter().enumerate() {
        let row = &logits[i * v..(i + 1) * v];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        total += lse - row[t];
    }
    total / n as f64
}
