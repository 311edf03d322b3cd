mod support;

use support::gradient::{check, instance};
use support::reference;

#[test]
fn reference_forward_agrees_with_the_tape() {
    let (model, batch) = instance(false);
    let params: Vec<f64> = model.params.iter().map(|&v| v as f64).collect();
    let a = reference::loss(&model, &params, &batch);
    let b = model.loss(&batch).unwrap();
    assert!((a - b).abs() < 1e-5, "{a} vs {b}");
}

#[test]
fn every_block_matches_central_differences() {
    let (model, batch) = instance(false);
    let result = check(&model, &batch, 200);
    assert_eq!(result.len(), 6);
    for (block, worst) in result {
        println!("{block}: worst relative error {worst:.3e}");
        assert!(worst <= 1e-2, "{block}: relative error {worst:.3e}");
    }
}

#[test]
fn tied_head_gradients_match() {
    let (model, batch) = instance(true);
    for (block, worst) in check(&model, &batch, 50) {
        assert!(worst <= 1e-2, "{block}: relative error {worst:.3e}");
    }
}

#[test]
fn duplicated_batch_leaves_loss_and_gradients_unchanged() {
    let (model, batch) = instance(false);
    let (l1, g1) = model.loss_and_gradients(&batch).unwrap();
    let (l2, g2) = model.loss_and_gradients(&batch.doubled()).unwrap();
    assert!((l1 - l2).abs() < 1e-6);
    let scale = g1.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    for (a, b) in g1.iter().zip(&g2) {
        assert!((a - b).abs() <= 1e-6 * scale.max(1.0), "{a} vs {b}");
    }
}

#[test]
fn gradients_are_deterministic() {
    let (model, batch) = instance(false);
    let (_, a) = model.loss_and_gradients(&batch).unwrap();
    let (_, b) = model.loss_and_gradients(&batch).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}
