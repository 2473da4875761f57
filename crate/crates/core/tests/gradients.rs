mod common;

use candle_core::{Device, Tensor};
use hybrid_osr::training::{hybrid_loss_batch, LossWeights};

#[test]
fn autograd_matches_central_differences_for_one_seed() {
    let rel = common::gradcheck::gradient_check(3).unwrap();
    assert!(rel < 1e-3);
}

#[test]
fn loss_gradients_match_closed_forms() {
    // d CE / d logits = (softmax - onehot) / B; d MSE / d mask = 2 (mask - gt) / (B * pixels)
    let dev = Device::Cpu;
    let logits = candle_core::Var::from_vec(vec![0.3f64, -1.2, 2.0, 0.5, 0.5, -0.1], (2, 3), &dev).unwrap();
    let mask = candle_core::Var::from_vec(vec![0.2f64, 0.9, 0.4, 0.6, 0.1, 0.3, 0.8, 0.7], (2, 2, 2), &dev).unwrap();
    let gt = Tensor::from_vec(vec![0.0f64, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0], (2, 2, 2), &dev).unwrap();
    let labels = Tensor::new(&[2u32, 0], &dev).unwrap();
    let w = LossWeights { cls: 0.6, loc: 1.5 };
    let loss = hybrid_loss_batch(logits.as_tensor(), &labels, Some((mask.as_tensor(), &gt)), w).unwrap();
    let grads = loss.total.backward().unwrap();

    let l = logits.to_vec2::<f64>().unwrap();
    let g = grads.get(logits.as_tensor()).unwrap().to_vec2::<f64>().unwrap();
    for (b, y) in [(0usize, 2usize), (1, 0)] {
        let p = hybrid_osr::model::softmax(&l[b]);
        for k in 0..3 {
            let expected = w.cls * (p[k] - (k == y) as u8 as f64) / 2.0;
            assert!((g[b][k] - expected).abs() < 1e-12, "logit grad [{b}][{k}]");
        }
    }
    let m = mask.flatten_all().unwrap().to_vec1::<f64>().unwrap();
    let t = gt.flatten_all().unwrap().to_vec1::<f64>().unwrap();
    let gm = grads.get(mask.as_tensor()).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
    for i in 0..8 {
        let expected = w.loc * 2.0 * (m[i] - t[i]) / 8.0;
        assert!((gm[i] - expected).abs() < 1e-12, "mask grad {i}");
    }
}
