#![allow(dead_code)]

use nial_core::model::{ModelConfig, NialModel};
use nial_core::tensor::{grad_check_many, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// The small whole-model gradient-check architecture: L=32, one conv block,
/// d_model=8, one attention layer, three classes.
pub fn gradcheck_config() -> ModelConfig {
    ModelConfig::tiny(32, 3)
}

/// Max relative error of the full-model loss gradient with respect to every
/// parameter and the input.
pub fn model_grad_error(model: &NialModel, x: &Tensor, labels: &[usize]) -> f64 {
    let n = model.parameters().len();
    let mut inputs: Vec<Tensor> = model.parameters().iter().map(|p| p.value.clone()).collect();
    inputs.push(x.clone());
    grad_check_many(
        |g, vars| {
            let bound = model.bound_from(vars[..n].to_vec())?;
            let logits = model.forward_eval(g, &bound, vars[n])?;
            model.loss(g, logits, labels)
        },
        &inputs,
        1e-5,
    )
    .unwrap()
}

pub fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

/// Independent reduce-on-plateau simulation: the lr in effect after each
/// loss. Written from the rule text, not from the library code.
pub fn reference_plateau(
    losses: &[f64],
    lr0: f64,
    factor: f64,
    patience: usize,
    min_delta: f64,
    min_lr: f64,
) -> Vec<f64> {
    let mut lr = if lr0 < min_lr { min_lr } else { lr0 };
    let mut best: Option<f64> = None;
    let mut bad = 0usize;
    let mut out = Vec::new();
    for &loss in losses {
        let improved = match best {
            None => true,
            Some(b) => loss < b - min_delta,
        };
        if improved {
            best = Some(loss);
            bad = 0;
        } else {
            bad += 1;
        }
        if bad == patience + 1 {
            lr = f64::max(lr * factor, min_lr);
            bad = 0;
        }
        out.push(lr);
    }
    out
}

/// Per-sample brute force: (accuracy, macro F1, F1 of class 1).
pub fn brute_force_metrics(preds: &[usize], labels: &[usize], k: usize) -> (f64, f64, f64) {
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    let class_f1 = |c: usize| {
        let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
        for (&p, &l) in preds.iter().zip(labels) {
            match (p == c, l == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        let den = 2 * tp + fp + fn_;
        if den == 0 {
            0.0
        } else {
            (2 * tp) as f64 / den as f64
        }
    };
    let mut macro_sum = 0.0;
    for c in 0..k {
        macro_sum += class_f1(c);
    }
    (
        correct as f64 / preds.len() as f64,
        macro_sum / k as f64,
        class_f1(1),
    )
}

/// Adam on a scalar with a constant gradient, written out term by term.
pub fn adam_hand_trajectory(alpha: f64, g: f64, steps: usize) -> Vec<f64> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
    let (mut theta, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
    let mut out = Vec::new();
    for t in 1..=steps as i32 {
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let m_hat = m / (1.0 - b1.powi(t));
        let v_hat = v / (1.0 - b2.powi(t));
        theta -= alpha * m_hat / (v_hat.sqrt() + eps);
        out.push(theta);
    }
    out
}

/// Runs the library Adam for `steps` steps on a scalar with gradient `g`.
pub fn adam_library_trajectory(alpha: f64, g: f64, steps: usize) -> Vec<f64> {
    use nial_core::model::Parameter;
    use nial_core::optim::Adam;
    let mut params = vec![Parameter {
        name: "theta".into(),
        value: Tensor::from_vec(vec![1], vec![0.0]).unwrap(),
    }];
    let mut adam = Adam::new(alpha);
    (0..steps)
        .map(|_| {
            params[0].value.set_grad(vec![g]).unwrap();
            adam.step(&mut params).unwrap();
            params[0].value.data()[0]
        })
        .collect()
}

/// Random loss sequences that mix improvements, plateaus and spikes.
pub fn random_losses(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut x: f64 = rng.random_range(0.5..2.0);
    (0..n)
        .map(|_| {
            let r: f64 = rng.random();
            x = if r < 0.3 {
                x * rng.random_range(0.8..1.0)
            } else if r < 0.5 {
                x - rng.random_range(0.0..2e-4)
            } else if r < 0.8 {
                x
            } else {
                x * rng.random_range(1.0..1.3)
            };
            x
        })
        .collect()
}
