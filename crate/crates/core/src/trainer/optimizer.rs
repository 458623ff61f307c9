use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global L2 norm ceiling; non-positive disables clipping.
    pub grad_clip: f64,
}

/// First and second moment accumulators, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let first: Vec<Vec<f64>> = params.into_iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            second: first.clone(),
            first,
            step: 0,
        }
    }
}

/// Diagnostics of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    pub norm_before: f64,
    pub norm_after: f64,
}

pub fn global_norm(grads: &[Vec<f64>]) -> f64 {
    grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
}

/// Rescales `grads` in place so that their global norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> StepInfo {
    let norm_before = global_norm(grads);
    if max_norm > 0.0 && norm_before > max_norm {
        let k = max_norm / norm_before;
        grads.iter_mut().flatten().for_each(|g| *g *= k);
    }
    StepInfo {
        norm_before,
        norm_after: global_norm(grads),
    }
}

/// One bias-corrected Adam update after global-norm clipping. Any
/// non-finite gradient aborts before a single parameter changes.
pub fn adam_step(
    params: &mut [&mut Tensor],
    names: &[&str],
    grads: &mut [Vec<f64>],
    state: &mut OptimizerState,
    cfg: &AdamConfig,
) -> Result<StepInfo> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(Error::Contract(format!(
            "adam_step: {} params, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.first.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads.iter()).enumerate() {
        if p.len() != g.len() {
            return Err(Error::Dimension {
                op: "adam_step",
                left: p.shape().to_vec(),
                right: vec![g.len()],
            });
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient {
                param: names.get(i).map_or_else(|| format!("#{i}"), |n| n.to_string()),
            });
        }
    }
    let info = clip_global_norm(grads, cfg.grad_clip);
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (k, p) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.first[k], &mut state.second[k]);
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            let g = grads[k][j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *w -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(info)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(lr: f64) -> AdamConfig {
        AdamConfig {
            learning_rate: lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: 5.0,
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut a = Tensor::vector(vec![0.5, -1.0]);
        let before = a.clone();
        let mut st = OptimizerState::new([&a]);
        let mut grads = vec![vec![0.0, 0.0]];
        adam_step(&mut [&mut a], &["a"], &mut grads, &mut st, &cfg(0.1)).unwrap();
        assert_eq!(a, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut a = Tensor::vector(vec![2.0]);
        let mut st = OptimizerState::new([&a]);
        let mut grads = vec![vec![1.0]];
        adam_step(&mut [&mut a], &["theta"], &mut grads, &mut st, &cfg(0.1)).unwrap();
        // m̂ = 1, v̂ = 1 → step = 0.1 · 1 / (1 + 1e-8)
        let expect = 2.0 - 0.1 / (1.0 + 1e-8);
        assert!((a.data()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_is_named() {
        let mut a = Tensor::vector(vec![1.0]);
        let mut b = Tensor::vector(vec![1.0, 2.0]);
        let mut st = OptimizerState::new([&a, &b]);
        let mut grads = vec![vec![0.1], vec![f64::NAN, 0.0]];
        let err = adam_step(&mut [&mut a, &mut b], &["a", "gen.w_o"], &mut grads, &mut st, &cfg(0.1)).unwrap_err();
        assert!(err.to_string().contains("gen.w_o"), "{err}");
        assert_eq!(a.data(), &[1.0]);
        assert_eq!(st.step, 0);
    }

    #[test]
    fn clipping_hand_example() {
        let mut g = vec![vec![3.0], vec![4.0]];
        let info = clip_global_norm(&mut g, 1.0);
        assert_eq!(info.norm_before, 5.0);
        assert!((g[0][0] - 0.6).abs() < 1e-15 && (g[1][0] - 0.8).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn clipped_norm_never_exceeds_ceiling(
            g in prop::collection::vec(prop::collection::vec(-100.0..100.0f64, 1..6), 1..5),
            clip in 0.01..10.0f64,
        ) {
            let mut g = g;
            let info = clip_global_norm(&mut g, clip);
            prop_assert!(info.norm_after <= clip + 1e-9);
            if info.norm_before <= clip {
                prop_assert_eq!(info.norm_after, info.norm_before);
            }
        }
    }
}
