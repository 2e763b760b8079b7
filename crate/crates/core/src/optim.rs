//! Rectified Adam over a flat parameter vector.
//!
//! Moment estimates live in the same flat layout the model uses for
//! checkpointing, so optimizer state serializes alongside the parameters
//! and training resumes exactly.

use crate::{Error, Result};

/// RAdam hyperparameters. Defaults are the training settings used
/// throughout: lr 0.001, betas (0.9, 0.999), weight decay 0.0001.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RAdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub epsilon: f64,
}

impl Default for RAdamHyper {
    fn default() -> Self {
        RAdamHyper {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.0001,
            epsilon: 1e-8,
        }
    }
}

impl RAdamHyper {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.weight_decay >= 0.0
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("bad hyperparameters: {self:?}")))
        }
    }
}

/// First/second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct RAdamState {
    pub step_count: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
}

/// Fresh state for a parameter vector of the given length: zero moments, t = 0.
pub fn radam_init(param_count: usize) -> RAdamState {
    RAdamState {
        step_count: 0,
        first_moment: vec![0.0; param_count],
        second_moment: vec![0.0; param_count],
    }
}

/// Limit of the approximated SMA length: `2/(1-beta2) - 1`.
pub fn rho_inf(beta2: f64) -> f64 {
    2.0 / (1.0 - beta2) - 1.0
}

/// SMA length at step `t`: `rho_inf - 2 t beta2^t / (1 - beta2^t)`.
pub fn rho_t(t: u64, beta2: f64) -> f64 {
    let b2t = beta2.powi(t as i32);
    rho_inf(beta2) - 2.0 * t as f64 * b2t / (1.0 - b2t)
}

/// Variance rectification factor, defined only when `rho_t > 4`.
/// When it is `None` the un-rectified (plain momentum) update applies.
pub fn rectifier(t: u64, beta2: f64) -> Option<f64> {
    let ri = rho_inf(beta2);
    let rt = rho_t(t, beta2);
    if rt > 4.0 {
        Some((((rt - 4.0) * (rt - 2.0) * ri) / ((ri - 4.0) * (ri - 2.0) * rt)).sqrt())
    } else {
        None
    }
}

/// One optimizer step, in place.
///
/// L2 weight decay is folded into the gradient before the moment updates.
/// Non-finite gradient entries are rejected as a training fault.
pub fn radam_step(
    state: &mut RAdamState,
    params: &mut [f64],
    grads: &[f64],
    hyper: &RAdamHyper,
) -> Result<()> {
    if params.len() != grads.len()
        || params.len() != state.first_moment.len()
        || params.len() != state.second_moment.len()
    {
        return Err(Error::shape(
            format!("{} parameters", state.first_moment.len()),
            format!("{} params / {} grads", params.len(), grads.len()),
        ));
    }
    if let Some(idx) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::TrainingFault(format!(
            "non-finite gradient entry at index {idx}: {}",
            grads[idx]
        )));
    }

    let t = state.step_count + 1;
    let bias1 = 1.0 - hyper.beta1.powi(t as i32);
    let bias2 = 1.0 - hyper.beta2.powi(t as i32);
    let rect = rectifier(t, hyper.beta2);

    for i in 0..params.len() {
        let g = grads[i] + hyper.weight_decay * params[i];
        let m = hyper.beta1 * state.first_moment[i] + (1.0 - hyper.beta1) * g;
        let v = hyper.beta2 * state.second_moment[i] + (1.0 - hyper.beta2) * g * g;
        state.first_moment[i] = m;
        state.second_moment[i] = v;
        let m_hat = m / bias1;
        match rect {
            Some(r) => {
                let denom = (v / bias2).sqrt() + hyper.epsilon;
                params[i] -= hyper.learning_rate * r * m_hat / denom;
            }
            None => {
                params[i] -= hyper.learning_rate * m_hat;
            }
        }
    }
    state.step_count = t;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_zeroed_and_deterministic() {
        let a = radam_init(5);
        let b = radam_init(5);
        assert_eq!(a, b);
        assert_eq!(a.step_count, 0);
        assert_eq!(a.first_moment, vec![0.0; 5]);
        assert_eq!(a.second_moment, vec![0.0; 5]);
    }

    #[test]
    fn zero_gradient_without_decay_leaves_params_fixed() {
        let hyper = RAdamHyper {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut params = vec![1.5, -2.0, 0.25];
        let mut state = radam_init(3);
        for _ in 0..20 {
            radam_step(&mut state, &mut params, &[0.0, 0.0, 0.0], &hyper).unwrap();
        }
        assert_eq!(params, vec![1.5, -2.0, 0.25]);
        assert_eq!(state.step_count, 20);
    }

    #[test]
    fn first_step_takes_unrectified_branch() {
        // rho_1 = rho_inf - 2 beta2 / (1 - beta2) = 1999 - 1998 = 1 <= 4
        let hyper = RAdamHyper::default();
        assert!((rho_t(1, hyper.beta2) - 1.0).abs() < 1e-9);
        assert!(rectifier(1, hyper.beta2).is_none());

        let mut params = vec![1.0];
        let mut state = radam_init(1);
        radam_step(&mut state, &mut params, &[1.0], &hyper).unwrap();
        // g' = 1 + wd, m_hat = g', theta = 1 - lr * g'
        let expected = 1.0 - 0.001 * (1.0 + 0.0001);
        assert!((params[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn rectification_first_activates_at_step_five() {
        let beta2 = 0.999;
        let first = (1..1000).find(|&t| rho_t(t, beta2) > 4.0).unwrap();
        assert_eq!(first, 5);
        for t in 1..5 {
            assert!(rectifier(t, beta2).is_none(), "t={t}");
        }
        for t in 5..50 {
            assert!(rectifier(t, beta2).is_some(), "t={t}");
        }
    }

    /// Independent scalar re-implementation of the update formulas, used
    /// as the trajectory oracle.
    fn scalar_oracle_trajectory(theta0: f64, steps: usize, hyper: &RAdamHyper) -> Vec<f64> {
        let mut theta = theta0;
        let mut m = 0.0;
        let mut v = 0.0;
        let mut out = Vec::new();
        let rho_max = 2.0 / (1.0 - hyper.beta2) - 1.0;
        for t in 1..=steps as i32 {
            // quadratic loss 0.5 * theta^2: gradient = theta
            let mut g = theta;
            g += hyper.weight_decay * theta;
            m = hyper.beta1 * m + (1.0 - hyper.beta1) * g;
            v = hyper.beta2 * v + (1.0 - hyper.beta2) * g * g;
            let m_hat = m / (1.0 - hyper.beta1.powi(t));
            let b2t = hyper.beta2.powi(t);
            let rho = rho_max - 2.0 * t as f64 * b2t / (1.0 - b2t);
            if rho > 4.0 {
                let r = (((rho - 4.0) * (rho - 2.0) * rho_max)
                    / ((rho_max - 4.0) * (rho_max - 2.0) * rho))
                    .sqrt();
                let denom = (v / (1.0 - b2t)).sqrt() + hyper.epsilon;
                theta -= hyper.learning_rate * r * m_hat / denom;
            } else {
                theta -= hyper.learning_rate * m_hat;
            }
            out.push(theta);
        }
        out
    }

    #[test]
    fn ten_step_trajectory_matches_scalar_oracle() {
        let hyper = RAdamHyper::default();
        let oracle = scalar_oracle_trajectory(1.0, 10, &hyper);

        let mut params = vec![1.0];
        let mut state = radam_init(1);
        for (step, expected) in oracle.iter().enumerate() {
            let grads = vec![params[0]];
            radam_step(&mut state, &mut params, &grads, &hyper).unwrap();
            assert!(
                (params[0] - expected).abs() < 1e-10,
                "step {step}: {} vs oracle {expected}",
                params[0],
            );
        }
    }

    #[test]
    fn descends_a_convex_quadratic() {
        let hyper = RAdamHyper {
            weight_decay: 0.0,
            ..Default::default()
        };
        let target = 3.0;
        let loss = |theta: f64| 0.5 * (theta - target) * (theta - target);
        let mut params = vec![0.0];
        let mut state = radam_init(1);
        let initial = loss(params[0]);
        for _ in 0..100 {
            let grads = vec![params[0] - target];
            radam_step(&mut state, &mut params, &grads, &hyper).unwrap();
        }
        assert!(loss(params[0]) < initial);
    }

    #[test]
    fn step_is_deterministic() {
        let hyper = RAdamHyper::default();
        let run = || {
            let mut params = vec![0.3, -0.7, 1.1];
            let mut state = radam_init(3);
            for k in 0..25u64 {
                let grads: Vec<f64> = params.iter().map(|p| p * 0.5 + k as f64 * 0.01).collect();
                radam_step(&mut state, &mut params, &grads, &hyper).unwrap();
            }
            (params, state)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_shape_mismatch_and_non_finite() {
        let hyper = RAdamHyper::default();
        let mut state = radam_init(2);
        let mut params = vec![0.0, 0.0];
        assert!(radam_step(&mut state, &mut params, &[1.0], &hyper).is_err());
        assert!(radam_step(&mut state, &mut params, &[1.0, f64::NAN], &hyper).is_err());
    }

    #[test]
    fn hyper_validation() {
        assert!(RAdamHyper::default().validate().is_ok());
        let bad = RAdamHyper {
            beta1: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
