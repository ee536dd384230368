use super::tensor::Tensor;
use crate::error::{Error, Result};

/// First and second moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f32>,
    pub second_moment: Vec<f32>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub const DEFAULT_BETA1: f64 = 0.9;
    pub const DEFAULT_BETA2: f64 = 0.999;
    pub const DEFAULT_EPSILON: f64 = 1e-8;

    pub fn new(len: usize) -> Self {
        Self::with_hyperparameters(
            len,
            Self::DEFAULT_BETA1,
            Self::DEFAULT_BETA2,
            Self::DEFAULT_EPSILON,
        )
    }

    pub fn with_hyperparameters(len: usize, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
            beta1,
            beta2,
            epsilon,
        }
    }
}

/// One bias-corrected Adam update of `params` from `grads`.
///
/// A non-finite gradient aborts before anything is modified.
pub fn adam_step(params: &mut Tensor, grads: &[f32], state: &mut AdamState, lr: f64) -> Result<()> {
    let n = params.len();
    if grads.len() != n || state.first_moment.len() != n || state.second_moment.len() != n {
        return Err(Error::shape("adam_step", params.shape(), &[grads.len()]));
    }
    if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            what: "optimizer gradient".to_string(),
            index,
        });
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let correction1 = 1.0 - b1.powi(t);
    let correction2 = 1.0 - b2.powi(t);
    let step_size = (lr / correction1) as f32;
    let correction2_sqrt = correction2.sqrt() as f32;
    let eps = state.epsilon as f32;
    let (b1, b2) = (b1 as f32, b2 as f32);
    let values = params.data_mut();
    for i in 0..n {
        let g = grads[i];
        let m = b1 * state.first_moment[i] + (1.0 - b1) * g;
        let v = b2 * state.second_moment[i] + (1.0 - b2) * g * g;
        state.first_moment[i] = m;
        state.second_moment[i] = v;
        values[i] -= step_size * m / (v.sqrt() / correction2_sqrt + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let before = p.clone();
        let mut s = AdamState::new(3);
        for _ in 0..5 {
            adam_step(&mut p, &[0.0; 3], &mut s, 0.1).unwrap();
        }
        assert_eq!(p, before);
        assert!(s.first_moment.iter().all(|&m| m == 0.0));
        assert!(s.second_moment.iter().all(|&v| v == 0.0));
        assert_eq!(s.step_count, 5);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let lr = 0.01;
        let mut p = Tensor::new(&[4], vec![0.0; 4]).unwrap();
        let g = [3.0, -0.2, 1e-3, -50.0];
        let mut s = AdamState::new(4);
        adam_step(&mut p, &g, &mut s, lr).unwrap();
        for (x, g) in p.data().iter().zip(g) {
            let expected = -lr * (g as f64).signum();
            assert!((*x as f64 - expected).abs() < 1e-3 * lr, "{x} vs {expected}");
        }
    }

    #[test]
    fn converges_on_scalar_quadratic() {
        let mut p = Tensor::scalar(0.0);
        let mut s = AdamState::new(1);
        for _ in 0..200 {
            let g = 2.0 * (p.data()[0] - 3.0);
            adam_step(&mut p, &[g], &mut s, 0.1).unwrap();
        }
        assert!((p.data()[0] - 3.0).abs() < 0.05, "p = {}", p.data()[0]);
    }

    #[test]
    fn non_finite_gradient_reports_index() {
        let mut p = Tensor::zeros(&[3]);
        let mut s = AdamState::new(3);
        let err = adam_step(&mut p, &[0.0, 1.0, f32::INFINITY], &mut s, 0.1).unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 2, .. }));
        assert_eq!(s.step_count, 0);
    }

    #[test]
    fn second_moment_non_negative_and_step_bounded() {
        let lr = 0.05;
        let mut p = Tensor::zeros(&[2]);
        let mut s = AdamState::new(2);
        for k in 0..50 {
            let g = [((k * 7) % 5) as f32 - 2.0, (k as f32).sin() * 4.0];
            let before = p.data().to_vec();
            adam_step(&mut p, &g, &mut s, lr).unwrap();
            assert!(s.second_moment.iter().all(|&v| v >= 0.0));
            assert_eq!(s.step_count, k + 1);
            for (a, b) in before.iter().zip(p.data()) {
                // |m̂| ≤ sqrt(v̂) up to (1-β1)/sqrt(1-β2) worst case; steady inputs stay near lr
                assert!(((a - b).abs() as f64) < lr * 3.2);
            }
        }
    }
}
