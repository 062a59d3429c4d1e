//! Bias-corrected Adam.

use ndarray::{ArrayD, ArrayViewMutD};

use super::Scalar;

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates mirroring the model parameters, plus the step counter.
pub struct AdamState<F> {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<ArrayD<F>>,
    v: Vec<ArrayD<F>>,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(config: AdamConfig, shapes: &[Vec<usize>]) -> Self {
        let m = shapes.iter().map(|s| ArrayD::zeros(s.clone())).collect();
        let v = shapes.iter().map(|s| ArrayD::zeros(s.clone())).collect();
        AdamState {
            config,
            step: 0,
            m,
            v,
        }
    }

    /// One update over all parameter tensors (ordered as in `shapes`).
    pub fn update(&mut self, mut params: Vec<ArrayViewMutD<'_, F>>, grads: &[ArrayD<F>]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let b1 = F::from(self.config.beta1).unwrap();
        let b2 = F::from(self.config.beta2).unwrap();
        let one = F::one();
        let lr = F::from(self.config.learning_rate).unwrap();
        let eps = F::from(self.config.epsilon).unwrap();
        let corr1 = one - b1.powi(self.step as i32);
        let corr2 = one - b2.powi(self.step as i32);
        for ((param, grad), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            azip_update(param, grad, m, v, b1, b2, corr1, corr2, lr, eps, one);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn azip_update<F: Scalar>(
    param: &mut ArrayViewMutD<'_, F>,
    grad: &ArrayD<F>,
    m: &mut ArrayD<F>,
    v: &mut ArrayD<F>,
    b1: F,
    b2: F,
    corr1: F,
    corr2: F,
    lr: F,
    eps: F,
    one: F,
) {
    ndarray::Zip::from(param)
        .and(grad)
        .and(m)
        .and(v)
        .for_each(|p, &g, m, v| {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / corr1;
            let v_hat = *v / corr2;
            *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
        });
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    fn scalar_state(lr: f64) -> AdamState<f64> {
        AdamState::new(
            AdamConfig {
                learning_rate: lr,
                ..AdamConfig::default()
            },
            &[vec![1]],
        )
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut state = scalar_state(0.1);
        let mut p = arr1(&[3.0]).into_dyn();
        let g = arr1(&[0.0]).into_dyn();
        state.update(vec![p.view_mut()], &[g]);
        assert_eq!(p[[0]], 3.0);
    }

    #[test]
    fn first_step_matches_hand_computation() {
        // g=1, lr=0.1, t=1: m_hat = v_hat = 1, step = lr/(1+eps)
        let mut state = scalar_state(0.1);
        let mut p = arr1(&[0.0]).into_dyn();
        let g = arr1(&[1.0]).into_dyn();
        state.update(vec![p.view_mut()], &[g]);
        let expect = -0.1 / (1.0 + 1e-8);
        assert!((p[[0]] - expect).abs() < 1e-15, "{}", p[[0]]);
    }

    #[test]
    fn two_steps_match_scripted_trace() {
        // constant gradient 0.5, lr 0.01, hand trace of the recurrences
        let (b1, b2, eps, lr, g) = (0.9, 0.999, 1e-8, 0.01, 0.5);
        let mut m = 0.0;
        let mut v = 0.0;
        let mut p_ref = 1.0;
        for t in 1..=2u32 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1f64_pow(b1, t));
            let v_hat = v / (1.0 - b1f64_pow(b2, t));
            p_ref -= lr * m_hat / (v_hat.sqrt() + eps);
        }

        let mut state = scalar_state(lr);
        let mut p = arr1(&[1.0]).into_dyn();
        for _ in 0..2 {
            let grad = arr1(&[g]).into_dyn();
            state.update(vec![p.view_mut()], &[grad]);
        }
        assert!((p[[0]] - p_ref).abs() < 1e-14, "{} vs {p_ref}", p[[0]]);
    }

    fn b1f64_pow(b: f64, t: u32) -> f64 {
        b.powi(t as i32)
    }
}
