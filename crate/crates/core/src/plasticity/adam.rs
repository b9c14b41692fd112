use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self { eta: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Step counter and bias correction shared by every tensor one optimizer
/// updates. Moment buffers live next to the parameters they belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub params: AdamParams,
    pub t: u64,
}

impl Adam {
    pub fn new(params: AdamParams) -> Self {
        Self { params, t: 0 }
    }

    /// Start a new optimizer step; call once before the `apply` calls of
    /// that step.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    /// Update `theta` in place from `grad` and zero `grad`.
    pub fn apply(&self, theta: &mut [f64], grad: &mut [f64], m: &mut [f64], v: &mut [f64]) {
        assert!(self.t > 0, "begin_step not called");
        assert!(theta.len() == grad.len() && m.len() == grad.len() && v.len() == grad.len());
        let p = self.params;
        let t = self.t as i32;
        let c1 = 1.0 - p.beta1.powi(t);
        let c2 = 1.0 - p.beta2.powi(t);
        for (((w, g), m), v) in theta.iter_mut().zip(grad.iter_mut()).zip(m).zip(v) {
            *m = p.beta1 * *m + (1.0 - p.beta1) * *g;
            *v = p.beta2 * *v + (1.0 - p.beta2) * *g * *g;
            *w -= p.eta * (*m / c1) / ((*v / c2).sqrt() + p.epsilon);
            *g = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(theta: &mut [f64], grad: &[f64]) -> Adam {
        let mut a = Adam::new(AdamParams::default());
        a.begin_step();
        let mut g = grad.to_vec();
        let mut m = vec![0.0; g.len()];
        let mut v = vec![0.0; g.len()];
        a.apply(theta, &mut g, &mut m, &mut v);
        assert!(g.iter().all(|&x| x == 0.0));
        a
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut w = [0.5, -0.25];
        let a = step(&mut w, &[0.0, 0.0]);
        assert_eq!(w, [0.5, -0.25]);
        assert_eq!(a.t, 1);
    }

    #[test]
    fn first_step_moves_by_eta() {
        for g in [1e-3, 0.7, 50.0, -2.0] {
            let mut w = [0.0];
            step(&mut w, &[g]);
            assert!((w[0].abs() - 1e-3).abs() < 1e-3 * 1e-4, "{g}: {}", w[0]);
            assert!(w[0].signum() == -g.signum());
        }
    }
}
