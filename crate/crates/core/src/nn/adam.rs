use serde::{Deserialize, Serialize};

use super::{Param, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            betas: (0.9, 0.999),
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for an ordered parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    /// One update of every parameter from its current gradient.
    pub fn step(&mut self, params: &mut [&mut Param]) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros_like(&p.value)).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len()
            || self
                .m
                .iter()
                .zip(params.iter())
                .any(|(m, p)| m.shape() != p.value.shape() || p.grad.shape() != p.value.shape())
        {
            return Err(Error::Shape("adam state does not match the parameter list".into()));
        }
        self.t += 1;
        let AdamConfig { lr, betas: (b1, b2), eps } = self.config;
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grads = p.grad.data().to_vec();
            for (((theta, g), m), v) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(&grads)
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *theta -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Param {
        Param::new("theta", Tensor::filled(&[1], v))
    }

    #[test]
    fn first_step_by_hand() {
        let mut p = scalar(0.0);
        p.grad = Tensor::filled(&[1], 1.0);
        let mut adam = AdamState::new(AdamConfig::default());
        adam.step(&mut [&mut p]).unwrap();
        assert_eq!(adam.t, 1);
        assert!((adam.m[0].data()[0] - 0.1).abs() < 1e-15);
        assert!((adam.v[0].data()[0] - 0.001).abs() < 1e-15);
        let expect = -0.001 / (1.0 + 1e-8);
        assert!((p.value.data()[0] - expect).abs() < 1e-15);
        assert!((p.value.data()[0] + 0.000999999990).abs() < 1e-14);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = scalar(0.7);
        let mut adam = AdamState::new(AdamConfig::default());
        for _ in 0..50 {
            adam.step(&mut [&mut p]).unwrap();
        }
        assert_eq!(p.value.data()[0], 0.7);
        assert_eq!(adam.t, 50);
    }

    #[test]
    fn descends_a_quadratic() {
        let mut p = scalar(1.0);
        let mut adam = AdamState::new(AdamConfig::default());
        let mut f = 1.0;
        for _ in 0..10 {
            let theta = p.value.data()[0];
            p.grad = Tensor::filled(&[1], 2.0 * theta);
            adam.step(&mut [&mut p]).unwrap();
            let next = p.value.data()[0].powi(2);
            assert!(next < f);
            f = next;
        }
    }

    #[test]
    fn rejects_changed_parameter_list() {
        let mut a = scalar(0.0);
        let mut b = scalar(0.0);
        let mut adam = AdamState::new(AdamConfig::default());
        adam.step(&mut [&mut a]).unwrap();
        assert!(adam.step(&mut [&mut a, &mut b]).is_err());
    }
}
