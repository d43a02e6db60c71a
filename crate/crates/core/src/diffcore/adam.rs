use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// A trainable tensor with its gradient and Adam moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub gradient: Tensor,
    pub adam_m: Tensor,
    pub adam_v: Tensor,
    pub step_count: u64,
    pub trainable: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let zeros = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            gradient: zeros.clone(),
            adam_m: zeros.clone(),
            adam_v: zeros,
            value,
            step_count: 0,
            trainable: true,
        }
    }

    /// Replaces the value and resets gradient and optimizer state.
    pub fn reset_to(&mut self, value: Tensor) {
        *self = Parameter {
            trainable: self.trainable,
            ..Parameter::new(self.name.clone(), value)
        };
    }
}

/// Adam with bias correction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Adam {
    pub const BETA1: f32 = 0.9;
    pub const BETA2: f32 = 0.999;
    pub const EPS: f32 = 1e-8;

    pub fn new(lr: f32) -> Result<Self> {
        Self::with_betas(lr, Self::BETA1, Self::BETA2, Self::EPS)
    }

    pub fn with_betas(lr: f32, beta1: f32, beta2: f32, eps: f32) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
            return Err(Error::Config(format!(
                "invalid Adam hyperparameters beta1={beta1} beta2={beta2} eps={eps}"
            )));
        }
        Ok(Self {
            lr,
            beta1,
            beta2,
            eps,
        })
    }

    /// Applies one update to every trainable parameter from its `gradient`.
    pub fn step(&self, params: &mut [Parameter]) {
        for p in params.iter_mut().filter(|p| p.trainable) {
            p.step_count += 1;
            let t = p.step_count as i32;
            let bc1 = 1.0 - (self.beta1 as f64).powi(t);
            let bc2 = 1.0 - (self.beta2 as f64).powi(t);
            let (b1, b2) = (self.beta1, self.beta2);
            let values = p.value.data_mut();
            let m = p.adam_m.data_mut();
            let v = p.adam_v.data_mut();
            for (i, &g) in p.gradient.data().iter().enumerate() {
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let m_hat = m[i] as f64 / bc1;
                let v_hat = v[i] as f64 / bc2;
                values[i] -= (self.lr as f64 * m_hat / (v_hat.sqrt() + self.eps as f64)) as f32;
            }
        }
    }
}

/// Free-function form of [`Adam::step`].
pub fn adam_step(
    params: &mut [Parameter],
    lr: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
) -> Result<()> {
    Adam::with_betas(lr, beta1, beta2, eps)?.step(params);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f32, g: f32) -> Parameter {
        let mut p = Parameter::new("p", Tensor::from_vec(vec![v]));
        p.gradient = Tensor::from_vec(vec![g]);
        p
    }

    #[test]
    fn fresh_parameter_has_zero_state() {
        let p = Parameter::new("w", Tensor::ones(&[2, 2]));
        assert_eq!(p.adam_m, Tensor::zeros(&[2, 2]));
        assert_eq!(p.adam_v, Tensor::zeros(&[2, 2]));
        assert_eq!(p.gradient.shape(), p.value.shape());
        assert_eq!(p.step_count, 0);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut ps = vec![scalar_param(0.75, 0.0)];
        Adam::new(1e-3).unwrap().step(&mut ps);
        assert_eq!(ps[0].value.item(), 0.75);
        assert_eq!(ps[0].step_count, 1);
    }

    #[test]
    fn first_step_has_closed_form() {
        for g in [0.3f32, -2.0, 1e-3] {
            let mut ps = vec![scalar_param(1.0, g)];
            let lr = 1e-2;
            Adam::new(lr).unwrap().step(&mut ps);
            let expected = 1.0 - lr as f64 * g as f64 / (g.abs() as f64 + 1e-8);
            assert!((ps[0].value.item() as f64 - expected).abs() < 1e-7);
        }
    }

    #[test]
    fn non_positive_lr_is_a_config_error() {
        assert!(matches!(Adam::new(0.0), Err(Error::Config(_))));
        assert!(matches!(
            adam_step(&mut [], -1.0, 0.9, 0.999, 1e-8),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn frozen_parameters_are_skipped() {
        let mut p = scalar_param(1.0, 5.0);
        p.trainable = false;
        let mut ps = vec![p];
        Adam::new(0.1).unwrap().step(&mut ps);
        assert_eq!(ps[0].value.item(), 1.0);
        assert_eq!(ps[0].step_count, 0);
    }
}
