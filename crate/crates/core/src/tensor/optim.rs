use super::{Element, EngineError, ParamSet};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 2e-4, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adaptive-moment optimizer state for one [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T = f32> {
    pub config: AdamConfig,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    step: u64,
}

impl<T: Element> Adam<T> {
    pub fn new(params: &ParamSet<T>, config: AdamConfig) -> Self {
        let zeros = || params.params().iter().map(|p| vec![T::zero(); p.value.numel()]).collect();
        Self { config, first: zeros(), second: zeros(), step: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one bias-corrected update to every trainable parameter and
    /// clears the gradients.
    pub fn step(&mut self, params: &mut ParamSet<T>) -> Result<(), EngineError> {
        if self.first.len() != params.params().len() {
            return Err(EngineError::Contract("optimizer state built for another parameter set".into()));
        }
        if let Some(p) = params.params().iter().find(|p| p.trainable && p.grad.is_none()) {
            return Err(EngineError::Contract(format!("parameter '{}' has no gradient", p.name)));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let (b1, b2) = (T::of(beta1 as f64), T::of(beta2 as f64));
        let t = self.step as i32;
        let c1 = 1.0 - (beta1 as f64).powi(t);
        let c2 = 1.0 - (beta2 as f64).powi(t);
        for ((p, m), v) in params.params_mut().iter_mut().zip(&mut self.first).zip(&mut self.second) {
            if !p.trainable {
                continue;
            }
            let g = p.grad.take().expect("checked above");
            for (((w, m), v), &g) in p.value.data_mut().iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(&g) {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let m_hat = m.to_f64().unwrap_or(f64::NAN) / c1;
                let v_hat = v.to_f64().unwrap_or(f64::NAN) / c2;
                *w -= T::of(lr as f64 * m_hat / (v_hat.sqrt() + eps as f64));
            }
        }
        params.zero_grads();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_set(v: f32) -> ParamSet {
        let mut p = ParamSet::new();
        p.push("w", Tensor::scalar(v));
        p
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = scalar_set(0.7);
        let mut opt = Adam::new(&p, AdamConfig::default());
        for _ in 0..5 {
            p.params_mut()[0].grad = Some(vec![0.0]);
            opt.step(&mut p).unwrap();
        }
        assert_eq!(p.params()[0].value.item(), 0.7);
        assert_eq!(opt.steps(), 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar_set(0.0);
        let mut opt = Adam::new(&p, AdamConfig { lr: 0.1, ..AdamConfig::default() });
        p.params_mut()[0].grad = Some(vec![1.0]);
        opt.step(&mut p).unwrap();
        let delta = p.params()[0].value.item();
        assert!((delta + 0.1).abs() < 1e-6, "{delta}");
        assert!(p.params()[0].grad.is_none());
    }

    #[test]
    fn constant_gradient_descends() {
        let mut p = scalar_set(1.0);
        let mut opt = Adam::new(&p, AdamConfig::default());
        let mut last = 1.0;
        for _ in 0..50 {
            p.params_mut()[0].grad = Some(vec![-3.0]);
            opt.step(&mut p).unwrap();
            let now = p.params()[0].value.item();
            assert!(now > last);
            last = now;
        }
    }

    #[test]
    fn missing_gradient_is_a_contract_error() {
        let mut p = scalar_set(1.0);
        let mut opt = Adam::new(&p, AdamConfig::default());
        assert!(matches!(opt.step(&mut p), Err(EngineError::Contract(_))));
        assert_eq!(opt.steps(), 0);
        p.params_mut()[0].trainable = false;
        assert!(opt.step(&mut p).is_ok());
    }
}
