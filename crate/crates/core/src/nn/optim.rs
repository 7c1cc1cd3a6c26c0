use serde::{Deserialize, Serialize};

/// AdamW with decoupled weight decay over a flat parameter vector.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamW {
    pub fn new(n_params: usize, lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "optimizer state does not match parameters");
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let decay = 1.0 - self.lr * self.weight_decay;
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] = params[i] * decay - self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Exponential moving average of parameters: `shadow <- lambda * shadow + (1 - lambda) * current`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Ema {
    pub lambda: f64,
    pub shadow: Vec<f64>,
}

impl Ema {
    pub fn new(lambda: f64, initial: &[f64]) -> Self {
        assert!((0.0..1.0).contains(&lambda), "EMA smoothing must lie in [0, 1)");
        Ema {
            lambda,
            shadow: initial.to_vec(),
        }
    }

    pub fn update(&mut self, current: &[f64]) {
        let l = self.lambda;
        for (s, &c) in self.shadow.iter_mut().zip(current) {
            *s = l * *s + (1.0 - l) * c;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut opt = AdamW::new(3, 0.0, 0.1);
        let mut p = vec![1.0, -2.0, 0.5];
        opt.step(&mut p, &[0.3, 0.1, -4.0]);
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn convex_quadratic_decreases() {
        // f(w) = (w - 3)^2
        let mut opt = AdamW::new(1, 0.01, 0.0);
        let mut w = vec![0.0];
        let f = |w: f64| (w - 3.0) * (w - 3.0);
        let before = f(w[0]);
        let g = [2.0 * (w[0] - 3.0)];
        opt.step(&mut w, &g);
        assert!(f(w[0]) < before);
    }

    #[test]
    fn decoupled_decay_without_gradient() {
        let mut opt = AdamW::new(1, 0.1, 0.5);
        let mut w = vec![2.0];
        opt.step(&mut w, &[0.0]);
        assert!((w[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    }

    #[test]
    fn ema_converges_geometrically() {
        let lambda = 0.9;
        let mut ema = Ema::new(lambda, &[0.0]);
        for k in 1..=20 {
            ema.update(&[1.0]);
            let err = 1.0 - ema.shadow[0];
            assert!((err - lambda.powi(k)).abs() < 1e-12);
        }
        let mut fast = Ema::new(0.0, &[5.0]);
        fast.update(&[2.0]);
        assert_eq!(fast.shadow, vec![2.0]);
    }
}
