use super::NetError;

/// Adaptive-moment optimizer with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(param_count: usize, lr: f64) -> Self {
        Self::with_betas(param_count, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(param_count: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update of `params` along `grad`. A gradient containing a
    /// non-finite entry leaves parameters and moments untouched.
    pub fn apply(&mut self, params: &mut [f64], grad: &[f64]) -> Result<(), NetError> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(NetError::Dimension {
                expected: self.m.len(),
                got: grad.len().min(params.len()),
            });
        }
        if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
            return Err(NetError::NonFiniteGradient { index });
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}
