use crate::error::ComputeError;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl AdamConfig {
    pub fn with_lr(lr: f32) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers for one group of parameter tensors.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, shapes: &[&Tensor]) -> Self {
        Self {
            config,
            m: shapes.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: shapes.iter().map(|p| vec![0.0; p.numel()]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<(), ComputeError> {
        let lr = self.config.lr;
        self.step_with_lr(params, grads, lr)
    }

    /// One bias-corrected Adam update using an explicit learning rate
    /// (for schedules).
    pub fn step_with_lr(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[Tensor],
        lr: f32,
    ) -> Result<(), ComputeError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(ComputeError::Shape {
                op: "adam",
                lhs: vec![self.m.len()],
                rhs: vec![params.len(), grads.len()],
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.numel() != self.m[i].len() {
                return Err(ComputeError::Shape {
                    op: "adam",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if !g.is_finite() {
                return Err(ComputeError::NonFinite { op: "adam gradient" });
            }
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for ((w, &gv), (mi, vi)) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gv;
                *vi = beta2 * *vi + (1.0 - beta2) * gv * gv;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        for p in params.iter() {
            if !p.is_finite() {
                return Err(ComputeError::NonFinite { op: "adam update" });
            }
        }
        Ok(())
    }
}
