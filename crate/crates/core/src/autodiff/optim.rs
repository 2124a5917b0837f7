use serde::{Deserialize, Serialize};

use super::{AutodiffError, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state: kind, learning rate, per-parameter moments and the
/// step counter. Steps clear gradients afterwards.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// Global-norm clipping threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub(crate) step: u64,
    pub(crate) first_moment: Vec<Tensor>,
    pub(crate) second_moment: Vec<Tensor>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, params: &ParamStore) -> Self {
        let (first_moment, second_moment) = match kind {
            OptimizerKind::Adam { .. } => (
                params.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect(),
                params.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect(),
            ),
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
        };
        Optimizer {
            kind,
            lr,
            clip_norm: Some(5.0),
            step: 0,
            first_moment,
            second_moment,
        }
    }

    pub fn adam(lr: f64, params: &ParamStore) -> Self {
        Optimizer::new(OptimizerKind::adam(), lr, params)
    }

    pub fn sgd(lr: f64, params: &ParamStore) -> Self {
        Optimizer::new(OptimizerKind::Sgd, lr, params)
    }

    pub fn with_clip(mut self, clip: Option<f64>) -> Self {
        self.clip_norm = clip;
        self
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.first_moment, &self.second_moment)
    }

    /// Restores moments and step count, e.g. from a checkpoint.
    pub fn restore(&mut self, step: u64, first: Vec<Tensor>, second: Vec<Tensor>) -> Result<(), AutodiffError> {
        if let OptimizerKind::Adam { .. } = self.kind {
            if first.len() != self.first_moment.len() || second.len() != self.second_moment.len() {
                return Err(AutodiffError::Shape("optimizer moment count mismatch".into()));
            }
            for (a, b) in self.first_moment.iter().zip(&first).chain(self.second_moment.iter().zip(&second)) {
                if a.shape() != b.shape() {
                    return Err(AutodiffError::mismatch("optimizer restore", a.shape(), b.shape()));
                }
            }
            self.first_moment = first;
            self.second_moment = second;
        }
        self.step = step;
        Ok(())
    }

    pub fn step(&mut self, params: &mut ParamStore) -> Result<(), AutodiffError> {
        if !params.grads_populated() {
            return Err(AutodiffError::NoGradients);
        }
        let scale = match self.clip_norm {
            Some(max) => {
                let norm = params.grad_norm();
                if !norm.is_finite() {
                    return Err(AutodiffError::NonFinite("gradient norm"));
                }
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for p in params.iter_mut() {
                    for (w, g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
                        *w -= self.lr * g * scale;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.step as f64;
                let bc1 = 1.0 - beta1.powf(t);
                let bc2 = 1.0 - beta2.powf(t);
                for ((p, m), v) in params
                    .iter_mut()
                    .zip(self.first_moment.iter_mut())
                    .zip(self.second_moment.iter_mut())
                {
                    let grad = p.grad.data();
                    let (md, vd) = (m.data_mut(), v.data_mut());
                    for (j, w) in p.value.data_mut().iter_mut().enumerate() {
                        let g = grad[j] * scale;
                        md[j] = beta1 * md[j] + (1.0 - beta1) * g;
                        vd[j] = beta2 * vd[j] + (1.0 - beta2) * g * g;
                        let m_hat = md[j] / bc1;
                        let v_hat = vd[j] / bc2;
                        *w -= self.lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        params.zero_grad();
        Ok(())
    }
}
