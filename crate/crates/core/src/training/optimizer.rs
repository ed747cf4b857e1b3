use crate::towers::TwoTower;

pub const ADAGRAD_EPS: f64 = 1e-8;

/// AdaGrad: `accum += g²; p -= lr · g / sqrt(accum + eps)`.
#[derive(Debug, Clone)]
pub struct AdaGrad {
    pub lr: f64,
    pub eps: f64,
    accum: TwoTower,
}

impl AdaGrad {
    pub fn new(params: &TwoTower, lr: f64) -> Self {
        Self {
            lr,
            eps: ADAGRAD_EPS,
            accum: params.zeros_like(),
        }
    }

    pub fn accumulators(&self) -> &TwoTower {
        &self.accum
    }

    pub fn step(&mut self, params: &mut TwoTower, grads: &TwoTower) {
        let grads = grads.tensors();
        for ((p, acc), g) in params
            .tensors_mut()
            .into_iter()
            .zip(self.accum.tensors_mut())
            .zip(grads.iter())
        {
            for ((p, a), &g) in p.iter_mut().zip(acc.iter_mut()).zip(g.data) {
                if g != 0.0 {
                    *a += g * g;
                    *p -= self.lr * g / (*a + self.eps).sqrt();
                }
            }
        }
    }
}
