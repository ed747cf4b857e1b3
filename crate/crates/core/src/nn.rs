//! Minimal dense layers with hand-written backward passes.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Glorot-uniform initialization over `[-sqrt(6/(fan_in+fan_out)), +...]`.
    pub fn glorot<R: Rng>(rows: usize, cols: usize, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Self { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out = self * x`
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// `out += self^T * dy`
    pub fn matvec_t_acc(&self, dy: &[f64], out: &mut [f64]) {
        debug_assert_eq!(dy.len(), self.rows);
        for (r, &g) in dy.iter().enumerate() {
            if g != 0.0 {
                axpy(g, self.row(r), out);
            }
        }
    }

    /// `self += dy ⊗ x`
    pub fn add_outer(&mut self, dy: &[f64], x: &[f64]) {
        for (r, &g) in dy.iter().enumerate() {
            if g != 0.0 {
                axpy(g, x, self.row_mut(r));
            }
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.rows, self.cols)
    }

    pub fn shape(&self) -> Vec<usize> {
        vec![self.rows, self.cols]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `out × in`
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn new<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        Self {
            weight: Matrix::glorot(output, input, input, output, rng),
            bias: vec![0.0; output],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.weight.matvec(x);
        for (yi, b) in y.iter_mut().zip(&self.bias) {
            *yi += b;
        }
        y
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: self.weight.zeros_like(),
            bias: vec![0.0; self.bias.len()],
        }
    }
}

/// ReLU hidden layers, linear output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Inputs seen by each layer of an [`Mlp`] forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn new<R: Rng>(input: usize, hidden: &[usize], output: usize, rng: &mut R) -> Self {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(output);
        let layers = widths
            .windows(2)
            .map(|w| Linear::new(w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: &[f64]) -> (Vec<f64>, MlpCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = layer.forward(&cur);
            if l < last {
                for v in z.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            inputs.push(std::mem::replace(&mut cur, z));
        }
        (cur, MlpCache { inputs })
    }

    /// Accumulates parameter gradients into `grad` and returns d(loss)/d(input).
    pub fn backward(&self, cache: &MlpCache, d_out: &[f64], grad: &mut Mlp) -> Vec<f64> {
        let mut dz = d_out.to_vec();
        for l in (0..self.layers.len()).rev() {
            let input = &cache.inputs[l];
            let layer = &self.layers[l];
            let g = &mut grad.layers[l];
            g.weight.add_outer(&dz, input);
            axpy(1.0, &dz, &mut g.bias);
            let mut dx = vec![0.0; input.len()];
            layer.weight.matvec_t_acc(&dz, &mut dx);
            if l > 0 {
                // input to layer l is relu(z_{l-1}); zero outputs carry no gradient
                for (d, &a) in dx.iter_mut().zip(input) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            dz = dx;
        }
        dz
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(Linear::zeros_like).collect(),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.bias.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dot_matches_naive_loop() {
        let a: Vec<f64> = (0..13).map(|i| i as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..13).map(|i| (i * i) as f64 * 0.1).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }

    #[test]
    fn glorot_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Matrix::glorot(30, 20, 20, 30, &mut rng);
        let limit = (6.0f64 / 50.0).sqrt();
        assert!(m.data.iter().all(|v| v.abs() <= limit));
        assert!(m.data.iter().any(|v| v.abs() > limit * 0.5));
    }

    #[test]
    fn mlp_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut mlp = Mlp::new(5, &[6, 4], 3, &mut rng);
        for layer in &mut mlp.layers {
            for b in &mut layer.bias {
                *b = rng.random_range(-0.1..0.1);
            }
        }
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |m: &Mlp, x: &[f64]| dot(&m.forward(x), &w);

        let (_, cache) = mlp.forward_cached(&x);
        let mut grad = mlp.zeros_like();
        let dx = mlp.backward(&cache, &w, &mut grad);

        let eps = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += eps;
            xm[i] -= eps;
            let fd = (loss(&mlp, &xp) - loss(&mlp, &xm)) / (2.0 * eps);
            assert!((fd - dx[i]).abs() < 1e-6, "dx[{i}]: {fd} vs {}", dx[i]);
        }
        let (l, r, c) = (1, 2, 3);
        let orig = mlp.layers[l].weight.row(r)[c];
        mlp.layers[l].weight.row_mut(r)[c] = orig + eps;
        let fp = loss(&mlp, &x);
        mlp.layers[l].weight.row_mut(r)[c] = orig - eps;
        let fm = loss(&mlp, &x);
        let fd = (fp - fm) / (2.0 * eps);
        assert!((fd - grad.layers[l].weight.row(r)[c]).abs() < 1e-6);
    }
}
