//! Query tower (projection layer + one MLP per head) and item tower (single
//! unit-normalized embedding).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{axpy, norm, Matrix, Mlp, MlpCache};
use crate::tokenizer::UNK;

/// Item pre-normalization norms below this fall back to a fixed basis vector.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TowerConfig {
    /// Output embedding dimension `d`.
    pub dim: usize,
    /// Number of query heads `m`.
    pub heads: usize,
    /// Token-embedding width.
    pub agg_dim: usize,
    pub mlp_hidden: Vec<usize>,
    pub vocab_size: usize,
}

impl Default for TowerConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            heads: 1,
            agg_dim: 64,
            mlp_hidden: vec![256, 128],
            vocab_size: 1,
        }
    }
}

impl TowerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || self.agg_dim == 0 || self.vocab_size == 0 {
            return Err(Error::Config(
                "dim, heads, agg_dim and vocab_size must all be >= 1".into(),
            ));
        }
        if self.mlp_hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryTowerParams {
    /// `vocab_size × agg_dim`
    pub token_table: Matrix,
    /// One `agg_dim × agg_dim` projection per head.
    pub projections: Vec<Matrix>,
    pub head_mlps: Vec<Mlp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemTowerParams {
    pub token_table: Matrix,
    pub mlp: Mlp,
}

/// All learnable tensors of both towers. Also used as the container for
/// gradients and optimizer accumulators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoTower {
    pub config: TowerConfig,
    pub query: QueryTowerParams,
    pub item: ItemTowerParams,
}

/// `m` query embeddings of dimension `d`, not normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryHeads {
    pub dim: usize,
    data: Vec<f64>,
}

impl QueryHeads {
    pub fn from_heads(heads: &[Vec<f64>]) -> Self {
        let dim = heads.first().map_or(0, Vec::len);
        Self {
            dim,
            data: heads.concat(),
        }
    }

    pub fn count(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn head(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1))
    }
}

/// Unit-norm item embedding `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemEmbedding {
    pub g: Vec<f64>,
    /// Set when the MLP output was (numerically) zero and `g` is the fallback
    /// basis vector `e_0`.
    pub degenerate: bool,
}

/// A named view of one parameter tensor.
pub struct TensorView<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

impl TwoTower {
    /// Glorot-uniform weights, zero biases. The `<UNK>` rows of both token
    /// tables start at zero and are never updated.
    pub fn init(config: TowerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = &config;
        let mut query_table = Matrix::glorot(c.vocab_size, c.agg_dim, c.vocab_size, c.agg_dim, &mut rng);
        query_table.row_mut(UNK as usize).fill(0.0);
        let projections = (0..c.heads)
            .map(|_| Matrix::glorot(c.agg_dim, c.agg_dim, c.agg_dim, c.agg_dim, &mut rng))
            .collect();
        let head_mlps = (0..c.heads)
            .map(|_| Mlp::new(c.agg_dim, &c.mlp_hidden, c.dim, &mut rng))
            .collect();
        let mut item_table = Matrix::glorot(c.vocab_size, c.agg_dim, c.vocab_size, c.agg_dim, &mut rng);
        item_table.row_mut(UNK as usize).fill(0.0);
        let item_mlp = Mlp::new(c.agg_dim, &c.mlp_hidden, c.dim, &mut rng);
        Ok(Self {
            query: QueryTowerParams {
                token_table: query_table,
                projections,
                head_mlps,
            },
            item: ItemTowerParams {
                token_table: item_table,
                mlp: item_mlp,
            },
            config,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            query: QueryTowerParams {
                token_table: self.query.token_table.zeros_like(),
                projections: self.query.projections.iter().map(Matrix::zeros_like).collect(),
                head_mlps: self.query.head_mlps.iter().map(Mlp::zeros_like).collect(),
            },
            item: ItemTowerParams {
                token_table: self.item.token_table.zeros_like(),
                mlp: self.item.mlp.zeros_like(),
            },
        }
    }

    /// Every tensor, in checkpoint order.
    pub fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut out = vec![TensorView {
            name: "query.token_table".into(),
            shape: self.query.token_table.shape(),
            data: &self.query.token_table.data,
        }];
        for (h, p) in self.query.projections.iter().enumerate() {
            out.push(TensorView {
                name: format!("query.projection.{h}"),
                shape: p.shape(),
                data: &p.data,
            });
        }
        for (h, mlp) in self.query.head_mlps.iter().enumerate() {
            push_mlp(&mut out, &format!("query.head.{h}"), mlp);
        }
        out.push(TensorView {
            name: "item.token_table".into(),
            shape: self.item.token_table.shape(),
            data: &self.item.token_table.data,
        });
        push_mlp(&mut out, "item.mlp", &self.item.mlp);
        out
    }

    /// Mutable slices in the same order as [`TwoTower::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![&mut self.query.token_table.data];
        for p in &mut self.query.projections {
            out.push(&mut p.data);
        }
        for mlp in &mut self.query.head_mlps {
            for layer in &mut mlp.layers {
                out.push(&mut layer.weight.data);
                out.push(&mut layer.bias);
            }
        }
        out.push(&mut self.item.token_table.data);
        for layer in &mut self.item.mlp.layers {
            out.push(&mut layer.weight.data);
            out.push(&mut layer.bias);
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }
}

fn push_mlp<'a>(out: &mut Vec<TensorView<'a>>, prefix: &str, mlp: &'a Mlp) {
    for (l, layer) in mlp.layers.iter().enumerate() {
        out.push(TensorView {
            name: format!("{prefix}.{l}.weight"),
            shape: layer.weight.shape(),
            data: &layer.weight.data,
        });
        out.push(TensorView {
            name: format!("{prefix}.{l}.bias"),
            shape: vec![layer.bias.len()],
            data: &layer.bias,
        });
    }
}

/// Sum of the table rows indexed by `ids`.
pub fn aggregate(table: &Matrix, ids: &[u32]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; table.cols];
    for &id in ids {
        if id as usize >= table.rows {
            return Err(Error::IdOutOfRange {
                id,
                rows: table.rows,
            });
        }
        axpy(1.0, table.row(id as usize), &mut out);
    }
    Ok(out)
}

/// Intermediate values of a query forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct QueryCache {
    ids: Vec<u32>,
    input: Vec<f64>,
    mlp: Vec<MlpCache>,
}

/// Intermediate values of an item forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct ItemCache {
    ids: Vec<u32>,
    mlp: MlpCache,
    pre_norm: f64,
}

impl QueryTowerParams {
    pub fn forward(&self, seq: &[u32], profile: &[u32]) -> Result<QueryHeads> {
        Ok(self.forward_cached(seq, profile)?.0)
    }

    pub fn forward_cached(&self, seq: &[u32], profile: &[u32]) -> Result<(QueryHeads, QueryCache)> {
        if seq.is_empty() {
            return Err(Error::EmptySequence);
        }
        let ids: Vec<u32> = seq.iter().chain(profile).copied().collect();
        let input = aggregate(&self.token_table, &ids)?;
        let mut heads = Vec::with_capacity(self.projections.len());
        let mut caches = Vec::with_capacity(self.projections.len());
        for (proj, mlp) in self.projections.iter().zip(&self.head_mlps) {
            let a = proj.matvec(&input);
            let (e, cache) = mlp.forward_cached(&a);
            heads.push(e);
            caches.push(cache);
        }
        Ok((
            QueryHeads::from_heads(&heads),
            QueryCache {
                ids,
                input,
                mlp: caches,
            },
        ))
    }

    /// Accumulates gradients given d(loss)/d(head_i) for every head.
    pub fn backward(&self, cache: &QueryCache, d_heads: &[Vec<f64>], grad: &mut QueryTowerParams) {
        let mut d_input = vec![0.0; cache.input.len()];
        for h in 0..self.projections.len() {
            if d_heads[h].iter().all(|&v| v == 0.0) {
                continue;
            }
            let d_a = self.head_mlps[h].backward(&cache.mlp[h], &d_heads[h], &mut grad.head_mlps[h]);
            grad.projections[h].add_outer(&d_a, &cache.input);
            self.projections[h].matvec_t_acc(&d_a, &mut d_input);
        }
        scatter_rows(&mut grad.token_table, &cache.ids, &d_input);
    }
}

impl ItemTowerParams {
    pub fn forward(&self, seq: &[u32], extra: &[u32]) -> Result<ItemEmbedding> {
        Ok(self.forward_cached(seq, extra)?.0)
    }

    pub fn forward_cached(&self, seq: &[u32], extra: &[u32]) -> Result<(ItemEmbedding, ItemCache)> {
        if seq.is_empty() {
            return Err(Error::EmptySequence);
        }
        let ids: Vec<u32> = seq.iter().chain(extra).copied().collect();
        let input = aggregate(&self.token_table, &ids)?;
        let (z, mlp) = self.mlp.forward_cached(&input);
        let n = norm(&z);
        let emb = if n < DEGENERATE_NORM {
            let mut g = vec![0.0; z.len()];
            g[0] = 1.0;
            ItemEmbedding { g, degenerate: true }
        } else {
            ItemEmbedding {
                g: z.iter().map(|v| v / n).collect(),
                degenerate: false,
            }
        };
        Ok((
            emb,
            ItemCache {
                ids,
                mlp,
                pre_norm: n,
            },
        ))
    }

    /// Accumulates gradients given d(loss)/d(g) for a unit-normalized output.
    pub fn backward(&self, cache: &ItemCache, emb: &ItemEmbedding, d_g: &[f64], grad: &mut ItemTowerParams) {
        if emb.degenerate || d_g.iter().all(|&v| v == 0.0) {
            return;
        }
        // g = z/|z|  =>  dz = (dg - g (g·dg)) / |z|
        let proj = crate::nn::dot(&emb.g, d_g);
        let d_z: Vec<f64> = d_g
            .iter()
            .zip(&emb.g)
            .map(|(dg, g)| (dg - g * proj) / cache.pre_norm)
            .collect();
        let d_input = self.mlp.backward(&cache.mlp, &d_z, &mut grad.mlp);
        scatter_rows(&mut grad.token_table, &cache.ids, &d_input);
    }
}

fn scatter_rows(table_grad: &mut Matrix, ids: &[u32], d: &[f64]) {
    for &id in ids {
        if id != UNK {
            axpy(1.0, d, table_grad.row_mut(id as usize));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::dot;
    use proptest::prelude::*;

    fn small_config(heads: usize) -> TowerConfig {
        TowerConfig {
            dim: 8,
            heads,
            agg_dim: 6,
            mlp_hidden: vec![10],
            vocab_size: 20,
        }
    }

    #[test]
    fn init_is_deterministic_and_seeded() {
        let a = TwoTower::init(small_config(2), 1).unwrap();
        let b = TwoTower::init(small_config(2), 1).unwrap();
        let c = TwoTower::init(small_config(2), 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.query.token_table, c.query.token_table);
    }

    #[test]
    fn init_biases_zero_and_unk_rows_zero() {
        let t = TwoTower::init(small_config(3), 5).unwrap();
        for view in t.tensors() {
            if view.name.ends_with(".bias") {
                assert!(view.data.iter().all(|&b| b == 0.0), "{}", view.name);
            }
        }
        assert!(t.query.token_table.row(0).iter().all(|&v| v == 0.0));
        assert!(t.item.token_table.row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_rejects_bad_config() {
        let mut c = small_config(1);
        c.heads = 0;
        assert!(TwoTower::init(c, 0).is_err());
        let mut c = small_config(1);
        c.mlp_hidden = vec![4, 0];
        assert!(TwoTower::init(c, 0).is_err());
    }

    #[test]
    fn tensors_and_tensors_mut_agree() {
        let mut t = TwoTower::init(small_config(2), 0).unwrap();
        let lens: Vec<usize> = t.tensors().iter().map(|v| v.data.len()).collect();
        let shapes: Vec<usize> = t.tensors().iter().map(|v| v.shape.iter().product()).collect();
        let lens_mut: Vec<usize> = t.tensors_mut().iter().map(|s| s.len()).collect();
        assert_eq!(lens, lens_mut);
        assert_eq!(lens, shapes);
    }

    #[test]
    fn aggregate_rules() {
        let t = TwoTower::init(small_config(1), 3).unwrap();
        let table = &t.query.token_table;
        assert!(aggregate(table, &[UNK]).unwrap().iter().all(|&v| v == 0.0));
        assert_eq!(aggregate(table, &[4]).unwrap(), table.row(4));
        let sum = aggregate(table, &[4, 7]).unwrap();
        for c in 0..table.cols {
            let expected = table.data[4 * table.cols + c] + table.data[7 * table.cols + c];
            assert_eq!(sum[c], expected);
        }
        match aggregate(table, &[3, 20]) {
            Err(Error::IdOutOfRange { id: 20, rows: 20 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn query_forward_shapes() {
        let t = TwoTower::init(small_config(1), 3).unwrap();
        let heads = t.query.forward(&[1, 2], &[]).unwrap();
        assert_eq!(heads.count(), 1);
        assert_eq!(heads.head(0).len(), 8);
        let t = TwoTower::init(small_config(3), 3).unwrap();
        assert_eq!(t.query.forward(&[1], &[5]).unwrap().count(), 3);
        assert!(matches!(t.query.forward(&[], &[]), Err(Error::EmptySequence)));
    }

    #[test]
    fn distinct_projections_give_distinct_heads() {
        let mut t = TwoTower::init(small_config(2), 11).unwrap();
        t.query.head_mlps[1] = t.query.head_mlps[0].clone();
        let heads = t.query.forward(&[3, 9], &[]).unwrap();
        assert_ne!(heads.head(0), heads.head(1));
    }

    #[test]
    fn zero_input_gives_zero_heads() {
        let t = TwoTower::init(small_config(2), 11).unwrap();
        let heads = t.query.forward(&[UNK], &[]).unwrap();
        assert!(heads.iter().all(|h| h.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn item_forward_unit_norm_and_scale_invariant() {
        let t = TwoTower::init(small_config(1), 4).unwrap();
        let g = t.item.forward(&[2, 3], &[7]).unwrap();
        assert!(!g.degenerate);
        assert!((norm(&g.g) - 1.0).abs() < 1e-6);

        let mut scaled = t.item.clone();
        for v in &mut scaled.token_table.data {
            *v *= 2.0;
        }
        let g2 = scaled.forward(&[2, 3], &[7]).unwrap();
        for (a, b) in g.g.iter().zip(&g2.g) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn item_forward_degenerate_fallback() {
        let t = TwoTower::init(small_config(1), 4).unwrap();
        let g = t.item.forward(&[UNK], &[]).unwrap();
        assert!(g.degenerate);
        assert_eq!(g.g[0], 1.0);
        assert!((norm(&g.g) - 1.0).abs() < 1e-12);
        assert!(matches!(t.item.forward(&[], &[1]), Err(Error::EmptySequence)));
    }

    #[test]
    fn item_backward_matches_finite_differences() {
        let t = TwoTower::init(small_config(1), 9).unwrap();
        let w: Vec<f64> = (0..8).map(|i| (i as f64 - 3.5) * 0.3).collect();
        let f = |p: &ItemTowerParams| dot(&p.forward(&[2, 5], &[]).unwrap().g, &w);
        let (emb, cache) = t.item.forward_cached(&[2, 5], &[]).unwrap();
        let mut grad = t.zeros_like();
        t.item.backward(&cache, &emb, &w, &mut grad.item);
        let eps = 1e-6;
        for c in 0..6 {
            let idx = 5 * 6 + c;
            let mut p = t.item.clone();
            p.token_table.data[idx] += eps;
            let fp = f(&p);
            p.token_table.data[idx] -= 2.0 * eps;
            let fm = f(&p);
            let fd = (fp - fm) / (2.0 * eps);
            assert!((fd - grad.item.token_table.data[idx]).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn item_embeddings_are_unit_norm(seed in 0u64..50, ids in prop::collection::vec(1u32..20, 1..6)) {
            let t = TwoTower::init(small_config(1), seed).unwrap();
            let g = t.item.forward(&ids, &[]).unwrap();
            prop_assert!((norm(&g.g) - 1.0).abs() < 1e-6);
            prop_assert!(g.g.iter().all(|v| v.is_finite()));
        }

        #[test]
        fn forward_is_pure(seed in 0u64..20, ids in prop::collection::vec(0u32..20, 1..6)) {
            let t = TwoTower::init(small_config(2), seed).unwrap();
            prop_assert_eq!(t.query.forward(&ids, &[]).unwrap(), t.query.forward(&ids, &[]).unwrap());
            prop_assert_eq!(t.item.forward(&ids, &[]).unwrap(), t.item.forward(&ids, &[]).unwrap());
        }
    }
}
