//! Layered proximity graph (HNSW) over inner-product similarity.
//!
//! Vectors are unit norm, so maximizing the inner product is the same as
//! nearest-neighbor search under cosine distance. Construction is sequential
//! and seeded, which makes the graph a pure function of (input order, params).

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dot_f32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Scored {
    pub score: f32,
    pub node: u32,
}

impl Eq for Scored {}

impl Ord for Scored {
    /// Higher score is greater; on equal scores the lower node is greater.
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Generation-stamped visited set.
#[derive(Debug)]
pub(crate) struct Visited {
    marks: Vec<u32>,
    generation: u32,
}

impl Visited {
    fn new(n: usize) -> Self {
        Self {
            marks: vec![0; n],
            generation: 0,
        }
    }

    fn reset(&mut self, n: usize) {
        if self.marks.len() < n {
            self.marks.resize(n, 0);
        }
        self.generation = self.generation.wrapping_add(1);
        if self.generation == 0 {
            self.marks.fill(0);
            self.generation = 1;
        }
    }

    /// Marks `i`; returns false if it was already marked.
    #[inline]
    fn insert(&mut self, i: u32) -> bool {
        let slot = &mut self.marks[i as usize];
        if *slot == self.generation {
            false
        } else {
            *slot = self.generation;
            true
        }
    }
}

#[derive(Debug)]
pub(crate) struct Graph {
    pub m: usize,
    pub entry: u32,
    pub max_level: usize,
    pub levels: Vec<u8>,
    /// `neighbors[node][layer]`
    pub neighbors: Vec<Vec<Vec<u32>>>,
    visited_pool: Mutex<Vec<Visited>>,
}

impl PartialEq for Graph {
    fn eq(&self, other: &Self) -> bool {
        self.m == other.m
            && self.entry == other.entry
            && self.max_level == other.max_level
            && self.levels == other.levels
            && self.neighbors == other.neighbors
    }
}

struct Builder<'a> {
    vectors: &'a [f32],
    dim: usize,
    m: usize,
    ef_construction: usize,
    visited: Visited,
}

impl Builder<'_> {
    #[inline]
    fn vec(&self, i: u32) -> &[f32] {
        let i = i as usize;
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    fn cap(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.m
        } else {
            self.m
        }
    }

    /// Keeps a candidate only if it is closer to the base than to every
    /// neighbor already kept. `candidates` must be sorted best first.
    fn select(&self, candidates: &[Scored], keep: usize) -> Vec<u32> {
        let mut out: Vec<u32> = Vec::with_capacity(keep);
        for c in candidates {
            if out.len() >= keep {
                break;
            }
            let cv = self.vec(c.node);
            let dominated = out
                .iter()
                .any(|&r| dot_f32(cv, self.vec(r)) > c.score);
            if !dominated {
                out.push(c.node);
            }
        }
        out
    }
}

fn search_layer(
    vectors: &[f32],
    dim: usize,
    neighbors: &[Vec<Vec<u32>>],
    query: &[f32],
    entries: &[Scored],
    ef: usize,
    layer: usize,
    visited: &mut Visited,
) -> Vec<Scored> {
    visited.reset(neighbors.len());
    let mut candidates: BinaryHeap<Scored> = BinaryHeap::with_capacity(ef * 2);
    // min-heap of current results via Reverse
    let mut results: BinaryHeap<std::cmp::Reverse<Scored>> = BinaryHeap::with_capacity(ef + 1);
    for &e in entries {
        if visited.insert(e.node) {
            candidates.push(e);
            results.push(std::cmp::Reverse(e));
            if results.len() > ef {
                results.pop();
            }
        }
    }
    while let Some(c) = candidates.pop() {
        let worst = results.peek().map(|r| r.0);
        if let Some(w) = worst {
            if results.len() >= ef && c < w {
                break;
            }
        }
        for &n in &neighbors[c.node as usize][layer] {
            if !visited.insert(n) {
                continue;
            }
            let i = n as usize;
            let s = Scored {
                score: dot_f32(query, &vectors[i * dim..(i + 1) * dim]),
                node: n,
            };
            let admit = results.len() < ef || results.peek().is_some_and(|w| s > w.0);
            if admit {
                candidates.push(s);
                results.push(std::cmp::Reverse(s));
                if results.len() > ef {
                    results.pop();
                }
            }
        }
    }
    let mut out: Vec<Scored> = results.into_iter().map(|r| r.0).collect();
    out.sort_unstable_by(|a, b| b.cmp(a));
    out
}

impl Graph {
    pub fn build(vectors: &[f32], dim: usize, m: usize, ef_construction: usize, seed: u64) -> Self {
        let n = vectors.len() / dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ml = 1.0 / (m.max(2) as f64).ln();
        let mut builder = Builder {
            vectors,
            dim,
            m,
            ef_construction: ef_construction.max(m),
            visited: Visited::new(n),
        };
        let mut levels = Vec::with_capacity(n);
        let mut neighbors: Vec<Vec<Vec<u32>>> = Vec::with_capacity(n);
        let mut entry = 0u32;
        let mut max_level = 0usize;

        for node in 0..n as u32 {
            let u: f64 = rng.random::<f64>();
            let level = ((-(1.0 - u).ln() * ml).floor() as usize).min(u8::MAX as usize);
            levels.push(level as u8);
            neighbors.push(vec![Vec::new(); level + 1]);
            if node == 0 {
                max_level = level;
                continue;
            }
            let q = builder.vec(node).to_vec();
            let mut ep = vec![Scored {
                score: dot_f32(&q, builder.vec(entry)),
                node: entry,
            }];
            for layer in (level + 1..=max_level).rev() {
                ep = search_layer(vectors, dim, &neighbors, &q, &ep, 1, layer, &mut builder.visited);
            }
            for layer in (0..=level.min(max_level)).rev() {
                let found = search_layer(
                    vectors,
                    dim,
                    &neighbors,
                    &q,
                    &ep,
                    builder.ef_construction,
                    layer,
                    &mut builder.visited,
                );
                let chosen = builder.select(&found, m);
                for &nb in &chosen {
                    let list = &mut neighbors[nb as usize][layer];
                    list.push(node);
                    if list.len() > builder.cap(layer) {
                        let base = builder.vec(nb);
                        let mut cands: Vec<Scored> = list
                            .iter()
                            .map(|&x| Scored {
                                score: dot_f32(base, builder.vec(x)),
                                node: x,
                            })
                            .collect();
                        cands.sort_unstable_by(|a, b| b.cmp(a));
                        let kept = builder.select(&cands, builder.cap(layer));
                        neighbors[nb as usize][layer] = kept;
                    }
                }
                neighbors[node as usize][layer] = chosen;
                ep = found;
            }
            if level > max_level {
                max_level = level;
                entry = node;
            }
        }
        Self {
            m,
            entry,
            max_level,
            levels,
            neighbors,
            visited_pool: Mutex::new(Vec::new()),
        }
    }

    pub fn from_parts(m: usize, entry: u32, max_level: usize, levels: Vec<u8>, neighbors: Vec<Vec<Vec<u32>>>) -> Self {
        Self {
            m,
            entry,
            max_level,
            levels,
            neighbors,
            visited_pool: Mutex::new(Vec::new()),
        }
    }

    /// Best `ef` nodes found by beam search, best first.
    pub fn search(&self, vectors: &[f32], dim: usize, query: &[f32], ef: usize) -> Vec<Scored> {
        let n = self.neighbors.len();
        let mut visited = self
            .visited_pool
            .lock()
            .expect("visited pool poisoned")
            .pop()
            .unwrap_or_else(|| Visited::new(n));
        let e = self.entry as usize;
        let mut ep = vec![Scored {
            score: dot_f32(query, &vectors[e * dim..(e + 1) * dim]),
            node: self.entry,
        }];
        for layer in (1..=self.max_level).rev() {
            ep = search_layer(vectors, dim, &self.neighbors, query, &ep, 1, layer, &mut visited);
        }
        let out = search_layer(vectors, dim, &self.neighbors, query, &ep, ef, 0, &mut visited);
        self.visited_pool
            .lock()
            .expect("visited pool poisoned")
            .push(visited);
        out
    }
}
