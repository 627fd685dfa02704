//! Second-order LINE embeddings trained with negative sampling.

use std::cell::Cell;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use hlpnn_tensor::Rng;
use rand::distr::Distribution;
use rand::Rng as _;
use rand_distr::weighted::WeightedAliasIndex;
use serde::{Deserialize, Serialize};

use super::mention::EdgeList;
use crate::error::{Error, Result};

/// Exponent applied to out-degrees for the noise distribution.
pub const NOISE_POWER: f64 = 0.75;
/// Final learning rate as a fraction of the initial one.
pub const MIN_LR_FRACTION: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LineConfig {
    pub dim: usize,
    pub lr0: f64,
    pub negatives: usize,
    pub samples: u64,
    pub seed: u64,
    /// 1 trains deterministically; more workers update shared tables without
    /// locks and give up bit-reproducibility.
    pub threads: usize,
}

impl Default for LineConfig {
    fn default() -> Self {
        LineConfig {
            dim: 600,
            lr0: 0.025,
            negatives: 5,
            samples: 1_000_000,
            seed: 0,
            threads: 1,
        }
    }
}

/// Draws indices with probability proportional to their weights in O(1).
pub struct AliasSampler(WeightedAliasIndex<f64>);

impl AliasSampler {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        WeightedAliasIndex::new(weights)
            .map(AliasSampler)
            .map_err(|e| Error::Graph(format!("alias table: {e}")))
    }

    pub fn sample(&self, rng: &mut Rng) -> usize {
        self.0.sample(rng)
    }
}

/// Frozen user embeddings; users outside the graph map to zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkEmbeddings {
    dim: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    vertex: Vec<f64>,
    /// Empty when loaded from a file; only vertex vectors are exported.
    context: Vec<f64>,
}

impl NetworkEmbeddings {
    fn from_parts(dim: usize, ids: Vec<String>, vertex: Vec<f64>, context: Vec<f64>) -> Result<Self> {
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.to_lowercase(), i).is_some() {
                return Err(Error::Graph(format!("duplicate embedding id `{id}`")));
            }
        }
        Ok(NetworkEmbeddings {
            dim,
            ids,
            index,
            vertex,
            context,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, user_id: &str) -> Option<&[f64]> {
        let i = *self.index.get(&user_id.to_lowercase())?;
        Some(&self.vertex[i * self.dim..(i + 1) * self.dim])
    }

    pub fn lookup(&self, user_id: &str) -> Vec<f64> {
        self.get(user_id).map_or_else(|| vec![0.0; self.dim], <[f64]>::to_vec)
    }

    pub fn context(&self, user_id: &str) -> Option<&[f64]> {
        let i = *self.index.get(&user_id.to_lowercase())?;
        self.context.get(i * self.dim..(i + 1) * self.dim)
    }

    /// Header `dim=N count=M`, then `user_id v1 … vN` per line.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "dim={} count={}", self.dim, self.ids.len())?;
        let mut line = String::new();
        for (i, id) in self.ids.iter().enumerate() {
            line.clear();
            line.push_str(id);
            for v in &self.vertex[i * self.dim..(i + 1) * self.dim] {
                write!(line, " {v}").unwrap();
            }
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Ingest {
            line: 1,
            message: "missing embedding header".into(),
        })??;
        let bad_header = || Error::Ingest {
            line: 1,
            message: format!("expected `dim=N count=M`, got `{header}`"),
        };
        let mut dim = None;
        let mut count = None;
        for part in header.split_whitespace() {
            match part.split_once('=') {
                Some(("dim", v)) => dim = v.parse::<usize>().ok(),
                Some(("count", v)) => count = v.parse::<usize>().ok(),
                _ => return Err(bad_header()),
            }
        }
        let (dim, count) = (dim.ok_or_else(bad_header)?, count.ok_or_else(bad_header)?);
        let mut ids = Vec::with_capacity(count);
        let mut vertex = Vec::with_capacity(count * dim);
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |m: String| Error::Ingest { line: n + 2, message: m };
            let mut parts = line.split_whitespace();
            let id = parts.next().expect("non-empty line");
            let before = vertex.len();
            for p in parts {
                vertex.push(p.parse::<f64>().map_err(|e| bad(format!("value: {e}")))?);
            }
            if vertex.len() - before != dim {
                return Err(bad(format!("`{id}` has {} values, header says {dim}", vertex.len() - before)));
            }
            ids.push(id.to_string());
        }
        if ids.len() != count {
            return Err(Error::Ingest {
                line: 1,
                message: format!("header count {count} but {} rows", ids.len()),
            });
        }
        Self::from_parts(dim, ids, vertex, Vec::new())
    }
}

/// Shared parameter storage the update rule reads and writes.
trait Table {
    fn get(&self, i: usize) -> f64;
    fn add(&self, i: usize, delta: f64);
}

impl Table for [Cell<f64>] {
    fn get(&self, i: usize) -> f64 {
        self[i].get()
    }
    fn add(&self, i: usize, delta: f64) {
        self[i].set(self[i].get() + delta);
    }
}

impl Table for [AtomicU64] {
    fn get(&self, i: usize) -> f64 {
        f64::from_bits(self[i].load(Ordering::Relaxed))
    }
    // Lock-free and racy by design: concurrent updates may be lost.
    fn add(&self, i: usize, delta: f64) {
        let v = Table::get(self, i) + delta;
        self[i].store(v.to_bits(), Ordering::Relaxed);
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct Sampler<'a> {
    edges: &'a [(usize, usize, f64)],
    edge_alias: AliasSampler,
    noise_alias: AliasSampler,
    dim: usize,
    negatives: usize,
}

impl Sampler<'_> {
    /// One SGD step on `log σ(c_j·v_i) + Σ_n log σ(−c_n·v_i)` for a sampled edge.
    fn step<T: Table + ?Sized>(&self, vertex: &T, context: &T, lr: f64, rng: &mut Rng, err: &mut [f64]) {
        let (src, dst, _) = self.edges[self.edge_alias.sample(rng)];
        err.iter_mut().for_each(|e| *e = 0.0);
        let vi = src * self.dim;
        for k in 0..=self.negatives {
            let (target, label) = if k == 0 {
                (dst, 1.0)
            } else {
                let n = self.noise_alias.sample(rng);
                if n == dst {
                    continue;
                }
                (n, 0.0)
            };
            let ci = target * self.dim;
            let dot: f64 = (0..self.dim).map(|d| vertex.get(vi + d) * context.get(ci + d)).sum();
            let g = (label - sigmoid(dot)) * lr;
            for (d, e) in err.iter_mut().enumerate() {
                *e += g * context.get(ci + d);
                context.add(ci + d, g * vertex.get(vi + d));
            }
        }
        for (d, e) in err.iter().enumerate() {
            vertex.add(vi + d, *e);
        }
    }
}

fn learning_rate(lr0: f64, done: u64, total: u64) -> f64 {
    lr0 * (1.0 - done as f64 / total as f64).max(MIN_LR_FRACTION)
}

pub fn train_line(graph: &EdgeList, cfg: &LineConfig) -> Result<NetworkEmbeddings> {
    if graph.edges.is_empty() {
        return Err(Error::Graph("cannot embed a graph with no edges".into()));
    }
    if cfg.dim == 0 || cfg.threads == 0 {
        return Err(Error::Config("LINE dim and threads must be positive".into()));
    }
    let n = graph.nodes.len();
    let dim = cfg.dim;
    let mut out_degree = vec![0.0; n];
    for &(a, _, w) in &graph.edges {
        out_degree[a] += w;
    }
    let sampler = Sampler {
        edges: &graph.edges,
        edge_alias: AliasSampler::new(graph.edges.iter().map(|e| e.2).collect())?,
        noise_alias: AliasSampler::new(out_degree.iter().map(|d| d.powf(NOISE_POWER)).collect())?,
        dim,
        negatives: cfg.negatives,
    };
    let root = Rng::seed_from(cfg.seed);
    let mut init_rng = root.derive(0);
    let half = 0.5 / dim as f64;
    let mut vertex: Vec<f64> = (0..n * dim).map(|_| init_rng.random_range(-half..half)).collect();
    let mut context = vec![0.0; n * dim];

    if cfg.threads == 1 {
        let v = Cell::from_mut(vertex.as_mut_slice()).as_slice_of_cells();
        let c = Cell::from_mut(context.as_mut_slice()).as_slice_of_cells();
        let mut rng = root.derive(1);
        let mut err = vec![0.0; dim];
        for s in 0..cfg.samples {
            sampler.step(v, c, learning_rate(cfg.lr0, s, cfg.samples), &mut rng, &mut err);
        }
    } else {
        let to_atomic = |xs: &[f64]| xs.iter().map(|x| AtomicU64::new(x.to_bits())).collect::<Vec<_>>();
        let (v, c) = (to_atomic(&vertex), to_atomic(&context));
        let per_worker = cfg.samples.div_ceil(cfg.threads as u64);
        std::thread::scope(|scope| {
            for w in 0..cfg.threads {
                let (v, c, sampler, root) = (&v[..], &c[..], &sampler, &root);
                let quota = per_worker.min(cfg.samples.saturating_sub(per_worker * w as u64));
                scope.spawn(move || {
                    let mut rng = root.derive(1 + w as u64);
                    let mut err = vec![0.0; dim];
                    for s in 0..quota {
                        sampler.step(v, c, learning_rate(cfg.lr0, s, per_worker), &mut rng, &mut err);
                    }
                });
            }
        });
        let from_atomic = |xs: Vec<AtomicU64>| xs.into_iter().map(|x| f64::from_bits(x.into_inner())).collect();
        vertex = from_atomic(v);
        context = from_atomic(c);
    }
    if vertex.iter().chain(&context).any(|x| !x.is_finite()) {
        return Err(Error::Graph("LINE training diverged".into()));
    }
    NetworkEmbeddings::from_parts(dim, graph.nodes.clone(), vertex, context)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_graph() -> EdgeList {
        EdgeList {
            nodes: vec!["a".into(), "b".into(), "c".into()],
            edges: vec![(0, 1, 1.0), (1, 0, 1.0), (1, 2, 2.0), (2, 1, 2.0)],
        }
    }

    fn cfg(samples: u64) -> LineConfig {
        LineConfig {
            dim: 8,
            samples,
            seed: 3,
            ..LineConfig::default()
        }
    }

    #[test]
    fn zero_samples_keep_initialization() {
        let e = train_line(&path_graph(), &cfg(0)).unwrap();
        let half = 0.5 / 8.0;
        for id in ["a", "b", "c"] {
            assert!(e.get(id).unwrap().iter().all(|x| x.abs() <= half));
            assert!(e.context(id).unwrap().iter().all(|&x| x == 0.0));
        }
        let again = train_line(&path_graph(), &cfg(0)).unwrap();
        assert_eq!(e, again);
    }

    #[test]
    fn empty_graph_is_an_error() {
        assert!(matches!(train_line(&EdgeList::default(), &cfg(10)), Err(Error::Graph(_))));
    }

    #[test]
    fn absent_users_are_zero() {
        let e = train_line(&path_graph(), &cfg(100)).unwrap();
        assert_eq!(e.lookup("nobody"), vec![0.0; 8]);
        assert_eq!(e.lookup("B"), e.get("b").unwrap());
    }

    #[test]
    fn single_thread_is_deterministic() {
        let a = train_line(&path_graph(), &cfg(5000)).unwrap();
        let b = train_line(&path_graph(), &cfg(5000)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn multi_worker_runs_and_stays_finite() {
        let c = LineConfig { threads: 3, ..cfg(6000) };
        let e = train_line(&path_graph(), &c).unwrap();
        assert_eq!(e.len(), 3);
    }

    #[test]
    fn file_round_trip_is_exact() {
        let e = train_line(&path_graph(), &cfg(500)).unwrap();
        let mut buf = Vec::new();
        e.write(&mut buf).unwrap();
        assert!(buf.starts_with(b"dim=8 count=3\n"));
        let back = NetworkEmbeddings::read(buf.as_slice()).unwrap();
        for id in ["a", "b", "c"] {
            assert_eq!(back.get(id), e.get(id));
        }
        assert!(NetworkEmbeddings::read("dim=2 count=1\nx 1\n".as_bytes()).is_err());
    }

    #[test]
    fn alias_ratio_one_to_three() {
        let s = AliasSampler::new(vec![1.0, 3.0]).unwrap();
        let mut rng = Rng::seed_from(11);
        let n = 1_000_000;
        let ones = (0..n).filter(|_| s.sample(&mut rng) == 1).count();
        let ratio = ones as f64 / (n - ones) as f64;
        assert!((ratio - 3.0).abs() / 3.0 < 0.02, "{ratio}");
    }

    #[test]
    fn alias_frequencies_within_three_sigma() {
        let mut rng = Rng::seed_from(5);
        for weights in [vec![0.5, 1.0, 2.0, 4.0, 0.1], vec![7.0, 7.0, 1.0], vec![1.0; 9]] {
            let s = AliasSampler::new(weights.clone()).unwrap();
            let total: f64 = weights.iter().sum();
            let n = 1_000_000usize;
            let mut counts = vec![0usize; weights.len()];
            for _ in 0..n {
                counts[s.sample(&mut rng)] += 1;
            }
            for (w, &c) in weights.iter().zip(&counts) {
                let p = w / total;
                let sigma = (n as f64 * p * (1.0 - p)).sqrt();
                assert!((c as f64 - n as f64 * p).abs() <= 3.0 * sigma + 1.0, "{weights:?} {counts:?}");
            }
        }
    }
}
