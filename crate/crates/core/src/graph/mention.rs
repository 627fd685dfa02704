use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{mention_target, tokenize, UserRecord};

/// Default celebrity cut-off: users with more distinct mentioners are removed.
pub const CELEBRITY_THRESHOLD: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphMode {
    /// Dataset users plus external users mentioned by at least two of them.
    Wnut,
    /// Dataset users only, linked by mutual mentions or a co-mentioned user.
    Comention,
}

impl FromStr for GraphMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wnut" => Ok(GraphMode::Wnut),
            "comention" => Ok(GraphMode::Comention),
            other => Err(Error::Config(format!("unknown graph mode `{other}` (expected wnut or comention)"))),
        }
    }
}

/// Weighted directed mention graph. Every edge is stored in both directions.
/// User ids are lowercased to match `@mention` tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct MentionGraph {
    mode: GraphMode,
    users: Vec<String>,
    mentions: Vec<BTreeMap<String, u64>>,
    mentioners: BTreeMap<String, usize>,
    removed: BTreeSet<String>,
    nodes: Vec<String>,
    edges: BTreeMap<(usize, usize), f64>,
}

pub fn build_graph(users: &[UserRecord], mode: GraphMode) -> MentionGraph {
    let mut order: Vec<String> = Vec::new();
    let mut slot: HashMap<String, usize> = HashMap::new();
    let mut mentions: Vec<BTreeMap<String, u64>> = Vec::new();
    for u in users {
        let id = u.user_id.to_lowercase();
        let i = *slot.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            mentions.push(BTreeMap::new());
            order.len() - 1
        });
        for tweet in &u.tweets {
            for tok in tokenize(tweet) {
                if let Some(target) = mention_target(&tok) {
                    if target != id {
                        *mentions[i].entry(target.to_string()).or_insert(0) += 1;
                    }
                }
            }
        }
    }
    let mut mentioners: BTreeMap<String, usize> = order.iter().map(|u| (u.clone(), 0)).collect();
    for m in &mentions {
        for target in m.keys() {
            *mentioners.entry(target.clone()).or_insert(0) += 1;
        }
    }
    let mut g = MentionGraph {
        mode,
        users: order,
        mentions,
        mentioners,
        removed: BTreeSet::new(),
        nodes: Vec::new(),
        edges: BTreeMap::new(),
    };
    g.rebuild();
    g
}

/// Removes every user with more than `threshold` distinct mentioners, both as
/// a node and as a co-mention hub. Counts are the pre-filter ones.
pub fn remove_celebrities(graph: &MentionGraph, threshold: usize) -> MentionGraph {
    let mut g = graph.clone();
    g.removed
        .extend(g.mentioners.iter().filter(|(_, &c)| c > threshold).map(|(id, _)| id.clone()));
    g.rebuild();
    g
}

impl MentionGraph {
    fn rebuild(&mut self) {
        let dataset: HashMap<&str, usize> = self
            .users
            .iter()
            .enumerate()
            .map(|(i, u)| (u.as_str(), i))
            .collect();
        let alive = |id: &str| !self.removed.contains(id);
        let mut nodes: Vec<String> = self.users.iter().filter(|u| alive(u)).cloned().collect();
        if self.mode == GraphMode::Wnut {
            nodes.extend(
                self.mentioners
                    .iter()
                    .filter(|(id, &c)| c >= 2 && !dataset.contains_key(id.as_str()) && alive(id))
                    .map(|(id, _)| id.clone()),
            );
        }
        let index: HashMap<&str, usize> = nodes.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let mut edges = BTreeMap::new();
        let mut link = |a: usize, b: usize, w: f64| {
            *edges.entry((a, b)).or_insert(0.0) += w;
            *edges.entry((b, a)).or_insert(0.0) += w;
        };
        for (u, targets) in self.users.iter().zip(&self.mentions) {
            let Some(&src) = index.get(u.as_str()) else { continue };
            for (t, &count) in targets {
                if let Some(&dst) = index.get(t.as_str()) {
                    link(src, dst, count as f64);
                }
            }
        }
        if self.mode == GraphMode::Comention {
            let mut by_target: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (u, targets) in self.users.iter().zip(&self.mentions) {
                let Some(&src) = index.get(u.as_str()) else { continue };
                for t in targets.keys().filter(|t| alive(t)) {
                    by_target.entry(t.as_str()).or_default().push(src);
                }
            }
            for group in by_target.values() {
                for (k, &a) in group.iter().enumerate() {
                    for &b in &group[k + 1..] {
                        link(a, b, 1.0);
                    }
                }
            }
        }
        self.nodes = nodes;
        self.edges = edges;
    }

    pub fn mode(&self) -> GraphMode {
        self.mode
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// `(src, dst, weight)` in node-index order.
    pub fn edges(&self) -> impl Iterator<Item = (&str, &str, f64)> {
        self.edges
            .iter()
            .map(|(&(a, b), &w)| (self.nodes[a].as_str(), self.nodes[b].as_str(), w))
    }

    pub fn weight(&self, src: &str, dst: &str) -> Option<f64> {
        let a = self.nodes.iter().position(|n| n == src)?;
        let b = self.nodes.iter().position(|n| n == dst)?;
        self.edges.get(&(a, b)).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.nodes.iter().any(|n| n == &id.to_lowercase())
    }

    /// Distinct dataset users mentioning `id` (pre-filter count).
    pub fn distinct_mentioners(&self, id: &str) -> usize {
        self.mentioners.get(&id.to_lowercase()).copied().unwrap_or(0)
    }

    /// Nodes with at least one incident edge, and the edges between them.
    pub fn edge_list(&self) -> EdgeList {
        let mut remap = vec![usize::MAX; self.nodes.len()];
        let mut nodes = Vec::new();
        let mut edges = Vec::with_capacity(self.edges.len());
        for (&(a, b), &w) in &self.edges {
            for x in [a, b] {
                if remap[x] == usize::MAX {
                    remap[x] = nodes.len();
                    nodes.push(self.nodes[x].clone());
                }
            }
            edges.push((remap[a], remap[b], w));
        }
        EdgeList { nodes, edges }
    }
}

/// Input to the embedding trainer: node names and weighted directed edges.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EdgeList {
    pub nodes: Vec<String>,
    pub edges: Vec<(usize, usize, f64)>,
}

impl EdgeList {
    /// `src \t dst \t weight` lines.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for &(a, b, w) in &self.edges {
            writeln!(s, "{}\t{}\t{}", self.nodes[a], self.nodes[b], w).unwrap();
        }
        s
    }

    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_tsv())?;
        Ok(())
    }

    /// Nodes are numbered by first appearance.
    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut list = EdgeList::default();
        let mut index: HashMap<String, usize> = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |m: String| Error::Ingest { line: n + 1, message: m };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(bad(format!("expected src, dst, weight; found {} columns", cols.len())));
            }
            let w: f64 = cols[2].parse().map_err(|e| bad(format!("weight: {e}")))?;
            if !(w.is_finite() && w > 0.0) {
                return Err(bad(format!("weight must be positive, got {w}")));
            }
            if cols[0] == cols[1] {
                return Err(bad(format!("self-loop on `{}`", cols[0])));
            }
            let mut id = |name: &str| {
                *index.entry(name.to_string()).or_insert_with(|| {
                    list.nodes.push(name.to_string());
                    list.nodes.len() - 1
                })
            };
            let (a, b) = (id(cols[0]), id(cols[1]));
            list.edges.push((a, b, w));
        }
        Ok(list)
    }

    pub fn read_tsv(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_tsv(&fs::read_to_string(path)?)
    }
}
