//! Hierarchical navigable small-world graph.
//!
//! Sequential insertion with seeded level assignment, so a build is a pure
//! function of the vectors and parameters. Traversal uses f32 dot products;
//! the final candidate list is rescored in f64 like the flat index.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{dot_f32, dot_f64, normalize_query, top_n, IndexError, SearchResult};
use crate::format::VectorMatrix;
use crate::model::ItemId;

const GRAPH_MAGIC: &[u8; 4] = b"AEH1";
const GRAPH_VERSION: u32 = 1;
const MAX_LEVEL: u8 = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HnswParams {
    /// Neighbors per node on levels above 0.
    pub m: usize,
    /// Neighbors per node on level 0.
    pub m0: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        HnswParams {
            m: 16,
            m0: 32,
            ef_construction: 200,
            ef_search: 64,
            seed: 7,
        }
    }
}

impl HnswParams {
    fn check(&self) -> Result<(), IndexError> {
        if self.m < 2 {
            return Err(IndexError::BadParams(format!("m = {} (need at least 2)", self.m)));
        }
        if self.m0 < self.m {
            return Err(IndexError::BadParams(format!(
                "m0 = {} is below m = {}",
                self.m0, self.m
            )));
        }
        if self.ef_construction == 0 || self.ef_search == 0 {
            return Err(IndexError::BadParams("ef values must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Cand {
    sim: f32,
    id: u32,
}

impl Eq for Cand {}

impl Ord for Cand {
    // greater = better: higher similarity, then lower id
    fn cmp(&self, other: &Self) -> Ordering {
        self.sim.total_cmp(&other.sim).then(other.id.cmp(&self.id))
    }
}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Visited {
    marks: Vec<u32>,
    epoch: u32,
}

impl Visited {
    fn new(n: usize) -> Self {
        Visited {
            marks: vec![0; n],
            epoch: 0,
        }
    }

    fn reset(&mut self) {
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.marks.fill(0);
            self.epoch = 1;
        }
    }

    /// Marks `i`; true when it was not yet visited.
    #[inline]
    fn insert(&mut self, i: u32) -> bool {
        let m = &mut self.marks[i as usize];
        if *m == self.epoch {
            false
        } else {
            *m = self.epoch;
            true
        }
    }
}

#[derive(Debug, Clone)]
pub struct HnswIndex {
    vectors: Arc<VectorMatrix>,
    params: HnswParams,
    /// links[node][level]
    links: Vec<Vec<Vec<u32>>>,
    entry: u32,
    max_level: u8,
}

impl HnswIndex {
    pub fn build(vectors: Arc<VectorMatrix>, params: &HnswParams) -> Result<Self, IndexError> {
        params.check()?;
        if vectors.rows == 0 {
            return Err(IndexError::Empty);
        }
        if vectors.dim == 0 {
            return Err(IndexError::ZeroDimension);
        }
        let n = vectors.rows;
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let ml = 1.0 / (params.m as f64).ln();
        let levels: Vec<u8> = (0..n)
            .map(|_| {
                let u: f64 = 1.0 - rng.random::<f64>();
                ((-u.ln() * ml).floor() as u64).min(MAX_LEVEL as u64) as u8
            })
            .collect();

        let mut h = HnswIndex {
            vectors,
            params: *params,
            links: levels.iter().map(|&l| vec![Vec::new(); l as usize + 1]).collect(),
            entry: 0,
            max_level: levels[0],
        };
        let mut visited = Visited::new(n);
        for (i, &level) in levels.iter().enumerate().skip(1) {
            h.insert(i as u32, level, &mut visited);
        }
        Ok(h)
    }

    pub fn params(&self) -> &HnswParams {
        &self.params
    }

    pub fn vectors(&self) -> &Arc<VectorMatrix> {
        &self.vectors
    }

    #[inline]
    fn vec(&self, i: u32) -> &[f32] {
        self.vectors.row(i as usize)
    }

    fn cap(&self, level: usize) -> usize {
        if level == 0 {
            self.params.m0
        } else {
            self.params.m
        }
    }

    fn insert(&mut self, i: u32, level: u8, visited: &mut Visited) {
        let q = self.vec(i).to_vec();
        let mut eps = vec![Cand {
            sim: dot_f32(&q, self.vec(self.entry)),
            id: self.entry,
        }];
        for lc in ((level as usize + 1)..=self.max_level as usize).rev() {
            eps = self.search_layer(&q, &eps, 1, lc, visited);
        }
        for lc in (0..=(level.min(self.max_level) as usize)).rev() {
            let w = self.search_layer(&q, &eps, self.params.ef_construction, lc, visited);
            let neighbors = self.select_neighbors(&w, self.params.m);
            for &nb in &neighbors {
                self.links[nb as usize][lc].push(i);
                if self.links[nb as usize][lc].len() > self.cap(lc) {
                    self.shrink(nb, lc);
                }
            }
            self.links[i as usize][lc] = neighbors;
            eps = w;
        }
        if level > self.max_level {
            self.max_level = level;
            self.entry = i;
        }
    }

    fn shrink(&mut self, node: u32, level: usize) {
        let base = self.vec(node);
        let mut cands: Vec<Cand> = self.links[node as usize][level]
            .iter()
            .map(|&c| Cand {
                sim: dot_f32(base, self.vec(c)),
                id: c,
            })
            .collect();
        cands.sort_unstable_by(|a, b| b.cmp(a));
        let kept = self.select_neighbors(&cands, self.cap(level));
        self.links[node as usize][level] = kept;
    }

    /// Neighbor-selection heuristic: walk candidates best first and keep one
    /// only if it is closer to the base than to every neighbor kept so far.
    /// `cands` must be sorted best first.
    fn select_neighbors(&self, cands: &[Cand], m: usize) -> Vec<u32> {
        let mut out: Vec<u32> = Vec::with_capacity(m);
        for c in cands {
            if out.len() >= m {
                break;
            }
            let v = self.vec(c.id);
            if out.iter().all(|&r| dot_f32(v, self.vec(r)) < c.sim) {
                out.push(c.id);
            }
        }
        out
    }

    /// Best-first search on one level; returns up to `ef` nodes, best first.
    fn search_layer(&self, q: &[f32], eps: &[Cand], ef: usize, level: usize, visited: &mut Visited) -> Vec<Cand> {
        visited.reset();
        let mut candidates: BinaryHeap<Cand> = BinaryHeap::new();
        let mut results: BinaryHeap<Reverse<Cand>> = BinaryHeap::new();
        for &e in eps {
            if visited.insert(e.id) {
                candidates.push(e);
                results.push(Reverse(e));
                if results.len() > ef {
                    results.pop();
                }
            }
        }
        while let Some(c) = candidates.pop() {
            let worst = results.peek().expect("non-empty").0;
            if c.sim < worst.sim && results.len() >= ef {
                break;
            }
            let Some(adj) = self.links[c.id as usize].get(level) else {
                continue;
            };
            for &nb in adj {
                if !visited.insert(nb) {
                    continue;
                }
                let cand = Cand {
                    sim: dot_f32(q, self.vec(nb)),
                    id: nb,
                };
                if results.len() < ef || cand > results.peek().expect("non-empty").0 {
                    candidates.push(cand);
                    results.push(Reverse(cand));
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }
        let mut out: Vec<Cand> = results.into_iter().map(|r| r.0).collect();
        out.sort_unstable_by(|a, b| b.cmp(a));
        out
    }

    pub fn query(&self, q: &[f32], n: usize) -> Result<SearchResult, IndexError> {
        self.query_with_ef(q, n, self.params.ef_search)
    }

    /// Query with an explicit search breadth; the effective breadth is at
    /// least `n`.
    pub fn query_with_ef(&self, q: &[f32], n: usize, ef: usize) -> Result<SearchResult, IndexError> {
        if n == 0 {
            return Err(IndexError::ZeroCount);
        }
        let q64 = normalize_query(q, self.vectors.dim)?;
        let q32: Vec<f32> = q64.iter().map(|&v| v as f32).collect();
        let mut visited = Visited::new(self.vectors.rows);
        let mut eps = vec![Cand {
            sim: dot_f32(&q32, self.vec(self.entry)),
            id: self.entry,
        }];
        for lc in (1..=self.max_level as usize).rev() {
            eps = self.search_layer(&q32, &eps, 1, lc, &mut visited);
        }
        let found = self.search_layer(&q32, &eps, ef.max(n), 0, &mut visited);
        let scored = found
            .iter()
            .map(|c| (dot_f64(self.vec(c.id), &q64), ItemId(c.id as u64)))
            .collect();
        Ok(top_n(scored, n))
    }

    /// Out-degree statistics for diagnostics: (mean level-0 degree, max level).
    pub fn stats(&self) -> (f64, u8) {
        let total: usize = self.links.iter().map(|l| l[0].len()).sum();
        (total as f64 / self.links.len() as f64, self.max_level)
    }

    /// Serializes the adjacency lists: magic, version, node count, entry
    /// point, max level, then per node its level and one length-prefixed id
    /// array per level. Little-endian throughout.
    pub fn encode_graph(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(GRAPH_MAGIC);
        out.extend_from_slice(&GRAPH_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.links.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.entry.to_le_bytes());
        out.push(self.max_level);
        for node in &self.links {
            out.push((node.len() - 1) as u8);
            for adj in node {
                out.extend_from_slice(&(adj.len() as u32).to_le_bytes());
                for id in adj {
                    out.extend_from_slice(&id.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn decode_graph(vectors: Arc<VectorMatrix>, params: HnswParams, bytes: &[u8]) -> Result<Self, String> {
        params.check().map_err(|e| e.to_string())?;
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != GRAPH_MAGIC {
            return Err("bad magic".into());
        }
        let version = r.u32()?;
        if version != GRAPH_VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let n = r.u64()? as usize;
        if n != vectors.rows || n == 0 {
            return Err(format!("graph has {n} nodes, store has {}", vectors.rows));
        }
        let entry = r.u32()?;
        let max_level = r.u8()?;
        if entry as usize >= n || max_level > MAX_LEVEL {
            return Err("bad entry point".into());
        }
        let mut links = Vec::with_capacity(n);
        for node in 0..n {
            let level = r.u8()?;
            if level > max_level {
                return Err(format!("node {node} level {level} above max {max_level}"));
            }
            let mut per_level = Vec::with_capacity(level as usize + 1);
            for _ in 0..=level {
                let len = r.u32()? as usize;
                if len > n {
                    return Err(format!("node {node} lists {len} neighbors"));
                }
                let mut adj = Vec::with_capacity(len);
                for _ in 0..len {
                    let id = r.u32()?;
                    if id as usize >= n {
                        return Err(format!("node {node} links to unknown node {id}"));
                    }
                    adj.push(id);
                }
                per_level.push(adj);
            }
            links.push(per_level);
        }
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        if links[entry as usize].len() != max_level as usize + 1 {
            return Err("entry point is not on the top level".into());
        }
        Ok(HnswIndex {
            vectors,
            params,
            links,
            entry,
            max_level,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8], String> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or("truncated graph")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
