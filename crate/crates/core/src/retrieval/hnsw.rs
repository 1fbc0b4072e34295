//! Hierarchical navigable small-world graph over unit vectors, searched by
//! inner product.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Scored {
    pub sim: f32,
    pub id: u32,
}

impl Eq for Scored {}

impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sim
            .total_cmp(&other.sim)
            .then_with(|| other.id.cmp(&self.id))
    }
}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    // Eight independent accumulators let the compiler vectorize.
    let mut acc = [0f32; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        for k in 0..8 {
            acc[k] += a[c * 8 + k] * b[c * 8 + k];
        }
    }
    let mut s: f32 = acc.iter().sum();
    for i in chunks * 8..a.len() {
        s += a[i] * b[i];
    }
    s
}

struct Visited {
    bits: Vec<u64>,
}

impl Visited {
    fn new(n: usize) -> Self {
        Self {
            bits: vec![0; n.div_ceil(64)],
        }
    }

    /// Marks `id`; returns whether it was unmarked.
    fn insert(&mut self, id: u32) -> bool {
        let (w, b) = (id as usize / 64, id % 64);
        let fresh = self.bits[w] & (1 << b) == 0;
        self.bits[w] |= 1 << b;
        fresh
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HnswGraph {
    max_neighbors: usize,
    entry: u32,
    /// `links[node][level]` lists neighbor ids.
    links: Vec<Vec<Vec<u32>>>,
}

impl HnswGraph {
    fn max_level(&self) -> usize {
        self.links[self.entry as usize].len() - 1
    }

    fn capacity(&self, level: usize) -> usize {
        if level == 0 {
            2 * self.max_neighbors
        } else {
            self.max_neighbors
        }
    }

    /// Inserts vectors `0..n` in order.
    pub fn build(vectors: &[f32], dim: usize, max_neighbors: usize, ef_construction: usize, seed: u64) -> Result<Self> {
        if max_neighbors < 2 || ef_construction < 1 || dim == 0 {
            return Err(Error::Config(
                "ANN needs max_neighbors >= 2 and ef_construction >= 1".into(),
            ));
        }
        let n = vectors.len() / dim;
        if n == 0 {
            return Err(Error::invalid("cannot build a graph over zero vectors"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ml = 1.0 / (max_neighbors as f64).ln();
        let mut graph = Self {
            max_neighbors,
            entry: 0,
            links: Vec::with_capacity(n),
        };
        let vec_of = |i: u32| &vectors[i as usize * dim..(i as usize + 1) * dim];
        for i in 0..n as u32 {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let level = ((-u.ln() * ml).floor() as usize).min(16);
            graph.links.push(vec![Vec::new(); level + 1]);
            if i == 0 {
                continue;
            }
            let q = vec_of(i);
            let top = graph.max_level();
            let mut ep = Scored {
                sim: dot(q, vec_of(graph.entry)),
                id: graph.entry,
            };
            for l in (level + 1..=top).rev() {
                ep = graph.greedy(q, ep, l, vectors, dim);
            }
            let mut eps = vec![ep];
            for l in (0..=level.min(top)).rev() {
                let found = graph.search_layer(q, &eps, ef_construction, l, vectors, dim);
                let chosen = select_neighbors(&found, max_neighbors, vectors, dim);
                graph.links[i as usize][l] = chosen.iter().map(|s| s.id).collect();
                for s in &chosen {
                    graph.connect(s.id, i, l, vectors, dim);
                }
                eps = found;
            }
            if level > top {
                graph.entry = i;
            }
        }
        Ok(graph)
    }

    /// Adds `new` to `node`'s list at `level`, pruning back to capacity.
    fn connect(&mut self, node: u32, new: u32, level: usize, vectors: &[f32], dim: usize) {
        let cap = self.capacity(level);
        let list = &mut self.links[node as usize][level];
        list.push(new);
        if list.len() <= cap {
            return;
        }
        let base = &vectors[node as usize * dim..(node as usize + 1) * dim];
        let mut cands: Vec<Scored> = list
            .iter()
            .map(|&id| Scored {
                sim: dot(base, &vectors[id as usize * dim..(id as usize + 1) * dim]),
                id,
            })
            .collect();
        cands.sort_unstable_by(|a, b| b.cmp(a));
        *list = select_neighbors(&cands, cap, vectors, dim)
            .into_iter()
            .map(|s| s.id)
            .collect();
    }

    fn greedy(&self, q: &[f32], mut ep: Scored, level: usize, vectors: &[f32], dim: usize) -> Scored {
        loop {
            let mut improved = false;
            for &nb in &self.links[ep.id as usize][level] {
                let sim = dot(q, &vectors[nb as usize * dim..(nb as usize + 1) * dim]);
                if (Scored { sim, id: nb }) > ep {
                    ep = Scored { sim, id: nb };
                    improved = true;
                }
            }
            if !improved {
                return ep;
            }
        }
    }

    /// Best-first search at one level; returns up to `ef` nodes, best first.
    fn search_layer(&self, q: &[f32], eps: &[Scored], ef: usize, level: usize, vectors: &[f32], dim: usize) -> Vec<Scored> {
        let mut visited = Visited::new(self.links.len());
        let mut frontier: BinaryHeap<Scored> = BinaryHeap::new();
        let mut best: BinaryHeap<Reverse<Scored>> = BinaryHeap::new();
        for &e in eps {
            if visited.insert(e.id) {
                frontier.push(e);
                best.push(Reverse(e));
            }
        }
        while best.len() > ef {
            best.pop();
        }
        while let Some(c) = frontier.pop() {
            let worst = best.peek().expect("non-empty").0;
            if c < worst && best.len() >= ef {
                break;
            }
            for &nb in &self.links[c.id as usize][level] {
                if !visited.insert(nb) {
                    continue;
                }
                let s = Scored {
                    sim: dot(q, &vectors[nb as usize * dim..(nb as usize + 1) * dim]),
                    id: nb,
                };
                if best.len() < ef || s > best.peek().expect("non-empty").0 {
                    frontier.push(s);
                    best.push(Reverse(s));
                    if best.len() > ef {
                        best.pop();
                    }
                }
            }
        }
        let mut out: Vec<Scored> = best.into_iter().map(|r| r.0).collect();
        out.sort_unstable_by(|a, b| b.cmp(a));
        out
    }

    /// Up to `ef` approximate nearest nodes to `q`, best first.
    pub(crate) fn search(&self, q: &[f32], ef: usize, vectors: &[f32], dim: usize) -> Vec<Scored> {
        let mut ep = Scored {
            sim: dot(q, &vectors[self.entry as usize * dim..(self.entry as usize + 1) * dim]),
            id: self.entry,
        };
        for l in (1..=self.max_level()).rev() {
            ep = self.greedy(q, ep, l, vectors, dim);
        }
        self.search_layer(q, &[ep], ef, 0, vectors, dim)
    }

    pub(crate) fn validate(&self, n: usize) -> Result<()> {
        if self.links.len() != n || self.entry as usize >= n {
            return Err(Error::format("index", "graph size does not match vectors"));
        }
        for node in &self.links {
            if node.is_empty() || node.len() > self.max_level() + 1 {
                return Err(Error::format("index", "bad node level"));
            }
            for (l, list) in node.iter().enumerate() {
                if list.len() > self.capacity(l) {
                    return Err(Error::format("index", "neighbor list over capacity"));
                }
                for &nb in list {
                    if nb as usize >= n || self.links[nb as usize].len() <= l {
                        return Err(Error::format("index", "edge to missing node"));
                    }
                }
            }
        }
        Ok(())
    }

    pub(crate) fn write(&self, w: &mut ByteWriter) {
        w.u32(self.entry);
        for node in &self.links {
            w.u8(node.len() as u8);
            for list in node {
                w.u32(list.len() as u32);
                for &id in list {
                    w.u32(id);
                }
            }
        }
    }

    pub(crate) fn read(r: &mut ByteReader<'_>, n: usize, max_neighbors: usize) -> Result<Self> {
        let entry = r.u32()?;
        let mut links = Vec::with_capacity(n);
        for _ in 0..n {
            let levels = r.u8()? as usize;
            let mut node = Vec::with_capacity(levels);
            for _ in 0..levels {
                let len = r.u32()? as usize;
                if len > 2 * max_neighbors {
                    return Err(Error::format("index", "neighbor list over capacity"));
                }
                node.push((0..len).map(|_| r.u32()).collect::<Result<Vec<_>>>()?);
            }
            links.push(node);
        }
        let graph = Self {
            max_neighbors,
            entry,
            links,
        };
        graph.validate(n)?;
        Ok(graph)
    }
}

/// Neighbor-diversity heuristic: keep a candidate only if it is closer to
/// the base than to every neighbor kept so far, then top up with the best
/// pruned ones. `cands` must be sorted best first.
fn select_neighbors(cands: &[Scored], m: usize, vectors: &[f32], dim: usize) -> Vec<Scored> {
    let mut kept: Vec<Scored> = Vec::with_capacity(m);
    let mut pruned = Vec::new();
    for &c in cands {
        if kept.len() == m {
            break;
        }
        let cv = &vectors[c.id as usize * dim..(c.id as usize + 1) * dim];
        let diverse = kept
            .iter()
            .all(|k| dot(cv, &vectors[k.id as usize * dim..(k.id as usize + 1) * dim]) < c.sim);
        if diverse {
            kept.push(c);
        } else {
            pruned.push(c);
        }
    }
    for c in pruned {
        if kept.len() == m {
            break;
        }
        kept.push(c);
    }
    kept
}
