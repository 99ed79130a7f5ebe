//! Exact discrete transport by the primal network simplex on the complete
//! bipartite graph between the supports of two histograms.
//!
//! Arcs are implicit: the cost of `(i, j)` is read off the cell coordinates,
//! so memory stays linear in the number of nodes. The basis is a spanning
//! tree of `m + k - 1` arcs, initialised by the north-west corner rule and
//! improved with block pricing until no arc has negative reduced cost.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// A node of the transport problem: a point with positive mass.
#[derive(Debug, Clone, Copy)]
pub struct Site<T> {
    pub x: T,
    pub y: T,
    pub mass: T,
}

#[derive(Debug, Clone, Copy)]
struct TreeArc<T> {
    src: usize,
    dst: usize,
    flow: T,
}

#[derive(Debug, Clone)]
pub struct ExactSolution<T> {
    /// `(source index, target index, mass)` for every arc carrying positive flow.
    pub flows: Vec<(usize, usize, T)>,
    pub cost: T,
    pub pivots: usize,
}

struct Simplex<'a, T> {
    sources: &'a [Site<T>],
    targets: &'a [Site<T>],
    arcs: Vec<TreeArc<T>>,
    /// Node -> incident tree arcs. Sources are `0..m`, targets `m..m+k`.
    adj: Vec<Vec<usize>>,
    potential: Vec<T>,
    parent_arc: Vec<usize>,
    depth: Vec<usize>,
    cost_scale: T,
}

impl<'a, T: Real> Simplex<'a, T> {
    fn cost(&self, i: usize, j: usize) -> T {
        let (s, t) = (&self.sources[i], &self.targets[j]);
        let dx = s.x - t.x;
        let dy = s.y - t.y;
        dx * dx + dy * dy
    }

    fn m(&self) -> usize {
        self.sources.len()
    }

    fn new(sources: &'a [Site<T>], targets: &'a [Site<T>]) -> Self {
        let (m, k) = (sources.len(), targets.len());
        let mut s = Self {
            sources,
            targets,
            arcs: Vec::with_capacity(m + k - 1),
            adj: vec![Vec::new(); m + k],
            potential: vec![T::zero(); m + k],
            parent_arc: vec![usize::MAX; m + k],
            depth: vec![0; m + k],
            cost_scale: T::one(),
        };
        let mut max_cost = T::zero();
        for a in sources {
            for b in targets {
                let (dx, dy) = (a.x - b.x, a.y - b.y);
                max_cost = max_cost.max(dx * dx + dy * dy);
            }
        }
        s.cost_scale = max_cost.max(T::min_positive_value());
        s.north_west_corner();
        s
    }

    fn push_arc(&mut self, src: usize, dst: usize, flow: T) {
        let id = self.arcs.len();
        self.arcs.push(TreeArc { src, dst, flow });
        let m = self.m();
        self.adj[src].push(id);
        self.adj[m + dst].push(id);
    }

    fn north_west_corner(&mut self) {
        let (m, k) = (self.sources.len(), self.targets.len());
        let mut supply: Vec<T> = self.sources.iter().map(|s| s.mass).collect();
        let mut demand: Vec<T> = self.targets.iter().map(|t| t.mass).collect();
        let (mut i, mut j) = (0, 0);
        loop {
            let q = supply[i].min(demand[j]).max(T::zero());
            self.push_arc(i, j, q);
            if i + 1 == m && j + 1 == k {
                break;
            }
            if j + 1 == k || (i + 1 < m && supply[i] <= demand[j]) {
                demand[j] -= q;
                i += 1;
            } else {
                supply[i] -= q;
                j += 1;
            }
        }
    }

    /// Recomputes potentials (`u_i + v_j = c_ij` on tree arcs), parents and depths.
    fn refresh_tree(&mut self) {
        let m = self.m();
        let nodes = self.adj.len();
        let mut seen = vec![false; nodes];
        let mut queue = VecDeque::with_capacity(nodes);
        seen[0] = true;
        self.potential[0] = T::zero();
        self.depth[0] = 0;
        self.parent_arc[0] = usize::MAX;
        queue.push_back(0);
        while let Some(node) = queue.pop_front() {
            for &id in &self.adj[node] {
                let arc = self.arcs[id];
                let other = if node < m { m + arc.dst } else { arc.src };
                if seen[other] {
                    continue;
                }
                seen[other] = true;
                let c = self.cost(arc.src, arc.dst);
                self.potential[other] = c - self.potential[node];
                self.depth[other] = self.depth[node] + 1;
                self.parent_arc[other] = id;
                queue.push_back(other);
            }
        }
    }

    fn parent(&self, node: usize) -> usize {
        let arc = self.arcs[self.parent_arc[node]];
        let m = self.m();
        if node < m {
            m + arc.dst
        } else {
            arc.src
        }
    }

    /// Tree arcs on the cycle closed by the entering arc `(i, j)`, ordered from
    /// target `j` around to source `i`.
    fn cycle(&self, i: usize, j: usize) -> Vec<usize> {
        let m = self.m();
        let (mut a, mut b) = (m + j, i);
        let mut from_j = Vec::new();
        let mut from_i = Vec::new();
        while self.depth[a] > self.depth[b] {
            from_j.push(self.parent_arc[a]);
            a = self.parent(a);
        }
        while self.depth[b] > self.depth[a] {
            from_i.push(self.parent_arc[b]);
            b = self.parent(b);
        }
        while a != b {
            from_j.push(self.parent_arc[a]);
            a = self.parent(a);
            from_i.push(self.parent_arc[b]);
            b = self.parent(b);
        }
        from_i.reverse();
        from_j.extend(from_i);
        from_j
    }

    fn solve(&mut self, max_pivots: usize) -> Result<usize> {
        let (m, k) = (self.sources.len(), self.targets.len());
        let total = m * k;
        let block = ((total as f64).sqrt() as usize).max(32).min(total);
        let tol = T::lit(1e-13) * self.cost_scale;
        let mut cursor = 0usize;
        let mut pivots = 0usize;
        self.refresh_tree();
        loop {
            // Block pricing: scan until a block yields an improving arc.
            let mut best = None;
            let mut best_rc = -tol;
            let mut scanned = 0;
            while scanned < total {
                let end = (scanned + block).min(total);
                for _ in scanned..end {
                    let (i, j) = (cursor / k, cursor % k);
                    let rc = self.cost(i, j) - self.potential[i] - self.potential[m + j];
                    if rc < best_rc {
                        best_rc = rc;
                        best = Some((i, j));
                    }
                    cursor += 1;
                    if cursor == total {
                        cursor = 0;
                    }
                }
                scanned = end;
                if best.is_some() {
                    break;
                }
            }
            let Some((i, j)) = best else {
                return Ok(pivots);
            };
            if pivots >= max_pivots {
                return Err(Error::Diverged { iterations: pivots, marginal_error: f64::NAN });
            }
            pivots += 1;

            let cycle = self.cycle(i, j);
            // Odd positions (first, third, ...) lose flow.
            let mut leave = usize::MAX;
            let mut theta = T::infinity();
            for (pos, &id) in cycle.iter().enumerate() {
                if pos % 2 == 0 && self.arcs[id].flow < theta {
                    theta = self.arcs[id].flow;
                    leave = id;
                }
            }
            let theta = theta.max(T::zero());
            for (pos, &id) in cycle.iter().enumerate() {
                let f = &mut self.arcs[id].flow;
                if pos % 2 == 0 {
                    *f = (*f - theta).max(T::zero());
                } else {
                    *f += theta;
                }
            }
            let old = self.arcs[leave];
            self.adj[old.src].retain(|&x| x != leave);
            self.adj[m + old.dst].retain(|&x| x != leave);
            self.arcs[leave] = TreeArc { src: i, dst: j, flow: theta };
            self.adj[i].push(leave);
            self.adj[m + j].push(leave);
            self.refresh_tree();
        }
    }
}

/// Solves `min Σ c_ij γ_ij` over plans with the given marginals (equal total mass).
pub fn solve_transport<T: Real>(sources: &[Site<T>], targets: &[Site<T>]) -> Result<ExactSolution<T>> {
    if sources.is_empty() || targets.is_empty() {
        return Err(Error::invalid("transport between empty supports"));
    }
    if sources.iter().chain(targets).any(|s| !(s.mass > T::zero()) || !s.mass.is_finite()) {
        return Err(Error::invalid("transport sites must carry positive finite mass"));
    }
    let ms: T = sources.iter().map(|s| s.mass).sum();
    let mt: T = targets.iter().map(|s| s.mass).sum();
    if (ms - mt).abs() > T::lit(1e-9) * ms.max(mt) {
        return Err(Error::invalid(format!("unbalanced transport: {ms} vs {mt}")));
    }
    let mut simplex = Simplex::new(sources, targets);
    let cap = 50 * (sources.len() + targets.len()).pow(2);
    let pivots = simplex.solve(cap)?;
    let mut cost = T::zero();
    let mut flows = Vec::new();
    for arc in &simplex.arcs {
        if arc.flow > T::zero() {
            cost += arc.flow * simplex.cost(arc.src, arc.dst);
            flows.push((arc.src, arc.dst, arc.flow));
        }
    }
    flows.sort_by_key(|&(i, j, _)| (i, j));
    Ok(ExactSolution { flows, cost, pivots })
}
