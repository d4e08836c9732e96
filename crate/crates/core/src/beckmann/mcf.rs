//! Successive-shortest-path min-cost flow with Johnson potentials.
//!
//! Capacities and supplies are integers, costs are nonnegative `f64`. Each round
//! runs Dijkstra on reduced costs from a super source and augments along the
//! cheapest path, so the result is an exact optimum of the integer problem.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

pub(crate) const INF_CAP: i64 = i64::MAX / 4;

#[derive(Debug, Clone)]
struct Arc {
    to: usize,
    cap: i64,
    cost: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct MinCostFlow {
    arcs: Vec<Arc>,
    adj: Vec<Vec<usize>>,
}

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    dist: f64,
    node: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.dist.total_cmp(&self.dist).then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl MinCostFlow {
    pub fn new(n: usize) -> Self {
        Self { arcs: Vec::new(), adj: vec![Vec::new(); n] }
    }

    /// Adds `from -> to` and its zero-capacity residual twin; returns the arc id.
    pub fn add_arc(&mut self, from: usize, to: usize, cap: i64, cost: f64) -> usize {
        debug_assert!(cost >= 0.0);
        let id = self.arcs.len();
        self.arcs.push(Arc { to, cap, cost });
        self.arcs.push(Arc { to: from, cap: 0, cost: -cost });
        self.adj[from].push(id);
        self.adj[to].push(id + 1);
        id
    }

    /// Flow currently carried by arc `id`.
    pub fn flow(&self, id: usize) -> i64 {
        self.arcs[id + 1].cap
    }

    /// Pushes `amount` units from `s` to `t` at minimum cost.
    /// Returns the number of augmentations, or `None` if `t` becomes unreachable.
    pub fn run(&mut self, s: usize, t: usize, amount: i64) -> Option<usize> {
        let n = self.adj.len();
        let mut potential = vec![0.0f64; n];
        let mut dist = vec![f64::INFINITY; n];
        let mut prev = vec![usize::MAX; n];
        let mut heap = BinaryHeap::new();
        let mut left = amount;
        let mut rounds = 0;
        while left > 0 {
            dist.iter_mut().for_each(|d| *d = f64::INFINITY);
            prev.iter_mut().for_each(|p| *p = usize::MAX);
            dist[s] = 0.0;
            heap.push(Entry { dist: 0.0, node: s });
            while let Some(Entry { dist: d, node: u }) = heap.pop() {
                if d > dist[u] {
                    continue;
                }
                if u == t {
                    break;
                }
                for &id in &self.adj[u] {
                    let a = &self.arcs[id];
                    if a.cap <= 0 {
                        continue;
                    }
                    // Rounding can make reduced costs slightly negative; they are zero in exact arithmetic.
                    let rc = (a.cost + potential[u] - potential[a.to]).max(0.0);
                    let nd = d + rc;
                    if nd < dist[a.to] {
                        dist[a.to] = nd;
                        prev[a.to] = id;
                        heap.push(Entry { dist: nd, node: a.to });
                    }
                }
            }
            if !dist[t].is_finite() {
                return None;
            }
            heap.clear();
            // Capping at dist[t] keeps reduced costs nonnegative for nodes not yet settled.
            let cap = dist[t];
            for v in 0..n {
                potential[v] += dist[v].min(cap);
            }
            let mut push = left;
            let mut v = t;
            while v != s {
                let id = prev[v];
                push = push.min(self.arcs[id].cap);
                v = self.arcs[id ^ 1].to;
            }
            let mut v = t;
            while v != s {
                let id = prev[v];
                self.arcs[id].cap -= push;
                self.arcs[id ^ 1].cap += push;
                v = self.arcs[id ^ 1].to;
            }
            left -= push;
            rounds += 1;
        }
        Some(rounds)
    }
}

/// Integer masses summing to exactly `scale`; the rounding residual goes to the largest atom.
pub(crate) fn scale_masses(masses: &[f64], scale: i64) -> Vec<i64> {
    let mut out: Vec<i64> = masses.iter().map(|&m| (m * scale as f64).round() as i64).collect();
    let residual = scale - out.iter().sum::<i64>();
    if let Some(k) = (0..masses.len()).max_by(|&a, &b| masses[a].total_cmp(&masses[b]).then(b.cmp(&a))) {
        out[k] += residual;
    }
    out
}
