//! Integer min-cost flow via successive shortest paths with node
//! potentials.
//!
//! All capacities and costs are integers, so the solver never compares
//! accumulated floating-point path costs; the caller integerizes masses and
//! costs onto fixed grids. Shortest paths use a dense O(V^2) Dijkstra,
//! which beats a heap on the complete bipartite graphs built by the
//! transport oracle.

use alloc::vec;
use alloc::vec::Vec;

const INF: i64 = i64::MAX / 4;

pub(crate) struct MinCostFlow {
    adj: Vec<Vec<u32>>,
    to: Vec<u32>,
    residual: Vec<i64>,
    cost: Vec<i64>,
}

impl MinCostFlow {
    pub(crate) fn new(num_nodes: usize) -> Self {
        MinCostFlow {
            adj: vec![Vec::new(); num_nodes],
            to: Vec::new(),
            residual: Vec::new(),
            cost: Vec::new(),
        }
    }

    /// Adds a directed edge and its residual twin; returns the forward
    /// edge id.
    pub(crate) fn add_edge(&mut self, from: usize, to: usize, capacity: i64, cost: i64) -> usize {
        debug_assert!(cost >= 0, "solver assumes non-negative edge costs");
        let id = self.to.len();
        self.adj[from].push(id as u32);
        self.to.push(to as u32);
        self.residual.push(capacity);
        self.cost.push(cost);
        self.adj[to].push((id + 1) as u32);
        self.to.push(from as u32);
        self.residual.push(0);
        self.cost.push(-cost);
        id
    }

    /// Units pushed through a forward edge (the residual of its twin).
    pub(crate) fn flow_on(&self, edge: usize) -> i64 {
        self.residual[edge + 1]
    }

    /// Ships as much flow as possible from `source` to `sink` at minimum
    /// cost; returns the shipped amount.
    pub(crate) fn solve(&mut self, source: usize, sink: usize) -> i64 {
        let n = self.adj.len();
        let mut potential = vec![0i64; n];
        let mut dist = vec![INF; n];
        let mut done = vec![false; n];
        let mut parent_edge = vec![u32::MAX; n];
        let mut total_flow = 0i64;

        loop {
            dist.fill(INF);
            done.fill(false);
            parent_edge.fill(u32::MAX);
            dist[source] = 0;

            for _ in 0..n {
                let mut best = usize::MAX;
                let mut best_dist = INF;
                for v in 0..n {
                    if !done[v] && dist[v] < best_dist {
                        best = v;
                        best_dist = dist[v];
                    }
                }
                if best == usize::MAX {
                    break;
                }
                done[best] = true;
                if best == sink {
                    continue; // keep settling to leave potentials consistent
                }
                for &eid in &self.adj[best] {
                    let e = eid as usize;
                    if self.residual[e] == 0 {
                        continue;
                    }
                    let v = self.to[e] as usize;
                    if done[v] {
                        continue;
                    }
                    let reduced = self.cost[e] + potential[best] - potential[v];
                    let cand = dist[best] + reduced;
                    if cand < dist[v] {
                        dist[v] = cand;
                        parent_edge[v] = eid;
                    }
                }
            }

            if dist[sink] >= INF {
                break;
            }
            for v in 0..n {
                if dist[v] < INF {
                    potential[v] += dist[v];
                }
            }

            let mut bottleneck = INF;
            let mut v = sink;
            while v != source {
                let e = parent_edge[v] as usize;
                bottleneck = bottleneck.min(self.residual[e]);
                v = self.to[e ^ 1] as usize;
            }
            let mut v = sink;
            while v != source {
                let e = parent_edge[v] as usize;
                self.residual[e] -= bottleneck;
                self.residual[e ^ 1] += bottleneck;
                v = self.to[e ^ 1] as usize;
            }
            total_flow += bottleneck;
        }

        total_flow
    }
}
