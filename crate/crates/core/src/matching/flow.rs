//! Successive-shortest-path min-cost flow with integer capacities and costs.
//!
//! Negative arc costs are allowed as long as the initial network has no
//! negative cycle; the first potentials come from Bellman-Ford.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

pub type Cost = i64;
pub type Cap = i64;

const INF: Cost = Cost::MAX / 4;

#[derive(Debug, Clone)]
struct Arc {
    to: usize,
    rev: usize,
    cap: Cap,
    cost: Cost,
}

#[derive(Debug, Clone)]
pub struct MinCostFlow {
    graph: Vec<Vec<Arc>>,
    arcs: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArcId(usize);

impl MinCostFlow {
    pub fn new(n: usize) -> Self {
        MinCostFlow {
            graph: vec![Vec::new(); n],
            arcs: Vec::new(),
        }
    }

    pub fn add_arc(&mut self, from: usize, to: usize, cap: Cap, cost: Cost) -> ArcId {
        let fwd = self.graph[from].len();
        let back = self.graph[to].len() + usize::from(from == to);
        self.graph[from].push(Arc { to, rev: back, cap, cost });
        self.graph[to].push(Arc {
            to: from,
            rev: fwd,
            cap: 0,
            cost: -cost,
        });
        self.arcs.push((from, fwd));
        ArcId(self.arcs.len() - 1)
    }

    /// Flow currently carried by an arc.
    pub fn flow(&self, id: ArcId) -> Cap {
        let (u, i) = self.arcs[id.0];
        let a = &self.graph[u][i];
        self.graph[a.to][a.rev].cap
    }

    /// Pushes flow from `s` to `t` along shortest paths for as long as each
    /// additional unit strictly lowers the total cost. Returns `(flow, cost)`.
    pub fn min_cost_any_flow(&mut self, s: usize, t: usize) -> (Cap, Cost) {
        let n = self.graph.len();
        let mut potential = self.bellman_ford(s);
        let mut total_flow = 0;
        let mut total_cost = 0;
        let mut dist = vec![INF; n];
        let mut prev: Vec<Option<(usize, usize)>> = vec![None; n];

        loop {
            dist.fill(INF);
            prev.fill(None);
            dist[s] = 0;
            let mut heap = BinaryHeap::new();
            heap.push(Reverse((0, s)));
            while let Some(Reverse((d, u))) = heap.pop() {
                if d > dist[u] {
                    continue;
                }
                for (i, a) in self.graph[u].iter().enumerate() {
                    if a.cap <= 0 || potential[a.to] >= INF {
                        continue;
                    }
                    let nd = d + a.cost + potential[u] - potential[a.to];
                    if nd < dist[a.to] {
                        dist[a.to] = nd;
                        prev[a.to] = Some((u, i));
                        heap.push(Reverse((nd, a.to)));
                    }
                }
            }
            if dist[t] >= INF {
                break;
            }
            let path_cost = dist[t] - potential[s] + potential[t];
            if path_cost >= 0 {
                break;
            }
            for v in 0..n {
                if dist[v] < INF {
                    potential[v] += dist[v];
                }
            }
            let mut push = Cap::MAX;
            let mut v = t;
            while let Some((u, i)) = prev[v] {
                push = push.min(self.graph[u][i].cap);
                v = u;
            }
            let mut v = t;
            while let Some((u, i)) = prev[v] {
                let rev = self.graph[u][i].rev;
                self.graph[u][i].cap -= push;
                self.graph[v][rev].cap += push;
                v = u;
            }
            total_flow += push;
            total_cost += push * path_cost;
        }
        (total_flow, total_cost)
    }

    fn bellman_ford(&self, s: usize) -> Vec<Cost> {
        let n = self.graph.len();
        let mut dist = vec![INF; n];
        let mut queued = vec![false; n];
        let mut queue = VecDeque::from([s]);
        dist[s] = 0;
        queued[s] = true;
        while let Some(u) = queue.pop_front() {
            queued[u] = false;
            for a in &self.graph[u] {
                if a.cap > 0 && dist[u] + a.cost < dist[a.to] {
                    dist[a.to] = dist[u] + a.cost;
                    if !queued[a.to] {
                        queued[a.to] = true;
                        queue.push_back(a.to);
                    }
                }
            }
        }
        dist
    }
}
