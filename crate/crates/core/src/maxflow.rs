//! Dinic's augmenting-path max-flow on `f64` capacities.

use std::collections::VecDeque;

#[derive(Debug, Clone)]
struct Edge {
    to: usize,
    cap: f64,
}

/// Directed graph stored as paired residual edges: edge `e` and `e ^ 1` are
/// each other's reverse.
#[derive(Debug, Clone)]
pub struct FlowGraph {
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
    max_cap: f64,
}

impl FlowGraph {
    pub fn new(nodes: usize) -> Self {
        Self {
            edges: Vec::new(),
            adj: vec![Vec::new(); nodes],
            max_cap: 0.0,
        }
    }

    pub fn nodes(&self) -> usize {
        self.adj.len()
    }

    /// Adds `u → v` with capacity `cap` and `v → u` with `reverse_cap`.
    pub fn add_edge(&mut self, u: usize, v: usize, cap: f64, reverse_cap: f64) {
        debug_assert!(cap >= 0.0 && reverse_cap >= 0.0);
        self.max_cap = self.max_cap.max(cap).max(reverse_cap);
        self.adj[u].push(self.edges.len());
        self.edges.push(Edge { to: v, cap });
        self.adj[v].push(self.edges.len());
        self.edges.push(Edge { to: u, cap: reverse_cap });
    }

    /// Residual capacities at or below this are treated as saturated.
    fn tolerance(&self) -> f64 {
        1e-12 * self.max_cap.max(1.0)
    }

    fn levels(&self, s: usize, tol: f64) -> Vec<Option<usize>> {
        let mut level = vec![None; self.nodes()];
        level[s] = Some(0);
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &e in &self.adj[u] {
                let Edge { to, cap } = self.edges[e];
                if cap > tol && level[to].is_none() {
                    level[to] = Some(level[u].unwrap() + 1);
                    queue.push_back(to);
                }
            }
        }
        level
    }

    fn augment(&mut self, u: usize, t: usize, limit: f64, level: &[Option<usize>], next: &mut [usize], tol: f64) -> f64 {
        if u == t {
            return limit;
        }
        while next[u] < self.adj[u].len() {
            let e = self.adj[u][next[u]];
            let Edge { to, cap } = self.edges[e];
            if cap > tol && level[to] == level[u].map(|l| l + 1) {
                let pushed = self.augment(to, t, limit.min(cap), level, next, tol);
                if pushed > 0.0 {
                    self.edges[e].cap -= pushed;
                    self.edges[e ^ 1].cap += pushed;
                    return pushed;
                }
            }
            next[u] += 1;
        }
        0.0
    }

    /// Pushes a maximum flow from `s` to `t` and returns its value. The graph
    /// is left in its residual state.
    pub fn max_flow(&mut self, s: usize, t: usize) -> f64 {
        let tol = self.tolerance();
        let mut total = 0.0;
        loop {
            let level = self.levels(s, tol);
            if level[t].is_none() {
                return total;
            }
            let mut next = vec![0; self.nodes()];
            loop {
                let pushed = self.augment(s, t, f64::INFINITY, &level, &mut next, tol);
                if pushed <= 0.0 {
                    break;
                }
                total += pushed;
            }
        }
    }

    /// Nodes reachable from `s` through unsaturated residual edges: the
    /// source side of the minimum cut after [`FlowGraph::max_flow`].
    pub fn source_side(&self, s: usize) -> Vec<bool> {
        let level = self.levels(s, self.tolerance());
        level.iter().map(Option::is_some).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_network() {
        // CLRS figure 26.1: max flow 23.
        let mut g = FlowGraph::new(6);
        for (u, v, c) in [
            (0, 1, 16.0),
            (0, 2, 13.0),
            (1, 3, 12.0),
            (2, 1, 4.0),
            (2, 4, 14.0),
            (3, 2, 9.0),
            (3, 5, 20.0),
            (4, 3, 7.0),
            (4, 5, 4.0),
        ] {
            g.add_edge(u, v, c, 0.0);
        }
        assert_eq!(g.max_flow(0, 5), 23.0);
        let side = g.source_side(0);
        assert_eq!(side, vec![true, true, true, false, true, false]);
    }

    #[test]
    fn disconnected_sink() {
        let mut g = FlowGraph::new(3);
        g.add_edge(0, 1, 5.0, 0.0);
        assert_eq!(g.max_flow(0, 2), 0.0);
    }
}
