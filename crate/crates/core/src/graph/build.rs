use std::collections::{BTreeMap, VecDeque};

use super::{minimize, Alphabet, Edge, GraphError, WhrtGraph};
use crate::constraints::WhrtConstraint;

/// Largest window length the window-state construction accepts.
pub const MAX_WINDOW_LENGTH: usize = 20;

/// State space of the window construction: the last `s - 1` attempts,
/// newest attempt in the lowest bit.
struct WindowStates {
    constraint: WhrtConstraint,
    history_len: usize,
    alive: Vec<bool>,
}

impl WindowStates {
    fn new(c: &WhrtConstraint) -> Result<Self, GraphError> {
        if c.s() > MAX_WINDOW_LENGTH {
            return Err(GraphError::WindowTooLarge(c.s()));
        }
        let history_len = c.s() - 1;
        let mut states = Self {
            constraint: *c,
            history_len,
            alive: vec![true; 1 << history_len],
        };
        states.trim();
        if !states.alive[states.all_success()] {
            return Err(GraphError::InfeasibleConstraint);
        }
        states.keep_reachable();
        Ok(states)
    }

    fn all_success(&self) -> usize {
        (1 << self.history_len) - 1
    }

    fn len(&self) -> usize {
        self.alive.len()
    }

    /// Successor of `state` on `bit` if the completed window is admissible.
    fn raw_next(&self, state: usize, bit: bool) -> Option<usize> {
        let s = self.constraint.s();
        let full = (state << 1) | bit as usize;
        let window: Vec<bool> = (0..s).rev().map(|i| (full >> i) & 1 == 1).collect();
        if self.constraint.window_ok(&window) {
            Some(full & ((1 << self.history_len) - 1))
        } else {
            None
        }
    }

    fn next(&self, state: usize, bit: bool) -> Option<usize> {
        self.raw_next(state, bit).filter(|&t| self.alive[t])
    }

    /// Drops states that are not on a bi-infinite path.
    fn trim(&mut self) {
        loop {
            let mut has_in = vec![false; self.len()];
            let mut has_out = vec![false; self.len()];
            for state in (0..self.len()).filter(|&q| self.alive[q]) {
                for bit in [false, true] {
                    if let Some(t) = self.next(state, bit) {
                        has_out[state] = true;
                        has_in[t] = true;
                    }
                }
            }
            let mut changed = false;
            for q in 0..self.len() {
                if self.alive[q] && !(has_in[q] && has_out[q]) {
                    self.alive[q] = false;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
    }

    fn keep_reachable(&mut self) {
        let mut reached = vec![false; self.len()];
        let start = self.all_success();
        reached[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(q) = queue.pop_front() {
            for bit in [false, true] {
                if let Some(t) = self.next(q, bit) {
                    if !reached[t] {
                        reached[t] = true;
                        queue.push_back(t);
                    }
                }
            }
        }
        for (alive, reached) in self.alive.iter_mut().zip(reached) {
            *alive &= reached;
        }
    }

    /// Converts a subset of states plus labeled edges into a graph whose
    /// initial node is the all-success state.
    fn to_graph(
        &self,
        nodes: &[usize],
        edges: &[(usize, usize, usize)],
        alphabet: Alphabet,
    ) -> Result<WhrtGraph, GraphError> {
        let index: BTreeMap<usize, usize> =
            nodes.iter().enumerate().map(|(i, &q)| (q, i)).collect();
        let edges = edges
            .iter()
            .map(|&(from, to, label)| Edge::new(index[&from], index[&to], label))
            .collect();
        let g = WhrtGraph::new(nodes.len(), edges, alphabet, vec![index[&self.all_success()]])?;
        Ok(canonicalize(&g))
    }
}

/// Trimmed window-state graph: one node per feasible history of `s - 1`
/// attempts that lies on a bi-infinite admissible path. Not minimized.
pub fn build_window_graph(c: &WhrtConstraint) -> Result<WhrtGraph, GraphError> {
    let states = WindowStates::new(c)?;
    let nodes: Vec<usize> = (0..states.len()).filter(|&q| states.alive[q]).collect();
    let mut edges = Vec::new();
    for &q in &nodes {
        for bit in [false, true] {
            if let Some(t) = states.next(q, bit) {
                edges.push((q, t, bit as usize));
            }
        }
    }
    states.to_graph(&nodes, &edges, Alphabet::Binary)
}

/// Minimal deterministic graph over `{0, 1}` for `c`.
pub fn build_automaton(c: &WhrtConstraint) -> Result<WhrtGraph, GraphError> {
    minimize(&build_window_graph(c)?)
}

/// Minimal deterministic lifted graph: labels count the losses between two
/// consecutive successes.
pub fn build_lifted_graph(c: &WhrtConstraint) -> Result<WhrtGraph, GraphError> {
    let states = WindowStates::new(c)?;
    let s = c.s();
    let nodes: Vec<usize> = (0..states.len())
        .filter(|&q| states.alive[q] && (states.history_len == 0 || q & 1 == 1))
        .collect();
    let mut edges = Vec::new();
    for &q in &nodes {
        let mut current = q;
        let mut losses = 0;
        loop {
            if let Some(t) = states.next(current, true) {
                edges.push((q, t, losses));
            }
            match states.next(current, false) {
                Some(t) => {
                    losses += 1;
                    if losses >= s {
                        return Err(GraphError::UnboundedLossRun);
                    }
                    current = t;
                }
                None => break,
            }
        }
    }
    let raw = states.to_graph(&nodes, &edges, Alphabet::Lifted(s))?;
    minimize(&raw)
}

/// Non-lifted graph for `c` in the structure obtained from the lifted graph:
/// every lifted edge with `l` losses becomes `l` loss edges followed by one
/// success edge. Constraints without a finite lifted graph fall back to the
/// minimal automaton.
pub fn build_graph(c: &WhrtConstraint) -> Result<WhrtGraph, GraphError> {
    match build_lifted_graph(c) {
        Ok(lifted) => unlift(&lifted),
        Err(GraphError::UnboundedLossRun) => build_automaton(c),
        Err(e) => Err(e),
    }
}

/// Expands a lifted graph into a binary one. Lifted nodes keep their
/// indices; chain nodes are appended in edge order.
pub fn unlift(g: &WhrtGraph) -> Result<WhrtGraph, GraphError> {
    if !g.alphabet().is_lifted() {
        return Err(GraphError::NotLifted);
    }
    let mut node_count = g.node_count();
    let mut edges = Vec::new();
    for e in g.edges() {
        let mut from = e.from;
        for _ in 0..e.label {
            let fresh = node_count;
            node_count += 1;
            edges.push(Edge::new(from, fresh, 0));
            from = fresh;
        }
        edges.push(Edge::new(from, e.to, 1));
    }
    WhrtGraph::new(node_count, edges, Alphabet::Binary, g.initial_nodes().to_vec())
}

/// Renumbers nodes breadth-first from the initial nodes, visiting edges in
/// label order, so that identifiers are stable across runs.
pub(crate) fn canonicalize(g: &WhrtGraph) -> WhrtGraph {
    let n = g.node_count();
    let mut order = Vec::with_capacity(n);
    let mut position = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    let visit = |node: usize, order: &mut Vec<usize>, position: &mut Vec<usize>, queue: &mut VecDeque<usize>| {
        if position[node] == usize::MAX {
            position[node] = order.len();
            order.push(node);
            queue.push_back(node);
        }
    };
    let mut roots: Vec<usize> = g.initial_nodes().to_vec();
    roots.extend(0..n);
    for root in roots {
        visit(root, &mut order, &mut position, &mut queue);
        while let Some(node) = queue.pop_front() {
            for e in g.out_edges(node) {
                visit(e.to, &mut order, &mut position, &mut queue);
            }
        }
    }
    let edges = g
        .edges()
        .iter()
        .map(|e| Edge::new(position[e.from], position[e.to], e.label))
        .collect();
    let mut initial: Vec<usize> = g.initial_nodes().iter().map(|&i| position[i]).collect();
    initial.sort_unstable();
    initial.dedup();
    WhrtGraph::new(n, edges, g.alphabet(), initial).expect("relabeling preserves validity")
}
