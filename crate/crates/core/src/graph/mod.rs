//! Labeled directed graphs generating admissible switching sequences.
//!
//! Non-lifted graphs carry labels in `{0, 1}` (loss / success); lifted graphs
//! carry the number of losses between two consecutive successes.

mod build;
mod export;
mod minimize;
mod tracker;

use std::collections::{BTreeSet, HashSet, VecDeque};

use thiserror::Error;

use crate::constraints::LossSequence;

pub use build::{
    build_automaton, build_graph, build_lifted_graph, build_window_graph, unlift,
    MAX_WINDOW_LENGTH,
};
pub use export::export_dot;
pub use minimize::minimize;
pub use tracker::NodeTracker;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("constraint admits no infinite sequence")]
    InfeasibleConstraint,
    #[error("constraint allows unbounded runs of losses; no finite lifted graph exists")]
    UnboundedLossRun,
    #[error("window length {0} exceeds the supported maximum of {MAX_WINDOW_LENGTH}")]
    WindowTooLarge(usize),
    #[error("graph is not deterministic")]
    NotDeterministic,
    #[error("graph does not use a lifted alphabet")]
    NotLifted,
    #[error("node {node} has no outgoing edge labeled {label}")]
    InadmissibleLabel { node: usize, label: usize },
    #[error("edge ({from}, {to}, {label}) is invalid: {reason}")]
    InvalidEdge {
        from: usize,
        to: usize,
        label: usize,
        reason: &'static str,
    },
    #[error("node index {0} out of range")]
    NodeOutOfRange(usize),
    #[error("malformed graph dump at line {line}: {message}")]
    Dump { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Alphabet {
    /// Labels `{0, 1}`.
    Binary,
    /// Labels `{0, ..., size - 1}`.
    Lifted(usize),
}

impl Alphabet {
    pub fn size(&self) -> usize {
        match *self {
            Alphabet::Binary => 2,
            Alphabet::Lifted(size) => size,
        }
    }

    pub fn contains(&self, label: usize) -> bool {
        label < self.size()
    }

    pub fn is_lifted(&self) -> bool {
        matches!(self, Alphabet::Lifted(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub label: usize,
}

impl Edge {
    pub fn new(from: usize, to: usize, label: usize) -> Self {
        Self { from, to, label }
    }
}

/// Outcome of the structural checks a constraint graph must pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructureReport {
    pub labels_in_alphabet: bool,
    pub nodes_without_incoming: Vec<usize>,
    pub nodes_without_outgoing: Vec<usize>,
    pub deterministic: bool,
}

impl StructureReport {
    /// Every node has an incoming and an outgoing edge and all labels are valid.
    pub fn is_whrt_graph(&self) -> bool {
        self.labels_in_alphabet
            && self.nodes_without_incoming.is_empty()
            && self.nodes_without_outgoing.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WhrtGraph {
    node_count: usize,
    edges: Vec<Edge>,
    alphabet: Alphabet,
    initial: Vec<usize>,
    // edge indices per source node, sorted by (label, target)
    out: Vec<Vec<usize>>,
}

impl WhrtGraph {
    /// Builds a graph after validating node indices and labels. Edges are
    /// stored sorted and deduplicated.
    pub fn new(
        node_count: usize,
        mut edges: Vec<Edge>,
        alphabet: Alphabet,
        initial: Vec<usize>,
    ) -> Result<Self, GraphError> {
        for e in &edges {
            if e.from >= node_count || e.to >= node_count {
                return Err(GraphError::InvalidEdge {
                    from: e.from,
                    to: e.to,
                    label: e.label,
                    reason: "node index out of range",
                });
            }
            if !alphabet.contains(e.label) {
                return Err(GraphError::InvalidEdge {
                    from: e.from,
                    to: e.to,
                    label: e.label,
                    reason: "label outside alphabet",
                });
            }
        }
        if let Some(&bad) = initial.iter().find(|&&i| i >= node_count) {
            return Err(GraphError::NodeOutOfRange(bad));
        }
        edges.sort_by_key(|e| (e.from, e.label, e.to));
        edges.dedup();
        let mut out = vec![Vec::new(); node_count];
        for (idx, e) in edges.iter().enumerate() {
            out[e.from].push(idx);
        }
        Ok(Self {
            node_count,
            edges,
            alphabet,
            initial,
            out,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    pub fn initial_nodes(&self) -> &[usize] {
        &self.initial
    }

    pub fn out_edges(&self, node: usize) -> impl Iterator<Item = &Edge> + '_ {
        self.out[node].iter().map(move |&i| &self.edges[i])
    }

    /// Distinct labels that occur on edges, ascending.
    pub fn labels(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.edges.iter().map(|e| e.label).collect();
        set.into_iter().collect()
    }

    pub fn successors(&self, node: usize, label: usize) -> impl Iterator<Item = usize> + '_ {
        self.out_edges(node)
            .filter(move |e| e.label == label)
            .map(|e| e.to)
    }

    /// Unique successor on a deterministic graph.
    pub fn successor(&self, node: usize, label: usize) -> Option<usize> {
        self.successors(node, label).next()
    }

    pub fn is_deterministic(&self) -> bool {
        self.edges
            .windows(2)
            .all(|w| !(w[0].from == w[1].from && w[0].label == w[1].label))
    }

    pub fn structure_report(&self) -> StructureReport {
        let mut has_in = vec![false; self.node_count];
        let mut has_out = vec![false; self.node_count];
        for e in &self.edges {
            has_out[e.from] = true;
            has_in[e.to] = true;
        }
        StructureReport {
            labels_in_alphabet: self.edges.iter().all(|e| self.alphabet.contains(e.label)),
            nodes_without_incoming: (0..self.node_count).filter(|&i| !has_in[i]).collect(),
            nodes_without_outgoing: (0..self.node_count).filter(|&i| !has_out[i]).collect(),
            deterministic: self.is_deterministic(),
        }
    }

    fn step_set(&self, nodes: &BTreeSet<usize>, label: usize) -> BTreeSet<usize> {
        nodes
            .iter()
            .flat_map(|&n| self.successors(n, label))
            .collect()
    }

    /// True iff a path starting at an initial node spells `word`.
    pub fn generates(&self, word: &[usize]) -> bool {
        let mut current: BTreeSet<usize> = self.initial.iter().copied().collect();
        for &label in word {
            if current.is_empty() {
                return false;
            }
            current = self.step_set(&current, label);
        }
        !current.is_empty()
    }

    /// Node sequence (length `word.len() + 1`) of a path from an initial
    /// node spelling `word`, or `None` if the graph does not generate it.
    /// Among valid paths the lowest node index is chosen at every step.
    pub fn trace_path(&self, word: &[usize]) -> Option<Vec<usize>> {
        // alive[k]: nodes from which word[k..] can be spelled
        let mut alive = vec![vec![false; self.node_count]; word.len() + 1];
        alive[word.len()] = vec![true; self.node_count];
        for k in (0..word.len()).rev() {
            for node in 0..self.node_count {
                alive[k][node] = self
                    .successors(node, word[k])
                    .any(|next| alive[k + 1][next]);
            }
        }
        let start = self.initial.iter().copied().filter(|&i| alive[0][i]).min()?;
        let mut path = vec![start];
        for (k, &label) in word.iter().enumerate() {
            let here = *path.last().expect("path starts non-empty");
            let next = self
                .successors(here, label)
                .filter(|&n| alive[k + 1][n])
                .min()?;
            path.push(next);
        }
        Some(path)
    }
}

/// All label words of length `len` spelled by paths from initial nodes.
pub fn generated_label_words(g: &WhrtGraph, len: usize) -> BTreeSet<Vec<usize>> {
    fn walk(
        g: &WhrtGraph,
        len: usize,
        prefix: &mut Vec<usize>,
        nodes: &BTreeSet<usize>,
        out: &mut BTreeSet<Vec<usize>>,
    ) {
        if prefix.len() == len {
            out.insert(prefix.clone());
            return;
        }
        for label in 0..g.alphabet().size() {
            let next = g.step_set(nodes, label);
            if !next.is_empty() {
                prefix.push(label);
                walk(g, len, prefix, &next, out);
                prefix.pop();
            }
        }
    }
    let mut out = BTreeSet::new();
    let start: BTreeSet<usize> = g.initial_nodes().iter().copied().collect();
    if !start.is_empty() {
        walk(g, len, &mut Vec::new(), &start, &mut out);
    }
    out
}

/// Binary words of length `len` generated by a non-lifted graph.
pub fn generated_words(g: &WhrtGraph, len: usize) -> BTreeSet<LossSequence> {
    assert!(!g.alphabet().is_lifted(), "binary alphabet required");
    generated_label_words(g, len)
        .into_iter()
        .map(|w| LossSequence::new(w.into_iter().map(|l| l == 1).collect()))
        .collect()
}

/// Exact inclusion test: every word generated by `sub` is generated by `sup`.
/// Uses a product of `sub` with the subset construction of `sup`.
pub fn language_included(sub: &WhrtGraph, sup: &WhrtGraph) -> bool {
    let sup_start: BTreeSet<usize> = sup.initial_nodes().iter().copied().collect();
    let mut seen: HashSet<(usize, BTreeSet<usize>)> = HashSet::new();
    let mut queue = VecDeque::new();
    for &s in sub.initial_nodes() {
        if seen.insert((s, sup_start.clone())) {
            queue.push_back((s, sup_start.clone()));
        }
    }
    while let Some((node, set)) = queue.pop_front() {
        for e in sub.out_edges(node) {
            let next = sup.step_set(&set, e.label);
            if next.is_empty() {
                return false;
            }
            let key = (e.to, next);
            if !seen.contains(&key) {
                seen.insert(key.clone());
                queue.push_back(key);
            }
        }
    }
    true
}
