use std::collections::BTreeMap;

use super::build::canonicalize;
use super::{Edge, GraphError, WhrtGraph};

/// Merges nodes with identical future label languages by partition
/// refinement. Every node is treated as live; a missing edge leads to an
/// implicit rejecting sink.
pub fn minimize(g: &WhrtGraph) -> Result<WhrtGraph, GraphError> {
    if !g.is_deterministic() {
        return Err(GraphError::NotDeterministic);
    }
    let n = g.node_count();
    let labels = g.alphabet().size();
    let mut block = vec![0usize; n];
    let mut block_count = usize::from(n > 0);
    loop {
        let mut ids: BTreeMap<(usize, Vec<Option<usize>>), usize> = BTreeMap::new();
        let mut next_block = vec![0usize; n];
        for node in 0..n {
            let signature: Vec<Option<usize>> = (0..labels)
                .map(|l| g.successor(node, l).map(|t| block[t]))
                .collect();
            let fresh = ids.len();
            next_block[node] = *ids.entry((block[node], signature)).or_insert(fresh);
        }
        let refined = ids.len();
        block = next_block;
        if refined == block_count {
            break;
        }
        block_count = refined;
    }

    let mut edges = Vec::new();
    let mut seen = vec![false; block_count];
    for node in 0..n {
        if std::mem::replace(&mut seen[block[node]], true) {
            continue;
        }
        for e in g.out_edges(node) {
            edges.push(Edge::new(block[node], block[e.to], e.label));
        }
    }
    let initial = g.initial_nodes().iter().map(|&i| block[i]).collect();
    let merged = WhrtGraph::new(block_count, edges, g.alphabet(), initial)?;
    Ok(canonicalize(&merged))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::WhrtConstraint;
    use crate::graph::{build_automaton, build_window_graph, generated_label_words, Alphabet};

    #[test]
    fn minimal_graph_is_a_fixpoint() {
        let dfa = build_automaton(&WhrtConstraint::any_hit(2, 4).unwrap()).unwrap();
        assert_eq!(minimize(&dfa).unwrap(), dfa);
    }

    #[test]
    fn merges_equivalent_nodes() {
        // nodes 1 and 2 both only allow a success back to node 0
        let g = WhrtGraph::new(
            3,
            vec![
                Edge::new(0, 1, 0),
                Edge::new(0, 2, 1),
                Edge::new(1, 0, 1),
                Edge::new(2, 0, 1),
            ],
            Alphabet::Binary,
            vec![0],
        )
        .unwrap();
        let m = minimize(&g).unwrap();
        assert_eq!(m.node_count(), 2);
        for len in 0..=8 {
            assert_eq!(generated_label_words(&g, len), generated_label_words(&m, len));
        }
    }

    #[test]
    fn rejects_nondeterministic_input() {
        let g = WhrtGraph::new(
            2,
            vec![Edge::new(0, 0, 0), Edge::new(0, 1, 0), Edge::new(1, 0, 1)],
            Alphabet::Binary,
            vec![0],
        )
        .unwrap();
        assert_eq!(minimize(&g), Err(GraphError::NotDeterministic));
    }

    #[test]
    fn never_grows() {
        for s in 1..=6 {
            for r in 1..=s {
                let c = WhrtConstraint::any_hit(r, s).unwrap();
                let window = build_window_graph(&c).unwrap();
                let m = minimize(&window).unwrap();
                assert!(m.node_count() <= window.node_count());
                assert!(m.edge_count() <= window.edge_count());
            }
        }
    }

    #[test]
    fn window_graph_of_any_four_in_ten() {
        let window = build_window_graph(&WhrtConstraint::any_hit(4, 10).unwrap()).unwrap();
        let m = minimize(&window).unwrap();
        assert_eq!((m.node_count(), m.edge_count()), (210, 336));
    }
}
