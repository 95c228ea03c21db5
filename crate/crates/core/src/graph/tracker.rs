use super::{GraphError, WhrtGraph};

/// Online position in a deterministic graph. The indicator vector has a
/// single one at the node the current edge starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeTracker<'g> {
    graph: &'g WhrtGraph,
    current: usize,
}

impl<'g> NodeTracker<'g> {
    pub fn new(graph: &'g WhrtGraph, start: usize) -> Result<Self, GraphError> {
        if !graph.is_deterministic() {
            return Err(GraphError::NotDeterministic);
        }
        if start >= graph.node_count() {
            return Err(GraphError::NodeOutOfRange(start));
        }
        Ok(Self {
            graph,
            current: start,
        })
    }

    /// Tracker at the first initial node.
    pub fn at_initial(graph: &'g WhrtGraph) -> Result<Self, GraphError> {
        let start = *graph
            .initial_nodes()
            .first()
            .ok_or(GraphError::NodeOutOfRange(0))?;
        Self::new(graph, start)
    }

    pub fn current(&self) -> usize {
        self.current
    }

    pub fn graph(&self) -> &'g WhrtGraph {
        self.graph
    }

    pub fn indicator(&self) -> Vec<u8> {
        (0..self.graph.node_count())
            .map(|i| u8::from(i == self.current))
            .collect()
    }

    /// Follows the unique edge carrying `label`. A missing edge means the
    /// observed loss process violated the constraint.
    pub fn step(&self, label: usize) -> Result<Self, GraphError> {
        let next = self
            .graph
            .successor(self.current, label)
            .ok_or(GraphError::InadmissibleLabel {
                node: self.current,
                label,
            })?;
        Ok(Self {
            graph: self.graph,
            current: next,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::WhrtConstraint;
    use crate::graph::{build_automaton, build_graph, build_lifted_graph};

    #[test]
    fn success_self_loop_at_free_node() {
        let dfa = build_automaton(&WhrtConstraint::any_hit(2, 4).unwrap()).unwrap();
        let t = NodeTracker::at_initial(&dfa).unwrap();
        assert_eq!(t.step(1).unwrap().current(), t.current());
        assert_eq!(t.indicator().iter().map(|&x| x as usize).sum::<usize>(), 1);
    }

    #[test]
    fn loss_successor_is_unique_and_violations_are_flagged() {
        let dfa = build_automaton(&WhrtConstraint::any_hit(2, 4).unwrap()).unwrap();
        let t = NodeTracker::at_initial(&dfa).unwrap();
        let after_loss = t.step(0).unwrap();
        assert_ne!(after_loss.current(), t.current());
        let after_two = after_loss.step(0).unwrap();
        assert!(matches!(
            after_two.step(0),
            Err(GraphError::InadmissibleLabel { label: 0, .. })
        ));
    }

    #[test]
    fn lifted_tracking() {
        let lifted = build_lifted_graph(&WhrtConstraint::any_hit(2, 4).unwrap()).unwrap();
        let mut t = NodeTracker::at_initial(&lifted).unwrap();
        for alpha in [1, 0, 2, 0, 1, 1, 0] {
            t = t.step(alpha).unwrap();
        }
        assert_eq!(t.current(), 0);
        assert!(t.step(2).unwrap().step(1).is_err());
    }

    #[test]
    fn requires_determinism() {
        let g = build_graph(&WhrtConstraint::any_hit(2, 4).unwrap()).unwrap();
        assert_eq!(NodeTracker::at_initial(&g), Err(GraphError::NotDeterministic));
    }
}
