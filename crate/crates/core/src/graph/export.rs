use std::fmt::{self, Write as _};
use std::str::FromStr;

use super::{Alphabet, Edge, GraphError, WhrtGraph};

const DUMP_HEADER: &str = "whrt-graph 1";

/// DOT digraph text. Nodes are named `v1..vN`; initial nodes are drawn as
/// double circles.
pub fn export_dot(g: &WhrtGraph) -> String {
    let mut out = String::from("digraph whrt {\n");
    for node in 0..g.node_count() {
        let shape = if g.initial_nodes().contains(&node) {
            "doublecircle"
        } else {
            "circle"
        };
        let _ = writeln!(out, "  v{} [shape={shape}];", node + 1);
    }
    for e in g.edges() {
        let _ = writeln!(out, "  v{} -> v{} [label=\"{}\"];", e.from + 1, e.to + 1, e.label);
    }
    out.push_str("}\n");
    out
}

/// Compact line-based dump:
///
/// ```text
/// whrt-graph 1
/// alphabet binary | alphabet lifted <size>
/// nodes <count>
/// initial <i> <j> ...
/// edge <from> <to> <label>
/// ```
impl fmt::Display for WhrtGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{DUMP_HEADER}")?;
        match self.alphabet() {
            Alphabet::Binary => writeln!(f, "alphabet binary")?,
            Alphabet::Lifted(size) => writeln!(f, "alphabet lifted {size}")?,
        }
        writeln!(f, "nodes {}", self.node_count())?;
        write!(f, "initial")?;
        for i in self.initial_nodes() {
            write!(f, " {i}")?;
        }
        writeln!(f)?;
        for e in self.edges() {
            writeln!(f, "edge {} {} {}", e.from, e.to, e.label)?;
        }
        Ok(())
    }
}

impl FromStr for WhrtGraph {
    type Err = GraphError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut alphabet = None;
        let mut nodes = None;
        let mut initial = Vec::new();
        let mut edges = Vec::new();
        let mut saw_header = false;
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let err = |message: &str| GraphError::Dump {
                line: line_no,
                message: message.to_string(),
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if !saw_header {
                if line != DUMP_HEADER {
                    return Err(err("missing header"));
                }
                saw_header = true;
                continue;
            }
            let mut parts = line.split_whitespace();
            let keyword = parts.next().unwrap_or_default();
            let numbers: Vec<&str> = parts.collect();
            let parse = |s: &str| s.parse::<usize>().map_err(|_| err("expected an integer"));
            match keyword {
                "alphabet" => {
                    alphabet = Some(match numbers.as_slice() {
                        ["binary"] => Alphabet::Binary,
                        ["lifted", size] => Alphabet::Lifted(parse(size)?),
                        _ => return Err(err("unknown alphabet")),
                    })
                }
                "nodes" => match numbers.as_slice() {
                    [count] => nodes = Some(parse(count)?),
                    _ => return Err(err("expected node count")),
                },
                "initial" => {
                    initial = numbers.iter().map(|s| parse(s)).collect::<Result<_, _>>()?;
                }
                "edge" => match numbers.as_slice() {
                    [from, to, label] => edges.push(Edge::new(parse(from)?, parse(to)?, parse(label)?)),
                    _ => return Err(err("expected `edge <from> <to> <label>`")),
                },
                _ => return Err(err("unknown keyword")),
            }
        }
        let missing = |what: &str| GraphError::Dump {
            line: 0,
            message: format!("missing {what}"),
        };
        WhrtGraph::new(
            nodes.ok_or_else(|| missing("node count"))?,
            edges,
            alphabet.ok_or_else(|| missing("alphabet"))?,
            initial,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::WhrtConstraint;
    use crate::graph::{build_graph, build_lifted_graph};

    #[test]
    fn single_loop_dot() {
        let g = build_graph(&WhrtConstraint::any_hit(1, 1).unwrap()).unwrap();
        let dot = export_dot(&g);
        assert_eq!(dot.matches("[shape=").count(), 1);
        assert_eq!(dot.matches(" -> ").count(), 1);
        assert_eq!(dot, export_dot(&g));
    }

    #[test]
    fn lifted_figure_dot_counts() {
        let g = build_lifted_graph(&WhrtConstraint::any_hit(2, 4).unwrap()).unwrap();
        let dot = export_dot(&g);
        assert_eq!(dot.matches("[shape=").count(), 3);
        assert_eq!(dot.matches(" -> ").count(), 6);
    }

    #[test]
    fn dump_round_trip() {
        for c in ["anyhit(2,4)", "rowmiss(2,5)", "anymiss(3,3)"] {
            let c: WhrtConstraint = c.parse().unwrap();
            let g = build_graph(&c).unwrap();
            assert_eq!(g.to_string().parse::<WhrtGraph>().unwrap(), g);
            if let Ok(lifted) = build_lifted_graph(&c) {
                assert_eq!(lifted.to_string().parse::<WhrtGraph>().unwrap(), lifted);
            }
        }
    }

    #[test]
    fn dump_errors_carry_line_numbers() {
        let text = "whrt-graph 1\nalphabet binary\nnodes 1\nedge 0 0 x\n";
        assert!(matches!(
            text.parse::<WhrtGraph>(),
            Err(GraphError::Dump { line: 4, .. })
        ));
        assert!("nope".parse::<WhrtGraph>().is_err());
    }
}
