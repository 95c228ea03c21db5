use nalgebra::{DMatrix, DVector};

use super::{AnalysisCertificate, LmiError, ModeTable};
use crate::graph::{Edge, NodeTracker, WhrtGraph};
use crate::systems::ModeMatrices;

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    /// Smallest eigenvalue of each rebuilt edge LMI, in graph edge order.
    pub edge_min_eigs: Vec<(Edge, f64)>,
    /// Smallest eigenvalue of each `S_i`.
    pub s_min_eigs: Vec<f64>,
    pub tol: f64,
    pub failing_edges: Vec<Edge>,
    pub failing_nodes: Vec<usize>,
    pub passed: bool,
}

impl VerificationReport {
    pub fn min_edge_eigenvalue(&self) -> f64 {
        self.edge_min_eigs
            .iter()
            .map(|(_, v)| *v)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Plain numeric edge LMI, assembled without the affine machinery used to
/// pose the problem.
fn edge_matrix(
    gamma: f64,
    s_i: &DMatrix<f64>,
    s_j: &DMatrix<f64>,
    g_i: &DMatrix<f64>,
    mode: &ModeMatrices,
) -> DMatrix<f64> {
    let n = s_i.nrows();
    let (q, p) = (mode.bw.ncols(), mode.c.nrows());
    let dim = 2 * n + q + p;
    let mut m = DMatrix::zeros(dim, dim);
    let ag = &mode.a * g_i;
    let cg = &mode.c * g_i;
    m.view_mut((0, 0), (n, n))
        .copy_from(&(g_i + g_i.transpose() - s_i));
    m.view_mut((n, n), (q, q))
        .copy_from(&(DMatrix::identity(q, q) * gamma));
    m.view_mut((n + q, 0), (n, n)).copy_from(&ag);
    m.view_mut((n + q, n), (n, q)).copy_from(&mode.bw);
    m.view_mut((n + q, n + q), (n, n)).copy_from(s_j);
    m.view_mut((2 * n + q, 0), (p, n)).copy_from(&cg);
    m.view_mut((2 * n + q, n), (p, q)).copy_from(&mode.dw);
    m.view_mut((2 * n + q, 2 * n + q), (p, p))
        .copy_from(&(DMatrix::identity(p, p) * gamma));
    // mirror the lower triangle
    for r in 0..dim {
        for c in (r + 1)..dim {
            m[(r, c)] = m[(c, r)];
        }
    }
    m
}

/// Rebuilds every edge LMI from the certificate values and reports the
/// smallest eigenvalues. Passes iff all are `≥ −tol` and every `S_i ≻ 0`.
pub fn verify_certificate(
    cert: &AnalysisCertificate,
    modes: &ModeTable,
    g: &WhrtGraph,
    tol: Option<f64>,
) -> VerificationReport {
    let tol = tol.unwrap_or_else(|| cert.default_tolerance());
    let mut edge_min_eigs = Vec::with_capacity(g.edge_count());
    let mut failing_edges = Vec::new();
    let shapes_ok = cert.s.len() == g.node_count() && cert.g.len() == g.node_count();
    for e in g.edges() {
        let value = match (shapes_ok, modes.get(e.from, e.label)) {
            (true, Some(mode))
                if mode.state_dim() == cert.s[e.from].nrows()
                    && cert.s[e.to].nrows() == mode.state_dim()
                    && cert.g[e.from].shape() == cert.s[e.from].shape() =>
            {
                let m = edge_matrix(cert.gamma, &cert.s[e.from], &cert.s[e.to], &cert.g[e.from], mode);
                m.symmetric_eigenvalues().min()
            }
            _ => f64::NEG_INFINITY,
        };
        if !(value >= -tol) {
            failing_edges.push(*e);
        }
        edge_min_eigs.push((*e, value));
    }
    let s_min_eigs: Vec<f64> = cert
        .s
        .iter()
        .map(|s| {
            if s.is_square() && s.nrows() > 0 {
                s.clone().symmetric_eigenvalues().min()
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let failing_nodes: Vec<usize> = s_min_eigs
        .iter()
        .enumerate()
        .filter(|(_, v)| !(**v > 0.0))
        .map(|(i, _)| i)
        .collect();
    let passed = shapes_ok
        && cert.gamma.is_finite()
        && cert.gamma > 0.0
        && failing_edges.is_empty()
        && failing_nodes.is_empty();
    VerificationReport {
        edge_min_eigs,
        s_min_eigs,
        tol,
        failing_edges,
        failing_nodes,
        passed,
    }
}

/// Node-switched quadratic Lyapunov function `V(x) = xᵀ S_i⁻¹ x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovFunction {
    pub gamma: f64,
    s_inv: Vec<DMatrix<f64>>,
}

impl LyapunovFunction {
    pub fn from_certificate(cert: &AnalysisCertificate) -> Result<Self, LmiError> {
        let s_inv = cert
            .s
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let eig = s.clone().symmetric_eigenvalues();
                let (lo, hi) = (eig.min(), eig.max());
                if !(lo > hi.abs() * 1e-14) {
                    return Err(LmiError::SingularS(i));
                }
                s.clone()
                    .cholesky()
                    .map(|c| c.inverse())
                    .ok_or(LmiError::SingularS(i))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            gamma: cert.gamma,
            s_inv,
        })
    }

    pub fn value(&self, node: usize, x: &DVector<f64>) -> f64 {
        (x.transpose() * &self.s_inv[node] * x)[(0, 0)]
    }

    /// `γ wᵀw − γ⁻¹ zᵀz − (V_to(x⁺) − V_from(x))` along one edge; positive
    /// whenever the dissipation inequality holds.
    pub fn dissipation_slack(
        &self,
        mode: &ModeMatrices,
        from: usize,
        to: usize,
        x: &DVector<f64>,
        w: &DVector<f64>,
    ) -> f64 {
        let (x_next, z) = mode.step(x, w);
        self.gamma * w.norm_squared()
            - z.norm_squared() / self.gamma
            - (self.value(to, &x_next) - self.value(from, x))
    }
}

/// `xᵀ S_i⁻¹ x` at the tracker's current node.
pub fn evaluate_lyapunov(
    cert: &AnalysisCertificate,
    tracker: &NodeTracker<'_>,
    x: &DVector<f64>,
) -> Result<f64, LmiError> {
    let node = tracker.current();
    let s = cert
        .s
        .get(node)
        .ok_or_else(|| LmiError::DimensionMismatch(format!("no S for node {node}")))?;
    if s.nrows() != x.len() {
        return Err(LmiError::DimensionMismatch(format!(
            "state has length {}, S is {}x{}",
            x.len(),
            s.nrows(),
            s.ncols()
        )));
    }
    let single = AnalysisCertificate {
        s: vec![s.clone()],
        g: Vec::new(),
        ..cert.clone()
    };
    LyapunovFunction::from_certificate(&single)
        .map_err(|_| LmiError::SingularS(node))
        .map(|v| v.value(0, x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Alphabet, WhrtGraph};
    use std::collections::BTreeMap;

    fn one_node_graph() -> WhrtGraph {
        WhrtGraph::new(1, vec![Edge::new(0, 0, 0)], Alphabet::Lifted(1), vec![0]).unwrap()
    }

    fn scalar_mode(a: f64) -> ModeTable {
        let one = DMatrix::from_element(1, 1, 1.0);
        ModeTable::Common(BTreeMap::from([(
            0,
            ModeMatrices {
                a: DMatrix::from_element(1, 1, a),
                bw: one.clone(),
                c: one,
                dw: DMatrix::zeros(1, 1),
            },
        )]))
    }

    fn cert(s: f64, g: f64, gamma: f64) -> AnalysisCertificate {
        AnalysisCertificate {
            gamma,
            s: vec![DMatrix::from_element(1, 1, s)],
            g: vec![DMatrix::from_element(1, 1, g)],
            epsilon: 0.0,
            min_eigenvalue: f64::NAN,
        }
    }

    #[test]
    fn hand_built_certificate_passes_and_negated_fails() {
        // x+ = 0.5 x + w, z = x has gain 2; S = G = 1, γ = 3 is comfortably valid
        let g = one_node_graph();
        let modes = scalar_mode(0.5);
        let good = cert(1.0, 1.0, 3.0);
        let report = verify_certificate(&good, &modes, &g, None);
        assert!(report.passed, "{report:?}");
        let bad = cert(-1.0, 1.0, 3.0);
        let report = verify_certificate(&bad, &modes, &g, None);
        assert!(!report.passed);
        assert_eq!(report.failing_nodes, vec![0]);
        assert_eq!(report.failing_edges, vec![Edge::new(0, 0, 0)]);
    }

    #[test]
    fn lyapunov_values() {
        let g = one_node_graph();
        let tracker = NodeTracker::at_initial(&g).unwrap();
        let mut c = cert(1.0, 1.0, 3.0);
        c.s = vec![DMatrix::identity(2, 2)];
        let x = DVector::from_vec(vec![1.0, 1.0]);
        assert_eq!(evaluate_lyapunov(&c, &tracker, &x).unwrap(), 2.0);
        assert_eq!(
            evaluate_lyapunov(&c, &tracker, &DVector::zeros(2)).unwrap(),
            0.0
        );
        c.s = vec![DMatrix::zeros(2, 2)];
        assert_eq!(
            evaluate_lyapunov(&c, &tracker, &x),
            Err(LmiError::SingularS(0))
        );
    }
}
