//! Graph-indexed LMI conditions for l2-performance analysis and
//! state-feedback synthesis, solved through a pluggable conic backend and
//! checked a posteriori by an independent numeric rebuild.

pub mod backend;
mod certificate;
pub mod problem;
mod verify;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::graph::{Alphabet, Edge, WhrtGraph};
use crate::systems::{
    lifted_closed_loop, spectral_norm, LiftedFamily, ModeMatrices, SwitchedClosedLoop,
    SystemError,
};

pub use backend::{BackendOutcome, ClarabelBackend, SdpBackend};
pub use certificate::{CertificateFile, CERTIFICATE_HEADER};
pub use problem::{AffineMatrix, LmiConstraint, LmiProblem, MatrixVar, VarShape};
pub use verify::{evaluate_lyapunov, verify_certificate, LyapunovFunction, VerificationReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LmiError {
    #[error("no certificate exists for these conditions (they are sufficient only)")]
    Infeasible,
    #[error("solver failure: {0}")]
    SolverFailure(String),
    #[error("G is ill-conditioned (condition number {condition:.3e}{})", node.map(|n| format!(" at node {n}")).unwrap_or_default())]
    IllConditionedG { node: Option<usize>, condition: f64 },
    #[error("S at node {0} is numerically singular")]
    SingularS(usize),
    #[error("graph alphabet does not match: expected {0}")]
    AlphabetMismatch(&'static str),
    #[error("no mode matrices for label {0}")]
    MissingLabel(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("certificate file: {0}")]
    CertificateFormat(String),
    #[error(transparent)]
    System(#[from] SystemError),
}

/// How γ is minimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolveStrategy {
    /// γ is a decision variable of one conic program.
    #[default]
    Direct,
    /// Bisection on γ over feasibility problems.
    Bisection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BackendChoice {
    #[default]
    Clarabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Margin in `LMI ⪰ ε I`; derived from the data when absent.
    pub epsilon: Option<f64>,
    /// Verification tolerance; derived from the certificate when absent.
    pub tol_verify: Option<f64>,
    pub strategy: SolveStrategy,
    pub backend: BackendChoice,
    /// Largest condition number of G accepted for K = R G⁻¹.
    pub condition_guard: f64,
    /// Relative width at which bisection stops.
    pub bisection_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            epsilon: None,
            tol_verify: None,
            strategy: SolveStrategy::Direct,
            backend: BackendChoice::Clarabel,
            condition_guard: 1e8,
            bisection_tol: 1e-6,
        }
    }
}

impl SolverOptions {
    fn margin(&self, data_norm: f64) -> f64 {
        self.epsilon.unwrap_or(1e-7 * (1.0 + data_norm))
    }

    /// `stability` holds the edge LMIs without the disturbance and output
    /// rows; some γ is certifiable iff it is strictly feasible.
    fn solve(
        &self,
        problem: &LmiProblem,
        gamma: &MatrixVar,
        stability: &LmiProblem,
    ) -> Result<Vec<f64>, LmiError> {
        let backend = match self.backend {
            BackendChoice::Clarabel => Relaxing(ClarabelBackend::default()),
        };
        let fallback = || {
            if !stabilizable(&backend, stability)? {
                return Err(LmiError::Infeasible);
            }
            bisect(&backend, problem, gamma, self.bisection_tol)
        };
        match self.strategy {
            SolveStrategy::Direct => match outcome(backend.solve(problem)) {
                Err(LmiError::SolverFailure(_)) => fallback(),
                other => other,
            },
            SolveStrategy::Bisection => fallback(),
        }
    }
}

/// The stability LMIs are homogeneous, so the capped eigenvalue slack is 1
/// when they are strictly feasible and 0 otherwise.
fn stabilizable(backend: &dyn SdpBackend, stability: &LmiProblem) -> Result<bool, LmiError> {
    let (slack, t) = stability.eigenvalue_slack();
    match backend.solve(&slack) {
        BackendOutcome::Solved(x) => Ok(x[t.offset] > 0.5),
        BackendOutcome::Infeasible => Ok(false),
        BackendOutcome::Failure(msg) => Err(LmiError::SolverFailure(msg)),
    }
}

/// Retries a failed solve with looser interior-point tolerances. Returned
/// points are verified independently, so a looser stop is safe.
struct Relaxing(ClarabelBackend);

impl SdpBackend for Relaxing {
    fn name(&self) -> &'static str {
        self.0.name()
    }

    fn solve(&self, problem: &LmiProblem) -> BackendOutcome {
        let mut last = BackendOutcome::Failure("no attempt".into());
        for tol in [self.0.tol, 1e-7, 1e-6] {
            let backend = ClarabelBackend {
                tol,
                ..self.0.clone()
            };
            last = backend.solve(problem);
            if !matches!(last, BackendOutcome::Failure(_)) {
                break;
            }
        }
        last
    }
}

fn outcome(o: BackendOutcome) -> Result<Vec<f64>, LmiError> {
    match o {
        BackendOutcome::Solved(x) => Ok(x),
        BackendOutcome::Infeasible => Err(LmiError::Infeasible),
        BackendOutcome::Failure(msg) => Err(LmiError::SolverFailure(msg)),
    }
}

/// γ must be the last declared variable so fixing it leaves the other
/// slots in place.
fn bisect(
    backend: &dyn SdpBackend,
    problem: &LmiProblem,
    gamma: &MatrixVar,
    rel_tol: f64,
) -> Result<Vec<f64>, LmiError> {
    debug_assert_eq!(gamma.offset + 1, problem.slot_count());
    // A failed probe only means that γ could not be certified; returned
    // points are verified afterwards either way.
    let mut failure: Option<String> = None;
    let mut feasible = |value: f64| -> Option<Vec<f64>> {
        let fixed = problem.with_fixed_scalar(gamma, value);
        let (slack, t) = fixed.eigenvalue_slack();
        match backend.solve(&slack) {
            BackendOutcome::Solved(mut x) if x[t.offset] >= fixed.max_margin() => {
                x.truncate(t.offset);
                x.push(value);
                Some(x)
            }
            BackendOutcome::Solved(_) | BackendOutcome::Infeasible => None,
            BackendOutcome::Failure(msg) => {
                failure = Some(msg);
                None
            }
        }
    };
    let mut hi = 1.0;
    let mut best = loop {
        if let Some(x) = feasible(hi) {
            break x;
        }
        hi *= 2.0;
        if hi > 1e8 {
            return Err(match failure {
                Some(msg) => LmiError::SolverFailure(msg),
                None => LmiError::Infeasible,
            });
        }
    };
    let mut lo = 0.0;
    while hi - lo > rel_tol * (1.0 + hi) {
        let mid = 0.5 * (lo + hi);
        match feasible(mid) {
            Some(x) => {
                hi = mid;
                best = x;
            }
            None => lo = mid,
        }
    }
    Ok(best)
}

/// Mode matrices for each edge: shared by all nodes, or chosen by the
/// edge's start node (switched controllers).
#[derive(Debug, Clone, PartialEq)]
pub enum ModeTable {
    Common(BTreeMap<usize, ModeMatrices>),
    PerNode(Vec<BTreeMap<usize, ModeMatrices>>),
}

impl ModeTable {
    pub fn get(&self, node: usize, label: usize) -> Option<&ModeMatrices> {
        match self {
            ModeTable::Common(m) => m.get(&label),
            ModeTable::PerNode(v) => v.get(node)?.get(&label),
        }
    }

    fn edge_modes<'a>(&'a self, g: &WhrtGraph) -> Result<Vec<(Edge, &'a ModeMatrices)>, LmiError> {
        if let ModeTable::PerNode(v) = self {
            if v.len() != g.node_count() {
                return Err(LmiError::DimensionMismatch(format!(
                    "{} per-node mode sets for {} nodes",
                    v.len(),
                    g.node_count()
                )));
            }
        }
        let pairs: Vec<(Edge, &ModeMatrices)> = g
            .edges()
            .iter()
            .map(|e| {
                self.get(e.from, e.label)
                    .map(|m| (*e, m))
                    .ok_or(LmiError::MissingLabel(e.label))
            })
            .collect::<Result<_, _>>()?;
        let n = pairs.first().map(|(_, m)| m.state_dim()).unwrap_or(0);
        for (e, m) in &pairs {
            let consistent = m.a.ncols() == n
                && m.a.nrows() == n
                && m.bw.nrows() == n
                && m.c.ncols() == n
                && m.dw.nrows() == m.c.nrows()
                && m.dw.ncols() == m.bw.ncols();
            if !consistent {
                return Err(LmiError::DimensionMismatch(format!(
                    "mode matrices for label {} are inconsistent",
                    e.label
                )));
            }
        }
        Ok(pairs)
    }
}

/// Certified γ with the node-indexed witnesses `S_i`, `G_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisCertificate {
    pub gamma: f64,
    pub s: Vec<DMatrix<f64>>,
    pub g: Vec<DMatrix<f64>>,
    /// Margin the LMIs were posed with.
    pub epsilon: f64,
    /// Smallest edge-LMI eigenvalue found by verification.
    pub min_eigenvalue: f64,
}

impl AnalysisCertificate {
    pub fn node_count(&self) -> usize {
        self.s.len()
    }

    pub fn state_dim(&self) -> usize {
        self.s.first().map_or(0, |s| s.nrows())
    }

    /// Largest of γ and the spectral norms of all witnesses.
    pub fn norm(&self) -> f64 {
        self.s
            .iter()
            .chain(&self.g)
            .map(spectral_norm)
            .fold(self.gamma.abs(), f64::max)
    }

    pub fn default_tolerance(&self) -> f64 {
        1e-8 * (1.0 + self.norm())
    }
}

/// State feedback: one gain, or one gain per lifted-graph node.
#[derive(Debug, Clone, PartialEq)]
pub enum Controller {
    Static(DMatrix<f64>),
    Switched(Vec<DMatrix<f64>>),
}

impl Controller {
    pub fn gain_at(&self, node: usize) -> &DMatrix<f64> {
        match self {
            Controller::Static(k) => k,
            Controller::Switched(ks) => &ks[node],
        }
    }

    pub fn is_switched(&self) -> bool {
        matches!(self, Controller::Switched(_))
    }

    /// Lifted closed-loop modes under this controller.
    pub fn lifted_modes(&self, f: &LiftedFamily) -> Result<ModeTable, LmiError> {
        Ok(match self {
            Controller::Static(k) => ModeTable::Common(lifted_closed_loop(f, k)?),
            Controller::Switched(ks) => ModeTable::PerNode(
                ks.iter()
                    .map(|k| lifted_closed_loop(f, k))
                    .collect::<Result<_, _>>()?,
            ),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisResult {
    pub controller: Controller,
    pub gamma: f64,
    pub certificate: AnalysisCertificate,
}

impl SynthesisResult {
    /// Verifies the certificate against the closed loop formed with the
    /// returned gains, i.e. through `Ã + B̃K` rather than `ÃG + B̃R`.
    pub fn verify(
        &self,
        f: &LiftedFamily,
        g: &WhrtGraph,
        tol: Option<f64>,
    ) -> Result<VerificationReport, LmiError> {
        let modes = self.controller.lifted_modes(f)?;
        Ok(verify_certificate(&self.certificate, &modes, g, tol))
    }
}

fn edge_lmi(
    gamma: &MatrixVar,
    s_i: &AffineMatrix,
    s_j: &AffineMatrix,
    g_i: &AffineMatrix,
    ag: AffineMatrix,
    cg: AffineMatrix,
    bw: &DMatrix<f64>,
    dw: &DMatrix<f64>,
) -> AffineMatrix {
    let (q, p) = (bw.ncols(), cg.rows());
    let bw = AffineMatrix::constant(bw.clone());
    let dw = AffineMatrix::constant(dw.clone());
    let top_left = g_i.add(&g_i.transpose()).sub(s_i);
    AffineMatrix::blocks(&[
        vec![Some(top_left), None, Some(ag.transpose()), Some(cg.transpose())],
        vec![None, Some(AffineMatrix::scaled_identity(gamma, q)), Some(bw.transpose()), Some(dw.transpose())],
        vec![Some(ag), Some(bw), Some(s_j.clone()), None],
        vec![Some(cg), Some(dw), None, Some(AffineMatrix::scaled_identity(gamma, p))],
    ])
}

fn stability_lmi(s_i: &AffineMatrix, s_j: &AffineMatrix, g_i: &AffineMatrix, ag: AffineMatrix) -> AffineMatrix {
    let top_left = g_i.add(&g_i.transpose()).sub(s_i);
    AffineMatrix::blocks(&[
        vec![Some(top_left), Some(ag.transpose())],
        vec![Some(ag), Some(s_j.clone())],
    ])
}

/// Minimizes γ over the edge LMIs with per-node `S_i`, `G_i` for a closed
/// loop given by `modes`.
pub fn analyze(
    modes: &ModeTable,
    g: &WhrtGraph,
    opts: &SolverOptions,
) -> Result<AnalysisCertificate, LmiError> {
    let edges = modes.edge_modes(g)?;
    let n = edges
        .first()
        .map(|(_, m)| m.state_dim())
        .ok_or_else(|| LmiError::DimensionMismatch("graph has no edges".into()))?;
    let data_norm = edges.iter().map(|(_, m)| m.max_norm()).fold(0.0, f64::max);
    let margin = opts.margin(data_norm);

    let mut problem = LmiProblem::new();
    let s: Vec<MatrixVar> = (0..g.node_count())
        .map(|i| problem.add_var(format!("S{}", i + 1), VarShape::Symmetric(n)))
        .collect();
    let gv: Vec<MatrixVar> = (0..g.node_count())
        .map(|i| problem.add_var(format!("G{}", i + 1), VarShape::Full(n, n)))
        .collect();
    let gamma = problem.add_var("gamma", VarShape::Scalar);
    let mut stability = problem.clone();
    for (e, m) in &edges {
        let g_i = AffineMatrix::var(&gv[e.from]);
        stability.add_constraint(
            edge_name(e),
            stability_lmi(
                &AffineMatrix::var(&s[e.from]),
                &AffineMatrix::var(&s[e.to]),
                &g_i,
                g_i.left_mul(&m.a),
            ),
            0.0,
        );
        let lmi = edge_lmi(
            &gamma,
            &AffineMatrix::var(&s[e.from]),
            &AffineMatrix::var(&s[e.to]),
            &g_i,
            g_i.left_mul(&m.a),
            g_i.left_mul(&m.c),
            &m.bw,
            &m.dw,
        );
        problem.add_constraint(edge_name(e), lmi, margin);
    }
    problem.minimize(&gamma, 1.0);

    let x = opts.solve(&problem, &gamma, &stability)?;
    let cert = AnalysisCertificate {
        gamma: x[gamma.offset],
        s: s.iter().map(|v| v.value(&x)).collect(),
        g: gv.iter().map(|v| v.value(&x)).collect(),
        epsilon: margin,
        min_eigenvalue: f64::NAN,
    };
    checked(cert, modes, g, opts)
}

fn checked(
    mut cert: AnalysisCertificate,
    modes: &ModeTable,
    g: &WhrtGraph,
    opts: &SolverOptions,
) -> Result<AnalysisCertificate, LmiError> {
    let report = verify_certificate(&cert, modes, g, opts.tol_verify);
    cert.min_eigenvalue = report.min_edge_eigenvalue();
    if !report.passed {
        return Err(LmiError::SolverFailure(format!(
            "returned point fails verification (min eigenvalue {:.3e}, tolerance {:.3e})",
            report.min_edge_eigenvalue(),
            report.tol
        )));
    }
    Ok(cert)
}

fn edge_name(e: &Edge) -> String {
    format!("edge v{}->v{} label {}", e.from + 1, e.to + 1, e.label)
}

/// Analysis of the per-step closed loop over a graph with labels {0, 1}.
pub fn analyze_nonlifted(
    cls: &SwitchedClosedLoop,
    g: &WhrtGraph,
    opts: &SolverOptions,
) -> Result<AnalysisCertificate, LmiError> {
    if g.alphabet() != Alphabet::Binary {
        return Err(LmiError::AlphabetMismatch("binary labels {0,1}"));
    }
    analyze(&ModeTable::Common(cls.modes()), g, opts)
}

/// Analysis of the lifted closed loop over a lifted graph.
pub fn analyze_lifted(
    f: &LiftedFamily,
    k: &DMatrix<f64>,
    g: &WhrtGraph,
    opts: &SolverOptions,
) -> Result<AnalysisCertificate, LmiError> {
    analyze_lifted_controller(f, &Controller::Static(k.clone()), g, opts)
}

/// Lifted analysis for a static or node-switched controller.
pub fn analyze_lifted_controller(
    f: &LiftedFamily,
    controller: &Controller,
    g: &WhrtGraph,
    opts: &SolverOptions,
) -> Result<AnalysisCertificate, LmiError> {
    require_lifted(f, g)?;
    if let Controller::Switched(ks) = controller {
        if ks.len() != g.node_count() {
            return Err(LmiError::DimensionMismatch(format!(
                "{} switched gains for {} nodes",
                ks.len(),
                g.node_count()
            )));
        }
    }
    analyze(&controller.lifted_modes(f)?, g, opts)
}

fn require_lifted(f: &LiftedFamily, g: &WhrtGraph) -> Result<(), LmiError> {
    if !g.alphabet().is_lifted() {
        return Err(LmiError::AlphabetMismatch("lifted loss-count labels"));
    }
    for label in g.labels() {
        f.block(label).map_err(|_| LmiError::MissingLabel(label))?;
    }
    Ok(())
}

/// State-feedback synthesis on the lifted graph: `Ã G + B̃ R` replaces the
/// closed-loop product and `K = R G⁻¹`. With `switched`, every node gets
/// its own `G_i`, `R_i` and gain.
pub fn synthesize(
    f: &LiftedFamily,
    g: &WhrtGraph,
    switched: bool,
    opts: &SolverOptions,
) -> Result<SynthesisResult, LmiError> {
    require_lifted(f, g)?;
    let (n, m) = (f.state_dim(), f.input_dim());
    let mut data_norm: f64 = 0.0;
    for label in g.labels() {
        let b = f.block(label)?;
        for mat in [&b.a, &b.b, &b.c, &b.d, &b.bw, &b.dw] {
            data_norm = data_norm.max(spectral_norm(mat));
        }
    }
    let margin = opts.margin(data_norm);

    let mut problem = LmiProblem::new();
    let s: Vec<MatrixVar> = (0..g.node_count())
        .map(|i| problem.add_var(format!("S{}", i + 1), VarShape::Symmetric(n)))
        .collect();
    let gain_nodes = if switched { g.node_count() } else { 1 };
    let gv: Vec<MatrixVar> = (0..gain_nodes)
        .map(|i| problem.add_var(format!("G{}", i + 1), VarShape::Full(n, n)))
        .collect();
    let rv: Vec<MatrixVar> = (0..gain_nodes)
        .map(|i| problem.add_var(format!("R{}", i + 1), VarShape::Full(m, n)))
        .collect();
    let gamma = problem.add_var("gamma", VarShape::Scalar);
    let pick = |node: usize| if switched { node } else { 0 };
    let mut stability = problem.clone();

    for e in g.edges() {
        let blk = f.block(e.label)?;
        let g_i = AffineMatrix::var(&gv[pick(e.from)]);
        let r_i = AffineMatrix::var(&rv[pick(e.from)]);
        let ag = g_i.left_mul(&blk.a).add(&r_i.left_mul(&blk.b));
        let cg = g_i.left_mul(&blk.c).add(&r_i.left_mul(&blk.d));
        stability.add_constraint(
            edge_name(e),
            stability_lmi(&AffineMatrix::var(&s[e.from]), &AffineMatrix::var(&s[e.to]), &g_i, ag.clone()),
            0.0,
        );
        let lmi = edge_lmi(
            &gamma,
            &AffineMatrix::var(&s[e.from]),
            &AffineMatrix::var(&s[e.to]),
            &g_i,
            ag,
            cg,
            &blk.bw,
            &blk.dw,
        );
        problem.add_constraint(edge_name(e), lmi, margin);
    }
    problem.minimize(&gamma, 1.0);

    let x = opts.solve(&problem, &gamma, &stability)?;
    let mut gains = Vec::with_capacity(gain_nodes);
    let mut g_values = Vec::with_capacity(gain_nodes);
    for (idx, (gvar, rvar)) in gv.iter().zip(&rv).enumerate() {
        let g_val = gvar.value(&x);
        let sv = g_val.singular_values();
        let condition = sv.max() / sv.min();
        if !condition.is_finite() || condition > opts.condition_guard {
            return Err(LmiError::IllConditionedG {
                node: switched.then_some(idx),
                condition,
            });
        }
        let g_inv = g_val
            .clone()
            .try_inverse()
            .ok_or(LmiError::IllConditionedG {
                node: switched.then_some(idx),
                condition: f64::INFINITY,
            })?;
        gains.push(rvar.value(&x) * g_inv);
        g_values.push(g_val);
    }
    let controller = if switched {
        Controller::Switched(gains)
    } else {
        Controller::Static(gains.remove(0))
    };
    let cert = AnalysisCertificate {
        gamma: x[gamma.offset],
        s: s.iter().map(|v| v.value(&x)).collect(),
        g: (0..g.node_count())
            .map(|i| g_values[pick(i)].clone())
            .collect(),
        epsilon: margin,
        min_eigenvalue: f64::NAN,
    };
    let cert = checked(cert, &controller.lifted_modes(f)?, g, opts)?;
    Ok(SynthesisResult {
        controller,
        gamma: cert.gamma,
        certificate: cert,
    })
}
