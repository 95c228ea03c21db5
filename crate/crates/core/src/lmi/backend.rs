//! Conic solver adapters for [`LmiProblem`].

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

use super::problem::LmiProblem;

#[derive(Debug, Clone, PartialEq)]
pub enum BackendOutcome {
    /// Decision vector, one value per slot.
    Solved(Vec<f64>),
    Infeasible,
    Failure(String),
}

pub trait SdpBackend: Sync {
    fn name(&self) -> &'static str;
    fn solve(&self, problem: &LmiProblem) -> BackendOutcome;
}

/// Interior-point backend built on Clarabel's PSD triangle cone.
#[derive(Debug, Clone)]
pub struct ClarabelBackend {
    pub max_iter: u32,
    pub tol: f64,
}

impl Default for ClarabelBackend {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-9,
        }
    }
}

/// Packs the upper triangle column by column, off-diagonals scaled by √2,
/// which is the vectorization Clarabel's PSD triangle cone expects.
fn svec_entries(dim: usize) -> impl Iterator<Item = (usize, usize, f64)> {
    (0..dim).flat_map(|col| {
        (0..=col).map(move |row| {
            let scale = if row == col { 1.0 } else { std::f64::consts::SQRT_2 };
            (row, col, scale)
        })
    })
}

impl SdpBackend for ClarabelBackend {
    fn name(&self) -> &'static str {
        "clarabel"
    }

    fn solve(&self, problem: &LmiProblem) -> BackendOutcome {
        let n = problem.slot_count();
        let mut q = vec![0.0; n];
        for &(slot, w) in problem.objective() {
            q[slot] += w;
        }

        // s = b - A x must lie in each PSD cone: b = svec(F0 - margin I),
        // column k of A = -svec(F_k).
        let mut b = Vec::new();
        let mut columns: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut cones = Vec::with_capacity(problem.constraints().len());
        for c in problem.constraints() {
            let dim = c.expr.rows();
            let base = b.len();
            let constant = c.expr.constant_part();
            for (row, col, scale) in svec_entries(dim) {
                let shift = if row == col { c.margin } else { 0.0 };
                b.push(scale * (constant[(row, col)] - shift));
            }
            for (slot, coeff) in c.expr.terms() {
                for (k, (row, col, scale)) in svec_entries(dim).enumerate() {
                    let v = coeff[(row, col)];
                    if v != 0.0 {
                        columns[*slot].push((base + k, -scale * v));
                    }
                }
            }
            cones.push(SupportedConeT::PSDTriangleConeT(dim));
        }
        let m = b.len();
        let mut colptr = Vec::with_capacity(n + 1);
        let mut rowval = Vec::new();
        let mut nzval = Vec::new();
        colptr.push(0);
        for col in &mut columns {
            col.sort_by_key(|(r, _)| *r);
            for &(r, v) in col.iter() {
                rowval.push(r);
                nzval.push(v);
            }
            colptr.push(rowval.len());
        }
        let a = CscMatrix::new(m, n, colptr, rowval, nzval);
        let p = CscMatrix::zeros((n, n));

        let settings = match DefaultSettingsBuilder::default()
            .verbose(false)
            .max_iter(self.max_iter)
            .tol_gap_abs(self.tol)
            .tol_gap_rel(self.tol)
            .tol_feas(self.tol)
            .build()
        {
            Ok(s) => s,
            Err(e) => return BackendOutcome::Failure(format!("settings: {e}")),
        };
        let mut solver = match DefaultSolver::new(&p, &q, &a, &b, &cones, settings) {
            Ok(s) => s,
            Err(e) => return BackendOutcome::Failure(format!("setup: {e}")),
        };
        solver.solve();
        match solver.solution.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => {
                BackendOutcome::Solved(solver.solution.x.clone())
            }
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                BackendOutcome::Infeasible
            }
            other => BackendOutcome::Failure(format!("{other:?}")),
        }
    }
}
