//! Backend-neutral description of a linear-objective problem with affine
//! symmetric-matrix constraints `F(x) ⪰ margin·I`.

use nalgebra::DMatrix;
use serde::Serialize;

/// Shape of a matrix decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum VarShape {
    Scalar,
    Symmetric(usize),
    Full(usize, usize),
}

impl VarShape {
    fn slot_count(self) -> usize {
        match self {
            VarShape::Scalar => 1,
            VarShape::Symmetric(n) => n * (n + 1) / 2,
            VarShape::Full(r, c) => r * c,
        }
    }
}

/// Handle to a declared variable; its scalar entries occupy consecutive
/// slots starting at `offset`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MatrixVar {
    pub name: String,
    pub shape: VarShape,
    pub offset: usize,
}

impl MatrixVar {
    pub fn rows(&self) -> usize {
        match self.shape {
            VarShape::Scalar => 1,
            VarShape::Symmetric(n) => n,
            VarShape::Full(r, _) => r,
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape {
            VarShape::Scalar => 1,
            VarShape::Symmetric(n) => n,
            VarShape::Full(_, c) => c,
        }
    }

    /// Slot holding entry `(i, j)`.
    pub fn slot(&self, i: usize, j: usize) -> usize {
        match self.shape {
            VarShape::Scalar => self.offset,
            VarShape::Symmetric(n) => {
                let (i, j) = if i <= j { (i, j) } else { (j, i) };
                // upper triangle, row-major; row i starts at i*n - i*(i-1)/2
                self.offset + i * n - i * i.saturating_sub(1) / 2 + (j - i)
            }
            VarShape::Full(_, c) => self.offset + i * c + j,
        }
    }

    /// Reads the variable's value out of a solution vector.
    pub fn value(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows(), self.cols(), |i, j| x[self.slot(i, j)])
    }
}

/// `constant + Σ x[slot] · coeff` with all matrices of equal shape.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMatrix {
    constant: DMatrix<f64>,
    terms: Vec<(usize, DMatrix<f64>)>,
}

impl AffineMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::constant(DMatrix::zeros(rows, cols))
    }

    pub fn constant(m: DMatrix<f64>) -> Self {
        Self {
            constant: m,
            terms: Vec::new(),
        }
    }

    pub fn var(v: &MatrixVar) -> Self {
        let (r, c) = (v.rows(), v.cols());
        let mut terms: Vec<(usize, DMatrix<f64>)> = Vec::new();
        for i in 0..r {
            for j in 0..c {
                let slot = v.slot(i, j);
                match terms.iter_mut().find(|(s, _)| *s == slot) {
                    Some((_, m)) => m[(i, j)] += 1.0,
                    None => {
                        let mut m = DMatrix::zeros(r, c);
                        m[(i, j)] = 1.0;
                        terms.push((slot, m));
                    }
                }
            }
        }
        terms.sort_by_key(|(s, _)| *s);
        Self {
            constant: DMatrix::zeros(r, c),
            terms,
        }
    }

    /// `x[scalar] · I_n`.
    pub fn scaled_identity(scalar: &MatrixVar, n: usize) -> Self {
        Self {
            constant: DMatrix::zeros(n, n),
            terms: vec![(scalar.offset, DMatrix::identity(n, n))],
        }
    }

    pub fn rows(&self) -> usize {
        self.constant.nrows()
    }

    pub fn cols(&self) -> usize {
        self.constant.ncols()
    }

    pub fn constant_part(&self) -> &DMatrix<f64> {
        &self.constant
    }

    pub fn terms(&self) -> &[(usize, DMatrix<f64>)] {
        &self.terms
    }

    fn map(&self, f: impl Fn(&DMatrix<f64>) -> DMatrix<f64>) -> Self {
        Self {
            constant: f(&self.constant),
            terms: self.terms.iter().map(|(s, m)| (*s, f(m))).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        self.map(|m| m.transpose())
    }

    pub fn left_mul(&self, lhs: &DMatrix<f64>) -> Self {
        self.map(|m| lhs * m)
    }

    pub fn scale(&self, factor: f64) -> Self {
        self.map(|m| m * factor)
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(
            (self.rows(), self.cols()),
            (other.rows(), other.cols()),
            "affine shapes differ"
        );
        let mut terms = self.terms.clone();
        for (slot, m) in &other.terms {
            match terms.iter_mut().find(|(s, _)| s == slot) {
                Some((_, acc)) => *acc += m,
                None => terms.push((*slot, m.clone())),
            }
        }
        terms.sort_by_key(|(s, _)| *s);
        Self {
            constant: &self.constant + &other.constant,
            terms,
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    /// Assembles a block matrix. `None` entries are zero blocks; every block
    /// row and column must have at least one sized entry.
    pub fn blocks(grid: &[Vec<Option<AffineMatrix>>]) -> Self {
        let row_sizes: Vec<usize> = grid
            .iter()
            .map(|row| {
                row.iter()
                    .flatten()
                    .map(AffineMatrix::rows)
                    .next()
                    .expect("block row without a sized entry")
            })
            .collect();
        let cols = grid[0].len();
        let col_sizes: Vec<usize> = (0..cols)
            .map(|j| {
                grid.iter()
                    .filter_map(|row| row[j].as_ref())
                    .map(AffineMatrix::cols)
                    .next()
                    .expect("block column without a sized entry")
            })
            .collect();
        let total_r: usize = row_sizes.iter().sum();
        let total_c: usize = col_sizes.iter().sum();
        let mut out = Self::zeros(total_r, total_c);
        let mut r0 = 0;
        for (bi, row) in grid.iter().enumerate() {
            let mut c0 = 0;
            for (bj, entry) in row.iter().enumerate() {
                if let Some(block) = entry {
                    assert_eq!(
                        (block.rows(), block.cols()),
                        (row_sizes[bi], col_sizes[bj]),
                        "inconsistent block sizes"
                    );
                    out.place(block, r0, c0);
                }
                c0 += col_sizes[bj];
            }
            r0 += row_sizes[bi];
        }
        out
    }

    fn place(&mut self, block: &AffineMatrix, r0: usize, c0: usize) {
        let (r, c) = (block.rows(), block.cols());
        self.constant
            .view_mut((r0, c0), (r, c))
            .copy_from(&block.constant);
        for (slot, m) in &block.terms {
            let idx = match self.terms.iter().position(|(s, _)| s == slot) {
                Some(idx) => idx,
                None => {
                    self.terms
                        .push((*slot, DMatrix::zeros(self.rows(), self.cols())));
                    self.terms.len() - 1
                }
            };
            self.terms[idx].1.view_mut((r0, c0), (r, c)).copy_from(m);
        }
        self.terms.sort_by_key(|(s, _)| *s);
    }

    pub fn evaluate(&self, x: &[f64]) -> DMatrix<f64> {
        let mut out = self.constant.clone();
        for (slot, m) in &self.terms {
            out += m * x[*slot];
        }
        out
    }

    /// True when the constant and every coefficient are symmetric.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        let sym = |m: &DMatrix<f64>| {
            m.is_square() && (m - m.transpose()).iter().all(|v| v.abs() <= tol)
        };
        sym(&self.constant) && self.terms.iter().all(|(_, m)| sym(m))
    }

    /// Replaces slot `slot` by the fixed value and renumbers later slots.
    fn substitute(&self, slot: usize, value: f64) -> Self {
        let mut constant = self.constant.clone();
        let mut terms = Vec::with_capacity(self.terms.len());
        for (s, m) in &self.terms {
            match (*s).cmp(&slot) {
                std::cmp::Ordering::Less => terms.push((*s, m.clone())),
                std::cmp::Ordering::Equal => constant += m * value,
                std::cmp::Ordering::Greater => terms.push((s - 1, m.clone())),
            }
        }
        Self { constant, terms }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmiConstraint {
    pub name: String,
    pub expr: AffineMatrix,
    /// Required lower bound on the smallest eigenvalue.
    pub margin: f64,
}

/// Minimize `Σ objective[k] · x[k]` subject to `expr_c(x) ⪰ margin_c · I`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LmiProblem {
    vars: Vec<MatrixVar>,
    slot_count: usize,
    constraints: Vec<LmiConstraint>,
    objective: Vec<(usize, f64)>,
}

impl LmiProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>, shape: VarShape) -> MatrixVar {
        let var = MatrixVar {
            name: name.into(),
            shape,
            offset: self.slot_count,
        };
        self.slot_count += shape.slot_count();
        self.vars.push(var.clone());
        var
    }

    /// Adds `expr ⪰ margin · I`. Panics on a non-symmetric expression, which
    /// is always an assembly bug.
    pub fn add_constraint(&mut self, name: impl Into<String>, expr: AffineMatrix, margin: f64) {
        assert!(
            expr.is_symmetric(1e-12),
            "constraint expression must be symmetric"
        );
        self.constraints.push(LmiConstraint {
            name: name.into(),
            expr,
            margin,
        });
    }

    pub fn minimize(&mut self, var: &MatrixVar, weight: f64) {
        assert_eq!(var.shape, VarShape::Scalar, "objective must be a scalar");
        self.objective.push((var.offset, weight));
    }

    pub fn vars(&self) -> &[MatrixVar] {
        &self.vars
    }

    pub fn slot_count(&self) -> usize {
        self.slot_count
    }

    pub fn constraints(&self) -> &[LmiConstraint] {
        &self.constraints
    }

    pub fn objective(&self) -> &[(usize, f64)] {
        &self.objective
    }

    /// Number of scalar decision variables.
    pub fn decision_count(&self) -> usize {
        self.slot_count
    }

    /// Copy of the problem with one scalar variable fixed to `value` and
    /// removed from the decision vector; used by bisection.
    pub fn with_fixed_scalar(&self, var: &MatrixVar, value: f64) -> LmiProblem {
        assert_eq!(var.shape, VarShape::Scalar);
        let slot = var.offset;
        let shift = |s: usize| if s > slot { s - 1 } else { s };
        LmiProblem {
            vars: self
                .vars
                .iter()
                .filter(|v| v.offset != slot)
                .map(|v| MatrixVar {
                    offset: shift(v.offset),
                    ..v.clone()
                })
                .collect(),
            slot_count: self.slot_count - 1,
            constraints: self
                .constraints
                .iter()
                .map(|c| LmiConstraint {
                    name: c.name.clone(),
                    expr: c.expr.substitute(slot, value),
                    margin: c.margin,
                })
                .collect(),
            objective: Vec::new(),
        }
    }

    /// Feasibility as an optimization: maximize `t ≤ 1` subject to
    /// `expr_c(x) ⪰ t I` for every constraint. The original problem is
    /// feasible iff the optimal `t` reaches the largest margin. Bounding the
    /// objective keeps interior-point iterates finite where a pure
    /// feasibility problem has an unbounded solution set.
    pub fn eigenvalue_slack(&self) -> (LmiProblem, MatrixVar) {
        let mut p = LmiProblem {
            vars: self.vars.clone(),
            slot_count: self.slot_count,
            constraints: Vec::new(),
            objective: Vec::new(),
        };
        let t = p.add_var("t", VarShape::Scalar);
        for c in &self.constraints {
            let dim = c.expr.rows();
            p.constraints.push(LmiConstraint {
                name: c.name.clone(),
                expr: c.expr.sub(&AffineMatrix::scaled_identity(&t, dim)),
                margin: 0.0,
            });
        }
        p.constraints.push(LmiConstraint {
            name: "slack cap".into(),
            expr: AffineMatrix::constant(DMatrix::from_element(1, 1, 1.0))
                .sub(&AffineMatrix::scaled_identity(&t, 1)),
            margin: 0.0,
        });
        p.minimize(&t, -1.0);
        (p, t)
    }

    pub fn max_margin(&self) -> f64 {
        self.constraints
            .iter()
            .map(|c| c.margin)
            .fold(0.0, f64::max)
    }

    /// Minimum over constraints of `λ_min(expr(x)) − margin`.
    pub fn worst_residual(&self, x: &[f64]) -> f64 {
        self.constraints
            .iter()
            .map(|c| {
                let m = c.expr.evaluate(x);
                m.symmetric_eigenvalues().min() - c.margin
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Structured dump for debugging.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Term {
            slot: usize,
            coeff: Vec<Vec<f64>>,
        }
        #[derive(Serialize)]
        struct Constraint<'a> {
            name: &'a str,
            margin: f64,
            constant: Vec<Vec<f64>>,
            terms: Vec<Term>,
        }
        #[derive(Serialize)]
        struct Dump<'a> {
            slots: usize,
            vars: &'a [MatrixVar],
            objective: &'a [(usize, f64)],
            constraints: Vec<Constraint<'a>>,
        }
        let dump = Dump {
            slots: self.slot_count,
            vars: &self.vars,
            objective: &self.objective,
            constraints: self
                .constraints
                .iter()
                .map(|c| Constraint {
                    name: &c.name,
                    margin: c.margin,
                    constant: rows_of(c.expr.constant_part()),
                    terms: c
                        .expr
                        .terms()
                        .iter()
                        .map(|(slot, m)| Term {
                            slot: *slot,
                            coeff: rows_of(m),
                        })
                        .collect(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&dump).expect("problem dump serializes")
    }
}

pub(crate) fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}
