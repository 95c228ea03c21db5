//! Plant data, the two-mode switched closed loop, and the lifting of the
//! loop to the instants of successful control attempts.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraints::LossSequence;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SystemError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix {0} contains non-finite entries")]
    NonFinite(&'static str),
    #[error("the first control attempt must succeed (mu_0 = 1)")]
    InvalidFirstAttempt,
    #[error("no lifted block for label {0}")]
    MissingLabel(usize),
}

fn check_shape(
    name: &'static str,
    m: &DMatrix<f64>,
    rows: usize,
    cols: usize,
) -> Result<(), SystemError> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(SystemError::DimensionMismatch(format!(
            "{name} is {}x{}, expected {rows}x{cols}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(SystemError::NonFinite(name));
    }
    Ok(())
}

/// Linear discrete-time plant
/// `x+ = A x + B u + Bw w`, `z = C x + D u + Dw w`.
#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    bw: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    dw: DMatrix<f64>,
}

impl Plant {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        bw: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        dw: DMatrix<f64>,
    ) -> Result<Self, SystemError> {
        let n = a.nrows();
        let (m, q, p) = (b.ncols(), bw.ncols(), c.nrows());
        if n == 0 || m == 0 || q == 0 || p == 0 {
            return Err(SystemError::DimensionMismatch(
                "all of n, m, q, p must be positive".into(),
            ));
        }
        check_shape("A", &a, n, n)?;
        check_shape("B", &b, n, m)?;
        check_shape("Bw", &bw, n, q)?;
        check_shape("C", &c, p, n)?;
        check_shape("D", &d, p, m)?;
        check_shape("Dw", &dw, p, q)?;
        Ok(Self { a, b, bw, c, d, dw })
    }

    /// The two-state example plant with performance channels used throughout
    /// the tests and the sample configuration.
    pub fn example() -> Self {
        Self::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 1.0]),
            DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
        )
        .expect("example plant is consistent")
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn bw(&self) -> &DMatrix<f64> {
        &self.bw
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }
    pub fn dw(&self) -> &DMatrix<f64> {
        &self.dw
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    /// Input dimension.
    pub fn m(&self) -> usize {
        self.b.ncols()
    }
    /// Disturbance dimension.
    pub fn q(&self) -> usize {
        self.bw.ncols()
    }
    /// Performance output dimension.
    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    pub fn check_gain(&self, k: &DMatrix<f64>) -> Result<(), SystemError> {
        check_shape("K", k, self.m(), self.n())
    }
}

/// What the actuator applies when a control input is lost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Strategy {
    Zero,
    /// Reapply the last applied input; `initial_input` plays the role of
    /// the input applied before `k = 0`.
    Hold { initial_input: Option<Vec<f64>> },
}

impl Strategy {
    pub fn hold() -> Self {
        Strategy::Hold {
            initial_input: None,
        }
    }

    pub fn is_hold(&self) -> bool {
        matches!(self, Strategy::Hold { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Zero => "zero",
            Strategy::Hold { .. } => "hold",
        }
    }
}

/// Matrices of one mode `x+ = a x + bw w`, `z = c x + dw w`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeMatrices {
    pub a: DMatrix<f64>,
    pub bw: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub dw: DMatrix<f64>,
}

impl ModeMatrices {
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.bw.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn step(&self, x: &DVector<f64>, w: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (&self.a * x + &self.bw * w, &self.c * x + &self.dw * w)
    }

    /// Largest spectral norm among the four blocks.
    pub fn max_norm(&self) -> f64 {
        [&self.a, &self.bw, &self.c, &self.dw]
            .into_iter()
            .map(spectral_norm)
            .fold(0.0, f64::max)
    }
}

pub(crate) fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Closed loop as a switched system with modes `0` (loss) and `1` (success).
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchedClosedLoop {
    modes: [ModeMatrices; 2],
}

impl SwitchedClosedLoop {
    pub fn mode(&self, label: usize) -> &ModeMatrices {
        &self.modes[label]
    }

    pub fn modes(&self) -> BTreeMap<usize, ModeMatrices> {
        self.modes.iter().cloned().enumerate().collect()
    }

    pub fn state_dim(&self) -> usize {
        self.modes[0].state_dim()
    }
}

/// Builds the switched closed loop. With the hold strategy the state is
/// augmented with the previously applied input, `xi = [x; u_prev]`.
pub fn closed_loop(
    plant: &Plant,
    k: &DMatrix<f64>,
    strategy: &Strategy,
) -> Result<SwitchedClosedLoop, SystemError> {
    plant.check_gain(k)?;
    let (n, m) = (plant.n(), plant.m());
    let a_k = plant.a() + plant.b() * k;
    let c_k = plant.c() + plant.d() * k;
    let modes = match strategy {
        Strategy::Zero => [
            ModeMatrices {
                a: plant.a().clone(),
                bw: plant.bw().clone(),
                c: plant.c().clone(),
                dw: plant.dw().clone(),
            },
            ModeMatrices {
                a: a_k,
                bw: plant.bw().clone(),
                c: c_k,
                dw: plant.dw().clone(),
            },
        ],
        Strategy::Hold { .. } => {
            let mut bw = DMatrix::zeros(n + m, plant.q());
            bw.view_mut((0, 0), (n, plant.q())).copy_from(plant.bw());

            let mut a0 = DMatrix::zeros(n + m, n + m);
            a0.view_mut((0, 0), (n, n)).copy_from(plant.a());
            a0.view_mut((0, n), (n, m)).copy_from(plant.b());
            a0.view_mut((n, n), (m, m)).fill_with_identity();
            let mut c0 = DMatrix::zeros(plant.p(), n + m);
            c0.view_mut((0, 0), (plant.p(), n)).copy_from(plant.c());
            c0.view_mut((0, n), (plant.p(), m)).copy_from(plant.d());

            let mut a1 = DMatrix::zeros(n + m, n + m);
            a1.view_mut((0, 0), (n, n)).copy_from(&a_k);
            a1.view_mut((n, 0), (m, n)).copy_from(k);
            let mut c1 = DMatrix::zeros(plant.p(), n + m);
            c1.view_mut((0, 0), (plant.p(), n)).copy_from(&c_k);

            [
                ModeMatrices {
                    a: a0,
                    bw: bw.clone(),
                    c: c0,
                    dw: plant.dw().clone(),
                },
                ModeMatrices {
                    a: a1,
                    bw,
                    c: c1,
                    dw: plant.dw().clone(),
                },
            ]
        }
    };
    Ok(SwitchedClosedLoop { modes })
}

/// Success instants `tau` and inter-success loss counts `alpha` of a loss
/// sequence of total length `length`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LiftedIndexing {
    pub tau: Vec<usize>,
    pub alpha: Vec<usize>,
    pub length: usize,
}

impl LiftedIndexing {
    pub fn to_sequence(&self) -> LossSequence {
        let mut bits = vec![false; self.length];
        for &t in &self.tau {
            bits[t] = true;
        }
        LossSequence::new(bits)
    }
}

pub fn lift_sequences(mu: &LossSequence) -> Result<LiftedIndexing, SystemError> {
    if mu.bits().first() != Some(&true) {
        return Err(SystemError::InvalidFirstAttempt);
    }
    let tau: Vec<usize> = mu
        .bits()
        .iter()
        .enumerate()
        .filter_map(|(k, &b)| b.then_some(k))
        .collect();
    let alpha = tau.windows(2).map(|w| w[1] - w[0] - 1).collect();
    Ok(LiftedIndexing {
        tau,
        alpha,
        length: mu.len(),
    })
}

/// Open-loop lifted matrices for one inter-success gap of `alpha` losses.
/// Stacked disturbances and outputs are ordered oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedBlock {
    pub alpha: usize,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub bw: DMatrix<f64>,
    pub dw: DMatrix<f64>,
}

impl LiftedBlock {
    pub fn closed_loop(&self, k: &DMatrix<f64>) -> ModeMatrices {
        ModeMatrices {
            a: &self.a + &self.b * k,
            bw: self.bw.clone(),
            c: &self.c + &self.d * k,
            dw: self.dw.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiftedFamily {
    strategy: Strategy,
    n: usize,
    m: usize,
    blocks: BTreeMap<usize, LiftedBlock>,
}

impl LiftedFamily {
    pub fn block(&self, alpha: usize) -> Result<&LiftedBlock, SystemError> {
        self.blocks.get(&alpha).ok_or(SystemError::MissingLabel(alpha))
    }

    pub fn blocks(&self) -> impl Iterator<Item = &LiftedBlock> {
        self.blocks.values()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.blocks.keys().copied().collect()
    }

    pub fn strategy(&self) -> &Strategy {
        &self.strategy
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }
}

/// Lifted matrices for every requested loss count.
pub fn lift(
    plant: &Plant,
    strategy: &Strategy,
    labels: impl IntoIterator<Item = usize>,
) -> LiftedFamily {
    let blocks = labels
        .into_iter()
        .map(|alpha| (alpha, lifted_block(plant, strategy, alpha)))
        .collect();
    LiftedFamily {
        strategy: strategy.clone(),
        n: plant.n(),
        m: plant.m(),
        blocks,
    }
}

fn lifted_block(plant: &Plant, strategy: &Strategy, alpha: usize) -> LiftedBlock {
    let (n, m, q, p) = (plant.n(), plant.m(), plant.q(), plant.p());
    // powers[i] = A^i, i = 0..=alpha+1
    let mut powers = vec![DMatrix::identity(n, n)];
    for i in 0..=alpha {
        let next = plant.a() * &powers[i];
        powers.push(next);
    }
    // partial[i] = sum_{j<i} A^j B
    let mut partial = vec![DMatrix::zeros(n, m)];
    for i in 0..=alpha {
        let next = &partial[i] + &powers[i] * plant.b();
        partial.push(next);
    }

    let a = powers[alpha + 1].clone();
    let b = match strategy {
        Strategy::Zero => &powers[alpha] * plant.b(),
        Strategy::Hold { .. } => partial[alpha + 1].clone(),
    };

    let rows = (alpha + 1) * p;
    let mut c = DMatrix::zeros(rows, n);
    let mut d = DMatrix::zeros(rows, m);
    let mut dw = DMatrix::zeros(rows, (alpha + 1) * q);
    let mut bw = DMatrix::zeros(n, (alpha + 1) * q);
    for i in 0..=alpha {
        c.view_mut((i * p, 0), (p, n)).copy_from(&(plant.c() * &powers[i]));
        let d_row = match (strategy, i) {
            (_, 0) => plant.d().clone(),
            (Strategy::Zero, _) => plant.c() * &powers[i - 1] * plant.b(),
            (Strategy::Hold { .. }, _) => plant.c() * &partial[i] + plant.d(),
        };
        d.view_mut((i * p, 0), (p, m)).copy_from(&d_row);
        bw.view_mut((0, i * q), (n, q))
            .copy_from(&(&powers[alpha - i] * plant.bw()));
        for j in 0..=i {
            let entry = if i == j {
                plant.dw().clone()
            } else {
                plant.c() * &powers[i - j - 1] * plant.bw()
            };
            dw.view_mut((i * p, j * q), (p, q)).copy_from(&entry);
        }
    }
    LiftedBlock {
        alpha,
        a,
        b,
        c,
        d,
        bw,
        dw,
    }
}

/// Closed-loop lifted modes `A~ + B~ K`, `C~ + D~ K` per label.
pub fn lifted_closed_loop(
    family: &LiftedFamily,
    k: &DMatrix<f64>,
) -> Result<BTreeMap<usize, ModeMatrices>, SystemError> {
    check_shape("K", k, family.m, family.n)?;
    Ok(family
        .blocks
        .iter()
        .map(|(&alpha, block)| (alpha, block.closed_loop(k)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn reference_gain() -> DMatrix<f64> {
        DMatrix::from_row_slice(1, 2, &[-0.35, -0.85])
    }

    #[test]
    fn plant_validation() {
        let p = Plant::example();
        assert_eq!((p.n(), p.m(), p.q(), p.p()), (2, 1, 1, 1));
        let bad = Plant::new(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(3, 1),
            DMatrix::zeros(2, 1),
            DMatrix::zeros(1, 2),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
        );
        assert!(matches!(bad, Err(SystemError::DimensionMismatch(_))));
        let nan = Plant::new(
            DMatrix::from_element(1, 1, f64::NAN),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
        );
        assert_eq!(nan, Err(SystemError::NonFinite("A")));
    }

    #[test]
    fn zero_strategy_modes() {
        let p = Plant::example();
        let k = reference_gain();
        let cl = closed_loop(&p, &k, &Strategy::Zero).unwrap();
        assert_eq!(&cl.mode(1).a - &cl.mode(0).a, p.b() * &k);
        let expected = DMatrix::from_row_slice(2, 2, &[-0.35, 0.15, 0.65, 0.15]);
        assert_relative_eq!(cl.mode(1).a, expected, epsilon = 1e-12);
        assert_relative_eq!(cl.mode(1).c, DMatrix::from_row_slice(1, 2, &[0.65, 0.15]), epsilon = 1e-12);
        assert!(matches!(
            closed_loop(&p, &DMatrix::zeros(2, 2), &Strategy::Zero),
            Err(SystemError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn hold_with_zero_gain_clears_held_input() {
        let p = Plant::example();
        let cl = closed_loop(&p, &DMatrix::zeros(1, 2), &Strategy::hold()).unwrap();
        let mut expected = DMatrix::zeros(3, 3);
        expected.view_mut((0, 0), (2, 2)).copy_from(p.a());
        assert_eq!(cl.mode(1).a, expected);
        assert_eq!(cl.state_dim(), 3);
    }

    #[test]
    fn lift_sequences_example() {
        let mu: LossSequence = "1011001".parse().unwrap();
        let idx = lift_sequences(&mu).unwrap();
        assert_eq!(idx.tau, vec![0, 2, 3, 6]);
        assert_eq!(idx.alpha, vec![1, 0, 2]);
        assert_eq!(idx.to_sequence(), mu);

        let ones = lift_sequences(&LossSequence::ones(5)).unwrap();
        assert_eq!(ones.tau, vec![0, 1, 2, 3, 4]);
        assert_eq!(ones.alpha, vec![0; 4]);

        assert_eq!(
            lift_sequences(&"011".parse().unwrap()),
            Err(SystemError::InvalidFirstAttempt)
        );
    }

    #[test]
    fn lifted_blocks_without_losses_are_the_plant() {
        let p = Plant::example();
        for strategy in [Strategy::Zero, Strategy::hold()] {
            let f = lift(&p, &strategy, [0]);
            let blk = f.block(0).unwrap();
            assert_eq!(&blk.a, p.a());
            assert_eq!(&blk.b, p.b());
            assert_eq!(&blk.c, p.c());
            assert_eq!(&blk.d, p.d());
            assert_eq!(&blk.bw, p.bw());
            assert_eq!(&blk.dw, p.dw());
        }
    }

    #[test]
    fn lifted_block_shapes_and_closed_forms() {
        let p = Plant::example();
        let zero = lift(&p, &Strategy::Zero, [2]);
        let blk = zero.block(2).unwrap();
        assert_eq!(blk.a, p.a() * p.a() * p.a());
        assert_eq!(blk.b, p.a() * p.a() * p.b());
        assert_eq!((blk.c.nrows(), blk.d.nrows(), blk.bw.ncols()), (3, 3, 3));
        assert_eq!((blk.dw.nrows(), blk.dw.ncols()), (3, 3));
        assert!(zero.block(1).is_err());

        let hold = lift(&p, &Strategy::hold(), [1]);
        let identity = DMatrix::<f64>::identity(2, 2);
        assert_eq!(hold.block(1).unwrap().b, (p.a() + identity) * p.b());
    }

    #[test]
    fn lifted_closed_loop_examples() {
        let p = Plant::example();
        let f = lift(&p, &Strategy::Zero, [0, 1]);
        let open = lifted_closed_loop(&f, &DMatrix::zeros(1, 2)).unwrap();
        assert_eq!(open[&1].a, f.block(1).unwrap().a);
        assert_eq!(open[&1].c, f.block(1).unwrap().c);
        let k = reference_gain();
        let cl = lifted_closed_loop(&f, &k).unwrap();
        assert_eq!(cl[&0].a, p.a() + p.b() * &k);
        assert!(lifted_closed_loop(&f, &DMatrix::zeros(2, 2)).is_err());
    }
}
