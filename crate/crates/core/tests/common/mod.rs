//! Oracles shared by the integration tests and the acceptance runner. None
//! of these go through the library's graph or LMI code paths.

#![allow(dead_code)]

use std::collections::BTreeSet;

use nalgebra::{Complex, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use whrt_core::constraints::{satisfies, ConstraintKind, LossSequence, WhrtConstraint};
use whrt_core::systems::{ModeMatrices, Plant};

/// Peak of `σ_max(C (e^{jθ} I − A)⁻¹ B + D)` over a dense frequency grid on
/// `[0, π]`, refined by golden-section search around the best grid point.
pub fn hinf_frequency_sweep(mode: &ModeMatrices) -> f64 {
    let n = mode.a.nrows();
    let a = mode.a.map(|v| Complex::new(v, 0.0));
    let b = mode.bw.map(|v| Complex::new(v, 0.0));
    let c = mode.c.map(|v| Complex::new(v, 0.0));
    let d = mode.dw.map(|v| Complex::new(v, 0.0));
    let gain = |theta: f64| -> f64 {
        let z = Complex::new(theta.cos(), theta.sin());
        let shifted = DMatrix::<Complex<f64>>::identity(n, n) * z - &a;
        let Some(resolvent) = shifted.lu().solve(&b) else {
            return f64::INFINITY;
        };
        let h = &c * resolvent + &d;
        h.singular_values().max()
    };
    const GRID: usize = 20_000;
    let step = std::f64::consts::PI / GRID as f64;
    let (mut best_theta, mut best) = (0.0, gain(0.0));
    for i in 1..=GRID {
        let theta = i as f64 * step;
        let g = gain(theta);
        if g > best {
            best = g;
            best_theta = theta;
        }
    }
    let (mut lo, mut hi) = ((best_theta - step).max(0.0), (best_theta + step).min(std::f64::consts::PI));
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..80 {
        let m1 = hi - ratio * (hi - lo);
        let m2 = lo + ratio * (hi - lo);
        if gain(m1) > gain(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    best.max(gain(0.5 * (lo + hi)))
}

/// Words of length `len` that occur inside some infinite admissible
/// sequence. Every kind is monotone in successes, so a word qualifies iff
/// it stays admissible when surrounded by successes.
pub fn extendable_words(c: &WhrtConstraint, len: usize) -> BTreeSet<LossSequence> {
    let pad = c.s();
    let mut out = BTreeSet::new();
    for code in 0u64..(1u64 << len) {
        let word: Vec<bool> = (0..len).map(|i| (code >> (len - 1 - i)) & 1 == 1).collect();
        let mut padded = vec![true; pad];
        padded.extend(&word);
        padded.extend(std::iter::repeat_n(true, pad));
        if satisfies(&LossSequence::new(padded), c) {
            out.insert(LossSequence::new(word));
        }
    }
    out
}

pub fn all_constraints(max_s: usize) -> Vec<WhrtConstraint> {
    let mut out = Vec::new();
    for s in 1..=max_s {
        for r in 1..=s {
            for kind in ConstraintKind::ALL {
                out.push(WhrtConstraint::new(kind, r, s).unwrap());
            }
        }
    }
    out
}

/// Whether the constraint bounds loss runs by less than `s` (so a finite
/// lifted graph exists).
pub fn bounded_loss_runs(c: &WhrtConstraint) -> bool {
    match c.kind() {
        ConstraintKind::AnyMiss | ConstraintKind::RowMiss => c.r() < c.s(),
        _ => true,
    }
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Random plant with `A` scaled to spectral radius `rho`; one input, one
/// disturbance and one performance output.
pub fn random_plant(rng: &mut ChaCha8Rng, n: usize, rho: f64) -> Plant {
    let mut uniform = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
    let mut a = uniform(n, n);
    let radius = spectral_radius(&a).max(1e-3);
    a *= rho / radius;
    Plant::new(
        a,
        uniform(n, 1),
        uniform(n, 1),
        uniform(1, n),
        uniform(1, 1),
        uniform(1, 1),
    )
    .unwrap()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| scale * rng.random_range(-1.0..1.0))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn reference_gain() -> DMatrix<f64> {
    DMatrix::from_row_slice(1, 2, &[-0.35, -0.85])
}
