//! Forward simulation of the loop under loss sequences, empirical gain
//! estimation, admissible sampling, and a worst-case search over periodic
//! loss patterns.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::constraints::{LossSequence, WhrtConstraint};
use crate::graph::{build_graph, build_lifted_graph, GraphError, NodeTracker, WhrtGraph};
use crate::lmi::Controller;
use crate::systems::{closed_loop, ModeMatrices, Plant, Strategy, SystemError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("the first control attempt must succeed (mu_0 = 1)")]
    InvalidFirstAttempt,
    #[error("disturbance has zero energy; the gain ratio is undefined")]
    ZeroDisturbance,
    #[error("gain estimates need a zero initial state")]
    NonZeroInitialState,
    #[error("worst-case search needs a budget of at least one candidate")]
    EmptyBudget,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error("csv export: {0}")]
    Csv(#[from] csv::Error),
}

/// Recorded run: `x` has `horizon + 1` entries, the other signals `horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub x: Vec<DVector<f64>>,
    pub u_a: Vec<DVector<f64>>,
    pub w: Vec<DVector<f64>>,
    pub z: Vec<DVector<f64>>,
    pub mu: LossSequence,
    pub horizon: usize,
}

impl SimulationTrace {
    pub fn output_energy(&self) -> f64 {
        self.z.iter().map(|z| z.norm_squared()).sum()
    }

    pub fn disturbance_energy(&self) -> f64 {
        self.w.iter().map(|w| w.norm_squared()).sum()
    }

    /// CSV with columns `k, mu_k, x_*, u_a_*, w_*, z_*`, one row per step.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        let dims = |v: &[DVector<f64>]| v.first().map_or(0, |e| e.len());
        let mut header = vec!["k".to_string(), "mu_k".to_string()];
        for (name, n) in [
            ("x", dims(&self.x)),
            ("u_a", dims(&self.u_a)),
            ("w", dims(&self.w)),
            ("z", dims(&self.z)),
        ] {
            header.extend((1..=n).map(|i| format!("{name}_{i}")));
        }
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(&header)?;
        for k in 0..self.horizon {
            let mut row = vec![k.to_string(), u8::from(self.mu.bits()[k]).to_string()];
            for signal in [&self.x[k], &self.u_a[k], &self.w[k], &self.z[k]] {
                row.extend(signal.iter().map(|v| format!("{v:e}")));
            }
            writer.write_record(&row)?;
        }
        writer.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

fn check_inputs(
    plant: &Plant,
    mu: &LossSequence,
    w: &[DVector<f64>],
    x0: &DVector<f64>,
) -> Result<(), SimError> {
    if mu.bits().first() != Some(&true) {
        return Err(SimError::InvalidFirstAttempt);
    }
    if w.len() < mu.len() {
        return Err(SimError::DimensionMismatch(format!(
            "{} disturbance samples for horizon {}",
            w.len(),
            mu.len()
        )));
    }
    if let Some(bad) = w.iter().position(|wk| wk.len() != plant.q()) {
        return Err(SimError::DimensionMismatch(format!(
            "w_{bad} has length {}, expected {}",
            w[bad].len(),
            plant.q()
        )));
    }
    if x0.len() != plant.n() {
        return Err(SimError::DimensionMismatch(format!(
            "x0 has length {}, expected {}",
            x0.len(),
            plant.n()
        )));
    }
    Ok(())
}

/// Exact recursion of plant, state feedback and loss strategy over the
/// horizon `mu.len()`.
pub fn simulate(
    plant: &Plant,
    k: &DMatrix<f64>,
    strategy: &Strategy,
    mu: &LossSequence,
    w: &[DVector<f64>],
    x0: &DVector<f64>,
) -> Result<SimulationTrace, SimError> {
    plant.check_gain(k)?;
    run(plant, strategy, mu, w, x0, |_| Ok(k))
}

/// Simulation with a static or node-switched controller. Switched gains are
/// scheduled by tracking the loss counts between successes on the lifted
/// graph, which only switched controllers need.
pub fn simulate_controller(
    plant: &Plant,
    controller: &Controller,
    lifted: Option<&WhrtGraph>,
    strategy: &Strategy,
    mu: &LossSequence,
    w: &[DVector<f64>],
    x0: &DVector<f64>,
) -> Result<SimulationTrace, SimError> {
    match controller {
        Controller::Static(k) => simulate(plant, k, strategy, mu, w, x0),
        Controller::Switched(gains) => {
            let lifted = lifted.ok_or(GraphError::NotLifted)?;
            if gains.len() != lifted.node_count() {
                return Err(SimError::DimensionMismatch(format!(
                    "{} gains for {} nodes",
                    gains.len(),
                    lifted.node_count()
                )));
            }
            for k in gains {
                plant.check_gain(k)?;
            }
            let mut tracker = NodeTracker::at_initial(lifted)?;
            let mut last_success: Option<usize> = None;
            run(plant, strategy, mu, w, x0, move |step| {
                if let Some(prev) = last_success {
                    tracker = tracker.step(step - prev - 1)?;
                }
                last_success = Some(step);
                Ok(&gains[tracker.current()])
            })
        }
    }
}

fn run<'k>(
    plant: &Plant,
    strategy: &Strategy,
    mu: &LossSequence,
    w: &[DVector<f64>],
    x0: &DVector<f64>,
    mut gain_at_success: impl FnMut(usize) -> Result<&'k DMatrix<f64>, GraphError>,
) -> Result<SimulationTrace, SimError> {
    check_inputs(plant, mu, w, x0)?;
    let horizon = mu.len();
    let mut u_prev = match strategy {
        Strategy::Hold {
            initial_input: Some(u),
        } => {
            if u.len() != plant.m() {
                return Err(SimError::DimensionMismatch(format!(
                    "held initial input has length {}, expected {}",
                    u.len(),
                    plant.m()
                )));
            }
            DVector::from_column_slice(u)
        }
        _ => DVector::zeros(plant.m()),
    };
    let mut x = Vec::with_capacity(horizon + 1);
    let mut u_a = Vec::with_capacity(horizon);
    let mut z = Vec::with_capacity(horizon);
    x.push(x0.clone());
    for step in 0..horizon {
        let xk = &x[step];
        let u = if mu.bits()[step] {
            gain_at_success(step)? * xk
        } else {
            match strategy {
                Strategy::Zero => DVector::zeros(plant.m()),
                Strategy::Hold { .. } => u_prev.clone(),
            }
        };
        let wk = &w[step];
        let next = plant.a() * xk + plant.b() * &u + plant.bw() * wk;
        z.push(plant.c() * xk + plant.d() * &u + plant.dw() * wk);
        x.push(next);
        u_prev = u.clone();
        u_a.push(u);
    }
    Ok(SimulationTrace {
        x,
        u_a,
        w: w[..horizon].to_vec(),
        z,
        mu: mu.clone(),
        horizon,
    })
}

/// Largest `sqrt(Σ zᵀz / Σ wᵀw)` over the traces; a lower bound on the
/// l2 gain.
pub fn empirical_gain(traces: &[SimulationTrace]) -> Result<f64, SimError> {
    let mut best: f64 = 0.0;
    for t in traces {
        if t.x.first().is_some_and(|x0| x0.iter().any(|v| *v != 0.0)) {
            return Err(SimError::NonZeroInitialState);
        }
        let ww = t.disturbance_energy();
        if ww <= 0.0 {
            return Err(SimError::ZeroDisturbance);
        }
        best = best.max((t.output_energy() / ww).sqrt());
    }
    Ok(best)
}

/// `w_k = 1` in every channel for `k < t`, zero afterwards.
pub fn step_disturbance(q: usize, t: usize, horizon: usize) -> Vec<DVector<f64>> {
    (0..horizon)
        .map(|k| DVector::from_element(q, if k < t { 1.0 } else { 0.0 }))
        .collect()
}

/// Independent uniform samples in `[-1, 1]`, deterministic given the seed.
pub fn random_disturbance(q: usize, horizon: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..horizon)
        .map(|_| DVector::from_fn(q, |_, _| rng.random_range(-1.0..=1.0)))
        .collect()
}

/// Result of sweeping the support length of a step disturbance.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSweep {
    pub gain: f64,
    pub best_t: usize,
    pub trace: SimulationTrace,
}

/// Largest empirical gain over steps of length `1..=t_max` under the
/// periodic loss pattern. Each run continues after the step until the
/// state norm drops below `1e-9` of its peak (capped), so the truncated
/// tail is negligible.
pub fn step_sweep(
    plant: &Plant,
    controller: &Controller,
    lifted: Option<&WhrtGraph>,
    strategy: &Strategy,
    pattern: &LossSequence,
    t_max: usize,
) -> Result<StepSweep, SimError> {
    const MAX_TAIL: usize = 20_000;
    let mut best: Option<StepSweep> = None;
    let x0 = DVector::zeros(plant.n());
    for t in 1..=t_max {
        let mut tail = 64;
        let trace = loop {
            let horizon = t + tail;
            let mu = LossSequence::periodic(pattern, horizon);
            let w = step_disturbance(plant.q(), t, horizon);
            let trace = simulate_controller(plant, controller, lifted, strategy, &mu, &w, &x0)?;
            let peak = trace.x.iter().map(|x| x.norm()).fold(0.0, f64::max);
            let last = trace.x.last().map_or(0.0, |x| x.norm());
            if last <= 1e-9 * peak || tail >= MAX_TAIL {
                break trace;
            }
            tail *= 2;
        };
        let gain = empirical_gain(std::slice::from_ref(&trace))?;
        if best.as_ref().is_none_or(|b| gain > b.gain) {
            best = Some(StepSweep {
                gain,
                best_t: t,
                trace,
            });
        }
    }
    best.ok_or(SimError::ZeroDisturbance)
}

/// Seeded random walk on the constraint graph producing admissible words
/// that start with a success.
#[derive(Debug, Clone)]
pub struct AdmissibleSampler {
    graph: WhrtGraph,
    rng: ChaCha8Rng,
}

impl AdmissibleSampler {
    pub fn new(c: &WhrtConstraint, seed: u64) -> Result<Self, SimError> {
        Ok(Self {
            graph: build_graph(c)?,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Uniform choice among outgoing edges at every step, starting from a
    /// random initial node with a success edge.
    pub fn sample(&mut self, length: usize) -> LossSequence {
        let g = &self.graph;
        let starts: Vec<usize> = g
            .initial_nodes()
            .iter()
            .copied()
            .filter(|&v| g.out_edges(v).any(|e| e.label == 1))
            .collect();
        let mut node = starts[self.rng.random_range(0..starts.len())];
        let mut bits = Vec::with_capacity(length);
        for step in 0..length {
            let choices: Vec<_> = g
                .out_edges(node)
                .filter(|e| step > 0 || e.label == 1)
                .collect();
            let e = choices[self.rng.random_range(0..choices.len())];
            bits.push(e.label == 1);
            node = e.to;
        }
        LossSequence::new(bits)
    }
}

pub fn random_admissible(c: &WhrtConstraint, length: usize, seed: u64) -> Result<LossSequence, SimError> {
    Ok(AdmissibleSampler::new(c, seed)?.sample(length))
}

/// One loss sequence examined by the worst-case search.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    /// One period of the pattern, or `None` for a random sample.
    pub pattern: Option<LossSequence>,
    pub mu: LossSequence,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorstCase {
    pub mu: LossSequence,
    pub w: Vec<DVector<f64>>,
    /// Achieved ratio; a lower bound on the l2 gain.
    pub gain: f64,
    /// Set when the budget ran out before all short cycles were examined.
    pub budget_exhausted: bool,
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerIteration {
    pub w: Vec<DVector<f64>>,
    pub gain: f64,
    /// Gain estimate after every iteration.
    pub history: Vec<f64>,
}

/// Maximizes `‖z‖ / ‖w‖` over disturbances on a finite horizon for a fixed
/// mode sequence by power iteration on `TᵀT`, where `T: w ↦ z` runs from a
/// zero state and `Tᵀ` is evaluated by the backward adjoint recursion.
pub fn power_iteration(
    modes: &[ModeMatrices; 2],
    mu: &LossSequence,
    iterations: usize,
) -> PowerIteration {
    let horizon = mu.len();
    let mode_at = |k: usize| &modes[usize::from(mu.bits()[k])];
    let q = modes[0].input_dim();
    let forward = |w: &[DVector<f64>]| -> Vec<DVector<f64>> {
        let mut x = DVector::zeros(modes[0].state_dim());
        w.iter()
            .enumerate()
            .map(|(k, wk)| {
                let (next, z) = mode_at(k).step(&x, wk);
                x = next;
                z
            })
            .collect()
    };
    let adjoint = |y: &[DVector<f64>]| -> Vec<DVector<f64>> {
        let mut lambda = DVector::zeros(modes[0].state_dim());
        let mut out = vec![DVector::zeros(q); horizon];
        for k in (0..horizon).rev() {
            let m = mode_at(k);
            out[k] = m.bw.transpose() * &lambda + m.dw.transpose() * &y[k];
            lambda = m.a.transpose() * &lambda + m.c.transpose() * &y[k];
        }
        out
    };
    let norm = |v: &[DVector<f64>]| v.iter().map(|e| e.norm_squared()).sum::<f64>().sqrt();
    let normalize = |v: &mut Vec<DVector<f64>>| {
        let n = norm(v);
        if n > 0.0 {
            v.iter_mut().for_each(|e| *e /= n);
        }
    };

    let mut w = vec![DVector::from_element(q, 1.0); horizon];
    normalize(&mut w);
    let mut z = forward(&w);
    let mut gain = norm(&z);
    let mut history = vec![gain];
    for _ in 0..iterations {
        let mut next = adjoint(&z);
        if norm(&next) == 0.0 {
            break;
        }
        normalize(&mut next);
        let next_z = forward(&next);
        let next_gain = norm(&next_z);
        history.push(next_gain);
        let converged = (next_gain - gain).abs() <= 1e-12 * next_gain.max(1.0);
        w = next;
        z = next_z;
        gain = next_gain;
        if converged {
            break;
        }
    }
    PowerIteration { w, gain, history }
}

/// Simple cycles, as label words, enumerated from each start node over
/// nodes with larger index, shortest-first within each start. Returns the
/// cycles and whether the cap cut the enumeration short.
fn simple_cycles(g: &WhrtGraph, max_len: usize, cap: usize) -> (Vec<Vec<usize>>, bool) {
    let mut cycles = Vec::new();
    for start in 0..g.node_count() {
        let mut stack: Vec<(usize, Vec<usize>, Vec<usize>)> = vec![(start, vec![start], Vec::new())];
        while let Some((node, path, labels)) = stack.pop() {
            let mut pushes = Vec::new();
            for e in g.out_edges(node) {
                let mut word = labels.clone();
                word.push(e.label);
                if e.to == start {
                    if cycles.len() == cap {
                        return (cycles, true);
                    }
                    cycles.push(word);
                } else if e.to > start && !path.contains(&e.to) && word.len() < max_len {
                    let mut p = path.clone();
                    p.push(e.to);
                    pushes.push((e.to, p, word));
                }
            }
            // keep label order when popping
            stack.extend(pushes.into_iter().rev());
        }
    }
    (cycles, false)
}

/// Searches periodic loss patterns from short graph cycles (and random
/// admissible words with any remaining budget) for the largest
/// finite-horizon gain. `budget` bounds the number of loss sequences
/// examined.
pub fn worst_case_search(
    plant: &Plant,
    k: &DMatrix<f64>,
    strategy: &Strategy,
    c: &WhrtConstraint,
    horizon: usize,
    budget: usize,
) -> Result<WorstCase, SimError> {
    worst_case_search_seeded(plant, k, strategy, c, horizon, budget, 0)
}

pub fn worst_case_search_seeded(
    plant: &Plant,
    k: &DMatrix<f64>,
    strategy: &Strategy,
    c: &WhrtConstraint,
    horizon: usize,
    budget: usize,
    seed: u64,
) -> Result<WorstCase, SimError> {
    const ITERATIONS: usize = 300;
    if budget == 0 {
        return Err(SimError::EmptyBudget);
    }
    let max_len = 3 * c.s();
    // Patterns as μ periods starting with a success.
    let (patterns, exhausted) = match build_lifted_graph(c) {
        Ok(lifted) => {
            let (cycles, cut) = simple_cycles(&lifted, max_len, budget);
            let patterns = cycles.iter().flat_map(|alphas| rotations(alphas)).map(|alphas| {
                let mut bits = Vec::new();
                for a in alphas {
                    bits.push(true);
                    bits.extend(std::iter::repeat_n(false, a));
                }
                LossSequence::new(bits)
            });
            (dedup_capped(patterns, budget), cut)
        }
        Err(GraphError::UnboundedLossRun) => {
            let g = build_graph(c)?;
            let (cycles, cut) = simple_cycles(&g, max_len, budget);
            let patterns = cycles
                .iter()
                .flat_map(|labels| rotations(labels))
                .filter(|labels| labels[0] == 1)
                .map(|labels| LossSequence::new(labels.iter().map(|&l| l == 1).collect()));
            (dedup_capped(patterns, budget), cut)
        }
        Err(e) => return Err(e.into()),
    };
    let exhausted = exhausted || patterns.len() == budget;

    let mut sequences: Vec<(Option<LossSequence>, LossSequence)> = patterns
        .into_iter()
        .map(|p| {
            let mu = LossSequence::periodic(&p, horizon);
            (Some(p), mu)
        })
        .collect();
    if !exhausted {
        let mut sampler = AdmissibleSampler::new(c, seed)?;
        while sequences.len() < budget {
            sequences.push((None, sampler.sample(horizon)));
        }
    }

    let cl = closed_loop(plant, k, strategy)?;
    let modes = [cl.mode(0).clone(), cl.mode(1).clone()];
    let results: Vec<(Candidate, Vec<DVector<f64>>)> = sequences
        .into_par_iter()
        .map(|(pattern, mu)| {
            let pi = power_iteration(&modes, &mu, ITERATIONS);
            (
                Candidate {
                    pattern,
                    mu,
                    gain: pi.gain,
                },
                pi.w,
            )
        })
        .collect();

    let mut best: Option<&(Candidate, Vec<DVector<f64>>)> = None;
    for r in &results {
        let better = match best {
            None => true,
            Some(b) => {
                r.0.gain > b.0.gain || (r.0.gain == b.0.gain && r.0.mu.bits() < b.0.mu.bits())
            }
        };
        if better {
            best = Some(r);
        }
    }
    let (cand, w) = best.expect("budget is at least one").clone();
    Ok(WorstCase {
        mu: cand.mu,
        w,
        gain: cand.gain,
        budget_exhausted: exhausted,
        candidates: results.into_iter().map(|(c, _)| c).collect(),
    })
}

fn rotations(word: &[usize]) -> Vec<Vec<usize>> {
    (0..word.len())
        .map(|i| word[i..].iter().chain(&word[..i]).copied().collect())
        .collect()
}

fn dedup_capped(patterns: impl Iterator<Item = LossSequence>, cap: usize) -> Vec<LossSequence> {
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for p in patterns {
        if out.len() == cap {
            break;
        }
        if seen.insert(p.clone()) {
            out.push(p);
        }
    }
    out
}
