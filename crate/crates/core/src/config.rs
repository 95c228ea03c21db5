//! Run configuration files (TOML).
//!
//! ```toml
//! constraint = "anyhit(2,3)"
//! strategy = "zero"            # or "hold"
//! K = [[-0.35, -0.85]]          # optional
//!
//! [plant]
//! A = [[0.0, 1.0], [1.0, 1.0]]
//! B = [[1.0], [1.0]]
//! Bw = [[1.0], [1.0]]
//! C = [[1.0, 1.0]]
//! D = [[1.0]]
//! Dw = [[1.0]]
//!
//! [solver]                      # optional
//! epsilon = 1e-7
//! tol_verify = 1e-8
//! bisection = false
//!
//! [simulation]                  # optional
//! horizon = 200
//! seeds = 100
//! t_sweep = 200
//! ```

use std::ops::Range;
use std::path::Path;

use nalgebra::DMatrix;
use serde::Deserialize;
use thiserror::Error;
use toml::Spanned;

use crate::constraints::WhrtConstraint;
use crate::lmi::{SolveStrategy, SolverOptions};
use crate::systems::{Plant, Strategy};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

type RawMatrix = Spanned<Vec<Vec<f64>>>;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlant {
    #[serde(rename = "A")]
    a: RawMatrix,
    #[serde(rename = "B")]
    b: RawMatrix,
    #[serde(rename = "Bw")]
    bw: RawMatrix,
    #[serde(rename = "C")]
    c: RawMatrix,
    #[serde(rename = "D")]
    d: RawMatrix,
    #[serde(rename = "Dw")]
    dw: RawMatrix,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    epsilon: Option<f64>,
    tol_verify: Option<f64>,
    #[serde(default)]
    bisection: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationOptions {
    #[serde(default = "SimulationOptions::default_horizon")]
    pub horizon: usize,
    #[serde(default = "SimulationOptions::default_seeds")]
    pub seeds: u64,
    #[serde(default = "SimulationOptions::default_t_sweep")]
    pub t_sweep: usize,
}

impl SimulationOptions {
    fn default_horizon() -> usize {
        200
    }
    fn default_seeds() -> u64 {
        100
    }
    fn default_t_sweep() -> usize {
        200
    }
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            horizon: Self::default_horizon(),
            seeds: Self::default_seeds(),
            t_sweep: Self::default_t_sweep(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    constraint: Spanned<String>,
    #[serde(default)]
    strategy: Option<Spanned<String>>,
    #[serde(default)]
    hold_initial: Option<Spanned<Vec<f64>>>,
    #[serde(rename = "K", default)]
    k: Option<RawMatrix>,
    plant: RawPlant,
    #[serde(default)]
    solver: RawSolver,
    #[serde(default)]
    simulation: SimulationOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub plant: Plant,
    pub constraint: WhrtConstraint,
    pub strategy: Strategy,
    pub k: Option<DMatrix<f64>>,
    pub solver: SolverOptions,
    pub simulation: SimulationOptions,
}

struct Lines<'a>(&'a str);

impl Lines<'_> {
    fn line_of(&self, offset: usize) -> usize {
        self.0[..offset.min(self.0.len())].matches('\n').count() + 1
    }

    fn err(&self, span: Range<usize>, message: impl Into<String>) -> ConfigError {
        ConfigError::Invalid {
            line: self.line_of(span.start),
            message: message.into(),
        }
    }

    fn matrix(&self, name: &str, raw: &RawMatrix) -> Result<DMatrix<f64>, ConfigError> {
        let rows = raw.get_ref();
        let cols = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || cols == 0 {
            return Err(self.err(raw.span(), format!("{name} must be a non-empty nested array")));
        }
        if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
            return Err(self.err(
                raw.span(),
                format!("{name} row {} has {} entries, expected {cols}", bad + 1, rows[bad].len()),
            ));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(self.err(raw.span(), format!("{name} contains non-finite entries")));
        }
        Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
    }

    fn expect_shape(
        &self,
        name: &str,
        raw: &RawMatrix,
        m: &DMatrix<f64>,
        rows: Option<usize>,
        cols: Option<usize>,
    ) -> Result<(), ConfigError> {
        let row_ok = rows.is_none_or(|r| r == m.nrows());
        let col_ok = cols.is_none_or(|c| c == m.ncols());
        if row_ok && col_ok {
            return Ok(());
        }
        let show = |d: Option<usize>| d.map_or("*".to_string(), |d| d.to_string());
        Err(self.err(
            raw.span(),
            format!(
                "{name} is {}x{}, expected {}x{}",
                m.nrows(),
                m.ncols(),
                show(rows),
                show(cols)
            ),
        ))
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let lines = Lines(text);
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Invalid {
            line: e.span().map_or(0, |s| lines.line_of(s.start)),
            message: e.message().to_string(),
        })?;

        let p = &raw.plant;
        let a = lines.matrix("A", &p.a)?;
        let n = a.nrows();
        lines.expect_shape("A", &p.a, &a, Some(n), Some(n))?;
        let b = lines.matrix("B", &p.b)?;
        lines.expect_shape("B", &p.b, &b, Some(n), None)?;
        let bw = lines.matrix("Bw", &p.bw)?;
        lines.expect_shape("Bw", &p.bw, &bw, Some(n), None)?;
        let c = lines.matrix("C", &p.c)?;
        lines.expect_shape("C", &p.c, &c, None, Some(n))?;
        let d = lines.matrix("D", &p.d)?;
        lines.expect_shape("D", &p.d, &d, Some(c.nrows()), Some(b.ncols()))?;
        let dw = lines.matrix("Dw", &p.dw)?;
        lines.expect_shape("Dw", &p.dw, &dw, Some(c.nrows()), Some(bw.ncols()))?;
        let m = b.ncols();
        let plant = Plant::new(a, b, bw, c, d, dw)
            .map_err(|e| lines.err(p.a.span(), e.to_string()))?;

        let constraint = raw
            .constraint
            .get_ref()
            .parse()
            .map_err(|e: crate::constraints::ConstraintError| {
                lines.err(raw.constraint.span(), e.to_string())
            })?;

        let hold_initial = match &raw.hold_initial {
            Some(u) if u.get_ref().len() != m => {
                return Err(lines.err(
                    u.span(),
                    format!("hold_initial has {} entries, expected {m}", u.get_ref().len()),
                ))
            }
            Some(u) => Some(u.get_ref().clone()),
            None => None,
        };
        let strategy = match raw.strategy.as_ref() {
            None => Strategy::Zero,
            Some(s) => match s.get_ref().trim().to_ascii_lowercase().as_str() {
                "zero" => Strategy::Zero,
                "hold" => Strategy::Hold {
                    initial_input: hold_initial.clone(),
                },
                other => {
                    return Err(lines.err(
                        s.span(),
                        format!("unknown strategy `{other}` (expected zero or hold)"),
                    ))
                }
            },
        };
        if hold_initial.is_some() && !strategy.is_hold() {
            let span = raw.hold_initial.as_ref().map(|u| u.span()).unwrap_or(0..0);
            return Err(lines.err(span, "hold_initial requires strategy = \"hold\""));
        }

        let k = match &raw.k {
            Some(rk) => {
                let k = lines.matrix("K", rk)?;
                lines.expect_shape("K", rk, &k, Some(m), Some(n))?;
                Some(k)
            }
            None => None,
        };

        let solver = SolverOptions {
            epsilon: raw.solver.epsilon,
            tol_verify: raw.solver.tol_verify,
            strategy: if raw.solver.bisection {
                SolveStrategy::Bisection
            } else {
                SolveStrategy::Direct
            },
            ..SolverOptions::default()
        };

        Ok(Self {
            plant,
            constraint,
            strategy,
            k,
            solver,
            simulation: raw.simulation,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"constraint = "AnyHit(2, 3)"
strategy = "zero"
K = [[-0.35, -0.85]]

[plant]
A = [[0.0, 1.0], [1.0, 1.0]]
B = [[1.0], [1.0]]
Bw = [[1.0], [1.0]]
C = [[1.0, 1.0]]
D = [[1.0]]
Dw = [[1.0]]
"#;

    #[test]
    fn parses_the_example() {
        let cfg = RunConfig::parse(EXAMPLE).unwrap();
        assert_eq!(cfg.plant, Plant::example());
        assert_eq!(cfg.constraint, WhrtConstraint::any_hit(2, 3).unwrap());
        assert_eq!(cfg.k, Some(DMatrix::from_row_slice(1, 2, &[-0.35, -0.85])));
        assert_eq!(cfg.simulation, SimulationOptions::default());
        assert_eq!(cfg.solver.strategy, SolveStrategy::Direct);
    }

    #[test]
    fn dimension_errors_point_at_the_matrix() {
        let text = EXAMPLE.replace("C = [[1.0, 1.0]]", "C = [[1.0, 1.0, 2.0]]");
        assert_eq!(
            RunConfig::parse(&text),
            Err(ConfigError::Invalid {
                line: 9,
                message: "C is 1x3, expected *x2".into()
            })
        );
        let ragged = EXAMPLE.replace("A = [[0.0, 1.0], [1.0, 1.0]]", "A = [[0.0, 1.0], [1.0]]");
        assert!(matches!(
            RunConfig::parse(&ragged),
            Err(ConfigError::Invalid { line: 6, .. })
        ));
        let bad_k = EXAMPLE.replace("K = [[-0.35, -0.85]]", "K = [[-0.35]]");
        assert!(matches!(
            RunConfig::parse(&bad_k),
            Err(ConfigError::Invalid { line: 3, .. })
        ));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = EXAMPLE.replace("strategy = \"zero\"", "stratgy = \"zero\"");
        assert!(matches!(
            RunConfig::parse(&text),
            Err(ConfigError::Invalid { line: 2, .. })
        ));
        let text = format!("{EXAMPLE}\n[solver]\nepsilon = 1e-6\nfoo = 1\n");
        assert!(RunConfig::parse(&text).is_err());
    }

    #[test]
    fn hold_strategy_and_options() {
        let text = EXAMPLE.replace(
            "strategy = \"zero\"",
            "strategy = \"hold\"\nhold_initial = [0.5]",
        ) + "\n[solver]\nbisection = true\n\n[simulation]\nseeds = 5\n";
        let cfg = RunConfig::parse(&text).unwrap();
        assert_eq!(
            cfg.strategy,
            Strategy::Hold {
                initial_input: Some(vec![0.5])
            }
        );
        assert_eq!(cfg.solver.strategy, SolveStrategy::Bisection);
        assert_eq!(cfg.simulation.seeds, 5);
        assert_eq!(cfg.simulation.horizon, 200);
    }

    #[test]
    fn bad_constraint_text() {
        let text = EXAMPLE.replace("AnyHit(2, 3)", "anyhit(5,3)");
        assert!(matches!(
            RunConfig::parse(&text),
            Err(ConfigError::Invalid { line: 1, .. })
        ));
    }
}
