//! Posterior summaries of transition functionals over lag grids, written as
//! whitespace-separated columns for plotting.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::statistics::{Data, OrderStatistics};

use crate::error::{Error, Result};
use crate::model::ModelState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Functional {
    /// Transition density at each of the given response values.
    Density {
        y: Vec<f64>,
    },
    Mean,
    Quantile {
        u: f64,
    },
}

/// How lags that are not varied on the grid get their values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum FixedLagPolicy {
    /// One value per lag; entries for varied lags are ignored.
    FixAtValue(Vec<f64>),
    /// Independent uniform draws on `[lo, hi]`, fresh for each posterior draw.
    UniformRandom { lo: f64, hi: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GridSpec {
    /// `(0-based lag index, values)` for at most two lags.
    pub varied: Vec<(usize, Vec<f64>)>,
    pub fixed: FixedLagPolicy,
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl GridTable {
    pub fn to_text(&self) -> String {
        let mut s = self.columns.join(" ");
        s.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|v| format!("{v:?}")).collect();
            writeln!(s, "{}", cells.join(" ")).unwrap();
        }
        s
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

fn check(draws: &[ModelState], functional: &Functional, grid: &GridSpec) -> Result<usize> {
    let first = draws
        .first()
        .ok_or_else(|| Error::Domain("no posterior draws".into()))?;
    let l = first.lags();
    if grid.varied.is_empty() || grid.varied.len() > 2 {
        return Err(Error::Domain(format!(
            "grid must vary one or two lags, got {}",
            grid.varied.len()
        )));
    }
    for (k, values) in &grid.varied {
        if *k >= l {
            return Err(Error::Domain(format!("lag index {} outside 1..={l}", k + 1)));
        }
        if values.is_empty() {
            return Err(Error::Domain(format!("no grid values for lag {}", k + 1)));
        }
    }
    if grid.varied.len() == 2 && grid.varied[0].0 == grid.varied[1].0 {
        return Err(Error::Domain("the two varied lags must differ".into()));
    }
    match &grid.fixed {
        FixedLagPolicy::FixAtValue(v) if v.len() != l => {
            return Err(Error::Dimension {
                what: "fixed lag values",
                expected: l,
                got: v.len(),
            })
        }
        FixedLagPolicy::UniformRandom { lo, hi, .. } if !(lo <= hi) => {
            return Err(Error::Domain(format!("uniform range [{lo}, {hi}] is empty")))
        }
        _ => {}
    }
    match functional {
        Functional::Quantile { u } if !(*u > 0.0 && *u < 1.0) => {
            return Err(Error::Domain(format!("quantile level {u} outside (0, 1)")))
        }
        Functional::Density { y } if y.is_empty() => return Err(Error::Domain("density needs response values".into())),
        _ => {}
    }
    if draws.iter().any(|d| d.lags() != l) {
        return Err(Error::Domain("draws disagree on the number of lags".into()));
    }
    Ok(l)
}

/// Evaluate `functional` for every draw at every grid point, then report the
/// pointwise posterior mean and central 95% interval.
pub fn export_grid(draws: &[ModelState], functional: &Functional, grid: &GridSpec) -> Result<GridTable> {
    let l = check(draws, functional, grid)?;
    let mut points: Vec<Vec<f64>> = vec![Vec::new()];
    for (_, values) in &grid.varied {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push(*v);
                    q
                })
            })
            .collect();
    }
    let ys: Vec<Option<f64>> = match functional {
        Functional::Density { y } => y.iter().map(|v| Some(*v)).collect(),
        _ => vec![None],
    };

    let mut base: Vec<Vec<f64>> = Vec::with_capacity(draws.len());
    let mut rng = match grid.fixed {
        FixedLagPolicy::UniformRandom { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
        _ => None,
    };
    for _ in draws {
        base.push(match &grid.fixed {
            FixedLagPolicy::FixAtValue(v) => v.clone(),
            FixedLagPolicy::UniformRandom { lo, hi, .. } => {
                let r = rng.as_mut().unwrap();
                (0..l).map(|_| lo + (hi - lo) * r.random::<f64>()).collect()
            }
        });
    }

    let mut columns: Vec<String> = grid.varied.iter().map(|(k, _)| format!("lag{}", k + 1)).collect();
    if matches!(functional, Functional::Density { .. }) {
        columns.push("y".into());
    }
    columns.extend(["mean", "q025", "q975"].map(String::from));

    let mut rows = Vec::with_capacity(points.len() * ys.len());
    for p in &points {
        for y in &ys {
            let mut vals = Vec::with_capacity(draws.len());
            for (d, b) in draws.iter().zip(&base) {
                let mut x = b.clone();
                for ((k, _), v) in grid.varied.iter().zip(p) {
                    x[*k] = *v;
                }
                let t = d.transition_at(&x)?;
                vals.push(match functional {
                    Functional::Density { .. } => t.density(y.unwrap()),
                    Functional::Mean => t.mean(),
                    Functional::Quantile { u } => t.quantile(*u)?,
                });
            }
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let mut data = Data::new(vals);
            let mut row = p.clone();
            if let Some(y) = y {
                row.push(*y);
            }
            row.extend([mean, data.quantile(0.025), data.quantile(0.975)]);
            rows.push(row);
        }
    }
    Ok(GridTable { columns, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lagselect::{LagSelectionState, SelectionMode};
    use crate::model::{ComponentParams, MixingState};

    fn symmetric_state() -> ModelState {
        // two mirror-image components about x = 0, y = 0
        let comp = |m: f64| ComponentParams {
            mu_y: m,
            beta_y: vec![0.3, 0.0],
            sigma2: 0.5,
            mu_x: vec![m, m],
            beta_x: Vec::new(),
            delta_x: vec![1.0, 1.0],
        };
        ModelState {
            components: vec![comp(1.0), comp(-1.0)],
            mixing: MixingState::new(vec![0.5], vec![0, 1], 1.0).unwrap(),
            selection: LagSelectionState::new(SelectionMode::None, 2, 2),
        }
    }

    #[test]
    fn single_draw_has_degenerate_interval() {
        let st = symmetric_state();
        let grid = GridSpec {
            varied: vec![(0, linspace(-2.0, 2.0, 5))],
            fixed: FixedLagPolicy::FixAtValue(vec![0.0, 0.3]),
        };
        let t = export_grid(std::slice::from_ref(&st), &Functional::Mean, &grid).unwrap();
        assert_eq!(t.columns, vec!["lag1", "mean", "q025", "q975"]);
        for r in &t.rows {
            let direct = st.transition_at(&[r[0], 0.3]).unwrap().mean();
            assert!((r[1] - direct).abs() < 1e-12);
            assert_eq!(r[1], r[2]);
            assert_eq!(r[1], r[3]);
        }
    }

    #[test]
    fn symmetric_state_gives_odd_mean_surface() {
        let st = symmetric_state();
        let vals = linspace(-2.0, 2.0, 9);
        let grid = GridSpec {
            varied: vec![(0, vals.clone()), (1, vec![0.0])],
            fixed: FixedLagPolicy::FixAtValue(vec![0.0, 0.0]),
        };
        let t = export_grid(&[st], &Functional::Mean, &grid).unwrap();
        let m = t.column("mean").unwrap();
        for i in 0..vals.len() {
            assert!((m[i] + m[vals.len() - 1 - i]).abs() < 1e-12);
        }
    }

    #[test]
    fn density_grid_has_y_column_and_integrates() {
        let st = symmetric_state();
        let ys = linspace(-12.0, 12.0, 2401);
        let grid = GridSpec {
            varied: vec![(1, vec![0.5])],
            fixed: FixedLagPolicy::FixAtValue(vec![0.2, 0.0]),
        };
        let t = export_grid(&[st], &Functional::Density { y: ys.clone() }, &grid).unwrap();
        assert_eq!(t.columns, vec!["lag2", "y", "mean", "q025", "q975"]);
        let dens = t.column("mean").unwrap();
        let integral: f64 = dens.iter().sum::<f64>() * (ys[1] - ys[0]);
        assert!((integral - 1.0).abs() < 1e-6);
    }

    #[test]
    fn uniform_policy_spreads_draws() {
        let draws = vec![symmetric_state(); 50];
        let grid = GridSpec {
            varied: vec![(0, vec![0.0])],
            fixed: FixedLagPolicy::UniformRandom {
                lo: -3.0,
                hi: 3.0,
                seed: 5,
            },
        };
        // lag 2 has a zero coefficient and moves the median only through the weights
        let t = export_grid(&draws, &Functional::Quantile { u: 0.5 }, &grid).unwrap();
        let r = &t.rows[0];
        assert!(r[2] < r[1] && r[1] < r[3], "{r:?}");
        let fixed = GridSpec {
            varied: vec![(0, vec![0.0])],
            fixed: FixedLagPolicy::FixAtValue(vec![0.0, 0.0]),
        };
        let t2 = export_grid(&draws, &Functional::Quantile { u: 0.5 }, &fixed).unwrap();
        assert_eq!(t2.rows[0][2], t2.rows[0][3]);
    }

    #[test]
    fn invalid_grids() {
        let st = vec![symmetric_state()];
        let fixed = FixedLagPolicy::FixAtValue(vec![0.0, 0.0]);
        let three = GridSpec {
            varied: vec![(0, vec![0.0]), (1, vec![0.0]), (0, vec![1.0])],
            fixed: fixed.clone(),
        };
        assert!(export_grid(&st, &Functional::Mean, &three).is_err());
        let out_of_range = GridSpec {
            varied: vec![(2, vec![0.0])],
            fixed: fixed.clone(),
        };
        assert!(export_grid(&st, &Functional::Mean, &out_of_range).is_err());
        let short = GridSpec {
            varied: vec![(0, vec![0.0])],
            fixed: FixedLagPolicy::FixAtValue(vec![0.0]),
        };
        assert!(export_grid(&st, &Functional::Mean, &short).is_err());
        let ok = GridSpec {
            varied: vec![(0, vec![0.0])],
            fixed,
        };
        assert!(export_grid(&st, &Functional::Quantile { u: 1.0 }, &ok).is_err());
        assert!(export_grid(&[], &Functional::Mean, &ok).is_err());
    }
}
