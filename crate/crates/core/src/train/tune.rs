use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::GaussianProcess;
use crate::model::LambdaTriple;
use crate::{Error, Result};

/// 0.1 to 0.9 in steps of 0.3; 0.9 itself is not on the lattice.
pub const GRID_VALUES: [f64; 3] = [0.1, 0.4, 0.7];

const INITIAL_POINTS: usize = 3;
const EI_XI: f64 = 0.01;

/// Which losses are switched on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Configuration {
    /// Summary loss only.
    GenOnly,
    /// Summary and entity-chain losses.
    DualMoo,
    /// Summary, knowledge and entity-chain losses.
    TripleMoo,
}

impl Configuration {
    pub const ALL: [Configuration; 3] = [
        Configuration::GenOnly,
        Configuration::DualMoo,
        Configuration::TripleMoo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Configuration::GenOnly => "gen_only",
            Configuration::DualMoo => "dual_moo",
            Configuration::TripleMoo => "triple_moo",
        }
    }

    /// Whether `(gen, k, e)` are free.
    pub fn mask(self) -> [bool; 3] {
        match self {
            Configuration::GenOnly => [true, false, false],
            Configuration::DualMoo => [true, false, true],
            Configuration::TripleMoo => [true, true, true],
        }
    }

    /// Weights used when no search is run.
    pub fn default_lambdas(self) -> LambdaTriple {
        let [g, k, e] = self.mask();
        LambdaTriple {
            lambda_gen: if g { 0.7 } else { 0.0 },
            lambda_k: if k { 0.1 } else { 0.0 },
            lambda_e: if e { 0.4 } else { 0.0 },
        }
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Configuration {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Configuration::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "unknown configuration {s:?}; expected gen_only, dual_moo or triple_moo"
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaGrid {
    pub values: Vec<f64>,
    pub configuration: Configuration,
}

impl LambdaGrid {
    pub fn new(configuration: Configuration) -> Self {
        LambdaGrid {
            values: GRID_VALUES.to_vec(),
            configuration,
        }
    }

    /// Grid points with masked axes pinned at zero, gen-major order.
    pub fn points(&self) -> Vec<LambdaTriple> {
        let axis = |free: bool| if free { self.values.clone() } else { vec![0.0] };
        let [g, k, e] = self.configuration.mask();
        let mut out = Vec::new();
        for &lg in &axis(g) {
            for &lk in &axis(k) {
                for &le in &axis(e) {
                    out.push(LambdaTriple {
                        lambda_gen: lg,
                        lambda_k: lk,
                        lambda_e: le,
                    });
                }
            }
        }
        out
    }

    /// Free axes rescaled to [0, 1].
    fn unit(&self, l: &LambdaTriple) -> Vec<f64> {
        let lo = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        l.as_array()
            .iter()
            .zip(self.configuration.mask())
            .filter(|(_, free)| *free)
            .map(|(v, _)| (v - lo) / span)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    /// In evaluation order; non-finite objective values are stored as `+∞`.
    pub evaluated: Vec<(LambdaTriple, f64)>,
    pub best: (LambdaTriple, f64),
    pub evaluations: usize,
}

/// Bayesian optimization over the grid: three seeded random points, then a
/// GP surrogate picks the un-evaluated point with the largest expected
/// improvement. A budget covering the whole grid evaluates every point.
pub fn tune_lambdas(
    mut objective: impl FnMut(&LambdaTriple) -> f64,
    grid: &LambdaGrid,
    budget: usize,
    seed: u64,
) -> Result<TuneResult> {
    if budget < 2 {
        return Err(Error::InvalidInput(format!("tuning budget must be at least 2, got {budget}")));
    }
    let points = grid.points();
    let coords: Vec<Vec<f64>> = points.iter().map(|p| grid.unit(p)).collect();
    let budget = budget.min(points.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut done = vec![false; points.len()];
    let mut order: Vec<usize> = Vec::with_capacity(budget);
    let mut values: Vec<f64> = Vec::with_capacity(budget);

    let mut evaluate = |i: usize, done: &mut Vec<bool>, order: &mut Vec<usize>, values: &mut Vec<f64>| {
        let v = objective(&points[i]);
        done[i] = true;
        order.push(i);
        values.push(if v.is_finite() { v } else { f64::INFINITY });
    };

    for i in rand::seq::index::sample(&mut rng, points.len(), INITIAL_POINTS.min(budget)) {
        evaluate(i, &mut done, &mut order, &mut values);
    }
    while order.len() < budget {
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        let (lo, hi) = finite
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        // Failed evaluations look like a clearly bad value to the surrogate.
        let penalty = if finite.is_empty() { 0.0 } else { hi + (hi - lo) + 1.0 };
        let ys: Vec<f64> = values
            .iter()
            .map(|&v| if v.is_finite() { v } else { penalty })
            .collect();
        let xs: Vec<Vec<f64>> = order.iter().map(|&i| coords[i].clone()).collect();
        let gp = GaussianProcess::fit(&xs, &ys)?;
        let best_y = ys.iter().copied().fold(f64::INFINITY, f64::min);
        let mut pick: Option<(usize, f64)> = None;
        for i in (0..points.len()).filter(|&i| !done[i]) {
            let ei = gp.expected_improvement(&coords[i], best_y, EI_XI);
            if pick.is_none_or(|(_, b)| ei > b) {
                pick = Some((i, ei));
            }
        }
        let (i, _) = pick.expect("budget never exceeds the grid size");
        evaluate(i, &mut done, &mut order, &mut values);
    }

    let evaluated: Vec<(LambdaTriple, f64)> =
        order.iter().zip(&values).map(|(&i, &v)| (points[i], v)).collect();
    let best = evaluated
        .iter()
        .copied()
        .filter(|(_, v)| v.is_finite())
        .fold(None::<(LambdaTriple, f64)>, |acc, cur| match acc {
            Some(a) if a.1 <= cur.1 => Some(a),
            _ => Some(cur),
        })
        .ok_or_else(|| Error::InvalidInput("every tuning evaluation was non-finite".into()))?;
    Ok(TuneResult {
        evaluations: evaluated.len(),
        evaluated,
        best,
    })
}
