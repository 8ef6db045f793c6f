//! Natural cubic spline basis (truncated power form), one additive block per
//! continuous history coordinate.

use serde::{Deserialize, Serialize};

/// Interior knot quantiles.
pub const KNOT_QUANTILES: [f64; 3] = [0.25, 0.5, 0.75];

#[inline]
fn cube_plus(x: f64) -> f64 {
    if x > 0.0 {
        x * x * x
    } else {
        0.0
    }
}

/// Natural cubic spline terms beyond the linear one: `N_{k+2} = d_k - d_{K-1}`,
/// `d_k(x) = ((x-ξ_k)_+^3 - (x-ξ_K)_+^3) / (ξ_K - ξ_k)`, for `k = 1..K-2`.
pub fn natural_terms(x: f64, knots: &[f64], out: &mut Vec<f64>) {
    let k = knots.len();
    let last = knots[k - 1];
    let d = |j: usize| (cube_plus(x - knots[j]) - cube_plus(x - last)) / (last - knots[j]);
    let d_penultimate = d(k - 2);
    for j in 0..k - 2 {
        out.push(d(j) - d_penultimate);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SplineCoord {
    /// Binary or degenerate coordinate, entered linearly.
    Linear,
    /// Rescaled by `(x - lo) / (hi - lo)`; `knots` are on the rescaled axis and
    /// include the boundary knots 0 and 1.
    Natural { lo: f64, hi: f64, knots: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineMap {
    pub p1: usize,
    pub p2: usize,
    pub coords: Vec<SplineCoord>,
}

impl SplineMap {
    pub fn dim(&self) -> usize {
        1 + self
            .coords
            .iter()
            .map(|c| match c {
                SplineCoord::Linear => 1,
                SplineCoord::Natural { knots, .. } => 1 + knots.len() - 2,
            })
            .sum::<usize>()
    }

    pub fn featurize(&self, h: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        out.push(1.0);
        for (x, c) in h.iter().zip(&self.coords) {
            match c {
                SplineCoord::Linear => out.push(*x),
                SplineCoord::Natural { lo, hi, knots } => {
                    let t = (x - lo) / (hi - lo);
                    out.push(t);
                    natural_terms(t, knots, &mut out);
                }
            }
        }
        out
    }

    /// Builds knots from the empirical distribution of each history column.
    pub fn fit(p1: usize, p2: usize, columns: &[Vec<f64>]) -> SplineMap {
        let coords = columns.iter().map(|col| fit_coord(col)).collect();
        SplineMap { p1, p2, coords }
    }
}

fn fit_coord(col: &[f64]) -> SplineCoord {
    if super::is_binary_column(col) {
        return SplineCoord::Linear;
    }
    let mut sorted = col.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    if !(hi > lo) {
        return SplineCoord::Linear;
    }
    let mut knots = vec![0.0];
    for q in KNOT_QUANTILES {
        knots.push((quantile_sorted(&sorted, q) - lo) / (hi - lo));
    }
    knots.push(1.0);
    if knots.windows(2).any(|w| !(w[1] > w[0])) {
        return SplineCoord::Linear;
    }
    SplineCoord::Natural { lo, hi, knots }
}

/// Linear-interpolation quantile (type 7) of a sorted sample.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 >= sorted.len() {
        sorted[sorted.len() - 1]
    } else {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    }
}
