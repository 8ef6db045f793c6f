//! Daubechies 4-tap scaling function and mother wavelet, tabulated by the
//! cascade (dyadic refinement) algorithm and evaluated by linear interpolation.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

/// Table resolution is `2^-RESOLUTION` on the support `[0, 3]`.
const RESOLUTION: u32 = 12;
const SUPPORT: usize = 3;

/// Refinement coefficients normalised so that they sum to 2.
pub fn d4_coefficients() -> [f64; 4] {
    let s3 = 3f64.sqrt();
    [(1.0 + s3) / 4.0, (3.0 + s3) / 4.0, (3.0 - s3) / 4.0, (1.0 - s3) / 4.0]
}

struct Tables {
    phi: Vec<f64>,
    psi: Vec<f64>,
}

fn tables() -> &'static Tables {
    static T: OnceLock<Tables> = OnceLock::new();
    T.get_or_init(build_tables)
}

fn build_tables() -> Tables {
    let c = d4_coefficients();
    let unit = 1usize << RESOLUTION;
    let len = SUPPORT * unit + 1;
    let mut phi = vec![0.0; len];
    // values at the integers: eigenvector of the refinement at x = 1, 2
    let s3 = 3f64.sqrt();
    phi[unit] = (1.0 + s3) / 2.0;
    phi[2 * unit] = (1.0 - s3) / 2.0;

    let at = |table: &[f64], idx: isize| -> f64 {
        if idx < 0 || idx as usize >= table.len() {
            0.0
        } else {
            table[idx as usize]
        }
    };
    for level in 1..=RESOLUTION {
        let stride = 1usize << (RESOLUTION - level);
        let mut i = stride;
        while i < len {
            if (i / stride) % 2 == 1 {
                let v: f64 = (0..4)
                    .map(|j| c[j] * at(&phi, 2 * i as isize - (j * unit) as isize))
                    .sum();
                phi[i] = v;
            }
            i += stride;
        }
    }
    let psi = (0..len)
        .map(|i| {
            (0..4)
                .map(|k| {
                    let g = if k % 2 == 0 { c[3 - k] } else { -c[3 - k] };
                    g * at(&phi, 2 * i as isize - (k * unit) as isize)
                })
                .sum()
        })
        .collect();
    Tables { phi, psi }
}

fn interpolate(table: &[f64], t: f64) -> f64 {
    if !(t > 0.0 && t < SUPPORT as f64) {
        return 0.0;
    }
    let pos = t * (1u64 << RESOLUTION) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 >= table.len() {
        return table[table.len() - 1];
    }
    table[i] * (1.0 - frac) + table[i + 1] * frac
}

/// Daubechies-4 scaling function, supported on `[0, 3]`.
pub fn scaling(t: f64) -> f64 {
    interpolate(&tables().phi, t)
}

/// Daubechies-4 mother wavelet, supported on `[0, 3]`.
pub fn mother(t: f64) -> f64 {
    interpolate(&tables().psi, t)
}

/// Number of basis functions produced for one coordinate on `[0, 1]`.
pub fn basis_len(levels: u32) -> usize {
    3 + (0..levels).map(|j| (1usize << j) + 2).sum::<usize>()
}

/// Scaling functions at level 0 followed by wavelets at levels `0..levels`,
/// all translates whose support meets `[0, 1]`.
pub fn expand(t: f64, levels: u32, out: &mut Vec<f64>) {
    for k in -2..=0 {
        out.push(scaling(t - k as f64));
    }
    for j in 0..levels {
        let scale = (1u64 << j) as f64;
        let norm = scale.sqrt();
        for k in -2..(1i64 << j) {
            out.push(norm * mother(scale * t - k as f64));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum WaveletCoord {
    /// Enters the feature vector as-is.
    Binary,
    /// Rescaled to `[0, 1]` with training-set bounds, then clamped.
    Continuous { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveletMap {
    pub p1: usize,
    pub p2: usize,
    pub levels: u32,
    pub coords: Vec<WaveletCoord>,
}

impl WaveletMap {
    pub fn dim(&self) -> usize {
        1 + self
            .coords
            .iter()
            .map(|c| match c {
                WaveletCoord::Binary => 1,
                WaveletCoord::Continuous { .. } => basis_len(self.levels),
            })
            .sum::<usize>()
    }

    pub fn featurize(&self, h: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        out.push(1.0);
        for (x, c) in h.iter().zip(&self.coords) {
            match c {
                WaveletCoord::Binary => out.push(*x),
                WaveletCoord::Continuous { lo, hi } => {
                    let t = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
                    expand(t, self.levels, &mut out);
                }
            }
        }
        out
    }
}
