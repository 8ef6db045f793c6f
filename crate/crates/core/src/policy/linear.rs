//! Linear scores with an intercept and, at stage 2, `O1×O2` and `O1×A1`
//! interaction terms.

use serde::{Deserialize, Serialize};

use crate::data::Stage;

/// Per-column affine standardisation `(x - center) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Fits on the rows of `data`; the first `skip` columns are left untouched
    /// (center 0, scale 1). Constant columns keep scale 1.
    pub fn fit(data: &[Vec<f64>], skip: usize) -> Standardizer {
        let dim = data.first().map_or(0, Vec::len);
        let n = data.len().max(1) as f64;
        let mut center = vec![0.0; dim];
        let mut scale = vec![1.0; dim];
        for j in skip..dim {
            let mean = data.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = data.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
            center[j] = mean;
            scale[j] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        }
        Standardizer { center, scale }
    }

    pub fn apply(&self, x: &mut [f64]) {
        for ((v, c), s) in x.iter_mut().zip(&self.center).zip(&self.scale) {
            *v = (*v - c) / s;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearMap {
    pub p1: usize,
    pub p2: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardizer: Option<Standardizer>,
}

impl LinearMap {
    pub fn new(p1: usize, p2: usize) -> LinearMap {
        LinearMap { p1, p2, standardizer: None }
    }

    pub fn dim(&self, stage: Stage) -> usize {
        match stage {
            Stage::One => 1 + self.p1,
            Stage::Two => 1 + (self.p1 + self.p2 + 2) + self.p1 * self.p2 + self.p1,
        }
    }

    /// `[1, h]` at stage 1; `[1, h, O1_i·O2_j (i-major), O1_i·A1]` at stage 2.
    pub fn featurize(&self, stage: Stage, h: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim(stage));
        out.push(1.0);
        out.extend_from_slice(h);
        if stage == Stage::Two {
            let o1 = &h[..self.p1];
            let o2 = &h[self.p1 + 1..self.p1 + 1 + self.p2];
            let a1 = h[self.p1 + 1 + self.p2];
            for x in o1 {
                for z in o2 {
                    out.push(x * z);
                }
            }
            for x in o1 {
                out.push(x * a1);
            }
        }
        if let Some(s) = &self.standardizer {
            s.apply(&mut out);
        }
        out
    }
}
