//! Trajectories, histories and datasets for two-stage treatment data.
//!
//! A trajectory is one observed episode `(O1, A1, Y1, O2, A2, Y2)` together
//! with the propensities of the two observed actions. Stage-2 histories are
//! always laid out as `[O1.., Y1, O2.., A1]`.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DtrError, Result};

/// Default positivity floor for observational data with estimated propensities.
pub const DEFAULT_POSITIVITY_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Stage {
    One,
    Two,
}

impl From<Stage> for u8 {
    fn from(s: Stage) -> u8 {
        match s {
            Stage::One => 1,
            Stage::Two => 2,
        }
    }
}

impl TryFrom<u8> for Stage {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Stage::One),
            2 => Ok(Stage::Two),
            other => Err(format!("stage must be 1 or 2, got {other}")),
        }
    }
}

/// A binary treatment coded as ±1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Plus,
    Minus,
}

impl Action {
    /// Sign rule with ties resolved to `Plus`.
    #[inline]
    pub fn from_score(score: f64) -> Action {
        if score >= 0.0 {
            Action::Plus
        } else {
            Action::Minus
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        match self {
            Action::Plus => 1.0,
            Action::Minus => -1.0,
        }
    }

    /// Parses an exact ±1 code.
    pub fn from_code(v: f64) -> Option<Action> {
        if v == 1.0 {
            Some(Action::Plus)
        } else if v == -1.0 {
            Some(Action::Minus)
        } else {
            None
        }
    }

    pub const BOTH: [Action; 2] = [Action::Plus, Action::Minus];
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Plus => write!(f, "+1"),
            Action::Minus => write!(f, "-1"),
        }
    }
}

/// One observed episode. Actions are stored as raw codes so that malformed
/// input can be reported by [`Dataset::validate`] instead of rejected on read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub o1: Vec<f64>,
    pub a1: f64,
    pub y1: f64,
    pub o2: Vec<f64>,
    pub a2: f64,
    pub y2: f64,
    pub pi1: f64,
    pub pi2: f64,
}

impl Trajectory {
    pub fn history(&self, stage: Stage) -> History {
        build_history(self, stage)
    }

    /// Stage-2 history for an arbitrary stage-1 action, used when enumerating
    /// counterfactual actions.
    pub fn history2_with(o1: &[f64], y1: f64, o2: &[f64], a1: f64) -> History {
        let mut h = Vec::with_capacity(o1.len() + o2.len() + 2);
        h.extend_from_slice(o1);
        h.push(y1);
        h.extend_from_slice(o2);
        h.push(a1);
        History { stage: Stage::Two, values: h }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct History {
    pub stage: Stage,
    pub values: Vec<f64>,
}

impl History {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `H1 = O1`; `H2 = (O1, Y1, O2, A1)` in that order.
pub fn build_history(t: &Trajectory, stage: Stage) -> History {
    match stage {
        Stage::One => History { stage, values: t.o1.clone() },
        Stage::Two => Trajectory::history2_with(&t.o1, t.y1, &t.o2, t.a1),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    NonBinaryAction,
    PropensityBelowFloor,
    PropensityAboveOne,
    NonPositiveReward,
    NonFinite,
    DimensionMismatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub row: usize,
    pub field: String,
    pub kind: ViolationKind,
    pub value: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "row {}: {} = {} ({:?})", self.row, self.field, self.value, self.kind)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
    pub p1: usize,
    pub p2: usize,
    /// Constant already added to every raw reward.
    pub offset: f64,
    pub positivity_floor: f64,
}

impl Dataset {
    pub fn new(trajectories: Vec<Trajectory>, p1: usize, p2: usize) -> Dataset {
        Dataset { trajectories, p1, p2, offset: 0.0, positivity_floor: DEFAULT_POSITIVITY_FLOOR }
    }

    pub fn with_positivity_floor(mut self, floor: f64) -> Dataset {
        self.positivity_floor = floor;
        self
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Length of every stage-2 history of this dataset.
    pub fn h2_len(&self) -> usize {
        self.p1 + self.p2 + 2
    }

    /// Lists every violation of the identifiability assumptions. Empty means valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for (row, t) in self.trajectories.iter().enumerate() {
            let mut push = |field: &str, kind: ViolationKind, value: f64| {
                out.push(Violation { row, field: field.to_string(), kind, value });
            };
            if t.o1.len() != self.p1 {
                push("o1", ViolationKind::DimensionMismatch, t.o1.len() as f64);
            }
            if t.o2.len() != self.p2 {
                push("o2", ViolationKind::DimensionMismatch, t.o2.len() as f64);
            }
            for (j, v) in t.o1.iter().enumerate() {
                if !v.is_finite() {
                    push(&format!("o1_{j}"), ViolationKind::NonFinite, *v);
                }
            }
            for (j, v) in t.o2.iter().enumerate() {
                if !v.is_finite() {
                    push(&format!("o2_{j}"), ViolationKind::NonFinite, *v);
                }
            }
            for (name, a) in [("a1", t.a1), ("a2", t.a2)] {
                if Action::from_code(a).is_none() {
                    push(name, ViolationKind::NonBinaryAction, a);
                }
            }
            for (name, y) in [("y1", t.y1), ("y2", t.y2)] {
                if !y.is_finite() {
                    push(name, ViolationKind::NonFinite, y);
                } else if y <= 0.0 {
                    push(name, ViolationKind::NonPositiveReward, y);
                }
            }
            for (name, p) in [("pi1", t.pi1), ("pi2", t.pi2)] {
                if !(p >= self.positivity_floor) {
                    push(name, ViolationKind::PropensityBelowFloor, p);
                } else if p > 1.0 {
                    push(name, ViolationKind::PropensityAboveOne, p);
                }
            }
        }
        out
    }

    /// Fails with the first violation, if any.
    pub fn ensure_valid(&self) -> Result<()> {
        match self.validate().into_iter().next() {
            None => Ok(()),
            Some(v) => match v.kind {
                ViolationKind::PropensityBelowFloor => Err(DtrError::PositivityViolation {
                    row: v.row,
                    field: if v.field == "pi1" { "pi1" } else { "pi2" },
                    value: v.value,
                    floor: self.positivity_floor,
                }),
                _ => Err(DtrError::InvalidDataset(v.to_string())),
            },
        }
    }

    /// Adds `c` to every reward and accumulates it into `offset`.
    pub fn apply_offset(&self, c: f64) -> Result<Dataset> {
        let mut out = self.clone();
        for (row, t) in out.trajectories.iter_mut().enumerate() {
            t.y1 += c;
            t.y2 += c;
            let m = t.y1.min(t.y2);
            if !(m > 0.0) {
                return Err(DtrError::NonPositiveReward { offset: c, min_reward: m, row });
            }
        }
        out.offset += c;
        Ok(out)
    }

    pub fn min_reward(&self) -> f64 {
        self.trajectories.iter().map(|t| t.y1.min(t.y2)).fold(f64::INFINITY, f64::min)
    }

    /// Smallest non-negative multiple of `step` that lifts every reward to at least `margin`.
    pub fn positivity_offset(&self, step: f64, margin: f64) -> f64 {
        positivity_offset(self.min_reward(), step, margin)
    }

    /// Copies rewards scaled by `c`, for linearity checks.
    pub fn scale_rewards(&self, c: f64) -> Dataset {
        let mut out = self.clone();
        for t in &mut out.trajectories {
            t.y1 *= c;
            t.y2 *= c;
        }
        out.offset *= c;
        out
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            trajectories: rows.iter().map(|&i| self.trajectories[i].clone()).collect(),
            p1: self.p1,
            p2: self.p2,
            offset: self.offset,
            positivity_floor: self.positivity_floor,
        }
    }

    pub fn csv_header(&self) -> Vec<String> {
        csv_header(self.p1, self.p2)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(self.csv_header())?;
        let mut rec: Vec<String> = Vec::with_capacity(self.p1 + self.p2 + 6);
        for t in &self.trajectories {
            rec.clear();
            rec.extend(t.o1.iter().map(|v| v.to_string()));
            rec.push(t.a1.to_string());
            rec.push(t.y1.to_string());
            rec.extend(t.o2.iter().map(|v| v.to_string()));
            rec.push(t.a2.to_string());
            rec.push(t.y2.to_string());
            rec.push(t.pi1.to_string());
            rec.push(t.pi2.to_string());
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads the dataset CSV; `p1` and `p2` are inferred from the header.
    pub fn read_csv<R: Read>(r: R) -> Result<Dataset> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        let cols: Vec<&str> = header.iter().collect();
        let p1 = cols.iter().take_while(|c| c.starts_with("o1_")).count();
        let p2 = cols.iter().skip(p1 + 2).take_while(|c| c.starts_with("o2_")).count();
        let expected = csv_header(p1, p2);
        if cols != expected.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(DtrError::InvalidDataset(format!(
                "unexpected header {:?}; expected {:?}",
                cols, expected
            )));
        }
        let mut trajectories = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| DtrError::InvalidDataset(format!("row {row}: {e}")))?;
            if vals.len() != expected.len() {
                return Err(DtrError::InvalidDataset(format!("row {row}: wrong column count")));
            }
            let o1 = vals[..p1].to_vec();
            let a1 = vals[p1];
            let y1 = vals[p1 + 1];
            let o2 = vals[p1 + 2..p1 + 2 + p2].to_vec();
            let k = p1 + 2 + p2;
            trajectories.push(Trajectory {
                o1,
                a1,
                y1,
                o2,
                a2: vals[k],
                y2: vals[k + 1],
                pi1: vals[k + 2],
                pi2: vals[k + 3],
            });
        }
        Ok(Dataset::new(trajectories, p1, p2))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))?;
        DatasetMeta { offset: self.offset, positivity_floor: self.positivity_floor, setting: None, seed: None }
            .save_beside(path)
    }

    /// Loads a CSV and, when present, its `.meta.json` sidecar.
    pub fn load(path: &Path) -> Result<Dataset> {
        let f = std::fs::File::open(path)?;
        let mut d = Dataset::read_csv(std::io::BufReader::new(f))?;
        if let Some(meta) = DatasetMeta::load_beside(path)? {
            d.offset = meta.offset;
            d.positivity_floor = meta.positivity_floor;
        }
        Ok(d)
    }
}

pub fn positivity_offset(min_reward: f64, step: f64, margin: f64) -> f64 {
    if min_reward >= margin {
        return 0.0;
    }
    ((margin - min_reward) / step).ceil() * step
}

pub fn csv_header(p1: usize, p2: usize) -> Vec<String> {
    let mut h: Vec<String> = (0..p1).map(|j| format!("o1_{j}")).collect();
    h.push("a1".into());
    h.push("y1".into());
    h.extend((0..p2).map(|j| format!("o2_{j}")));
    for c in ["a2", "y2", "pi1", "pi2"] {
        h.push(c.into());
    }
    h
}

/// Sidecar written next to a dataset CSV so the reward offset survives a round trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub offset: f64,
    pub positivity_floor: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub setting: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl DatasetMeta {
    pub fn sidecar_path(csv_path: &Path) -> std::path::PathBuf {
        let mut s = csv_path.as_os_str().to_owned();
        s.push(".meta.json");
        s.into()
    }

    pub fn save_beside(&self, csv_path: &Path) -> Result<()> {
        let f = std::fs::File::create(Self::sidecar_path(csv_path))?;
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }

    pub fn load_beside(csv_path: &Path) -> Result<Option<DatasetMeta>> {
        let p = Self::sidecar_path(csv_path);
        if !p.exists() {
            return Ok(None);
        }
        let f = std::fs::File::open(p)?;
        Ok(Some(serde_json::from_reader(f)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(o1: Vec<f64>, a1: f64, y1: f64, o2: Vec<f64>, a2: f64, y2: f64) -> Trajectory {
        Trajectory { o1, a1, y1, o2, a2, y2, pi1: 0.5, pi2: 0.5 }
    }

    #[test]
    fn stage_two_history_order() {
        let t = traj(vec![0.3], 1.0, 2.0, vec![-1.0], 1.0, 1.0);
        assert_eq!(build_history(&t, Stage::Two).values, vec![0.3, 2.0, -1.0, 1.0]);
    }

    #[test]
    fn stage_one_history_is_o1() {
        let t = traj(vec![1.0, 2.0, 3.0], 1.0, 2.0, vec![], 1.0, 1.0);
        assert_eq!(build_history(&t, Stage::One).values, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn empty_stage_one_covariates() {
        let t = traj(vec![], -1.0, 1.0, vec![5.0], 1.0, 1.0);
        assert_eq!(build_history(&t, Stage::Two).values, vec![1.0, 5.0, -1.0]);
    }

    #[test]
    fn zero_propensity_is_reported() {
        let mut t = traj(vec![0.0], 1.0, 1.0, vec![0.0], 1.0, 1.0);
        let mut rows = vec![t.clone(), t.clone()];
        t.pi1 = 0.0;
        rows.push(t);
        let v = Dataset::new(rows, 1, 1).validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].row, 2);
        assert_eq!(v[0].field, "pi1");
        assert_eq!(v[0].kind, ViolationKind::PropensityBelowFloor);
    }

    #[test]
    fn zero_action_is_reported() {
        let t = traj(vec![0.0], 1.0, 1.0, vec![0.0], 0.0, 1.0);
        let v = Dataset::new(vec![t], 1, 1).validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::NonBinaryAction);
        assert_eq!(v[0].field, "a2");
    }

    #[test]
    fn offset_shifts_rewards() {
        let d = Dataset::new(vec![traj(vec![], 1.0, -1.0, vec![], 1.0, 3.0)], 0, 0);
        let e = d.apply_offset(2.0).unwrap();
        assert_eq!((e.trajectories[0].y1, e.trajectories[0].y2), (1.0, 5.0));
        assert_eq!(e.offset, 2.0);
        assert!(d.validate().iter().any(|v| v.kind == ViolationKind::NonPositiveReward));
        assert!(e.validate().is_empty());
    }

    #[test]
    fn zero_offset_is_identity() {
        let d = Dataset::new(vec![traj(vec![1.0], 1.0, 1.0, vec![2.0], -1.0, 3.0)], 1, 1);
        assert_eq!(d.apply_offset(0.0).unwrap(), d);
    }

    #[test]
    fn insufficient_offset_fails() {
        let d = Dataset::new(vec![traj(vec![], 1.0, -1.0, vec![], 1.0, 3.0)], 0, 0);
        assert!(matches!(d.apply_offset(0.5), Err(DtrError::NonPositiveReward { .. })));
    }

    #[test]
    fn positivity_offset_is_smallest_half_step() {
        assert_eq!(positivity_offset(0.0, 0.5, 0.1), 0.5);
        assert_eq!(positivity_offset(-2.3, 0.5, 0.1), 2.5);
        assert_eq!(positivity_offset(-2.4, 0.5, 0.1), 2.5);
        assert_eq!(positivity_offset(-2.45, 0.5, 0.1), 3.0);
        assert_eq!(positivity_offset(3.0, 0.5, 0.1), 0.0);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let d = Dataset::new(vec![traj(vec![1.0, 2.0], 1.0, 1.0, vec![2.0], -1.0, 3.0)], 1, 1);
        let v = d.validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::DimensionMismatch);
    }

    #[test]
    fn csv_round_trip() {
        let d = Dataset::new(
            vec![
                traj(vec![0.1, -2.5], 1.0, 1.25, vec![3.0], -1.0, 0.75),
                traj(vec![1e-17, 4.0], -1.0, 2.0, vec![-3.5], 1.0, 9.0),
            ],
            2,
            1,
        );
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("o1_0,o1_1,a1,y1,o2_0,a2,y2,pi1,pi2\n"));
        let back = Dataset::read_csv(&buf[..]).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn save_keeps_offset_in_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let d = Dataset::new(vec![traj(vec![1.0], 1.0, 0.2, vec![0.0], -1.0, 0.1)], 1, 1).apply_offset(1.5).unwrap();
        d.save(&path).unwrap();
        assert!(DatasetMeta::sidecar_path(&path).exists());
        let back = Dataset::load(&path).unwrap();
        assert_eq!(back.offset, 1.5);
        assert_eq!(back, d);
    }

    #[test]
    fn csv_rejects_bad_header() {
        let text = "a1,y1,x,a2,y2,pi1,pi2\n";
        assert!(Dataset::read_csv(text.as_bytes()).is_err());
    }
}
