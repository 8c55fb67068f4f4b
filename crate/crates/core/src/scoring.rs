//! The three path scores (kinematic, collaborative, traffic-state), their
//! weighted fusion, and final path selection.
//!
//! Scores are carried as fractions in `[0, 1]`; use [`ScoreVector::percent`]
//! at output boundaries.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::bearing_inclination;
use crate::search::CandidatePath;

/// Speed coefficient λ.
pub const DEFAULT_LAMBDA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreVector {
    pub p: f64,
    pub c: f64,
    pub a: f64,
}

impl ScoreVector {
    pub fn from_percent(p: f64, c: f64, a: f64) -> Self {
        Self {
            p: p / 100.0,
            c: c / 100.0,
            a: a / 100.0,
        }
    }

    pub fn percent(&self) -> [f64; 3] {
        [self.p * 100.0, self.c * 100.0, self.a * 100.0]
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.p, self.c, self.a]
    }
}

/// Which scores take part in the fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ScoreSet {
    pub p: bool,
    pub c: bool,
    pub a: bool,
}

impl ScoreSet {
    pub const ALL: ScoreSet = ScoreSet { p: true, c: true, a: true };
    pub const P: ScoreSet = ScoreSet { p: true, c: false, a: false };
    pub const PC: ScoreSet = ScoreSet { p: true, c: true, a: false };
    pub const CA: ScoreSet = ScoreSet { p: false, c: true, a: true };

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        for (on, name) in [(self.p, "P"), (self.c, "C"), (self.a, "A")] {
            if on {
                parts.push(name);
            }
        }
        parts.join("+")
    }
}

impl std::str::FromStr for ScoreSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut set = ScoreSet { p: false, c: false, a: false };
        for part in s.split('+') {
            match part.trim().to_ascii_uppercase().as_str() {
                "P" => set.p = true,
                "C" => set.c = true,
                "A" => set.a = true,
                other => return Err(Error::InvalidParameter(format!("unknown score {other:?}"))),
            }
        }
        if !(set.p || set.c || set.a) {
            return Err(Error::InvalidParameter("empty score set".into()));
        }
        Ok(set)
    }
}

impl TryFrom<String> for ScoreSet {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ScoreSet> for String {
    fn from(s: ScoreSet) -> String {
        s.label()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub wp: f64,
    pub wc: f64,
    pub wa: f64,
}

impl FusionWeights {
    pub fn new(wp: f64, wc: f64, wa: f64) -> Result<Self> {
        let w = Self { wp, wc, wa };
        if [wp, wc, wa].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidParameter(format!("weights must be nonnegative: {w:?}")));
        }
        if (wp + wc + wa - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("weights must sum to 1: {w:?}")));
        }
        Ok(w)
    }

    /// Rescales arbitrary nonnegative weights onto the simplex.
    pub fn normalized(wp: f64, wc: f64, wa: f64) -> Result<Self> {
        let s = wp + wc + wa;
        if !(s > 0.0) {
            return Err(Error::InvalidParameter("weights sum to zero".into()));
        }
        Self::new(wp / s, wc / s, wa / s)
    }

    pub fn equal() -> Self {
        Self {
            wp: 1.0 / 3.0,
            wc: 1.0 / 3.0,
            wa: 1.0 / 3.0,
        }
    }

    /// `[0.2, 0.5, 0.3]`, the rounded calibration outcome on taxi data.
    pub fn calibrated() -> Self {
        Self {
            wp: 0.2,
            wc: 0.5,
            wa: 0.3,
        }
    }

    /// Zeroes the disabled scores and renormalizes the rest. Falls back to
    /// equal weights over the enabled scores when all of them carry zero weight.
    pub fn restrict(&self, set: ScoreSet) -> Self {
        let pick = |on: bool, w: f64| if on { w } else { 0.0 };
        let (p, c, a) = (pick(set.p, self.wp), pick(set.c, self.wc), pick(set.a, self.wa));
        Self::normalized(p, c, a).unwrap_or_else(|_| {
            let f = |on: bool| if on { 1.0 } else { 0.0 };
            Self::normalized(f(set.p), f(set.c), f(set.a)).unwrap_or(Self::equal())
        })
    }

    /// Drops the A weight, redistributing it proportionally to P and C.
    pub fn without_a(&self) -> Self {
        self.restrict(ScoreSet { a: false, ..ScoreSet::ALL })
    }
}

impl Default for FusionWeights {
    fn default() -> Self {
        Self::calibrated()
    }
}

/// `exp(-λ |(v_prev + v_cur)/2 - L/Δt|)`.
pub fn speed_weight(v_prev: f64, v_cur: f64, path_length: f64, dt: f64, lambda: f64) -> f64 {
    (-lambda * (0.5 * (v_prev + v_cur) - path_length / dt).abs()).exp()
}

/// `max{cos(inclination), 0}`, exactly 0 from 90° on.
pub fn bearing_weight(probe_bearing: f64, link_direction: f64) -> f64 {
    let inc = bearing_inclination(probe_bearing, link_direction);
    if inc >= 90.0 {
        0.0
    } else {
        inc.to_radians().cos().max(0.0)
    }
}

/// Kinematic inputs of one segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentKinematics {
    pub v_prev: f64,
    pub v_cur: f64,
    /// Bearing of the probe the path ends at.
    pub bearing: f64,
    pub dt: f64,
}

/// P-score as a fraction: speed weight times bearing weight.
pub fn p_score(path_length: f64, end_link_direction: f64, k: &SegmentKinematics, lambda: f64) -> f64 {
    speed_weight(k.v_prev, k.v_cur, path_length, k.dt, lambda) * bearing_weight(k.bearing, end_link_direction)
}

/// Min-max normalization over a candidate set; all zeros when flat.
pub fn min_max_scores(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// C-scores from each candidate's weighted usage frequency.
pub fn c_scores(frequencies: &[f64]) -> Vec<f64> {
    min_max_scores(frequencies)
}

/// Mean predicted vehicle share over the path's links.
pub fn mean_link_share(links: &[usize], predicted: &[f64]) -> Result<f64> {
    if links.is_empty() {
        return Err(Error::EmptyPath);
    }
    let mut sum = 0.0;
    for &l in links {
        sum += predicted.get(l).copied().ok_or(Error::DimensionMismatch {
            expected: l + 1,
            got: predicted.len(),
        })?;
    }
    Ok(sum / links.len() as f64)
}

/// A-scores from each candidate's mean link share.
pub fn a_scores(shares: &[f64]) -> Vec<f64> {
    min_max_scores(shares)
}

pub fn final_score(s: &ScoreVector, w: &FusionWeights) -> f64 {
    w.wp * s.p + w.wc * s.c + w.wa * s.a
}

/// Index of the highest final score; ties go to the shorter path, then to
/// the lexicographically smaller edge sequence.
pub fn select_path(paths: &[CandidatePath], finals: &[f64]) -> Option<usize> {
    debug_assert_eq!(paths.len(), finals.len());
    (0..paths.len().min(finals.len())).min_by(|&i, &j| {
        finals[j]
            .total_cmp(&finals[i])
            .then(paths[i].length.total_cmp(&paths[j].length))
            .then_with(|| paths[i].edges.cmp(&paths[j].edges))
            .then(Ordering::Equal)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;
    use crate::network::EdgeId;
    use crate::search::CandidateEdge;
    use approx::assert_abs_diff_eq;

    #[test]
    fn speed_weight_examples() {
        assert_eq!(speed_weight(10.0, 10.0, 600.0, 60.0, 0.1), 1.0);
        assert_abs_diff_eq!(speed_weight(8.0, 12.0, 540.0, 60.0, 0.1), (-0.1f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!((-0.1f64).exp(), 0.904_837_418, epsilon = 1e-9);
        let w = speed_weight(100.0, 100.0, 0.0, 60.0, 0.1);
        assert_abs_diff_eq!(w, (-10.0f64).exp(), epsilon = 1e-15);
        assert!(w < 5e-5);
    }

    #[test]
    fn bearing_weight_examples() {
        assert_eq!(bearing_weight(30.0, 30.0), 1.0);
        assert_eq!(bearing_weight(0.0, 90.0), 0.0);
        assert_eq!(bearing_weight(0.0, 135.0), 0.0);
        assert_abs_diff_eq!(bearing_weight(0.0, 60.0), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(bearing_weight(350.0, 50.0), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn p_score_examples() {
        let k = SegmentKinematics { v_prev: 8.0, v_cur: 12.0, bearing: 0.0, dt: 60.0 };
        let s = p_score(540.0, 60.0, &k, 0.1);
        assert_abs_diff_eq!(s * 100.0, 100.0 * (-0.1f64).exp() * 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(s * 100.0, 45.24, epsilon = 5e-3);
        assert_eq!(p_score(540.0, 180.0, &k, 0.1), 0.0);
        let k = SegmentKinematics { v_prev: 10.0, v_cur: 10.0, bearing: 0.0, dt: 60.0 };
        assert_eq!(p_score(600.0, 0.0, &k, 0.1), 1.0);
    }

    #[test]
    fn normalized_scores() {
        assert_eq!(c_scores(&[3.0, 3.0, 3.0]), vec![0.0; 3]);
        let s = c_scores(&[1.0, 2.0, 5.0]);
        assert_abs_diff_eq!(s[1] * 100.0, 25.0, epsilon = 1e-12);
        assert_eq!(s[2], 1.0);
        assert_eq!(s[0], 0.0);
        assert_eq!(a_scores(&[0.1, 0.1]), vec![0.0, 0.0]);
    }

    #[test]
    fn link_share_mean() {
        let x = [0.02, 0.04, 0.94];
        assert_abs_diff_eq!(mean_link_share(&[0, 1], &x).unwrap(), 0.03, epsilon = 1e-15);
        assert_eq!(mean_link_share(&[2], &x).unwrap(), 0.94);
        assert!(mean_link_share(&[], &x).is_err());
        assert!(mean_link_share(&[3], &x).is_err());
    }

    #[test]
    fn fusion_examples() {
        let f = final_score(&ScoreVector::from_percent(30.0, 60.0, 90.0), &FusionWeights::equal());
        assert_abs_diff_eq!(f * 100.0, 60.0, epsilon = 1e-9);
        let f = final_score(&ScoreVector::from_percent(50.0, 100.0, 0.0), &FusionWeights::calibrated());
        assert_abs_diff_eq!(f * 100.0, 60.0, epsilon = 1e-9);
        for w in [FusionWeights::equal(), FusionWeights::calibrated(), FusionWeights::new(1.0, 0.0, 0.0).unwrap()] {
            let f = final_score(&ScoreVector::from_percent(100.0, 100.0, 100.0), &w);
            assert_abs_diff_eq!(f, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn weight_validation_and_redistribution() {
        assert!(FusionWeights::new(0.5, 0.5, 0.5).is_err());
        assert!(FusionWeights::new(-0.1, 0.6, 0.5).is_err());
        let w = FusionWeights::calibrated().without_a();
        assert_abs_diff_eq!(w.wp, 0.2 / 0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(w.wc, 0.5 / 0.7, epsilon = 1e-12);
        assert_eq!(w.wa, 0.0);
        let p_only = FusionWeights::calibrated().restrict(ScoreSet::P);
        assert_eq!((p_only.wp, p_only.wc, p_only.wa), (1.0, 0.0, 0.0));
        assert_eq!("p+c+a".parse::<ScoreSet>().unwrap(), ScoreSet::ALL);
        assert_eq!("C+A".parse::<ScoreSet>().unwrap(), ScoreSet::CA);
        assert!("X".parse::<ScoreSet>().is_err());
    }

    fn path(len: f64, edges: &[usize]) -> CandidatePath {
        let c = CandidateEdge { edge: EdgeId(edges[0]), point: Point::default(), offset: 0.0, distance: 0.0 };
        CandidatePath {
            start: c,
            end: c,
            edges: edges.iter().map(|&e| EdgeId(e)).collect(),
            links: vec![0],
            length: len,
        }
    }

    #[test]
    fn selection_tie_breaks() {
        let paths = vec![path(500.0, &[0, 1]), path(400.0, &[2, 3])];
        assert_eq!(select_path(&paths[..1], &[0.3]), Some(0));
        assert_eq!(select_path(&paths, &[0.6, 0.6]), Some(1));
        assert_eq!(select_path(&paths, &[0.7, 0.6]), Some(0));
        let same_len = vec![path(400.0, &[2, 3]), path(400.0, &[1, 5])];
        assert_eq!(select_path(&same_len, &[0.6, 0.6]), Some(1));
        assert_eq!(select_path(&[], &[]), None);
    }
}
