//! Fusion-weight calibration from dense anchor trajectories.
//!
//! Anchor trajectories (about 15 s between probes) are matched by plain
//! shortest paths to obtain reference routes. Downsampled copies are then
//! scored by the matcher, and a linear model `Y = W·S + B` with `W` on the
//! simplex is fitted to the per-candidate accuracies.

use std::collections::HashSet;
use std::path::Path;

use log::warn;
use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::TruthRoute;
use crate::history::{MatchRecord, ProbeMatch};
use crate::matcher::FusionMatcher;
use crate::network::{EdgeId, RoadNetwork};
use crate::scoring::{FusionWeights, ScoreVector, final_score};
use crate::search::{CandidatePath, find_candidate_edges, shortest_path};
use crate::trajectory::Trajectory;

/// Probing interval of anchor trajectories (s).
pub const ANCHOR_INTERVAL: f64 = 15.0;

/// Minimum sample count accepted by [`fit_weights`].
pub const MIN_SAMPLES: usize = 30;

const GRID_TOL: f64 = 1e-6;

/// Shortest path between the nearest candidate edges of each consecutive
/// probe pair; `None` where either probe has no candidate or no path exists.
pub fn ground_truth_paths(tr: &Trajectory, net: &RoadNetwork, radius: f64) -> Vec<Option<CandidatePath>> {
    let pos = tr.positions(net);
    let nearest: Vec<_> = tr
        .probes
        .iter()
        .zip(&pos)
        .map(|(p, &x)| find_candidate_edges(net, x, p.bearing, radius).into_iter().next())
        .collect();
    nearest
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let path = match (w[0], w[1]) {
                (Some(a), Some(b)) => shortest_path(net, &[a], &[b]),
                _ => None,
            };
            if path.is_none() {
                warn!("{}: no reference path for segment {}", tr.id, i + 1);
            }
            path
        })
        .collect()
}

/// Match record built from [`ground_truth_paths`]: every probe sits on its
/// nearest candidate edge, and each segment carries its shortest path.
pub fn nearest_edge_record(tr: &Trajectory, net: &RoadNetwork, radius: f64) -> MatchRecord {
    let paths = ground_truth_paths(tr, net, radius);
    let mut probes: Vec<ProbeMatch> = tr.probes.iter().map(|p| ProbeMatch::unmatched(p.t)).collect();
    for (i, path) in paths.into_iter().enumerate() {
        let Some(path) = path else { continue };
        if probes[i].edge.is_none() {
            probes[i].edge = Some(path.start.edge);
            probes[i].point = Some(path.start.point);
        }
        let pm = &mut probes[i + 1];
        pm.edge = Some(path.end.edge);
        pm.point = Some(path.end.point);
        pm.path = Some(path.edges);
    }
    if tr.len() == 1 {
        let p = tr.start();
        if let Some(c) = find_candidate_edges(net, net.project(p.lon, p.lat), p.bearing, radius).first() {
            probes[0].edge = Some(c.edge);
            probes[0].point = Some(c.point);
        }
    }
    MatchRecord {
        trajectory_id: tr.id.clone(),
        probes,
    }
}

/// Keeps the probes whose offset from the first probe is a multiple of `keep`.
/// `keep` must be a whole multiple of the trajectory's own interval.
pub fn downsample(tr: &Trajectory, keep: f64) -> Result<Trajectory> {
    if !(keep > 0.0 && keep.is_finite()) {
        return Err(Error::InvalidParameter(format!("interval must be positive, got {keep}")));
    }
    if tr.len() < 2 {
        return Ok(tr.clone());
    }
    let src = tr.interval();
    if !is_multiple(keep, src) {
        return Err(Error::InvalidParameter(format!(
            "{keep} s is not a multiple of the source interval {src} s"
        )));
    }
    let t0 = tr.start_time();
    let probes = tr.probes.iter().filter(|p| is_multiple(p.t - t0, keep)).copied().collect();
    Trajectory::new(tr.id.clone(), tr.vehicle.clone(), probes)
}

fn is_multiple(x: f64, step: f64) -> bool {
    let q = x / step;
    (q - q.round()).abs() <= GRID_TOL * q.abs().max(1.0)
}

/// Share of the candidate's edges that appear in the reference path.
pub fn path_accuracy(candidate: &[EdgeId], truth: &[EdgeId]) -> Result<f64> {
    if candidate.is_empty() || truth.is_empty() {
        return Err(Error::EmptyPath);
    }
    let t: HashSet<EdgeId> = truth.iter().copied().collect();
    let hits = candidate.iter().filter(|e| t.contains(e)).count();
    Ok(hits as f64 / candidate.len() as f64)
}

/// Scores every candidate path the matcher considers for `tr` and labels it
/// with its accuracy against the reference route.
pub fn collect_samples(matcher: &FusionMatcher, tr: &Trajectory, truth: &TruthRoute) -> Result<Vec<CalibrationSample>> {
    let mut out = Vec::new();
    let mut failure = None;
    matcher.match_with(tr, |i, j, scored| {
        let reference = match truth.segment(tr.probes[i].t, tr.probes[j].t) {
            Ok(r) => r,
            Err(e) => {
                failure.get_or_insert(e);
                return;
            }
        };
        for (path, scores) in scored.paths.iter().zip(&scored.scores) {
            if let Ok(y) = path_accuracy(&path.edges, reference) {
                out.push(CalibrationSample { scores: *scores, y });
            }
        }
    })?;
    match failure {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub scores: ScoreVector,
    pub y: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleRow {
    #[serde(rename = "S_P")]
    sp: f64,
    #[serde(rename = "S_C")]
    sc: f64,
    #[serde(rename = "S_A")]
    sa: f64,
    #[serde(rename = "Y")]
    y: f64,
}

pub fn write_samples_csv(path: &Path, samples: &[CalibrationSample]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in samples {
        w.serialize(SampleRow {
            sp: s.scores.p,
            sc: s.scores.c,
            sa: s.scores.a,
            y: s.y,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples_csv(path: &Path) -> Result<Vec<CalibrationSample>> {
    let rows: Vec<SampleRow> = crate::network::read_records(path, &["S_P", "S_C", "S_A", "Y"])?;
    rows.into_iter()
        .map(|r| {
            let s = CalibrationSample {
                scores: ScoreVector { p: r.sp, c: r.sc, a: r.sa },
                y: r.y,
            };
            let ok = s.scores.as_array().iter().chain([&s.y]).all(|v| (0.0..=1.0).contains(v));
            if ok {
                Ok(s)
            } else {
                Err(Error::Format(format!("sample outside [0, 1]: {s:?}")))
            }
        })
        .collect()
}

/// Contents of the weights file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightsFile {
    pub wp: f64,
    pub wc: f64,
    pub wa: f64,
    pub bias: f64,
}

impl WeightsFile {
    pub fn weights(&self) -> Result<FusionWeights> {
        FusionWeights::new(self.wp, self.wc, self.wa)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let w: WeightsFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        w.weights()?;
        Ok(w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub min_learning_rate: f64,
    pub patience: usize,
    /// Seed of the 6:2:2 split.
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_epochs: 5000,
            learning_rate: 0.01,
            min_learning_rate: 1e-5,
            patience: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Raw fitted weights, what the matcher consumes by default.
    pub weights: FusionWeights,
    /// Weights rounded to tenths, still summing to 1.
    pub rounded: FusionWeights,
    pub bias: f64,
    /// Set when the samples carried no usable signal and equal weights were returned.
    pub degenerate: bool,
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
    pub test_loss: Option<f64>,
}

impl FitResult {
    pub fn weights_file(&self) -> WeightsFile {
        WeightsFile {
            wp: self.weights.wp,
            wc: self.weights.wc,
            wa: self.weights.wa,
            bias: self.bias,
        }
    }
}

fn softmax(z: &[f64; 3]) -> [f64; 3] {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = z.map(|v| (v - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|v| v / s)
}

fn fit_loss(samples: &[&CalibrationSample], w: &[f64; 3], b: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let sum: f64 = samples
        .iter()
        .map(|s| {
            let s3 = s.scores.as_array();
            let yhat = w[0] * s3[0] + w[1] * s3[1] + w[2] * s3[2] + b;
            (s.y - yhat).powi(2)
        })
        .sum();
    sum / samples.len() as f64
}

/// Gradient of the mean squared error with respect to the softmax logits and
/// the bias.
fn fit_grad(samples: &[&CalibrationSample], z: &[f64; 3], b: f64) -> ([f64; 3], f64) {
    let w = softmax(z);
    let mut gw = [0.0; 3];
    let mut gb = 0.0;
    let m = samples.len() as f64;
    for s in samples {
        let s3 = s.scores.as_array();
        let r = w[0] * s3[0] + w[1] * s3[1] + w[2] * s3[2] + b - s.y;
        for c in 0..3 {
            gw[c] += 2.0 * r * s3[c] / m;
        }
        gb += 2.0 * r / m;
    }
    let dot: f64 = (0..3).map(|c| w[c] * gw[c]).sum();
    let gz = [0, 1, 2].map(|c| w[c] * (gw[c] - dot));
    (gz, gb)
}

fn spread(values: impl Iterator<Item = f64>) -> f64 {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    hi - lo
}

/// Rounds to tenths with the largest-remainder rule so the sum stays 1.
pub fn round_to_tenths(w: &FusionWeights) -> FusionWeights {
    let raw = [w.wp * 10.0, w.wc * 10.0, w.wa * 10.0];
    let mut units = raw.map(|v| v.floor());
    let missing = (10.0 - units.iter().sum::<f64>()).round().max(0.0) as usize;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| (raw[b] - units[b]).total_cmp(&(raw[a] - units[a])).then(a.cmp(&b)));
    for &c in order.iter().take(missing) {
        units[c] += 1.0;
    }
    FusionWeights {
        wp: units[0] / 10.0,
        wc: units[1] / 10.0,
        wa: units[2] / 10.0,
    }
}

/// Fits `Y ≈ W·S + B` with `W = softmax(z)` by Adam on a 6:2:2 split,
/// keeping the parameters with the lowest validation loss. Each full-batch
/// step is shortened until the training loss does not rise.
pub fn fit_weights(samples: &[CalibrationSample], opts: &FitOptions) -> Result<FitResult> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "{} samples, need at least {MIN_SAMPLES}",
            samples.len()
        )));
    }
    let mean_y = samples.iter().map(|s| s.y).sum::<f64>() / samples.len() as f64;
    let flat_scores = (0..3).all(|c| spread(samples.iter().map(|s| s.scores.as_array()[c])) < 1e-12);
    let flat_y = spread(samples.iter().map(|s| s.y)) < 1e-12;
    if flat_scores || flat_y {
        warn!("calibration samples carry no signal; using equal weights");
        let w = FusionWeights::equal();
        return Ok(FitResult {
            weights: w,
            rounded: round_to_tenths(&w),
            bias: mean_y - samples.iter().map(|s| final_score(&s.scores, &w)).sum::<f64>() / samples.len() as f64,
            degenerate: true,
            train_loss: Vec::new(),
            validation_loss: Vec::new(),
            test_loss: None,
        });
    }

    let mut idx: Vec<usize> = (0..samples.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(opts.seed));
    let n_train = samples.len() * 6 / 10;
    let n_val = samples.len() * 2 / 10;
    let pick = |r: &[usize]| r.iter().map(|&i| &samples[i]).collect::<Vec<_>>();
    let train = pick(&idx[..n_train]);
    let val = pick(&idx[n_train..n_train + n_val]);
    let test = pick(&idx[n_train + n_val..]);

    let mut z = [0.0f64; 3];
    let mut b = 0.0;
    let (mut m, mut v) = ([0.0f64; 4], [0.0f64; 4]);
    let (b1, b2, eps) = (0.9f64, 0.99f64, 1e-8);
    let mut lr = opts.learning_rate;
    let mut cur = fit_loss(&train, &softmax(&z), b);
    let mut best = (z, b);
    let mut best_val = fit_loss(&val, &softmax(&z), b);
    let mut stale = 0;
    let mut result = FitResult {
        weights: FusionWeights::equal(),
        rounded: FusionWeights::equal(),
        bias: 0.0,
        degenerate: false,
        train_loss: Vec::new(),
        validation_loss: Vec::new(),
        test_loss: None,
    };

    for t in 1..=opts.max_epochs {
        let (gz, gb) = fit_grad(&train, &z, b);
        let g = [gz[0], gz[1], gz[2], gb];
        let mut step = [0.0; 4];
        for i in 0..4 {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mh = m[i] / (1.0 - b1.powi(t as i32));
            let vh = v[i] / (1.0 - b2.powi(t as i32));
            step[i] = -lr * mh / (vh.sqrt() + eps);
        }
        let mut frac = 1.0;
        for _ in 0..40 {
            let tz = [z[0] + frac * step[0], z[1] + frac * step[1], z[2] + frac * step[2]];
            let tb = b + frac * step[3];
            let loss = fit_loss(&train, &softmax(&tz), tb);
            if loss <= cur {
                z = tz;
                b = tb;
                cur = loss;
                break;
            }
            frac *= 0.5;
        }
        let val_loss = fit_loss(&val, &softmax(&z), b);
        result.train_loss.push(cur);
        result.validation_loss.push(val_loss);
        if val_loss < best_val {
            best_val = val_loss;
            best = (z, b);
            stale = 0;
        } else {
            stale += 1;
            if stale >= opts.patience {
                if lr <= opts.min_learning_rate * (1.0 + 1e-9) {
                    break;
                }
                lr = (lr / 10.0).max(opts.min_learning_rate);
                stale = 0;
            }
        }
    }

    let (z, b) = best;
    let w = softmax(&z);
    let weights = FusionWeights::normalized(w[0], w[1], w[2])?;
    result.weights = weights;
    result.rounded = round_to_tenths(&weights);
    result.bias = b;
    result.test_loss = (!test.is_empty()).then(|| fit_loss(&test, &w, b));
    Ok(result)
}
