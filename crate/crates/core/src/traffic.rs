//! Link-occupancy state vectors and their short-term prediction.
//!
//! A state vector holds, for one interval of length Δτ, the share of matched
//! probe locations on every link. Interval `j` covers `[(j-1)Δτ, jΔτ)`, so the
//! prediction for interval `j` only reads states `j-1, j-2, ...`.
//!
//! Two predictors are available: a decay-weighted mean of past states and a
//! spectral model that filters each past state in the eigenbasis of the link
//! Laplacian with a learnable diagonal filter per lag.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::history::MatchRecord;
use crate::network::{RoadNetwork, Spectrum};

pub const DEFAULT_INTERVAL_S: f64 = 300.0;
pub const DEFAULT_K_MAX: usize = 12;
pub const DEFAULT_DECAY: f64 = 0.8;

const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrafficConfig {
    /// Δτ in seconds.
    pub interval_s: f64,
    /// Lookback window ΔT in seconds.
    pub lookback_s: f64,
    /// Ratio ρ of the geometric lag weights.
    pub decay: f64,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            interval_s: DEFAULT_INTERVAL_S,
            lookback_s: DEFAULT_K_MAX as f64 * DEFAULT_INTERVAL_S,
            decay: DEFAULT_DECAY,
        }
    }
}

impl TrafficConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.interval_s > 0.0 && self.interval_s.is_finite()) {
            return Err(Error::InvalidParameter(format!("interval must be positive, got {}", self.interval_s)));
        }
        if !(self.lookback_s >= self.interval_s && self.lookback_s.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lookback {} shorter than one interval",
                self.lookback_s
            )));
        }
        if !(self.decay > 0.0 && self.decay.is_finite()) {
            return Err(Error::InvalidParameter(format!("decay must be positive, got {}", self.decay)));
        }
        Ok(())
    }

    /// `⌈ΔT/Δτ⌉`.
    pub fn k_max(&self) -> usize {
        ((self.lookback_s / self.interval_s) - 1e-9).ceil().max(1.0) as usize
    }
}

/// Index `j` of the interval `[(j-1)Δτ, jΔτ)` holding time `t`.
pub fn interval_index(t: f64, interval_s: f64) -> i64 {
    (t / interval_s).floor() as i64 + 1
}

/// Geometric weights `γ_k ∝ ρ^(k-1)` for `k = 1..=k`, summing to 1.
pub fn decay_weights(k: usize, decay: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|i| decay.powi(i as i32)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub interval: i64,
    pub x: Vec<f64>,
}

impl StateVector {
    pub fn uniform(interval: i64, links: usize) -> Self {
        Self {
            interval,
            x: vec![1.0 / links as f64; links],
        }
    }

    /// Strict positivity and unit sum.
    pub fn validate(&self) -> Result<()> {
        if self.x.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "state {} has a non-positive entry",
                self.interval
            )));
        }
        let s: f64 = self.x.iter().sum();
        if (s - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidParameter(format!("state {} sums to {s}", self.interval)));
        }
        Ok(())
    }
}

/// Adds one vehicle to every link and normalizes.
pub fn shares_from_counts(counts: &[u32]) -> Vec<f64> {
    let total: f64 = counts.iter().map(|&c| c as f64 + 1.0).sum();
    counts.iter().map(|&c| (c as f64 + 1.0) / total).collect()
}

/// Aggregates the matched locations that fall in interval `j`.
pub fn aggregate_interval(records: &[MatchRecord], net: &RoadNetwork, j: i64, interval_s: f64) -> StateVector {
    let mut counts = vec![0u32; net.links.len()];
    for r in records {
        for p in &r.probes {
            if let Some(e) = p.edge {
                if interval_index(p.timestamp, interval_s) == j {
                    counts[net.edge(e).link] += 1;
                }
            }
        }
    }
    StateVector {
        interval: j,
        x: shares_from_counts(&counts),
    }
}

fn check_history<H: AsRef<[f64]>>(history: &[H], gamma: &[f64]) -> Result<usize> {
    let first = history.first().ok_or(Error::InsufficientData("empty state history".into()))?;
    if history.len() != gamma.len() {
        return Err(Error::DimensionMismatch {
            expected: gamma.len(),
            got: history.len(),
        });
    }
    let n = first.as_ref().len();
    for h in history {
        if h.as_ref().len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: h.as_ref().len(),
            });
        }
    }
    Ok(n)
}

/// `Σ_k γ_k X_{j-k}` over a newest-first history.
pub fn predict_naive<H: AsRef<[f64]>>(history: &[H], gamma: &[f64]) -> Result<Vec<f64>> {
    let n = check_history(history, gamma)?;
    let mut out = vec![0.0; n];
    for (h, &g) in history.iter().zip(gamma) {
        for (o, v) in out.iter_mut().zip(h.as_ref()) {
            *o += g * v;
        }
    }
    Ok(out)
}

/// Clips negative entries and renormalizes; a vector with no positive mass
/// becomes uniform.
pub fn project_to_simplex(mut x: Vec<f64>) -> Vec<f64> {
    for v in x.iter_mut() {
        if !(*v > 0.0) {
            *v = 0.0;
        }
    }
    let s: f64 = x.iter().sum();
    if s > 0.0 && s.is_finite() {
        x.iter_mut().for_each(|v| *v /= s);
    } else {
        let n = x.len() as f64;
        x.iter_mut().for_each(|v| *v = 1.0 / n);
    }
    x
}

/// Per-interval link counts of ingested match records.
#[derive(Debug, Clone)]
pub struct TrafficLog {
    links: usize,
    interval_s: f64,
    counts: BTreeMap<i64, Vec<u32>>,
}

impl TrafficLog {
    pub fn new(links: usize, interval_s: f64) -> Self {
        Self {
            links,
            interval_s,
            counts: BTreeMap::new(),
        }
    }

    pub fn interval_s(&self) -> f64 {
        self.interval_s
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn ingest(&mut self, net: &RoadNetwork, record: &MatchRecord) {
        for p in &record.probes {
            if let Some(e) = p.edge {
                let j = interval_index(p.timestamp, self.interval_s);
                let row = self.counts.entry(j).or_insert_with(|| vec![0; self.links]);
                row[net.edge(e).link] += 1;
            }
        }
    }

    pub fn first_interval(&self) -> Option<i64> {
        self.counts.keys().next().copied()
    }

    pub fn last_interval(&self) -> Option<i64> {
        self.counts.keys().next_back().copied()
    }

    pub fn state(&self, j: i64) -> StateVector {
        match self.counts.get(&j) {
            Some(c) => StateVector {
                interval: j,
                x: shares_from_counts(c),
            },
            None => StateVector::uniform(j, self.links),
        }
    }

    /// Every interval from the first to the last ingested one, quiet
    /// intervals included.
    pub fn states(&self) -> Vec<StateVector> {
        match (self.first_interval(), self.last_interval()) {
            (Some(a), Some(b)) => (a..=b).map(|j| self.state(j)).collect(),
            _ => Vec::new(),
        }
    }

    /// States `j-1, j-2, ...` (newest first), at most `k_max` of them and
    /// none before the first ingested interval.
    pub fn history(&self, j: i64, k_max: usize) -> Vec<Vec<f64>> {
        let Some(first) = self.first_interval() else {
            return Vec::new();
        };
        (1..=k_max as i64)
            .map(|k| j - k)
            .take_while(|&i| i >= first)
            .map(|i| self.state(i).x)
            .collect()
    }
}

pub fn write_states_csv(path: &Path, net: &RoadNetwork, states: &[StateVector]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["interval_j", "link_id", "X"])?;
    for s in states {
        for (l, v) in s.x.iter().enumerate() {
            w.write_record([s.interval.to_string(), net.links[l].id.to_string(), format!("{v:e}")])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct StateRow {
    interval_j: i64,
    link_id: i64,
    #[serde(rename = "X")]
    x: f64,
}

pub fn read_states_csv(path: &Path, net: &RoadNetwork) -> Result<Vec<StateVector>> {
    let rows: Vec<StateRow> = crate::network::read_records(path, &["interval_j", "link_id", "X"])?;
    let mut by_interval: BTreeMap<i64, Vec<Option<f64>>> = BTreeMap::new();
    for r in rows {
        let l = net
            .link_ix(r.link_id)
            .ok_or_else(|| Error::Format(format!("unknown link {} in state file", r.link_id)))?;
        let row = by_interval.entry(r.interval_j).or_insert_with(|| vec![None; net.links.len()]);
        if row[l].replace(r.x).is_some() {
            return Err(Error::Format(format!("duplicate entry for interval {} link {}", r.interval_j, r.link_id)));
        }
    }
    let mut out = Vec::with_capacity(by_interval.len());
    for (j, row) in by_interval {
        let x = row
            .into_iter()
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| Error::Format(format!("interval {j} does not cover every link")))?;
        let s = StateVector { interval: j, x };
        s.validate().map_err(|e| Error::Format(e.to_string()))?;
        out.push(s);
    }
    Ok(out)
}

/// Versioned on-disk form of [`SgmnModel`]; the eigenbasis is recomputed
/// from the network on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgmnCheckpoint {
    pub version: u32,
    pub links: usize,
    pub k_max: usize,
    pub gamma: Vec<f64>,
    pub filters: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub min_learning_rate: f64,
    /// Epochs without validation improvement before the rate drops tenfold.
    pub patience: usize,
    /// `None` trains on the full batch with a non-increasing loss guarantee.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            max_epochs: 2000,
            learning_rate: 1e-3,
            min_learning_rate: 1e-5,
            patience: 4,
            batch_size: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
    pub test_loss: Option<f64>,
    /// Epoch whose filters were kept (0 is the initialization).
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub final_learning_rate: f64,
}

/// Spectral graph Markov network with fixed lag weights.
#[derive(Debug, Clone)]
pub struct SgmnModel {
    basis: DMatrix<f64>,
    gamma: Vec<f64>,
    filters: Vec<Vec<f64>>,
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    // a shorter second-moment memory than the usual 0.999 keeps steps from
    // stalling once gradients shrink by orders of magnitude
    const B2: f64 = 0.99;
    const EPS: f64 = 1e-8;

    fn new(k: usize, n: usize) -> Self {
        Self {
            m: vec![vec![0.0; n]; k],
            v: vec![vec![0.0; n]; k],
            t: 0,
        }
    }

    fn step(&mut self, grad: &[Vec<f64>], lr: f64) -> Vec<Vec<f64>> {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        let mut delta = grad.to_vec();
        for k in 0..grad.len() {
            for i in 0..grad[k].len() {
                let g = grad[k][i];
                self.m[k][i] = Self::B1 * self.m[k][i] + (1.0 - Self::B1) * g;
                self.v[k][i] = Self::B2 * self.v[k][i] + (1.0 - Self::B2) * g * g;
                delta[k][i] = -lr * (self.m[k][i] / c1) / ((self.v[k][i] / c2).sqrt() + Self::EPS);
            }
        }
        delta
    }
}

impl SgmnModel {
    /// Filters start at `Λ^k` with the eigenvalues scaled into `[0, 1]`.
    pub fn new(spectrum: &Spectrum, k_max: usize, decay: f64) -> Result<Self> {
        Self::init(spectrum, k_max, decay, 1.0)
    }

    /// Filters start at the powers of the unscaled eigenvalues; only sensible
    /// for small graphs.
    pub fn with_literal_init(spectrum: &Spectrum, k_max: usize, decay: f64) -> Result<Self> {
        Self::init(spectrum, k_max, decay, spectrum.raw_max.max(f64::MIN_POSITIVE))
    }

    fn init(spectrum: &Spectrum, k_max: usize, decay: f64, scale: f64) -> Result<Self> {
        if k_max == 0 {
            return Err(Error::InvalidParameter("k_max must be at least 1".into()));
        }
        let filters = (1..=k_max)
            .map(|k| spectrum.eigenvalues.iter().map(|&l| (l * scale).powi(k as i32)).collect())
            .collect();
        Self::from_parts(spectrum.eigenvectors.clone(), decay_weights(k_max, decay), filters)
    }

    pub fn from_parts(basis: DMatrix<f64>, gamma: Vec<f64>, filters: Vec<Vec<f64>>) -> Result<Self> {
        let n = basis.nrows();
        if basis.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: basis.ncols(),
            });
        }
        if gamma.is_empty() || gamma.len() != filters.len() {
            return Err(Error::DimensionMismatch {
                expected: gamma.len(),
                got: filters.len(),
            });
        }
        if (gamma.iter().sum::<f64>() - 1.0).abs() > SIMPLEX_TOL || gamma.iter().any(|g| !(*g >= 0.0)) {
            return Err(Error::InvalidParameter("lag weights must be nonnegative and sum to 1".into()));
        }
        for f in &filters {
            if f.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: f.len() });
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter("non-finite filter entry".into()));
            }
        }
        Ok(Self { basis, gamma, filters })
    }

    pub fn from_checkpoint(spectrum: &Spectrum, ckpt: &SgmnCheckpoint) -> Result<Self> {
        if ckpt.version != 1 {
            return Err(Error::Format(format!("unsupported checkpoint version {}", ckpt.version)));
        }
        if ckpt.links != spectrum.len() {
            return Err(Error::DimensionMismatch {
                expected: spectrum.len(),
                got: ckpt.links,
            });
        }
        if ckpt.k_max != ckpt.filters.len() {
            return Err(Error::Format("k_max disagrees with the filter count".into()));
        }
        Self::from_parts(spectrum.eigenvectors.clone(), ckpt.gamma.clone(), ckpt.filters.clone())
    }

    pub fn checkpoint(&self) -> SgmnCheckpoint {
        SgmnCheckpoint {
            version: 1,
            links: self.links(),
            k_max: self.k_max(),
            gamma: self.gamma.clone(),
            filters: self.filters.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.checkpoint())?)?;
        Ok(())
    }

    pub fn load(spectrum: &Spectrum, path: &Path) -> Result<Self> {
        let ckpt: SgmnCheckpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_checkpoint(spectrum, &ckpt)
    }

    pub fn links(&self) -> usize {
        self.basis.nrows()
    }

    pub fn k_max(&self) -> usize {
        self.gamma.len()
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn filters(&self) -> &[Vec<f64>] {
        &self.filters
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    fn spectral(&self, x: &[f64]) -> DVector<f64> {
        self.basis.tr_mul(&DVector::from_column_slice(x))
    }

    /// Linear output `Σ_k γ_k U Λ_k Uᵀ X_{j-k}` over a newest-first history.
    /// A history shorter than `k_max` uses the leading lag weights,
    /// renormalized.
    pub fn forward_raw<H: AsRef<[f64]>>(&self, history: &[H]) -> Result<Vec<f64>> {
        if history.is_empty() {
            return Err(Error::InsufficientData("empty state history".into()));
        }
        let h = history.len().min(self.k_max());
        let norm: f64 = self.gamma[..h].iter().sum();
        let n = self.links();
        let mut acc = DVector::zeros(n);
        for (k, x) in history[..h].iter().enumerate() {
            let x = x.as_ref();
            if x.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: x.len() });
            }
            let z = self.spectral(x);
            let g = self.gamma[k] / norm;
            for i in 0..n {
                acc[i] += g * self.filters[k][i] * z[i];
            }
        }
        Ok((&self.basis * acc).as_slice().to_vec())
    }

    /// Prediction projected back onto the simplex.
    pub fn forward<H: AsRef<[f64]>>(&self, history: &[H]) -> Result<Vec<f64>> {
        Ok(project_to_simplex(self.forward_raw(history)?))
    }

    /// Mean squared error over the given targets and its gradient with respect
    /// to every filter entry. `z` holds the spectral coordinates of the whole
    /// sequence and each target index must have `k_max` predecessors.
    fn loss_grad(&self, z: &[DVector<f64>], targets: &[usize], filters: &[Vec<f64>], grad: bool) -> (f64, Vec<Vec<f64>>) {
        let n = self.links();
        let k_max = self.k_max();
        let mut g = if grad { vec![vec![0.0; n]; k_max] } else { Vec::new() };
        if targets.is_empty() {
            return (0.0, g);
        }
        let mut loss = 0.0;
        let scale = 1.0 / (targets.len() * n) as f64;
        let mut r = vec![0.0; n];
        for &t in targets {
            for i in 0..n {
                let mut pred = 0.0;
                for k in 0..k_max {
                    pred += self.gamma[k] * filters[k][i] * z[t - k - 1][i];
                }
                r[i] = pred - z[t][i];
                loss += r[i] * r[i];
            }
            if grad {
                for k in 0..k_max {
                    for i in 0..n {
                        g[k][i] += 2.0 * scale * self.gamma[k] * r[i] * z[t - k - 1][i];
                    }
                }
            }
        }
        (loss * scale, g)
    }

    /// Mean over targets of `Σ_l (X^l - X̂^l)² / |L|` using the unprojected
    /// output, with the gradient for every filter entry.
    pub fn loss_and_gradient(&self, states: &[Vec<f64>], targets: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
        let z = self.prepare(states, targets)?;
        Ok(self.loss_grad(&z, targets, &self.filters, true))
    }

    fn prepare(&self, states: &[Vec<f64>], targets: &[usize]) -> Result<Vec<DVector<f64>>> {
        let n = self.links();
        for s in states {
            if s.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: s.len() });
            }
        }
        if let Some(&t) = targets.iter().find(|&&t| t < self.k_max() || t >= states.len()) {
            return Err(Error::InvalidParameter(format!("target {t} lacks {} predecessors", self.k_max())));
        }
        Ok(states.iter().map(|s| self.spectral(s)).collect())
    }

    /// Trains the filters on a chronological sequence of states split 6:2:2
    /// into training, validation and test targets. Keeps the filters with
    /// the lowest validation loss.
    pub fn train(&mut self, states: &[Vec<f64>], opts: &TrainOptions) -> Result<TrainReport> {
        let k_max = self.k_max();
        if states.len() < k_max + 2 {
            return Err(Error::InsufficientData(format!(
                "{} intervals, need at least {}",
                states.len(),
                k_max + 2
            )));
        }
        let targets: Vec<usize> = (k_max..states.len()).collect();
        let m = targets.len();
        let n_train = ((m as f64 * 0.6).floor() as usize).max(1);
        let n_val = ((m as f64 * 0.2).floor() as usize).max(1).min(m - n_train);
        let train: Vec<usize> = targets[..n_train].to_vec();
        let val: Vec<usize> = targets[n_train..n_train + n_val].to_vec();
        let test: Vec<usize> = targets[n_train + n_val..].to_vec();
        let z = self.prepare(states, &targets)?;

        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut adam = Adam::new(k_max, self.links());
        let mut lr = opts.learning_rate;
        let mut theta = self.filters.clone();
        let mut best = theta.clone();
        let mut best_val = self.loss_grad(&z, &val, &theta, false).0;
        let mut best_epoch = 0;
        let mut stale = 0;
        let mut report = TrainReport {
            train_loss: Vec::new(),
            validation_loss: Vec::new(),
            test_loss: None,
            best_epoch: 0,
            best_validation_loss: best_val,
            final_learning_rate: lr,
        };
        let mut train_loss = self.loss_grad(&z, &train, &theta, false).0;

        for epoch in 1..=opts.max_epochs {
            match opts.batch_size {
                None => {
                    let (_, g) = self.loss_grad(&z, &train, &theta, true);
                    let delta = adam.step(&g, lr);
                    train_loss = self.safeguarded_update(&z, &train, &mut theta, &delta, train_loss);
                }
                Some(b) => {
                    let mut order = train.clone();
                    order.shuffle(&mut rng);
                    for batch in order.chunks(b.max(1)) {
                        let (_, g) = self.loss_grad(&z, batch, &theta, true);
                        let delta = adam.step(&g, lr);
                        add_into(&mut theta, &delta, 1.0);
                    }
                    train_loss = self.loss_grad(&z, &train, &theta, false).0;
                }
            }
            let val_loss = self.loss_grad(&z, &val, &theta, false).0;
            report.train_loss.push(train_loss);
            report.validation_loss.push(val_loss);
            if val_loss < best_val {
                best_val = val_loss;
                best.clone_from(&theta);
                best_epoch = epoch;
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

        self.filters = best;
        report.best_epoch = best_epoch;
        report.best_validation_loss = best_val;
        report.final_learning_rate = lr;
        report.test_loss = (!test.is_empty()).then(|| self.loss_grad(&z, &test, &self.filters, false).0);
        Ok(report)
    }

    /// Applies `delta`, halving it until the training loss does not rise.
    /// Rejects the step outright if no fraction of it helps.
    fn safeguarded_update(
        &self,
        z: &[DVector<f64>],
        train: &[usize],
        theta: &mut Vec<Vec<f64>>,
        delta: &[Vec<f64>],
        current: f64,
    ) -> f64 {
        let mut frac = 1.0;
        for _ in 0..40 {
            let mut trial = theta.clone();
            add_into(&mut trial, delta, frac);
            let loss = self.loss_grad(z, train, &trial, false).0;
            if loss <= current {
                *theta = trial;
                return loss;
            }
            frac *= 0.5;
        }
        current
    }
}

fn add_into(theta: &mut [Vec<f64>], delta: &[Vec<f64>], frac: f64) {
    for (t, d) in theta.iter_mut().zip(delta) {
        for (a, b) in t.iter_mut().zip(d) {
            *a += frac * b;
        }
    }
}

#[derive(Debug, Clone)]
pub enum Predictor {
    Naive { k_max: usize, decay: f64 },
    Sgmn(SgmnModel),
}

impl Predictor {
    pub fn naive(cfg: &TrafficConfig) -> Self {
        Predictor::Naive {
            k_max: cfg.k_max(),
            decay: cfg.decay,
        }
    }

    pub fn k_max(&self) -> usize {
        match self {
            Predictor::Naive { k_max, .. } => *k_max,
            Predictor::Sgmn(m) => m.k_max(),
        }
    }

    /// Predicted shares for interval `j`, or `None` when the log holds no
    /// earlier interval. The trained network also needs a full window.
    pub fn predict(&self, log: &TrafficLog, j: i64) -> Result<Option<Vec<f64>>> {
        let history = log.history(j, self.k_max());
        if history.is_empty() || matches!(self, Predictor::Sgmn(_)) && history.len() < self.k_max() {
            return Ok(None);
        }
        let x = match self {
            Predictor::Naive { decay, .. } => predict_naive(&history, &decay_weights(history.len(), *decay))?,
            Predictor::Sgmn(m) => m.forward(&history)?,
        };
        Ok(Some(x))
    }
}
