//! Matcher parameters shared by command-line flags and JSON config files.
//!
//! Every field is optional so that a flag given on the command line can be
//! told apart from one left at its default. Values are resolved in the order
//! flag, then config file, then built-in default.

use std::path::Path;

use clap::Args;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::history::TemporalMode;
use crate::matcher::MatchConfig;
use crate::scoring::{FusionWeights, ScoreSet};
use crate::traffic::TrafficConfig;

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchParams {
    /// Edge split length δ in metres [default: 50]
    #[arg(long)]
    pub split_length: Option<f64>,
    /// Candidate search radius R in metres [default: 170]
    #[arg(long)]
    pub radius: Option<f64>,
    /// Speed coefficient λ [default: 0.1]
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Spatial radius r_s of the collaborative group in metres [default: 300]
    #[arg(long)]
    pub spatial_radius: Option<f64>,
    /// Temporal radius r_t of the collaborative group in seconds [default: 5]
    #[arg(long)]
    pub temporal_radius: Option<f64>,
    /// How start and end times are compared [default: time-of-day]
    #[arg(long, value_enum)]
    pub temporal_mode: Option<TemporalMode>,
    /// Weight of other vehicles' history relative to the ego vehicle, in [0, 1] [default: 1]
    #[arg(long)]
    pub w_c: Option<f64>,
    /// Fusion weights as `wp,wc,wa` [default: 0.2,0.5,0.3]
    #[arg(long, value_parser = parse_weights)]
    pub weights: Option<FusionWeights>,
    /// Scores to fuse, e.g. `P`, `P+C`, `P+C+A` [default: P+C+A]
    #[arg(long)]
    pub scores: Option<ScoreSet>,
    /// Fixed number of candidate paths K instead of the interval rule
    #[arg(long)]
    pub k: Option<usize>,
    /// Traffic-state interval Δτ in seconds [default: 300]
    #[arg(long)]
    pub interval: Option<f64>,
    /// Lookback ΔT of the traffic predictor in seconds [default: 3600]
    #[arg(long)]
    pub lookback: Option<f64>,
    /// Ratio of the geometric lag weights [default: 0.8]
    #[arg(long)]
    pub decay: Option<f64>,
    /// Gap that splits a vehicle's probes into separate trips, in seconds [default: 900]
    #[arg(long)]
    pub trip_gap: Option<f64>,
}

fn parse_weights(s: &str) -> std::result::Result<FusionWeights, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [wp, wc, wa] => FusionWeights::new(wp, wc, wa).map_err(|e| e.to_string()),
        _ => Err("expected three comma-separated weights".into()),
    }
}

impl MatchParams {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Fields set here win over those of `fallback`.
    pub fn or(self, fallback: MatchParams) -> MatchParams {
        MatchParams {
            split_length: self.split_length.or(fallback.split_length),
            radius: self.radius.or(fallback.radius),
            lambda: self.lambda.or(fallback.lambda),
            spatial_radius: self.spatial_radius.or(fallback.spatial_radius),
            temporal_radius: self.temporal_radius.or(fallback.temporal_radius),
            temporal_mode: self.temporal_mode.or(fallback.temporal_mode),
            w_c: self.w_c.or(fallback.w_c),
            weights: self.weights.or(fallback.weights),
            scores: self.scores.or(fallback.scores),
            k: self.k.or(fallback.k),
            interval: self.interval.or(fallback.interval),
            lookback: self.lookback.or(fallback.lookback),
            decay: self.decay.or(fallback.decay),
            trip_gap: self.trip_gap.or(fallback.trip_gap),
        }
    }

    pub fn split_length(&self) -> f64 {
        self.split_length.unwrap_or(crate::network::DEFAULT_SPLIT_LENGTH)
    }

    pub fn trip_gap(&self) -> f64 {
        self.trip_gap.unwrap_or(crate::trajectory::DEFAULT_TRIP_GAP)
    }

    pub fn match_config(&self) -> Result<MatchConfig> {
        let d = MatchConfig::default();
        let traffic = TrafficConfig {
            interval_s: self.interval.unwrap_or(d.traffic.interval_s),
            lookback_s: self.lookback.unwrap_or(d.traffic.lookback_s),
            decay: self.decay.unwrap_or(d.traffic.decay),
        };
        let cfg = MatchConfig {
            radius: self.radius.unwrap_or(d.radius),
            lambda: self.lambda.unwrap_or(d.lambda),
            spatial_radius: self.spatial_radius.unwrap_or(d.spatial_radius),
            temporal_radius: self.temporal_radius.unwrap_or(d.temporal_radius),
            temporal_mode: self.temporal_mode.unwrap_or(d.temporal_mode),
            w_c: self.w_c.unwrap_or(d.w_c),
            weights: self.weights.unwrap_or(d.weights),
            scores: self.scores.unwrap_or(d.scores),
            k: self.k.or(d.k),
            traffic,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
