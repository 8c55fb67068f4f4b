//! GNSS probes and trajectories, plus the probes CSV format.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::network::{read_records, RoadNetwork};

/// Upper sanity bound on probe speed (m/s).
pub const MAX_SPEED: f64 = 70.0;

/// Default gap (seconds) that splits one vehicle's probes into separate trips.
pub const DEFAULT_TRIP_GAP: f64 = 900.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub t: f64,
    /// m/s
    pub speed: f64,
    /// Degrees counter-clockwise from east, same convention as link bearings.
    pub bearing: f64,
    pub lon: f64,
    pub lat: f64,
}

impl Probe {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.t, self.speed, self.bearing, self.lon, self.lat]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Format("probe has non-finite fields".into()));
        }
        if self.lon.abs() > 180.0 || self.lat.abs() > 90.0 {
            return Err(Error::Format(format!("probe at ({}, {}) is off the globe", self.lon, self.lat)));
        }
        if !(0.0..MAX_SPEED).contains(&self.speed) {
            return Err(Error::Format(format!("probe speed {} outside [0, {MAX_SPEED})", self.speed)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: String,
    pub vehicle: String,
    pub probes: Vec<Probe>,
}

impl Trajectory {
    pub fn new(id: impl Into<String>, vehicle: impl Into<String>, probes: Vec<Probe>) -> Result<Self> {
        let id = id.into();
        if probes.is_empty() {
            return Err(Error::InsufficientData(format!("trajectory {id} has no probes")));
        }
        for p in &probes {
            p.validate()?;
        }
        if probes.windows(2).any(|w| w[1].t <= w[0].t) {
            return Err(Error::Format(format!("trajectory {id} timestamps are not strictly increasing")));
        }
        Ok(Self {
            id,
            vehicle: vehicle.into(),
            probes,
        })
    }

    pub fn len(&self) -> usize {
        self.probes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probes.is_empty()
    }

    pub fn start(&self) -> &Probe {
        &self.probes[0]
    }

    pub fn end(&self) -> &Probe {
        &self.probes[self.probes.len() - 1]
    }

    pub fn start_time(&self) -> f64 {
        self.start().t
    }

    pub fn end_time(&self) -> f64 {
        self.end().t
    }

    /// Median gap between successive probes; 0 for a single probe.
    pub fn interval(&self) -> f64 {
        let mut gaps: Vec<f64> = self.probes.windows(2).map(|w| w[1].t - w[0].t).collect();
        if gaps.is_empty() {
            return 0.0;
        }
        gaps.sort_by(f64::total_cmp);
        let n = gaps.len();
        if n % 2 == 1 {
            gaps[n / 2]
        } else {
            0.5 * (gaps[n / 2 - 1] + gaps[n / 2])
        }
    }

    pub fn positions(&self, net: &RoadNetwork) -> Vec<Point> {
        self.probes.iter().map(|p| net.project(p.lon, p.lat)).collect()
    }
}

/// One row of the probes file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub vehicle_id: String,
    pub timestamp: f64,
    pub lon: f64,
    pub lat: f64,
    pub speed_mps: f64,
    pub bearing_deg: f64,
}

pub fn read_probes_csv(path: &Path) -> Result<Vec<ProbeRow>> {
    read_records(path, &["vehicle_id", "timestamp", "lon", "lat", "speed_mps", "bearing_deg"])
}

/// Groups rows by vehicle and splits each vehicle's stream at gaps longer
/// than `trip_gap`. Trip ids are `{vehicle}-{k}`, `k` counting from 0.
pub fn split_trips(rows: &[ProbeRow], trip_gap: f64) -> Result<Vec<Trajectory>> {
    let mut by_vehicle: BTreeMap<&str, Vec<Probe>> = BTreeMap::new();
    for r in rows {
        by_vehicle.entry(r.vehicle_id.as_str()).or_default().push(Probe {
            t: r.timestamp,
            speed: r.speed_mps,
            bearing: r.bearing_deg,
            lon: r.lon,
            lat: r.lat,
        });
    }
    let mut out = Vec::new();
    for (vehicle, mut probes) in by_vehicle {
        probes.sort_by(|a, b| a.t.total_cmp(&b.t));
        let mut current: Vec<Probe> = Vec::new();
        let mut k = 0;
        for p in probes {
            if let Some(last) = current.last() {
                if p.t == last.t {
                    return Err(Error::Format(format!("vehicle {vehicle} has duplicate timestamp {}", p.t)));
                }
                if p.t - last.t > trip_gap {
                    out.push(Trajectory::new(format!("{vehicle}-{k}"), vehicle, std::mem::take(&mut current))?);
                    k += 1;
                }
            }
            current.push(p);
        }
        if !current.is_empty() {
            out.push(Trajectory::new(format!("{vehicle}-{k}"), vehicle, current)?);
        }
    }
    Ok(out)
}

pub fn read_trajectories(path: &Path, trip_gap: f64) -> Result<Vec<Trajectory>> {
    split_trips(&read_probes_csv(path)?, trip_gap)
}

pub fn trajectory_rows(trajectories: &[Trajectory]) -> Vec<ProbeRow> {
    trajectories
        .iter()
        .flat_map(|tr| {
            tr.probes.iter().map(move |p| ProbeRow {
                vehicle_id: tr.vehicle.clone(),
                timestamp: p.t,
                lon: p.lon,
                lat: p.lat,
                speed_mps: p.speed,
                bearing_deg: p.bearing,
            })
        })
        .collect()
}

pub fn write_probes_csv(path: &Path, trajectories: &[Trajectory]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in trajectory_rows(trajectories) {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probe(t: f64) -> Probe {
        Probe { t, speed: 10.0, bearing: 0.0, lon: 117.0, lat: 24.0 }
    }

    #[test]
    fn rejects_non_increasing_time() {
        assert!(Trajectory::new("a", "v", vec![probe(0.0), probe(0.0)]).is_err());
        assert!(Trajectory::new("a", "v", vec![probe(5.0), probe(1.0)]).is_err());
    }

    #[test]
    fn rejects_insane_speed() {
        let mut p = probe(0.0);
        p.speed = 80.0;
        assert!(Trajectory::new("a", "v", vec![p]).is_err());
    }

    #[test]
    fn interval_is_median_gap() {
        let tr = Trajectory::new("a", "v", vec![probe(0.0), probe(15.0), probe(30.0), probe(90.0)]).unwrap();
        assert_eq!(tr.interval(), 15.0);
        let tr = Trajectory::new("a", "v", vec![probe(0.0), probe(10.0), probe(40.0)]).unwrap();
        assert_eq!(tr.interval(), 20.0);
    }

    #[test]
    fn split_on_gap() {
        let row = |v: &str, t: f64| ProbeRow {
            vehicle_id: v.into(),
            timestamp: t,
            lon: 117.0,
            lat: 24.0,
            speed_mps: 5.0,
            bearing_deg: 0.0,
        };
        let rows = vec![row("b", 0.0), row("a", 30.0), row("a", 0.0), row("a", 5000.0), row("a", 5030.0)];
        let trips = split_trips(&rows, DEFAULT_TRIP_GAP).unwrap();
        let ids: Vec<&str> = trips.iter().map(|t| t.id.as_str()).collect();
        assert_eq!(ids, vec!["a-0", "a-1", "b-0"]);
        assert_eq!(trips[0].probes[0].t, 0.0);
        assert_eq!(trips[1].len(), 2);
    }
}
