//! Planar geometry helpers.
//!
//! All downstream math runs in a local equirectangular frame (meters) anchored
//! at a fixed origin. Angles are degrees measured counter-clockwise from east.

use serde::{Deserialize, Serialize};

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn lerp(&self, other: &Point, t: f64) -> Point {
        Point::new(
            self.x + (other.x - self.x) * t,
            self.y + (other.y - self.y) * t,
        )
    }
}

/// Equirectangular projection around a fixed origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalProjection {
    lon0: f64,
    lat0: f64,
    cos_lat0: f64,
}

impl LocalProjection {
    pub fn new(lon0: f64, lat0: f64) -> Self {
        Self {
            lon0,
            lat0,
            cos_lat0: lat0.to_radians().cos(),
        }
    }

    pub fn origin(&self) -> (f64, f64) {
        (self.lon0, self.lat0)
    }

    pub fn project(&self, lon: f64, lat: f64) -> Point {
        Point::new(
            EARTH_RADIUS_M * self.cos_lat0 * (lon - self.lon0).to_radians(),
            EARTH_RADIUS_M * (lat - self.lat0).to_radians(),
        )
    }

    pub fn unproject(&self, p: Point) -> (f64, f64) {
        let lon = self.lon0 + (p.x / (EARTH_RADIUS_M * self.cos_lat0)).to_degrees();
        let lat = self.lat0 + (p.y / EARTH_RADIUS_M).to_degrees();
        (lon, lat)
    }
}

/// Nearest point on a closed segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentProjection {
    pub point: Point,
    /// Distance from the segment start to `point`, in meters.
    pub offset: f64,
    pub distance: f64,
}

pub fn project_to_segment(p: Point, a: Point, b: Point) -> SegmentProjection {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let point = a.lerp(&b, t);
    SegmentProjection {
        point,
        offset: t * len2.sqrt(),
        distance: p.dist(&point),
    }
}

/// Wraps any angle into `[0, 360)`.
pub fn normalize_deg(angle: f64) -> f64 {
    let a = angle.rem_euclid(360.0);
    if a >= 360.0 {
        0.0
    } else {
        a
    }
}

/// Direction of travel from `a` to `b`, counter-clockwise from east.
pub fn direction_deg(a: Point, b: Point) -> f64 {
    normalize_deg((b.y - a.y).atan2(b.x - a.x).to_degrees())
}

/// Smallest absolute angular difference, in `[0, 180]`.
pub fn bearing_inclination(a: f64, b: f64) -> f64 {
    let d = normalize_deg(a - b);
    if d > 180.0 {
        360.0 - d
    } else {
        d
    }
}
