//! Polyline routes: arc-length projection shared by route progress and path tracking.

use serde::{Deserialize, Serialize};

use crate::sim::{wrap_angle, Vec2};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RouteError {
    #[error("route needs at least two distinct waypoints")]
    TooShort,
    #[error("route waypoint {0} is not finite")]
    NonFinite(usize),
    #[error("route waypoints {0} and {1} coincide")]
    Duplicate(usize, usize),
}

/// Ordered waypoints along the road.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RouteRepr", into = "RouteRepr")]
pub struct RouteSpec {
    waypoints: Vec<Vec2>,
    cumulative: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RouteRepr {
    waypoints: Vec<Vec2>,
}

impl TryFrom<RouteRepr> for RouteSpec {
    type Error = RouteError;
    fn try_from(r: RouteRepr) -> Result<Self, RouteError> {
        RouteSpec::new(r.waypoints)
    }
}

impl From<RouteSpec> for RouteRepr {
    fn from(r: RouteSpec) -> Self {
        RouteRepr { waypoints: r.waypoints }
    }
}

/// Where a point projects onto a route.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arc length from the route start.
    pub s: f64,
    /// Signed lateral offset, left positive.
    pub lateral: f64,
    pub tangent_heading: f64,
    /// Point lies before the start or past the end of the route.
    pub clamped: bool,
}

impl RouteSpec {
    pub fn new(waypoints: Vec<Vec2>) -> Result<Self, RouteError> {
        if waypoints.len() < 2 {
            return Err(RouteError::TooShort);
        }
        let mut cumulative = Vec::with_capacity(waypoints.len());
        cumulative.push(0.0);
        for i in 0..waypoints.len() {
            if !waypoints[i].is_finite() {
                return Err(RouteError::NonFinite(i));
            }
            if i > 0 {
                let len = (waypoints[i] - waypoints[i - 1]).norm();
                if len <= 1e-9 {
                    return Err(RouteError::Duplicate(i - 1, i));
                }
                cumulative.push(cumulative[i - 1] + len);
            }
        }
        Ok(RouteSpec { waypoints, cumulative })
    }

    /// Straight route between two points sampled every `step` meters.
    pub fn straight(from: Vec2, to: Vec2, step: f64) -> Result<Self, RouteError> {
        let len = (to - from).norm();
        let n = ((len / step).ceil() as usize).max(1);
        let pts = (0..=n).map(|i| from + (to - from) * (i as f64 / n as f64)).collect();
        RouteSpec::new(pts)
    }

    pub fn waypoints(&self) -> &[Vec2] {
        &self.waypoints
    }

    pub fn total_length(&self) -> f64 {
        *self.cumulative.last().unwrap_or(&0.0)
    }

    pub fn end(&self) -> Vec2 {
        *self.waypoints.last().expect("route has waypoints")
    }

    /// Nearest-segment projection. Ties resolve to the earlier segment.
    pub fn project(&self, p: Vec2) -> Projection {
        let last = self.waypoints.len() - 2;
        let mut best: Option<(f64, usize, f64, f64)> = None;
        for i in 0..=last {
            let a = self.waypoints[i];
            let b = self.waypoints[i + 1];
            let ab = b - a;
            let raw = (p - a).dot(ab) / ab.norm_sq();
            let t = raw.clamp(0.0, 1.0);
            let dist = (p - (a + ab * t)).norm_sq();
            if best.is_none_or(|(d, ..)| dist < d) {
                best = Some((dist, i, t, raw));
            }
        }
        let (_, i, t, raw) = best.expect("at least one segment");
        let a = self.waypoints[i];
        let ab = self.waypoints[i + 1] - a;
        let seg_len = ab.norm();
        let tangent = ab * (1.0 / seg_len);
        let foot = a + ab * t;
        let clamped = (i == 0 && raw < 0.0) || (i == last && raw > 1.0);
        // beyond the ends, measure along the extended terminal segment
        let s = if clamped {
            self.cumulative[i] + raw * seg_len
        } else {
            self.cumulative[i] + t * seg_len
        };
        let lateral = if clamped {
            tangent.cross(p - a)
        } else {
            let off = p - foot;
            off.norm().copysign(tangent.cross(off))
        };
        Projection { s, lateral, tangent_heading: wrap_angle(tangent.angle()), clamped }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_on_straight_route() {
        let r = RouteSpec::straight(Vec2::ZERO, Vec2::new(100.0, 0.0), 10.0).unwrap();
        assert_eq!(r.total_length(), 100.0);
        let p = r.project(Vec2::new(35.0, 1.0));
        assert!((p.s - 35.0).abs() < 1e-12);
        assert!((p.lateral - 1.0).abs() < 1e-12);
        assert!(!p.clamped);
        let p = r.project(Vec2::new(-5.0, -2.0));
        assert!(p.clamped);
        assert!((p.lateral + 2.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_degenerate_routes() {
        assert_eq!(RouteSpec::new(vec![Vec2::ZERO]), Err(RouteError::TooShort));
        assert_eq!(RouteSpec::new(vec![Vec2::ZERO, Vec2::ZERO]), Err(RouteError::Duplicate(0, 1)));
    }

    #[test]
    fn serde_round_trip_recomputes_lengths() {
        let r = RouteSpec::new(vec![Vec2::ZERO, Vec2::new(3.0, 4.0), Vec2::new(3.0, 10.0)]).unwrap();
        let json = serde_json::to_string(&r).unwrap();
        let back: RouteSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back.total_length(), 11.0);
        assert_eq!(back, r);
    }
}
