use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

use super::geometry::Vec2;
use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SegmentId(pub u32);

/// Exit directions at an intersection, also used for lane changes (left/right).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Left,
    Right,
    Straight,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Left => "left",
            Direction::Right => "right",
            Direction::Straight => "straight",
        }
    }

    pub fn parse(s: &str) -> Option<Direction> {
        match s {
            "left" => Some(Direction::Left),
            "right" => Some(Direction::Right),
            "straight" => Some(Direction::Straight),
            _ => None,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A straight multi-lane one-way segment.
///
/// The reference line is the center of the rightmost lane. Lane 0 is the
/// leftmost lane; lane `lane_count - 1` lies on the reference line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub id: SegmentId,
    pub origin: Vec2,
    pub heading: f64,
    pub length: f64,
    pub lane_count: usize,
    pub speed_limit: f64,
}

impl Segment {
    pub fn direction(&self) -> Vec2 {
        Vec2::from_heading(self.heading)
    }

    /// Lateral offset of a lane center from the reference line (left positive).
    pub fn lane_offset(&self, lane: usize, lane_width: f64) -> f64 {
        (self.lane_count.saturating_sub(1) - lane.min(self.lane_count - 1)) as f64 * lane_width
    }

    /// Longitudinal and lateral coordinates of `p` in the segment frame.
    pub fn to_local(&self, p: Vec2) -> (f64, f64) {
        let d = p - self.origin;
        let u = self.direction();
        (d.dot(u), d.dot(u.perp()))
    }

    pub fn point(&self, s: f64, lateral: f64) -> Vec2 {
        let u = self.direction();
        self.origin + u * s + u.perp() * lateral
    }

    pub fn lane_point(&self, s: f64, lane: usize, lane_width: f64) -> Vec2 {
        self.point(s, self.lane_offset(lane, lane_width))
    }

    /// Nearest lane to a lateral offset, clamped to existing lanes.
    pub fn nearest_lane(&self, lateral: f64, lane_width: f64) -> usize {
        let from_right = (lateral / lane_width).round();
        let max = (self.lane_count - 1) as f64;
        let from_right = from_right.clamp(0.0, max);
        (max - from_right) as usize
    }

    /// True when `lateral` is within the paved width of the segment.
    pub fn contains_lateral(&self, lateral: f64, lane_width: f64) -> bool {
        let half = lane_width / 2.0;
        lateral >= -half && lateral <= (self.lane_count - 1) as f64 * lane_width + half
    }
}

/// Fixed signal cycle: green for `green`, then red for `red`, shifted by `offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalCycle {
    pub green: f64,
    pub red: f64,
    pub offset: f64,
}

impl SignalCycle {
    pub fn is_red(&self, time: f64) -> bool {
        let period = self.green + self.red;
        let phase = (time + self.offset).rem_euclid(period);
        phase >= self.green
    }
}

/// One intersection at the end of an approach segment with three exits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intersection {
    pub approach: SegmentId,
    pub exits: BTreeMap<Direction, SegmentId>,
    /// Axis-aligned box in the approach frame: `s` range beyond the approach end.
    pub depth: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signal: Option<SignalCycle>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadNetwork {
    pub segments: Vec<Segment>,
    pub lane_width: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intersection: Option<Intersection>,
}

pub const DEFAULT_LANE_WIDTH: f64 = 4.0;

impl RoadNetwork {
    /// Single straight multi-lane highway along +x starting at the origin.
    pub fn highway(lane_count: usize, length: f64, speed_limit: f64) -> Self {
        RoadNetwork {
            segments: vec![Segment {
                id: SegmentId(0),
                origin: Vec2::ZERO,
                heading: 0.0,
                length,
                lane_count,
                speed_limit,
            }],
            lane_width: DEFAULT_LANE_WIDTH,
            intersection: None,
        }
    }

    /// Approach segment of `approach_length` along +x that ends in an
    /// intersection with left, right and straight exits.
    pub fn with_intersection(lane_count: usize, approach_length: f64, speed_limit: f64) -> Self {
        let lw = DEFAULT_LANE_WIDTH;
        let half = lane_count as f64 * lw + 2.0;
        let depth = 2.0 * half;
        let yc = (lane_count - 1) as f64 * lw / 2.0;
        let x0 = approach_length;
        let exit_len = 200.0;
        let approach = Segment {
            id: SegmentId(0),
            origin: Vec2::ZERO,
            heading: 0.0,
            length: approach_length,
            lane_count,
            speed_limit,
        };
        let straight = Segment {
            id: SegmentId(1),
            origin: Vec2::new(x0 + depth, 0.0),
            heading: 0.0,
            length: exit_len,
            lane_count,
            speed_limit,
        };
        // heading -pi/2: left normal is +x, so the rightmost lane sits at the smallest x
        let right = Segment {
            id: SegmentId(2),
            origin: Vec2::new(x0 + 3.0, yc - half),
            heading: -std::f64::consts::FRAC_PI_2,
            length: exit_len,
            lane_count,
            speed_limit,
        };
        // heading +pi/2: left normal is -x, so the rightmost lane sits at the largest x
        let left = Segment {
            id: SegmentId(3),
            origin: Vec2::new(x0 + depth - 3.0, yc + half),
            heading: std::f64::consts::FRAC_PI_2,
            length: exit_len,
            lane_count,
            speed_limit,
        };
        let mut exits = BTreeMap::new();
        exits.insert(Direction::Straight, straight.id);
        exits.insert(Direction::Right, right.id);
        exits.insert(Direction::Left, left.id);
        RoadNetwork {
            segments: vec![approach, straight, right, left],
            lane_width: lw,
            intersection: Some(Intersection { approach: SegmentId(0), exits, depth, signal: None }),
        }
    }

    pub fn segment(&self, id: SegmentId) -> Result<&Segment, SimError> {
        self.segments.iter().find(|s| s.id == id).ok_or(SimError::UnknownSegment(id))
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.lane_width > 0.0) {
            return Err(SimError::InvalidRoad("lane width must be positive".into()));
        }
        for s in &self.segments {
            if s.lane_count == 0 {
                return Err(SimError::InvalidRoad(format!("segment {} has no lanes", s.id.0)));
            }
            if !(s.speed_limit > 0.0) {
                return Err(SimError::InvalidRoad(format!("segment {} speed limit must be positive", s.id.0)));
            }
            if !(s.length > 0.0) {
                return Err(SimError::InvalidRoad(format!("segment {} length must be positive", s.id.0)));
            }
        }
        if let Some(ix) = &self.intersection {
            self.segment(ix.approach)?;
            for d in [Direction::Left, Direction::Right, Direction::Straight] {
                let id = ix.exits.get(&d).ok_or_else(|| {
                    SimError::InvalidRoad(format!("intersection is missing the {d} exit"))
                })?;
                self.segment(*id)?;
            }
        }
        Ok(())
    }

    /// Exit segment reached by taking `dir` at the intersection.
    pub fn exit(&self, dir: Direction) -> Option<&Segment> {
        let ix = self.intersection.as_ref()?;
        let id = ix.exits.get(&dir)?;
        self.segment(*id).ok()
    }

    /// Segment a point belongs to, preferring `hint` when it still contains the point.
    pub fn locate(&self, p: Vec2, hint: SegmentId) -> SegmentId {
        if let Ok(seg) = self.segment(hint) {
            let (s, d) = seg.to_local(p);
            if s >= -1.0 && s <= seg.length && seg.contains_lateral(d, self.lane_width) {
                return hint;
            }
        }
        for seg in &self.segments {
            if seg.id == hint {
                continue;
            }
            let (s, d) = seg.to_local(p);
            if s >= 0.0 && s <= seg.length && seg.contains_lateral(d, self.lane_width) {
                return seg.id;
            }
        }
        hint
    }
}
