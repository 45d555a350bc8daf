//! Timestamped kinematic and event log of one run.
//!
//! Export format is line-delimited JSON. The first line is the header, each
//! following line one frame. Field order inside every record is fixed:
//!
//! - header: `scenario_id, dt, ego, seed`
//! - frame: `tick, time, vehicles[], events[]`
//! - vehicle sample: `id, x, y, heading, speed, lane, segment`

use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

use super::{CollisionEvent, SegmentId, Vec2, VehicleId, VehicleState, WorldState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub scenario_id: String,
    pub dt: f64,
    pub ego: VehicleId,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleSample {
    pub id: VehicleId,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub lane: usize,
    pub segment: SegmentId,
}

impl VehicleSample {
    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn velocity(&self) -> Vec2 {
        Vec2::from_heading(self.heading) * self.speed
    }
}

impl From<&VehicleState> for VehicleSample {
    fn from(v: &VehicleState) -> Self {
        VehicleSample {
            id: v.id,
            x: v.position.x,
            y: v.position.y,
            heading: v.heading,
            speed: v.speed,
            lane: v.lane_index,
            segment: v.segment,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceEvent {
    Collision(CollisionEvent),
    Intent { description: String },
    GateRejected { reason: String },
    Fault { reason: String },
    RedLight,
    OffRoute,
    SpeedLimit,
    Takeover,
    Release,
    Command { text: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFrame {
    pub tick: u64,
    pub time: f64,
    pub vehicles: Vec<VehicleSample>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<TraceEvent>,
}

impl TraceFrame {
    pub fn vehicle(&self, id: VehicleId) -> Option<&VehicleSample> {
        self.vehicles.iter().find(|v| v.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub header: TraceHeader,
    pub frames: Vec<TraceFrame>,
}

impl RunTrace {
    pub fn new(scenario_id: impl Into<String>, world: &WorldState, ego: VehicleId) -> Self {
        RunTrace {
            header: TraceHeader {
                scenario_id: scenario_id.into(),
                dt: world.dynamics.dt,
                ego,
                seed: world.seed,
            },
            frames: Vec::new(),
        }
    }

    pub fn record(&mut self, world: &WorldState, events: Vec<TraceEvent>) {
        self.frames.push(TraceFrame {
            tick: world.tick,
            time: world.time,
            vehicles: world.vehicles.iter().map(VehicleSample::from).collect(),
            events,
        });
    }

    /// Appends an event to the most recent frame.
    pub fn annotate(&mut self, event: TraceEvent) {
        if let Some(last) = self.frames.last_mut() {
            last.events.push(event);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    /// Ego samples in tick order.
    pub fn ego_samples(&self) -> impl Iterator<Item = (&TraceFrame, &VehicleSample)> + '_ {
        let ego = self.header.ego;
        self.frames.iter().filter_map(move |f| f.vehicle(ego).map(|s| (f, s)))
    }

    pub fn collisions(&self) -> impl Iterator<Item = &CollisionEvent> + '_ {
        self.frames.iter().flat_map(|f| f.events.iter()).filter_map(|e| match e {
            TraceEvent::Collision(c) => Some(c),
            _ => None,
        })
    }

    pub fn ego_collided(&self) -> bool {
        let ego = self.header.ego;
        self.collisions().any(|c| c.involves(ego))
    }

    /// Prefix of the trace up to and including `tick`.
    pub fn prefix(&self, tick: u64) -> RunTrace {
        RunTrace {
            header: self.header.clone(),
            frames: self.frames.iter().take_while(|f| f.tick <= tick).cloned().collect(),
        }
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        serde_json::to_writer(&mut out, &self.header)?;
        out.write_all(b"\n")?;
        for f in &self.frames {
            serde_json::to_writer(&mut out, f)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> std::io::Result<RunTrace> {
        let mut lines = input.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "empty trace"))??;
        let header: TraceHeader = serde_json::from_str(&header_line)?;
        let mut frames = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            frames.push(serde_json::from_str(&line)?);
        }
        Ok(RunTrace { header, frames })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{place_vehicle, Control, Controls, RoadNetwork, Role};

    #[test]
    fn jsonl_round_trip() {
        let road = RoadNetwork::highway(2, 500.0, 20.0);
        let ego = place_vehicle(&road, VehicleId(0), SegmentId(0), 1, 0.0, 10.0, Role::Ego).unwrap();
        let mut w = WorldState::new(road, vec![ego], 3).unwrap();
        let mut trace = RunTrace::new("t", &w, VehicleId(0));
        trace.record(&w, vec![]);
        let controls: Controls = [(VehicleId(0), Control::new(0.5, 0.01))].into_iter().collect();
        for _ in 0..5 {
            w.step(&controls).unwrap();
            trace.record(&w, vec![TraceEvent::Intent { description: "x".into() }]);
        }
        let mut buf = Vec::new();
        trace.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().next().unwrap().starts_with("{\"scenario_id\""));
        assert!(text.lines().nth(1).unwrap().starts_with("{\"tick\":0,\"time\""));
        let back = RunTrace::read_jsonl(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back, trace);
    }
}
