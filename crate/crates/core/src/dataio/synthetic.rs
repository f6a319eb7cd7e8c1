//! Schema-identical synthetic recordings.
//!
//! Traffic is generated analytically at the native frame rate. Through
//! traffic drives at constant speed; each merging vehicle enters the ramp
//! centered in its own gap and changes lane over four seconds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::record::{Track, TrackPoint, TrajectoryRecord, DEFAULT_FRAME_RATE};
use super::DataError;
use crate::sim::SimOutcome;
use crate::world::{RoadGeometry, VehicleId, VehicleState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// Every merging vehicle has an ample gap at matched speed.
    Benign,
    /// Single-lane highway; each merging vehicle is flanked by a target-lane
    /// vehicle at the same position and speed, on a ramp too short to drop
    /// behind it.
    Sealed,
    /// One fast highway vehicle behind slower leaders, left lane free; the
    /// fast vehicle (id 1) overtakes.
    SlowLeaders,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub kind: SyntheticKind,
    pub recording_id: String,
    pub episodes: usize,
    pub seed: u64,
    pub frame_rate: f64,
    pub ramp_length: f64,
    /// Target-lane speed.
    pub speed: f64,
    /// Headway between target-lane vehicles.
    pub spacing: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            kind: SyntheticKind::Benign,
            recording_id: "synthetic".into(),
            episodes: 10,
            seed: 0,
            frame_rate: DEFAULT_FRAME_RATE,
            ramp_length: 300.0,
            speed: 25.0,
            spacing: 80.0,
        }
    }
}

impl GeneratorConfig {
    pub fn sealed() -> Self {
        Self {
            kind: SyntheticKind::Sealed,
            recording_id: "sealed".into(),
            ramp_length: 60.0,
            ..Self::default()
        }
    }

    pub fn slow_leaders() -> Self {
        Self {
            kind: SyntheticKind::SlowLeaders,
            recording_id: "slow_leaders".into(),
            episodes: 1,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub record: TrajectoryRecord,
    pub road: RoadGeometry,
}

const LANE_CHANGE_SECONDS: f64 = 4.0;

/// Piecewise motion: constant speed, optionally with one linear lateral
/// move starting at `change_at` seconds after `t0`.
struct Motion {
    t0: f64,
    x0: f64,
    v: f64,
    y0: f64,
    y1: f64,
    change_at: f64,
}

impl Motion {
    fn cruise(t0: f64, x0: f64, v: f64, y: f64) -> Self {
        Self {
            t0,
            x0,
            v,
            y0: y,
            y1: y,
            change_at: f64::INFINITY,
        }
    }

    fn at(&self, t: f64) -> (f64, f64, f64) {
        let s = t - self.t0;
        let x = self.x0 + self.v * s;
        let rate = (self.y1 - self.y0) / LANE_CHANGE_SECONDS;
        let into = ((s - self.change_at) / LANE_CHANGE_SECONDS).clamp(0.0, 1.0);
        let y = self.y0 + (self.y1 - self.y0) * into;
        let vy = if (0.0..1.0).contains(&into) && s >= self.change_at { rate } else { 0.0 };
        (x, y, vy)
    }
}

struct Builder {
    road: RoadGeometry,
    fps: f64,
    frames: i64,
    x_min: f64,
    x_max: f64,
    tracks: Vec<Track>,
}

impl Builder {
    fn add(&mut self, m: &Motion) {
        let id = VehicleId(self.tracks.len() as u32 + 1);
        let first = ((m.t0 * self.fps).ceil() as i64).max(0);
        let mut points = Vec::new();
        for f in first..=self.frames {
            let (x, y, vy) = m.at(f as f64 / self.fps);
            let inside = x >= self.x_min && x <= self.x_max;
            if !inside {
                if points.is_empty() {
                    continue;
                }
                break;
            }
            points.push(TrackPoint {
                frame: f,
                x,
                y,
                x_velocity: m.v,
                y_velocity: vy,
                lane: self.road.lane_index(y),
            });
        }
        if !points.is_empty() {
            self.tracks.push(Track { id, points });
        }
    }

    fn stream(&mut self, lane: u32, speed: f64, spacing: f64, jitter: f64, rng: &mut ChaCha8Rng) {
        let duration = self.frames as f64 / self.fps;
        let y = self.road.lane_center(lane);
        let lo = (-self.x_max / spacing).floor() as i64;
        let hi = ((speed * duration - self.x_min) / spacing).ceil() as i64;
        for j in lo..=hi {
            let offset = if jitter > 0.0 { rng.gen_range(-jitter..jitter) } else { 0.0 };
            self.add(&Motion::cruise(0.0, -(j as f64) * spacing + offset, speed, y));
        }
    }
}

pub fn generate(cfg: &GeneratorConfig) -> Result<SyntheticDataset, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let road = RoadGeometry {
        lane_count: if cfg.kind == SyntheticKind::Sealed { 1 } else { 2 },
        lane_width: 3.5,
        ramp_start_x: 0.0,
        ramp_end_x: cfg.ramp_length,
        goal_x: cfg.ramp_length + 100.0,
    };
    let v = cfg.speed;
    let s = cfg.spacing;
    let y_ramp = road.lane_center(0);
    let y_target = road.lane_center(1);
    let tracks = match cfg.kind {
        SyntheticKind::Benign => {
            let stride = 2usize;
            let last_entry = ((stride * cfg.episodes) as f64 * s + 0.5 * s) / v;
            let duration = last_entry + (cfg.ramp_length + 150.0) / (v - 1.0) + 1.0;
            let mut b = builder(&road, cfg, -150.0, duration);
            b.stream(1, v, s, 4.0, &mut rng);
            b.stream(2, v + 3.0, 60.0, 5.0, &mut rng);
            for m in 0..cfg.episodes {
                let offset = rng.gen_range(-0.2 * s..0.2 * s);
                let t0 = ((stride * m) as f64 * s + 0.5 * s + offset) / v;
                b.add(&Motion {
                    t0,
                    x0: 0.0,
                    v: v + rng.gen_range(-1.0..1.0),
                    y0: y_ramp,
                    y1: y_target,
                    change_at: rng.gen_range(1.0..4.0),
                });
            }
            b.tracks
        }
        SyntheticKind::Sealed => {
            let period = 300.0 / v;
            let duration = period * cfg.episodes as f64 + (cfg.ramp_length + 300.0) / v;
            let mut b = builder(&road, cfg, -150.0, duration);
            for m in 0..cfg.episodes {
                let t0 = 1.0 + period * m as f64;
                // target-lane vehicle riding alongside from upstream
                b.add(&Motion::cruise(t0 - 150.0 / v, -150.0, v, y_target));
                b.add(&Motion {
                    t0,
                    x0: 0.0,
                    v,
                    y0: y_ramp,
                    y1: y_target,
                    change_at: 0.0,
                });
            }
            b.tracks
        }
        SyntheticKind::SlowLeaders => {
            let mut b = builder(&road, cfg, -150.0, 14.0);
            // id 1: the overtaking vehicle
            b.add(&Motion {
                t0: 0.0,
                x0: 0.0,
                v: v + 5.0,
                y0: y_target,
                y1: road.lane_center(2),
                change_at: 1.0,
            });
            for k in 0..3 {
                b.add(&Motion::cruise(0.0, 60.0 + 25.0 * k as f64, v - 5.0, y_target));
            }
            b.tracks
        }
    };
    let record = TrajectoryRecord::new(cfg.recording_id.clone(), cfg.frame_rate, tracks)?;
    Ok(SyntheticDataset { record, road })
}

fn builder(road: &RoadGeometry, cfg: &GeneratorConfig, x_min: f64, duration: f64) -> Builder {
    Builder {
        road: road.clone(),
        fps: cfg.frame_rate,
        frames: (duration * cfg.frame_rate).ceil() as i64,
        x_min,
        x_max: cfg.ramp_length + 150.0,
        tracks: Vec::new(),
    }
}

/// Linear interpolation of epoch states to `frame_rate`; epoch `k` lands on
/// frame `k·round(dt·frame_rate)` exactly.
pub fn upsample(states: &[VehicleState], dt: f64, frame_rate: f64) -> Vec<(VehicleState, f64)> {
    let per = (dt * frame_rate).round().max(1.0) as usize;
    let mut out = Vec::with_capacity(states.len().saturating_sub(1) * per + 1);
    for w in states.windows(2) {
        let vy = (w[1].y - w[0].y) / dt;
        for s in 0..per {
            let f = s as f64 / per as f64;
            out.push((
                VehicleState {
                    x: w[0].x + (w[1].x - w[0].x) * f,
                    y: w[0].y + (w[1].y - w[0].y) * f,
                    v_x: w[0].v_x + (w[1].v_x - w[0].v_x) * f,
                },
                vy,
            ));
        }
    }
    if let Some(last) = states.last() {
        out.push((*last, 0.0));
    }
    out
}

/// Recording of a simulated run, upsampled from its step to `frame_rate`.
pub fn record_from_outcome(
    outcome: &SimOutcome,
    road: &RoadGeometry,
    dt: f64,
    frame_rate: f64,
    recording_id: &str,
) -> Result<TrajectoryRecord, DataError> {
    let mut ids: Vec<VehicleId> = outcome.trace.iter().map(|r| r.vehicle_id).collect();
    ids.sort();
    ids.dedup();
    let tracks = ids
        .into_iter()
        .map(|id| Track {
            id,
            points: upsample(&outcome.states_of(id), dt, frame_rate)
                .into_iter()
                .enumerate()
                .map(|(f, (s, vy))| TrackPoint {
                    frame: f as i64,
                    x: s.x,
                    y: s.y,
                    x_velocity: s.v_x,
                    y_velocity: vy,
                    lane: road.lane_index(s.y),
                })
                .collect(),
        })
        .collect();
    TrajectoryRecord::new(recording_id, frame_rate, tracks)
}
