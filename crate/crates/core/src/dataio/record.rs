use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::world::{RoadGeometry, VehicleId, VehicleState};

/// Column names of the trajectory CSV, in output order.
pub const COLUMNS: [&str; 7] = ["frame", "id", "x", "y", "xVelocity", "yVelocity", "laneId"];

/// Native frame rate of drone recordings.
pub const DEFAULT_FRAME_RATE: f64 = 25.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub frame: i64,
    pub x: f64,
    pub y: f64,
    pub x_velocity: f64,
    pub y_velocity: f64,
    pub lane: u32,
}

impl TrackPoint {
    pub fn state(&self) -> VehicleState {
        VehicleState::new(self.x, self.y, self.x_velocity)
    }
}

/// Frames of one vehicle; contiguous and increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub id: VehicleId,
    pub points: Vec<TrackPoint>,
}

impl Track {
    pub fn first_frame(&self) -> i64 {
        self.points[0].frame
    }

    pub fn last_frame(&self) -> i64 {
        self.points[self.points.len() - 1].frame
    }

    pub fn contains(&self, frame: i64) -> bool {
        (self.first_frame()..=self.last_frame()).contains(&frame)
    }

    pub fn at(&self, frame: i64) -> Option<&TrackPoint> {
        if !self.contains(frame) {
            return None;
        }
        self.points.get((frame - self.first_frame()) as usize)
    }

    pub fn first(&self) -> &TrackPoint {
        &self.points[0]
    }

    pub fn last(&self) -> &TrackPoint {
        &self.points[self.points.len() - 1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub recording_id: String,
    pub frame_rate: f64,
    pub tracks: BTreeMap<VehicleId, Track>,
}

impl TrajectoryRecord {
    pub fn new(recording_id: impl Into<String>, frame_rate: f64, tracks: Vec<Track>) -> Result<Self, DataError> {
        if !(frame_rate > 0.0 && frame_rate.is_finite()) {
            return Err(DataError::FrameRate);
        }
        let mut map = BTreeMap::new();
        for t in tracks {
            if t.points.is_empty() {
                continue;
            }
            for w in t.points.windows(2) {
                if w[1].frame != w[0].frame + 1 {
                    return Err(DataError::NonContiguous { id: t.id.0, row: 0 });
                }
            }
            map.insert(t.id, t);
        }
        Ok(Self {
            recording_id: recording_id.into(),
            frame_rate,
            tracks: map,
        })
    }

    pub fn track(&self, id: VehicleId) -> Result<&Track, DataError> {
        self.tracks.get(&id).ok_or(DataError::UnknownVehicle(id))
    }

    pub fn frame_range(&self) -> Option<(i64, i64)> {
        let first = self.tracks.values().map(Track::first_frame).min()?;
        let last = self.tracks.values().map(Track::last_frame).max()?;
        Some((first, last))
    }

    /// Frame nearest to `seconds` after `start`.
    pub fn frame_after(&self, start: i64, seconds: f64) -> i64 {
        start + (seconds * self.frame_rate).round() as i64
    }

    /// Road geometry implied by the lane ids: lane count from the largest
    /// id, lane width from the lateral positions, and the ramp extent from
    /// the positions observed in lane 0.
    pub fn infer_road(&self) -> RoadGeometry {
        let points = || self.tracks.values().flat_map(|t| t.points.iter());
        let lane_count = points().map(|p| p.lane).max().unwrap_or(1).max(1);
        let mut widths: Vec<f64> = points()
            .map(|p| p.y / (p.lane as f64 + 0.5))
            .filter(|w| w.is_finite() && *w > 0.0)
            .collect();
        widths.sort_by(f64::total_cmp);
        let lane_width = widths.get(widths.len() / 2).copied().unwrap_or(3.5);
        let ramp: Vec<f64> = points().filter(|p| p.lane == 0).map(|p| p.x).collect();
        let ramp_start_x = ramp.iter().copied().fold(f64::INFINITY, f64::min);
        let ramp_end_x = ramp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (ramp_start_x, ramp_end_x) = if ramp.is_empty() {
            (0.0, 0.0)
        } else {
            (ramp_start_x, ramp_end_x)
        };
        RoadGeometry {
            lane_count,
            lane_width,
            ramp_start_x,
            ramp_end_x,
            goal_x: ramp_end_x + 100.0,
        }
    }
}

fn row_err(row: usize, message: impl Into<String>) -> DataError {
    DataError::Row {
        row,
        message: message.into(),
    }
}

/// Reads a trajectory CSV. Extra columns are ignored; row numbers in errors
/// are file line numbers.
pub fn read_record<R: Read>(reader: R, recording_id: &str, frame_rate: f64) -> Result<TrajectoryRecord, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| DataError::Csv(e.to_string()))?.clone();
    let mut idx = [0usize; 7];
    for (slot, name) in idx.iter_mut().zip(COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))?;
    }
    let mut seen = HashSet::new();
    let mut tracks: BTreeMap<VehicleId, Vec<TrackPoint>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| DataError::Csv(e.to_string()))?;
        let row = rec.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| rec.get(idx[i]).ok_or_else(|| row_err(row, format!("missing `{}`", COLUMNS[i])));
        let int = |i: usize| -> Result<i64, DataError> {
            field(i)?
                .parse::<i64>()
                .map_err(|_| row_err(row, format!("`{}` is not an integer", COLUMNS[i])))
        };
        let real = |i: usize| -> Result<f64, DataError> {
            let v = field(i)?
                .parse::<f64>()
                .map_err(|_| row_err(row, format!("`{}` is not a number", COLUMNS[i])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(row_err(row, format!("`{}` is not finite", COLUMNS[i])))
            }
        };
        let frame = int(0)?;
        let id = u32::try_from(int(1)?).map_err(|_| row_err(row, "`id` out of range"))?;
        let lane = u32::try_from(int(6)?).map_err(|_| row_err(row, "`laneId` out of range"))?;
        if !seen.insert((frame, id)) {
            return Err(DataError::Duplicate { row, frame, id });
        }
        let list = tracks.entry(VehicleId(id)).or_default();
        if let Some(prev) = list.last() {
            if frame < prev.frame {
                return Err(DataError::NonMonotone { id, row });
            }
            if frame != prev.frame + 1 {
                return Err(DataError::NonContiguous { id, row });
            }
        }
        list.push(TrackPoint {
            frame,
            x: real(2)?,
            y: real(3)?,
            x_velocity: real(4)?,
            y_velocity: real(5)?,
            lane,
        });
    }
    TrajectoryRecord::new(
        recording_id,
        frame_rate,
        tracks.into_iter().map(|(id, points)| Track { id, points }).collect(),
    )
}

/// Loads a CSV file at the given frame rate; the file stem becomes the
/// recording id.
pub fn load_with_rate(path: &Path, frame_rate: f64) -> Result<TrajectoryRecord, DataError> {
    let file = std::fs::File::open(path).map_err(|e| DataError::Csv(format!("{}: {e}", path.display())))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_record(file, &id, frame_rate)
}

pub fn load(path: &Path) -> Result<TrajectoryRecord, DataError> {
    load_with_rate(path, DEFAULT_FRAME_RATE)
}

/// Writes rows ordered by frame, then id.
pub fn write_record<W: Write>(record: &TrajectoryRecord, out: W) -> Result<(), DataError> {
    let mut rows: Vec<(VehicleId, &TrackPoint)> = record
        .tracks
        .values()
        .flat_map(|t| t.points.iter().map(move |p| (t.id, p)))
        .collect();
    rows.sort_by_key(|(id, p)| (p.frame, *id));
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| DataError::Csv(e.to_string());
    w.write_record(COLUMNS).map_err(err)?;
    for (id, p) in rows {
        w.write_record([
            p.frame.to_string(),
            id.to_string(),
            p.x.to_string(),
            p.y.to_string(),
            p.x_velocity.to_string(),
            p.y_velocity.to_string(),
            p.lane.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| DataError::Csv(e.to_string()))
}

/// Sidecar file holding the road geometry of a synthetic recording.
pub fn road_sidecar(csv_path: &Path) -> std::path::PathBuf {
    csv_path.with_extension("road.json")
}

/// Road of a recording: the sidecar if present, else inferred from lanes.
pub fn road_for(csv_path: &Path, record: &TrajectoryRecord) -> Result<RoadGeometry, DataError> {
    let side = road_sidecar(csv_path);
    if side.exists() {
        let text = std::fs::read_to_string(&side).map_err(|e| DataError::Csv(e.to_string()))?;
        return serde_json::from_str(&text).map_err(|e| DataError::Csv(format!("{}: {e}", side.display())));
    }
    Ok(record.infer_road())
}
