use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::record::{Track, TrajectoryRecord};
use super::DataError;
use crate::behavior::InteractionValues;
use crate::intent::{filter_history, intent_grid, IntentBelief, ObservationHistory};
use crate::params::ModelParams;
use crate::planner::PlannerConfig;
use crate::rewards::{vehicles_collide, ObjectiveWeights, SocialOrientation};
use crate::sim::{self, ControllerKind, ScenarioConfig, SimOutcome, TrafficSnapshot, Verdict, VehicleEntry, VehicleSpec};
use crate::world::{step, DriverAction, RoadGeometry, VehicleId, VehicleState};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeEpisode {
    pub target: VehicleId,
    pub start_frame: i64,
    pub end_frame: i64,
    pub road: RoadGeometry,
}

/// One episode per track that starts in lane 0 and ends on the highway.
pub fn extract_merge_episodes(record: &TrajectoryRecord, road: &RoadGeometry) -> Vec<MergeEpisode> {
    record
        .tracks
        .values()
        .filter(|t| t.first().lane == 0 && t.last().lane >= 1)
        .map(|t| MergeEpisode {
            target: t.id,
            start_frame: t.first_frame(),
            end_frame: t.last_frame(),
            road: road.clone(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReplayConfig {
    pub params: ModelParams,
    pub planner: PlannerConfig,
    pub adjacency_radius: f64,
    pub infer_intent: bool,
    /// Extra time allowed beyond the recorded episode.
    pub slack_seconds: f64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            params: ModelParams::replay(),
            planner: PlannerConfig::default(),
            adjacency_radius: 100.0,
            infer_intent: true,
            slack_seconds: 6.0,
        }
    }
}

/// States of a track at decision epochs `start + k·dt`, nearest frame,
/// stopping where the track ends.
pub fn epoch_states(record: &TrajectoryRecord, track: &Track, start: i64, dt: f64) -> Vec<VehicleState> {
    (0..)
        .map(|k| record.frame_after(start, k as f64 * dt))
        .map_while(|f| track.at(f).map(|p| p.state()))
        .collect()
}

/// Scenario replaying everything present at the episode start, with a
/// planner-driven ego in place of the target.
pub fn replay_scenario(record: &TrajectoryRecord, episode: &MergeEpisode, cfg: &ReplayConfig) -> Result<ScenarioConfig> {
    let target = record.track(episode.target)?;
    if !target.contains(episode.start_frame) || !target.contains(episode.end_frame) {
        return Err(DataError::EpisodeSpan {
            id: episode.target.0,
            start: episode.start_frame,
            end: episode.end_frame,
        }
        .into());
    }
    let dt = cfg.params.kinematics.dt;
    let mut vehicles = vec![VehicleSpec {
        id: episode.target,
        initial: target.at(episode.start_frame).unwrap().state(),
        controller: ControllerKind::Planner,
        merging: Some(true),
    }];
    for track in record.tracks.values() {
        if track.id == episode.target || !track.contains(episode.start_frame) {
            continue;
        }
        let states = epoch_states(record, track, episode.start_frame, dt);
        vehicles.push(VehicleSpec {
            id: track.id,
            initial: states[0],
            controller: ControllerKind::Replay { states },
            merging: Some(track.first().lane == 0),
        });
    }
    let span = (episode.end_frame - episode.start_frame) as f64 / record.frame_rate;
    let mut params = cfg.params.clone();
    params.road = episode.road.clone();
    Ok(ScenarioConfig {
        name: format!("{}-{}", record.recording_id, episode.target),
        params,
        planner: cfg.planner.clone(),
        vehicles,
        seed: 0,
        max_steps: ((span + cfg.slack_seconds) / dt).ceil().max(1.0) as usize,
        adjacency_radius: cfg.adjacency_radius,
        disturbances: false,
        infer_intent: cfg.infer_intent,
    })
}

pub fn replay_eval(record: &TrajectoryRecord, episode: &MergeEpisode, cfg: &ReplayConfig) -> Result<SimOutcome> {
    sim::run(&replay_scenario(record, episode, cfg)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct EpisodeResult {
    pub recording_id: String,
    pub target: VehicleId,
    pub outcome: SimOutcome,
}

/// Evaluates every merge episode of a recording, in parallel.
pub fn replay_all(record: &TrajectoryRecord, road: &RoadGeometry, cfg: &ReplayConfig) -> Result<Vec<EpisodeResult>> {
    let episodes = extract_merge_episodes(record, road);
    let results: Vec<Result<EpisodeResult>> = sim::with_batch_pool(|| {
        episodes
            .par_iter()
            .map(|e| {
                Ok(EpisodeResult {
                    recording_id: record.recording_id.clone(),
                    target: e.target,
                    outcome: replay_eval(record, e, cfg)?,
                })
            })
            .collect()
    });
    results.into_iter().collect()
}

pub fn write_verdicts_csv<W: Write>(results: &[EpisodeResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::from(DataError::Csv(e.to_string()));
    w.write_record(["recording", "target", "verdict", "merge_time", "steps"])
        .map_err(err)?;
    for r in results {
        w.write_record([
            r.recording_id.clone(),
            r.target.to_string(),
            r.outcome.verdict.to_string(),
            r.outcome.merge_time.map_or_else(String::new, |t| t.to_string()),
            r.outcome.steps.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-scene totals in the layout of a merge success table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSummary {
    pub recording: String,
    pub merges: usize,
    pub successes: usize,
    pub collisions: usize,
    pub ramp_end_failures: usize,
    pub timeouts: usize,
    /// Percent.
    pub success_rate: f64,
}

pub fn summarize(results: &[EpisodeResult]) -> Vec<SceneSummary> {
    let mut scenes: BTreeMap<&str, Vec<Verdict>> = BTreeMap::new();
    for r in results {
        scenes.entry(&r.recording_id).or_default().push(r.outcome.verdict);
    }
    let mut out: Vec<SceneSummary> = scenes
        .into_iter()
        .map(|(name, verdicts)| scene_row(name, &verdicts))
        .collect();
    if out.len() > 1 {
        let all: Vec<Verdict> = results.iter().map(|r| r.outcome.verdict).collect();
        out.push(scene_row("total", &all));
    }
    out
}

fn scene_row(name: &str, verdicts: &[Verdict]) -> SceneSummary {
    let [successes, collisions, ramp_end_failures, timeouts] = sim::tally(verdicts);
    let merges = verdicts.len();
    SceneSummary {
        recording: name.to_string(),
        merges,
        successes,
        collisions,
        ramp_end_failures,
        timeouts,
        success_rate: if merges == 0 {
            0.0
        } else {
            100.0 * successes as f64 / merges as f64
        },
    }
}

pub fn write_summary_csv<W: Write>(rows: &[SceneSummary], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| DataError::Csv(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Snapshot of the vehicles present at `frame`, optionally replacing or
/// dropping one of them.
fn snapshot_at(
    record: &TrajectoryRecord,
    frame: i64,
    time_index: usize,
    road: &RoadGeometry,
    radius: f64,
    skip: Option<VehicleId>,
    extra: Option<VehicleEntry>,
) -> Result<TrafficSnapshot> {
    let mut vehicles: Vec<VehicleEntry> = record
        .tracks
        .values()
        .filter(|t| Some(t.id) != skip)
        .filter_map(|t| {
            t.at(frame).map(|p| VehicleEntry {
                id: t.id,
                state: p.state(),
                merging: t.first().lane == 0,
            })
        })
        .collect();
    vehicles.extend(extra);
    TrafficSnapshot::new(time_index, vehicles, road, radius)
}

/// Snapshots at epochs spanning the track of `id`.
pub fn observation_history(
    record: &TrajectoryRecord,
    id: VehicleId,
    road: &RoadGeometry,
    dt: f64,
    radius: f64,
) -> Result<ObservationHistory> {
    let track = record.track(id)?;
    let mut history = ObservationHistory::new(dt);
    for k in 0.. {
        let frame = record.frame_after(track.first_frame(), k as f64 * dt);
        if !track.contains(frame) {
            break;
        }
        history.push(snapshot_at(record, frame, k, road, radius, None, None)?)?;
    }
    Ok(history)
}

/// Belief about `id` after each epoch; entry 0 is the prior.
pub fn infer_track(
    record: &TrajectoryRecord,
    id: VehicleId,
    road: &RoadGeometry,
    params: &ModelParams,
    radius: f64,
) -> Result<Vec<(f64, IntentBelief)>> {
    let mut params = params.clone();
    params.road = road.clone();
    let dt = params.kinematics.dt;
    let history = observation_history(record, id, road, dt, radius)?;
    let beliefs = filter_history(&history, id, &params)?;
    Ok(beliefs
        .into_iter()
        .enumerate()
        .map(|(k, b)| (k as f64 * dt, b))
        .collect())
}

/// Belief trace CSV: `time,vehicle_id` and one column per grid cell.
pub fn write_belief_csv<W: Write>(rows: &[(f64, VehicleId, IntentBelief)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::from(DataError::Csv(e.to_string()));
    let mut header = vec!["time".to_string(), "vehicle_id".to_string()];
    header.extend(intent_grid().iter().map(|c| c.label()));
    w.write_record(&header).map_err(err)?;
    for (t, id, b) in rows {
        let mut rec = vec![t.to_string(), id.to_string()];
        rec.extend(b.probabilities().iter().map(f64::to_string));
        w.write_record(&rec).map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReproduceRow {
    pub time: f64,
    pub virtual_state: VehicleState,
    pub actual_state: Option<VehicleState>,
    pub action: Option<DriverAction>,
    /// The virtual vehicle's box overlaps a recorded vehicle's.
    pub collision: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReproduceResult {
    pub target: VehicleId,
    pub rows: Vec<ReproduceRow>,
    /// Distance between the final virtual and actual positions.
    pub final_deviation: f64,
    /// Epochs at which the virtual vehicle overlaps recorded traffic.
    pub collisions: usize,
    /// Filter's most probable cell for the recorded track.
    pub best_cell: String,
}

impl ReproduceResult {
    pub fn final_virtual(&self) -> VehicleState {
        self.rows[self.rows.len() - 1].virtual_state
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::from(DataError::Csv(e.to_string()));
        w.write_record(["time", "virtual_x", "virtual_y", "virtual_v_x", "actual_x", "actual_y", "actual_v_x", "action", "collision"])
            .map_err(err)?;
        for r in &self.rows {
            let v = r.virtual_state;
            let (ax, ay, av) = r
                .actual_state
                .map_or((String::new(), String::new(), String::new()), |a| {
                    (a.x.to_string(), a.y.to_string(), a.v_x.to_string())
                });
            w.write_record([
                r.time.to_string(),
                v.x.to_string(),
                v.y.to_string(),
                v.v_x.to_string(),
                ax,
                ay,
                av,
                r.action.map_or_else(String::new, |a| a.name().to_string()),
                r.collision.to_string(),
            ])
            .map_err(err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Drives a virtual copy of `target` with the behavior model under `(σ, w)`
/// against the recorded traffic at decision epochs.
pub fn reproduce(
    record: &TrajectoryRecord,
    target: VehicleId,
    sigma: SocialOrientation,
    w: &ObjectiveWeights,
    road: &RoadGeometry,
    params: &ModelParams,
    radius: f64,
) -> Result<ReproduceResult> {
    let mut params = params.clone();
    params.road = road.clone();
    let dt = params.kinematics.dt;
    let track = record.track(target)?;
    let merging = track.first().lane == 0;
    let mut state = track.first().state();
    let mut rows = Vec::new();
    for k in 0.. {
        let frame = record.frame_after(track.first_frame(), k as f64 * dt);
        let actual = track.at(frame).map(|p| p.state());
        let Some(actual_state) = actual else { break };
        let next_in_track = track.contains(record.frame_after(track.first_frame(), (k + 1) as f64 * dt));
        let action = if next_in_track {
            let me = VehicleEntry {
                id: target,
                state,
                merging,
            };
            let snap = snapshot_at(record, frame, k, road, radius, Some(target), Some(me))?;
            let values = InteractionValues::for_vehicle(&snap, target, &params, &params.behavior)?;
            Some(values.action_values(sigma, w).argmax())
        } else {
            None
        };
        let collision = record
            .tracks
            .values()
            .filter(|t| t.id != target)
            .filter_map(|t| t.at(frame))
            .any(|p| vehicles_collide(&state, &p.state(), &params.safety));
        rows.push(ReproduceRow {
            time: k as f64 * dt,
            virtual_state: state,
            actual_state: Some(actual_state),
            action,
            collision,
        });
        match action {
            Some(a) => state = step(&state, a, road, &params.kinematics, [0.0; 3]),
            None => break,
        }
    }
    let last = &rows[rows.len() - 1];
    let actual = last.actual_state.expect("rows carry the recorded state");
    let final_deviation = ((last.virtual_state.x - actual.x).powi(2) + (last.virtual_state.y - actual.y).powi(2)).sqrt();
    let beliefs = infer_track(record, target, road, &params, radius)?;
    let best = &beliefs[beliefs.len() - 1].1;
    let collisions = rows.iter().filter(|r| r.collision).count();
    Ok(ReproduceResult {
        target,
        rows,
        final_deviation,
        collisions,
        best_cell: intent_grid()[best.map_index()].label(),
    })
}
