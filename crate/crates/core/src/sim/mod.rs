//! Closed-loop scenario runner.
//!
//! Each step the runner updates the ego's beliefs about its neighbors from
//! the last transition, classifies the current traffic, lets every vehicle
//! pick an action and advances the world.

mod snapshot;

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use snapshot::{adjacency, TrafficSnapshot, VehicleEntry};

use crate::behavior::{DecisionRule, InteractionValues};
use crate::intent::{self, init_belief, IntentBelief};
use crate::params::ModelParams;
use crate::planner::{plan, plan_unobstructed, PlannerConfig};
use crate::rewards::{vehicles_collide, ObjectiveWeights, SocialOrientation};
use crate::world::{step, DriverAction, VehicleId, VehicleState};
use crate::{Error, Result};

/// Environment variable capping the worker threads of batch runs.
pub const THREADS_ENV: &str = "MERGESIM_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControllerKind {
    /// The ego vehicle.
    Planner,
    Behavior {
        sigma: SocialOrientation,
        weights: ObjectiveWeights,
        #[serde(default)]
        rule: DecisionRule,
    },
    /// Follows `states[k]` at step `k`, then holds its last speed.
    Replay { states: Vec<VehicleState> },
    ConstantSpeed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleSpec {
    pub id: VehicleId,
    pub initial: VehicleState,
    pub controller: ControllerKind,
    /// Defaults to whether the vehicle starts on the ramp.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merging: Option<bool>,
}

fn default_max_steps() -> usize {
    20
}

fn default_radius() -> f64 {
    100.0
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub params: ModelParams,
    #[serde(default)]
    pub planner: PlannerConfig,
    pub vehicles: Vec<VehicleSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default = "default_radius")]
    pub adjacency_radius: f64,
    /// Add Gaussian disturbances drawn from `Q` to every non-replayed vehicle.
    #[serde(default)]
    pub disturbances: bool,
    /// Update the ego's intent beliefs each step.
    #[serde(default = "default_true")]
    pub infer_intent: bool,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.planner.validate()?;
        if self.max_steps == 0 {
            return Err(Error::InvalidConfig("max_steps must be positive".into()));
        }
        if !(self.adjacency_radius > 0.0) {
            return Err(Error::InvalidConfig("adjacency_radius must be positive".into()));
        }
        let egos = self
            .vehicles
            .iter()
            .filter(|v| v.controller == ControllerKind::Planner)
            .count();
        if egos != 1 {
            return Err(Error::InvalidConfig(format!(
                "exactly one planner-controlled vehicle required, found {egos}"
            )));
        }
        let mut ids: Vec<_> = self.vehicles.iter().map(|v| v.id).collect();
        ids.sort();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidConfig("duplicate vehicle id".into()));
        }
        let left = self.params.road.left_edge();
        for v in &self.vehicles {
            if !v.initial.is_finite() || v.initial.y < 0.0 || v.initial.y > left {
                return Err(Error::InvalidConfig(format!(
                    "vehicle {} starts off the road or with a non-finite state",
                    v.id
                )));
            }
            if let ControllerKind::Replay { states } = &v.controller {
                if states.is_empty() || states.iter().any(|s| !s.is_finite()) {
                    return Err(Error::InvalidConfig(format!(
                        "vehicle {} has an empty or non-finite replay track",
                        v.id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn ego(&self) -> VehicleId {
        self.vehicles
            .iter()
            .find(|v| v.controller == ControllerKind::Planner)
            .map(|v| v.id)
            .expect("validated scenario has an ego")
    }

    fn merging(&self, v: &VehicleSpec) -> bool {
        v.merging
            .unwrap_or_else(|| self.params.road.lane_index(v.initial.y) == 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    MergedSuccess,
    Collision,
    RampEndFailure,
    Timeout,
}

impl Verdict {
    pub const ALL: [Verdict; 4] = [
        Verdict::MergedSuccess,
        Verdict::Collision,
        Verdict::RampEndFailure,
        Verdict::Timeout,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Verdict::MergedSuccess => "merged_success",
            Verdict::Collision => "collision",
            Verdict::RampEndFailure => "ramp_end_failure",
            Verdict::Timeout => "timeout",
        }
    }

    pub fn is_success(self) -> bool {
        self == Verdict::MergedSuccess
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One vehicle at one step. `action` is what the vehicle did from this state
/// (`None` for replayed vehicles and on the final row); `q_values` is set on
/// ego rows that were planned.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub step: usize,
    pub time: f64,
    pub vehicle_id: VehicleId,
    pub state: VehicleState,
    pub action: Option<DriverAction>,
    pub q_values: Option<[f64; DriverAction::COUNT]>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimOutcome {
    pub verdict: Verdict,
    /// Time at which the ego reached the target lane center.
    pub merge_time: Option<f64>,
    /// Steps actually taken.
    pub steps: usize,
    pub trace: Vec<TraceRow>,
    pub beliefs: BTreeMap<VehicleId, IntentBelief>,
    /// `(time, neighbor, belief)` after each update.
    pub belief_trace: Vec<(f64, VehicleId, IntentBelief)>,
    /// Wall time of each plan step in seconds.
    pub plan_seconds: Vec<f64>,
}

impl SimOutcome {
    /// Ego actions in step order.
    pub fn ego_actions(&self, ego: VehicleId) -> Vec<DriverAction> {
        self.trace
            .iter()
            .filter(|r| r.vehicle_id == ego)
            .filter_map(|r| r.action)
            .collect()
    }

    pub fn states_of(&self, id: VehicleId) -> Vec<VehicleState> {
        self.trace
            .iter()
            .filter(|r| r.vehicle_id == id)
            .map(|r| r.state)
            .collect()
    }

    /// Trace CSV: `time,vehicle_id,x,y,v_x,action` then the five ego Q values.
    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["time", "vehicle_id", "x", "y", "v_x", "action"];
        let q_cols: Vec<String> = DriverAction::ALL.iter().map(|a| format!("q_{}", a.name())).collect();
        header.extend(q_cols.iter().map(String::as_str));
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.trace {
            let mut rec = vec![
                r.time.to_string(),
                r.vehicle_id.to_string(),
                r.state.x.to_string(),
                r.state.y.to_string(),
                r.state.v_x.to_string(),
                r.action.map_or_else(String::new, |a| a.name().to_string()),
            ];
            match r.q_values {
                Some(q) => rec.extend(q.iter().map(f64::to_string)),
                None => rec.extend(std::iter::repeat_n(String::new(), DriverAction::COUNT)),
            }
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Terminal verdict of the current traffic, if any. Running past the ramp
/// end un-merged takes precedence over a contact seen at the same step.
pub fn classify(snapshot: &TrafficSnapshot, ego: VehicleId, params: &ModelParams) -> Result<Option<Verdict>> {
    let me = snapshot.state(ego)?;
    let road = &params.road;
    let merged = road.is_merged(&me);
    if me.x > road.ramp_end_x && !merged {
        return Ok(Some(Verdict::RampEndFailure));
    }
    let hit = snapshot
        .vehicles()
        .iter()
        .any(|v| v.id != ego && vehicles_collide(&me, &v.state, &params.safety));
    if hit {
        return Ok(Some(Verdict::Collision));
    }
    if merged {
        return Ok(Some(if me.x <= road.ramp_end_x {
            Verdict::MergedSuccess
        } else {
            Verdict::RampEndFailure
        }));
    }
    Ok(None)
}

struct Disturbance {
    chol: Matrix3<f64>,
    rng: ChaCha8Rng,
}

impl Disturbance {
    fn new(params: &ModelParams, seed: u64) -> Result<Self> {
        let q = Matrix3::from_fn(|r, c| params.kinematics.disturbance_cov[r][c]);
        let chol = q.cholesky().ok_or(Error::SingularCovariance)?;
        Ok(Self {
            chol: chol.l(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    fn draw(&mut self) -> [f64; 3] {
        let z = Vector3::from_fn(|_, _| self.rng.sample::<f64, _>(StandardNormal));
        let d = self.chol * z;
        [d[0], d[1], d[2]]
    }
}

/// Scenario files shipped with the crate, by name.
pub fn bundled_scenarios() -> [(&'static str, &'static str); 3] {
    [
        ("empty_road", include_str!("../../scenarios/empty_road.json")),
        ("five_vehicle", include_str!("../../scenarios/five_vehicle.json")),
        ("blocked_gap", include_str!("../../scenarios/blocked_gap.json")),
    ]
}

/// Runs a scenario to a verdict.
pub fn run(scenario: &ScenarioConfig) -> Result<SimOutcome> {
    scenario.validate()?;
    let params = &scenario.params;
    let dt = params.kinematics.dt;
    let ego = scenario.ego();
    let mut disturbance = Disturbance::new(params, scenario.seed)?;
    let mut policy_rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    policy_rng.set_stream(1);

    let mut specs: Vec<&VehicleSpec> = scenario.vehicles.iter().collect();
    specs.sort_by_key(|v| v.id);
    let mut states: Vec<VehicleState> = specs.iter().map(|v| v.initial).collect();
    let merging: Vec<bool> = specs.iter().map(|v| scenario.merging(v)).collect();

    let build = |k: usize, states: &[VehicleState]| {
        let vehicles = specs
            .iter()
            .zip(states)
            .zip(&merging)
            .map(|((spec, state), merging)| VehicleEntry {
                id: spec.id,
                state: *state,
                merging: *merging,
            })
            .collect();
        TrafficSnapshot::new(k, vehicles, &params.road, scenario.adjacency_radius)
    };

    let mut beliefs: BTreeMap<VehicleId, IntentBelief> = BTreeMap::new();
    let mut belief_trace = Vec::new();
    let mut trace = Vec::new();
    let mut plan_seconds = Vec::new();
    let mut merge_time = None;
    let mut previous: Option<TrafficSnapshot> = None;
    let mut verdict = Verdict::Timeout;
    let mut steps = 0;

    for k in 0..=scenario.max_steps {
        let snap = build(k, &states)?;
        if scenario.infer_intent {
            if let Some(prev) = &previous {
                for &j in prev.neighbors(ego)? {
                    let prior = beliefs.remove(&j).unwrap_or_else(init_belief);
                    let post = intent::update(&prior, prev, j, &snap.state(j)?, params)?;
                    belief_trace.push((k as f64 * dt, j, post.clone()));
                    beliefs.insert(j, post);
                }
            }
        }
        let time = k as f64 * dt;
        let terminal = classify(&snap, ego, params)?;
        if terminal == Some(Verdict::MergedSuccess) {
            merge_time = Some(time);
        }
        if terminal.is_some() || k == scenario.max_steps {
            trace.extend(specs.iter().zip(&states).map(|(spec, s)| TraceRow {
                step: k,
                time,
                vehicle_id: spec.id,
                state: *s,
                action: None,
                q_values: None,
            }));
            if let Some(v) = terminal {
                verdict = v;
            }
            steps = k;
            break;
        }

        let mut next = Vec::with_capacity(states.len());
        for (spec, state) in specs.iter().zip(&states) {
            let (action, q_values) = match &spec.controller {
                ControllerKind::Planner => {
                    let result = if snap.neighbors(ego)?.is_empty() {
                        plan_unobstructed(&snap, ego, params)?
                    } else {
                        plan(&snap, ego, &beliefs, params, &scenario.planner)?
                    };
                    plan_seconds.push(result.elapsed.as_secs_f64());
                    (Some(result.action), Some(result.values.values()))
                }
                ControllerKind::Behavior { sigma, weights, rule } => {
                    let values = InteractionValues::for_vehicle(&snap, spec.id, params, &params.behavior)?;
                    let q = values.action_values(*sigma, weights);
                    let a = match rule {
                        DecisionRule::Argmax => q.argmax(),
                        DecisionRule::Sample => q
                            .softmax(params.behavior.temperature)
                            .sample(&mut policy_rng),
                    };
                    (Some(a), None)
                }
                ControllerKind::ConstantSpeed => (Some(DriverAction::Maintain), None),
                ControllerKind::Replay { .. } => (None, None),
            };
            trace.push(TraceRow {
                step: k,
                time,
                vehicle_id: spec.id,
                state: *state,
                action,
                q_values,
            });
            let moved = match (&spec.controller, action) {
                (ControllerKind::Replay { states: track }, _) => replay_state(track, k + 1, dt),
                (_, Some(a)) => {
                    let d = if scenario.disturbances {
                        disturbance.draw()
                    } else {
                        [0.0; 3]
                    };
                    step(state, a, &params.road, &params.kinematics, d)
                }
                (_, None) => unreachable!("non-replay controllers always act"),
            };
            next.push(moved);
        }
        previous = Some(snap);
        states = next;
    }

    Ok(SimOutcome {
        verdict,
        merge_time,
        steps,
        trace,
        beliefs,
        belief_trace,
        plan_seconds,
    })
}

/// Replay state at step `k`; beyond the track the vehicle holds its last
/// speed.
fn replay_state(track: &[VehicleState], k: usize, dt: f64) -> VehicleState {
    match track.get(k) {
        Some(s) => *s,
        None => {
            let last = track[track.len() - 1];
            let extra = (k + 1 - track.len()) as f64;
            VehicleState {
                x: last.x + last.v_x * dt * extra,
                ..last
            }
        }
    }
}

/// Worker count for batch runs: `MERGESIM_THREADS` if set, else rayon's
/// default.
pub fn batch_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or_else(rayon::current_num_threads)
}

/// Runs `f` on a pool sized by [`batch_threads`].
pub fn with_batch_pool<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(batch_threads()).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Runs independent scenarios concurrently; results keep the input order.
pub fn run_batch(scenarios: &[ScenarioConfig]) -> Vec<Result<SimOutcome>> {
    with_batch_pool(|| scenarios.par_iter().map(run).collect())
}

/// Verdict counts in [`Verdict::ALL`] order.
pub fn tally<'a>(verdicts: impl IntoIterator<Item = &'a Verdict>) -> [usize; 4] {
    let mut counts = [0; 4];
    for v in verdicts {
        counts[Verdict::ALL.iter().position(|x| x == v).unwrap()] += 1;
    }
    counts
}
