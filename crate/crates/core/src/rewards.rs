//! Reward variables and the social-value-orientation (SVO) reward.
//!
//! Every reward term is pairwise: the features of vehicle `i` are computed
//! against one other vehicle `j` at a time, plus the road boundaries.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::params::ModelParams;
use crate::sim::TrafficSnapshot;
use crate::world::{DriverAction, RoadGeometry, VehicleId, VehicleState};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SafetyConfig {
    /// Minimum reaction time `T_min`.
    pub min_ttc: f64,
    /// Adequate time headway `T_max`.
    pub max_ttc: f64,
    pub vehicle_length: f64,
    pub vehicle_width: f64,
    pub margin_longitudinal: f64,
    pub margin_lateral: f64,
}

impl Default for SafetyConfig {
    fn default() -> Self {
        Self {
            min_ttc: 0.2,
            max_ttc: 3.0,
            vehicle_length: 5.0,
            vehicle_width: 2.0,
            margin_longitudinal: 2.0,
            margin_lateral: 0.5,
        }
    }
}

impl SafetyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.min_ttc && self.min_ttc < self.max_ttc) {
            return Err(Error::InvalidConfig("requires 0 < min_ttc < max_ttc".into()));
        }
        let dims = [
            self.vehicle_length,
            self.vehicle_width,
            self.margin_longitudinal,
            self.margin_lateral,
        ];
        if dims.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::InvalidConfig("vehicle dimensions must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Effort value of accelerate/decelerate.
    pub effort_speed_change: f64,
    /// Effort value of a steering action.
    pub effort_lane_change: f64,
    /// Weight of the lateral progress term for on-ramp vehicles.
    pub merging_progress_mix: f64,
    /// Weight of the lateral progress term for highway vehicles.
    pub highway_progress_mix: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            effort_speed_change: 0.5,
            effort_lane_change: 0.25,
            merging_progress_mix: 0.5,
            highway_progress_mix: 0.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        let open = |v: f64| v > 0.0 && v < 1.0;
        if !open(self.effort_speed_change) || !open(self.effort_lane_change) {
            return Err(Error::InvalidConfig("effort levels must lie in (0, 1)".into()));
        }
        let closed = |v: f64| (0.0..=1.0).contains(&v);
        if !closed(self.merging_progress_mix) || !closed(self.highway_progress_mix) {
            return Err(Error::InvalidConfig("progress mix must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn progress_mix(&self, merging: bool) -> f64 {
        if merging {
            self.merging_progress_mix
        } else {
            self.highway_progress_mix
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardFeatures {
    pub collision: bool,
    pub headway: f64,
    pub progress: f64,
    pub effort: f64,
}

/// Weights on `[headway, progress, effort]`, summing to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct ObjectiveWeights {
    pub headway: f64,
    pub progress: f64,
    pub effort: f64,
}

impl ObjectiveWeights {
    /// Weights assumed for other drivers inside the SVO reward.
    pub const UNIFORM: ObjectiveWeights = ObjectiveWeights {
        headway: 1.0 / 3.0,
        progress: 1.0 / 3.0,
        effort: 1.0 / 3.0,
    };

    pub fn new(headway: f64, progress: f64, effort: f64) -> Result<Self> {
        let w = [headway, progress, effort];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::InvalidConfig(format!(
                "objective weights {w:?} must be nonnegative and sum to 1"
            )));
        }
        Ok(Self {
            headway,
            progress,
            effort,
        })
    }

    /// Normalizes a nonnegative, nonzero vector onto the simplex.
    pub fn normalized(raw: [f64; 3]) -> Result<Self> {
        let sum: f64 = raw.iter().sum();
        if raw.iter().any(|v| *v < 0.0) || !(sum > 0.0) {
            return Err(Error::InvalidConfig(format!("cannot normalize weights {raw:?}")));
        }
        Ok(Self {
            headway: raw[0] / sum,
            progress: raw[1] / sum,
            effort: raw[2] / sum,
        })
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.headway, self.progress, self.effort]
    }

    pub fn dot(&self, v: [f64; 3]) -> f64 {
        self.headway * v[0] + self.progress * v[1] + self.effort * v[2]
    }
}

impl TryFrom<[f64; 3]> for ObjectiveWeights {
    type Error = Error;

    fn try_from(w: [f64; 3]) -> Result<Self> {
        Self::new(w[0], w[1], w[2])
    }
}

impl From<ObjectiveWeights> for [f64; 3] {
    fn from(w: ObjectiveWeights) -> Self {
        w.as_array()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SocialOrientation {
    Altruistic,
    Prosocial,
    Egoistic,
    Competitive,
}

impl SocialOrientation {
    pub const ALL: [SocialOrientation; 4] = [
        SocialOrientation::Altruistic,
        SocialOrientation::Prosocial,
        SocialOrientation::Egoistic,
        SocialOrientation::Competitive,
    ];

    /// `(θ_self, θ_other)`.
    pub fn theta(self) -> (f64, f64) {
        match self {
            SocialOrientation::Altruistic => (0.0, 1.0),
            SocialOrientation::Prosocial => (0.5, 0.5),
            SocialOrientation::Egoistic => (1.0, 0.0),
            SocialOrientation::Competitive => (0.5, -0.5),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SocialOrientation::Altruistic => "altruistic",
            SocialOrientation::Prosocial => "prosocial",
            SocialOrientation::Egoistic => "egoistic",
            SocialOrientation::Competitive => "competitive",
        }
    }
}

impl fmt::Display for SocialOrientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SocialOrientation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SocialOrientation::ALL
            .into_iter()
            .find(|o| o.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown social orientation `{s}`")))
    }
}

/// Axis-aligned box in road coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Aabb {
    pub fn overlaps(&self, other: &Aabb) -> bool {
        self.x_min < other.x_max
            && other.x_min < self.x_max
            && self.y_min < other.y_max
            && other.y_min < self.y_max
    }
}

/// Vehicle body inflated by the safety margins.
pub fn safety_box(state: &VehicleState, cfg: &SafetyConfig) -> Aabb {
    let hx = 0.5 * cfg.vehicle_length + cfg.margin_longitudinal;
    let hy = 0.5 * cfg.vehicle_width + cfg.margin_lateral;
    Aabb {
        x_min: state.x - hx,
        x_max: state.x + hx,
        y_min: state.y - hy,
        y_max: state.y + hy,
    }
}

/// True when the safety box leaves the road. Beyond the ramp end the right
/// edge of the road is the right edge of lane 1.
pub fn off_road(state: &VehicleState, road: &RoadGeometry, cfg: &SafetyConfig) -> bool {
    let b = safety_box(state, cfg);
    b.y_max > road.left_edge()
        || b.y_min < 0.0
        || (b.x_max > road.ramp_end_x && b.y_min < road.lane_width)
}

pub fn vehicles_collide(a: &VehicleState, b: &VehicleState, cfg: &SafetyConfig) -> bool {
    safety_box(a, cfg).overlaps(&safety_box(b, cfg))
}

/// Whether `leader` occupies a lane nearest to `follower`.
fn in_follower_lane(follower: &VehicleState, leader: &VehicleState, road: &RoadGeometry) -> bool {
    let (flo, fhi) = road.nearest_lanes(follower.y);
    let (lo, hi) = road.occupied_lanes(leader.y);
    flo <= hi && lo <= fhi
}

/// Time-to-collision of `follower` behind `leader`; infinite when the leader
/// is not ahead in the follower's lane or the gap is not closing.
pub fn time_to_collision(
    follower: &VehicleState,
    leader: &VehicleState,
    road: &RoadGeometry,
    cfg: &SafetyConfig,
) -> f64 {
    if leader.x <= follower.x {
        return f64::INFINITY;
    }
    if !in_follower_lane(follower, leader, road) {
        return f64::INFINITY;
    }
    let gap = leader.x - follower.x - cfg.vehicle_length;
    if gap <= 0.0 {
        return 0.0;
    }
    let closing = follower.v_x - leader.v_x;
    if closing <= 0.0 {
        f64::INFINITY
    } else {
        gap / closing
    }
}

pub fn headway_from_ttc(ttc: f64, cfg: &SafetyConfig) -> f64 {
    (ttc.clamp(cfg.min_ttc, cfg.max_ttc) - cfg.min_ttc) / (cfg.max_ttc - cfg.min_ttc)
}

/// Progress `τ = (1 - mix)·τ_x + mix·τ_y`.
pub fn progress(state: &VehicleState, road: &RoadGeometry, mix: f64) -> f64 {
    let tau_x = ((state.x - road.ramp_start_x) / (road.goal_x - road.ramp_start_x)).clamp(0.0, 1.0);
    let tau_y = 1.0 - (state.y - road.target_lane_y()).abs().min(road.lane_width) / road.lane_width;
    (1.0 - mix) * tau_x + mix * tau_y
}

pub fn effort(action: DriverAction, cfg: &RewardConfig) -> f64 {
    match action {
        DriverAction::Maintain => 1.0,
        DriverAction::Accelerate | DriverAction::Decelerate => cfg.effort_speed_change,
        DriverAction::SteerLeft | DriverAction::SteerRight => cfg.effort_lane_change,
    }
}

/// `r = (1 - c)·(w_h·h + w_τ·τ + w_e·e)`.
pub fn personal_reward(features: &RewardFeatures, w: &ObjectiveWeights) -> f64 {
    if features.collision {
        0.0
    } else {
        w.dot([features.headway, features.progress, features.effort])
    }
}

/// Features of `subject` in its pairwise interaction with `other`.
pub fn pair_features(
    subject: &VehicleState,
    subject_action: DriverAction,
    subject_merging: bool,
    other: &VehicleState,
    params: &ModelParams,
) -> RewardFeatures {
    let road = &params.road;
    let safety = &params.safety;
    RewardFeatures {
        collision: vehicles_collide(subject, other, safety) || off_road(subject, road, safety),
        headway: headway_from_ttc(time_to_collision(subject, other, road, safety), safety),
        progress: progress(subject, road, params.reward.progress_mix(subject_merging)),
        effort: effort(subject_action, &params.reward),
    }
}

/// Features of a vehicle with no interaction partner.
pub fn solo_features(
    subject: &VehicleState,
    subject_action: DriverAction,
    subject_merging: bool,
    params: &ModelParams,
) -> RewardFeatures {
    RewardFeatures {
        collision: off_road(subject, &params.road, &params.safety),
        headway: 1.0,
        progress: progress(subject, &params.road, params.reward.progress_mix(subject_merging)),
        effort: effort(subject_action, &params.reward),
    }
}

/// Collision indicator of `id` against every other vehicle and the road.
pub fn collision_flag(
    snapshot: &TrafficSnapshot,
    id: VehicleId,
    road: &RoadGeometry,
    cfg: &SafetyConfig,
) -> Result<bool> {
    let me = snapshot.state(id)?;
    Ok(off_road(&me, road, cfg)
        || snapshot
            .vehicles()
            .iter()
            .any(|v| v.id != id && vehicles_collide(&me, &v.state, cfg)))
}

/// Headway reward against the nearest leader in the vehicle's lane.
pub fn headway(
    snapshot: &TrafficSnapshot,
    id: VehicleId,
    road: &RoadGeometry,
    cfg: &SafetyConfig,
) -> Result<f64> {
    let me = snapshot.state(id)?;
    let ttc = snapshot
        .vehicles()
        .iter()
        .filter(|v| v.id != id && v.state.x > me.x && in_follower_lane(&me, &v.state, road))
        .min_by(|a, b| a.state.x.total_cmp(&b.state.x))
        .map_or(f64::INFINITY, |leader| {
            time_to_collision(&me, &leader.state, road, cfg)
        });
    Ok(headway_from_ttc(ttc, cfg))
}

/// SVO reward of `id` at the snapshot's current states:
/// `R = mean_j [θ_self·r_i(·|w_self) + θ_other·r_j(·|uniform)]`.
pub fn svo_reward(
    snapshot: &TrafficSnapshot,
    id: VehicleId,
    controls: &BTreeMap<VehicleId, DriverAction>,
    sigma: SocialOrientation,
    w_self: &ObjectiveWeights,
    params: &ModelParams,
) -> Result<f64> {
    let neighbors = snapshot.neighbors(id)?;
    if neighbors.is_empty() {
        return Err(Error::NoNeighbors(id));
    }
    let control = |v: VehicleId| {
        controls
            .get(&v)
            .copied()
            .ok_or_else(|| Error::InvalidConfig(format!("missing control for vehicle {v}")))
    };
    let me = snapshot.entry(id)?;
    let u_me = control(id)?;
    let (theta_self, theta_other) = sigma.theta();
    let mut total = 0.0;
    for &j in neighbors {
        let other = snapshot.entry(j)?;
        let u_other = control(j)?;
        let mine = pair_features(&me.state, u_me, me.merging, &other.state, params);
        let theirs = pair_features(&other.state, u_other, other.merging, &me.state, params);
        total += theta_self * personal_reward(&mine, w_self)
            + theta_other * personal_reward(&theirs, &ObjectiveWeights::UNIFORM);
    }
    Ok(total / neighbors.len() as f64)
}
