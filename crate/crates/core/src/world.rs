//! Road geometry, vehicle state and the discrete-time kinematic model.
//!
//! Coordinates: `x` increases along the direction of travel, `y` increases
//! leftward from the outer (right) road edge. Lane `0` is the on-ramp, lanes
//! `1..=lane_count` are highway lanes counted from the right, so lane `1` is
//! the merge target lane.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Tolerance used when comparing lateral positions against lane centers.
pub const LANE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VehicleId(pub u32);

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadGeometry {
    /// Number of highway lanes, excluding the ramp.
    pub lane_count: u32,
    pub lane_width: f64,
    /// Beginning of the ramp (`x_0` of the progress reward).
    pub ramp_start_x: f64,
    /// Past this point the ramp lane no longer exists.
    pub ramp_end_x: f64,
    /// Goal placed beyond the ramp end (`x_f` of the progress reward).
    pub goal_x: f64,
}

impl Default for RoadGeometry {
    fn default() -> Self {
        Self {
            lane_count: 2,
            lane_width: 3.5,
            ramp_start_x: 0.0,
            ramp_end_x: 200.0,
            goal_x: 300.0,
        }
    }
}

impl RoadGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.lane_count == 0 {
            return Err(Error::InvalidConfig("lane_count must be positive".into()));
        }
        if !(self.lane_width > 0.0 && self.lane_width.is_finite()) {
            return Err(Error::InvalidConfig("lane_width must be positive".into()));
        }
        if !(self.ramp_start_x < self.ramp_end_x && self.ramp_end_x <= self.goal_x) {
            return Err(Error::InvalidConfig(
                "road requires ramp_start_x < ramp_end_x <= goal_x".into(),
            ));
        }
        Ok(())
    }

    pub fn lane_center(&self, lane: u32) -> f64 {
        (lane as f64 + 0.5) * self.lane_width
    }

    /// Center of the highway lane adjacent to the ramp (`y_r`).
    pub fn target_lane_y(&self) -> f64 {
        self.lane_center(1)
    }

    pub fn left_edge(&self) -> f64 {
        (self.lane_count + 1) as f64 * self.lane_width
    }

    /// Lane whose center is nearest to `y`; a point exactly between two
    /// centers belongs to the left one.
    pub fn lane_index(&self, y: f64) -> u32 {
        let raw = (y / self.lane_width + LANE_EPS).floor();
        raw.clamp(0.0, self.lane_count as f64) as u32
    }

    /// Lanes whose centers are nearest to `y`: both neighbors when `y` lies
    /// exactly between two centers.
    pub fn nearest_lanes(&self, y: f64) -> (u32, u32) {
        let lo = self.lane_index(y - 2.0 * LANE_EPS * self.lane_width);
        let hi = self.lane_index(y + 2.0 * LANE_EPS * self.lane_width);
        (lo.min(hi), lo.max(hi))
    }

    /// Lanes covered by a vehicle at lateral position `y`: one lane when it
    /// sits on a center, both neighbors while it is between two centers.
    pub fn occupied_lanes(&self, y: f64) -> (u32, u32) {
        let rel = y / self.lane_width - 0.5;
        let lo = (rel + LANE_EPS).floor().clamp(0.0, self.lane_count as f64) as u32;
        let hi = (rel - LANE_EPS).ceil().clamp(0.0, self.lane_count as f64) as u32;
        (lo.min(hi), lo.max(hi))
    }

    pub fn ramp_present(&self, x: f64) -> bool {
        x <= self.ramp_end_x
    }

    pub fn is_merged(&self, state: &VehicleState) -> bool {
        (state.y - self.target_lane_y()).abs() < 1e-6
    }
}

/// Longitudinal position and velocity plus lateral position of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub v_x: f64,
}

impl VehicleState {
    pub fn new(x: f64, y: f64, v_x: f64) -> Self {
        Self { x, y, v_x }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.v_x.is_finite()
    }

    /// State components in disturbance order `[x, v_x, y]`.
    pub fn as_disturbance_order(&self) -> [f64; 3] {
        [self.x, self.v_x, self.y]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriverAction {
    Maintain,
    Accelerate,
    Decelerate,
    SteerLeft,
    SteerRight,
}

impl DriverAction {
    /// All actions in tie-breaking order.
    pub const ALL: [DriverAction; 5] = [
        DriverAction::Maintain,
        DriverAction::Accelerate,
        DriverAction::Decelerate,
        DriverAction::SteerLeft,
        DriverAction::SteerRight,
    ];

    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Self {
        Self::ALL[index]
    }

    pub fn name(self) -> &'static str {
        match self {
            DriverAction::Maintain => "maintain",
            DriverAction::Accelerate => "accelerate",
            DriverAction::Decelerate => "decelerate",
            DriverAction::SteerLeft => "steer_left",
            DriverAction::SteerRight => "steer_right",
        }
    }

    pub fn is_steer(self) -> bool {
        matches!(self, DriverAction::SteerLeft | DriverAction::SteerRight)
    }

    /// Control `(a, v_y)` induced by this action.
    pub fn control(self, cfg: &KinematicsConfig, road: &RoadGeometry) -> Control {
        let lateral = road.lane_width / cfg.lane_change_time;
        let (accel, lateral_velocity) = match self {
            DriverAction::Maintain => (0.0, 0.0),
            DriverAction::Accelerate => (cfg.accel, 0.0),
            DriverAction::Decelerate => (-cfg.accel, 0.0),
            DriverAction::SteerLeft => (0.0, lateral),
            DriverAction::SteerRight => (0.0, -lateral),
        };
        Control {
            accel,
            lateral_velocity,
        }
    }
}

impl fmt::Display for DriverAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DriverAction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DriverAction::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown action `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Control {
    pub accel: f64,
    pub lateral_velocity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KinematicsConfig {
    /// Sampling period in seconds.
    pub dt: f64,
    /// Acceleration magnitude of the accelerate/decelerate actions.
    pub accel: f64,
    /// Duration of a complete lane change.
    pub lane_change_time: f64,
    pub v_min: f64,
    pub v_max: f64,
    /// Covariance of the additive disturbance, ordered `[x, v_x, y]`.
    pub disturbance_cov: [[f64; 3]; 3],
}

impl Default for KinematicsConfig {
    fn default() -> Self {
        Self {
            dt: 1.0,
            accel: 6.0,
            lane_change_time: 2.0,
            v_min: 0.0,
            v_max: 40.0,
            disturbance_cov: [[0.25, 0.0, 0.0], [0.0, 0.25, 0.0], [0.0, 0.0, 0.04]],
        }
    }
}

impl KinematicsConfig {
    /// Decision-epoch configuration used for dataset replay.
    pub fn replay() -> Self {
        Self {
            dt: 2.0,
            lane_change_time: 4.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !(self.accel > 0.0 && self.accel.is_finite()) {
            return bad("accel must be positive");
        }
        if !(self.lane_change_time > 0.0 && self.lane_change_time.is_finite()) {
            return bad("lane_change_time must be positive");
        }
        if !(self.v_min >= 0.0 && self.v_min < self.v_max && self.v_max.is_finite()) {
            return bad("speed limits require 0 <= v_min < v_max");
        }
        let q = nalgebra::Matrix3::from_fn(|r, c| self.disturbance_cov[r][c]);
        if (q - q.transpose()).abs().max() > 1e-12 || q.cholesky().is_none() {
            return bad("disturbance_cov must be symmetric positive-definite");
        }
        Ok(())
    }

    /// Steps needed for one full lane change.
    pub fn lane_change_steps(&self) -> usize {
        (self.lane_change_time / self.dt - 1e-9).ceil().max(1.0) as usize
    }
}

/// The unsaturated update `[x + v_x dt, v_x + a dt, y + v_y dt]`.
pub fn step_unclamped(
    state: &VehicleState,
    action: DriverAction,
    road: &RoadGeometry,
    cfg: &KinematicsConfig,
) -> VehicleState {
    let u = action.control(cfg, road);
    VehicleState {
        x: state.x + state.v_x * cfg.dt,
        v_x: state.v_x + u.accel * cfg.dt,
        y: state.y + u.lateral_velocity * cfg.dt,
    }
}

/// Lane center a steering action heads for, if the action steers.
pub fn lateral_target(y: f64, action: DriverAction, road: &RoadGeometry) -> Option<(i64, f64)> {
    let rel = y / road.lane_width - 0.5;
    let lane = match action {
        DriverAction::SteerLeft => (rel + LANE_EPS).floor() as i64 + 1,
        DriverAction::SteerRight => (rel - LANE_EPS).ceil() as i64 - 1,
        _ => return None,
    };
    Some((lane, (lane as f64 + 0.5) * road.lane_width))
}

/// One kinematic step with an additive disturbance ordered `[x, v_x, y]`.
///
/// The speed saturates at `[v_min, v_max]`. A steering step never carries the
/// vehicle past the lane center it is heading for, so a lane change always
/// ends exactly on a center.
pub fn step(
    state: &VehicleState,
    action: DriverAction,
    road: &RoadGeometry,
    cfg: &KinematicsConfig,
    disturbance: [f64; 3],
) -> VehicleState {
    let mut next = step_unclamped(state, action, road, cfg);
    next.x += disturbance[0];
    next.v_x = (next.v_x + disturbance[1]).clamp(cfg.v_min, cfg.v_max);
    next.y += disturbance[2];
    if let Some((_, target)) = lateral_target(state.y, action, road) {
        let overshoot = match action {
            DriverAction::SteerLeft => next.y >= target - LANE_EPS,
            _ => next.y <= target + LANE_EPS,
        };
        if overshoot {
            next.y = target;
        }
    }
    next
}

/// Disturbance-free predicted states after each action of `actions`.
pub fn rollout(
    state: &VehicleState,
    actions: &[DriverAction],
    road: &RoadGeometry,
    cfg: &KinematicsConfig,
) -> Vec<VehicleState> {
    let mut current = *state;
    actions
        .iter()
        .map(|&a| {
            current = step(&current, a, road, cfg, [0.0; 3]);
            current
        })
        .collect()
}

/// Actions whose lateral target lies on the road. Highway vehicles may not
/// steer onto the ramp, but a vehicle part-way out of the ramp may return.
pub fn feasible_actions(state: &VehicleState, road: &RoadGeometry) -> Vec<DriverAction> {
    DriverAction::ALL
        .into_iter()
        .filter(|&a| match lateral_target(state.y, a, road) {
            None => true,
            Some((lane, _)) if lane > road.lane_count as i64 || lane < 0 => false,
            Some((0, _)) => {
                road.ramp_present(state.x) && state.y < road.target_lane_y() - LANE_EPS
            }
            Some(_) => true,
        })
        .collect()
}
