//! Receding-horizon merging controller for the ego vehicle.
//!
//! Each neighbor's sequences are predicted by mixing the behavior model's
//! sequence policy over the intent belief. The ego's value of a sequence is
//! the expected pairwise discounted reward, averaged over neighbors, so the
//! cost is linear in the number of neighbors.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::behavior::{ActionValues, InteractionValues, SequenceRollouts, SequenceSpace};
use crate::intent::{init_belief, intent_grid, IntentBelief};
use crate::params::ModelParams;
use crate::rewards::{off_road, progress, vehicles_collide};
use crate::sim::TrafficSnapshot;
use crate::world::{feasible_actions, DriverAction, VehicleId, VehicleState};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    /// Weight on the neighbor's progress added to the ego reward; 0 keeps
    /// `r_0 = (1 - c)·τ`.
    pub congestion_weight: f64,
    /// Diagnostic wall-time budget per plan step in seconds.
    pub compute_budget: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            congestion_weight: 0.0,
            compute_budget: 1.0,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.congestion_weight >= 0.0 && self.congestion_weight.is_finite()) {
            return Err(Error::InvalidConfig("congestion_weight must be nonnegative".into()));
        }
        if !(self.compute_budget > 0.0) {
            return Err(Error::InvalidConfig("compute_budget must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PlanResult {
    pub action: DriverAction,
    pub values: ActionValues,
    pub beliefs: BTreeMap<VehicleId, IntentBelief>,
    pub elapsed: Duration,
    pub over_budget: bool,
}

/// Per-step ego reward terms that depend on the ego alone.
struct EgoTerms {
    rollouts: SequenceRollouts,
    progress: Vec<f64>,
    off_road: Vec<bool>,
}

impl EgoTerms {
    fn new(state: &VehicleState, merging: bool, space: SequenceSpace, params: &ModelParams) -> Self {
        let rollouts = SequenceRollouts::new(state, space, params);
        let mix = params.reward.progress_mix(merging);
        let n = space.horizon();
        let mut progress_terms = Vec::with_capacity(space.len() * n);
        let mut off = Vec::with_capacity(space.len() * n);
        for g in 0..space.len() {
            for k in 0..n {
                let s = rollouts.state(g, k);
                progress_terms.push(progress(s, &params.road, mix));
                off.push(off_road(s, &params.road, &params.safety));
            }
        }
        Self {
            rollouts,
            progress: progress_terms,
            off_road: off,
        }
    }
}

fn discounts(params: &ModelParams) -> Vec<f64> {
    (0..params.behavior.horizon)
        .map(|k| params.behavior.discount.powi(k as i32))
        .collect()
}

fn pair_value(
    ego: &EgoTerms,
    g0: usize,
    other: &SequenceRollouts,
    other_progress: Option<&[f64]>,
    gi: usize,
    discounts: &[f64],
    params: &ModelParams,
    cfg: &PlannerConfig,
) -> f64 {
    let n = discounts.len();
    let mut total = 0.0;
    for (k, &disc) in discounts.iter().enumerate() {
        let o = g0 * n + k;
        if ego.off_road[o]
            || vehicles_collide(ego.rollouts.state(g0, k), other.state(gi, k), &params.safety)
        {
            break;
        }
        let mut r = ego.progress[o];
        if let Some(p) = other_progress {
            r += cfg.congestion_weight * p[gi * n + k];
        }
        total += disc * r;
    }
    total
}

fn neighbor_progress(
    rollouts: &SequenceRollouts,
    merging: bool,
    params: &ModelParams,
) -> Vec<f64> {
    let space = rollouts.space();
    let mix = params.reward.progress_mix(merging);
    (0..space.len())
        .flat_map(|g| (0..space.horizon()).map(move |k| (g, k)))
        .map(|(g, k)| progress(rollouts.state(g, k), &params.road, mix))
        .collect()
}

/// `Q̄'_0(γ_0, γ_i)`: discounted ego reward over the disturbance-free pairwise
/// rollouts.
pub fn ego_pair_value(
    snapshot: &TrafficSnapshot,
    ego: VehicleId,
    neighbor: VehicleId,
    gamma0: &crate::behavior::ActionSequence,
    gamma_i: &crate::behavior::ActionSequence,
    params: &ModelParams,
    cfg: &PlannerConfig,
) -> Result<f64> {
    let space = SequenceSpace::new(params.behavior.horizon);
    let me = snapshot.entry(ego)?;
    let other = snapshot.entry(neighbor)?;
    let terms = EgoTerms::new(&me.state, me.merging, space, params);
    let theirs = SequenceRollouts::new(&other.state, space, params);
    let progress_i = (cfg.congestion_weight > 0.0)
        .then(|| neighbor_progress(&theirs, other.merging, params));
    Ok(pair_value(
        &terms,
        space.encode(gamma0)?,
        &theirs,
        progress_i.as_deref(),
        space.encode(gamma_i)?,
        &discounts(params),
        params,
        cfg,
    ))
}

/// Belief-mixed sequence distribution of `neighbor`:
/// `Σ_cells b(σ, w)·P(γ | σ, w, s)`.
pub fn predict_sequences(
    snapshot: &TrafficSnapshot,
    neighbor: VehicleId,
    belief: &IntentBelief,
    params: &ModelParams,
) -> Result<Vec<f64>> {
    let values = InteractionValues::for_vehicle(snapshot, neighbor, params, &params.behavior)?;
    let mut mixed = vec![0.0; values.space().len()];
    for (cell, b) in intent_grid().iter().zip(belief.probabilities()) {
        if *b == 0.0 {
            continue;
        }
        let p = values.sequence_policy(cell.sigma, &cell.weights, params.behavior.temperature);
        for (m, q) in mixed.iter_mut().zip(p) {
            *m += b * q;
        }
    }
    Ok(mixed)
}

/// `Q'_0(γ_0)` for every ego sequence.
pub fn ego_sequence_values(
    snapshot: &TrafficSnapshot,
    ego: VehicleId,
    beliefs: &BTreeMap<VehicleId, IntentBelief>,
    params: &ModelParams,
    cfg: &PlannerConfig,
) -> Result<Vec<f64>> {
    let neighbors = snapshot.neighbors(ego)?;
    if neighbors.is_empty() {
        return Err(Error::NoNeighbors(ego));
    }
    let space = SequenceSpace::new(params.behavior.horizon);
    let me = snapshot.entry(ego)?;
    let terms = EgoTerms::new(&me.state, me.merging, space, params);
    let disc = discounts(params);
    let uniform = init_belief();
    let mut values = vec![0.0; space.len()];
    for &i in neighbors {
        let belief = beliefs.get(&i).unwrap_or(&uniform);
        let prediction = predict_sequences(snapshot, i, belief, params)?;
        let other = snapshot.entry(i)?;
        let theirs = SequenceRollouts::new(&other.state, space, params);
        let progress_i = (cfg.congestion_weight > 0.0)
            .then(|| neighbor_progress(&theirs, other.merging, params));
        let support: Vec<(usize, f64)> = prediction
            .iter()
            .copied()
            .enumerate()
            .filter(|(_, p)| *p > 0.0)
            .collect();
        for (g0, v) in values.iter_mut().enumerate() {
            *v += support
                .iter()
                .map(|&(gi, p)| {
                    p * pair_value(&terms, g0, &theirs, progress_i.as_deref(), gi, &disc, params, cfg)
                })
                .sum::<f64>();
        }
    }
    let scale = 1.0 / neighbors.len() as f64;
    values.iter_mut().for_each(|v| *v *= scale);
    Ok(values)
}

pub fn ego_cumulative(
    snapshot: &TrafficSnapshot,
    ego: VehicleId,
    gamma0: &crate::behavior::ActionSequence,
    beliefs: &BTreeMap<VehicleId, IntentBelief>,
    params: &ModelParams,
    cfg: &PlannerConfig,
) -> Result<f64> {
    let space = SequenceSpace::new(params.behavior.horizon);
    let index = space.encode(gamma0)?;
    Ok(ego_sequence_values(snapshot, ego, beliefs, params, cfg)?[index])
}

fn block_means(
    values: &[f64],
    space: SequenceSpace,
    state: &VehicleState,
    params: &ModelParams,
) -> ActionValues {
    let mut q = [0.0; DriverAction::COUNT];
    for a in DriverAction::ALL {
        let block = space.block(a);
        let n = block.len() as f64;
        q[a.index()] = values[block].iter().sum::<f64>() / n;
    }
    let mut feasible = [false; DriverAction::COUNT];
    for a in feasible_actions(state, &params.road) {
        feasible[a.index()] = true;
    }
    ActionValues::new(q, feasible)
}

/// `u*_0 = argmax_u Q_0(s, u)` over feasible actions.
pub fn plan(
    snapshot: &TrafficSnapshot,
    ego: VehicleId,
    beliefs: &BTreeMap<VehicleId, IntentBelief>,
    params: &ModelParams,
    cfg: &PlannerConfig,
) -> Result<PlanResult> {
    let start = Instant::now();
    let values = ego_sequence_values(snapshot, ego, beliefs, params, cfg)?;
    let space = SequenceSpace::new(params.behavior.horizon);
    let q = block_means(&values, space, &snapshot.state(ego)?, params);
    let used = snapshot
        .neighbors(ego)?
        .iter()
        .map(|i| (*i, beliefs.get(i).cloned().unwrap_or_else(init_belief)))
        .collect();
    let elapsed = start.elapsed();
    Ok(PlanResult {
        action: q.argmax(),
        values: q,
        beliefs: used,
        elapsed,
        over_budget: elapsed.as_secs_f64() > cfg.compute_budget,
    })
}

/// Plan for an ego with no adjacent vehicles: the same reward against the
/// road alone.
pub fn plan_unobstructed(
    snapshot: &TrafficSnapshot,
    ego: VehicleId,
    params: &ModelParams,
) -> Result<PlanResult> {
    let start = Instant::now();
    let space = SequenceSpace::new(params.behavior.horizon);
    let me = snapshot.entry(ego)?;
    let terms = EgoTerms::new(&me.state, me.merging, space, params);
    let disc = discounts(params);
    let n = space.horizon();
    let values: Vec<f64> = (0..space.len())
        .map(|g| {
            disc.iter()
                .enumerate()
                .filter(|(k, _)| !terms.off_road[g * n + k])
                .map(|(k, d)| d * terms.progress[g * n + k])
                .sum()
        })
        .collect();
    let q = block_means(&values, space, &me.state, params);
    Ok(PlanResult {
        action: q.argmax(),
        values: q,
        beliefs: BTreeMap::new(),
        elapsed: start.elapsed(),
        over_budget: false,
    })
}
