//! Receding-horizon driver model.
//!
//! A driver scores each of its own action sequences `γ ∈ U^N` by the
//! discounted SVO reward, averaged over every sequence of each adjacent
//! vehicle (uniform, non-reactive, disturbance-free). Because the SVO reward
//! is a mean of pairwise terms and the neighbor sequences are independent,
//! that expectation equals the mean over neighbors of per-pair expectations,
//! which is how [`InteractionValues`] computes it.
//!
//! The pairwise expectations are stored as feature sums rather than rewards:
//! `w·E[Σ λ^k (1-c)[h, τ, e]]` for the driver's own term and
//! `E[Σ λ^k r_j(·|uniform)]` for the other's term. Any `(σ, w)` is then a dot
//! product away, so a whole intent grid costs one pairwise pass.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::params::ModelParams;
use crate::rewards::{
    effort, off_road, progress, headway_from_ttc, solo_features, time_to_collision,
    vehicles_collide, ObjectiveWeights, SocialOrientation,
};
use crate::sim::TrafficSnapshot;
use crate::world::{feasible_actions, step, DriverAction, VehicleId, VehicleState};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BehaviorConfig {
    pub horizon: usize,
    pub discount: f64,
    pub temperature: f64,
}

impl Default for BehaviorConfig {
    fn default() -> Self {
        Self {
            horizon: 3,
            discount: 0.9,
            temperature: 1.0,
        }
    }
}

impl BehaviorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.horizon > 6 {
            return Err(Error::InvalidConfig("horizon must lie in 1..=6".into()));
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return Err(Error::InvalidConfig("discount must lie in [0, 1]".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidConfig("temperature must be positive".into()));
        }
        Ok(())
    }
}

/// How a scripted driver turns values into an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionRule {
    /// Receding-horizon argmax.
    #[default]
    Argmax,
    /// Draw from the softmax policy.
    Sample,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ActionSequence(Vec<DriverAction>);

impl ActionSequence {
    pub fn new(actions: Vec<DriverAction>) -> Self {
        Self(actions)
    }

    pub fn repeat(action: DriverAction, horizon: usize) -> Self {
        Self(vec![action; horizon])
    }

    pub fn actions(&self) -> &[DriverAction] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn first(&self) -> DriverAction {
        self.0[0]
    }
}

/// Enumeration of `U^N` in base 5 with the first action as the most
/// significant digit, so sequences sharing a first action are contiguous.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SequenceSpace {
    horizon: usize,
}

impl SequenceSpace {
    pub fn new(horizon: usize) -> Self {
        assert!(horizon >= 1, "horizon must be positive");
        Self { horizon }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn len(&self) -> usize {
        DriverAction::COUNT.pow(self.horizon as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Sequences per first action.
    pub fn block_len(&self) -> usize {
        self.len() / DriverAction::COUNT
    }

    pub fn action_at(&self, index: usize, k: usize) -> DriverAction {
        let shift = DriverAction::COUNT.pow((self.horizon - 1 - k) as u32);
        DriverAction::from_index((index / shift) % DriverAction::COUNT)
    }

    pub fn first_action(&self, index: usize) -> DriverAction {
        self.action_at(index, 0)
    }

    pub fn decode(&self, index: usize) -> ActionSequence {
        ActionSequence((0..self.horizon).map(|k| self.action_at(index, k)).collect())
    }

    pub fn encode(&self, seq: &ActionSequence) -> Result<usize> {
        if seq.len() != self.horizon {
            return Err(Error::InvalidConfig(format!(
                "sequence length {} does not match horizon {}",
                seq.len(),
                self.horizon
            )));
        }
        Ok(seq
            .0
            .iter()
            .fold(0, |acc, a| acc * DriverAction::COUNT + a.index()))
    }

    /// Index range of `Γ¹(u)`.
    pub fn block(&self, first: DriverAction) -> std::ops::Range<usize> {
        let n = self.block_len();
        first.index() * n..(first.index() + 1) * n
    }
}

/// Predicted states `s(t+k)`, `k = 0..N`, for every sequence of one vehicle.
/// Entry `k = 0` is the current state.
#[derive(Debug, Clone)]
pub struct SequenceRollouts {
    space: SequenceSpace,
    states: Vec<VehicleState>,
}

impl SequenceRollouts {
    pub fn new(state: &VehicleState, space: SequenceSpace, params: &ModelParams) -> Self {
        let n = space.horizon();
        let mut states = Vec::with_capacity(space.len() * n);
        for g in 0..space.len() {
            let mut cur = *state;
            states.push(cur);
            for k in 1..n {
                cur = step(
                    &cur,
                    space.action_at(g, k - 1),
                    &params.road,
                    &params.kinematics,
                    [0.0; 3],
                );
                states.push(cur);
            }
        }
        Self { space, states }
    }

    pub fn space(&self) -> SequenceSpace {
        self.space
    }

    pub fn state(&self, sequence: usize, k: usize) -> &VehicleState {
        &self.states[sequence * self.space.horizon() + k]
    }
}

/// Per-`(sequence, k)` quantities that depend on one vehicle only.
struct OwnTerms {
    progress: Vec<f64>,
    effort: Vec<f64>,
    off_road: Vec<bool>,
}

impl OwnTerms {
    fn new(r: &SequenceRollouts, merging: bool, params: &ModelParams) -> Self {
        let space = r.space();
        let n = space.horizon();
        let mix = params.reward.progress_mix(merging);
        let mut out = Self {
            progress: Vec::with_capacity(space.len() * n),
            effort: Vec::with_capacity(space.len() * n),
            off_road: Vec::with_capacity(space.len() * n),
        };
        for g in 0..space.len() {
            for k in 0..n {
                let s = r.state(g, k);
                out.progress.push(progress(s, &params.road, mix));
                out.effort.push(effort(space.action_at(g, k), &params.reward));
                out.off_road.push(off_road(s, &params.road, &params.safety));
            }
        }
        out
    }
}

/// Discounted value features of one vehicle for each of its own sequences.
#[derive(Debug, Clone)]
pub struct InteractionValues {
    space: SequenceSpace,
    /// `E[Σ λ^k (1-c)·[h, τ, e]]` of the vehicle itself.
    self_terms: Vec<[f64; 3]>,
    /// `E[Σ λ^k r_j(·|uniform)]` of its neighbors.
    other_terms: Vec<f64>,
    feasible: [bool; DriverAction::COUNT],
    isolated: bool,
}

impl InteractionValues {
    /// Values of `id` against its adjacent vehicles; errors when `A(id)` is
    /// empty.
    pub fn compute(
        snapshot: &TrafficSnapshot,
        id: VehicleId,
        params: &ModelParams,
        cfg: &BehaviorConfig,
    ) -> Result<Self> {
        if snapshot.neighbors(id)?.is_empty() {
            return Err(Error::NoNeighbors(id));
        }
        Self::for_vehicle(snapshot, id, params, cfg)
    }

    /// Like [`Self::compute`] but falls back to the vehicle's personal reward
    /// against the road alone when it has no adjacent vehicles.
    pub fn for_vehicle(
        snapshot: &TrafficSnapshot,
        id: VehicleId,
        params: &ModelParams,
        cfg: &BehaviorConfig,
    ) -> Result<Self> {
        let me = snapshot.entry(id)?;
        let neighbors = snapshot.neighbors(id)?;
        let space = SequenceSpace::new(cfg.horizon);
        let mine = SequenceRollouts::new(&me.state, space, params);
        let mut values = Self {
            space,
            self_terms: vec![[0.0; 3]; space.len()],
            other_terms: vec![0.0; space.len()],
            feasible: feasibility(&me.state, params),
            isolated: neighbors.is_empty(),
        };
        if neighbors.is_empty() {
            values.accumulate_solo(&mine, me.merging, params, cfg);
            return Ok(values);
        }
        let own = OwnTerms::new(&mine, me.merging, params);
        for &j in neighbors {
            let other = snapshot.entry(j)?;
            let theirs = SequenceRollouts::new(&other.state, space, params);
            let their_terms = OwnTerms::new(&theirs, other.merging, params);
            values.accumulate_pair(&mine, &own, &theirs, &their_terms, params, cfg);
        }
        let scale = 1.0 / (neighbors.len() * space.len()) as f64;
        for (s, o) in values.self_terms.iter_mut().zip(values.other_terms.iter_mut()) {
            s.iter_mut().for_each(|v| *v *= scale);
            *o *= scale;
        }
        Ok(values)
    }

    fn accumulate_pair(
        &mut self,
        mine: &SequenceRollouts,
        own: &OwnTerms,
        theirs: &SequenceRollouts,
        their_terms: &OwnTerms,
        params: &ModelParams,
        cfg: &BehaviorConfig,
    ) {
        let n = self.space.horizon();
        let count = self.space.len();
        let discounts: Vec<f64> = (0..n).map(|k| cfg.discount.powi(k as i32)).collect();
        let road = &params.road;
        let safety = &params.safety;
        let third = 1.0 / 3.0;
        for gi in 0..count {
            let mut acc_self = [0.0; 3];
            let mut acc_other = 0.0;
            for gj in 0..count {
                for (k, &disc) in discounts.iter().enumerate() {
                    let si = mine.state(gi, k);
                    let sj = theirs.state(gj, k);
                    let oi = gi * n + k;
                    let oj = gj * n + k;
                    let overlap = vehicles_collide(si, sj, safety);
                    if !(overlap || own.off_road[oi]) {
                        let h = headway_from_ttc(time_to_collision(si, sj, road, safety), safety);
                        acc_self[0] += disc * h;
                        acc_self[1] += disc * own.progress[oi];
                        acc_self[2] += disc * own.effort[oi];
                    }
                    if !(overlap || their_terms.off_road[oj]) {
                        let h = headway_from_ttc(time_to_collision(sj, si, road, safety), safety);
                        acc_other +=
                            disc * third * (h + their_terms.progress[oj] + their_terms.effort[oj]);
                    }
                }
            }
            for (t, a) in self.self_terms[gi].iter_mut().zip(acc_self) {
                *t += a;
            }
            self.other_terms[gi] += acc_other;
        }
    }

    fn accumulate_solo(
        &mut self,
        mine: &SequenceRollouts,
        merging: bool,
        params: &ModelParams,
        cfg: &BehaviorConfig,
    ) {
        for g in 0..self.space.len() {
            let mut acc = [0.0; 3];
            for k in 0..self.space.horizon() {
                let f = solo_features(mine.state(g, k), self.space.action_at(g, k), merging, params);
                if !f.collision {
                    let disc = cfg.discount.powi(k as i32);
                    acc[0] += disc * f.headway;
                    acc[1] += disc * f.progress;
                    acc[2] += disc * f.effort;
                }
            }
            self.self_terms[g] = acc;
        }
    }

    pub fn space(&self) -> SequenceSpace {
        self.space
    }

    pub fn is_isolated(&self) -> bool {
        self.isolated
    }

    pub fn feasible(&self, action: DriverAction) -> bool {
        self.feasible[action.index()]
    }

    /// `Q'(γ | σ, w)` for the sequence with the given index. An isolated
    /// vehicle is scored by its personal reward alone.
    pub fn sequence_value(&self, index: usize, sigma: SocialOrientation, w: &ObjectiveWeights) -> f64 {
        if self.isolated {
            return w.dot(self.self_terms[index]);
        }
        let (theta_self, theta_other) = sigma.theta();
        theta_self * w.dot(self.self_terms[index]) + theta_other * self.other_terms[index]
    }

    pub fn sequence_values(&self, sigma: SocialOrientation, w: &ObjectiveWeights) -> Vec<f64> {
        (0..self.space.len())
            .map(|g| self.sequence_value(g, sigma, w))
            .collect()
    }

    /// `Q(s, u)`: mean of `Q'` over the sequences starting with `u`.
    pub fn action_values(&self, sigma: SocialOrientation, w: &ObjectiveWeights) -> ActionValues {
        let mut values = [0.0; DriverAction::COUNT];
        for a in DriverAction::ALL {
            let block = self.space.block(a);
            let n = block.len() as f64;
            values[a.index()] = block.map(|g| self.sequence_value(g, sigma, w)).sum::<f64>() / n;
        }
        ActionValues {
            values,
            feasible: self.feasible,
        }
    }

    pub fn policy(
        &self,
        sigma: SocialOrientation,
        w: &ObjectiveWeights,
        temperature: f64,
    ) -> ActionDistribution {
        self.action_values(sigma, w).softmax(temperature)
    }

    /// Softmax over whole sequences; sequences whose first action is
    /// infeasible get zero mass.
    pub fn sequence_policy(
        &self,
        sigma: SocialOrientation,
        w: &ObjectiveWeights,
        temperature: f64,
    ) -> Vec<f64> {
        let logits: Vec<Option<f64>> = (0..self.space.len())
            .map(|g| {
                self.feasible(self.space.first_action(g))
                    .then(|| self.sequence_value(g, sigma, w) / temperature)
            })
            .collect();
        softmax(&logits)
    }
}

fn feasibility(state: &VehicleState, params: &ModelParams) -> [bool; DriverAction::COUNT] {
    let mut mask = [false; DriverAction::COUNT];
    for a in feasible_actions(state, &params.road) {
        mask[a.index()] = true;
    }
    mask
}

/// Normalized `exp` of the present logits, computed with max-subtraction.
pub fn softmax(logits: &[Option<f64>]) -> Vec<f64> {
    let max = logits
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits
        .iter()
        .map(|l| l.map_or(0.0, |v| (v - max).exp()))
        .collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|v| v / total).collect()
}

/// Value of each first action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionValues {
    values: [f64; DriverAction::COUNT],
    feasible: [bool; DriverAction::COUNT],
}

impl ActionValues {
    pub fn new(values: [f64; DriverAction::COUNT], feasible: [bool; DriverAction::COUNT]) -> Self {
        Self { values, feasible }
    }

    pub fn get(&self, action: DriverAction) -> f64 {
        self.values[action.index()]
    }

    pub fn values(&self) -> [f64; DriverAction::COUNT] {
        self.values
    }

    pub fn is_feasible(&self, action: DriverAction) -> bool {
        self.feasible[action.index()]
    }

    /// Best feasible action; ties go to the earliest in [`DriverAction::ALL`].
    pub fn argmax(&self) -> DriverAction {
        let mut best: Option<DriverAction> = None;
        for a in DriverAction::ALL.into_iter().filter(|a| self.is_feasible(*a)) {
            if best.is_none_or(|b| self.get(a) > self.get(b)) {
                best = Some(a);
            }
        }
        best.unwrap_or(DriverAction::Maintain)
    }

    pub fn softmax(&self, temperature: f64) -> ActionDistribution {
        let logits: Vec<Option<f64>> = DriverAction::ALL
            .iter()
            .map(|a| self.is_feasible(*a).then(|| self.get(*a) / temperature))
            .collect();
        let p = softmax(&logits);
        ActionDistribution(std::array::from_fn(|i| p[i]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionDistribution([f64; DriverAction::COUNT]);

impl ActionDistribution {
    pub fn get(&self, action: DriverAction) -> f64 {
        self.0[action.index()]
    }

    pub fn probabilities(&self) -> [f64; DriverAction::COUNT] {
        self.0
    }

    pub fn argmax(&self) -> DriverAction {
        let mut best = DriverAction::Maintain;
        for a in DriverAction::ALL {
            if self.get(a) > self.get(best) {
                best = a;
            }
        }
        best
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DriverAction {
        let mut u: f64 = rng.gen();
        for a in DriverAction::ALL {
            u -= self.get(a);
            if u < 0.0 && self.get(a) > 0.0 {
                return a;
            }
        }
        DriverAction::ALL
            .into_iter()
            .rev()
            .find(|a| self.get(*a) > 0.0)
            .unwrap_or(DriverAction::Maintain)
    }
}

/// `Q'_i(s(t), γ | σ, w)` with neighbor sequences averaged uniformly.
pub fn cumulative_reward(
    snapshot: &TrafficSnapshot,
    id: VehicleId,
    gamma: &ActionSequence,
    sigma: SocialOrientation,
    w: &ObjectiveWeights,
    params: &ModelParams,
) -> Result<f64> {
    let values = InteractionValues::compute(snapshot, id, params, &params.behavior)?;
    let index = values.space().encode(gamma)?;
    Ok(values.sequence_value(index, sigma, w))
}

pub fn action_values(
    snapshot: &TrafficSnapshot,
    id: VehicleId,
    sigma: SocialOrientation,
    w: &ObjectiveWeights,
    params: &ModelParams,
) -> Result<ActionValues> {
    InteractionValues::compute(snapshot, id, params, &params.behavior)
        .map(|v| v.action_values(sigma, w))
}

pub fn policy(
    snapshot: &TrafficSnapshot,
    id: VehicleId,
    sigma: SocialOrientation,
    w: &ObjectiveWeights,
    params: &ModelParams,
) -> Result<ActionDistribution> {
    action_values(snapshot, id, sigma, w, params).map(|v| v.softmax(params.behavior.temperature))
}

/// Distribution over all `5^N` sequences, indexed as in [`SequenceSpace`].
pub fn sequence_policy(
    snapshot: &TrafficSnapshot,
    id: VehicleId,
    sigma: SocialOrientation,
    w: &ObjectiveWeights,
    params: &ModelParams,
) -> Result<Vec<f64>> {
    InteractionValues::compute(snapshot, id, params, &params.behavior)
        .map(|v| v.sequence_policy(sigma, w, params.behavior.temperature))
}
