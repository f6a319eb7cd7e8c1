//! Bayesian filter over a neighbor's latent `(σ, w)`.
//!
//! The grid has 22 cells: `{Prosocial, Egoistic, Competitive} × W` in the
//! order of [`WEIGHT_SET`], followed by a single altruistic cell (its reward
//! does not depend on `w`, so one cell stands for all seven).

use std::fmt;

use nalgebra::{Matrix3, Vector3};
use serde::Serialize;

use crate::behavior::{InteractionValues, ActionDistribution};
use crate::params::ModelParams;
use crate::rewards::{ObjectiveWeights, SocialOrientation};
use crate::sim::TrafficSnapshot;
use crate::world::{step, DriverAction, KinematicsConfig, VehicleId, VehicleState};
use crate::{Error, Result};

/// Indicator patterns `[headway, progress, effort]`; each is normalized to
/// sum to one.
pub const WEIGHT_SET: [[u8; 3]; 7] = [
    [0, 0, 1],
    [0, 1, 1],
    [0, 1, 0],
    [1, 1, 1],
    [1, 0, 1],
    [1, 1, 0],
    [1, 0, 0],
];

pub const GRID_SIZE: usize = 22;

const UNDERFLOW: f64 = 1e-300;
const RANK_TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntentCell {
    pub sigma: SocialOrientation,
    pub weights: ObjectiveWeights,
}

impl IntentCell {
    /// Stable column label, e.g. `egoistic_001` or `altruistic`.
    pub fn label(&self) -> String {
        if self.sigma == SocialOrientation::Altruistic {
            return "altruistic".into();
        }
        let bits: String = self
            .weights
            .as_array()
            .iter()
            .map(|v| if *v > 0.0 { '1' } else { '0' })
            .collect();
        format!("{}_{bits}", self.sigma.name())
    }
}

impl fmt::Display for IntentCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

fn weight_vector(pattern: [u8; 3]) -> ObjectiveWeights {
    ObjectiveWeights::normalized(pattern.map(f64::from)).expect("nonzero pattern")
}

/// The 22 cells in their fixed order.
pub fn intent_grid() -> Vec<IntentCell> {
    let mut cells = Vec::with_capacity(GRID_SIZE);
    for sigma in [
        SocialOrientation::Prosocial,
        SocialOrientation::Egoistic,
        SocialOrientation::Competitive,
    ] {
        for p in WEIGHT_SET {
            cells.push(IntentCell {
                sigma,
                weights: weight_vector(p),
            });
        }
    }
    cells.push(IntentCell {
        sigma: SocialOrientation::Altruistic,
        weights: ObjectiveWeights::UNIFORM,
    });
    cells
}

/// Index of the grid cell representing `(sigma, w)`. Any `w` maps to the
/// altruistic cell when `sigma` is altruistic.
pub fn cell_index(sigma: SocialOrientation, w: &ObjectiveWeights) -> Option<usize> {
    let grid = intent_grid();
    if sigma == SocialOrientation::Altruistic {
        return Some(GRID_SIZE - 1);
    }
    grid.iter().position(|c| {
        c.sigma == sigma
            && c.weights
                .as_array()
                .iter()
                .zip(w.as_array())
                .all(|(a, b)| (a - b).abs() < 1e-9)
    })
}

/// Posterior over the intent grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntentBelief {
    probabilities: Vec<f64>,
}

impl Default for IntentBelief {
    fn default() -> Self {
        init_belief()
    }
}

impl IntentBelief {
    pub fn from_probabilities(probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.len() != GRID_SIZE {
            return Err(Error::InvalidConfig(format!(
                "belief needs {GRID_SIZE} cells, got {}",
                probabilities.len()
            )));
        }
        if probabilities.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidConfig("belief entries must be nonnegative".into()));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("belief sums to {total}")));
        }
        Ok(Self { probabilities })
    }

    /// All mass on one cell.
    pub fn point_mass(index: usize) -> Self {
        let mut probabilities = vec![0.0; GRID_SIZE];
        probabilities[index] = 1.0;
        Self { probabilities }
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn get(&self, index: usize) -> f64 {
        self.probabilities[index]
    }

    pub fn entropy(&self) -> f64 {
        -self
            .probabilities
            .iter()
            .filter(|p| **p > 0.0)
            .map(|p| p * p.ln())
            .sum::<f64>()
    }

    /// Most probable cell; ties go to the lower index.
    pub fn map_index(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probabilities.iter().enumerate() {
            if *p > self.probabilities[best] {
                best = i;
            }
        }
        best
    }

    /// Competition rank of a cell: one plus the number of cells with strictly
    /// more mass (relative tolerance 1e-9).
    pub fn rank(&self, index: usize) -> usize {
        let p = self.probabilities[index];
        1 + self
            .probabilities
            .iter()
            .filter(|q| **q > p + RANK_TIE_TOL * p.max(f64::MIN_POSITIVE))
            .count()
    }

    /// Posterior from per-cell log-likelihoods. Unchanged when every
    /// likelihood underflows.
    pub fn posterior_from_log(&self, log_likelihoods: &[f64]) -> Self {
        assert_eq!(log_likelihoods.len(), GRID_SIZE);
        if log_likelihoods.iter().all(|l| !(*l >= UNDERFLOW.ln())) {
            return self.clone();
        }
        let logs: Vec<f64> = self
            .probabilities
            .iter()
            .zip(log_likelihoods)
            .map(|(p, l)| if *p > 0.0 { p.ln() + l } else { f64::NEG_INFINITY })
            .collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return self.clone();
        }
        let weights: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        Self {
            probabilities: weights.into_iter().map(|w| w / total).collect(),
        }
    }

    pub fn posterior(&self, likelihoods: &[f64]) -> Self {
        let logs: Vec<f64> = likelihoods.iter().map(|l| l.ln()).collect();
        self.posterior_from_log(&logs)
    }
}

/// Uniform belief, `1/22` per cell.
pub fn init_belief() -> IntentBelief {
    IntentBelief {
        probabilities: vec![1.0 / GRID_SIZE as f64; GRID_SIZE],
    }
}

/// Zero-mean Gaussian with covariance `Q`.
#[derive(Debug, Clone)]
pub struct DisturbanceDensity {
    inverse: Matrix3<f64>,
    log_norm: f64,
}

impl DisturbanceDensity {
    pub fn new(cfg: &KinematicsConfig) -> Result<Self> {
        let q = Matrix3::from_fn(|r, c| cfg.disturbance_cov[r][c]);
        let chol = q.cholesky().ok_or(Error::SingularCovariance)?;
        let det = chol.l().diagonal().product().powi(2);
        Ok(Self {
            inverse: chol.inverse(),
            log_norm: -1.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln(),
        })
    }

    /// `ln φ_Q(r)` with `r` ordered `[x, v_x, y]`.
    pub fn log_density(&self, residual: [f64; 3]) -> f64 {
        let r = Vector3::from(residual);
        self.log_norm - 0.5 * (r.transpose() * self.inverse * r)[(0, 0)]
    }

    pub fn density(&self, residual: [f64; 3]) -> f64 {
        self.log_density(residual).exp()
    }
}

fn residual(observed: &VehicleState, predicted: &VehicleState) -> [f64; 3] {
    [
        observed.x - predicted.x,
        observed.v_x - predicted.v_x,
        observed.y - predicted.y,
    ]
}

/// `ln Λ = ln Σ_u P(u) φ_Q(observed − f(s, u))`.
pub fn log_likelihood_given_policy(
    state: &VehicleState,
    observed_next: &VehicleState,
    policy: &ActionDistribution,
    density: &DisturbanceDensity,
    params: &ModelParams,
) -> f64 {
    let terms: Vec<f64> = DriverAction::ALL
        .iter()
        .filter(|a| policy.get(**a) > 0.0)
        .map(|&a| {
            let predicted = step(state, a, &params.road, &params.kinematics, [0.0; 3]);
            policy.get(a).ln() + density.log_density(residual(observed_next, &predicted))
        })
        .collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return f64::NEG_INFINITY;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Log-likelihood of the observed transition under every grid cell.
pub fn log_likelihoods(
    snapshot: &TrafficSnapshot,
    id: VehicleId,
    observed_next: &VehicleState,
    params: &ModelParams,
) -> Result<Vec<f64>> {
    let density = DisturbanceDensity::new(&params.kinematics)?;
    let state = snapshot.state(id)?;
    let values = InteractionValues::for_vehicle(snapshot, id, params, &params.behavior)?;
    Ok(intent_grid()
        .iter()
        .map(|cell| {
            let p = values.policy(cell.sigma, &cell.weights, params.behavior.temperature);
            log_likelihood_given_policy(&state, observed_next, &p, &density, params)
        })
        .collect())
}

/// `Λ(σ, w)` for a single hypothesis.
pub fn transition_likelihood(
    snapshot: &TrafficSnapshot,
    id: VehicleId,
    observed_next: &VehicleState,
    sigma: SocialOrientation,
    w: &ObjectiveWeights,
    params: &ModelParams,
) -> Result<f64> {
    let density = DisturbanceDensity::new(&params.kinematics)?;
    let state = snapshot.state(id)?;
    let values = InteractionValues::for_vehicle(snapshot, id, params, &params.behavior)?;
    let p = values.policy(sigma, w, params.behavior.temperature);
    Ok(log_likelihood_given_policy(&state, observed_next, &p, &density, params).exp())
}

/// One filter step: `P(σ, w | ξ(t+1)) ∝ Λ(σ, w)·P(σ, w | ξ(t))`.
pub fn update(
    belief: &IntentBelief,
    snapshot: &TrafficSnapshot,
    id: VehicleId,
    observed_next: &VehicleState,
    params: &ModelParams,
) -> Result<IntentBelief> {
    let logs = log_likelihoods(snapshot, id, observed_next, params)?;
    Ok(belief.posterior_from_log(&logs))
}

/// Time-ordered snapshots at a uniform step.
#[derive(Debug, Clone, Default)]
pub struct ObservationHistory {
    dt: f64,
    snapshots: Vec<TrafficSnapshot>,
}

impl ObservationHistory {
    pub fn new(dt: f64) -> Self {
        Self {
            dt,
            snapshots: Vec::new(),
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn push(&mut self, snapshot: TrafficSnapshot) -> Result<()> {
        if let Some(last) = self.snapshots.last() {
            if snapshot.time_index != last.time_index + 1 {
                return Err(Error::InvalidConfig(format!(
                    "snapshot {} does not follow {}",
                    snapshot.time_index, last.time_index
                )));
            }
        }
        self.snapshots.push(snapshot);
        Ok(())
    }

    pub fn snapshots(&self) -> &[TrafficSnapshot] {
        &self.snapshots
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }
}

/// Runs the filter for `id` over a history. Entry `k` is the belief after
/// `k` transitions; transitions where the vehicle is missing leave it
/// unchanged.
pub fn filter_history(history: &ObservationHistory, id: VehicleId, params: &ModelParams) -> Result<Vec<IntentBelief>> {
    let mut belief = init_belief();
    let mut out = vec![belief.clone()];
    for pair in history.snapshots().windows(2) {
        if let (Ok(_), Ok(next)) = (pair[0].state(id), pair[1].state(id)) {
            belief = update(&belief, &pair[0], id, &next, params)?;
        }
        out.push(belief.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::VehicleEntry;

    #[test]
    fn grid_layout() {
        let grid = intent_grid();
        assert_eq!(grid.len(), GRID_SIZE);
        assert_eq!(grid[0].label(), "prosocial_001");
        assert_eq!(grid[7 + 6].label(), "egoistic_100");
        assert_eq!(grid[21].label(), "altruistic");
        for c in &grid {
            let s: f64 = c.weights.as_array().iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let w = ObjectiveWeights::new(0.0, 0.0, 1.0).unwrap();
        assert_eq!(cell_index(SocialOrientation::Egoistic, &w), Some(7));
        assert_eq!(cell_index(SocialOrientation::Altruistic, &w), Some(21));
    }

    #[test]
    fn init_is_uniform_and_max_entropy() {
        let b = init_belief();
        assert!(b.probabilities().iter().all(|p| (*p - 1.0 / 22.0).abs() < 1e-15));
        assert!((b.probabilities().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((b.entropy() - 22f64.ln()).abs() < 1e-12);
        let mut skew = vec![0.04; GRID_SIZE];
        skew[0] = 1.0 - 0.04 * 21.0;
        assert!(IntentBelief::from_probabilities(skew).unwrap().entropy() < b.entropy());
    }

    #[test]
    fn bayes_arithmetic() {
        let mut prior = vec![0.0; GRID_SIZE];
        prior[0] = 0.5;
        prior[1] = 0.5;
        let prior = IntentBelief::from_probabilities(prior).unwrap();
        let mut lik = vec![1.0; GRID_SIZE];
        lik[0] = 0.2;
        lik[1] = 0.6;
        let post = prior.posterior(&lik);
        assert!((post.get(0) - 0.25).abs() < 1e-12);
        assert!((post.get(1) - 0.75).abs() < 1e-12);

        let flat = init_belief().posterior(&[0.3; GRID_SIZE]);
        for i in 0..GRID_SIZE {
            assert!((flat.get(i) - 1.0 / 22.0).abs() < 1e-15);
        }
        let under = init_belief().posterior(&[0.0; GRID_SIZE]);
        assert_eq!(under, init_belief());
    }

    #[test]
    fn rank_counts_strictly_larger() {
        let mut p = vec![0.0; GRID_SIZE];
        p[3] = 0.4;
        p[4] = 0.4;
        p[5] = 0.2;
        let b = IntentBelief::from_probabilities(p).unwrap();
        assert_eq!(b.rank(3), 1);
        assert_eq!(b.rank(4), 1);
        assert_eq!(b.rank(5), 3);
        assert_eq!(b.map_index(), 3);
    }

    #[test]
    fn gaussian_peak_and_tails() {
        let cfg = KinematicsConfig::default();
        let d = DisturbanceDensity::new(&cfg).unwrap();
        let det: f64 = 0.25 * 0.25 * 0.04;
        let peak = (2.0 * std::f64::consts::PI).powf(-1.5) / det.sqrt();
        assert!((d.density([0.0; 3]) / peak - 1.0).abs() < 1e-12);
        assert!(d.density([1e3, 0.0, 0.0]) == 0.0);
        let mut singular = cfg.clone();
        singular.disturbance_cov[2][2] = 0.0;
        assert!(matches!(DisturbanceDensity::new(&singular), Err(Error::SingularCovariance)));
    }

    #[test]
    fn uniform_policy_matches_direct_sum() {
        let mut params = ModelParams::default();
        params.kinematics.disturbance_cov = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let d = DisturbanceDensity::new(&params.kinematics).unwrap();
        let s = VehicleState::new(10.0, params.road.lane_center(1), 20.0);
        let obs = step(&s, DriverAction::Maintain, &params.road, &params.kinematics, [0.0; 3]);
        let uniform = crate::behavior::ActionValues::new([0.0; 5], [true; 5]).softmax(1.0);
        let got = log_likelihood_given_policy(&s, &obs, &uniform, &d, &params).exp();
        let mut want = 0.0;
        for a in DriverAction::ALL {
            let p = step(&s, a, &params.road, &params.kinematics, [0.0; 3]);
            let r = [obs.x - p.x, obs.v_x - p.v_x, obs.y - p.y];
            let sq = r.iter().map(|v| v * v).sum::<f64>();
            want += 0.2 * (2.0 * std::f64::consts::PI).powf(-1.5) * (-0.5 * sq).exp();
        }
        assert!((got - want).abs() < 1e-15 * want.max(1.0) + 1e-15);
    }

    #[test]
    fn altruistic_likelihood_ignores_weights() {
        let params = ModelParams::default();
        let road = &params.road;
        let snap = TrafficSnapshot::new(
            0,
            vec![
                VehicleEntry {
                    id: VehicleId(0),
                    state: VehicleState::new(40.0, road.lane_center(0), 24.0),
                    merging: true,
                },
                VehicleEntry {
                    id: VehicleId(1),
                    state: VehicleState::new(30.0, road.lane_center(1), 27.0),
                    merging: false,
                },
            ],
            road,
            100.0,
        )
        .unwrap();
        let obs = VehicleState::new(57.3, road.lane_center(1), 27.5);
        let base = transition_likelihood(
            &snap,
            VehicleId(1),
            &obs,
            SocialOrientation::Altruistic,
            &ObjectiveWeights::UNIFORM,
            &params,
        )
        .unwrap();
        for p in WEIGHT_SET {
            let w = weight_vector(p);
            let l = transition_likelihood(&snap, VehicleId(1), &obs, SocialOrientation::Altruistic, &w, &params)
                .unwrap();
            assert_eq!(l.to_bits(), base.to_bits());
        }
    }
}
