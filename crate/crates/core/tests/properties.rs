use mergesim::behavior::{softmax, ActionSequence, SequenceSpace};
use mergesim::dataio::{read_record, write_record, Track, TrackPoint, TrajectoryRecord};
use mergesim::intent::{init_belief, IntentBelief, GRID_SIZE};
use mergesim::rewards::{
    headway_from_ttc, progress, time_to_collision, vehicles_collide, ObjectiveWeights, SafetyConfig,
};
use mergesim::sim::{TrafficSnapshot, VehicleEntry};
use mergesim::world::{step, DriverAction, KinematicsConfig, RoadGeometry, VehicleId, VehicleState};
use proptest::prelude::*;

fn action() -> impl Strategy<Value = DriverAction> {
    (0..DriverAction::COUNT).prop_map(DriverAction::from_index)
}

fn state() -> impl Strategy<Value = VehicleState> {
    (-200.0..600.0f64, 0.0..10.5f64, 0.0..40.0f64).prop_map(|(x, y, v)| VehicleState::new(x, y, v))
}

fn belief() -> impl Strategy<Value = IntentBelief> {
    prop::collection::vec(0.001..1.0f64, GRID_SIZE).prop_map(|raw| {
        let total: f64 = raw.iter().sum();
        IntentBelief::from_probabilities(raw.iter().map(|p| p / total).collect()).unwrap()
    })
}

proptest! {
    #[test]
    fn speed_stays_within_limits(s in state(), a in action(), d in prop::array::uniform3(-3.0..3.0f64)) {
        let kin = KinematicsConfig::default();
        let next = step(&s, a, &RoadGeometry::default(), &kin, d);
        prop_assert!(next.v_x >= kin.v_min && next.v_x <= kin.v_max);
    }

    #[test]
    fn lane_change_ends_on_a_center(lane in 0u32..2, x in 0.0..300.0f64, v in 5.0..35.0f64, replay in any::<bool>()) {
        let road = RoadGeometry::default();
        let kin = if replay { KinematicsConfig::replay() } else { KinematicsConfig::default() };
        let mut s = VehicleState::new(x, road.lane_center(lane), v);
        for _ in 0..kin.lane_change_steps() {
            s = step(&s, DriverAction::SteerLeft, &road, &kin, [0.0; 3]);
        }
        prop_assert_eq!(s.y, road.lane_center(lane + 1));
        for _ in 0..kin.lane_change_steps() {
            s = step(&s, DriverAction::SteerRight, &road, &kin, [0.0; 3]);
        }
        prop_assert_eq!(s.y, road.lane_center(lane));
    }

    #[test]
    fn softmax_normalizes_and_keeps_order(logits in prop::collection::vec(prop::option::weighted(0.8, -100.0..100.0f64), 1..40)) {
        prop_assume!(logits.iter().any(Option::is_some));
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for (i, a) in logits.iter().enumerate() {
            match a {
                None => prop_assert_eq!(p[i], 0.0),
                Some(a) => {
                    for (j, b) in logits.iter().enumerate() {
                        if let Some(b) = b {
                            if a > b {
                                prop_assert!(p[i] >= p[j]);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn softmax_ignores_a_common_shift(logits in prop::collection::vec(-50.0..50.0f64, 1..20), shift in -500.0..500.0f64) {
        let a = softmax(&logits.iter().map(|l| Some(*l)).collect::<Vec<_>>());
        let b = softmax(&logits.iter().map(|l| Some(l + shift)).collect::<Vec<_>>());
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn posterior_ignores_likelihood_scale(prior in belief(), likes in prop::collection::vec(1e-5..5.0f64, GRID_SIZE), c in 1e-3..1e3f64) {
        let a = prior.posterior(&likes);
        let scaled: Vec<f64> = likes.iter().map(|l| l * c).collect();
        let b = prior.posterior(&scaled);
        prop_assert!((a.probabilities().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for (x, y) in a.probabilities().iter().zip(b.probabilities()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_likelihoods_keep_the_prior(prior in belief(), l in 1e-200..1e10f64) {
        let post = prior.posterior(&[l; GRID_SIZE]);
        for (x, y) in post.probabilities().iter().zip(prior.probabilities()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn map_cell_has_rank_one(b in belief()) {
        prop_assert_eq!(b.rank(b.map_index()), 1);
        let uniform = init_belief();
        prop_assert!((0..GRID_SIZE).all(|i| uniform.rank(i) == 1));
    }

    #[test]
    fn collision_is_symmetric(a in state(), b in state()) {
        let cfg = SafetyConfig::default();
        prop_assert_eq!(vehicles_collide(&a, &b, &cfg), vehicles_collide(&b, &a, &cfg));
    }

    #[test]
    fn headway_lies_in_unit_interval(f in state(), l in state()) {
        let cfg = SafetyConfig::default();
        let h = headway_from_ttc(time_to_collision(&f, &l, &RoadGeometry::default(), &cfg), &cfg);
        prop_assert!((0.0..=1.0).contains(&h));
    }

    #[test]
    fn progress_lies_in_unit_interval(s in state(), mix in 0.0..=1.0f64) {
        let p = progress(&s, &RoadGeometry::default(), mix);
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn normalized_weights_sum_to_one(raw in prop::array::uniform3(0.0..10.0f64)) {
        prop_assume!(raw.iter().sum::<f64>() > 1e-6);
        let w = ObjectiveWeights::normalized(raw).unwrap();
        prop_assert!((w.as_array().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sequence_codes_roundtrip(n in 1usize..5, seed in any::<u64>()) {
        let space = SequenceSpace::new(n);
        let index = (seed % space.len() as u64) as usize;
        let seq = space.decode(index);
        prop_assert_eq!(space.encode(&seq).unwrap(), index);
        prop_assert!(space.block(seq.first()).contains(&index));
        let back = ActionSequence::new(seq.actions().to_vec());
        prop_assert_eq!(back, seq);
    }

    #[test]
    fn adjacency_is_symmetric(states in prop::collection::vec(state(), 1..8), radius in 10.0..200.0f64) {
        let road = RoadGeometry::default();
        let entries = states
            .iter()
            .enumerate()
            .map(|(i, s)| VehicleEntry { id: VehicleId(i as u32), state: *s, merging: false })
            .collect();
        let snap = TrafficSnapshot::new(0, entries, &road, radius).unwrap();
        for (id, list) in snap.adjacency() {
            for j in list {
                prop_assert!(j != id);
                prop_assert!(snap.neighbors(*j).unwrap().contains(id));
                let (a, b) = (snap.state(*id).unwrap(), snap.state(*j).unwrap());
                prop_assert!((a.x - b.x).abs() <= radius);
            }
        }
    }

    #[test]
    fn records_roundtrip_through_csv(points in prop::collection::vec((-100.0..500.0f64, 0.0..7.0f64, 0.0..40.0f64), 1..30)) {
        let road = RoadGeometry::default();
        let track = Track {
            id: VehicleId(7),
            points: points
                .iter()
                .enumerate()
                .map(|(f, (x, y, v))| TrackPoint {
                    frame: f as i64 + 3,
                    x: *x,
                    y: *y,
                    x_velocity: *v,
                    y_velocity: 0.5,
                    lane: road.lane_index(*y),
                })
                .collect(),
        };
        let rec = TrajectoryRecord::new("p", 25.0, vec![track]).unwrap();
        let mut buf = Vec::new();
        write_record(&rec, &mut buf).unwrap();
        prop_assert_eq!(read_record(buf.as_slice(), "p", 25.0).unwrap(), rec);
    }
}
