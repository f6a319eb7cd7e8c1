use mergesim::dataio::{
    epoch_states, extract_merge_episodes, generate, infer_track, load, read_record, replay_all, replay_eval,
    reproduce, road_for, road_sidecar, summarize, upsample, write_record, GeneratorConfig, ReplayConfig, Track,
    TrackPoint, TrajectoryRecord,
};
use mergesim::behavior::InteractionValues;
use mergesim::intent::{cell_index, intent_grid};
use mergesim::rewards::{ObjectiveWeights, SocialOrientation};
use mergesim::sim::{TrafficSnapshot, VehicleEntry, Verdict};
use mergesim::world::{step, DriverAction, RoadGeometry, VehicleId, VehicleState};
use mergesim::ModelParams;

fn w(p: [f64; 3]) -> ObjectiveWeights {
    ObjectiveWeights::normalized(p).unwrap()
}

fn cruise_track(id: u32, x0: f64, y: f64, v: f64, frames: i64, fps: f64, road: &RoadGeometry) -> Track {
    Track {
        id: VehicleId(id),
        points: (0..frames)
            .map(|f| TrackPoint {
                frame: f,
                x: x0 + v * f as f64 / fps,
                y,
                x_velocity: v,
                y_velocity: 0.0,
                lane: road.lane_index(y),
            })
            .collect(),
    }
}

#[test]
fn benign_batch_merges_every_episode() {
    let data = generate(&GeneratorConfig::default()).unwrap();
    let results = replay_all(&data.record, &data.road, &ReplayConfig::default()).unwrap();
    assert_eq!(results.len(), 10);
    let summary = summarize(&results);
    assert_eq!(summary.len(), 1);
    let s = &summary[0];
    assert_eq!(s.merges, 10);
    assert_eq!(s.successes, 10);
    assert_eq!(s.successes + s.collisions + s.ramp_end_failures + s.timeouts, s.merges);
    assert_eq!(s.success_rate, 100.0);
}

#[test]
fn sealed_episodes_run_out_of_ramp() {
    let data = generate(&GeneratorConfig {
        episodes: 3,
        ..GeneratorConfig::sealed()
    })
    .unwrap();
    let results = replay_all(&data.record, &data.road, &ReplayConfig::default()).unwrap();
    assert_eq!(results.len(), 3);
    assert!(results.iter().all(|r| r.outcome.verdict == Verdict::RampEndFailure));
}

#[test]
fn replayed_traffic_follows_the_recording() {
    let data = generate(&GeneratorConfig {
        episodes: 2,
        ..Default::default()
    })
    .unwrap();
    let ep = &extract_merge_episodes(&data.record, &data.road)[0];
    let cfg = ReplayConfig::default();
    let out = replay_eval(&data.record, ep, &cfg).unwrap();
    let dt = cfg.params.kinematics.dt;
    let mut compared = 0;
    for track in data.record.tracks.values() {
        if track.id == ep.target || !track.contains(ep.start_frame) {
            continue;
        }
        let recorded = epoch_states(&data.record, track, ep.start_frame, dt);
        let simulated = out.states_of(track.id);
        let n = recorded.len().min(simulated.len());
        assert!(n > 0);
        assert_eq!(simulated[..n], recorded[..n], "vehicle {}", track.id);
        compared += 1;
    }
    assert!(compared > 3);
}

#[test]
fn single_frame_track_keeps_the_prior() {
    let road = RoadGeometry::default();
    let rec = TrajectoryRecord::new("one", 25.0, vec![cruise_track(1, 0.0, road.lane_center(1), 25.0, 1, 25.0, &road)])
        .unwrap();
    let trace = infer_track(&rec, VehicleId(1), &road, &ModelParams::replay(), 100.0).unwrap();
    assert_eq!(trace.len(), 1);
    assert!(trace[0].1.probabilities().iter().all(|p| *p == 1.0 / 22.0));
}

#[test]
fn constant_speed_cruising_favors_effort_over_headway() {
    let road = RoadGeometry::default();
    let y1 = road.lane_center(1);
    let tracks = vec![
        cruise_track(1, 0.0, y1, 25.0, 301, 25.0, &road),
        cruise_track(2, 50.0, y1, 25.0, 301, 25.0, &road),
        cruise_track(3, -20.0, road.lane_center(2), 25.0, 301, 25.0, &road),
    ];
    let rec = TrajectoryRecord::new("cruise", 25.0, tracks).unwrap();
    let trace = infer_track(&rec, VehicleId(1), &road, &ModelParams::replay(), 100.0).unwrap();
    let last = &trace[trace.len() - 1].1;
    for sigma in [SocialOrientation::Prosocial, SocialOrientation::Egoistic, SocialOrientation::Competitive] {
        let e = cell_index(sigma, &w([0.0, 0.0, 1.0])).unwrap();
        let h = cell_index(sigma, &w([1.0, 0.0, 0.0])).unwrap();
        assert!(last.get(e) > last.get(h), "{sigma:?}: {} vs {}", last.get(e), last.get(h));
    }
}

#[test]
fn closed_loop_track_is_recovered() {
    let params = ModelParams::replay();
    let road = params.road.clone();
    let dt = params.kinematics.dt;
    let target = w([0.0, 0.0, 1.0]);
    let mut states = [
        VehicleState::new(10.0, road.lane_center(0), 24.0),
        VehicleState::new(30.0, road.lane_center(1), 22.0),
    ];
    let mut paths = vec![vec![states[0]], vec![states[1]]];
    for k in 0..6 {
        let entries = states
            .iter()
            .enumerate()
            .map(|(i, s)| VehicleEntry {
                id: VehicleId(i as u32 + 1),
                state: *s,
                merging: i == 0,
            })
            .collect();
        let snap = TrafficSnapshot::new(k, entries, &road, 100.0).unwrap();
        let values = InteractionValues::for_vehicle(&snap, VehicleId(1), &params, &params.behavior).unwrap();
        let a = values.action_values(SocialOrientation::Egoistic, &target).argmax();
        states[0] = step(&states[0], a, &road, &params.kinematics, [0.0; 3]);
        states[1] = step(&states[1], DriverAction::Maintain, &road, &params.kinematics, [0.0; 3]);
        paths[0].push(states[0]);
        paths[1].push(states[1]);
    }
    let tracks = paths
        .iter()
        .enumerate()
        .map(|(i, path)| Track {
            id: VehicleId(i as u32 + 1),
            points: upsample(path, dt, 25.0)
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
    let rec = TrajectoryRecord::new("closed_loop", 25.0, tracks).unwrap();
    let trace = infer_track(&rec, VehicleId(1), &road, &params, 100.0).unwrap();
    assert_eq!(trace.len(), 7);
    let idx = cell_index(SocialOrientation::Egoistic, &target).unwrap();
    let last = &trace[trace.len() - 1].1;
    assert!(last.rank(idx) <= 3, "rank {} of {}", last.rank(idx), intent_grid()[idx].label());
}

#[test]
fn reproduced_truck_merges() {
    let data = generate(&GeneratorConfig::default()).unwrap();
    let ep = &extract_merge_episodes(&data.record, &data.road)[0];
    let result = reproduce(
        &data.record,
        ep.target,
        SocialOrientation::Egoistic,
        &w([0.0, 2.0 / 3.0, 1.0 / 3.0]),
        &data.road,
        &ModelParams::replay(),
        100.0,
    )
    .unwrap();
    let last = result.final_virtual();
    assert_eq!(data.road.lane_index(last.y), 1);
    assert_eq!(result.collisions, 0);
    assert!(result.rows.iter().all(|r| r.actual_state.is_some()));
}

#[test]
fn reproduced_fast_vehicle_overtakes() {
    let data = generate(&GeneratorConfig::slow_leaders()).unwrap();
    let result = reproduce(
        &data.record,
        VehicleId(1),
        SocialOrientation::Competitive,
        &w([0.0, 1.0, 0.0]),
        &data.road,
        &ModelParams::replay(),
        100.0,
    )
    .unwrap();
    let start = result.rows[0].virtual_state;
    let last = result.final_virtual();
    assert!(data.road.lane_index(last.y) > data.road.lane_index(start.y));
    let frame = data.record.frame_after(0, result.rows[result.rows.len() - 1].time);
    for id in 2..=4 {
        let leader = data.record.track(VehicleId(id)).unwrap();
        let ahead = leader.at(frame).map_or(leader.last().x, |p| p.x);
        assert!(last.x > ahead, "leader {id} at {ahead}, virtual at {}", last.x);
    }
}

#[test]
fn reproduced_lone_cruiser_holds_lane_and_speed() {
    let road = RoadGeometry::default();
    let y1 = road.lane_center(1);
    let rec = TrajectoryRecord::new("lone", 25.0, vec![cruise_track(1, 0.0, y1, 25.0, 201, 25.0, &road)]).unwrap();
    let result = reproduce(
        &rec,
        VehicleId(1),
        SocialOrientation::Egoistic,
        &w([0.0, 0.0, 1.0]),
        &road,
        &ModelParams::replay(),
        100.0,
    )
    .unwrap();
    for r in &result.rows {
        assert_eq!(r.virtual_state.y, y1);
        assert_eq!(r.virtual_state.v_x, 25.0);
    }
    assert!(result.final_deviation < 1e-9);
}

#[test]
fn written_files_load_back() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(&GeneratorConfig::default()).unwrap();
    let path = dir.path().join("synthetic.csv");
    write_record(&data.record, std::fs::File::create(&path).unwrap()).unwrap();
    let back = load(&path).unwrap();
    assert_eq!(back.tracks, data.record.tracks);
    let again = read_record(std::fs::File::open(&path).unwrap(), "synthetic", 25.0).unwrap();
    assert_eq!(again, back);

    std::fs::write(road_sidecar(&path), serde_json::to_vec(&data.road).unwrap()).unwrap();
    assert_eq!(road_for(&path, &back).unwrap(), data.road);
}
