use trimatch_core::calibration::nearest_edge_record;
use trimatch_core::geometry::{LocalProjection, Point, bearing_inclination, direction_deg};
use trimatch_core::history::{HistoryStore, MatchRecord};
use trimatch_core::matcher::{FleetState, FusionMatcher, MatchConfig, match_all, match_fleet, read_matches_csv, write_matches};
use trimatch_core::network::{EdgeId, LinkRecord, NodeRecord, RoadNetwork};
use trimatch_core::scoring::{FusionWeights, ScoreSet};
use trimatch_core::synth::{FleetSpec, GridSpec, generate_synthetic, grid_free_flow, grid_network};
use trimatch_core::traffic::{Predictor, TrafficLog};
use trimatch_core::trajectory::{Probe, Trajectory};

const T0: f64 = 30_000.0;

/// Network from planar coordinates (metres) with optional fixed link lengths.
fn planar(points: &[(f64, f64)], links: &[(usize, usize, Option<f64>)]) -> RoadNetwork {
    let proj = LocalProjection::new(117.0, 24.0);
    let nodes: Vec<NodeRecord> = points
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| {
            let (lon, lat) = proj.unproject(Point::new(x, y));
            NodeRecord { node_id: i as i64, lon, lat }
        })
        .collect();
    let links: Vec<LinkRecord> = links
        .iter()
        .enumerate()
        .map(|(i, &(a, b, len))| LinkRecord {
            link_id: i as i64,
            from_node: a as i64,
            to_node: b as i64,
            length_m: len,
            bearing_deg: None,
        })
        .collect();
    RoadNetwork::load(&nodes, &links, 50.0).unwrap()
}

/// Probe at planar position `(x, y)` in the frame used by [`planar`].
fn probe(t: f64, (x, y): (f64, f64), speed: f64, bearing: f64) -> Probe {
    let (lon, lat) = LocalProjection::new(117.0, 24.0).unproject(Point::new(x, y));
    Probe { t, speed, bearing, lon, lat }
}

/// Diamond with two equally long branches. Links:
/// 0: west approach, 1-2: southern branch, 3-4: northern branch, 5: east exit.
fn diamond() -> RoadNetwork {
    let pts = [(-200.0, 0.0), (200.0, 0.0), (300.0, 100.0), (400.0, 0.0), (300.0, -100.0), (800.0, 0.0)];
    let d = Some(141.0);
    planar(&pts, &[(0, 1, Some(400.0)), (1, 4, d), (4, 3, d), (1, 2, d), (2, 3, d), (3, 5, Some(400.0))])
}

fn links_of(net: &RoadNetwork, path: &[EdgeId]) -> Vec<usize> {
    let mut l: Vec<usize> = path.iter().map(|&e| net.edge(e).link).collect();
    l.dedup();
    l
}

fn match_one(m: &FusionMatcher, tr: &Trajectory) -> MatchRecord {
    m.match_with(tr, |_, _, _| {}).unwrap().record
}

fn cold_matcher<'a>(net: &'a RoadNetwork, cfg: &'a MatchConfig, h: &'a HistoryStore, t: &'a TrafficLog) -> FusionMatcher<'a> {
    FusionMatcher { net, cfg, history: h, traffic: t, predictor: None }
}

#[test]
fn stopped_vehicle_stays_on_its_edge() {
    let net = diamond();
    let cfg = MatchConfig::default();
    let (h, t) = (HistoryStore::new(), TrafficLog::new(net.links.len(), 300.0));
    let tr = Trajectory::new("s", "s", vec![probe(T0, (0.0, 2.0), 0.0, 0.0), probe(T0 + 60.0, (0.0, 2.0), 0.0, 0.0)]).unwrap();
    let out = match_one(&cold_matcher(&net, &cfg, &h, &t), &tr);
    let p = &out.probes[1];
    let e = p.edge.unwrap();
    assert_eq!(p.path.as_deref(), Some(&[e][..]));
    assert_eq!(out.probes[0].edge, Some(e));
}

#[test]
fn two_probes_make_one_segment() {
    let net = diamond();
    let cfg = MatchConfig::default();
    let (h, t) = (HistoryStore::new(), TrafficLog::new(net.links.len(), 300.0));
    let tr = Trajectory::new("s", "s", vec![probe(T0, (0.0, 0.0), 10.0, 0.0), probe(T0 + 60.0, (600.0, 0.0), 10.0, 0.0)]).unwrap();
    let mut segments = Vec::new();
    cold_matcher(&net, &cfg, &h, &t).match_with(&tr, |i, j, _| segments.push((i, j))).unwrap();
    assert_eq!(segments, vec![(0, 1)]);
}

#[test]
fn empty_region_start_recovers_at_next_probe() {
    let net = diamond();
    let cfg = MatchConfig::default();
    let (h, t) = (HistoryStore::new(), TrafficLog::new(net.links.len(), 300.0));
    let tr = Trajectory::new(
        "e",
        "e",
        vec![
            probe(T0, (0.0, 1500.0), 8.0, 0.0),
            probe(T0 + 60.0, (-100.0, 0.0), 8.0, 0.0),
            probe(T0 + 120.0, (100.0, 0.0), 8.0, 0.0),
        ],
    )
    .unwrap();
    let r = match_one(&cold_matcher(&net, &cfg, &h, &t), &tr);
    assert!(r.probes[0].edge.is_none());
    assert_eq!(r.probes[1].edge.map(|e| net.edge(e).link), Some(0));
    assert_eq!(r.probes[2].edge.map(|e| net.edge(e).link), Some(0));
    assert!(r.probes[2].path.is_some());
    r.validate(&net).unwrap();
}

#[test]
fn gap_is_reported_not_interpolated() {
    let net = diamond();
    let cfg = MatchConfig::default();
    let (h, t) = (HistoryStore::new(), TrafficLog::new(net.links.len(), 300.0));
    let tr = Trajectory::new(
        "g",
        "g",
        vec![
            probe(T0, (-150.0, 0.0), 5.0, 0.0),
            probe(T0 + 60.0, (0.0, 2000.0), 5.0, 0.0),
            probe(T0 + 120.0, (0.0, 0.0), 5.0, 0.0),
            probe(T0 + 180.0, (150.0, 0.0), 5.0, 0.0),
        ],
    )
    .unwrap();
    let r = match_one(&cold_matcher(&net, &cfg, &h, &t), &tr);
    assert!(r.probes[0].edge.is_none());
    assert!(r.probes[1].edge.is_none());
    assert!(r.probes[2].edge.is_some() && r.probes[2].path.is_none());
    let last = r.probes[3].path.as_ref().unwrap();
    assert_eq!(last.first().copied(), r.probes[2].edge);
}

/// Point at distance `s` along a polyline.
fn along(poly: &[(f64, f64)], mut s: f64) -> ((f64, f64), f64) {
    for w in poly.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
        let dir = direction_deg(Point::new(a.0, a.1), Point::new(b.0, b.1));
        if s <= len {
            let f = s / len;
            return ((a.0 + f * (b.0 - a.0), a.1 + f * (b.1 - a.1)), dir);
        }
        s -= len;
    }
    unreachable!("beyond the polyline")
}

#[test]
fn history_breaks_a_kinematic_tie() {
    let net = diamond();
    let north = [(0.0, 0.0), (200.0, 0.0), (300.0, 100.0), (400.0, 0.0), (600.0, 0.0)];
    let speed = 682.0 / 60.0;
    // another vehicle drove the northern branch at the same time the day before
    let dense: Vec<Probe> = (0..=12)
        .map(|i| {
            let s = (i as f64 * 5.0 * speed).min(682.0 - 1e-6);
            let (p, dir) = along(&north, s);
            probe(T0 - 86_400.0 + i as f64 * 5.0, p, speed, dir)
        })
        .collect();
    let past = Trajectory::new("w-0", "w", dense).unwrap();
    let ego = Trajectory::new(
        "v-0",
        "v",
        vec![probe(T0, (0.0, 0.0), speed, 0.0), probe(T0 + 60.0, (600.0, 0.0), speed, 0.0)],
    )
    .unwrap();

    let chosen = |wc: f64| -> Vec<usize> {
        let cfg = MatchConfig {
            scores: ScoreSet::PC,
            weights: FusionWeights::new(1.0 - wc, wc, 0.0).unwrap(),
            ..MatchConfig::default()
        };
        let mut state = FleetState::new(&net, &cfg);
        let record = nearest_edge_record(&past, &net, cfg.radius);
        state.absorb(&net, &past, &record).unwrap();
        let m = FusionMatcher {
            net: &net,
            cfg: &cfg,
            history: &state.history,
            traffic: &state.traffic,
            predictor: None,
        };
        let r = match_one(&m, &ego);
        links_of(&net, r.probes[1].path.as_ref().unwrap())
    };
    // equal kinematics: the tie goes to the smaller edge ids (southern branch)
    assert_eq!(chosen(0.0), vec![0, 1, 2, 5]);
    assert_eq!(chosen(0.5), vec![0, 3, 4, 5]);
}

fn small_fleet(seed: u64, sigma: f64) -> (RoadNetwork, Vec<Trajectory>) {
    let grid = GridSpec { rows: 5, cols: 5, ..GridSpec::default() };
    let net = grid_network(&grid, 50.0).unwrap();
    let spec = FleetSpec {
        vehicles: 25,
        days: 2,
        seed,
        interval: 60.0,
        gps_sigma: sigma,
        min_trip_m: 800.0,
        ..FleetSpec::default()
    };
    let fleet = generate_synthetic(&net, &grid_free_flow(&net, &grid), &spec).unwrap();
    (net, fleet.trajectories())
}

fn run_fleet(net: &RoadNetwork, trs: &[Trajectory]) -> Vec<MatchRecord> {
    let cfg = MatchConfig::default();
    let mut state = FleetState::new(net, &cfg);
    let predictor = Predictor::naive(&cfg.traffic);
    match_fleet(net, &cfg, trs, &mut state, Some(&predictor))
        .unwrap()
        .into_iter()
        .map(|o| o.record)
        .collect()
}

#[test]
fn fleet_runs_are_deterministic() {
    let (net, trs) = small_fleet(4, 5.0);
    let a = run_fleet(&net, &trs);
    let b = run_fleet(&net, &trs);
    assert_eq!(a, b);
    let (mut x, mut y) = (Vec::new(), Vec::new());
    write_matches(&mut x, &net, &a).unwrap();
    write_matches(&mut y, &net, &b).unwrap();
    assert_eq!(x, y);
}

#[test]
fn fleet_invariants_hold() {
    let (net, trs) = small_fleet(5, 8.0);
    let records = run_fleet(&net, &trs);
    assert_eq!(records.len(), trs.len());
    let mut matched = 0;
    for (r, tr) in records.iter().zip(&trs) {
        assert_eq!(r.trajectory_id, tr.id);
        r.validate(&net).unwrap();
        for (i, pm) in r.probes.iter().enumerate() {
            let Some(e) = pm.edge else { continue };
            matched += 1;
            let link = &net.links[net.edge(e).link];
            assert!(bearing_inclination(tr.probes[i].bearing, link.bearing) < 90.0);
            if let Some(path) = &pm.path {
                // one carried edge: the segment starts where the previous probe was matched
                assert_eq!(path.first().copied(), r.probes[i - 1].edge);
                assert_eq!(path.last().copied(), Some(e));
            }
        }
    }
    assert!(matched > 0);
}

#[test]
fn match_csv_round_trip() {
    let (net, trs) = small_fleet(6, 5.0);
    let cfg = MatchConfig::default();
    let (h, t) = (HistoryStore::new(), TrafficLog::new(net.links.len(), 300.0));
    let records: Vec<MatchRecord> = match_all(&cold_matcher(&net, &cfg, &h, &t), &trs)
        .unwrap()
        .into_iter()
        .map(|o| o.record)
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    let mut bytes = Vec::new();
    write_matches(&mut bytes, &net, &records).unwrap();
    std::fs::write(&path, &bytes).unwrap();
    let text = String::from_utf8(bytes).unwrap();
    assert!(text.starts_with("trajectory_id,probe_idx,timestamp,link_id,edge_idx,matched,path_edges\n"));
    let back = read_matches_csv(&path, &net).unwrap();
    assert_eq!(back.len(), records.len());
    for (a, b) in records.iter().zip(&back) {
        assert_eq!(a.trajectory_id, b.trajectory_id);
        assert_eq!(a.probes.len(), b.probes.len());
        for (p, q) in a.probes.iter().zip(&b.probes) {
            assert_eq!((p.timestamp, p.edge, &p.path), (q.timestamp, q.edge, &q.path));
        }
    }
}
