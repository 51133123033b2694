//! Whole runs: determinism, replay, the graph audit and scripted scenarios.

use std::io::Cursor;

use sb2g_core::geometry::{Cov2, Vec2};
use sb2g_core::graph::{BehaviorKind, TriggerFamily};
use sb2g_core::sim::grid::OccupancyGrid;
use sb2g_core::sim::scenario::{ObjectPlacement, Pose};
use sb2g_core::sim::trace::{TraceEvent, TraceRecord};
use sb2g_core::sim::world::WorldEvent;
use sb2g_core::types::{AffordanceStatus, LabelId, ObjectBelief};
use sb2g_core::{replay, run, Agent, Method, Simulation, Trace, WorldScenario};

fn office(budget: f64) -> WorldScenario {
    let mut s = WorldScenario::bundled("office-small").unwrap();
    s.budget = budget;
    s
}

fn traced(s: &WorldScenario, m: Method, seed: u64) -> (Trace, String) {
    let mut buf = Vec::new();
    let out = run(s, m, seed, &mut buf).unwrap();
    (Trace::read(Cursor::new(&buf)).unwrap(), out.hash)
}

fn transitions(t: &Trace) -> Vec<(u64, sb2g_core::graph::Transition)> {
    t.events()
        .filter_map(|e| match &e.event {
            TraceEvent::Transition(tr) => Some((e.tick, tr.clone())),
            _ => None,
        })
        .collect()
}

/// One open room with a single object in front of the robot and a sensor
/// that almost never errs.
fn one_object_room(object: Vec2<f64>, facing: f64) -> WorldScenario {
    let mut s = office(90.0);
    s.name = "one-object".into();
    s.floors = vec![OccupancyGrid::walled_room(0.25, 12.0, 8.0)];
    s.objects = vec![ObjectPlacement {
        id: 1,
        label: "fire-extinguisher".into(),
        position: object,
        orientation: facing,
        floor: 0,
        detection: None,
    }];
    s.start = Pose {
        position: Vec2::new(2.0, 4.0),
        heading: 0.0,
        floor: 0,
    };
    s.sensor.noise.position.distance = 0.005;
    s.sensor.noise.position.bearing = 0.005;
    s.sensor.noise.position.label = 0.01;
    s.sensor.noise.orientation.distance = 0.005;
    s.sensor.noise.orientation.bearing = 0.005;
    s.sensor.noise.orientation.label = 0.005;
    // the background row reports as a fire extinguisher; no object here is background
    let n = s.sensor.noise.confusion.rows.len();
    for (i, row) in s.sensor.noise.confusion.rows.iter_mut().enumerate() {
        for (j, c) in row.iter_mut().enumerate() {
            let hit = if i == n - 1 { j == 0 } else { i == j };
            *c = if hit { 1.0 } else { 0.0 };
        }
    }
    s.validate().unwrap();
    s
}

#[test]
fn same_seed_same_bytes() {
    let s = office(120.0);
    for m in Method::ALL {
        let (_, a) = traced(&s, m, 4);
        let (_, b) = traced(&s, m, 4);
        assert_eq!(a, b, "{m}");
    }
    let (_, other) = traced(&s, Method::Sb2g, 5);
    assert_ne!(traced(&s, Method::Sb2g, 4).1, other);
}

#[test]
fn every_method_replays_bit_exact_and_audits_clean() {
    let two = WorldScenario::bundled("two-floor").unwrap();
    for (s, seed) in [(office(150.0), 2), (two, 3)] {
        for m in Method::ALL {
            let (trace, hash) = traced(&s, m, seed);
            let r = replay(&trace).unwrap();
            assert_eq!(r.original_hash, hash);
            assert!(
                r.identical(),
                "{m} on {}: first mismatch at line {:?}",
                s.name,
                r.first_mismatch
            );
            assert!(r.violations.is_empty(), "{m}: {:?}", r.violations);
        }
    }
}

#[test]
fn audit_flags_forged_and_missing_transitions() {
    let (trace, _) = traced(&office(60.0), Method::Sb2g, 1);
    let first = trace
        .records
        .iter()
        .position(
            |r| matches!(r, TraceRecord::Event(e) if matches!(e.event, TraceEvent::Transition(_))),
        )
        .expect("the run makes at least one transition");

    // dropped: the node changes with no transition behind it
    let mut dropped = trace.clone();
    dropped.records.remove(first);
    let r = replay(&dropped).unwrap();
    assert!(
        r.violations
            .iter()
            .any(|v| v.message.contains("without a transition")),
        "{:?}",
        r.violations
    );

    // retargeted at an object the robot has never seen: predicate cannot hold
    let mut forged = trace.clone();
    if let TraceRecord::Event(e) = &mut forged.records[first] {
        if let TraceEvent::Transition(t) = &mut e.event {
            t.target = 999;
        }
    }
    let r = replay(&forged).unwrap();
    assert!(
        r.violations
            .iter()
            .any(|v| v.message.contains("does not hold")),
        "{:?}",
        r.violations
    );

    // an edge the graph does not have
    let mut bogus = trace.clone();
    if let TraceRecord::Event(e) = &mut bogus.records[first] {
        if let TraceEvent::Transition(t) = &mut e.event {
            t.edge = 999;
        }
    }
    let r = replay(&bogus).unwrap();
    assert!(
        r.violations
            .iter()
            .any(|v| v.message.contains("not an edge")),
        "{:?}",
        r.violations
    );
}

#[test]
fn object_ahead_is_searched_inspected_then_coverage_resumes() {
    let mut s = one_object_room(Vec2::new(5.0, 4.0), std::f64::consts::PI);
    // a second task behind the robot keeps the run alive past the first inspection
    let mut far = s.objects[0].clone();
    far.id = 2;
    far.position = Vec2::new(1.0, 7.0);
    s.objects.push(far);
    let (trace, _) = traced(&s, Method::Sb2g, 1);
    let path: Vec<(BehaviorKind, BehaviorKind)> = transitions(&trace)
        .iter()
        .map(|(_, t)| (t.from, t.to))
        .collect();
    let fe = LabelId(0);
    assert!(path.len() >= 3, "{path:?}");
    assert_eq!(
        path[..3],
        vec![
            (
                BehaviorKind::GeometricCoverage,
                BehaviorKind::ActiveSearch { label: fe }
            ),
            (
                BehaviorKind::ActiveSearch { label: fe },
                BehaviorKind::Inspect { label: fe }
            ),
            (
                BehaviorKind::Inspect { label: fe },
                BehaviorKind::GeometricCoverage
            ),
        ]
    );
    let first: Vec<_> = transitions(&trace)
        .iter()
        .take(3)
        .map(|(_, t)| t.target)
        .collect();
    assert_eq!(first, vec![1, 1, 1]);
    let end = trace.summary().unwrap();
    assert!(end.inspected >= 1);
    assert_eq!(end.collisions, 0);
}

#[test]
fn phantom_track_is_dismissed_after_misses() {
    // the real object is out of the way; the robot believes in one that is not there
    let s = one_object_room(Vec2::new(11.0, 7.0), 0.0);
    let mut sim = Simulation::new(&s, 7).unwrap();
    let mut agent = Agent::new(Method::Sb2g.graph(&s), &sim).unwrap();
    let phantom = 42;
    sim.belief.objects.insert(
        phantom,
        ObjectBelief {
            id: phantom,
            mean: Vec2::new(7.0, 2.5),
            cov: Cov2::isotropic(0.6),
            heading_mean: 0.0,
            heading_var: 0.3,
            labels: vec![0.93, 0.03, 0.02, 0.02],
            status: AffordanceStatus::ToBeInspected,
            floor: 0,
            last_miss_update: None,
        },
    );
    let mut seen = Vec::new();
    while sim.time() < 90.0 {
        let step = agent.act(&mut sim);
        for e in &step.events {
            if let TraceEvent::Transition(t) = e {
                seen.push((sim.time(), t.clone()));
            }
        }
        if seen.iter().any(|(_, t)| t.family == TriggerFamily::Absent) {
            break;
        }
        let out = sim.advance(&step.control);
        agent.observe(&out.world);
    }
    let engaged = seen
        .iter()
        .find(|(_, t)| t.target == phantom)
        .expect("search engaged the phantom");
    assert_eq!(
        engaged.1.to,
        BehaviorKind::ActiveSearch { label: LabelId(0) }
    );
    let (at, gone) = seen
        .iter()
        .find(|(_, t)| t.family == TriggerFamily::Absent)
        .expect("search gave up within 90 s");
    assert_eq!(gone.target, phantom);
    assert_eq!(gone.to, BehaviorKind::GeometricCoverage);
    assert!(gone.evidence.label_probability < 0.2);
    assert!(*at <= 90.0);
    assert_eq!(
        sim.belief.object(phantom).unwrap().status,
        AffordanceStatus::Dismissed
    );
}

#[test]
fn stairs_are_climbed_and_the_upper_floor_searched() {
    let s = WorldScenario::bundled("two-floor").unwrap();
    let (trace, _) = traced(&s, Method::Sb2g, 1);
    let ascended: Vec<_> = trace
        .events()
        .filter(|e| matches!(e.event, TraceEvent::World(WorldEvent::Ascended { .. })))
        .collect();
    assert_eq!(ascended.len(), 1);
    let gaits: Vec<_> = trace
        .events()
        .filter_map(|e| match &e.event {
            TraceEvent::World(WorldEvent::GaitChanged { mode }) => Some(*mode),
            _ => None,
        })
        .collect();
    assert_eq!(
        gaits.first().copied(),
        Some(sb2g_core::types::Gait::StairGait)
    );
    assert_eq!(gaits.last().copied(), Some(sb2g_core::types::Gait::Walk));
    let last = trace.ticks().last().unwrap();
    assert_eq!(last.robot.floor, 1);
    let end = trace.summary().unwrap();
    assert!(end.completed >= 3, "completed {}", end.completed);
    // a walker that never climbs sees nothing upstairs
    let (cov, _) = traced(&s, Method::CoverageOnly, 1);
    assert!(cov.ticks().all(|t| t.robot.floor == 0));
}

#[test]
fn coverage_only_never_completes_a_task() {
    let (trace, _) = traced(&office(300.0), Method::CoverageOnly, 2);
    assert!(trace.ticks().all(|t| t.inspected == 0 && t.completed == 0));
    assert!(transitions(&trace).is_empty());
}
