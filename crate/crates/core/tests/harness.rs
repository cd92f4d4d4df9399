use std::io::Write;

use ldp_trajstream::allocation::{AllocationParams, Division, Strategy};
use ldp_trajstream::eval::jsd_counts;
use ldp_trajstream::grid::BoundingBox;
use ldp_trajstream::harness::output::{synthetic_records, write_all, SYNTHETIC_FILE};
use ldp_trajstream::harness::{
    generate, ingest, load_streams, run, run_on, DriftSpec, GeneratorSpec, InputSource, RunConfig,
    Simulation, StreamSet,
};

fn csv_file(body: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    write!(f, "user_id,timestamp,x,y\n{body}").unwrap();
    f
}

fn unit_box(side: f64) -> Option<BoundingBox> {
    Some(BoundingBox::new(0.0, 0.0, side, side).unwrap())
}

fn spans(set: &StreamSet) -> Vec<(u32, u32)> {
    set.streams.iter().map(|s| (s.start, s.end())).collect()
}

fn generated(spec: GeneratorSpec, seed: u64) -> RunConfig {
    RunConfig {
        input: InputSource::Generator(spec),
        seed,
        ..Default::default()
    }
}

#[test]
fn ingest_splits_gaps_and_jumps() {
    let f = csv_file("a,1,0.5,0.5\na,2,1.5,0.5\na,3,1.5,1.5\n");
    assert_eq!(
        spans(&ingest(f.path(), 6, unit_box(6.0)).unwrap()),
        [(1, 3)]
    );

    let f = csv_file("a,1,0.5,0.5\na,2,0.5,0.5\na,5,0.5,0.5\na,6,0.5,0.5\n");
    assert_eq!(
        spans(&ingest(f.path(), 6, unit_box(6.0)).unwrap()),
        [(1, 2), (5, 6)]
    );

    // Chebyshev distance 3 between ticks 2 and 3
    let f = csv_file("a,1,0.5,0.5\na,2,0.5,0.5\na,3,3.5,0.5\na,4,4.5,0.5\n");
    let set = ingest(f.path(), 6, unit_box(6.0)).unwrap();
    assert_eq!(spans(&set), [(1, 2), (3, 4)]);
    assert_eq!(set.users.len(), 1);
}

#[test]
fn generator_without_churn_keeps_population() {
    let spec = GeneratorSpec {
        initial_users: 120,
        arrivals_per_tick: 0,
        quit_prob: 0.0,
        destination_quit_prob: 0.0,
        ticks: 30,
        ..Default::default()
    };
    let set = load_streams(&generated(spec.clone(), 2)).unwrap();
    assert!(set.active_counts().iter().all(|&n| n == 120));
    assert_eq!(generate(&spec, 2).unwrap(), generate(&spec, 2).unwrap());
    assert_ne!(generate(&spec, 2).unwrap(), generate(&spec, 3).unwrap());
}

fn move_counts(set: &StreamSet, ticks: std::ops::Range<u32>) -> Vec<f64> {
    let n = set.grid.num_cells();
    let mut counts = vec![0.0; n * n];
    for s in &set.streams {
        for (i, pair) in s.cells.windows(2).enumerate() {
            if ticks.contains(&(s.start + i as u32 + 1)) {
                counts[set.grid.index(pair[0]) * n + set.grid.index(pair[1])] += 1.0;
            }
        }
    }
    counts
}

#[test]
fn drift_changes_transition_distribution() {
    let base = GeneratorSpec {
        initial_users: 2000,
        arrivals_per_tick: 100,
        ticks: 100,
        ..Default::default()
    };
    let drifted = GeneratorSpec {
        drift: Some(DriftSpec {
            tick: 50,
            hotspots: vec![[4, 1], [2, 2], [5, 5]],
            entry_cells: vec![[0, 0], [3, 5]],
        }),
        ..base.clone()
    };
    let split = |spec: GeneratorSpec| {
        let set = load_streams(&generated(spec, 9)).unwrap();
        jsd_counts(&move_counts(&set, 25..50), &move_counts(&set, 75..100)).unwrap()
    };
    let (steady, shifted) = (split(base), split(drifted));
    assert!(shifted > 0.1, "drifted {shifted}");
    assert!(steady < shifted, "steady {steady} vs drifted {shifted}");
}

#[test]
fn near_noiseless_run_tracks_density() {
    let spec = GeneratorSpec {
        initial_users: 3000,
        arrivals_per_tick: 150,
        ticks: 60,
        ..Default::default()
    };
    let cfg = RunConfig {
        // budget division so every active user reports each tick; population
        // division would add the error of sampling 1/w of them
        epsilon: 1000.0,
        allocation: AllocationParams {
            strategy: Strategy::Uniform,
            division: Division::Budget,
            ..Default::default()
        },
        ..generated(spec, 5)
    };
    let out = run(&cfg).unwrap();
    assert!(
        out.report.density_error < 0.05,
        "{}",
        out.report.density_error
    );
}

#[test]
fn unit_window_gives_every_tick_full_budget() {
    let cfg = RunConfig {
        epsilon: 0.7,
        w: 1,
        allocation: AllocationParams {
            strategy: Strategy::Uniform,
            division: Division::Budget,
            ..Default::default()
        },
        ..generated(
            GeneratorSpec {
                initial_users: 100,
                ticks: 25,
                ..Default::default()
            },
            1,
        )
    };
    let streams = load_streams(&cfg).unwrap();
    let mut sim = Simulation::new(&cfg, &streams).unwrap();
    let mut n = 0;
    while let Some(out) = sim.step().unwrap() {
        assert_eq!(out.decision.eps_t, 0.7);
        n += 1;
    }
    assert_eq!(n, 25);
}

#[test]
fn same_config_same_report() {
    let cfg = generated(
        GeneratorSpec {
            initial_users: 300,
            ticks: 40,
            ..Default::default()
        },
        8,
    );
    let streams = load_streams(&cfg).unwrap();
    let a = run_on(&cfg, &streams).unwrap();
    let b = run(&cfg).unwrap();
    assert_eq!(a.report, b.report);
    assert_eq!(a.ticks, b.ticks);
}

#[test]
fn synthetic_csv_reingests_with_legal_transitions() {
    let cfg = generated(
        GeneratorSpec {
            initial_users: 400,
            ticks: 40,
            ..Default::default()
        },
        6,
    );
    let out = run(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_all(dir.path(), &out).unwrap();
    let grid = out.synthetic.grid;
    let set = ingest(&dir.path().join(SYNTHETIC_FILE), grid.k, Some(grid.bbox)).unwrap();
    // no trajectory needed a split, so every consecutive pair was already legal
    assert_eq!(set.streams.len(), out.synthetic.trajectories.len());
    assert_eq!(set.users.len(), out.synthetic.trajectories.len());
    for s in &set.streams {
        assert!(s.cells.windows(2).all(|p| p[0].is_adjacent(p[1])));
    }
    let points: usize = set.streams.iter().map(|s| s.cells.len()).sum();
    assert_eq!(points, synthetic_records(&out.synthetic).len());
}
