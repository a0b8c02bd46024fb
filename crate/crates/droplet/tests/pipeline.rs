use std::fs;
use std::sync::Arc;

use droplet::contour;
use droplet::experiments::{run, write_bundle, ExperimentConfig, ExperimentKind, KappaSource, Outcome};
use droplet::lattice::{BoundaryCondition, Config, Region};
use droplet::mc::droplet::{droplet_experiment, ChainBudget, DropletGeometry};
use droplet::mc::{Chain, Checkpoint};
use droplet::snapshot;
use droplet::theory;

fn strip_clock(mut v: serde_json::Value) -> serde_json::Value {
    v["manifest"]["wall_clock_seconds"] = serde_json::Value::Null;
    v
}

#[test]
fn thread_count_does_not_change_chains() {
    let phase = theory::onsager_phase_data(3.0, 0.004).unwrap();
    let geom = DropletGeometry::new(&phase, 24, 1.5).unwrap();
    let budget = ChainBudget { chains: 3, samples_per_chain: 4, thermalize_sweeps: 50, thin_sweeps: 5, swap_mix: 0.5 };
    let in_pool = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| droplet_experiment(&geom, &phase, 0.15, 0.9, &budget, 5).unwrap())
    };
    assert_eq!(in_pool(1), in_pool(3));
}

#[test]
fn checkpoint_round_trips_through_text() {
    let region = Arc::new(Region::square(8).unwrap());
    let mut a = Chain::grand(Config::empty(region.clone()), BoundaryCondition::Vacant, 2.0, -2.0, 17, 0).unwrap();
    a.sweeps(30);
    let text = a.checkpoint().to_json();
    let mut b = Chain::restore(&Checkpoint::parse(&text).unwrap()).unwrap();
    assert_eq!(b.region().len(), region.len());
    a.sweeps(25);
    b.sweeps(25);
    assert_eq!(a.occupancy(), b.occupancy());
    assert_eq!(a.steps(), b.steps());
}

#[test]
fn snapshot_and_contour_dump_round_trip() {
    let text = "lattice-gas 1\n5 4 vacant\n01100\n01110\n00000\n10001\n";
    let (cfg, bc) = snapshot::parse(text).unwrap();
    assert_eq!(bc, BoundaryCondition::Vacant);
    assert_eq!(snapshot::write(&cfg, &bc).unwrap(), text);
    let cs = contour::contours_of(&cfg);
    assert_eq!(cs.len(), 3);
    let dump = contour::parse_dump(&contour::write_dump(&cs)).unwrap();
    assert_eq!(dump.contours.len(), 3);
    assert_eq!(dump.contours.iter().map(|c| c.interior_size).sum::<usize>(), 7);
}

#[test]
fn rerunning_a_config_reproduces_the_numbers() {
    let mut cfg = ExperimentConfig::new(ExperimentKind::McDroplet);
    cfg.geometry.l = 20;
    cfg.kappa = KappaSource::Value { kappa: 0.004 };
    cfg.droplet.k_log = Some(0.9);
    cfg.budget = ChainBudget { chains: 2, samples_per_chain: 3, thermalize_sweeps: 20, thin_sweeps: 5, swap_mix: 0.5 };
    let a = strip_clock(serde_json::to_value(run(&cfg).unwrap()).unwrap());
    let b = strip_clock(serde_json::to_value(run(&cfg).unwrap()).unwrap());
    assert_eq!(a, b);
}

#[test]
fn every_output_file_carries_the_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig { beta: 1.0, ..ExperimentConfig::new(ExperimentKind::Oracle) };
    let out = run(&cfg).unwrap();
    assert!(matches!(out.outcome, Outcome::Oracle(_)));
    let files = write_bundle(&out, dir.path()).unwrap();
    assert_eq!(files.len(), 3);
    for f in files {
        assert!(fs::read_to_string(&f).unwrap().contains(&cfg.hash()), "{}", f.display());
    }
}
