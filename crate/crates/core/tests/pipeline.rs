//! End-to-end paths through the public API.

use sle_core::drivers::sample_chordal_driver;
use sle_core::experiment::{emit_plot_data, run_experiment, PlotFormat, Table};
use sle_core::lattice::loop_erase;
use sle_core::loewner::{reverse_trace, StepKind};
use sle_core::{Complex64, ExperimentConfig, HullSpec, ResultRecord, RngStream, SlitMapChain, WalkPath};
use std::sync::atomic::AtomicBool;

#[test]
fn config_file_to_record_to_plot() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tail.cfg");
    std::fs::write(
        &path,
        "name = tail\nop = sle.green_tail\nreplicas = 400\nseed = 5\n\n[params]\nkappa = 8/3\ndeltas = 0.4,0.2\n",
    )
    .unwrap();
    let cfg = ExperimentConfig::read(&path).unwrap();
    let rec = run_experiment(&cfg, &AtomicBool::new(false)).unwrap();
    assert_eq!(rec.replicas_done, 400);
    let back = ResultRecord::from_json(&rec.to_json().unwrap()).unwrap();
    assert_eq!(back, rec);

    let mut csv = vec![];
    emit_plot_data(&rec, PlotFormat::Csv, &mut csv).unwrap();
    let csv = String::from_utf8(csv).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "delta,p,stderr");
    assert_eq!(lines.len(), 4);
    assert!(lines[3].starts_with("# fitted exponent"));
    let p: Vec<f64> = lines[1..3].iter().map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(p[0] >= p[1], "tail must shrink with δ: {p:?}");

    let mut json = vec![];
    emit_plot_data(&rec, PlotFormat::Json, &mut json).unwrap();
    let table: Table = serde_json::from_slice(&json).unwrap();
    assert_eq!(Some(&table), rec.table.as_ref());
}

#[test]
fn driver_chain_csv_roundtrip_reproduces_trace() {
    let path = sample_chordal_driver(4.0, 1e-3, 200, &mut RngStream::new(9, 0).rng()).unwrap();
    let chain = SlitMapChain::from_path(&path, StepKind::TiltedSlit);
    let mut buf = vec![];
    chain.write_csv(&mut buf).unwrap();
    let back = SlitMapChain::read_csv(path.rate, 0.0, buf.as_slice()).unwrap();
    assert!((back.hcap() - chain.hcap()).abs() < 1e-12);
    let a = reverse_trace(&path, 1e-4).unwrap();
    let b = reverse_trace(&back.to_path().unwrap(), 1e-4).unwrap();
    let dev = a.points.iter().zip(&b.points).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
    assert!(dev < 1e-9, "{dev}");

    let z = Complex64::new(0.3, 1.5);
    let w = chain.forward_map(z).unwrap();
    let w2 = back.forward_map(z).unwrap();
    assert!((w - w2).norm() < 1e-9);
}

#[test]
fn hull_capacity_agrees_across_estimators() {
    let stop = AtomicBool::new(false);
    for hull in ["slit:0,1", "halfdisk:1,0.5", "tilt:0,1,1"] {
        let spec: HullSpec = hull.parse().unwrap();
        let closed = run_experiment(&ExperimentConfig::new("conformal.hcap").param("hull", hull), &stop).unwrap();
        assert!((closed.quantities[0].value - spec.hcap()).abs() < 1e-14);
        let mc = run_experiment(
            &ExperimentConfig::new("bm.hcap").param("hull", hull).replicas(20_000).seed(2),
            &stop,
        )
        .unwrap();
        assert_eq!(mc.pass, Some(true), "{hull}: {:?}", mc.quantities[0]);
    }
}

#[test]
fn walk_csv_and_loop_erasure() {
    let w = WalkPath::new(vec![(0, 0), (1, 0), (1, 1), (0, 1), (0, 0), (0, -1)]).unwrap();
    let e = loop_erase(&w);
    assert_eq!(e.points(), &[(0, 0), (0, -1)]);
    assert!(e.is_self_avoiding());
    assert_eq!(e.to_csv(), "x,y\n0,0\n0,-1\n");
}
