//! Hot kernels: elementary slit maps, chain composition, Brownian exits,
//! percolation exploration and walk enumeration.

use criterion::{criterion_group, criterion_main, Criterion};
use sle_core::brownian::BrownianPathSampler;
use sle_core::conformal::slit_map;
use sle_core::drivers::sample_chordal_driver;
use sle_core::lattice::{percolation_exploration, saw_count};
use sle_core::loewner::{reverse_trace, StepKind};
use sle_core::{Complex64, HullSpec, RngStream, SlitMapChain, TriangularColoring};
use std::hint::black_box;

fn conformal(c: &mut Criterion) {
    let hull = HullSpec::TiltedSlit {
        x0: 0.0,
        len: 1.0,
        theta: 1.0,
    };
    let z = Complex64::new(0.3, 0.7);
    c.bench_function("slit_map/tilted", |b| b.iter(|| slit_map(black_box(&hull), black_box(z))));
}

fn loewner(c: &mut Criterion) {
    let mut rng = RngStream::new(1, 0).rng();
    let path = sample_chordal_driver(4.0, 1e-4, 10_000, &mut rng).unwrap();
    let chain = SlitMapChain::from_path(&path, StepKind::TiltedSlit);
    let z = Complex64::new(0.5, 1.0);
    c.bench_function("forward_map/10k_steps", |b| b.iter(|| chain.forward_map(black_box(z))));

    let short = sample_chordal_driver(4.0, 1e-3, 1_000, &mut rng).unwrap();
    c.bench_function("reverse_trace/1k_steps", |b| b.iter(|| reverse_trace(black_box(&short), 1e-4)));
}

fn brownian(c: &mut Criterion) {
    let sampler = BrownianPathSampler::new(
        HullSpec::TiltedSlit {
            x0: 0.0,
            len: 1.0,
            theta: 1.0,
        },
        1e-7,
    )
    .unwrap();
    let mut rng = RngStream::new(2, 0).rng();
    let z = Complex64::new(0.5, 0.5);
    c.bench_function("wos_exit/tilted_slit", |b| b.iter(|| sampler.exit(black_box(z), &mut rng)));
}

fn lattice(c: &mut Criterion) {
    let mut rng = RngStream::new(3, 0).rng();
    let col = TriangularColoring::random(256, &mut rng).unwrap();
    c.bench_function("exploration/n256", |b| b.iter(|| percolation_exploration(black_box(&col))));
    c.bench_function("saw_count/n12", |b| b.iter(|| saw_count(black_box(12))));
}

criterion_group!(benches, conformal, loewner, brownian, lattice);
criterion_main!(benches);
