//! Driving processes and the one-dimensional diffusions behind them.
//!
//! Single paths take a `&mut impl Rng`; Monte Carlo estimators take an
//! [`RngStream`] and give replica `i` the child stream `i`, so results do not
//! depend on the thread count.
//!
//! Boundary points and interior points are advanced with the exact map of a
//! vertical slit of capacity `a·h`: `Z ↦ √((Z − δU)² + 2ah)`. This keeps
//! `E[X²]` exact for Bessel steps and never lets a point cross the driver.
//! Scale-free problems use steps proportional to the squared distance to
//! the singularity.

use crate::conformal::{hsqrt, hull_domain_map, HullSpec, SlitZipper};
use crate::error::{domain, Error, Result};
use crate::loewner::{swallow_cutoff, DrivingPath, Interpolation};
use crate::params::{self, derive_params};
use crate::quad;
use crate::rng::{map_replicas, RngStream};
use crate::stats::{self, Accumulator, Estimate, LinearFit};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

type C = Complex64;

#[inline]
fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// U ← U + drift·dt − √dt·ξ. A zero drift takes the plain branch so that
/// driftless variants reproduce the chordal driver bit for bit.
#[inline]
fn drive_step(u: f64, drift: f64, dt: f64, sq: f64, xi: f64) -> f64 {
    if drift == 0.0 {
        u - sq * xi
    } else {
        u + drift * dt - sq * xi
    }
}

/// Image of a point under the slit step, in coordinates relative to the
/// driver. Real points keep their side.
#[inline]
fn slit_step(z: C, du: f64, two_ah: f64) -> C {
    let w = z - du;
    if z.im == 0.0 {
        let s = (w.re * w.re + two_ah).sqrt();
        C::new(if w.re >= 0.0 { s } else { -s }, 0.0)
    } else {
        hsqrt(w * w + two_ah, 1.0)
    }
}

#[inline]
fn bessel_step(x: f64, h: f64, db: f64, a: f64) -> f64 {
    let y = x + db;
    (y * y + 2.0 * a * h).sqrt()
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        domain(format!("{name} must be positive and finite, got {v}"))
    }
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return domain("time grid is empty");
    }
    for w in times.windows(2) {
        if !(w[1] > w[0]) {
            return domain("time grid must be strictly increasing");
        }
    }
    check_positive("time", times[0])
}

// ---------------------------------------------------------------------------
// Driver specifications and samplers

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriverKind {
    Chordal,
    KappaRho { rho: f64, x: f64 },
    Radial { w: C },
    TwoSidedRadial { z: C },
    Subdomain { hull: HullSpec },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriverSpec {
    pub kappa: f64,
    pub kind: DriverKind,
    pub dt: f64,
    pub steps: usize,
}

impl DriverSpec {
    pub fn chordal(kappa: f64, dt: f64, steps: usize) -> Self {
        Self {
            kappa,
            kind: DriverKind::Chordal,
            dt,
            steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        derive_params(self.kappa)?;
        check_positive("dt", self.dt)?;
        match self.kind {
            DriverKind::Chordal => Ok(()),
            DriverKind::KappaRho { rho, x } => {
                if !rho.is_finite() || !x.is_finite() || x == 0.0 {
                    return domain("SLE(κ,ρ) needs finite ρ and a force point x ≠ 0");
                }
                Ok(())
            }
            DriverKind::Radial { w: p } | DriverKind::TwoSidedRadial { z: p } => {
                if !(p.im > 0.0) || !p.re.is_finite() || !p.im.is_finite() {
                    return domain(format!("target {p} must lie in the upper half-plane"));
                }
                Ok(())
            }
            DriverKind::Subdomain { hull } => {
                hull.validate()?;
                if hull.distance(C::new(0.0, 0.0)) <= 0.0 {
                    return domain("hull must be at positive distance from 0");
                }
                Ok(())
            }
        }
    }
}

/// State of a one-dimensional diffusion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionState {
    pub value: f64,
    pub time: f64,
    pub absorbed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum StopEvent {
    /// Force point collided with the driver (a + q < 1/2).
    Absorbed { time: f64 },
    /// Target reached the swallowing cutoff.
    TargetReached { time: f64 },
    /// Tip came within resolution of the removed hull.
    NearHull { time: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverSample {
    pub path: DrivingPath,
    /// Force point trajectory (SLE(κ,ρ) only), aligned with `path.values`.
    pub force_point: Option<Vec<f64>>,
    pub stop: Option<StopEvent>,
}

pub fn sample_driver<R: Rng + ?Sized>(spec: &DriverSpec, rng: &mut R) -> Result<DriverSample> {
    spec.validate()?;
    let (k, dt, n) = (spec.kappa, spec.dt, spec.steps);
    match spec.kind {
        DriverKind::Chordal => Ok(DriverSample {
            path: sample_chordal_driver(k, dt, n, rng)?,
            force_point: None,
            stop: None,
        }),
        DriverKind::KappaRho { rho, x } => sample_kappa_rho_driver(k, rho, x, dt, n, rng),
        DriverKind::Radial { w } => sample_radial_driver(k, w, dt, n, rng),
        DriverKind::TwoSidedRadial { z } => sample_two_sided_radial_driver(k, z, dt, n, rng),
        DriverKind::Subdomain { hull } => subdomain_driver(k, hull, dt, n, rng),
    }
}

/// U_k = −B_{k·dt}.
pub fn sample_chordal_driver<R: Rng + ?Sized>(kappa: f64, dt: f64, steps: usize, rng: &mut R) -> Result<DrivingPath> {
    let p = derive_params(kappa)?;
    check_positive("dt", dt)?;
    let sq = dt.sqrt();
    let mut values = Vec::with_capacity(steps + 1);
    let mut u = 0.0;
    values.push(u);
    for _ in 0..steps {
        u = drive_step(u, 0.0, dt, sq, normal(rng));
        values.push(u);
    }
    DrivingPath::new(p.a, dt, values, Interpolation::SquareRoot)
}

/// SLE(κ,ρ): dU = q/(U−K) dt − dW, ∂K = a/(K−U), q = ρ/κ.
///
/// K is advanced with the slit map, so |K − U| ≥ √(2a·dt) after every step.
/// A collision is declared below the swallowing cutoff; for a + q < 1/2 it
/// ends the path, otherwise the pair is pushed back to the cutoff.
pub fn sample_kappa_rho_driver<R: Rng + ?Sized>(kappa: f64, rho: f64, x: f64, dt: f64, steps: usize, rng: &mut R) -> Result<DriverSample> {
    let spec = DriverSpec {
        kappa,
        kind: DriverKind::KappaRho { rho, x },
        dt,
        steps,
    };
    spec.validate()?;
    let a = 2.0 / kappa;
    let q = rho / kappa;
    let side = x.signum();
    let sq = dt.sqrt();
    let cutoff = swallow_cutoff(a, dt);
    let (mut u, mut k) = (0.0, x);
    let mut values = vec![u];
    let mut force = vec![k];
    let mut stop = None;
    for n in 0..steps {
        let xi = normal(rng);
        let drift = if q == 0.0 { 0.0 } else { q / (u - k) };
        let un = drive_step(u, drift, dt, sq, xi);
        let rel = slit_step(C::new(k - u, 0.0), un - u, 2.0 * a * dt).re;
        u = un;
        k = u + rel;
        if rel.abs() < cutoff || rel.signum() != side {
            if a + q < 0.5 {
                values.push(u);
                force.push(u);
                stop = Some(StopEvent::Absorbed { time: (n + 1) as f64 * dt });
                break;
            }
            k = u + side * cutoff;
        }
        values.push(u);
        force.push(k);
    }
    Ok(DriverSample {
        path: DrivingPath::new(a, dt, values, Interpolation::SquareRoot)?,
        force_point: Some(force),
        stop,
    })
}

/// Driver with drift `coef·X/|Z|²` for the interior point `w`, stopped when
/// w reaches the swallowing cutoff.
fn sample_targeted<R: Rng + ?Sized>(kappa: f64, w: C, coef: f64, dt: f64, steps: usize, rng: &mut R) -> Result<DriverSample> {
    let a = 2.0 / kappa;
    let sq = dt.sqrt();
    let cutoff = swallow_cutoff(a, dt);
    let mut u = 0.0;
    let mut z = w;
    let mut values = vec![u];
    let mut stop = None;
    for n in 0..steps {
        let xi = normal(rng);
        let drift = if coef == 0.0 { 0.0 } else { coef * z.re / z.norm_sqr() };
        let un = drive_step(u, drift, dt, sq, xi);
        z = slit_step(z, un - u, 2.0 * a * dt);
        u = un;
        values.push(u);
        if z.norm() < cutoff {
            stop = Some(StopEvent::TargetReached { time: (n + 1) as f64 * dt });
            break;
        }
    }
    Ok(DriverSample {
        path: DrivingPath::new(a, dt, values, Interpolation::SquareRoot)?,
        force_point: None,
        stop,
    })
}

/// Radial SLE toward w: dU = (3a−1)·X/|Z|² dt − dW.
pub fn sample_radial_driver<R: Rng + ?Sized>(kappa: f64, w: C, dt: f64, steps: usize, rng: &mut R) -> Result<DriverSample> {
    DriverSpec {
        kappa,
        kind: DriverKind::Radial { w },
        dt,
        steps,
    }
    .validate()?;
    // 3a − 1 = 2b, exactly zero at κ = 6
    let coef = 2.0 * derive_params(kappa)?.b;
    sample_targeted(kappa, w, coef, dt, steps, rng)
}

/// Two-sided radial SLE through z: dU = (4a−1)·X/|Z|² dt − dW.
pub fn sample_two_sided_radial_driver<R: Rng + ?Sized>(kappa: f64, z: C, dt: f64, steps: usize, rng: &mut R) -> Result<DriverSample> {
    DriverSpec {
        kappa,
        kind: DriverKind::TwoSidedRadial { z },
        dt,
        steps,
    }
    .validate()?;
    let coef = (8.0 - kappa) / kappa;
    sample_targeted(kappa, z, coef, dt, steps, rng)
}

/// Boundary of a hull as points tracked by the flow: real feet plus
/// interior boundary points.
#[derive(Debug, Clone)]
struct TrackedHull {
    /// Relative images Z = g_t(p) − U_t, ordered from the left foot.
    pts: Vec<C>,
    /// Whether the first/last entries are real feet closing a half-disk.
    closed: bool,
}

impl TrackedHull {
    fn new(hull: &HullSpec, m: usize) -> Result<Self> {
        let mut pts = Vec::with_capacity(m + 2);
        let closed = match *hull {
            HullSpec::Empty => return domain("empty hull has no boundary"),
            HullSpec::HalfDisk { x0, r } => {
                pts.push(C::new(x0 - r, 0.0));
                pts.extend(hull.boundary_points(m));
                pts.push(C::new(x0 + r, 0.0));
                true
            }
            HullSpec::VerticalSlit { x0, .. } | HullSpec::TiltedSlit { x0, .. } => {
                pts.push(C::new(x0, 0.0));
                pts.extend(hull.boundary_points(m));
                false
            }
        };
        Ok(Self { pts, closed })
    }

    fn advance(&mut self, du: f64, two_ah: f64) {
        for z in &mut self.pts {
            *z = slit_step(*z, du, two_ah);
        }
    }

    fn min_norm(&self) -> f64 {
        self.pts.iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min)
    }

    fn max_gap(&self) -> f64 {
        self.pts.windows(2).map(|w| (w[1] - w[0]).norm()).fold(0.0, f64::max)
    }

    /// Map of H minus the current hull image, in driver coordinates.
    fn zipper(&self) -> SlitZipper {
        let n = self.pts.len();
        if self.closed {
            SlitZipper::for_hull(self.pts[0].re, &self.pts[1..n - 1], self.pts[n - 1].re)
        } else {
            SlitZipper::new(self.pts[0].re, &self.pts[1..])
        }
    }

    /// Smallest half-disk (centre, radius) containing every tracked image.
    fn bounding_disk(&self) -> (f64, f64) {
        let lo = self.pts.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
        let hi = self.pts.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        let c = 0.5 * (lo + hi);
        let r = self.pts.iter().map(|z| (z - c).norm()).fold(0.0, f64::max);
        (c, r)
    }
}

/// Chordal SLE in H minus a hull: dU = b·Φ″_t(U)/Φ′_t(U) dt − dW, where Φ_t
/// maps H minus the current image of the hull onto H. Φ_t is rebuilt each
/// step by zipping the tracked boundary images. The path stops when the tip
/// comes within the zipper resolution of the hull.
pub fn subdomain_driver<R: Rng + ?Sized>(kappa: f64, hull: HullSpec, dt: f64, steps: usize, rng: &mut R) -> Result<DriverSample> {
    subdomain_driver_with(kappa, hull, dt, steps, 64, rng)
}

pub fn subdomain_driver_with<R: Rng + ?Sized>(
    kappa: f64,
    hull: HullSpec,
    dt: f64,
    steps: usize,
    points: usize,
    rng: &mut R,
) -> Result<DriverSample> {
    let spec = DriverSpec {
        kappa,
        kind: DriverKind::Subdomain { hull },
        dt,
        steps,
    };
    spec.validate()?;
    if hull == HullSpec::Empty {
        return Ok(DriverSample {
            path: sample_chordal_driver(kappa, dt, steps, rng)?,
            force_point: None,
            stop: None,
        });
    }
    let p = derive_params(kappa)?;
    let a = p.a;
    let sq = dt.sqrt();
    let cutoff = swallow_cutoff(a, dt);
    let mut tracked = TrackedHull::new(&hull, points.max(4))?;
    let mut u = 0.0;
    let mut values = vec![u];
    let mut stop = None;
    for n in 0..steps {
        let xi = normal(rng);
        let drift = if p.b == 0.0 {
            0.0
        } else {
            let j = tracked.zipper().jet_real(0.0);
            p.b * j.d2 / j.d1
        };
        if !drift.is_finite() {
            return Err(Error::Numerical {
                step: n,
                detail: "subdomain drift is not finite".into(),
            });
        }
        let un = drive_step(u, drift, dt, sq, xi);
        tracked.advance(un - u, 2.0 * a * dt);
        u = un;
        values.push(u);
        let near = cutoff.max(2.0 * tracked.max_gap());
        if tracked.min_norm() < near {
            stop = Some(StopEvent::NearHull { time: (n + 1) as f64 * dt });
            break;
        }
    }
    Ok(DriverSample {
        path: DrivingPath::new(a, dt, values, Interpolation::SquareRoot)?,
        force_point: None,
        stop,
    })
}

// ---------------------------------------------------------------------------
// Bessel processes

/// Scale-adaptive scheme for dX = a/X dt + dB: steps h = η·X², and below
/// `cutoff·x₀` the remaining excursion is resolved with the scale function
/// s(x) = x^{1−2a}: the path escapes to `escape·x₀` with probability
/// min(1, (x/escape·x₀)^{1−2a}) and is absorbed otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BesselScheme {
    pub eta: f64,
    pub cutoff: f64,
    pub escape: f64,
}

impl Default for BesselScheme {
    fn default() -> Self {
        Self {
            eta: 1e-3,
            cutoff: 1e-6,
            escape: 1e-3,
        }
    }
}

/// Runs one Bessel path from `x` until `horizon` or absorption.
pub fn simulate_bessel<R: Rng + ?Sized>(a: f64, x: f64, horizon: f64, scheme: &BesselScheme, rng: &mut R) -> DiffusionState {
    let (lo, hi) = (scheme.cutoff * x, scheme.escape * x);
    let mut s = DiffusionState {
        value: x,
        time: 0.0,
        absorbed: false,
    };
    while s.time < horizon {
        let h = (scheme.eta * s.value * s.value).min(horizon - s.time);
        s.value = bessel_step(s.value, h, h.sqrt() * normal(rng), a);
        s.time += h;
        // for a ≥ 1/2 the escape probability is 1: the deep excursion takes
        // negligible time but unboundedly many relative steps
        if s.value < lo {
            if rng.random::<f64>() < (s.value / hi).powf(1.0 - 2.0 * a) {
                s.value = hi;
            } else {
                s.value = lo;
                s.absorbed = true;
                break;
            }
        }
    }
    s
}

/// Fraction of Bessel paths from x absorbed at 0 before `horizon`.
pub fn bessel_hit_probability(a: f64, x: f64, horizon: f64, replicas: u64, stream: RngStream) -> Result<Estimate> {
    bessel_hit_probability_with(a, x, horizon, replicas, stream, &BesselScheme::default())
}

pub fn bessel_hit_probability_with(
    a: f64,
    x: f64,
    horizon: f64,
    replicas: u64,
    stream: RngStream,
    scheme: &BesselScheme,
) -> Result<Estimate> {
    check_positive("a", a)?;
    check_positive("x", x)?;
    check_positive("horizon", horizon)?;
    let hits = map_replicas(stream, 0, replicas, |rng, _| {
        simulate_bessel(a, x, horizon, scheme, rng).absorbed as u64
    });
    Ok(Estimate::proportion(hits.iter().sum(), replicas))
}

/// P{T₀ ≤ t} for the Bessel process from x with a < 1/2: T₀ has the law of
/// x²/(2γ) with γ ~ Gamma(1/2 − a).
pub fn bessel_hit_probability_exact(a: f64, x: f64, t: f64) -> Result<f64> {
    if !(a > 0.0 && a < 0.5) {
        return domain("exact hitting law needs 0 < a < 1/2");
    }
    Ok(statrs::function::gamma::gamma_ur(0.5 - a, x * x / (2.0 * t)))
}

// ---------------------------------------------------------------------------
// Moment estimators

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentPoint {
    pub t: f64,
    pub mean: f64,
    pub stderr: f64,
    pub median_of_means: f64,
}

fn summarize(times: &[f64], rows: &[Vec<f64>]) -> Vec<MomentPoint> {
    times
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let col: Vec<f64> = rows.iter().map(|r| r[i]).collect();
            let acc: Accumulator = col.iter().copied().collect();
            MomentPoint {
                t,
                mean: acc.mean(),
                stderr: acc.stderr(),
                median_of_means: stats::median_of_means(&col, 16),
            }
        })
        .collect()
}

fn log_slope(xs: &[f64], pts: &[MomentPoint]) -> LinearFit {
    let y: Vec<f64> = pts.iter().map(|p| p.mean.ln()).collect();
    let s: Vec<f64> = pts.iter().map(|p| p.stderr / p.mean).collect();
    stats::linear_fit(xs, &y, Some(&s))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryMoment {
    pub lambda: f64,
    pub a: f64,
    pub q: f64,
    /// E[g′_t(x)^λ] on the time grid.
    pub moments: Vec<MomentPoint>,
    /// E[X_t^q g′_t(x)^λ] / x^q, which should stay at 1.
    pub martingale: Vec<MomentPoint>,
    /// Fit of log E[g′^λ] against log t.
    pub slope: LinearFit,
    pub absorbed: u64,
    pub replicas: u64,
}

/// E[g′_t(x)^λ] = E[exp(−aλ∫ds/X²)] along Bessel paths, on a time grid.
pub fn boundary_moment(lambda: f64, a: f64, times: &[f64], x: f64, replicas: u64, stream: RngStream) -> Result<BoundaryMoment> {
    check_positive("a", a)?;
    check_positive("x", x)?;
    check_times(times)?;
    let q = params::q(lambda, a)?;
    let scheme = BesselScheme::default();
    let lo = scheme.cutoff * x;
    let rows = map_replicas(stream, 0, replicas, |rng, _| {
        let (mut t, mut xv, mut integral) = (0.0, x, 0.0);
        let mut absorbed = false;
        let mut js = Vec::with_capacity(times.len());
        let mut ms = Vec::with_capacity(times.len());
        for &target in times {
            while !absorbed && t < target {
                let h = (scheme.eta * xv * xv).min(target - t);
                let xn = bessel_step(xv, h, h.sqrt() * normal(rng), a);
                integral += 0.5 * h * (1.0 / (xv * xv) + 1.0 / (xn * xn));
                xv = xn;
                t += h;
                // an excursion below the cutoff costs ∫ds/X² of order
                // log(1/cutoff)/|1/2 − a|, so J is set to 0
                if xv < lo {
                    absorbed = true;
                }
            }
            let j = if lambda == 0.0 {
                1.0
            } else if absorbed {
                0.0
            } else {
                (-a * lambda * integral).exp()
            };
            js.push(j);
            ms.push(if absorbed && lambda != 0.0 { 0.0 } else { (xv / x).powf(q) * j });
        }
        (js, ms, absorbed)
    });
    let absorbed = rows.iter().filter(|r| r.2).count() as u64;
    let (js, ms): (Vec<_>, Vec<_>) = rows.into_iter().map(|r| (r.0, r.1)).unzip();
    let moments = summarize(times, &js);
    let martingale = summarize(times, &ms);
    let lt: Vec<f64> = times.iter().map(|t| t.ln()).collect();
    let slope = log_slope(&lt, &moments);
    Ok(BoundaryMoment {
        lambda,
        a,
        q,
        moments,
        martingale,
        slope,
        absorbed,
        replicas,
    })
}

/// Importance-sampled E[g′_t(x)^λ]: paths follow the tilted Bessel process
/// dX = (a+q)/X dt + dW, under which X^q g′^λ / x^q is the density, so the
/// estimator is (x/X_t)^q.
pub fn boundary_moment_tilted(lambda: f64, a: f64, times: &[f64], x: f64, replicas: u64, stream: RngStream) -> Result<Vec<MomentPoint>> {
    check_positive("a", a)?;
    check_positive("x", x)?;
    check_times(times)?;
    let q = params::q(lambda, a)?;
    if a + q < 0.5 {
        return domain("tilted process must not hit 0 (a + q ≥ 1/2)");
    }
    let eta = BesselScheme::default().eta;
    let rows = map_replicas(stream, 0, replicas, |rng, _| {
        let (mut t, mut xv) = (0.0, x);
        times
            .iter()
            .map(|&target| {
                while t < target {
                    let h = (eta * xv * xv).min(target - t);
                    xv = bessel_step(xv, h, h.sqrt() * normal(rng), a + q);
                    t += h;
                }
                (x / xv).powf(q)
            })
            .collect::<Vec<f64>>()
    });
    Ok(summarize(times, &rows))
}

/// Diffusion dΨ = c·cot Ψ dt + dW simulated in u = log tan(Ψ/2), where it
/// reads du = −(c − ½) sinh u cosh u dt + cosh u dW. Steps are taken in the
/// clock τ = ∫dt/sin²Ψ with dτ = η; real time advances by the trapezoid of
/// sech²u. Calls `observe(i, Ψ, τ)` as the real time passes `times[i]`;
/// returns false if Ψ reached {0, π}.
fn cot_diffusion<R: Rng + ?Sized>(
    coef: f64,
    theta: f64,
    times: &[f64],
    eta: f64,
    rng: &mut R,
    mut observe: impl FnMut(usize, f64, f64),
) -> bool {
    let mut u = (theta / 2.0).tan().ln();
    let (mut t, mut tau) = (0.0, 0.0);
    let mut next = 0;
    while next < times.len() {
        let target = times[next];
        let sech2 = 1.0 / u.cosh().powi(2);
        // shrink the clock step so the real-time increment does not overshoot
        let dtau = if t + eta * sech2 > target { (target - t) / sech2 } else { eta };
        let un = u - (coef - 0.5) * u.tanh() * dtau + dtau.sqrt() * normal(rng);
        if un.abs() > 36.0 {
            return false;
        }
        let dt = 0.5 * dtau * (sech2 + 1.0 / un.cosh().powi(2));
        u = un;
        tau += dtau;
        t += dt;
        if dtau < eta || t >= target {
            // the last partial step lands on the target up to O(η²)
            observe(next, 2.0 * u.exp().atan(), tau);
            next += 1;
        }
    }
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialMoment {
    pub lambda: f64,
    pub a: f64,
    pub theta: f64,
    pub moments: Vec<MomentPoint>,
    /// e^{kt} sin^r Ψ_t J_t / sin^r θ.
    pub martingale: Vec<MomentPoint>,
    /// β from the fitted decay rate, rate = 2aβ.
    pub beta: f64,
    pub beta_stderr: f64,
    pub beta_exact: f64,
    pub absorbed: u64,
}

/// E[|g′_t(e^{2iθ})|^λ] = E[exp(−aλ∫ds/sin²Ψ)] for dΨ = a cot Ψ dt + dW.
pub fn radial_moment(lambda: f64, a: f64, theta: f64, times: &[f64], replicas: u64, stream: RngStream) -> Result<RadialMoment> {
    if !(theta > 0.0 && theta < PI) {
        return domain("θ must lie in (0, π)");
    }
    if a < 0.25 {
        return domain("radial moments need a ≥ 1/4");
    }
    check_times(times)?;
    let beta_exact = params::radial_beta(lambda, a)?;
    let (r, k) = params::radial_martingale_exponents(lambda, a)?;
    let eta = 1e-3;
    let rows = map_replicas(stream, 0, replicas, |rng, _| {
        let mut js = vec![0.0; times.len()];
        let mut ms = vec![0.0; times.len()];
        let ok = cot_diffusion(a, theta, times, eta, rng, |i, psi, tau| {
            let j = (-a * lambda * tau).exp();
            js[i] = j;
            ms[i] = (k * times[i]).exp() * (psi.sin() / theta.sin()).powf(r) * j;
        });
        if lambda == 0.0 {
            js.iter_mut().for_each(|j| *j = 1.0);
            ms.iter_mut().for_each(|m| *m = 1.0);
        }
        (js, ms, !ok)
    });
    let absorbed = rows.iter().filter(|r| r.2).count() as u64;
    let (js, ms): (Vec<_>, Vec<_>) = rows.into_iter().map(|r| (r.0, r.1)).unzip();
    let moments = summarize(times, &js);
    let martingale = summarize(times, &ms);
    let fit = log_slope(times, &moments);
    Ok(RadialMoment {
        lambda,
        a,
        theta,
        moments,
        martingale,
        beta: -fit.slope / (2.0 * a),
        beta_stderr: fit.slope_stderr / (2.0 * a),
        beta_exact,
        absorbed,
    })
}

/// Samples of Ψ_t for dΨ = c·cot Ψ dt + dW started at θ (None if absorbed).
pub fn cot_diffusion_samples(coef: f64, theta: f64, t: f64, replicas: u64, stream: RngStream) -> Result<Vec<Option<f64>>> {
    check_positive("t", t)?;
    if !(theta > 0.0 && theta < PI) {
        return domain("θ must lie in (0, π)");
    }
    Ok(map_replicas(stream, 0, replicas, |rng, _| {
        let mut out = None;
        cot_diffusion(coef, theta, &[t], 1e-3, rng, |_, psi, _| out = Some(psi))
            .then_some(out)
            .flatten()
    }))
}

/// Chi-square test of Ψ_t against the density ∝ sin^{2c}θ, the stationary
/// law of dΨ = c·cot Ψ dt + dW. Returns (statistic, p-value).
pub fn cot_stationarity_test(coef: f64, t: f64, bins: usize, replicas: u64, stream: RngStream) -> Result<(f64, f64)> {
    if coef < 0.5 {
        return domain("no stationary law: boundary is reached for c < 1/2");
    }
    let samples = cot_diffusion_samples(coef, PI / 2.0, t, replicas, stream)?;
    let mut counts = vec![0u64; bins];
    for psi in samples.into_iter().flatten() {
        counts[((psi / PI * bins as f64) as usize).min(bins - 1)] += 1;
    }
    let dens = |x: f64| x.sin().powf(2.0 * coef);
    let total = quad::integrate(dens, 0.0, PI, 1e-12);
    let mut expected = Vec::with_capacity(bins);
    for i in 0..bins {
        let (lo, hi) = (PI * i as f64 / bins as f64, PI * (i + 1) as f64 / bins as f64);
        expected.push(quad::integrate(dens, lo, hi, 1e-12) / total);
    }
    Ok(stats::chi_square(&counts, &expected))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoSidedMoment {
    pub lambdas: (f64, f64),
    pub a: f64,
    /// q(λ1, λ2) = q1 + q2 + q1q2/a.
    pub q: f64,
    pub moments: Vec<MomentPoint>,
    pub martingale: Vec<MomentPoint>,
    pub slope: LinearFit,
    pub absorbed: u64,
}

/// E[g′_t(x)^{λ1} g′_t(y)^{λ2}] for y < 0 < x, with X = g(x) − U and
/// X̃ = U − g(y) driven by the same Brownian motion with opposite signs.
#[allow(clippy::too_many_arguments)]
pub fn two_sided_moment(
    l1: f64,
    l2: f64,
    a: f64,
    x: f64,
    y: f64,
    times: &[f64],
    replicas: u64,
    stream: RngStream,
) -> Result<TwoSidedMoment> {
    check_positive("a", a)?;
    if !(y < 0.0 && x > 0.0) {
        return domain("need y < 0 < x");
    }
    check_times(times)?;
    let q1 = params::q(l1, a)?;
    let q2 = params::q(l2, a)?;
    let r = q1 * q2 / a;
    let scheme = BesselScheme::default();
    let lo = scheme.cutoff * x.min(-y);
    let m0 = x.powf(q1) * (-y).powf(q2) * (x - y).powf(r);
    let rows = map_replicas(stream, 0, replicas, |rng, _| {
        let (mut t, mut xa, mut xb) = (0.0, x, -y);
        let (mut ia, mut ib) = (0.0, 0.0);
        let mut absorbed = false;
        let mut js = Vec::with_capacity(times.len());
        let mut ms = Vec::with_capacity(times.len());
        for &target in times {
            while !absorbed && t < target {
                let m = xa.min(xb);
                let h = (scheme.eta * m * m).min(target - t);
                let db = h.sqrt() * normal(rng);
                let na = bessel_step(xa, h, db, a);
                let nb = bessel_step(xb, h, -db, a);
                ia += 0.5 * h * (1.0 / (xa * xa) + 1.0 / (na * na));
                ib += 0.5 * h * (1.0 / (xb * xb) + 1.0 / (nb * nb));
                xa = na;
                xb = nb;
                t += h;
                if xa.min(xb) < lo {
                    absorbed = true;
                }
            }
            let ja = if l1 == 0.0 { 1.0 } else { (-a * l1 * ia).exp() };
            let jb = if l2 == 0.0 { 1.0 } else { (-a * l2 * ib).exp() };
            let j = if absorbed && (l1 != 0.0 || l2 != 0.0) { 0.0 } else { ja * jb };
            js.push(j);
            ms.push(xa.powf(q1) * xb.powf(q2) * (xa + xb).powf(r) * j / m0);
        }
        (js, ms, absorbed)
    });
    let absorbed = rows.iter().filter(|r| r.2).count() as u64;
    let (js, ms): (Vec<_>, Vec<_>) = rows.into_iter().map(|r| (r.0, r.1)).unzip();
    let moments = summarize(times, &js);
    let martingale = summarize(times, &ms);
    let lt: Vec<f64> = times.iter().map(|t| t.ln()).collect();
    let slope = log_slope(&lt, &moments);
    Ok(TwoSidedMoment {
        lambdas: (l1, l2),
        a,
        q: q1 + q2 + r,
        moments,
        martingale,
        slope,
        absorbed,
    })
}

// ---------------------------------------------------------------------------
// Cardy hitting order

/// Step control for the Cardy estimator. With W = X + X̃ the distance
/// between the two images, steps are min(dt·W², η·min(X, X̃)²). Below
/// `layer·W` the near-zero excursion of the smaller coordinate is resolved
/// through the Bessel scale function with escape level `escape·W`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CardyOptions {
    pub dt: f64,
    pub eta: f64,
    pub layer: f64,
    pub escape: f64,
    pub max_steps: u64,
}

impl Default for CardyOptions {
    fn default() -> Self {
        Self {
            dt: 1e-4,
            eta: 1e-2,
            layer: 1e-5,
            escape: 1e-2,
            max_steps: 50_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CardyEstimate {
    pub estimate: Estimate,
    pub exact: f64,
    /// Paths that ran out of steps and were redrawn.
    pub resampled: u64,
}

/// One path: Some(true) if 1 is swallowed before −y.
fn cardy_once<R: Rng + ?Sized>(a: f64, y: f64, o: &CardyOptions, rng: &mut R) -> Option<bool> {
    let (mut xa, mut xb) = (1.0, y);
    let p = 1.0 - 2.0 * a;
    // mean drift of the partner coordinate during a conditioned escape
    let shift = p / (1.0 - a);
    for _ in 0..o.max_steps {
        let w = xa + xb;
        let m = xa.min(xb);
        let h = (o.dt * w * w).min(o.eta * m * m);
        let db = h.sqrt() * normal(rng);
        xa = bessel_step(xa, h, db, a);
        xb = bessel_step(xb, h, -db, a);
        let w = xa + xb;
        let (lo, hi) = (o.layer * w, o.escape * w);
        if xa < lo {
            if rng.random::<f64>() < (xa / hi).powf(p) {
                xb -= shift * (hi - xa);
                xa = hi;
            } else {
                return Some(true);
            }
        } else if xb < lo {
            if rng.random::<f64>() < (xb / hi).powf(p) {
                xa -= shift * (hi - xb);
                xb = hi;
            } else {
                return Some(false);
            }
        }
    }
    None
}

/// P{T_{−y} > T₁}: the chance that 1 is swallowed before −y.
pub fn cardy_hitting_mc(kappa: f64, y: f64, replicas: u64, stream: RngStream) -> Result<CardyEstimate> {
    cardy_hitting_mc_with(kappa, y, replicas, stream, &CardyOptions::default())
}

pub fn cardy_hitting_mc_with(kappa: f64, y: f64, replicas: u64, stream: RngStream, opts: &CardyOptions) -> Result<CardyEstimate> {
    let p = derive_params(kappa)?;
    if kappa <= 4.0 {
        return domain("boundary points are never swallowed for κ ≤ 4");
    }
    check_positive("y", y)?;
    let exact = params::cardy_phi(y, p.a)?;
    let rows = map_replicas(stream, 0, replicas, |rng, _| {
        let mut redraws = 0u64;
        loop {
            match cardy_once(p.a, y, opts, rng) {
                Some(hit) => return (hit as u64, redraws),
                None => redraws += 1,
            }
        }
    });
    let hits = rows.iter().map(|r| r.0).sum();
    Ok(CardyEstimate {
        estimate: Estimate::proportion(hits, replicas),
        exact,
        resampled: rows.iter().map(|r| r.1).sum(),
    })
}

// ---------------------------------------------------------------------------
// Interior points: Green tail and two-sided radial angles

/// Interior point under a driver with drift coef·X/|Z|², in relative
/// coordinates, carrying log|g′|.
#[derive(Debug, Clone, Copy)]
struct InteriorFlow {
    z: C,
    log_gp: f64,
    a: f64,
    coef: f64,
}

impl InteriorFlow {
    fn new(z: C, a: f64, coef: f64) -> Self {
        Self { z, log_gp: 0.0, a, coef }
    }

    fn log_upsilon(&self) -> f64 {
        self.z.im.ln() - self.log_gp
    }

    fn sin_theta(&self) -> f64 {
        self.z.im / self.z.norm()
    }

    fn step<R: Rng + ?Sized>(&mut self, h: f64, rng: &mut R) {
        let r2 = self.z.norm_sqr();
        let du = self.coef * self.z.re / r2 * h - h.sqrt() * normal(rng);
        let w = self.z - du;
        let zn = hsqrt(w * w + 2.0 * self.a * h, 1.0);
        self.log_gp += w.norm().ln() - zn.norm().ln();
        self.z = zn;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreenTail {
    pub z: C,
    pub deltas: Vec<f64>,
    /// P{Υ_∞ ≤ δ} for each δ.
    pub tail: Vec<Estimate>,
    /// Fit of log P against log δ; the slope estimates 2 − d.
    pub fit: LinearFit,
    pub exponent_exact: f64,
    /// Paths stopped by the step budget.
    pub censored: u64,
}

/// Step control for interior points: h = η·|Z|².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteriorOptions {
    pub eta: f64,
    /// Stop once sin Θ falls below this; Υ is then frozen up to negligible
    /// probability.
    pub min_sin: f64,
    pub max_steps: u64,
}

impl Default for InteriorOptions {
    fn default() -> Self {
        Self {
            eta: 1e-3,
            min_sin: 1e-3,
            max_steps: 20_000_000,
        }
    }
}

/// Limit of Υ_t(z) under chordal SLE, stopped early once below `floor`.
fn green_once<R: Rng + ?Sized>(a: f64, z: C, floor: f64, o: &InteriorOptions, rng: &mut R) -> (f64, bool) {
    let mut p = InteriorFlow::new(z, a, 0.0);
    let lf = floor.ln();
    for _ in 0..o.max_steps {
        let r2 = p.z.norm_sqr();
        p.step(o.eta * r2, rng);
        let lu = p.log_upsilon();
        if lu <= lf || p.sin_theta() < o.min_sin || p.z.norm() < 1e-12 {
            return (lu.exp(), false);
        }
    }
    (p.log_upsilon().exp(), true)
}

/// Tail P{Υ_∞(z) ≤ δ} on a grid of δ, and the fitted exponent.
pub fn green_tail_mc(kappa: f64, z: C, deltas: &[f64], replicas: u64, stream: RngStream) -> Result<GreenTail> {
    green_tail_mc_with(kappa, z, deltas, replicas, stream, &InteriorOptions::default())
}

pub fn green_tail_mc_with(kappa: f64, z: C, deltas: &[f64], replicas: u64, stream: RngStream, opts: &InteriorOptions) -> Result<GreenTail> {
    let p = derive_params(kappa)?;
    if kappa >= 8.0 {
        return domain("green tail needs κ < 8");
    }
    if !(z.im > 0.0) {
        return domain("z must lie in the upper half-plane");
    }
    if deltas.is_empty() || deltas.iter().any(|d| !(*d > 0.0)) {
        return domain("δ grid must be positive and non-empty");
    }
    let floor = deltas.iter().copied().fold(f64::INFINITY, f64::min);
    let rows = map_replicas(stream, 0, replicas, |rng, _| green_once(p.a, z, floor * (1.0 - 1e-12), opts, rng));
    let censored = rows.iter().filter(|r| r.1).count() as u64;
    let tail: Vec<Estimate> = deltas
        .iter()
        .map(|&d| {
            if d >= z.im {
                Estimate {
                    mean: 1.0,
                    stderr: 0.0,
                    n: replicas,
                }
            } else {
                Estimate::proportion(rows.iter().filter(|r| r.0 <= d).count() as u64, replicas)
            }
        })
        .collect();
    let (mut lx, mut ly, mut ls) = (vec![], vec![], vec![]);
    for (d, e) in deltas.iter().zip(&tail) {
        if *d < z.im && e.mean > 0.0 {
            lx.push(d.ln());
            ly.push(e.mean.ln());
            ls.push(e.stderr / e.mean);
        }
    }
    let fit = if lx.len() >= 2 {
        stats::linear_fit(&lx, &ly, Some(&ls))
    } else {
        LinearFit {
            slope: f64::NAN,
            intercept: f64::NAN,
            slope_stderr: f64::NAN,
        }
    };
    Ok(GreenTail {
        z,
        deltas: deltas.to_vec(),
        tail,
        fit,
        exponent_exact: p.bhat,
        censored,
    })
}

/// Angle Θ and height Y of the point i when its conformal radius first
/// reaches e^{−2a·s}, under a driver with drift coef·X/|Z|². None if the
/// point reached the boundary first.
fn angle_at_radial_time<R: Rng + ?Sized>(a: f64, coef: f64, s: f64, o: &InteriorOptions, rng: &mut R) -> Option<(f64, f64)> {
    let mut p = InteriorFlow::new(C::new(0.0, 1.0), a, coef);
    let target = -2.0 * a * s;
    for _ in 0..o.max_steps {
        let r2 = p.z.norm_sqr();
        let rate = 2.0 * a * p.z.im * p.z.im / (r2 * r2);
        let rem = p.log_upsilon() - target;
        if rem <= 1e-12 {
            return Some((p.z.arg(), p.z.im));
        }
        let h_rem = rem / rate;
        let clipped = h_rem < o.eta * r2;
        p.step(if clipped { h_rem } else { o.eta * r2 }, rng);
        if clipped {
            return Some((p.z.arg(), p.z.im));
        }
        if p.sin_theta() < 1e-9 {
            return None;
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoSidedComparison {
    /// Θ at radial time s from the two-sided radial driver.
    pub direct: Vec<f64>,
    /// (Θ, weight) from the radial driver weighted by sin^a Θ · Y^b.
    pub weighted: Vec<(f64, f64)>,
    pub ks_statistic: f64,
    pub ks_p: f64,
}

/// Compares the two constructions of two-sided radial SLE through i at
/// radial time s: chordal weighted by the Green's-function martingale
/// (simulated directly with drift (4a−1)X/|Z|²) against radial SLE weighted
/// by e^{3a²s/2} sin^a Θ̃ · Ỹ^b.
pub fn two_sided_radial_comparison(kappa: f64, s: f64, replicas: u64, stream: RngStream) -> Result<TwoSidedComparison> {
    let p = derive_params(kappa)?;
    check_positive("s", s)?;
    let o = InteriorOptions::default();
    let coef_two = (8.0 - kappa) / kappa;
    let coef_rad = 2.0 * p.b;
    let direct: Vec<f64> = map_replicas(stream.replica(0), 0, replicas, |rng, _| {
        angle_at_radial_time(p.a, coef_two, s, &o, rng)
    })
    .into_iter()
    .flatten()
    .map(|(th, _)| th)
    .collect();
    let weighted: Vec<(f64, f64)> = map_replicas(stream.replica(1), 0, replicas, |rng, _| {
        angle_at_radial_time(p.a, coef_rad, s, &o, rng)
    })
    .into_iter()
    .map(|r| match r {
        Some((th, y)) => (th, th.sin().powf(p.a) * y.powf(p.b)),
        None => (0.0, 0.0),
    })
    .collect();
    let a_pairs: Vec<(f64, f64)> = direct.iter().map(|&t| (t, 1.0)).collect();
    let (d, pv) = stats::ks_two_sample_weighted(&a_pairs, &weighted);
    Ok(TwoSidedComparison {
        direct,
        weighted,
        ks_statistic: d,
        ks_p: pv,
    })
}

// ---------------------------------------------------------------------------
// Restriction

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestrictionOptions {
    /// Interior boundary points tracked on the hull.
    pub points: usize,
    pub eta: f64,
    /// Stop an avoiding trace once Φ′_t(U_t) ≥ 1 − tol (via the bounding
    /// half-disk of the hull image).
    pub tol: f64,
    pub t_max: f64,
    pub check_every: usize,
}

impl Default for RestrictionOptions {
    fn default() -> Self {
        Self {
            points: 64,
            eta: 1e-3,
            tol: 1e-3,
            t_max: 1e4,
            check_every: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestrictionEstimate {
    pub avoid: Estimate,
    /// Φ′(0)^{5/8}; the avoidance probability at κ = 8/3.
    pub exact: f64,
    /// Traces classified at `t_max` rather than by a stopping rule.
    pub censored: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Avoid,
    Hit,
    Censored(bool),
}

fn restriction_once<R: Rng + ?Sized>(a: f64, hull: &HullSpec, o: &RestrictionOptions, rng: &mut R) -> Result<Outcome> {
    let mut tr = TrackedHull::new(hull, o.points)?;
    let side = hull.center().signum();
    let cut_off = |z: &C| z.im > 0.0 && z.re.signum() != side;
    let mut t = 0.0;
    let mut n = 0usize;
    while t < o.t_max {
        let m = tr.min_norm();
        let h = (o.eta * m * m).min(o.t_max - t);
        let du = -h.sqrt() * normal(rng);
        tr.advance(du, 2.0 * a * h);
        t += h;
        n += 1;
        if n.is_multiple_of(o.check_every) {
            if tr.pts.iter().any(|z| cut_off(z) && z.im / z.norm() < 1e-3) {
                return Ok(Outcome::Hit);
            }
            let (c, r) = tr.bounding_disk();
            if c.abs() > r * 1.01 && 1.0 - (1.01 * r / c).powi(2) >= 1.0 - o.tol {
                return Ok(Outcome::Avoid);
            }
        }
        if !m.is_finite() {
            return Err(Error::Numerical {
                step: n,
                detail: "tracked hull point left the domain".into(),
            });
        }
    }
    Ok(Outcome::Censored(tr.pts.iter().any(|z| cut_off(z) && z.arg() / PI > 0.5)))
}

/// Fraction of chordal traces avoiding a hull. The hull boundary is
/// tracked by the flow; a trace hits the hull when part of the boundary is
/// cut off to the far side of the curve.
pub fn restriction_mc(
    kappa: f64,
    hull: HullSpec,
    replicas: u64,
    stream: RngStream,
    opts: &RestrictionOptions,
) -> Result<RestrictionEstimate> {
    let p = derive_params(kappa)?;
    if kappa > 4.0 {
        return Err(Error::Unsupported("restriction sampling assumes simple traces (κ ≤ 4)".into()));
    }
    hull.validate()?;
    if hull == HullSpec::Empty || hull.distance(C::new(0.0, 0.0)) <= 0.0 {
        return domain("hull must be non-empty and away from 0");
    }
    let phi = hull_domain_map(hull)?.phi_prime(C::new(0.0, 0.0))?.re;
    let outcomes = map_replicas(stream, 0, replicas, |rng, _| restriction_once(p.a, &hull, opts, rng));
    let mut avoid = 0u64;
    let mut censored = 0u64;
    for o in outcomes {
        match o? {
            Outcome::Avoid => avoid += 1,
            Outcome::Hit => {}
            Outcome::Censored(hit) => {
                censored += 1;
                avoid += (!hit) as u64;
            }
        }
    }
    Ok(RestrictionEstimate {
        avoid: Estimate::proportion(avoid, replicas),
        exact: params::restriction_probability(phi)?,
        censored,
    })
}
