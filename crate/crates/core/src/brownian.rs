//! Brownian measures in the half-plane: capacity by exit expectation, the
//! bubble measure, the Beurling experiment and rooted loops.
//!
//! Exits are sampled by walk-on-spheres. Far from the hull, a path is moved
//! in one exact step to the semicircle of radius R around the hull centre
//! or to ℝ: Φ(w) = w + R²/w maps H minus the half-disk onto H, where the
//! exit law is Cauchy.

use crate::conformal::{bubble_schwarzian, HullSpec, SlitZipper};
use crate::error::{domain, Result};
use crate::rng::{map_replicas, RngStream};
use crate::stats::{self, Accumulator, Estimate, LinearFit};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

type C = Complex64;

/// Where a Brownian path left H minus the hull.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Exit {
    Real(f64),
    Hull(C),
}

/// Walk-on-spheres sampler for Brownian motion killed on ℝ ∪ hull.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrownianPathSampler {
    pub hull: HullSpec,
    /// Absolute stopping distance to the boundary.
    pub eps: f64,
    /// Hard cap on sphere steps per path.
    pub max_steps: usize,
}

impl BrownianPathSampler {
    pub fn new(hull: HullSpec, eps: f64) -> Result<Self> {
        hull.validate()?;
        if !(eps > 0.0) {
            return domain("eps must be positive");
        }
        Ok(Self {
            hull,
            eps,
            max_steps: 1_000_000,
        })
    }

    fn far_field(&self) -> Option<(f64, f64)> {
        match self.hull {
            HullSpec::Empty => None,
            h => Some((h.center(), 1.25 * h.rad())),
        }
    }

    pub fn exit<R: Rng + ?Sized>(&self, z: C, rng: &mut R) -> Exit {
        let far = self.far_field();
        let mut z = z;
        for _ in 0..self.max_steps {
            match far {
                None => return Exit::Real(cauchy_exit(z, rng)),
                Some((c, r)) if (z - c).norm() > 2.0 * r => match jump_to_semicircle(z - c, r, rng) {
                    Ok(w) => z = c + w,
                    Err(x) => return Exit::Real(c + x),
                },
                _ => {}
            }
            let dh = self.hull.distance(z);
            let d = z.im.min(dh);
            if d < self.eps {
                return if z.im <= dh {
                    Exit::Real(z.re)
                } else {
                    Exit::Hull(self.hull.nearest(z))
                };
            }
            z += C::from_polar(d, rng.random::<f64>() * 2.0 * PI);
        }
        Exit::Real(z.re)
    }
}

/// Exit point on ℝ of Brownian motion in H from z.
fn cauchy_exit<R: Rng + ?Sized>(z: C, rng: &mut R) -> f64 {
    z.re + z.im * (PI * (rng.random::<f64>() - 0.5)).tan()
}

/// From w outside the half-disk of radius r (centre 0): Ok(point on the
/// semicircle) or Err(real exit point).
fn jump_to_semicircle<R: Rng + ?Sized>(w: C, r: f64, rng: &mut R) -> std::result::Result<C, f64> {
    let zeta = w + r * r / w;
    let x = cauchy_exit(zeta, rng);
    if x.abs() < 2.0 * r {
        Ok(C::new(x / 2.0, (4.0 * r * r - x * x).max(0.0).sqrt() / 2.0))
    } else {
        Err((x + x.signum() * (x * x - 4.0 * r * r).sqrt()) / 2.0)
    }
}

fn sin_half_angle<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // density sin θ / 2 on (0, π)
    (1.0 - 2.0 * rng.random::<f64>()).acos()
}

// ---------------------------------------------------------------------------
// Half-plane capacity

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HcapEstimate {
    pub estimate: Estimate,
    pub exact: f64,
}

/// hcap(A) = (2/π)∫₀^π E^{Re^{iθ}}[Im B_τ] sin θ dθ · R for A inside the
/// half-disk of radius R about its centre. Written with the control variate
/// R sin θ, whose mean is known, so that the half-disk itself has zero
/// variance: hcap = R² − (4R/π)·E[R sin θ − Im B_τ].
pub fn hcap_mc(hull: HullSpec, replicas: u64, stream: RngStream) -> Result<HcapEstimate> {
    hull.validate()?;
    let exact = hull.hcap();
    if hull == HullSpec::Empty {
        return Ok(HcapEstimate {
            estimate: Estimate {
                mean: 0.0,
                stderr: 0.0,
                n: replicas,
            },
            exact,
        });
    }
    let (c, r) = (hull.center(), hull.rad());
    let sampler = BrownianPathSampler::new(hull, 1e-7 * r)?;
    let xs = map_replicas(stream, 0, replicas, |rng, _| {
        let th = sin_half_angle(rng);
        let z = c + C::from_polar(r, th);
        let im = match sampler.exit(z, rng) {
            Exit::Real(_) => 0.0,
            Exit::Hull(w) => w.im,
        };
        r * th.sin() - im
    });
    let acc: Accumulator = xs.into_iter().collect();
    let k = 4.0 * r / PI;
    Ok(HcapEstimate {
        estimate: Estimate {
            mean: r * r - k * acc.mean(),
            stderr: k * acc.stderr(),
            n: replicas,
        },
        exact,
    })
}

// ---------------------------------------------------------------------------
// Bubble measure

/// What the bubble must reach: a hull away from 0, or the outside of the
/// half-disk of radius r centred at 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "target", rename_all = "snake_case")]
pub enum BubbleTarget {
    Hull { hull: HullSpec },
    HalfDiskExterior { r: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BubbleEstimate {
    pub estimate: Estimate,
    /// −SΦ(0)/6 where a closed form exists.
    pub schwarzian: Option<f64>,
}

/// Γ_H(0, D) by Monte Carlo. A bubble from 0 first meets the semicircle of
/// radius R₀ at angle θ with density sin θ/2 and mass 4/(πR₀); from there it
/// must reach the target before ℝ and then return to 0, which has density
/// H_H(w, 0) = Im w/(π|w|²). Hence Γ = (4/(πR₀))·E_θ[Im w/|w|²; target].
pub fn bubble_gamma_integral(target: BubbleTarget, replicas: u64, stream: RngStream) -> Result<BubbleEstimate> {
    let (r0, schwarzian) = match target {
        BubbleTarget::Hull { hull } => {
            hull.validate()?;
            if hull == HullSpec::Empty {
                return Ok(BubbleEstimate {
                    estimate: Estimate {
                        mean: 0.0,
                        stderr: 0.0,
                        n: replicas,
                    },
                    schwarzian: Some(0.0),
                });
            }
            let d = hull.distance(C::new(0.0, 0.0));
            if d <= 0.0 {
                return domain("hull touches 0");
            }
            (0.9 * d, bubble_schwarzian(&hull).ok())
        }
        BubbleTarget::HalfDiskExterior { r } => {
            if !(r > 0.0) {
                return domain("radius must be positive");
            }
            (0.5 * r, Some(1.0 / (r * r)))
        }
    };
    let xs = map_replicas(stream, 0, replicas, |rng, _| {
        let z = C::from_polar(r0, sin_half_angle(rng));
        let w = match target {
            BubbleTarget::Hull { hull } => {
                let s = BrownianPathSampler {
                    hull,
                    eps: 1e-7 * hull.rad(),
                    max_steps: 1_000_000,
                };
                match s.exit(z, rng) {
                    Exit::Hull(w) => Some(w),
                    Exit::Real(_) => None,
                }
            }
            BubbleTarget::HalfDiskExterior { r } => half_disk_interior_exit(z, r, 1e-7 * r, rng),
        };
        w.map_or(0.0, |w| w.im / w.norm_sqr())
    });
    let acc: Accumulator = xs.into_iter().collect();
    let k = 4.0 / (PI * r0);
    Ok(BubbleEstimate {
        estimate: Estimate {
            mean: k * acc.mean(),
            stderr: k * acc.stderr(),
            n: replicas,
        },
        schwarzian,
    })
}

/// Exit of the half-disk of radius r: Some(point on the arc) or None (ℝ).
fn half_disk_interior_exit<R: Rng + ?Sized>(z: C, r: f64, eps: f64, rng: &mut R) -> Option<C> {
    let mut z = z;
    loop {
        let da = r - z.norm();
        let d = z.im.min(da);
        if d < eps {
            return (da < z.im).then(|| z * (r / z.norm()));
        }
        z += C::from_polar(d, rng.random::<f64>() * 2.0 * PI);
    }
}

/// Small-t check of the restriction decomposition along the frozen trace
/// U ≡ 0 (a vertical slit). Φ_t maps H minus g_t(A) onto H; for fixed U
///
///   d/dt log Φ′_t(0) = a·(4Γ_t − (3/4)(Φ″_t/Φ′_t)²),  Γ_t = −SΦ_t(0)/6,
///
/// so Φ′_t(0)^{5/8} ≈ Φ′(0)^{5/8}·exp((5/8)·a·t·(4Γ − (3/4)(Φ″/Φ′)²)).
/// Returns (Φ′_t(0)^{5/8} from a zipper, the bubble-integral prediction).
pub fn restriction_bubble_check(hull: HullSpec, a: f64, t: f64, gamma: f64, points: usize) -> Result<(f64, f64)> {
    let pts = match hull {
        HullSpec::HalfDisk { x0, r } => {
            let mut v = vec![C::new(x0 - r, 0.0)];
            v.extend(hull.boundary_points(points));
            v.push(C::new(x0 + r, 0.0));
            v
        }
        _ => return Err(crate::Error::Unsupported("restriction check implemented for half-disks".into())),
    };
    let h2 = 2.0 * a * t;
    let img: Vec<C> = pts
        .iter()
        .map(|&z| {
            if z.im == 0.0 {
                C::new(z.re.signum() * (z.re * z.re + h2).sqrt(), 0.0)
            } else {
                crate::conformal::hsqrt(z * z + h2, 1.0)
            }
        })
        .collect();
    let n = img.len();
    let jt = SlitZipper::for_hull(img[0].re, &img[1..n - 1], img[n - 1].re).jet_real(0.0);
    let j0 = SlitZipper::for_hull(pts[0].re, &pts[1..n - 1], pts[n - 1].re).jet_real(0.0);
    let r0 = j0.d2 / j0.d1;
    let lhs = jt.d1.powf(0.625);
    let rhs = j0.d1.powf(0.625) * (0.625 * a * t * (4.0 * gamma - 0.75 * r0 * r0)).exp();
    Ok((lhs, rhs))
}

// ---------------------------------------------------------------------------
// Beurling

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeurlingResult {
    pub eps: Vec<f64>,
    /// P{B[0, τ_𝔻] ∩ [ε, 1] = ∅} from 0.
    pub survival: Vec<Estimate>,
    /// (2/π)·arctan(2√ε/(1−ε)).
    pub exact: Vec<f64>,
    pub fit: LinearFit,
    /// The same weighted fit applied to `exact`: the slope the estimator
    /// targets on this grid, as opposed to the ε → 0 limit 1/2.
    pub exact_fit: LinearFit,
}

/// Probability that Brownian motion from 0 leaves the unit disk without
/// touching [ε, 1].
pub fn beurling_exact(eps: f64) -> f64 {
    if eps >= 1.0 {
        return 1.0;
    }
    2.0 / PI * (2.0 * eps.sqrt() / (1.0 - eps)).atan()
}

fn beurling_once<R: Rng + ?Sized>(eps: f64, tol: f64, rng: &mut R) -> bool {
    let mut z = C::new(0.0, 0.0);
    loop {
        let dc = 1.0 - z.norm();
        let x = z.re.clamp(eps, 1.0);
        let ds = (z - x).norm();
        let d = dc.min(ds);
        if d < tol {
            return dc < ds;
        }
        z += C::from_polar(d, rng.random::<f64>() * 2.0 * PI);
    }
}

pub fn beurling_mc(eps: &[f64], replicas: u64, stream: RngStream) -> Result<BeurlingResult> {
    if eps.is_empty() || eps.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
        return domain("ε values must lie in (0, 1]");
    }
    let survival: Vec<Estimate> = eps
        .iter()
        .enumerate()
        .map(|(i, &e)| {
            let ok = map_replicas(stream.replica(i as u64), 0, replicas, |rng, _| beurling_once(e, 1e-8, rng) as u64);
            Estimate::proportion(ok.iter().sum(), replicas)
        })
        .collect();
    let exact: Vec<f64> = eps.iter().map(|&e| beurling_exact(e)).collect();
    let (mut lx, mut ly, mut lo, mut ls) = (vec![], vec![], vec![], vec![]);
    for ((e, s), x) in eps.iter().zip(&survival).zip(&exact) {
        if *e < 1.0 && s.mean > 0.0 {
            lx.push(e.ln());
            ly.push(s.mean.ln());
            lo.push(x.ln());
            ls.push(s.stderr / s.mean);
        }
    }
    let fit_or_nan = |y: &[f64]| {
        if lx.len() >= 2 {
            stats::linear_fit(&lx, y, Some(&ls))
        } else {
            LinearFit {
                slope: f64::NAN,
                intercept: f64::NAN,
                slope_stderr: f64::NAN,
            }
        }
    };
    Ok(BeurlingResult {
        eps: eps.to_vec(),
        survival,
        fit: fit_or_nan(&ly),
        exact_fit: fit_or_nan(&lo),
        exact,
    })
}

// ---------------------------------------------------------------------------
// Rooted loops

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootedLoop {
    pub root: C,
    pub duration: f64,
    /// Bridge samples at equally spaced times; first and last equal `root`.
    pub points: Vec<C>,
}

impl RootedLoop {
    pub fn hits_disk(&self, centre: C, radius: f64) -> bool {
        self.points.iter().any(|p| (p - centre).norm() <= radius)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl LoopBox {
    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopSet {
    pub loops: Vec<RootedLoop>,
    /// Common importance weight: the total mass over the sample size.
    pub weight: f64,
    /// A·(1/s₁ − 1/s₂)/(2π).
    pub total_mass: f64,
    pub durations: (f64, f64),
    /// Mass of loops shorter than s₁ (infinite) is excluded; mass longer
    /// than s₂ is A/(2π s₂).
    pub tail_mass_above: f64,
}

impl LoopSet {
    /// Estimated measure of loops satisfying `pred`.
    pub fn mass_where(&self, pred: impl Fn(&RootedLoop) -> bool) -> Estimate {
        let hits = self.loops.iter().filter(|l| pred(l)).count() as u64;
        let p = Estimate::proportion(hits, self.loops.len() as u64);
        Estimate {
            mean: p.mean * self.total_mass,
            stderr: p.stderr * self.total_mass,
            n: p.n,
        }
    }

    pub fn merge(&mut self, other: LoopSet) -> Result<()> {
        if self.durations != other.durations || (self.total_mass - other.total_mass).abs() > 1e-12 * self.total_mass {
            return domain("loop sets sampled from different windows cannot be merged");
        }
        self.loops.extend(other.loops);
        self.weight = self.total_mass / self.loops.len() as f64;
        Ok(())
    }
}

/// Samples `count` loops from the rooted loop measure
/// area × dt/(2πt²) × bridge, restricted to roots in `bx` and durations in
/// [s₁, s₂]. Each bridge has `steps` increments.
pub fn sample_rooted_loops(bx: LoopBox, count: usize, durations: (f64, f64), steps: usize, stream: RngStream) -> Result<LoopSet> {
    let (s1, s2) = durations;
    if !(s1 > 0.0) {
        return domain("minimum loop duration must be positive");
    }
    if !(s2 > s1) {
        return domain("duration window must be non-empty");
    }
    if !(bx.area() > 0.0) {
        return domain("sampling box must have positive area");
    }
    let steps = steps.max(1);
    let total_mass = bx.area() * (1.0 / s1 - 1.0 / s2) / (2.0 * PI);
    let loops = map_replicas(stream, 0, count as u64, |rng, _| {
        let root = C::new(
            bx.x0 + (bx.x1 - bx.x0) * rng.random::<f64>(),
            bx.y0 + (bx.y1 - bx.y0) * rng.random::<f64>(),
        );
        let u: f64 = rng.random();
        let duration = 1.0 / (1.0 / s1 - u * (1.0 / s1 - 1.0 / s2));
        let sd = (duration / steps as f64).sqrt();
        let mut walk = Vec::with_capacity(steps + 1);
        let mut w = C::new(0.0, 0.0);
        walk.push(w);
        for _ in 0..steps {
            let (dx, dy): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
            w += C::new(dx, dy) * sd;
            walk.push(w);
        }
        let end = w;
        let points = walk
            .iter()
            .enumerate()
            .map(|(k, &p)| {
                if k == steps {
                    root
                } else {
                    root + p - end * (k as f64 / steps as f64)
                }
            })
            .collect();
        RootedLoop { root, duration, points }
    });
    Ok(LoopSet {
        weight: total_mass / count.max(1) as f64,
        loops,
        total_mass,
        durations,
        tail_mass_above: bx.area() / (2.0 * PI * s2),
    })
}
