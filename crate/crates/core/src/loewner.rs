//! Chordal Loewner engine: point flows, composed slit maps, reverse traces
//! and the radial disk flow.

use crate::conformal::{hsqrt, TiltedSlitMap};
use crate::error::{domain, Error, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

type C = Complex64;

/// How U is evaluated between grid points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Interpolation {
    /// U(t_k + s) = U_k + δU·√(s/δt), the driving of a straight slit.
    SquareRoot,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrivingPath {
    pub rate: f64,
    pub dt: f64,
    pub values: Vec<f64>,
    pub interpolation: Interpolation,
}

impl DrivingPath {
    pub fn new(rate: f64, dt: f64, values: Vec<f64>, interpolation: Interpolation) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return domain(format!("hcap rate must be positive, got {rate}"));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return domain(format!("dt must be positive, got {dt}"));
        }
        if values.is_empty() {
            return domain("driving path needs at least U_0");
        }
        if let Some(k) = values.iter().position(|u| !u.is_finite()) {
            return domain(format!("driving value {k} is not finite"));
        }
        Ok(Self {
            rate,
            dt,
            values,
            interpolation,
        })
    }

    /// Accepts explicit sample times, which must form a uniform grid from 0.
    pub fn from_samples(rate: f64, times: &[f64], values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() || times.is_empty() {
            return domain("times and values must have equal nonzero length");
        }
        if times[0] != 0.0 {
            return domain("time grid must start at 0");
        }
        let dt = if times.len() > 1 { times[1] - times[0] } else { 1.0 };
        for (k, t) in times.iter().enumerate() {
            if (t - k as f64 * dt).abs() > 1e-9 * dt.max(1.0) * (k.max(1) as f64) {
                return domain(format!("non-uniform time grid at index {k}"));
            }
        }
        Self::new(rate, dt, values, Interpolation::SquareRoot)
    }

    pub fn constant(rate: f64, dt: f64, steps: usize, c: f64) -> Result<Self> {
        Self::new(rate, dt, vec![c; steps + 1], Interpolation::SquareRoot)
    }

    pub fn steps(&self) -> usize {
        self.values.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.steps() as f64 * self.dt
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// U at time t (clamped to the grid).
    pub fn value_at(&self, t: f64) -> f64 {
        let m = self.steps();
        if m == 0 || t <= 0.0 {
            return self.values[0];
        }
        let k = ((t / self.dt).floor() as usize).min(m - 1);
        let frac = ((t - k as f64 * self.dt) / self.dt).clamp(0.0, 1.0);
        let du = self.values[k + 1] - self.values[k];
        self.values[k]
            + du * match self.interpolation {
                Interpolation::SquareRoot => frac.sqrt(),
                Interpolation::Linear => frac,
            }
    }

    pub fn increments(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.windows(2).map(|w| w[1] - w[0])
    }

    pub fn swallow_cutoff(&self) -> f64 {
        swallow_cutoff(self.rate, self.dt)
    }
}

/// |Z| below which a point counts as swallowed: max(1e-7, 10·√(a·dt)).
pub fn swallow_cutoff(rate: f64, dt: f64) -> f64 {
    (10.0 * (rate * dt).sqrt()).max(1e-7)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepKind {
    TiltedSlit,
    /// Jump then vertical slit; kept for validation.
    VerticalShift,
}

/// Composition g_T = h_M ∘ … ∘ h₁ of elementary maps.
#[derive(Debug, Clone)]
pub struct SlitMapChain {
    pub rate: f64,
    pub u0: f64,
    pub steps: Vec<(f64, f64)>,
    pub kind: StepKind,
    maps: Vec<TiltedSlitMap>,
    cutoff: Option<f64>,
}

impl SlitMapChain {
    pub fn new(rate: f64, u0: f64, steps: Vec<(f64, f64)>, kind: StepKind) -> Result<Self> {
        if !(rate > 0.0) {
            return domain("hcap rate must be positive");
        }
        for (k, &(dt, du)) in steps.iter().enumerate() {
            if !(dt > 0.0 && dt.is_finite() && du.is_finite()) {
                return domain(format!("invalid chain step {k}: ({dt}, {du})"));
            }
        }
        let maps = steps.iter().map(|&(dt, du)| TiltedSlitMap::from_step(rate * dt, du)).collect();
        Ok(Self {
            rate,
            u0,
            steps,
            kind,
            maps,
            cutoff: None,
        })
    }

    pub fn from_path(path: &DrivingPath, kind: StepKind) -> Self {
        let steps = path.increments().map(|du| (path.dt, du)).collect();
        Self::new(path.rate, path.values[0], steps, kind).expect("validated path")
    }

    /// Replaces the default swallowing cutoff max(1e-7, 10·√(a·dt)).
    pub fn with_cutoff(mut self, cutoff: f64) -> Self {
        self.cutoff = Some(cutoff);
        self
    }

    pub fn hcap(&self) -> f64 {
        self.rate * self.steps.iter().map(|s| s.0).sum::<f64>()
    }

    /// Driving values U_0..U_M.
    pub fn driving(&self) -> Vec<f64> {
        let mut u = self.u0;
        std::iter::once(u)
            .chain(self.steps.iter().map(|s| {
                u += s.1;
                u
            }))
            .collect()
    }

    /// Step k (0-based) applied to z, with `base` = U before the step.
    fn step_forward(&self, k: usize, base: f64, z: C) -> Result<C> {
        let (dt, du) = self.steps[k];
        match self.kind {
            StepKind::TiltedSlit => Ok(base + self.maps[k].forward(z - base)?),
            StepKind::VerticalShift => {
                let c = base + du;
                let side = if z.re >= c { 1.0 } else { -1.0 };
                Ok(c + hsqrt((z - c) * (z - c) + 2.0 * self.rate * dt, side))
            }
        }
    }

    fn step_inverse(&self, k: usize, base: f64, w: C) -> C {
        let (dt, du) = self.steps[k];
        match self.kind {
            StepKind::TiltedSlit => base + self.maps[k].inverse(w - base),
            StepKind::VerticalShift => {
                let c = base + du;
                let side = if w.re >= c { 1.0 } else { -1.0 };
                c + hsqrt((w - c) * (w - c) - 2.0 * self.rate * dt, side)
            }
        }
    }

    /// g_T(z), failing with the step index if z is swallowed on the way.
    pub fn forward_map(&self, z: C) -> Result<C> {
        if z.im < 0.0 || !z.re.is_finite() || !z.im.is_finite() {
            return domain(format!("{z} is not in the closed upper half-plane"));
        }
        let mut w = z;
        let mut u = self.u0;
        if self.steps.is_empty() {
            return Ok(z);
        }
        if (w - u).norm() == 0.0 {
            return Err(Error::Swallowed { step: 0 });
        }
        for k in 0..self.steps.len() {
            let (dt, du) = self.steps[k];
            w = self.step_forward(k, u, w)?;
            u += du;
            let cut = self.cutoff.unwrap_or_else(|| swallow_cutoff(self.rate, dt));
            if (w - u).norm() < cut {
                return Err(Error::Swallowed { step: k + 1 });
            }
        }
        Ok(w)
    }

    /// f_{t_n}(w) = h₁⁻¹ ∘ … ∘ h_n⁻¹(w).
    pub fn inverse_prefix(&self, n: usize, w: C) -> Result<C> {
        let u = self.driving();
        let mut z = w;
        for k in (0..n).rev() {
            z = self.step_inverse(k, u[k], z);
            if !(z.re.is_finite() && z.im.is_finite()) {
                return Err(Error::Numerical {
                    step: k + 1,
                    detail: "non-finite value while composing inverse maps".into(),
                });
            }
        }
        Ok(z)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "dt,du")?;
        for (dt, du) in &self.steps {
            writeln!(out, "{dt:.16e},{du:.16e}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(rate: f64, u0: f64, input: R) -> Result<Self> {
        let mut steps = Vec::new();
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if n == 0 {
                if line != "dt,du" {
                    return Err(Error::Config(format!("chain CSV header must be `dt,du`, got `{line}`")));
                }
                continue;
            }
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse = |s: Option<&str>| -> Result<f64> {
                s.and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| Error::Config(format!("bad chain CSV line {}: `{line}`", n + 1)))
            };
            let mut it = line.split(',');
            steps.push((parse(it.next())?, parse(it.next())?));
        }
        Self::new(rate, u0, steps, StepKind::TiltedSlit)
    }

    /// The chain as a driving path on its grid; steps must share one dt.
    pub fn to_path(&self) -> Result<DrivingPath> {
        let dt = self.steps.first().map_or(1.0, |s| s.0);
        if self.steps.iter().any(|s| (s.0 - dt).abs() > 1e-12 * dt) {
            return domain("chain steps do not share a uniform dt");
        }
        DrivingPath::new(self.rate, dt, self.driving(), Interpolation::SquareRoot)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PointStatus {
    Alive,
    Swallowed { time: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackedPoint {
    pub z0: C,
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub gprime: C,
    pub upsilon: f64,
    pub status: PointStatus,
}

impl TrackedPoint {
    pub fn start(z0: C, u0: f64) -> Self {
        Self {
            z0,
            t: 0.0,
            x: z0.re - u0,
            y: z0.im,
            gprime: C::new(1.0, 0.0),
            upsilon: z0.im.abs(),
            status: PointStatus::Alive,
        }
    }

    pub fn alive(&self) -> bool {
        matches!(self.status, PointStatus::Alive)
    }
}

/// One RK4 step of the σ-parametrized flow for (g, log g′).
fn rk4(y: [C; 2], s0: f64, h: f64, f: &impl Fn(f64, [C; 2]) -> [C; 2]) -> [C; 2] {
    let add = |y: [C; 2], k: [C; 2], c: f64| [y[0] + k[0] * c, y[1] + k[1] * c];
    let k1 = f(s0, y);
    let k2 = f(s0 + h / 2.0, add(y, k1, h / 2.0));
    let k3 = f(s0 + h / 2.0, add(y, k2, h / 2.0));
    let k4 = f(s0 + h, add(y, k3, h));
    [
        y[0] + (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]) * (h / 6.0),
        y[1] + (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]) * (h / 6.0),
    ]
}

/// Adaptive RK4 with step doubling over σ ∈ [0, 1].
fn integrate_step(y0: [C; 2], f: &impl Fn(f64, [C; 2]) -> [C; 2], tol: f64) -> [C; 2] {
    let mut y = y0;
    let mut s = 0.0;
    let mut h = 1.0f64;
    let mut guard = 0;
    while s < 1.0 {
        h = h.min(1.0 - s);
        let big = rk4(y, s, h, f);
        let half = rk4(rk4(y, s, h / 2.0, f), s + h / 2.0, h / 2.0, f);
        let err = (half[0] - big[0]).norm() + (half[1] - big[1]).norm();
        let scale = tol * (1.0 + y[0].norm());
        guard += 1;
        if err <= scale || h < 1e-12 || guard > 100_000 {
            y = [half[0] + (half[0] - big[0]) / 15.0, half[1] + (half[1] - big[1]) / 15.0];
            s += h;
            let grow = if err > 0.0 { 0.9 * (scale / err).powf(0.2) } else { 4.0 };
            h *= grow.clamp(0.2, 4.0);
        } else {
            h *= (0.9 * (scale / err).powf(0.2)).clamp(0.1, 0.5);
        }
    }
    y
}

/// Integrates dg = a/(g − U) dt and d log g′ = −a/(g − U)² dt along the
/// path, reporting the state at every grid time up to `horizon`. Points in
/// the lower half-plane are accepted and follow the conjugate flow.
pub fn evolve_point(path: &DrivingPath, z: C, horizon: f64) -> Result<Vec<TrackedPoint>> {
    if !(z.re.is_finite() && z.im.is_finite()) {
        return domain(format!("{z} is not finite"));
    }
    let u = &path.values;
    let mut p = TrackedPoint::start(z, u[0]);
    if z.im == 0.0 && z.re == u[0] {
        p.status = PointStatus::Swallowed { time: 0.0 };
        return Ok(vec![p]);
    }
    let steps = ((horizon / path.dt).round() as usize).min(path.steps());
    let cutoff = path.swallow_cutoff();
    let a = path.rate;
    let dt = path.dt;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(p);
    let mut g = z;
    let mut lg = C::new(0.0, 0.0);
    for k in 0..steps {
        let (uk, du) = (u[k], u[k + 1] - u[k]);
        let rhs = |sig: f64, y: [C; 2]| {
            let (s_of, ds) = match path.interpolation {
                Interpolation::SquareRoot => (sig, 2.0 * sig * dt),
                Interpolation::Linear => (sig, dt),
            };
            let zz = y[0] - (uk + du * s_of);
            let v = a / zz;
            [v * ds, -v / zz * ds]
        };
        // In the linear case σ is s/δt directly; in the √ case s = δt·σ².
        let y = integrate_step([g, lg], &rhs, 1e-13);
        g = y[0];
        lg = y[1];
        if z.im == 0.0 {
            g.im = 0.0;
            lg.im = 0.0;
        }
        let zt = g - u[k + 1];
        let t = (k + 1) as f64 * dt;
        let gp = lg.exp();
        p = TrackedPoint {
            z0: z,
            t,
            x: zt.re,
            y: g.im,
            gprime: gp,
            upsilon: g.im.abs() / gp.norm(),
            status: PointStatus::Alive,
        };
        if zt.norm() < cutoff || !(g.re.is_finite() && g.im.is_finite()) {
            p.status = PointStatus::Swallowed { time: t };
            out.push(p);
            break;
        }
        out.push(p);
    }
    Ok(out)
}

/// Koebe bracket [Υ/4, 4Υ] for the distance from z to the curve.
pub fn koebe_distance(p: &TrackedPoint) -> Result<(f64, f64)> {
    match p.status {
        PointStatus::Alive => Ok((p.upsilon / 4.0, 4.0 * p.upsilon)),
        PointStatus::Swallowed { .. } => Err(Error::Swallowed { step: 0 }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub times: Vec<f64>,
    pub points: Vec<C>,
    pub tip_eps: f64,
}

impl Trace {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,re,im")?;
        for (t, z) in self.times.iter().zip(&self.points) {
            writeln!(out, "{t:.16e},{:.16e},{:.16e}", z.re, z.im)?;
        }
        Ok(())
    }
}

pub fn default_tip_eps(path: &DrivingPath) -> f64 {
    1e-3 * (path.rate * path.horizon()).sqrt().max(f64::MIN_POSITIVE)
}

/// γ(t_k) ≈ f_{t_k}(U_k + iε) for every grid time.
pub fn reverse_trace(path: &DrivingPath, tip_eps: f64) -> Result<Trace> {
    reverse_trace_strided(path, tip_eps, 1)
}

/// As [`reverse_trace`] but only every `stride`-th grid time (and the last).
pub fn reverse_trace_strided(path: &DrivingPath, tip_eps: f64, stride: usize) -> Result<Trace> {
    if !(tip_eps > 0.0) {
        return domain("tip_eps must be positive");
    }
    let stride = stride.max(1);
    let chain = SlitMapChain::from_path(path, StepKind::TiltedSlit);
    let m = path.steps();
    let mut times = vec![0.0];
    let mut points = vec![C::new(path.values[0], 0.0)];
    let mut ks: Vec<usize> = (stride..=m).step_by(stride).collect();
    if m > 0 && ks.last() != Some(&m) {
        ks.push(m);
    }
    for n in ks {
        let w = C::new(path.values[n], tip_eps);
        let z = chain.inverse_prefix(n, w)?;
        times.push(path.time(n));
        points.push(C::new(z.re, z.im.max(0.0)));
    }
    Ok(Trace { times, points, tip_eps })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialTrajectory {
    pub times: Vec<f64>,
    pub values: Vec<C>,
    /// log g̃′(z) along the flow; at z = 0 it equals t.
    pub log_gprime: Vec<C>,
    pub swallowed_at: Option<f64>,
}

/// ∂_t g̃ = g̃ (e^{2iU} + g̃)/(e^{2iU} − g̃) on the unit disk, unit rate.
pub fn radial_disk_flow(path: &DrivingPath, z: C, horizon: f64) -> Result<RadialTrajectory> {
    radial_disk_flow_with_cutoff(path, z, horizon, path.swallow_cutoff())
}

/// As [`radial_disk_flow`] with an explicit swallowing cutoff on 1 − |g̃|.
pub fn radial_disk_flow_with_cutoff(path: &DrivingPath, z: C, horizon: f64, cutoff: f64) -> Result<RadialTrajectory> {
    if !(z.norm() < 1.0) {
        return domain(format!("{z} is not inside the unit disk"));
    }
    let steps = ((horizon / path.dt).round() as usize).min(path.steps());
    let dt = path.dt;
    let mut g = z;
    let mut lg = C::new(0.0, 0.0);
    let mut out = RadialTrajectory {
        times: vec![0.0],
        values: vec![z],
        log_gprime: vec![lg],
        swallowed_at: None,
    };
    for k in 0..steps {
        let t0 = k as f64 * dt;
        let rhs = |sig: f64, y: [C; 2]| {
            let e = C::from_polar(1.0, 2.0 * path.value_at(t0 + sig * dt));
            let w = y[0];
            let den = e - w;
            [w * (e + w) / den * dt, ((e + w) / den + 2.0 * e * w / (den * den)) * dt]
        };
        let y = integrate_step([g, lg], &rhs, 1e-13);
        g = y[0];
        lg = y[1];
        let t = (k + 1) as f64 * dt;
        out.times.push(t);
        out.values.push(g);
        out.log_gprime.push(lg);
        if 1.0 - g.norm() < cutoff {
            out.swallowed_at = Some(t);
            break;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformal::{slit_map, HullSpec};
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn c(x: f64, y: f64) -> C {
        C::new(x, y)
    }

    fn brownian(rate: f64, dt: f64, steps: usize, seed: u64) -> DrivingPath {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut u = vec![0.0];
        for _ in 0..steps {
            let xi: f64 = StandardNormal.sample(&mut rng);
            let last = *u.last().unwrap();
            u.push(last - dt.sqrt() * xi);
        }
        DrivingPath::new(rate, dt, u, Interpolation::SquareRoot).unwrap()
    }

    #[test]
    fn rejects_bad_paths() {
        assert!(DrivingPath::new(1.0, 0.0, vec![0.0], Interpolation::Linear).is_err());
        assert!(DrivingPath::new(1.0, 0.1, vec![0.0, f64::NAN], Interpolation::Linear).is_err());
        assert!(DrivingPath::from_samples(1.0, &[0.0, 0.1, 0.3], vec![0.0; 3]).is_err());
        assert!(DrivingPath::from_samples(1.0, &[0.0, 0.1, 0.2], vec![0.0; 3]).is_ok());
    }

    #[test]
    fn constant_driving_point_flow() {
        let a = 0.75;
        let path = DrivingPath::constant(a, 1e-4, 20000, 0.0).unwrap();
        // z = iy₀ sits above the growing slit: g_t(iy₀) = i√(y₀² − 2at)
        let traj = evolve_point(&path, c(0.0, 0.5), 0.1).unwrap();
        let start = traj[0];
        assert_eq!(start.upsilon, 0.5);
        assert_eq!(start.gprime, c(1.0, 0.0));
        assert_eq!(traj.len(), 1001);
        for p in &traj {
            assert!((p.y - (0.25 - 2.0 * a * p.t).sqrt()).abs() < 1e-10);
            assert!(p.x.abs() < 1e-12);
            assert!(p.gprime.im.abs() < 1e-12);
        }
        let real = evolve_point(&path, c(0.7, 0.0), 2.0).unwrap();
        let last = real.last().unwrap();
        assert!(last.alive());
        assert!((last.x - (0.49 + 2.0 * a * 2.0f64).sqrt()).abs() < 1e-10);
        let s = evolve_point(&path, c(0.0, 0.0), 1.0).unwrap();
        assert!(!s[0].alive());
    }

    #[test]
    fn monotone_y_and_upsilon() {
        let path = brownian(0.75, 1e-3, 2000, 3);
        for z in [c(0.5, 0.5), c(-1.0, 2.0), c(0.1, 0.05)] {
            let traj = evolve_point(&path, z, 2.0).unwrap();
            for w in traj.windows(2) {
                if !w[1].alive() {
                    break;
                }
                assert!(w[1].y < w[0].y);
                assert!(w[1].upsilon <= w[0].upsilon * (1.0 + 1e-9));
                assert!((w[1].upsilon - w[1].y / w[1].gprime.norm()).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn conjugate_symmetry() {
        let path = brownian(0.5, 1e-3, 500, 4);
        let z = c(0.4, 0.9);
        let up = evolve_point(&path, z, 0.5).unwrap();
        let down = evolve_point(&path, z.conj(), 0.5).unwrap();
        for (p, q) in up.iter().zip(&down) {
            assert_eq!(p.x, q.x);
            assert_eq!(p.y, -q.y);
            assert_eq!(p.gprime, q.gprime.conj());
            assert_eq!(p.upsilon, q.upsilon);
        }
    }

    #[test]
    fn single_step_matches_slit_map() {
        let chain = SlitMapChain::new(1.0, 0.0, vec![(0.125, 0.0)], StepKind::TiltedSlit)
            .unwrap()
            .with_cutoff(1e-7);
        let z = c(0.3, 0.8);
        let exact = slit_map(&HullSpec::VerticalSlit { x0: 0.0, h: 0.5 }, z).unwrap();
        assert!((chain.forward_map(z).unwrap() - exact).norm() < 1e-13);
        let empty = SlitMapChain::new(1.0, 0.0, vec![], StepKind::TiltedSlit).unwrap();
        assert_eq!(empty.forward_map(z).unwrap(), z);
    }

    #[test]
    fn forward_matches_ode() {
        let path = brownian(1.0, 1e-4, 100, 11);
        let chain = SlitMapChain::from_path(&path, StepKind::TiltedSlit);
        let z = c(0.0, 2.0);
        let ode = evolve_point(&path, z, path.horizon()).unwrap();
        let last = ode.last().unwrap();
        let g = chain.forward_map(z).unwrap();
        let u_t = *path.values.last().unwrap();
        assert!((g - (c(last.x + u_t, last.y))).norm() < 1e-10);
    }

    #[test]
    fn hcap_is_additive() {
        let path = brownian(0.5, 1e-2, 100, 5);
        let chain = SlitMapChain::from_path(&path, StepKind::TiltedSlit);
        assert!((chain.hcap() - 0.5).abs() < 1e-12);
        for r in [30.0, 100.0, 300.0] {
            let z = c(0.0, r);
            let g = chain.forward_map(z).unwrap();
            // g(z) = z + hcap/z + O(z⁻²); the constant term vanishes
            let coeff = ((g - z) * z).re;
            assert!((coeff - chain.hcap()).abs() < 2.0 / r, "R={r}: {coeff}");
        }
    }

    #[test]
    fn reverse_trace_constant() {
        let path = DrivingPath::constant(0.75, 1e-3, 400, 0.3).unwrap();
        let eps = default_tip_eps(&path);
        let tr = reverse_trace(&path, eps).unwrap();
        assert_eq!(tr.points[0], c(0.3, 0.0));
        for (t, z) in tr.times.iter().zip(&tr.points).skip(1) {
            let exact = c(0.3, (2.0 * 0.75 * t).sqrt());
            assert!((z - exact).norm() <= 1e-6 + eps);
        }
        let one = DrivingPath::constant(1.0, 1e-3, 0, 0.2).unwrap();
        assert_eq!(reverse_trace(&one, 1e-3).unwrap().points, vec![c(0.2, 0.0)]);
    }

    #[test]
    fn reverse_forward_duality() {
        let path = DrivingPath::new(
            1.0,
            1e-3,
            (0..=500).map(|k| (k as f64 * 1e-3 * 6.0).sin() * 0.3).collect(),
            Interpolation::SquareRoot,
        )
        .unwrap();
        let eps = 1e-3;
        let tr = reverse_trace(&path, eps).unwrap();
        let chain = SlitMapChain::from_path(&path, StepKind::TiltedSlit).with_cutoff(1e-9);
        let tip = *tr.points.last().unwrap();
        let back = chain.forward_map(tip).unwrap();
        let target = c(*path.values.last().unwrap(), eps);
        assert!((back - target).norm() < 1e-6, "{back} vs {target}");
    }

    #[test]
    fn trace_scaling_covariance() {
        let path = brownian(1.0, 1e-3, 300, 8);
        let r = 2.5;
        let scaled = DrivingPath::new(
            1.0,
            r * r * path.dt,
            path.values.iter().map(|u| r * u).collect(),
            Interpolation::SquareRoot,
        )
        .unwrap();
        let a = reverse_trace_strided(&path, 1e-3, 50).unwrap();
        let b = reverse_trace_strided(&scaled, r * 1e-3, 50).unwrap();
        for (p, q) in a.points.iter().zip(&b.points) {
            assert!((p * r - q).norm() < 1e-9 * (1.0 + q.norm()));
        }
    }

    #[test]
    fn refinement_is_consistent() {
        // driving on a fine grid, and the same Brownian path subsampled
        let fine = brownian(1.0, 2.5e-4, 4000, 21);
        let coarse = DrivingPath::new(
            1.0,
            5e-4,
            fine.values.iter().step_by(2).copied().collect(),
            Interpolation::SquareRoot,
        )
        .unwrap();
        let a = reverse_trace_strided(&fine, 1e-4, 400).unwrap();
        let b = reverse_trace_strided(&coarse, 1e-4, 200).unwrap();
        let worst = a.points.iter().zip(&b.points).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
        // O(√dt) empirically
        assert!(worst < 20.0 * (5e-4f64).sqrt(), "{worst}");
    }

    #[test]
    fn chain_csv_roundtrip() {
        let path = brownian(0.5, 1e-2, 20, 9);
        let chain = SlitMapChain::from_path(&path, StepKind::TiltedSlit);
        let mut buf = Vec::new();
        chain.write_csv(&mut buf).unwrap();
        let back = SlitMapChain::read_csv(0.5, 0.0, std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back.steps, chain.steps);
        assert!(SlitMapChain::read_csv(0.5, 0.0, std::io::Cursor::new(b"x,y\n".to_vec())).is_err());
    }

    #[test]
    fn koebe_bracket() {
        let path = DrivingPath::constant(1.0, 1e-3, 1000, 0.0).unwrap();
        let traj = evolve_point(&path, c(0.0, 3.0), 1.0).unwrap();
        let (lo, hi) = koebe_distance(&traj[0]).unwrap();
        assert_eq!((lo, hi), (0.75, 12.0));
        let mut prev = f64::INFINITY;
        for p in &traj {
            let (lo, hi) = koebe_distance(p).unwrap();
            let dist = 3.0 - (2.0 * p.t).sqrt();
            assert!(lo <= dist && dist <= hi);
            assert!((lo + hi) / 2.0 <= prev);
            prev = (lo + hi) / 2.0;
        }
        let sw = TrackedPoint {
            status: PointStatus::Swallowed { time: 1.0 },
            ..traj[0]
        };
        assert!(koebe_distance(&sw).is_err());
    }

    #[test]
    fn radial_flow_checks() {
        let path = DrivingPath::new(1.0, 1e-3, vec![0.0; 1001], Interpolation::Linear).unwrap();
        let fixed = radial_disk_flow(&path, c(0.0, 0.0), 1.0).unwrap();
        assert!(fixed.values.last().unwrap().norm() < 1e-15);
        assert!((fixed.log_gprime.last().unwrap().re - 1.0).abs() < 1e-8);
        let real = radial_disk_flow(&path, c(-0.4, 0.0), 1.0).unwrap();
        assert!(real.values.iter().all(|v| v.im.abs() < 1e-14));
        assert!(radial_disk_flow(&path, c(1.0, 0.0), 1.0).is_err());
    }

    #[test]
    fn radial_angle_cot_drift() {
        // boundary point e^{2iθ}: h = arg/2 obeys ḣ = ½cot(h − U) for constant U
        let path = DrivingPath::new(1.0, 1e-3, vec![0.0; 201], Interpolation::Linear).unwrap();
        let theta = 1.0;
        let z = C::from_polar(1.0 - 1e-12, 2.0 * theta);
        let tr = radial_disk_flow_with_cutoff(&path, z, 0.2, 0.0).unwrap();
        for k in [50usize, 100, 150] {
            let h = |i: usize| tr.values[i].arg() / 2.0;
            let deriv = (h(k + 1) - h(k - 1)) / (2.0 * path.dt);
            let expect = 0.5 / h(k).tan();
            assert!((deriv - expect).abs() < 1e-4, "{deriv} vs {expect}");
        }
    }

    #[test]
    fn lambda_flow_matches_conjugated_flow() {
        use crate::conformal::{lambda_flow, PowerSeries, SlitZipper};
        // F real-analytic with F(0) = 0, F′(0) = 1.2
        let f = PowerSeries::new(vec![0.0, 1.2, 0.25, -0.1, 0.05, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let lf = lambda_flow(&f).unwrap();
        let dt: f64 = 1e-5;
        // K_t = [0, i√(2t)] (a = 1, U ≡ 0); its image under F, unzipped
        let h = (2.0 * dt).sqrt();
        let pts: Vec<C> = (1..=400).map(|k| f.eval(c(0.0, h * k as f64 / 400.0))).collect();
        let zip = SlitZipper::new(0.0, &pts);
        // ψ_t = g*_t ∘ F ∘ f_t with g*_t the hydrodynamic map of F(K_t)
        for z in [c(0.3, 0.2), c(-0.25, 0.3), c(0.1, 0.4)] {
            let ft = hsqrt(z * z - 2.0 * dt, z.re.signum());
            let psi = zip.apply(f.eval(ft));
            let fd = (psi - f.eval(z)) / dt;
            let expect = lf.eval(z);
            assert!((fd - expect).norm() < 1e-4, "{z}: {fd} vs {expect}");
        }
    }
}
