//! Half-plane maps, kernels, Schwarzian derivative and the ΛF generator.

use crate::error::{domain, Error, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

type C = Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfPlanePoint {
    pub x: f64,
    pub y: f64,
}

impl HalfPlanePoint {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        if !x.is_finite() || !y.is_finite() || y < 0.0 {
            return domain(format!("({x}, {y}) is not in the closed upper half-plane"));
        }
        Ok(Self { x, y })
    }

    pub fn z(&self) -> C {
        C::new(self.x, self.y)
    }
}

/// Square root of `zeta` on the branch continuous in H with w ~ z at
/// infinity: Im w ≥ 0, and on the real axis the sign follows `side`.
pub fn hsqrt(zeta: C, side: f64) -> C {
    let w = zeta.sqrt();
    if w.im < 0.0 || (w.im == 0.0 && w.re * side < 0.0) {
        -w
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HullSpec {
    Empty,
    VerticalSlit {
        x0: f64,
        h: f64,
    },
    HalfDisk {
        x0: f64,
        r: f64,
    },
    /// Straight segment from x0 of length `len` at angle `theta` ∈ (0, π).
    TiltedSlit {
        x0: f64,
        len: f64,
        theta: f64,
    },
}

impl HullSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            HullSpec::Empty => true,
            HullSpec::VerticalSlit { x0, h } => x0.is_finite() && h > 0.0 && h.is_finite(),
            HullSpec::HalfDisk { x0, r } => x0.is_finite() && r > 0.0 && r.is_finite(),
            HullSpec::TiltedSlit { x0, len, theta } => x0.is_finite() && len > 0.0 && len.is_finite() && theta > 0.0 && theta < PI,
        };
        if ok {
            Ok(())
        } else {
            domain(format!("invalid hull {self}"))
        }
    }

    pub fn hcap(&self) -> f64 {
        match *self {
            HullSpec::Empty => 0.0,
            HullSpec::VerticalSlit { h, .. } => h * h / 2.0,
            HullSpec::HalfDisk { r, .. } => r * r,
            HullSpec::TiltedSlit { len, theta, .. } => {
                let al = theta / PI;
                len * len / 2.0 * al.powf(1.0 - 2.0 * al) * (1.0 - al).powf(2.0 * al - 1.0)
            }
        }
    }

    /// Radius of the smallest half-disk centred at `center()` containing the hull.
    pub fn rad(&self) -> f64 {
        match *self {
            HullSpec::Empty => 0.0,
            HullSpec::VerticalSlit { h, .. } => h,
            HullSpec::HalfDisk { r, .. } => r,
            HullSpec::TiltedSlit { len, theta, .. } => {
                // centred at the midpoint of the shadow on ℝ
                let dx = len * theta.cos();
                let tip = C::new(dx / 2.0, len * theta.sin());
                (dx.abs() / 2.0).max(tip.norm())
            }
        }
    }

    pub fn center(&self) -> f64 {
        match *self {
            HullSpec::Empty => 0.0,
            HullSpec::VerticalSlit { x0, .. } | HullSpec::HalfDisk { x0, .. } => x0,
            HullSpec::TiltedSlit { x0, len, theta } => x0 + len * theta.cos() / 2.0,
        }
    }

    /// Euclidean distance from z to the hull (0 inside).
    pub fn distance(&self, z: C) -> f64 {
        match *self {
            HullSpec::Empty => f64::INFINITY,
            HullSpec::VerticalSlit { x0, h } => seg_distance(z, C::new(x0, 0.0), C::new(x0, h)).0,
            HullSpec::HalfDisk { x0, r } => ((z - x0).norm() - r).max(0.0),
            HullSpec::TiltedSlit { x0, len, theta } => seg_distance(z, C::new(x0, 0.0), C::new(x0, 0.0) + C::from_polar(len, theta)).0,
        }
    }

    /// Nearest hull point to z.
    pub fn nearest(&self, z: C) -> C {
        match *self {
            HullSpec::Empty => z,
            HullSpec::VerticalSlit { x0, h } => seg_distance(z, C::new(x0, 0.0), C::new(x0, h)).1,
            HullSpec::HalfDisk { x0, r } => {
                let d = z - x0;
                if d.norm() <= r {
                    z
                } else {
                    x0 + d * (r / d.norm())
                }
            }
            HullSpec::TiltedSlit { x0, len, theta } => seg_distance(z, C::new(x0, 0.0), C::new(x0, 0.0) + C::from_polar(len, theta)).1,
        }
    }

    pub fn contains(&self, z: C) -> bool {
        match *self {
            HullSpec::HalfDisk { x0, r } => (z - x0).norm() < r * (1.0 - 1e-14),
            HullSpec::Empty => false,
            _ => self.distance(z) < 1e-14,
        }
    }

    /// `m` points along the outer boundary, ordered from the left foot to the
    /// right foot, feet excluded. For slits the two sides coincide; the
    /// returned path goes up one side only.
    pub fn boundary_points(&self, m: usize) -> Vec<C> {
        match *self {
            HullSpec::Empty => vec![],
            HullSpec::VerticalSlit { x0, h } => (1..=m).map(|k| C::new(x0, h * k as f64 / m as f64)).collect(),
            HullSpec::HalfDisk { x0, r } => (1..=m)
                .map(|k| x0 + C::from_polar(r, PI * (1.0 - k as f64 / (m + 1) as f64)))
                .collect(),
            HullSpec::TiltedSlit { x0, len, theta } => (1..=m).map(|k| x0 + C::from_polar(len * k as f64 / m as f64, theta)).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> HullSpec {
        match *self {
            HullSpec::Empty => HullSpec::Empty,
            HullSpec::VerticalSlit { x0, h } => HullSpec::VerticalSlit { x0: s * x0, h: s * h },
            HullSpec::HalfDisk { x0, r } => HullSpec::HalfDisk { x0: s * x0, r: s * r },
            HullSpec::TiltedSlit { x0, len, theta } => HullSpec::TiltedSlit {
                x0: s * x0,
                len: s * len,
                theta,
            },
        }
    }
}

fn seg_distance(z: C, p: C, q: C) -> (f64, C) {
    let d = q - p;
    let t = (((z - p) * d.conj()).re / d.norm_sqr()).clamp(0.0, 1.0);
    let near = p + d * t;
    ((z - near).norm(), near)
}

impl fmt::Display for HullSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            HullSpec::Empty => write!(f, "empty"),
            HullSpec::VerticalSlit { x0, h } => write!(f, "slit:{x0},{h}"),
            HullSpec::HalfDisk { x0, r } => write!(f, "halfdisk:{x0},{r}"),
            HullSpec::TiltedSlit { x0, len, theta } => write!(f, "tilt:{x0},{len},{theta}"),
        }
    }
}

impl FromStr for HullSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "empty" {
            return Ok(HullSpec::Empty);
        }
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("hull spec `{s}` lacks `kind:`")))?;
        let nums: Vec<f64> = rest
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("hull spec `{s}`: {e}")))?;
        let hull = match (kind, nums.as_slice()) {
            ("slit", [x0, h]) => HullSpec::VerticalSlit { x0: *x0, h: *h },
            ("halfdisk", [x0, r]) => HullSpec::HalfDisk { x0: *x0, r: *r },
            ("tilt", [x0, l, t]) => HullSpec::TiltedSlit {
                x0: *x0,
                len: *l,
                theta: *t,
            },
            _ => return Err(Error::Config(format!("unrecognised hull spec `{s}`"))),
        };
        hull.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(hull)
    }
}

/// Elementary map for a straight slit from the origin at angle απ.
///
/// The inverse is F(w) = (w−A)^α (w+B)^{1−α} with B = αA/(1−α), so that
/// F(w) = w − hcap/w + O(w⁻²) with hcap = αA²/(2(1−α)).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiltedSlitMap {
    pub alpha: f64,
    pub a: f64,
    pub b: f64,
}

impl TiltedSlitMap {
    pub fn from_hull(len: f64, theta: f64) -> Self {
        let alpha = theta / PI;
        let a = len * alpha.powf(-alpha) * (1.0 - alpha).powf(alpha);
        Self::from_alpha(alpha, a)
    }

    fn from_alpha(alpha: f64, a: f64) -> Self {
        Self {
            alpha,
            a,
            b: alpha * a / (1.0 - alpha),
        }
    }

    /// Map whose hull has capacity `hcap` and whose tip is sent to `du`:
    /// the exact image of driving s ↦ du·√(s/δt) over one capacity step.
    pub fn from_step(hcap: f64, du: f64) -> Self {
        if du == 0.0 {
            return Self::from_alpha(0.5, (2.0 * hcap).sqrt());
        }
        let rho = du * du / (2.0 * hcap);
        let s = 1.0 / (rho + 4.0);
        let root = (1.0 - 4.0 * s).max(0.0).sqrt();
        let alpha = (1.0 - du.signum() * root) / 2.0;
        let a = (2.0 * hcap * (1.0 - alpha) / alpha).sqrt();
        Self::from_alpha(alpha, a)
    }

    pub fn hcap(&self) -> f64 {
        self.alpha * self.a * self.a / (2.0 * (1.0 - self.alpha))
    }

    /// Image of the tip under g.
    pub fn tip_preimage(&self) -> f64 {
        self.a * (1.0 - 2.0 * self.alpha) / (1.0 - self.alpha)
    }

    pub fn tip(&self) -> C {
        self.inverse(C::new(self.tip_preimage(), 0.0))
    }

    /// g on ℝ away from the base: right of the base the image lies beyond A,
    /// left of it below −B; both branches solve a monotone real equation.
    pub fn forward_real(&self, x: f64) -> Result<f64> {
        if x == 0.0 {
            return Err(Error::Domain("tilted slit: base point has two images".into()));
        }
        let (a, b, al) = (self.a, self.b, self.alpha);
        // h(t) = α ln t + (1−α) ln(t + A + B) − ln|x|, t = distance beyond the branch point
        let width = a + b;
        let target = x.abs().ln();
        let (p, q) = if x > 0.0 { (al, 1.0 - al) } else { (1.0 - al, al) };
        let h = |t: f64| p * t.ln() + q * (t + width).ln() - target;
        let (mut lo, mut hi) = (0.0f64, x.abs() + width);
        while h(hi) < 0.0 {
            hi *= 2.0;
        }
        let mut t = 0.5 * hi;
        for _ in 0..200 {
            let v = h(t);
            if v > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            let d = p / t + q / (t + width);
            let mut next = t - v / d;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - t).abs() <= 1e-16 * (1.0 + t) {
                t = next;
                break;
            }
            t = next;
        }
        Ok(if x > 0.0 { a + t } else { -b - t })
    }

    /// f = g⁻¹, closed form. Principal logarithms are continuous on the
    /// closed upper half-plane minus the two branch points.
    pub fn inverse(&self, w: C) -> C {
        let al = self.alpha;
        let l = (w - self.a).ln() * al + (w + self.b).ln() * (1.0 - al);
        l.exp()
    }

    /// (F, F′, F″, F‴) at w.
    pub fn inverse_jet(&self, w: C) -> [C; 4] {
        let al = self.alpha;
        let (u, v) = (w - self.a, w + self.b);
        let f = self.inverse(w);
        let l1 = al / u + (1.0 - al) / v;
        let l2 = -al / (u * u) - (1.0 - al) / (v * v);
        let l3 = 2.0 * al / (u * u * u) + 2.0 * (1.0 - al) / (v * v * v);
        [f, f * l1, f * (l1 * l1 + l2), f * (l1 * l1 * l1 + 3.0 * l1 * l2 + l3)]
    }

    /// g(z): Newton on α log(w−A) + (1−α) log(w+B) = log z, kept in the
    /// closed upper half-plane.
    pub fn forward(&self, z: C) -> Result<C> {
        if z.im == 0.0 {
            return self.forward_real(z.re).map(|x| C::new(x, 0.0));
        }
        let (a, b, al) = (self.a, self.b, self.alpha);
        let half = (a + b) / 2.0;
        let side = if z.re >= 0.0 { 1.0 } else { -1.0 };
        let mut w = (a - b) / 2.0 + hsqrt(z * z + half * half, side);
        let target = z.ln();
        for _ in 0..100 {
            let (u, v) = (w - a, w + b);
            let g = u.ln() * al + v.ln() * (1.0 - al) - target;
            let dg = al / u + (1.0 - al) / v;
            let mut step = g / dg;
            let mut next = w - step;
            let mut tries = 0;
            while next.im < 0.0 && z.im > 0.0 && tries < 60 {
                step *= 0.5;
                next = w - step;
                tries += 1;
            }
            w = next;
            if step.norm() <= 1e-15 * (1.0 + w.norm()) {
                return Ok(w);
            }
        }
        if w.re.is_finite() && w.im.is_finite() {
            Ok(w)
        } else {
            Err(Error::Numerical {
                step: 0,
                detail: format!("tilted-slit inversion failed at {z}"),
            })
        }
    }
}

/// g_K(z) for the hull, hydrodynamically normalized.
pub fn slit_map(hull: &HullSpec, z: C) -> Result<C> {
    hull.validate()?;
    if z.im < 0.0 || !z.re.is_finite() || !z.im.is_finite() {
        return domain(format!("{z} is not in the closed upper half-plane"));
    }
    if hull.contains(z) && !matches!(hull, HullSpec::Empty) {
        // slit points themselves are boundary; only the half-disk has interior
        if matches!(hull, HullSpec::HalfDisk { .. }) {
            return domain(format!("{z} lies inside the hull"));
        }
    }
    Ok(match *hull {
        HullSpec::Empty => z,
        HullSpec::VerticalSlit { x0, h } => {
            let side = if z.re >= x0 { 1.0 } else { -1.0 };
            x0 + hsqrt((z - x0) * (z - x0) + h * h, side)
        }
        HullSpec::HalfDisk { x0, r } => z + r * r / (z - x0),
        HullSpec::TiltedSlit { x0, len, theta } => x0 + TiltedSlitMap::from_hull(len, theta).forward(z - x0)?,
    })
}

/// H_H(x, z) = y/(π((u−x)² + y²)).
pub fn poisson_kernel_h(x: f64, z: HalfPlanePoint) -> Result<f64> {
    if !(z.y > 0.0) {
        return domain("Poisson kernel needs Im z > 0");
    }
    Ok(z.y / (PI * ((z.x - x).powi(2) + z.y * z.y)))
}

/// Poisson kernel of the strip {x>0, 0<y<π} (or the rectangle of the given
/// length, with absorbing far side) at the boundary point iy′.
pub fn excursion_kernel_strip(z: C, y_prime: f64, terms: usize, length: Option<f64>) -> Result<f64> {
    let (x, y) = (z.re, z.im);
    let inside = x > 0.0 && y > 0.0 && y < PI && length.is_none_or(|l| x < l);
    if !inside || !(y_prime > 0.0 && y_prime < PI) {
        return domain(format!("{z} is not inside the strip"));
    }
    let mut s = 0.0;
    for n in 1..=terms {
        let nf = n as f64;
        let radial = match length {
            None => (-nf * x).exp(),
            // sinh(n(L−x))/sinh(nL) written to avoid overflow
            Some(l) => {
                let num = (-nf * x).exp() * (1.0 - (-2.0 * nf * (l - x)).exp());
                num / (1.0 - (-2.0 * nf * l).exp())
            }
        };
        let t = radial * (nf * y).sin() * (nf * y_prime).sin();
        s += t;
        if radial < 1e-18 {
            break;
        }
    }
    Ok(2.0 / PI * s)
}

/// Maps that can report (f, f′, f″, f‴).
pub trait Analytic {
    fn jet(&self, z: C) -> Result<[C; 4]>;

    fn eval(&self, z: C) -> Result<C> {
        Ok(self.jet(z)?[0])
    }
}

/// z ↦ (az + b)/(cz + d).
#[derive(Debug, Clone, Copy)]
pub struct Mobius {
    pub a: C,
    pub b: C,
    pub c: C,
    pub d: C,
}

impl Analytic for Mobius {
    fn jet(&self, z: C) -> Result<[C; 4]> {
        let den = self.c * z + self.d;
        if den.norm() == 0.0 {
            return Err(Error::Singular(format!("pole at {z}")));
        }
        let det = self.a * self.d - self.b * self.c;
        let f1 = det / (den * den);
        let f2 = -2.0 * self.c * f1 / den;
        let f3 = 6.0 * self.c * self.c * f1 / (den * den);
        Ok([(self.a * z + self.b) / den, f1, f2, f3])
    }
}

/// Derivatives of a map known only pointwise, by 5-point stencils. The
/// first two use h = 1e-5·max(1, |z|); the third derivative uses a wider
/// step 1e-3·max(1, |z|), since roundoff grows like ε/h³.
pub struct Numeric<F>(pub F);

impl<F: Fn(C) -> C> Analytic for Numeric<F> {
    fn jet(&self, z: C) -> Result<[C; 4]> {
        let scale = z.norm().max(1.0);
        let stencil = |h: f64| {
            let f = |k: f64| (self.0)(z + h * k);
            (f(-2.0), f(-1.0), f(0.0), f(1.0), f(2.0))
        };
        let h = 1e-5 * scale;
        let (m2, m1, p0, p1, p2) = stencil(h);
        let d1 = (m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * h);
        let d2 = (-m2 + 16.0 * m1 - 30.0 * p0 + 16.0 * p1 - p2) / (12.0 * h * h);
        let h3 = 1e-3 * scale;
        let (m2, m1, _, p1, p2) = stencil(h3);
        let d3 = (-m2 + 2.0 * m1 - 2.0 * p1 + p2) / (2.0 * h3 * h3 * h3);
        Ok([p0, d1, d2, d3])
    }
}

pub fn schwarzian<F: Analytic + ?Sized>(f: &F, z: C) -> Result<C> {
    let [_, f1, f2, f3] = f.jet(z)?;
    if f1.norm() < 1e-300 {
        return Err(Error::Singular(format!("f'({z}) = 0")));
    }
    let r = f2 / f1;
    Ok(f3 / f1 - 1.5 * r * r)
}

/// Truncated real power series F(z) = Σ q_n zⁿ (plain coefficients).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSeries {
    pub coeffs: Vec<f64>,
}

impl PowerSeries {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    pub fn order(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn eval(&self, z: C) -> C {
        self.coeffs.iter().rev().fold(C::new(0.0, 0.0), |acc, &c| acc * z + c)
    }

    pub fn derivative(&self) -> PowerSeries {
        PowerSeries::new(self.coeffs.iter().enumerate().skip(1).map(|(n, c)| n as f64 * c).collect())
    }

    /// Reciprocal series to the same order; needs a nonzero constant term.
    pub fn reciprocal(&self) -> Result<PowerSeries> {
        let c0 = *self.coeffs.first().unwrap_or(&0.0);
        if c0 == 0.0 {
            return Err(Error::Singular("reciprocal of series with zero constant term".into()));
        }
        let n = self.coeffs.len();
        let mut inv = vec![0.0; n];
        inv[0] = 1.0 / c0;
        for k in 1..n {
            let s: f64 = (1..=k).map(|j| self.coeffs[j] * inv[k - j]).sum();
            inv[k] = -s / c0;
        }
        Ok(PowerSeries::new(inv))
    }
}

impl Analytic for PowerSeries {
    fn jet(&self, z: C) -> Result<[C; 4]> {
        let d1 = self.derivative();
        let d2 = d1.derivative();
        let d3 = d2.derivative();
        Ok([self.eval(z), d1.eval(z), d2.eval(z), d3.eval(z)])
    }
}

/// ΛF(z) = F′(0)²/(F(z) − F(0)) − F′(z)/z, by series division.
///
/// Writing F − F(0) = z·G(z), ΛF = (q₁²/G − F′)/z and the numerator has zero
/// constant term, so the result has order N − 2.
pub fn lambda_flow(f: &PowerSeries) -> Result<PowerSeries> {
    let q = &f.coeffs;
    if q.len() < 3 {
        return domain("lambda_flow needs a series of order at least 2");
    }
    let q1 = q[1];
    if !(q1 > 0.0) {
        return domain(format!("lambda_flow needs q1 > 0, got {q1}"));
    }
    let n = q.len() - 1;
    let g = PowerSeries::new(q[1..].to_vec());
    let inv = g.reciprocal()?;
    let num: Vec<f64> = (0..n).map(|k| q1 * q1 * inv.coeffs[k] - (k + 1) as f64 * q[k + 1]).collect();
    Ok(PowerSeries::new(num[1..].to_vec()))
}

/// Conformal map of H minus a hull onto H, normalized Φ(z) = z + o(1).
#[derive(Debug, Clone, Copy)]
pub struct DomainMap {
    pub hull: HullSpec,
}

pub fn hull_domain_map(hull: HullSpec) -> Result<DomainMap> {
    hull.validate()?;
    Ok(DomainMap { hull })
}

impl DomainMap {
    pub fn phi_prime(&self, z: C) -> Result<C> {
        Ok(self.jet(z)?[1])
    }

    pub fn schwarzian(&self, z: C) -> Result<C> {
        schwarzian(self, z)
    }
}

impl Analytic for DomainMap {
    fn jet(&self, z: C) -> Result<[C; 4]> {
        if self.hull.distance(z) <= 0.0 {
            return domain(format!("{z} lies in the hull closure"));
        }
        let one = C::new(1.0, 0.0);
        let zero = C::new(0.0, 0.0);
        Ok(match self.hull {
            HullSpec::Empty => [z, one, zero, zero],
            HullSpec::HalfDisk { x0, r } => {
                let u = z - x0;
                let r2 = r * r;
                [z + r2 / u, one - r2 / (u * u), 2.0 * r2 / (u * u * u), -6.0 * r2 / (u * u * u * u)]
            }
            HullSpec::VerticalSlit { x0, h } => {
                let u = z - x0;
                let side = if z.re >= x0 { 1.0 } else { -1.0 };
                let s = hsqrt(u * u + h * h, side);
                let h2 = h * h;
                [x0 + s, u / s, h2 / (s * s * s), -3.0 * h2 * u / (s * s * s * s * s)]
            }
            HullSpec::TiltedSlit { x0, len, theta } => {
                let m = TiltedSlitMap::from_hull(len, theta);
                let w = m.forward(z - x0)?;
                let [_, f1, f2, f3] = m.inverse_jet(w);
                let g1 = one / f1;
                let g2 = -f2 / (f1 * f1 * f1);
                let g3 = (3.0 * f2 * f2 - f1 * f3) / f1.powi(5);
                [x0 + w, g1, g2, g3]
            }
        })
    }
}

/// Γ_H(0, H∖hull) = −SΦ(0)/6 for hulls with closed-form maps.
pub fn bubble_schwarzian(hull: &HullSpec) -> Result<f64> {
    let m = hull_domain_map(*hull)?;
    if matches!(hull, HullSpec::TiltedSlit { .. }) {
        return Err(Error::Unsupported("bubble_schwarzian: tilted slits have no closed-form Φ".into()));
    }
    let zero = C::new(0.0, 0.0);
    if hull.distance(zero) <= 0.0 {
        return domain("hull touches 0");
    }
    Ok(-m.schwarzian(zero)?.re / 6.0)
}

/// Real 3-jet (value and three derivatives) for chaining maps along ℝ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet3 {
    pub v: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

impl Jet3 {
    pub fn identity(x: f64) -> Self {
        Self {
            v: x,
            d1: 1.0,
            d2: 0.0,
            d3: 0.0,
        }
    }

    /// Composition: `outer` evaluated at self.v, chained by Faà di Bruno.
    pub fn then(self, outer: Jet3) -> Jet3 {
        let (g1, g2, g3) = (self.d1, self.d2, self.d3);
        Jet3 {
            v: outer.v,
            d1: outer.d1 * g1,
            d2: outer.d2 * g1 * g1 + outer.d1 * g2,
            d3: outer.d3 * g1 * g1 * g1 + 3.0 * outer.d2 * g1 * g2 + outer.d1 * g3,
        }
    }

    pub fn schwarzian(&self) -> f64 {
        self.d3 / self.d1 - 1.5 * (self.d2 / self.d1).powi(2)
    }
}

/// Zipper for a curve from a real base point through `points`: the
/// composition of vertical-slit maps z ↦ c + √((z−c)² + y²) where c + iy is
/// the current image of the next point. The resulting map is the exact
/// conformal map of a curve interpolating the points.
#[derive(Debug, Clone)]
pub struct SlitZipper {
    steps: Vec<(f64, f64)>,
    /// Optional final half-disk removal (centre, radius).
    closing: Option<(f64, f64)>,
}

impl SlitZipper {
    pub fn new(base: f64, points: &[C]) -> Self {
        let mut images: Vec<C> = points.iter().map(|p| p - base).collect();
        let mut steps = Vec::with_capacity(points.len());
        let mut shift = base;
        for k in 0..images.len() {
            let p = images[k];
            let (c, y) = (p.re, p.im.max(0.0));
            steps.push((c + shift, y));
            for q in images.iter_mut().skip(k + 1) {
                let side = if q.re >= c { 1.0 } else { -1.0 };
                *q = c + hsqrt((*q - c) * (*q - c) + y * y, side);
            }
            let _ = &mut shift;
        }
        let _ = &mut shift;
        Self { steps, closing: None }
    }

    /// Zipper for the boundary of a hull attached to ℝ at `left` and `right`,
    /// with interior boundary points `points` ordered from left to right;
    /// the last arc is removed by a half-disk step.
    pub fn for_hull(left: f64, points: &[C], right: f64) -> Self {
        let mut z = SlitZipper::new(left, points);
        let tip = z.apply_real_or_complex(C::new(right, 0.0));
        let tip_img = z.steps.last().map(|s| s.0).unwrap_or(left);
        let (lo, hi) = (tip_img.min(tip.re), tip_img.max(tip.re));
        z.closing = Some(((lo + hi) / 2.0, (hi - lo) / 2.0));
        z
    }

    fn apply_real_or_complex(&self, z: C) -> C {
        let mut w = z;
        for &(c, y) in &self.steps {
            let side = if w.re >= c { 1.0 } else { -1.0 };
            w = c + hsqrt((w - c) * (w - c) + y * y, side);
        }
        w
    }

    pub fn apply(&self, z: C) -> C {
        let w = self.apply_real_or_complex(z);
        match self.closing {
            Some((c, r)) if r > 0.0 => w + r * r / (w - c),
            _ => w,
        }
    }

    /// Value and derivatives along ℝ at a point to the left of every step.
    pub fn jet_real(&self, x: f64) -> Jet3 {
        let mut j = Jet3::identity(x);
        for &(c, y) in &self.steps {
            let u = j.v - c;
            let r = (u * u + y * y).sqrt();
            let s = u.signum();
            let outer = Jet3 {
                v: c + s * r,
                d1: u.abs() / r,
                d2: s * y * y / (r * r * r),
                d3: -3.0 * u.abs() * y * y / r.powi(5),
            };
            j = j.then(outer);
        }
        if let Some((c, r)) = self.closing {
            if r > 0.0 {
                let u = j.v - c;
                let r2 = r * r;
                let outer = Jet3 {
                    v: j.v + r2 / u,
                    d1: 1.0 - r2 / (u * u),
                    d2: 2.0 * r2 / (u * u * u),
                    d3: -6.0 * r2 / (u * u * u * u),
                };
                j = j.then(outer);
            }
        }
        j
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(x: f64, y: f64) -> C {
        C::new(x, y)
    }

    #[test]
    fn vertical_slit_closed_form() {
        let h = 0.7;
        let hull = HullSpec::VerticalSlit { x0: 0.0, h };
        for z in [c(0.3, 0.2), c(-2.0, 1.0), c(0.0, 3.0)] {
            let g = slit_map(&hull, z).unwrap();
            assert!((g * g - (z * z + h * h)).norm() < 1e-12);
            assert!(g.im > 0.0);
        }
        // both sides of the slit land on ℝ, on opposite sides
        let l = slit_map(&hull, c(-1e-300, 0.5)).unwrap();
        let r = slit_map(&hull, c(1e-300, 0.5)).unwrap();
        assert!(l.im.abs() < 1e-12 && r.im.abs() < 1e-12);
        assert!(l.re < 0.0 && r.re > 0.0);
    }

    #[test]
    fn half_disk_map() {
        let g = slit_map(&HullSpec::HalfDisk { x0: 0.0, r: 1.0 }, c(0.0, 2.0)).unwrap();
        assert!((g - (c(0.0, 2.0) + 1.0 / c(0.0, 2.0))).norm() < 1e-15);
        assert!(slit_map(&HullSpec::HalfDisk { x0: 0.0, r: 1.0 }, c(0.1, 0.1)).is_err());
        // circle maps to the real segment
        for t in [0.2, 1.0, 2.5] {
            let g = slit_map(&HullSpec::HalfDisk { x0: 0.0, r: 1.0 }, C::from_polar(1.0, t)).unwrap();
            assert!(g.im.abs() < 1e-12);
        }
    }

    fn hulls() -> Vec<HullSpec> {
        vec![
            HullSpec::VerticalSlit { x0: 0.2, h: 0.8 },
            HullSpec::HalfDisk { x0: -0.3, r: 0.6 },
            HullSpec::TiltedSlit {
                x0: 0.1,
                len: 0.9,
                theta: 1.0,
            },
            HullSpec::TiltedSlit {
                x0: 0.0,
                len: 0.5,
                theta: 2.4,
            },
        ]
    }

    #[test]
    fn normalization_at_infinity() {
        for hull in hulls() {
            let rad = hull.rad() + (hull.center()).abs();
            let mut worst: f64 = 0.0;
            for r in [4.0, 8.0, 16.0, 32.0] {
                let big = r * rad;
                let z = c(0.0, big);
                let g = slit_map(&hull, z).unwrap();
                let err = (g - z - hull.hcap() / z).norm();
                worst = worst.max(err * big * big / (hull.hcap() * rad));
            }
            assert!(worst < 10.0, "{hull}: fitted C = {worst}");
        }
    }

    #[test]
    fn tilted_slit_geometry() {
        let m = TiltedSlitMap::from_hull(0.9, 1.0);
        let tip = m.tip();
        assert!((tip - C::from_polar(0.9, 1.0)).norm() < 1e-12);
        let h = HullSpec::TiltedSlit {
            x0: 0.0,
            len: 0.9,
            theta: 1.0,
        };
        assert!((m.hcap() - h.hcap()).abs() < 1e-12);
        // forward ∘ inverse = id
        for w in [c(0.3, 0.4), c(-3.0, 0.1), c(2.0, 5.0)] {
            let z = m.inverse(w);
            assert!((m.forward(z).unwrap() - w).norm() < 1e-11);
        }
        // both slit sides map to ℝ
        for s in [0.2, 0.5, 0.8] {
            let p = C::from_polar(0.9 * s, 1.0);
            let n = C::from_polar(1e-9, 1.0 + PI / 2.0);
            for side in [n, -n] {
                assert!(m.forward(p + side).unwrap().im.abs() < 1e-6);
            }
        }
    }

    #[test]
    fn tilted_from_step() {
        for (h, du) in [(0.01, 0.05), (0.01, -0.3), (1.0, 0.0), (2e-4, 1e-2)] {
            let m = TiltedSlitMap::from_step(h, du);
            assert!((m.hcap() - h).abs() < 1e-12 * h.max(1.0));
            assert!((m.tip_preimage() - du).abs() < 1e-12);
        }
    }

    #[test]
    fn hcap_ordering() {
        let slit = HullSpec::VerticalSlit { x0: 0.0, h: 0.9 };
        let disk = HullSpec::HalfDisk { x0: 0.0, r: 1.0 };
        assert!(slit.hcap() <= disk.hcap());
        for hull in hulls() {
            let rad = hull.rad();
            assert!(hull.hcap() <= rad * rad + 1e-12, "{hull}");
        }
        let h = HullSpec::HalfDisk { x0: 1.0, r: 0.5 };
        assert!((h.scaled(3.0).hcap() - 9.0 * h.hcap()).abs() < 1e-12);
    }

    #[test]
    fn parse_roundtrip() {
        for s in ["slit:0,0.5", "halfdisk:2,0.5", "tilt:0,1,0.785"] {
            let h: HullSpec = s.parse().unwrap();
            assert_eq!(h.to_string().parse::<HullSpec>().unwrap(), h);
        }
        assert!("disk:0,1".parse::<HullSpec>().is_err());
        assert!("slit:0".parse::<HullSpec>().is_err());
        assert!("halfdisk:0,-1".parse::<HullSpec>().is_err());
    }

    #[test]
    fn poisson_examples() {
        let p = |x, y| HalfPlanePoint::new(x, y).unwrap();
        assert!((poisson_kernel_h(0.0, p(0.0, 1.0)).unwrap() - 1.0 / PI).abs() < 1e-15);
        assert!((poisson_kernel_h(0.0, p(1.0, 1.0)).unwrap() - 0.5 / PI).abs() < 1e-15);
        let total = crate::quad::integrate(
            |t: f64| {
                let u = t.tan();
                poisson_kernel_h(0.0, p(u, 0.7)).unwrap() / t.cos().powi(2)
            },
            -PI / 2.0 + 1e-9,
            PI / 2.0 - 1e-9,
            1e-12,
        );
        assert!((total - 1.0).abs() < 1e-8);
        assert!(poisson_kernel_h(0.0, p(0.0, 0.0)).is_err());
    }

    #[test]
    fn strip_kernel_symmetry_and_first_mode() {
        let v = excursion_kernel_strip(c(0.4, 1.0), 0.7, 200, None).unwrap();
        let w = excursion_kernel_strip(c(0.4, PI - 1.0), PI - 0.7, 200, None).unwrap();
        assert!((v - w).abs() < 1e-12);
        let hi = excursion_kernel_strip(c(12.0, 1.0), PI / 2.0, 50, None).unwrap();
        let lo = excursion_kernel_strip(c(12.0, 1.0), PI / 4.0, 50, None).unwrap();
        assert!((hi / lo - 2f64.sqrt()).abs() < 1e-3);
        assert!(excursion_kernel_strip(c(-1.0, 1.0), 1.0, 10, None).is_err());
    }

    /// Discrete harmonic measure on a grid over the square [0,π]², solved by
    /// SOR: the exact expectation of the simple random walk exit.
    #[test]
    fn strip_kernel_vs_random_walk() {
        let n = 200usize;
        let h = PI / n as f64;
        let jp = n / 3; // boundary site iy′ on the left edge
        let mut u = vec![0.0f64; (n + 1) * (n + 1)];
        let idx = |i: usize, j: usize| i * (n + 1) + j;
        let omega = 2.0 / (1.0 + (PI / n as f64).sin());
        for _ in 0..3000 {
            let mut delta: f64 = 0.0;
            for i in 1..n {
                for j in 1..n {
                    let left = if i == 1 {
                        if j == jp {
                            1.0
                        } else {
                            0.0
                        }
                    } else {
                        u[idx(i - 1, j)]
                    };
                    let nb = left + u[idx(i + 1, j)] + u[idx(i, j - 1)] + u[idx(i, j + 1)];
                    let new = u[idx(i, j)] + omega * (nb / 4.0 - u[idx(i, j)]);
                    delta = delta.max((new - u[idx(i, j)]).abs());
                    u[idx(i, j)] = new;
                }
            }
            if delta < 1e-15 {
                break;
            }
        }
        for (i, j) in [(30, 80), (60, 100), (20, 40)] {
            let z = c(i as f64 * h, j as f64 * h);
            let k = excursion_kernel_strip(z, jp as f64 * h, 2000, Some(PI)).unwrap() * h;
            let rw = u[idx(i, j)];
            assert!((rw / k - 1.0).abs() < 0.02, "({i},{j}): rw {rw} kernel {k}");
        }
    }

    #[test]
    fn schwarzian_of_mobius_vanishes() {
        let m = Mobius {
            a: c(2.0, 1.0),
            b: c(0.5, 0.0),
            c: c(0.3, -0.2),
            d: c(1.0, 0.0),
        };
        assert!(schwarzian(&m, c(0.4, 0.9)).unwrap().norm() < 1e-12);
        let num = Numeric(|z: C| (2.0 * z + 0.5) / (0.3 * z + 1.0));
        assert!(schwarzian(&num, c(0.4, 0.9)).unwrap().norm() < 1e-4);
    }

    #[test]
    fn half_disk_schwarzian_closed_form() {
        let (x0, r): (f64, f64) = (2.0, 0.5);
        let rho = r * r / (x0 * x0);
        let exact = -6.0 * (r * r / x0.powi(4) / (1.0 - rho) + r.powi(4) / x0.powi(6) / (1.0 - rho).powi(2));
        let m = hull_domain_map(HullSpec::HalfDisk { x0, r }).unwrap();
        let s = m.schwarzian(c(0.0, 0.0)).unwrap();
        assert!((s.re - exact).abs() < 1e-14);
        let fd = Numeric(|z: C| z + r * r / (z - x0));
        assert!((schwarzian(&fd, c(0.0, 0.0)).unwrap().re - exact).abs() < 1e-5);
        assert!((m.phi_prime(c(0.0, 0.0)).unwrap().re - 15.0 / 16.0).abs() < 1e-15);
        assert!(bubble_schwarzian(&HullSpec::HalfDisk { x0, r }).unwrap() > 0.0);
        assert_eq!(bubble_schwarzian(&HullSpec::Empty).unwrap(), 0.0);
    }

    #[test]
    fn domain_map_derivative_bounds() {
        for hull in [
            HullSpec::Empty,
            HullSpec::VerticalSlit { x0: 1.0, h: 0.5 },
            HullSpec::HalfDisk { x0: -1.5, r: 1.0 },
            HullSpec::TiltedSlit {
                x0: 0.5,
                len: 0.4,
                theta: 0.6,
            },
        ] {
            let m = hull_domain_map(hull).unwrap();
            let d = m.phi_prime(c(0.0, 0.0)).unwrap();
            assert!(d.re > 0.0 && d.re <= 1.0 + 1e-12 && d.im.abs() < 1e-9, "{hull}: {d}");
        }
        // tilted slit jet agrees with finite differences
        let m = hull_domain_map(HullSpec::TiltedSlit {
            x0: 0.5,
            len: 0.4,
            theta: 0.6,
        })
        .unwrap();
        let fd = Numeric(|z: C| m.eval(z).unwrap());
        let z = c(-0.3, 0.2);
        let (a, b) = (m.jet(z).unwrap(), fd.jet(z).unwrap());
        for k in 1..4 {
            assert!((a[k] - b[k]).norm() < 1e-3 * (1.0 + a[k].norm()), "k={k}");
        }
    }

    #[test]
    fn lambda_flow_examples() {
        let id = PowerSeries::new(vec![0.0, 1.0, 0.0, 0.0, 0.0]);
        assert!(lambda_flow(&id).unwrap().coeffs.iter().all(|c| c.abs() < 1e-15));
        assert!(lambda_flow(&PowerSeries::new(vec![0.0, -1.0, 1.0])).is_err());
    }

    #[test]
    fn lambda_flow_matches_factorial_lemma() {
        // F = Σ q_n zⁿ/n! with q1 = 1.3
        let (q0, q1, q2, q3, q4) = (0.2, 1.3, 0.7, -0.4, 0.9);
        let f = PowerSeries::new(vec![q0, q1, q2 / 2.0, q3 / 6.0, q4 / 24.0, 0.0, 0.0]);
        let l = lambda_flow(&f).unwrap();
        assert!((l.coeffs[0] + 1.5 * q2).abs() < 1e-12);
        assert!((l.coeffs[1] - (q2 * q2 / (4.0 * q1) - 2.0 * q3 / 3.0)).abs() < 1e-12);
        let c2 = q2 * q3 / (6.0 * q1) - 5.0 * q4 / 24.0 - q2.powi(3) / (8.0 * q1 * q1);
        assert!((l.coeffs[2] - c2).abs() < 1e-12);
    }

    #[test]
    fn zipper_reproduces_vertical_slit() {
        let pts: Vec<C> = (1..=40).map(|k| c(0.3, 0.02 * k as f64)).collect();
        let z = SlitZipper::new(0.3, &pts);
        let exact = slit_map(&HullSpec::VerticalSlit { x0: 0.3, h: 0.8 }, c(1.0, 0.5)).unwrap();
        assert!((z.apply(c(1.0, 0.5)) - exact).norm() < 1e-12);
    }

    #[test]
    fn zipper_half_disk_jet() {
        let (x0, r) = (2.0, 0.5);
        let hull = HullSpec::HalfDisk { x0, r };
        let pts = hull.boundary_points(400);
        let z = SlitZipper::for_hull(x0 - r, &pts, x0 + r);
        let j = z.jet_real(0.0);
        let m = hull_domain_map(hull).unwrap();
        let e = m.jet(c(0.0, 0.0)).unwrap();
        assert!((j.d1 - e[1].re).abs() < 1e-4, "{} vs {}", j.d1, e[1].re);
        assert!((j.schwarzian() - m.schwarzian(c(0.0, 0.0)).unwrap().re).abs() < 1e-3);
    }

    proptest! {
        #[test]
        fn lambda_flow_value_and_scaling(q in proptest::collection::vec(-1.0f64..1.0, 6), q1 in 0.2f64..2.0, r in 0.2f64..3.0, s in -1.0f64..1.0) {
            let mut coeffs = q.clone();
            coeffs[1] = q1;
            let f = PowerSeries::new(coeffs.clone());
            let l = lambda_flow(&f).unwrap();
            prop_assert!((l.coeffs[0] + 1.5 * 2.0 * coeffs[2]).abs() < 1e-10);
            let mut scaled: Vec<f64> = coeffs.iter().map(|c| r * c).collect();
            scaled[0] += s;
            let ls = lambda_flow(&PowerSeries::new(scaled)).unwrap();
            for (a, b) in ls.coeffs.iter().zip(&l.coeffs) {
                prop_assert!((a - r * b).abs() < 1e-8 * (1.0 + b.abs()));
            }
        }

        #[test]
        fn schwarzian_cocycle(x in -1.0f64..1.0, y in 0.1f64..1.0, br in -1.0f64..1.0, cr in 0.0f64..0.5) {
            let z = C::new(x, y);
            let g = Mobius { a: C::new(1.0, 0.0), b: C::new(br, 0.0), c: C::new(cr, 0.0), d: C::new(1.0, 0.0) };
            let f = hull_domain_map(HullSpec::HalfDisk { x0: 3.0, r: 0.5 }).unwrap();
            let gz = g.eval(z).unwrap();
            prop_assume!(f.hull.distance(gz) > 0.05);
            let g1 = g.jet(z).unwrap()[1];
            let comp = Numeric(|w: C| f.eval(g.eval(w).unwrap()).unwrap());
            let lhs = schwarzian(&comp, z).unwrap();
            let rhs = f.schwarzian(gz).unwrap() * g1 * g1;
            prop_assert!((lhs - rhs).norm() < 1e-3 * (1.0 + rhs.norm()));
        }

        #[test]
        fn slit_map_real_boundary(x in -3.0f64..3.0) {
            for hull in hulls() {
                prop_assume!(hull.distance(C::new(x, 0.0)) > 1e-6);
                let g = slit_map(&hull, C::new(x, 0.0)).unwrap();
                prop_assert!(g.im.abs() < 1e-12);
            }
        }
    }
}
