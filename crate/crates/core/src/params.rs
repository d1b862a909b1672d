//! Closed-form parameters, exponents and special functions.
//!
//! Everything below `derive_params` is written in terms of `a = 2/κ`.

use crate::error::{domain, Result};
use crate::quad;
use num_complex::Complex64;
use num_rational::Rational64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SleParams {
    pub kappa: f64,
    pub a: f64,
    pub b: f64,
    pub btilde: f64,
    pub bhat: f64,
    pub c_central: f64,
    pub d_dim: f64,
}

pub fn derive_params(kappa: f64) -> Result<SleParams> {
    if !kappa.is_finite() || kappa <= 0.0 {
        return domain(format!("kappa must be positive and finite, got {kappa}"));
    }
    let a = 2.0 / kappa;
    // (6-κ)/(2κ) rather than (3a-1)/2 so that κ=6 gives b = 0 exactly.
    let b = (6.0 - kappa) / (2.0 * kappa);
    let btilde = b * (kappa - 2.0) / 4.0;
    let c_central = (6.0 - kappa) * (3.0 * kappa - 8.0) / (2.0 * kappa);
    let d_dim = if kappa <= 8.0 { 1.0 + kappa / 8.0 } else { 2.0 };
    Ok(SleParams {
        kappa,
        a,
        b,
        btilde,
        bhat: 2.0 - d_dim,
        c_central,
        d_dim,
    })
}

/// Same table computed in exact rational arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExactParams {
    pub kappa: Rational64,
    pub a: Rational64,
    pub b: Rational64,
    pub btilde: Rational64,
    pub bhat: Rational64,
    pub c_central: Rational64,
    pub d_dim: Rational64,
}

pub fn derive_params_exact(kappa: Rational64) -> Result<ExactParams> {
    let zero = Rational64::from_integer(0);
    if kappa <= zero {
        return domain("kappa must be positive");
    }
    let one = Rational64::from_integer(1);
    let two = Rational64::from_integer(2);
    let a = two / kappa;
    let b = (Rational64::from_integer(3) * a - one) / two;
    let btilde = b * (one - a) / (two * a);
    let c_central = two * b * (Rational64::from_integer(3) - Rational64::from_integer(4) * a) / a;
    let d_dim = if kappa <= Rational64::from_integer(8) {
        one + kappa / Rational64::from_integer(8)
    } else {
        two
    };
    Ok(ExactParams {
        kappa,
        a,
        b,
        btilde,
        bhat: two - d_dim,
        c_central,
        d_dim,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelRow {
    pub model: &'static str,
    pub kappa: Rational64,
    pub a: Rational64,
    pub b: Rational64,
    pub btilde: Rational64,
    pub c_central: Rational64,
    pub d_dim: Rational64,
}

/// Discrete models and their conjectured or proved κ.
pub const MODEL_KAPPAS: [(&str, i64, i64); 6] = [
    ("loop-erased walk", 2, 1),
    ("self-avoiding walk", 8, 3),
    ("Ising interface", 3, 1),
    ("harmonic explorer / free field", 4, 1),
    ("percolation", 6, 1),
    ("uniform spanning tree", 8, 1),
];

pub fn model_table() -> Vec<ModelRow> {
    MODEL_KAPPAS
        .iter()
        .map(|&(model, n, d)| {
            let p = derive_params_exact(Rational64::new(n, d)).expect("positive kappa");
            ModelRow {
                model,
                kappa: p.kappa,
                a: p.a,
                b: p.b,
                btilde: p.btilde,
                c_central: p.c_central,
                d_dim: p.d_dim,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    Plus,
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentValue {
    pub lambda: f64,
    pub q_plus: f64,
    pub q_minus: f64,
    pub lambda0: f64,
}

impl ExponentValue {
    pub fn new(lambda: f64, a: f64) -> Result<Self> {
        Ok(Self {
            lambda,
            q_plus: q_exponent(lambda, a, Branch::Plus)?,
            q_minus: q_exponent(lambda, a, Branch::Minus)?,
            lambda0: lambda0(a),
        })
    }
}

pub fn lambda0(a: f64) -> f64 {
    -(2.0 * a - 1.0).powi(2) / (8.0 * a)
}

fn check_a(a: f64) -> Result<()> {
    if !a.is_finite() || a <= 0.0 {
        return domain(format!("a must be positive, got {a}"));
    }
    Ok(())
}

/// Roots of q² + (2a−1)q − 2aλ = 0.
pub fn q_exponent(lambda: f64, a: f64, branch: Branch) -> Result<f64> {
    check_a(a)?;
    let disc = (2.0 * a - 1.0).powi(2) + 8.0 * a * lambda;
    let scale = (2.0 * a - 1.0).powi(2).max(8.0 * a * lambda.abs()).max(1.0);
    if disc < -1e-14 * scale || !lambda.is_finite() {
        return domain(format!("lambda {lambda} below lambda0 {}", lambda0(a)));
    }
    let s = disc.max(0.0).sqrt();
    Ok(match branch {
        Branch::Plus => (1.0 - 2.0 * a + s) / 2.0,
        Branch::Minus => (1.0 - 2.0 * a - s) / 2.0,
    })
}

pub fn q(lambda: f64, a: f64) -> Result<f64> {
    q_exponent(lambda, a, Branch::Plus)
}

pub fn q_inverse(y: f64, a: f64) -> f64 {
    (y * y + (2.0 * a - 1.0) * y) / (2.0 * a)
}

/// ξ̃(λ₁,…,λₙ) = q⁻¹(Σ q(λᵢ)).
pub fn chordal_crossing_exponent(lambdas: &[f64], a: f64) -> Result<f64> {
    if lambdas.is_empty() {
        return domain("empty exponent list");
    }
    let mut s = 0.0;
    for &l in lambdas {
        s += q(l, a)?;
    }
    Ok(q_inverse(s, a))
}

/// ξ̃ of n copies of b.
pub fn xi_tilde_n(n: u32, a: f64) -> f64 {
    let n = n as f64;
    (a * n * n + (2.0 * a - 1.0) * n) / 2.0
}

/// q(λ₁, λ₂) = q₁ + q₂ + q₁q₂/a, the exponent of the two-sided boundary moment.
pub fn two_sided_q(l1: f64, l2: f64, a: f64) -> Result<f64> {
    let q1 = q(l1, a)?;
    let q2 = q(l2, a)?;
    Ok(q1 + q2 + q1 * q2 / a)
}

/// β(λ) = λ/2 + q(λ)/(4a); the radial moment decays like e^{−2aβt}.
pub fn radial_beta(lambda: f64, a: f64) -> Result<f64> {
    Ok(lambda / 2.0 + q(lambda, a)? / (4.0 * a))
}

/// Positive root r of r² + r(2a−1) − 2aλ = 0 and the rate k = aλ + r/2,
/// so that e^{kt} sin^r Ψ_t J_t^λ is a local martingale.
pub fn radial_martingale_exponents(lambda: f64, a: f64) -> Result<(f64, f64)> {
    let r = q(lambda, a)?;
    Ok((r, a * lambda + r / 2.0))
}

/// ξ(μ, λ). For μ = b this is b̃ + β(λ); a general first argument is first
/// cascaded onto λ through q(μ) − q(b).
pub fn radial_exponent(mu: f64, lambda: f64, a: f64) -> Result<f64> {
    check_a(a)?;
    if a < 0.25 {
        return domain("radial exponents need a >= 1/4");
    }
    let kappa = 2.0 / a;
    let p = derive_params(kappa)?;
    let y = q(mu, a)? - a + q(lambda, a)?;
    if y < 0.0 {
        return domain("combined q below zero");
    }
    radial_beta(q_inverse(y, a), a).map(|beta| p.btilde + beta)
}

/// Cardy's crossing function, the regularized incomplete Beta
/// I_x(1−2a, 1−2a) at x = y/(y+1).
pub fn cardy_phi(y: f64, a: f64) -> Result<f64> {
    if !(a > 0.0 && a < 0.5) {
        return domain(format!("cardy_phi needs 0 < a < 1/2, got {a}"));
    }
    if !(y > 0.0) {
        return domain(format!("cardy_phi needs y > 0, got {y}"));
    }
    if y.is_infinite() {
        return Ok(1.0);
    }
    let p = 1.0 - 2.0 * a;
    let norm = statrs::function::gamma::gamma(2.0 * p) / statrs::function::gamma::gamma(p).powi(2);
    let x = y / (y + 1.0);
    let v = if x <= 0.5 {
        norm * beta_head(x, a)
    } else {
        1.0 - norm * beta_head(1.0 - x, a)
    };
    Ok(v.clamp(0.0, 1.0))
}

/// ∫₀^x u^{−2a}(1−u)^{−2a} du for x ≤ 1/2 via u = s^{1/p}, p = 1−2a,
/// which makes the integrand (1/p)(1−u)^{−2a}, smooth at 0.
fn beta_head(x: f64, a: f64) -> f64 {
    let p = 1.0 - 2.0 * a;
    let smax = x.powf(p);
    quad::integrate(
        |s| {
            let u = s.powf(1.0 / p);
            (1.0 - u).powf(-2.0 * a) / p
        },
        0.0,
        smax,
        1e-13,
    )
}

/// G(y(x+i)) = y^{d−2}(x²+1)^{1/2−2a}, with d = 1 + 1/(4a).
pub fn green_function(z: Complex64, a: f64) -> Result<f64> {
    if !(z.im > 0.0) || !z.re.is_finite() {
        return domain("green_function needs Im z > 0");
    }
    if a <= 0.25 {
        return domain("green_function needs a > 1/4");
    }
    let d = 1.0 + 1.0 / (4.0 * a);
    let y = z.im;
    let x = z.re / y;
    Ok(y.powf(d - 2.0) * (x * x + 1.0).powf(0.5 - 2.0 * a))
}

pub fn restriction_probability(phi_prime: f64) -> Result<f64> {
    if !(phi_prime > 0.0 && phi_prime <= 1.0) {
        return domain(format!("Φ'(0) must lie in (0, 1], got {phi_prime}"));
    }
    Ok(phi_prime.powf(5.0 / 8.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn r(n: i64, d: i64) -> Rational64 {
        Rational64::new(n, d)
    }

    #[test]
    fn model_table_golden() {
        // κ, a, b, b̃, c, d
        let golden = [
            (r(2, 1), r(1, 1), r(1, 1), r(0, 1), r(-2, 1), r(5, 4)),
            (r(8, 3), r(3, 4), r(5, 8), r(5, 48), r(0, 1), r(4, 3)),
            (r(3, 1), r(2, 3), r(1, 2), r(1, 8), r(1, 2), r(11, 8)),
            (r(4, 1), r(1, 2), r(1, 4), r(1, 8), r(1, 1), r(3, 2)),
            (r(6, 1), r(1, 3), r(0, 1), r(0, 1), r(0, 1), r(7, 4)),
            (r(8, 1), r(1, 4), r(-1, 8), r(-3, 16), r(-2, 1), r(2, 1)),
        ];
        for (row, g) in model_table().iter().zip(golden) {
            assert_eq!((row.kappa, row.a, row.b, row.btilde, row.c_central, row.d_dim), g, "{}", row.model);
        }
    }

    #[test]
    fn float_matches_exact() {
        for row in model_table() {
            let k = *row.kappa.numer() as f64 / *row.kappa.denom() as f64;
            let p = derive_params(k).unwrap();
            let f = |q: Rational64| *q.numer() as f64 / *q.denom() as f64;
            assert!((p.a - f(row.a)).abs() < 1e-14);
            assert!((p.b - f(row.b)).abs() < 1e-14);
            assert!((p.btilde - f(row.btilde)).abs() < 1e-14);
            assert!((p.c_central - f(row.c_central)).abs() < 1e-14);
            assert!((p.d_dim - f(row.d_dim)).abs() < 1e-14);
        }
    }

    #[test]
    fn kappa_six_is_exactly_zero() {
        let p = derive_params(6.0).unwrap();
        assert_eq!(p.b, 0.0);
        assert_eq!(p.c_central, 0.0);
        assert_eq!(p.btilde, 0.0);
        assert_eq!(derive_params(8.0 / 3.0).unwrap().c_central, 0.0);
    }

    #[test]
    fn bad_kappa() {
        assert!(derive_params(0.0).is_err());
        assert!(derive_params(-1.0).is_err());
        assert!(derive_params(f64::NAN).is_err());
        assert!(derive_params(f64::INFINITY).is_err());
        assert_eq!(derive_params(12.0).unwrap().d_dim, 2.0);
    }

    #[test]
    fn q_examples() {
        assert!((q(1.0, 0.75).unwrap() - 1.0).abs() < 1e-15);
        assert!((q(2.0, 0.75).unwrap() - 1.5).abs() < 1e-15);
        assert!(q(-1.0, 0.75).is_err());
        let e = ExponentValue::new(0.3, 0.75).unwrap();
        assert!(e.q_plus >= e.q_minus);
        for qq in [e.q_plus, e.q_minus] {
            assert!((qq * qq + 0.5 * qq - 1.5 * 0.3).abs() < 1e-14);
        }
    }

    #[test]
    fn crossing_examples() {
        let a = 0.75;
        assert!((chordal_crossing_exponent(&[0.625, 0.625], a).unwrap() - 2.0).abs() < 1e-12);
        assert!((chordal_crossing_exponent(&[0.625, 0.125], a).unwrap() - 1.0).abs() < 1e-12);
        assert!(chordal_crossing_exponent(&[], a).is_err());
        assert!((two_sided_q(0.625, 0.625, a).unwrap() - 2.25).abs() < 1e-12);
    }

    #[test]
    fn radial_examples() {
        let a = 0.75;
        assert!((radial_exponent(1.0, 0.0, a).unwrap() - 0.25).abs() < 1e-12);
        assert!((radial_exponent(2.0, 0.0, a).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((radial_beta(0.625, a).unwrap() - 9.0 / 16.0).abs() < 1e-12);
        let (r, k) = radial_martingale_exponents(0.625, a).unwrap();
        assert!((k - 27.0 / 32.0).abs() < 1e-12);
        assert!((r * r + r * 0.5 - 1.5 * 0.625).abs() < 1e-12);
        assert!(radial_exponent(1.0, 0.0, 0.2).is_err());
    }

    /// Oracle: midpoint sum of u^{-2a}((1-u)^{-2a} - 1) plus the exact
    /// x^{1-2a}/(1-2a), normalized by Γ values.
    fn cardy_oracle(y: f64, a: f64) -> f64 {
        let x = y / (1.0 + y);
        let n = 1_000_000;
        let h = x / n as f64;
        let mut s = 0.0;
        for i in 0..n {
            let u = (i as f64 + 0.5) * h;
            s += u.powf(-2.0 * a) * ((1.0 - u).powf(-2.0 * a) - 1.0);
        }
        let p = 1.0 - 2.0 * a;
        let g = statrs::function::gamma::gamma;
        (s * h + x.powf(p) / p) * g(2.0 * p) / g(p).powi(2)
    }

    #[test]
    fn cardy_against_riemann_oracle() {
        for y in [0.5, 2.0] {
            let v = cardy_phi(y, 1.0 / 3.0).unwrap();
            assert!((v - cardy_oracle(y, 1.0 / 3.0)).abs() < 1e-6, "y={y}");
        }
        let v = cardy_phi(2.0, 1.0 / 3.0).unwrap();
        let w = statrs::function::beta::beta_reg(1.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0);
        assert!((v - w).abs() < 1e-9);
    }

    #[test]
    fn cardy_examples() {
        for a in [0.1, 1.0 / 3.0, 0.45] {
            assert!((cardy_phi(1.0, a).unwrap() - 0.5).abs() < 1e-10);
            assert!(cardy_phi(1e-60, a).unwrap() < 1e-3);
            assert!(cardy_phi(1e60, a).unwrap() > 1.0 - 1e-3);
        }
        assert!(cardy_phi(1.0, 0.5).is_err());
        assert!(cardy_phi(0.0, 0.3).is_err());
    }

    #[test]
    fn green_examples() {
        let a = 0.75;
        assert!((green_function(Complex64::new(0.0, 1.0), a).unwrap() - 1.0).abs() < 1e-15);
        assert!((green_function(Complex64::new(1.0, 1.0), a).unwrap() - 0.5).abs() < 1e-15);
        let d = 4.0 / 3.0;
        assert!((green_function(Complex64::new(0.0, 3.0), a).unwrap() - 3f64.powf(d - 2.0)).abs() < 1e-14);
        assert!(green_function(Complex64::new(0.0, 0.0), a).is_err());
    }

    #[test]
    fn restriction_examples() {
        assert_eq!(restriction_probability(1.0).unwrap(), 1.0);
        assert!((restriction_probability(15.0 / 16.0).unwrap() - 0.96047).abs() < 1e-5);
        assert!(restriction_probability(1e-12).unwrap() < 1e-6);
        assert!(restriction_probability(0.0).is_err());
        assert!(restriction_probability(1.1).is_err());
    }

    proptest! {
        #[test]
        fn root_identity(a in 0.05f64..3.0, u1 in 0.0f64..5.0, u2 in 0.0f64..5.0) {
            let l0 = lambda0(a);
            let (l1, l2) = (l0 + u1, l0 + u2);
            let (q1, q2) = (q(l1, a).unwrap(), q(l2, a).unwrap());
            // the sum must itself be a plus-branch value
            prop_assume!(q1 + q2 >= (1.0 - 2.0 * a) / 2.0);
            let rhs = q(l1 + l2 + q1 * q2 / a, a).unwrap();
            prop_assert!((q1 + q2 - rhs).abs() < 1e-10 * (1.0 + rhs.abs()));
        }

        #[test]
        fn q_of_b_is_a(a in 0.2501f64..4.0) {
            let b = (3.0 * a - 1.0) / 2.0;
            prop_assert!((q(b, a).unwrap() - a).abs() < 1e-12);
        }

        #[test]
        fn cascade_and_symmetry(a in 0.3f64..2.0, ls in proptest::collection::vec(0.0f64..3.0, 2..6), k in 1usize..5) {
            let k = k.min(ls.len() - 1);
            let full = chordal_crossing_exponent(&ls, a).unwrap();
            let left = chordal_crossing_exponent(&ls[..k], a).unwrap();
            let right = chordal_crossing_exponent(&ls[k..], a).unwrap();
            let nested = chordal_crossing_exponent(&[left, right], a).unwrap();
            prop_assert!((full - nested).abs() < 1e-10 * (1.0 + full.abs()));
            let mut rev = ls.clone();
            rev.reverse();
            let sym = chordal_crossing_exponent(&rev, a).unwrap();
            prop_assert!((full - sym).abs() < 1e-10 * (1.0 + full.abs()));
        }

        #[test]
        fn q_inverse_roundtrip(a in 0.05f64..3.0, u in 0.0f64..10.0) {
            let l = lambda0(a) + u;
            let back = q_inverse(q(l, a).unwrap(), a);
            prop_assert!((back - l).abs() < 1e-10 * (1.0 + l.abs()));
        }

        #[test]
        fn cardy_symmetric_and_monotone(y in 0.01f64..50.0, a in 0.05f64..0.45) {
            let v = cardy_phi(y, a).unwrap();
            let w = cardy_phi(1.0 / y, a).unwrap();
            prop_assert!((v + w - 1.0).abs() < 1e-8);
            prop_assert!(cardy_phi(y * 1.1, a).unwrap() > v);
        }
    }

    #[test]
    fn xi_tilde_closed_form() {
        for a in [0.3, 0.5, 0.75, 1.0, 2.0] {
            let b = (3.0 * a - 1.0) / 2.0;
            for n in 1..=10u32 {
                let v = chordal_crossing_exponent(&vec![b; n as usize], a).unwrap();
                assert!((v - xi_tilde_n(n, a)).abs() < 1e-10, "a={a} n={n}");
            }
        }
    }
}
