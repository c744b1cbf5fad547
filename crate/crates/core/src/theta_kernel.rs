//! Scalar special functions of base `p`/`q`: the theta function
//! `[z] = (z, p/z; p)_∞`, the elliptic Gamma function `Γ_{p,q}`, shifted
//! theta factorials `[z]_s`, and terminating very-well-poised elliptic
//! hypergeometric series.
//!
//! Every infinite product is truncated once a geometric tail bound certifies
//! the remaining factors lie within `series_eps` of one.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{GarnierError, Result};

pub type C64 = Complex64;

/// A factor `1 - x` smaller than this in modulus is treated as an exact zero.
pub const POLE_EPS: f64 = 1e-13;

/// `|z|` outside `[1e-3, 1e3]` switches `elliptic_gamma` to a log-sum.
const GAMMA_LOG_SWITCH: f64 = 1e3;

/// Tolerance for recognising a parameter of the form `q^{-M}`.
const TERMINATION_EPS: f64 = 1e-10;

/// Global numeric policy shared by every module.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToleranceConfig {
    /// Relative size below which a factor deviation or series term is dropped.
    pub series_eps: f64,
    /// Threshold for identity and residual checks.
    pub residual_tol: f64,
    /// Relative widening of the fundamental annulus used when filtering roots.
    pub annulus_inner_margin: f64,
    /// Hard cap on the number of factors or terms in any single loop.
    pub max_terms: usize,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        ToleranceConfig {
            series_eps: 1e-16,
            residual_tol: 1e-9,
            annulus_inner_margin: 0.05,
            max_terms: 512,
        }
    }
}

impl ToleranceConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.series_eps > 0.0
            && self.series_eps < self.residual_tol
            && self.residual_tol < 1.0
            && self.annulus_inner_margin > 0.0
            && self.max_terms >= 64;
        if ok {
            Ok(())
        } else {
            Err(GarnierError::Validation(format!(
                "tolerance config violates 0 < series_eps < residual_tol < 1, margin > 0, max_terms >= 64: {self:?}"
            )))
        }
    }
}

/// The pair of elliptic bases `(p, q)` with `0 < |p|, |q| < 1`, together with
/// the numeric policy used by every evaluation made through it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bases {
    p: C64,
    q: C64,
    tol: ToleranceConfig,
}

impl Bases {
    pub fn new(p: C64, q: C64) -> Result<Self> {
        Self::with_tolerance(p, q, ToleranceConfig::default())
    }

    pub fn with_tolerance(p: C64, q: C64, tol: ToleranceConfig) -> Result<Self> {
        tol.validate()?;
        for (name, b) in [("p", p), ("q", q)] {
            let r = b.norm();
            if !(r > 0.0 && r < 1.0) || !b.re.is_finite() || !b.im.is_finite() {
                return Err(GarnierError::Validation(format!(
                    "base {name} = {b} must satisfy 0 < |{name}| < 1"
                )));
            }
        }
        Ok(Bases { p, q, tol })
    }

    pub fn p(&self) -> C64 {
        self.p
    }

    pub fn q(&self) -> C64 {
        self.q
    }

    pub fn tol(&self) -> &ToleranceConfig {
        &self.tol
    }

    /// `q^s` for any integer `s`.
    pub fn qpow(&self, s: i32) -> C64 {
        self.q.powi(s)
    }

    /// A logarithm of `[z]`, finite far outside the unit annulus where `[z]`
    /// itself overflows. Uses `[p^m w] = (-1)^m w^{-m} p^{-m(m-1)/2} [w]`.
    pub fn ln_theta(&self, z: C64) -> C64 {
        let (w, m) = reduce_mod_p(z, self.p);
        let m_f = m as f64;
        theta_product(w, self.p, &self.tol).0.ln() + C64::new(0.0, std::f64::consts::PI * m_f)
            - m_f * w.ln()
            - 0.5 * m_f * (m_f - 1.0) * self.p.ln()
    }

    /// `[z]` of base `p`. `z` must be nonzero.
    pub fn theta(&self, z: C64) -> C64 {
        theta_product(z, self.p, &self.tol).0
    }

    /// `[z]`, reporting a pole error when it vanishes (for use in denominators).
    pub fn theta_nonzero(&self, z: C64, context: &'static str) -> Result<C64> {
        let (v, min_factor, idx) = theta_product(z, self.p, &self.tol);
        if min_factor < POLE_EPS || !v.is_finite() {
            return Err(GarnierError::Pole {
                context,
                i: idx,
                j: 0,
            });
        }
        Ok(v)
    }

    /// Product of `[x]` over a list, each required to be nonzero.
    pub fn theta_prod_nonzero(&self, xs: &[C64], context: &'static str) -> Result<C64> {
        xs.iter()
            .try_fold(C64::new(1.0, 0.0), |acc, &x| Ok(acc * self.theta_nonzero(x, context)?))
    }

    /// Product of `[x]` over a list.
    pub fn theta_prod(&self, xs: &[C64]) -> C64 {
        xs.iter().map(|&x| self.theta(x)).product()
    }

    pub fn gamma(&self, z: C64) -> Result<C64> {
        elliptic_gamma(z, self)
    }

    pub fn shifted(&self, z: C64, s: i32) -> Result<C64> {
        theta_shifted(z, s, self)
    }

    pub fn multi(&self, xs: &[C64], s: i32) -> Result<C64> {
        theta_multi(xs, s, self)
    }
}

/// `(w, m)` with `z = p^m w` and `|p| < |w| ≤ 1`.
pub fn reduce_mod_p(z: C64, p: C64) -> (C64, i32) {
    let mut m = (z.norm().ln() / p.norm().ln()).floor() as i32;
    let mut w = z / p.powi(m);
    // guard against rounding at the boundary
    if w.norm() > 1.0 + 1e-15 {
        w *= p;
        m -= 1;
    } else if w.norm() <= p.norm() {
        w /= p;
        m += 1;
    }
    (w, m)
}

/// Returns `(value, min |factor|, index of min factor)`.
fn theta_product(z: C64, p: C64, tol: &ToleranceConfig) -> (C64, f64, usize) {
    let one = C64::new(1.0, 0.0);
    let rp = p.norm();
    let mut value = one;
    let mut pk = one;
    let mut min_factor = f64::INFINITY;
    let mut min_idx = 0;
    for i in 0..tol.max_terms {
        let fa = one - z * pk;
        let fb = one - pk * p / z;
        for f in [fa, fb] {
            let m = f.norm();
            if m < min_factor {
                min_factor = m;
                min_idx = i;
            }
        }
        value *= fa * fb;
        pk *= p;
        let tail = (z.norm() + rp / z.norm()) * pk.norm() / (1.0 - rp);
        if tail < tol.series_eps {
            break;
        }
    }
    (value, min_factor, min_idx)
}

/// The theta function `[z] = ∏_{i≥0} (1 - z p^i)(1 - p^{i+1}/z)`.
pub fn theta(z: C64, p: C64, tol: &ToleranceConfig) -> Result<C64> {
    if z == C64::new(0.0, 0.0) {
        return Err(GarnierError::Domain("theta requires z != 0".into()));
    }
    let r = p.norm();
    if !(r < 1.0) || r == 0.0 {
        return Err(GarnierError::Domain(format!(
            "theta requires 0 < |p| < 1, got |p| = {r}"
        )));
    }
    Ok(theta_product(z, p, tol).0)
}

/// The elliptic Gamma function
/// `Γ_{p,q}(z) = ∏_{i,j≥0} (1 - p^{i+1} q^{j+1}/z) / (1 - z p^i q^j)`.
pub fn elliptic_gamma(z: C64, bases: &Bases) -> Result<C64> {
    if z == C64::new(0.0, 0.0) {
        return Err(GarnierError::Domain("elliptic_gamma requires z != 0".into()));
    }
    let use_log = z.norm() > GAMMA_LOG_SWITCH || z.norm() < GAMMA_LOG_SWITCH.recip();
    let (p, q) = (bases.p, bases.q);
    let tol = &bases.tol;
    let (rp, rq) = (p.norm(), q.norm());
    let one = C64::new(1.0, 0.0);
    let pq = p * q;

    let mut prod = one;
    let mut log_sum = C64::new(0.0, 0.0);
    let mut x_i = z; // z p^i
    let mut y_i = pq / z; // p^{i+1} q / z
    for i in 0..tol.max_terms {
        let mut x = x_i;
        let mut y = y_i;
        for j in 0..tol.max_terms {
            let den = one - x;
            if den.norm() < POLE_EPS {
                return Err(GarnierError::Pole {
                    context: "elliptic_gamma",
                    i,
                    j,
                });
            }
            let num = one - y;
            if use_log {
                log_sum += num.ln() - den.ln();
            } else {
                prod *= num / den;
            }
            x *= q;
            y *= q;
            if (x.norm() + y.norm()) / (1.0 - rq) < tol.series_eps {
                break;
            }
        }
        x_i *= p;
        y_i *= p;
        let tail = (x_i.norm() + y_i.norm()) / ((1.0 - rp) * (1.0 - rq));
        if tail < tol.series_eps {
            break;
        }
    }
    Ok(if use_log { log_sum.exp() } else { prod })
}

/// Shifted theta factorial `[z]_s = Γ(q^s z)/Γ(z)`, computed by the finite
/// product `∏_{i<s} [q^i z]` for `s ≥ 0` and `1/∏_{1≤i≤-s} [q^{-i} z]` for `s < 0`.
pub fn theta_shifted(z: C64, s: i32, bases: &Bases) -> Result<C64> {
    if z == C64::new(0.0, 0.0) {
        return Err(GarnierError::Domain("theta_shifted requires z != 0".into()));
    }
    let mut acc = C64::new(1.0, 0.0);
    if s >= 0 {
        let mut w = z;
        for _ in 0..s {
            acc *= bases.theta(w);
            w *= bases.q;
        }
        Ok(acc)
    } else {
        let qi = bases.q.inv();
        let mut w = z * qi;
        for _ in 0..(-s) {
            acc *= bases.theta_nonzero(w, "theta_shifted")?;
            w *= qi;
        }
        Ok(acc.inv())
    }
}

/// `[x_1, …, x_l]_s = [x_1]_s ⋯ [x_l]_s`.
pub fn theta_multi(xs: &[C64], s: i32, bases: &Bases) -> Result<C64> {
    xs.iter().try_fold(C64::new(1.0, 0.0), |acc, &x| {
        Ok(acc * theta_shifted(x, s, bases)?)
    })
}

/// Smallest `M ≥ 0` with `a q^M = 1` for some `a` in the list.
fn termination_index(a: &[C64], bases: &Bases) -> Option<usize> {
    let lq = bases.q.norm().ln();
    let cap = 4 * bases.tol.max_terms as i64;
    a.iter()
        .filter_map(|&ai| {
            let est = (-ai.norm().ln() / lq).round() as i64;
            (est - 1..=est + 1)
                .filter(|&m| (0..=cap).contains(&m))
                .find(|&m| (ai * bases.q.powi(m as i32) - 1.0).norm() < TERMINATION_EPS)
        })
        .min()
        .map(|m| m as usize)
}

/// Summand of the very-well-poised series at index `s`.
fn v_summand(a0: C64, a: &[C64], z: C64, s: usize, bases: &Bases) -> Result<C64> {
    let si = s as i32;
    let q = bases.q;
    let mut t = bases.theta(a0 * q.powi(2 * si)) / bases.theta_nonzero(a0, "v_series")?;
    // i = 0 contributes [a0]_s / [q]_s.
    for &ai in std::iter::once(&a0).chain(a.iter()) {
        let num = theta_shifted(ai, si, bases)?;
        let mut den = C64::new(1.0, 0.0);
        let mut w = q * a0 / ai;
        for _ in 0..s {
            den *= bases.theta_nonzero(w, "v_series")?;
            w *= q;
        }
        t *= num / den;
    }
    Ok(t * z.powi(si))
}

/// Terminating elliptic hypergeometric series
/// `Σ_s [a_0 q^{2s}]/[a_0] ∏_{i=0}^{n} [a_i]_s/[q a_0/a_i]_s z^s`.
///
/// One of `a_1..a_n` must equal `q^{-M}`; the sum then runs over `s = 0..=M`.
pub fn v_series(a0: C64, a: &[C64], z: C64, bases: &Bases) -> Result<C64> {
    let m = termination_index(a, bases).ok_or_else(|| {
        GarnierError::Unsupported("v_series requires a terminating parameter q^{-M}".into())
    })?;
    let mut total = C64::new(0.0, 0.0);
    let mut scale: f64 = 0.0;
    for s in 0..=m {
        let t = v_summand(a0, a, z, s, bases)?;
        scale = scale.max(t.norm());
        total += t;
    }
    // The s = M+1 summand contains the factor [q^{-M} q^M] = [1] = 0.
    if let Ok(next) = v_summand(a0, a, z, m + 1, bases) {
        debug_assert!(
            next.norm() <= bases.tol.residual_tol * scale.max(1.0),
            "v_series termination left a residual summand {next}"
        );
    }
    Ok(total)
}
