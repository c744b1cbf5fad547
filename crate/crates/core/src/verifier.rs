//! Certification of the compatibility of the Lax pair along the flow.
//!
//! `L_2(z)`, `L_3(z)` and `L_2(qz)` combine into the three-term relation
//! `L_1` for `y`, and `L_3(z)`, `L_3(qz)`, `L_2(qz)` into `L̃_1` for `ȳ`, with
//! middle coefficients `R` and `R̃`. Compatibility amounts to `R̄ = R̃`, where
//! `R̄` is `R` with every quantity shifted by `T` (so it needs `F̄̄`).
//!
//! Summands are carried as logarithms: along long trajectories `C` and the
//! non-canonical `ξ` make single terms leave double range well before the
//! relations lose accuracy.

use serde::Serialize;

use crate::error::{GarnierError, Result};
use crate::evolution;
use crate::garnier_model::{Direction, GarnierParams, GarnierState};
use crate::theta_kernel::C64;
use crate::theta_space::dist_mod_p;

/// Minimum relative distance mod `p^ℤ` of a sample to a zero of a denominator.
pub const POLE_AVOIDANCE: f64 = 1e-3;

/// A sum of three terms given by their logarithms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermSum {
    pub ln_terms: [C64; 3],
}

impl TermSum {
    fn ln_scale(&self) -> f64 {
        self.ln_terms.iter().map(|t| t.re).fold(f64::NEG_INFINITY, f64::max)
    }

    fn shifted(&self, s: f64) -> C64 {
        self.ln_terms.iter().map(|&t| (t - s).exp()).sum()
    }

    pub fn value(&self) -> C64 {
        let s = self.ln_scale();
        self.shifted(s) * s.exp()
    }

    /// Magnitude of the largest summand.
    pub fn scale(&self) -> f64 {
        self.ln_scale().exp()
    }

    pub fn negated(&self) -> TermSum {
        let pi = C64::new(0.0, std::f64::consts::PI);
        TermSum {
            ln_terms: self.ln_terms.map(|t| t + pi),
        }
    }
}

/// `|a - b|` relative to the larger summand of either.
pub fn relative_difference(a: &TermSum, b: &TermSum) -> f64 {
    let s = a.ln_scale().max(b.ln_scale());
    (a.shifted(s) - b.shifted(s)).norm()
}

fn check_pole(x: C64, zeros: &[C64], z: C64, p: C64) -> Result<()> {
    if zeros.iter().any(|&w| dist_mod_p(x, w, p) < POLE_AVOIDANCE) {
        return Err(GarnierError::PoleProximity { z });
    }
    Ok(())
}

/// `R(z)` with `F` from `state`, `F̄` from `next`, exactly as in `L_1`.
pub fn r_eval(z: C64, params: &GarnierParams, state: &GarnierState, next: &GarnierState) -> Result<TermSum> {
    let b = &params.bases;
    let (k, q, p) = (params.k, b.q(), b.p());
    check_pole(z, &state.xi, z, p)?;
    check_pole(k / (q * z), &state.xi, z, p)?;
    let f = |x: C64| state.ln_f(x, k, b);
    let fb = |x: C64| next.ln_f(x, k / q, b);
    let g = |x: C64| state.ln_g(x, b);
    let th = |x: C64| b.ln_theta(x);
    let z2 = z * z;
    Ok(TermSum {
        ln_terms: [
            params.ln_u(z) + f(q * z) + g(k / z) + th(k / (q * q * z2)) - g(z),
            params.ln_u(k / (q * z)) + f(z) + g(q * z) + th(k / z2) - g(k / (q * z)),
            C64::new(0.0, std::f64::consts::PI)
                + f(z)
                + f(q * z)
                + fb(z)
                + th(k / z2)
                + th(k / (q * z2))
                + th(k / (q * q * z2))
                - g(z)
                - g(k / (q * z)),
        ],
    })
}

/// `R̃(z)`, the middle coefficient of `L̃_1` obtained by eliminating `y`
/// between `L_3(z)`, `L_3(qz)` and `L_2(qz)`.
pub fn rt_eval(z: C64, params: &GarnierParams, state: &GarnierState, next: &GarnierState) -> Result<TermSum> {
    let b = &params.bases;
    let (k, q, p) = (params.k, b.q(), b.p());
    check_pole(q * z, &state.xi, z, p)?;
    check_pole(k / (q * z), &state.xi, z, p)?;
    let f = |x: C64| state.ln_f(x, k, b);
    let fb = |x: C64| next.ln_f(x, k / q, b);
    let g = |x: C64| state.ln_g(x, b);
    let th = |x: C64| b.ln_theta(x);
    let z2 = z * z;
    Ok(TermSum {
        ln_terms: [
            params.ln_u(q * z) + fb(z) + g(k / (q * q * z)) + th(k / (q * z2)) - g(q * z),
            params.ln_u(k / (q * z)) + fb(q * z) + g(z) + th(k / (q * q * q * z2)) - g(k / (q * z)),
            C64::new(0.0, std::f64::consts::PI)
                + f(q * z)
                + fb(z)
                + fb(q * z)
                + th(k / (q * q * z2))
                + th(k / (q * z2))
                + th(k / (q * q * q * z2))
                - g(q * z)
                - g(k / (q * z)),
        ],
    })
}

/// Numerator `R(z) G(z) G(k/qz)`; it must vanish at the zeros of either factor.
fn r_numerator(z: C64, params: &GarnierParams, state: &GarnierState, next: &GarnierState) -> TermSum {
    let b = &params.bases;
    let (k, q) = (params.k, b.q());
    let f = |x: C64| state.ln_f(x, k, b);
    let fb = |x: C64| next.ln_f(x, k / q, b);
    let g = |x: C64| state.ln_g(x, b);
    let th = |x: C64| b.ln_theta(x);
    let z2 = z * z;
    TermSum {
        ln_terms: [
            params.ln_u(z) + f(q * z) + g(k / z) + th(k / (q * q * z2)) + g(k / (q * z)),
            params.ln_u(k / (q * z)) + f(z) + g(q * z) + th(k / z2) + g(z),
            C64::new(0.0, std::f64::consts::PI)
                + f(z)
                + f(q * z)
                + fb(z)
                + th(k / z2)
                + th(k / (q * z2))
                + th(k / (q * q * z2)),
        ],
    }
}

/// Relative size of the numerator of `R` at `z = ξ_i` and `z = k/(q ξ_i)`.
pub fn holomorphy_probe(params: &GarnierParams, state: &GarnierState, next: &GarnierState) -> f64 {
    let (k, q) = (params.k, params.bases.q());
    state
        .xi
        .iter()
        .flat_map(|&x| [x, k / (q * x)])
        .map(|z| {
            let n = r_numerator(z, params, state, next);
            n.value().norm() / n.scale()
        })
        .fold(0.0, f64::max)
}

/// `|R(ξ_i (1 + offset))|` over the median of `|R|` on the circle through
/// that point, maximized over `i`. A pole would make this of order `1/offset`.
pub fn holomorphy_ratio(params: &GarnierParams, state: &GarnierState, next: &GarnierState, offset: f64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for &x in &state.xi {
        let z0 = x * (1.0 + offset);
        let probe = r_eval_unguarded(z0, params, state, next).value().norm();
        let mut ring: Vec<f64> = (0..20)
            .map(|j| {
                let z = C64::from_polar(z0.norm(), z0.arg() + 0.1 + std::f64::consts::TAU * j as f64 / 20.0);
                r_eval_unguarded(z, params, state, next).value().norm()
            })
            .collect();
        ring.sort_by(f64::total_cmp);
        let median = 0.5 * (ring[9] + ring[10]);
        worst = worst.max(probe / median);
    }
    Ok(worst)
}

fn r_eval_unguarded(z: C64, params: &GarnierParams, state: &GarnierState, next: &GarnierState) -> TermSum {
    let n = r_numerator(z, params, state, next);
    let b = &params.bases;
    let den = state.ln_g(z, b) + state.ln_g(params.k / (b.q() * z), b);
    TermSum {
        ln_terms: n.ln_terms.map(|t| t - den),
    }
}

/// Spread of `R(pz) z^{4N+2} / R(z)` over `|z| = 1`: zero for a theta
/// function of degree `4N+2` and base `p`.
pub fn degree_probe(params: &GarnierParams, state: &GarnierState, next: &GarnierState, zs: &[C64]) -> Result<f64> {
    let p = params.bases.p();
    let d = (4 * params.size + 2) as i32;
    let mut ratios = Vec::with_capacity(zs.len());
    for &z in zs {
        let num = r_eval(p * z, params, state, next)?.value();
        let den = r_eval(z, params, state, next)?.value();
        ratios.push(num * z.powi(d) / den);
    }
    Ok(ratios.iter().map(|&r| (r / ratios[0] - 1.0).norm()).fold(0.0, f64::max))
}

/// Sample points on `|z| = ρ |k|^{1/4}` for `ρ ∈ {0.8, 1.1}`, moved along
/// the circle until every relevant denominator is safely nonzero.
pub fn sample_points(params: &GarnierParams, state: &GarnierState, next: &GarnierState, count: usize) -> Vec<C64> {
    let b = &params.bases;
    let (k, q, p) = (params.k, b.q(), b.p());
    let base = k.norm().powf(0.25);
    let first = count.div_ceil(2);
    let mut out = Vec::with_capacity(count);
    for (per, rho, phase) in [(first, 0.8, 0.17), (count - first, 1.1, 0.53)] {
        for j in 0..per {
            let mut theta = phase + std::f64::consts::TAU * j as f64 / per as f64;
            for _ in 0..200 {
                let z = C64::from_polar(rho * base, theta);
                let near = |x: C64, zs: &[C64]| zs.iter().any(|&w| dist_mod_p(x, w, p) < POLE_AVOIDANCE);
                let bad = near(z, &state.xi)
                    || near(q * z, &state.xi)
                    || near(k / (q * z), &state.xi)
                    || near(z, &next.xi)
                    || near(k / (q * q * z), &next.xi);
                if !bad {
                    out.push(z);
                    break;
                }
                theta += 1e-3;
            }
        }
    }
    out.truncate(count);
    out
}

/// Thresholds for the compatibility report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompatThresholds {
    pub r_match: f64,
    pub antisymmetry: f64,
    pub holomorphy: f64,
    pub degree: f64,
}

impl Default for CompatThresholds {
    fn default() -> Self {
        CompatThresholds {
            r_match: 1e-8,
            antisymmetry: 1e-10,
            holomorphy: 1e-8,
            degree: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompatReport {
    /// `max |R̄ - R̃| / scale` over the samples.
    pub r_match: f64,
    /// `max |R(k/qz) + R(z)| / scale`.
    pub antisym_r: f64,
    /// `max |R̃(k/q²z) + R̃(z)| / scale`.
    pub antisym_rt: f64,
    /// Relative numerator of `R` at its would-be poles.
    pub holo_probe: f64,
    /// Spread of the base-`p` multiplier estimate of `R`.
    pub degree_probe: f64,
    #[serde(serialize_with = "crate::cli::ser_complex_vec")]
    pub samples: Vec<C64>,
}

impl CompatReport {
    pub fn passes(&self, t: &CompatThresholds) -> bool {
        let fields = [self.r_match, self.antisym_r, self.antisym_rt, self.holo_probe, self.degree_probe];
        fields.iter().all(|v| v.is_finite())
            && self.r_match <= t.r_match
            && self.antisym_r <= t.antisymmetry
            && self.antisym_rt <= t.antisymmetry
            && self.holo_probe <= t.holomorphy
            && self.degree_probe <= t.degree
    }
}

/// Compatibility check with the state two steps ahead supplied.
pub fn compatibility_check_with(
    params: &GarnierParams,
    state: &GarnierState,
    next: &GarnierState,
    next_next: &GarnierState,
    n_samples: usize,
) -> Result<CompatReport> {
    let next_params = params.shift(Direction::Forward);
    let (k, q) = (params.k, params.bases.q());
    let samples = sample_points(params, state, next, n_samples);
    if samples.len() < n_samples {
        return Err(GarnierError::PoleProximity {
            z: samples.last().copied().unwrap_or_default(),
        });
    }
    let (mut r_match, mut antisym_r, mut antisym_rt) = (0.0f64, 0.0f64, 0.0f64);
    for &z in &samples {
        let r_bar = r_eval(z, &next_params, next, next_next)?;
        let rt = rt_eval(z, params, state, next)?;
        r_match = r_match.max(relative_difference(&r_bar, &rt));
        let r = r_eval(z, params, state, next)?;
        let r_refl = r_eval(k / (q * z), params, state, next)?;
        antisym_r = antisym_r.max(relative_difference(&r_refl, &r.negated()));
        let rt_refl = rt_eval(k / (q * q * z), params, state, next)?;
        antisym_rt = antisym_rt.max(relative_difference(&rt_refl, &rt.negated()));
    }
    let unit: Vec<C64> = (0..8)
        .map(|j| C64::from_polar(1.0, 0.29 + std::f64::consts::TAU * j as f64 / 8.0))
        .collect();
    Ok(CompatReport {
        r_match,
        antisym_r,
        antisym_rt,
        holo_probe: holomorphy_probe(params, state, next),
        degree_probe: degree_probe(params, state, next, &unit)?,
        samples,
    })
}

/// Compatibility check at `(params, state)` with `next = T(state)` given;
/// runs the extra step that supplies `F̄̄`.
pub fn compatibility_check(params: &GarnierParams, state: &GarnierState, next: &GarnierState, n_samples: usize) -> Result<CompatReport> {
    let next_params = params.shift(Direction::Forward);
    next.validate(&next_params).map_err(|e| GarnierError::Trajectory {
        step: 1,
        source: Box::new(e),
    })?;
    let (next_next, _) = evolution::step_forward_unchecked(&next_params, next).map_err(|e| GarnierError::Trajectory {
        step: 2,
        source: Box::new(e),
    })?;
    compatibility_check_with(params, state, next, &next_next, n_samples)
}

/// The coefficients of `y(z/q)`, `y(z)` and `y(qz)` in `L_1`, as logarithms
/// (the middle one is `-R(z)`).
pub fn l1_coefficients(z: C64, params: &GarnierParams, state: &GarnierState, next: &GarnierState) -> Result<[TermSum; 3]> {
    let b = &params.bases;
    let (k, q) = (params.k, b.q());
    let single = |t: C64| TermSum {
        ln_terms: [t, C64::new(f64::NEG_INFINITY, 0.0), C64::new(f64::NEG_INFINITY, 0.0)],
    };
    let ln_a = |x: C64| params.a.iter().map(|&a| b.ln_theta(x / a)).sum::<C64>();
    let ln_b = |x: C64| params.b.iter().map(|&c| b.ln_theta(x / c)).sum::<C64>();
    let c_minus = ln_a(k / z) + ln_b(z) + state.ln_f(q * z, k, b) + b.ln_theta(k / (q * q * z * z));
    let c_plus = ln_a(q * z) + ln_b(k / (q * z)) + state.ln_f(z, k, b) + b.ln_theta(k / (z * z));
    Ok([single(c_minus), r_eval(z, params, state, next)?.negated(), single(c_plus)])
}

/// `L_1` at `z` for the given `y`, relative to its largest contribution.
pub fn three_term_residual(
    z: C64,
    params: &GarnierParams,
    state: &GarnierState,
    next: &GarnierState,
    y: &dyn Fn(C64) -> Result<C64>,
) -> Result<f64> {
    let q = params.bases.q();
    let [cm, c0, cp] = l1_coefficients(z, params, state, next)?;
    let ys = [y(z / q)?, y(z)?, y(q * z)?];
    let s = cm.ln_scale().max(c0.ln_scale()).max(cp.ln_scale());
    let mut total = C64::new(0.0, 0.0);
    let mut scale: f64 = 0.0;
    for (c, yv) in [cm, c0, cp].iter().zip(ys) {
        total += c.shifted(s) * yv;
        for t in c.ln_terms {
            scale = scale.max((t - s).exp().norm() * yv.norm());
        }
    }
    if !(scale > 0.0) {
        return Err(GarnierError::Degenerate {
            context: "three-term residual",
            gap: scale,
        });
    }
    Ok(total.norm() / scale)
}

/// One lattice point of a propagated solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeValue {
    pub z: C64,
    pub y: C64,
    pub y_bar: C64,
}

/// A leading coefficient with a theta argument this close to `p^ℤ` stops propagation.
const PROPAGATION_TOL: f64 = 1e-10;

fn leading_vanishes(args: &[(C64, &[C64])], p: C64) -> Option<f64> {
    let d = args
        .iter()
        .flat_map(|&(x, zs)| zs.iter().map(move |&w| dist_mod_p(x, w, p)))
        .fold(f64::INFINITY, f64::min);
    (d < PROPAGATION_TOL).then_some(d)
}

/// Solve `L_2`, `L_3` along `z_0 q^j`, `j = 1..=steps`, from `y(z_0)`, `ȳ(z_0)`.
///
/// `L_2` at `z` gives `y(z)` from `y(z/q)`, `ȳ(z/q)`; `L_3` at `z` then gives `ȳ(z)`.
pub fn propagate_lax(
    params: &GarnierParams,
    state: &GarnierState,
    next: &GarnierState,
    z0: C64,
    y0: C64,
    y_bar0: C64,
    steps: usize,
) -> Result<Vec<LatticeValue>> {
    let b = &params.bases;
    let (k, q, p) = (params.k, b.q(), b.p());
    let g = |x: C64| state.g_eval(x, b);
    let mut out = Vec::with_capacity(steps);
    let (mut y_prev, mut yb_prev) = (y0, y_bar0);
    let mut z = z0;
    for _ in 0..steps {
        z *= q;
        let t1 = state.f_eval(z, k, b) * b.theta(k / (z * z)) * yb_prev;
        let t2 = g(z) * params.a_eval(k / z) * y_prev;
        if let Some(gap) = leading_vanishes(&[(k / z, &state.xi), (z, &params.a)], p) {
            return Err(GarnierError::Degenerate {
                context: "L2 propagation",
                gap,
            });
        }
        let lead = g(k / z) * params.a_eval(z);
        let y = (t2 - t1) / lead;
        let s1 = next.f_eval(z, k / q, b) * b.theta(k / (q * z * z)) * y;
        let s3 = g(k / (q * z)) * params.b_eval(z) * yb_prev;
        if let Some(gap) = leading_vanishes(&[(z, &state.xi), (k / (q * z), &params.b)], p) {
            return Err(GarnierError::Degenerate {
                context: "L3 propagation",
                gap,
            });
        }
        let lead = g(z) * params.b_eval(k / (q * z));
        let y_bar = (s1 + s3) / lead;
        out.push(LatticeValue { z, y, y_bar });
        y_prev = y;
        yb_prev = y_bar;
    }
    Ok(out)
}

/// `LHS/RHS - 1` of the two factorized equations at `N = 3`, with the pairs
/// given explicitly: `lambda`, `lambda_bar` are `(λ_1, λ_2)` at `k` and at
/// `k/q`, `xi`, `xi_prev` are `(ξ_1, ξ_2)` at `ℓ` and at `ℓ/q`.
pub fn painleve_n3_residuals(
    params: &GarnierParams,
    lambda: [C64; 2],
    lambda_bar: [C64; 2],
    xi: [C64; 2],
    xi_prev: [C64; 2],
) -> (C64, C64) {
    let b = &params.bases;
    let th = |x: C64| b.ln_theta(x);
    let side = |x1: C64, x2: C64, ys: [C64; 2], zs: [C64; 2]| {
        let mut v = 2.0 * (x1.ln() - x2.ln());
        for j in 0..2 {
            v += th(x1 / ys[j]) + th(x1 / zs[j]) - th(x2 / ys[j]) - th(x2 / zs[j]);
        }
        v - (params.ln_u(x1) - params.ln_u(x2))
    };
    (
        side(xi[0], xi[1], lambda, lambda_bar).exp() - 1.0,
        side(lambda[0], lambda[1], xi, xi_prev).exp() - 1.0,
    )
}

/// The factorized elliptic Painlevé pair along `prev → state → next`.
pub fn painleve_n3_check(
    params: &GarnierParams,
    state: &GarnierState,
    next: &GarnierState,
    prev: &GarnierState,
) -> Result<(C64, C64)> {
    if params.size != 3 {
        return Err(GarnierError::Unsupported(format!(
            "factorized Painlevé form needs N = 3, got N = {}",
            params.size
        )));
    }
    let (k, q) = (params.k, params.bases.q());
    let pair = |s: &GarnierState| [s.xi[0], s.xi[1]];
    let (l, lb) = (state.lambda[0], next.lambda[0]);
    Ok(painleve_n3_residuals(params, [l, k / l], [lb, k / (q * lb)], pair(state), pair(prev)))
}

/// Verification of a whole trajectory `states[i]` at `T^i(params)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryVerification {
    pub compat: Vec<CompatReport>,
    /// `None` where the factorized form does not apply.
    #[serde(serialize_with = "crate::cli::ser_painleve")]
    pub painleve: Option<Vec<(C64, C64)>>,
}

impl TrajectoryVerification {
    pub fn passes(&self, t: &CompatThresholds, painleve_tol: f64) -> bool {
        self.compat.iter().all(|c| c.passes(t))
            && self.painleve.as_ref().is_none_or(|v| {
                v.iter().all(|(a, b)| a.norm() <= painleve_tol && b.norm() <= painleve_tol)
            })
    }
}

/// Run the compatibility check at every state with a successor, using the
/// trajectory's own states wherever available and one extra step at the end.
pub fn verify_trajectory(params: &GarnierParams, states: &[GarnierState], n_samples: usize) -> Result<TrajectoryVerification> {
    if states.len() < 2 {
        return Err(GarnierError::Validation("verification needs at least two states".into()));
    }
    let mut ps = vec![params.clone()];
    for i in 1..=states.len() {
        ps.push(ps[i - 1].shift(Direction::Forward));
    }
    let mut compat = Vec::with_capacity(states.len() - 1);
    for i in 0..states.len() - 1 {
        let report = if i + 2 < states.len() {
            compatibility_check_with(&ps[i], &states[i], &states[i + 1], &states[i + 2], n_samples)
        } else {
            compatibility_check(&ps[i], &states[i], &states[i + 1], n_samples)
        };
        compat.push(report.map_err(|e| match e {
            GarnierError::Trajectory { step, source } => GarnierError::Trajectory { step: i + step, source },
            e => GarnierError::Trajectory {
                step: i + 1,
                source: Box::new(e),
            },
        })?);
    }
    let painleve = if params.size == 3 {
        let mut v = Vec::new();
        for i in 1..states.len() - 1 {
            v.push(painleve_n3_check(&ps[i], &states[i], &states[i + 1], &states[i - 1])?);
        }
        Some(v)
    } else {
        None
    };
    Ok(TrajectoryVerification { compat, painleve })
}
