//! One step of the discrete Garnier flow by linear reconstruction.
//!
//! Forward: the values of `F̄` at the `ξ_i` are forced by the `F F̄` relation,
//! which fixes `F̄` inside its `(N-1)`-dimensional theta space; the `G Ǧ`
//! ratio relation shifted by `T` then gives `N-2` linear ratio conditions on
//! the `(N-1)`-dimensional `Ḡ` space, fixing `Ḡ` up to scale. The backward
//! step runs the same two reconstructions in the opposite order.

use crate::error::{GarnierError, Result};
use crate::garnier_model::{
    adjust_product, f_multiplier, g_multiplier, ln_f_product, ln_g_product, Direction,
    GarnierParams, GarnierState,
};
use crate::pade::{fit_scale, pair_lambdas};
use crate::theta_kernel::{reduce_mod_p, Bases, C64};
use crate::theta_space::{self, dist_mod_p, SymmetrySpec};

/// Two `ξ` closer than this modulo `p^ℤ` make the step degenerate.
const COLLISION_TOL: f64 = 1e-8;
/// A theta argument this close to `p^ℤ` is treated as a zero of the factor.
const F_VANISHING_TOL: f64 = 1e-10;

/// Diagnostics of one step. Residuals are `lhs/rhs - 1` of the two defining
/// relations evaluated on the returned state.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub fup_residuals: Vec<C64>,
    pub gdn_residuals: Vec<C64>,
    /// Singular-value gap of the ratio-condition kernel.
    pub kernel_gap: f64,
    /// Condition number of the value fit.
    pub condition: f64,
}

impl StepReport {
    pub fn max_residual(&self) -> f64 {
        self.fup_residuals
            .iter()
            .chain(&self.gdn_residuals)
            .map(|r| r.norm())
            .fold(0.0, f64::max)
    }
}

fn check_collisions(xs: &[C64], p: C64) -> Result<()> {
    for i in 0..xs.len() {
        for j in i + 1..xs.len() {
            let d = dist_mod_p(xs[i], xs[j], p);
            if d < COLLISION_TOL {
                return Err(GarnierError::Degenerate {
                    context: "xi collision",
                    gap: d,
                });
            }
        }
    }
    Ok(())
}

/// Reject `z` where `F(z) = C z ∏ [z/λ, k/(zλ)]` vanishes.
fn check_f_nonzero(z: C64, lambda: &[C64], k: C64, p: C64) -> Result<()> {
    let one = C64::new(1.0, 0.0);
    for &l in lambda {
        let d = dist_mod_p(z / l, one, p).min(dist_mod_p(k / (z * l), one, p));
        if d < F_VANISHING_TOL {
            return Err(GarnierError::Degenerate {
                context: "F vanishes at a xi",
                gap: d,
            });
        }
    }
    Ok(())
}

/// Reject `z` where a theta factor `[x]` of a denominator vanishes.
fn check_theta_nonzero(args: &[C64], p: C64, context: &'static str) -> Result<()> {
    let one = C64::new(1.0, 0.0);
    for (i, &x) in args.iter().enumerate() {
        if dist_mod_p(x, one, p) < F_VANISHING_TOL {
            return Err(GarnierError::Pole { context, i, j: 0 });
        }
    }
    Ok(())
}

/// Exponentiate logarithms after removing the largest real part, returned.
fn exp_shifted(logs: &[C64]) -> (Vec<C64>, f64) {
    let s = logs.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
    (logs.iter().map(|&l| (l - s).exp()).collect(), s)
}

fn finite_scale(c: C64) -> Result<C64> {
    if !(c.is_finite() && c.norm() > 0.0) {
        return Err(GarnierError::Domain(format!("state scale left double range: {c}")));
    }
    Ok(c)
}

/// Reconstruct `C z ∏ [z/λ_i, h/(z λ_i)]` from the logarithms of its
/// values at `points`. The fit runs at canonical representatives.
fn reconstruct_f(h: C64, size: usize, points: &[C64], ln_values: &[C64], bases: &Bases) -> Result<(Vec<C64>, C64, f64)> {
    let p = bases.p();
    let mult = f_multiplier(h, size, bases);
    let space = theta_space::symmetric_subspace(mult, Some(SymmetrySpec { h, twist: 1 }), bases)?;
    if space.len() != size - 1 {
        return Err(GarnierError::Structure(format!(
            "F-space has dimension {}, expected {}",
            space.len(),
            size - 1
        )));
    }
    let mut ws = Vec::with_capacity(points.len());
    let mut logs = Vec::with_capacity(points.len());
    for (&z, &lv) in points.iter().zip(ln_values) {
        let (w, m) = reduce_mod_p(z, p);
        ws.push(w);
        logs.push(lv - mult.ln_shift(w, m, p));
    }
    let (values, s) = exp_shifted(&logs);
    let fit = theta_space::fit_values(&space, &ws, &values)?;
    let lambda = pair_lambdas(&theta_space::zeros(&fit.function)?, h, p)?;
    let unit_logs: Vec<C64> = ws
        .iter()
        .map(|&w| ln_f_product(w, C64::new(1.0, 0.0), &lambda, h, bases))
        .collect();
    let (unit, su) = exp_shifted(&unit_logs);
    let c = finite_scale(fit_scale(&values, &unit) * (s - su).exp())?;
    Ok((lambda, c, fit.condition))
}

/// Reconstruct `z ∏ [z/ξ_i]` with `∏ ξ_i = ell` from conditions
/// `G(z') = r G(z)` given as `(z, z', ln r)`.
fn reconstruct_g(ell: C64, size: usize, conditions: &[(C64, C64, C64)], bases: &Bases) -> Result<(Vec<C64>, f64)> {
    let p = bases.p();
    let mult = g_multiplier(ell, size, bases);
    let space = theta_space::full_space(mult, bases);
    let pairs: Vec<(C64, C64, C64)> = conditions
        .iter()
        .map(|&(z, z2, ln_r)| {
            let (w, m) = reduce_mod_p(z, p);
            let (w2, m2) = reduce_mod_p(z2, p);
            (w, w2, (ln_r + mult.ln_shift(w, m, p) - mult.ln_shift(w2, m2, p)).exp())
        })
        .collect();
    let fit = theta_space::ratio_kernel(&space, &pairs)?;
    let xi = adjust_product(&theta_space::zeros(&fit.function)?, ell, p);
    Ok((xi, fit.gap))
}

/// `F(z) F̄(z) [k/z²][k/(q z²)] / (G(k/z) G(k/(q z)) U(z)) - 1`.
pub fn fup_residual(z: C64, params: &GarnierParams, state: &GarnierState, next: &GarnierState) -> C64 {
    let b = &params.bases;
    let (k, q) = (params.k, b.q());
    let lhs = state.ln_f(z, k, b) + next.ln_f(z, k / q, b) + b.ln_theta(k / (z * z)) + b.ln_theta(k / (q * z * z));
    let rhs = state.ln_g(k / z, b) + state.ln_g(k / (q * z), b) + params.ln_u(z);
    (lhs - rhs).exp() - 1.0
}

/// `G(z) Ǧ(z) U(k/z) / (G(k/z) Ǧ(k/z) U(z)) - 1` with `Ǧ` from `prev`.
pub fn gdn_residual(z: C64, params: &GarnierParams, state: &GarnierState, prev: &GarnierState) -> C64 {
    let b = &params.bases;
    let k = params.k;
    let lhs = state.ln_g(z, b) + prev.ln_g(z, b) + params.ln_u(k / z);
    let rhs = state.ln_g(k / z, b) + prev.ln_g(k / z, b) + params.ln_u(z);
    (lhs - rhs).exp() - 1.0
}

fn accept(report: StepReport, tol: f64) -> Result<StepReport> {
    let max_residual = report.max_residual();
    if !(max_residual <= tol) {
        return Err(GarnierError::StepRejected {
            max_residual,
            report: Box::new(report),
        });
    }
    Ok(report)
}

/// Forward step computing the state at `T(params)`; no residual threshold.
pub fn step_forward_unchecked(params: &GarnierParams, state: &GarnierState) -> Result<(GarnierState, StepReport)> {
    state.validate(params)?;
    let b = &params.bases;
    let (k, q, p, n_) = (params.k, b.q(), b.p(), params.size);
    let kb = k / q;
    check_collisions(&state.xi, p)?;

    // Step A: forced values of F̄ at ξ_i
    let mut forced = Vec::with_capacity(state.xi.len());
    for &x in &state.xi {
        check_f_nonzero(x, &state.lambda, k, p)?;
        check_theta_nonzero(&[k / (x * x), k / (q * x * x)], p, "forced F values")?;
        let num = state.ln_g(k / x, b) + state.ln_g(k / (q * x), b) + params.ln_u(x);
        let den = state.ln_f(x, k, b) + b.ln_theta(k / (x * x)) + b.ln_theta(k / (q * x * x));
        forced.push(num - den);
    }
    let (lambda_bar, c_bar, condition) = reconstruct_f(kb, n_, &state.xi, &forced, b)?;

    // Step B: Ḡ(λ̄) / Ḡ(k̄/λ̄) = U(λ̄) G(k̄/λ̄) / (U(k̄/λ̄) G(λ̄))
    let conditions: Vec<(C64, C64, C64)> = lambda_bar
        .iter()
        .map(|&l| {
            let ln_r = params.ln_u(l) + state.ln_g(kb / l, b) - params.ln_u(kb / l) - state.ln_g(l, b);
            (kb / l, l, ln_r)
        })
        .collect();
    let next_params = params.shift(Direction::Forward);
    let (xi_bar, kernel_gap) = reconstruct_g(next_params.ell, n_, &conditions, b)?;

    let next = GarnierState {
        lambda: lambda_bar,
        xi: xi_bar,
        c: c_bar,
    };
    let report = StepReport {
        fup_residuals: state.xi.iter().map(|&x| fup_residual(x, params, state, &next)).collect(),
        gdn_residuals: next
            .lambda
            .iter()
            .map(|&l| gdn_residual(l, &next_params, &next, state))
            .collect(),
        kernel_gap,
        condition,
    };
    Ok((next, report))
}

/// Backward step computing the state at `T^{-1}(params)`; no residual threshold.
pub fn step_backward_unchecked(params: &GarnierParams, state: &GarnierState) -> Result<(GarnierState, StepReport)> {
    state.validate(params)?;
    let b = &params.bases;
    let (k, q, p, n_) = (params.k, b.q(), b.p(), params.size);
    let kc = q * k;
    let prev_params = params.shift(Direction::Backward);

    // Ǧ from G(λ) Ǧ(λ) / (G(k/λ) Ǧ(k/λ)) = U(λ)/U(k/λ)
    let conditions: Vec<(C64, C64, C64)> = state
        .lambda
        .iter()
        .map(|&l| {
            let ln_r = params.ln_u(l) + state.ln_g(k / l, b) - params.ln_u(k / l) - state.ln_g(l, b);
            (k / l, l, ln_r)
        })
        .collect();
    let (xi_prev, kernel_gap) = reconstruct_g(prev_params.ell, n_, &conditions, b)?;
    check_collisions(&xi_prev, p)?;

    // F̌ from F̌(ξ̌) F(ξ̌) [ǩ/ξ̌²][k/ξ̌²] = Ǧ(ǩ/ξ̌) Ǧ(k/ξ̌) U(ξ̌)
    let mut forced = Vec::with_capacity(xi_prev.len());
    for &x in &xi_prev {
        check_f_nonzero(x, &state.lambda, k, p)?;
        check_theta_nonzero(&[kc / (x * x), k / (x * x)], p, "forced F values")?;
        let num = ln_g_product(kc / x, &xi_prev, b) + ln_g_product(k / x, &xi_prev, b) + params.ln_u(x);
        let den = state.ln_f(x, k, b) + b.ln_theta(kc / (x * x)) + b.ln_theta(k / (x * x));
        forced.push(num - den);
    }
    let (lambda_prev, c_prev, condition) = reconstruct_f(kc, n_, &xi_prev, &forced, b)?;

    let prev = GarnierState {
        lambda: lambda_prev,
        xi: xi_prev,
        c: c_prev,
    };
    let report = StepReport {
        fup_residuals: prev.xi.iter().map(|&x| fup_residual(x, &prev_params, &prev, state)).collect(),
        gdn_residuals: state.lambda.iter().map(|&l| gdn_residual(l, params, state, &prev)).collect(),
        kernel_gap,
        condition,
    };
    Ok((prev, report))
}

pub fn step_forward(params: &GarnierParams, state: &GarnierState) -> Result<(GarnierState, StepReport)> {
    let (next, report) = step_forward_unchecked(params, state)?;
    Ok((next, accept(report, params.bases.tol().residual_tol)?))
}

pub fn step_backward(params: &GarnierParams, state: &GarnierState) -> Result<(GarnierState, StepReport)> {
    let (prev, report) = step_backward_unchecked(params, state)?;
    Ok((prev, accept(report, params.bases.tol().residual_tol)?))
}

pub fn step(params: &GarnierParams, state: &GarnierState, dir: Direction) -> Result<(GarnierState, StepReport)> {
    match dir {
        Direction::Forward => step_forward(params, state),
        Direction::Backward => step_backward(params, state),
    }
}

/// One entry of a trajectory: the parameters and state reached after a step.
#[derive(Debug, Clone)]
pub struct TrajectoryStep {
    pub params: GarnierParams,
    pub state: GarnierState,
    pub report: StepReport,
}

/// Iterate the step map. On failure the error carries the 1-based index of
/// the failing step; the successful prefix is returned alongside.
pub fn run_trajectory_partial(
    params: &GarnierParams,
    state: &GarnierState,
    steps: usize,
    dir: Direction,
) -> (Vec<TrajectoryStep>, Option<GarnierError>) {
    let mut out = Vec::with_capacity(steps);
    let mut cur_p = params.clone();
    let mut cur_s = state.clone();
    for i in 1..=steps {
        match step(&cur_p, &cur_s, dir) {
            Ok((s, report)) => {
                cur_p = cur_p.shift(dir);
                cur_s = s;
                out.push(TrajectoryStep {
                    params: cur_p.clone(),
                    state: cur_s.clone(),
                    report,
                });
            }
            Err(e) => {
                return (
                    out,
                    Some(GarnierError::Trajectory {
                        step: i,
                        source: Box::new(e),
                    }),
                )
            }
        }
    }
    (out, None)
}

pub fn run_trajectory(params: &GarnierParams, state: &GarnierState, steps: usize, dir: Direction) -> Result<Vec<TrajectoryStep>> {
    if steps == 0 {
        return Err(GarnierError::Validation("trajectory needs at least one step".into()));
    }
    match run_trajectory_partial(params, state, steps, dir) {
        (out, None) => Ok(out),
        (_, Some(e)) => Err(e),
    }
}

/// Distance between states as unordered sets: `λ` modulo `p^ℤ` and
/// `λ → k/λ`, `ξ` modulo `p^ℤ`. `C` is a gauge scale and is not compared.
pub fn state_distance(a: &GarnierState, b: &GarnierState, k: C64, p: C64) -> f64 {
    let dl = theta_space::multiset_distance_by(&a.lambda, &b.lambda, |x, y| {
        crate::garnier_model::lambda_distance(x, y, k, p)
    });
    let dx = theta_space::multiset_distance_mod_p(&a.xi, &b.xi, p);
    dl.max(dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::garnier_model::{desk_generic, desk_pade};
    use crate::pade;

    #[test]
    fn forward_step_residuals_and_transport() {
        for n_ in 3..=5 {
            let (g, s) = desk_generic(0, n_).unwrap();
            let (next, rep) = step_forward(&g, &s).unwrap();
            assert!(rep.max_residual() <= 1e-9, "N={n_}: {rep:?}");
            assert!(rep.kernel_gap >= 1e6);
            let gb = g.shift(Direction::Forward);
            let prod: C64 = next.xi.iter().product();
            assert!((prod / gb.ell - 1.0).norm() < 1e-13);
            assert_eq!(next.lambda.len(), n_ - 2);
        }
    }

    #[test]
    fn backward_inverts_forward() {
        for n_ in [3, 4] {
            let (g, s) = desk_generic(1, n_).unwrap();
            let (next, _) = step_forward(&g, &s).unwrap();
            let gb = g.shift(Direction::Forward);
            let (back, rep) = step_backward(&gb, &next).unwrap();
            assert!(rep.max_residual() <= 1e-9);
            assert!(state_distance(&back, &s, g.k, g.bases.p()) <= 1e-7);
            let prod: C64 = back.xi.iter().product();
            assert!((prod / g.ell - 1.0).norm() < 1e-13);
        }
    }

    #[test]
    fn trajectory_round_trip_and_ell() {
        let (g, s) = desk_generic(2, 3).unwrap();
        let fwd = run_trajectory(&g, &s, 7, Direction::Forward).unwrap();
        assert_eq!(fwd.len(), 7);
        let q = g.bases.q();
        for (i, st) in fwd.iter().enumerate() {
            assert!((st.params.ell / (g.ell * q.powi(i as i32 + 1)) - 1.0).norm() < 1e-13);
            assert!(st.report.max_residual() <= 1e-9);
        }
        let last = fwd.last().unwrap();
        let bwd = run_trajectory(&last.params, &last.state, 7, Direction::Backward).unwrap();
        let end = bwd.last().unwrap();
        assert!(state_distance(&end.state, &s, g.k, g.bases.p()) <= 1e-6);
    }

    #[test]
    fn representative_independence() {
        let (g, s) = desk_generic(3, 4).unwrap();
        let p = g.bases.p();
        let mut shifted = s.clone();
        shifted.xi[0] *= p;
        let last = shifted.xi.len() - 1;
        shifted.xi[last] /= p;
        let (a, _) = step_forward(&g, &s).unwrap();
        let (b, _) = step_forward(&g, &shifted).unwrap();
        assert!(state_distance(&a, &b, g.k / g.bases.q(), p) <= 1e-9);
    }

    #[test]
    fn matches_pade_at_shifted_parameters() {
        let pp = desk_pade(0, 3, 1, 1).unwrap();
        let r = pade::run(&pp).unwrap();
        let ext = &r.extraction;
        let (next, _) = step_forward(&ext.generic, &ext.state).unwrap();
        let kb = pp.k / pp.bases.q();
        let d = state_distance(&next, &r.bar_extraction.state, kb, pp.bases.p());
        assert!(d <= 1e-6, "{d:e}");
    }

    #[test]
    fn degenerate_inputs_rejected() {
        let (g, mut s) = desk_generic(0, 4).unwrap();
        s.xi[1] = s.xi[0] * g.bases.p();
        let last = s.xi.len() - 1;
        let prod: C64 = s.xi[..last].iter().product();
        s.xi[last] = g.ell / prod;
        assert!(matches!(step_forward(&g, &s), Err(GarnierError::Degenerate { .. })));
        let (g, mut s) = desk_generic(0, 3).unwrap();
        s.xi.pop();
        assert!(matches!(step_forward(&g, &s), Err(GarnierError::Validation(_))));
        assert!(run_trajectory(&g, &desk_generic(0, 3).unwrap().1, 0, Direction::Forward).is_err());
    }
}
