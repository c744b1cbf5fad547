//! The interpolation problem `ψ(q^{-s}) = P(q^{-s})/Q(q^{-s})`, `s = 0..m+n`.
//!
//! `P` and `Q` are expanded in the `k/q`-symmetric bases `ψ_j`, `φ_j`. The
//! coefficients come either from the null space of the interpolation
//! conditions or from the moment determinants. The Casorati determinants
//! of the solution and of its `T`-shift factor through the entire functions
//! `F` and `G`, whose zeros are the Garnier variables.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{GarnierError, Result};
use crate::garnier_model::{
    adjust_product, canonical_lambda, f_product, g_product, Direction, GarnierParams, GarnierState,
    PadeParams,
};
use crate::linalg;
use crate::theta_kernel::{v_series, Bases, C64};
use crate::theta_space::{self, dist_mod_p, SymmetrySpec, ThetaFourier};

const INTERPOLATION_MIN_GAP: f64 = 1e6;
const PAIRING_TOL: f64 = 1e-6;
const FIT_RESIDUAL_TOL: f64 = 1e-8;

/// Which denominator is used for `ψ_j`.
///
/// The printed form `[u_1/z, q u_1/z, k/u_3, q/u_3]_j` is not `k/q`-symmetric;
/// `Corrected` uses `[u_1/z, q u_1 z/k, k/u_3, q/u_3]_j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PsiDenominator {
    #[default]
    Corrected,
    AsPrinted,
}

pub fn basis_psi_with(z: C64, j: usize, params: &PadeParams, den: PsiDenominator) -> Result<C64> {
    let b = &params.bases;
    let (k, q, u) = (params.k, b.q(), &params.u);
    let s = j as i32;
    let num = b.multi(&[u[0], q * u[0] / k, k / (u[2] * z), q * z / u[2]], s)?;
    let second = match den {
        PsiDenominator::Corrected => q * u[0] * z / k,
        PsiDenominator::AsPrinted => q * u[0] / z,
    };
    let d = b.multi(&[u[0] / z, second, k / u[2], q / u[2]], s)?;
    if d.norm() == 0.0 {
        return Err(GarnierError::Pole {
            context: "basis_psi",
            i: j,
            j: 0,
        });
    }
    Ok(num / d)
}

/// `ψ_j(z) = [u_1, q u_1/k, k/(u_3 z), q z/u_3]_j / [u_1/z, q u_1 z/k, k/u_3, q/u_3]_j`.
pub fn basis_psi(z: C64, j: usize, params: &PadeParams) -> Result<C64> {
    basis_psi_with(z, j, params, PsiDenominator::Corrected)
}

/// `φ_j(z) = [k/u_2, q/u_2, u_4/z, q u_4 z/k]_j / [k/(u_2 z), q z/u_2, u_4, q u_4/k]_j`.
pub fn basis_phi(z: C64, j: usize, params: &PadeParams) -> Result<C64> {
    let b = &params.bases;
    let (k, q, u) = (params.k, b.q(), &params.u);
    let s = j as i32;
    let num = b.multi(&[k / u[1], q / u[1], u[3] / z, q * u[3] * z / k], s)?;
    let d = b.multi(&[k / (u[1] * z), q * z / u[1], u[3], q * u[3] / k], s)?;
    if d.norm() == 0.0 {
        return Err(GarnierError::Pole {
            context: "basis_phi",
            i: j,
            j: 0,
        });
    }
    Ok(num / d)
}

/// Coordinates of `P` and `Q` in the `ψ_j`, `φ_j` bases.
#[derive(Debug, Clone, PartialEq)]
pub struct PadeSolution {
    pub p_coeffs: Vec<C64>,
    pub q_coeffs: Vec<C64>,
    pub denominator: PsiDenominator,
    /// Condition number of the linear problem that produced the coefficients.
    pub condition: f64,
    /// Singular-value gap of the interpolation matrix (null-space route only).
    pub gap: f64,
    /// Max over nodes of `|P - ψ Q| / max(|P|, |ψ Q|)`.
    pub residual: f64,
}

/// Normalization rule shared by both routes.
pub const NORMALIZATION: &str = "first nonzero coefficient = 1";

impl PadeSolution {
    pub fn p_eval(&self, z: C64, params: &PadeParams) -> Result<C64> {
        let mut v = C64::new(0.0, 0.0);
        for (j, &c) in self.p_coeffs.iter().enumerate() {
            if c != C64::new(0.0, 0.0) {
                v += c * basis_psi_with(z, j, params, self.denominator)?;
            }
        }
        Ok(v)
    }

    pub fn q_eval(&self, z: C64, params: &PadeParams) -> Result<C64> {
        let mut v = C64::new(0.0, 0.0);
        for (j, &c) in self.q_coeffs.iter().enumerate() {
            if c != C64::new(0.0, 0.0) {
                v += c * basis_phi(z, j, params)?;
            }
        }
        Ok(v)
    }

    pub fn joint(&self) -> Vec<C64> {
        self.p_coeffs.iter().chain(&self.q_coeffs).copied().collect()
    }

    /// Max distance between normalized joint coefficient vectors.
    pub fn coefficient_distance(&self, other: &PadeSolution) -> f64 {
        let a = normalize_first(&self.joint());
        let b = normalize_first(&other.joint());
        a.iter().zip(&b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    fn interpolation_residual(&self, params: &PadeParams) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for s in 0..=(params.m + params.n) as i32 {
            let z = params.bases.qpow(-s);
            let pv = self.p_eval(z, params)?;
            let qv = params.psi(z)? * self.q_eval(z, params)?;
            let scale = pv.norm().max(qv.norm());
            if scale > 0.0 {
                worst = worst.max((pv - qv).norm() / scale);
            }
        }
        Ok(worst)
    }
}

fn normalize_first(v: &[C64]) -> Vec<C64> {
    let max = v.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let pivot = v
        .iter()
        .copied()
        .find(|c| c.norm() > 1e-12 * max)
        .unwrap_or(C64::new(1.0, 0.0));
    v.iter().map(|c| c / pivot).collect()
}

fn check_size(params: &PadeParams) -> Result<()> {
    if params.m + params.n == 0 {
        return Err(GarnierError::Validation(
            "interpolation needs m + n >= 1".into(),
        ));
    }
    Ok(())
}

/// Null-space route: the `(m+n+1) × (m+n+2)` system `P(q^{-s}) - ψ(q^{-s}) Q(q^{-s}) = 0`.
pub fn solve_interpolation(params: &PadeParams) -> Result<PadeSolution> {
    solve_interpolation_with(params, PsiDenominator::Corrected)
}

pub fn solve_interpolation_with(params: &PadeParams, den: PsiDenominator) -> Result<PadeSolution> {
    check_size(params)?;
    let (m, n) = (params.m, params.n);
    let rows = m + n + 1;
    let mut mat = DMatrix::<C64>::zeros(rows, m + n + 2);
    for s in 0..rows {
        let z = params.bases.qpow(-(s as i32));
        let ps = params.psi(z)?;
        for j in 0..=m {
            mat[(s, j)] = basis_psi_with(z, j, params, den)?;
        }
        for j in 0..=n {
            mat[(s, m + 1 + j)] = -ps * basis_phi(z, j, params)?;
        }
    }
    linalg::normalize_rows(&mut mat);
    let kernel = linalg::kernel_1d(&mat, INTERPOLATION_MIN_GAP, "solve_interpolation")?;
    let v = normalize_first(kernel.vector.as_slice());
    let mut sol = PadeSolution {
        p_coeffs: v[..=m].to_vec(),
        q_coeffs: v[m + 1..].to_vec(),
        denominator: den,
        condition: kernel.condition,
        gap: kernel.gap,
        residual: 0.0,
    };
    sol.residual = sol.interpolation_residual(params)?;
    Ok(sol)
}

/// Moment `μ^P_{i,j}` as a terminating very-well-poised series.
pub fn moment_p(i: usize, j: usize, params: &PadeParams) -> Result<C64> {
    let b = &params.bases;
    let (k, q, u) = (params.k, b.q(), &params.u);
    let l = (params.m + params.n) as i32;
    let (i, j) = (i as i32, j as i32);
    let mut a = vec![
        q.powi(-l),
        k / u[0] * q.powi(-j),
        k / u[1] * q.powi(l - i - 1),
        k / u[2] * q.powi(j),
        k / u[3] * q.powi(i),
    ];
    a.extend(u[4..].iter().map(|&x| k / x));
    v_series(k / q, &a, q, b)
}

/// Moment `μ^Q_{i,j}`.
pub fn moment_q(i: usize, j: usize, params: &PadeParams) -> Result<C64> {
    let b = &params.bases;
    let (k, q, u) = (params.k, b.q(), &params.u);
    let l = (params.m + params.n) as i32;
    let (i, j) = (i as i32, j as i32);
    let mut a = vec![
        q.powi(-l),
        u[0] * q.powi(l - i - 1),
        u[1] * q.powi(-j),
        u[2] * q.powi(i),
        u[3] * q.powi(j),
    ];
    a.extend_from_slice(&u[4..]);
    v_series(k / q, &a, q, b)
}

/// Coefficients of the last row in the expansion of a `(d+1) × (d+1)`
/// determinant whose first `d` rows are `rows`.
fn last_row_cofactors(rows: &[Vec<C64>], d: usize) -> Vec<C64> {
    (0..=d)
        .map(|j| {
            let minor: Vec<Vec<C64>> = rows
                .iter()
                .map(|r| r.iter().enumerate().filter(|&(c, _)| c != j).map(|(_, &v)| v).collect())
                .collect();
            let sign = if (d + j) % 2 == 0 { 1.0 } else { -1.0 };
            linalg::det_cofactor(&minor) * sign
        })
        .collect()
}

/// Moment-determinant route. `P` and `Q` are each fixed up to a constant by
/// their determinants; the relative constant is the least-squares fit of
/// the interpolation conditions over all nodes.
pub fn moment_interpolants(params: &PadeParams) -> Result<PadeSolution> {
    check_size(params)?;
    let (m, n) = (params.m, params.n);
    let mut rows_p = Vec::with_capacity(m);
    for i in 0..m {
        rows_p.push((0..=m).map(|j| moment_p(i, j, params)).collect::<Result<Vec<_>>>()?);
    }
    let mut rows_q = Vec::with_capacity(n);
    for i in 0..n {
        rows_q.push((0..=n).map(|j| moment_q(i, j, params)).collect::<Result<Vec<_>>>()?);
    }
    let cp = last_row_cofactors(&rows_p, m);
    let cq = last_row_cofactors(&rows_q, n);
    let moment_scale = |rows: &[Vec<C64>], d: usize| -> f64 {
        rows.iter().flatten().map(|v| v.norm()).fold(0.0, f64::max).powi(d as i32).max(1.0)
    };
    for (c, s) in [(&cp, moment_scale(&rows_p, m)), (&cq, moment_scale(&rows_q, n))] {
        let max = c.iter().map(|v| v.norm()).fold(0.0, f64::max);
        if !(max > 1e-13 * s) {
            return Err(GarnierError::Degenerate {
                context: "moment_interpolants",
                gap: max / s,
            });
        }
    }
    let mut sol = PadeSolution {
        p_coeffs: cp,
        q_coeffs: cq,
        denominator: PsiDenominator::Corrected,
        condition: f64::NAN,
        gap: f64::NAN,
        residual: 0.0,
    };
    // least squares over all nodes: a single node can sit on a cancellation
    let (mut num, mut den) = (C64::new(0.0, 0.0), 0.0);
    for s in 0..=(m + n) as i32 {
        let z = params.bases.qpow(-s);
        let pv = sol.p_eval(z, params)?;
        let qv = params.psi(z)? * sol.q_eval(z, params)?;
        num += qv.conj() * pv;
        den += qv.norm_sqr();
    }
    if den == 0.0 {
        return Err(GarnierError::Degenerate {
            context: "moment_interpolants",
            gap: 0.0,
        });
    }
    let r = num / den;
    for c in &mut sol.q_coeffs {
        *c *= r;
    }
    let v = normalize_first(&sol.joint());
    sol.p_coeffs = v[..=m].to_vec();
    sol.q_coeffs = v[m + 1..].to_vec();
    sol.residual = sol.interpolation_residual(params)?;
    sol.condition = 1.0;
    Ok(sol)
}

/// Solutions at `params, T params, T² params, …` (`count` levels).
pub fn solve_ladder(params: &PadeParams, count: usize) -> Result<Vec<(PadeParams, PadeSolution)>> {
    let mut out = Vec::with_capacity(count);
    let mut cur = params.clone();
    for _ in 0..count {
        let sol = solve_interpolation(&cur)?;
        let next = cur.shift(Direction::Forward);
        out.push((cur, sol));
        cur = next;
    }
    Ok(out)
}

/// The solution at some parameters together with the one at `T`-shifted
/// parameters, and everything built from their Casorati determinants.
#[derive(Debug, Clone)]
pub struct CasoratiData {
    pub params: PadeParams,
    pub sol: PadeSolution,
    pub bar_params: PadeParams,
    pub bar_sol: PadeSolution,
}

/// Vanishing of `D_1, D_2, D_3` at the nodes, relative to the size of the
/// two products in each determinant.
#[derive(Debug, Clone, Serialize)]
pub struct VanishingReport {
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
    pub d3: Vec<f64>,
}

impl VanishingReport {
    pub fn max(&self) -> f64 {
        self.d1.iter().chain(&self.d2).chain(&self.d3).copied().fold(0.0, f64::max)
    }
}

pub fn casorati(params: &PadeParams, sol: &PadeSolution, bar_params: &PadeParams, bar_sol: &PadeSolution) -> CasoratiData {
    CasoratiData {
        params: params.clone(),
        sol: sol.clone(),
        bar_params: bar_params.clone(),
        bar_sol: bar_sol.clone(),
    }
}

impl CasoratiData {
    fn bases(&self) -> &Bases {
        &self.params.bases
    }

    fn lsum(&self) -> i32 {
        (self.params.m + self.params.n) as i32
    }

    /// `(P(z), ψ(z) Q(z))`.
    pub fn u_vec(&self, z: C64) -> Result<(C64, C64)> {
        Ok((
            self.sol.p_eval(z, &self.params)?,
            self.params.psi(z)? * self.sol.q_eval(z, &self.params)?,
        ))
    }

    /// The same vector for the shifted solution.
    pub fn u_bar(&self, z: C64) -> Result<(C64, C64)> {
        Ok((
            self.bar_sol.p_eval(z, &self.bar_params)?,
            self.bar_params.psi(z)? * self.bar_sol.q_eval(z, &self.bar_params)?,
        ))
    }

    fn det_scaled(a: (C64, C64), b: (C64, C64)) -> (C64, f64) {
        let t1 = a.0 * b.1;
        let t2 = a.1 * b.0;
        (t1 - t2, t1.norm().max(t2.norm()))
    }

    /// `D_1(z) = |u(z), u(z/q)|` and its scale.
    pub fn d1(&self, z: C64) -> Result<(C64, f64)> {
        let q = self.bases().q();
        Ok(Self::det_scaled(self.u_vec(z)?, self.u_vec(z / q)?))
    }

    /// `D_2(z) = |u(z), ū(z/q)|`.
    pub fn d2(&self, z: C64) -> Result<(C64, f64)> {
        let q = self.bases().q();
        Ok(Self::det_scaled(self.u_vec(z)?, self.u_bar(z / q)?))
    }

    /// `D_3(z) = |u(z), ū(z)|`.
    pub fn d3(&self, z: C64) -> Result<(C64, f64)> {
        Ok(Self::det_scaled(self.u_vec(z)?, self.u_bar(z)?))
    }

    pub fn vanishing(&self) -> Result<VanishingReport> {
        let l = self.lsum();
        let rel = |(v, s): (C64, f64)| if s > 0.0 { v.norm() / s } else { 0.0 };
        let node = |s: i32| self.bases().qpow(-s);
        Ok(VanishingReport {
            d1: (0..l).map(|s| self.d1(node(s)).map(rel)).collect::<Result<_>>()?,
            d2: (0..l).map(|s| self.d2(node(s)).map(rel)).collect::<Result<_>>()?,
            d3: (0..=l).map(|s| self.d3(node(s)).map(rel)).collect::<Result<_>>()?,
        })
    }

    /// `X_1 = D_1/ψ = μ_1(z) P(z) Q(z/q) - P(z/q) Q(z)`.
    pub fn x1(&self, z: C64) -> Result<C64> {
        let (pp, s) = (&self.params, &self.sol);
        let q = self.bases().q();
        Ok(pp.mu1(z)? * s.p_eval(z, pp)? * s.q_eval(z / q, pp)? - s.p_eval(z / q, pp)? * s.q_eval(z, pp)?)
    }

    /// `X_2 = D_2/ψ = μ_2(z) P(z) Q̄(z/q) - P̄(z/q) Q(z)`.
    pub fn x2(&self, z: C64) -> Result<C64> {
        let (pp, s, bp, bs) = (&self.params, &self.sol, &self.bar_params, &self.bar_sol);
        let q = self.bases().q();
        Ok(pp.mu2(z)? * s.p_eval(z, pp)? * bs.q_eval(z / q, bp)? - bs.p_eval(z / q, bp)? * s.q_eval(z, pp)?)
    }

    /// `X_3 = D_3/ψ = μ_3(z) P(z) Q̄(z) - P̄(z) Q(z)`.
    pub fn x3(&self, z: C64) -> Result<C64> {
        let (pp, s, bp, bs) = (&self.params, &self.sol, &self.bar_params, &self.bar_sol);
        Ok(pp.mu3(z)? * s.p_eval(z, pp)? * bs.q_eval(z, bp)? - bs.p_eval(z, bp)? * s.q_eval(z, pp)?)
    }

    pub fn x1_den(&self, z: C64) -> Result<C64> {
        let pp = &self.params;
        let b = self.bases();
        let (k, q, u, n_) = (pp.k, b.q(), &pp.u, pp.size);
        let mut v = C64::new(1.0, 0.0);
        for i in 0..n_ {
            v *= b.theta(k / (u[i] * z)) * b.theta(u[n_ + i] * z / k);
        }
        v *= b.multi(&[q * u[0] / z, q * u[0] * z / k], pp.m as i32)?;
        v *= b.multi(&[q * k / (u[1] * z), q * z / u[1]], pp.n as i32)?;
        Ok(v)
    }

    pub fn x2_den(&self, z: C64) -> Result<C64> {
        let pp = &self.params;
        let b = self.bases();
        let (k, q, u, n_) = (pp.k, b.q(), &pp.u, pp.size);
        let mut v: C64 = u[n_..].iter().map(|&x| b.theta(x * z / k)).product();
        v *= b.multi(&[q * u[0] / z, q * u[0] * z / k], pp.m as i32)?;
        v *= b.multi(&[q * z / u[1], k / (u[1] * z)], pp.n as i32)?;
        Ok(v)
    }

    pub fn x3_den(&self, z: C64) -> Result<C64> {
        let pp = &self.params;
        let b = self.bases();
        let (k, q, u, n_) = (pp.k, b.q(), &pp.u, pp.size);
        let mut v: C64 = u[n_..].iter().map(|&x| b.theta(x / (q * z))).product();
        v *= b.multi(&[u[0] / z, q * q * u[0] * z / k], pp.m as i32)?;
        v *= b.multi(&[q * z / u[1], k / (u[1] * z)], pp.n as i32)?;
        Ok(v)
    }

    /// `[z, k/z]_{m+n} [k/z²]`, the vanishing factor of `D_1`.
    fn d1_factor(&self, z: C64) -> Result<C64> {
        let b = self.bases();
        let k = self.params.k;
        Ok(b.multi(&[z, k / z], self.lsum())? * b.theta(k / (z * z)))
    }

    /// `[z]_{m+n} [k/(q z)]_{m+n+1}`, the vanishing factor of `D_2`.
    fn d2_factor(&self, z: C64) -> Result<C64> {
        let b = self.bases();
        let (k, q) = (self.params.k, b.q());
        Ok(b.shifted(z, self.lsum())? * b.shifted(k / (q * z), self.lsum() + 1)?)
    }

    /// `[z]_{m+n+1} [k/(q z)]_{m+n}`, the vanishing factor of `D_3`.
    fn d3_factor(&self, z: C64) -> Result<C64> {
        let b = self.bases();
        let (k, q) = (self.params.k, b.q());
        Ok(b.shifted(z, self.lsum() + 1)? * b.shifted(k / (q * z), self.lsum())?)
    }

    /// `F(z) = D_1 X_{1,den} / (ψ [z, k/z]_{m+n} [k/z²])`.
    pub fn f_sample(&self, z: C64) -> Result<C64> {
        Ok(self.x1(z)? * self.x1_den(z)? / self.d1_factor(z)?)
    }

    /// `G(z) = D_2 X_{2,den} / (ψ [z]_{m+n} [k/(q z)]_{m+n+1})`.
    pub fn g_sample(&self, z: C64) -> Result<C64> {
        Ok(self.x2(z)? * self.x2_den(z)? / self.d2_factor(z)?)
    }

    /// `G(k/(q z))` read off `D_3`.
    pub fn g_reflected_sample(&self, z: C64) -> Result<C64> {
        Ok(self.x3(z)? * self.x3_den(z)? / self.d3_factor(z)?)
    }

    /// `D_1` rebuilt from an `F` evaluator.
    pub fn d1_model(&self, z: C64, f: C64) -> Result<C64> {
        Ok(self.params.psi(z)? * self.d1_factor(z)? / self.x1_den(z)? * f)
    }

    /// `D_2` rebuilt from `G(z)`.
    pub fn d2_model(&self, z: C64, g: C64) -> Result<C64> {
        Ok(self.params.psi(z)? * self.d2_factor(z)? / self.x2_den(z)? * g)
    }

    /// `D_3` rebuilt from `G(k/(q z))`.
    pub fn d3_model(&self, z: C64, g_reflected: C64) -> Result<C64> {
        Ok(self.params.psi(z)? * self.d3_factor(z)? / self.x3_den(z)? * g_reflected)
    }
}

/// Points `radius · e^{iθ_s}` with well-separated arguments.
pub fn circle_points(radius: f64, count: usize, phase: f64) -> Vec<C64> {
    (0..count)
        .map(|s| C64::from_polar(radius, phase + 2.399_963_229_728_653 * s as f64))
        .collect()
}

/// State read off the Casorati determinants, with diagnostics.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub state: GarnierState,
    pub generic: GarnierParams,
    /// Prefactor `C'` of `G(z) = C' z ∏ [z/ξ_i]`.
    pub c_prime: C64,
    pub f_function: ThetaFourier,
    pub g_function: ThetaFourier,
    pub f_fit_residual: f64,
    pub g_fit_residual: f64,
    /// `ℓ` read off the quasi-periodicity of the sampled `G`, independent of
    /// the zero product.
    pub ell_from_multiplier: C64,
}

/// Pair the zeros of a `k`-twisted function into `{λ, k/λ}` and keep one
/// representative per pair.
pub fn pair_lambdas(zeros: &[C64], k: C64, p: C64) -> Result<Vec<C64>> {
    let mut used = vec![false; zeros.len()];
    let mut out = Vec::new();
    for i in 0..zeros.len() {
        if used[i] {
            continue;
        }
        used[i] = true;
        let target = k / zeros[i];
        let best = (0..zeros.len())
            .filter(|&j| !used[j])
            .min_by(|&a, &b| dist_mod_p(zeros[a], target, p).total_cmp(&dist_mod_p(zeros[b], target, p)));
        let Some(j) = best else {
            return Err(GarnierError::Structure(format!("zero {} has no partner k/z", zeros[i])));
        };
        let d = dist_mod_p(zeros[j], target, p);
        if !(d <= PAIRING_TOL) {
            return Err(GarnierError::Structure(format!(
                "zero {} has no partner k/z (closest distance {d:.3e})",
                zeros[i]
            )));
        }
        used[j] = true;
        out.push(canonical_lambda(zeros[i], k, p));
    }
    out.sort_by(|a, b| a.arg().total_cmp(&b.arg()).then(a.norm().total_cmp(&b.norm())));
    Ok(out)
}

/// Least-squares scale `c` with `values ≈ c · unit`.
pub fn fit_scale(values: &[C64], unit: &[C64]) -> C64 {
    let num: C64 = unit.iter().zip(values).map(|(u, v)| u.conj() * v).sum();
    let den: f64 = unit.iter().map(|u| u.norm_sqr()).sum();
    num / den
}

pub fn extract_state(cas: &CasoratiData) -> Result<Extraction> {
    let pp = &cas.params;
    let bases = pp.bases;
    let p = bases.p();
    let k = pp.k;
    let generic = pp.to_generic()?;
    let n_ = pp.size;
    let dim = n_ - 1;
    let radius = k.norm().powf(0.25);

    // F from D_1
    let f_mult = generic.f_multiplier();
    let f_space = theta_space::symmetric_subspace(f_mult, Some(SymmetrySpec { h: k, twist: 1 }), &bases)?;
    if f_space.len() != dim {
        return Err(GarnierError::Structure(format!(
            "F-space has dimension {}, expected {dim}",
            f_space.len()
        )));
    }
    let f_pts = circle_points(radius, 2 * dim, 0.31);
    let f_vals = f_pts.iter().map(|&z| cas.f_sample(z)).collect::<Result<Vec<_>>>()?;
    let f_fit = theta_space::fit_values(&f_space, &f_pts, &f_vals)?;
    if !(f_fit.residual <= FIT_RESIDUAL_TOL) {
        return Err(GarnierError::Structure(format!(
            "sampled F is not in the predicted space (residual {:.3e})",
            f_fit.residual
        )));
    }
    let lambda = pair_lambdas(&theta_space::zeros(&f_fit.function)?, k, p)?;
    let unit: Vec<C64> = f_pts.iter().map(|&z| f_product(z, C64::new(1.0, 0.0), &lambda, k, &bases)).collect();
    let c = fit_scale(&f_vals, &unit);

    // G from D_2
    let g_mult = generic.g_multiplier();
    let g_space = theta_space::full_space(g_mult, &bases);
    let g_pts = circle_points(radius, 2 * dim, 0.77);
    let g_vals = g_pts.iter().map(|&z| cas.g_sample(z)).collect::<Result<Vec<_>>>()?;
    let g_fit = theta_space::fit_values(&g_space, &g_pts, &g_vals)?;
    if !(g_fit.residual <= FIT_RESIDUAL_TOL) {
        return Err(GarnierError::Structure(format!(
            "sampled G is not in the predicted space (residual {:.3e})",
            g_fit.residual
        )));
    }
    let xi = adjust_product(&theta_space::zeros(&g_fit.function)?, generic.ell, p);
    let unit: Vec<C64> = g_pts.iter().map(|&z| g_product(z, &xi, &bases)).collect();
    let c_prime = fit_scale(&g_vals, &unit);

    // independent multiplier estimate: G(p z) z^{N-1} / G(z) = p (-1)^{N-1} ℓ
    let z0 = g_pts[0];
    let ratio = cas.g_sample(p * z0)? * z0.powi(dim as i32) / g_vals[0];
    let sign = if dim % 2 == 0 { 1.0 } else { -1.0 };
    let ell_from_multiplier = ratio / (p * sign);

    let state = GarnierState {
        lambda,
        xi,
        c,
    };
    state.validate(&generic)?;
    Ok(Extraction {
        state,
        generic,
        c_prime,
        f_function: f_fit.function,
        g_function: g_fit.function,
        f_fit_residual: f_fit.residual,
        g_fit_residual: g_fit.residual,
        ell_from_multiplier,
    })
}

/// Which gauged Lax equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LaxEquation {
    L2,
    L3,
}

/// Which solution of the Lax pair: `w = P` or `w = ψ Q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Branch {
    P,
    PsiQ,
}

/// Gauged Lax pair built from the Padé data at two consecutive levels.
///
/// `F` and `F̄` come from the extracted states, `G` has unit prefactor. The
/// constants in front of `F` in `L_2` and of `F̄` in `L_3` are fitted once at
/// a reference point on the `w = P` branch and then frozen.
#[derive(Debug, Clone)]
pub struct LaxCheck {
    pub cas: CasoratiData,
    pub generic: GarnierParams,
    pub state: GarnierState,
    pub bar_state: GarnierState,
    pub kappa2: C64,
    pub kappa3: C64,
}

pub const LAX_REFERENCE_POINT: C64 = C64::new(0.93, 0.41);

impl LaxCheck {
    pub fn fit(cas: &CasoratiData, generic: &GarnierParams, state: &GarnierState, bar_state: &GarnierState) -> Result<LaxCheck> {
        let mut lc = LaxCheck {
            cas: cas.clone(),
            generic: generic.clone(),
            state: state.clone(),
            bar_state: bar_state.clone(),
            kappa2: C64::new(1.0, 0.0),
            kappa3: C64::new(1.0, 0.0),
        };
        let z = LAX_REFERENCE_POINT;
        let t = lc.terms(z, LaxEquation::L2, Branch::P)?;
        lc.kappa2 = -(t[1] + t[2]) / t[0];
        let t = lc.terms(z, LaxEquation::L3, Branch::P)?;
        lc.kappa3 = -(t[1] + t[2]) / t[0];
        Ok(lc)
    }

    /// `y(z) = [u_1/z, u_1 q z/k]_m w(z)` at the current level.
    pub fn y(&self, z: C64, branch: Branch) -> Result<C64> {
        let pp = &self.cas.params;
        Ok(self.gauge(z, pp.k)? * self.w(z, branch, false)?)
    }

    /// The same at the shifted level.
    pub fn y_bar(&self, z: C64, branch: Branch) -> Result<C64> {
        let bp = &self.cas.bar_params;
        Ok(self.gauge(z, bp.k)? * self.w(z, branch, true)?)
    }

    fn gauge(&self, z: C64, k: C64) -> Result<C64> {
        let pp = &self.cas.params;
        let b = &pp.bases;
        b.multi(&[pp.u[0] / z, pp.u[0] * b.q() * z / k], pp.m as i32)
    }

    fn w(&self, z: C64, branch: Branch, bar: bool) -> Result<C64> {
        let u = if bar { self.cas.u_bar(z)? } else { self.cas.u_vec(z)? };
        Ok(match branch {
            Branch::P => u.0,
            Branch::PsiQ => u.1,
        })
    }

    /// The three terms of the selected equation, without fitted constants.
    fn terms(&self, z: C64, eq: LaxEquation, branch: Branch) -> Result<[C64; 3]> {
        let g = &self.generic;
        let b = &g.bases;
        let (k, q) = (g.k, b.q());
        let gf = |x: C64| self.state.g_eval(x, b);
        Ok(match eq {
            LaxEquation::L2 => [
                self.state.f_eval(z, k, b) * b.theta(k / (z * z)) * self.y_bar(z / q, branch)?,
                -gf(z) * g.a_eval(k / z) * self.y(z / q, branch)?,
                gf(k / z) * g.a_eval(z) * self.y(z, branch)?,
            ],
            LaxEquation::L3 => [
                self.bar_state.f_eval(z, k / q, b) * b.theta(k / (q * z * z)) * self.y(z, branch)?,
                -gf(z) * g.b_eval(k / (q * z)) * self.y_bar(z, branch)?,
                gf(k / (q * z)) * g.b_eval(z) * self.y_bar(z / q, branch)?,
            ],
        })
    }

    /// Left-hand side with the fitted constants, relative to its largest term.
    pub fn residual(&self, z: C64, eq: LaxEquation, branch: Branch) -> Result<f64> {
        let mut t = self.terms(z, eq, branch)?;
        t[0] *= match eq {
            LaxEquation::L2 => self.kappa2,
            LaxEquation::L3 => self.kappa3,
        };
        let scale = t.iter().map(|x| x.norm()).fold(0.0, f64::max);
        Ok((t[0] + t[1] + t[2]).norm() / scale)
    }

    /// States whose `C` absorbs the fitted constants, so that the Lax pair
    /// holds exactly as printed.
    pub fn effective_states(&self) -> (GarnierState, GarnierState) {
        let mut s = self.state.clone();
        s.c *= self.kappa2;
        let mut sb = self.bar_state.clone();
        sb.c *= self.kappa3;
        (s, sb)
    }
}

/// Everything the Padé construction yields at one parameter point: solutions
/// at three consecutive levels, the Casorati data at the first two, and the
/// states extracted there.
#[derive(Debug, Clone)]
pub struct PadeRun {
    pub ladder: Vec<(PadeParams, PadeSolution)>,
    pub cas: CasoratiData,
    pub bar_cas: CasoratiData,
    pub extraction: Extraction,
    pub bar_extraction: Extraction,
    pub lax: LaxCheck,
}

pub fn run(params: &PadeParams) -> Result<PadeRun> {
    let ladder = solve_ladder(params, 3)?;
    let cas = casorati(&ladder[0].0, &ladder[0].1, &ladder[1].0, &ladder[1].1);
    let bar_cas = casorati(&ladder[1].0, &ladder[1].1, &ladder[2].0, &ladder[2].1);
    let extraction = extract_state(&cas)?;
    let bar_extraction = extract_state(&bar_cas)?;
    let lax = LaxCheck::fit(&cas, &extraction.generic, &extraction.state, &bar_extraction.state)?;
    Ok(PadeRun {
        ladder,
        cas,
        bar_cas,
        extraction,
        bar_extraction,
        lax,
    })
}
