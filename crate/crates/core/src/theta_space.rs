//! Linear spaces of theta-like entire functions.
//!
//! A function `f` of degree `D` with multiplier `α` satisfies
//! `f(p z) = α z^{-D} f(z)`. Writing `f(z) = Σ_n t_n z^n`, the multiplier
//! forces `t_{n+D} = (p^n/α) t_n`, so `f` is fixed by `D` consecutive
//! coefficients. We store the window `t_{n0}, …, t_{n0+D-1}` with
//! `n0 = ⌈ln|α| / ln|p|⌉`, which places every stored coefficient at (or next
//! to) the maximum of its chain; every function sharing a multiplier shares
//! the window, so linear combinations act directly on the seed vectors.

use nalgebra::{DMatrix, DVector};

use crate::error::{GarnierError, Result};
use crate::linalg;
use crate::theta_kernel::{reduce_mod_p, Bases, C64};

const NEWTON_MAX_ITERS: usize = 50;
const SYMMETRY_KERNEL_TOL: f64 = 1e-9;
const MAX_CONDITION: f64 = 1e12;
const RATIO_MIN_GAP: f64 = 1e6;
const DEDUPE_TOL: f64 = 1e-7;

/// Quasi-periodicity `f(p z) = α z^{-D} f(z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Multiplier {
    pub degree: usize,
    pub alpha: C64,
}

impl Multiplier {
    pub fn new(degree: usize, alpha: C64) -> Result<Self> {
        if degree == 0 {
            return Err(GarnierError::Domain("multiplier degree must be >= 1".into()));
        }
        if alpha.norm() == 0.0 || !alpha.is_finite() {
            return Err(GarnierError::Domain(format!("multiplier alpha must be finite and nonzero, got {alpha}")));
        }
        Ok(Multiplier { degree, alpha })
    }

    /// Index of the first stored coefficient.
    pub fn window_start(&self, p: C64) -> i64 {
        (self.alpha.norm().ln() / p.norm().ln()).ceil() as i64
    }

    /// `ln f(p^m w) - ln f(w)` for any `f` with this multiplier,
    /// from `f(p z) = α z^{-D} f(z)`.
    pub fn ln_shift(&self, w: C64, m: i32, p: C64) -> C64 {
        let (m, d) = (m as f64, self.degree as f64);
        m * self.alpha.ln() - d * (m * w.ln() + 0.5 * m * (m - 1.0) * p.ln())
    }
}

/// Symmetry `f(h/z) = (h/z²)^t f(z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymmetrySpec {
    pub h: C64,
    pub twist: i32,
}

/// A theta-like function given by its multiplier and `D` Laurent coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaFourier {
    multiplier: Multiplier,
    seeds: Vec<C64>,
    bases: Bases,
}

/// One chain `Σ_j t_{n0+r+jD} z^{n0+r+jD}` walked outward from its seed.
/// Calls `visit(n, term)` for every term kept.
fn walk_chain(
    mult: &Multiplier,
    bases: &Bases,
    start: i64,
    seed: C64,
    z: C64,
    mut visit: impl FnMut(i64, C64),
) {
    if seed == C64::new(0.0, 0.0) {
        return;
    }
    let p = bases.p();
    let d = mult.degree as i64;
    let eps = bases.tol().series_eps;
    let cap = bases.tol().max_terms;
    let zd = z.powi(d as i32);
    let pd = p.powi(d as i32);
    let first = seed * z.powi(start as i32);
    visit(start, first);
    let mut max_term = first.norm();

    // upward: term_{j+1} = term_j · p^{start + jD} z^D / α
    let mut term = first;
    let mut ratio = p.powi(start as i32) * zd / mult.alpha;
    let mut n = start;
    for _ in 0..cap {
        term *= ratio;
        n += d;
        visit(n, term);
        max_term = max_term.max(term.norm());
        ratio *= pd;
        if ratio.norm() < 0.5 && term.norm() <= eps * max_term {
            break;
        }
    }
    // downward: term_{j-1} = term_j · α p^{-(start + (j-1)D)} z^{-D}
    let mut term = first;
    let mut ratio = mult.alpha * p.powi(-(start - d) as i32) / zd;
    let mut n = start;
    for _ in 0..cap {
        term *= ratio;
        n -= d;
        visit(n, term);
        max_term = max_term.max(term.norm());
        ratio *= pd;
        if ratio.norm() < 0.5 && term.norm() <= eps * max_term {
            break;
        }
    }
}

impl ThetaFourier {
    pub fn new(multiplier: Multiplier, seeds: Vec<C64>, bases: Bases) -> Result<Self> {
        if seeds.len() != multiplier.degree {
            return Err(GarnierError::Domain(format!(
                "expected {} seed coefficients, got {}",
                multiplier.degree,
                seeds.len()
            )));
        }
        Ok(ThetaFourier {
            multiplier,
            seeds,
            bases,
        })
    }

    pub fn zero(multiplier: Multiplier, bases: Bases) -> Self {
        ThetaFourier {
            multiplier,
            seeds: vec![C64::new(0.0, 0.0); multiplier.degree],
            bases,
        }
    }

    pub fn multiplier(&self) -> Multiplier {
        self.multiplier
    }

    pub fn seeds(&self) -> &[C64] {
        &self.seeds
    }

    pub fn bases(&self) -> &Bases {
        &self.bases
    }

    pub fn window_start(&self) -> i64 {
        self.multiplier.window_start(self.bases.p())
    }

    pub fn is_zero(&self) -> bool {
        self.seeds.iter().all(|s| s.norm() == 0.0)
    }

    /// Laurent coefficient `t_n` for any integer `n`.
    pub fn coefficient(&self, n: i64) -> C64 {
        let d = self.multiplier.degree as i64;
        let n0 = self.window_start();
        let r = (n - n0).rem_euclid(d);
        let j = (n - n0 - r) / d;
        let m0 = n0 + r;
        let p = self.bases.p();
        let mut t = self.seeds[r as usize];
        if j >= 0 {
            for i in 0..j {
                t *= p.powi((m0 + i * d) as i32) / self.multiplier.alpha;
            }
        } else {
            for i in 1..=(-j) {
                t *= self.multiplier.alpha * p.powi(-(m0 - i * d) as i32);
            }
        }
        t
    }

    /// Value, derivative and magnitude scale `Σ |t_n z^n|` at `z`.
    pub fn eval_full(&self, z: C64) -> (C64, C64, f64) {
        let n0 = self.window_start();
        let mut value = C64::new(0.0, 0.0);
        let mut deriv = C64::new(0.0, 0.0);
        let mut scale = 0.0;
        let zi = z.inv();
        for (r, &seed) in self.seeds.iter().enumerate() {
            walk_chain(&self.multiplier, &self.bases, n0 + r as i64, seed, z, |n, t| {
                value += t;
                deriv += t * (n as f64) * zi;
                scale += t.norm();
            });
        }
        (value, deriv, scale)
    }

    /// `f(z)` without domain checks; `z` must be nonzero.
    pub fn eval(&self, z: C64) -> C64 {
        self.eval_full(z).0
    }

    pub fn evaluate(&self, z: C64) -> Result<C64> {
        if z.norm() == 0.0 {
            return Err(GarnierError::Domain("evaluate requires z != 0".into()));
        }
        Ok(self.eval(z))
    }

    /// Value of the `r`-th unit-seed function at `z`.
    fn unit_eval(&self, r: usize, z: C64) -> C64 {
        let mut v = C64::new(0.0, 0.0);
        walk_chain(
            &self.multiplier,
            &self.bases,
            self.window_start() + r as i64,
            C64::new(1.0, 0.0),
            z,
            |_, t| v += t,
        );
        v
    }

    pub fn scaled(&self, c: C64) -> ThetaFourier {
        ThetaFourier {
            seeds: self.seeds.iter().map(|s| s * c).collect(),
            ..self.clone()
        }
    }

    /// Linear combination `Σ c_i f_i` of functions sharing a multiplier.
    pub fn combine(basis: &[ThetaFourier], coeffs: &[C64]) -> Result<ThetaFourier> {
        let first = basis
            .first()
            .ok_or_else(|| GarnierError::Domain("empty basis".into()))?;
        let mut seeds = vec![C64::new(0.0, 0.0); first.multiplier.degree];
        for (f, &c) in basis.iter().zip(coeffs) {
            if f.multiplier != first.multiplier {
                return Err(GarnierError::Domain("basis elements have different multipliers".into()));
            }
            for (s, t) in seeds.iter_mut().zip(&f.seeds) {
                *s += c * t;
            }
        }
        ThetaFourier::new(first.multiplier, seeds, first.bases)
    }
}

/// Laurent coefficients of `[z/c]·(p;p)_∞ = Σ_n (-1)^n p^{n(n-1)/2} c^{-n} z^n`,
/// returned as `(lowest index, coefficients)`.
fn triple_product_series(c: C64, bases: &Bases) -> (i64, Vec<C64>) {
    let p = bases.p();
    let eps = bases.tol().series_eps;
    let cap = bases.tol().max_terms;
    let ci = c.inv();
    let mut up = vec![C64::new(1.0, 0.0)];
    let mut max = 1.0f64;
    let mut a = C64::new(1.0, 0.0);
    for n in 0..cap as i32 {
        // a_{n+1} = -p^n / c · a_n
        let ratio = -p.powi(n) * ci;
        a *= ratio;
        up.push(a);
        max = max.max(a.norm());
        if ratio.norm() < 0.5 && a.norm() <= eps * max {
            break;
        }
    }
    let mut down = Vec::new();
    let mut a = C64::new(1.0, 0.0);
    for j in 0..cap as i32 {
        // a_{n-1} = -c p^{1-n} a_n with n = -j
        let ratio = -c * p.powi(1 + j);
        a *= ratio;
        down.push(a);
        max = max.max(a.norm());
        if ratio.norm() < 0.5 && a.norm() <= eps * max {
            break;
        }
    }
    let lo = -(down.len() as i64);
    let mut coeffs: Vec<C64> = down.into_iter().rev().collect();
    coeffs.extend(up);
    (lo, coeffs)
}

fn euler_p(bases: &Bases) -> C64 {
    let p = bases.p();
    let mut v = C64::new(1.0, 0.0);
    let mut pk = p;
    for _ in 0..bases.tol().max_terms {
        v *= 1.0 - pk;
        pk *= p;
        if pk.norm() < bases.tol().series_eps {
            break;
        }
    }
    v
}

/// The function `scale · z^e · ∏_i [z/c_i]`, built by convolving the
/// Jacobi-triple-product expansion of each factor.
pub fn from_zeros(zeros: &[C64], scale: C64, extra_z_power: i32, bases: &Bases) -> Result<ThetaFourier> {
    if zeros.is_empty() {
        return Err(GarnierError::Domain("from_zeros needs at least one zero".into()));
    }
    if zeros.iter().any(|c| c.norm() == 0.0) {
        return Err(GarnierError::Domain("zero located at z = 0".into()));
    }
    if scale.norm() == 0.0 {
        return Err(GarnierError::Domain("scale must be nonzero".into()));
    }
    let p = bases.p();
    let alpha = p.powi(extra_z_power) * zeros.iter().map(|&c| -c).product::<C64>();
    let mult = Multiplier::new(zeros.len(), alpha)?;

    let mut lo = 0i64;
    let mut acc = vec![C64::new(1.0, 0.0)];
    for &c in zeros {
        let (flo, f) = triple_product_series(c, bases);
        let mut next = vec![C64::new(0.0, 0.0); acc.len() + f.len() - 1];
        for (i, &a) in acc.iter().enumerate() {
            for (j, &b) in f.iter().enumerate() {
                next[i + j] += a * b;
            }
        }
        acc = next;
        lo += flo;
    }
    let norm = scale / euler_p(bases).powi(zeros.len() as i32);
    let n0 = mult.window_start(p);
    let seeds = (0..mult.degree as i64)
        .map(|r| {
            let idx = n0 + r - extra_z_power as i64 - lo;
            if idx >= 0 && (idx as usize) < acc.len() {
                acc[idx as usize] * norm
            } else {
                C64::new(0.0, 0.0)
            }
        })
        .collect();
    ThetaFourier::new(mult, seeds, *bases)
}

/// Deterministic, well-separated points around the circle `|z| = radius`.
pub fn spread_points(radius: f64, count: usize) -> Vec<C64> {
    (0..count)
        .map(|s| {
            let s = s as f64;
            let theta = 0.37 + 2.399_963_229_728_653 * s;
            let rho = radius * (0.2 * (1.7 * s + 0.4).sin()).exp();
            C64::from_polar(rho, theta)
        })
        .collect()
}

/// The unconstrained space of a multiplier: one unit seed per coefficient.
pub fn full_space(mult: Multiplier, bases: &Bases) -> Vec<ThetaFourier> {
    (0..mult.degree)
        .map(|r| {
            let mut seeds = vec![C64::new(0.0, 0.0); mult.degree];
            seeds[r] = C64::new(1.0, 0.0);
            ThetaFourier {
                multiplier: mult,
                seeds,
                bases: *bases,
            }
        })
        .collect()
}

/// Orthonormal (in seed coordinates) basis of the functions with the given
/// multiplier satisfying `f(h/z) = (h/z²)^t f(z)`.
pub fn symmetric_subspace(mult: Multiplier, sym: Option<SymmetrySpec>, bases: &Bases) -> Result<Vec<ThetaFourier>> {
    let Some(sym) = sym else {
        return Ok(full_space(mult, bases));
    };
    let p = bases.p();
    let d = mult.degree;
    // f(h/(pz)) computed two ways forces α² = p^{2t} (h/p)^D.
    let lhs = mult.alpha * mult.alpha;
    let rhs = p.powi(2 * sym.twist) * (sym.h / p).powi(d as i32);
    if (lhs - rhs).norm() > 1e-10 * rhs.norm() {
        return Err(GarnierError::Inconsistent(format!(
            "multiplier alpha = {} incompatible with symmetry h = {}, twist {}",
            mult.alpha, sym.h, sym.twist
        )));
    }
    let probe = ThetaFourier::zero(mult, *bases);
    let points = spread_points(sym.h.norm().sqrt(), 2 * d);
    let mut m = DMatrix::<C64>::zeros(points.len(), d);
    for (s, &z) in points.iter().enumerate() {
        let w = sym.h / z;
        let factor = (sym.h / (z * z)).powi(sym.twist);
        for r in 0..d {
            m[(s, r)] = probe.unit_eval(r, w) - factor * probe.unit_eval(r, z);
        }
    }
    // Row scale: size of the two evaluated terms.
    for (s, &z) in points.iter().enumerate() {
        let w = sym.h / z;
        let factor = (sym.h / (z * z)).powi(sym.twist);
        let scale: f64 = (0..d)
            .map(|r| probe.unit_eval(r, w).norm() + (factor * probe.unit_eval(r, z)).norm())
            .fold(0.0, f64::max);
        if scale > 0.0 {
            for r in 0..d {
                m[(s, r)] /= scale;
            }
        }
    }
    let svd = linalg::svd(&m);
    let smax = svd.sigma.first().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
    let mut basis = Vec::new();
    for (k, &sig) in svd.sigma.iter().enumerate() {
        if sig <= SYMMETRY_KERNEL_TOL * smax.max(1.0) {
            let v = svd.v.column(k);
            basis.push(ThetaFourier {
                multiplier: mult,
                seeds: v.iter().copied().collect(),
                bases: *bases,
            });
        }
    }
    if basis.is_empty() {
        return Err(GarnierError::Inconsistent("symmetric subspace is empty".into()));
    }
    Ok(basis)
}

/// Outcome of fitting values on a basis.
#[derive(Debug, Clone)]
pub struct Fit {
    pub function: ThetaFourier,
    pub coefficients: Vec<C64>,
    /// Max relative mismatch at the fitted points.
    pub residual: f64,
    pub condition: f64,
}

fn basis_matrix(basis: &[ThetaFourier], points: &[C64]) -> DMatrix<C64> {
    DMatrix::from_fn(points.len(), basis.len(), |s, b| basis[b].eval(points[s]))
}

/// Least-squares element of `span(basis)` matching `values` at `points`.
pub fn fit_values(basis: &[ThetaFourier], points: &[C64], values: &[C64]) -> Result<Fit> {
    if basis.is_empty() {
        return Err(GarnierError::Domain("empty basis".into()));
    }
    if points.len() != values.len() || points.len() < basis.len() {
        return Err(GarnierError::Domain(format!(
            "need at least {} points with matching values, got {} points / {} values",
            basis.len(),
            points.len(),
            values.len()
        )));
    }
    let mut m = basis_matrix(basis, points);
    let mut rhs = DVector::from_column_slice(values);
    for s in 0..points.len() {
        let n = m.row(s).norm();
        if n > 0.0 {
            for b in 0..basis.len() {
                m[(s, b)] /= n;
            }
            rhs[s] /= n;
        }
    }
    let (x, condition) = linalg::least_squares(&m, &rhs);
    if !(condition <= MAX_CONDITION) {
        return Err(GarnierError::IllConditioned { condition });
    }
    let coefficients: Vec<C64> = x.iter().copied().collect();
    let function = ThetaFourier::combine(basis, &coefficients)?;
    let vmax = values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let residual = if vmax > 0.0 {
        points
            .iter()
            .zip(values)
            .map(|(&z, v)| (function.eval(z) - v).norm() / vmax)
            .fold(0.0, f64::max)
    } else {
        0.0
    };
    Ok(Fit {
        function,
        coefficients,
        residual,
        condition,
    })
}

/// A kernel element of the ratio conditions.
#[derive(Debug, Clone)]
pub struct RatioFit {
    pub function: ThetaFourier,
    pub coefficients: Vec<C64>,
    pub gap: f64,
    pub condition: f64,
}

/// Nonzero element `f` of `span(basis)` with `f(z') = r f(z)` for every
/// `(z, z', r)`, normalized so the largest coefficient is one.
pub fn ratio_kernel(basis: &[ThetaFourier], pairs: &[(C64, C64, C64)]) -> Result<RatioFit> {
    if basis.is_empty() {
        return Err(GarnierError::Domain("empty basis".into()));
    }
    let mut m = DMatrix::from_fn(pairs.len(), basis.len(), |s, b| {
        let (z, zp, r) = pairs[s];
        basis[b].eval(zp) - r * basis[b].eval(z)
    });
    linalg::normalize_rows(&mut m);
    let k = linalg::kernel_1d(&m, RATIO_MIN_GAP, "ratio_kernel")?;
    let pivot = k
        .vector
        .iter()
        .copied()
        .max_by(|a, b| a.norm().total_cmp(&b.norm()))
        .unwrap_or(C64::new(1.0, 0.0));
    let coefficients: Vec<C64> = k.vector.iter().map(|v| v / pivot).collect();
    Ok(RatioFit {
        function: ThetaFourier::combine(basis, &coefficients)?,
        coefficients,
        gap: k.gap,
        condition: k.condition,
    })
}

/// Representative of `z` modulo `p^ℤ` in the annulus `|p| < |z| ≤ 1`.
pub fn canonical(z: C64, p: C64) -> C64 {
    reduce_mod_p(z, p).0
}

/// Relative distance between `x` and `y` modulo `p^ℤ`: `min_r |x/(p^r y) - 1|`.
pub fn dist_mod_p(x: C64, y: C64, p: C64) -> f64 {
    let w = x / y;
    let r0 = (w.norm().ln() / p.norm().ln()).round() as i32;
    (r0 - 1..=r0 + 1)
        .map(|r| (w / p.powi(r) - 1.0).norm())
        .fold(f64::INFINITY, f64::min)
}

/// Integer `r` with `x ≈ p^r y`.
pub fn p_exponent(x: C64, y: C64, p: C64) -> i32 {
    let w = x / y;
    let r0 = (w.norm().ln() / p.norm().ln()).round() as i32;
    (r0 - 1..=r0 + 1)
        .min_by(|&a, &b| (w / p.powi(a) - 1.0).norm().total_cmp(&(w / p.powi(b) - 1.0).norm()))
        .unwrap_or(r0)
}

/// Min over matchings of the max pairwise distance, for small sets.
pub fn multiset_distance_by(a: &[C64], b: &[C64], dist: impl Fn(C64, C64) -> f64 + Copy) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    fn rec(a: &[C64], b: &[C64], used: &mut Vec<bool>, dist: &dyn Fn(C64, C64) -> f64) -> f64 {
        let Some((&x, rest)) = a.split_first() else {
            return 0.0;
        };
        let mut best = f64::INFINITY;
        for j in 0..b.len() {
            if used[j] {
                continue;
            }
            let d = dist(x, b[j]);
            if d >= best {
                continue;
            }
            used[j] = true;
            best = best.min(d.max(rec(rest, b, used, dist)));
            used[j] = false;
        }
        best
    }
    rec(a, b, &mut vec![false; b.len()], &dist)
}

pub fn multiset_distance_mod_p(a: &[C64], b: &[C64], p: C64) -> f64 {
    multiset_distance_by(a, b, |x, y| dist_mod_p(x, y, p))
}

/// Damped Newton refinement on the full series.
fn refine_zero(f: &ThetaFourier, z0: C64) -> (C64, f64, f64) {
    let mut z = z0;
    let (mut v, mut dv, mut scale) = f.eval_full(z);
    for _ in 0..NEWTON_MAX_ITERS {
        if v.norm() == 0.0 || dv.norm() == 0.0 {
            break;
        }
        let step = v / dv;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand = z - step * t;
            let (cv, cdv, cs) = f.eval_full(cand);
            if cv.norm() < v.norm() || cv.norm() <= 1e-300 {
                z = cand;
                v = cv;
                dv = cdv;
                scale = cs;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted || (step * t).norm() <= 1e-16 * z.norm() {
            break;
        }
    }
    (z, v.norm(), scale)
}

/// The `D` zeros of `f` in the fundamental annulus `|p| < |z| ≤ 1`.
pub fn zeros(f: &ThetaFourier) -> Result<Vec<C64>> {
    let d = f.multiplier.degree;
    if f.is_zero() {
        return Err(GarnierError::Domain("zeros of the zero function".into()));
    }
    let bases = f.bases;
    let p = bases.p();
    let tol = bases.tol();
    let margin = tol.annulus_inner_margin;
    let r_lo = p.norm() * (1.0 - margin);
    let r_hi = 1.0 + margin;

    // Coefficients weighted by their largest size over the widened annulus.
    let mut coeffs: Vec<(i64, C64, f64)> = Vec::new();
    let n0 = f.window_start();
    for (r, &seed) in f.seeds.iter().enumerate() {
        walk_chain(&f.multiplier, &bases, n0 + r as i64, seed, C64::new(1.0, 0.0), |n, t| {
            let w = t.norm() * r_hi.powi(n as i32).max(r_lo.powi(n as i32));
            coeffs.push((n, t, w));
        });
    }
    let wmax = coeffs.iter().map(|c| c.2).fold(0.0, f64::max);
    coeffs.retain(|c| c.2 >= tol.series_eps * wmax);
    let n_lo = coeffs.iter().map(|c| c.0).min().unwrap_or(0);
    let n_hi = coeffs.iter().map(|c| c.0).max().unwrap_or(0);
    let rho = p.norm().sqrt();
    let mut poly = vec![C64::new(0.0, 0.0); (n_hi - n_lo + 1) as usize];
    let log_rho = rho.ln();
    let shift = coeffs
        .iter()
        .map(|c| c.1.norm().ln() + c.0 as f64 * log_rho)
        .fold(f64::NEG_INFINITY, f64::max);
    for &(n, t, _) in &coeffs {
        let scale = ((n as f64) * log_rho - shift).exp();
        poly[(n - n_lo) as usize] += t * scale;
    }
    let candidates = linalg::polynomial_roots(&poly);

    let mut found: Vec<C64> = Vec::new();
    for x in candidates {
        let z = x * rho;
        let r = z.norm();
        if !(r > r_lo && r <= r_hi) || !z.is_finite() {
            continue;
        }
        let (zr, fv, scale) = refine_zero(f, canonical(z, p));
        if !(fv <= tol.residual_tol * scale) {
            continue;
        }
        let zc = canonical(zr, p);
        if found.iter().all(|&w| dist_mod_p(w, zc, p) > DEDUPE_TOL) {
            found.push(zc);
        }
    }
    if found.len() != d {
        return Err(GarnierError::Extraction {
            found: found.len(),
            expected: d,
        });
    }
    found.sort_by(|a, b| a.arg().total_cmp(&b.arg()).then(a.norm().total_cmp(&b.norm())));
    Ok(found)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn bases() -> Bases {
        Bases::new(c(0.1, 0.0), c(0.23, 0.0)).unwrap()
    }

    fn random_annulus_point(rng: &mut ChaCha8Rng, p: f64) -> C64 {
        let r = (rng.gen_range(p.ln() * 0.95..-0.02)).exp();
        C64::from_polar(r, rng.gen_range(0.0..std::f64::consts::TAU))
    }

    fn direct(zeros: &[C64], scale: C64, e: i32, z: C64, b: &Bases) -> C64 {
        scale * z.powi(e) * zeros.iter().map(|&c| b.theta(z / c)).product::<C64>()
    }

    #[test]
    fn single_zero_structure() {
        let b = bases();
        let cz = c(0.5, 0.3);
        let f = from_zeros(&[cz], c(1.0, 0.0), 0, &b).unwrap();
        assert!(f.eval(cz).norm() < 1e-14);
        assert!((f.multiplier().alpha + cz).norm() < 1e-15);
        assert_eq!(f.multiplier().degree, 1);
        // evaluate(from_zeros([c])) = theta(z/c)
        for z in [c(0.7, 0.1), c(-0.4, 0.5), c(1.3, -0.2)] {
            let t = b.theta(z / cz);
            assert!((f.eval(z) - t).norm() <= 1e-13 * t.norm());
        }
        // multiplier equation
        let z = c(0.6, 0.6);
        let lhs = f.eval(b.p() * z);
        let rhs = f.multiplier().alpha / z * f.eval(z);
        assert!((lhs - rhs).norm() <= 1e-12 * lhs.norm().max(rhs.norm()));
    }

    #[test]
    fn product_with_z_power_matches_direct() {
        let b = bases();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let xi = [random_annulus_point(&mut rng, 0.1), random_annulus_point(&mut rng, 0.1)];
        let f = from_zeros(&xi, c(1.0, 0.0), 1, &b).unwrap();
        assert_eq!(f.multiplier().degree, 2);
        for _ in 0..20 {
            let z = random_annulus_point(&mut rng, 0.1) * 1.3;
            let want = direct(&xi, c(1.0, 0.0), 1, z, &b);
            assert!((f.eval(z) - want).norm() <= 1e-12 * want.norm());
        }
    }

    #[test]
    fn multiplier_equation_holds() {
        let b = bases();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for d in 1..=6 {
            let zs: Vec<C64> = (0..d).map(|_| random_annulus_point(&mut rng, 0.1)).collect();
            let f = from_zeros(&zs, c(0.7, -0.2), 1, &b).unwrap();
            let m = f.multiplier();
            for _ in 0..20 {
                let z = random_annulus_point(&mut rng, 0.1);
                let lhs = f.eval(b.p() * z);
                let rhs = m.alpha * z.powi(-(d as i32)) * f.eval(z);
                assert!((lhs - rhs).norm() <= 1e-11 * lhs.norm().max(rhs.norm()), "d={d}");
            }
        }
    }

    #[test]
    fn zero_seeds_vanish() {
        let b = bases();
        let f = ThetaFourier::zero(Multiplier::new(3, c(2.0, 0.0)).unwrap(), b);
        assert_eq!(f.eval(c(0.3, 0.4)), c(0.0, 0.0));
        assert!(zeros(&f).is_err());
    }

    #[test]
    fn zeros_round_trip() {
        let b = bases();
        let p = b.p();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for d in 1..=8 {
            for _ in 0..3 {
                let zs: Vec<C64> = (0..d).map(|_| random_annulus_point(&mut rng, 0.1)).collect();
                let f = from_zeros(&zs, c(1.0, 0.5), (d % 3) as i32, &b).unwrap();
                let found = zeros(&f).unwrap();
                let dist = multiset_distance_mod_p(&zs, &found, p);
                assert!(dist < 1e-9, "d={d} dist={dist}");
            }
        }
    }

    #[test]
    fn zeros_of_plain_theta() {
        let b = bases();
        let f = from_zeros(&[c(1.0, 0.0)], c(1.0, 0.0), 0, &b).unwrap();
        let z = zeros(&f).unwrap();
        assert_eq!(z.len(), 1);
        assert!(dist_mod_p(z[0], c(1.0, 0.0), b.p()) < 1e-12);
        let rep = zeros(&from_zeros(&[c(3.0, 4.0)], c(1.0, 0.0), 0, &b).unwrap()).unwrap()[0];
        assert!(rep.norm() <= 1.0 && rep.norm() > 0.1);
    }

    #[test]
    fn symmetric_space_dimensions() {
        let b = bases();
        let p = b.p();
        let h = c(1.3, 0.4);
        // degree 2, alpha = h/p, plain symmetry: dimension d + 1 = 2
        let m = Multiplier::new(2, h / p).unwrap();
        let sp = symmetric_subspace(m, Some(SymmetrySpec { h, twist: 0 }), &b).unwrap();
        assert_eq!(sp.len(), 2);
        // degree 4, alpha = (h/p)^2: dimension 3
        let m = Multiplier::new(4, (h / p).powi(2)).unwrap();
        let sp = symmetric_subspace(m, Some(SymmetrySpec { h, twist: 0 }), &b).unwrap();
        assert_eq!(sp.len(), 3);
        for f in &sp {
            for z in spread_points(0.9, 10) {
                let lhs = f.eval(h / z);
                let rhs = f.eval(z);
                assert!((lhs - rhs).norm() <= 1e-10 * lhs.norm().max(rhs.norm()));
            }
        }
    }

    #[test]
    fn twisted_space_for_f() {
        let b = bases();
        let p = b.p();
        let k = c(1.7, 0.0);
        for n in 3..=5usize {
            let d = 2 * n - 4;
            let alpha = p * (k / p).powi(n as i32 - 2);
            let m = Multiplier::new(d, alpha).unwrap();
            let sp = symmetric_subspace(m, Some(SymmetrySpec { h: k, twist: 1 }), &b).unwrap();
            assert_eq!(sp.len(), n - 1);
            let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
            for f in &sp {
                for _ in 0..10 {
                    let z = random_annulus_point(&mut rng, 0.1) * 1.2;
                    let lhs = f.eval(k / z);
                    let rhs = k / (z * z) * f.eval(z);
                    assert!((lhs - rhs).norm() <= 1e-10 * lhs.norm().max(rhs.norm()));
                }
            }
        }
        // G-space: unconstrained, dimension D
        let m = Multiplier::new(3, c(0.02, 0.01)).unwrap();
        assert_eq!(symmetric_subspace(m, None, &b).unwrap().len(), 3);
    }

    #[test]
    fn inconsistent_symmetry_rejected() {
        let b = bases();
        let m = Multiplier::new(2, c(3.0, 0.0)).unwrap();
        let r = symmetric_subspace(m, Some(SymmetrySpec { h: c(1.0, 0.0), twist: 0 }), &b);
        assert!(matches!(r, Err(GarnierError::Inconsistent(_))));
    }

    #[test]
    fn fit_recovers_basis_element_and_held_out_values() {
        let b = bases();
        let p = b.p();
        let k = c(1.7, 0.2);
        let m = Multiplier::new(4, p * (k / p).powi(2)).unwrap();
        let sp = symmetric_subspace(m, Some(SymmetrySpec { h: k, twist: 1 }), &b).unwrap();
        let pts = spread_points(1.1, 6);
        let vals: Vec<C64> = pts.iter().map(|&z| sp[1].eval(z)).collect();
        let fit = fit_values(&sp, &pts, &vals).unwrap();
        let want = [c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)];
        for (a, w) in fit.coefficients.iter().zip(want) {
            assert!((a - w).norm() < 1e-10);
        }
        // F = C z [z/λ1, k/zλ1][z/λ2, k/zλ2] fitted at N-1 = 3 points
        let (l1, l2) = (c(0.6, 0.5), c(-0.3, 0.8));
        let f = |z: C64| c(0.8, 0.1) * z * b.theta(z / l1) * b.theta(k / (z * l1)) * b.theta(z / l2) * b.theta(k / (z * l2));
        let pts = spread_points(1.2, 3);
        let vals: Vec<C64> = pts.iter().map(|&z| f(z)).collect();
        let fit = fit_values(&sp, &pts, &vals).unwrap();
        let z = c(0.37, -0.91);
        assert!((fit.function.eval(z) - f(z)).norm() <= 1e-8 * f(z).norm());
        // zero values give the zero function
        let fit = fit_values(&sp, &pts, &[c(0.0, 0.0); 3]).unwrap();
        assert!(fit.function.is_zero());
    }

    #[test]
    fn fit_rejects_degenerate_points() {
        let b = bases();
        let m = Multiplier::new(2, c(0.5, 0.0)).unwrap();
        let sp = full_space(m, &b);
        let z = c(0.5, 0.5);
        let r = fit_values(&sp, &[z, z], &[c(1.0, 0.0), c(1.0, 0.0)]);
        assert!(matches!(r, Err(GarnierError::IllConditioned { .. })));
    }

    #[test]
    fn ratio_kernel_round_trip() {
        let b = bases();
        let p = b.p();
        let ell = c(0.4, 0.3);
        let x1 = c(0.7, 0.2);
        let xi = [x1, c(0.5, -0.6), ell / (x1 * c(0.5, -0.6))];
        let g = from_zeros(&xi, c(1.0, 0.0), 1, &b).unwrap();
        let space = full_space(g.multiplier(), &b);
        let z_pairs = [(c(0.9, 0.1), c(0.3, 0.7)), (c(-0.4, 0.5), c(1.1, -0.2))];
        let pairs: Vec<(C64, C64, C64)> = z_pairs
            .iter()
            .map(|&(z, zp)| (z, zp, g.eval(zp) / g.eval(z)))
            .collect();
        let fit = ratio_kernel(&space, &pairs).unwrap();
        assert!(fit.gap >= 1e6);
        let found = zeros(&fit.function).unwrap();
        assert!(multiset_distance_mod_p(&found, &xi, p) < 1e-8);
        // one pair on a 2-dim space
        let g2 = from_zeros(&[x1, ell / x1], c(1.0, 0.0), 1, &b).unwrap();
        let sp2 = full_space(g2.multiplier(), &b);
        let (z, zp) = (c(0.9, 0.1), c(0.3, 0.7));
        let fit = ratio_kernel(&sp2, &[(z, zp, g2.eval(zp) / g2.eval(z))]).unwrap();
        let w = c(-0.2, 0.45);
        let ratio = fit.function.eval(w) / g2.eval(w);
        let w2 = c(0.66, 0.1);
        assert!((fit.function.eval(w2) / g2.eval(w2) - ratio).norm() < 1e-10 * ratio.norm());
        // inconsistent pairs on a 2-dim space
        let bad = [(z, zp, c(1.0, 2.0)), (c(0.2, 0.3), c(0.8, 0.1), c(-3.0, 0.5))];
        assert!(matches!(ratio_kernel(&sp2, &bad), Err(GarnierError::Degenerate { .. })));
    }

    #[test]
    fn canonical_representatives() {
        let p = c(0.1, 0.05);
        for z in [c(3.0, 1.0), c(0.001, 0.002), c(0.5, 0.5)] {
            let w = canonical(z, p);
            assert!(w.norm() <= 1.0 && w.norm() > p.norm());
            assert!(dist_mod_p(w, z, p) < 1e-13);
        }
    }

    #[test]
    fn ln_shift_matches_quasi_periodicity() {
        let b = bases();
        let f = from_zeros(&[c(0.5, 0.3), c(-0.2, 0.7), c(0.4, -0.9)], c(1.3, 0.2), 2, &b).unwrap();
        let w = c(0.61, -0.35);
        for m in [-2, -1, 0, 1, 2] {
            let z = w * b.p().powi(m);
            let expect = (f.eval(z) / f.eval(w)).ln();
            let got = f.multiplier().ln_shift(w, m, b.p());
            assert!(((got - expect).exp() - 1.0).norm() < 1e-11, "m = {m}");
        }
    }
}
