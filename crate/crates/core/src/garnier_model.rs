//! Parameter sets of the interpolation problem and of the Garnier flow, the
//! shift `T`, the weight `ψ`, the `μ` functions, and the theta products
//! `A`, `B`, `U`, `F`, `G` entering the Lax pair.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{GarnierError, Result};
use crate::theta_kernel::{Bases, C64};
use crate::theta_space::{dist_mod_p, Multiplier};

pub const DESK_P: f64 = 0.10;
pub const DESK_Q: f64 = 0.23;
pub const DESK_K: f64 = 1.7;

const PADE_CONSTRAINT_TOL: f64 = 1e-12;
const GARNIER_CONSTRAINT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn reverse(self) -> Direction {
        match self {
            Direction::Forward => Direction::Backward,
            Direction::Backward => Direction::Forward,
        }
    }
}

fn rel(a: C64, b: C64) -> f64 {
    (a / b - 1.0).norm()
}

/// `(p, q, k, u_1..u_{2N}, m, n)` with `∏ u_i = k^N`.
#[derive(Debug, Clone, PartialEq)]
pub struct PadeParams {
    pub bases: Bases,
    pub k: C64,
    pub u: Vec<C64>,
    pub size: usize,
    pub m: usize,
    pub n: usize,
}

impl PadeParams {
    pub fn new(bases: Bases, k: C64, u: Vec<C64>, m: usize, n: usize) -> Result<Self> {
        let p = Self::new_unchecked(bases, k, u, m, n)?;
        let r = p.constraint_residual();
        if !(r <= PADE_CONSTRAINT_TOL) {
            return Err(GarnierError::Inconsistent(format!(
                "prod u_i = k^N violated: relative residual {r:.3e}"
            )));
        }
        Ok(p)
    }

    /// Shape checks only; the product constraint is not enforced.
    pub fn new_unchecked(bases: Bases, k: C64, u: Vec<C64>, m: usize, n: usize) -> Result<Self> {
        if u.len() < 4 || u.len() % 2 != 0 {
            return Err(GarnierError::Validation(format!(
                "expected 2N >= 4 parameters u_i, got {}",
                u.len()
            )));
        }
        if k.norm() == 0.0 || u.iter().any(|x| x.norm() == 0.0 || !x.is_finite()) || !k.is_finite() {
            return Err(GarnierError::Validation("k and u_i must be finite and nonzero".into()));
        }
        let size = u.len() / 2;
        Ok(PadeParams {
            bases,
            k,
            u,
            size,
            m,
            n,
        })
    }

    /// `|∏ u_i / k^N - 1|`.
    pub fn constraint_residual(&self) -> f64 {
        rel(self.u.iter().product(), self.k.powi(self.size as i32))
    }

    pub fn shift(&self, dir: Direction) -> PadeParams {
        let q = self.bases.q();
        let f = match dir {
            Direction::Forward => q.inv(),
            Direction::Backward => q,
        };
        let mut u = self.u.clone();
        for x in &mut u[self.size..] {
            *x *= f;
        }
        PadeParams {
            k: self.k * f,
            u,
            ..self.clone()
        }
    }

    /// `ψ(z) = ∏ Γ(u_i/z)/Γ(k/(u_i z))`, using `1/Γ(x) = Γ(pq/x)`.
    pub fn psi(&self, z: C64) -> Result<C64> {
        let pq = self.bases.p() * self.bases.q();
        let mut v = C64::new(1.0, 0.0);
        for &ui in &self.u {
            v *= self.bases.gamma(ui / z)? * self.bases.gamma(pq * ui * z / self.k)?;
        }
        Ok(v)
    }

    /// `μ_1(z) = ∏_{i=1}^{2N} [u_i/z]/[k/(u_i z)]`.
    pub fn mu1(&self, z: C64) -> Result<C64> {
        let b = &self.bases;
        let mut v = C64::new(1.0, 0.0);
        for &ui in &self.u {
            v *= b.theta(ui / z) / b.theta_nonzero(self.k / (ui * z), "mu1")?;
        }
        Ok(v)
    }

    /// `μ_2(z) = ∏_{i=1}^{N} [u_i/z]/[k/(u_{N+i} z)]`.
    pub fn mu2(&self, z: C64) -> Result<C64> {
        let b = &self.bases;
        let n = self.size;
        let mut v = C64::new(1.0, 0.0);
        for i in 0..n {
            v *= b.theta(self.u[i] / z) / b.theta_nonzero(self.k / (self.u[n + i] * z), "mu2")?;
        }
        Ok(v)
    }

    /// `μ_3(z) = ∏_{i=1}^{N} [k/(q u_i z)]/[u_{N+i}/(q z)]`.
    pub fn mu3(&self, z: C64) -> Result<C64> {
        let b = &self.bases;
        let q = b.q();
        let n = self.size;
        let mut v = C64::new(1.0, 0.0);
        for i in 0..n {
            v *= b.theta(self.k / (q * self.u[i] * z)) / b.theta_nonzero(self.u[n + i] / (q * z), "mu3")?;
        }
        Ok(v)
    }

    /// `ℓ = q^{1-n} ∏_{i≤N} u_i / k`, the product of the zeros of `G`.
    pub fn ell(&self) -> C64 {
        let prod: C64 = self.u[..self.size].iter().product();
        self.bases.qpow(1 - self.n as i32) * prod / self.k
    }

    /// The product `k q^{n-1}/∏_{i≤N} u_i`, the reciprocal of [`Self::ell`].
    pub fn ell_reciprocal_form(&self) -> C64 {
        self.ell().inv()
    }

    /// Parameters of the Lax pair attached to the interpolation problem.
    pub fn to_generic(&self) -> Result<GarnierParams> {
        let q = self.bases.q();
        let n_ = self.size;
        let mut a = Vec::with_capacity(n_ + 1);
        a.push(self.u[0] * q.powi(self.m as i32));
        a.push(self.u[1] * q.powi(-(self.n as i32)));
        a.extend_from_slice(&self.u[2..n_]);
        a.push(q);
        let mut b: Vec<C64> = self.u[n_..].iter().map(|&x| self.k / x).collect();
        b.push(q.powi(-((self.m + self.n) as i32)));
        GarnierParams::new(self.bases, self.k, self.ell(), a, b)
    }
}

/// `(p, q, k, ℓ, a_1..a_{N+1}, b_1..b_{N+1})` with `k² ℓ² = q ∏ a_i b_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct GarnierParams {
    pub bases: Bases,
    pub k: C64,
    pub ell: C64,
    pub a: Vec<C64>,
    pub b: Vec<C64>,
    pub size: usize,
}

impl GarnierParams {
    pub fn new(bases: Bases, k: C64, ell: C64, a: Vec<C64>, b: Vec<C64>) -> Result<Self> {
        if a.len() != b.len() || a.len() < 4 {
            return Err(GarnierError::Validation(format!(
                "need N+1 >= 4 values in each of a and b, got {} and {}",
                a.len(),
                b.len()
            )));
        }
        if k.norm() == 0.0 || ell.norm() == 0.0 || a.iter().chain(&b).any(|x| x.norm() == 0.0 || !x.is_finite()) {
            return Err(GarnierError::Validation("k, ell, a_i, b_i must be finite and nonzero".into()));
        }
        let size = a.len() - 1;
        let g = GarnierParams {
            bases,
            k,
            ell,
            a,
            b,
            size,
        };
        let r = g.constraint_residual();
        if !(r <= GARNIER_CONSTRAINT_TOL) {
            return Err(GarnierError::Inconsistent(format!(
                "k^2 l^2 = q prod a_i b_i violated: relative residual {r:.3e}"
            )));
        }
        Ok(g)
    }

    /// `|k² ℓ² / (q ∏ a_i b_i) - 1|`.
    pub fn constraint_residual(&self) -> f64 {
        let prod: C64 = self.a.iter().chain(&self.b).product();
        rel(self.k * self.k * self.ell * self.ell, self.bases.q() * prod)
    }

    /// `k → k/q`, `ℓ → q ℓ` forward; `a`, `b` fixed.
    pub fn shift(&self, dir: Direction) -> GarnierParams {
        let q = self.bases.q();
        let f = match dir {
            Direction::Forward => q,
            Direction::Backward => q.inv(),
        };
        GarnierParams {
            k: self.k / f,
            ell: self.ell * f,
            ..self.clone()
        }
    }

    pub fn a_eval(&self, z: C64) -> C64 {
        self.a.iter().map(|&x| self.bases.theta(z / x)).product()
    }

    pub fn b_eval(&self, z: C64) -> C64 {
        self.b.iter().map(|&x| self.bases.theta(z / x)).product()
    }

    pub fn u_eval(&self, z: C64) -> C64 {
        self.a_eval(z) * self.b_eval(z)
    }

    /// A logarithm of `U(z)`.
    pub fn ln_u(&self, z: C64) -> C64 {
        self.a.iter().chain(&self.b).map(|&x| self.bases.ln_theta(z / x)).sum()
    }

    /// Multiplier of the `F`-space at this `k`: degree `2N-4`, `α = p (k/p)^{N-2}`.
    pub fn f_multiplier(&self) -> Multiplier {
        f_multiplier(self.k, self.size, &self.bases)
    }

    /// Multiplier of the `G`-space: degree `N-1`, `α = p (-1)^{N-1} ℓ`.
    pub fn g_multiplier(&self) -> Multiplier {
        g_multiplier(self.ell, self.size, &self.bases)
    }
}

pub fn f_multiplier(k: C64, size: usize, bases: &Bases) -> Multiplier {
    let p = bases.p();
    Multiplier {
        degree: 2 * size - 4,
        alpha: p * (k / p).powi(size as i32 - 2),
    }
}

pub fn g_multiplier(ell: C64, size: usize, bases: &Bases) -> Multiplier {
    let sign = if (size - 1) % 2 == 0 { 1.0 } else { -1.0 };
    Multiplier {
        degree: size - 1,
        alpha: bases.p() * sign * ell,
    }
}

/// The dynamical variables `(λ_1..λ_{N-2}, ξ_1..ξ_{N-1}, C)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GarnierState {
    pub lambda: Vec<C64>,
    pub xi: Vec<C64>,
    pub c: C64,
}

impl GarnierState {
    pub fn validate(&self, params: &GarnierParams) -> Result<()> {
        let n = params.size;
        if self.lambda.len() != n - 2 || self.xi.len() != n - 1 {
            return Err(GarnierError::Validation(format!(
                "state for N = {n} needs {} lambda and {} xi values, got {} and {}",
                n - 2,
                n - 1,
                self.lambda.len(),
                self.xi.len()
            )));
        }
        if self.c.norm() == 0.0 || self.lambda.iter().chain(&self.xi).any(|x| x.norm() == 0.0 || !x.is_finite()) {
            return Err(GarnierError::Validation("state values must be finite and nonzero".into()));
        }
        let r = rel(self.xi.iter().product(), params.ell);
        if !(r <= GARNIER_CONSTRAINT_TOL) {
            return Err(GarnierError::Inconsistent(format!(
                "prod xi_i = l violated: relative residual {r:.3e}"
            )));
        }
        Ok(())
    }

    /// `F(z) = C z ∏ [z/λ_i, k/(z λ_i)]` at the given `k`.
    pub fn f_eval(&self, z: C64, k: C64, bases: &Bases) -> C64 {
        f_product(z, self.c, &self.lambda, k, bases)
    }

    /// `G(z) = z ∏ [z/ξ_i]`.
    pub fn g_eval(&self, z: C64, bases: &Bases) -> C64 {
        g_product(z, &self.xi, bases)
    }

    pub fn ln_f(&self, z: C64, k: C64, bases: &Bases) -> C64 {
        ln_f_product(z, self.c, &self.lambda, k, bases)
    }

    pub fn ln_g(&self, z: C64, bases: &Bases) -> C64 {
        ln_g_product(z, &self.xi, bases)
    }

    /// Copy with `λ` in the canonical band and `ξ` canonical except the last,
    /// which absorbs the powers of `p` needed to keep `∏ ξ_i` unchanged.
    pub fn normalized(&self, k: C64, bases: &Bases) -> GarnierState {
        let p = bases.p();
        let lambda = self.lambda.iter().map(|&l| canonical_lambda(l, k, p)).collect();
        let ell: C64 = self.xi.iter().product();
        GarnierState {
            lambda,
            xi: adjust_product(&self.xi, ell, p),
            c: self.c,
        }
    }
}

pub fn f_product(z: C64, c: C64, lambda: &[C64], k: C64, bases: &Bases) -> C64 {
    let mut v = c * z;
    for &l in lambda {
        v *= bases.theta(z / l) * bases.theta(k / (z * l));
    }
    v
}

pub fn g_product(z: C64, xi: &[C64], bases: &Bases) -> C64 {
    z * xi.iter().map(|&x| bases.theta(z / x)).product::<C64>()
}

/// A logarithm of [`f_product`], usable where the product overflows.
pub fn ln_f_product(z: C64, c: C64, lambda: &[C64], k: C64, bases: &Bases) -> C64 {
    let mut v = c.ln() + z.ln();
    for &l in lambda {
        v += bases.ln_theta(z / l) + bases.ln_theta(k / (z * l));
    }
    v
}

pub fn ln_g_product(z: C64, xi: &[C64], bases: &Bases) -> C64 {
    z.ln() + xi.iter().map(|&x| bases.ln_theta(z / x)).sum::<C64>()
}

/// Representative of `λ` under `λ → p λ`, `λ → k/λ` with
/// `|k|^{1/2} ≤ |λ| < |k|^{1/2} |p|^{-1/2}`.
pub fn canonical_lambda(lambda: C64, k: C64, p: C64) -> C64 {
    let lp = p.norm().ln();
    let mid = 0.5 * k.norm().ln();
    // reduce into [mid + lp/2, mid - lp/2), a full period around mid
    let x = lambda.norm().ln();
    let r = ((x - mid) / lp + 0.5).floor() as i32;
    let mut l = lambda / p.powi(r);
    if l.norm().ln() < mid {
        l = k / l;
    }
    l
}

/// Distance between two `λ` values modulo `p^ℤ` and `λ → k/λ`.
pub fn lambda_distance(a: C64, b: C64, k: C64, p: C64) -> f64 {
    dist_mod_p(a, b, p).min(dist_mod_p(a, k / b, p))
}

/// Canonical representatives of `xs` modulo `p^ℤ`, with the last entry
/// rescaled by the power of `p` that makes the product equal `target`.
/// The ratio `∏ xs / target` must already be a power of `p`.
pub fn adjust_product(xs: &[C64], target: C64, p: C64) -> Vec<C64> {
    let mut out: Vec<C64> = xs.iter().map(|&x| crate::theta_space::canonical(x, p)).collect();
    let prod: C64 = out.iter().product();
    let r = crate::theta_space::p_exponent(target, prod, p);
    let last = out.len() - 1;
    out[last] *= p.powi(r);
    // remove the rounding drift of the product
    let prod: C64 = out.iter().product();
    out[last] *= target / prod;
    out
}

fn desk_bases() -> Bases {
    Bases::new(C64::new(DESK_P, 0.0), C64::new(DESK_Q, 0.0)).expect("desk bases are valid")
}

fn random_unit_scale(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> C64 {
    let r = rng.gen_range(lo.ln()..hi.ln()).exp();
    C64::from_polar(r, rng.gen_range(0.0..std::f64::consts::TAU))
}

/// Desk parameters `p = 0.1`, `q = 0.23`, `k = 1.7`, `|u_i|` log-uniform on
/// `[0.5, 2]` with the last `u` fixed by `∏ u = k^N`.
pub fn desk_pade(seed: u64, size: usize, m: usize, n: usize) -> Result<PadeParams> {
    desk_pade_with(desk_bases(), seed, size, m, n)
}

pub fn desk_pade_with(bases: Bases, seed: u64, size: usize, m: usize, n: usize) -> Result<PadeParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = C64::new(DESK_K, 0.0);
    let mut u: Vec<C64> = (0..2 * size).map(|_| random_unit_scale(&mut rng, 0.5, 2.0)).collect();
    let rest: C64 = u[..2 * size - 1].iter().product();
    u[2 * size - 1] = k.powi(size as i32) / rest;
    PadeParams::new(bases, k, u, m, n)
}

/// Generic desk parameters and an initial state: `a_i`, `b_i`, `λ_i`, `ξ_i`
/// with moduli log-uniform on `[0.5, 1]`, `ℓ = (q ∏ a b)^{1/2}/k`, `C = 1`.
pub fn desk_generic(seed: u64, size: usize) -> Result<(GarnierParams, GarnierState)> {
    desk_generic_with(desk_bases(), seed, size)
}

pub fn desk_generic_with(bases: Bases, seed: u64, size: usize) -> Result<(GarnierParams, GarnierState)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5eed_0000));
    let k = C64::new(DESK_K, 0.0);
    let a: Vec<C64> = (0..=size).map(|_| random_unit_scale(&mut rng, 0.5, 1.0)).collect();
    let b: Vec<C64> = (0..=size).map(|_| random_unit_scale(&mut rng, 0.5, 1.0)).collect();
    let prod: C64 = a.iter().chain(&b).product();
    let ell = (bases.q() * prod).sqrt() / k;
    let params = GarnierParams::new(bases, k, ell, a, b)?;
    let lambda: Vec<C64> = (0..size - 2).map(|_| random_unit_scale(&mut rng, 0.5, 1.0)).collect();
    let mut xi: Vec<C64> = (0..size - 1).map(|_| random_unit_scale(&mut rng, 0.5, 1.0)).collect();
    let head: C64 = xi[..size - 2].iter().product();
    xi[size - 2] = ell / head;
    let state = GarnierState {
        lambda,
        xi,
        c: C64::new(1.0, 0.0),
    };
    state.validate(&params)?;
    Ok((params, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::theta_space::spread_points;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn shift_round_trip_and_constraints() {
        let pp = desk_pade(0, 3, 1, 1).unwrap();
        let back = pp.shift(Direction::Forward).shift(Direction::Backward);
        for (x, y) in back.u.iter().zip(&pp.u) {
            assert!((x - y).norm() <= 1e-14 * y.norm());
        }
        assert!((back.k - pp.k).norm() <= 1e-14);
        assert!(pp.shift(Direction::Forward).constraint_residual() < 1e-12);
        let g = pp.to_generic().unwrap();
        let gs = g.shift(Direction::Forward);
        assert!(gs.constraint_residual() < 1e-10);
        assert!((gs.ell / g.ell - pp.bases.q()).norm() < 1e-14);
    }

    #[test]
    fn generic_lists_for_three() {
        let pp = desk_pade(1, 3, 1, 1).unwrap();
        let q = pp.bases.q();
        let g = pp.to_generic().unwrap();
        let u = &pp.u;
        let want_a = [u[0] * q, u[1] / q, u[2], q];
        let want_b = [pp.k / u[3], pp.k / u[4], pp.k / u[5], q.powi(-2)];
        for (x, y) in g.a.iter().zip(want_a) {
            assert!((x - y).norm() < 1e-14 * y.norm());
        }
        for (x, y) in g.b.iter().zip(want_b) {
            assert!((x - y).norm() < 1e-14 * y.norm());
        }
        assert!(g.constraint_residual() < 1e-10);
    }

    #[test]
    fn shift_commutes_with_conversion() {
        let pp = desk_pade(2, 4, 1, 2).unwrap();
        let g1 = pp.shift(Direction::Forward).to_generic().unwrap();
        let g2 = pp.to_generic().unwrap().shift(Direction::Forward);
        for (x, y) in g1.a.iter().chain(&g1.b).zip(g2.a.iter().chain(&g2.b)) {
            assert!((x - y).norm() < 1e-13 * y.norm());
        }
        assert!((g1.ell - g2.ell).norm() < 1e-13 * g2.ell.norm());
        assert!((g1.k - g2.k).norm() < 1e-13);
    }

    #[test]
    fn psi_ratio_gives_mu1_and_shifted_mu() {
        let pp = desk_pade(0, 3, 1, 1).unwrap();
        let q = pp.bases.q();
        let bar = pp.shift(Direction::Forward);
        for z in spread_points(1.1, 5) {
            let m1 = pp.mu1(z).unwrap();
            let r = pp.psi(z / q).unwrap() / pp.psi(z).unwrap();
            assert!((r - m1).norm() <= 1e-10 * m1.norm());
            let m2 = pp.mu2(z).unwrap();
            let r2 = bar.psi(z / q).unwrap() / pp.psi(z).unwrap();
            assert!((r2 - m2).norm() <= 1e-10 * m2.norm());
            let m3 = pp.mu3(z).unwrap();
            let r3 = bar.psi(z).unwrap() / pp.psi(z).unwrap();
            assert!((r3 - m3).norm() <= 1e-10 * m3.norm());
        }
    }

    #[test]
    fn mu_identities_and_negative_control() {
        let pp = desk_pade(3, 3, 1, 1).unwrap();
        let q = pp.bases.q();
        let p = pp.bases.p();
        for z in spread_points(0.9, 8) {
            let a = pp.mu1(pp.k / z).unwrap() * pp.mu1(z).unwrap();
            assert!((a - 1.0).norm() < 1e-12);
            let m2 = pp.mu2(z).unwrap();
            assert!((pp.mu3(pp.k / (q * z)).unwrap() - m2).norm() < 1e-12 * m2.norm());
            for f in [PadeParams::mu1, PadeParams::mu2, PadeParams::mu3] {
                let v = f(&pp, z).unwrap();
                assert!((f(&pp, p * z).unwrap() - v).norm() <= 1e-11 * v.norm());
            }
        }
        let mut u = pp.u.clone();
        u[0] *= 1.01;
        let bad = PadeParams::new_unchecked(pp.bases, pp.k, u, 1, 1).unwrap();
        assert!(PadeParams::new(bad.bases, bad.k, bad.u.clone(), 1, 1).is_err());
        let z = c(0.8, 0.3);
        assert!((bad.mu1(bad.k / z).unwrap() * bad.mu1(z).unwrap() - 1.0).norm() > 1e-4);
    }

    #[test]
    fn psi_symmetric_case_is_one() {
        // u_i = sqrt(k) makes u_i/z = k/(u_i z)
        let b = Bases::new(c(0.1, 0.0), c(0.23, 0.0)).unwrap();
        let k = c(1.7, 0.0);
        let s = k.sqrt();
        let pp = PadeParams::new(b, k, vec![s; 6], 1, 1).unwrap();
        let v = pp.psi(c(0.7, 0.2)).unwrap();
        assert!((v - 1.0).norm() < 1e-13);
    }

    #[test]
    fn psi_pole_free_at_desk_nodes() {
        for seed in 0..10 {
            for (n_, m, n) in [(3, 1, 1), (4, 1, 2)] {
                let pp = desk_pade(seed, n_, m, n).unwrap();
                for s in 0..=(m + n) as i32 {
                    let v = pp.psi(pp.bases.qpow(-s)).unwrap();
                    assert!(v.is_finite() && v.norm() > 0.0);
                }
            }
        }
    }

    #[test]
    fn theta_products() {
        let (g, st) = desk_generic(0, 3).unwrap();
        let b = g.bases;
        let p = b.p();
        assert!(g.a_eval(g.a[0]).norm() < 1e-15);
        let z = c(0.6, -0.4);
        assert!((g.u_eval(z) - g.a_eval(z) * g.b_eval(z)).norm() < 1e-15 * g.u_eval(z).norm());
        let prod: C64 = g.a.iter().product();
        let want = prod * z.powi(-4);
        assert!((g.a_eval(p * z) / g.a_eval(z) - want).norm() < 1e-12 * want.norm());
        let l = st.lambda[0];
        assert!(st.f_eval(l, g.k, &b).norm() < 1e-15);
        assert!(st.f_eval(g.k / l, g.k, &b).norm() < 1e-14);
        assert!(st.g_eval(st.xi[1], &b).norm() < 1e-15);
        let f = st.f_eval(z, g.k, &b);
        let twisted = st.f_eval(g.k / z, g.k, &b) * z * z / g.k;
        assert!((twisted - f).norm() < 1e-12 * f.norm());
        // multipliers of F and G
        let mf = g.f_multiplier();
        let lhs = st.f_eval(p * z, g.k, &b);
        let rhs = mf.alpha * z.powi(-(mf.degree as i32)) * f;
        assert!((lhs - rhs).norm() < 1e-12 * rhs.norm());
        let mg = g.g_multiplier();
        let gz = st.g_eval(z, &b);
        let rhs = mg.alpha * z.powi(-(mg.degree as i32)) * gz;
        assert!((st.g_eval(p * z, &b) - rhs).norm() < 1e-12 * rhs.norm());
    }

    #[test]
    fn canonical_lambda_band() {
        let k = c(1.7, 0.3);
        let p = c(0.1, 0.02);
        for l in [c(0.05, 0.1), c(3.0, -2.0), c(1.2, 0.4), c(0.9, 0.0)] {
            let r = canonical_lambda(l, k, p);
            assert!(r.norm() >= k.norm().sqrt() * (1.0 - 1e-14));
            assert!(r.norm() < k.norm().sqrt() / p.norm().sqrt());
            assert!(lambda_distance(r, l, k, p) < 1e-13);
        }
    }

    #[test]
    fn adjusted_products_are_exact() {
        let p = c(0.1, 0.0);
        let xs = [c(3.0, 1.0), c(0.02, 0.01), c(-0.5, 0.4)];
        let target: C64 = xs.iter().product::<C64>() * p.powi(3);
        let out = adjust_product(&xs, target, p);
        let prod: C64 = out.iter().product();
        assert!((prod / target - 1.0).norm() < 1e-15);
        assert!(out[0].norm() <= 1.0 && out[0].norm() > 0.1);
    }

    #[test]
    fn desk_is_seeded() {
        assert_eq!(desk_pade(4, 3, 1, 1).unwrap(), desk_pade(4, 3, 1, 1).unwrap());
        assert_ne!(desk_pade(4, 3, 1, 1).unwrap(), desk_pade(5, 3, 1, 1).unwrap());
    }
}
