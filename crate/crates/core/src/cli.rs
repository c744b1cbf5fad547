//! Command-line driver: configuration, subcommands and output records.
//!
//! Configuration is one JSON document with complex scalars written as
//! `[re, im]`. Anything left out is filled in from the desk generator for
//! the configured seed, and the fully resolved configuration is embedded in
//! every output so that runs can be reproduced from their output alone.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::ser::{SerializeSeq, Serializer};
use serde::Deserialize;
use serde_json::{json, Map, Value};

use crate::error::{GarnierError, Result};
use crate::evolution::{self, StepReport};
use crate::garnier_model::{
    desk_generic_with, desk_pade_with, Direction, GarnierParams, GarnierState, PadeParams, DESK_P, DESK_Q,
};
use crate::pade::{self, Branch, LaxEquation};
use crate::theta_kernel::{Bases, ToleranceConfig, C64};
use crate::theta_space::spread_points;
use crate::verifier::{self, CompatThresholds};

pub const TOOL: &str = "garnier";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Points per circle pair in the compatibility check.
pub const VERIFY_SAMPLES: usize = 20;
/// Threshold for the factorized Painlevé residuals.
pub const PAINLEVE_TOL: f64 = 1e-8;
/// Threshold for the identity suite.
pub const IDENTITY_TOL: f64 = 1e-12;
/// Threshold for the gauged Lax residuals reported by `pade`.
pub const LAX_TOL: f64 = 1e-9;

// ---------------------------------------------------------------------------
// number formatting

/// Format a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// JSON number with 17 significant digits; non-finite values become strings.
pub fn num(x: f64) -> Value {
    if x.is_finite() {
        Value::Number(fmt_f64(x).parse().expect("formatted float parses as a JSON number"))
    } else {
        Value::String(x.to_string())
    }
}

pub fn cplx(z: C64) -> Value {
    Value::Array(vec![num(z.re), num(z.im)])
}

pub fn cplx_vec(v: &[C64]) -> Value {
    Value::Array(v.iter().map(|&z| cplx(z)).collect())
}

struct Num(f64);

impl serde::Serialize for Num {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        num(self.0).serialize(s)
    }
}

struct Cplx(C64);

impl serde::Serialize for Cplx {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(2))?;
        seq.serialize_element(&Num(self.0.re))?;
        seq.serialize_element(&Num(self.0.im))?;
        seq.end()
    }
}

pub fn ser_complex_vec<S: Serializer>(v: &[C64], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|&z| Cplx(z)))
}

pub fn ser_painleve<S: Serializer>(v: &Option<Vec<(C64, C64)>>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        None => s.serialize_str("skipped"),
        Some(v) => s.collect_seq(v.iter().map(|&(a, b)| [Cplx(a), Cplx(b)])),
    }
}

fn to_value<T: serde::Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("report types serialize")
}

/// Re-emit every float in a serialized value with 17 significant digits.
fn canonical_numbers(v: Value) -> Value {
    match v {
        Value::Number(n) if !(n.is_i64() || n.is_u64()) => num(n.as_f64().unwrap_or(f64::NAN)),
        Value::Array(a) => Value::Array(a.into_iter().map(canonical_numbers).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, canonical_numbers(v))).collect()),
        v => v,
    }
}

// ---------------------------------------------------------------------------
// configuration

/// Complex number in `[re, im]` form.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(from = "[f64; 2]")]
struct CJson(C64);

impl From<[f64; 2]> for CJson {
    fn from(v: [f64; 2]) -> Self {
        CJson(C64::new(v[0], v[1]))
    }
}

fn unwrap_all(v: &[CJson]) -> Vec<C64> {
    v.iter().map(|c| c.0).collect()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawState {
    lambda: Vec<CJson>,
    xi: Vec<CJson>,
    c: CJson,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    mode: Mode,
    p: Option<CJson>,
    q: Option<CJson>,
    size: Option<usize>,
    m: Option<usize>,
    n: Option<usize>,
    k: Option<CJson>,
    u: Option<Vec<CJson>>,
    ell: Option<CJson>,
    a: Option<Vec<CJson>>,
    b: Option<Vec<CJson>>,
    state: Option<RawState>,
    steps: Option<usize>,
    direction: Option<String>,
    seed: Option<u64>,
    tolerances: Option<ToleranceConfig>,
    identity_samples: Option<usize>,
    output: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Pade,
    Generic,
}

/// The parameter block of a configuration, one per mode.
#[derive(Debug, Clone)]
pub enum ParamBlock {
    Pade(PadeParams),
    Generic(GarnierParams, GarnierState),
}

/// A fully resolved run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub bases: Bases,
    pub size: usize,
    pub block: ParamBlock,
    pub steps: usize,
    pub direction: Direction,
    pub seed: u64,
    pub identity_samples: usize,
    pub output: Option<String>,
}

/// Overrides from the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub tol: Option<f64>,
}

fn parse_direction(s: &str) -> Result<Direction> {
    match s {
        "forward" => Ok(Direction::Forward),
        "backward" => Ok(Direction::Backward),
        _ => Err(GarnierError::Validation(format!(
            "direction must be \"forward\" or \"backward\", got {s:?}"
        ))),
    }
}

pub fn direction_name(d: Direction) -> &'static str {
    match d {
        Direction::Forward => "forward",
        Direction::Backward => "backward",
    }
}

fn json_error(e: serde_json::Error) -> GarnierError {
    GarnierError::Parse {
        line: e.line(),
        message: e.to_string(),
    }
}

impl RunConfig {
    /// Parse and validate. With `checked = false` the `∏u = k^N` constraint of
    /// a Padé block is not enforced (the identity suite reports it instead).
    pub fn from_json(text: &str, ov: &Overrides, checked: bool) -> Result<RunConfig> {
        let raw: RawConfig = serde_json::from_str(text).map_err(json_error)?;
        Self::resolve(raw, ov, checked)
    }

    pub fn from_value(v: &Value, ov: &Overrides, checked: bool) -> Result<RunConfig> {
        let raw: RawConfig = serde_json::from_value(v.clone()).map_err(json_error)?;
        Self::resolve(raw, ov, checked)
    }

    fn resolve(raw: RawConfig, ov: &Overrides, checked: bool) -> Result<RunConfig> {
        let mut tol = raw.tolerances.unwrap_or_default();
        if let Some(t) = ov.tol {
            tol.residual_tol = t;
        }
        let p = raw.p.map_or(C64::new(DESK_P, 0.0), |c| c.0);
        let q = raw.q.map_or(C64::new(DESK_Q, 0.0), |c| c.0);
        let bases = Bases::with_tolerance(p, q, tol)?;
        let size = raw.size.unwrap_or(3);
        if size < 3 {
            return Err(GarnierError::Validation(format!("N must be at least 3, got {size}")));
        }
        let seed = ov.seed.or(raw.seed).unwrap_or(0);
        let block = match raw.mode {
            Mode::Pade => {
                if raw.ell.is_some() || raw.a.is_some() || raw.b.is_some() || raw.state.is_some() {
                    return Err(GarnierError::Validation(
                        "pade mode takes k and u; ell, a, b and state belong to generic mode".into(),
                    ));
                }
                let (m, n) = (raw.m.unwrap_or(1), raw.n.unwrap_or(1));
                if m + n == 0 {
                    return Err(GarnierError::Validation(
                        "m + n = 0: the interpolation problem needs at least one node beyond the normalization".into(),
                    ));
                }
                let desk = desk_pade_with(bases, seed, size, m, n)?;
                let k = raw.k.map_or(desk.k, |c| c.0);
                let u = raw.u.as_deref().map_or(desk.u.clone(), unwrap_all);
                let params = if checked {
                    PadeParams::new(bases, k, u, m, n)?
                } else {
                    PadeParams::new_unchecked(bases, k, u, m, n)?
                };
                ParamBlock::Pade(params)
            }
            Mode::Generic => {
                if raw.u.is_some() || raw.m.is_some() || raw.n.is_some() {
                    return Err(GarnierError::Validation(
                        "generic mode takes k, ell, a, b and state; u, m and n belong to pade mode".into(),
                    ));
                }
                let (dp, ds) = desk_generic_with(bases, seed, size)?;
                let k = raw.k.map_or(dp.k, |c| c.0);
                let ell = raw.ell.map_or(dp.ell, |c| c.0);
                let a = raw.a.as_deref().map_or(dp.a.clone(), unwrap_all);
                let b = raw.b.as_deref().map_or(dp.b.clone(), unwrap_all);
                let params = GarnierParams::new(bases, k, ell, a, b)?;
                if params.size != size {
                    return Err(GarnierError::Validation(format!(
                        "a and b have {} entries, N = {size} needs {}",
                        params.a.len(),
                        size + 1
                    )));
                }
                let state = match raw.state {
                    Some(s) => GarnierState {
                        lambda: unwrap_all(&s.lambda),
                        xi: unwrap_all(&s.xi),
                        c: s.c.0,
                    },
                    None => ds,
                };
                state.validate(&params)?;
                ParamBlock::Generic(params, state)
            }
        };
        Ok(RunConfig {
            bases,
            size,
            block,
            steps: raw.steps.unwrap_or(5),
            direction: raw.direction.as_deref().map_or(Ok(Direction::Forward), parse_direction)?,
            seed,
            identity_samples: raw.identity_samples.unwrap_or(10_000),
            output: raw.output,
        })
    }

    pub fn mode(&self) -> Mode {
        match self.block {
            ParamBlock::Pade(_) => Mode::Pade,
            ParamBlock::Generic(..) => Mode::Generic,
        }
    }

    /// The resolved configuration as a JSON document that loads back to itself.
    pub fn to_value(&self) -> Value {
        let t = self.bases.tol();
        let mut o = Map::new();
        o.insert("p".into(), cplx(self.bases.p()));
        o.insert("q".into(), cplx(self.bases.q()));
        o.insert("size".into(), json!(self.size));
        o.insert("steps".into(), json!(self.steps));
        o.insert("direction".into(), json!(direction_name(self.direction)));
        o.insert("seed".into(), json!(self.seed));
        o.insert("identity_samples".into(), json!(self.identity_samples));
        o.insert(
            "tolerances".into(),
            json!({
                "series_eps": num(t.series_eps),
                "residual_tol": num(t.residual_tol),
                "annulus_inner_margin": num(t.annulus_inner_margin),
                "max_terms": t.max_terms,
            }),
        );
        if let Some(out) = &self.output {
            o.insert("output".into(), json!(out));
        }
        match &self.block {
            ParamBlock::Pade(pp) => {
                o.insert("mode".into(), json!("pade"));
                o.insert("m".into(), json!(pp.m));
                o.insert("n".into(), json!(pp.n));
                o.insert("k".into(), cplx(pp.k));
                o.insert("u".into(), cplx_vec(&pp.u));
            }
            ParamBlock::Generic(g, s) => {
                o.insert("mode".into(), json!("generic"));
                o.insert("k".into(), cplx(g.k));
                o.insert("ell".into(), cplx(g.ell));
                o.insert("a".into(), cplx_vec(&g.a));
                o.insert("b".into(), cplx_vec(&g.b));
                o.insert("state".into(), state_value(s));
            }
        }
        Value::Object(o)
    }

    /// Starting point of the flow; in Padé mode the state extracted from the
    /// interpolants, with `C` normalized so the Lax pair holds as printed.
    pub fn initial(&self) -> Result<(GarnierParams, GarnierState)> {
        match &self.block {
            ParamBlock::Generic(g, s) => Ok((g.clone(), s.clone())),
            ParamBlock::Pade(pp) => {
                let run = pade::run(pp)?;
                Ok((run.extraction.generic.clone(), run.lax.effective_states().0))
            }
        }
    }
}

pub fn state_value(s: &GarnierState) -> Value {
    json!({
        "lambda": cplx_vec(&s.lambda),
        "xi": cplx_vec(&s.xi),
        "c": cplx(s.c),
    })
}

fn header(kind: &str, cfg: &RunConfig) -> Map<String, Value> {
    let mut o = Map::new();
    o.insert("kind".into(), json!(kind));
    o.insert("tool".into(), json!(TOOL));
    o.insert("version".into(), json!(VERSION));
    o.insert("config".into(), cfg.to_value());
    o
}

// ---------------------------------------------------------------------------
// identity suite

/// Result of one identity over the random samples.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityResult {
    pub name: &'static str,
    pub max_error: f64,
    pub tolerance: f64,
    pub samples: usize,
}

impl IdentityResult {
    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

fn rel_err(a: C64, b: C64) -> f64 {
    (a - b).norm() / a.norm().max(b.norm())
}

/// Run every functional identity of the special functions and the `μ`
/// functions on `samples` random points each. Points that evaluate to a pole
/// count as failures.
pub fn identity_suite(pp: &PadeParams, samples: usize, seed: u64) -> Vec<IdentityResult> {
    let b = pp.bases;
    let (p, q, k) = (b.p(), b.q(), pp.k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1d_e471_7135);
    let mut draw = || C64::from_polar(rng.gen_range(0.3f64.ln()..3.0f64.ln()).exp(), rng.gen_range(0.0..std::f64::consts::TAU));
    let points: Vec<C64> = (0..samples).map(|_| draw()).collect();
    let mut out = Vec::new();
    let mut check = |name: &'static str, f: &dyn Fn(C64) -> Result<(C64, C64)>| {
        let max_error = points
            .iter()
            .map(|&z| match f(z) {
                Ok((l, r)) => {
                    let e = rel_err(l, r);
                    if e.is_nan() {
                        f64::INFINITY
                    } else {
                        e
                    }
                }
                Err(_) => f64::INFINITY,
            })
            .fold(0.0, f64::max);
        out.push(IdentityResult {
            name,
            max_error,
            tolerance: IDENTITY_TOL,
            samples,
        });
    };
    check("theta_quasi_periodicity", &|z| Ok((b.theta(p * z), -b.theta(z) / z)));
    check("theta_inversion", &|z| Ok((b.theta(z), -z * b.theta(z.inv()))));
    check("theta_reflection", &|z| Ok((b.theta(z), b.theta(p / z))));
    check("gamma_q_shift", &|z| Ok((b.gamma(q * z)?, b.theta(z) * b.gamma(z)?)));
    check("gamma_q_inverse_shift", &|z| Ok((b.gamma(z / q)? * b.theta(z / q), b.gamma(z)?)));
    check("gamma_reflection", &|z| Ok((b.gamma(z)? * b.gamma(p * q / z)?, C64::new(1.0, 0.0))));
    check("shifted_factorial", &|z| Ok((b.shifted(z, 3)?, b.gamma(q.powi(3) * z)? / b.gamma(z)?)));
    check("shifted_factorial_negative", &|z| Ok((b.shifted(z, -2)?, b.gamma(z / (q * q))? / b.gamma(z)?)));
    check("mu1_inversion", &|z| Ok((pp.mu1(k / z)? * pp.mu1(z)?, C64::new(1.0, 0.0))));
    check("mu3_reflection", &|z| Ok((pp.mu3(k / (q * z))?, pp.mu2(z)?)));
    check("mu1_p_periodicity", &|z| Ok((pp.mu1(p * z)?, pp.mu1(z)?)));
    check("mu2_p_periodicity", &|z| Ok((pp.mu2(p * z)?, pp.mu2(z)?)));
    check("mu3_p_periodicity", &|z| Ok((pp.mu3(p * z)?, pp.mu3(z)?)));
    out
}

fn identities_value(results: &[IdentityResult]) -> Value {
    Value::Array(
        results
            .iter()
            .map(|r| {
                json!({
                    "name": r.name,
                    "max_error": num(r.max_error),
                    "tolerance": num(r.tolerance),
                    "samples": r.samples,
                    "passed": r.passed(),
                })
            })
            .collect(),
    )
}

// ---------------------------------------------------------------------------
// subcommands

/// Output of a subcommand: the main document, a human summary and the exit code.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub document: String,
    pub summary: String,
    pub exit_code: i32,
    pub csv: Option<String>,
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values serialize");
    s.push('\n');
    s
}

pub fn cmd_identities(cfg: &RunConfig) -> Result<Outcome> {
    let pp = match &cfg.block {
        ParamBlock::Pade(pp) => pp.clone(),
        ParamBlock::Generic(..) => desk_pade_with(cfg.bases, cfg.seed, cfg.size, 1, 1)?,
    };
    let results = identity_suite(&pp, cfg.identity_samples, cfg.seed);
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.name).collect();
    let mut doc = header("identities", cfg);
    doc.insert("constraint_residual".into(), num(pp.constraint_residual()));
    doc.insert("identities".into(), identities_value(&results));
    doc.insert("failed".into(), json!(failed));
    doc.insert("passed".into(), json!(failed.is_empty()));
    let mut summary = String::new();
    for r in &results {
        summary.push_str(&format!(
            "{:<28} {:>12.3e}  {}\n",
            r.name,
            r.max_error,
            if r.passed() { "ok" } else { "FAIL" }
        ));
    }
    for f in &failed {
        summary.push_str(&format!("identity failed: {f}\n"));
    }
    Ok(Outcome {
        document: pretty(&Value::Object(doc)),
        summary,
        exit_code: if failed.is_empty() { 0 } else { 4 },
        csv: None,
    })
}

fn solution_value(s: &pade::PadeSolution) -> Value {
    json!({
        "p_coeffs": cplx_vec(&s.p_coeffs),
        "q_coeffs": cplx_vec(&s.q_coeffs),
        "condition": num(s.condition),
        "gap": num(s.gap),
        "residual": num(s.residual),
        "normalization": pade::NORMALIZATION,
    })
}

pub fn cmd_pade(cfg: &RunConfig) -> Result<Outcome> {
    let ParamBlock::Pade(pp) = &cfg.block else {
        return Err(GarnierError::Validation("the pade command needs mode = \"pade\"".into()));
    };
    let null_route = pade::solve_interpolation(pp)?;
    let moment_route = pade::moment_interpolants(pp)?;
    let route_distance = null_route.coefficient_distance(&moment_route);
    let run = pade::run(pp)?;
    let vanishing = run.cas.vanishing()?;
    let ext = &run.extraction;
    let zs = spread_points(1.0, 20);
    let mut lax = Map::new();
    let mut lax_max: f64 = 0.0;
    for eq in [LaxEquation::L2, LaxEquation::L3] {
        for br in [Branch::P, Branch::PsiQ] {
            let mut worst: f64 = 0.0;
            for &z in &zs {
                worst = worst.max(run.lax.residual(z, eq, br)?);
            }
            lax_max = lax_max.max(worst);
            lax.insert(format!("{eq:?}_{br:?}"), num(worst));
        }
    }
    let xi_prod: C64 = ext.state.xi.iter().product();
    let (eff, eff_bar) = run.lax.effective_states();

    let mut doc = header("pade", cfg);
    doc.insert("solution".into(), solution_value(&null_route));
    doc.insert("moment_solution".into(), solution_value(&moment_route));
    doc.insert("route_distance".into(), num(route_distance));
    doc.insert(
        "vanishing".into(),
        json!({
            "d1": vanishing.d1.iter().map(|&x| num(x)).collect::<Vec<_>>(),
            "d2": vanishing.d2.iter().map(|&x| num(x)).collect::<Vec<_>>(),
            "d3": vanishing.d3.iter().map(|&x| num(x)).collect::<Vec<_>>(),
            "max": num(vanishing.max()),
        }),
    );
    doc.insert(
        "generic".into(),
        json!({
            "k": cplx(ext.generic.k),
            "ell": cplx(ext.generic.ell),
            "a": cplx_vec(&ext.generic.a),
            "b": cplx_vec(&ext.generic.b),
        }),
    );
    doc.insert("state".into(), state_value(&eff));
    doc.insert("bar_state".into(), state_value(&eff_bar));
    doc.insert(
        "fits".into(),
        json!({"f_residual": num(ext.f_fit_residual), "g_residual": num(ext.g_fit_residual)}),
    );
    doc.insert(
        "ell_check".into(),
        json!({
            "xi_product": cplx(xi_prod),
            "ell": cplx(pp.ell()),
            "ell_as_printed": cplx(pp.ell_reciprocal_form()),
            "from_multiplier": cplx(ext.ell_from_multiplier),
        }),
    );
    doc.insert("lax_residuals".into(), Value::Object(lax));
    doc.insert("lax_residual_max".into(), num(lax_max));
    let passed = lax_max <= LAX_TOL;
    doc.insert("passed".into(), json!(passed));

    let summary = format!(
        "{:<24} {:>12.3e}\n{:<24} {:>12.3e}\n{:<24} {:>12.3e}\n{:<24} {:>12.3e}\n{:<24} {:>12.3e}\n",
        "interpolation residual",
        null_route.residual,
        "route distance",
        route_distance,
        "casorati vanishing",
        vanishing.max(),
        "lax residual",
        lax_max,
        "extraction fit",
        ext.f_fit_residual.max(ext.g_fit_residual),
    );
    Ok(Outcome {
        document: pretty(&Value::Object(doc)),
        summary,
        exit_code: if passed { 0 } else { 4 },
        csv: None,
    })
}

fn report_value(r: &StepReport) -> Map<String, Value> {
    let mut o = Map::new();
    o.insert("fup_residuals".into(), cplx_vec(&r.fup_residuals));
    o.insert("gdn_residuals".into(), cplx_vec(&r.gdn_residuals));
    o.insert("kernel_gap".into(), num(r.kernel_gap));
    o.insert("condition".into(), num(r.condition));
    o
}

fn point_value(step: usize, g: &GarnierParams, s: &GarnierState) -> Map<String, Value> {
    let mut o = Map::new();
    o.insert("step".into(), json!(step));
    o.insert("k".into(), cplx(g.k));
    o.insert("ell".into(), cplx(g.ell));
    o.insert("lambda".into(), cplx_vec(&s.lambda));
    o.insert("xi".into(), cplx_vec(&s.xi));
    o.insert("c".into(), cplx(s.c));
    o
}

fn line(v: Map<String, Value>) -> String {
    let mut s = serde_json::to_string(&Value::Object(v)).expect("JSON values serialize");
    s.push('\n');
    s
}

/// `step,index,abs_lambda,arg_lambda,abs_xi,arg_xi`; `λ` columns are empty
/// for the last index, where only a `ξ` exists.
fn csv_rows(step: usize, s: &GarnierState, out: &mut String) {
    for i in 0..s.xi.len() {
        let (al, gl) = match s.lambda.get(i) {
            Some(l) => (fmt_f64(l.norm()), fmt_f64(l.arg())),
            None => (String::new(), String::new()),
        };
        out.push_str(&format!(
            "{step},{i},{al},{gl},{},{}\n",
            fmt_f64(s.xi[i].norm()),
            fmt_f64(s.xi[i].arg())
        ));
    }
}

pub fn cmd_evolve(cfg: &RunConfig) -> Result<Outcome> {
    if cfg.steps == 0 {
        return Err(GarnierError::Validation("steps must be at least 1".into()));
    }
    let (g, s) = cfg.initial()?;
    let (traj, err) = evolution::run_trajectory_partial(&g, &s, cfg.steps, cfg.direction);
    let mut doc = String::new();
    let mut hdr = header("header", cfg);
    hdr.insert("initial".into(), Value::Object(point_value(0, &g, &s)));
    doc.push_str(&line(hdr));
    let mut csv = String::from("step,index,abs_lambda,arg_lambda,abs_xi,arg_xi\n");
    csv_rows(0, &s, &mut csv);
    let mut summary = String::new();
    for (i, st) in traj.iter().enumerate() {
        let mut rec = point_value(i + 1, &st.params, &st.state);
        rec.insert("kind".into(), json!("step"));
        rec.extend(report_value(&st.report));
        doc.push_str(&line(rec));
        csv_rows(i + 1, &st.state, &mut csv);
        summary.push_str(&format!(
            "step {:>3}  max residual {:>10.3e}  kernel gap {:>10.3e}\n",
            i + 1,
            st.report.max_residual(),
            st.report.kernel_gap
        ));
    }
    let exit_code = match &err {
        None => 0,
        Some(e) => {
            let mut rec = Map::new();
            rec.insert("kind".into(), json!("error"));
            rec.insert("exit_code".into(), json!(e.exit_code()));
            rec.insert("message".into(), json!(e.to_string()));
            if let GarnierError::Trajectory { step, source } = e {
                rec.insert("step".into(), json!(step));
                if let GarnierError::StepRejected { report, .. } = source.as_ref() {
                    rec.extend(report_value(report));
                }
            }
            doc.push_str(&line(rec));
            summary.push_str(&format!("error: {e}\n"));
            e.exit_code()
        }
    };
    Ok(Outcome {
        document: doc,
        summary,
        exit_code,
        csv: Some(csv),
    })
}

/// A trajectory read back from `evolve` output.
#[derive(Debug, Clone)]
pub struct TrajectoryFile {
    pub config: RunConfig,
    pub params: GarnierParams,
    pub states: Vec<GarnierState>,
    pub direction: Direction,
}

fn field<'a>(v: &'a Value, key: &str, line: usize) -> Result<&'a Value> {
    v.get(key).ok_or_else(|| GarnierError::Parse {
        line,
        message: format!("missing field {key:?}"),
    })
}

fn parse_c(v: &Value, line: usize) -> Result<C64> {
    let bad = || GarnierError::Parse {
        line,
        message: format!("expected [re, im], got {v}"),
    };
    let a = v.as_array().ok_or_else(bad)?;
    if a.len() != 2 {
        return Err(bad());
    }
    Ok(C64::new(
        a[0].as_f64().ok_or_else(bad)?,
        a[1].as_f64().ok_or_else(bad)?,
    ))
}

fn parse_cv(v: &Value, line: usize) -> Result<Vec<C64>> {
    v.as_array()
        .ok_or_else(|| GarnierError::Parse {
            line,
            message: format!("expected a list of [re, im], got {v}"),
        })?
        .iter()
        .map(|x| parse_c(x, line))
        .collect()
}

fn parse_point(v: &Value, line: usize) -> Result<(C64, C64, GarnierState)> {
    Ok((
        parse_c(field(v, "k", line)?, line)?,
        parse_c(field(v, "ell", line)?, line)?,
        GarnierState {
            lambda: parse_cv(field(v, "lambda", line)?, line)?,
            xi: parse_cv(field(v, "xi", line)?, line)?,
            c: parse_c(field(v, "c", line)?, line)?,
        },
    ))
}

impl TrajectoryFile {
    /// Parse `evolve` output. A trailing error record ends the trajectory.
    pub fn parse(text: &str) -> Result<TrajectoryFile> {
        let mut config = None;
        let mut params: Option<GarnierParams> = None;
        let mut states = Vec::new();
        let mut expect_k = C64::new(0.0, 0.0);
        for (i, raw) in text.lines().enumerate() {
            let ln = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let v: Value = serde_json::from_str(raw).map_err(|e| GarnierError::Parse {
                line: ln,
                message: e.to_string(),
            })?;
            let kind = field(&v, "kind", ln)?.as_str().unwrap_or("");
            match (kind, &config) {
                ("header", None) => {
                    let cfg = RunConfig::from_value(field(&v, "config", ln)?, &Overrides::default(), true)
                        .map_err(|e| GarnierError::Parse {
                            line: ln,
                            message: format!("embedded config: {e}"),
                        })?;
                    let (k, ell, s) = parse_point(field(&v, "initial", ln)?, ln)?;
                    let (a, b) = match &cfg.block {
                        ParamBlock::Generic(g, _) => (g.a.clone(), g.b.clone()),
                        ParamBlock::Pade(pp) => {
                            let g = pp.to_generic()?;
                            (g.a, g.b)
                        }
                    };
                    let g = GarnierParams::new(cfg.bases, k, ell, a, b).map_err(|e| GarnierError::Parse {
                        line: ln,
                        message: format!("initial parameters: {e}"),
                    })?;
                    expect_k = g.k;
                    params = Some(g);
                    states.push(s);
                    config = Some(cfg);
                }
                ("step", Some(cfg)) => {
                    let (k, _, s) = parse_point(&v, ln)?;
                    expect_k = match cfg.direction {
                        Direction::Forward => expect_k / cfg.bases.q(),
                        Direction::Backward => expect_k * cfg.bases.q(),
                    };
                    if (k / expect_k - 1.0).norm() > 1e-12 {
                        return Err(GarnierError::Parse {
                            line: ln,
                            message: format!("k = {k} does not follow the shift, expected {expect_k}"),
                        });
                    }
                    states.push(s);
                }
                ("error", Some(_)) => break,
                _ => {
                    return Err(GarnierError::Parse {
                        line: ln,
                        message: format!("unexpected record kind {kind:?}"),
                    })
                }
            }
        }
        let (Some(config), Some(params)) = (config, params) else {
            return Err(GarnierError::Parse {
                line: 1,
                message: "no header record".into(),
            });
        };
        let direction = config.direction;
        Ok(TrajectoryFile {
            config,
            params,
            states,
            direction,
        })
    }

    /// Parameters and states ordered along the forward flow.
    pub fn forward_order(&self) -> (GarnierParams, Vec<GarnierState>) {
        match self.direction {
            Direction::Forward => (self.params.clone(), self.states.clone()),
            Direction::Backward => {
                let mut g = self.params.clone();
                for _ in 1..self.states.len() {
                    g = g.shift(Direction::Backward);
                }
                (g, self.states.iter().rev().cloned().collect())
            }
        }
    }
}

pub fn cmd_verify(cfg: &RunConfig, params: &GarnierParams, states: &[GarnierState]) -> Result<Outcome> {
    let thresholds = CompatThresholds::default();
    let v = verifier::verify_trajectory(params, states, VERIFY_SAMPLES)?;
    let passed = v.passes(&thresholds, PAINLEVE_TOL);
    let r_match = v.compat.iter().map(|c| c.r_match).fold(0.0, f64::max);
    let mut doc = header("verify", cfg);
    doc.insert("thresholds".into(), canonical_numbers(to_value(&thresholds)));
    doc.insert("painleve_tolerance".into(), num(PAINLEVE_TOL));
    doc.insert("compat".into(), canonical_numbers(to_value(&v.compat)));
    doc.insert(
        "painleve".into(),
        canonical_numbers(match &v.painleve {
            None => json!("skipped"),
            Some(_) => to_value(&v)["painleve"].clone(),
        }),
    );
    doc.insert("r_match_max".into(), num(r_match));
    doc.insert("passed".into(), json!(passed));
    let mut summary = String::new();
    for (i, c) in v.compat.iter().enumerate() {
        summary.push_str(&format!(
            "step {:>3}  r_match {:>10.3e}  antisym {:>10.3e} {:>10.3e}  holo {:>10.3e}  degree {:>10.3e}\n",
            i,
            c.r_match,
            c.antisym_r,
            c.antisym_rt,
            c.holo_probe,
            c.degree_probe
        ));
    }
    match &v.painleve {
        None => summary.push_str("painleve: skipped\n"),
        Some(ps) => {
            let worst = ps.iter().map(|(a, b)| a.norm().max(b.norm())).fold(0.0, f64::max);
            summary.push_str(&format!("painleve max residual {worst:.3e}\n"));
        }
    }
    summary.push_str(if passed { "verification passed\n" } else { "verification FAILED\n" });
    Ok(Outcome {
        document: pretty(&Value::Object(doc)),
        summary,
        exit_code: if passed { 0 } else { 4 },
        csv: None,
    })
}

// ---------------------------------------------------------------------------
// argument parsing

#[derive(Debug, Parser)]
#[command(name = "garnier", version, about = "Elliptic Garnier flow: special functions, Padé construction, evolution and verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file (default: the config's output field, else stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for the desk parameter generator.
    #[arg(long)]
    seed: Option<u64>,
    /// Residual tolerance override.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the special-function identity suite.
    Identities(Common),
    /// Solve the interpolation problem and check the Lax pair.
    Pade(Common),
    /// Integrate the flow and write a JSONL trajectory.
    Evolve {
        #[command(flatten)]
        common: Common,
        /// Also write |λ|, arg λ, |ξ|, arg ξ per step as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Check compatibility along a trajectory.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Trajectory file written by `evolve` (instead of integrating from --config).
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
}

fn io_err(path: &Path, e: std::io::Error) -> GarnierError {
    GarnierError::Io(format!("{}: {e}", path.display()))
}

fn load_config(c: &Common, checked: bool) -> Result<RunConfig> {
    let ov = Overrides { seed: c.seed, tol: c.tol };
    match &c.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            RunConfig::from_json(&text, &ov, checked)
        }
        None => RunConfig::from_json(r#"{"mode": "generic"}"#, &ov, checked),
    }
}

fn write_or_print(path: Option<&Path>, text: &str, stdout: &mut dyn Write) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| io_err(p, e)),
        None => stdout
            .write_all(text.as_bytes())
            .map_err(|e| GarnierError::Io(e.to_string())),
    }
}

fn execute(cli: Cli, stdout: &mut dyn Write) -> Result<Outcome> {
    let (outcome, common) = match cli.command {
        Command::Identities(c) => (cmd_identities(&load_config(&c, false)?)?, c),
        Command::Pade(c) => (cmd_pade(&load_config(&c, true)?)?, c),
        Command::Evolve { common, csv } => {
            let cfg = load_config(&common, true)?;
            let outcome = cmd_evolve(&cfg)?;
            if let (Some(path), Some(text)) = (&csv, &outcome.csv) {
                std::fs::write(path, text).map_err(|e| io_err(path, e))?;
            }
            let out = common.out.clone().or(cfg.output.as_ref().map(PathBuf::from));
            write_or_print(out.as_deref(), &outcome.document, stdout)?;
            return Ok(outcome);
        }
        Command::Verify { common, trajectory } => {
            let outcome = match &trajectory {
                Some(path) => {
                    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
                    let tf = TrajectoryFile::parse(&text)?;
                    let (g, states) = tf.forward_order();
                    cmd_verify(&tf.config, &g, &states)?
                }
                None => {
                    let cfg = load_config(&common, true)?;
                    let (g, s) = cfg.initial()?;
                    let traj = evolution::run_trajectory(&g, &s, cfg.steps.max(1), Direction::Forward)?;
                    let mut states = vec![s];
                    states.extend(traj.into_iter().map(|t| t.state));
                    cmd_verify(&cfg, &g, &states)?
                }
            };
            (outcome, common)
        }
    };
    write_or_print(common.out.as_deref(), &outcome.document, stdout)?;
    Ok(outcome)
}

/// Entry point shared by the binary and the tests: returns the exit code.
pub fn main_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if e.use_stderr() {
                write!(stderr, "{e}")
            } else {
                write!(stdout, "{e}")
            };
            return code;
        }
    };
    match execute(cli, stdout) {
        Ok(o) => {
            let _ = stderr.write_all(o.summary.as_bytes());
            o.exit_code
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
