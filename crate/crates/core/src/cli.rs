//! The `posi` command-line interface.
//!
//! [`run`] parses arguments, executes one subcommand and returns what should
//! be written to stdout/stderr together with the exit code, so the whole
//! front end can be exercised in-process.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::bounds::{
    compute_bounds, corollary_rates, empirical_lower_bound, lower_bound_expr, u_bar, u_sparse, BellGrid, BellParams,
    BoundSet, BoundsConfig, LowerExprInput, Rates, RhoChoice, DEFAULT_GRID,
};
use crate::contrast::{ContrastOptions, DirectionSet, RankPolicy};
use crate::design::{make_equicorr, DesignMatrix, EnsembleSpec};
use crate::distributions::Dof;
use crate::error::{domain, Error, Result};
use crate::family::{one_based, EnumerationOptions, ModelFamily, DEFAULT_ENUMERATION_CAP};
use crate::posi_mc::{coverage_sim, Coverage, CoverageConfig, GammaSample, PosiEstimate};
use crate::rip::{delta, delta_bound_from_kappa_or_inf, rip_report, RipMode, RipOptions};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const CSV_HEADER: &str = "p,s,n,delta,alpha,r,u_orth,u_sparse,u_rip,u_bar_sparse,u_bar_rip,u_tilde_rip,\
k_hat,k_lo,k_hi,gw_hat,gw_se,lower_emp,seed";

#[derive(Parser, Debug)]
#[command(name = "posi", version, about = "PoSI constants, RIP constants and their bounds")]
struct Cli {
    /// Worker threads; results are identical for any value.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Write the output to this file instead of stdout.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Monte Carlo estimate of the PoSI constant K.
    Estimate(EstimateArgs),
    /// Exhaustive RIP constants kappa(X, s) and delta(X, s).
    Rip(RipArgs),
    /// Closed-form and quantile upper bounds for one configuration.
    Bounds(BoundsArgs),
    /// Lower-bound experiment on the equi-correlated design.
    Lower(LowerArgs),
    /// Cartesian parameter scan written as CSV.
    Scan(ScanArgs),
    /// Evaluate B_l(q, r, rho) directly.
    Bl(BlArgs),
    /// Simultaneous coverage of PoSI intervals.
    Cover(CoverArgs),
}

#[derive(Args, Debug, Clone)]
struct DesignArgs {
    /// Design matrix CSV (no header, one row per observation).
    #[arg(long, conflicts_with = "ensemble")]
    design: Option<PathBuf>,
    /// Ensemble spec, e.g. identity:p=10, gauss:n=200,p=40,seed=7, equicorr:p=64,k=32,c=0.1.
    #[arg(long)]
    ensemble: Option<String>,
}

#[derive(Args, Debug, Clone)]
struct FamilyArgs {
    /// Use all models of size 1..=s.
    #[arg(long, conflicts_with = "models")]
    s: Option<usize>,
    /// File with one model per line (1-based indices).
    #[arg(long)]
    models: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct McArgs {
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Degrees of freedom of the variance estimate: an integer or "inf".
    #[arg(long, default_value = "inf")]
    r: Dof,
    #[arg(long, default_value_t = 10_000)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args, Debug, Clone)]
struct EnumArgs {
    /// Maximum number of (M, i) pairs or subsets to enumerate.
    #[arg(long, default_value_t = DEFAULT_ENUMERATION_CAP)]
    cap: u64,
    /// Stream the model family instead of failing above the cap.
    #[arg(long)]
    stream: bool,
    /// Drop rank-deficient models and list them instead of failing.
    #[arg(long)]
    skip_rank_deficient: bool,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[command(flatten)]
    design: DesignArgs,
    #[command(flatten)]
    family: FamilyArgs,
    #[command(flatten)]
    mc: McArgs,
    #[command(flatten)]
    enumeration: EnumArgs,
}

#[derive(Args, Debug)]
struct RipArgs {
    #[command(flatten)]
    design: DesignArgs,
    #[arg(long)]
    s: usize,
    #[arg(long, default_value_t = DEFAULT_ENUMERATION_CAP)]
    cap: u64,
    /// Above the cap, report the maximum over this many random subsets as a
    /// lower estimate instead of failing.
    #[arg(long)]
    sample: Option<u64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum Format {
    Json,
    Csv,
}

#[derive(Args, Debug)]
struct BoundsArgs {
    /// Take p, n and delta(X, s) from a design instead of --p/--n/--delta.
    #[command(flatten)]
    design: DesignArgs,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    s: usize,
    /// Rows of the design; defaults to p.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value = "inf")]
    r: Dof,
    /// Grid size of the B_l evaluation.
    #[arg(long, default_value_t = DEFAULT_GRID)]
    grid: usize,
    /// Count used for rho in the second B_l term: models or pairs.
    #[arg(long, default_value = "models")]
    rho_count: RhoChoice,
    /// Equi-correlation block size for the closed-form lower bound.
    #[arg(long, requires_all = ["c", "a"])]
    k: Option<usize>,
    #[arg(long, requires_all = ["k", "a"])]
    c: Option<f64>,
    /// Universal constant of the closed-form lower bound.
    #[arg(long, requires_all = ["k", "c"])]
    a: Option<f64>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args, Debug)]
struct LowerArgs {
    #[arg(long)]
    p: usize,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    c: f64,
    #[arg(long)]
    s: usize,
    #[command(flatten)]
    mc: McArgs,
    /// Universal constant for the closed-form expression; omitted if unset.
    #[arg(long)]
    a: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_ENUMERATION_CAP)]
    cap: u64,
}

#[derive(Args, Debug)]
struct ScanArgs {
    /// JSON file describing the grid.
    #[arg(long)]
    grid_spec: PathBuf,
    /// Skip the first rows (0-based data row index) to resume a scan; the
    /// header is written only when starting at 0.
    #[arg(long, default_value_t = 0)]
    start_row: usize,
}

#[derive(Args, Debug)]
struct BlArgs {
    #[arg(long)]
    q: u64,
    #[arg(long, default_value = "inf")]
    r: Dof,
    /// Count rho >= 1; scientific notation beyond f64 range (e.g. 1e400) is
    /// accepted.
    #[arg(long, default_value = "1")]
    rho: String,
    #[arg(long, default_value_t = 0.05)]
    level: f64,
    #[arg(long, default_value_t = DEFAULT_GRID)]
    grid: usize,
}

#[derive(Args, Debug)]
struct CoverArgs {
    #[command(flatten)]
    design: DesignArgs,
    #[command(flatten)]
    family: FamilyArgs,
    #[command(flatten)]
    mc: McArgs,
    /// Multiplier K: a number, "estimate" (Monte Carlo K-hat) or
    /// "u_bar_sparse".
    #[arg(long)]
    k: String,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Mean vector as comma-separated values; zeros if omitted.
    #[arg(long)]
    mu: Option<String>,
    /// Replicates for --k estimate.
    #[arg(long, default_value_t = 100_000)]
    k_reps: usize,
    /// Seed for --k estimate; defaults to seed + 1.
    #[arg(long)]
    k_seed: Option<u64>,
}

/// Result of one CLI invocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

#[derive(Serialize)]
struct Envelope<C: Serialize, R: Serialize> {
    version: &'static str,
    command: &'static str,
    config: C,
    result: R,
}

fn envelope<C: Serialize, R: Serialize>(command: &'static str, config: C, result: R) -> Result<String> {
    let env = Envelope { version: VERSION, command, config, result };
    let mut s = serde_json::to_string_pretty(&env).map_err(|e| domain(format!("serialization failed: {e}")))?;
    s.push('\n');
    Ok(s)
}

#[derive(Serialize, Clone, Debug)]
#[serde(rename_all = "snake_case")]
enum DesignSource {
    File(String),
    Ensemble(String),
}

fn load_design(a: &DesignArgs) -> Result<Option<(DesignMatrix, DesignSource)>> {
    match (&a.design, &a.ensemble) {
        (Some(path), None) => {
            let x = DesignMatrix::read_csv(path)?;
            Ok(Some((x, DesignSource::File(path.display().to_string()))))
        }
        (None, Some(spec)) => {
            let spec: EnsembleSpec = spec.parse()?;
            Ok(Some((spec.build()?, DesignSource::Ensemble(spec.to_string()))))
        }
        (None, None) => Ok(None),
        (Some(_), Some(_)) => Err(Error::Parse("--design and --ensemble are mutually exclusive".into())),
    }
}

fn require_design(a: &DesignArgs) -> Result<(DesignMatrix, DesignSource)> {
    load_design(a)?.ok_or_else(|| Error::Parse("one of --design or --ensemble is required".into()))
}

#[derive(Serialize, Clone, Debug)]
#[serde(rename_all = "snake_case")]
enum FamilySource {
    Sparse { s: usize },
    Explicit { path: String, models: usize },
}

fn load_family(a: &FamilyArgs, p: usize) -> Result<(ModelFamily, FamilySource)> {
    match (a.s, &a.models) {
        (Some(s), None) => Ok((ModelFamily::sparse(p, s)?, FamilySource::Sparse { s })),
        (None, Some(path)) => {
            let text = fs::read_to_string(path)?;
            let fam = ModelFamily::parse_explicit(p, &text)?;
            let models = fam.model_count() as usize;
            Ok((fam, FamilySource::Explicit { path: path.display().to_string(), models }))
        }
        _ => Err(Error::Parse("exactly one of --s or --models is required".into())),
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Parse(format!("--alpha {alpha} must lie in (0, 1)")));
    }
    Ok(())
}

fn contrast_options(e: &EnumArgs) -> ContrastOptions {
    ContrastOptions {
        rank_policy: if e.skip_rank_deficient { RankPolicy::SkipWithReport } else { RankPolicy::FailFast },
        enumeration: EnumerationOptions { cap: e.cap, streaming: e.stream },
    }
}

#[derive(Serialize)]
struct McConfig {
    alpha: f64,
    r: Dof,
    reps: usize,
    seed: u64,
}

impl From<&McArgs> for McConfig {
    fn from(m: &McArgs) -> Self {
        Self { alpha: m.alpha, r: m.r, reps: m.reps, seed: m.seed }
    }
}

#[derive(Serialize)]
struct EstimateConfig {
    design: DesignSource,
    n: usize,
    p: usize,
    family: FamilySource,
    #[serde(flatten)]
    mc: McConfig,
    cap: u64,
    stream: bool,
    skip_rank_deficient: bool,
}

#[derive(Serialize)]
struct EstimateResult {
    #[serde(flatten)]
    estimate: PosiEstimate,
    directions: usize,
    pairs: u64,
    zero_pairs: u64,
    skipped_models: Vec<Vec<usize>>,
}

fn cmd_estimate(a: &EstimateArgs) -> Result<String> {
    check_alpha(a.mc.alpha)?;
    let (x, source) = require_design(&a.design)?;
    let (fam, fsrc) = load_family(&a.family, x.p())?;
    let dirs = DirectionSet::build(&x, &fam, contrast_options(&a.enumeration))?;
    let estimate = crate::posi_mc::estimate_k(&dirs, a.mc.alpha, a.mc.r, a.mc.reps, a.mc.seed)?;
    let config = EstimateConfig {
        design: source,
        n: x.n(),
        p: x.p(),
        family: fsrc,
        mc: (&a.mc).into(),
        cap: a.enumeration.cap,
        stream: a.enumeration.stream,
        skip_rank_deficient: a.enumeration.skip_rank_deficient,
    };
    let result = EstimateResult {
        estimate,
        directions: dirs.len(),
        pairs: dirs.pairs,
        zero_pairs: dirs.zero_pairs,
        skipped_models: dirs.skipped.iter().map(|m| one_based(m)).collect(),
    };
    envelope("estimate", config, result)
}

#[derive(Serialize)]
struct RipConfig {
    design: DesignSource,
    n: usize,
    p: usize,
    s: usize,
    cap: u64,
    sample: Option<u64>,
    seed: u64,
}

#[derive(Serialize)]
struct RipResult {
    s: usize,
    kappa: f64,
    delta: f64,
    argmax_kappa: Vec<usize>,
    argmax_delta: Vec<usize>,
    subsets_examined: u64,
    exact: bool,
    /// `2 kappa / (1 - kappa)`; null when kappa >= 1.
    delta_bound_from_kappa: Option<f64>,
}

fn cmd_rip(a: &RipArgs) -> Result<String> {
    let (x, source) = require_design(&a.design)?;
    let mode = match a.sample {
        Some(samples) => RipMode::SampledAboveCap { samples, seed: a.seed },
        None => RipMode::Exhaustive,
    };
    let r = rip_report(&x, a.s, RipOptions { cap: a.cap, mode })?;
    let bound = delta_bound_from_kappa_or_inf(r.kappa)?;
    let result = RipResult {
        s: r.s,
        kappa: r.kappa,
        delta: r.delta,
        argmax_kappa: one_based(&r.argmax_kappa),
        argmax_delta: one_based(&r.argmax_delta),
        subsets_examined: r.subsets_examined,
        exact: r.exact,
        delta_bound_from_kappa: bound.is_finite().then_some(bound),
    };
    let config = RipConfig { design: source, n: x.n(), p: x.p(), s: a.s, cap: a.cap, sample: a.sample, seed: a.seed };
    envelope("rip", config, result)
}

/// One row of the fixed CSV schema.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CsvRow {
    pub p: usize,
    pub s: usize,
    pub n: usize,
    pub delta: f64,
    pub alpha: f64,
    pub r: Dof,
    pub u_orth: f64,
    pub u_sparse: f64,
    pub u_rip: f64,
    pub u_bar_sparse: f64,
    pub u_bar_rip: f64,
    pub u_tilde_rip: Option<f64>,
    pub k_hat: Option<f64>,
    pub k_lo: Option<f64>,
    pub k_hi: Option<f64>,
    pub gw_hat: Option<f64>,
    pub gw_se: Option<f64>,
    pub lower_emp: Option<f64>,
    pub seed: Option<u64>,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl CsvRow {
    fn from_bounds(b: &BoundSet) -> Self {
        Self {
            p: b.p,
            s: b.s,
            n: b.n,
            delta: b.delta,
            alpha: b.alpha,
            r: b.r,
            u_orth: b.u_orth,
            u_sparse: b.u_sparse,
            u_rip: b.u_rip,
            u_bar_sparse: b.u_bar_sparse,
            u_bar_rip: b.u_bar_rip,
            u_tilde_rip: b.u_tilde_rip,
            k_hat: None,
            k_lo: None,
            k_hi: None,
            gw_hat: None,
            gw_se: None,
            lower_emp: None,
            seed: None,
        }
    }

    pub fn to_line(&self) -> String {
        let fields = [
            self.p.to_string(),
            self.s.to_string(),
            self.n.to_string(),
            self.delta.to_string(),
            self.alpha.to_string(),
            self.r.to_string(),
            self.u_orth.to_string(),
            self.u_sparse.to_string(),
            self.u_rip.to_string(),
            self.u_bar_sparse.to_string(),
            self.u_bar_rip.to_string(),
            opt(self.u_tilde_rip),
            opt(self.k_hat),
            opt(self.k_lo),
            opt(self.k_hi),
            opt(self.gw_hat),
            opt(self.gw_se),
            opt(self.lower_emp),
            opt(self.seed),
        ];
        fields.join(",")
    }
}

#[derive(Serialize)]
struct BoundsCliConfig {
    design: Option<DesignSource>,
    p: usize,
    s: usize,
    n: usize,
    delta: f64,
    delta_source: &'static str,
    alpha: f64,
    r: Dof,
    grid: usize,
    rho_count: RhoChoice,
    lower_expr_input: Option<LowerExprInput>,
    format: Format,
}

#[derive(Serialize)]
struct BoundsResult {
    #[serde(flatten)]
    bounds: BoundSet,
    rates: Option<Rates>,
}

fn cmd_bounds(a: &BoundsArgs) -> Result<String> {
    check_alpha(a.alpha)?;
    let design = load_design(&a.design)?;
    let (p, n, delta_value, source, delta_source) = match &design {
        Some((x, src)) => {
            if a.p.is_some() || a.n.is_some() {
                return Err(Error::Parse("--p/--n are taken from the design".into()));
            }
            let (d, from) = match a.delta {
                Some(d) => (d, "given"),
                None => (delta(x, a.s, RipOptions::default())?.value, "exhaustive"),
            };
            (x.p(), x.n(), d, Some(src.clone()), from)
        }
        None => {
            let p = a.p.ok_or_else(|| Error::Parse("--p is required without a design".into()))?;
            let d = a.delta.ok_or_else(|| Error::Parse("--delta is required without a design".into()))?;
            (p, a.n.unwrap_or(p), d, None, "given")
        }
    };
    let cfg = BoundsConfig { p, s: a.s, n, delta: delta_value, alpha: a.alpha, r: a.r, grid: a.grid, rho: a.rho_count };
    let lower = match (a.k, a.c, a.a) {
        (Some(k), Some(c), Some(a)) => Some(LowerExprInput { k, c, a }),
        _ => None,
    };
    let bounds = compute_bounds(&cfg, lower)?;
    if a.format == Format::Csv {
        return Ok(format!("{CSV_HEADER}\n{}\n", CsvRow::from_bounds(&bounds).to_line()));
    }
    let rates = (delta_value > 0.0 && a.s < p).then(|| corollary_rates(p, a.s, delta_value)).transpose()?;
    let config = BoundsCliConfig {
        design: source,
        p,
        s: a.s,
        n,
        delta: delta_value,
        delta_source,
        alpha: a.alpha,
        r: a.r,
        grid: a.grid,
        rho_count: a.rho_count,
        lower_expr_input: lower,
        format: a.format,
    };
    envelope("bounds", config, BoundsResult { bounds, rates })
}

#[derive(Serialize)]
struct LowerConfig {
    p: usize,
    k: usize,
    c: f64,
    s: usize,
    #[serde(flatten)]
    mc: McConfig,
    a: Option<f64>,
    cap: u64,
}

#[derive(Serialize)]
struct LowerResult {
    empirical_lower: f64,
    empirical_lower_se: f64,
    k_hat: f64,
    k_ci: (f64, f64),
    k_se: f64,
    gauss_width_hat: f64,
    gauss_width_se: f64,
    median_gamma_inf: f64,
    rip_delta: f64,
    lower_expr: Option<f64>,
}

fn cmd_lower(a: &LowerArgs) -> Result<String> {
    check_alpha(a.mc.alpha)?;
    let x = make_equicorr(a.p, a.k, a.c)?;
    let fam = ModelFamily::sparse(a.p, a.s)?;
    let emp = empirical_lower_bound(a.p, a.k, a.c, a.s, a.mc.reps, a.mc.seed)?;
    let lower_expr = a.a.map(|aa| lower_bound_expr(a.s, a.k, a.c, aa)).transpose()?;
    let opts = ContrastOptions { enumeration: EnumerationOptions { cap: a.cap, streaming: false }, ..Default::default() };
    let dirs = DirectionSet::build(&x, &fam, opts)?;
    let sample = GammaSample::simulate(&dirs, a.mc.r, a.mc.reps, a.mc.seed);
    let est = sample.estimate(a.mc.alpha)?;
    let result = LowerResult {
        empirical_lower: emp.value,
        empirical_lower_se: emp.se,
        k_hat: est.k_hat,
        k_ci: est.k_ci,
        k_se: est.k_se,
        gauss_width_hat: est.gauss_width_hat,
        gauss_width_se: est.gauss_width_se,
        median_gamma_inf: sample.median_gamma_inf(),
        rip_delta: crate::rip::equicorr_rip_constant(a.p, a.k, a.c, a.s)?,
        lower_expr,
    };
    let config = LowerConfig { p: a.p, k: a.k, c: a.c, s: a.s, mc: (&a.mc).into(), a: a.a, cap: a.cap };
    envelope("lower", config, result)
}

/// JSON grid description for `scan`.
///
/// Either `p` (with optional `n`, `delta` or `delta_power`) or `ensembles`
/// must be given; `s` is a list or `s_exponent` (`s = ceil(p^e)`).
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSpec {
    #[serde(default)]
    pub p: Vec<usize>,
    #[serde(default)]
    pub n: Vec<usize>,
    #[serde(default)]
    pub s: Vec<usize>,
    pub s_exponent: Option<f64>,
    #[serde(default)]
    pub delta: Vec<f64>,
    pub delta_power: Option<f64>,
    #[serde(default)]
    pub ensembles: Vec<String>,
    #[serde(default = "default_alphas")]
    pub alpha: Vec<f64>,
    #[serde(default = "default_dofs")]
    pub r: Vec<Dof>,
    /// Monte Carlo replicates per cell; 0 disables the Monte Carlo columns.
    #[serde(default)]
    pub reps: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default)]
    pub rho_count: RhoChoice,
}

fn default_alphas() -> Vec<f64> {
    vec![0.05]
}

fn default_dofs() -> Vec<Dof> {
    vec![Dof::Infinite]
}

fn default_seed() -> u64 {
    1
}

fn default_grid() -> usize {
    DEFAULT_GRID
}

/// `x^e` rounded up, with values within 1e-9 of an integer snapped first.
fn ceil_pow(x: usize, e: f64) -> usize {
    let v = (x as f64).powf(e);
    let r = v.round();
    if (v - r).abs() <= 1e-9 * r.max(1.0) {
        r as usize
    } else {
        v.ceil() as usize
    }
}

impl ScanSpec {
    fn s_values(&self, p: usize) -> Result<Vec<usize>> {
        match (self.s_exponent, self.s.is_empty()) {
            (Some(e), true) => Ok(vec![ceil_pow(p, e).clamp(1, p)]),
            (None, false) => {
                if let Some(&bad) = self.s.iter().find(|&&s| s == 0 || s > p) {
                    return Err(domain(format!("scan: s = {bad} is outside 1..={p}")));
                }
                Ok(self.s.clone())
            }
            _ => Err(Error::Parse("scan: give exactly one of s or s_exponent".into())),
        }
    }

    fn delta_values(&self, p: usize) -> Result<Vec<f64>> {
        match (self.delta_power, self.delta.is_empty()) {
            (Some(a), true) => Ok(vec![(p as f64).powf(a)]),
            (None, false) => Ok(self.delta.clone()),
            _ => Err(Error::Parse("scan: give exactly one of delta or delta_power".into())),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.ensembles.is_empty() == self.p.is_empty() {
            return Err(Error::Parse("scan: give exactly one of p or ensembles".into()));
        }
        if !self.ensembles.is_empty() && (!self.n.is_empty() || !self.delta.is_empty() || self.delta_power.is_some()) {
            return Err(Error::Parse("scan: n and delta are taken from the ensembles".into()));
        }
        if self.alpha.is_empty() || self.r.is_empty() {
            return Err(Error::Parse("scan: alpha and r must be non-empty".into()));
        }
        for &a in &self.alpha {
            check_alpha(a)?;
        }
        if self.reps > 0 && self.reps < crate::posi_mc::MIN_REPS {
            return Err(Error::TooFewReps { reps: self.reps, min: crate::posi_mc::MIN_REPS });
        }
        Ok(())
    }
}

/// All data rows of a scan in order, skipping the first `start_row`.
pub fn scan_rows(spec: &ScanSpec, start_row: usize) -> Result<Vec<CsvRow>> {
    spec.validate()?;
    let mut rows = Vec::new();
    let mut index = 0usize;
    let keep = |row: &dyn Fn() -> Result<CsvRow>, rows: &mut Vec<CsvRow>, index: &mut usize| -> Result<()> {
        if *index >= start_row {
            rows.push(row()?);
        }
        *index += 1;
        Ok(())
    };
    let bounds_row = |p, s, n, d, alpha, r| -> Result<CsvRow> {
        let cfg = BoundsConfig { p, s, n, delta: d, alpha, r, grid: spec.grid, rho: spec.rho_count };
        Ok(CsvRow::from_bounds(&compute_bounds(&cfg, None)?))
    };
    if spec.ensembles.is_empty() {
        for &p in &spec.p {
            let ns = if spec.n.is_empty() { vec![p] } else { spec.n.clone() };
            for &n in &ns {
                for s in spec.s_values(p)? {
                    for d in spec.delta_values(p)? {
                        for &alpha in &spec.alpha {
                            for &r in &spec.r {
                                keep(&|| bounds_row(p, s, n, d, alpha, r), &mut rows, &mut index)?;
                            }
                        }
                    }
                }
            }
        }
        return Ok(rows);
    }
    for text in &spec.ensembles {
        let ens: EnsembleSpec = text.parse()?;
        let x = ens.build()?;
        let (p, n) = (x.p(), x.n());
        for s in spec.s_values(p)? {
            let cells = spec.alpha.len() * spec.r.len();
            if index + cells <= start_row {
                index += cells;
                continue;
            }
            let d = delta(&x, s, RipOptions::default())?.value;
            let dirs = if spec.reps > 0 {
                Some(DirectionSet::build(&x, &ModelFamily::sparse(p, s)?, ContrastOptions::default())?)
            } else {
                None
            };
            let lower_emp = match (&ens, spec.reps > 0) {
                (EnsembleSpec::Equicorr { k, c, .. }, true) if s <= *k => {
                    Some(empirical_lower_bound(p, *k, *c, s, spec.reps, spec.seed)?.value)
                }
                _ => None,
            };
            for &r in &spec.r {
                let sample = dirs.as_ref().map(|d| GammaSample::simulate(d, r, spec.reps, spec.seed));
                for &alpha in &spec.alpha {
                    keep(
                        &|| {
                            let mut row = bounds_row(p, s, n, d, alpha, r)?;
                            if let Some(sample) = &sample {
                                let est = sample.estimate(alpha)?;
                                row.k_hat = Some(est.k_hat);
                                row.k_lo = Some(est.k_ci.0);
                                row.k_hi = Some(est.k_ci.1);
                                row.gw_hat = Some(est.gauss_width_hat);
                                row.gw_se = Some(est.gauss_width_se);
                                row.lower_emp = lower_emp;
                                row.seed = Some(spec.seed);
                            }
                            Ok(row)
                        },
                        &mut rows,
                        &mut index,
                    )?;
                }
            }
        }
    }
    Ok(rows)
}

fn cmd_scan(a: &ScanArgs) -> Result<String> {
    let text = fs::read_to_string(&a.grid_spec)?;
    let spec: ScanSpec = serde_json::from_str(&text).map_err(|e| Error::Parse(format!("grid spec: {e}")))?;
    let rows = scan_rows(&spec, a.start_row)?;
    let mut out = String::new();
    if a.start_row == 0 {
        out.push_str(CSV_HEADER);
        out.push('\n');
    }
    for row in rows {
        out.push_str(&row.to_line());
        out.push('\n');
    }
    Ok(out)
}

/// Parses a positive count, possibly beyond `f64` range, into its natural log.
pub fn parse_ln_count(text: &str) -> Result<f64> {
    let t = text.trim();
    let bad = || Error::Parse(format!("invalid count {text:?}"));
    if let Ok(v) = t.parse::<f64>() {
        if v.is_finite() && v > 0.0 {
            return Ok(v.ln());
        }
    }
    let (mantissa, exponent) = t.split_once(['e', 'E']).ok_or_else(bad)?;
    let m: f64 = mantissa.parse().map_err(|_| bad())?;
    let e: i64 = exponent.parse().map_err(|_| bad())?;
    if !(m > 0.0) || !m.is_finite() {
        return Err(bad());
    }
    Ok(m.ln() + e as f64 * std::f64::consts::LN_10)
}

#[derive(Serialize)]
struct BlConfig {
    q: u64,
    r: Dof,
    rho: String,
    ln_rho: f64,
    level: f64,
    grid: usize,
}

#[derive(Serialize)]
struct BlResult {
    value: f64,
    h_at_value: f64,
}

fn cmd_bl(a: &BlArgs) -> Result<String> {
    let ln_rho = parse_ln_count(&a.rho)?;
    let params = BellParams::with_ln_rho(a.q, a.r, ln_rho, a.level, a.grid)?;
    let grid = BellGrid::for_params(&params)?;
    let value = grid.solve(a.r, a.level)?;
    let h_at_value = grid.h(value, a.r)?;
    let config = BlConfig { q: a.q, r: a.r, rho: a.rho.clone(), ln_rho, level: a.level, grid: a.grid };
    envelope("bl", config, BlResult { value, h_at_value })
}

#[derive(Serialize)]
struct CoverConfig {
    design: DesignSource,
    n: usize,
    p: usize,
    family: FamilySource,
    #[serde(flatten)]
    mc: McConfig,
    k: String,
    sigma: f64,
    mu: Vec<f64>,
    k_reps: Option<usize>,
    k_seed: Option<u64>,
}

fn parse_mu(text: Option<&str>, n: usize) -> Result<Vec<f64>> {
    let Some(text) = text else { return Ok(vec![0.0; n]) };
    let mu = text
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| Error::Parse(format!("--mu: bad value {t:?}"))))
        .collect::<Result<Vec<f64>>>()?;
    if mu.len() != n {
        return Err(Error::Parse(format!("--mu has {} values, design has {n} rows", mu.len())));
    }
    Ok(mu)
}

fn cmd_cover(a: &CoverArgs) -> Result<String> {
    check_alpha(a.mc.alpha)?;
    let (x, source) = require_design(&a.design)?;
    let (fam, fsrc) = load_family(&a.family, x.p())?;
    let mu = parse_mu(a.mu.as_deref(), x.n())?;
    let k_seed = a.k_seed.unwrap_or(a.mc.seed.wrapping_add(1));
    let (k, mc_k) = match a.k.trim() {
        "estimate" => {
            let dirs = DirectionSet::build(&x, &fam, ContrastOptions::default())?;
            (crate::posi_mc::estimate_k(&dirs, a.mc.alpha, a.mc.r, a.k_reps, k_seed)?.k_hat, true)
        }
        "u_bar_sparse" => (u_bar(u_sparse(x.p(), fam.max_model_size())?, a.mc.alpha, a.mc.r)?, false),
        other => (other.parse::<f64>().map_err(|_| Error::Parse(format!("--k: bad value {other:?}")))?, false),
    };
    let cfg = CoverageConfig { sigma: a.sigma, alpha: a.mc.alpha, r: a.mc.r, k, reps: a.mc.reps, seed: a.mc.seed };
    let result: Coverage = coverage_sim(&x, &mu, &fam, cfg)?;
    let config = CoverConfig {
        design: source,
        n: x.n(),
        p: x.p(),
        family: fsrc,
        mc: (&a.mc).into(),
        k: a.k.trim().to_string(),
        sigma: a.sigma,
        mu,
        k_reps: mc_k.then_some(a.k_reps),
        k_seed: mc_k.then_some(k_seed),
    };
    envelope("cover", config, result)
}

fn execute(cmd: &Command) -> Result<String> {
    match cmd {
        Command::Estimate(a) => cmd_estimate(a),
        Command::Rip(a) => cmd_rip(a),
        Command::Bounds(a) => cmd_bounds(a),
        Command::Lower(a) => cmd_lower(a),
        Command::Scan(a) => cmd_scan(a),
        Command::Bl(a) => cmd_bl(a),
        Command::Cover(a) => cmd_cover(a),
    }
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    error: &'a str,
    exit_code: i32,
    message: String,
}

fn error_line(kind: &str, code: i32, message: String) -> String {
    let line = ErrorLine { error: kind, exit_code: code, message: message.replace('\n', " ") };
    format!("{}\n", serde_json::to_string(&line).expect("plain strings serialize"))
}

fn failure(e: &Error) -> Outcome {
    Outcome { code: e.exit_code(), stdout: String::new(), stderr: error_line(e.kind(), e.exit_code(), e.to_string()) }
}

fn write_output(path: &PathBuf, text: &str, append: bool) -> Result<()> {
    let mut f = fs::OpenOptions::new().create(true).write(true).append(append).truncate(!append).open(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

/// Runs the CLI on `args` (including the program name).
pub fn run<I, T>(args: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                return Outcome { code: 0, stdout: e.to_string(), stderr: String::new() };
            }
            let rendered = e.to_string();
            let first = rendered.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            let message = first.trim_start_matches("error: ").to_string();
            return Outcome { code: 2, stdout: String::new(), stderr: error_line("UsageError", 2, message) };
        }
    };
    let result = match cli.workers {
        Some(0) => Err(Error::Parse("--workers must be positive".into())),
        Some(w) => match rayon::ThreadPoolBuilder::new().num_threads(w).build() {
            Ok(pool) => pool.install(|| execute(&cli.command)),
            Err(e) => Err(domain(format!("cannot start worker pool: {e}"))),
        },
        None => execute(&cli.command),
    };
    match result {
        Ok(text) => match &cli.output {
            Some(path) => {
                let append = matches!(&cli.command, Command::Scan(s) if s.start_row > 0);
                match write_output(path, &text, append) {
                    Ok(()) => Outcome { code: 0, stdout: String::new(), stderr: String::new() },
                    Err(e) => failure(&e),
                }
            }
            None => Outcome { code: 0, stdout: text, stderr: String::new() },
        },
        Err(e) => failure(&e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ok(args: &[&str]) -> serde_json::Value {
        let out = run(std::iter::once("posi").chain(args.iter().copied()));
        assert_eq!(out.code, 0, "{}", out.stderr);
        serde_json::from_str(&out.stdout).unwrap()
    }

    fn code(args: &[&str]) -> (i32, String) {
        let out = run(std::iter::once("posi").chain(args.iter().copied()));
        (out.code, out.stderr)
    }

    #[test]
    fn ln_count_parser() {
        assert!((parse_ln_count("1e30").unwrap() - 30.0 * std::f64::consts::LN_10).abs() < 1e-12);
        assert!((parse_ln_count("2.5e400").unwrap() - (2.5f64.ln() + 400.0 * std::f64::consts::LN_10)).abs() < 1e-9);
        assert_eq!(parse_ln_count("1").unwrap(), 0.0);
        assert!(parse_ln_count("-1e400").is_err());
        assert!(parse_ln_count("abc").is_err());
    }

    #[test]
    fn ceil_pow_snaps() {
        assert_eq!(ceil_pow(27, 1.0 / 3.0), 3);
        assert_eq!(ceil_pow(64, 1.0 / 3.0), 4);
        assert_eq!(ceil_pow(65, 1.0 / 3.0), 5);
        assert_eq!(ceil_pow(4096, 1.0 / 3.0), 16);
    }

    #[test]
    fn bounds_command() {
        let v = ok(&["bounds", "--p", "100", "--s", "5", "--delta", "0.1", "--grid", "200"]);
        assert_eq!(v["command"], "bounds");
        assert_eq!(v["config"]["r"], "inf");
        assert!((v["result"]["u_rip"].as_f64().unwrap() - 4.868).abs() < 1e-3);
        assert!((v["result"]["u_bar_rip"].as_f64().unwrap() - 6.828).abs() < 1e-3);
        let (c, err) = code(&["bounds", "--p", "100", "--s", "5", "--delta", "1.0"]);
        assert_eq!(c, 2);
        assert!(err.contains("DeltaOutOfRange"));
    }

    #[test]
    fn error_codes() {
        assert_eq!(code(&["estimate", "--ensemble", "identity:q=3", "--s", "1"]).0, 2);
        assert_eq!(code(&["frobnicate"]).0, 2);
        let (c, err) = code(&["rip", "--ensemble", "gauss:n=10,p=30,seed=1", "--s", "5", "--cap", "1000"]);
        assert_eq!(c, 3);
        assert!(err.contains("EnumerationLimit") && err.lines().count() == 1);
        assert_eq!(code(&["estimate", "--design", "/nonexistent/x.csv", "--s", "1"]).0, 4);
        assert_eq!(code(&["lower", "--p", "10", "--k", "5", "--c", "0.5", "--s", "2", "--reps", "1000"]).0, 2);
        assert_eq!(code(&["bl", "--q", "1"]).0, 2);
    }

    #[test]
    fn rip_command() {
        let v = ok(&["rip", "--ensemble", "equicorr:p=20,k=10,c=0.2", "--s", "5"]);
        assert!((v["result"]["delta"].as_f64().unwrap() - 0.4).abs() < 1e-12);
        let v = ok(&["rip", "--ensemble", "identity:p=6", "--s", "3"]);
        assert_eq!(v["result"]["delta"].as_f64().unwrap(), 0.0);
    }

    #[test]
    fn bl_command() {
        let v = ok(&["bl", "--q", "20", "--rho", "1", "--grid", "4000"]);
        assert!((v["result"]["value"].as_f64().unwrap() - 1.96).abs() < 5e-3);
        let v = ok(&["bl", "--q", "20", "--rho", "1e400", "--grid", "200"]);
        assert!(v["result"]["value"].as_f64().unwrap().is_finite());
    }

    #[test]
    fn scan_spec_validation() {
        let spec: ScanSpec = serde_json::from_str(r#"{"p": [10], "s": [2], "delta": [0.1, 0.2], "grid": 200}"#).unwrap();
        assert_eq!(scan_rows(&spec, 0).unwrap().len(), 2);
        assert_eq!(scan_rows(&spec, 1).unwrap().len(), 1);
        let both: ScanSpec = serde_json::from_str(r#"{"p": [10], "s": [2], "s_exponent": 0.5, "delta": [0.1]}"#).unwrap();
        assert!(scan_rows(&both, 0).is_err());
        assert!(serde_json::from_str::<ScanSpec>(r#"{"p": [10], "bogus": 1}"#).is_err());
    }
}
