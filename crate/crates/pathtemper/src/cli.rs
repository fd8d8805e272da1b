//! Command-line front end: fixture resolution, run orchestration and
//! deterministic artifact emission.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::baselines::{
    beta_binomial_logz, discrete_tempering_run, DiscreteBudget, DiscreteLadder, MassEstimator,
};
use crate::diagnostics::{ess_bulk, ess_tail, split_rhat};
use crate::error::{Error, Result};
use crate::fixtures::{isotropic_normal, make_builtin_model};
use crate::hmc::{SamplerConfig, Trajectory};
use crate::idc::{
    moment_estimate, quantile_estimate, run_idc, CoordTransform, IdcConfig, MomentMethod,
    TargetMarginal,
};
use crate::link::LinkFunction;
use crate::model::ModelSpec;
use crate::output::{write_csv, write_gnuplot_dat, Cell, DiagnosticsBlock, Report};
use crate::pseudo_prior::KernelBasis;
use crate::temper::{run_continuous_tempering, TemperConfig, TemperResult};

#[derive(Parser)]
#[command(
    name = "pathtemper",
    about = "Adaptive path sampling: continuous tempering and implicit divide-and-conquer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Continuous tempering between a target and a base distribution.
    Temper(TemperArgs),
    /// Adaptive log normalizing constant estimation (tempering run that also
    /// emits the analytic reference when available).
    Logz(TemperArgs),
    /// Implicit divide-and-conquer over one problematic margin.
    Idc(IdcArgs),
    /// Estimator comparison at matched budget, emitting per-adaptation L2
    /// errors against the analytic reference.
    Bench(BenchArgs),
    /// Chain diagnostics (R-hat, bulk/tail ESS) for an existing draws.csv.
    Diagnose(DiagnoseArgs),
}

#[derive(Args, Clone)]
struct TemperArgs {
    /// Fixture name (e.g. beta_binomial_easy, gaussian_mixture, flower).
    #[arg(long)]
    fixture: Option<String>,
    /// JSON config: either a config_resolved.json from a previous run or a
    /// {"model": {"name", "params"}} block.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    adaptations: usize,
    /// Total joint draws per adaptation (first half is warmup).
    #[arg(long, default_value_t = 3000)]
    draws: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    chains: usize,
    #[arg(long = "a-min", default_value_t = 0.1)]
    a_min: f64,
    #[arg(long = "a-max", default_value_t = 0.8)]
    a_max: f64,
    #[arg(long = "target-accept", default_value_t = 0.8)]
    target_accept: f64,
    #[arg(long = "max-depth", default_value_t = 10)]
    max_depth: usize,
    #[arg(long = "khat-threshold", default_value_t = 0.7)]
    khat_threshold: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "emit-gnuplot", default_value_t = false)]
    emit_gnuplot: bool,
}

#[derive(Args, Clone)]
struct IdcArgs {
    #[arg(long, default_value = "eight_schools")]
    fixture: String,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Margin name ("tau") or coordinate index.
    #[arg(long, default_value = "tau")]
    margin: String,
    /// Target marginal: "prior" or "optimal".
    #[arg(long, default_value = "optimal")]
    target: String,
    /// Grid as lo,hi,n on the transformed (log) scale.
    #[arg(long, default_value = "-7,3,101")]
    grid: String,
    #[arg(long, default_value_t = 12)]
    adaptations: usize,
    #[arg(long, default_value_t = 8000)]
    draws: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    chains: usize,
    #[arg(long = "target-accept", default_value_t = 0.95)]
    target_accept: f64,
    #[arg(long = "khat-threshold", default_value_t = 0.7)]
    khat_threshold: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "emit-gnuplot", default_value_t = false)]
    emit_gnuplot: bool,
}

#[derive(Args, Clone)]
struct BenchArgs {
    #[arg(long, default_value = "beta_binomial_hard")]
    fixture: String,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated subset of path,rb,is.
    #[arg(long, default_value = "path,rb,is")]
    methods: String,
    #[arg(long, default_value_t = 20)]
    adaptations: usize,
    #[arg(long, default_value_t = 3000)]
    draws: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct DiagnoseArgs {
    /// Path to a draws.csv produced by `temper`.
    #[arg(long)]
    draws: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// Fully resolved run configuration; replaying it reproduces the run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub command: String,
    pub fixture: String,
    #[serde(default)]
    pub model_params: BTreeMap<String, f64>,
    pub adaptations: usize,
    pub draws: usize,
    pub seed: u64,
    #[serde(default = "default_chains")]
    pub chains: usize,
    #[serde(default = "default_a_min")]
    pub a_min: f64,
    #[serde(default = "default_a_max")]
    pub a_max: f64,
    #[serde(default = "default_target_accept")]
    pub target_accept: f64,
    #[serde(default = "default_max_depth")]
    pub max_depth: usize,
    #[serde(default = "default_khat")]
    pub khat_threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<(f64, f64, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub methods: Option<Vec<String>>,
    #[serde(default)]
    pub emit_gnuplot: bool,
}

fn default_chains() -> usize {
    4
}
fn default_a_min() -> f64 {
    0.1
}
fn default_a_max() -> f64 {
    0.8
}
fn default_target_accept() -> f64 {
    0.8
}
fn default_max_depth() -> usize {
    10
}
fn default_khat() -> f64 {
    0.7
}

/// External model block: {"model": {"name": ..., "params": {...}}}.
#[derive(Debug, Clone, Deserialize)]
struct ModelBlock {
    model: ModelBlockInner,
}

#[derive(Debug, Clone, Deserialize)]
struct ModelBlockInner {
    name: String,
    #[serde(default)]
    params: BTreeMap<String, f64>,
}

/// Entry point used by `main`; returns the process exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            // clap prints usage for both --help and errors
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let run = match cli.command {
        Command::Temper(args) => cmd_temper(args, false),
        Command::Logz(args) => cmd_temper(args, true),
        Command::Idc(args) => cmd_idc(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Diagnose(args) => cmd_diagnose(args),
    };
    match run {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Target/base pair for the continuous tempering path.
pub fn resolve_temper_fixture(
    name: &str,
    params: &BTreeMap<String, f64>,
) -> Result<(ModelSpec, ModelSpec)> {
    let p: Vec<(&str, f64)> = params.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    let lambda_pair = |m: ModelSpec| -> (ModelSpec, ModelSpec) {
        let m1 = m.clone();
        let m0 = m;
        (
            ModelSpec::new(m1.dim(), false, move |xi, _| m1.eval_unchecked(xi, 1.0)),
            ModelSpec::new(m0.dim(), false, move |xi, _| m0.eval_unchecked(xi, 0.0)),
        )
    };
    match name {
        "beta_binomial_easy" => {
            let m = make_builtin_model(
                "beta_binomial",
                &[("alpha", 2.0), ("beta", 1.0), ("y", 60.0), ("n", 80.0)],
            )?;
            Ok(lambda_pair(m))
        }
        "beta_binomial_hard" => {
            let m = make_builtin_model(
                "beta_binomial",
                &[("alpha", 9.0), ("beta", 0.75), ("y", 115.0), ("n", 550.0)],
            )?;
            Ok(lambda_pair(m))
        }
        "beta_binomial" => {
            let m = make_builtin_model("beta_binomial", &p)?;
            Ok(lambda_pair(m))
        }
        "gaussian_mixture" => {
            let target = make_builtin_model("gaussian_mixture", &p)?;
            let base_scale = params.get("base_scale").copied().unwrap_or(6.0);
            let base = isotropic_normal(target.dim(), 0.0, base_scale);
            Ok((target, base))
        }
        "flower" => {
            let target = make_builtin_model("flower", &p)?;
            let base_scale = params.get("base_scale").copied().unwrap_or(8.0);
            let base = isotropic_normal(2, 0.0, base_scale);
            Ok((target, base))
        }
        "cauchy_mixture" => {
            let target = make_builtin_model("cauchy_mixture", &p)?;
            let base = isotropic_normal(1, 0.0, 5.0);
            Ok((target, base))
        }
        "std_normal" => {
            let m = make_builtin_model("std_normal", &p)?;
            Ok((m.clone(), m))
        }
        other => Err(Error::UnknownFixture(other.into())),
    }
}

fn temper_config_from(resolved: &ResolvedConfig) -> Result<TemperConfig> {
    Ok(TemperConfig {
        max_adaptations: resolved.adaptations,
        draws_per_adaptation: resolved.draws,
        khat_threshold: resolved.khat_threshold,
        prior_target: None,
        sampler: SamplerConfig {
            chains: resolved.chains,
            warmup_draws: 0,
            kept_draws: 1,
            target_accept: resolved.target_accept,
            max_tree_depth: resolved.max_depth,
            seed: resolved.seed,
            trajectory: Trajectory::Nuts,
        },
        link: LinkFunction::new(resolved.a_min, resolved.a_max)?,
        basis: KernelBasis::default_mixed(),
        grid_len: 100,
        marginal_grid_len: 201,
        stop_on_convergence: true,
    })
}

fn load_config_file<P: AsRef<Path>>(path: P) -> Result<ResolvedConfig> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn load_model_block<P: AsRef<Path>>(path: P) -> Option<(String, BTreeMap<String, f64>)> {
    let text = std::fs::read_to_string(path).ok()?;
    let block: ModelBlock = serde_json::from_str(&text).ok()?;
    Some((block.model.name, block.model.params))
}

fn resolve_temper_args(args: &TemperArgs, command: &str) -> Result<ResolvedConfig> {
    if let Some(path) = &args.config {
        if let Ok(cfg) = load_config_file(path) {
            return Ok(cfg);
        }
        if let Some((name, params)) = load_model_block(path) {
            let mut cfg = resolve_temper_args(
                &TemperArgs {
                    config: None,
                    fixture: Some(name),
                    ..args.clone()
                },
                command,
            )?;
            cfg.model_params = params;
            return Ok(cfg);
        }
        return Err(Error::InvalidConfig(format!(
            "could not parse config file {}",
            path.display()
        )));
    }
    let fixture = args
        .fixture
        .clone()
        .ok_or_else(|| Error::InvalidConfig("--fixture or --config is required".into()))?;
    Ok(ResolvedConfig {
        command: command.into(),
        fixture,
        model_params: BTreeMap::new(),
        adaptations: args.adaptations,
        draws: args.draws,
        seed: args.seed,
        chains: args.chains,
        a_min: args.a_min,
        a_max: args.a_max,
        target_accept: args.target_accept,
        max_depth: args.max_depth,
        khat_threshold: args.khat_threshold,
        margin: None,
        target: None,
        grid: None,
        methods: None,
        emit_gnuplot: args.emit_gnuplot,
    })
}

fn ensure_out_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path)?;
    Ok(())
}

fn write_resolved(out: &Path, cfg: &ResolvedConfig) -> Result<()> {
    let text = serde_json::to_string_pretty(cfg)?;
    std::fs::write(out.join("config_resolved.json"), text)?;
    Ok(())
}

/// Per-coordinate chain diagnostics over the target-plateau draws.
fn temper_diagnostics(result: &TemperResult, link: &LinkFunction) -> DiagnosticsBlock {
    let mut block = DiagnosticsBlock::default();
    let Some(last) = result.store.last_adaptation() else {
        return block;
    };
    let draws = result.store.of_adaptation(last);
    let dim = draws.first().map(|d| d.theta.len()).unwrap_or(0);
    let n_chains = draws.iter().map(|d| d.chain + 1).max().unwrap_or(0);
    for coord in 0..dim {
        let mut chains: Vec<Vec<f64>> = vec![Vec::new(); n_chains];
        for d in &draws {
            if link.in_target_plateau(d.a) {
                chains[d.chain].push(d.theta[coord]);
            }
        }
        let min_len = chains.iter().map(|c| c.len()).min().unwrap_or(0);
        let usable: Vec<Vec<f64>> = chains
            .iter()
            .map(|c| c[..min_len].to_vec())
            .filter(|c| c.len() >= 4)
            .collect();
        if usable.len() >= 2 {
            block.rhat.push(split_rhat(&usable).ok());
            block.ess_bulk.push(ess_bulk(&usable).ok());
            block.ess_tail.push(ess_tail(&usable).ok());
        } else {
            block.rhat.push(None);
            block.ess_bulk.push(None);
            block.ess_tail.push(None);
        }
    }
    block
}

fn write_temper_artifacts(
    out: &Path,
    resolved: &ResolvedConfig,
    result: &TemperResult,
    link: &LinkFunction,
    with_analytic: bool,
) -> Result<()> {
    // logz.csv
    let est = &result.path_estimate;
    let analytic_params = match resolved.fixture.as_str() {
        "beta_binomial_easy" => Some((2.0, 1.0, 60.0, 80.0)),
        "beta_binomial_hard" => Some((9.0, 0.75, 115.0, 550.0)),
        "beta_binomial" => {
            let g = |k: &str| resolved.model_params.get(k).copied();
            match (g("alpha"), g("beta"), g("y"), g("n")) {
                (Some(a), Some(b), Some(y), Some(n)) => Some((a, b, y, n)),
                _ => None,
            }
        }
        _ => None,
    };
    let mut header = vec!["lambda", "logz_raw", "logz_fitted"];
    if with_analytic && analytic_params.is_some() {
        header.push("logz_analytic");
    }
    let rows: Vec<Vec<Cell>> = est
        .grid_lambda
        .iter()
        .enumerate()
        .map(|(i, &lam)| {
            let mut row: Vec<Cell> = vec![
                lam.into(),
                est.grid_logz_raw[i].into(),
                est.grid_logz_fitted[i].into(),
            ];
            if with_analytic {
                if let Some((a, b, y, n)) = analytic_params {
                    row.push(beta_binomial_logz(a, b, y, n, lam).unwrap_or(f64::NAN).into());
                }
            }
            row
        })
        .collect();
    write_csv(out.join("logz.csv"), &header, rows)?;

    // marginal.csv
    if let Some(marg) = &result.marginal {
        let rows: Vec<Vec<Cell>> = marg
            .a_grid
            .iter()
            .zip(&marg.log_p)
            .map(|(&a, &lp)| vec![a.into(), lp.into()])
            .collect();
        write_csv(out.join("marginal.csv"), &["a", "log_p"], rows)?;
        if resolved.emit_gnuplot {
            write_gnuplot_dat(out.join("marginal.dat"), &[&marg.a_grid, &marg.log_p])?;
        }
    }

    // draws.csv
    let dim = result
        .store
        .all()
        .first()
        .map(|d| d.theta.len())
        .unwrap_or(0);
    let mut header: Vec<String> = vec![
        "adaptation".into(),
        "chain".into(),
        "a".into(),
        "lambda".into(),
    ];
    for i in 0..dim {
        header.push(format!("theta_{i}"));
    }
    header.extend(["log_q".to_string(), "log_psi".to_string(), "divergent".to_string()]);
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let rows = result.store.all().iter().map(|d| {
        let mut row: Vec<Cell> = vec![
            d.adaptation.into(),
            d.chain.into(),
            d.a.into(),
            link.eval_unchecked(d.a).0.into(),
        ];
        for v in &d.theta {
            row.push((*v).into());
        }
        row.push(d.log_q.into());
        row.push(d.log_psi.into());
        row.push(i64::from(d.divergent).into());
        row
    });
    write_csv(out.join("draws.csv"), &header_refs, rows)?;

    if resolved.emit_gnuplot {
        write_gnuplot_dat(
            out.join("logz.dat"),
            &[&est.grid_lambda, &est.grid_logz_raw, &est.grid_logz_fitted],
        )?;
    }

    let report = Report {
        command: resolved.command.clone(),
        converged: result.converged,
        adaptations: result.adaptations_used,
        khat: est.khat,
        khat_history: result.khat_history.clone(),
        diagnostics: temper_diagnostics(result, link),
        pass: vec![
            ("khat".into(), result.converged),
            ("nonempty_target".into(), !result.empty_target_warning),
        ],
        grad_evals: result.store.total_grad_evals(),
        empty_target_warning: result.empty_target_warning,
    };
    report.write(out.join("report.json"))?;
    Ok(())
}

fn cmd_temper(args: TemperArgs, with_analytic: bool) -> Result<()> {
    let command = if with_analytic { "logz" } else { "temper" };
    let resolved = resolve_temper_args(&args, command)?;
    ensure_out_dir(&args.out)?;
    let (target, base) = resolve_temper_fixture(&resolved.fixture, &resolved.model_params)?;
    let cfg = temper_config_from(&resolved)?;
    let result = run_continuous_tempering(&target, &base, &cfg)?;
    write_resolved(&args.out, &resolved)?;
    write_temper_artifacts(&args.out, &resolved, &result, &cfg.link, with_analytic)?;
    println!(
        "{}: converged={} adaptations={} khat={:.3}",
        command, result.converged, result.adaptations_used, result.path_estimate.khat
    );
    Ok(())
}

fn parse_grid(s: &str) -> Result<(f64, f64, usize)> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::InvalidConfig(format!("grid `{s}` is not lo,hi,n")));
    }
    let lo: f64 = parts[0]
        .trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("bad grid lo `{}`", parts[0])))?;
    let hi: f64 = parts[1]
        .trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("bad grid hi `{}`", parts[1])))?;
    let n: usize = parts[2]
        .trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("bad grid n `{}`", parts[2])))?;
    Ok((lo, hi, n))
}

fn cmd_idc(args: IdcArgs) -> Result<()> {
    let resolved = if let Some(path) = &args.config {
        load_config_file(path)?
    } else {
        ResolvedConfig {
            command: "idc".into(),
            fixture: args.fixture.clone(),
            model_params: BTreeMap::new(),
            adaptations: args.adaptations,
            draws: args.draws,
            seed: args.seed,
            chains: args.chains,
            a_min: default_a_min(),
            a_max: default_a_max(),
            target_accept: args.target_accept,
            max_depth: default_max_depth(),
            khat_threshold: args.khat_threshold,
            margin: Some(args.margin.clone()),
            target: Some(args.target.clone()),
            grid: Some(parse_grid(&args.grid)?),
            methods: None,
            emit_gnuplot: args.emit_gnuplot,
        }
    };
    ensure_out_dir(&args.out)?;

    let fixture_name = resolved.fixture.as_str();
    let model = match fixture_name {
        "eight_schools" | "eight_schools_centered" => {
            make_builtin_model("eight_schools_centered", &[])?
        }
        other => {
            let p: Vec<(&str, f64)> = resolved
                .model_params
                .iter()
                .map(|(k, v)| (k.as_str(), *v))
                .collect();
            make_builtin_model(other, &p)?
        }
    };
    let margin_str = resolved.margin.clone().unwrap_or_else(|| "tau".into());
    let (margin_index, transform) = match margin_str.as_str() {
        "tau" if matches!(fixture_name, "eight_schools" | "eight_schools_centered") => {
            (model.dim() - 1, CoordTransform::Log)
        }
        other => {
            let idx: usize = other.parse().map_err(|_| {
                Error::InvalidConfig(format!("margin `{other}` is neither `tau` nor an index"))
            })?;
            (idx, CoordTransform::Identity)
        }
    };
    let (grid_lo, grid_hi, grid_len) = resolved.grid.unwrap_or((-7.0, 3.0, 101));

    let target_marginal = match resolved.target.as_deref().unwrap_or("optimal") {
        "optimal" => TargetMarginal::AdaptiveOptimal,
        "prior" => {
            if matches!(fixture_name, "eight_schools" | "eight_schools_centered") {
                // half-Cauchy(0,5) on tau expressed on the eta = log tau scale
                TargetMarginal::Fixed(Arc::new(|eta: f64| {
                    let tau = eta.exp();
                    (2.0 / (std::f64::consts::PI * 5.0)).ln()
                        - (1.0 + (tau / 5.0).powi(2)).ln()
                        + eta
                }))
            } else {
                return Err(Error::InvalidConfig(
                    "--target prior is only wired for the eight-schools fixture".into(),
                ));
            }
        }
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown target marginal `{other}`"
            )))
        }
    };

    let cfg = IdcConfig {
        margin_index,
        target_marginal,
        grid_lo,
        grid_hi,
        grid_len,
        max_adaptations: resolved.adaptations,
        draws_per_adaptation: resolved.draws,
        khat_threshold: resolved.khat_threshold,
        sampler: SamplerConfig {
            chains: resolved.chains,
            warmup_draws: 0,
            kept_draws: 1,
            target_accept: resolved.target_accept,
            max_tree_depth: resolved.max_depth,
            seed: resolved.seed,
            trajectory: Trajectory::Nuts,
        },
        basis: KernelBasis::default_mixed(),
        transform,
    };
    let result = run_idc(&model, &cfg)?;
    write_resolved(&args.out, &resolved)?;

    // marginal.csv on both scales
    let rows: Vec<Vec<Cell>> = result
        .marginal
        .grid
        .iter()
        .zip(&result.marginal.log_density)
        .map(|(&x, &lp)| {
            vec![
                x.into(),
                result.marginal.transform.to_natural(x).into(),
                lp.into(),
            ]
        })
        .collect();
    write_csv(
        args.out.join("marginal.csv"),
        &["x_transformed", "x_natural", "log_density"],
        rows,
    )?;

    // moments.json
    let mut moments = serde_json::Map::new();
    for m in 1..=4u32 {
        let quad = moment_estimate(&result.marginal, m, MomentMethod::Quadrature, None)?;
        let imp = moment_estimate(&result.marginal, m, MomentMethod::Importance, Some(&result))?;
        moments.insert(
            format!("m{m}"),
            serde_json::json!({"quadrature": quad, "importance": imp}),
        );
    }
    std::fs::write(
        args.out.join("moments.json"),
        serde_json::to_string_pretty(&serde_json::Value::Object(moments))?,
    )?;

    // quantiles.csv
    let probs = [0.001, 0.005, 0.01, 0.025, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.99];
    let rows: Vec<Vec<Cell>> = probs
        .iter()
        .map(|&p| {
            let q = quantile_estimate(&result.marginal, p).unwrap_or(f64::NAN);
            vec![p.into(), q.into()]
        })
        .collect();
    write_csv(args.out.join("quantiles.csv"), &["prob", "quantile"], rows)?;

    // draws.csv
    let dim = model.dim();
    let mut header: Vec<String> = vec!["adaptation".into(), "chain".into(), "tau".into()];
    for i in 0..dim {
        header.push(format!("theta_{i}"));
    }
    header.push("divergent".into());
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let rows = result.draws.iter().map(|d| {
        let mut row: Vec<Cell> = vec![d.adaptation.into(), d.chain.into(), d.tau.into()];
        for v in &d.theta {
            row.push((*v).into());
        }
        row.push(i64::from(d.divergent).into());
        row
    });
    write_csv(args.out.join("draws.csv"), &header_refs, rows)?;

    if resolved.emit_gnuplot {
        write_gnuplot_dat(
            args.out.join("marginal.dat"),
            &[&result.marginal.grid, &result.marginal.log_density],
        )?;
    }

    let report = Report {
        command: "idc".into(),
        converged: result.converged,
        adaptations: result.adaptations_used,
        khat: result.khat_history.last().copied().unwrap_or(f64::INFINITY),
        khat_history: result.khat_history.clone(),
        diagnostics: DiagnosticsBlock::default(),
        pass: vec![("khat".into(), result.converged)],
        grad_evals: result.n_grad_evals,
        empty_target_warning: false,
    };
    report.write(args.out.join("report.json"))?;
    println!(
        "idc: converged={} adaptations={}",
        result.converged, result.adaptations_used
    );
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let resolved = if let Some(path) = &args.config {
        load_config_file(path)?
    } else {
        ResolvedConfig {
            command: "bench".into(),
            fixture: args.fixture.clone(),
            model_params: BTreeMap::new(),
            adaptations: args.adaptations,
            draws: args.draws,
            seed: args.seed,
            chains: default_chains(),
            a_min: default_a_min(),
            a_max: default_a_max(),
            target_accept: default_target_accept(),
            max_depth: default_max_depth(),
            khat_threshold: default_khat(),
            margin: None,
            target: None,
            grid: None,
            methods: Some(args.methods.split(',').map(|s| s.trim().to_string()).collect()),
            emit_gnuplot: false,
        }
    };
    ensure_out_dir(&args.out)?;

    let params = match resolved.fixture.as_str() {
        "beta_binomial_easy" => (2.0, 1.0, 60.0, 80.0),
        "beta_binomial_hard" => (9.0, 0.75, 115.0, 550.0),
        other => {
            return Err(Error::InvalidConfig(format!(
                "bench needs an analytic reference; fixture `{other}` has none"
            )))
        }
    };
    let (alpha, beta, y, n) = params;
    let model = make_builtin_model(
        "beta_binomial",
        &[("alpha", alpha), ("beta", beta), ("y", y), ("n", n)],
    )?;

    let methods = resolved
        .methods
        .clone()
        .unwrap_or_else(|| vec!["path".into(), "rb".into(), "is".into()]);
    let mut rows: Vec<Vec<Cell>> = Vec::new();
    let mut continuous_evals = 0u64;
    let mut discrete_evals = 0u64;

    for method in &methods {
        match method.as_str() {
            "path" => {
                let mut cfg = temper_config_from(&resolved)?;
                cfg.max_adaptations = resolved.adaptations;
                cfg.stop_on_convergence = false;
                let result = crate::temper::run_continuous_tempering_lambda(&model, &cfg)?;
                continuous_evals = result.store.total_grad_evals();
                for (adaptation, est) in result.estimate_history.iter().enumerate() {
                    let l2 = l2_error_grid(&est.grid_lambda, &est.grid_logz_fitted, params);
                    rows.push(vec![
                        adaptation.into(),
                        "path".into(),
                        l2.into(),
                    ]);
                }
            }
            "rb" | "is" => {
                let estimator = if method == "rb" {
                    MassEstimator::RaoBlackwell
                } else {
                    MassEstimator::EmpiricalIs
                };
                let ladder = DiscreteLadder::even(10);
                let budget = DiscreteBudget {
                    adaptations: resolved.adaptations,
                    ..Default::default()
                };
                let out = discrete_tempering_run(&model, &ladder, estimator, budget, resolved.seed)?;
                discrete_evals = discrete_evals.max(out.n_grad_evals);
                for (adaptation, logz) in out.per_adaptation_logz.iter().enumerate() {
                    let l2 = l2_error_ladder(ladder.lambdas(), logz, params);
                    rows.push(vec![
                        adaptation.into(),
                        method.as_str().into(),
                        l2.into(),
                    ]);
                }
            }
            other => {
                return Err(Error::InvalidConfig(format!("unknown method `{other}`")))
            }
        }
    }
    write_resolved(&args.out, &resolved)?;
    write_csv(
        args.out.join("l2_error.csv"),
        &["adaptation", "method", "l2_error"],
        rows,
    )?;

    let budget_parity = continuous_evals == 0 || discrete_evals == 0 || continuous_evals <= discrete_evals;
    let report = Report {
        command: "bench".into(),
        converged: true,
        adaptations: resolved.adaptations,
        khat: f64::NAN,
        khat_history: vec![],
        diagnostics: DiagnosticsBlock::default(),
        pass: vec![("budget_parity".into(), budget_parity)],
        grad_evals: continuous_evals + discrete_evals,
        empty_target_warning: false,
    };
    report.write(args.out.join("report.json"))?;
    println!("bench: methods={methods:?} budget_parity={budget_parity}");
    Ok(())
}

fn l2_error_grid(grid: &[f64], fitted: &[f64], (a, b, y, n): (f64, f64, f64, f64)) -> f64 {
    let mse: f64 = grid
        .iter()
        .zip(fitted)
        .map(|(&lam, &v)| {
            let truth = beta_binomial_logz(a, b, y, n, lam).unwrap();
            (v - truth) * (v - truth)
        })
        .sum::<f64>()
        / grid.len() as f64;
    mse.sqrt()
}

fn l2_error_ladder(lambdas: &[f64], logz: &[f64], (a, b, y, n): (f64, f64, f64, f64)) -> f64 {
    let mse: f64 = lambdas
        .iter()
        .zip(logz)
        .map(|(&lam, &v)| {
            let truth = beta_binomial_logz(a, b, y, n, lam).unwrap();
            (v - truth) * (v - truth)
        })
        .sum::<f64>()
        / lambdas.len() as f64;
    mse.sqrt()
}

fn cmd_diagnose(args: DiagnoseArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.draws)?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::InvalidConfig("empty draws file".into()))?
        .split(',')
        .collect();
    let chain_col = header
        .iter()
        .position(|h| *h == "chain")
        .ok_or_else(|| Error::InvalidConfig("draws.csv has no chain column".into()))?;
    let theta_cols: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("theta_"))
        .map(|(i, _)| i)
        .collect();
    if theta_cols.is_empty() {
        return Err(Error::InvalidConfig("draws.csv has no theta_* columns".into()));
    }
    let mut per_chain: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        let chain: usize = cells[chain_col]
            .parse()
            .map_err(|_| Error::InvalidConfig("bad chain id".into()))?;
        let thetas: Vec<f64> = theta_cols
            .iter()
            .map(|&c| cells[c].parse::<f64>().unwrap_or(f64::NAN))
            .collect();
        per_chain.entry(chain).or_default().push(thetas);
    }
    let mut block = DiagnosticsBlock::default();
    for (k, _) in theta_cols.iter().enumerate() {
        let chains: Vec<Vec<f64>> = per_chain
            .values()
            .map(|rows| rows.iter().map(|r| r[k]).collect())
            .collect();
        block.rhat.push(split_rhat(&chains).ok());
        block.ess_bulk.push(ess_bulk(&chains).ok());
        block.ess_tail.push(ess_tail(&chains).ok());
    }
    ensure_out_dir(&args.out)?;
    let all_mixed = block
        .rhat
        .iter()
        .all(|r| r.map(|x| x < 1.05).unwrap_or(false));
    let report = Report {
        command: "diagnose".into(),
        converged: all_mixed,
        adaptations: 0,
        khat: f64::NAN,
        khat_history: vec![],
        diagnostics: block,
        pass: vec![("rhat_below_1.05".into(), all_mixed)],
        grad_evals: 0,
        empty_target_warning: false,
    };
    report.write(args.out.join("report.json"))?;
    println!("diagnose: rhat_ok={all_mixed}");
    Ok(())
}
