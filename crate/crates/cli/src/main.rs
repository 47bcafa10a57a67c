//! `bubblekit`: ground states, ansatz samples, energy sweeps, reductions,
//! Pohozaev checks, rate sweeps and consolidated reports.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use bubblekit::ansatz::{
    eval_ansatz, sample_points, BubbleConfig, SampledField, DEFAULT_L0, DEFAULT_L1,
    DEFAULT_THETA_BAR,
};
use bubblekit::config::{scaling_parameter, SystemConfig};
use bubblekit::energy::{expansion_constants, interaction_sum, stationary_point, sweep_lambda};
use bubblekit::fit::power_law_fit;
use bubblekit::grid::GridSpec;
use bubblekit::ground_state::{solve_ground_state, GroundState};
use bubblekit::pohozaev::{
    pohozaev_dilation, pohozaev_translation, BubbleField, Coefficients, GridField, KernelField,
    PairField, PohozaevDomain, PohozaevReport, PohozaevResolution,
};
use bubblekit::reduction::{
    dstar_norm_rk, solve_nonlinear_contraction_with, verify_decay_bound, ContractionOptions,
};
use bubblekit::sector::SectorResolution;
use bubblekit::ErrorKind;

const FORMAT_VERSION: u32 = 1;
const TOL_FLOOR: f64 = 1e-12;

#[derive(Parser, Debug)]
#[command(
    name = "bubblekit",
    version,
    about = "Multi-bubble solutions of the critical Lane-Emden system"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Serialize)]
struct Global {
    /// System configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Ground-state table; solved from the configuration when absent.
    #[arg(long, global = true)]
    gs: Option<PathBuf>,
    /// Primary output path.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Solver tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Accepted for interface compatibility; all solvers run single-threaded.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Recorded in the manifest; no command draws random numbers.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the radial ground state and write its table.
    GroundState,
    /// Sample the polygon ansatz (W₁, W₂).
    Ansatz(AnsatzArgs),
    /// Expansion constants and the reduced energy along a λ sweep.
    Energy(EnergyArgs),
    /// Contraction-mapping solve for the correction φ.
    Reduce(ReduceArgs),
    /// Check the local Pohozaev identities on a domain.
    Pohozaev(PohozaevArgs),
    /// Rate sweep over k with a fitted slope.
    Sweep(SweepArgs),
    /// Aggregate prior runs into one report.
    Report(ReportArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
struct Placement {
    /// Number of bubbles.
    #[arg(short = 'k', long = "k")]
    k: usize,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Ring radius, or `auto` for μr₀.
    #[arg(long, default_value = "auto")]
    r: String,
}

#[derive(Args, Debug, Serialize)]
struct AnsatzArgs {
    #[command(flatten)]
    place: Placement,
    /// Optional JSON summary with the ‖R_k‖_** norm.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct EnergyArgs {
    #[arg(short = 'k', long = "k")]
    k: usize,
    /// lo:hi:step.
    #[arg(long = "sweep-lambda", default_value = "0.5:2.5:0.05")]
    sweep_lambda: String,
    /// Two-bubble interaction constant; the analytic B₁ when absent.
    #[arg(long)]
    b2: Option<f64>,
    /// Also integrate I(W) - kA numerically at each λ.
    #[arg(long)]
    numeric: bool,
    /// Constants JSON path (default: <out>.constants.json).
    #[arg(long)]
    constants: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct ReduceArgs {
    #[command(flatten)]
    place: Placement,
    /// JSON report path (default: <out>.report.json).
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    max_iter: usize,
    #[arg(long, default_value_t = 0.5)]
    h_core: f64,
    #[arg(long, default_value_t = 1.2)]
    growth: f64,
    #[arg(long)]
    r_out: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum KernelChoice {
    Dilation,
    Translation,
    Ring,
}

#[derive(Args, Debug, Serialize)]
struct PohozaevArgs {
    /// φ written by `reduce`; its comment lines give the configuration.
    #[arg(long)]
    fields: PathBuf,
    /// ball:C:R, annulus:C:R1:R2 or sector:K:RING:R (C is `0` or comma separated).
    #[arg(long, default_value = "ball:0:5")]
    domain: String,
    /// Translation identity along this axis (1-based).
    #[arg(long)]
    axis: Option<usize>,
    /// Dilation identity about this point (comma separated).
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<String>,
    /// Linearized pair ξ built on the ansatz.
    #[arg(long, value_enum, default_value = "dilation")]
    xi: KernelChoice,
    #[arg(long, default_value_t = 1)]
    radial_panels: usize,
    #[arg(long, default_value_t = 1)]
    angular_panels: usize,
    #[arg(long, default_value_t = 6)]
    order: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize, PartialEq)]
#[serde(rename_all = "snake_case")]
enum Rate {
    RkNorm,
    Interaction,
    Contraction,
    PhiNorm,
}

#[derive(Args, Debug, Serialize)]
struct SweepArgs {
    #[arg(long, value_enum)]
    which: Rate,
    /// Comma separated list of k.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    ks: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
}

#[derive(Args, Debug, Serialize)]
struct ReportArgs {
    /// Manifests of prior runs.
    #[arg(long, num_args = 1..)]
    inputs: Vec<PathBuf>,
    /// Markdown rendering of the report.
    #[arg(long)]
    markdown: Option<PathBuf>,
}

/// Failure with its exit code: 2 configuration, 3 solver, 4 I/O.
#[derive(Debug)]
struct Coded {
    code: u8,
    msg: String,
}

impl fmt::Display for Coded {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl std::error::Error for Coded {}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Coded {
        code: 2,
        msg: msg.into(),
    })
}

fn io_err(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Coded {
        code: 4,
        msg: msg.into(),
    })
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(c) = cause.downcast_ref::<Coded>() {
            return c.code;
        }
        if let Some(b) = cause.downcast_ref::<bubblekit::Error>() {
            return match b.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Solver => 3,
                ErrorKind::Io => 4,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 4;
        }
    }
    1
}

#[derive(Debug, Serialize, Deserialize)]
struct OutputFile {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    format_version: u32,
    command: String,
    config_hash: Option<String>,
    gs_table_hash: Option<String>,
    parameters: Value,
    outputs: Vec<OutputFile>,
    wall_time_s: f64,
    library_version: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read_bytes(path: &Path) -> anyhow::Result<Vec<u8>> {
    fs::read(path).map_err(|e| io_err(format!("cannot read {}: {e}", path.display())))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Inputs shared by the commands.
struct Context_ {
    global: Global,
    started: Instant,
    config_hash: Option<String>,
    gs_hash: Option<String>,
    outputs: Vec<PathBuf>,
}

impl Context_ {
    fn new(global: Global) -> Self {
        Context_ {
            global,
            started: Instant::now(),
            config_hash: None,
            gs_hash: None,
            outputs: Vec::new(),
        }
    }

    fn config(&mut self) -> anyhow::Result<Option<SystemConfig>> {
        let Some(path) = self.global.config.clone() else {
            return Ok(None);
        };
        let bytes = read_bytes(&path)?;
        self.config_hash = Some(sha256_hex(&bytes));
        let text =
            String::from_utf8(bytes).map_err(|_| config_err("configuration is not UTF-8"))?;
        let config = SystemConfig::from_json(&text)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Ok(Some(config))
    }

    fn require_config(&mut self) -> anyhow::Result<SystemConfig> {
        self.config()?
            .ok_or_else(|| config_err("--config is required"))
    }

    fn tol(&self) -> f64 {
        self.global.tol.unwrap_or(1e-8)
    }

    /// The table from --gs, or a fresh solve for `config`.
    fn ground_state(&mut self, config: Option<&SystemConfig>) -> anyhow::Result<GroundState> {
        let gs = match &self.global.gs {
            Some(path) => {
                let bytes = read_bytes(path)?;
                self.gs_hash = Some(sha256_hex(&bytes));
                GroundState::read_table(bytes.as_slice())
                    .map_err(|e| io_err(format!("{}: {e}", path.display())))?
            }
            None => {
                let config = config
                    .ok_or_else(|| io_err("missing input: neither --gs nor --config was given"))?;
                solve_at(config, self.tol())?
            }
        };
        if let Some(c) = config {
            if c.n() != gs.n() || (c.p() - gs.p()).abs() > 1e-10 * c.p() {
                return Err(config_err(format!(
                    "ground-state table (N={}, p={}) does not match the configuration (N={}, p={})",
                    gs.n(),
                    gs.p(),
                    c.n(),
                    c.p()
                )));
            }
        }
        Ok(gs)
    }

    fn out(&self, default: &str) -> PathBuf {
        self.global
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from(default))
    }

    fn write(&mut self, path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
        fs::write(path, bytes)
            .map_err(|e| io_err(format!("cannot write {}: {e}", path.display())))?;
        self.outputs.push(path.to_path_buf());
        Ok(())
    }

    fn write_json(&mut self, path: &Path, value: &Value) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(path, text.as_bytes())
    }

    /// Writes `<primary>.manifest.json` covering every output so far.
    fn finish(self, command: &str, primary: &Path, parameters: Value) -> anyhow::Result<PathBuf> {
        let outputs = self
            .outputs
            .iter()
            .map(|p| {
                Ok(OutputFile {
                    path: p.display().to_string(),
                    sha256: sha256_hex(&read_bytes(p)?),
                })
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        let manifest = RunManifest {
            format_version: FORMAT_VERSION,
            command: command.to_string(),
            config_hash: self.config_hash,
            gs_table_hash: self.gs_hash,
            parameters: json!({ "global": self.global, "command": parameters }),
            outputs,
            wall_time_s: self.started.elapsed().as_secs_f64(),
            library_version: env!("CARGO_PKG_VERSION").to_string(),
        };
        let path = manifest_path(primary);
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(&path, text)
            .map_err(|e| io_err(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }
}

fn manifest_path(primary: &Path) -> PathBuf {
    with_suffix(primary, ".manifest.json")
}

fn manifest_ref(primary: &Path) -> String {
    manifest_path(primary).display().to_string()
}

/// Bubble placement; `auto` puts the ring at μr₀ of the configured well.
fn placement(
    config: &SystemConfig,
    k: usize,
    lambda: f64,
    r: &str,
) -> anyhow::Result<BubbleConfig> {
    let mu = match config.m() {
        Some(m) => scaling_parameter(k, config.n(), m)?,
        None => 1.0,
    };
    if r == "auto" {
        return match config.r0() {
            Some(_) => Ok(BubbleConfig::at_well(config, k, lambda)?),
            None if k == 1 => Ok(BubbleConfig::new(config.n(), 1, 0.0, lambda, 1.0)?),
            None => Err(config_err(
                "--r auto needs a windowed potential; give --r explicitly",
            )),
        };
    }
    let r: f64 = r
        .parse()
        .map_err(|_| config_err(format!("--r expects `auto` or a number, got {r:?}")))?;
    Ok(BubbleConfig::new(config.n(), k, r, lambda, mu)?)
}

fn placement_comment(cfg: &BubbleConfig, manifest: &str) -> String {
    format!(
        "n={}\nk={}\nr={:.17e}\nlambda={:.17e}\nmu={:.17e}\nmanifest={manifest}",
        cfg.n, cfg.k, cfg.r, cfg.lambda, cfg.mu
    )
}

fn parse_placement_comment(text: &str) -> anyhow::Result<BubbleConfig> {
    let mut meta = BTreeMap::new();
    for line in text.lines().filter_map(|l| l.strip_prefix('#')) {
        if let Some((k, v)) = line.trim().split_once('=') {
            meta.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    let get = |key: &str| -> anyhow::Result<f64> {
        meta.get(key)
            .ok_or_else(|| io_err(format!("field file lacks the `# {key}=` comment line")))?
            .parse::<f64>()
            .map_err(|e| io_err(format!("{key}: {e}")))
    };
    Ok(BubbleConfig::new(
        get("n")? as usize,
        get("k")? as usize,
        get("r")?,
        get("lambda")?,
        get("mu")?,
    )?)
}

fn parse_range(s: &str) -> anyhow::Result<Vec<f64>> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| config_err(format!("expected lo:hi:step, got {s:?}")))?;
    let [lo, hi, step] = parts[..] else {
        return Err(config_err(format!("expected lo:hi:step, got {s:?}")));
    };
    if !(step > 0.0 && hi >= lo && lo > 0.0) {
        return Err(config_err(format!("invalid range {s:?}")));
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| lo + step * i as f64).collect())
}

fn parse_point(s: &str) -> anyhow::Result<Vec<f64>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| config_err(format!("bad coordinate list {s:?}")))
        })
        .collect()
}

/// Below the floor the residual is round-off bound: the solve runs at the
/// floor and reports what it achieved.
fn solve_at(config: &SystemConfig, tol: f64) -> anyhow::Result<GroundState> {
    if tol > 0.0 && tol <= TOL_FLOOR {
        let best = solve_ground_state(config, 2.0 * TOL_FLOOR)?;
        return Err(bubblekit::Error::ToleranceNotReached {
            tol,
            achieved: best.residual(),
        }
        .into());
    }
    Ok(solve_ground_state(config, tol)?)
}

fn cmd_ground_state(mut ctx: Context_) -> anyhow::Result<()> {
    let config = ctx.require_config()?;
    let tol = ctx.tol();
    let gs = solve_at(&config, tol)?;
    let out = ctx.out("gs.table");
    let mut buf = Vec::new();
    gs.write_table(&mut buf)?;
    ctx.write(&out, &buf)?;
    let params = json!({ "tol": tol, "v0": gs.v0(), "a": gs.a(), "b": gs.b(), "decay_case": gs.decay_case(), "residual": gs.residual() });
    ctx.finish("ground-state", &out, params)?;
    println!(
        "V(0)={:.10} a={:.8e} b={:.8e} case={}",
        gs.v0(),
        gs.a(),
        gs.b(),
        gs.decay_case().as_str()
    );
    Ok(())
}

fn cmd_ansatz(mut ctx: Context_, args: AnsatzArgs) -> anyhow::Result<()> {
    let config = ctx.require_config()?;
    let gs = ctx.ground_state(Some(&config))?;
    let cfg = placement(&config, args.place.k, args.place.lambda, &args.place.r)?;
    for w in cfg.window_warnings(config.r0(), DEFAULT_THETA_BAR, DEFAULT_L0, DEFAULT_L1) {
        eprintln!("warning: {w}");
    }
    let out = ctx.out("w.csv");
    let pts = sample_points(&cfg);
    let field = SampledField::from_fn(cfg.n, &pts, |y| {
        let (a, b) = eval_ansatz(&gs, &cfg, y);
        (a, Some(b))
    })?;
    let mut buf = Vec::new();
    field.write_csv(
        &mut buf,
        Some(&placement_comment(&cfg, &manifest_ref(&out))),
    )?;
    ctx.write(&out, &buf)?;
    let mut summary = json!({ "samples": field.len(), "k": cfg.k, "r": cfg.r, "lambda": cfg.lambda, "mu": cfg.mu });
    if let Some(path) = &args.report {
        let rk = dstar_norm_rk(&gs, &cfg, &config)?;
        summary["rk_dstar"] = json!(rk);
        let doc = json!({ "format_version": FORMAT_VERSION, "manifest": manifest_ref(&out), "ansatz": summary.clone() });
        ctx.write_json(path, &doc)?;
    }
    ctx.finish("ansatz", &out, json!({ "args": args, "summary": summary }))?;
    Ok(())
}

fn cmd_energy(mut ctx: Context_, args: EnergyArgs) -> anyhow::Result<()> {
    let config = ctx.require_config()?;
    let gs = ctx.ground_state(Some(&config))?;
    let lambdas = parse_range(&args.sweep_lambda)?;
    let r0 = config
        .r0()
        .ok_or_else(|| config_err("energy sweeps need a windowed potential"))?;
    let mut consts = expansion_constants(&gs, &config)?;
    let cfg = BubbleConfig::at_well(&config, args.k, 1.0)?;
    if args.k >= 2 {
        let (_, b3) = interaction_sum(args.k, cfg.r, config.n())?;
        consts = consts.with_interaction(args.b2.unwrap_or(consts.b1), b3, Some(r0));
    }
    let numeric = args.numeric.then(SectorResolution::default);
    let samples = sweep_lambda(&gs, &consts, &config, args.k, &lambdas, numeric)?;
    let out = ctx.out("F.csv");
    let mut csv = format!(
        "# manifest={}\nlambda,F,numeric_excess\n",
        manifest_ref(&out)
    );
    for s in &samples {
        csv.push_str(&format!(
            "{:.17e},{:.17e},{:.17e}\n",
            s.lambda, s.reduced, s.numeric_excess
        ));
    }
    ctx.write(&out, csv.as_bytes())?;
    let xs: Vec<f64> = samples.iter().map(|s| s.lambda).collect();
    let reduced: Vec<f64> = samples.iter().map(|s| s.reduced).collect();
    let mut doc = json!({
        "format_version": FORMAT_VERSION,
        "manifest": manifest_ref(&out),
        "k": args.k,
        "mu": cfg.mu,
        "constants": consts,
        "stationary_lambda_reduced": stationary_point(&xs, &reduced),
    });
    if args.numeric {
        let ys: Vec<f64> = samples.iter().map(|s| s.numeric_excess).collect();
        let st = stationary_point(&xs, &ys);
        doc["stationary_lambda_numeric"] = json!(st);
        doc["lambda0_relative_gap"] =
            json!(st.map(|s| (s - consts.lambda0).abs() / consts.lambda0));
    }
    let constants = args
        .constants
        .clone()
        .unwrap_or_else(|| with_suffix(&out, ".constants.json"));
    ctx.write_json(&constants, &doc)?;
    ctx.finish("energy", &out, json!(args))?;
    Ok(())
}

fn cmd_reduce(mut ctx: Context_, args: ReduceArgs) -> anyhow::Result<()> {
    let config = ctx.require_config()?;
    let gs = ctx.ground_state(Some(&config))?;
    let cfg = placement(&config, args.place.k, args.place.lambda, &args.place.r)?;
    for w in cfg.window_warnings(config.r0(), DEFAULT_THETA_BAR, DEFAULT_L0, DEFAULT_L1) {
        eprintln!("warning: {w}");
    }
    let opts = ContractionOptions {
        grid: GridSpec {
            h_core: args.h_core,
            growth: args.growth,
            r_out: args.r_out,
        },
        tol: ctx.tol(),
        max_iter: args.max_iter,
    };
    let result = solve_nonlinear_contraction_with(&gs, &cfg, &config, &opts)?;
    let decay = verify_decay_bound(&result, &gs, &cfg);
    let out = ctx.out("phi.csv");
    let mut buf = Vec::new();
    result.phi.write_csv(
        &mut buf,
        Some(&placement_comment(&cfg, &manifest_ref(&out))),
    )?;
    ctx.write(&out, &buf)?;
    let report = args
        .report
        .clone()
        .unwrap_or_else(|| with_suffix(&out, ".report.json"));
    let doc = json!({
        "format_version": FORMAT_VERSION,
        "manifest": manifest_ref(&out),
        "result": result,
        "star_norm_times_mu": result.star_norm * cfg.mu,
        "decay": decay,
        "pass": result.contraction_factor < 1.0 && decay.pass,
    });
    ctx.write_json(&report, &doc)?;
    ctx.finish("reduce", &out, json!(args))?;
    println!(
        "iterations={} factor={:.4} |phi|_*={:.4e} multipliers=[{:.3e}, {:.3e}] decay={}",
        result.iterations,
        result.contraction_factor,
        result.star_norm,
        result.multipliers[0],
        result.multipliers[1],
        if decay.pass { "pass" } else { "fail" }
    );
    Ok(())
}

fn pohozaev_pass(r: &PohozaevReport) -> bool {
    r.residual <= 10.0 * r.defect_bound || r.residual <= 1e-4
}

fn cmd_pohozaev(mut ctx: Context_, args: PohozaevArgs) -> anyhow::Result<()> {
    let config = ctx.config()?;
    let gs = ctx.ground_state(config.as_ref())?;
    let config = match config {
        Some(c) => c,
        None => SystemConfig::flat(gs.n(), gs.p())?,
    };
    let bytes = read_bytes(&args.fields)?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| io_err("field file is not UTF-8"))?;
    let cfg = parse_placement_comment(&text)?;
    let field = SampledField::read_csv(bytes.as_slice())
        .map_err(|e| io_err(format!("{}: {e}", args.fields.display())))?;
    let v = GridField::from_sampled(&field, cfg.k, Some(BubbleField::ansatz(&gs, &cfg)))
        .map_err(|e| io_err(format!("{}: {e}", args.fields.display())))?;
    let bubbles = BubbleField::ansatz(&gs, &cfg);
    let xi: KernelField = match args.xi {
        KernelChoice::Dilation => KernelField::dilation(bubbles),
        KernelChoice::Translation => {
            KernelField::translation(bubbles, args.axis.map_or(0, |a| a.saturating_sub(1)))
        }
        KernelChoice::Ring => KernelField::ring(bubbles),
    };
    let coef = Coefficients::new(&config, cfg.mu)?;
    let domain: PohozaevDomain = args
        .domain
        .parse()
        .map_err(|e| config_err(format!("--domain: {e}")))?;
    let res = PohozaevResolution {
        radial_panels: args.radial_panels,
        angular_panels: args.angular_panels,
        order: args.order,
    };
    let mut reports = Vec::new();
    let v: &dyn PairField = &v;
    if let Some(axis) = args.axis {
        if axis == 0 || axis > cfg.n {
            return Err(config_err(format!("--axis must lie in 1..={}", cfg.n)));
        }
        reports.push(pohozaev_translation(
            v,
            &xi,
            &coef,
            &domain,
            axis - 1,
            &res,
        )?);
    }
    if args.x0.is_some() || args.axis.is_none() {
        let x0 = match &args.x0 {
            Some(s) => parse_point(s)?,
            None => match &domain {
                PohozaevDomain::Ball { center, .. } | PohozaevDomain::Annulus { center, .. }
                    if center.len() == cfg.n =>
                {
                    center.clone()
                }
                _ => vec![0.0; cfg.n],
            },
        };
        reports.push(pohozaev_dilation(v, &xi, &coef, &domain, &x0, &res)?);
    }
    let out = ctx.out("poh.json");
    let verdicts: Vec<bool> = reports.iter().map(pohozaev_pass).collect();
    let doc = json!({
        "format_version": FORMAT_VERSION,
        "manifest": manifest_ref(&out),
        "fields": args.fields.display().to_string(),
        "fields_sha256": sha256_hex(&bytes),
        "reports": reports,
        "pass": verdicts.iter().all(|x| *x),
    });
    ctx.write_json(&out, &doc)?;
    for r in &reports {
        println!(
            "{}: lhs={:.6e} rhs={:.6e} residual={:.3e} defect_bound={:.3e}",
            r.identity, r.lhs, r.rhs, r.residual, r.defect_bound
        );
    }
    ctx.finish("pohozaev", &out, json!(args))?;
    Ok(())
}

fn sweep_value(
    which: Rate,
    gs: &GroundState,
    config: &SystemConfig,
    cfg: &BubbleConfig,
    tol: f64,
) -> anyhow::Result<f64> {
    Ok(match which {
        Rate::RkNorm => dstar_norm_rk(gs, cfg, config)?,
        Rate::Interaction => {
            if cfg.k < 2 {
                0.0
            } else {
                interaction_sum(cfg.k, cfg.r, cfg.n)?.0
            }
        }
        Rate::Contraction | Rate::PhiNorm => {
            let opts = ContractionOptions {
                tol,
                ..Default::default()
            };
            let r = solve_nonlinear_contraction_with(gs, cfg, config, &opts)?;
            if which == Rate::Contraction {
                r.contraction_factor
            } else {
                r.star_norm
            }
        }
    })
}

fn cmd_sweep(mut ctx: Context_, args: SweepArgs) -> anyhow::Result<()> {
    if args.ks.is_empty() {
        return Err(config_err("--ks needs at least one k"));
    }
    let config = ctx.require_config()?;
    let gs = ctx.ground_state(Some(&config))?;
    let out = ctx.out("sweep.csv");
    let mut csv = format!("# manifest={}\nk,mu,value\n", manifest_ref(&out));
    let mut rows = Vec::new();
    let mut failure = None;
    for &k in &args.ks {
        let step = placement(&config, k, args.lambda, "auto").and_then(|cfg| {
            let v = sweep_value(args.which, &gs, &config, &cfg, ctx.tol())?;
            Ok((cfg.mu, v))
        });
        match step {
            Ok((mu, v)) => {
                csv.push_str(&format!("{k},{mu:.17e},{v:.17e}\n"));
                rows.push((k, mu, v));
            }
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    let usable: Vec<&(usize, f64, f64)> = rows
        .iter()
        .filter(|r| r.2 > 0.0 && r.2.is_finite())
        .collect();
    let distinct_mu = usable.windows(2).any(|w| w[0].1 != w[1].1);
    let mut summary = json!({ "points": rows.len(), "partial": failure.is_some() });
    if usable.len() >= 2 && usable.len() == rows.len() && distinct_mu {
        let xs: Vec<f64> = usable.iter().map(|r| r.1).collect();
        let ys: Vec<f64> = usable.iter().map(|r| r.2).collect();
        let (_, slope, fit) = power_law_fit(&xs, &ys);
        let hw = fit.slope_half_width(xs.len(), 0.95);
        csv.push_str(&format!(
            "# slope={slope:.6} half_width={}\n",
            hw.map_or("n/a".into(), |h| format!("{h:.6}"))
        ));
        summary["slope"] = json!(slope);
        summary["half_width"] = json!(hw);
        if args.which == Rate::RkNorm {
            if let Some(m) = config.m() {
                summary["bound"] = json!(-m / 2.0 + 0.1);
                summary["pass"] = json!(slope <= -m / 2.0 + 0.1);
            }
        }
    } else {
        csv.push_str("# slope=undefined\n");
        summary["slope"] = Value::Null;
        summary["slope_undefined"] = json!(true);
    }
    if let Some(e) = &failure {
        csv.push_str(&format!(
            "# partial=true error={}\n",
            e.to_string().replace('\n', " ")
        ));
    }
    ctx.write(&out, csv.as_bytes())?;
    let summary_path = with_suffix(&out, ".summary.json");
    let doc = json!({ "format_version": FORMAT_VERSION, "manifest": manifest_ref(&out), "which": args.which, "sweep": summary });
    ctx.write_json(&summary_path, &doc)?;
    ctx.finish("sweep", &out, json!(args))?;
    match failure {
        Some(e) => Err(e.context("sweep aborted; partial results were written")),
        None => Ok(()),
    }
}

/// Pass/fail read from a command's JSON output, when it carries one.
fn verdict_of(command: &str, doc: &Value) -> Option<bool> {
    match command {
        "reduce" | "pohozaev" => doc.get("pass").and_then(Value::as_bool),
        "sweep" => doc.pointer("/sweep/pass").and_then(Value::as_bool),
        _ => None,
    }
}

fn cmd_report(mut ctx: Context_, args: ReportArgs) -> anyhow::Result<()> {
    if args.inputs.is_empty() {
        return Err(config_err("--inputs needs at least one manifest"));
    }
    let missing: Vec<String> = args
        .inputs
        .iter()
        .filter(|p| !p.exists())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(io_err(format!("missing inputs: {}", missing.join(", "))));
    }
    let mut entries = Vec::new();
    let mut problems = Vec::new();
    for path in &args.inputs {
        let text =
            String::from_utf8(read_bytes(path)?).map_err(|_| io_err("manifest is not UTF-8"))?;
        let manifest: RunManifest = serde_json::from_str(&text)
            .map_err(|e| io_err(format!("{}: not a run manifest: {e}", path.display())))?;
        let mut verdicts = Vec::new();
        for out in &manifest.outputs {
            let Ok(bytes) = fs::read(&out.path) else {
                problems.push(format!(
                    "missing input: {} (listed by {})",
                    out.path,
                    path.display()
                ));
                continue;
            };
            if sha256_hex(&bytes) != out.sha256 {
                problems.push(format!(
                    "checksum mismatch: {} (listed by {})",
                    out.path,
                    path.display()
                ));
                continue;
            }
            if out.path.ends_with(".json") {
                if let Ok(doc) = serde_json::from_slice::<Value>(&bytes) {
                    if let Some(v) = verdict_of(&manifest.command, &doc) {
                        verdicts.push(v);
                    }
                }
            }
        }
        let verdict = if verdicts.is_empty() {
            None
        } else {
            Some(verdicts.iter().all(|v| *v))
        };
        entries.push(json!({
            "manifest": path.display().to_string(),
            "command": manifest.command,
            "outputs": manifest.outputs.len(),
            "verdict": verdict.map(|v| if v { "pass" } else { "fail" }),
        }));
    }
    if !problems.is_empty() {
        return Err(io_err(problems.join("\n")));
    }
    let all_pass = entries.iter().all(|e| e["verdict"] != json!("fail"));
    let out = ctx.out("report.json");
    let doc = json!({ "format_version": FORMAT_VERSION, "manifest": manifest_ref(&out), "entries": entries, "all_pass": all_pass });
    ctx.write_json(&out, &doc)?;
    if let Some(md) = &args.markdown {
        let mut text = String::from("| command | manifest | verdict |\n|---|---|---|\n");
        for e in doc["entries"].as_array().into_iter().flatten() {
            let verdict = e["verdict"].as_str().unwrap_or("n/a");
            let mark = match verdict {
                "pass" => "PASS",
                "fail" => "FAIL",
                _ => "n/a",
            };
            text.push_str(&format!(
                "| {} | {} | {mark} |\n",
                e["command"].as_str().unwrap_or(""),
                e["manifest"].as_str().unwrap_or("")
            ));
        }
        ctx.write(md, text.as_bytes())?;
    }
    println!(
        "{} runs, all_pass={all_pass}",
        doc["entries"].as_array().map_or(0, Vec::len)
    );
    ctx.finish("report", &out, json!(args))?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let ctx = Context_::new(cli.global);
    match cli.command {
        Command::GroundState => cmd_ground_state(ctx),
        Command::Ansatz(a) => cmd_ansatz(ctx, a),
        Command::Energy(a) => cmd_energy(ctx, a),
        Command::Reduce(a) => cmd_reduce(ctx, a),
        Command::Pohozaev(a) => cmd_pohozaev(ctx, a),
        Command::Sweep(a) => cmd_sweep(ctx, a),
        Command::Report(a) => cmd_report(ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli).context("bubblekit failed") {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_and_points_parse() {
        let r = parse_range("0.5:1.0:0.25").unwrap();
        assert_eq!(r, vec![0.5, 0.75, 1.0]);
        assert!(parse_range("1:0:0.1").is_err());
        assert!(parse_range("1:2").is_err());
        assert_eq!(parse_point("1,-2.5,0").unwrap(), vec![1.0, -2.5, 0.0]);
    }

    #[test]
    fn placement_comment_round_trips() {
        let cfg = BubbleConfig::new(5, 4, 12.5, 1.25, 8.0).unwrap();
        let text: String = placement_comment(&cfg, "x.json")
            .lines()
            .map(|l| format!("# {l}\n"))
            .collect();
        assert_eq!(parse_placement_comment(&text).unwrap(), cfg);
        assert!(parse_placement_comment("# k=2\n").is_err());
    }

    #[test]
    fn error_kinds_map_to_exit_codes() {
        assert_eq!(exit_code(&config_err("x")), 2);
        assert_eq!(
            exit_code(&anyhow::Error::new(bubblekit::Error::MaxIterations(3))),
            3
        );
        assert_eq!(
            exit_code(&anyhow::Error::new(bubblekit::Error::Format("x".into())).context("outer")),
            4
        );
        assert_eq!(exit_code(&io_err("x")), 4);
    }
}
