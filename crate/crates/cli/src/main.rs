//! `finsler`: load metric specs, compute tensors, classify metrics and run
//! the identity checks.
//!
//! Exit codes: 0 when every applicable check passes, 1 on a check failure,
//! 2 on a configuration error, 3 when evaluation breaks down.

mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use finsler::calculus::{geodesic_trace, CalcError, Geometry, Quantity, TensorDump};
use finsler::classify::{classify_basic, ClassifyError, Settings};
use finsler::metric::{builtin, builtin_names, random_direction, EvalPoint, MetricError, MetricSpec, SampleSet};
use finsler::verify::{verify_spec, Status, VerifyError, IDENTITY_IDS};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use output::{Format, Rendered};

#[derive(Parser, Debug)]
#[command(name = "finsler", version, about = "Numerical Finsler geometry laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Summarize specs and check regularity on a sample.
    Inspect {
        /// Spec files or built-in names.
        #[arg(required = true)]
        specs: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Dump one tensor quantity (or `flag` curvature) at given or sampled points.
    Tensor {
        /// ylower, g, ginv, h, C, I, G, N, berwald, berwald-curvature, L, J, M, Mbar, sigma, riemann, riemann-dy or flag.
        quantity: String,
        spec: String,
        /// Evaluation point "x1,..,xn;y1,..,yn"; repeatable. Samples are used when absent.
        #[arg(long)]
        at: Vec<String>,
        /// Flag direction "u1,..,un" for `flag`; random per point when absent.
        #[arg(long)]
        u: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Classify specs over a sample.
    Classify {
        #[arg(required = true)]
        specs: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Run the identity checks.
    Verify {
        #[arg(required = true)]
        specs: Vec<String>,
        /// Restrict to these identities or groups; repeatable.
        #[arg(long = "identity")]
        identities: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Integrate a geodesic with fixed-step RK4.
    Geodesic {
        spec: String,
        #[arg(long, allow_hyphen_values = true)]
        x0: String,
        #[arg(long, allow_hyphen_values = true)]
        y0: String,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value_t = 0.01)]
        dt: f64,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Debug, Clone)]
struct Common {
    #[arg(long, default_value_t = 20)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Jet truncation order.
    #[arg(long, default_value_t = finsler::jet::DEFAULT_ORDER)]
    order: usize,
    /// Verdict threshold on scale-free residuals.
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    /// Threshold below which |M| F counts as zero.
    #[arg(long, default_value_t = 1e-6)]
    tol_deg: f64,
    /// Tolerance against the finite-difference oracle.
    #[arg(long, default_value_t = 1e-4)]
    fd_tol: f64,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Also write reports and a manifest to this directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum FormatArg {
    Json,
    Csv,
    Markdown,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => Format::Json,
            FormatArg::Csv => Format::Csv,
            FormatArg::Markdown => Format::Markdown,
        }
    }
}

/// Error tagged with the exit code it maps to.
#[derive(Debug)]
struct Failure {
    code: u8,
    error: anyhow::Error,
}

trait Tag<T> {
    fn config(self) -> Result<T, Failure>;
    fn breakdown(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Tag<T> for Result<T, E> {
    fn config(self) -> Result<T, Failure> {
        self.map_err(|e| Failure { code: 2, error: e.into() })
    }

    fn breakdown(self) -> Result<T, Failure> {
        self.map_err(|e| Failure { code: 3, error: e.into() })
    }
}

/// Sampling failures are evaluation breakdowns; everything else from the
/// metric layer is a configuration problem.
fn metric_failure(e: MetricError) -> Failure {
    match e {
        MetricError::TooManyRejections { .. } | MetricError::Jet(_) | MetricError::Eval(_) => {
            Failure { code: 3, error: e.into() }
        }
        _ => Failure { code: 2, error: e.into() },
    }
}

fn verify_failure(e: VerifyError) -> Failure {
    match e {
        VerifyError::Metric(m) => metric_failure(m),
        e => Failure { code: 3, error: e.into() },
    }
}

fn calc_failure(e: CalcError) -> Failure {
    match e {
        CalcError::UnknownQuantity(_) | CalcError::OrderTooSmall { .. } | CalcError::Direction { .. } => {
            Failure { code: 2, error: e.into() }
        }
        CalcError::Metric(m) => metric_failure(m),
        e => Failure { code: 3, error: e.into() },
    }
}

/// Loads a spec from a file, the file with `.toml` appended, or a
/// built-in name (also matched against the file stem).
fn load_spec(arg: &str) -> Result<MetricSpec, Failure> {
    let path = Path::new(arg);
    let with_ext = path.with_extension("toml");
    for candidate in [path, with_ext.as_path()] {
        if candidate.is_file() {
            return MetricSpec::load_file(candidate)
                .with_context(|| format!("loading {}", candidate.display()))
                .config();
        }
    }
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or(arg);
    if builtin_names().contains(&stem) {
        return builtin(stem).map_err(metric_failure);
    }
    Err(Failure {
        code: 2,
        error: anyhow!(
            "{arg:?} is neither a spec file nor a built-in spec (built-ins: {})",
            builtin_names().join(", ")
        ),
    })
}

impl Common {
    fn settings(&self, needed_order: usize) -> Result<Settings, Failure> {
        if self.samples == 0 {
            return Err(anyhow!("--samples must be positive")).config();
        }
        for (name, v) in [("--tol", self.tol), ("--tol-deg", self.tol_deg), ("--fd-tol", self.fd_tol)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(anyhow!("{name} must be a positive number, got {v}")).config();
            }
        }
        if self.order < needed_order {
            return Err(anyhow!(
                "--order {} is too small: this command needs jet order at least {needed_order}",
                self.order
            ))
            .config();
        }
        if self.order > finsler::jet::MAX_ORDER {
            return Err(anyhow!("--order {} exceeds the supported maximum {}", self.order, finsler::jet::MAX_ORDER))
                .config();
        }
        Ok(Settings {
            order: self.order,
            tau: self.tol,
            tau_deg: self.tol_deg,
            fd_tol: self.fd_tol,
            ..Settings::default()
        })
    }

    fn sample(&self, spec: &MetricSpec) -> Result<SampleSet, Failure> {
        spec.sample(self.samples, self.seed).map_err(metric_failure)
    }
}

/// Jet order needed by classification and the identity checks.
fn pipeline_order() -> usize {
    Quantity::ALL.iter().map(|q| q.min_order()).max().unwrap_or(0)
}

fn parse_list(text: &str, what: &str) -> Result<Vec<f64>, Failure> {
    text.split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .with_context(|| format!("{what}: expected comma-separated numbers, got {text:?}"))
        .config()
}

fn check_dim(spec: &MetricSpec, v: &[f64], what: &str) -> Result<(), Failure> {
    if v.len() != spec.dim {
        return Err(anyhow!("{what} has {} entries, {} is {}-dimensional", v.len(), spec.name, spec.dim)).config();
    }
    Ok(())
}

#[derive(Serialize)]
struct InspectReport {
    name: String,
    dim: usize,
    kind: &'static str,
    domain_min: Vec<f64>,
    domain_max: Vec<f64>,
    notes: String,
    seed: u64,
    samples: usize,
    rejections: usize,
    /// Worst `|y^k dF/dy^k - F| / F` over the sample.
    homogeneity_residual: f64,
    homogeneity_pass: bool,
    /// Smallest eigenvalue ratio of `g` over the sample.
    min_eigenvalue_ratio: f64,
    min_eigenvalue: f64,
    convexity_pass: bool,
    /// Largest `|β|_α` over the sample, for Randers specs.
    #[serde(skip_serializing_if = "Option::is_none")]
    max_beta_norm: Option<f64>,
}

const HOMOGENEITY_TOL: f64 = 1e-10;

fn inspect(spec: &MetricSpec, common: &Common) -> Result<InspectReport, Failure> {
    common.settings(1)?;
    let samples = common.sample(spec)?;
    let n = spec.dim;
    let mut homogeneity: f64 = 0.0;
    let mut ratio = f64::INFINITY;
    let mut min_ev = f64::INFINITY;
    let mut beta: Option<f64> = None;
    for p in &samples.points {
        let (f, _) = spec.f_and_f2_jets(p, 1).map_err(metric_failure)?;
        let mut euler = 0.0;
        for (k, yk) in p.y.iter().enumerate() {
            euler += yk * f.partial_vars(&[n + k]).breakdown()?;
        }
        homogeneity = homogeneity.max((euler - f.value()).abs() / f.value());
        let c = spec.check_strong_convexity(p).map_err(metric_failure)?;
        ratio = ratio.min(c.min_eigenvalue / c.max_eigenvalue);
        min_ev = min_ev.min(c.min_eigenvalue);
        if let Some(b) = spec.beta_norm(&p.x).map_err(metric_failure)? {
            beta = Some(beta.map_or(b, |m: f64| m.max(b)));
        }
    }
    let kind = match spec.kind {
        finsler::metric::MetricKind::Riemannian { .. } => "riemannian",
        finsler::metric::MetricKind::Randers { .. } => "randers",
        finsler::metric::MetricKind::Expression { .. } => "expression",
    };
    Ok(InspectReport {
        name: spec.name.clone(),
        dim: n,
        kind,
        domain_min: spec.domain.min.clone(),
        domain_max: spec.domain.max.clone(),
        notes: spec.notes.trim().to_string(),
        seed: samples.seed,
        samples: samples.points.len(),
        rejections: samples.rejections,
        homogeneity_residual: homogeneity,
        homogeneity_pass: homogeneity <= HOMOGENEITY_TOL,
        min_eigenvalue_ratio: ratio,
        min_eigenvalue: min_ev,
        convexity_pass: min_ev > 0.0,
        max_beta_norm: beta,
    })
}

#[derive(Serialize)]
struct FlagValue {
    quantity: &'static str,
    point: EvalPoint,
    u: Vec<f64>,
    value: f64,
}

#[derive(Serialize)]
#[serde(untagged)]
enum TensorOut {
    Dump(TensorDump),
    Flag(FlagValue),
}

fn tensor(
    quantity: &str,
    spec: &MetricSpec,
    at: &[String],
    u: Option<&str>,
    common: &Common,
) -> Result<Vec<TensorOut>, Failure> {
    let flag = quantity == "flag";
    let q = if flag {
        Quantity::Riemann
    } else {
        Quantity::from_name(quantity).map_err(calc_failure)?
    };
    let settings = common.settings(q.min_order())?;
    let points = if at.is_empty() {
        common.sample(spec)?.points
    } else {
        at.iter()
            .map(|s| {
                let p = EvalPoint::parse(s).map_err(|e| anyhow!(e)).config()?;
                check_dim(spec, &p.x, "--at x part")?;
                check_dim(spec, &p.y, "--at y part")?;
                Ok(p)
            })
            .collect::<Result<Vec<_>, Failure>>()?
    };
    let fixed_u = match u {
        Some(s) => {
            let v = parse_list(s, "--u")?;
            check_dim(spec, &v, "--u")?;
            Some(v)
        }
        None => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(common.seed);
    let mut out = Vec::new();
    for p in points {
        let mut geo = Geometry::new(spec, &p, settings.order).map_err(calc_failure)?;
        if flag {
            let dir = fixed_u.clone().unwrap_or_else(|| random_direction(&mut rng, spec.dim));
            let value = geo.flag_curvature(&dir).map_err(calc_failure)?;
            out.push(TensorOut::Flag(FlagValue {
                quantity: "flag",
                point: p,
                u: dir,
                value,
            }));
        } else {
            out.push(TensorOut::Dump(geo.dump(q).map_err(calc_failure)?));
        }
    }
    Ok(out)
}

/// Geodesic drift tolerance per unit time.
const DRIFT_TOL: f64 = 1e-6;

struct Run {
    reports: Vec<(String, Rendered)>,
    passed: bool,
    messages: Vec<String>,
}

fn run(command: &Command) -> Result<Run, Failure> {
    match command {
        Command::Inspect { specs, common } => {
            let format = common.format.map_or(Format::Markdown, Into::into);
            let mut reports = Vec::new();
            let mut passed = true;
            for s in specs {
                let spec = load_spec(s)?;
                let r = inspect(&spec, common)?;
                passed &= r.homogeneity_pass && r.convexity_pass;
                reports.push((spec.name.clone(), output::inspect(&r, format)));
            }
            Ok(Run {
                reports,
                passed,
                messages: Vec::new(),
            })
        }
        Command::Tensor {
            quantity,
            spec,
            at,
            u,
            common,
        } => {
            let format = common.format.map_or(Format::Json, Into::into);
            let spec = load_spec(spec)?;
            let values = tensor(quantity, &spec, at, u.as_deref(), common)?;
            let rendered = match format {
                Format::Json if values.len() == 1 => output::json(&values[0]),
                Format::Json => output::json(&values),
                Format::Csv => output::tensor_csv(&values),
                Format::Markdown => output::tensor_markdown(&values),
            };
            Ok(Run {
                reports: vec![(format!("{}-{quantity}", spec.name), rendered)],
                passed: true,
                messages: Vec::new(),
            })
        }
        Command::Classify { specs, common } => {
            let format = common.format.map_or(Format::Json, Into::into);
            let settings = common.settings(pipeline_order())?;
            let mut reports = Vec::new();
            let mut passed = true;
            let mut messages = Vec::new();
            for s in specs {
                let spec = load_spec(s)?;
                let samples = common.sample(&spec)?;
                let report = classify_basic(&spec, &samples, &settings).map_err(|e| match e {
                    ClassifyError::TooManyFailures { .. } | ClassifyError::Empty => Failure { code: 3, error: e.into() },
                })?;
                for e in &report.internal_errors {
                    messages.push(format!("{}: implication violated: {e}", spec.name));
                }
                passed &= report.internal_errors.is_empty();
                let rendered = match format {
                    Format::Json => output::json(&report),
                    Format::Csv => output::classify_csv(&report),
                    Format::Markdown => Rendered::markdown(report.to_markdown()),
                };
                reports.push((spec.name.clone(), rendered));
            }
            Ok(Run {
                reports,
                passed,
                messages,
            })
        }
        Command::Verify {
            specs,
            identities,
            common,
        } => {
            let format = common.format.map_or(Format::Markdown, Into::into);
            for id in identities {
                if !IDENTITY_IDS.contains(&id.as_str()) {
                    return Err(anyhow!("unknown identity {id:?} (known: {})", IDENTITY_IDS.join(", "))).config();
                }
            }
            let settings = common.settings(pipeline_order())?;
            let mut reports = Vec::new();
            let mut passed = true;
            let mut messages = Vec::new();
            for s in specs {
                let spec = load_spec(s)?;
                let samples = common.sample(&spec)?;
                let report = verify_spec(&spec, &samples, &settings, identities).map_err(verify_failure)?;
                for c in &report.checks {
                    if c.status == Status::Fail {
                        passed = false;
                    }
                    messages.push(format!(
                        "{}: {} {} (worst residual {:.3e}, tolerance {:.0e})",
                        spec.name,
                        c.id,
                        output::status_name(c.status),
                        c.worst_residual,
                        c.tolerance
                    ));
                }
                let rendered = match format {
                    Format::Json => output::json(&report),
                    Format::Csv => output::verify_csv(&report),
                    Format::Markdown => Rendered::markdown(report.to_markdown()),
                };
                reports.push((spec.name.clone(), rendered));
            }
            Ok(Run {
                reports,
                passed,
                messages,
            })
        }
        Command::Geodesic {
            spec,
            x0,
            y0,
            steps,
            dt,
            common,
        } => {
            let format = common.format.map_or(Format::Csv, Into::into);
            let spec = load_spec(spec)?;
            let x0 = parse_list(x0, "--x0")?;
            let y0 = parse_list(y0, "--y0")?;
            check_dim(&spec, &x0, "--x0")?;
            check_dim(&spec, &y0, "--y0")?;
            if !(dt.is_finite() && *dt != 0.0) {
                return Err(anyhow!("--dt must be a nonzero number")).config();
            }
            if !spec.domain.contains(&x0) {
                return Err(anyhow!("--x0 {x0:?} lies outside the domain of {}", spec.name)).config();
            }
            let trace = geodesic_trace(&spec, &x0, &y0, *steps, *dt).map_err(calc_failure)?;
            let duration = (*steps as f64 * dt.abs()).max(1.0);
            let passed = trace.max_relative_drift <= DRIFT_TOL * duration;
            let mut messages = vec![format!(
                "{}: max relative drift of F {:.3e}{}",
                spec.name,
                trace.max_relative_drift,
                if trace.truncated { ", path truncated at the domain boundary" } else { "" }
            )];
            if !passed {
                messages.push(format!("drift exceeds {:.0e} per unit time", DRIFT_TOL));
            }
            let rendered = match format {
                Format::Json => output::json(&trace),
                Format::Csv => output::geodesic_csv(&trace, spec.dim),
                Format::Markdown => output::geodesic_markdown(&trace, spec.dim),
            };
            Ok(Run {
                reports: vec![(format!("{}-geodesic", spec.name), rendered)],
                passed,
                messages,
            })
        }
    }
}

fn command_parts(command: &Command) -> (&'static str, &Common) {
    match command {
        Command::Inspect { common, .. } => ("inspect", common),
        Command::Tensor { common, .. } => ("tensor", common),
        Command::Classify { common, .. } => ("classify", common),
        Command::Verify { common, .. } => ("verify", common),
        Command::Geodesic { common, .. } => ("geodesic", common),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, common) = command_parts(&cli.command);
    let (code, run) = match run(&cli.command) {
        Ok(run) => (if run.passed { 0 } else { 1 }, Some(run)),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            (f.code, None)
        }
    };
    if let Some(run) = &run {
        let multiple = run.reports.len() > 1;
        let bodies: Vec<&Rendered> = run.reports.iter().map(|(_, r)| r).collect();
        print!("{}", output::combine(&bodies, multiple));
        for m in &run.messages {
            eprintln!("{m}");
        }
    }
    if let Some(dir) = &common.out {
        let args: Vec<String> = std::env::args().skip(1).collect();
        let reports = run.as_ref().map(|r| r.reports.as_slice()).unwrap_or(&[]);
        if let Err(e) = output::write_out(dir, name, &args, reports, code) {
            eprintln!("error: writing {}: {e:#}", dir.display());
            return ExitCode::from(2);
        }
    }
    ExitCode::from(code)
}
