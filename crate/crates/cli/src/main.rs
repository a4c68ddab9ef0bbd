use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use betaint::ensembles::{sample_batch, ENSEMBLE_NAMES};
use betaint::selberg::{default_suite, verify_suite, Convention, SuiteReport, VerifyConfig, CASE_NAMES};
use betaint::specfun::{mv_beta_log, mv_gamma_log, pochhammer, rho, stiefel_log_volume};
use betaint::{AlgebraTag, EnsembleSpec, Error, HermitianMatrix, IdentityCase, McConfig, ParamMatrix, Partition};

const EXIT_FAIL: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_STALL: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "betaint", version, about = "Matrix-variate special functions, ensembles and Selberg-type identity checks")]
struct Cli {
    /// Flat key = value file; explicit flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluate a special function.
    Specfun {
        #[arg(value_enum)]
        function: SpecFn,
        #[command(flatten)]
        args: SpecArgs,
    },
    /// Check identities against their closed forms.
    Verify {
        /// Identity case name.
        #[arg(long, conflicts_with = "suite")]
        case: Option<String>,
        /// Named suite (`default`).
        #[arg(long)]
        suite: Option<String>,
        /// Reading of the identity (definition, display, display_grouped).
        #[arg(long)]
        convention: Option<String>,
        /// Ensemble for the general-density case.
        #[arg(long)]
        ensemble: Option<String>,
        #[command(flatten)]
        params: ParamArgs,
        #[command(flatten)]
        run: RunArgs,
        /// Record wall-clock time per estimator in the report.
        #[arg(long)]
        timing: bool,
    },
    /// Draw from an ensemble.
    Sample {
        #[arg(long)]
        ensemble: Option<String>,
        #[arg(long)]
        count: Option<usize>,
        #[command(flatten)]
        params: ParamArgs,
        #[command(flatten)]
        run: RunArgs,
        /// Manifest path (defaults to the output path with a .json extension).
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SpecFn {
    Gamma,
    Beta,
    Pochhammer,
    StiefelVol,
    Rho,
}

#[derive(Args, Debug)]
struct SpecArgs {
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    beta: Option<u32>,
    #[arg(long)]
    a: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    /// Partition as a comma-separated list.
    #[arg(long)]
    kappa: Option<String>,
}

#[derive(Args, Debug, Default)]
struct ParamArgs {
    #[arg(long)]
    p: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    nu: Option<String>,
    #[arg(long)]
    a1: Option<String>,
    #[arg(long)]
    a2: Option<String>,
    /// Scalar, inline row-major list, or CSV file path.
    #[arg(long, allow_hyphen_values = true)]
    sigma: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    omega: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    psi: Option<String>,
}

#[derive(Args, Debug, Default)]
struct RunArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_degree: Option<usize>,
    #[arg(long, value_enum)]
    format: Option<OutFormat>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum OutFormat {
    Json,
    Csv,
}

/// Run settings after merging flags, config file, environment and defaults.
#[derive(Debug, Clone)]
struct RunConfig {
    seed: u64,
    workers: usize,
    samples: usize,
    tol: f64,
    max_degree: usize,
    out_format: OutFormat,
    out_path: Option<PathBuf>,
}

/// Layered lookup: explicit flag, then config file.
struct Settings {
    file: BTreeMap<String, String>,
}

impl Settings {
    fn load(path: Option<&Path>) -> Result<Settings, Error> {
        let mut file = BTreeMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)?;
            for (i, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| Error::Parse(format!("{}:{}: expected key = value", path.display(), i + 1)))?;
                file.insert(k.trim().replace('_', "-"), v.trim().to_string());
            }
        }
        Ok(Settings { file })
    }

    fn raw(&self, key: &str, flag: Option<&String>) -> Option<String> {
        flag.cloned().or_else(|| self.file.get(key).cloned())
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, flag: Option<T>) -> Result<Option<T>, Error>
    where
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        self.file
            .get(key)
            .map(|v| v.parse::<T>().map_err(|e| Error::Parse(format!("--{key} = '{v}': {e}"))))
            .transpose()
    }

    fn run_config(&self, r: &RunArgs) -> Result<RunConfig, Error> {
        let env_seed = match std::env::var("BETAINT_SEED") {
            Ok(v) => Some(v.trim().parse::<u64>().map_err(|e| Error::Parse(format!("BETAINT_SEED = '{v}': {e}")))?),
            Err(_) => None,
        };
        let out_format = match (r.format, self.file.get("format")) {
            (Some(f), _) => f,
            (None, Some(v)) => OutFormat::from_str(v, true).map_err(|e| Error::Parse(format!("--format = '{v}': {e}")))?,
            (None, None) => OutFormat::Json,
        };
        let cfg = RunConfig {
            seed: self.parse("seed", r.seed)?.or(env_seed).unwrap_or(42),
            workers: self.parse("workers", r.workers)?.unwrap_or(1),
            samples: self.parse("samples", r.samples)?.unwrap_or(100_000),
            tol: self.parse("tol", r.tol)?.unwrap_or(1e-8),
            max_degree: self.parse("max-degree", r.max_degree)?.unwrap_or(30),
            out_format,
            out_path: r.out.clone().or_else(|| self.file.get("out").map(PathBuf::from)),
        };
        if cfg.workers == 0 || cfg.samples == 0 {
            return Err(Error::Domain("workers and samples must be positive".into()));
        }
        if cfg.tol.is_nan() || cfg.tol <= 0.0 {
            return Err(Error::Domain("tol must be positive".into()));
        }
        Ok(cfg)
    }
}

/// Parameter access for case and ensemble construction.
struct Params<'a> {
    args: &'a ParamArgs,
    settings: &'a Settings,
}

impl Params<'_> {
    fn get(&self, key: &str) -> Option<String> {
        let a = self.args;
        let flag = match key {
            "p" => a.p.as_ref(),
            "beta" => a.beta.as_ref(),
            "n" => a.n.as_ref(),
            "nu" => a.nu.as_ref(),
            "a1" => a.a1.as_ref(),
            "a2" => a.a2.as_ref(),
            "sigma" => a.sigma.as_ref(),
            "theta" => a.theta.as_ref(),
            "omega" => a.omega.as_ref(),
            "psi" => a.psi.as_ref(),
            _ => None,
        };
        self.settings.raw(key, flag)
    }

    fn real(&self, key: &str) -> Result<f64, Error> {
        let v = self.get(key).ok_or_else(|| Error::Domain(format!("missing parameter --{key}")))?;
        v.parse().map_err(|e| Error::Parse(format!("--{key} = '{v}': {e}")))
    }

    fn p(&self) -> Result<usize, Error> {
        let v = self.get("p").unwrap_or_else(|| "1".into());
        v.parse().map_err(|e| Error::Parse(format!("--p = '{v}': {e}")))
    }

    fn beta(&self) -> Result<AlgebraTag, Error> {
        let v = self.get("beta").unwrap_or_else(|| "1".into());
        AlgebraTag::new(v.parse().map_err(|e| Error::Parse(format!("--beta = '{v}': {e}")))?)
    }

    fn matrix(&self, key: &str, default: Option<f64>) -> Result<ParamMatrix, Error> {
        match self.get(key) {
            Some(v) => parse_matrix(&v, self.p()?, self.beta()?),
            None => default.map(ParamMatrix::Scalar).ok_or_else(|| Error::Domain(format!("missing parameter --{key}"))),
        }
    }

    fn spec(&self, name: &str) -> Result<EnsembleSpec, Error> {
        let (p, beta) = (self.p()?, self.beta()?);
        let spec = match name {
            "normal" => {
                let n = self.real("n")?;
                if n.fract() != 0.0 || n < 1.0 {
                    return Err(Error::Domain(format!("normal ensemble needs a positive integer n, got {n}")));
                }
                EnsembleSpec::Normal {
                    p,
                    n: n as usize,
                    beta,
                    mu: None,
                    sigma: self.matrix("sigma", Some(1.0))?,
                    theta: self.matrix("theta", Some(1.0))?,
                }
            }
            "wishart" => EnsembleSpec::Wishart { p, beta, n: self.real("n")?, sigma: self.matrix("sigma", Some(1.0))? },
            "t-type2" => EnsembleSpec::TTypeII { p, beta, n: self.real("n")?, nu: self.real("nu")? },
            "gegenbauer2" => EnsembleSpec::GegenbauerII { p, beta, n: self.real("n")?, nu: self.real("nu")? },
            "t-laguerre" => EnsembleSpec::TLaguerre { p, beta, n: self.real("n")?, nu: self.real("nu")? },
            "gegenbauer-laguerre" => EnsembleSpec::GegenbauerLaguerre { p, beta, n: self.real("n")?, nu: self.real("nu")? },
            "kb1" => EnsembleSpec::Kb1 { p, beta, a1: self.real("a1")?, a2: self.real("a2")?, sigma: self.matrix("sigma", None)? },
            "kb2" => EnsembleSpec::Kb2 { p, beta, a1: self.real("a1")?, a2: self.real("a2")?, sigma: self.matrix("sigma", None)? },
            "gkb1" | "gkb2" => {
                let (a1, a2) = (self.real("a1")?, self.real("a2")?);
                let theta = self.matrix("theta", Some(1.0))?;
                let omega = self.matrix("omega", Some(1.0))?;
                let psi = self.matrix("psi", Some(0.0))?;
                if name == "gkb1" {
                    EnsembleSpec::Gkb1 { p, beta, a1, a2, theta, omega, psi }
                } else {
                    EnsembleSpec::Gkb2 { p, beta, a1, a2, theta, omega, psi }
                }
            }
            other => return Err(Error::Domain(format!("unknown ensemble '{other}' (known: {})", ENSEMBLE_NAMES.join(", ")))),
        };
        spec.validate()?;
        Ok(spec)
    }

    fn case(&self, name: &str, ensemble: Option<&str>, convention: Convention) -> Result<IdentityCase, Error> {
        use IdentityCase::*;
        let (p, beta) = (self.p()?, self.beta()?);
        let case = match name {
            "wishart-gamma" => WishartGamma { p, beta, n: self.real("n")?, convention },
            "t-beta" => TBeta { p, beta, n: self.real("n")?, nu: self.real("nu")? },
            "gegenbauer-beta" => GegenbauerBeta { p, beta, n: self.real("n")?, nu: self.real("nu")? },
            "kb1" | "kb2" => {
                let (a1, a2, sigma) = (self.real("a1")?, self.real("a2")?, self.matrix("sigma", None)?);
                if name == "kb1" {
                    KummerBeta1 { p, beta, a1, a2, sigma, convention }
                } else {
                    KummerBeta2 { p, beta, a1, a2, sigma, convention }
                }
            }
            "gkb1" | "gkb2" => {
                let (a1, a2) = (self.real("a1")?, self.real("a2")?);
                let theta = self.matrix("theta", Some(1.0))?;
                let omega = self.matrix("omega", Some(1.0))?;
                let psi = self.matrix("psi", Some(0.0))?;
                if name == "gkb1" {
                    GenKummerBeta1 { p, beta, a1, a2, theta, omega, psi, convention }
                } else {
                    GenKummerBeta2 { p, beta, a1, a2, theta, omega, psi, convention }
                }
            }
            "general-density" => {
                let e = ensemble
                    .map(str::to_string)
                    .or_else(|| self.settings.file.get("ensemble").cloned())
                    .ok_or_else(|| Error::Domain("general-density needs --ensemble".into()))?;
                GeneralDensity { spec: self.spec(&e)? }
            }
            other => return Err(Error::Domain(format!("unknown case '{other}' (known: {})", CASE_NAMES.join(", ")))),
        };
        case.validate()?;
        Ok(case)
    }
}

/// A scalar, an inline row-major list of real entries, or a CSV file.
fn parse_matrix(v: &str, p: usize, beta: AlgebraTag) -> Result<ParamMatrix, Error> {
    if let Ok(s) = v.trim().parse::<f64>() {
        return Ok(ParamMatrix::Scalar(s));
    }
    let split = |s: &str| -> Option<Vec<f64>> {
        s.split(|c: char| c == ',' || c == ';' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>().ok())
            .collect()
    };
    let entries = match split(v.trim_matches(|c| c == '[' || c == ']')) {
        Some(e) => e,
        None => {
            let text = std::fs::read_to_string(v).map_err(|e| Error::Parse(format!("matrix '{v}': {e}")))?;
            split(&text).ok_or_else(|| Error::Parse(format!("matrix file '{v}' has non-numeric entries")))?
        }
    };
    if entries.len() != p * p {
        return Err(Error::DimensionMismatch { expected: format!("{} entries", p * p), got: entries.len().to_string() });
    }
    Ok(ParamMatrix::Full(HermitianMatrix::from_real(beta, p, &entries)?))
}

fn registry_help() -> String {
    format!("Identity cases: {}\nEnsembles: {}\nSuites: default", CASE_NAMES.join(", "), ENSEMBLE_NAMES.join(", "))
}

fn print_value(log: f64, sign: f64) {
    println!("log {log}");
    let v = sign * log.exp();
    if v.is_finite() && v != 0.0 {
        println!("value {v}");
    }
}

fn run_specfun(f: SpecFn, a: &SpecArgs) -> Result<(), Error> {
    let need = |v: Option<f64>, k: &str| v.ok_or_else(|| Error::Domain(format!("missing --{k}")));
    let p = a.p.unwrap_or(1);
    let beta = a.beta.unwrap_or(1);
    match f {
        SpecFn::Gamma => print_value(mv_gamma_log(p, AlgebraTag::new(beta)?, need(a.a, "a")?)?, 1.0),
        SpecFn::Beta => print_value(mv_beta_log(p, AlgebraTag::new(beta)?, need(a.a, "a")?, need(a.b, "b")?)?, 1.0),
        SpecFn::StiefelVol => {
            let n = a.n.ok_or_else(|| Error::Domain("missing --n".into()))?;
            print_value(stiefel_log_volume(n, p, AlgebraTag::new(beta)?)?, 1.0)
        }
        SpecFn::Pochhammer => {
            let kappa = a.kappa.as_deref().ok_or_else(|| Error::Domain("missing --kappa".into()))?;
            let parts: Vec<u32> = kappa
                .split(',')
                .filter(|t| !t.trim().is_empty())
                .map(|t| t.trim().parse().map_err(|e| Error::Parse(format!("--kappa '{t}': {e}"))))
                .collect::<Result<_, _>>()?;
            let v = pochhammer(need(a.a, "a")?, &Partition::new(parts)?, AlgebraTag::new(beta)?.b());
            print_value(v.log_abs, v.sign)
        }
        SpecFn::Rho => println!("value {}", rho(p, beta)?),
    }
    Ok(())
}

fn write_report(report: &SuiteReport, cfg: &RunConfig) -> Result<PathBuf, Error> {
    let (body, ext) = match cfg.out_format {
        OutFormat::Json => (report.to_json()? + "\n", "json"),
        OutFormat::Csv => (report.to_csv(), "csv"),
    };
    let path = cfg.out_path.clone().unwrap_or_else(|| PathBuf::from(format!("betaint-report.{ext}")));
    std::fs::write(&path, body)?;
    Ok(path)
}

fn exit_for(e: &Error) -> u8 {
    match e {
        Error::RejectionStall { .. } => EXIT_STALL,
        _ => EXIT_INVALID,
    }
}

fn real_main() -> Result<u8, Error> {
    let matches = Cli::command().after_help(registry_help()).get_matches();
    let cli = Cli::from_arg_matches(&matches).map_err(|e| Error::Parse(e.to_string()))?;
    let settings = Settings::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Specfun { function, args } => {
            run_specfun(*function, args)?;
            Ok(0)
        }
        Command::Verify { case, suite, convention, ensemble, params, run, timing } => {
            let cfg = settings.run_config(run)?;
            let convention = match convention.as_deref().or(settings.file.get("convention").map(String::as_str)) {
                Some(c) => Convention::parse(c)?,
                None => Convention::Definition,
            };
            let suite = suite.clone().or_else(|| settings.file.get("suite").cloned());
            let case = case.clone().or_else(|| settings.file.get("case").cloned());
            let cases = match (suite.as_deref(), case.as_deref()) {
                (Some("default"), None) => default_suite(),
                (Some(other), None) => return Err(Error::Domain(format!("unknown suite '{other}'"))),
                (None, Some(name)) => {
                    let p = Params { args: params, settings: &settings };
                    vec![p.case(name, ensemble.as_deref(), convention)?]
                }
                _ => return Err(Error::Domain("give exactly one of --case or --suite".into())),
            };
            let vcfg = VerifyConfig {
                mc: McConfig::new(cfg.samples, cfg.seed).with_workers(cfg.workers),
                max_degree: cfg.max_degree,
                tol: cfg.tol,
                record_timing: *timing,
                ..VerifyConfig::default()
            };
            let report = verify_suite(&cases, &vcfg);
            for line in report.summary_lines() {
                println!("{line}");
            }
            for c in &report.cases {
                if let Some(m) = &c.message {
                    eprintln!("{}: {m}", c.case_id);
                }
                for m in &c.methods {
                    if let Some(msg) = &m.message {
                        eprintln!("{} {}: {msg}", c.case_id, m.method.name());
                    }
                }
            }
            let path = write_report(&report, &cfg)?;
            eprintln!("report written to {}", path.display());
            Ok(if report.status == betaint::selberg::Status::Fail { EXIT_FAIL } else { 0 })
        }
        Command::Sample { ensemble, count, params, run, manifest } => {
            let cfg = settings.run_config(run)?;
            let name = ensemble
                .clone()
                .or_else(|| settings.file.get("ensemble").cloned())
                .ok_or_else(|| Error::Domain("missing --ensemble".into()))?;
            let count = settings.parse("count", *count)?.unwrap_or(1000);
            let spec = Params { args: params, settings: &settings }.spec(&name)?;
            let batch = sample_batch(&spec, count, cfg.seed, cfg.workers)?;
            let csv = cfg.out_path.clone().unwrap_or_else(|| PathBuf::from("samples.csv"));
            let manifest = manifest.clone().unwrap_or_else(|| csv.with_extension("json"));
            batch.export(&csv, &manifest)?;
            println!(
                "ENSEMBLE {} COUNT {} ACCEPTANCE {} CSV {} MANIFEST {}",
                name,
                batch.draws.len(),
                batch.stats.rate(),
                csv.display(),
                manifest.display()
            );
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for(&e))
        }
    }
}
