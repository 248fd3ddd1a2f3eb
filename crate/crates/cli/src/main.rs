use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use treewalk::cascade::{empirical_tail, estimate_tail_constant, run_to_fixpoint, TailMethod, Target, DEFAULT_POOL_SIZE};
use treewalk::env::{calibrate_two_point, EnvironmentSpec, SpecFile, DEFAULT_PROBE_BOUND};
use treewalk::limits::{corollary12_check, predict_limits};
use treewalk::recursion::{abel_cross_check, abel_horizon, b_epsilon, martingale_limit, omega_root_parent, DEFAULT_DEPTHS};
use treewalk::verify::{
    applicable_claims, report_bundle, summary_text, verify, Params, RunConfig, Tolerances, Verdict, Verification,
};
use treewalk::walk::{local_time_profile, realization, survival_curve, WalkMode};
use treewalk::Error;

/// Biased random walks on marked Galton-Watson trees.
#[derive(Parser)]
#[command(name = "treewalk", version)]
struct Cli {
    /// Spec file (JSON), or `binary`, or `two-point:B:C:KAPPA`.
    #[arg(long, global = true, default_value = "binary")]
    spec: String,
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Output directory for CSV files; CSV goes to stdout without it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(flatten)]
    tol: TolArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct TolArgs {
    #[arg(long = "tol.sigmas", global = true)]
    sigmas: Option<f64>,
    #[arg(long = "tol.rel", global = true)]
    rel: Option<f64>,
    #[arg(long = "tol.slope", global = true)]
    slope: Option<f64>,
    #[arg(long = "tol.ks", global = true)]
    ks: Option<f64>,
    #[arg(long = "tol.abs", global = true)]
    abs: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Environment laws: validation and calibration.
    #[command(subcommand)]
    Env(EnvCmd),
    /// Quenched and annealed walks.
    #[command(subcommand)]
    Walk(WalkCmd),
    /// Backward recursions on one tree.
    #[command(subcommand)]
    Recur(RecurCmd),
    /// Population dynamics for the fixed points.
    #[command(subcommand)]
    Cascade(CascadeCmd),
    /// Limit constants and law comparisons.
    #[command(subcommand)]
    Limits(LimitsCmd),
    /// Runs the pipeline behind one registered claim.
    Verify(VerifyArgs),
    /// Runs every applicable claim for each spec and writes a summary.
    Report(ReportArgs),
}

#[derive(Subcommand)]
enum EnvCmd {
    /// Checks the regime hypotheses; exit 0 iff both hold.
    Validate { file: Option<String> },
    /// Two-point law with `b` children and the given kappa.
    Calibrate {
        #[arg(long)]
        b: usize,
        #[arg(long)]
        c: f64,
        #[arg(long)]
        kappa: f64,
    },
}

#[derive(Subcommand)]
enum WalkCmd {
    /// `P(T+ > n)` on the horizons; CSV `n,p_hat,stderr`.
    Survive {
        #[arg(long, value_delimiter = ',', required = true)]
        horizons: Vec<u64>,
        #[arg(long, default_value_t = 10_000)]
        replicas: usize,
        /// Fresh tree per replica instead of one fixed tree.
        #[arg(long)]
        annealed: bool,
    },
    /// Root local time and local probability on even times.
    Localtime {
        #[arg(long, default_value_t = 100_000)]
        n: u64,
        #[arg(long, default_value_t = 10_000)]
        replicas: usize,
    },
}

#[derive(Subcommand)]
enum RecurCmd {
    /// `B_eps(root)` at increasing depths; CSV `depth,B_value,half_width`.
    BEps {
        #[arg(long)]
        eps: f64,
        #[arg(long, value_delimiter = ',')]
        depths: Option<Vec<u32>>,
        #[arg(long, default_value_t = 1e-6)]
        gap: f64,
    },
    /// Abel sum of a quenched survival curve against the recursion.
    Abel {
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value_t = 100_000)]
        replicas: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetArg {
    BEps,
    MInf,
}

#[derive(Subcommand)]
enum CascadeCmd {
    /// Pool to its fixpoint; CSV `iteration,mean,sd`.
    Run {
        #[arg(long, value_enum, default_value = "b-eps")]
        target: TargetArg,
        #[arg(long, default_value_t = 1e-2)]
        eps: f64,
        #[arg(long, default_value_t = DEFAULT_POOL_SIZE)]
        pool: usize,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Tail of the `M_inf` pool; CSV `x,tail_prob`.
    Tail {
        #[arg(long, default_value_t = DEFAULT_POOL_SIZE)]
        pool: usize,
    },
}

#[derive(Subcommand)]
enum LimitsCmd {
    /// Limit constants for the quenched tree.
    Predict {
        #[arg(long)]
        c_m: Option<f64>,
    },
    /// Law of `L_n` against its limit; CSV `x,empirical_cdf,predicted_cdf`.
    CheckC12 {
        #[arg(long, default_value_t = 100_000)]
        n: u64,
        #[arg(long, default_value_t = 10_000)]
        replicas: usize,
        #[arg(long)]
        c_m: Option<f64>,
    },
}

#[derive(Args)]
struct VerifyArgs {
    /// Claim id, e.g. `Thm1.1-case3`; omit with `--list`.
    claim: Option<String>,
    /// Lists the registered claims.
    #[arg(long)]
    list: bool,
    /// Reruns a saved configuration instead of the flags; `--out` still applies.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    params: ParamArgs,
}

#[derive(Args)]
struct ReportArgs {
    /// Further specs besides `--spec`.
    #[arg(long = "also", value_delimiter = ',')]
    also: Vec<String>,
    /// Claims to run (all applicable ones by default).
    #[arg(long, value_delimiter = ',')]
    claims: Option<Vec<String>>,
    #[command(flatten)]
    params: ParamArgs,
}

#[derive(Args)]
struct ParamArgs {
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long)]
    n: Option<u64>,
    #[arg(long)]
    pool: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    #[arg(long)]
    grid_draws: Option<usize>,
    #[arg(long)]
    c_m: Option<f64>,
    #[arg(long)]
    c4: Option<f64>,
}

impl From<&ParamArgs> for Params {
    fn from(a: &ParamArgs) -> Self {
        Params {
            replicas: a.replicas,
            n: a.n,
            pool_size: a.pool,
            epsilons: a.eps.clone(),
            lambdas: a.lambdas.clone(),
            grid_draws: a.grid_draws,
            c_m: a.c_m,
            c4: a.c4,
        }
    }
}

impl From<&TolArgs> for Tolerances {
    fn from(t: &TolArgs) -> Self {
        Tolerances {
            sigmas: t.sigmas,
            rel: t.rel,
            slope: t.slope,
            ks: t.ks,
            abs: t.abs,
        }
    }
}

type CliResult = Result<ExitCode, Error>;

const PASS: u8 = 0;
const FAIL: u8 = 1;
const CONFIG: u8 = 2;

fn load_spec(name: &str) -> Result<(String, SpecFile), Error> {
    if name == "binary" {
        return Ok(("binary".into(), EnvironmentSpec::binary().to_file(None)));
    }
    if let Some(rest) = name.strip_prefix("two-point:") {
        let parts: Vec<&str> = rest.split(':').collect();
        let bad = || Error::InvalidSpec(format!("expected two-point:B:C:KAPPA, got {name}"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let b = parts[0].parse().map_err(|_| bad())?;
        let c = parts[1].parse().map_err(|_| bad())?;
        let k = parts[2].parse().map_err(|_| bad())?;
        return Ok((format!("k{}", parts[2]), calibrate_two_point(b, c, k)?.to_file(None)));
    }
    let label = Path::new(name)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| name.to_string());
    Ok((label, SpecFile::load(name)?))
}

/// Writes `csv` to `<out>/<name>` or to stdout.
fn emit(out: &Option<PathBuf>, name: &str, csv: &str) -> Result<(), Error> {
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(name), csv)?;
            eprintln!("wrote {}", dir.join(name).display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    let (label, file) = load_spec(&cli.spec)?;
    let spec = EnvironmentSpec::from_file(&file)?;
    let env_seed = file.seed.unwrap_or(cli.seed);
    match &cli.command {
        Command::Env(cmd) => env_cmd(cmd, &cli),
        Command::Walk(cmd) => {
            let real = realization(&spec, env_seed);
            match *cmd {
                WalkCmd::Survive {
                    ref horizons,
                    replicas,
                    annealed,
                } => {
                    let mode = if annealed { WalkMode::Annealed } else { WalkMode::Quenched };
                    let curve = survival_curve(&real, mode, horizons, replicas, cli.seed)?;
                    emit(&cli.out, "survival.csv", &curve.to_csv())?;
                }
                WalkCmd::Localtime { n, replicas } => {
                    let lo = (n / 100).max(2);
                    let grid: Vec<u64> = (0..=10)
                        .map(|i| {
                            let t = (lo as f64 * ((n as f64 / lo as f64).powf(i as f64 / 10.0))).round() as u64;
                            t - t % 2
                        })
                        .collect();
                    let prof = local_time_profile(&real, n, &grid, 0.1, replicas, cli.seed)?;
                    emit(&cli.out, "local_prob.csv", &prof.to_csv())?;
                    let mut lt = String::from("replica,local_time\n");
                    for (i, l) in prof.local_times.iter().enumerate() {
                        lt.push_str(&format!("{i},{l}\n"));
                    }
                    if cli.out.is_some() {
                        emit(&cli.out, "local_time.csv", &lt)?;
                    }
                }
            }
            Ok(ExitCode::from(PASS))
        }
        Command::Recur(cmd) => {
            let real = realization(&spec, env_seed);
            match *cmd {
                RecurCmd::BEps { eps, ref depths, gap } => {
                    let depths = depths.clone().unwrap_or_else(|| DEFAULT_DEPTHS.to_vec());
                    let b = b_epsilon(&real, eps, &depths, gap)?;
                    emit(&cli.out, "b_eps.csv", &b.to_csv())?;
                    eprintln!("B_eps(root) = {:.12e}, gap {:.3e}", b.root_b, b.gap);
                    Ok(ExitCode::from(PASS))
                }
                RecurCmd::Abel { lambda, replicas } => {
                    let curve = survival_curve(&real, WalkMode::Quenched, &[abel_horizon(lambda)], replicas, cli.seed)?;
                    let c = abel_cross_check(&real, lambda, &curve)?;
                    let sig = cli.tol.sigmas.unwrap_or(3.0);
                    let csv = format!(
                        "lambda,lhs,lhs_stderr,rhs,rhs_without_boundary,relative_discrepancy,relative_combined_stderr\n{lambda},{:.10e},{:.3e},{:.10e},{:.10e},{:.3e},{:.3e}\n",
                        c.lhs, c.lhs_stderr, c.rhs, c.rhs_without_boundary, c.relative_discrepancy, c.relative_combined_stderr
                    );
                    emit(&cli.out, "abel.csv", &csv)?;
                    Ok(ExitCode::from(if c.passes(sig) { PASS } else { FAIL }))
                }
            }
        }
        Command::Cascade(cmd) => {
            match *cmd {
                CascadeCmd::Run { target, eps, pool, tol } => {
                    let target = match target {
                        TargetArg::BEps => Target::BEps(eps),
                        TargetArg::MInf => Target::MInf,
                    };
                    let run = run_to_fixpoint(&spec, target, pool, 200_000, tol, cli.seed)?;
                    emit(&cli.out, "fixpoint.csv", &run.to_csv())?;
                    eprintln!("{} iterations, pool mean {:.10e}", run.trace.len(), run.pool.mean());
                }
                CascadeCmd::Tail { pool } => {
                    let kappa = spec.kappa(DEFAULT_PROBE_BOUND)?;
                    let run = run_to_fixpoint(&spec, Target::MInf, pool, 5_000, 1e-3, cli.seed)?;
                    let mut csv = String::from("x,tail_prob\n");
                    for (x, p) in empirical_tail(&run.pool.samples, 400) {
                        csv.push_str(&format!("{x:.10e},{p:.6e}\n"));
                    }
                    emit(&cli.out, "tail.csv", &csv)?;
                    let fit = estimate_tail_constant(&run.pool.samples, kappa, TailMethod::Hill, cli.seed)?;
                    eprintln!(
                        "Hill exponent {:.4} +- {:.4}, c_M {:.5} +- {:.5}",
                        fit.exponent_hat, fit.exponent_stderr, fit.constant_hat, fit.constant_stderr
                    );
                }
            }
            Ok(ExitCode::from(PASS))
        }
        Command::Limits(cmd) => {
            let real = realization(&spec, env_seed);
            let m_inf = if spec.has_constant_mark_sum() {
                1.0
            } else {
                martingale_limit(&real, 1e-3, 1_000_000_000).estimate
            };
            match *cmd {
                LimitsCmd::Predict { c_m } => {
                    let p = predict_limits(&spec, c_m, m_inf, omega_root_parent(&real))?;
                    let opt = |v: Option<f64>| v.map(|x| format!("{x:.10e}")).unwrap_or_default();
                    let csv = format!(
                        "kappa,regime,c1,c2,c3,c4,c5,omega_root,m_inf,local_time_factor,local_prob_prefactor\n{},{},{},{},{},{},{},{:.10e},{:.10e},{:.10e},{:.10e}\n",
                        p.kappa,
                        p.regime,
                        opt(p.c1),
                        opt(p.c2),
                        opt(p.c3),
                        opt(p.c4),
                        opt(p.c5),
                        p.omega_root,
                        p.m_inf,
                        p.local_time_factor(),
                        p.local_prob_prefactor()
                    );
                    emit(&cli.out, "prediction.csv", &csv)?;
                    Ok(ExitCode::from(PASS))
                }
                LimitsCmd::CheckC12 { n, replicas, c_m } => {
                    let p = predict_limits(&spec, c_m, m_inf, omega_root_parent(&real))?;
                    let prof = local_time_profile(&real, n, &[n - n % 2], 0.0, replicas, cli.seed)?;
                    let mut r = corollary12_check(&prof.local_times, n, &p, cli.seed)?;
                    if let (Some(t), Some(_)) = (cli.tol.ks, r.tolerance) {
                        r.tolerance = Some(t);
                    }
                    emit(&cli.out, "cdf.csv", &r.to_csv())?;
                    eprintln!("KS {:.4} (limit factor {:.4})", r.ks, r.factor);
                    Ok(ExitCode::from(match r.passes() {
                        Some(false) => FAIL,
                        _ => PASS,
                    }))
                }
            }
        }
        Command::Verify(args) => {
            if args.list {
                for c in treewalk::verify::Registry::builtin().claims() {
                    println!("{:<18} {:<18} {}", c.id, c.requires.to_string(), c.summary);
                }
                return Ok(ExitCode::from(PASS));
            }
            let cfg = match &args.config {
                Some(path) => {
                    let mut cfg = RunConfig::load(path)?;
                    if cli.out.is_some() {
                        cfg.out_dir = cli.out.clone();
                    }
                    cfg
                }
                None => {
                    let mut cfg = RunConfig::new(&label, &spec, cli.seed);
                    cfg.spec = file.clone();
                    cfg.out_dir = cli.out.clone();
                    cfg.params = Params::from(&args.params);
                    cfg.tol = Tolerances::from(&cli.tol);
                    cfg
                }
            };
            let claim = args
                .claim
                .as_deref()
                .or(cfg.claim.as_deref())
                .ok_or_else(|| Error::Precondition("a claim id is required (see --list)".into()))?;
            let v = verify(claim, &cfg)?;
            finish(&cfg, &[v])
        }
        Command::Report(args) => {
            let mut specs = vec![(label.clone(), file.clone())];
            for name in &args.also {
                specs.push(load_spec(name)?);
            }
            let mut done = Vec::new();
            for (lab, f) in specs {
                let mut cfg = RunConfig::new(&lab, &EnvironmentSpec::from_file(&f)?, cli.seed);
                cfg.spec = f;
                cfg.out_dir = cli.out.clone();
                cfg.params = Params::from(&args.params);
                cfg.tol = Tolerances::from(&cli.tol);
                let ids: Vec<String> = match &args.claims {
                    Some(c) => c.clone(),
                    None => applicable_claims(&cfg)?.iter().map(|c| c.id.clone()).collect(),
                };
                for id in ids {
                    let v = verify(&id, &cfg)?;
                    eprintln!("{lab}: {id} {} ({:.1} s)", v.report.verdict, v.report.runtime_secs);
                    done.push((cfg.clone(), v));
                }
            }
            let reports: Vec<_> = done.iter().map(|(_, v)| v.report.clone()).collect();
            if let Some(dir) = &cli.out {
                for (_, v) in &done {
                    v.write(dir)?;
                }
                std::fs::write(dir.join("summary.txt"), summary_text(&reports))?;
            }
            emit(&cli.out, "bundle.csv", &report_bundle(&reports))?;
            eprint!("{}", summary_text(&reports));
            Ok(exit_for(&reports))
        }
    }
}

fn exit_for(reports: &[treewalk::verify::VerificationReport]) -> ExitCode {
    if reports.iter().any(|r| r.verdict == Verdict::Fail) {
        ExitCode::from(FAIL)
    } else {
        ExitCode::from(PASS)
    }
}

fn finish(cfg: &RunConfig, done: &[Verification]) -> CliResult {
    let reports: Vec<_> = done.iter().map(|v| v.report.clone()).collect();
    match &cfg.out_dir {
        Some(dir) => {
            for v in done {
                for p in v.write(dir)? {
                    eprintln!("wrote {}", p.display());
                }
            }
            let saved = RunConfig {
                claim: Some(reports[0].claim.clone()),
                ..cfg.clone()
            };
            saved.save(dir.join(format!("{}.{}.config.json", reports[0].claim, cfg.label)))?;
        }
        None => print!("{}", report_bundle(&reports)),
    }
    for r in &reports {
        eprintln!("{} [{}] {}: {} ({:.1} s)", r.claim, r.spec, r.verdict, r.detail, r.runtime_secs);
    }
    Ok(exit_for(&reports))
}

fn env_cmd(cmd: &EnvCmd, cli: &Cli) -> CliResult {
    match cmd {
        EnvCmd::Validate { file } => {
            let (_, f) = load_spec(file.as_deref().unwrap_or(&cli.spec))?;
            let spec = EnvironmentSpec::from_file(&f)?;
            let rep = spec.validate_assumptions();
            let csv = format!(
                "hyp1,hyp2,lattice,kappa,psi_prime_1,c5,second_moment\n{},{},{:?},{},{:.10e},{},{}\n",
                rep.hyp1_ok,
                rep.hyp2_ok,
                rep.hyp3_status,
                rep.kappa,
                rep.psi_prime_1,
                spec.c5().map(|c| format!("{c:.10e}")).unwrap_or_default(),
                spec.m_inf_second_moment().map(|c| format!("{c:.10e}")).unwrap_or_default(),
            );
            emit(&cli.out, "validate.csv", &csv)?;
            eprintln!("{}", rep.details);
            Ok(ExitCode::from(if rep.regime_ok() { PASS } else { CONFIG }))
        }
        EnvCmd::Calibrate { b, c, kappa } => {
            let spec = calibrate_two_point(*b, *c, *kappa)?;
            let text = serde_json::to_string_pretty(&spec.to_file(Some(cli.seed)))? + "\n";
            match &cli.out {
                Some(dir) => {
                    std::fs::create_dir_all(dir)?;
                    let p = dir.join(format!("two_point_k{kappa}.json"));
                    std::fs::write(&p, text)?;
                    eprintln!("wrote {}", p.display());
                }
                None => print!("{text}"),
            }
            Ok(ExitCode::from(PASS))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(w) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(CONFIG);
        }
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { CONFIG } else { FAIL })
        }
    }
}
