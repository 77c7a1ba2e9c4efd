//! `kamiter`: batch CLI for the KAM iteration engine.
//!
//! Exit codes: 0 success/convergence, 2 expected model infeasibility
//! (no frequency-preserving solution), 1 internal error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use kamiter::assumptions::{check_diophantine, fit_weak_convexity, DiophantineParams};
use kamiter::config::{default_config_toml, emit_report, fmt17, parse_config, ReportFormat, RunConfig};
use kamiter::error::KamError;
use kamiter::frequency::solve_frequency_equation;
use kamiter::kam::driver::{replay, run_kam, RunOutcome, ScheduleMode, TorusRecord};
use kamiter::models::{build_model, make_pro1, pro1_p0, ModelParams};

#[derive(Parser)]
#[command(name = "kamiter", version, about = "Frequency-preserving KAM iteration for degenerate Hamiltonians")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the KAM iteration on a model and emit steps.csv / torus.json.
    Run(RunArgs),
    /// Check (A0)/(A1)/(A2) numerically and print a JSON report.
    CheckAssumptions(CheckArgs),
    /// Sweep the plateau counterexample over eps_k = 1/(k pi + pi/2).
    DemoCounterexample(CounterexampleArgs),
    /// Run the odd-power model and show the expected no-solution diagnostic.
    DemoNoSolution(NoSolutionArgs),
    /// Re-compose a stored transformation record and verify the final state.
    Replay(ReplayArgs),
    /// Print the default configuration document.
    PrintConfig,
}

#[derive(Args)]
struct ModelSelect {
    /// Model name: pro2 | th3_case1 | th3_case2 | pro1 | cor1 | custom
    #[arg(long)]
    model: String,
    /// Degeneracy order l (pro2).
    #[arg(long)]
    l: Option<u32>,
    /// Degeneracy order ell (th3/cor1/pro1).
    #[arg(long)]
    ell: Option<u32>,
    /// Dimension for pro2 (1..3).
    #[arg(long)]
    dim: Option<usize>,
    /// Comma-separated target frequency, overrides the model default.
    #[arg(long, value_delimiter = ',')]
    omega: Option<Vec<f64>>,
    /// Path to a custom model JSON spec (model = custom).
    #[arg(long)]
    model_file: Option<PathBuf>,
}

impl ModelSelect {
    fn params(&self) -> Result<ModelParams, KamError> {
        let mut p = ModelParams::default();
        if let Some(l) = self.l {
            p.l = l;
        }
        if let Some(ell) = self.ell {
            p.ell = ell;
        }
        if let Some(dim) = self.dim {
            p.dim = dim;
        }
        p.omega = self.omega.clone();
        if let Some(path) = &self.model_file {
            let text = std::fs::read_to_string(path).map_err(|e| KamError::Io(e.to_string()))?;
            p.custom_spec = Some(text);
        }
        Ok(p)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    select: ModelSelect,
    #[arg(long)]
    eps: f64,
    #[arg(long)]
    m: Option<u32>,
    #[arg(long)]
    tau: Option<f64>,
    /// Schedule mode: paper | practical
    #[arg(long)]
    mode: Option<String>,
    /// Grid nodes per axis (odd) for the parameter route.
    #[arg(long)]
    grid: Option<usize>,
    /// Output directory for steps.csv and torus.json.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Optional TOML config; CLI flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    stop_tol: Option<f64>,
    #[arg(long)]
    freq_tol: Option<f64>,
    #[arg(long)]
    prune_tol: Option<f64>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    select: ModelSelect,
    #[arg(long, default_value_t = 2.0)]
    tau: f64,
    /// Fourier cutoff of the finite Diophantine scan.
    #[arg(long = "K", default_value_t = 200)]
    k_max: u32,
    #[arg(long, default_value_t = 256)]
    samples_per_edge: usize,
}

#[derive(Args)]
struct CounterexampleArgs {
    /// Oscillation order of P0(eps) = eps^ell sin(1/eps). The exact plateau
    /// map admits in-box solutions for eps_k^ell < e^-4, hence ell = 3 for
    /// k = 1..6.
    #[arg(long, default_value_t = 3)]
    ell: u32,
    #[arg(long, default_value_t = 1)]
    k_min: u32,
    #[arg(long, default_value_t = 6)]
    k_max: u32,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
}

#[derive(Args)]
struct NoSolutionArgs {
    /// Perturbation sizes to demonstrate.
    #[arg(long, value_delimiter = ',', default_values_t = [1e-3, 1e-4, 1e-5])]
    eps: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    ell: u32,
}

#[derive(Args)]
struct ReplayArgs {
    /// torus.json produced by `run`.
    #[arg(long)]
    torus: PathBuf,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, KamError> {
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::CheckAssumptions(args) => cmd_check(args),
        Command::DemoCounterexample(args) => cmd_counterexample(args),
        Command::DemoNoSolution(args) => cmd_no_solution(args),
        Command::Replay(args) => cmd_replay(args),
        Command::PrintConfig => {
            print!("{}", default_config_toml());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn cmd_run(args: RunArgs) -> Result<ExitCode, KamError> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| KamError::Io(e.to_string()))?;
            parse_config(&text)?
        }
        None => RunConfig::default(),
    };
    cfg.model = args.select.model.clone();
    cfg.model_params = args.select.params()?;
    cfg.eps = args.eps;
    if let Some(v) = args.m {
        cfg.m = v;
    }
    if let Some(v) = args.tau {
        cfg.tau = v;
    }
    if let Some(v) = &args.mode {
        cfg.mode = match v.as_str() {
            "paper" => ScheduleMode::Paper,
            "practical" => ScheduleMode::Practical,
            other => {
                return Err(KamError::ConfigError {
                    path: "mode".into(),
                    reason: format!("expected paper|practical, got {other}"),
                })
            }
        };
    }
    if let Some(v) = args.grid {
        cfg.grid = v;
    }
    if let Some(v) = args.stop_tol {
        cfg.stop_tol = v;
    }
    if let Some(v) = args.freq_tol {
        cfg.freq_tol = v;
    }
    if let Some(v) = args.prune_tol {
        cfg.prune_tol = v;
    }
    if let Some(v) = args.max_steps {
        cfg.max_steps = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    cfg.validate()?;

    let model = build_model(&cfg.model, &cfg.model_params)?;
    let dim = model.dim;
    let artifacts = run_kam(model, cfg.settings())?;

    std::fs::create_dir_all(&args.out).map_err(|e| KamError::Io(e.to_string()))?;
    let csv = emit_report(&artifacts.reports, dim, ReportFormat::Csv);
    std::fs::write(args.out.join("steps.csv"), csv).map_err(|e| KamError::Io(e.to_string()))?;
    let torus_json =
        serde_json::to_string_pretty(&artifacts.torus).map_err(|e| KamError::Io(e.to_string()))?;
    std::fs::write(args.out.join("torus.json"), torus_json)
        .map_err(|e| KamError::Io(e.to_string()))?;

    for note in &artifacts.notes {
        println!("note: {note}");
    }
    for rep in &artifacts.reports {
        println!(
            "step {:2}  |P| = {}  freq_res = {}  xi_disp = {}",
            rep.step,
            fmt17(rep.norm_p),
            fmt17(rep.freq_residual),
            fmt17(rep.xi_displacement)
        );
    }
    match &artifacts.outcome {
        RunOutcome::Converged { steps } => {
            println!(
                "converged after {steps} steps; torus residual (sampled) = {}",
                fmt17(artifacts.torus.torus_residual_sampled)
            );
        }
        RunOutcome::MaxSteps { steps } => println!("stopped at max_steps = {steps}"),
        RunOutcome::Infeasible { step, reason } => {
            println!("infeasible at step {step}: {reason}");
        }
        RunOutcome::TwoTori { roots } => {
            println!(
                "two invariant tori at y = {} and y = {}",
                fmt17(roots[0]),
                fmt17(roots[1])
            );
        }
        RunOutcome::SingleTorus { root } => {
            println!("invariant torus at y = {}", fmt17(*root));
        }
        RunOutcome::Destroyed => {
            println!("unperturbed torus destroyed: g'(y) = -eps P'(y) has no real solution");
        }
    }
    Ok(ExitCode::from(artifacts.outcome.exit_code() as u8))
}

fn cmd_check(args: CheckArgs) -> Result<ExitCode, KamError> {
    let model = build_model(&args.select.model, &args.select.params()?)?;
    let probe = DiophantineParams::new(f64::MIN_POSITIVE, args.tau, model.dim)?;
    let scan = check_diophantine(&model.omega_ref, &probe, args.k_max);
    let degree = model
        .degree_at_default_box(args.samples_per_edge)
        .map(|r| r.deg);
    let convexity = fit_weak_convexity(
        &|xi: &[f64]| model.freq.omega(xi),
        &model.convexity_samples(),
        8,
    )?;

    let report = serde_json::json!({
        "model": model.name,
        "diophantine": {
            "margin": scan.margin,
            "worst_k": scan.worst_k,
            "K": scan.k_max,
            "gamma": scan.margin / 2.0,
            "tau": args.tau,
            "note": scan.note,
        },
        "degree": match degree {
            Ok(d) => serde_json::json!(d),
            Err(ref e) => serde_json::json!({"error": e.to_string()}),
        },
        "convexity": {
            "sigma": convexity.sigma,
            "L": convexity.l,
            "violated": convexity.violated,
        },
    });
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    Ok(ExitCode::SUCCESS)
}

fn cmd_counterexample(args: CounterexampleArgs) -> Result<ExitCode, KamError> {
    let model = make_pro1(args.ell);
    let radius = model.interior_radius() * 0.999;
    let region = kamiter::assumptions::BoxRegion::cube(&model.xi0, radius);
    let mut last: Option<f64> = None;
    println!("# k, eps_k, P0(eps_k), xi_1, xi_2, jump");
    for k in args.k_min..=args.k_max {
        let eps = 1.0 / (k as f64 * std::f64::consts::PI + std::f64::consts::FRAC_PI_2);
        let p0 = pro1_p0(eps, args.ell);
        let omega0 = model.omega_ref.clone();
        let freq = &model.freq;
        let g = move |xi: &[f64]| -> Vec<f64> {
            let w = freq.omega(xi);
            vec![w[0] - omega0[0], w[1] + p0 - omega0[1]]
        };
        match solve_frequency_equation(&g, &region, args.tol, 256) {
            Ok(root) => {
                let jump = last.map(|prev| (root.xi[1] - prev).abs());
                println!(
                    "{k}, {}, {}, {}, {}, {}",
                    fmt17(eps),
                    fmt17(p0),
                    fmt17(root.xi[0]),
                    fmt17(root.xi[1]),
                    jump.map(fmt17).unwrap_or_else(|| "-".into())
                );
                last = Some(root.xi[1]);
            }
            Err(e) => {
                println!("{k}, {}, {}, no-solution: {e}", fmt17(eps), fmt17(p0));
                last = None;
            }
        }
    }
    println!("# the solved xi_2 alternates between (-1,-1/2) and (1/2,1); weak convexity (A1) fails on the plateau");
    Ok(ExitCode::SUCCESS)
}

fn cmd_no_solution(args: NoSolutionArgs) -> Result<ExitCode, KamError> {
    let mut all_infeasible = true;
    for &eps in &args.eps {
        let model = build_model("cor1", &ModelParams { ell: args.ell, ..Default::default() })?;
        let mut settings = kamiter::kam::driver::RunSettings {
            eps,
            ..Default::default()
        };
        settings.max_steps = 4;
        let artifacts = run_kam(model, settings)?;
        match &artifacts.outcome {
            RunOutcome::Infeasible { step, reason } => {
                println!("eps = {}: infeasible at step {step}: {reason}", fmt17(eps));
            }
            other => {
                all_infeasible = false;
                println!("eps = {}: unexpected outcome {:?}", fmt17(eps), other);
            }
        }
    }
    if all_infeasible {
        println!("frequency equation y^(2 ell) + eps = 0 has no real solution: expected infeasibility");
        Ok(ExitCode::from(2))
    } else {
        Ok(ExitCode::from(1))
    }
}

fn cmd_replay(args: ReplayArgs) -> Result<ExitCode, KamError> {
    let text = std::fs::read_to_string(&args.torus).map_err(|e| KamError::Io(e.to_string()))?;
    let record: TorusRecord =
        serde_json::from_str(&text).map_err(|e| KamError::Io(e.to_string()))?;
    let name = record
        .model
        .split('(')
        .next()
        .unwrap_or(&record.model)
        .to_string();
    let mut params = ModelParams::default();
    // recover order parameters recorded in the name, e.g. "pro2(l=1)"
    if let Some(rest) = record.model.split(['=', ')']).nth(1) {
        if let Ok(v) = rest.parse::<u32>() {
            params.l = v;
            params.ell = v;
        }
    }
    if name == "pro2" {
        params.dim = record.omega0.len();
        params.omega = Some(record.omega0.clone());
    }
    let model = build_model(&name, &params)?;
    let disagreement = replay(&model, &record, 8)?;
    println!("replay disagreement (relative majorant) = {}", fmt17(disagreement));
    if disagreement <= args.tol {
        println!("replay OK within {}", fmt17(args.tol));
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("replay disagreement exceeds {}", fmt17(args.tol));
        Ok(ExitCode::from(1))
    }
}
