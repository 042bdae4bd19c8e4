use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use ecsim::data::{load, parse_libsvm, DatasetSource, LoadOptions, ParseOptions, DATA_DIR_ENV};
use ecsim::problem::{Loss, Objective};
use ecsim::report::{calc_rows, execute, parse_config, prepare, render_table};
use ecsim::theory;

#[derive(Parser)]
#[command(name = "ecsim", version, about = "Simulate distributed error-compensated SGD")]
struct Cli {
    /// Directory searched for relative dataset paths.
    #[arg(long, global = true, env = DATA_DIR_ENV)]
    data_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write CSV traces and an SVG plot.
    Run {
        config: PathBuf,
        #[arg(short, long, default_value = "results")]
        out: PathBuf,
        /// Overrides the config's `parallel` key.
        #[arg(long)]
        parallel: Option<bool>,
    },
    /// Print theory constants, stepsizes and bounds.
    Calc(CalcArgs),
    /// Solve for the reference optimum of a dataset.
    SolveRef {
        dataset: String,
        #[arg(long, default_value_t = 20)]
        workers: usize,
        #[arg(long, default_value_t = 0.0)]
        l2: f64,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        shuffle_seed: u64,
    },
    /// Parse a LIBSVM file and print a summary.
    ParseCheck {
        file: PathBuf,
        #[arg(long)]
        dimension: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    EcSgd,
    EcLsvrg,
}

#[derive(clap::Args)]
struct CalcArgs {
    /// Evaluate the methods of an experiment config on its data.
    #[arg(long, conflicts_with_all = ["method", "smoothness"])]
    config: Option<PathBuf>,
    #[arg(long, value_enum, requires = "smoothness")]
    method: Option<MethodArg>,
    /// L of the objective.
    #[arg(long)]
    smoothness: Option<f64>,
    /// Expected-smoothness constant.
    #[arg(long, default_value_t = 0.0)]
    expected_smoothness: f64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Gradient noise at the optimum (EC-SGD).
    #[arg(long, default_value_t = 0.0)]
    sigma_star_sq: f64,
    /// Reference-update probability (EC-LSVRG).
    #[arg(long, default_value_t = 1.0)]
    p: f64,
    /// Absolute compression level.
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    #[arg(long, default_value_t = 0.0)]
    mu: f64,
    /// Iteration count for the stepsize rule.
    #[arg(long)]
    iterations: Option<u64>,
    /// Squared initial distance to the optimum, for the bound.
    #[arg(long)]
    dist_sq: Option<f64>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(dir) = &cli.data_dir {
        std::env::set_var(DATA_DIR_ENV, dir);
    }
    match cli.command {
        Command::Run { config, out, parallel } => cmd_run(config, out, parallel),
        Command::Calc(args) => cmd_calc(args),
        Command::SolveRef {
            dataset,
            workers,
            l2,
            tol,
            shuffle_seed,
        } => cmd_solve_ref(&dataset, workers, l2, tol, shuffle_seed),
        Command::ParseCheck { file, dimension } => cmd_parse_check(file, dimension),
    }
}

fn cmd_run(config: PathBuf, out: PathBuf, parallel: Option<bool>) -> Result<()> {
    let text = std::fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
    let mut cfg = parse_config(&text).with_context(|| format!("in {}", config.display()))?;
    if let Some(p) = parallel {
        cfg.parallel = p;
    }
    let prepared = prepare(&cfg).with_context(|| format!("in {}", config.display()))?;
    eprintln!(
        "{}: d = {}, workers = {}, m = {}, f* = {:e}",
        prepared.manifest.name,
        prepared.objective.d(),
        prepared.objective.n(),
        prepared.objective.m(),
        prepared.reference.f_star
    );
    let result = execute(&prepared, Some(&out))?;
    for r in &result.results {
        for (seed, run) in &r.runs {
            let last = run.traces.last().expect("trace has a final record");
            println!(
                "{:<24} seed {:>3}  gamma {:.4e}  gap {:.4e}  bits/worker {:.4e}",
                r.method.label, seed, r.method.gamma, last.f_gap_x, last.bits_per_worker
            );
        }
    }
    for p in result.csv_paths.iter().chain(&result.svg_path) {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn cmd_calc(args: CalcArgs) -> Result<()> {
    let csv = matches!(args.format, Format::Csv);
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let prepared = prepare(&parse_config(&text)?)?;
        let columns: Vec<(String, Vec<(&'static str, f64)>)> = calc_rows(&prepared)?
            .into_iter()
            .map(|row| {
                let mut rows = row.params.table_rows();
                rows.push(("gamma", row.gamma));
                rows.push(("T0", row.t0));
                rows.push(("bound", row.bound.unwrap_or(f64::NAN)));
                (row.label, rows)
            })
            .collect();
        print!("{}", render_table(&columns, csv));
        return Ok(());
    }
    let (Some(method), Some(smoothness)) = (args.method, args.smoothness) else {
        bail!("calc needs either --config or --method with --smoothness");
    };
    let params = match method {
        MethodArg::EcSgd => {
            theory::params_ecsgd_as(smoothness, args.expected_smoothness, args.workers, args.sigma_star_sq)?
        }
        MethodArg::EcLsvrg => theory::params_eclsvrg(smoothness, args.expected_smoothness, args.workers, args.p)?,
    }
    .with_delta(args.delta)?
    .with_mu(args.mu)?;
    let mut rows = params.table_rows();
    rows.push(("c1", params.linear_noise()));
    rows.push(("c2", params.quadratic_noise()));
    if let Some(k) = args.iterations {
        let (c1, c2) = (params.linear_noise(), params.quadratic_noise());
        let gamma = if args.mu > 0.0 {
            theory::stepsize_strongly_convex(&params, args.mu, k, 1.0, c1, c2)?
        } else {
            let dist = args.dist_sq.unwrap_or(1.0);
            theory::stepsize_convex(&params, k, dist, 0.0, c1, c2)?
        };
        rows.push(("gamma", gamma));
        if let Some(dist) = args.dist_sq {
            let t0 = theory::t0(dist, &params, gamma, 0.0);
            rows.push(("T0", t0));
            rows.push(("bound", theory::bound_rhs(&params, gamma, k, t0, args.mu)?));
        }
    }
    let label = match method {
        MethodArg::EcSgd => "ec-sgd",
        MethodArg::EcLsvrg => "ec-lsvrg",
    };
    print!("{}", render_table(&[(label.to_string(), rows)], csv));
    Ok(())
}

fn cmd_solve_ref(dataset: &str, workers: usize, l2: f64, tol: f64, shuffle_seed: u64) -> Result<()> {
    let source = DatasetSource::parse(dataset)?;
    let loaded = load(&source, workers, shuffle_seed, &LoadOptions::default())?;
    let obj = Objective::new(loaded.shards, loaded.d, l2, Loss::Logistic)?;
    let sol = obj.solve_reference(tol)?;
    let c = obj.smoothness_constants();
    println!("dataset      {}", loaded.manifest.name);
    println!("hash         {}", loaded.content_hash);
    println!("d            {}", obj.d());
    println!("workers      {} x {} samples", obj.n(), obj.m());
    println!("L            {:e}", c.l);
    println!("max L_ij     {:e}", c.max_l_ij());
    println!("max Lbar_i   {:e}", c.max_l_bar());
    println!("f*           {:e}", sol.f_star);
    println!("grad norm    {:e}", sol.grad_norm);
    println!("iterations   {}", sol.iterations);
    println!("|x*|         {:e}", sol.x_star.norm());
    Ok(())
}

fn cmd_parse_check(file: PathBuf, dimension: Option<usize>) -> Result<()> {
    let f = File::open(&file).with_context(|| format!("opening {}", file.display()))?;
    let data = parse_libsvm(
        BufReader::new(f),
        &ParseOptions {
            dim: dimension,
            ..ParseOptions::default()
        },
    )
    .with_context(|| format!("in {}", file.display()))?;
    let positive = data.labels.iter().filter(|&&y| y > 0.0).count();
    let nnz: usize = data.rows.iter().map(|r| r.nnz()).sum();
    println!("samples   {}", data.len());
    println!("d         {}", data.d);
    println!("positive  {}", positive);
    println!("negative  {}", data.len() - positive);
    println!("nnz       {}", nnz);
    Ok(())
}
