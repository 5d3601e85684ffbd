mod config;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{error, info, warn};
use mhd_hdg::global_system::SolveOptions;
use mhd_hdg::spaces::{build_dof_layout, count_global_dofs, reduction_percent};
use mhd_hdg::verify::{final_rates, solve_level, LevelResult, RunOptions, FIELD_NAMES};
use mhd_hdg::{Mesh, Variant};

use config::{parse_list, ConfigError, Overrides, RunConfig};
use report::variant_name;

const EXIT_SOLVER: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "mhd-hdg", version, about = "HDG / E-HDG solver for stationary MHD on triangle meshes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one case on a sequence of meshes and write CSV and JSON reports.
    Run(RunArgs),
    /// Like `run`, sweeping a list of degrees and writing a rates table.
    Study(RunArgs),
    /// Global DOF counts of both variants on the unit-square sequence.
    DofTable(DofArgs),
    /// Run HDG and E-HDG on the same meshes and report them side by side.
    CompareVariants(RunArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Flat `key = value` file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// smooth2d, singular2d, hartmann or nonlinear-smooth2d.
    #[arg(long)]
    case: Option<String>,
    /// hdg or ehdg.
    #[arg(long)]
    variant: Option<String>,
    /// Polynomial degree; `study` accepts a list (`1,2,3`) or range (`1..4`).
    #[arg(long)]
    k: Option<String>,
    /// Mesh levels, e.g. `0..4` or `1,2,3`.
    #[arg(long)]
    levels: Option<String>,
    #[arg(long)]
    alpha1: Option<f64>,
    /// Sets both beta1 and beta2.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    re: Option<f64>,
    #[arg(long)]
    rm: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    /// Pressure amplitude of the smooth cases.
    #[arg(long)]
    p0: Option<f64>,
    /// Picard tolerance.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// strong-zero or normal-constraint.
    #[arg(long)]
    rhat_bc: Option<String>,
    /// Square-splitting diagonal: sw-ne or nw-se.
    #[arg(long)]
    diagonal: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the condensed matrix of each level in coordinate format.
    #[arg(long)]
    dump_matrix: bool,
    /// Worker threads for assembly.
    #[arg(long)]
    threads: Option<usize>,
    /// Write zeros in the timing columns so reruns are byte-identical.
    #[arg(long)]
    no_timings: bool,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            case: self.case.clone(),
            variant: self.variant.clone(),
            k: self.k.clone(),
            levels: self.levels.clone(),
            re: self.re,
            rm: self.rm,
            kappa: self.kappa,
            alpha1: self.alpha1,
            beta: self.beta,
            beta1: None,
            beta2: None,
            p0: self.p0,
            epsilon: self.epsilon,
            max_iter: self.max_iter,
            rhat_bc: self.rhat_bc.clone(),
            diagonal: self.diagonal.clone(),
            out: self.out.clone(),
            dump_matrix: self.dump_matrix.then_some(true),
            threads: self.threads,
            timings: self.no_timings.then_some(false),
        }
    }

    fn resolve(&self) -> Result<RunConfig, ConfigError> {
        let mut o = match &self.config {
            Some(path) => Overrides::from_file(path)?,
            None => Overrides::default(),
        };
        o.merge(&self.overrides());
        RunConfig::resolve(&o)
    }
}

#[derive(Args, Debug)]
struct DofArgs {
    /// Degrees, e.g. `1..4`.
    #[arg(long, default_value = "1..4")]
    k: String,
    /// Unit-square levels; level l has 2·4^l cells.
    #[arg(long, default_value = "0..4")]
    levels: String,
    /// Output directory; the table goes to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// How a command ended after its configuration was accepted.
enum Outcome {
    Done,
    SolverFailed,
    NotConverged,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::DofTable(a) => dof_table(a),
        Command::Run(a) | Command::Study(a) | Command::CompareVariants(a) => {
            let cfg = match a.resolve().and_then(|c| check_command(&cli.command, c)) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            if let Some(n) = cfg.threads {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    warn!("thread pool already initialised: {e}");
                }
            }
            match &cli.command {
                Command::Run(_) => run(&cfg),
                Command::Study(_) => study(&cfg),
                _ => compare_variants(&cfg),
            }
        }
    };
    match result {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::SolverFailed) => ExitCode::from(EXIT_SOLVER),
        Ok(Outcome::NotConverged) => ExitCode::from(EXIT_NOT_CONVERGED),
        Err(e) if e.is::<ConfigError>() => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_SOLVER)
        }
    }
}

fn check_command(cmd: &Command, cfg: RunConfig) -> Result<RunConfig, ConfigError> {
    if !matches!(cmd, Command::Study(_)) {
        cfg.single_k()?;
    }
    cfg.manufactured_case()?;
    Ok(cfg)
}

fn stem(cfg: &RunConfig, variant: Variant, k: usize) -> String {
    format!("{}-{}-k{k}", cfg.case.as_str(), variant_name(variant))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    info!("wrote {}", path.display());
    Ok(())
}

/// Solves every level; stops at the first solver error.
fn solve_sequence(cfg: &RunConfig, variant: Variant, k: usize) -> Result<(Vec<LevelResult>, Option<String>)> {
    let case = cfg.manufactured_case()?;
    let mut out = Vec::new();
    for &level in &cfg.levels {
        let dump = cfg.dump_matrix.then(|| cfg.out.join(format!("{}-l{level}.mtx", stem(cfg, variant, k))));
        let opts = RunOptions {
            variant,
            k,
            solve: SolveOptions { rhat_bc: cfg.rhat_bc, dump_matrix: dump },
            epsilon: cfg.epsilon,
            max_iter: cfg.max_iter,
        };
        match solve_level::<f64>(&case, level, &opts) {
            Ok((r, _)) => {
                info!(
                    "{} {} k={k} level {level}: {} cells, {} dofs, err_u {:.3e}, div {:.1e}/{:.1e}",
                    cfg.case.as_str(),
                    variant_name(variant),
                    r.cells,
                    r.dofs,
                    r.report.err_u,
                    r.report.div_u,
                    r.report.div_b
                );
                if let Some(h) = &r.picard {
                    if !h.converged {
                        warn!("level {level}: Picard did not converge in {} iterations", h.iterations);
                    }
                }
                out.push(r);
            }
            Err(e) => {
                error!("level {level}: {e}");
                return Ok((out, Some(format!("level {level}: {e}"))));
            }
        }
    }
    Ok((out, None))
}

fn outcome(levels: &[LevelResult], failure: &Option<String>) -> Outcome {
    if failure.is_some() {
        Outcome::SolverFailed
    } else if levels.iter().all(|l| l.converged()) {
        Outcome::Done
    } else {
        Outcome::NotConverged
    }
}

fn worst(a: Outcome, b: Outcome) -> Outcome {
    match (a, b) {
        (Outcome::SolverFailed, _) | (_, Outcome::SolverFailed) => Outcome::SolverFailed,
        (Outcome::NotConverged, _) | (_, Outcome::NotConverged) => Outcome::NotConverged,
        _ => Outcome::Done,
    }
}

/// Solves one variant and degree and writes its CSV and JSON.
fn run_one(cfg: &RunConfig, variant: Variant, k: usize) -> Result<(Vec<LevelResult>, Outcome)> {
    let (levels, failure) = solve_sequence(cfg, variant, k)?;
    let name = stem(cfg, variant, k);
    write(&cfg.out.join(format!("{name}.csv")), &report::level_csv(&levels, cfg.timings))?;
    let summary = report::RunSummary::new(cfg, variant, k, &levels, failure.clone());
    write(&cfg.out.join(format!("{name}.json")), &serde_json::to_string_pretty(&summary)?)?;
    if levels.len() >= 2 {
        let rates = final_rates(&levels);
        let txt: Vec<String> = FIELD_NAMES
            .iter()
            .zip(rates)
            .map(|(f, r)| format!("{f} {}", r.map_or("-".into(), |r| format!("{r:.2}"))))
            .collect();
        info!("{name} final rates: {}", txt.join(", "));
    }
    let o = outcome(&levels, &failure);
    Ok((levels, o))
}

fn create_out(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))
}

fn run(cfg: &RunConfig) -> Result<Outcome> {
    create_out(cfg)?;
    Ok(run_one(cfg, cfg.variant, cfg.single_k()?)?.1)
}

fn study(cfg: &RunConfig) -> Result<Outcome> {
    create_out(cfg)?;
    let mut all = Vec::new();
    let mut status = Outcome::Done;
    for &k in &cfg.ks {
        let (levels, o) = run_one(cfg, cfg.variant, k)?;
        all.push((k, levels));
        status = worst(status, o);
    }
    let rows: Vec<(usize, &[LevelResult])> = all.iter().map(|(k, l)| (*k, l.as_slice())).collect();
    let name = format!("{}-{}-rates.csv", cfg.case.as_str(), variant_name(cfg.variant));
    write(&cfg.out.join(name), &report::rates_csv(&rows))?;
    Ok(status)
}

fn compare_variants(cfg: &RunConfig) -> Result<Outcome> {
    create_out(cfg)?;
    let k = cfg.single_k()?;
    let (hdg, a) = run_one(cfg, Variant::Hdg, k)?;
    let (ehdg, b) = run_one(cfg, Variant::Ehdg, k)?;
    let (csv, summary) = report::compare(cfg, k, &hdg, &ehdg);
    let name = format!("{}-k{k}-compare", cfg.case.as_str());
    write(&cfg.out.join(format!("{name}.csv")), &csv)?;
    write(&cfg.out.join(format!("{name}.json")), &serde_json::to_string_pretty(&summary)?)?;
    Ok(worst(a, b))
}

fn dof_table(a: &DofArgs) -> Result<Outcome> {
    let ks = parse_list(&a.k)?;
    let levels = parse_list(&a.levels)?;
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > mhd_hdg::basis::MAX_DEGREE) {
        return Err(ConfigError(format!("degree k = {k} outside 1..={}", mhd_hdg::basis::MAX_DEGREE)).into());
    }
    if levels.iter().any(|&l| l > 8) {
        return Err(ConfigError("mesh levels above 8 are not supported".into()).into());
    }
    let mut csv = String::from("elements,k,dofs_hdg,dofs_ehdg,reduction_pct\n");
    for &level in &levels {
        let mesh: Mesh = mhd_hdg::mesh::gen_unit_square(1 << level)?;
        for &k in &ks {
            let hdg = count_global_dofs(&build_dof_layout(&mesh, k, Variant::Hdg)?).total;
            let ehdg = count_global_dofs(&build_dof_layout(&mesh, k, Variant::Ehdg)?).total;
            csv.push_str(&format!("{},{k},{hdg},{ehdg},{:.2}\n", mesh.n_cells(), reduction_percent(hdg, ehdg)));
        }
    }
    match &a.out {
        Some(dir) => {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            write(&dir.join("dof_table.csv"), &csv)?;
        }
        None => print!("{csv}"),
    }
    Ok(Outcome::Done)
}
