//! Command-line front end: single runs and multi-seed campaigns.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::cmsa::{preset_bounds, run, run_subsolver_only, CmsaParams, RunResult, RunStatus};
use crate::error::{Error, Result};
use crate::model::{BipInstance, Solution};
use crate::mps::read_mps_file;
use crate::subsolver::ExternalSolver;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, ValueEnum)]
pub enum Algorithm {
    Cmsa,
    CmsaCp,
    SubsolverOnly,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Cmsa => "cmsa",
            Algorithm::CmsaCp => "cmsa-cp",
            Algorithm::SubsolverOnly => "subsolver-only",
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "cmsa-bip",
    version,
    about = "CMSA matheuristic for binary integer programs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one instance with one seed.
    Run(RunArgs),
    /// Run every (instance, preset, seed) combination and print best/avg per configuration.
    Campaign(CampaignArgs),
}

/// Solver settings shared by both subcommands.
#[derive(Debug, Clone, Args)]
pub struct SolverSettings {
    #[arg(long, value_enum, default_value = "cmsa")]
    pub algo: Algorithm,
    /// Wall-clock budget per run, seconds.
    #[arg(long, default_value_t = 1000.0)]
    pub budget: f64,
    #[arg(long = "na", default_value_t = 5)]
    pub n_a: usize,
    #[arg(long, default_value_t = 1)]
    pub age_max: u32,
    #[arg(long = "tlp", default_value_t = 10.0)]
    pub t_lp: f64,
    #[arg(long = "tsub-lb", default_value_t = 30.0)]
    pub t_sub_lb: f64,
    #[arg(long = "tsub-ub", default_value_t = 100.0)]
    pub t_sub_ub: f64,
    /// Overrides the preset's lower d_rate bound.
    #[arg(long = "drate-lb")]
    pub d_rate_lb: Option<f64>,
    /// Overrides the preset's upper d_rate bound.
    #[arg(long = "drate-ub")]
    pub d_rate_ub: Option<f64>,
    /// Merge infeasible constructions into the pool.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub merge_infeasible: bool,
    /// Stop after this many iterations.
    #[arg(long)]
    pub max_iterations: Option<u64>,
    /// Shell command with {input}, {output} and {time} placeholders.
    #[arg(long = "external-solver-cmd")]
    pub external_solver_cmd: Option<String>,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let p = CmsaParams::default();
        SolverSettings {
            algo: Algorithm::Cmsa,
            budget: p.total_budget,
            n_a: p.n_a,
            age_max: p.age_max,
            t_lp: p.t_lp,
            t_sub_lb: p.t_sub_lb,
            t_sub_ub: p.t_sub_ub,
            d_rate_lb: None,
            d_rate_ub: None,
            merge_infeasible: true,
            max_iterations: None,
            external_solver_cmd: None,
        }
    }
}

impl SolverSettings {
    pub fn params(&self, preset: u8, seed: u64) -> Result<CmsaParams> {
        let (lb, ub) = preset_bounds(preset)
            .ok_or_else(|| Error::usage(format!("unknown preset {preset}, expected 1 to 4")))?;
        let params = CmsaParams {
            n_a: self.n_a,
            age_max: self.age_max,
            t_lp: self.t_lp,
            d_rate_lb: self.d_rate_lb.unwrap_or(lb),
            d_rate_ub: self.d_rate_ub.unwrap_or(ub),
            t_sub_lb: self.t_sub_lb,
            t_sub_ub: self.t_sub_ub,
            total_budget: self.budget,
            seed,
            cp_enabled: self.algo == Algorithm::CmsaCp,
            merge_infeasible: self.merge_infeasible,
            max_iterations: self.max_iterations,
            external_solver: self.external_solver_cmd.clone().map(ExternalSolver::new),
        };
        params.validate()?;
        Ok(params)
    }

    pub fn solve(&self, instance: &BipInstance, preset: u8, seed: u64) -> Result<RunResult> {
        let params = self.params(preset, seed)?;
        match self.algo {
            Algorithm::SubsolverOnly => run_subsolver_only(instance, &params),
            _ => run(instance, &params),
        }
    }
}

fn parse_preset(s: &str) -> std::result::Result<u8, String> {
    match s.parse::<u8>() {
        Ok(p @ 1..=4) => Ok(p),
        _ => Err(format!("preset must be 1, 2, 3 or 4, got {s}")),
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long, default_value = "1", value_parser = parse_preset)]
    pub preset: u8,
    #[arg(long, alias = "seeds", default_value_t = 1)]
    pub seed: u64,
    #[arg(long = "trace-out")]
    pub trace_out: Option<PathBuf>,
    #[arg(long = "sol-out")]
    pub sol_out: Option<PathBuf>,
    #[command(flatten)]
    pub settings: SolverSettings,
}

#[derive(Debug, Clone, Args)]
pub struct CampaignArgs {
    /// Instance files; repeat the flag for several.
    #[arg(long, required = true)]
    pub instance: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4", value_parser = parse_preset)]
    pub presets: Vec<u8>,
    /// Comma-separated seeds; `a-b` expands to an inclusive range.
    #[arg(long, default_value = "1-10", value_parser = parse_seeds)]
    pub seeds: SeedList,
    /// Worker threads; every run stays single-threaded.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Directory for one trace CSV per run.
    #[arg(long = "trace-dir")]
    pub trace_dir: Option<PathBuf>,
    #[command(flatten)]
    pub settings: SolverSettings,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedList(pub Vec<u64>);

pub fn parse_seeds(s: &str) -> std::result::Result<SeedList, String> {
    let mut seeds = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let a: u64 = a.parse().map_err(|_| format!("bad seed range {part}"))?;
                let b: u64 = b.parse().map_err(|_| format!("bad seed range {part}"))?;
                if a > b {
                    return Err(format!("empty seed range {part}"));
                }
                seeds.extend(a..=b);
            }
            None => seeds.push(part.parse().map_err(|_| format!("bad seed {part}"))?),
        }
    }
    if seeds.is_empty() {
        return Err("at least one seed is required".into());
    }
    Ok(SeedList(seeds))
}

/// Solution file: objective comment, then one `<name> <0|1>` line per variable.
pub fn solution_file(instance: &BipInstance, solution: &Solution) -> String {
    let mut out = format!(
        "# objective {}\n",
        instance.report_objective(solution.objective)
    );
    for (name, v) in instance.var_names().iter().zip(&solution.values) {
        let _ = writeln!(out, "{name} {v}");
    }
    out
}

/// One `key=value` line describing a finished run.
pub fn summary_line(
    instance: &BipInstance,
    algo: Algorithm,
    preset: u8,
    seed: u64,
    result: &RunResult,
) -> String {
    let (objective, feasible) = match &result.best {
        Some(s) => (
            instance.report_objective(s.objective).to_string(),
            s.feasible,
        ),
        None => ("NA".to_string(), false),
    };
    format!(
        "instance={} algo={} preset={} seed={} objective={} feasible={} iterations={} status={}",
        instance.name(),
        algo.as_str(),
        preset,
        seed,
        objective,
        feasible,
        result.stats.iterations,
        result.status
    )
}

fn load(path: &Path) -> std::result::Result<BipInstance, String> {
    read_mps_file(path).map_err(|e| format!("{}: {e}", path.display()))
}

/// Executes a single run and writes its artifacts; returns the exit code.
pub fn run_single(args: &RunArgs) -> i32 {
    let instance = match load(&args.instance) {
        Ok(i) => i,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_PARSE;
        }
    };
    let result = match args.settings.solve(&instance, args.preset, args.seed) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return if matches!(e, Error::Usage(_)) {
                EXIT_PARSE
            } else {
                EXIT_FAILURE
            };
        }
    };
    let write = |path: &Option<PathBuf>, text: String| -> Result<()> {
        if let Some(p) = path {
            std::fs::write(p, text)?;
        }
        Ok(())
    };
    let written =
        write(&args.trace_out, result.trace.to_csv(&instance)).and_then(|()| match &result.best {
            Some(s) => write(&args.sol_out, solution_file(&instance, s)),
            None => Ok(()),
        });
    if let Err(e) = written {
        eprintln!("error: {e}");
        return EXIT_FAILURE;
    }
    println!(
        "{}",
        summary_line(
            &instance,
            args.settings.algo,
            args.preset,
            args.seed,
            &result
        )
    );
    if result.status == RunStatus::InfeasibleProven {
        EXIT_INFEASIBLE
    } else {
        EXIT_OK
    }
}

/// Best and mean over the successful seeds of one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct CampaignRow {
    pub instance: String,
    pub algo: Algorithm,
    /// 0 for `subsolver-only`, which has no presets.
    pub preset: u8,
    pub runs: usize,
    pub failed: Vec<u64>,
    /// Reported in the instance's original sense.
    pub best: Option<f64>,
    pub avg: Option<f64>,
    pub winner: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignReport {
    pub rows: Vec<CampaignRow>,
    /// Untimed traces keyed by (instance, preset, seed), in key order.
    pub traces: Vec<((String, u8, u64), String)>,
}

impl CampaignReport {
    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
        let mut out = String::from("instance,algo,preset,runs,failed,best,avg,winner\n");
        for r in &self.rows {
            let preset = if r.preset == 0 {
                "-".to_string()
            } else {
                r.preset.to_string()
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.instance,
                r.algo.as_str(),
                preset,
                r.runs,
                r.failed.len(),
                fmt(r.best),
                fmt(r.avg),
                if r.winner { "*" } else { "" }
            );
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct CampaignConfig {
    pub instances: Vec<(String, BipInstance)>,
    pub presets: Vec<u8>,
    pub seeds: Vec<u64>,
    pub jobs: usize,
    pub settings: SolverSettings,
    pub trace_dir: Option<PathBuf>,
}

fn file_stem(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Runs every (instance, preset, seed) job and aggregates deterministically.
pub fn run_campaign(cfg: &CampaignConfig) -> Result<CampaignReport> {
    if cfg.seeds.is_empty() {
        return Err(Error::usage("a campaign needs at least one seed"));
    }
    let presets: Vec<u8> = if cfg.settings.algo == Algorithm::SubsolverOnly {
        vec![0]
    } else {
        let mut p = cfg.presets.clone();
        p.sort_unstable();
        p.dedup();
        p
    };
    let mut jobs = Vec::new();
    for (k, _) in cfg.instances.iter().enumerate() {
        for &preset in &presets {
            for &seed in &cfg.seeds {
                jobs.push((k, preset, seed));
            }
        }
    }

    let work = |&(k, preset, seed): &(usize, u8, u64)| {
        let (label, instance) = &cfg.instances[k];
        let result = cfg.settings.solve(instance, preset.max(1), seed);
        if let (Some(dir), Ok(r)) = (&cfg.trace_dir, &result) {
            let path = dir.join(format!(
                "{}_{}_p{}_s{}.csv",
                file_stem(label),
                cfg.settings.algo.as_str(),
                preset,
                seed
            ));
            if let Err(e) = std::fs::write(&path, r.trace.to_csv(instance)) {
                eprintln!("warning: cannot write {}: {e}", path.display());
            }
        }
        result
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.max(1))
        .build()
        .map_err(|e| Error::usage(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<RunResult>> = pool.install(|| jobs.par_iter().map(work).collect());

    let mut rows = Vec::new();
    let mut traces = Vec::new();
    for (k, (label, instance)) in cfg.instances.iter().enumerate() {
        let first_row = rows.len();
        for &preset in &presets {
            let mut objectives = Vec::new();
            let mut failed = Vec::new();
            for (job, result) in jobs.iter().zip(&results) {
                if job.0 != k || job.1 != preset {
                    continue;
                }
                let seed = job.2;
                match result {
                    Ok(r) => {
                        let mut untimed = String::new();
                        for (bits, it, ev) in r.trace.untimed() {
                            let _ = writeln!(untimed, "{},{it},{ev}", f64::from_bits(bits));
                        }
                        traces.push(((label.clone(), preset, seed), untimed));
                        match &r.best {
                            Some(s) => objectives.push(s.objective),
                            None => failed.push(seed),
                        }
                    }
                    Err(e) => {
                        eprintln!("warning: {label} preset {preset} seed {seed}: {e}");
                        failed.push(seed);
                    }
                }
            }
            if !failed.is_empty() {
                eprintln!(
                    "warning: {label} preset {preset}: no solution for seeds {failed:?}, excluded"
                );
            }
            let best = objectives.iter().copied().min_by(f64::total_cmp);
            let avg = (!objectives.is_empty())
                .then(|| objectives.iter().sum::<f64>() / objectives.len() as f64);
            rows.push(CampaignRow {
                instance: label.clone(),
                algo: cfg.settings.algo,
                preset,
                runs: cfg.seeds.len(),
                failed,
                best,
                avg,
                winner: false,
            });
        }
        // winner by normalized best, ties to the lowest preset
        let winner = (first_row..rows.len())
            .filter(|&r| rows[r].best.is_some())
            .min_by(|&a, &b| rows[a].best.unwrap().total_cmp(&rows[b].best.unwrap()));
        if let Some(w) = winner {
            rows[w].winner = true;
        }
        for row in &mut rows[first_row..] {
            row.best = row.best.map(|v| instance.report_objective(v));
            row.avg = row.avg.map(|v| instance.report_objective(v));
        }
    }
    Ok(CampaignReport { rows, traces })
}

fn campaign(args: &CampaignArgs) -> i32 {
    let mut instances = Vec::new();
    for path in &args.instance {
        match load(path) {
            Ok(i) => instances.push((path.display().to_string(), i)),
            Err(msg) => {
                eprintln!("error: {msg}");
                return EXIT_PARSE;
            }
        }
    }
    if let Some(dir) = &args.trace_dir {
        if let Err(e) = std::fs::create_dir_all(dir) {
            eprintln!("error: {}: {e}", dir.display());
            return EXIT_FAILURE;
        }
    }
    let cfg = CampaignConfig {
        instances,
        presets: args.presets.clone(),
        seeds: args.seeds.0.clone(),
        jobs: args.jobs,
        settings: args.settings.clone(),
        trace_dir: args.trace_dir.clone(),
    };
    match run_campaign(&cfg) {
        Ok(report) => {
            print!("{}", report.to_table());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_PARSE
        }
    }
}

/// Parses `args` (program name first) and runs; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_PARSE } else { EXIT_OK };
        }
    };
    match &cli.command {
        Command::Run(a) => run_single(a),
        Command::Campaign(a) => campaign(a),
    }
}
