mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use copytrace::{Error, ErrorClass};

#[derive(Debug, Parser)]
#[command(name = "copytrace", version, about = "Coordinate-traced copy supervision, losses and retrieval evaluation")]
struct Cli {
    /// Worker threads; outputs do not depend on this.
    #[arg(long, global = true, env = "COPYTRACE_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Encode images into toy patch tokens or global descriptors (.tok).
    Encode(EncodeArgs),
    /// Apply two edit pipelines to one image and write the bridged tables.
    GenPairs(GenPairsArgs),
    /// Build patch target distributions from a generated pair.
    Supervise(SuperviseArgs),
    /// Evaluate a training objective on token files.
    Loss(LossArgs),
    /// Finite-difference check of every loss gradient on random fixtures.
    GradCheck(GradCheckArgs),
    /// Retrieval metrics with optional score normalization or feature stretching.
    Eval(EvalArgs),
    /// Render a token-affinity or affinity-entropy heatmap.
    Heatmap(HeatmapArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct EncodeArgs {
    /// A PNG (patch tokens) or a directory of PNGs (one global descriptor each).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub patch_size: usize,
    #[arg(long, default_value_t = 1.0)]
    pub coord_weight: f64,
    /// Emit the global descriptor for a single-image input.
    #[arg(long)]
    pub global: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct GenPairsArgs {
    /// Original image, or a directory whose first PNG (by name) is used.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub pipeline_a: PathBuf,
    #[arg(long)]
    pub pipeline_b: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SuperviseArgs {
    /// Output directory of `gen-pairs`.
    #[arg(long)]
    pub pair: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub patch_size: usize,
    /// Sharpening exponent; `inf` selects the arg-max.
    #[arg(long, default_value = "1", value_parser = parse_gamma)]
    pub gamma: f64,
    /// Targets for view b over view a instead of a over b.
    #[arg(long)]
    pub reverse: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    Matcher,
    Descriptor,
}

#[derive(Debug, Args, Serialize)]
pub struct LossArgs {
    #[arg(long)]
    pub tokens_q: PathBuf,
    #[arg(long)]
    pub tokens_r: PathBuf,
    #[arg(long)]
    pub targets: PathBuf,
    /// Reverse-direction targets; enables the symmetric CopyNCE.
    #[arg(long)]
    pub targets_rq: Option<PathBuf>,
    #[arg(long, default_value_t = copytrace::loss_kernel::DEFAULT_TAU)]
    pub tau: f64,
    /// CopyNCE weight; defaults to 3 (matcher) or 5 (descriptor).
    #[arg(long)]
    pub w_nce: Option<f64>,
    #[arg(long, value_enum)]
    pub mode: LossMode,
    /// Matcher pair label.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub label: bool,
    /// Extra negative global descriptors for the descriptor objective.
    #[arg(long)]
    pub negatives: Option<PathBuf>,
    /// JSON report path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct GradCheckArgs {
    /// `all` or one of infonce, copynce, copynce-symmetric, bce, koleo.
    #[arg(long, default_value = "all")]
    pub loss: String,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 20)]
    pub fixtures: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, hide = true)]
    pub inject_bug: bool,
}

#[derive(Debug, Args, Serialize)]
#[command(group(ArgGroup::new("post").args(["score_normalize", "stretch"]).multiple(false)))]
pub struct EvalArgs {
    /// CSV `query_id,ref_id,score`.
    #[arg(long)]
    pub scores: PathBuf,
    /// CSV `query_id,ref_id`.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub score_normalize: bool,
    #[arg(long)]
    pub stretch: bool,
    /// Query descriptors (.tok with ids).
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Reference descriptors (.tok with ids), used by stretching.
    #[arg(long)]
    pub refs: Option<PathBuf>,
    /// Auxiliary descriptors (.tok).
    #[arg(long)]
    pub aux: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub k_start: Option<usize>,
    #[arg(long)]
    pub k_end: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    /// JSON post-processing config; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[command(group(ArgGroup::new("view").args(["probe", "entropy"]).required(true)))]
pub struct HeatmapArgs {
    #[arg(long)]
    pub tokens_q: PathBuf,
    #[arg(long)]
    pub tokens_r: PathBuf,
    /// Query patch `row,col` whose affinity row is drawn over the reference grid.
    #[arg(long)]
    pub probe: Option<String>,
    /// Draw per-query-token affinity entropy over the query grid.
    #[arg(long)]
    pub entropy: bool,
    #[arg(long, default_value_t = copytrace::loss_kernel::DEFAULT_TAU)]
    pub tau: f64,
    /// Query grid `ROWSxCOLS`; defaults to a square grid.
    #[arg(long)]
    pub grid_q: Option<String>,
    /// Reference grid `ROWSxCOLS`; defaults to a square grid.
    #[arg(long)]
    pub grid_r: Option<String>,
    /// Pixels per grid cell in the output.
    #[arg(long, default_value_t = 16)]
    pub patch_size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_gamma(s: &str) -> Result<f64, String> {
    let g = match s.to_ascii_lowercase().as_str() {
        "inf" | "infinity" => f64::INFINITY,
        other => other.parse::<f64>().map_err(|e| e.to_string())?,
    };
    if g.is_nan() || g < 0.0 {
        return Err(format!("gamma must be >= 0, got {s}"));
    }
    Ok(g)
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Parameter => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numeric => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let res = match &cli.command {
        Command::Encode(a) => commands::encode(a),
        Command::GenPairs(a) => commands::gen_pairs(a),
        Command::Supervise(a) => commands::supervise(a),
        Command::Loss(a) => commands::loss(a),
        Command::GradCheck(a) => commands::grad_check(a),
        Command::Eval(a) => commands::eval(a),
        Command::Heatmap(a) => commands::heatmap(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
