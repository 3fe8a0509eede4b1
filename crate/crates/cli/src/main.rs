use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use viewfuse::io::DepthFormat;
use viewfuse::pipeline::Ablation;

mod commands;
mod config;

use config::Overrides;

#[derive(Parser, Debug)]
#[command(name = "viewfuse", version, about = "View-consistent clutter removal for posed RGB-D sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic cluttered bundle with clean ground truth.
    Synth(SynthArgs),
    /// Project the bundle mesh's clutter into per-frame removal masks.
    Project(ProjectArgs),
    /// Run one unconstrained inpainting pass over the masked frames.
    Inpaint(InpaintArgs),
    /// Run the four consistency stages on an inpainting result.
    Consistency(ConsistencyArgs),
    /// Project, refine and fuse a bundle end to end.
    Pipeline(PipelineArgs),
    /// Fuse completed views into a point cloud and a TSDF mesh.
    Fuse(FuseArgs),
    /// Compare results against ground truth.
    Eval(EvalArgs),
    /// Area-sensitive cross entropy of per-vertex predictions.
    Loss(LossArgs),
    /// Ablation ladder over seeded synthetic bundles.
    Bench(BenchArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Config file of TOML key = value lines.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, value_name = "N")]
    pub threads: Option<usize>,
    /// Override a config key, e.g. --set refine.max_iterations=3.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Where to write the JSON report.
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Tuning {
    /// Voting agreement distance in meters.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Voting keep threshold in percent.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Disable a consistency check; may be repeated.
    #[arg(long, value_name = "CHECK", value_parser = ["no-single-prune", "no-cross-prune", "no-voting"])]
    pub ablate: Vec<String>,
    /// Drop pixels that no other view supports.
    #[arg(long)]
    pub strict_voting: bool,
    #[arg(long, value_name = "NAME")]
    pub backend_color: Option<String>,
    #[arg(long, value_name = "NAME")]
    pub backend_depth: Option<String>,
    #[arg(long, value_name = "N")]
    pub max_iterations: Option<usize>,
    /// Seed for the backends and point subsampling.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Tuning {
    pub fn overrides(&self, common: &Common) -> Result<Overrides, String> {
        let mut o = Overrides::default();
        for item in &common.set {
            o.set_raw(item)?;
        }
        if let Some(a) = self.alpha {
            o.set("consistency.alpha", a);
        }
        if let Some(b) = self.beta {
            o.set("consistency.beta_percent", b);
        }
        if self.strict_voting {
            o.set("consistency.strict_voting", true);
        }
        if let Some(n) = &self.backend_color {
            o.set("backend_color", n.as_str());
        }
        if let Some(n) = &self.backend_depth {
            o.set("backend_depth", n.as_str());
        }
        if let Some(n) = self.max_iterations {
            o.set("refine.max_iterations", n);
        }
        if let Some(s) = self.seed {
            o.set("refine.seed", s);
            o.set("backends.seed", s);
        }
        for a in &self.ablate {
            o.ablations.push(Ablation::parse(a).map_err(|e| e.to_string())?);
        }
        Ok(o)
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum DepthFormatArg {
    /// 16-bit PNG in millimeters.
    Png,
    /// 32-bit float container in meters.
    Vfd,
}

impl From<DepthFormatArg> for DepthFormat {
    fn from(d: DepthFormatArg) -> Self {
        match d {
            DepthFormatArg::Png => DepthFormat::PngMillimeters,
            DepthFormatArg::Vfd => DepthFormat::Float,
        }
    }
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Scene spec as JSON; defaults are used for missing fields.
    #[arg(long, value_name = "FILE")]
    pub spec: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value = "png")]
    pub depth_format: DepthFormatArg,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct ProjectArgs {
    #[arg(long, value_name = "DIR")]
    pub bundle: PathBuf,
    /// Output bundle with the projected masks.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Keep every N-th frame.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct InpaintArgs {
    #[arg(long, value_name = "DIR")]
    pub bundle: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, default_value_t = viewfuse::io::DEFAULT_STRIDE)]
    pub stride: usize,
    #[command(flatten)]
    pub tuning: Tuning,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct ConsistencyArgs {
    #[arg(long, value_name = "DIR")]
    pub bundle: PathBuf,
    /// Output of `viewfuse inpaint` for the same bundle and stride.
    #[arg(long, value_name = "DIR")]
    pub pred: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, default_value_t = viewfuse::io::DEFAULT_STRIDE)]
    pub stride: usize,
    #[command(flatten)]
    pub tuning: Tuning,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct PipelineArgs {
    #[arg(long, value_name = "DIR")]
    pub bundle: PathBuf,
    /// Output directory; defaults to <bundle>/pipeline.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = viewfuse::io::DEFAULT_STRIDE)]
    pub stride: usize,
    #[command(flatten)]
    pub tuning: Tuning,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct FuseArgs {
    /// Bundle-layout directory of completed views, e.g. <pipeline out>/completed.
    #[arg(long, value_name = "DIR")]
    pub views: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Directory with color/ (and optionally depth/, mask/) to score.
    #[arg(long, value_name = "DIR")]
    pub pred: PathBuf,
    /// Ground-truth directory with the same layout, e.g. <bundle>/clean.
    #[arg(long, value_name = "DIR")]
    pub truth: PathBuf,
    /// Keep every N-th ground-truth frame, to match a strided prediction.
    #[arg(long, default_value_t = 1)]
    pub truth_stride: usize,
    /// Point cloud or mesh PLY to compare with --truth-geometry.
    #[arg(long, value_name = "FILE", requires = "truth_geometry")]
    pub pred_geometry: Option<PathBuf>,
    #[arg(long, value_name = "FILE", requires = "pred_geometry")]
    pub truth_geometry: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct LossArgs {
    /// Labeled mesh PLY.
    #[arg(long, value_name = "FILE")]
    pub mesh: PathBuf,
    /// JSON array of per-vertex clutter probabilities, or of [p_non_clutter, p_clutter] pairs.
    #[arg(long, value_name = "FILE")]
    pub pred: PathBuf,
    #[arg(long)]
    pub k: Option<f64>,
    /// 2D loss term to combine with the 3D loss.
    #[arg(long, value_name = "VALUE")]
    pub loss_2d: Option<f64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Base scene spec as JSON.
    #[arg(long, value_name = "FILE")]
    pub spec: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Number of seeded bundles.
    #[arg(long, default_value_t = 3)]
    pub seeds: u64,
    /// Cameras per bundle.
    #[arg(long, default_value_t = 12)]
    pub frames: usize,
    /// Image width; height and focal length scale with it.
    #[arg(long, default_value_t = 224)]
    pub width: usize,
    #[command(flatten)]
    pub tuning: Tuning,
    #[command(flatten)]
    pub common: Common,
}

/// A failed command: usage errors exit with 1, data errors with 2.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl From<viewfuse::Error> for Failure {
    fn from(e: viewfuse::Error) -> Self {
        Failure::Data(e.into())
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("VIEWFUSE_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

fn main() -> ExitCode {
    init_logging();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
