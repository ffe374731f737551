use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "geoframe", version, about = "Next-frame prediction from monocular video, depth and ego-motion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render synthetic videos into the dataset layout.
    GenData(GenDataArgs),
    /// Turn point-cloud scans into depth label maps.
    MakeDepth(MakeDepthArgs),
    /// Train the depth network from a JSON config.
    Train(TrainArgs),
    /// Score next-frame predictions with PSNR and SSIM.
    Eval(EvalArgs),
    /// Predict the frame after a video's second-to-last frame.
    Predict(PredictArgs),
    /// Warp one frame under a list of hypothetical motions.
    Simulate(SimulateArgs),
    /// Serve the HTTP frame-synthesis API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["spec", "street"])))]
pub struct GenDataArgs {
    /// Scene spec JSON; renders one video directly into `--out`.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Number of random street videos, written to `--out/videoNNNN`.
    #[arg(long)]
    pub street: Option<usize>,
    /// Seed of the first street video; video `i` uses `seed + i`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Street scenes with two boxes in front of a near backdrop.
    #[arg(long)]
    pub two_box: bool,
    #[arg(long, default_value_t = 288)]
    pub width: usize,
    #[arg(long, default_value_t = 88)]
    pub height: usize,
    /// Focal length in pixels (defaults to 0.58 × width).
    #[arg(long)]
    pub focal: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MakeDepthArgs {
    /// Directory of `NNNNNN.bin` scans (f32 x, y, z, reflectance).
    #[arg(long)]
    pub scans: PathBuf,
    /// Sensor-to-camera calibration JSON.
    #[arg(long)]
    pub calibration: PathBuf,
    #[arg(long)]
    pub intrinsics: PathBuf,
    #[arg(long, default_value_t = 3.0)]
    pub d_min: f64,
    #[arg(long, default_value_t = 80.0)]
    pub d_max: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training config JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's training data directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Overrides the config's held-out data directory.
    #[arg(long)]
    pub eval_data: Option<PathBuf>,
    /// Overrides the config's output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("depth").required(true).args(["model", "oracle_depth"])))]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Trained model directory.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Warp with the dataset's true depth instead of a model.
    #[arg(long)]
    pub oracle_depth: bool,
    /// Frames per evaluated sequence; longer videos are cut into windows.
    #[arg(long, default_value_t = 10)]
    pub seq_len: usize,
    /// Report JSON path; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-frame-index CSV path.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("depth").required(true).args(["model", "oracle_depth"])))]
pub struct PredictArgs {
    /// Video directory; all frames but the last are inputs, all poses are used.
    #[arg(long)]
    pub sequence: PathBuf,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub oracle_depth: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub frame: PathBuf,
    /// Depth map of the frame (DMAP file).
    #[arg(long)]
    pub depth: PathBuf,
    #[arg(long)]
    pub intrinsics: PathBuf,
    /// Motions JSON: {"version": 1, "motions": [{t_x, t_y, t_z, r_x, r_y, r_z}, ...]}.
    #[arg(long)]
    pub motions: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Dataset directory (one video, or a directory of videos).
    #[arg(long)]
    pub data: PathBuf,
}
