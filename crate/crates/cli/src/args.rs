//! Argument grammar and config-file resolution.
//!
//! Precedence for every setting: command-line flag > config file
//! (key=value lines) > built-in default. Flags are declared as `Option`s so
//! absence is distinguishable from an explicit value.

use std::collections::HashMap;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "st-conv",
    about = "Spatiotemporal CNN engine: train, extract, classify and evaluate video models",
    version
)]
pub struct Cli {
    /// Worker threads (falls back to STCONV_THREADS, then all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// key=value config file consulted for any flag not given explicitly.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// RNG seed for every randomized stage.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic motion dataset (two classes that differ only
    /// in drift direction).
    GenSynth(GenSynthArgs),
    /// Print a network manifest: one layer per line with geometry and
    /// output shape.
    Describe(DescribeArgs),
    /// Train a softmax-headed network on a dataset manifest.
    Finetune(FinetuneArgs),
    /// Extract per-video fc6 descriptors with a C3D network.
    Extract(ExtractArgs),
    /// Train a linear SVM on extracted descriptors.
    TrainSvm(TrainSvmArgs),
    /// Predict video labels with a trained model.
    Predict(PredictArgs),
    /// k-fold cross-validation; writes report.csv and summary.txt.
    Eval(EvalArgs),
    /// Project descriptors to 2D (PCA or t-SNE); writes embedding.csv/.svg.
    Project(ProjectArgs),
    /// Benchmark forward passes; writes bench.csv.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
pub struct GenSynthArgs {
    /// Output directory for manifest.csv and videos/.
    #[arg(long)]
    pub out: PathBuf,
    /// Videos per class.
    #[arg(long)]
    pub videos: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    /// Square frame size in pixels.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub noise: Option<f32>,
}

#[derive(Args, Debug)]
pub struct DescribeArgs {
    /// Network name: c3d, r2p1d34 or tiny-r2p1d.
    #[arg(long)]
    pub net: String,
    /// Input frames per clip (r2p1d34 and tiny-r2p1d).
    #[arg(long)]
    pub frames: Option<usize>,
    /// Input frame size (tiny-r2p1d).
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct SamplerFlags {
    #[arg(long)]
    pub clip_len: Option<usize>,
    #[arg(long)]
    pub overlap: Option<usize>,
    /// Resize frames to HxW (e.g. 128x171).
    #[arg(long)]
    pub resize: Option<String>,
    /// Crop clips to HxW (e.g. 112x112).
    #[arg(long)]
    pub crop: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct TrainerFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub decay_factor: Option<f32>,
    /// Decay interval in epochs.
    #[arg(long)]
    pub decay_interval: Option<u64>,
    #[arg(long)]
    pub momentum: Option<f32>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub clips_per_video: Option<usize>,
    #[arg(long)]
    pub flip_prob: Option<f32>,
    /// Shuffle frames within each clip (temporal-structure control).
    #[arg(long)]
    pub shuffle_frames: bool,
}

#[derive(Args, Debug)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub net: String,
    /// Output STM1 checkpoint.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional per-iteration loss CSV.
    #[arg(long)]
    pub loss_out: Option<PathBuf>,
    #[command(flatten)]
    pub sampler: SamplerFlags,
    #[command(flatten)]
    pub trainer: TrainerFlags,
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Optional STM1 checkpoint; otherwise seeded random weights.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Output STT1 descriptor tensor [N, 4096].
    #[arg(long)]
    pub out_features: PathBuf,
    /// Output sidecar CSV (video_id,label,row).
    #[arg(long)]
    pub out_sidecar: PathBuf,
    #[command(flatten)]
    pub sampler: SamplerFlags,
}

#[derive(Args, Debug)]
pub struct TrainSvmArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub sidecar: PathBuf,
    /// Output STM1 model (entries svm.weights, svm.bias).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub l2: Option<f32>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// Dataset manifest (softmax path).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub net: Option<String>,
    /// STM1 network checkpoint (softmax path).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// STM1 SVM model (descriptor path).
    #[arg(long)]
    pub svm: Option<PathBuf>,
    /// Descriptor tensor + sidecar (descriptor path).
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub sidecar: Option<PathBuf>,
    /// Output CSV video_id,label,predicted.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub sampler: SamplerFlags,
    #[arg(long)]
    pub shuffle_frames: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Dataset manifest (network path).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Network to train per fold (tiny-r2p1d).
    #[arg(long)]
    pub net: Option<String>,
    /// Precomputed descriptors (SVM path).
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub sidecar: Option<PathBuf>,
    #[arg(long)]
    pub l2: Option<f32>,
    /// SVM epochs (SVM path).
    #[arg(long)]
    pub svm_epochs: Option<usize>,
    /// Output directory for report.csv and summary.txt.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub sampler: SamplerFlags,
    #[command(flatten)]
    pub trainer: TrainerFlags,
}

#[derive(Args, Debug)]
pub struct ProjectArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub sidecar: PathBuf,
    /// pca or tsne.
    #[arg(long)]
    pub method: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub perplexity: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub net: String,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

/// key=value file, one pair per line, '#' comments.
pub fn parse_config_file(text: &str) -> Result<HashMap<String, String>, String> {
    let mut map = HashMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key=value, got {:?}", lineno + 1, raw))?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// "HxW" pair, e.g. "128x171".
pub fn parse_dims(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got {:?}", s))?;
    let h = h.trim().parse().map_err(|_| format!("bad height in {:?}", s))?;
    let w = w.trim().parse().map_err(|_| format!("bad width in {:?}", s))?;
    Ok((h, w))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_parses() {
        let map = parse_config_file("# comment\nepochs = 8\nlr=0.01\n\n").unwrap();
        assert_eq!(map.get("epochs").unwrap(), "8");
        assert_eq!(map.get("lr").unwrap(), "0.01");
        assert!(parse_config_file("nonsense").is_err());
    }

    #[test]
    fn dims_parse() {
        assert_eq!(parse_dims("128x171").unwrap(), (128, 171));
        assert_eq!(parse_dims("112X112").unwrap(), (112, 112));
        assert!(parse_dims("112").is_err());
    }
}
