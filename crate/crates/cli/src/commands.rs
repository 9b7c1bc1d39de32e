//! Command implementations over the engine crate.

use std::collections::HashMap;
use std::path::Path;
use std::str::FromStr;

use stconv_core::error::Error as CoreError;
use stconv_core::eval::{
    benchmark_net, evaluate_cv, generate_synthetic, project_pca, project_tsne, write_bench_csv,
    write_embedding_csv, write_embedding_svg, write_report_csv, write_summary_txt, PredRecord,
    SyntheticSpec, TsneConfig,
};
use stconv_core::features::{
    extract_video_descriptor, finetune, load_videos, predict_video_softmax, read_descriptors,
    svm_predict, svm_train, write_descriptors, FinetuneConfig, LinearSvmModel, VideoDescriptor,
};
use stconv_core::net::{build_c3d, build_r2p1d_34, build_tiny_r2p1d, NetSpec, Network};
use stconv_core::ops::{Checkpoint, DecayUnit, SgdConfig};
use stconv_core::tensor::atomic_write;
use stconv_core::video::{DatasetManifest, SamplerConfig};
use stconv_core::{Rng, Tensor};

use crate::args::{
    parse_dims, BenchArgs, DescribeArgs, EvalArgs, ExtractArgs, FinetuneArgs, GenSynthArgs,
    PredictArgs, ProjectArgs, SamplerFlags, TrainSvmArgs, TrainerFlags,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CliKind {
    Usage,
    Config,
    Runtime,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: CliKind,
    pub msg: String,
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> CliError {
        CliError {
            kind: CliKind::Config,
            msg: msg.into(),
        }
    }

    pub fn usage(msg: impl Into<String>) -> CliError {
        CliError {
            kind: CliKind::Usage,
            msg: msg.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            CliKind::Usage => 2,
            CliKind::Config => 3,
            CliKind::Runtime => 1,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self.kind {
            CliKind::Usage => "usage",
            CliKind::Config => "config",
            CliKind::Runtime => "runtime",
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> CliError {
        CliError {
            kind: CliKind::Runtime,
            msg: e.to_string(),
        }
    }
}

/// Flag > config file > default.
pub struct Resolver {
    file: HashMap<String, String>,
}

impl Resolver {
    pub fn new(file: HashMap<String, String>) -> Resolver {
        Resolver { file }
    }

    fn lookup<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.file.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                CliError::config(format!("config key {} has bad value {:?}", key, raw))
            }),
        }
    }

    pub fn get<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError> {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.lookup(key)?.unwrap_or(default)),
        }
    }

    pub fn get_opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.lookup(key),
        }
    }
}

fn require_input(path: &Path, what: &str) -> Result<(), CliError> {
    if !path.exists() {
        return Err(CliError::config(format!(
            "{} {:?} does not exist",
            what, path
        )));
    }
    Ok(())
}

fn prepare_output_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path)
        .map_err(|e| CliError::config(format!("cannot create output directory {:?}: {}", path, e)))
}

fn prepare_parent(path: &Path) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| {
            CliError::config(format!("cannot create directory {:?}: {}", parent, e))
        })?;
    }
    Ok(())
}

fn dims(
    r: &Resolver,
    flag: &Option<String>,
    key: &str,
    default: (usize, usize),
) -> Result<(usize, usize), CliError> {
    let s: Option<String> = r.get_opt(flag.clone(), key)?;
    match s {
        None => Ok(default),
        Some(s) => parse_dims(&s).map_err(CliError::config),
    }
}

struct NetChoice {
    spec: NetSpec,
}

fn resolve_net(
    name: &str,
    classes: usize,
    frames: usize,
    size: usize,
) -> Result<NetChoice, CliError> {
    let spec = match name {
        "c3d" => build_c3d(classes),
        "r2p1d34" => build_r2p1d_34(classes, frames),
        "tiny-r2p1d" => build_tiny_r2p1d(classes, frames, size),
        other => {
            return Err(CliError::config(format!(
                "unknown net {:?} (expected c3d, r2p1d34 or tiny-r2p1d)",
                other
            )))
        }
    };
    spec.map(|spec| NetChoice { spec })
        .map_err(|e| CliError::config(e.to_string()))
}

struct SamplerSettings {
    clip_len: usize,
    overlap: usize,
    resize: (usize, usize),
    crop: (usize, usize),
}

fn resolve_sampler(
    r: &Resolver,
    flags: &SamplerFlags,
    defaults: (usize, usize, (usize, usize), (usize, usize)),
) -> Result<SamplerSettings, CliError> {
    Ok(SamplerSettings {
        clip_len: r.get(flags.clip_len, "clip-len", defaults.0)?,
        overlap: r.get(flags.overlap, "overlap", defaults.1)?,
        resize: dims(r, &flags.resize, "resize", defaults.2)?,
        crop: dims(r, &flags.crop, "crop", defaults.3)?,
    })
}

fn resolve_trainer(
    r: &Resolver,
    flags: &TrainerFlags,
    sampler: &SamplerSettings,
    seed: u64,
    default_lr: f32,
) -> Result<FinetuneConfig, CliError> {
    let cfg = FinetuneConfig {
        sgd: SgdConfig {
            learning_rate: r.get(flags.lr, "lr", default_lr)?,
            decay_factor: r.get(flags.decay_factor, "decay-factor", 0.1)?,
            decay_interval: r.get(flags.decay_interval, "decay-interval", 2)?,
            decay_unit: DecayUnit::Epochs,
            momentum: r.get(flags.momentum, "momentum", 0.9)?,
            batch_size: r.get(flags.batch, "batch", 4)?,
        },
        epochs: r.get(flags.epochs, "epochs", 8)?,
        clips_per_video: r.get(flags.clips_per_video, "clips-per-video", 4)?,
        clip_len: sampler.clip_len,
        resize_to: sampler.resize,
        crop: sampler.crop,
        flip_prob: r.get(flags.flip_prob, "flip-prob", 0.0)?,
        shuffle_frames: flags.shuffle_frames,
        seed,
    };
    cfg.validate().map_err(|e| CliError::config(e.to_string()))?;
    Ok(cfg)
}

fn load_manifest(path: &Path) -> Result<DatasetManifest, CliError> {
    require_input(path, "manifest")?;
    DatasetManifest::read(path).map_err(|e| CliError::config(e.to_string()))
}

fn class_count(manifest: &DatasetManifest) -> usize {
    manifest
        .entries
        .iter()
        .map(|e| e.label + 1)
        .max()
        .unwrap_or(2)
        .max(2)
}

pub fn gen_synth(args: &GenSynthArgs, r: &Resolver, seed: u64) -> Result<(), CliError> {
    prepare_output_dir(&args.out)?;
    let spec = SyntheticSpec {
        videos_per_class: r.get(args.videos, "videos", 40)?,
        frames: r.get(args.frames, "frames", 32)?,
        frame_size: r.get(args.size, "size", 32)?,
        noise: r.get(args.noise, "noise", 0.05)?,
        seed,
    };
    spec.validate().map_err(|e| CliError::config(e.to_string()))?;
    let manifest = generate_synthetic(&spec, &args.out)?;
    println!(
        "wrote {} videos ({} frames, {}x{}) to {}",
        manifest.entries.len(),
        spec.frames,
        spec.frame_size,
        spec.frame_size,
        args.out.display()
    );
    Ok(())
}

pub fn describe(args: &DescribeArgs, r: &Resolver) -> Result<(), CliError> {
    let classes = r.get(args.classes, "classes", 2)?;
    let frames = r.get(args.frames, "frames", 32)?;
    let size = r.get(args.size, "size", 32)?;
    let net = resolve_net(&args.net, classes, frames, size)?;
    let manifest = net.spec.manifest()?;
    print!("{}", manifest);
    Ok(())
}

pub fn finetune_cmd(args: &FinetuneArgs, r: &Resolver, seed: u64) -> Result<(), CliError> {
    let manifest = load_manifest(&args.manifest)?;
    prepare_parent(&args.out)?;
    let sampler = resolve_sampler(r, &args.sampler, (32, 16, (128, 171), (112, 112)))?;
    let cfg = resolve_trainer(r, &args.trainer, &sampler, seed, 1e-4)?;
    let classes = class_count(&manifest);
    let net_choice = resolve_net(&args.net, classes, sampler.clip_len, sampler.crop.0)?;

    let indices: Vec<usize> = (0..manifest.entries.len()).collect();
    let videos = load_videos(&manifest, &indices, sampler.resize)?;
    let mut net = Network::from_spec(&net_choice.spec, &mut Rng::new(seed))?;
    let report = finetune(&mut net, &videos, &cfg)?;
    for (epoch, loss) in report.epoch_mean_loss.iter().enumerate() {
        println!("epoch {} mean loss {:.6}", epoch, loss);
    }
    net.state()?.save(&args.out)?;
    println!("saved model to {}", args.out.display());

    if let Some(loss_path) = &args.loss_out {
        prepare_parent(loss_path)?;
        let mut csv = String::from("iteration,loss\n");
        for (i, l) in report.loss_trace.iter().enumerate() {
            csv.push_str(&format!("{},{}\n", i, l));
        }
        atomic_write(loss_path, csv.as_bytes())?;
    }
    Ok(())
}

pub fn extract(args: &ExtractArgs, r: &Resolver, seed: u64) -> Result<(), CliError> {
    let manifest = load_manifest(&args.manifest)?;
    prepare_parent(&args.out_features)?;
    prepare_parent(&args.out_sidecar)?;
    let sampler = resolve_sampler(r, &args.sampler, (16, 8, (128, 171), (112, 112)))?;
    let net_choice = resolve_net("c3d", 2, sampler.clip_len, sampler.crop.0)?;
    let mut net = Network::from_spec(&net_choice.spec, &mut Rng::new(seed))?;
    if let Some(model) = &args.model {
        require_input(model, "model")?;
        net.load_state(&Checkpoint::load(model)?)?;
    }

    let cfg = SamplerConfig {
        clip_len: sampler.clip_len,
        overlap: sampler.overlap,
        resize_to: sampler.resize,
        crop: sampler.crop,
        train_mode: false,
        flip_prob: 0.0,
    };
    let mut descriptors = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let video = manifest.load_video(entry)?;
        let descriptor = extract_video_descriptor(&mut net, &video, &cfg)?;
        println!("extracted {}", descriptor.video_id);
        descriptors.push(descriptor);
    }
    write_descriptors(&descriptors, &args.out_features, &args.out_sidecar)?;
    println!(
        "wrote {} descriptors to {}",
        descriptors.len(),
        args.out_features.display()
    );
    Ok(())
}

/// Binary label mapping shared by the SVM paths: class 1 is the positive
/// class (+1), every other class is -1.
fn svm_label(label: usize) -> i32 {
    if label == 1 {
        1
    } else {
        -1
    }
}

fn descriptor_features_labels(
    descriptors: &[VideoDescriptor],
) -> Result<(Vec<Tensor>, Vec<i32>, Vec<usize>), CliError> {
    let mut features = Vec::with_capacity(descriptors.len());
    let mut labels = Vec::with_capacity(descriptors.len());
    let mut raw = Vec::with_capacity(descriptors.len());
    for d in descriptors {
        let label = d.label.ok_or_else(|| {
            CliError::config(format!("descriptor {} has no label", d.video_id))
        })?;
        features.push(d.vector.clone());
        labels.push(svm_label(label));
        raw.push(label);
    }
    Ok((features, labels, raw))
}

pub fn train_svm(args: &TrainSvmArgs, r: &Resolver, seed: u64) -> Result<(), CliError> {
    require_input(&args.features, "features")?;
    require_input(&args.sidecar, "sidecar")?;
    prepare_parent(&args.out)?;
    let l2 = r.get(args.l2, "l2", 1e-4)?;
    let epochs = r.get(args.epochs, "epochs", 200)?;

    let descriptors = read_descriptors(&args.features, &args.sidecar)?;
    let (features, labels, _) = descriptor_features_labels(&descriptors)?;
    let result = svm_train(&features, &labels, l2, epochs, &mut Rng::new(seed))?;

    let mut ckpt = Checkpoint::new();
    ckpt.push("svm.weights", result.model.weights.clone())?;
    ckpt.push(
        "svm.bias",
        Tensor::from_vec(&[1], vec![result.model.bias])?,
    )?;
    ckpt.save(&args.out)?;
    println!(
        "trained svm on {} examples, final objective {:.6}, saved to {}",
        features.len(),
        result.final_objective,
        args.out.display()
    );
    Ok(())
}

fn load_svm(path: &Path) -> Result<LinearSvmModel, CliError> {
    let ckpt = Checkpoint::load(path)?;
    let weights = ckpt
        .get("svm.weights")
        .ok_or_else(|| CliError::config("svm model missing svm.weights".to_string()))?
        .clone();
    let bias = ckpt
        .get("svm.bias")
        .ok_or_else(|| CliError::config("svm model missing svm.bias".to_string()))?
        .data()[0];
    Ok(LinearSvmModel {
        weights,
        bias,
        l2: 0.0,
        epochs_trained: 0,
    })
}

fn write_predictions(records: &[PredRecord], path: &Path) -> Result<(), CliError> {
    let mut csv = String::from("video_id,label,predicted\n");
    for r in records {
        csv.push_str(&format!("{},{},{}\n", r.video_id, r.true_label, r.predicted));
    }
    atomic_write(path, csv.as_bytes())?;
    Ok(())
}

pub fn predict(args: &PredictArgs, r: &Resolver, seed: u64) -> Result<(), CliError> {
    prepare_parent(&args.out)?;
    let records = match (&args.svm, &args.manifest) {
        (Some(svm_path), _) => {
            let features = args.features.as_ref().ok_or_else(|| {
                CliError::config("svm prediction needs --features and --sidecar".to_string())
            })?;
            let sidecar = args.sidecar.as_ref().ok_or_else(|| {
                CliError::config("svm prediction needs --features and --sidecar".to_string())
            })?;
            require_input(svm_path, "svm model")?;
            require_input(features, "features")?;
            require_input(sidecar, "sidecar")?;
            let model = load_svm(svm_path)?;
            let descriptors = read_descriptors(features, sidecar)?;
            descriptors
                .iter()
                .map(|d| {
                    let (sign, _) = svm_predict(&model, &d.vector)?;
                    Ok(PredRecord {
                        video_id: d.video_id.clone(),
                        true_label: d.label.unwrap_or(0),
                        predicted: if sign > 0 { 1 } else { 0 },
                    })
                })
                .collect::<Result<Vec<_>, CoreError>>()?
        }
        (None, Some(manifest_path)) => {
            let manifest = load_manifest(manifest_path)?;
            let net_name = args.net.as_deref().ok_or_else(|| {
                CliError::config("softmax prediction needs --net and --model".to_string())
            })?;
            let model_path = args.model.as_ref().ok_or_else(|| {
                CliError::config("softmax prediction needs --net and --model".to_string())
            })?;
            require_input(model_path, "model")?;
            let sampler = resolve_sampler(r, &args.sampler, (32, 16, (128, 171), (112, 112)))?;
            let classes = class_count(&manifest);
            let net_choice = resolve_net(net_name, classes, sampler.clip_len, sampler.crop.0)?;
            let mut net = Network::from_spec(&net_choice.spec, &mut Rng::new(seed))?;
            net.load_state(&Checkpoint::load(model_path)?)?;
            let cfg = FinetuneConfig {
                sgd: SgdConfig {
                    learning_rate: 0.0,
                    decay_factor: 1.0,
                    decay_interval: 1,
                    decay_unit: DecayUnit::Epochs,
                    momentum: 0.0,
                    batch_size: 1,
                },
                epochs: 1,
                clips_per_video: 1,
                clip_len: sampler.clip_len,
                resize_to: sampler.resize,
                crop: sampler.crop,
                flip_prob: 0.0,
                shuffle_frames: args.shuffle_frames,
                seed,
            };
            let mut records = Vec::with_capacity(manifest.entries.len());
            for entry in &manifest.entries {
                let video = manifest
                    .load_video(entry)?
                    .resized(sampler.resize.0, sampler.resize.1)?;
                let (pred, _) = predict_video_softmax(&mut net, &video, &cfg)?;
                records.push(PredRecord {
                    video_id: entry.video_id.clone(),
                    true_label: entry.label,
                    predicted: pred,
                });
            }
            records
        }
        _ => {
            return Err(CliError::usage(
                "predict needs either --svm with --features/--sidecar, or --manifest with --net/--model".to_string(),
            ))
        }
    };
    write_predictions(&records, &args.out)?;
    let correct = records
        .iter()
        .filter(|p| p.predicted == p.true_label)
        .count();
    println!(
        "predicted {} videos, {} match the manifest labels",
        records.len(),
        correct
    );
    Ok(())
}

pub fn eval(args: &EvalArgs, r: &Resolver, seed: u64) -> Result<(), CliError> {
    prepare_output_dir(&args.out)?;
    let k = r.get(args.k, "k", 5)?;

    let summary = if let Some(features_path) = &args.features {
        // SVM over precomputed descriptors
        let sidecar = args.sidecar.as_ref().ok_or_else(|| {
            CliError::config("descriptor evaluation needs --sidecar".to_string())
        })?;
        require_input(features_path, "features")?;
        require_input(sidecar, "sidecar")?;
        let l2 = r.get(args.l2, "l2", 1e-4)?;
        let epochs = r.get(args.svm_epochs, "svm-epochs", 200)?;
        let descriptors = read_descriptors(features_path, sidecar)?;
        let (features, svm_labels, raw_labels) = descriptor_features_labels(&descriptors)?;

        evaluate_cv(&raw_labels, k, seed, |fold, train, test| {
            let train_feats: Vec<Tensor> = train.iter().map(|&i| features[i].clone()).collect();
            let train_labels: Vec<i32> = train.iter().map(|&i| svm_labels[i]).collect();
            let mut rng = Rng::new(seed ^ (fold as u64) << 32);
            let result = svm_train(&train_feats, &train_labels, l2, epochs, &mut rng)?;
            test.iter()
                .map(|&i| {
                    let (sign, _) = svm_predict(&result.model, &features[i])?;
                    Ok(PredRecord {
                        video_id: descriptors[i].video_id.clone(),
                        true_label: raw_labels[i],
                        predicted: if sign > 0 { 1 } else { 0 },
                    })
                })
                .collect()
        })?
    } else {
        // train a network per fold
        let manifest_path = args.manifest.as_ref().ok_or_else(|| {
            CliError::config("evaluation needs --manifest (or --features for the SVM path)".to_string())
        })?;
        let manifest = load_manifest(manifest_path)?;
        let net_name = r.get(args.net.clone(), "net", "tiny-r2p1d".to_string())?;
        let sampler = resolve_sampler(r, &args.sampler, (8, 4, (32, 32), (32, 32)))?;
        let cfg_base = resolve_trainer(r, &args.trainer, &sampler, seed, 0.02)?;
        let classes = class_count(&manifest);
        let labels: Vec<usize> = manifest.entries.iter().map(|e| e.label).collect();

        evaluate_cv(&labels, k, seed, |fold, train, test| {
            let fold_seed = seed.wrapping_add(0x9E3779B97F4A7C15u64.wrapping_mul(fold as u64 + 1));
            let net_choice = resolve_net(&net_name, classes, sampler.clip_len, sampler.crop.0)
                .map_err(|e| CoreError::InvalidConfig(e.msg))?;
            let mut net = Network::from_spec(&net_choice.spec, &mut Rng::new(fold_seed))?;
            let cfg = FinetuneConfig {
                seed: fold_seed,
                ..cfg_base.clone()
            };
            let train_videos = load_videos(&manifest, train, sampler.resize)?;
            let report = finetune(&mut net, &train_videos, &cfg)?;
            println!(
                "fold {}: final epoch mean loss {:.6}",
                fold,
                report.epoch_mean_loss.last().copied().unwrap_or(f32::NAN)
            );
            test.iter()
                .map(|&i| {
                    let entry = &manifest.entries[i];
                    let video = manifest
                        .load_video(entry)?
                        .resized(sampler.resize.0, sampler.resize.1)?;
                    let (pred, _) = predict_video_softmax(&mut net, &video, &cfg)?;
                    Ok(PredRecord {
                        video_id: entry.video_id.clone(),
                        true_label: entry.label,
                        predicted: pred,
                    })
                })
                .collect()
        })?
    };

    write_report_csv(&summary, &args.out.join("report.csv"))?;
    write_summary_txt(&summary, &args.out.join("summary.txt"))?;
    for fold in &summary.folds {
        println!(
            "fold {} accuracy {:.4} ({}/{})",
            fold.fold_index,
            fold.accuracy(),
            fold.correct,
            fold.total
        );
    }
    println!("cv accuracy {}", summary.format_percent());
    Ok(())
}

pub fn project(args: &ProjectArgs, r: &Resolver, seed: u64) -> Result<(), CliError> {
    require_input(&args.features, "features")?;
    require_input(&args.sidecar, "sidecar")?;
    prepare_output_dir(&args.out)?;

    let descriptors = read_descriptors(&args.features, &args.sidecar)?;
    let labels: Vec<usize> = descriptors.iter().map(|d| d.label.unwrap_or(0)).collect();
    let dim = descriptors[0].vector.len();
    let mut data = Vec::with_capacity(descriptors.len() * dim);
    for d in &descriptors {
        data.extend_from_slice(d.vector.data());
    }
    let features = Tensor::from_vec(&[descriptors.len(), dim], data)?;

    let embedding = match args.method.as_str() {
        "pca" => {
            let result = project_pca(&features)?;
            println!(
                "explained variance ratios: {:.4}, {:.4}",
                result.explained_variance_ratio[0], result.explained_variance_ratio[1]
            );
            result.projection
        }
        "tsne" => {
            let cfg = TsneConfig {
                perplexity: r.get(args.perplexity, "perplexity", 30.0)?,
                iterations: r.get(args.iters, "iters", 1000)?,
                seed,
                ..TsneConfig::default()
            };
            project_tsne(&features, &cfg)?
        }
        other => {
            return Err(CliError::config(format!(
                "unknown projection method {:?} (expected pca or tsne)",
                other
            )))
        }
    };
    write_embedding_csv(&embedding, &labels, &args.out.join("embedding.csv"))?;
    write_embedding_svg(&embedding, &labels, &args.out.join("embedding.svg"))?;
    println!(
        "wrote embedding for {} videos to {}",
        labels.len(),
        args.out.display()
    );
    Ok(())
}

pub fn bench(args: &BenchArgs, r: &Resolver, seed: u64) -> Result<(), CliError> {
    prepare_parent(&args.out)?;
    let batch = r.get(args.batch, "batch", 1)?;
    let reps = r.get(args.reps, "reps", 5)?;
    let frames = r.get(args.frames, "frames", 32)?;
    let size = r.get(args.size, "size", 32)?;
    let net_choice = resolve_net(&args.net, 2, frames, size)?;
    let row = benchmark_net(&net_choice.spec, batch, reps, seed)?;
    println!(
        "{}: median {:.3} ms over {} reps, {} conv/fc FLOPs",
        row.name, row.median_ms, row.reps, row.flops
    );
    write_bench_csv(&[row], &args.out)?;
    Ok(())
}
