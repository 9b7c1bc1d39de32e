//! End-to-end training of a softmax-headed network on a video dataset:
//! per-epoch temporal jittering (a fixed number of random clips per video),
//! random cropping, minibatch SGD with epoch-based step decay, and
//! clip-probability average pooling at prediction time.

use crate::error::{Error, Result};
use crate::features::{aggregate_softmax, argmax};
use crate::net::Network;
use crate::ops::{cross_entropy_backward, cross_entropy_loss, Sgd, SgdConfig};
use crate::tensor::{Rng, Tensor};
use crate::video::{
    augment, sample_clips, temporal_jitter_sample, Clip, DatasetManifest, SamplerConfig,
    VideoSource,
};

#[derive(Debug, Clone)]
pub struct FinetuneConfig {
    pub sgd: SgdConfig,
    pub epochs: usize,
    /// Random jittered clips drawn per training video per epoch.
    pub clips_per_video: usize,
    pub clip_len: usize,
    pub resize_to: (usize, usize),
    pub crop: (usize, usize),
    /// Horizontal flip probability during training augmentation.
    pub flip_prob: f32,
    /// Destroy temporal order within every clip (control experiment).
    pub shuffle_frames: bool,
    pub seed: u64,
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        self.sgd.validate()?;
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.clips_per_video == 0 {
            return Err(Error::InvalidConfig("clips per video must be >= 1".into()));
        }
        if self.clip_len == 0 {
            return Err(Error::InvalidConfig("clip length must be >= 1".into()));
        }
        Ok(())
    }

    fn sampler(&self, train_mode: bool) -> SamplerConfig {
        SamplerConfig {
            clip_len: self.clip_len,
            overlap: self.clip_len / 2,
            resize_to: self.resize_to,
            crop: self.crop,
            train_mode,
            flip_prob: self.flip_prob,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FinetuneReport {
    /// Cross-entropy per iteration, in order.
    pub loss_trace: Vec<f32>,
    /// Mean loss per epoch.
    pub epoch_mean_loss: Vec<f32>,
}

/// Permute the frames of a clip uniformly at random.
pub fn shuffle_clip_frames(clip: &Clip, rng: &mut Rng) -> Clip {
    let shape = clip.data.shape().to_vec();
    let (c, t, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let mut perm: Vec<usize> = (0..t).collect();
    rng.shuffle(&mut perm);
    let plane = h * w;
    let mut data = vec![0.0f32; clip.data.len()];
    for ci in 0..c {
        for (dst_t, &src_t) in perm.iter().enumerate() {
            let src = &clip.data.data()[(ci * t + src_t) * plane..(ci * t + src_t + 1) * plane];
            let dst = (ci * t + dst_t) * plane;
            data[dst..dst + plane].copy_from_slice(src);
        }
    }
    Clip {
        video_id: clip.video_id.clone(),
        start_frame: clip.start_frame,
        data: Tensor::from_vec(&shape, data).expect("shape preserved"),
    }
}

fn stack_batch(clips: &[&Clip]) -> Result<Tensor> {
    let shape = clips[0].data.shape().to_vec();
    let mut data = Vec::with_capacity(clips.len() * clips[0].data.len());
    for clip in clips {
        if clip.data.shape() != shape {
            return Err(Error::ShapeMismatch(format!(
                "clip shapes {:?} vs {:?} in one batch",
                clip.data.shape(),
                shape
            )));
        }
        data.extend_from_slice(clip.data.data());
    }
    let mut batched = vec![clips.len()];
    batched.extend_from_slice(&shape);
    Tensor::from_vec(&batched, data)
}

/// Load and resize the videos behind the given manifest rows.
pub fn load_videos(
    manifest: &DatasetManifest,
    indices: &[usize],
    resize_to: (usize, usize),
) -> Result<Vec<VideoSource>> {
    indices
        .iter()
        .map(|&i| {
            let entry = manifest.entries.get(i).ok_or_else(|| {
                Error::InvalidConfig(format!("video index {} out of range", i))
            })?;
            manifest.load_video(entry)?.resized(resize_to.0, resize_to.1)
        })
        .collect()
}

/// Train `net` on the listed videos. Every epoch draws `clips_per_video`
/// temporally jittered, randomly cropped clips from each video, shuffles
/// them, and runs minibatch SGD with the epoch-decayed learning rate.
pub fn finetune(
    net: &mut Network,
    videos: &[VideoSource],
    cfg: &FinetuneConfig,
) -> Result<FinetuneReport> {
    cfg.validate()?;
    if videos.is_empty() {
        return Err(Error::EmptyInput("no training videos".into()));
    }
    let num_classes = net.spec.output_shape()?[0];
    let labels: Vec<usize> = videos
        .iter()
        .map(|v| {
            v.label.ok_or_else(|| {
                Error::Label(format!("video {:?} has no label", v.id))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::Label(format!(
            "label {} out of range for {} classes",
            bad, num_classes
        )));
    }

    let mut rng = Rng::new(cfg.seed);
    let mut sgd = Sgd::new(cfg.sgd.clone())?;
    let train_sampler = cfg.sampler(true);
    let mut loss_trace = Vec::new();
    let mut epoch_mean_loss = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut tasks: Vec<usize> = (0..videos.len())
            .flat_map(|v| std::iter::repeat(v).take(cfg.clips_per_video))
            .collect();
        rng.shuffle(&mut tasks);

        let mut epoch_losses = Vec::new();
        for chunk in tasks.chunks(cfg.sgd.batch_size) {
            let mut clips = Vec::with_capacity(chunk.len());
            let mut batch_labels = Vec::with_capacity(chunk.len());
            for &v in chunk {
                let clip = temporal_jitter_sample(&videos[v], cfg.clip_len, &mut rng)?;
                let mut clip = augment(&clip, &train_sampler, &mut rng)?;
                if cfg.shuffle_frames {
                    clip = shuffle_clip_frames(&clip, &mut rng);
                }
                clips.push(clip);
                batch_labels.push(labels[v]);
            }
            let batch = stack_batch(&clips.iter().collect::<Vec<_>>())?;
            let probs = net.forward_train(&batch)?;
            let loss = cross_entropy_loss(&probs, &batch_labels)?;
            loss_trace.push(loss);
            epoch_losses.push(loss as f64);

            let grad = cross_entropy_backward(&probs, &batch_labels)?;
            net.backward(&grad)?;
            net.visit_params(|name, param, grad| {
                let g = grad.ok_or_else(|| {
                    Error::InvalidConfig(format!("parameter {} has no gradient", name))
                })?;
                sgd.update_named(name, param, g, epoch as u64)
            })?;
        }
        let mean =
            (epoch_losses.iter().sum::<f64>() / epoch_losses.len().max(1) as f64) as f32;
        epoch_mean_loss.push(mean);
    }

    Ok(FinetuneReport {
        loss_trace,
        epoch_mean_loss,
    })
}

/// Video-level softmax prediction: overlapping eval-mode clips (center crop),
/// clip probabilities averaged, argmax wins.
pub fn predict_video_softmax(
    net: &mut Network,
    video: &VideoSource,
    cfg: &FinetuneConfig,
) -> Result<(usize, Tensor)> {
    let sampler = cfg.sampler(false);
    let mut rng = Rng::new(cfg.seed ^ 0x5eed);
    let clips = sample_clips(video, &sampler)?;
    let mut prob_rows = Vec::with_capacity(clips.len());
    for clip in &clips {
        let mut clip = augment(clip, &sampler, &mut rng)?;
        if cfg.shuffle_frames {
            clip = shuffle_clip_frames(&clip, &mut rng);
        }
        let shape = clip.data.shape();
        let batched = clip
            .data
            .reshape(&[1, shape[0], shape[1], shape[2], shape[3]])?;
        let probs = net.forward_eval(&batched)?;
        prob_rows.push(probs.reshape(&[probs.len()])?);
    }
    let pooled = aggregate_softmax(&prob_rows)?;
    Ok((argmax(&pooled), pooled))
}
