//! Video ingestion and the clip sampling pipeline: resize, fixed-length
//! clip extraction with overlap, and training-time augmentation.

pub mod image;
pub mod manifest;

pub use image::{read_pnm, read_pnm_file, resize_bilinear, write_ppm, write_ppm_file};
pub use manifest::{DatasetManifest, ManifestEntry};

use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

/// A video as an ordered list of same-sized [3, H, W] frames in [0, 1].
#[derive(Debug, Clone)]
pub struct VideoSource {
    pub id: String,
    pub frames: Vec<Tensor>,
    pub label: Option<usize>,
}

impl VideoSource {
    pub fn new(id: String, frames: Vec<Tensor>, label: Option<usize>) -> Result<VideoSource> {
        if frames.is_empty() {
            return Err(Error::EmptyInput(format!("video {:?} has no frames", id)));
        }
        let first = frames[0].shape().to_vec();
        if first.len() != 3 || first[0] != 3 {
            return Err(Error::InvalidShape(format!(
                "video {:?}: frames must be [3, H, W], got {:?}",
                id, first
            )));
        }
        if let Some(bad) = frames.iter().find(|f| f.shape() != first) {
            return Err(Error::InvalidShape(format!(
                "video {:?}: mixed frame shapes {:?} vs {:?}",
                id,
                bad.shape(),
                first
            )));
        }
        Ok(VideoSource { id, frames, label })
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn frame_size(&self) -> (usize, usize) {
        let s = self.frames[0].shape();
        (s[1], s[2])
    }

    /// All frames resized to (h, w).
    pub fn resized(&self, h: usize, w: usize) -> Result<VideoSource> {
        let frames = self
            .frames
            .iter()
            .map(|f| resize_bilinear(f, h, w))
            .collect::<Result<Vec<_>>>()?;
        VideoSource::new(self.id.clone(), frames, self.label)
    }
}

/// A fixed-length stack of frames cut from one video.
#[derive(Debug, Clone)]
pub struct Clip {
    pub video_id: String,
    pub start_frame: usize,
    /// [3, T, H, W]
    pub data: Tensor,
}

/// Clip sampling and augmentation settings.
#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub clip_len: usize,
    /// Frames shared between consecutive clips; stride is clip_len - overlap.
    pub overlap: usize,
    pub resize_to: (usize, usize),
    pub crop: (usize, usize),
    pub train_mode: bool,
    /// Horizontal flip probability in train mode (0 disables flipping).
    pub flip_prob: f32,
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clip_len == 0 {
            return Err(Error::InvalidConfig("clip length must be >= 1".into()));
        }
        if self.overlap >= self.clip_len {
            return Err(Error::InvalidConfig(format!(
                "overlap {} must be < clip length {}",
                self.overlap, self.clip_len
            )));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::InvalidConfig(format!(
                "flip probability {} outside [0, 1]",
                self.flip_prob
            )));
        }
        Ok(())
    }
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            clip_len: 16,
            overlap: 8,
            resize_to: (128, 171),
            crop: (112, 112),
            train_mode: false,
            flip_prob: 0.5,
        }
    }
}

/// Stack frames [start, start + len) of a video (repeating the last frame
/// past the end) into a [3, len, H, W] clip tensor.
fn stack_frames(video: &VideoSource, start: usize, len: usize) -> Result<Clip> {
    let (h, w) = video.frame_size();
    let plane = h * w;
    let mut data = vec![0.0f32; 3 * len * plane];
    for t in 0..len {
        let frame = &video.frames[(start + t).min(video.frame_count() - 1)];
        for c in 0..3 {
            let src = &frame.data()[c * plane..(c + 1) * plane];
            let dst_off = (c * len + t) * plane;
            data[dst_off..dst_off + plane].copy_from_slice(src);
        }
    }
    Ok(Clip {
        video_id: video.id.clone(),
        start_frame: start,
        data: Tensor::from_vec(&[3, len, h, w], data)?,
    })
}

/// Number of padded frames a video presents to the sampler.
pub fn padded_frame_count(frame_count: usize, clip_len: usize) -> usize {
    frame_count.max(clip_len)
}

/// Start indices of the sliding-window clips: 0, s, 2s, ... with stride
/// s = clip_len - overlap; trailing frames beyond the last full stride are
/// dropped. Videos shorter than one clip are padded by repeating the last
/// frame, yielding exactly one clip.
pub fn clip_starts(frame_count: usize, clip_len: usize, overlap: usize) -> Vec<usize> {
    let stride = clip_len - overlap;
    let padded = padded_frame_count(frame_count, clip_len);
    let count = (padded - clip_len) / stride + 1;
    (0..count).map(|i| i * stride).collect()
}

/// Cut a video into overlapping fixed-length clips at the configured resize
/// resolution. Cropping happens later in [`augment`].
pub fn sample_clips(video: &VideoSource, cfg: &SamplerConfig) -> Result<Vec<Clip>> {
    cfg.validate()?;
    let resized = video.resized(cfg.resize_to.0, cfg.resize_to.1)?;
    clip_starts(resized.frame_count(), cfg.clip_len, cfg.overlap)
        .into_iter()
        .map(|start| stack_frames(&resized, start, cfg.clip_len))
        .collect()
}

/// One clip with a uniform-random temporal start in [0, padded - clip_len].
/// Operates on the video at its current resolution.
pub fn temporal_jitter_sample(video: &VideoSource, clip_len: usize, rng: &mut Rng) -> Result<Clip> {
    if clip_len == 0 {
        return Err(Error::InvalidConfig("clip length must be >= 1".into()));
    }
    let padded = padded_frame_count(video.frame_count(), clip_len);
    let start = rng.below(padded - clip_len + 1);
    stack_frames(video, start, clip_len)
}

/// Mirror a clip along the W axis.
pub fn flip_horizontal(clip: &Clip) -> Clip {
    let shape = clip.data.shape().to_vec();
    let (w,) = (shape[3],);
    let row_count = clip.data.len() / w;
    let mut data = Vec::with_capacity(clip.data.len());
    for r in 0..row_count {
        let row = &clip.data.data()[r * w..(r + 1) * w];
        data.extend(row.iter().rev());
    }
    Clip {
        video_id: clip.video_id.clone(),
        start_frame: clip.start_frame,
        data: Tensor::from_vec(&shape, data).expect("shape preserved"),
    }
}

fn crop_clip(clip: &Clip, oy: usize, ox: usize, ch: usize, cw: usize) -> Clip {
    let shape = clip.data.shape();
    let (c, t, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    debug_assert!(oy + ch <= h && ox + cw <= w);
    let mut data = Vec::with_capacity(c * t * ch * cw);
    for ci in 0..c {
        for ti in 0..t {
            let plane = &clip.data.data()[(ci * t + ti) * h * w..(ci * t + ti + 1) * h * w];
            for y in 0..ch {
                let row = &plane[(oy + y) * w + ox..(oy + y) * w + ox + cw];
                data.extend_from_slice(row);
            }
        }
    }
    Clip {
        video_id: clip.video_id.clone(),
        start_frame: clip.start_frame,
        data: Tensor::from_vec(&[c, t, ch, cw], data).expect("consistent crop"),
    }
}

/// Spatial augmentation. Train mode: uniform-random crop origin plus
/// horizontal flip with `flip_prob`; eval mode: center crop, no flip.
pub fn augment(clip: &Clip, cfg: &SamplerConfig, rng: &mut Rng) -> Result<Clip> {
    let shape = clip.data.shape();
    let (h, w) = (shape[2], shape[3]);
    let (ch, cw) = cfg.crop;
    if ch > h || cw > w {
        return Err(Error::Geometry(format!(
            "crop {}x{} larger than frame {}x{}",
            ch, cw, h, w
        )));
    }
    let out = if cfg.train_mode {
        let oy = rng.below(h - ch + 1);
        let ox = rng.below(w - cw + 1);
        let cropped = crop_clip(clip, oy, ox, ch, cw);
        if cfg.flip_prob > 0.0 && rng.coin(cfg.flip_prob) {
            flip_horizontal(&cropped)
        } else {
            cropped
        }
    } else {
        crop_clip(clip, (h - ch) / 2, (w - cw) / 2, ch, cw)
    };
    Ok(out)
}

/// Center-crop origin used by eval-mode augmentation.
pub fn center_origin(in_extent: usize, crop_extent: usize) -> usize {
    (in_extent - crop_extent) / 2
}
