//! Classification heads: fc6 descriptor extraction with per-video averaging
//! and L2 normalization for a linear SVM, and clip-probability average
//! pooling for the softmax path.

pub mod finetune;
mod svm;

pub use finetune::{
    finetune, load_videos, predict_video_softmax, shuffle_clip_frames, FinetuneConfig,
    FinetuneReport,
};
pub use svm::{svm_predict, svm_train, LinearSvmModel, SvmTrainResult};

use std::path::Path;

use crate::error::{Error, Result};
use crate::net::Network;
use crate::tensor::{atomic_write, Tensor};
use crate::video::{augment, sample_clips, Clip, SamplerConfig, VideoSource};
use crate::Rng;

/// One 4096-dimensional L2-normalized vector per video.
#[derive(Debug, Clone)]
pub struct VideoDescriptor {
    pub video_id: String,
    pub vector: Tensor,
    pub label: Option<usize>,
}

/// fc6 activations (pre-ReLU) for a list of clips, one vector per clip.
/// The network must expose a layer named "fc6" (see `build_c3d`).
pub fn extract_fc6(net: &mut Network, clips: &[Clip]) -> Result<Vec<Tensor>> {
    let mut features = Vec::with_capacity(clips.len());
    for clip in clips {
        let shape = clip.data.shape();
        let batched = clip.data.reshape(&[1, shape[0], shape[1], shape[2], shape[3]])?;
        let out = net.forward_eval_to(&batched, "fc6")?;
        features.push(out.reshape(&[out.len()])?);
    }
    Ok(features)
}

/// Sort vectors into a canonical order so that summation is exactly
/// permutation-invariant, regardless of the caller's clip order.
fn canonical_order<'a>(vectors: &'a [Tensor]) -> Vec<&'a Tensor> {
    let mut refs: Vec<&Tensor> = vectors.iter().collect();
    refs.sort_by(|a, b| {
        for (x, y) in a.data().iter().zip(b.data()) {
            match x.total_cmp(y) {
                std::cmp::Ordering::Equal => continue,
                other => return other,
            }
        }
        std::cmp::Ordering::Equal
    });
    refs
}

fn check_same_length(vectors: &[Tensor], what: &str) -> Result<usize> {
    if vectors.is_empty() {
        return Err(Error::EmptyInput(format!("no {} to aggregate", what)));
    }
    let dim = vectors[0].len();
    if vectors.iter().any(|v| v.rank() != 1 || v.len() != dim) {
        return Err(Error::ShapeMismatch(format!(
            "{} must all be rank-1 vectors of length {}",
            what, dim
        )));
    }
    Ok(dim)
}

/// Arithmetic mean of the clip features followed by L2 normalization.
pub fn aggregate_descriptor(clip_features: &[Tensor]) -> Result<Tensor> {
    let dim = check_same_length(clip_features, "clip features")?;
    let ordered = canonical_order(clip_features);
    let mut mean = vec![0.0f64; dim];
    for v in &ordered {
        for (m, &x) in mean.iter_mut().zip(v.data()) {
            *m += x as f64;
        }
    }
    let n = ordered.len() as f64;
    let mut norm_sq = 0.0f64;
    for m in mean.iter_mut() {
        *m /= n;
        norm_sq += *m * *m;
    }
    if norm_sq == 0.0 {
        return Err(Error::DegenerateDescriptor);
    }
    let inv = 1.0 / norm_sq.sqrt();
    Tensor::from_vec(&[dim], mean.iter().map(|&m| (m * inv) as f32).collect())
}

/// Elementwise mean of clip-level probability rows; the argmax of the result
/// is the video-level class.
pub fn aggregate_softmax(clip_probs: &[Tensor]) -> Result<Tensor> {
    let dim = check_same_length(clip_probs, "clip probabilities")?;
    let ordered = canonical_order(clip_probs);
    let mut mean = vec![0.0f64; dim];
    for v in &ordered {
        for (m, &x) in mean.iter_mut().zip(v.data()) {
            *m += x as f64;
        }
    }
    let n = ordered.len() as f64;
    Tensor::from_vec(&[dim], mean.iter().map(|&m| (m / n) as f32).collect())
}

/// Index of the row maximum; the lowest index wins ties.
pub fn argmax(probs: &Tensor) -> usize {
    let mut best = 0usize;
    for (i, &v) in probs.data().iter().enumerate() {
        if v > probs.data()[best] {
            best = i;
        }
    }
    best
}

/// Full descriptor pipeline for one video: eval-mode clips (center crop, no
/// flip), fc6 per clip, averaged and L2-normalized.
pub fn extract_video_descriptor(
    net: &mut Network,
    video: &VideoSource,
    cfg: &SamplerConfig,
) -> Result<VideoDescriptor> {
    let eval_cfg = SamplerConfig {
        train_mode: false,
        ..cfg.clone()
    };
    let mut rng = Rng::new(0); // eval-mode augmentation draws nothing
    let clips = sample_clips(video, &eval_cfg)?
        .iter()
        .map(|c| augment(c, &eval_cfg, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let features = extract_fc6(net, &clips)?;
    Ok(VideoDescriptor {
        video_id: video.id.clone(),
        vector: aggregate_descriptor(&features)?,
        label: video.label,
    })
}

/// Write descriptors as an STT1 tensor [N, D] plus a sidecar CSV
/// `video_id,label,row` mapping rows back to videos.
pub fn write_descriptors(
    descriptors: &[VideoDescriptor],
    tensor_path: &Path,
    sidecar_path: &Path,
) -> Result<()> {
    if descriptors.is_empty() {
        return Err(Error::EmptyInput("no descriptors to write".into()));
    }
    let dim = descriptors[0].vector.len();
    let mut data = Vec::with_capacity(descriptors.len() * dim);
    for d in descriptors {
        if d.vector.len() != dim {
            return Err(Error::ShapeMismatch(format!(
                "descriptor {} has dim {}, expected {}",
                d.video_id,
                d.vector.len(),
                dim
            )));
        }
        data.extend_from_slice(d.vector.data());
    }
    Tensor::from_vec(&[descriptors.len(), dim], data)?.save_stt(tensor_path)?;

    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record(["video_id", "label", "row"])
        .map_err(|e| Error::Format(e.to_string()))?;
    for (row, d) in descriptors.iter().enumerate() {
        let label = d.label.map(|l| l.to_string()).unwrap_or_default();
        writer
            .write_record([d.video_id.as_str(), &label, &row.to_string()])
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Format(e.to_string()))?;
    atomic_write(sidecar_path, &bytes)
}

pub fn read_descriptors(tensor_path: &Path, sidecar_path: &Path) -> Result<Vec<VideoDescriptor>> {
    let stack = Tensor::load_stt(tensor_path)?;
    if stack.rank() != 2 {
        return Err(Error::Format(format!(
            "descriptor tensor must be [N, D], got {:?}",
            stack.shape()
        )));
    }
    let (n, dim) = (stack.shape()[0], stack.shape()[1]);

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(sidecar_path)
        .map_err(|e| Error::Format(format!("{}: {}", sidecar_path.display(), e)))?;
    let mut out: Vec<Option<VideoDescriptor>> = (0..n).map(|_| None).collect();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Format(e.to_string()))?;
        if record.len() != 3 {
            return Err(Error::Format(format!("bad sidecar row {:?}", record)));
        }
        let row: usize = record[2]
            .parse()
            .map_err(|_| Error::Format(format!("bad row index {:?}", &record[2])))?;
        if row >= n {
            return Err(Error::Format(format!("row {} out of range 0..{}", row, n)));
        }
        let label = if record[1].is_empty() {
            None
        } else {
            Some(
                record[1]
                    .parse()
                    .map_err(|_| Error::Format(format!("bad label {:?}", &record[1])))?,
            )
        };
        out[row] = Some(VideoDescriptor {
            video_id: record[0].to_string(),
            vector: Tensor::from_vec(
                &[dim],
                stack.data()[row * dim..(row + 1) * dim].to_vec(),
            )?,
            label,
        });
    }
    out.into_iter()
        .enumerate()
        .map(|(i, d)| d.ok_or_else(|| Error::Format(format!("sidecar missing row {}", i))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_four_five_normalization() {
        let mut v = Tensor::zeros(&[8]).unwrap();
        v.data_mut()[0] = 3.0;
        v.data_mut()[1] = 4.0;
        let d = aggregate_descriptor(&[v]).unwrap();
        assert!((d.data()[0] - 0.6).abs() <= 1e-7);
        assert!((d.data()[1] - 0.8).abs() <= 1e-7);
        assert!(d.data()[2..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn copies_aggregate_like_one() {
        let v = Tensor::from_vec(&[3], vec![1.0, 2.0, 2.0]).unwrap();
        let single = aggregate_descriptor(&[v.clone()]).unwrap();
        let triple = aggregate_descriptor(&[v.clone(), v.clone(), v]).unwrap();
        for (a, b) in single.data().iter().zip(triple.data()) {
            assert!((a - b).abs() <= 1e-7);
        }
    }

    #[test]
    fn opposite_vectors_are_degenerate() {
        let v = Tensor::from_vec(&[2], vec![1.0, -0.5]).unwrap();
        let neg = v.scale(-1.0);
        assert!(matches!(
            aggregate_descriptor(&[v, neg]),
            Err(Error::DegenerateDescriptor)
        ));
    }

    #[test]
    fn empty_inputs_rejected() {
        assert!(matches!(
            aggregate_descriptor(&[]),
            Err(Error::EmptyInput(_))
        ));
        assert!(matches!(aggregate_softmax(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn descriptor_unit_norm() {
        let mut rng = Rng::new(31);
        let vs: Vec<Tensor> = (0..5)
            .map(|_| Tensor::fill_uniform(&[64], -1.0, 1.0, &mut rng).unwrap())
            .collect();
        let d = aggregate_descriptor(&vs).unwrap();
        let norm: f64 = d.data().iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() <= 1e-6, "norm {}", norm);
    }

    #[test]
    fn softmax_mean_and_identity() {
        let a = Tensor::from_vec(&[2], vec![0.8, 0.2]).unwrap();
        let b = Tensor::from_vec(&[2], vec![0.6, 0.4]).unwrap();
        let m = aggregate_softmax(&[a.clone(), b]).unwrap();
        assert!((m.data()[0] - 0.7).abs() <= 1e-7);
        assert!((m.data()[1] - 0.3).abs() <= 1e-7);

        let single = aggregate_softmax(&[a.clone()]).unwrap();
        assert_eq!(single.data(), a.data());

        let u = Tensor::filled(&[4], 0.25).unwrap();
        let m = aggregate_softmax(&[u.clone(), u.clone(), u]).unwrap();
        assert!(m.data().iter().all(|&x| (x - 0.25).abs() <= 1e-7));
    }

    #[test]
    fn aggregation_is_exactly_permutation_invariant() {
        let mut rng = Rng::new(17);
        let vs: Vec<Tensor> = (0..7)
            .map(|_| Tensor::fill_uniform(&[33], -2.0, 2.0, &mut rng).unwrap())
            .collect();
        let base_d = aggregate_descriptor(&vs).unwrap();
        let base_s = aggregate_softmax(&vs).unwrap();
        let mut shuffled = vs.clone();
        for seed in 0..5 {
            Rng::new(seed).shuffle(&mut shuffled);
            assert_eq!(aggregate_descriptor(&shuffled).unwrap().data(), base_d.data());
            assert_eq!(aggregate_softmax(&shuffled).unwrap().data(), base_s.data());
        }
    }

    #[test]
    fn descriptor_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = Rng::new(41);
        let descriptors: Vec<VideoDescriptor> = (0..3)
            .map(|i| VideoDescriptor {
                video_id: format!("v{}", i),
                vector: Tensor::fill_uniform(&[16], -1.0, 1.0, &mut rng).unwrap(),
                label: Some(i % 2),
            })
            .collect();
        let t_path = dir.path().join("feats.stt");
        let c_path = dir.path().join("feats.csv");
        write_descriptors(&descriptors, &t_path, &c_path).unwrap();
        let back = read_descriptors(&t_path, &c_path).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in descriptors.iter().zip(&back) {
            assert_eq!(a.video_id, b.video_id);
            assert_eq!(a.label, b.label);
            assert_eq!(a.vector.data(), b.vector.data());
        }
    }
}
