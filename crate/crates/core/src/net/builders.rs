//! Constructors for the concrete architectures.

use crate::error::{Error, Result};
use crate::net::{midplane_channels, LayerSpec, NetSpec};

/// VGG-style C3D: eight 3x3x3 convolutions (stride 1, padding 1), five max
/// pools (the first 1x2x2 to keep early temporal information, the rest
/// 2x2x2), two 4096-unit fully connected layers and a softmax head.
/// Input contract: 3 x 16 x 112 x 112.
pub fn build_c3d(num_classes: usize) -> Result<NetSpec> {
    if num_classes < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 classes, got {}",
            num_classes
        )));
    }
    let conv = |n_in: usize, n_out: usize| LayerSpec::Conv3d {
        in_channels: n_in,
        out_channels: n_out,
        kernel: (3, 3, 3),
        stride: (1, 1, 1),
        padding: (1, 1, 1),
        bias: true,
    };
    let pool = |kt: usize| LayerSpec::MaxPool3d {
        kernel: (kt, 2, 2),
        stride: (kt, 2, 2),
    };

    let mut layers: Vec<(String, LayerSpec)> = Vec::new();
    let mut push = |name: &str, l: LayerSpec| layers.push((name.to_string(), l));

    push("conv1", conv(3, 64));
    push("relu1", LayerSpec::Relu);
    push("pool1", pool(1));
    push("conv2", conv(64, 128));
    push("relu2", LayerSpec::Relu);
    push("pool2", pool(2));
    push("conv3a", conv(128, 256));
    push("relu3a", LayerSpec::Relu);
    push("conv3b", conv(256, 256));
    push("relu3b", LayerSpec::Relu);
    push("pool3", pool(2));
    push("conv4a", conv(256, 512));
    push("relu4a", LayerSpec::Relu);
    push("conv4b", conv(512, 512));
    push("relu4b", LayerSpec::Relu);
    push("pool4", pool(2));
    push("conv5a", conv(512, 512));
    push("relu5a", LayerSpec::Relu);
    push("conv5b", conv(512, 512));
    push("relu5b", LayerSpec::Relu);
    push("pool5", pool(2));
    // pool5 leaves 512 x 1 x 3 x 3 under floor geometry
    push(
        "fc6",
        LayerSpec::Fc {
            in_features: 512 * 3 * 3,
            out_features: 4096,
        },
    );
    push("relu6", LayerSpec::Relu);
    push(
        "fc7",
        LayerSpec::Fc {
            in_features: 4096,
            out_features: 4096,
        },
    );
    push("relu7", LayerSpec::Relu);
    push(
        "fc8",
        LayerSpec::Fc {
            in_features: 4096,
            out_features: num_classes,
        },
    );
    push("softmax", LayerSpec::Softmax);

    let spec = NetSpec {
        name: "c3d".into(),
        input: [3, 16, 112, 112],
        layers,
    };
    spec.shape_chain()?;
    Ok(spec)
}

/// 34-layer R(2+1)D residual network. All convolutions, including the first
/// 3x7x7 one, are factorized (2+1)D blocks with parameter-matched
/// midplanes. Stage multiplicities are (3, 4, 6, 3); the first block of
/// stages 3..5 downsamples T, H and W by 2 through a projected shortcut.
/// Input contract: 3 x L x 112 x 112 with L divisible by 8.
pub fn build_r2p1d_34(num_classes: usize, input_frames: usize) -> Result<NetSpec> {
    if num_classes < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 classes, got {}",
            num_classes
        )));
    }
    if input_frames == 0 || input_frames % 8 != 0 {
        return Err(Error::Geometry(format!(
            "input frames {} must be divisible by 8 (three temporal halvings)",
            input_frames
        )));
    }

    let mut layers: Vec<(String, LayerSpec)> = Vec::new();
    layers.push((
        "conv1".into(),
        LayerSpec::Conv2p1d {
            in_channels: 3,
            out_channels: 64,
            t: 3,
            d: 7,
            stride: (1, 2, 2),
            midplanes: midplane_channels(3, 7, 3, 64),
            temporal_bias: false,
        },
    ));
    layers.push(("bn1".into(), LayerSpec::BatchNorm { channels: 64 }));
    layers.push(("relu1".into(), LayerSpec::Relu));

    let stages: [(usize, usize, usize); 4] =
        [(2, 64, 3), (3, 128, 4), (4, 256, 6), (5, 512, 3)];
    let mut channels = 64;
    for (stage, width, blocks) in stages {
        for b in 1..=blocks {
            let stride = if stage > 2 && b == 1 { 2 } else { 1 };
            layers.push((
                format!("conv{}_{}", stage, b),
                LayerSpec::ResidualBlock {
                    in_channels: channels,
                    out_channels: width,
                    stride,
                },
            ));
            channels = width;
        }
    }

    layers.push(("pool".into(), LayerSpec::GlobalAvgPool));
    layers.push((
        "fc".into(),
        LayerSpec::Fc {
            in_features: 512,
            out_features: num_classes,
        },
    ));
    layers.push(("softmax".into(), LayerSpec::Softmax));

    let spec = NetSpec {
        name: "r2p1d34".into(),
        input: [3, input_frames, 112, 112],
        layers,
    };
    spec.shape_chain()?;
    Ok(spec)
}

/// Desk-scale R(2+1)D with two residual stages (8 then 16 channels) for the
/// synthetic direction experiments. The first convolution halves H and W.
pub fn build_tiny_r2p1d(num_classes: usize, input_frames: usize, frame_size: usize) -> Result<NetSpec> {
    if num_classes < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 classes, got {}",
            num_classes
        )));
    }
    if input_frames % 2 != 0 {
        return Err(Error::Geometry(format!(
            "input frames {} must be divisible by 2 (one temporal halving)",
            input_frames
        )));
    }
    let layers: Vec<(String, LayerSpec)> = vec![
        (
            "conv1".into(),
            LayerSpec::Conv2p1d {
                in_channels: 3,
                out_channels: 8,
                t: 3,
                d: 3,
                stride: (1, 2, 2),
                midplanes: midplane_channels(3, 3, 3, 8),
                temporal_bias: false,
            },
        ),
        ("bn1".into(), LayerSpec::BatchNorm { channels: 8 }),
        ("relu1".into(), LayerSpec::Relu),
        (
            "conv2_1".into(),
            LayerSpec::ResidualBlock {
                in_channels: 8,
                out_channels: 8,
                stride: 1,
            },
        ),
        (
            "conv3_1".into(),
            LayerSpec::ResidualBlock {
                in_channels: 8,
                out_channels: 16,
                stride: 2,
            },
        ),
        ("pool".into(), LayerSpec::GlobalAvgPool),
        (
            "fc".into(),
            LayerSpec::Fc {
                in_features: 16,
                out_features: num_classes,
            },
        ),
        ("softmax".into(), LayerSpec::Softmax),
    ];
    let spec = NetSpec {
        name: "tiny-r2p1d".into(),
        input: [3, input_frames, frame_size, frame_size],
        layers,
    };
    spec.shape_chain()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn c3d_geometry() {
        let spec = build_c3d(487).unwrap();
        let convs = spec
            .layers
            .iter()
            .filter(|(_, l)| matches!(l, LayerSpec::Conv3d { .. }))
            .count();
        let pools = spec
            .layers
            .iter()
            .filter(|(_, l)| matches!(l, LayerSpec::MaxPool3d { .. }))
            .count();
        assert_eq!(convs, 8);
        assert_eq!(pools, 5);

        // pool1 preserves the temporal extent
        assert_eq!(spec.shape_after("pool1").unwrap(), [64, 16, 56, 56]);
        // fc6 is 4096 wide
        assert_eq!(spec.shape_after("fc6").unwrap(), [4096, 1, 1, 1]);
        assert_eq!(spec.output_shape().unwrap(), [487, 1, 1, 1]);
    }

    #[test]
    fn c3d_channel_progression() {
        let spec = build_c3d(2).unwrap();
        let widths: Vec<usize> = spec
            .layers
            .iter()
            .filter_map(|(_, l)| match l {
                LayerSpec::Conv3d { out_channels, .. } => Some(*out_channels),
                _ => None,
            })
            .collect();
        assert_eq!(widths, [64, 128, 256, 256, 512, 512, 512, 512]);
    }

    #[test]
    fn r2p1d_table_shapes_at_32_frames() {
        let spec = build_r2p1d_34(2, 32).unwrap();
        assert_eq!(spec.shape_after("conv1").unwrap(), [64, 32, 56, 56]);
        assert_eq!(spec.shape_after("conv2_3").unwrap(), [64, 32, 56, 56]);
        assert_eq!(spec.shape_after("conv3_4").unwrap(), [128, 16, 28, 28]);
        assert_eq!(spec.shape_after("conv4_6").unwrap(), [256, 8, 14, 14]);
        assert_eq!(spec.shape_after("conv5_3").unwrap(), [512, 4, 7, 7]);
        assert_eq!(spec.shape_after("pool").unwrap(), [512, 1, 1, 1]);
    }

    #[test]
    fn r2p1d_block_multiplicities() {
        let spec = build_r2p1d_34(2, 32).unwrap();
        let count = |stage: usize| {
            spec.layers
                .iter()
                .filter(|(n, _)| n.starts_with(&format!("conv{}_", stage)))
                .count()
        };
        assert_eq!((count(2), count(3), count(4), count(5)), (3, 4, 6, 3));
    }

    #[test]
    fn r2p1d_34_weight_layers() {
        // 1 factorized conv1 + 2 per block * 16 blocks + 1 fc = 34
        let spec = build_r2p1d_34(2, 32).unwrap();
        let blocks = spec
            .layers
            .iter()
            .filter(|(_, l)| matches!(l, LayerSpec::ResidualBlock { .. }))
            .count();
        assert_eq!(1 + 2 * blocks + 1, 34);
    }

    #[test]
    fn r2p1d_rejects_bad_frame_count() {
        assert!(matches!(build_r2p1d_34(2, 30), Err(Error::Geometry(_))));
    }

    #[test]
    fn tiny_net_shape() {
        let spec = build_tiny_r2p1d(2, 8, 32).unwrap();
        assert_eq!(spec.shape_after("conv1").unwrap(), [8, 8, 16, 16]);
        assert_eq!(spec.shape_after("conv3_1").unwrap(), [16, 4, 8, 8]);
        assert_eq!(spec.output_shape().unwrap(), [2, 1, 1, 1]);
    }
}
