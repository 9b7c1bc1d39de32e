//! Declarative network specifications: layer geometry, shape chaining,
//! parameter and FLOP accounting, and the constructors for the two
//! architectures.
//!
//! A `NetSpec` is pure data. Instantiating it with weights happens in
//! [`network`].

mod builders;
pub mod network;

pub use builders::{build_c3d, build_r2p1d_34, build_tiny_r2p1d};
pub use network::Network;

use crate::error::{Error, Result};
use crate::ops::conv_out_extent;

/// Midplane channel count of a (2+1)D factorization: the largest M such
/// that the spatial 1xdxd (n_in -> M) plus temporal tx1x1 (M -> n_out)
/// weight count does not exceed the full txdxd 3D convolution it replaces.
///
/// M = floor(t * d^2 * n_in * n_out / (d^2 * n_in + t * n_out)), clamped to
/// at least one channel for degenerate tiny configurations.
pub fn midplane_channels(t: usize, d: usize, n_in: usize, n_out: usize) -> usize {
    let full = t * d * d * n_in * n_out;
    let per_mid = d * d * n_in + t * n_out;
    (full / per_mid).max(1)
}

/// Weight count of a full t x d x d convolution (bias excluded).
pub fn full_conv_weight_count(t: usize, d: usize, n_in: usize, n_out: usize) -> usize {
    t * d * d * n_in * n_out
}

/// Weight count of the parameter-matched (2+1)D pair (bias and batchnorm
/// excluded).
pub fn factorized_conv_weight_count(t: usize, d: usize, n_in: usize, n_out: usize) -> usize {
    let m = midplane_channels(t, d, n_in, n_out);
    d * d * n_in * m + t * m * n_out
}

/// One layer of a network description.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSpec {
    Conv3d {
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize, usize),
        stride: (usize, usize, usize),
        padding: (usize, usize, usize),
        bias: bool,
    },
    /// Factorized spatiotemporal convolution: spatial 1xdxd into `midplanes`
    /// channels, batchnorm, ReLU, temporal tx1x1 out. Shape-preserving
    /// padding (floor(d/2) spatially, floor(t/2) temporally); the spatial
    /// stride applies to the 2D convolution and the temporal stride to the
    /// 1D convolution.
    Conv2p1d {
        in_channels: usize,
        out_channels: usize,
        t: usize,
        d: usize,
        stride: (usize, usize, usize),
        midplanes: usize,
        temporal_bias: bool,
    },
    MaxPool3d {
        kernel: (usize, usize, usize),
        stride: (usize, usize, usize),
    },
    BatchNorm {
        channels: usize,
    },
    Relu,
    /// Two (2+1)D convolutions (3x3x3 factorized) with batchnorm, an
    /// identity or projected shortcut, and a final ReLU after the add.
    ResidualBlock {
        in_channels: usize,
        out_channels: usize,
        stride: usize,
    },
    GlobalAvgPool,
    Fc {
        in_features: usize,
        out_features: usize,
    },
    Softmax,
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv3d { .. } => "conv3d",
            LayerSpec::Conv2p1d { .. } => "conv2p1d",
            LayerSpec::MaxPool3d { .. } => "maxpool3d",
            LayerSpec::BatchNorm { .. } => "batchnorm",
            LayerSpec::Relu => "relu",
            LayerSpec::ResidualBlock { .. } => "residual_block",
            LayerSpec::GlobalAvgPool => "global_avg_pool",
            LayerSpec::Fc { .. } => "fc",
            LayerSpec::Softmax => "softmax",
        }
    }

    /// Chain one (C, T, H, W) shape through this layer.
    pub fn output_shape(&self, input: [usize; 4]) -> Result<[usize; 4]> {
        let [c, t, h, w] = input;
        match *self {
            LayerSpec::Conv3d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                ..
            } => {
                if c != in_channels {
                    return Err(Error::Geometry(format!(
                        "conv3d expects {} channels, got {}",
                        in_channels, c
                    )));
                }
                Ok([
                    out_channels,
                    conv_out_extent(t, kernel.0, stride.0, padding.0)?,
                    conv_out_extent(h, kernel.1, stride.1, padding.1)?,
                    conv_out_extent(w, kernel.2, stride.2, padding.2)?,
                ])
            }
            LayerSpec::Conv2p1d { .. } => {
                let mut shape = input;
                for (_, sub) in self.expand("x")? {
                    shape = sub.output_shape(shape)?;
                }
                Ok(shape)
            }
            LayerSpec::MaxPool3d { kernel, stride } => Ok([
                c,
                conv_out_extent(t, kernel.0, stride.0, 0)?,
                conv_out_extent(h, kernel.1, stride.1, 0)?,
                conv_out_extent(w, kernel.2, stride.2, 0)?,
            ]),
            LayerSpec::BatchNorm { channels } => {
                if c != channels {
                    return Err(Error::Geometry(format!(
                        "batchnorm expects {} channels, got {}",
                        channels, c
                    )));
                }
                Ok(input)
            }
            LayerSpec::Relu | LayerSpec::Softmax => Ok(input),
            LayerSpec::ResidualBlock {
                in_channels,
                out_channels,
                stride,
            } => {
                if c != in_channels {
                    return Err(Error::Geometry(format!(
                        "residual block expects {} channels, got {}",
                        in_channels, c
                    )));
                }
                Ok([
                    out_channels,
                    conv_out_extent(t, 3, stride, 1)?,
                    conv_out_extent(h, 3, stride, 1)?,
                    conv_out_extent(w, 3, stride, 1)?,
                ])
            }
            LayerSpec::GlobalAvgPool => Ok([c, 1, 1, 1]),
            LayerSpec::Fc {
                in_features,
                out_features,
            } => {
                let flat = c * t * h * w;
                if flat != in_features {
                    return Err(Error::Geometry(format!(
                        "fc expects {} inputs, got {} (= {}x{}x{}x{})",
                        in_features, flat, c, t, h, w
                    )));
                }
                Ok([out_features, 1, 1, 1])
            }
        }
    }

    /// Expand a composite layer into primitive named sub-layers. Primitive
    /// layers expand to themselves. Residual blocks are expanded by the
    /// instantiator instead (they are not a straight-line sequence).
    pub fn expand(&self, name: &str) -> Result<Vec<(String, LayerSpec)>> {
        match *self {
            LayerSpec::Conv2p1d {
                in_channels,
                out_channels,
                t,
                d,
                stride,
                midplanes,
                temporal_bias,
            } => Ok(build_2p1d_block(
                name,
                t,
                d,
                in_channels,
                out_channels,
                stride,
                midplanes,
                temporal_bias,
            )),
            _ => Ok(vec![(name.to_string(), self.clone())]),
        }
    }

    /// Trainable parameter tensors (name suffix, shape). Running batchnorm
    /// statistics are state, not parameters, and are not listed here.
    pub fn param_shapes(&self, name: &str) -> Vec<(String, Vec<usize>)> {
        match *self {
            LayerSpec::Conv3d {
                in_channels,
                out_channels,
                kernel,
                bias,
                ..
            } => {
                let mut v = vec![(
                    format!("{name}.weight"),
                    vec![out_channels, in_channels, kernel.0, kernel.1, kernel.2],
                )];
                if bias {
                    v.push((format!("{name}.bias"), vec![out_channels]));
                }
                v
            }
            LayerSpec::Conv2p1d { .. } => self
                .expand(name)
                .expect("conv2p1d expands")
                .iter()
                .flat_map(|(n, s)| s.param_shapes(n))
                .collect(),
            LayerSpec::BatchNorm { channels } => vec![
                (format!("{name}.gamma"), vec![channels]),
                (format!("{name}.beta"), vec![channels]),
            ],
            LayerSpec::ResidualBlock {
                in_channels,
                out_channels,
                stride,
            } => {
                let mut v = Vec::new();
                for (n, s) in residual_block_parts(name, in_channels, out_channels, stride) {
                    v.extend(s.param_shapes(&n));
                }
                v
            }
            LayerSpec::Fc {
                in_features,
                out_features,
            } => vec![
                (format!("{name}.weight"), vec![in_features, out_features]),
                (format!("{name}.bias"), vec![out_features]),
            ],
            LayerSpec::MaxPool3d { .. }
            | LayerSpec::Relu
            | LayerSpec::GlobalAvgPool
            | LayerSpec::Softmax => Vec::new(),
        }
    }

    /// Multiply-accumulate FLOPs (2 per MAC) of the conv/fc weights for one
    /// input of the given shape. Bias adds, batchnorm, pooling and
    /// activations are not counted.
    pub fn flops(&self, input: [usize; 4], batch: usize) -> Result<u64> {
        let out = self.output_shape(input)?;
        Ok(match *self {
            LayerSpec::Conv3d {
                in_channels,
                kernel,
                ..
            } => {
                let out_elems = batch * out.iter().product::<usize>();
                2 * (out_elems * in_channels * kernel.0 * kernel.1 * kernel.2) as u64
            }
            LayerSpec::Conv2p1d { .. } => {
                let mut total = 0u64;
                let mut shape = input;
                for (_, sub) in self.expand("x")? {
                    total += sub.flops(shape, batch)?;
                    shape = sub.output_shape(shape)?;
                }
                total
            }
            LayerSpec::ResidualBlock {
                in_channels,
                out_channels,
                stride,
            } => {
                let mut total = 0u64;
                let mut main_shape = input;
                let mut short_shape = input;
                for (n, s) in residual_block_parts("x", in_channels, out_channels, stride) {
                    if n.contains(".down.") {
                        total += s.flops(short_shape, batch)?;
                        short_shape = s.output_shape(short_shape)?;
                    } else {
                        total += s.flops(main_shape, batch)?;
                        main_shape = s.output_shape(main_shape)?;
                    }
                }
                total
            }
            LayerSpec::Fc {
                in_features,
                out_features,
            } => 2 * (batch * in_features * out_features) as u64,
            _ => 0,
        })
    }

    /// ReLU layers contributed by this spec, counting the inner rectification
    /// of factorized convolutions and everything inside residual blocks.
    pub fn relu_count(&self) -> usize {
        match *self {
            LayerSpec::Relu => 1,
            LayerSpec::Conv2p1d { .. } => 1,
            // two factorized convs (1 inner ReLU each), the ReLU between
            // them, and the ReLU after the shortcut add
            LayerSpec::ResidualBlock { .. } => 4,
            _ => 0,
        }
    }
}

/// The (2+1)D block: spatial 1xdxd convolution into M midplanes, batchnorm,
/// ReLU, temporal tx1x1 convolution. Exactly one more ReLU than the single
/// 3D convolution it replaces.
#[allow(clippy::too_many_arguments)]
pub fn build_2p1d_block(
    name: &str,
    t: usize,
    d: usize,
    n_in: usize,
    n_out: usize,
    stride: (usize, usize, usize),
    midplanes: usize,
    temporal_bias: bool,
) -> Vec<(String, LayerSpec)> {
    vec![
        (
            format!("{name}.spatial"),
            LayerSpec::Conv3d {
                in_channels: n_in,
                out_channels: midplanes,
                kernel: (1, d, d),
                stride: (1, stride.1, stride.2),
                padding: (0, d / 2, d / 2),
                bias: false,
            },
        ),
        (format!("{name}.bn"), LayerSpec::BatchNorm { channels: midplanes }),
        (format!("{name}.relu"), LayerSpec::Relu),
        (
            format!("{name}.temporal"),
            LayerSpec::Conv3d {
                in_channels: midplanes,
                out_channels: n_out,
                kernel: (t, 1, 1),
                stride: (stride.0, 1, 1),
                padding: (t / 2, 0, 0),
                bias: temporal_bias,
            },
        ),
    ]
}

/// Internal structure of a residual block: main path `a` (strided) then `b`,
/// plus the projection shortcut parts when downsampling or changing width.
/// Used by shape/param/FLOP accounting and by the instantiator.
pub fn residual_block_parts(
    name: &str,
    in_channels: usize,
    out_channels: usize,
    stride: usize,
) -> Vec<(String, LayerSpec)> {
    let mut parts = vec![
        (
            format!("{name}.a"),
            LayerSpec::Conv2p1d {
                in_channels,
                out_channels,
                t: 3,
                d: 3,
                stride: (stride, stride, stride),
                midplanes: midplane_channels(3, 3, in_channels, out_channels),
                temporal_bias: false,
            },
        ),
        (format!("{name}.bn_a"), LayerSpec::BatchNorm { channels: out_channels }),
        (format!("{name}.relu_a"), LayerSpec::Relu),
        (
            format!("{name}.b"),
            LayerSpec::Conv2p1d {
                in_channels: out_channels,
                out_channels,
                t: 3,
                d: 3,
                stride: (1, 1, 1),
                midplanes: midplane_channels(3, 3, out_channels, out_channels),
                temporal_bias: false,
            },
        ),
        (format!("{name}.bn_b"), LayerSpec::BatchNorm { channels: out_channels }),
    ];
    if stride != 1 || in_channels != out_channels {
        parts.push((
            format!("{name}.down.conv"),
            LayerSpec::Conv3d {
                in_channels,
                out_channels,
                kernel: (1, 1, 1),
                stride: (stride, stride, stride),
                padding: (0, 0, 0),
                bias: false,
            },
        ));
        parts.push((
            format!("{name}.down.bn"),
            LayerSpec::BatchNorm { channels: out_channels },
        ));
    }
    parts
}

/// An ordered network description with its input contract (C, T, H, W).
#[derive(Debug, Clone)]
pub struct NetSpec {
    pub name: String,
    pub input: [usize; 4],
    pub layers: Vec<(String, LayerSpec)>,
}

impl NetSpec {
    /// Chain shapes through every layer; the result holds the output shape
    /// of each layer in order. Errors if any two consecutive layers do not
    /// fit together.
    pub fn shape_chain(&self) -> Result<Vec<[usize; 4]>> {
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut shape = self.input;
        for (name, layer) in &self.layers {
            shape = layer.output_shape(shape).map_err(|e| {
                Error::Geometry(format!("layer {:?}: {}", name, e))
            })?;
            shapes.push(shape);
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Result<[usize; 4]> {
        Ok(*self
            .shape_chain()?
            .last()
            .ok_or_else(|| Error::InvalidConfig("network has no layers".into()))?)
    }

    /// Output shape of the named layer.
    pub fn shape_after(&self, layer_name: &str) -> Result<[usize; 4]> {
        let chain = self.shape_chain()?;
        self.layers
            .iter()
            .position(|(n, _)| n == layer_name)
            .map(|i| chain[i])
            .ok_or_else(|| Error::InvalidConfig(format!("no layer named {:?}", layer_name)))
    }

    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.layers
            .iter()
            .flat_map(|(name, layer)| layer.param_shapes(name))
            .collect()
    }

    /// Total trainable parameters, by enumeration.
    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|(_, shape)| shape.iter().product::<usize>())
            .sum()
    }

    /// Total conv/fc multiply-accumulate FLOPs for a batch of the given size.
    pub fn count_flops(&self, batch: usize) -> Result<u64> {
        let mut total = 0u64;
        let mut shape = self.input;
        for (_, layer) in &self.layers {
            total += layer.flops(shape, batch)?;
            shape = layer.output_shape(shape)?;
        }
        Ok(total)
    }

    /// ReLU count attributable to convolutional stages: everything before
    /// the first fully connected layer, including rectifications inside
    /// factorized convolutions and residual blocks.
    pub fn conv_stage_relu_count(&self) -> usize {
        self.layers
            .iter()
            .take_while(|(_, l)| !matches!(l, LayerSpec::Fc { .. }))
            .map(|(_, l)| l.relu_count())
            .sum()
    }

    /// Replace every plain 3D convolution with its parameter-matched (2+1)D
    /// block. Kernels must be square in space and carry shape-preserving
    /// padding, which holds for every conv this crate builds.
    pub fn convert_convs_to_2p1d(&self) -> Result<NetSpec> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for (name, layer) in &self.layers {
            let new = match *layer {
                LayerSpec::Conv3d {
                    in_channels,
                    out_channels,
                    kernel: (kt, kh, kw),
                    stride,
                    padding: (pt, ph, pw),
                    bias,
                } => {
                    if kh != kw {
                        return Err(Error::Geometry(format!(
                            "layer {:?}: cannot factorize non-square spatial kernel {}x{}",
                            name, kh, kw
                        )));
                    }
                    if pt != kt / 2 || ph != kh / 2 || pw != kw / 2 {
                        return Err(Error::Geometry(format!(
                            "layer {:?}: factorization requires shape-preserving padding",
                            name
                        )));
                    }
                    LayerSpec::Conv2p1d {
                        in_channels,
                        out_channels,
                        t: kt,
                        d: kh,
                        stride,
                        midplanes: midplane_channels(kt, kh, in_channels, out_channels),
                        temporal_bias: bias,
                    }
                }
                ref other => other.clone(),
            };
            layers.push((name.clone(), new));
        }
        Ok(NetSpec {
            name: format!("{}-2p1d", self.name),
            input: self.input,
            layers,
        })
    }

    /// Human-readable manifest, one layer per line:
    /// name, kind, geometry, output shape CxTxHxW.
    pub fn manifest(&self) -> Result<String> {
        let chain = self.shape_chain()?;
        let mut out = format!(
            "# net {} input {}x{}x{}x{} params {}\n",
            self.name, self.input[0], self.input[1], self.input[2], self.input[3],
            self.param_count()
        );
        for ((name, layer), shape) in self.layers.iter().zip(&chain) {
            let geom = match *layer {
                LayerSpec::Conv3d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    bias,
                } => format!(
                    "k={}x{}x{} s={}x{}x{} p={}x{}x{} {}->{}{}",
                    kernel.0, kernel.1, kernel.2, stride.0, stride.1, stride.2,
                    padding.0, padding.1, padding.2, in_channels, out_channels,
                    if bias { "" } else { " nobias" }
                ),
                LayerSpec::Conv2p1d {
                    in_channels,
                    out_channels,
                    t,
                    d,
                    stride,
                    midplanes,
                    ..
                } => format!(
                    "t={} d={} s={}x{}x{} {}->{} mid={}",
                    t, d, stride.0, stride.1, stride.2, in_channels, out_channels, midplanes
                ),
                LayerSpec::MaxPool3d { kernel, stride } => format!(
                    "k={}x{}x{} s={}x{}x{}",
                    kernel.0, kernel.1, kernel.2, stride.0, stride.1, stride.2
                ),
                LayerSpec::BatchNorm { channels } => format!("c={}", channels),
                LayerSpec::ResidualBlock {
                    in_channels,
                    out_channels,
                    stride,
                } => format!("{}->{} stride {}", in_channels, out_channels, stride),
                LayerSpec::Fc {
                    in_features,
                    out_features,
                } => format!("{}->{}", in_features, out_features),
                LayerSpec::Relu | LayerSpec::Softmax | LayerSpec::GlobalAvgPool => String::new(),
            };
            out.push_str(&format!(
                "{:<14} {:<14} {:<44} out {}x{}x{}x{}\n",
                name,
                layer.kind(),
                geom,
                shape[0],
                shape[1],
                shape[2],
                shape[3]
            ));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midplane_matches_hand_counts() {
        // 3*9*64*64 / (9*64 + 3*64) = 110592 / 768 = 144 exactly
        assert_eq!(midplane_channels(3, 3, 64, 64), 144);
        assert_eq!(full_conv_weight_count(3, 3, 64, 64), 110_592);
        assert_eq!(factorized_conv_weight_count(3, 3, 64, 64), 110_592);

        // 3*9*3*64 / (27 + 192) = 5184 / 219 -> 23
        assert_eq!(midplane_channels(3, 3, 3, 64), 23);
        assert_eq!(factorized_conv_weight_count(3, 3, 3, 64), 5037);
        assert_eq!(full_conv_weight_count(3, 3, 3, 64), 5184);
    }

    #[test]
    fn midplane_no_temporal_extent() {
        // t = 1 specializes to d^2 n_in n_out / (d^2 n_in + n_out)
        let (d, n_in, n_out) = (3usize, 4usize, 8usize);
        let expect = (d * d * n_in * n_out) / (d * d * n_in + n_out);
        assert_eq!(midplane_channels(1, d, n_in, n_out), expect);
    }

    #[test]
    fn block_shape_preserving_and_single_relu() {
        let block = LayerSpec::Conv2p1d {
            in_channels: 64,
            out_channels: 64,
            t: 3,
            d: 3,
            stride: (1, 1, 1),
            midplanes: midplane_channels(3, 3, 64, 64),
            temporal_bias: false,
        };
        assert_eq!(block.output_shape([64, 8, 14, 14]).unwrap(), [64, 8, 14, 14]);
        assert_eq!(block.relu_count(), 1);
        let bare = LayerSpec::Conv3d {
            in_channels: 64,
            out_channels: 64,
            kernel: (3, 3, 3),
            stride: (1, 1, 1),
            padding: (1, 1, 1),
            bias: false,
        };
        assert_eq!(bare.relu_count(), 0);
    }

    #[test]
    fn block_params_match_midplane_count() {
        let block = LayerSpec::Conv2p1d {
            in_channels: 64,
            out_channels: 64,
            t: 3,
            d: 3,
            stride: (1, 1, 1),
            midplanes: 144,
            temporal_bias: false,
        };
        // conv weights only: skip the batchnorm gamma/beta
        let weight_total: usize = block
            .param_shapes("blk")
            .iter()
            .filter(|(n, _)| n.ends_with(".weight"))
            .map(|(_, s)| s.iter().product::<usize>())
            .sum();
        assert_eq!(weight_total, factorized_conv_weight_count(3, 3, 64, 64));
    }

    #[test]
    fn single_conv_param_count() {
        let conv = LayerSpec::Conv3d {
            in_channels: 64,
            out_channels: 64,
            kernel: (3, 3, 3),
            stride: (1, 1, 1),
            padding: (1, 1, 1),
            bias: true,
        };
        let total: usize = conv
            .param_shapes("c")
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum();
        assert_eq!(total, 110_592 + 64);
    }

    #[test]
    fn flops_scale_linearly_with_batch() {
        let spec = build_c3d(2).unwrap();
        let f1 = spec.count_flops(1).unwrap();
        let f2 = spec.count_flops(2).unwrap();
        assert_eq!(f2, 2 * f1);
        assert_eq!(spec.param_count(), {
            let again = build_c3d(2).unwrap();
            again.param_count()
        });
    }

    #[test]
    fn factorized_flops_match_param_ratio_at_stride_one() {
        // with stride 1 the conv FLOPs are 2 * positions * weight count, so
        // the factorized/full FLOP gap equals the weight-count gap
        let full = LayerSpec::Conv3d {
            in_channels: 16,
            out_channels: 16,
            kernel: (3, 3, 3),
            stride: (1, 1, 1),
            padding: (1, 1, 1),
            bias: false,
        };
        let fact = LayerSpec::Conv2p1d {
            in_channels: 16,
            out_channels: 16,
            t: 3,
            d: 3,
            stride: (1, 1, 1),
            midplanes: midplane_channels(3, 3, 16, 16),
            temporal_bias: false,
        };
        let shape = [16, 4, 10, 10];
        let positions = 4 * 10 * 10u64;
        let f_full = full.flops(shape, 1).unwrap();
        let f_fact = fact.flops(shape, 1).unwrap();
        assert_eq!(f_full, 2 * positions * full_conv_weight_count(3, 3, 16, 16) as u64);
        assert_eq!(
            f_fact,
            2 * positions * factorized_conv_weight_count(3, 3, 16, 16) as u64
        );
    }

    #[test]
    fn conversion_doubles_conv_stage_relus() {
        let c3d = build_c3d(2).unwrap();
        let converted = c3d.convert_convs_to_2p1d().unwrap();
        assert_eq!(
            converted.conv_stage_relu_count(),
            2 * c3d.conv_stage_relu_count()
        );
        // fully-connected ReLUs are untouched by the count
        assert_eq!(c3d.conv_stage_relu_count(), 8);
    }
}
