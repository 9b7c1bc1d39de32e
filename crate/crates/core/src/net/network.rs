//! Instantiated networks: parameters, forward/backward execution, and
//! checkpoint state.
//!
//! Composite specs (factorized convolutions, residual blocks) expand here
//! into primitive nodes. Checkpoint entry names are layer-qualified, e.g.
//! "conv2_1.a.spatial.weight".

use crate::error::{Error, Result};
use crate::net::{residual_block_parts, LayerSpec, NetSpec};
use crate::ops::{
    conv3d_backward, conv3d_forward, fc_backward, fc_forward, maxpool3d_backward,
    maxpool3d_forward, relu_backward, relu_forward, softmax, softmax_backward, BatchNorm, BnCache,
    BnMode, Checkpoint, Conv3dParams, FcParams,
};
use crate::tensor::{Rng, Tensor};

const BN_EPS: f32 = 1e-5;
const BN_MOMENTUM: f32 = 0.9;

enum NodeKind {
    Conv {
        params: Conv3dParams,
        has_bias: bool,
        grad_weights: Option<Tensor>,
        grad_bias: Option<Tensor>,
        cache: Option<Tensor>,
    },
    Pool {
        kernel: (usize, usize, usize),
        stride: (usize, usize, usize),
        cache: Option<(Vec<usize>, Vec<usize>)>,
    },
    Bn {
        bn: BatchNorm,
        grad_gamma: Option<Tensor>,
        grad_beta: Option<Tensor>,
        cache: Option<BnCache>,
    },
    Relu {
        cache: Option<Tensor>,
    },
    Fc {
        params: FcParams,
        grad_weights: Option<Tensor>,
        grad_bias: Option<Tensor>,
        cache: Option<(Tensor, Vec<usize>)>,
    },
    Softmax {
        cache: Option<Tensor>,
    },
    Gap {
        cache: Option<Vec<usize>>,
    },
    Residual {
        main: Vec<Node>,
        shortcut: Vec<Node>,
        cache: Option<Tensor>,
    },
}

struct Node {
    name: String,
    kind: NodeKind,
}

/// A network with materialized parameters.
pub struct Network {
    pub spec: NetSpec,
    nodes: Vec<Node>,
}

fn primitive_node(name: &str, spec: &LayerSpec, rng: &mut Rng) -> Result<Node> {
    let kind = match *spec {
        LayerSpec::Conv3d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            bias,
        } => NodeKind::Conv {
            params: Conv3dParams::init(in_channels, out_channels, kernel, stride, padding, rng)?,
            has_bias: bias,
            grad_weights: None,
            grad_bias: None,
            cache: None,
        },
        LayerSpec::MaxPool3d { kernel, stride } => NodeKind::Pool {
            kernel,
            stride,
            cache: None,
        },
        LayerSpec::BatchNorm { channels } => NodeKind::Bn {
            bn: BatchNorm::new(channels, BN_EPS, BN_MOMENTUM)?,
            grad_gamma: None,
            grad_beta: None,
            cache: None,
        },
        LayerSpec::Relu => NodeKind::Relu { cache: None },
        LayerSpec::Fc {
            in_features,
            out_features,
        } => NodeKind::Fc {
            params: FcParams::init(in_features, out_features, rng)?,
            grad_weights: None,
            grad_bias: None,
            cache: None,
        },
        LayerSpec::Softmax => NodeKind::Softmax { cache: None },
        LayerSpec::GlobalAvgPool => NodeKind::Gap { cache: None },
        LayerSpec::Conv2p1d { .. } | LayerSpec::ResidualBlock { .. } => {
            return Err(Error::InvalidConfig(format!(
                "layer {:?} is composite, expand it first",
                name
            )))
        }
    };
    Ok(Node {
        name: name.to_string(),
        kind,
    })
}

fn build_nodes(name: &str, spec: &LayerSpec, rng: &mut Rng, out: &mut Vec<Node>) -> Result<()> {
    match spec {
        LayerSpec::Conv2p1d { .. } => {
            for (sub_name, sub) in spec.expand(name)? {
                out.push(primitive_node(&sub_name, &sub, rng)?);
            }
        }
        LayerSpec::ResidualBlock {
            in_channels,
            out_channels,
            stride,
        } => {
            let mut main = Vec::new();
            let mut shortcut = Vec::new();
            for (part_name, part) in
                residual_block_parts(name, *in_channels, *out_channels, *stride)
            {
                let target = if part_name.contains(".down.") {
                    &mut shortcut
                } else {
                    &mut main
                };
                build_nodes(&part_name, &part, rng, target)?;
            }
            out.push(Node {
                name: name.to_string(),
                kind: NodeKind::Residual {
                    main,
                    shortcut,
                    cache: None,
                },
            });
        }
        other => out.push(primitive_node(name, other, rng)?),
    }
    Ok(())
}

fn forward_node(node: &mut Node, x: Tensor, mode: BnMode, keep: bool) -> Result<Tensor> {
    match &mut node.kind {
        NodeKind::Conv {
            params, cache, ..
        } => {
            let out = conv3d_forward(&x, params)?;
            *cache = keep.then_some(x);
            Ok(out)
        }
        NodeKind::Pool {
            kernel,
            stride,
            cache,
        } => {
            let (out, argmax) = maxpool3d_forward(&x, *kernel, *stride)?;
            *cache = keep.then(|| (x.shape().to_vec(), argmax));
            Ok(out)
        }
        NodeKind::Bn { bn, cache, .. } => {
            let (out, bn_cache) = bn.forward(&x, mode)?;
            *cache = if keep { bn_cache } else { None };
            Ok(out)
        }
        NodeKind::Relu { cache } => {
            let out = relu_forward(&x);
            *cache = keep.then_some(x);
            Ok(out)
        }
        NodeKind::Fc { params, cache, .. } => {
            let orig_shape = x.shape().to_vec();
            let flat = if x.rank() == 2 {
                x
            } else {
                let n = x.shape()[0];
                let rest = x.len() / n;
                x.reshape(&[n, rest])?
            };
            let out = fc_forward(&flat, params)?;
            *cache = keep.then_some((flat, orig_shape));
            Ok(out)
        }
        NodeKind::Softmax { cache } => {
            let out = softmax(&x)?;
            *cache = keep.then(|| out.clone());
            Ok(out)
        }
        NodeKind::Gap { cache } => {
            let shape = x.shape();
            if shape.len() != 5 {
                return Err(Error::InvalidShape(format!(
                    "global average pool expects rank-5 input, got {:?}",
                    shape
                )));
            }
            let (n, c) = (shape[0], shape[1]);
            let inner = shape[2] * shape[3] * shape[4];
            let mut out = Vec::with_capacity(n * c);
            for chunk in x.data().chunks_exact(inner) {
                let sum: f64 = chunk.iter().map(|&v| v as f64).sum();
                out.push((sum / inner as f64) as f32);
            }
            *cache = keep.then(|| x.shape().to_vec());
            Ok(Tensor::from_vec(&[n, c], out)?)
        }
        NodeKind::Residual {
            main,
            shortcut,
            cache,
        } => {
            let mut y = x.clone();
            for n in main.iter_mut() {
                y = forward_node(n, y, mode, keep)?;
            }
            let s = if shortcut.is_empty() {
                x
            } else {
                let mut s = x;
                for n in shortcut.iter_mut() {
                    s = forward_node(n, s, mode, keep)?;
                }
                s
            };
            let sum = y.add(&s)?;
            let out = relu_forward(&sum);
            *cache = keep.then_some(sum);
            Ok(out)
        }
    }
}

fn backward_node(node: &mut Node, grad: Tensor) -> Result<Tensor> {
    let missing = || Error::InvalidConfig("no forward cache for layer, run forward first".into());
    match &mut node.kind {
        NodeKind::Conv {
            params,
            grad_weights,
            grad_bias,
            cache,
            ..
        } => {
            let input = cache.take().ok_or_else(missing)?;
            let grads = conv3d_backward(&input, params, &grad)?;
            *grad_weights = Some(grads.grad_weights);
            *grad_bias = Some(grads.grad_bias);
            Ok(grads.grad_input)
        }
        NodeKind::Pool { cache, .. } => {
            let (shape, argmax) = cache.take().ok_or_else(missing)?;
            maxpool3d_backward(&shape, &argmax, &grad)
        }
        NodeKind::Bn {
            bn,
            grad_gamma,
            grad_beta,
            cache,
        } => {
            let bn_cache = cache.take().ok_or_else(missing)?;
            let grads = bn.backward(&bn_cache, &grad)?;
            *grad_gamma = Some(grads.grad_gamma);
            *grad_beta = Some(grads.grad_beta);
            Ok(grads.grad_input)
        }
        NodeKind::Relu { cache } => {
            let input = cache.take().ok_or_else(missing)?;
            relu_backward(&input, &grad)
        }
        NodeKind::Fc {
            params,
            grad_weights,
            grad_bias,
            cache,
        } => {
            let (flat, orig_shape) = cache.take().ok_or_else(missing)?;
            let grads = fc_backward(&flat, params, &grad)?;
            *grad_weights = Some(grads.grad_weights);
            *grad_bias = Some(grads.grad_bias);
            grads.grad_input.reshape(&orig_shape)
        }
        NodeKind::Softmax { cache } => {
            let probs = cache.take().ok_or_else(missing)?;
            softmax_backward(&probs, &grad)
        }
        NodeKind::Gap { cache } => {
            let shape = cache.take().ok_or_else(missing)?;
            let inner = shape[2] * shape[3] * shape[4];
            let scale = 1.0 / inner as f32;
            let mut out = vec![0.0f32; shape.iter().product()];
            for (chunk, &g) in out.chunks_exact_mut(inner).zip(grad.data()) {
                chunk.fill(g * scale);
            }
            Tensor::from_vec(&shape, out)
        }
        NodeKind::Residual {
            main,
            shortcut,
            cache,
        } => {
            let sum = cache.take().ok_or_else(missing)?;
            let mut g = relu_backward(&sum, &grad)?;
            let g_short = if shortcut.is_empty() {
                g.clone()
            } else {
                let mut gs = g.clone();
                for n in shortcut.iter_mut().rev() {
                    gs = backward_node(n, gs)?;
                }
                gs
            };
            for n in main.iter_mut().rev() {
                g = backward_node(n, g)?;
            }
            g.add(&g_short)
        }
    }
}

type ParamVisitor<'a> = dyn FnMut(&str, &mut Tensor, Option<&Tensor>) -> Result<()> + 'a;

fn visit_node_params(node: &mut Node, f: &mut ParamVisitor) -> Result<()> {
    let name = node.name.clone();
    match &mut node.kind {
        NodeKind::Conv {
            params,
            has_bias,
            grad_weights,
            grad_bias,
            ..
        } => {
            f(
                &format!("{name}.weight"),
                &mut params.weights,
                grad_weights.as_ref(),
            )?;
            if *has_bias {
                f(&format!("{name}.bias"), &mut params.bias, grad_bias.as_ref())?;
            }
        }
        NodeKind::Bn {
            bn,
            grad_gamma,
            grad_beta,
            ..
        } => {
            f(&format!("{name}.gamma"), &mut bn.gamma, grad_gamma.as_ref())?;
            f(&format!("{name}.beta"), &mut bn.beta, grad_beta.as_ref())?;
        }
        NodeKind::Fc {
            params,
            grad_weights,
            grad_bias,
            ..
        } => {
            f(
                &format!("{name}.weight"),
                &mut params.weights,
                grad_weights.as_ref(),
            )?;
            f(&format!("{name}.bias"), &mut params.bias, grad_bias.as_ref())?;
        }
        NodeKind::Residual { main, shortcut, .. } => {
            for n in main.iter_mut().chain(shortcut.iter_mut()) {
                visit_node_params(n, f)?;
            }
        }
        _ => {}
    }
    Ok(())
}

fn visit_node_state(node: &mut Node, f: &mut ParamVisitor) -> Result<()> {
    visit_node_params(node, f)?;
    let name = node.name.clone();
    match &mut node.kind {
        NodeKind::Bn { bn, .. } => {
            f(&format!("{name}.running_mean"), &mut bn.running_mean, None)?;
            f(&format!("{name}.running_var"), &mut bn.running_var, None)?;
        }
        NodeKind::Residual { main, shortcut, .. } => {
            // parameters were already visited above; add only the nested
            // running statistics here
            for n in main.iter_mut().chain(shortcut.iter_mut()) {
                let inner_name = n.name.clone();
                if let NodeKind::Bn { bn, .. } = &mut n.kind {
                    f(&format!("{inner_name}.running_mean"), &mut bn.running_mean, None)?;
                    f(&format!("{inner_name}.running_var"), &mut bn.running_var, None)?;
                } else if matches!(n.kind, NodeKind::Residual { .. }) {
                    visit_node_state(n, f)?;
                }
            }
        }
        _ => {}
    }
    Ok(())
}

impl Network {
    /// Materialize a spec with fresh seeded parameters.
    pub fn from_spec(spec: &NetSpec, rng: &mut Rng) -> Result<Network> {
        spec.shape_chain()?;
        let mut nodes = Vec::new();
        for (name, layer) in &spec.layers {
            build_nodes(name, layer, rng, &mut nodes)?;
        }
        Ok(Network {
            spec: spec.clone(),
            nodes,
        })
    }

    /// Training forward: batch statistics for batchnorm, caches kept for a
    /// following [`Network::backward`].
    pub fn forward_train(&mut self, input: &Tensor) -> Result<Tensor> {
        self.forward_impl(input, BnMode::Train, true, None)
    }

    /// Inference forward: running statistics, no caches.
    pub fn forward_eval(&mut self, input: &Tensor) -> Result<Tensor> {
        self.forward_impl(input, BnMode::Infer, false, None)
    }

    /// Inference forward that stops after the named top-level layer and
    /// returns its output (e.g. "fc6" activations).
    pub fn forward_eval_to(&mut self, input: &Tensor, stop_after: &str) -> Result<Tensor> {
        if !self.nodes.iter().any(|n| n.name == stop_after) {
            return Err(Error::InvalidConfig(format!(
                "no layer named {:?}",
                stop_after
            )));
        }
        self.forward_impl(input, BnMode::Infer, false, Some(stop_after))
    }

    fn forward_impl(
        &mut self,
        input: &Tensor,
        mode: BnMode,
        keep: bool,
        stop_after: Option<&str>,
    ) -> Result<Tensor> {
        let mut x = input.clone();
        for node in self.nodes.iter_mut() {
            x = forward_node(node, x, mode, keep)?;
            if stop_after == Some(node.name.as_str()) {
                return Ok(x);
            }
        }
        Ok(x)
    }

    /// Backpropagate from a gradient at the network output. Parameter
    /// gradients are stored per layer; the return value is the gradient at
    /// the input. Consumes the forward caches.
    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let mut g = grad_out.clone();
        for node in self.nodes.iter_mut().rev() {
            g = backward_node(node, g)?;
        }
        Ok(g)
    }

    /// Visit every trainable parameter in a fixed traversal order with its
    /// gradient from the most recent backward pass (None if never computed).
    pub fn visit_params(
        &mut self,
        mut f: impl FnMut(&str, &mut Tensor, Option<&Tensor>) -> Result<()>,
    ) -> Result<()> {
        for node in self.nodes.iter_mut() {
            visit_node_params(node, &mut f)?;
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    /// Full model state (parameters plus batchnorm running statistics) as an
    /// STM1 checkpoint, in traversal order.
    pub fn state(&mut self) -> Result<Checkpoint> {
        let mut ckpt = Checkpoint::new();
        for node in self.nodes.iter_mut() {
            visit_node_state(node, &mut |name, tensor, _| ckpt.push(name, tensor.clone()))?;
        }
        Ok(ckpt)
    }

    /// Load a checkpoint produced by [`Network::state`]. Every entry must
    /// match a known name and shape, and every state tensor must be present.
    pub fn load_state(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let mut loaded = 0usize;
        for node in self.nodes.iter_mut() {
            visit_node_state(node, &mut |name, tensor, _| {
                let entry = ckpt.get(name).ok_or_else(|| {
                    Error::Format(format!("checkpoint is missing entry {:?}", name))
                })?;
                if entry.shape() != tensor.shape() {
                    return Err(Error::ShapeMismatch(format!(
                        "checkpoint entry {:?} has shape {:?}, expected {:?}",
                        name,
                        entry.shape(),
                        tensor.shape()
                    )));
                }
                *tensor = entry.clone();
                loaded += 1;
                Ok(())
            })?;
        }
        if loaded != ckpt.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} entries, network uses {}",
                ckpt.len(),
                loaded
            )));
        }
        Ok(())
    }

    /// Overwrite every trainable parameter and running statistic with zeros.
    /// Used in tests that need a degenerate network.
    pub fn zero_all_state(&mut self) -> Result<()> {
        for node in self.nodes.iter_mut() {
            visit_node_state(node, &mut |_, tensor, _| {
                tensor.data_mut().fill(0.0);
                Ok(())
            })?;
        }
        Ok(())
    }
}
