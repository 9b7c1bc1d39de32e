//! Exact O(N^2) t-SNE: per-point bandwidths found by binary search on the
//! conditional-distribution entropy, symmetrized joint affinities, and
//! gradient descent with early exaggeration and a momentum switch.

use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

#[derive(Debug, Clone)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch_iter: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 4.0,
            exaggeration_iters: 100,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch_iter: 250,
            seed: 42,
        }
    }
}

const MAX_POINTS: usize = 5000;
const ENTROPY_TOL: f64 = 1e-5;
const P_FLOOR: f64 = 1e-12;

pub struct TsneAffinities {
    /// Row-normalized conditional probabilities p(j|i), N x N row-major,
    /// zero diagonal. Every row sums to 1.
    pub conditional: Vec<f64>,
    /// Symmetrized joint probabilities, N x N row-major. Sums to 1.
    pub joint: Vec<f64>,
    pub n: usize,
}

fn pairwise_sq_dists(features: &Tensor) -> (Vec<f64>, usize, usize) {
    let (n, d) = (features.shape()[0], features.shape()[1]);
    let x = features.data();
    let mut dist = vec![0.0f64; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let mut acc = 0.0f64;
            for c in 0..d {
                let diff = x[i * d + c] as f64 - x[j * d + c] as f64;
                acc += diff * diff;
            }
            dist[i * n + j] = acc;
            dist[j * n + i] = acc;
        }
    }
    (dist, n, d)
}

/// Binary-search a precision beta = 1/(2 sigma^2) per point so that the
/// conditional distribution's entropy matches ln(perplexity), then
/// symmetrize.
pub fn tsne_affinities(features: &Tensor, perplexity: f64) -> Result<TsneAffinities> {
    if features.rank() != 2 {
        return Err(Error::InvalidShape(format!(
            "t-SNE expects [N, D], got {:?}",
            features.shape()
        )));
    }
    let n = features.shape()[0];
    if n > MAX_POINTS {
        return Err(Error::InvalidConfig(format!(
            "exact t-SNE is limited to {} points, got {}",
            MAX_POINTS, n
        )));
    }
    if !(1.0 <= perplexity && perplexity < n as f64) {
        return Err(Error::InvalidConfig(format!(
            "perplexity {} must be in [1, N = {})",
            perplexity, n
        )));
    }
    let (dist, n, _) = pairwise_sq_dists(features);
    let target_entropy = perplexity.ln();

    let mut conditional = vec![0.0f64; n * n];
    for i in 0..n {
        let row = &dist[i * n..(i + 1) * n];
        let mut beta = 1.0f64;
        let mut beta_min = f64::NEG_INFINITY;
        let mut beta_max = f64::INFINITY;

        let mut probs = vec![0.0f64; n];
        for _ in 0..64 {
            let mut sum = 0.0f64;
            for (j, p) in probs.iter_mut().enumerate() {
                *p = if j == i { 0.0 } else { (-beta * row[j]).exp() };
                sum += *p;
            }
            if sum <= 0.0 {
                // all mass collapsed; widen the kernel
                beta_max = beta;
                beta = if beta_min.is_finite() {
                    (beta + beta_min) / 2.0
                } else {
                    beta / 2.0
                };
                continue;
            }
            // H = ln(sum) + beta * E[d]
            let mut weighted = 0.0f64;
            for (j, p) in probs.iter().enumerate() {
                weighted += p * row[j];
            }
            let entropy = sum.ln() + beta * weighted / sum;
            let diff = entropy - target_entropy;
            if diff.abs() <= ENTROPY_TOL {
                break;
            }
            if diff > 0.0 {
                // entropy too high: sharpen
                beta_min = beta;
                beta = if beta_max.is_finite() {
                    (beta + beta_max) / 2.0
                } else {
                    beta * 2.0
                };
            } else {
                beta_max = beta;
                beta = if beta_min.is_finite() {
                    (beta + beta_min) / 2.0
                } else {
                    beta / 2.0
                };
            }
        }
        let mut sum = 0.0f64;
        for (j, p) in probs.iter_mut().enumerate() {
            *p = if j == i { 0.0 } else { (-beta * row[j]).exp() };
            sum += *p;
        }
        for (j, &p) in probs.iter().enumerate() {
            conditional[i * n + j] = p / sum;
        }
    }

    let mut joint = vec![0.0f64; n * n];
    let two_n = 2.0 * n as f64;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            joint[i * n + j] =
                ((conditional[i * n + j] + conditional[j * n + i]) / two_n).max(P_FLOOR);
        }
    }
    Ok(TsneAffinities {
        conditional,
        joint,
        n,
    })
}

fn gaussian(rng: &mut Rng) -> f64 {
    // Box-Muller on two uniform draws
    let u1 = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    let u2 = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    let u1 = u1.max(1e-300);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Embed [N, D] features into 2D.
pub fn project_tsne(features: &Tensor, cfg: &TsneConfig) -> Result<Tensor> {
    let aff = tsne_affinities(features, cfg.perplexity)?;
    let n = aff.n;
    let p = &aff.joint;

    let mut rng = Rng::new(cfg.seed);
    let mut y: Vec<f64> = (0..2 * n).map(|_| 1e-4 * gaussian(&mut rng)).collect();
    let mut inc = vec![0.0f64; 2 * n];
    let mut q_num = vec![0.0f64; n * n];

    for iter in 0..cfg.iterations {
        // student-t numerators and normalizer
        let mut z = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = y[2 * i] - y[2 * j];
                let dy = y[2 * i + 1] - y[2 * j + 1];
                let num = 1.0 / (1.0 + dx * dx + dy * dy);
                q_num[i * n + j] = num;
                q_num[j * n + i] = num;
                z += 2.0 * num;
            }
        }
        let z = z.max(P_FLOOR);

        let exaggeration = if iter < cfg.exaggeration_iters {
            cfg.early_exaggeration
        } else {
            1.0
        };
        let momentum = if iter < cfg.momentum_switch_iter {
            cfg.initial_momentum
        } else {
            cfg.final_momentum
        };

        for i in 0..n {
            let mut gx = 0.0f64;
            let mut gy = 0.0f64;
            for j in 0..n {
                if i == j {
                    continue;
                }
                let num = q_num[i * n + j];
                let q = (num / z).max(P_FLOOR);
                let coeff = 4.0 * (exaggeration * p[i * n + j] - q) * num;
                gx += coeff * (y[2 * i] - y[2 * j]);
                gy += coeff * (y[2 * i + 1] - y[2 * j + 1]);
            }
            inc[2 * i] = momentum * inc[2 * i] - cfg.learning_rate * gx;
            inc[2 * i + 1] = momentum * inc[2 * i + 1] - cfg.learning_rate * gy;
        }
        for (yv, iv) in y.iter_mut().zip(&inc) {
            *yv += iv;
        }
        // keep the embedding centered
        let mean_x: f64 = y.iter().step_by(2).sum::<f64>() / n as f64;
        let mean_y: f64 = y.iter().skip(1).step_by(2).sum::<f64>() / n as f64;
        for pair in y.chunks_exact_mut(2) {
            pair[0] -= mean_x;
            pair[1] -= mean_y;
        }
    }

    let out = Tensor::from_vec(&[n, 2], y.iter().map(|&v| v as f32).collect())?;
    if !out.is_finite() {
        return Err(Error::InvalidConfig(
            "t-SNE embedding diverged to non-finite values".into(),
        ));
    }
    Ok(out)
}
