//! Forward-pass wall-time benchmarking with exact FLOP accounting.

use std::path::Path;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::net::{LayerSpec, NetSpec, Network};
use crate::tensor::{atomic_write, Rng, Tensor};

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub name: String,
    pub reps: usize,
    pub median_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    /// Conv/fc multiply-accumulate FLOPs per forward pass.
    pub flops: u64,
}

/// Time `reps` forward passes of a network on a random input of the given
/// batch size. The median is over individual passes, after one warm-up.
pub fn benchmark_net(spec: &NetSpec, batch: usize, reps: usize, seed: u64) -> Result<BenchRow> {
    if reps == 0 {
        return Err(Error::InvalidConfig("repetitions must be >= 1".into()));
    }
    let mut rng = Rng::new(seed);
    let mut net = Network::from_spec(spec, &mut rng)?;
    let [c, t, h, w] = spec.input;
    let input = Tensor::fill_uniform(&[batch, c, t, h, w], 0.0, 1.0, &mut rng)?;

    net.forward_eval(&input)?; // warm-up
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        net.forward_eval(&input)?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    Ok(BenchRow {
        name: spec.name.clone(),
        reps,
        median_ms: times[times.len() / 2],
        min_ms: times[0],
        max_ms: times[times.len() - 1],
        flops: spec.count_flops(batch)?,
    })
}

/// Benchmark a single layer on an explicit input shape.
pub fn benchmark_layer(
    name: &str,
    layer: &LayerSpec,
    input: [usize; 4],
    batch: usize,
    reps: usize,
    seed: u64,
) -> Result<BenchRow> {
    let spec = NetSpec {
        name: name.to_string(),
        input,
        layers: vec![(name.to_string(), layer.clone())],
    };
    benchmark_net(&spec, batch, reps, seed)
}

/// `bench.csv`: header `name,reps,median_ms,min_ms,max_ms,flops`.
pub fn write_bench_csv(rows: &[BenchRow], path: &Path) -> Result<()> {
    let mut out = String::from("name,reps,median_ms,min_ms,max_ms,flops\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.4},{:.4},{:.4},{}\n",
            r.name, r.reps, r.median_ms, r.min_ms, r.max_ms, r.flops
        ));
    }
    atomic_write(path, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{
        build_tiny_r2p1d, factorized_conv_weight_count, full_conv_weight_count,
        midplane_channels,
    };

    #[test]
    fn flops_column_matches_count_flops() {
        let spec = build_tiny_r2p1d(2, 8, 16).unwrap();
        let row = benchmark_net(&spec, 1, 3, 1).unwrap();
        assert_eq!(row.flops, spec.count_flops(1).unwrap());
    }

    #[test]
    fn timings_ordered_and_positive() {
        let spec = build_tiny_r2p1d(2, 8, 16).unwrap();
        let row = benchmark_net(&spec, 1, 5, 2).unwrap();
        assert!(row.min_ms > 0.0);
        assert!(row.min_ms <= row.median_ms);
        assert!(row.median_ms <= row.max_ms);
    }

    #[test]
    fn factorized_vs_full_flops_within_floor_slack() {
        let (t, d, n_in, n_out) = (3usize, 3usize, 16usize, 16usize);
        let input = [n_in, 4, 8, 8];
        let full = LayerSpec::Conv3d {
            in_channels: n_in,
            out_channels: n_out,
            kernel: (t, d, d),
            stride: (1, 1, 1),
            padding: (1, 1, 1),
            bias: false,
        };
        let fact = LayerSpec::Conv2p1d {
            in_channels: n_in,
            out_channels: n_out,
            t,
            d,
            stride: (1, 1, 1),
            midplanes: midplane_channels(t, d, n_in, n_out),
            temporal_bias: false,
        };
        let row_full = benchmark_layer("full", &full, input, 1, 2, 3).unwrap();
        let row_fact = benchmark_layer("fact", &fact, input, 1, 2, 3).unwrap();
        let positions = (4 * 8 * 8) as u64;
        let weight_gap = (full_conv_weight_count(t, d, n_in, n_out)
            - factorized_conv_weight_count(t, d, n_in, n_out)) as u64;
        assert_eq!(row_full.flops - row_fact.flops, 2 * positions * weight_gap);
        let slack = (d * d * n_in + t * n_out) as u64;
        assert!(weight_gap < slack);
    }
}
