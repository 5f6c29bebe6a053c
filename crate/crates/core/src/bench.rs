//! Wall-clock micro-benchmarks of single layers and whole-model forward
//! passes. Everything in this crate runs single-threaded by construction,
//! which is exactly the timing methodology the comparisons call for; inputs
//! are seeded so the timed path computes the same tensors as the test path.

use std::time::Instant;

use crate::conv::{forward, ConvSpec, FilterBank};
use crate::cost::conv_flops_at;
use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor};
use crate::zoo::{instantiate, ModelConfig};

/// Environment variable capping how many measured runs a benchmark may take
/// (useful for CI). Values below 10 are clamped up: the median needs at
/// least ten samples.
pub const BENCH_MAX_RUNS_ENV: &str = "DUALCONV_BENCH_MAX_RUNS";

#[derive(Debug, Clone, serde::Serialize)]
pub struct BenchResult {
    pub id: String,
    pub warmup: usize,
    pub runs: usize,
    pub samples_ns: Vec<u64>,
    pub median_ns: u64,
    pub mad_ns: u64,
    pub macs: u128,
    pub macs_per_sec: f64,
}

impl BenchResult {
    fn from_samples(id: String, warmup: usize, samples: Vec<u64>, macs: u128) -> Result<Self> {
        if samples.len() < 10 {
            return Err(Error::Config(format!(
                "need at least 10 measured runs, got {}",
                samples.len()
            )));
        }
        let median = median_u64(&samples);
        let deviations: Vec<u64> = samples.iter().map(|&s| s.abs_diff(median)).collect();
        let mad = median_u64(&deviations);
        let macs_per_sec = if median > 0 {
            macs as f64 / (median as f64 / 1e9)
        } else {
            f64::INFINITY
        };
        Ok(BenchResult {
            id,
            warmup,
            runs: samples.len(),
            samples_ns: samples,
            median_ns: median,
            mad_ns: mad,
            macs,
            macs_per_sec,
        })
    }
}

fn median_u64(v: &[u64]) -> u64 {
    let mut s = v.to_vec();
    s.sort_unstable();
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2
    }
}

/// Clamp a requested run count to the environment cap, never below 10.
pub fn effective_runs(requested: usize) -> usize {
    let cap = std::env::var(BENCH_MAX_RUNS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok());
    match cap {
        Some(c) => requested.min(c.max(10)),
        None => requested.max(10),
    }
}

/// Time one layer's forward pass on deterministic inputs.
// Fixed salt separating weight seeds from input seeds.
const WEIGHT_SEED_SALT: u64 = 0x62656e63;

pub fn bench_layer(
    spec: &ConvSpec,
    input_shape: Shape4,
    warmup: usize,
    runs: usize,
    seed: u64,
) -> Result<BenchResult> {
    let runs = effective_runs(runs);
    let input = Tensor::<f32>::seeded_random(input_shape, seed)?;
    let bank = FilterBank::<f32>::seeded(spec, seed ^ WEIGHT_SEED_SALT)?;
    let out_shape = spec.out_shape(input_shape)?;
    let macs = conv_flops_at(spec, out_shape.height, out_shape.width) * input_shape.batch as u128;

    for _ in 0..warmup {
        std::hint::black_box(forward(&input, &bank, spec)?);
    }
    let mut samples = Vec::with_capacity(runs);
    for _ in 0..runs {
        let t0 = Instant::now();
        let y = forward(&input, &bank, spec)?;
        samples.push(t0.elapsed().as_nanos() as u64);
        std::hint::black_box(y);
    }
    BenchResult::from_samples(
        format!(
            "{}[M={},N={},K={},s={},{}{}] @{}x{}",
            spec.kind.token(),
            spec.in_channels,
            spec.out_channels,
            spec.kernel,
            spec.stride,
            if spec.kind.token() == "het" { "P=" } else { "G=" },
            if spec.kind.token() == "het" { spec.part } else { spec.groups },
            input_shape.height,
            input_shape.width
        ),
        warmup,
        samples,
        macs,
    )
}

/// Per-layer and end-to-end forward timings of a whole model at batch 1.
pub fn bench_model(
    config: &ModelConfig,
    warmup: usize,
    runs: usize,
    seed: u64,
) -> Result<(Vec<BenchResult>, BenchResult)> {
    let runs = effective_runs(runs);
    if config.layers.is_empty() {
        return Err(Error::Config("cannot benchmark an empty model".into()));
    }
    let model = instantiate::<f32>(config, seed)?;
    let input = Tensor::<f32>::seeded_random(
        Shape4::new(1, config.input.channels, config.input.height, config.input.width)?,
        seed ^ WEIGHT_SEED_SALT,
    )?;
    let costs = crate::cost::model_cost(config)?;

    for _ in 0..warmup {
        std::hint::black_box(model.forward(&input)?);
    }

    let n = model.layers.len();
    let mut per_layer: Vec<Vec<u64>> = vec![Vec::with_capacity(runs); n];
    let mut totals = Vec::with_capacity(runs);
    for _ in 0..runs {
        let mut outs: Vec<Tensor<f32>> = Vec::with_capacity(n);
        let t_total = Instant::now();
        for i in 0..n {
            let t0 = Instant::now();
            let out = model.layer_output(i, &input, &outs)?;
            per_layer[i].push(t0.elapsed().as_nanos() as u64);
            outs.push(out);
        }
        totals.push(t_total.elapsed().as_nanos() as u64);
        std::hint::black_box(&outs);
    }

    let mut results = Vec::with_capacity(n);
    for (i, samples) in per_layer.into_iter().enumerate() {
        results.push(BenchResult::from_samples(
            format!("{} {}", model.layers[i].0, costs.rows[i].op),
            warmup,
            samples,
            costs.rows[i].flops,
        )?);
    }
    let total = BenchResult::from_samples(
        format!("{} total", config.name),
        warmup,
        totals,
        costs.total.flops,
    )?;
    Ok((results, total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::parse_config;

    #[test]
    fn layer_bench_contract() {
        let spec = ConvSpec::dual(8, 8, 3, 1, 1, 2).unwrap();
        let r = bench_layer(&spec, Shape4::new(1, 8, 8, 8).unwrap(), 1, 10, 1).unwrap();
        assert_eq!(r.samples_ns.len(), 10);
        assert!(r.macs_per_sec > 0.0);
        assert_eq!(r.macs, 64 * (9 * 64 / 2 + 64));
    }

    #[test]
    fn bench_inputs_match_test_path() {
        // The timed forward must compute exactly what the untimed one does.
        let spec = ConvSpec::group(4, 4, 3, 1, 1, 2).unwrap();
        let shape = Shape4::new(1, 4, 6, 6).unwrap();
        let input = Tensor::<f32>::seeded_random(shape, 9).unwrap();
        let bank = FilterBank::<f32>::seeded(&spec, 9 ^ WEIGHT_SEED_SALT).unwrap();
        let a = forward(&input, &bank, &spec).unwrap();
        let b = forward(&input, &bank, &spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn model_bench_total_bounds_layers() {
        let cfg = parse_config(
            "model t input 1 3 16 16\n\
             conv c1 kind=std M=3 N=8 K=3 s=1 p=1\n\
             conv c2 kind=dual M=8 N=8 K=3 s=1 p=1 G=2\n\
             pool p avg k=2 s=2\n\
             fc f in=512 out=4\n",
        )
        .unwrap();
        let (layers, total) = bench_model(&cfg, 1, 10, 3).unwrap();
        assert_eq!(layers.len(), 4);
        let max_layer = layers.iter().map(|r| r.median_ns).max().unwrap();
        assert!(total.median_ns >= max_layer);
    }

    #[test]
    fn empty_model_is_rejected() {
        let cfg = ModelConfig {
            name: "empty".into(),
            input: Shape4::new(1, 1, 4, 4).unwrap(),
            layers: vec![],
        };
        assert!(bench_model(&cfg, 0, 10, 1).is_err());
    }
}
