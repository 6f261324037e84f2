//! Wall-clock scaling measurements and log-log slope fitting.

use std::io::{Read, Write};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionParams, Mechanism};
use crate::encoder::{count_params, encoder_block_forward, BlockParams, EncoderConfig, Variant};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

pub const WARMUP_RUNS: usize = 2;
pub const MIN_REPETITIONS: usize = 5;
pub const MIN_FIT_POINTS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub variant: Variant,
    #[serde(rename = "T")]
    pub t: usize,
    pub c: usize,
    pub d: usize,
    pub h: usize,
    pub repetitions: usize,
    pub median_seconds: f64,
    pub mad_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub d: usize,
    pub h: usize,
    pub c: usize,
    pub reps: usize,
    pub seed: u64,
    /// DSA capacity; `None` sizes it to the longest requested `T`.
    pub t_max: Option<usize>,
    /// Time whole encoder blocks instead of the attention layer alone.
    pub full_block: bool,
    pub conv_kernel: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            d: 320,
            h: 4,
            c: 31,
            reps: MIN_REPETITIONS,
            seed: 0,
            t_max: None,
            full_block: false,
            conv_kernel: 15,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of nothing");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median absolute deviation from the median.
pub fn mad(values: &[f64]) -> f64 {
    let m = median(values);
    let dev: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
    median(&dev)
}

/// `WARMUP_RUNS` untimed calls, then `reps` timed ones. Returns median and MAD.
pub fn time_runs(reps: usize, mut f: impl FnMut() -> Result<()>) -> Result<(f64, f64)> {
    for _ in 0..WARMUP_RUNS {
        f()?;
    }
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        f()?;
        times.push(start.elapsed().as_secs_f64());
    }
    Ok((median(&times), mad(&times)))
}

enum Layer {
    Attention(Vec<AttentionParams>),
    Block(BlockParams),
}

impl Layer {
    fn run(&self, x: &Matrix) -> Result<()> {
        match self {
            Layer::Attention(stack) => {
                let mut h = x.clone();
                for p in stack {
                    h = p.forward(&h)?.y;
                }
                std::hint::black_box(h);
            }
            Layer::Block(p) => {
                std::hint::black_box(encoder_block_forward(x, p)?);
            }
        }
        Ok(())
    }
}

fn build_layer(variant: Variant, cfg: &BenchConfig, t_max: usize, rng: &mut Rng) -> Result<Layer> {
    if cfg.full_block {
        let enc = EncoderConfig {
            variant,
            n_blocks: 1,
            d: cfg.d,
            h: cfg.h,
            c: cfg.c,
            conv_kernel: cfg.conv_kernel,
            ffn_inner: 4 * cfg.d,
            t_max,
            feat_dim: 40,
        };
        enc.validate()?;
        return Ok(Layer::Block(BlockParams::init(&enc, rng)?));
    }
    let init = |m: Mechanism, rng: &mut Rng| AttentionParams::init(m, cfg.d, cfg.h, cfg.c, t_max, rng);
    // The hybrid layer is SA followed by LDSA.
    let stack = match variant {
        Variant::Sa => vec![init(Mechanism::Sa, rng)?],
        Variant::Dsa => vec![init(Mechanism::Dsa, rng)?],
        Variant::Ldsa => vec![init(Mechanism::Ldsa, rng)?],
        Variant::Ha => vec![init(Mechanism::Sa, rng)?, init(Mechanism::Ldsa, rng)?],
    };
    Ok(Layer::Attention(stack))
}

/// Times forward passes on random `T×d` inputs, one record per `T`.
pub fn bench_runtime(variant: Variant, t_list: &[usize], cfg: &BenchConfig) -> Result<Vec<BenchRecord>> {
    if cfg.reps < MIN_REPETITIONS {
        return Err(Error::Config(format!(
            "at least {MIN_REPETITIONS} repetitions are required, got {}",
            cfg.reps
        )));
    }
    if t_list.contains(&0) {
        return Err(Error::Config("sequence lengths must be positive".into()));
    }
    let t_max = cfg.t_max.or_else(|| t_list.iter().copied().max()).unwrap_or(1);
    if variant == Variant::Dsa {
        if let Some(&len) = t_list.iter().find(|&&t| t > t_max) {
            return Err(Error::Capacity { len, t_max });
        }
    }
    let mut rng = Rng::new(cfg.seed);
    let layer = build_layer(variant, cfg, t_max, &mut rng)?;
    t_list
        .iter()
        .map(|&t| {
            let x = rng.uniform_matrix(t, cfg.d, -1.0, 1.0);
            let (median_seconds, mad_seconds) = time_runs(cfg.reps, || layer.run(&x))?;
            Ok(BenchRecord {
                variant,
                t,
                c: cfg.c,
                d: cfg.d,
                h: cfg.h,
                repetitions: cfg.reps,
                median_seconds,
                mad_seconds,
            })
        })
        .collect()
}

/// Ordinary least squares of `ln(median_seconds)` on `ln(T)`.
pub fn fit_loglog_slope(records: &[BenchRecord]) -> Result<SlopeFit> {
    let points: Vec<(f64, f64)> = records.iter().map(|r| (r.t as f64, r.median_seconds)).collect();
    fit_power_law(&points)
}

pub fn fit_power_law(points: &[(f64, f64)]) -> Result<SlopeFit> {
    let mut xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if xs.len() < points.len() {
        return Err(Error::Config("slope fit needs distinct T values".into()));
    }
    if points.len() < MIN_FIT_POINTS {
        return Err(Error::InsufficientPoints {
            needed: MIN_FIT_POINTS,
            got: points.len(),
        });
    }
    if points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(Error::Config("slope fit needs positive T and times".into()));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = logs.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(SlopeFit { slope, intercept, r2 })
}

pub fn write_bench_csv<W: Write>(records: &[BenchRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_bench_csv<R: Read>(input: R) -> Result<Vec<BenchRecord>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub c: usize,
    /// Weight count of one LDSA layer (biases excluded).
    pub ldsa_weights: usize,
    /// `W2` weights summed over heads: `d·c`.
    pub w2_weights: usize,
    /// Full-encoder parameter total for the config with this `c`.
    pub encoder_params: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub repetitions: usize,
    pub median_seconds: f64,
    pub mad_seconds: f64,
}

/// Parameter counts and LDSA layer runtime at fixed `t` for each context width.
pub fn sweep_context_width(
    c_list: &[usize],
    cfg: &EncoderConfig,
    t: usize,
    reps: usize,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if let Some(c) = c_list.iter().find(|c| *c % 2 == 0) {
        return Err(Error::Config(format!("context width c={c} must be odd")));
    }
    c_list
        .iter()
        .map(|&c| {
            let with_c = EncoderConfig { c, ..cfg.clone() };
            let encoder_params = count_params(&with_c)?.total.total;
            // Count one LDSA layer whatever the variant, so rows are comparable.
            let layer = count_params(&EncoderConfig {
                variant: Variant::Ldsa,
                n_blocks: 1,
                ..with_c
            })?;
            let attn: Vec<_> = layer.matrices.iter().filter(|e| e.component == "attn").collect();
            let ldsa_weights = attn.iter().map(|e| e.count).sum();
            let w2_weights = attn.iter().filter(|e| e.name.ends_with(".w2")).map(|e| e.count).sum();
            let bench = BenchConfig {
                d: cfg.d,
                h: cfg.h,
                c,
                reps,
                seed,
                ..BenchConfig::default()
            };
            let rec = bench_runtime(Variant::Ldsa, &[t], &bench)?.remove(0);
            Ok(SweepRow {
                c,
                ldsa_weights,
                w2_weights,
                encoder_params,
                t,
                repetitions: reps,
                median_seconds: rec.median_seconds,
                mad_seconds: rec.mad_seconds,
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    fn record(t: usize, secs: f64) -> BenchRecord {
        BenchRecord {
            variant: Variant::Sa,
            t,
            c: 31,
            d: 8,
            h: 2,
            repetitions: 5,
            median_seconds: secs,
            mad_seconds: 0.0,
        }
    }

    #[test]
    fn exact_power_laws() {
        let ts = [256, 512, 1024, 2048, 4096];
        let quad: Vec<_> = ts.iter().map(|&t| record(t, 3e-9 * (t * t) as f64)).collect();
        let fit = fit_loglog_slope(&quad).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
        assert!((fit.intercept - 3e-9f64.ln()).abs() < 1e-9);
        let lin: Vec<_> = ts.iter().map(|&t| record(t, 7e-6 * t as f64)).collect();
        assert!((fit_loglog_slope(&lin).unwrap().slope - 1.0).abs() < 1e-12);
    }

    #[test]
    fn noisy_power_law() {
        let mut rng = Rng::new(11);
        let recs: Vec<_> = [256, 512, 1024, 2048, 4096]
            .iter()
            .map(|&t| record(t, 1e-7 * (t as f64).powf(1.5) * (1.0 + rng.uniform(-0.01, 0.01))))
            .collect();
        let slope = fit_loglog_slope(&recs).unwrap().slope;
        assert!((1.4..=1.6).contains(&slope), "{slope}");
    }

    #[test]
    fn fit_refuses_degenerate_input() {
        let err = fit_loglog_slope(&[record(8, 1.0)]).unwrap_err();
        assert!(matches!(err, Error::InsufficientPoints { needed: 4, got: 1 }));
        let three: Vec<_> = [8, 16, 32].iter().map(|&t| record(t, 1.0)).collect();
        assert!(matches!(
            fit_loglog_slope(&three),
            Err(Error::InsufficientPoints { .. })
        ));
        let dup: Vec<_> = [8, 16, 16, 32].iter().map(|&t| record(t, 1.0)).collect();
        assert!(fit_loglog_slope(&dup).is_err());
        let zero: Vec<_> = [8, 16, 32, 64].iter().map(|&t| record(t, 0.0)).collect();
        assert!(fit_loglog_slope(&zero).is_err());
    }

    #[test]
    fn median_and_mad() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(mad(&[1.0, 2.0, 3.0, 4.0, 100.0]), 1.0);
    }

    #[test]
    fn one_length_gives_one_record() {
        let cfg = BenchConfig {
            d: 8,
            h: 2,
            c: 3,
            ..BenchConfig::default()
        };
        for v in Variant::ALL {
            let recs = bench_runtime(v, &[16], &cfg).unwrap();
            assert_eq!(recs.len(), 1);
            assert_eq!((recs[0].t, recs[0].repetitions, recs[0].variant), (16, 5, v));
            assert!(recs[0].median_seconds > 0.0);
            assert!(fit_loglog_slope(&recs).is_err());
        }
    }

    #[test]
    fn full_block_timing_runs() {
        let cfg = BenchConfig {
            d: 8,
            h: 2,
            c: 3,
            conv_kernel: 3,
            full_block: true,
            ..BenchConfig::default()
        };
        for v in Variant::ALL {
            assert_eq!(bench_runtime(v, &[6, 12], &cfg).unwrap().len(), 2);
        }
    }

    #[test]
    fn dsa_capacity_and_argument_checks() {
        let cfg = BenchConfig {
            d: 8,
            h: 2,
            c: 3,
            t_max: Some(16),
            ..BenchConfig::default()
        };
        assert!(bench_runtime(Variant::Dsa, &[16], &cfg).is_ok());
        assert!(matches!(
            bench_runtime(Variant::Dsa, &[8, 17], &cfg),
            Err(Error::Capacity { len: 17, t_max: 16 })
        ));
        assert!(bench_runtime(Variant::Sa, &[17], &cfg).is_ok());
        assert!(bench_runtime(Variant::Sa, &[8], &BenchConfig { reps: 4, ..cfg.clone() }).is_err());
    }

    #[test]
    fn sweep_reports_w2_totals() {
        let cfg = EncoderConfig::full(Variant::Ldsa);
        let rows = sweep_context_width(&[1, 15, 31], &EncoderConfig { d: 320, ..cfg }, 8, 5, 0).unwrap();
        let w2: Vec<usize> = rows.iter().map(|r| r.w2_weights).collect();
        assert_eq!(w2, vec![320, 4800, 9920]);
        assert_eq!(rows[2].ldsa_weights, 3 * 320 * 320 + 320 * 31);
        assert!(rows[0].encoder_params < rows[1].encoder_params);
        assert!(sweep_context_width(&[15, 4], &EncoderConfig::tiny(Variant::Ldsa), 8, 5, 0).is_err());
    }

    #[test]
    fn csv_header_follows_field_order() {
        let mut buf = Vec::new();
        write_bench_csv(&[record(8, 0.5)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "variant,T,c,d,h,repetitions,median_seconds,mad_seconds"
        );
        assert!(text.lines().nth(1).unwrap().starts_with("sa,8,31,8,2,5,"));
    }

    proptest! {
        #[test]
        fn csv_round_trip(
            rows in proptest::collection::vec((1usize..10_000, 1e-9f64..10.0, 0.0f64..1.0, 0usize..4), 0..20)
        ) {
            let recs: Vec<BenchRecord> = rows
                .iter()
                .map(|&(t, m, d, v)| BenchRecord {
                    variant: Variant::ALL[v],
                    mad_seconds: d,
                    ..record(t, m)
                })
                .collect();
            let mut buf = Vec::new();
            write_bench_csv(&recs, &mut buf).unwrap();
            prop_assert_eq!(read_bench_csv(buf.as_slice()).unwrap(), recs);
        }
    }
}
