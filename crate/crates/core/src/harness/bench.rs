//! Wall time and analytic FLOPs of axial versus full attention.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use crate::net::{attention_flops, axial_attention, position_dims, AttentionMode, AxialAttention};
use crate::net::attention::full_attention_forward;
use crate::voxcore::Axis;
use crate::{Dims5, Error, Result, Rng, Tensor5};

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub edges: Vec<usize>,
    pub channels: usize,
    pub heads: usize,
    pub repeats: usize,
    /// Full attention is skipped above this token count.
    pub full_max_tokens: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { edges: vec![8, 16, 24], channels: 16, heads: 1, repeats: 3, full_max_tokens: 4096, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub edge: usize,
    pub tokens: usize,
    pub axial_flops: u64,
    pub full_flops: u64,
    pub axial_time: Duration,
    pub full_time: Option<Duration>,
}

impl BenchRow {
    pub const TSV_HEADER: &'static str = "edge\ttokens\taxial_flops\tfull_flops\taxial_ms\tfull_ms";

    pub fn tsv_row(&self) -> String {
        let full = self.full_time.map_or("NA".into(), |t| format!("{:.3}", t.as_secs_f64() * 1e3));
        format!(
            "{}\t{}\t{}\t{}\t{:.3}\t{}",
            self.edge,
            self.tokens,
            self.axial_flops,
            self.full_flops,
            self.axial_time.as_secs_f64() * 1e3,
            full
        )
    }
}

fn best_of(repeats: usize, mut f: impl FnMut() -> Result<()>) -> Result<Duration> {
    let mut best = Duration::MAX;
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        f()?;
        best = best.min(t.elapsed());
    }
    Ok(best)
}

/// Times one attention block (all three axes for axial, one dense pass for
/// full) on random cubes; reported time is the best of `repeats`.
pub fn bench_attention(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.channels == 0 || cfg.edges.contains(&0) {
        return Err(Error::invalid("bench edges and channels must be positive"));
    }
    let mut rng = Rng::for_name(cfg.seed, "bench");
    let c = cfg.channels;
    let mut normal = |dims: Dims5| Tensor5::<f32>::from_fn(dims, |_| rng.normal() as f32 * 0.3);
    let cap = cfg.edges.iter().copied().max().unwrap_or(1);
    let branches: Vec<(AxialAttention<f32>, Tensor5<f32>)> = Axis::ALL
        .iter()
        .map(|&a| (AxialAttention { qkv: normal(Dims5::new(3 * c, c, 1, 1, 1)), heads: cfg.heads }, normal(position_dims(a, c, cap))))
        .collect();
    let mut rows = Vec::new();
    for &e in &cfg.edges {
        let x = normal(Dims5::new(1, c, e, e, e));
        let tokens = e * e * e;
        let axial_time = best_of(cfg.repeats, || {
            for (a, (p, pos)) in Axis::ALL.iter().zip(&branches) {
                axial_attention(&x, *a, p, pos)?;
            }
            Ok(())
        })?;
        let full_time = if tokens <= cfg.full_max_tokens {
            Some(best_of(cfg.repeats, || {
                full_attention_forward(&branches[0].0.project(&x)?, cfg.heads)?;
                Ok(())
            })?)
        } else {
            None
        };
        rows.push(BenchRow {
            edge: e,
            tokens,
            axial_flops: attention_flops([e; 3], c, AttentionMode::Axial).total(),
            full_flops: attention_flops([e; 3], c, AttentionMode::Full).total(),
            axial_time,
            full_time,
        });
    }
    Ok(rows)
}

pub fn to_tsv(rows: &[BenchRow]) -> String {
    let mut s = String::from(BenchRow::TSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{}", r.tsv_row());
    }
    s
}

/// For consecutive rows, checks that the time ratio stays below the squared
/// token ratio. Returns each (observed, quadratic bound) pair and the verdict.
pub fn subquadratic(rows: &[BenchRow]) -> (Vec<(f64, f64)>, bool) {
    let pairs: Vec<(f64, f64)> = rows
        .windows(2)
        .map(|w| {
            let t = w[1].axial_time.as_secs_f64() / w[0].axial_time.as_secs_f64().max(1e-12);
            let n = w[1].tokens as f64 / w[0].tokens as f64;
            (t, n * n)
        })
        .collect();
    let ok = !pairs.is_empty() && pairs.iter().all(|&(t, q)| t < q);
    (pairs, ok)
}
