//! Wall-clock scaling of the linear-time scan against quadratic attention.

use std::fmt::Write as _;
use std::hint::black_box;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ssm::{scan_recurrence_fast, DiscreteSsm};

/// State size of the benchmarked scan.
pub const BENCH_STATE: usize = 16;
/// Head width of the attention reference.
pub const BENCH_HEAD_DIM: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kernel {
    Scan,
    Attention,
}

impl Kernel {
    pub fn tag(self) -> &'static str {
        match self {
            Kernel::Scan => "scan",
            Kernel::Attention => "attention",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub kernel: Kernel,
    pub len: usize,
    pub mean_ns: f64,
    pub std_ns: f64,
    pub median_ns: f64,
}

/// Single-head softmax attention, `O(L² · d)`. `q`, `k`, `v` are `L × d` row-major.
pub fn attention(q: &[f32], k: &[f32], v: &[f32], d: usize) -> Vec<f32> {
    let l = q.len() / d;
    let scale = 1.0 / (d as f32).sqrt();
    let mut out = vec![0.0f32; l * d];
    let mut scores = vec![0.0f32; l];
    for i in 0..l {
        let qi = &q[i * d..(i + 1) * d];
        let mut max = f32::NEG_INFINITY;
        for (j, s) in scores.iter_mut().enumerate() {
            let kj = &k[j * d..(j + 1) * d];
            *s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f32>() * scale;
            max = max.max(*s);
        }
        let mut z = 0.0;
        for s in scores.iter_mut() {
            *s = (*s - max).exp();
            z += *s;
        }
        let oi = &mut out[i * d..(i + 1) * d];
        for (j, s) in scores.iter().enumerate() {
            let w = s / z;
            for (o, vv) in oi.iter_mut().zip(&v[j * d..(j + 1) * d]) {
                *o += w * vv;
            }
        }
    }
    out
}

fn stats(samples: &[f64]) -> (f64, f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 0 {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    } else {
        sorted[mid]
    };
    (mean, var.sqrt(), median)
}

fn time_runs(runs: usize, reps: usize, mut f: impl FnMut()) -> Vec<f64> {
    f();
    (0..runs)
        .map(|_| {
            let t = Instant::now();
            for _ in 0..reps {
                f();
            }
            t.elapsed().as_nanos() as f64 / reps as f64
        })
        .collect()
}

/// Times both kernels at every length; `runs` timed samples per point.
/// `scan_reps` calls are averaged inside each scan sample to lift it above timer noise.
pub fn bench_scan(lengths: &[usize], runs: usize, scan_reps: usize) -> Result<Vec<BenchRow>> {
    if lengths.is_empty() || runs == 0 || scan_reps == 0 {
        return Err(Error::config("bench needs at least one length, run and repetition"));
    }
    if lengths.windows(2).any(|w| w[0] >= w[1]) || lengths[0] == 0 {
        return Err(Error::config("bench lengths must be positive and strictly ascending"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut rows = Vec::new();
    for &l in lengths {
        let m = BENCH_STATE;
        let x: Vec<f32> = (0..l).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a_bar: Vec<f32> = (0..l * m).map(|_| rng.gen_range(0.5..0.99)).collect();
        let b_bar: Vec<f32> = (0..l * m).map(|_| rng.gen_range(-0.1..0.1)).collect();
        let c: Vec<f32> = (0..l * m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ssm = DiscreteSsm::new(l, m, a_bar, b_bar)?;
        let samples = time_runs(runs, scan_reps, || {
            black_box(scan_recurrence_fast(black_box(&x), &ssm, &c, 1.0).unwrap());
        });
        let (mean_ns, std_ns, median_ns) = stats(&samples);
        rows.push(BenchRow {
            kernel: Kernel::Scan,
            len: l,
            mean_ns,
            std_ns,
            median_ns,
        });

        let d = BENCH_HEAD_DIM;
        let mk = |rng: &mut ChaCha8Rng| (0..l * d).map(|_| rng.gen_range(-1.0f32..1.0)).collect::<Vec<_>>();
        let (q, k, v) = (mk(&mut rng), mk(&mut rng), mk(&mut rng));
        let samples = time_runs(runs, 1, || {
            black_box(attention(black_box(&q), &k, &v, d));
        });
        let (mean_ns, std_ns, median_ns) = stats(&samples);
        rows.push(BenchRow {
            kernel: Kernel::Attention,
            len: l,
            mean_ns,
            std_ns,
            median_ns,
        });
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("kernel,L,mean_ns,std_ns\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{:.1},{:.1}", r.kernel.tag(), r.len, r.mean_ns, r.std_ns);
    }
    s
}

/// Median-time ratio `t(2L) / t(L)` of `kernel`.
pub fn doubling_ratio(rows: &[BenchRow], kernel: Kernel, len: usize) -> Option<f64> {
    let at = |n: usize| rows.iter().find(|r| r.kernel == kernel && r.len == n).map(|r| r.median_ns);
    Some(at(2 * len)? / at(len)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attention_of_identical_keys_averages_values() {
        let d = 2;
        let q = vec![1.0, 0.0, 0.0, 1.0, 0.5, 0.5];
        let k = vec![0.3, 0.3, 0.3, 0.3, 0.3, 0.3];
        let v = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let out = attention(&q, &k, &v, d);
        for row in out.chunks(2) {
            assert!((row[0] - 3.0).abs() < 1e-6 && (row[1] - 4.0).abs() < 1e-6);
        }
    }

    #[test]
    fn one_row_per_kernel_and_length() {
        let rows = bench_scan(&[32], 2, 2).unwrap();
        assert_eq!(rows.len(), 2);
        let csv = bench_csv(&rows);
        assert!(csv.starts_with("kernel,L,mean_ns,std_ns\nscan,32,"));
        assert_eq!(csv.lines().count(), 3);
        assert!(bench_scan(&[64, 32], 1, 1).is_err());
    }

    #[test]
    fn stats_of_known_samples() {
        let (mean, std, median) = stats(&[1.0, 2.0, 3.0, 10.0]);
        assert_eq!((mean, median), (4.0, 2.5));
        assert!((std - 3.5355339).abs() < 1e-6);
    }
}
