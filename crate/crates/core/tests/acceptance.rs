//! Acceptance suite: one pass/fail line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so every line is printed as it
//! completes. The process exits non-zero if any criterion fails.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mfmamba::autodiff::ScanVars;
use mfmamba::dpa::{dpa, dpa_forward, DpaMode};
use mfmamba::gradcheck::{probe_weights, GradCheck, GradCheckReport, REL_FLOOR};
use mfmamba::metrics::{mae, mse, psnr, sam, ssim, ImageMetrics};
use mfmamba::mhcb::MhcbBlock;
use mfmamba::mub::{patch_merge, patch_split, MubBlock, MubConfig};
use mfmamba::params::Initializer;
use mfmamba::pipeline::ablation::{ablation_markdown, AblationResult};
use mfmamba::pipeline::bench::doubling_ratio;
use mfmamba::pipeline::data::{ingest, DatasetSpec, Sample, Split};
use mfmamba::pipeline::eval::evaluate;
use mfmamba::pipeline::toy::write_toy_corpus;
use mfmamba::pipeline::{bench_scan, table_rows, train, AblationTable, Kernel, TrainConfig};
use mfmamba::ssm::{
    direction_perm, discretize, discretize_backward, scan_recurrence, scan_recurrence_backward, scan_recurrence_fast,
    DirectionSet, DiscreteSsm, MergeMode, ScanDirection, ScanOptions, ZohMode,
};
use mfmamba::{Graph, Model, ModelConfig, ParamStore, Task, Tensor, Var};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: [usize; 4], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(lo..hi))
}

/// Values with `|v| ∈ [lo, hi)` and random sign, keeping ReLU inputs off the kink.
fn off_zero(rng: &mut ChaCha8Rng, shape: [usize; 4], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| {
        let v = rng.gen_range(lo..hi);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

fn probe(g: &mut Graph<'_, f64>, v: Var, seed: u64) -> mfmamba::Result<Var> {
    let n = g.shape(v).numel();
    g.weighted_sum(v, probe_weights(n, seed))
}

// ---------------------------------------------------------------- criterion 1

const GRAD_TOL: f64 = 1e-4;
const MODEL_GRAD_TOL: f64 = 1e-3;
const INSTANCES: u64 = 20;
/// Largest share of checked elements that may be classified as kinks.
const MAX_KINK_SHARE: f64 = 0.02;

#[derive(Default)]
struct Tally {
    instances: usize,
    checked: usize,
    nonsmooth: usize,
    worst: f64,
}

impl Tally {
    fn add(&mut self, r: GradCheckReport) {
        self.instances += 1;
        self.checked += r.checked;
        self.nonsmooth += r.nonsmooth;
        self.worst = self.worst.max(r.max_rel_error);
    }

    fn verdict(&self, name: &str, tol: f64) -> Result<String, String> {
        let kink_share = self.nonsmooth as f64 / self.checked.max(1) as f64;
        let line = format!(
            "{name}: {} instances, {} elements, max rel {:.2e}, {} kinks",
            self.instances, self.checked, self.worst, self.nonsmooth
        );
        if self.instances >= INSTANCES as usize && self.worst < tol && kink_share <= MAX_KINK_SHARE {
            Ok(line)
        } else {
            Err(line)
        }
    }
}

fn checker(eps: f64, seed: u64) -> GradCheck {
    GradCheck {
        eps,
        kink_tolerance: Some(GRAD_TOL),
        param_samples: None,
        seed,
    }
}

/// Central-difference check of a plain function of several flat buffers.
fn fd_check(
    f: impl Fn(&[Vec<f64>]) -> f64,
    inputs: &[Vec<f64>],
    analytic: &[Vec<f64>],
    eps: impl Fn(f64) -> f64,
) -> GradCheckReport {
    let mut r = GradCheckReport::default();
    let mut work = inputs.to_vec();
    for (i, grads) in analytic.iter().enumerate() {
        for e in 0..grads.len() {
            let orig = work[i][e];
            let h = eps(orig);
            work[i][e] = orig + h;
            let plus = f(&work);
            work[i][e] = orig - h;
            let minus = f(&work);
            work[i][e] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let rel = (grads[e] - numeric).abs() / numeric.abs().max(REL_FLOOR);
            r.checked += 1;
            r.max_rel_error = r.max_rel_error.max(rel);
        }
    }
    r
}

fn grad_conv(t: &mut Tally) -> mfmamba::Result<()> {
    for i in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + i);
        let (cin, cout) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
        let k = [1, 3, 5][i as usize % 3];
        let (h, w) = (rng.gen_range(3..=6), rng.gen_range(3..=6));
        let x = uniform(&mut rng, [1, cin, h, w], -1.0, 1.0);
        let wt = uniform(&mut rng, [cout, cin, k, k], -0.5, 0.5);
        let b = uniform(&mut rng, [1, cout, 1, 1], -0.5, 0.5);
        let r = checker(1e-6, i).run(
            |g, v| {
                let y = g.conv2d(v[0], v[1], v[2])?;
                probe(g, y, i)
            },
            None,
            &[x, wt, b],
        )?;
        t.add(r);
    }
    Ok(())
}

fn grad_pointwise(t: &mut Tally, relu: bool) -> mfmamba::Result<()> {
    for i in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + i + relu as u64 * 50);
        let shape = [rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(1..=5), rng.gen_range(1..=5)];
        let x = if relu {
            off_zero(&mut rng, shape, 0.05, 2.0)
        } else {
            uniform(&mut rng, shape, -6.0, 6.0)
        };
        let r = checker(1e-6, i).run(
            |g, v| {
                let y = if relu { g.relu(v[0]) } else { g.sigmoid(v[0]) };
                probe(g, y, i)
            },
            None,
            &[x],
        )?;
        t.add(r);
    }
    Ok(())
}

fn grad_pools(t: &mut Tally) -> mfmamba::Result<()> {
    for i in 0..INSTANCES {
        for kind in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(300 + 3 * i + kind);
            let (h, w) = (2 * rng.gen_range(1..=3), 2 * rng.gen_range(1..=3));
            let shape = [rng.gen_range(1..=2), rng.gen_range(1..=3), h, w];
            let x = uniform(&mut rng, shape, -2.0, 2.0);
            let r = checker(1e-6, i).run(
                |g, v| {
                    let y = match kind {
                        0 => g.global_avg_pool(v[0])?,
                        1 => g.global_max_pool(v[0])?,
                        _ => g.max_pool2(v[0])?,
                    };
                    probe(g, y, i)
                },
                None,
                &[x],
            )?;
            t.add(r);
        }
    }
    Ok(())
}

fn grad_dpa(t: &mut Tally) -> mfmamba::Result<()> {
    for i in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + i);
        let shape = [1, rng.gen_range(1..=4), rng.gen_range(2..=5), rng.gen_range(2..=5)];
        let x = uniform(&mut rng, shape, -2.0, 2.0);
        let mode = if i % 4 == 3 { DpaMode::PrintedAvgTwice } else { DpaMode::Dual };
        let r = checker(1e-6, i).run(
            |g, v| {
                let y = dpa_forward(g, v[0], mode)?;
                probe(g, y, i)
            },
            None,
            &[x],
        )?;
        t.add(r);
    }
    Ok(())
}

fn grad_mhcb(t: &mut Tally) -> mfmamba::Result<()> {
    for i in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + i);
        let c = rng.gen_range(1..=2);
        let mut store = ParamStore::new();
        let block = MhcbBlock::new(&mut store, &mut Initializer::new(i), "m", c)?;
        let store = store.cast::<f64>();
        let shape = [1, c, rng.gen_range(3..=5), rng.gen_range(3..=5)];
        let x = uniform(&mut rng, shape, -1.0, 1.0);
        let gc = GradCheck {
            param_samples: Some(60),
            ..checker(1e-6, i)
        };
        let r = gc.run(
            |g, v| {
                let y = block.forward(g, v[0])?;
                probe(g, y, i)
            },
            Some(&store),
            &[x],
        )?;
        t.add(r);
    }
    Ok(())
}

fn grad_discretize(t: &mut Tally) -> mfmamba::Result<()> {
    for i in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + i);
        let (m, len) = (rng.gen_range(1..=4), rng.gen_range(1..=6));
        // Every fourth instance sits in the small-|ΔA| series branch.
        let tiny = i % 4 == 0;
        let a: Vec<f64> = (0..m)
            .map(|_| if tiny { -rng.gen_range(0.01..0.05) } else { -rng.gen_range(0.1..3.0) })
            .collect();
        let b: Vec<f64> = (0..len * m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let delta: Vec<f64> = (0..len)
            .map(|_| if tiny { rng.gen_range(1e-3..2e-3) } else { rng.gen_range(0.01..1.0) })
            .collect();
        let mode = if i % 5 == 4 { ZohMode::PrintedExpA } else { ZohMode::Standard };
        let wa = probe_weights(len * m, i);
        let wb = probe_weights(len * m, i + 1000);
        let loss = |v: &[Vec<f64>]| {
            let d = discretize(&v[0], &v[1], &v[2], mode).expect("valid system");
            d.a_bar.iter().zip(&wa).map(|(x, w)| x * w).sum::<f64>()
                + d.b_bar.iter().zip(&wb).map(|(x, w)| x * w).sum::<f64>()
        };
        let g = discretize_backward(&a, &b, &delta, mode, &wa, &wb)?;
        let r = fd_check(loss, &[a, b, delta], &[g.a, g.b, g.delta], |v| 1e-5 * v.abs().max(1e-2));
        t.add(r);
    }
    Ok(())
}

fn grad_scan(t: &mut Tally) -> mfmamba::Result<()> {
    for i in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + i);
        let (m, len) = (rng.gen_range(1..=4), rng.gen_range(1..=12));
        let mut v = |n: usize, lo: f64, hi: f64| (0..n).map(|_| rng.gen_range(lo..hi)).collect::<Vec<f64>>();
        let x = v(len, -1.0, 1.0);
        let a_bar = v(len * m, 0.2, 0.99);
        let b_bar = v(len * m, -1.0, 1.0);
        let c = v(len * m, -1.0, 1.0);
        let skip = v(1, -1.0, 1.0);
        let wy = probe_weights(len, i);
        let loss = |p: &[Vec<f64>]| {
            let d = DiscreteSsm::new(len, m, p[1].clone(), p[2].clone()).expect("sizes");
            let y = scan_recurrence(&p[0], &d, &p[3], p[4][0]).expect("sizes");
            y.iter().zip(&wy).map(|(a, b)| a * b).sum::<f64>()
        };
        let d = DiscreteSsm::new(len, m, a_bar.clone(), b_bar.clone())?;
        let g = scan_recurrence_backward(&x, &d, &c, skip[0], &wy)?;
        let r = fd_check(
            loss,
            &[x, a_bar, b_bar, c, skip],
            &[g.x, g.a_bar, g.b_bar, g.c, vec![g.skip]],
            |_| 1e-6,
        );
        t.add(r);
    }
    Ok(())
}

fn grad_ssm_2d(t: &mut Tally) -> mfmamba::Result<()> {
    for i in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(800 + i);
        let (c, m) = (rng.gen_range(1..=3), rng.gen_range(1..=4));
        let (h, w) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
        let n = rng.gen_range(1..=2);
        let dirs: Vec<ScanDirection> =
            ScanDirection::ALL.into_iter().filter(|_| rng.gen_bool(0.6)).collect();
        let dirs = if dirs.is_empty() { vec![ScanDirection::DiagBackward] } else { dirs };
        let opts = ScanOptions {
            dirs: DirectionSet::new(dirs)?,
            merge: if i % 2 == 0 { MergeMode::Sum } else { MergeMode::Mean },
            zoh: if i % 5 == 4 { ZohMode::PrintedExpA } else { ZohMode::Standard },
        };
        let inputs = vec![
            uniform(&mut rng, [n, c, h, w], -1.0, 1.0),
            uniform(&mut rng, [1, 1, c, c], -0.5, 0.5),
            uniform(&mut rng, [1, c, 1, 1], -2.0, 0.5),
            uniform(&mut rng, [1, 1, m, c], -0.5, 0.5),
            uniform(&mut rng, [1, 1, m, c], -0.5, 0.5),
            uniform(&mut rng, [1, 1, c, m], -1.0, 1.0),
            uniform(&mut rng, [1, c, 1, 1], -1.0, 1.0),
        ];
        let r = checker(1e-6, i).run(
            |g, v| {
                let vars = ScanVars {
                    w_delta: v[1],
                    b_delta: v[2],
                    w_b: v[3],
                    w_c: v[4],
                    a_log: v[5],
                    d: v[6],
                    state: m,
                };
                let y = g.selective_scan(v[0], vars, &opts)?;
                probe(g, y, i)
            },
            None,
            &inputs,
        )?;
        t.add(r);
    }
    Ok(())
}

fn grad_mub(t: &mut Tally) -> mfmamba::Result<()> {
    for i in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + i);
        let c = rng.gen_range(1..=3);
        let p = [1, 2][i as usize % 2];
        let side = p * rng.gen_range(1..=3);
        let cfg = MubConfig {
            in_channels: c,
            out_channels: rng.gen_range(1..=3),
            patch_grid: p,
            state: rng.gen_range(1..=4),
            scale: [1, 2][(i as usize / 2) % 2],
            scan: ScanOptions::default(),
        };
        let mut store = ParamStore::new();
        let block = MubBlock::new(&mut store, &mut Initializer::new(i), "u", cfg)?;
        let store = store.cast::<f64>();
        let x = uniform(&mut rng, [1, c, side, side], -1.0, 1.0);
        let gc = GradCheck {
            param_samples: Some(60),
            ..checker(1e-6, i)
        };
        let r = gc.run(
            |g, v| {
                let y = block.forward(g, v[0])?;
                probe(g, y, i)
            },
            Some(&store),
            &[x],
        )?;
        t.add(r);
    }
    Ok(())
}

fn grad_model(t: &mut Tally) -> mfmamba::Result<()> {
    for i in 0..INSTANCES {
        let task = Task::ALL[i as usize % 4];
        let cfg = ModelConfig {
            task,
            depth: 2,
            growth: 4,
            seed: i,
            ..ModelConfig::default()
        };
        let model = Model::build(&cfg)?;
        let side = model.size_multiple() * 2;
        let spec = cfg.task_spec(side);
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + i);
        let x = uniform(&mut rng, [1, 1, side, side], 0.0, 1.0);
        let target = uniform(&mut rng, [1, spec.out_channels, spec.output_size, spec.output_size], 0.0, 1.0);
        let store = model.params.cast::<f64>();
        let gc = GradCheck {
            param_samples: Some(80),
            kink_tolerance: Some(MODEL_GRAD_TOL),
            ..checker(1e-5, i)
        };
        let r = gc.run(
            |g, v| {
                let y = model.forward(g, v[0])?;
                let tv = g.input(target.clone());
                g.l1_loss(y, tv)
            },
            Some(&store),
            &[x],
        )?;
        t.add(r);
    }
    Ok(())
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    type Suite = fn(&mut Tally) -> mfmamba::Result<()>;
    let suites: [(&str, Suite, f64); 11] = [
        ("conv2d", grad_conv, GRAD_TOL),
        ("relu", |t| grad_pointwise(t, true), GRAD_TOL),
        ("sigmoid", |t| grad_pointwise(t, false), GRAD_TOL),
        ("pools", grad_pools, GRAD_TOL),
        ("dpa", grad_dpa, GRAD_TOL),
        ("mhcb", grad_mhcb, GRAD_TOL),
        ("discretize", grad_discretize, GRAD_TOL),
        ("scan_recurrence", grad_scan, GRAD_TOL),
        ("ssm_2d", grad_ssm_2d, GRAD_TOL),
        ("mub", grad_mub, GRAD_TOL),
        ("model", grad_model, MODEL_GRAD_TOL),
    ];
    let mut lines = Vec::new();
    let mut failed = Vec::new();
    for (name, run, tol) in suites {
        let mut tally = Tally::default();
        run(&mut tally).map_err(|e| format!("{name}: {e}"))?;
        match tally.verdict(name, tol) {
            Ok(l) => lines.push(l),
            Err(l) => failed.push(l),
        }
    }
    let elapsed = start.elapsed();
    for l in lines.iter().chain(&failed) {
        println!("    {l}");
    }
    ensure(failed.is_empty(), || format!("{} suites above tolerance", failed.len()))?;
    ensure(elapsed < Duration::from_secs(300), || format!("took {elapsed:?}"))?;
    Ok(format!("11 suites within tolerance in {:.1} s", elapsed.as_secs_f64()))
}

// ---------------------------------------------------------------- criterion 2

fn naive_scan(x: &[f64], a_bar: &[f64], b_bar: &[f64], c: &[f64], skip: f64, m: usize) -> Vec<f64> {
    let mut h = vec![0.0; m];
    x.iter()
        .enumerate()
        .map(|(t, &xt)| {
            for j in 0..m {
                h[j] = a_bar[t * m + j] * h[j] + b_bar[t * m + j] * xt;
            }
            (0..m).map(|j| c[t * m + j] * h[j]).sum::<f64>() + skip * xt
        })
        .collect()
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (len, m) = (rng.gen_range(1..=64), rng.gen_range(1..=16));
        let mut v = |n: usize, lo: f64, hi: f64| (0..n).map(|_| rng.gen_range(lo..hi)).collect::<Vec<f64>>();
        let x = v(len, -1.0, 1.0);
        let a_bar = v(len * m, 0.0, 1.0);
        let b_bar = v(len * m, -1.0, 1.0);
        let c = v(len * m, -1.0, 1.0);
        let skip = v(1, -1.0, 1.0)[0];
        let expect = naive_scan(&x, &a_bar, &b_bar, &c, skip, m);
        let d = DiscreteSsm::new(len, m, a_bar, b_bar).map_err(|e| e.to_string())?;
        let got = scan_recurrence_fast(&x, &d, &c, skip).map_err(|e| e.to_string())?;
        for (a, b) in got.iter().zip(&expect) {
            worst = worst.max((a - b).abs());
        }
    }
    ensure(worst <= 1e-6, || format!("max abs diff {worst:.3e}"))?;
    Ok(format!("1000 instances, max abs diff {worst:.3e}"))
}

// ---------------------------------------------------------------- criterion 3

/// `(e^z − 1) / z` from the power series, summed smallest term first.
fn ratio_series(z: f64) -> f64 {
    let mut terms = vec![1.0];
    let mut term = 1.0;
    for n in 2..40 {
        term *= z / n as f64;
        terms.push(term);
    }
    terms.iter().rev().sum()
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut taylor = 0;
    for k in 0..100 {
        let a = -(rng.gen_range((1e-3f64).ln()..(10.0f64).ln())).exp();
        let delta = if k % 3 == 0 {
            rng.gen_range(1e-9..1e-4) / a.abs().max(1.0)
        } else {
            (rng.gen_range((1e-4f64).ln()..(1.0f64).ln())).exp()
        };
        let b = rng.gen_range(-2.0..2.0);
        let z = delta * a;
        if z.abs() < 1e-4 {
            taylor += 1;
        }
        let ratio = if z.abs() < 0.5 { ratio_series(z) } else { z.exp_m1() / z };
        let (a_ref, b_ref) = (z.exp(), delta * ratio * b);
        let d = discretize(&[a], &[b], &[delta], ZohMode::Standard).map_err(|e| e.to_string())?;
        let rel = |got: f64, want: f64| (got - want).abs() / want.abs();
        worst = worst.max(rel(d.a_bar[0], a_ref)).max(rel(d.b_bar[0], b_ref));
    }
    ensure(taylor >= 20, || format!("only {taylor} pairs in the series branch"))?;
    ensure(worst <= 1e-10, || format!("max rel error {worst:.3e}"))?;
    Ok(format!("100 pairs ({taylor} with |ΔA| < 1e-4), max rel error {worst:.3e}"))
}

// ---------------------------------------------------------------- criterion 4

fn check_perm(dir: ScanDirection, h: usize, w: usize) -> Result<(), String> {
    let perm = direction_perm(dir, h, w).map_err(|e| e.to_string())?;
    let mut seen = vec![false; h * w];
    for &p in &perm {
        ensure(p < h * w && !seen[p], || format!("{dir} {h}x{w}: index {p} repeated or out of range"))?;
        seen[p] = true;
    }
    ensure(perm.len() == h * w, || format!("{dir} {h}x{w}: length {}", perm.len()))?;
    let mut fwd = direction_perm(dir.forward(), h, w).map_err(|e| e.to_string())?;
    if dir.is_backward() {
        fwd.reverse();
        ensure(fwd == perm, || format!("{dir} {h}x{w} is not the reversed forward order"))?;
    }
    // Forward orders checked against their definitions.
    let rc = |p: usize| (p / w, p % w);
    let ordered = perm.windows(2).all(|pair| {
        let ((i0, j0), (i1, j1)) = (rc(pair[0]), rc(pair[1]));
        match dir {
            ScanDirection::RowForward => pair[1] == pair[0] + 1,
            ScanDirection::ColForward => (j0, i0) < (j1, i1),
            ScanDirection::DiagForward => (i0 + j0, i0) < (i1 + j1, i1),
            _ => true,
        }
    });
    ensure(ordered, || format!("{dir} {h}x{w}: visiting order breaks its definition"))
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for c in 1..=4 {
        let mut store = ParamStore::new();
        let block = MhcbBlock::zeros(&mut store, "z", c).map_err(|e| e.to_string())?;
        for _ in 0..5 {
            let shape = [rng.gen_range(1..=2), c, rng.gen_range(1..=9), rng.gen_range(1..=9)];
            let x = Tensor::<f32>::from_fn(shape, |_, _, _, _| rng.gen_range(-100.0f32..100.0));
            let y = block.apply(&store, &x).map_err(|e| e.to_string())?;
            ensure(y.data().iter().zip(x.data()).all(|(a, b)| a.to_bits() == b.to_bits()), || {
                format!("zero MHCB changed a {c}-channel input")
            })?;
        }
    }
    let mut roundtrips = 0;
    for p in 1..=3 {
        for _ in 0..20 {
            let shape = [rng.gen_range(1..=2), rng.gen_range(1..=3), p * rng.gen_range(1..=8), p * rng.gen_range(1..=8)];
            let x = Tensor::<f32>::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0f32..1.0));
            let tiles = patch_split(&x, p).map_err(|e| e.to_string())?;
            let back = patch_merge(&tiles, p).map_err(|e| e.to_string())?;
            ensure(back == x && tiles.len() == p * p, || format!("patch roundtrip failed for {p}×{p} on {shape:?}"))?;
            roundtrips += 1;
        }
    }
    let mut grids = 0;
    for h in 1..=64 {
        for w in 1..=64 {
            for dir in ScanDirection::ALL {
                check_perm(dir, h, w)?;
            }
            grids += 1;
        }
    }
    Ok(format!("zero MHCB identity on 20 inputs, {roundtrips} patch roundtrips, 6 orders on {grids} grids"))
}

// ---------------------------------------------------------------- criterion 5

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut elements = 0usize;
    for k in 0..10_000 {
        let shape = [rng.gen_range(1..=2), rng.gen_range(1..=4), rng.gen_range(1..=6), rng.gen_range(1..=6)];
        let scale = [1e-3f32, 1.0, 10.0, 50.0][k % 4];
        let x = Tensor::<f32>::from_fn(shape, |_, _, _, _| {
            if rng.gen_bool(0.05) {
                0.0
            } else {
                rng.gen_range(-scale..scale)
            }
        });
        let mode = if k % 2 == 0 { DpaMode::Dual } else { DpaMode::PrintedAvgTwice };
        let y = dpa(&x, mode).map_err(|e| e.to_string())?;
        for (&xv, &yv) in x.data().iter().zip(y.data()) {
            ensure(yv.abs() <= 2.0 * xv.abs(), || format!("|{yv}| > 2·|{xv}|"))?;
            let same_sign = if xv == 0.0 { yv == 0.0 } else { yv.signum() == xv.signum() && yv != 0.0 };
            ensure(same_sign, || format!("sign changed: {xv} → {yv}"))?;
        }
        elements += x.len();
    }
    Ok(format!("10000 tensors, {elements} elements"))
}

// ---------------------------------------------------------------- criterion 6

fn criterion_6() -> Outcome {
    let mut cases = 0;
    for task in Task::ALL {
        for depth in 2..=4 {
            let cfg = ModelConfig {
                task,
                depth,
                growth: 4,
                ..ModelConfig::default()
            };
            let model = Model::build(&cfg).map_err(|e| e.to_string())?;
            let side = model.size_multiple();
            let spec = cfg.task_spec(side);
            let y = model
                .infer(&Tensor::full([1, 1, side, side], 0.5))
                .map_err(|e| format!("{task} depth {depth}: {e}"))?;
            let want = [1, spec.out_channels, spec.output_size, spec.output_size];
            ensure(y.shape().dims() == want, || {
                format!("{task} depth {depth}: got {}, want {want:?}", y.shape())
            })?;
            ensure(model.node_count() == depth * (depth + 1) / 2, || format!("{task} depth {depth}: node count"))?;
            let bad = [[1, 3, side, side], [1, 1, side + 1, side + 1], [1, 1, side, 2 * side]];
            for b in bad {
                ensure(model.infer(&Tensor::zeros(b)).is_err(), || format!("{task} depth {depth} accepted {b:?}"))?;
            }
            cases += 1;
        }
    }
    Ok(format!("{cases} task × depth combinations"))
}

// ---------------------------------------------------------------- criteria 7, 8

fn toy_samples(task: Task) -> Result<Vec<Sample>, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    write_toy_corpus(dir.path(), 4, 64, 10).map_err(|e| e.to_string())?;
    let spec = DatasetSpec {
        root: dir.path().to_path_buf(),
        split: Split::Test,
        tile: 64,
        task,
    };
    ingest(&spec).map_err(|e| e.to_string())
}

fn toy_config() -> ModelConfig {
    ModelConfig {
        task: Task::JointX2,
        depth: 4,
        growth: 8,
        seed: 10,
        ..ModelConfig::default()
    }
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let data = toy_samples(Task::JointX2)?;
    let tc = TrainConfig {
        lr: 1e-3,
        epochs: 1000,
        step_every: 1000,
        max_iters: Some(500),
        seed: 10,
        ..TrainConfig::default()
    };
    let run = || -> Result<(Model, f64, f64), String> {
        let mut model = Model::build(&toy_config()).map_err(|e| e.to_string())?;
        let r = train(&mut model, &data, &tc, None).map_err(|e| e.to_string())?;
        ensure(r.curve.len() == 500 && r.curve.iter().all(|(_, l)| l.is_finite()), || {
            "loss curve has a non-finite entry".into()
        })?;
        Ok((model, r.initial_l1, r.final_l1))
    };
    let (model, initial, last) = run()?;
    let (_, again_initial, again_last) = run()?;
    let elapsed = start.elapsed();
    let ratio = last / initial;
    let psnr = evaluate(&model, &data, None).map_err(|e| e.to_string())?.mean().psnr;
    ensure(
        again_initial.to_bits() == initial.to_bits() && again_last.to_bits() == last.to_bits(),
        || "second run differs".into(),
    )?;
    ensure(ratio < 0.1, || format!("final/initial L1 = {ratio:.4} ({last:.5} / {initial:.5})"))?;
    ensure(elapsed < Duration::from_secs(600), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "L1 {initial:.5} → {last:.5} (ratio {ratio:.4}), bit-identical rerun, mean PSNR {psnr:.2} dB, {:.0} s for both runs",
        elapsed.as_secs_f64()
    ))
}

const TABLE1_LABELS: [&str; 6] = ["w/o DPA", "w/o MUB", "w/o MHCB", "w/ MHCB-1", "w/ MHCB-2 (ours)", "w/ MHCB-3"];

fn criterion_8() -> Outcome {
    let data = toy_samples(Task::JointX2)?;
    let rows = table_rows(&toy_config(), AblationTable::Modules);
    let labels: Vec<&str> = rows.iter().map(|r| r.label).collect();
    ensure(labels == TABLE1_LABELS, || format!("rows {labels:?}"))?;
    let tc = TrainConfig {
        lr: 1e-3,
        epochs: 1000,
        step_every: 1000,
        max_iters: Some(40),
        seed: 10,
        ..TrainConfig::default()
    };
    let results: Vec<AblationResult> =
        mfmamba::pipeline::ablation_sweep(&rows, &data, &tc).map_err(|e| e.to_string())?;
    let mut summary = Vec::new();
    for r in &results {
        let t = &r.train;
        ensure(t.curve.iter().all(|(_, l)| l.is_finite()), || format!("{}: non-finite loss", r.row.label))?;
        ensure(t.final_l1 < t.initial_l1, || {
            format!("{}: L1 {:.5} → {:.5}", r.row.label, t.initial_l1, t.final_l1)
        })?;
        summary.push(format!("{} {:.3}", r.row.label, t.final_l1 / t.initial_l1));
    }
    let md = ablation_markdown(&results);
    let body: Vec<&str> = md.lines().filter(|l| l.starts_with("| ") && !l.starts_with("| |")).collect();
    ensure(body.len() == 6, || format!("table has {} body rows", body.len()))?;
    for (line, label) in body.iter().zip(TABLE1_LABELS) {
        ensure(line.starts_with(&format!("| {label} |")), || format!("row {line:?} should be {label}"))?;
        ensure(line.matches('|').count() == 11, || format!("row {line:?} has the wrong column count"))?;
    }
    Ok(format!("6 rows, final/initial L1: {}", summary.join(", ")))
}

// ---------------------------------------------------------------- criterion 9

fn criterion_9() -> Outcome {
    let rows = bench_scan(&[4096, 8192], 5, 100).map_err(|e| e.to_string())?;
    let scan = doubling_ratio(&rows, Kernel::Scan, 4096).ok_or("missing scan rows")?;
    let attn = doubling_ratio(&rows, Kernel::Attention, 4096).ok_or("missing attention rows")?;
    ensure(scan < 3.0 && attn > 3.2, || format!("scan ratio {scan:.2}, attention ratio {attn:.2}"))?;
    Ok(format!("L 4096 → 8192: scan ×{scan:.2}, attention ×{attn:.2}"))
}

// ---------------------------------------------------------------- criterion 10

fn criterion_10() -> Outcome {
    let e = |r: mfmamba::Result<f64>| r.map_err(|e| e.to_string());
    let close = |name: &str, got: f64, want: f64, tol: f64| {
        ensure((got - want).abs() <= tol, || format!("{name}: {got} vs {want}"))
    };
    let a = Tensor::<f64>::from_fn([1, 1, 16, 16], |_, _, y, x| ((y * 16 + x) % 200) as f64);
    let b = a.map(|v| v + 16.0);
    close("mse uniform 16", e(mse(&a, &b))?, 256.0, 1e-6)?;
    close("mae uniform 16", e(mae(&a, &b))?, 16.0, 1e-6)?;
    close("psnr uniform 16", e(psnr(&a, &b))?, 10.0 * (65025.0f64 / 256.0).log10(), 1e-6)?;

    let p = Tensor::<f64>::from_vec([1, 1, 1, 2], vec![0.0, 255.0]).map_err(|e| e.to_string())?;
    let q = Tensor::<f64>::from_vec([1, 1, 1, 2], vec![255.0, 0.0]).map_err(|e| e.to_string())?;
    close("mse full swing", e(mse(&p, &q))?, 65025.0, 1e-6)?;
    close("mae full swing", e(mae(&p, &q))?, 255.0, 1e-6)?;
    close("psnr full swing", e(psnr(&p, &q))?, 0.0, 1e-6)?;
    close("psnr identical", e(psnr(&a, &a))?, 100.0, 1e-6)?;

    let c1 = (0.01f64 * 255.0).powi(2);
    let want = (2.0 * 100.0 * 150.0 + c1) / (100.0f64.powi(2) + 150.0f64.powi(2) + c1);
    let ca = Tensor::<f64>::full([1, 1, 16, 16], 100.0);
    let cb = Tensor::<f64>::full([1, 1, 16, 16], 150.0);
    close("ssim constants", e(ssim(&ca, &cb))?, want, 1e-4)?;
    close("ssim identical", e(ssim(&a, &a))?, 1.0, 1e-4)?;
    let inv = a.map(|v| 255.0 - v);
    let s = e(ssim(&a, &inv))?;
    ensure(s < 1.0, || format!("ssim against inverse {s}"))?;

    let rgb = |v: [f64; 3]| Tensor::<f64>::from_fn([1, 3, 4, 4], |_, c, _, _| v[c]);
    close("sam identical", e(sam(&a, &a))?, 0.0, 1e-6)?;
    close("sam orthogonal", e(sam(&rgb([1.0, 0.0, 0.0]), &rgb([0.0, 1.0, 0.0])))?, FRAC_PI_2, 1e-6)?;
    close("sam 45°", e(sam(&rgb([1.0, 1.0, 0.0]), &rgb([1.0, 0.0, 0.0])))?, FRAC_PI_4, 1e-6)?;

    let label = Tensor::<f64>::from_fn([1, 3, 16, 16], |_, c, y, x| ((c * 50 + y * 9 + x * 5) % 256) as f64);
    let m = ImageMetrics::compute("self", &label, &label).map_err(|e| e.to_string())?;
    ensure((m.psnr, m.ssim, m.mse, m.mae, m.sam) == (100.0, 1.0, 0.0, 0.0, 0.0), || {
        format!("self comparison gave {m:?}")
    })?;
    Ok("closed-form values matched; self comparison is (100 dB, 1, 0, 0, 0)".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient suite", criterion_1),
        ("scan oracle", criterion_2),
        ("ZOH closed form", criterion_3),
        ("structural identities", criterion_4),
        ("DPA bounds", criterion_5),
        ("shape contracts", criterion_6),
        ("overfit smoke", criterion_7),
        ("module ablation smoke", criterion_8),
        ("scan scaling", criterion_9),
        ("metrics oracle", criterion_10),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                failures += 1;
                println!("criterion {n:>2} FAIL  {name}: {detail} [{secs:.1} s]");
            }
        }
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
