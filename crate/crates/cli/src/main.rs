//! `mfmamba`: train, evaluate, run and benchmark restoration models.
//!
//! Settings are resolved in three layers: built-in defaults, then the
//! `--config` file (flat `key = value`), then command-line flags.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use mfmamba::backbone::checkpoint;
use mfmamba::gradcheck::GradCheck;
use mfmamba::pipeline::ablation::{all_rows, write_ablation};
use mfmamba::pipeline::bench::{bench_csv, doubling_ratio};
use mfmamba::pipeline::toy::write_toy_corpus;
use mfmamba::pipeline::{
    ablation_sweep, bench_scan, evaluate, infer_file, ingest, table_rows, train, AblationTable, DatasetSpec, Kernel,
    RunSettings, Split,
};
use mfmamba::{Error, Model, Result, Tensor};

#[derive(Parser, Debug)]
#[command(name = "mfmamba", version, about = "Multi-function PAN restoration with a state-space UNet++")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// sr_x2, sr_x4, colorize or joint_x2
    #[arg(long, global = true)]
    task: Option<String>,
    /// UNet++ depth
    #[arg(long, global = true)]
    depth: Option<String>,
    /// Growth rate: channel width of the first level
    #[arg(long, global = true)]
    growth: Option<String>,
    /// Patch grid side of the upsampling block (1, 2 or 3)
    #[arg(long, global = true)]
    patches: Option<String>,
    /// Scan directions: `all`, `four` or a comma list such as row_fwd,diag_bwd
    #[arg(long, global = true)]
    dirs: Option<String>,
    /// Seed for initialisation and data order
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Flat `key = value` settings file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Extra `key=value` setting, repeatable; applied after the flags above
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model on a tile corpus
    Train(DataArgs),
    /// Score a checkpoint on a corpus: report.csv plus error heatmaps
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Restore one grey PNG with a checkpoint
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Defaults to `<out>/<input stem>_restored.png`
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Time the linear scan against quadratic attention
    BenchScan {
        /// Ascending sequence lengths
        #[arg(long, value_delimiter = ',', default_values_t = [1024usize, 2048, 4096, 8192])]
        lengths: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        runs: usize,
        /// Scan calls averaged inside each timed sample
        #[arg(long, default_value_t = 100)]
        reps: usize,
    },
    /// Train and score every ablation row under one schedule
    Ablate {
        #[command(flatten)]
        data: DataArgs,
        /// Tables to run: modules, depth, scan_patch (default: all)
        #[arg(long, value_delimiter = ',')]
        tables: Vec<String>,
    },
    /// Check model gradients against central differences in f64
    Gradcheck {
        /// Models checked, seeds `seed..seed + instances`
        #[arg(long, default_value_t = 3)]
        instances: u64,
        /// Parameter elements sampled per model
        #[arg(long, default_value_t = 80)]
        param_samples: usize,
    },
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Corpus root holding rgb/ (and optionally pan/)
    #[arg(long)]
    data: Option<PathBuf>,
    /// train, val or test (test uses every tile)
    #[arg(long)]
    split: Option<Split>,
    /// Label tile side
    #[arg(long)]
    tile: Option<String>,
    /// Write a synthetic corpus of this many tiles to <out>/toy and use it
    #[arg(long)]
    toy: Option<usize>,
}

fn settings(common: &Common, base: &[(&str, &str)]) -> Result<RunSettings> {
    let mut s = RunSettings::default();
    for (k, v) in base {
        s.set(k, v)?;
    }
    if let Some(path) = &common.config {
        s.apply_file(path)?;
    }
    let flags = [
        ("task", &common.task),
        ("depth", &common.depth),
        ("growth", &common.growth),
        ("patch_grid", &common.patches),
        ("scan_dirs", &common.dirs),
        ("seed", &common.seed),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            s.set(k, v)?;
        }
    }
    if let Some(out) = &common.out {
        s.out = out.clone();
    }
    for pair in &common.set {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {pair:?}")))?;
        s.set(k.trim(), v.trim())?;
    }
    s.validate()?;
    Ok(s)
}

fn load_data(s: &mut RunSettings, args: &DataArgs, default_split: Split) -> Result<Vec<mfmamba::pipeline::Sample>> {
    if let Some(tile) = &args.tile {
        s.set("tile", tile)?;
    }
    let root = match (args.toy, &args.data, &s.data) {
        (Some(n), _, _) => {
            let root = s.out.join("toy");
            write_toy_corpus(&root, n, s.tile as u32, s.train.seed)?;
            root
        }
        (None, Some(d), _) | (None, None, Some(d)) => d.clone(),
        (None, None, None) => return Err(Error::Config("no data: pass --data <dir>, --toy <n> or set data = <dir>".into())),
    };
    let spec = DatasetSpec {
        root,
        split: args.split.unwrap_or(default_split),
        tile: s.tile,
        task: s.model.task,
    };
    let data = ingest(&spec)?;
    log::info!("{} samples from {} ({})", data.len(), spec.root.display(), spec.split);
    Ok(data)
}

/// Loads a checkpoint and rejects explicit flags that contradict it.
fn load_model(path: &Path, common: &Common) -> Result<Model> {
    let model = checkpoint::load(path)?;
    let cfg = &model.cfg;
    let stored = [
        ("task", &common.task, cfg.task.to_string()),
        ("depth", &common.depth, cfg.depth.to_string()),
        ("growth", &common.growth, cfg.growth.to_string()),
        ("patches", &common.patches, cfg.patch_grid.to_string()),
    ];
    for (name, flag, have) in stored {
        if let Some(want) = flag {
            if want.trim() != have {
                return Err(Error::Config(format!(
                    "--{name} {want} contradicts checkpoint {} ({name} = {have})",
                    path.display()
                )));
            }
        }
    }
    Ok(model)
}

/// `Ok(false)` is a completed run whose check failed.
fn run(cli: Cli) -> Result<bool> {
    let common = &cli.common;
    match &cli.cmd {
        Command::Train(args) => {
            let mut s = settings(common, &[])?;
            let data = load_data(&mut s, args, Split::Train)?;
            let mut model = Model::build(&s.model)?;
            log::info!("{} parameters", model.num_params());
            let start = Instant::now();
            let report = train(&mut model, &data, &s.train, Some(&s.out))?;
            println!(
                "trained {} updates in {:.1} s: L1 {:.6} -> {:.6}; wrote {}",
                report.curve.len(),
                start.elapsed().as_secs_f64(),
                report.initial_l1,
                report.final_l1,
                s.out.join("model.mfmb").display()
            );
        }
        Command::Eval { checkpoint, data } => {
            let model = load_model(checkpoint, common)?;
            let mut s = settings(common, &[])?;
            s.model = model.cfg.clone();
            let samples = load_data(&mut s, data, Split::Test)?;
            let report = evaluate(&model, &samples, Some(&s.out))?;
            let m = report.mean();
            println!(
                "{} images: PSNR {:.3} dB, SSIM {:.4}, MSE {:.3}, MAE {:.3}, SAM {:.4}; wrote {}",
                report.len(),
                m.psnr,
                m.ssim,
                m.mse,
                m.mae,
                m.sam,
                s.out.join("report.csv").display()
            );
        }
        Command::Infer {
            checkpoint,
            input,
            output,
        } => {
            let model = load_model(checkpoint, common)?;
            let s = settings(common, &[])?;
            let output = output.clone().unwrap_or_else(|| {
                let stem = input.file_stem().map_or("image".into(), |x| x.to_string_lossy());
                s.out.join(format!("{stem}_restored.png"))
            });
            let y = infer_file(&model, input, &output)?;
            println!("wrote {} ({})", output.display(), y.shape());
        }
        Command::BenchScan { lengths, runs, reps } => {
            let s = settings(common, &[])?;
            let rows = bench_scan(lengths, *runs, *reps)?;
            std::fs::create_dir_all(&s.out)?;
            let path = s.out.join("bench.csv");
            std::fs::write(&path, bench_csv(&rows))?;
            for l in lengths {
                if let (Some(a), Some(b)) = (
                    doubling_ratio(&rows, Kernel::Scan, *l),
                    doubling_ratio(&rows, Kernel::Attention, *l),
                ) {
                    println!("L {l} -> {}: scan x{a:.2}, attention x{b:.2}", 2 * l);
                }
            }
            println!("wrote {}", path.display());
        }
        Command::Ablate { data, tables } => {
            let mut s = settings(common, &[("max_iters", "40")])?;
            let samples = load_data(&mut s, data, Split::Train)?;
            let rows = if tables.is_empty() {
                all_rows(&s.model)
            } else {
                let mut rows = Vec::new();
                for t in tables {
                    let table = AblationTable::ALL
                        .into_iter()
                        .find(|x| x.tag() == t.trim())
                        .ok_or_else(|| Error::Config(format!("unknown ablation table {t:?}")))?;
                    rows.extend(table_rows(&s.model, table));
                }
                rows
            };
            let results = ablation_sweep(&rows, &samples, &s.train)?;
            write_ablation(&results, &s.out)?;
            println!("{} rows; wrote {}", results.len(), s.out.join("ablation.md").display());
        }
        Command::Gradcheck {
            instances,
            param_samples,
        } => {
            // Starts from a small model so the f64 check stays quick.
            let s = settings(common, &[("depth", "2"), ("growth", "4")])?;
            let mut worst = 0.0f64;
            for i in 0..*instances {
                let mut cfg = s.model.clone();
                cfg.seed = s.model.seed + i;
                let model = Model::build(&cfg)?;
                let side = model.size_multiple() * 2;
                let spec = cfg.task_spec(side);
                let x = Tensor::<f64>::from_fn([1, 1, side, side], |_, _, y, x| ((y * 7 + x * 3 + i as usize) % 11) as f64 / 10.0);
                let target = Tensor::<f64>::from_fn(
                    [1, spec.out_channels, spec.output_size, spec.output_size],
                    |_, c, y, x| ((c * 5 + y * 3 + x) % 13) as f64 / 12.0,
                );
                let store = model.params.cast::<f64>();
                let check = GradCheck {
                    eps: 1e-5,
                    kink_tolerance: Some(1e-3),
                    param_samples: Some(*param_samples),
                    seed: cfg.seed,
                };
                let r = check.run(
                    |g, v| {
                        let y = model.forward(g, v[0])?;
                        let t = g.input(target.clone());
                        g.l1_loss(y, t)
                    },
                    Some(&store),
                    &[x],
                )?;
                println!(
                    "seed {}: {} elements, max rel error {:.3e}, {} kinks",
                    cfg.seed, r.checked, r.max_rel_error, r.nonsmooth
                );
                worst = worst.max(r.max_rel_error);
            }
            if worst >= 1e-3 {
                eprintln!("gradient check failed: max rel error {worst:.3e}");
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
