//! Module, depth and scan/patch ablations trained under one protocol.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::backbone::{AblationFlag, Model, ModelConfig};
use crate::error::Result;
use crate::metrics::ImageMetrics;
use crate::ssm::{DirectionSet, ScanDirection};

use super::data::Sample;
use super::eval::evaluate;
use super::train::{train, TrainConfig, TrainReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AblationTable {
    /// Module on/off switches and stem block count.
    Modules,
    /// UNet++ depth.
    Depth,
    /// Patch grid and scan direction set.
    ScanPatch,
}

impl AblationTable {
    pub const ALL: [AblationTable; 3] = [AblationTable::Modules, AblationTable::Depth, AblationTable::ScanPatch];

    pub fn tag(self) -> &'static str {
        match self {
            AblationTable::Modules => "modules",
            AblationTable::Depth => "depth",
            AblationTable::ScanPatch => "scan_patch",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub table: AblationTable,
    pub label: &'static str,
    pub cfg: ModelConfig,
}

/// The rows of `table`, derived from `base`.
pub fn table_rows(base: &ModelConfig, table: AblationTable) -> Vec<AblationRow> {
    let row = |label, cfg| AblationRow { table, label, cfg };
    let with = |f: &dyn Fn(&mut ModelConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    match table {
        AblationTable::Modules => vec![
            row("w/o DPA", base.ablate(AblationFlag::Dpa)),
            row("w/o MUB", base.ablate(AblationFlag::Mub)),
            row("w/o MHCB", base.ablate(AblationFlag::Mhcb)),
            row("w/ MHCB-1", with(&|c| c.mhcb_count = 1)),
            row("w/ MHCB-2 (ours)", with(&|c| c.mhcb_count = 2)),
            row("w/ MHCB-3", with(&|c| c.mhcb_count = 3)),
        ],
        AblationTable::Depth => vec![
            row("2", with(&|c| c.depth = 2)),
            row("3", with(&|c| c.depth = 3)),
            row("4 (ours)", with(&|c| c.depth = 4)),
        ],
        AblationTable::ScanPatch => vec![
            row("3×3 patch", with(&|c| c.patch_grid = 3)),
            row("w/o MUB", base.ablate(AblationFlag::Mub)),
            row(
                "w/ MUB (diag_fwd scan)",
                with(&|c| c.scan_dirs = DirectionSet::four_plus(ScanDirection::DiagForward)),
            ),
            row(
                "w/ MUB (diag_bwd scan)",
                with(&|c| c.scan_dirs = DirectionSet::four_plus(ScanDirection::DiagBackward)),
            ),
            row(
                "2×2 MUB (ours)",
                with(&|c| {
                    c.patch_grid = 2;
                    c.scan_dirs = DirectionSet::all();
                }),
            ),
        ],
    }
}

/// Every row of every table in order: 6 + 3 + 5.
pub fn all_rows(base: &ModelConfig) -> Vec<AblationRow> {
    AblationTable::ALL.iter().flat_map(|&t| table_rows(base, t)).collect()
}

#[derive(Clone, Debug)]
pub struct AblationResult {
    pub row: AblationRow,
    pub train: TrainReport,
    pub metrics: ImageMetrics,
}

/// Trains and evaluates every row with identical data and schedule.
/// All configurations are checked against the data before any training starts.
pub fn ablation_sweep(rows: &[AblationRow], data: &[Sample], tc: &TrainConfig) -> Result<Vec<AblationResult>> {
    let mut models = Vec::with_capacity(rows.len());
    for r in rows {
        let m = Model::build(&r.cfg)?;
        for s in data {
            m.check_input(s.input.shape())?;
        }
        models.push(m);
    }
    let mut out = Vec::with_capacity(rows.len());
    for (row, mut model) in rows.iter().zip(models) {
        log::info!("ablation {} / {}", row.table.tag(), row.label);
        let report = train(&mut model, data, tc, None)?;
        let metrics = evaluate(&model, data, None)?.mean();
        out.push(AblationResult {
            row: row.clone(),
            train: report,
            metrics,
        });
    }
    Ok(out)
}

fn mark(on: bool) -> &'static str {
    if on {
        "✓"
    } else {
        "✗"
    }
}

/// One Markdown table per ablation table present in `results`.
pub fn ablation_markdown(results: &[AblationResult]) -> String {
    let mut s = String::new();
    for table in AblationTable::ALL {
        let rows: Vec<&AblationResult> = results.iter().filter(|r| r.row.table == table).collect();
        if rows.is_empty() {
            continue;
        }
        match table {
            AblationTable::Modules => {
                s.push_str("| | MHCB | DPA | MUB | PSNR↑ | SSIM↑ | MSE↓ | MAE↓ | L1 start | L1 end |\n");
                s.push_str("|---|---|---|---|---|---|---|---|---|---|\n");
            }
            AblationTable::Depth => {
                s.push_str("| UNet++ depth | PSNR↑ | SSIM↑ | MSE↓ | MAE↓ | SAM↓ | L1 start | L1 end |\n");
                s.push_str("|---|---|---|---|---|---|---|---|\n");
            }
            AblationTable::ScanPatch => {
                s.push_str("| Configuration | PSNR↑ | SSIM↑ | MSE↓ | MAE↓ | SAM↓ | L1 start | L1 end |\n");
                s.push_str("|---|---|---|---|---|---|---|---|\n");
            }
        }
        for r in rows {
            let m = &r.metrics;
            let c = &r.row.cfg;
            let tail = format!("{:.4} | {:.4} |", r.train.initial_l1, r.train.final_l1);
            let _ = match table {
                AblationTable::Modules => writeln!(
                    s,
                    "| {} | {} | {} | {} | {:.3} | {:.3} | {:.3} | {:.3} | {tail}",
                    r.row.label,
                    mark(c.stem_blocks() > 0),
                    mark(c.enable_dpa),
                    mark(c.enable_mub),
                    m.psnr,
                    m.ssim,
                    m.mse,
                    m.mae
                ),
                _ => writeln!(
                    s,
                    "| {} | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} | {tail}",
                    r.row.label, m.psnr, m.ssim, m.mse, m.mae, m.sam
                ),
            };
        }
        s.push('\n');
    }
    s
}

pub fn ablation_csv(results: &[AblationResult]) -> String {
    let mut s = String::from("table,row,mhcb,dpa,mub,depth,patch_grid,scan_dirs,psnr,ssim,mse,mae,sam,initial_l1,final_l1\n");
    for r in results {
        let (c, m) = (&r.row.cfg, &r.metrics);
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.9},{:.9}",
            r.row.table.tag(),
            r.row.label,
            c.stem_blocks(),
            c.enable_dpa,
            c.enable_mub,
            c.depth,
            c.patch_grid,
            c.scan_dirs.to_string().replace(',', "+"),
            m.psnr,
            m.ssim,
            m.mse,
            m.mae,
            m.sam,
            r.train.initial_l1,
            r.train.final_l1
        );
    }
    s
}

pub fn write_ablation(results: &[AblationResult], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("ablation.md"), ablation_markdown(results))?;
    fs::write(dir.join("ablation.csv"), ablation_csv(results))?;
    Ok(())
}
