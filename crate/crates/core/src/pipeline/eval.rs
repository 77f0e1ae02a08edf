use std::fs;
use std::path::Path;

use crate::backbone::Model;
use crate::error::{Error, Result};
use crate::metrics::{save_heatmap, to_eval_scale, ImageMetrics, MetricsReport};
use crate::tensor::Tensor;

use super::data::{read_gray, write_png, Sample};

/// Scores `pred` against `label` (both `[0, 1]`) after clamping and rescaling to `[0, 255]`.
pub fn score(id: &str, pred: &Tensor, label: &Tensor) -> Result<(ImageMetrics, Tensor, Tensor)> {
    let p = to_eval_scale(pred);
    let l = to_eval_scale(label);
    Ok((ImageMetrics::compute(id, &p, &l)?, p, l))
}

/// Runs the model on every sample. With `out`, writes `report.csv` and one
/// `<id>_err.png` heatmap per image.
pub fn evaluate(model: &Model, data: &[Sample], out: Option<&Path>) -> Result<MetricsReport> {
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
    }
    let mut report = MetricsReport::default();
    for s in data {
        let pred = model.infer(&s.input)?;
        if pred.shape() != s.target.shape() {
            return Err(Error::config(format!(
                "{}: model produces {}, label is {}",
                s.id,
                pred.shape(),
                s.target.shape()
            )));
        }
        let (m, p, l) = score(&s.id, &pred, &s.target)?;
        if let Some(dir) = out {
            save_heatmap(&p, &l, &dir.join(format!("{}_err.png", s.id)))?;
        }
        report.push(m);
    }
    if let Some(dir) = out {
        report.write_csv(&dir.join("report.csv"))?;
    }
    Ok(report)
}

/// Restores one PNG: the input is read as a single band, the output is
/// written as grey or RGB depending on the task.
pub fn infer_file(model: &Model, input: &Path, output: &Path) -> Result<Tensor> {
    let x = read_gray(input)?;
    let y = model.infer(&x)?.map(|v| v.clamp(0.0, 1.0));
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_png(&y, output)?;
    Ok(y)
}
