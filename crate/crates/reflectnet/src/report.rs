//! Evaluation of a prediction directory against ground truth.
//!
//! Predictions and ground truth are matched by key: the file stem with a
//! trailing `_target` removed. `*_input` files in the ground-truth directory
//! are ignored, so a synthesized dataset directory can serve as ground truth
//! for the output of `infer` on that same directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::warn;
use reflectnet_core::metrics::QualityReport;

use crate::dataset::{image_key, is_input};
use crate::error::{CliError, Result};
use crate::imageio::{list_images, read_image};

fn keyed(dir: &Path, skip_inputs: bool) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for path in list_images(dir)? {
        if skip_inputs && is_input(&path) {
            continue;
        }
        let key = image_key(&path);
        if let Some(prev) = out.insert(key.clone(), path.clone()) {
            return Err(CliError::Data(format!(
                "{} and {} share the key `{key}`",
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(out)
}

pub fn evaluate(pred: &Path, gt: &Path) -> Result<QualityReport> {
    let preds = keyed(pred, false)?;
    let gts = keyed(gt, true)?;
    let mut report = QualityReport::default();
    for (key, p) in &preds {
        let Some(g) = gts.get(key) else {
            report.exclude(format!("{key}: no ground truth"));
            continue;
        };
        let pair = read_image(p).and_then(|a| Ok((a, read_image(g)?)));
        match pair {
            Ok((a, b)) if a.dims() == b.dims() => report.push(key.clone(), &a, &b)?,
            Ok((a, b)) => report.exclude(format!("{key}: prediction is {:?}, ground truth is {:?}", a.dims(), b.dims())),
            Err(e) => {
                warn!("{e}");
                report.exclude(format!("{key}: unreadable"));
            }
        }
    }
    for key in gts.keys().filter(|k| !preds.contains_key(*k)) {
        report.exclude(format!("{key}: no prediction"));
    }
    Ok(report)
}

/// Fixed-width table: one row per image, the mean, then exclusions.
pub fn render_table(report: &QualityReport) -> String {
    let width = report.rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(12);
    let mut s = String::new();
    writeln!(s, "{:<width$}  {:>10}  {:>8}", "image", "PSNR (dB)", "SSIM").unwrap();
    writeln!(s, "{}", "-".repeat(width + 22)).unwrap();
    for r in &report.rows {
        writeln!(s, "{:<width$}  {:>10.2}  {:>8.4}", r.name, r.psnr_db, r.ssim).unwrap();
    }
    writeln!(s, "{}", "-".repeat(width + 22)).unwrap();
    match (report.mean_psnr(), report.mean_ssim()) {
        (Some(p), Some(q)) => {
            let label = format!("mean (n={})", report.rows.len());
            writeln!(s, "{label:<width$}  {p:>10.2}  {q:>8.4}").unwrap();
        }
        _ => writeln!(s, "mean (n=0)").unwrap(),
    }
    writeln!(s).unwrap();
    writeln!(s, "excluded ({}):", report.excluded.len()).unwrap();
    for e in &report.excluded {
        writeln!(s, "  {e}").unwrap();
    }
    s
}

/// Full-precision `key=value` companion of the table.
pub fn render_kv(report: &QualityReport) -> String {
    let mut s = String::new();
    writeln!(s, "count={}", report.rows.len()).unwrap();
    if let (Some(p), Some(q)) = (report.mean_psnr(), report.mean_ssim()) {
        writeln!(s, "mean.psnr={p}").unwrap();
        writeln!(s, "mean.ssim={q}").unwrap();
    }
    for r in &report.rows {
        writeln!(s, "row.{}.psnr={}", r.name, r.psnr_db).unwrap();
        writeln!(s, "row.{}.ssim={}", r.name, r.ssim).unwrap();
    }
    writeln!(s, "excluded={}", report.excluded.len()).unwrap();
    for (i, e) in report.excluded.iter().enumerate() {
        writeln!(s, "excluded.{i}={e}").unwrap();
    }
    s
}

/// Path of the `key=value` file written next to a report.
pub fn kv_path(report: &Path) -> PathBuf {
    let mut name = report.file_name().unwrap_or_default().to_os_string();
    name.push(".kv");
    report.with_file_name(name)
}
