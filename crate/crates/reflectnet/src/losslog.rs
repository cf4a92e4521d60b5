//! Append-only training log, one whitespace-separated line per step.
//! Floats use their shortest exact form, so two logs are byte-equal exactly
//! when the recorded values are bit-equal.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use reflectnet_core::train::LossRecord;

use crate::error::{CliError, Result};

pub const HEADER: &str = "# step epoch lr pixel perceptual gradient adv_g adv_d total";

pub fn format_record(r: &LossRecord) -> String {
    format!(
        "{} {} {} {} {} {} {} {} {}",
        r.step, r.epoch, r.lr, r.pixel, r.perceptual, r.gradient, r.adv_g, r.adv_d, r.total
    )
}

pub fn parse_record(line: &str) -> Option<LossRecord> {
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() != 9 {
        return None;
    }
    let v = |i: usize| f[i].parse::<f32>().ok();
    Some(LossRecord {
        step: f[0].parse().ok()?,
        epoch: f[1].parse().ok()?,
        lr: v(2)?,
        pixel: v(3)?,
        perceptual: v(4)?,
        gradient: v(5)?,
        adv_g: v(6)?,
        adv_d: v(7)?,
        total: v(8)?,
    })
}

/// Start a fresh log containing only the header.
pub fn create(path: &Path) -> Result<()> {
    fs::write(path, format!("{HEADER}\n")).map_err(|e| CliError::io(path, e))
}

pub fn append(path: &Path, records: &[LossRecord]) -> Result<()> {
    let mut f = OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| CliError::io(path, e))?;
    let mut text = String::new();
    for r in records {
        text.push_str(&format_record(r));
        text.push('\n');
    }
    f.write_all(text.as_bytes()).map_err(|e| CliError::io(path, e))
}

/// Drop every line past `step`, e.g. steps logged after the checkpoint a run
/// resumes from. A missing log is created.
pub fn truncate_after(path: &Path, step: u64) -> Result<()> {
    if !path.exists() {
        return create(path);
    }
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut kept = String::new();
    for (n, line) in text.lines().enumerate() {
        if line.starts_with('#') {
            kept.push_str(line);
            kept.push('\n');
            continue;
        }
        let rec = parse_record(line)
            .ok_or_else(|| CliError::Format(format!("{}:{}: malformed log line", path.display(), n + 1)))?;
        if rec.step <= step {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    fs::write(path, kept).map_err(|e| CliError::io(path, e))
}

pub fn read(path: &Path) -> Result<Vec<LossRecord>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.starts_with('#'))
        .map(|(n, l)| {
            parse_record(l).ok_or_else(|| CliError::Format(format!("{}:{}: malformed log line", path.display(), n + 1)))
        })
        .collect()
}
