//! Result files. Data files are written to a temporary file in the target
//! directory and renamed into place, so readers never see partial output.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use tamopt_core::optim::StepTelemetry;

/// Telemetry CSV header; column order is fixed.
pub const TELEMETRY_HEADER: &str = "step,loss,grad_norm,S,s_hat,d,m_norm,update_norm";

/// 17 significant digits: parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn telemetry_csv(rows: &[StepTelemetry]) -> String {
    let mut out = String::with_capacity(64 + rows.len() * 200);
    out.push_str(TELEMETRY_HEADER);
    out.push('\n');
    for t in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            t.t,
            fmt_f64(t.loss),
            fmt_f64(t.grad_norm),
            fmt_f64(t.cosine),
            fmt_f64(t.s_hat),
            fmt_f64(t.damping),
            fmt_f64(t.m_norm),
            fmt_f64(t.update_norm)
        );
    }
    out
}

/// Makes a free-text message safe for a single CSV field.
pub fn csv_text(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "'").replace('\n', " "))
}

/// An output directory that records what was written.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(root: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(root)?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    /// Writes `name` atomically (temp file + rename).
    pub fn write(&mut self, name: &str, contents: &str) -> std::io::Result<PathBuf> {
        let target = self.root.join(name);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.root)?;
        tmp.write_all(contents.as_bytes())?;
        tmp.as_file().sync_all()?;
        tmp.persist(&target).map_err(|e| e.error)?;
        self.written.push(target.clone());
        Ok(target)
    }

    pub fn write_json(&mut self, name: &str, value: &serde_json::Value) -> std::io::Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
        text.push('\n');
        self.write(name, &text)
    }
}
