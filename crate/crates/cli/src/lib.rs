//! Harness around `draftreuse-core`: corpus and model generation, benchmark
//! sweeps, ablations and report emission.

pub mod bench;
pub mod corpus;
pub mod report;
pub mod spec;

use std::fs;
use std::io::Write;
use std::path::Path;

pub use bench::{run_ablation, run_bench, Workload};
pub use corpus::gen_corpus;
pub use report::{Aggregate, Format, Report, Row};
pub use spec::{RunSpec, TableMode};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("equivalence violation: {0}")]
    Equivalence(String),
    #[error("metrics recount mismatch: {0}")]
    Recount(String),
    #[error(transparent)]
    Core(#[from] draftreuse_core::Error),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Equivalence(_) => 3,
            _ => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| CliError::Io(format!("{} has no file name", path.display())))?
        .to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        CliError::Io(format!("{}: {e}", path.display()))
    })
}
