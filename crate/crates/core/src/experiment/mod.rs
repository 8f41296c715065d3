//! JSON-configured experiments: each run writes `summary.json` plus CSV or
//! JSON artifacts, and [`replay`] re-executes a summary and compares the
//! artifacts byte for byte.

mod config;
mod kinds;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use config::{
    AveragingSection, CboSection, ControlSection, ErgodicitySection, ExperimentConfig, ExperimentKind,
    FrozenSection, InitSpec, LdpSection, ModelSpec, PathSpec, ZooLaw, ZooModel,
};
pub(crate) use config::with_model;

/// Exit status of a successful run.
pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_REPLAY_MISMATCH: i32 = 4;

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e.root() {
        Error::ReplayMismatch { .. } => EXIT_REPLAY_MISMATCH,
        Error::Io(_) | Error::Inadmissible { .. } => EXIT_VALIDATION,
        e if e.is_validation() => EXIT_VALIDATION,
        _ => EXIT_NUMERICAL,
    }
}

/// One file produced by an experiment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

/// In-memory result of an experiment.
#[derive(Clone, Debug)]
pub struct Execution {
    pub headline: serde_json::Value,
    pub tolerances: BTreeMap<String, f64>,
    pub artifacts: Vec<Artifact>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub experiment: ExperimentKind,
    pub version: String,
    pub seed: u64,
    /// SHA-256 of the JSON of `config`.
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub wall_time_s: f64,
    pub threads: usize,
    pub tolerances: BTreeMap<String, f64>,
    pub headline: serde_json::Value,
    /// Artifact file name to SHA-256.
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    pub seed_override: Option<u64>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(cfg)?))
}

/// Runs the experiment without touching the file system.
pub fn execute(cfg: &ExperimentConfig) -> Result<Execution> {
    cfg.validate()?;
    kinds::execute(cfg)
}

/// Resolves the output directory: `opts.out_dir`, then the config's
/// `output_dir`, then `mvscale-out/<experiment>`.
pub fn output_dir(cfg: &ExperimentConfig, opts: &RunOptions) -> PathBuf {
    opts.out_dir
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("mvscale-out").join(cfg.experiment.name()))
}

/// Runs `cfg` and writes its artifacts and `summary.json`. Nothing is
/// written when validation or the computation fails.
pub fn run(cfg: ExperimentConfig, opts: &RunOptions) -> Result<(Summary, PathBuf)> {
    let seed = opts.seed_override.unwrap_or(cfg.seed);
    let cfg = cfg.with_seed(seed);
    let start = Instant::now();
    let exec = execute(&cfg)?;
    let wall = start.elapsed().as_secs_f64();
    let dir = output_dir(&cfg, opts);
    std::fs::create_dir_all(&dir)?;
    let mut hashes = BTreeMap::new();
    for a in &exec.artifacts {
        std::fs::write(dir.join(&a.name), &a.bytes)?;
        hashes.insert(a.name.clone(), sha256_hex(&a.bytes));
    }
    let summary = Summary {
        experiment: cfg.experiment,
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        config_hash: config_hash(&cfg)?,
        config: cfg,
        wall_time_s: wall,
        threads: rayon::current_num_threads(),
        tolerances: exec.tolerances,
        headline: exec.headline,
        artifacts: hashes,
    };
    std::fs::write(dir.join("summary.json"), serde_json::to_vec_pretty(&summary)?)?;
    Ok((summary, dir))
}

/// Outcome of comparing one regenerated artifact with the file on disk.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FileCheck {
    pub name: String,
    pub identical: bool,
    /// Byte offset of the first difference (the shorter length when one file
    /// is a prefix of the other).
    pub first_divergence: Option<u64>,
    pub detail: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplayReport {
    pub summary: PathBuf,
    pub files: Vec<FileCheck>,
}

impl ReplayReport {
    pub fn passed(&self) -> bool {
        self.files.iter().all(|f| f.identical)
    }

    /// `Err(ReplayMismatch)` naming the first differing file.
    pub fn into_result(self) -> Result<Self> {
        if let Some(f) = self.files.iter().find(|f| !f.identical) {
            return Err(Error::ReplayMismatch {
                file: f.name.clone(),
                detail: f.detail.clone().unwrap_or_default(),
            });
        }
        Ok(self)
    }
}

fn first_divergence(a: &[u8], b: &[u8]) -> Option<u64> {
    match a.iter().zip(b).position(|(x, y)| x != y) {
        Some(i) => Some(i as u64),
        None if a.len() != b.len() => Some(a.len().min(b.len()) as u64),
        None => None,
    }
}

/// Re-executes the configuration recorded in `summary_path` and compares
/// every artifact with the file next to the summary.
pub fn replay(summary_path: &Path) -> Result<ReplayReport> {
    let text = std::fs::read_to_string(summary_path)?;
    let summary: Summary = serde_json::from_str(&text)?;
    if config_hash(&summary.config)? != summary.config_hash {
        return Err(Error::ReplayMismatch {
            file: "summary.json".into(),
            detail: "config hash does not match the recorded config".into(),
        });
    }
    let dir = summary_path.parent().unwrap_or(Path::new("."));
    let exec = execute(&summary.config)?;
    let mut files = Vec::new();
    let produced: BTreeMap<&str, &Artifact> = exec.artifacts.iter().map(|a| (a.name.as_str(), a)).collect();
    for name in summary.artifacts.keys() {
        if !produced.contains_key(name.as_str()) {
            files.push(FileCheck {
                name: name.clone(),
                identical: false,
                first_divergence: None,
                detail: Some("recorded artifact was not regenerated".into()),
            });
        }
    }
    for a in &exec.artifacts {
        let check = match std::fs::read(dir.join(&a.name)) {
            Ok(disk) => {
                let off = first_divergence(&disk, &a.bytes);
                FileCheck {
                    name: a.name.clone(),
                    identical: off.is_none(),
                    first_divergence: off,
                    detail: off.map(|o| format!("first divergence at byte {o}")),
                }
            }
            Err(e) => FileCheck {
                name: a.name.clone(),
                identical: false,
                first_divergence: None,
                detail: Some(format!("cannot read artifact: {e}")),
            },
        };
        files.push(check);
    }
    Ok(ReplayReport {
        summary: summary_path.to_path_buf(),
        files,
    })
}

/// Runs `f` on a dedicated pool of `threads` workers, or on the global pool
/// when `threads` is `None`.
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(Error::config("thread count must be positive")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::config(format!("cannot build thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn divergence_offsets() {
        assert_eq!(first_divergence(b"abc", b"abc"), None);
        assert_eq!(first_divergence(b"abc", b"abd"), Some(2));
        assert_eq!(first_divergence(b"ab", b"abc"), Some(2));
    }

    #[test]
    fn unknown_fields_rejected() {
        let bad = r#"{"experiment": "probe", "model": {"name": "linear"}, "bogus": 1}"#;
        assert!(ExperimentConfig::from_json(bad).unwrap_err().is_validation());
        let bad = r#"{"experiment": "probe", "model": {"name": "linear", "q": 1}}"#;
        assert!(ExperimentConfig::from_json(bad).unwrap_err().is_validation());
        let bad = r#"{"experiment": "probe", "model": {"name": "nope"}}"#;
        assert!(ExperimentConfig::from_json(bad).unwrap_err().is_validation());
        let ok = r#"{"experiment": "probe", "model": {"name": "linear"}}"#;
        assert!(ExperimentConfig::from_json(ok).is_ok());
    }

    #[test]
    fn missing_section_is_validation() {
        let cfg = r#"{"experiment": "simulate", "model": {"name": "zero"}}"#;
        let e = ExperimentConfig::from_json(cfg).unwrap_err();
        assert_eq!(exit_code(&e), EXIT_VALIDATION);
    }
}
