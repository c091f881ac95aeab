use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::train::{EpochRecord, Net, RunReport};
use super::{ExperimentConfig, HarnessError};
use crate::tensor::{read_checkpoint, write_checkpoint};

/// Environment variable naming the run-cache directory.
pub const CACHE_ENV: &str = "SHAPEBIAS_CACHE_DIR";

const CONFIG_FILE: &str = "config.toml";
const REPORT_FILE: &str = "report.json";
const MODEL_FILE: &str = "model.ckpt";
const TIMING_FILE: &str = "timing.json";
const LOG_FILE: &str = "log.jsonl";

/// Writes `bytes` to a sibling temporary file, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| HarnessError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
}

/// Wall-clock figures, kept apart from the report so reports stay reproducible.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub wall_seconds: f64,
    pub epochs: usize,
    pub seconds_per_epoch: f64,
    pub threads: usize,
}

/// Directory of finished runs keyed by config hash.
#[derive(Clone, Debug)]
pub struct RunStore {
    root: PathBuf,
}

impl RunStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// Uses `$SHAPEBIAS_CACHE_DIR`, falling back to `./runs`.
    pub fn from_env() -> Self {
        Self::new(std::env::var_os(CACHE_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.root.join(cfg.hash())
    }

    pub fn report_path(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.run_dir(cfg).join(REPORT_FILE)
    }

    pub fn model_path(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.run_dir(cfg).join(MODEL_FILE)
    }

    /// The cached report, if this config has completed before.
    pub fn load_report(&self, cfg: &ExperimentConfig) -> Result<Option<RunReport>, HarnessError> {
        let path = self.report_path(cfg);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
        let report: RunReport = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Corrupt { path: path.clone(), detail: e.to_string() })?;
        if report.config_hash != cfg.hash() {
            return Err(HarnessError::Corrupt { path, detail: "report belongs to a different config".into() });
        }
        Ok(Some(report))
    }

    pub fn load_timing(&self, cfg: &ExperimentConfig) -> Result<Option<TimingReport>, HarnessError> {
        let path = self.run_dir(cfg).join(TIMING_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
        serde_json::from_str(&text).map(Some).map_err(|e| HarnessError::Corrupt { path, detail: e.to_string() })
    }

    /// Persists a finished run. The report is written last so an interrupted
    /// save never looks complete.
    pub fn save(
        &self,
        cfg: &ExperimentConfig,
        report: &RunReport,
        net: &Net,
        timing: &TimingReport,
    ) -> Result<PathBuf, HarnessError> {
        let dir = self.run_dir(cfg);
        fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
        write_atomic(&dir.join(CONFIG_FILE), cfg.to_toml().as_bytes())?;
        let mut ckpt = Vec::new();
        write_checkpoint(&mut ckpt, &net.classifier_ref().to_records())?;
        write_atomic(&dir.join(MODEL_FILE), &ckpt)?;
        let log: String = report.history.iter().map(|r| serde_json::to_string(r).expect("serializes") + "\n").collect();
        write_atomic(&dir.join(LOG_FILE), log.as_bytes())?;
        write_atomic(&dir.join(TIMING_FILE), to_json(timing).as_bytes())?;
        write_atomic(&dir.join(REPORT_FILE), to_json(report).as_bytes())?;
        Ok(dir)
    }

    /// Rebuilds the trained network from its checkpoint.
    pub fn load_net(&self, cfg: &ExperimentConfig) -> Result<Net, HarnessError> {
        let path = self.model_path(cfg);
        let file = match fs::File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(HarnessError::MissingRun { regime: cfg.regime.name().into(), hash: cfg.hash() })
            }
            Err(e) => return Err(HarnessError::io(&path, e)),
        };
        let records = read_checkpoint(BufReader::new(file))?;
        let mut net = Net::new(cfg)?;
        net.classifier().load_records(&records)?;
        Ok(net)
    }

    /// Reads back the per-epoch log.
    pub fn load_log(&self, cfg: &ExperimentConfig) -> Result<Vec<EpochRecord>, HarnessError> {
        let path = self.run_dir(cfg).join(LOG_FILE);
        let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
        text.lines()
            .map(|l| {
                serde_json::from_str(l).map_err(|e| HarnessError::Corrupt { path: path.clone(), detail: e.to_string() })
            })
            .collect()
    }
}

pub(crate) fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializes") + "\n"
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn missing_report_is_none() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::new(dir.path());
        assert!(store.load_report(&ExperimentConfig::default()).unwrap().is_none());
    }
}
