use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::checks::CheckResult;
use super::{Summary, REPORT_FILE};
use crate::error::{Error, Result};

/// Outcome of a run: one entry per requested check plus stage figures.
/// Stored as TOML so the `report` command can re-read it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerificationReport {
    pub seed: u64,
    #[serde(default)]
    pub summary: Summary,
    #[serde(default)]
    pub checks: Vec<CheckResult>,
}

impl VerificationReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// 0 when every check passes, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.all_pass() {
            0
        } else {
            1
        }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(REPORT_FILE);
        std::fs::write(&path, self.to_toml_string()?)?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "seed {}", self.seed)?;
        for (k, v) in &self.summary {
            writeln!(f, "  {k:<32} {v:.6e}")?;
        }
        for c in &self.checks {
            writeln!(
                f,
                "{} {:<20} statistic {:<12.4e} tolerance {:<10.3e} {:>8.2}s",
                if c.pass { "PASS" } else { "FAIL" },
                c.name.as_str(),
                c.statistic,
                c.tolerance,
                c.runtime_s
            )?;
            for (k, v) in &c.details {
                writeln!(f, "       {k:<30} {v:.6e}")?;
            }
        }
        let failed = self.checks.iter().filter(|c| !c.pass).count();
        write!(f, "{} checks, {} failed", self.checks.len(), failed)
    }
}
