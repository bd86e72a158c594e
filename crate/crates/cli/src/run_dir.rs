use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

/// Default root when neither a flag, the environment nor the config names one.
pub const DEFAULT_ROOT: &str = "runs";
pub const ROOT_ENV: &str = "MCTD_OUTPUT_ROOT";

#[derive(Debug, Clone)]
pub struct RunDir {
    path: PathBuf,
}

impl RunDir {
    /// Use `dir` as is, creating it when needed.
    pub fn at(dir: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating run directory {}", dir.display()))?;
        Ok(Self { path: dir.to_path_buf() })
    }

    /// A fresh `<root>/<command>-<hash>-<timestamp>` directory.
    pub fn named(root: &Path, command: &str, hash: &str) -> anyhow::Result<Self> {
        let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%3fZ");
        let base = format!("{command}-{hash}-{stamp}");
        let mut path = root.join(&base);
        let mut k = 1;
        while path.exists() {
            path = root.join(format!("{base}-{k}"));
            k += 1;
        }
        Self::at(&path)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write_json(&self, name: &str, value: &impl Serialize) -> anyhow::Result<()> {
        let path = self.file(name);
        let text = serde_json::to_string_pretty(value)?;
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }

    pub fn write_text(&self, name: &str, text: &str) -> anyhow::Result<()> {
        let path = self.file(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}
