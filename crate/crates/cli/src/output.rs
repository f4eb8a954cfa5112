use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

/// Collects artifacts written into one output directory, then writes the
/// manifest listing them together with the resolved config and warnings.
pub struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
    warnings: Vec<String>,
    facts: serde_json::Map<String, Value>,
}

impl Outputs {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new(), warnings: Vec::new(), facts: Default::default() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn csv<R: Serialize>(&mut self, name: &str, rows: &[R]) -> Result<()> {
        let path = self.dir.join(name);
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
        for row in rows {
            w.serialize(row)?;
        }
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, serde_json::to_string_pretty(value)?)
            .with_context(|| format!("writing {}", path.display()))?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn record_file(&mut self, name: impl Into<String>) {
        self.files.push(name.into());
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        let message = message.into();
        eprintln!("warning: {message}");
        self.warnings.push(message);
    }

    /// Stores a derived quantity (such as `dt` or `T_min`) in the manifest.
    pub fn fact(&mut self, key: &str, value: impl Serialize) -> Result<()> {
        self.facts.insert(key.to_string(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn finish<C: Serialize>(self, subcommand: &str, config: &C, invocation: Value) -> Result<PathBuf> {
        let manifest = json!({
            "subcommand": subcommand,
            "library_version": env!("CARGO_PKG_VERSION"),
            "invocation": invocation,
            "config": config,
            "derived": self.facts,
            "outputs": self.files,
            "warnings": self.warnings,
        });
        let path = self.dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(path)
    }
}
