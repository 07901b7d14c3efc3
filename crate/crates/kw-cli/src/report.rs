use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use kw_lattice::GreensTable;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Identifies the Green's table a report was computed with.
pub fn table_summary(t: &GreensTable) -> Value {
    json!({
        "fingerprint": t.fingerprint(),
        "exact_radius": t.exact_radius(),
        "crossover_radius": t.crossover_radius(),
        "quadrature_points": t.diagnostics().quadrature_points,
        "fitted_constant": t.fitted_constant(),
    })
}

/// Output directory plus the shared envelope fields.
pub struct Sink {
    dir: PathBuf,
    command: String,
    config: RunConfig,
    table: Value,
}

impl Sink {
    pub fn new(command: &str, config: &RunConfig) -> Result<Sink> {
        let dir = config.out_dir();
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Sink {
            dir,
            command: command.to_string(),
            config: config.clone(),
            table: Value::Null,
        })
    }

    pub fn with_table(mut self, t: &GreensTable) -> Sink {
        self.table = table_summary(t);
        self
    }

    /// `<out>/<command-with-dashes>-<suffix>`.
    pub fn path(&self, suffix: &str) -> PathBuf {
        self.dir.join(format!("{}-{suffix}", self.command.replace(' ', "-")))
    }

    /// Writes the JSON report and returns its path.
    pub fn report(&self, status: &str, result: &impl Serialize) -> Result<PathBuf> {
        let body = json!({
            "command": self.command,
            "version": VERSION,
            "status": status,
            "config": self.config,
            "table": self.table,
            "result": result,
        });
        let path = self.path("report.json");
        write_json(&path, &body)?;
        println!("{}: {status}; report {}", self.command, path.display());
        Ok(path)
    }
}

pub fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
