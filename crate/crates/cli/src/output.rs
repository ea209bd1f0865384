//! Artifact writing: CSV tables with a provenance comment line, and JSON
//! summaries. Output is a pure function of the config, so reruns are
//! byte-identical.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// 17 significant digits, enough to round-trip any `f64`.
pub fn float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn opt_float(x: Option<f64>) -> String {
    x.map(float).unwrap_or_default()
}

/// An in-memory CSV table.
pub struct Table {
    columns: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(columns: &[S]) -> Self {
        Table { columns: columns.iter().map(|c| c.as_ref().to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match the header");
        self.rows.push(row);
    }

    fn render(&self, provenance: &str) -> String {
        let mut s = String::new();
        writeln!(s, "{provenance}").unwrap();
        writeln!(s, "{}", self.columns.join(",")).unwrap();
        for r in &self.rows {
            writeln!(s, "{}", r.join(",")).unwrap();
        }
        s
    }
}

/// Outcome of one invariant check.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Check { name: name.into(), pass, detail: detail.into() }
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config_hash: &'a str,
    seed: u64,
    pass: bool,
    metadata: &'a serde_json::Value,
    checks: &'a [Check],
    files: &'a [String],
}

/// Writes into one output directory and remembers what it wrote.
pub struct Artifacts {
    dir: PathBuf,
    config_hash: String,
    seed: u64,
    files: Vec<String>,
}

impl Artifacts {
    pub fn create(dir: &Path, config_hash: &str, seed: u64) -> anyhow::Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Artifacts { dir: dir.to_path_buf(), config_hash: config_hash.to_string(), seed, files: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn provenance(&self) -> String {
        format!("# hmmfdr {VERSION} config_hash={} seed={}", self.config_hash, self.seed)
    }

    fn write(&mut self, name: &str, text: &str) -> anyhow::Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn csv(&mut self, name: &str, table: &Table) -> anyhow::Result<()> {
        let text = table.render(&self.provenance());
        self.write(name, &text)
    }

    /// Writes `<command>_summary.json` and returns whether every check passed.
    pub fn summary(&mut self, command: &str, metadata: &serde_json::Value, checks: &[Check]) -> anyhow::Result<bool> {
        let pass = checks.iter().all(|c| c.pass);
        let name = format!("{command}_summary.json");
        let mut files = self.files.clone();
        files.push(name.clone());
        let s = Summary {
            tool: "hmmfdr",
            version: VERSION,
            command,
            config_hash: &self.config_hash,
            seed: self.seed,
            pass,
            metadata,
            checks,
            files: &files,
        };
        let text = serde_json::to_string_pretty(&s)? + "\n";
        self.write(&name, &text)?;
        Ok(pass)
    }
}
