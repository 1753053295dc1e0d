//! Output directory bookkeeping and the run manifest.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::RunConfig;

pub struct Run {
    pub config: RunConfig,
    pub subcommand: String,
    out: PathBuf,
    artifacts: Vec<String>,
    timings: BTreeMap<String, f64>,
    derived: BTreeMap<String, f64>,
    notes: Vec<String>,
    threads: usize,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    core_version: &'static str,
    subcommand: &'a str,
    config: &'a RunConfig,
    /// Tolerances computed from the grid rather than given in the config.
    derived_tolerances: &'a BTreeMap<String, f64>,
    seeds: BTreeMap<&'static str, u64>,
    threads: usize,
    timings_s: &'a BTreeMap<String, f64>,
    status: &'a str,
    exit_code: i32,
    notes: &'a [String],
    artifacts: &'a [String],
}

impl Run {
    pub fn new(config: RunConfig, subcommand: &str, threads: usize) -> Result<Self> {
        let out = config.output_dir.clone();
        std::fs::create_dir_all(&out).with_context(|| format!("creating output directory {}", out.display()))?;
        Ok(Run {
            config,
            subcommand: subcommand.to_string(),
            out,
            artifacts: Vec::new(),
            timings: BTreeMap::new(),
            derived: BTreeMap::new(),
            notes: Vec::new(),
            threads,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn timed<T>(&mut self, step: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let v = f();
        *self.timings.entry(step.to_string()).or_insert(0.0) += t.elapsed().as_secs_f64();
        v
    }

    pub fn tolerance(&mut self, name: &str, value: f64) {
        self.derived.insert(name.to_string(), value);
    }

    pub fn note(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        log::info!("{msg}");
        self.notes.push(msg);
    }

    /// Create `name` in the output directory and hand a buffered writer to `f`.
    pub fn write_with(&mut self, name: &str, f: impl FnOnce(BufWriter<File>) -> screendual_core::Result<()>) -> Result<()> {
        let path = self.path(name);
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        f(BufWriter::new(file)).with_context(|| format!("writing {}", path.display()))?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.path(name);
        let text = serde_json::to_string_pretty(value)?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    pub fn finish(&mut self, status: &str, exit_code: i32) -> Result<()> {
        let seeds = BTreeMap::from([("primal", self.config.primal.seed), ("market", self.config.market.seed)]);
        let manifest = Manifest {
            tool: "screendual",
            version: env!("CARGO_PKG_VERSION"),
            core_version: screendual_core::VERSION,
            subcommand: &self.subcommand,
            config: &self.config,
            derived_tolerances: &self.derived,
            seeds,
            threads: self.threads,
            timings_s: &self.timings,
            status,
            exit_code,
            notes: &self.notes,
            artifacts: &self.artifacts,
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(self.path("manifest.json"), text + "\n")?;
        Ok(())
    }
}

pub fn read_field(path: &Path) -> Result<screendual_core::model::ScalarField> {
    let file = File::open(path).with_context(|| format!("opening field {}", path.display()))?;
    Ok(screendual_core::model::io::read_scalar_csv(std::io::BufReader::new(file))?)
}
