use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::train::RunConfig;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedTable {
    pub seed: u64,
    pub data_seed: u64,
}

/// One line of a run's `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub config_hash: String,
    pub step: u64,
    pub metrics: BTreeMap<String, f64>,
    pub wall_clock_s: f64,
    pub seeds: SeedTable,
}

/// Append-only JSONL stream; the file is truncated when the writer opens.
pub struct MetricsWriter {
    out: BufWriter<File>,
    path: PathBuf,
    run_id: String,
    config_hash: String,
    seeds: SeedTable,
    start: Instant,
}

impl MetricsWriter {
    pub fn create(path: impl AsRef<Path>, run_id: &str, cfg: &RunConfig) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            out: BufWriter::new(file),
            path,
            run_id: run_id.to_string(),
            config_hash: cfg.hash(),
            seeds: SeedTable {
                seed: cfg.seed,
                data_seed: cfg.data_seed,
            },
            start: Instant::now(),
        })
    }

    pub fn emit(&mut self, step: u64, metrics: BTreeMap<String, f64>) -> Result<()> {
        let record = MetricsRecord {
            run_id: self.run_id.clone(),
            config_hash: self.config_hash.clone(),
            step,
            metrics,
            wall_clock_s: self.start.elapsed().as_secs_f64(),
            seeds: self.seeds.clone(),
        };
        let line = serde_json::to_string(&record).map_err(|e| Error::Data(e.to_string()))?;
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .enumerate()
        .map(|(i, line)| {
            let line = line.map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}
