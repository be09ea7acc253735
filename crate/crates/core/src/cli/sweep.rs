use std::io::Write;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::{InitMode, InsertPosition};
use crate::train::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum SweepAxis {
    ContextLength,
    DataFraction,
    FewShot,
    InsertPosition,
    InitMode,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::ContextLength => "context_length",
            SweepAxis::DataFraction => "data_fraction",
            SweepAxis::FewShot => "few_shot",
            SweepAxis::InsertPosition => "insert_position",
            SweepAxis::InitMode => "init_mode",
        }
    }

    pub fn default_values(self) -> Vec<String> {
        let v: &[&str] = match self {
            SweepAxis::ContextLength => &["4", "8", "16", "32", "64"],
            SweepAxis::DataFraction => &["0.05", "0.1", "0.15", "0.2", "0.3", "0.5", "1.0"],
            SweepAxis::FewShot => &["1", "2", "4", "8", "16"],
            SweepAxis::InsertPosition => &["front", "middle", "end"],
            SweepAxis::InitMode => &["random", "template"],
        };
        v.iter().map(|s| s.to_string()).collect()
    }

    /// `base` with this axis set to `value`.
    pub fn apply(self, base: &RunConfig, value: &str) -> Result<RunConfig> {
        let bad = |e: String| Error::config(self.as_str(), format!("bad value `{value}`: {e}"));
        let mut cfg = base.clone();
        match self {
            SweepAxis::ContextLength => cfg.context_length = value.parse().map_err(|e| bad(format!("{e}")))?,
            SweepAxis::DataFraction => {
                cfg.fraction = value.parse().map_err(|e| bad(format!("{e}")))?;
                cfg.shots = 0;
            }
            SweepAxis::FewShot => cfg.shots = value.parse().map_err(|e| bad(format!("{e}")))?,
            SweepAxis::InsertPosition => {
                cfg.insert_position = InsertPosition::ALL
                    .into_iter()
                    .find(|p| p.as_str() == value)
                    .ok_or_else(|| bad("expected front, middle or end".into()))?
            }
            SweepAxis::InitMode => {
                cfg.init_mode = [InitMode::Random, InitMode::Template]
                    .into_iter()
                    .find(|m| m.as_str() == value)
                    .ok_or_else(|| bad("expected random or template".into()))?
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One row of a sweep table. Failed cells carry the error and no metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: String,
    pub overall_accuracy: Option<f64>,
    pub mean_class_accuracy: Option<f64>,
    pub learnable: Option<usize>,
    pub train_samples: Option<usize>,
    pub status: String,
    pub error: String,
}

pub fn write_table<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Data(e.to_string()))
}

pub fn read_table(text: &str) -> Result<Vec<SweepRow>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .map(|r| r.map_err(|e| Error::Data(e.to_string())))
        .collect()
}
