//! Preference pair datasets and their JSONL serialization.
//!
//! A dataset file is one JSON object per line: a header first, then one
//! line per pair. Floats are written with 17 significant digits
//! (`{:.16e}`), enough to reproduce every `f64` bit pattern, and parsed in
//! exact mode, so a write/read cycle is lossless.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Vector;
use crate::preference::label::{RewardStats, SmoothedLabel};

/// First line of a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub schema_version: u32,
    pub seed: u64,
    /// Set once the dataset has been labeled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward_kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward_stats: Option<RewardStats>,
}

pub const SCHEMA_VERSION: u32 = 1;

/// One candidate pair. `x_w`/`x_l` are a naming convention: before labeling
/// they are just the two candidates; after [`label_dataset`]
/// (crate::preference::label_dataset) ran, `reward_w >= reward_l` holds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub id: u64,
    pub condition: Vector,
    pub x_w: Vector,
    pub x_l: Vector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward_w: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward_l: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<SmoothedLabel>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub pairs: Vec<PreferencePair>,
}

impl Dataset {
    pub fn new(seed: u64) -> Self {
        Dataset {
            header: DatasetHeader {
                schema_version: SCHEMA_VERSION,
                seed,
                reward_kind: None,
                reward_stats: None,
            },
            pairs: Vec::new(),
        }
    }

    pub fn data_dim(&self) -> Option<usize> {
        self.pairs.first().map(|p| p.x_w.dim())
    }

    pub fn cond_dim(&self) -> Option<usize> {
        self.pairs.first().map(|p| p.condition.dim())
    }

    /// Structural checks: consistent dimensions, finite values, unique ids,
    /// and label invariants where labels are present.
    pub fn validate(&self) -> Result<()> {
        if self.header.schema_version != SCHEMA_VERSION {
            return Err(Error::Format {
                path: "<dataset>".to_string(),
                detail: format!(
                    "unsupported schema version {}",
                    self.header.schema_version
                ),
            });
        }
        let (Some(data_dim), Some(cond_dim)) = (self.data_dim(), self.cond_dim()) else {
            return Ok(());
        };
        let mut seen = std::collections::HashSet::with_capacity(self.pairs.len());
        for pair in &self.pairs {
            if !seen.insert(pair.id) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate pair id {}",
                    pair.id
                )));
            }
            pair.x_w.ensure_dim(data_dim, "pair x_w")?;
            pair.x_l.ensure_dim(data_dim, "pair x_l")?;
            pair.condition.ensure_dim(cond_dim, "pair condition")?;
            pair.x_w.ensure_finite("pair x_w")?;
            pair.x_l.ensure_finite("pair x_l")?;
            pair.condition.ensure_finite("pair condition")?;
            if let (Some(rw), Some(rl)) = (pair.reward_w, pair.reward_l) {
                if !rw.is_finite() || !rl.is_finite() {
                    return Err(Error::NonFinite(format!("rewards of pair {}", pair.id)));
                }
                if rw < rl {
                    return Err(Error::InvalidArgument(format!(
                        "pair {} has reward_w < reward_l",
                        pair.id
                    )));
                }
            }
            if let Some(label) = &pair.label {
                label.validate()?;
            }
        }
        Ok(())
    }

    /// Errors unless every pair carries a label.
    pub fn require_labels(&self) -> Result<()> {
        for pair in &self.pairs {
            if pair.label.is_none() {
                return Err(Error::MissingLabel(pair.id.to_string()));
            }
        }
        if self.pairs.is_empty() {
            return Err(Error::InvalidArgument("dataset has no pairs".to_string()));
        }
        Ok(())
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        let mut line = String::new();
        write_header(&mut line, &self.header);
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
        for pair in &self.pairs {
            line.clear();
            write_pair(&mut line, pair);
            w.write_all(line.as_bytes())?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Dataset> {
        let file = std::fs::File::open(path)?;
        let reader = BufReader::new(file);
        let mut lines = reader.lines();
        let fail = |line: usize, detail: String| Error::Format {
            path: format!("{}:{line}", path.display()),
            detail,
        };
        let header_line = lines
            .next()
            .ok_or_else(|| fail(1, "empty dataset file".to_string()))??;
        let header: DatasetHeader =
            serde_json::from_str(&header_line).map_err(|e| fail(1, e.to_string()))?;
        let mut pairs = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let pair: PreferencePair =
                serde_json::from_str(&line).map_err(|e| fail(i + 2, e.to_string()))?;
            pairs.push(pair);
        }
        let ds = Dataset { header, pairs };
        ds.validate()?;
        Ok(ds)
    }
}

/// `f64` with 17 significant digits; always reparses to the same bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn push_f64(s: &mut String, v: f64) {
    s.push_str(&fmt_f64(v));
}

fn push_vector(s: &mut String, v: &Vector) {
    s.push('[');
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        push_f64(s, *x);
    }
    s.push(']');
}

fn write_header(s: &mut String, h: &DatasetHeader) {
    s.push_str(&format!(
        "{{\"schema_version\":{},\"seed\":{}",
        h.schema_version, h.seed
    ));
    if let Some(kind) = &h.reward_kind {
        s.push_str(&format!(",\"reward_kind\":\"{kind}\""));
    }
    if let Some(stats) = &h.reward_stats {
        s.push_str(",\"reward_stats\":{\"max\":");
        push_f64(s, stats.max);
        s.push_str(",\"min\":");
        push_f64(s, stats.min);
        s.push_str(&format!(",\"count\":{}}}", stats.count));
    }
    s.push('}');
}

fn write_pair(s: &mut String, p: &PreferencePair) {
    s.push_str(&format!("{{\"id\":{},\"condition\":", p.id));
    push_vector(s, &p.condition);
    s.push_str(",\"x_w\":");
    push_vector(s, &p.x_w);
    s.push_str(",\"x_l\":");
    push_vector(s, &p.x_l);
    if let Some(rw) = p.reward_w {
        s.push_str(",\"reward_w\":");
        push_f64(s, rw);
    }
    if let Some(rl) = p.reward_l {
        s.push_str(",\"reward_l\":");
        push_f64(s, rl);
    }
    if let Some(label) = &p.label {
        s.push_str(",\"label\":{\"ratio\":");
        push_f64(s, label.ratio);
        s.push_str(",\"gamma\":");
        push_f64(s, label.gamma);
        s.push_str("}");
    }
    s.push('}');
}
