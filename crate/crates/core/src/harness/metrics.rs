//! Per-step training metrics and their CSV form.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed column order of the metrics CSV.
pub const METRICS_HEADER: &str = "step,loss,mean_margin,mean_coefficient,grad_norm,lr,wall_ms";

/// One optimizer step. For plain denoising training the pairwise columns
/// (`mean_margin`, `mean_coefficient`) are zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub loss: f64,
    pub mean_margin: f64,
    pub mean_coefficient: f64,
    pub grad_norm: f64,
    pub lr: f64,
    pub wall_ms: f64,
}

impl MetricsRow {
    fn to_csv(self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step,
            self.loss,
            self.mean_margin,
            self.mean_coefficient,
            self.grad_norm,
            self.lr,
            self.wall_ms
        )
    }
}

pub fn render_metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::with_capacity(32 * (rows.len() + 1));
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_csv());
        out.push('\n');
    }
    out
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(render_metrics_csv(rows).as_bytes())?;
    Ok(())
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == METRICS_HEADER => {}
        other => {
            return Err(Error::Format {
                path: "<metrics>".to_string(),
                detail: format!("bad or missing header: {other:?}"),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::Format {
                path: "<metrics>".to_string(),
                detail: format!("line {}: expected 7 fields, got {}", i + 2, fields.len()),
            });
        }
        let num = |j: usize| -> Result<f64> {
            fields[j].trim().parse().map_err(|_| Error::Format {
                path: "<metrics>".to_string(),
                detail: format!("line {}: field {} is not a number", i + 2, j + 1),
            })
        };
        rows.push(MetricsRow {
            step: fields[0].trim().parse().map_err(|_| Error::Format {
                path: "<metrics>".to_string(),
                detail: format!("line {}: bad step", i + 2),
            })?,
            loss: num(1)?,
            mean_margin: num(2)?,
            mean_coefficient: num(3)?,
            grad_norm: num(4)?,
            lr: num(5)?,
            wall_ms: num(6)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(step: u64) -> MetricsRow {
        MetricsRow {
            step,
            loss: 0.1 * step as f64,
            mean_margin: -0.5,
            mean_coefficient: 1.25,
            grad_norm: 3.5e-2,
            lr: 1e-4,
            wall_ms: 12.0,
        }
    }

    #[test]
    fn csv_round_trips() {
        let rows = vec![row(1), row(2), row(3)];
        let text = render_metrics_csv(&rows);
        assert!(text.starts_with(METRICS_HEADER));
        let back = parse_metrics_csv(&text).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn header_is_exactly_the_contract() {
        let text = render_metrics_csv(&[]);
        assert_eq!(text, format!("{METRICS_HEADER}\n"));
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        assert!(parse_metrics_csv("").is_err());
        assert!(parse_metrics_csv("nope\n1,2,3,4,5,6,7\n").is_err());
        let text = format!("{METRICS_HEADER}\n1,2,3\n");
        assert!(parse_metrics_csv(&text).is_err());
        let text = format!("{METRICS_HEADER}\n1,a,3,4,5,6,7\n");
        assert!(parse_metrics_csv(&text).is_err());
    }
}
