//! Metrics log: one row per logged scalar, CSV on disk.
//!
//! Schema: `run_id,epoch,step,split,module,metric,value`. Values are written
//! with Rust's shortest round-trip float formatting, so parsing the file
//! back reproduces the in-memory numbers exactly.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub run_id: String,
    pub epoch: usize,
    pub step: usize,
    pub split: String,
    /// Module index 1..=T, or None for run-level metrics such as lr.
    pub module: Option<usize>,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Default, Clone)]
pub struct MetricsLog {
    pub rows: Vec<MetricRow>,
}

impl MetricsLog {
    pub fn new() -> Self {
        MetricsLog { rows: Vec::new() }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push(
        &mut self,
        run_id: &str,
        epoch: usize,
        step: usize,
        split: &str,
        module: Option<usize>,
        metric: &str,
        value: f64,
    ) {
        self.rows.push(MetricRow {
            run_id: run_id.to_string(),
            epoch,
            step,
            split: split.to_string(),
            module,
            metric: metric.to_string(),
            value,
        });
    }

    pub fn extend(&mut self, other: MetricsLog) {
        self.rows.extend(other.rows);
    }

    /// (epoch, value) series for one metric/split/module selection.
    pub fn series(&self, split: &str, module: Option<usize>, metric: &str) -> Vec<(usize, f64)> {
        self.rows
            .iter()
            .filter(|r| r.split == split && r.module == module && r.metric == metric)
            .map(|r| (r.epoch, r.value))
            .collect()
    }

    /// Last logged value of a series, if any.
    pub fn last_value(&self, split: &str, module: Option<usize>, metric: &str) -> Option<f64> {
        self.series(split, module, metric).last().map(|&(_, v)| v)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "run_id,epoch,step,split,module,metric,value")?;
        for r in &self.rows {
            let module = r.module.map(|m| m.to_string()).unwrap_or_default();
            writeln!(
                f,
                "{},{},{},{},{},{},{}",
                r.run_id, r.epoch, r.step, r.split, module, r.metric, r.value
            )?;
        }
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<MetricsLog> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut lines = f.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty metrics file".into()))??;
        if header.trim() != "run_id,epoch,step,split,module,metric,value" {
            return Err(Error::Format(format!("unexpected metrics header '{header}'")));
        }
        let mut rows = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 7 {
                return Err(Error::Format(format!(
                    "metrics line {} has {} fields",
                    lineno + 2,
                    parts.len()
                )));
            }
            let parse_err = |what: &str| {
                Error::Format(format!("metrics line {}: bad {what}", lineno + 2))
            };
            rows.push(MetricRow {
                run_id: parts[0].to_string(),
                epoch: parts[1].parse().map_err(|_| parse_err("epoch"))?,
                step: parts[2].parse().map_err(|_| parse_err("step"))?,
                split: parts[3].to_string(),
                module: if parts[4].is_empty() {
                    None
                } else {
                    Some(parts[4].parse().map_err(|_| parse_err("module"))?)
                },
                metric: parts[5].to_string(),
                value: parts[6].parse().map_err(|_| parse_err("value"))?,
            });
        }
        Ok(MetricsLog { rows })
    }
}
