use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{PipelineConfig, ALPHA_GRID, K_GRID};
use super::run::{evaluate, prepare, Prepared, Summary};
use crate::error::{Error, Result};

pub const SWEEP_FILE: &str = "sweep.csv";
pub const SWEEP_TIMINGS_FILE: &str = "sweep_timings.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Alpha,
    K,
}

impl SweepParam {
    pub fn grid(self) -> Vec<f64> {
        match self {
            SweepParam::Alpha => ALPHA_GRID.to_vec(),
            SweepParam::K => K_GRID.to_vec(),
        }
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(SweepParam::Alpha),
            "k" => Ok(SweepParam::K),
            _ => Err(Error::Config(format!("sweep parameter must be alpha or k, got {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub outcome: std::result::Result<Summary, String>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    pub param: SweepParam,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// `value,mean,std,val_mean,error`; failed rows leave the numbers empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("value,mean,std,val_mean,error\n");
        for r in &self.rows {
            match &r.outcome {
                Ok(s) => {
                    let v = s.val_mean.map(|v| v.to_string()).unwrap_or_default();
                    writeln!(out, "{},{},{},{v},", r.value, s.mean, s.std)
                }
                Err(e) => writeln!(out, "{},,,,\"{}\"", r.value, e.replace('"', "'")),
            }
            .unwrap();
        }
        out
    }

    /// Successful row with the highest mean validation accuracy (first on
    /// ties).
    pub fn best_by_validation(&self) -> Option<&SweepRow> {
        self.rows
            .iter()
            .filter(|r| r.outcome.as_ref().is_ok_and(|s| s.val_mean.is_some()))
            .fold(None, |best: Option<&SweepRow>, r| match best {
                Some(b) if val(b) >= val(r) => Some(b),
                _ => Some(r),
            })
    }

    pub fn timings_csv(&self) -> String {
        let mut out = String::from("value,seconds\n");
        for r in &self.rows {
            writeln!(out, "{},{}", r.value, r.seconds).unwrap();
        }
        out
    }
}

fn val(r: &SweepRow) -> f64 {
    r.outcome.as_ref().ok().and_then(|s| s.val_mean).unwrap_or(f64::NAN)
}

/// Runs the pipeline once per value of `param`. Views are produced once and
/// shared, since neither `alpha` nor `k` affects them.
pub fn sweep(cfg: &PipelineConfig, param: SweepParam, values: &[f64]) -> Result<SweepTable> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let prep = prepare(cfg)?;
    Ok(sweep_prepared(&prep, cfg, param, values))
}

/// [`sweep`] over views that were already produced.
pub fn sweep_prepared(prep: &Prepared, cfg: &PipelineConfig, param: SweepParam, values: &[f64]) -> SweepTable {
    let base = cfg.merge.resolve(prep.dataset.num_classes());
    let rows = values
        .iter()
        .map(|&value| {
            let start = Instant::now();
            let mut m = base.clone();
            let outcome = match param {
                SweepParam::Alpha => {
                    m.alpha = value;
                    Ok(())
                }
                SweepParam::K if value >= 1.0 && value.fract() == 0.0 => {
                    m.k = value as usize;
                    Ok(())
                }
                SweepParam::K => Err(format!("k must be a positive integer, got {value}")),
            }
            .and_then(|()| {
                evaluate(prep, &m, &cfg.gcn, cfg.repetitions, cfg.seed, &Default::default())
                    .map(|e| e.test)
                    .map_err(|e| e.to_string())
            });
            if let Err(e) = &outcome {
                log::warn!("sweep value {value}: {e}");
            }
            SweepRow {
                value,
                outcome,
                seconds: start.elapsed().as_secs_f64(),
            }
        })
        .collect();
    SweepTable { param, rows }
}

/// [`sweep`], then writes `sweep.csv` and `sweep_timings.csv` into the
/// output directory.
pub fn run_sweep(cfg: &PipelineConfig, param: SweepParam, values: &[f64]) -> Result<SweepTable> {
    let table = sweep(cfg, param, values)?;
    let dir = &cfg.output;
    let write = |name: &str, body: String| {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        std::fs::write(dir.join(name), body).map_err(|e| Error::io(dir.join(name), e))
    };
    write(SWEEP_FILE, table.to_csv()).map_err(|e| e.in_stage("write"))?;
    write(SWEEP_TIMINGS_FILE, table.timings_csv()).map_err(|e| e.in_stage("write"))?;
    Ok(table)
}
