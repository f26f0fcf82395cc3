use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "iter,L_R,L_D,L_AT,L_total,lr,L_AT_enc,L_AT_dec";

/// One optimization step. `l_at_enc` / `l_at_dec` are the unweighted sums
/// of the encoder and decoder attention terms, logged whenever teachers are
/// present, even if they are not being trained against.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iter: u64,
    pub l_r: f64,
    pub l_d: f64,
    pub l_at: f64,
    pub l_total: f64,
    pub lr: f64,
    pub l_at_enc: f64,
    pub l_at_dec: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossLog {
    pub rows: Vec<LogRow>,
}

/// Bias-corrected exponential moving average.
pub fn ema(values: &[f64], beta: f64) -> Vec<f64> {
    let mut acc = 0.0;
    let mut corr = 1.0;
    values
        .iter()
        .map(|&v| {
            acc = beta * acc + (1.0 - beta) * v;
            corr *= beta;
            acc / (1.0 - corr)
        })
        .collect()
}

impl LossLog {
    pub fn push(&mut self, row: LogRow) {
        self.rows.push(row);
    }

    pub fn column(&self, f: impl Fn(&LogRow) -> f64) -> Vec<f64> {
        self.rows.iter().map(f).collect()
    }

    pub fn smoothed_total(&self, beta: f64) -> Vec<f64> {
        ema(&self.column(|r| r.l_total), beta)
    }

    pub fn row(&self, iter: u64) -> Option<&LogRow> {
        self.rows.iter().find(|r| r.iter == iter)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{},{},{},{}", r.iter, r.l_r, r.l_d, r.l_at, r.l_total, r.lr, r.l_at_enc, r.l_at_dec);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn parse_csv(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(CSV_HEADER) {
            return Err(Error::parse(path, "unexpected loss-log header"));
        }
        let mut log = LossLog::default();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = |e: &dyn std::fmt::Display| Error::parse(path, format!("row {}: {e}", n + 1));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(bad(&format!("{} fields", f.len())));
            }
            let num = |i: usize| f[i].trim().parse::<f64>().map_err(|e| bad(&e));
            log.push(LogRow {
                iter: f[0].trim().parse().map_err(|e| bad(&e))?,
                l_r: num(1)?,
                l_d: num(2)?,
                l_at: num(3)?,
                l_total: num(4)?,
                lr: num(5)?,
                l_at_enc: num(6)?,
                l_at_dec: num(7)?,
            });
        }
        Ok(log)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text, path)
    }
}
