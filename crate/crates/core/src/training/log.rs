use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const LOSS_LOG_HEADER: &str = "step,tokens,train_loss,val_loss,lr,seconds";

#[derive(Clone, Debug, PartialEq)]
pub struct LossRow {
    pub step: u64,
    pub tokens: u64,
    pub train_loss: f32,
    pub val_loss: Option<f32>,
    pub lr: f64,
    /// Wall time since training started.
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossLog {
    pub rows: Vec<LossRow>,
}

impl LossLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(LOSS_LOG_HEADER);
        out.push('\n');
        for r in &self.rows {
            let val = r.val_loss.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.3}",
                r.step, r.tokens, r.train_loss, val, r.lr, r.seconds
            );
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_csv().as_bytes())
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == LOSS_LOG_HEADER => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    reason: format!("expected header {LOSS_LOG_HEADER:?}"),
                })
            }
        }
        let mut rows = Vec::new();
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let err = |reason: String| Error::Parse { line: n + 1, reason };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(err(format!("expected 6 fields, found {}", f.len())));
            }
            let num = |i: usize| f[i].trim().parse::<f64>().map_err(|e| err(format!("field {}: {e}", i + 1)));
            let int = |i: usize| f[i].trim().parse::<u64>().map_err(|e| err(format!("field {}: {e}", i + 1)));
            rows.push(LossRow {
                step: int(0)?,
                tokens: int(1)?,
                train_loss: num(2)? as f32,
                val_loss: if f[3].trim().is_empty() { None } else { Some(num(3)? as f32) },
                lr: num(4)?,
                seconds: num(5)?,
            });
        }
        Ok(Self { rows })
    }

    /// Equality ignoring wall time.
    pub fn same_trajectory(&self, other: &LossLog) -> bool {
        self.rows.len() == other.rows.len()
            && self.rows.iter().zip(&other.rows).all(|(a, b)| {
                a.step == b.step
                    && a.tokens == b.tokens
                    && a.train_loss.to_bits() == b.train_loss.to_bits()
                    && a.val_loss.map(f32::to_bits) == b.val_loss.map(f32::to_bits)
                    && a.lr.to_bits() == b.lr.to_bits()
            })
    }

    pub fn last(&self) -> Option<&LossRow> {
        self.rows.last()
    }
}
