use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::io::write_string_atomic;

pub const RECORD_HEADER: [&str; 13] = [
    "step",
    "q",
    "lambda",
    "lr",
    "src_acc",
    "tgt_acc",
    "accepted_frac",
    "l_src_ce",
    "l_adv_s",
    "l_adv_t",
    "l_reg",
    "l_t",
    "mmd",
];

/// One probe. `lr` is the generator rate; losses are those of the step's
/// updates, accuracies and `mmd` are measured after them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub step: usize,
    pub q: f64,
    pub lambda: f64,
    pub lr: f64,
    pub src_acc: f64,
    pub tgt_acc: f64,
    pub accepted_frac: f64,
    pub l_src_ce: f64,
    pub l_adv_s: f64,
    pub l_adv_t: f64,
    pub l_reg: f64,
    pub l_t: f64,
    pub mmd: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub rows: Vec<RecordRow>,
}

impl RunRecord {
    pub fn push(&mut self, row: RecordRow) {
        debug_assert!(self.rows.last().map_or(true, |r| r.step < row.step));
        self.rows.push(row);
    }

    pub fn last(&self) -> Option<&RecordRow> {
        self.rows.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = RECORD_HEADER.join(",");
        out.push('\n');
        for r in &self.rows {
            let fields = [
                r.step.to_string(),
                r.q.to_string(),
                r.lambda.to_string(),
                r.lr.to_string(),
                r.src_acc.to_string(),
                r.tgt_acc.to_string(),
                r.accepted_frac.to_string(),
                r.l_src_ce.to_string(),
                r.l_adv_s.to_string(),
                r.l_adv_t.to_string(),
                r.l_reg.to_string(),
                r.l_t.to_string(),
                r.mmd.to_string(),
            ];
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), HarnessError> {
        Ok(write_string_atomic(path, &self.to_csv())?)
    }

    /// Parses the CSV written by [`RunRecord::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self, HarnessError> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if header != RECORD_HEADER {
            return Err(HarnessError::Contract(format!("unexpected record header {header:?}")));
        }
        let rows = reader
            .deserialize()
            .collect::<Result<Vec<RecordRow>, _>>()?;
        Ok(Self { rows })
    }
}
