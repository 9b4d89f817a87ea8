//! Continual-learning metrics over the lower-triangular accuracy matrix.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `rows[j][k]` is the accuracy on task `k` after training task `j`, for `k <= j`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    rows: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = Self::new();
        for r in rows {
            m.push_row(r)?;
        }
        Ok(m)
    }

    /// Appends the row for the next task; it must have one more entry than
    /// the previous row.
    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.rows.len() + 1 {
            return Err(Error::Matrix(format!(
                "row {} has {} entries, expected {}",
                self.rows.len(),
                row.len(),
                self.rows.len() + 1
            )));
        }
        if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Matrix(format!("accuracy {v} outside [0, 1]")));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn num_tasks(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, after: usize, task: usize) -> Option<f64> {
        self.rows.get(after).and_then(|r| r.get(task)).copied()
    }

    fn final_row(&self) -> Result<&[f64]> {
        self.rows.last().map(Vec::as_slice).ok_or_else(|| Error::Matrix("empty matrix".into()))
    }

    /// Mean accuracy over all tasks after the last one.
    pub fn acc(&self) -> Result<f64> {
        let last = self.final_row()?;
        Ok(last.iter().sum::<f64>() / last.len() as f64)
    }

    /// Mean drop from each earlier task's best accuracy to its final accuracy.
    /// `None` with fewer than two tasks.
    pub fn forgetting(&self) -> Option<f64> {
        let k = self.rows.len();
        if k < 2 {
            return None;
        }
        let last = &self.rows[k - 1];
        let total: f64 = (0..k - 1)
            .map(|task| {
                let peak = self.rows[task..].iter().map(|r| r[task]).fold(f64::NEG_INFINITY, f64::max);
                peak - last[task]
            })
            .sum();
        Some(total / (k - 1) as f64)
    }

    /// Mean change from each earlier task's just-trained accuracy to its final
    /// accuracy. `None` with fewer than two tasks.
    pub fn bwt(&self) -> Option<f64> {
        let k = self.rows.len();
        if k < 2 {
            return None;
        }
        let last = &self.rows[k - 1];
        let total: f64 = (0..k - 1).map(|task| last[task] - self.rows[task][task]).sum();
        Some(total / (k - 1) as f64)
    }

    /// CSV with header `after_task,task_0,..`; undefined cells are empty.
    /// Values use the shortest representation that parses back exactly.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let k = self.rows.len();
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["after_task".to_string()];
        header.extend((0..k).map(|t| format!("task_{t}")));
        out.write_record(&header)?;
        for (j, row) in self.rows.iter().enumerate() {
            let mut rec = vec![j.to_string()];
            rec.extend((0..k).map(|t| row.get(t).map(f64::to_string).unwrap_or_default()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Parses the layout written by [`AccuracyMatrix::write_csv`]: one row per
    /// task column, cells above the diagonal empty.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let header = rd.headers()?.clone();
        let k = header.len().saturating_sub(1);
        let expected = std::iter::once("after_task".to_string()).chain((0..k).map(|t| format!("task_{t}")));
        if k == 0 || !header.iter().map(str::trim).eq(expected) {
            return Err(Error::Matrix("line 1: expected header `after_task,task_0,..`".into()));
        }
        let mut m = Self::new();
        for (j, rec) in rd.records().enumerate() {
            let rec = rec?;
            let line = j + 2;
            if j >= k {
                return Err(Error::Matrix(format!("line {line}: more rows than the {k} task columns")));
            }
            let idx = &rec[0];
            if idx.trim().parse::<usize>().ok() != Some(j) {
                return Err(Error::Matrix(format!("line {line}: expected after_task {j}, found `{idx}`")));
            }
            let mut row = Vec::with_capacity(j + 1);
            for (t, f) in rec.iter().skip(1).enumerate() {
                let f = f.trim();
                match (t <= j, f.is_empty()) {
                    (true, _) => row.push(
                        f.parse::<f64>().map_err(|_| Error::Matrix(format!("line {line}: `{f}` is not a number")))?,
                    ),
                    (false, true) => {}
                    (false, false) => {
                        return Err(Error::Matrix(format!(
                            "line {line}: task_{t} is not yet trained and must be empty"
                        )))
                    }
                }
            }
            m.push_row(row).map_err(|e| Error::Matrix(format!("line {line}: {e}")))?;
        }
        if m.rows.len() != k {
            return Err(Error::Matrix(format!("{} rows for {k} task columns", m.rows.len())));
        }
        Ok(m)
    }
}
