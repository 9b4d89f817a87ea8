//! On-disk run records.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::trainer::RunResult;
use crate::budget::BudgetLogEntry;
use crate::error::Result;

/// Files written for one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunFiles {
    pub json: PathBuf,
    pub accuracy_csv: PathBuf,
    pub budget_csv: PathBuf,
}

impl RunFiles {
    pub fn new(dir: &Path, stem: &str) -> Self {
        Self {
            json: dir.join(format!("{stem}.json")),
            accuracy_csv: dir.join(format!("{stem}_accuracy.csv")),
            budget_csv: dir.join(format!("{stem}_budget.csv")),
        }
    }
}

/// `{config}_seed{seed}`.
pub fn run_stem(result: &RunResult) -> String {
    format!("{}_seed{}", result.config_id, result.seed)
}

pub fn write_budget_log<W: Write>(log: &[BudgetLogEntry], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for e in log {
        wtr.serialize(e)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_budget_log<R: std::io::Read>(r: R) -> Result<Vec<BudgetLogEntry>> {
    let mut rdr = csv::Reader::from_reader(r);
    Ok(rdr.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Writes the JSON record, accuracy matrix and budget log into `dir`.
pub fn write_run(dir: &Path, result: &RunResult) -> Result<RunFiles> {
    std::fs::create_dir_all(dir)?;
    let files = RunFiles::new(dir, &run_stem(result));
    let mut json = serde_json::to_vec_pretty(result)?;
    json.push(b'\n');
    std::fs::write(&files.json, json)?;
    result.accuracy_matrix.write_csv(BufWriter::new(File::create(&files.accuracy_csv)?))?;
    write_budget_log(&result.budget_log, BufWriter::new(File::create(&files.budget_csv)?))?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_log_round_trips() {
        let log = vec![
            BudgetLogEntry { step: 0, r_batch: 0.1, r_mean: 0.1, lambda_rate: 0.0, penalty: 0.0, loss: 2.3 },
            BudgetLogEntry { step: 1, r_batch: 1.0 / 3.0, r_mean: 0.2, lambda_rate: 0.02, penalty: 1e-7, loss: 1.9 },
        ];
        let mut buf = Vec::new();
        write_budget_log(&log, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("step,r_batch,r_mean,lambda_rate,penalty,loss\n"));
        assert_eq!(read_budget_log(buf.as_slice()).unwrap(), log);
    }
}
