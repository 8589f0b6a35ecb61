//! Joins per-method BO summaries under an output root into a rank table.

use std::path::{Path, PathBuf};

use super::bo::SummaryRow;
use super::ranks::{aggregate_ranks, RankScope, RankTable, RegretCell};
use super::RunStatus;
use crate::error::{Error, Result};

/// Reads every `<root>/<benchmark>/<method>/summary.csv`. Failed seeds are skipped.
pub fn collect_cells(root: &Path) -> Result<Vec<RegretCell>> {
    let mut cells = Vec::new();
    for bench_dir in sorted_dirs(root)? {
        for method_dir in sorted_dirs(&bench_dir)? {
            let path = method_dir.join("summary.csv");
            if !path.is_file() {
                continue;
            }
            let mut rd = csv::Reader::from_path(&path)?;
            // Active-learning summaries share the layout but carry no regret.
            if !rd.headers()?.iter().any(|h| h == "final_regret") {
                continue;
            }
            let mut regrets = Vec::new();
            for row in rd.deserialize::<SummaryRow>() {
                let row = row?;
                match (row.status, row.final_regret) {
                    (RunStatus::Ok, Some(r)) => regrets.push(r),
                    _ => log::warn!("{}: seed {} has no final regret", path.display(), row.seed),
                }
            }
            cells.push(RegretCell { method: file_name(&method_dir), benchmark: file_name(&bench_dir), regrets });
        }
    }
    Ok(cells)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn sorted_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    out.sort();
    Ok(out)
}

/// Ranks everything under `root`, writing `ranks.csv` and `ranks.txt` beside it.
pub fn report(root: &Path, scope: RankScope) -> Result<RankTable> {
    if !root.is_dir() {
        return Err(Error::config(format!("output root {} does not exist", root.display())));
    }
    let cells = collect_cells(root)?;
    if cells.is_empty() {
        return Err(Error::config(format!("no summary.csv files under {}", root.display())));
    }
    let table = aggregate_ranks(&cells, scope)?;
    table.write_csv(std::fs::File::create(root.join("ranks.csv"))?)?;
    std::fs::write(root.join("ranks.txt"), table.to_text())?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(root: &Path, bench: &str, method: &str, regrets: &[f64]) {
        let dir = root.join(bench).join(method);
        std::fs::create_dir_all(&dir).unwrap();
        let mut w = csv::Writer::from_path(dir.join("summary.csv")).unwrap();
        for (i, &r) in regrets.iter().enumerate() {
            w.serialize(SummaryRow { seed: i as u64, status: RunStatus::Ok, n_evaluations: 10, final_regret: Some(r) })
                .unwrap();
        }
        w.serialize(SummaryRow { seed: 99, status: RunStatus::Failed, n_evaluations: 3, final_regret: None }).unwrap();
        w.flush().unwrap();
    }

    #[test]
    fn joins_summaries() {
        let dir = tempfile::tempdir().unwrap();
        summary(dir.path(), "branin", "gp-logei-epi", &[0.1; 5]);
        summary(dir.path(), "branin", "random", &[1.0; 5]);
        let al = dir.path().join("synthetic").join("random");
        std::fs::create_dir_all(&al).unwrap();
        std::fs::write(al.join("summary.csv"), "seed,status,n_acquired,rmse,gaussian_nll,crps\n0,ok,4,1,1,1\n").unwrap();
        let t = report(dir.path(), RankScope::Common).unwrap();
        assert_eq!(t.methods, ["gp-logei-epi", "random"]);
        assert!(dir.path().join("ranks.csv").exists());
        assert!(dir.path().join("ranks.txt").exists());
    }

    #[test]
    fn empty_root_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(report(dir.path(), RankScope::Common), Err(Error::Config(_))));
    }
}
