//! Per-benchmark ranking of methods by median final regret.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cells backed by fewer seeds are left out of the ranking.
pub const MIN_SEEDS: usize = 5;

/// Final regrets of one method on one benchmark, one per completed seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretCell {
    pub method: String,
    pub benchmark: String,
    pub regrets: Vec<f64>,
}

/// Which benchmarks enter a method's average.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RankScope {
    /// Only benchmarks on which every method has a valid cell.
    #[default]
    Common,
    /// Each method averages over the benchmarks where it has a valid cell.
    Available,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    /// Sorted by average rank, best first.
    pub methods: Vec<String>,
    pub benchmarks: Vec<String>,
    /// `[method][benchmark]`.
    pub medians: Vec<Vec<Option<f64>>>,
    pub ranks: Vec<Vec<Option<f64>>>,
    pub average_rank: Vec<f64>,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// 1-based ranks, ascending; ties share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = 0.5 * ((i + 1) + (j + 1)) as f64;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Ranks from a `[method][benchmark]` table of summary values (`None` = missing cell).
pub fn rank_table(
    methods: Vec<String>,
    benchmarks: Vec<String>,
    values: Vec<Vec<Option<f64>>>,
    scope: RankScope,
) -> Result<RankTable> {
    if methods.len() < 2 {
        return Err(Error::domain("ranking needs at least two methods"));
    }
    let keep: Vec<usize> = (0..benchmarks.len())
        .filter(|&b| {
            let present = values.iter().filter(|row| row[b].is_some()).count();
            match scope {
                RankScope::Common => present == methods.len(),
                RankScope::Available => present >= 2,
            }
        })
        .collect();
    if keep.len() < benchmarks.len() {
        log::warn!("ranking restricted to {} of {} benchmarks", keep.len(), benchmarks.len());
    }
    if keep.is_empty() {
        return Err(Error::domain("no benchmark is shared by the methods"));
    }
    let benchmarks: Vec<String> = keep.iter().map(|&b| benchmarks[b].clone()).collect();
    let values: Vec<Vec<Option<f64>>> = values.iter().map(|row| keep.iter().map(|&b| row[b]).collect()).collect();
    let mut ranks = vec![vec![None; benchmarks.len()]; methods.len()];
    for b in 0..benchmarks.len() {
        let idx: Vec<usize> = (0..methods.len()).filter(|&m| values[m][b].is_some()).collect();
        let col: Vec<f64> = idx.iter().map(|&m| values[m][b].expect("filtered")).collect();
        for (&m, r) in idx.iter().zip(average_ranks(&col)) {
            ranks[m][b] = Some(r);
        }
    }
    let average: Vec<f64> = ranks
        .iter()
        .map(|row| {
            let got: Vec<f64> = row.iter().flatten().copied().collect();
            if got.is_empty() {
                f64::NAN
            } else {
                got.iter().sum::<f64>() / got.len() as f64
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..methods.len()).collect();
    order.sort_by(|&a, &b| average[a].total_cmp(&average[b]).then_with(|| methods[a].cmp(&methods[b])));
    Ok(RankTable {
        methods: order.iter().map(|&m| methods[m].clone()).collect(),
        benchmarks,
        medians: order.iter().map(|&m| values[m].clone()).collect(),
        ranks: order.iter().map(|&m| ranks[m].clone()).collect(),
        average_rank: order.iter().map(|&m| average[m]).collect(),
    })
}

/// Median final regret per (method, benchmark), ranked per benchmark and averaged.
pub fn aggregate_ranks(cells: &[RegretCell], scope: RankScope) -> Result<RankTable> {
    let methods: BTreeSet<&str> = cells.iter().map(|c| c.method.as_str()).collect();
    let benchmarks: BTreeSet<&str> = cells.iter().map(|c| c.benchmark.as_str()).collect();
    let mut lookup: BTreeMap<(&str, &str), Vec<f64>> = BTreeMap::new();
    for c in cells {
        lookup.entry((c.method.as_str(), c.benchmark.as_str())).or_default().extend(&c.regrets);
    }
    let values = methods
        .iter()
        .map(|m| {
            benchmarks
                .iter()
                .map(|b| lookup.get(&(*m, *b)).filter(|r| r.len() >= MIN_SEEDS).and_then(|r| median(r)))
                .collect()
        })
        .collect();
    rank_table(
        methods.iter().map(|s| s.to_string()).collect(),
        benchmarks.iter().map(|s| s.to_string()).collect(),
        values,
        scope,
    )
}

impl RankTable {
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["method".to_string()];
        for b in &self.benchmarks {
            header.push(format!("{b}_median"));
            header.push(format!("{b}_rank"));
        }
        header.push("avg_rank".into());
        w.write_record(&header)?;
        for (i, m) in self.methods.iter().enumerate() {
            let mut row = vec![m.clone()];
            for b in 0..self.benchmarks.len() {
                row.push(self.medians[i][b].map(|v| format!("{v}")).unwrap_or_default());
                row.push(self.ranks[i][b].map(|v| format!("{v}")).unwrap_or_default());
            }
            row.push(format!("{}", self.average_rank[i]));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Aligned plain-text table of medians with the average rank.
    pub fn to_text(&self) -> String {
        let mut cols: Vec<Vec<String>> = Vec::new();
        let mut first = vec!["method".to_string()];
        first.extend(self.methods.iter().cloned());
        cols.push(first);
        for (b, name) in self.benchmarks.iter().enumerate() {
            let mut c = vec![name.clone()];
            c.extend(self.medians.iter().map(|row| row[b].map(|v| format!("{v:.4}")).unwrap_or_else(|| "--".into())));
            cols.push(c);
        }
        let mut last = vec!["avg_rank".to_string()];
        last.extend(self.average_rank.iter().map(|r| format!("{r:.2}")));
        cols.push(last);
        let widths: Vec<usize> = cols.iter().map(|c| c.iter().map(String::len).max().unwrap_or(0)).collect();
        let mut s = String::new();
        for r in 0..cols[0].len() {
            let line: Vec<String> = cols
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, &w))| if i == 0 { format!("{:<w$}", c[r]) } else { format!("{:>w$}", c[r]) })
                .collect();
            s.push_str(line.join("  ").trim_end());
            s.push('\n');
        }
        s
    }
}
