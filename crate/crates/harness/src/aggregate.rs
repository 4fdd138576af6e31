//! Rank tables and mean curves derived from a summary.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::run::{Status, SummaryRow, WeightRow};

pub const RANKS_FILE: &str = "ranks.csv";

/// (problem, seed) -> t -> score per method index
type Cells<'a> = BTreeMap<(&'a str, u64), BTreeMap<usize, Vec<Option<f64>>>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub method: String,
    pub t: usize,
    pub mean_rank: f64,
    pub std_rank: f64,
    /// Number of (problem, seed) cells ranked at `t`.
    pub count: usize,
}

/// Mean and population standard deviation of one series point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub series: String,
    pub t: usize,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Methods in order of first appearance.
pub fn methods_in(summary: &[SummaryRow]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for row in summary {
        if !out.contains(&row.method) {
            out.push(row.method.clone());
        }
    }
    out
}

/// 1-based ranks of `scores` (higher is better); tied scores share the
/// average of the positions they span.
pub fn average_ranks(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let shared = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = shared;
        }
        i = j + 1;
    }
    ranks
}

/// Ranks methods by incumbent score within every (problem, seed) cell at
/// every evaluation index, then averages over cells. A cell is ranked at
/// `t` only when every method has a score there. Fewer than two methods
/// give an empty table.
pub fn aggregate_ranks(summary: &[SummaryRow]) -> Vec<RankRow> {
    let methods = methods_in(summary);
    if methods.len() < 2 {
        return Vec::new();
    }
    let mut cells = Cells::new();
    for row in summary {
        let (Some(score), true) = (row.score, row.status != Status::Failed) else {
            continue;
        };
        let m = methods.iter().position(|x| *x == row.method).expect("collected above");
        cells
            .entry((row.problem.as_str(), row.seed))
            .or_default()
            .entry(row.t)
            .or_insert_with(|| vec![None; methods.len()])[m] = Some(score);
    }

    let mut per_t: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
    for by_t in cells.values() {
        for (&t, scores) in by_t {
            let Some(scores) = scores.iter().copied().collect::<Option<Vec<f64>>>() else {
                continue;
            };
            let ranks = average_ranks(&scores);
            let slot = per_t.entry(t).or_insert_with(|| vec![Vec::new(); methods.len()]);
            for (m, r) in ranks.into_iter().enumerate() {
                slot[m].push(r);
            }
        }
    }

    let mut out = Vec::new();
    for (t, by_method) in per_t {
        for (m, ranks) in by_method.iter().enumerate() {
            let (mean, std) = mean_std(ranks);
            out.push(RankRow {
                method: methods[m].clone(),
                t,
                mean_rank: mean,
                std_rank: std,
                count: ranks.len(),
            });
        }
    }
    out
}

/// Mean incumbent (problem's own sense) over seeds, per method and
/// evaluation index, for one problem.
pub fn incumbent_curves(summary: &[SummaryRow], problem: &str) -> Vec<CurveRow> {
    let mut groups: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    let methods = methods_in(summary);
    for row in summary.iter().filter(|r| r.problem == problem) {
        if let Some(v) = row.incumbent {
            let m = methods.iter().position(|x| *x == row.method).expect("collected above");
            groups.entry((m, row.t)).or_default().push(v);
        }
    }
    groups
        .into_iter()
        .map(|((m, t), values)| {
            let (mean, std) = mean_std(&values);
            CurveRow {
                series: methods[m].clone(),
                t,
                mean,
                std,
                count: values.len(),
            }
        })
        .collect()
}

/// Mean weight per source over seeds for one (problem, method).
pub fn weight_curves(weights: &[WeightRow], problem: &str, method: &str) -> Vec<CurveRow> {
    let mut sources: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for row in weights.iter().filter(|r| r.problem == problem && r.method == method) {
        let s = match sources.iter().position(|s| *s == row.source) {
            Some(s) => s,
            None => {
                sources.push(&row.source);
                sources.len() - 1
            }
        };
        groups.entry((s, row.t)).or_default().push(row.weight);
    }
    groups
        .into_iter()
        .map(|((s, t), values)| {
            let (mean, std) = mean_std(&values);
            CurveRow {
                series: sources[s].to_string(),
                t,
                mean,
                std,
                count: values.len(),
            }
        })
        .collect()
}
