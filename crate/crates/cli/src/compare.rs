//! The `compare` command: final accuracies of two runs, seed by seed.

use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use crate::run::SeedSummary;

#[derive(Debug, thiserror::Error)]
pub enum CompareError {
    #[error("{path}: {message}")]
    Unreadable { path: String, message: String },
    #[error("{0}: summary lists no seeds")]
    Empty(String),
    #[error("the two runs share no seeds")]
    Disjoint,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
struct PruneView {
    schedule: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
struct ConfigView {
    prune: PruneView,
}

/// The parts of `summary.json` that a comparison reads.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct SummaryView {
    pub schema: u32,
    config: ConfigView,
    pub seeds: Vec<SeedSummary>,
}

impl SummaryView {
    pub fn schedule(&self) -> &[f64] {
        &self.config.prune.schedule
    }
}

pub fn parse_summary(text: &str) -> Result<SummaryView, serde_json::Error> {
    serde_json::from_str(text)
}

fn load(dir: &Path) -> Result<SummaryView, CompareError> {
    let path = dir.join("summary.json");
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(&path).map_err(|e| CompareError::Unreadable {
        path: shown.clone(),
        message: e.to_string(),
    })?;
    let view = parse_summary(&text).map_err(|e| CompareError::Unreadable {
        path: shown.clone(),
        message: e.to_string(),
    })?;
    if view.schema != crate::run::SUMMARY_SCHEMA {
        return Err(CompareError::Unreadable {
            path: shown,
            message: format!("unsupported summary schema {}", view.schema),
        });
    }
    if view.seeds.is_empty() {
        return Err(CompareError::Empty(shown));
    }
    Ok(view)
}

/// Render the comparison table; `difference` is `b - a`. Seeds present in
/// only one run are listed after the table and left out of the means.
pub fn compare_summaries(a: &SummaryView, b: &SummaryView) -> Result<String, CompareError> {
    let mut out = String::new();
    if a.schedule() != b.schedule() {
        writeln!(
            out,
            "warning: schedules differ: a {:?}, b {:?}",
            a.schedule(),
            b.schedule()
        )
        .unwrap();
    }
    let pairs: Vec<(&SeedSummary, &SeedSummary)> = a
        .seeds
        .iter()
        .filter_map(|sa| {
            b.seeds
                .iter()
                .find(|sb| sb.seed == sa.seed)
                .map(|sb| (sa, sb))
        })
        .collect();
    if pairs.is_empty() {
        return Err(CompareError::Disjoint);
    }
    writeln!(
        out,
        "{:>8}  {:>10}  {:>10}  {:>10}",
        "seed", "a_acc", "b_acc", "difference"
    )
    .unwrap();
    for (sa, sb) in &pairs {
        let (x, y) = (sa.final_accuracy, sb.final_accuracy);
        writeln!(out, "{:>8}  {x:>10.6}  {y:>10.6}  {:>10.6}", sa.seed, y - x).unwrap();
    }
    let n = pairs.len() as f64;
    let ma = pairs.iter().map(|(s, _)| s.final_accuracy).sum::<f64>() / n;
    let mb = pairs.iter().map(|(_, s)| s.final_accuracy).sum::<f64>() / n;
    writeln!(
        out,
        "{:>8}  {ma:>10.6}  {mb:>10.6}  {:>10.6}",
        "mean",
        mb - ma
    )
    .unwrap();
    let wins = pairs
        .iter()
        .filter(|(sa, sb)| sb.final_accuracy >= sa.final_accuracy)
        .count();
    writeln!(out, "b >= a on {wins} of {} seeds", pairs.len()).unwrap();
    for (label, run, other) in [("a", a, b), ("b", b, a)] {
        let only: Vec<u64> = run
            .seeds
            .iter()
            .map(|s| s.seed)
            .filter(|s| !other.seeds.iter().any(|o| o.seed == *s))
            .collect();
        if !only.is_empty() {
            writeln!(out, "warning: seeds only in {label}: {only:?}").unwrap();
        }
    }
    Ok(out)
}

pub fn execute(a: &Path, b: &Path) -> Result<String, CompareError> {
    compare_summaries(&load(a)?, &load(b)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn view(schedule: &[f64], seeds: &[(u64, f64)]) -> SummaryView {
        SummaryView {
            schema: 1,
            config: ConfigView {
                prune: PruneView {
                    schedule: schedule.to_vec(),
                },
            },
            seeds: seeds
                .iter()
                .map(|&(seed, final_accuracy)| SeedSummary {
                    seed,
                    dense_accuracy: 0.9,
                    dense_loss: 0.3,
                    dense_epochs: 3,
                    final_accuracy,
                    final_loss: 0.4,
                    final_sparsity: 0.5,
                })
                .collect(),
        }
    }

    #[test]
    fn self_comparison_has_zero_differences() {
        let a = view(&[0.5], &[(0, 0.81), (1, 0.9)]);
        let table = compare_summaries(&a, &a).unwrap();
        assert!(!table.contains("warning"));
        for line in table.lines().skip(1).take(3) {
            assert!(line.ends_with("0.000000"), "{line}");
        }
    }

    #[test]
    fn differing_schedules_warn_but_compare() {
        let a = view(&[0.5], &[(0, 0.8)]);
        let b = view(&[0.5, 0.9], &[(0, 0.7), (3, 0.1)]);
        let table = compare_summaries(&a, &b).unwrap();
        assert!(table.starts_with("warning: schedules differ"));
        assert!(table.contains("-0.100000"));
        assert!(table.contains("seeds only in b: [3]"));
    }

    #[test]
    fn disjoint_seeds_are_an_error() {
        let a = view(&[0.5], &[(0, 0.8)]);
        let b = view(&[0.5], &[(1, 0.8)]);
        assert!(matches!(
            compare_summaries(&a, &b),
            Err(CompareError::Disjoint)
        ));
    }
}
