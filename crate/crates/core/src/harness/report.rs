use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::metrics::mean_sd;

/// One metric value of one trained model on one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub model: String,
    pub split: String,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
}

/// Per-seed metric rows, kept in run order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<MetricRow>,
}

pub const TSV_HEADER: &str = "model\tsplit\tmetric\tvalue\tseed";

type Key = (String, String, String);

impl Report {
    pub fn extend(&mut self, other: Report) {
        self.rows.extend(other.rows);
    }

    /// Per-seed values of one (model, split, metric) cell, in row order.
    pub fn values(&self, model: &str, split: &str, metric: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.model == model && r.split == split && r.metric == metric)
            .map(|r| r.value)
            .collect()
    }

    /// Cells in first-appearance order.
    fn cells(&self) -> Vec<(Key, Vec<f64>)> {
        let mut order: Vec<Key> = Vec::new();
        let mut vals: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
        for r in &self.rows {
            let key = (r.model.clone(), r.split.clone(), r.metric.clone());
            if !vals.contains_key(&key) {
                order.push(key.clone());
            }
            vals.entry(key).or_default().push(r.value);
        }
        order
            .into_iter()
            .map(|k| {
                let v = vals.remove(&k).unwrap_or_default();
                (k, v)
            })
            .collect()
    }

    /// Per-seed rows, then one `mean` and one `sd` row per cell.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        out.push_str(TSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{:.6}\t{}",
                r.model, r.split, r.metric, r.value, r.seed
            );
        }
        for ((model, split, metric), vals) in self.cells() {
            let (mean, sd) = mean_sd(&vals);
            let _ = writeln!(out, "{model}\t{split}\t{metric}\t{mean:.6}\tmean");
            let _ = writeln!(out, "{model}\t{split}\t{metric}\t{sd:.6}\tsd");
        }
        out
    }

    /// Aligned `mean ± sd` table for the terminal.
    pub fn table(&self) -> String {
        let cells = self.cells();
        let w_model = cells.iter().map(|((m, _, _), _)| m.len()).max().unwrap_or(0).max(5);
        let w_metric = cells.iter().map(|((_, _, m), _)| m.len()).max().unwrap_or(0).max(6);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<w_model$}  {:<5}  {:<w_metric$}  {:>9}  {:>8}  seeds",
            "model", "split", "metric", "mean", "sd"
        );
        for ((model, split, metric), vals) in cells {
            let (mean, sd) = mean_sd(&vals);
            let _ = writeln!(
                out,
                "{model:<w_model$}  {split:<5}  {metric:<w_metric$}  {mean:>9.4}  {sd:>8.4}  {}",
                vals.len()
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(model: &str, metric: &str, value: f64, seed: u64) -> MetricRow {
        MetricRow {
            model: model.into(),
            split: "test".into(),
            metric: metric.into(),
            value,
            seed,
        }
    }

    #[test]
    fn tsv_has_seed_rows_then_summaries() {
        let r = Report {
            rows: vec![row("L1", "f1", 0.5, 0), row("L1", "f1", 0.7, 1)],
        };
        let tsv = r.to_tsv();
        let lines: Vec<&str> = tsv.lines().collect();
        assert_eq!(lines[0], TSV_HEADER);
        assert_eq!(lines[1], "L1\ttest\tf1\t0.500000\t0");
        assert_eq!(lines[3], "L1\ttest\tf1\t0.600000\tmean");
        assert!(lines[4].starts_with("L1\ttest\tf1\t0.141421\tsd"));
        assert_eq!(lines.len(), 5);
    }

    #[test]
    fn cells_keep_first_appearance_order() {
        let r = Report {
            rows: vec![row("b", "f1", 1.0, 0), row("a", "f1", 1.0, 0), row("b", "f1", 0.0, 1)],
        };
        assert_eq!(r.values("b", "test", "f1"), vec![1.0, 0.0]);
        let table = r.table();
        let b = table.find("\nb ").unwrap();
        let a = table.find("\na ").unwrap();
        assert!(b < a);
    }
}
