//! Multiclass precision / recall / F1 of predicted claims against gold labels.
//!
//! `unknown` is an ordinary class. Rows are reported for every class that
//! occurs in the gold set. A class that is never predicted has undefined
//! precision (shown as `--`) and F1 = 0. Averages of precision skip undefined
//! values; macro averages weight every gold class equally, weighted averages
//! use support.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::claims::ClaimLabel;
use crate::error::{Error, Result};
use crate::UNKNOWN;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldSet {
    /// `(listing_id, gold claim)`; `None` is unknown.
    pub items: Vec<(String, Option<String>)>,
    pub provenance: String,
}

impl GoldSet {
    pub fn new(items: Vec<(String, Option<String>)>, provenance: impl Into<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (id, _) in &items {
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidInput(format!("gold set lists {id:?} twice")));
            }
        }
        Ok(GoldSet {
            items,
            provenance: provenance.into(),
        })
    }

    /// CSV with `listing_id` and `claim` columns; other columns are ignored.
    pub fn load(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        let headers = reader
            .headers()
            .map_err(|e| Error::format(path, e.to_string()))?
            .clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::format(path, format!("missing column {name:?}")))
        };
        let (id_col, claim_col) = (col("listing_id")?, col("claim")?);
        let mut items = Vec::new();
        for record in reader.records() {
            let r = record.map_err(|e| Error::format(path, e.to_string()))?;
            let claim = r.get(claim_col).unwrap_or_default().trim().to_lowercase();
            let claim = (!claim.is_empty() && claim != UNKNOWN).then_some(claim);
            items.push((r.get(id_col).unwrap_or_default().to_string(), claim));
        }
        Self::new(items, path.display().to_string()).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassRow {
    pub class: String,
    /// `None` when the class was never predicted.
    pub precision: Option<f64>,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub predicted: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub rows: Vec<ClassRow>,
    pub accuracy: f64,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    pub total_support: usize,
    /// Predicted classes that never occur in the gold set.
    pub predicted_only: Vec<String>,
}

pub fn evaluate(gold: &GoldSet, predicted: &[ClaimLabel]) -> Result<EvalReport> {
    let by_id: HashMap<&str, &str> = predicted
        .iter()
        .map(|l| (l.listing_id.as_str(), l.claim_str()))
        .collect();
    let mut pairs = Vec::with_capacity(gold.len());
    for (id, claim) in &gold.items {
        let pred = by_id
            .get(id.as_str())
            .ok_or_else(|| Error::InvalidInput(format!("no prediction for gold listing {id:?}")))?;
        pairs.push((claim.as_deref().unwrap_or(UNKNOWN), *pred));
    }
    Ok(evaluate_pairs(&pairs))
}

/// Score `(gold, predicted)` class-name pairs.
pub fn evaluate_pairs(pairs: &[(&str, &str)]) -> EvalReport {
    #[derive(Default)]
    struct Counts {
        tp: usize,
        support: usize,
        predicted: usize,
    }
    let mut counts: BTreeMap<&str, Counts> = BTreeMap::new();
    let mut correct = 0;
    for &(g, p) in pairs {
        counts.entry(g).or_default().support += 1;
        counts.entry(p).or_default().predicted += 1;
        if g == p {
            counts.get_mut(g).unwrap().tp += 1;
            correct += 1;
        }
    }

    let mut rows = Vec::new();
    let mut predicted_only = Vec::new();
    for (class, c) in &counts {
        if c.support == 0 {
            predicted_only.push(class.to_string());
            continue;
        }
        let precision = (c.predicted > 0).then(|| c.tp as f64 / c.predicted as f64);
        let recall = c.tp as f64 / c.support as f64;
        let f1 = match precision {
            Some(p) if p + recall > 0.0 => 2.0 * p * recall / (p + recall),
            _ => 0.0,
        };
        rows.push(ClassRow {
            class: class.to_string(),
            precision,
            recall,
            f1,
            support: c.support,
            predicted: c.predicted,
        });
    }
    // unknown last, like a residual class
    rows.sort_by(|a, b| {
        (a.class == UNKNOWN)
            .cmp(&(b.class == UNKNOWN))
            .then_with(|| a.class.cmp(&b.class))
    });

    let total = pairs.len();
    let n = rows.len() as f64;
    let mean = |f: &dyn Fn(&ClassRow) -> f64| {
        if rows.is_empty() {
            0.0
        } else {
            rows.iter().map(f).sum::<f64>() / n
        }
    };
    let weighted = |f: &dyn Fn(&ClassRow) -> f64| {
        if total == 0 {
            0.0
        } else {
            rows.iter().map(|r| f(r) * r.support as f64).sum::<f64>() / total as f64
        }
    };
    let defined: Vec<&ClassRow> = rows.iter().filter(|r| r.precision.is_some()).collect();
    let macro_precision = if defined.is_empty() {
        0.0
    } else {
        defined.iter().map(|r| r.precision.unwrap()).sum::<f64>() / defined.len() as f64
    };
    let defined_support: usize = defined.iter().map(|r| r.support).sum();
    let weighted_precision = if defined_support == 0 {
        0.0
    } else {
        defined
            .iter()
            .map(|r| r.precision.unwrap() * r.support as f64)
            .sum::<f64>()
            / defined_support as f64
    };

    EvalReport {
        accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        macro_avg: Averages {
            precision: macro_precision,
            recall: mean(&|r| r.recall),
            f1: mean(&|r| r.f1),
        },
        weighted_avg: Averages {
            precision: weighted_precision,
            recall: weighted(&|r| r.recall),
            f1: weighted(&|r| r.f1),
        },
        total_support: total,
        predicted_only,
        rows,
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "--".to_string(), |v| format!("{v:.2}"))
}

impl EvalReport {
    /// Machine-readable form: one row per class, then summary rows.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["class", "precision", "recall", "f1", "support"])
            .unwrap();
        for r in &self.rows {
            w.write_record([
                r.class.clone(),
                r.precision.map_or_else(String::new, |p| p.to_string()),
                r.recall.to_string(),
                r.f1.to_string(),
                r.support.to_string(),
            ])
            .unwrap();
        }
        w.write_record([
            "accuracy",
            "",
            &self.accuracy.to_string(),
            "",
            &self.total_support.to_string(),
        ])
        .unwrap();
        for (name, avg) in [("macro avg", self.macro_avg), ("weighted avg", self.weighted_avg)] {
            w.write_record([
                name.to_string(),
                avg.precision.to_string(),
                avg.recall.to_string(),
                avg.f1.to_string(),
                self.total_support.to_string(),
            ])
            .unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }
}

/// Aligned text table comparing one or more labelers on the same gold set.
pub fn render_table(reports: &[(&str, &EvalReport)]) -> String {
    let mut classes: Vec<&str> = Vec::new();
    for (_, r) in reports {
        for row in &r.rows {
            if !classes.contains(&row.class.as_str()) {
                classes.push(&row.class);
            }
        }
    }
    let width = classes.iter().map(|c| c.len()).chain([12]).max().unwrap_or(12);
    let mut out = String::new();
    let _ = write!(out, "{:width$}", "", width = width);
    for (name, _) in reports {
        let _ = write!(out, " | {:^20}", name);
    }
    out.push_str(" |\n");
    let _ = write!(out, "{:width$}", "Neighborhood", width = width);
    for _ in reports {
        out.push_str(" |  Prec. Recall    F1");
    }
    out.push_str(" | Support\n");
    let rule = "-".repeat(width + reports.len() * 23 + 10);
    let _ = writeln!(out, "{rule}");
    for class in &classes {
        let _ = write!(out, "{class:width$}");
        let mut support = 0;
        for (_, r) in reports {
            match r.rows.iter().find(|row| row.class == *class) {
                Some(row) => {
                    support = row.support;
                    let _ = write!(
                        out,
                        " | {:>6} {:>6} {:>5.2}",
                        fmt_opt(row.precision),
                        format!("{:.2}", row.recall),
                        row.f1
                    );
                }
                None => out.push_str(" |                     "),
            }
        }
        let _ = writeln!(out, " | {support:>7}");
    }
    let _ = writeln!(out, "{rule}");
    let _ = write!(out, "{:width$}", "Accuracy");
    for (_, r) in reports {
        let _ = write!(out, " | {:>6} {:>6} {:>5}", "", format!("{:.2}", r.accuracy), "");
    }
    let total = reports.first().map_or(0, |(_, r)| r.total_support);
    let _ = writeln!(out, " | {:>7}", format!("{total}"));
    for (label, pick) in [
        (
            "Macro Avg",
            (|r: &EvalReport| r.macro_avg) as fn(&EvalReport) -> Averages,
        ),
        ("Weighted Avg", |r: &EvalReport| r.weighted_avg),
    ] {
        let _ = write!(out, "{label:width$}");
        for (_, r) in reports {
            let a = pick(r);
            let _ = write!(out, " | {:>6.2} {:>6.2} {:>5.2}", a.precision, a.recall, a.f1);
        }
        out.push_str(" |\n");
    }
    out
}
