use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::ApReport;
use crate::waveform::BoxClass;

/// Writes `class,iou,rank,precision,recall` rows for the IoU 0.5 curves.
pub fn write_pr_curves_csv<W: Write>(mut out: W, report: &ApReport) -> io::Result<()> {
    writeln!(out, "class,iou,rank,precision,recall")?;
    for (class, r) in &report.classes {
        for (rank, (p, rc)) in r.pr_curve50.iter().enumerate() {
            writeln!(out, "{},0.5,{},{:.9},{:.9}", class, rank + 1, p, rc)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDelta {
    pub class: BoxClass,
    pub baseline_ap50: Option<f64>,
    pub candidate_ap50: Option<f64>,
    pub baseline_ap: Option<f64>,
    pub candidate_ap: Option<f64>,
}

impl ClassDelta {
    pub fn delta_ap50(&self) -> Option<f64> {
        Some(self.candidate_ap50? - self.baseline_ap50?)
    }

    pub fn delta_ap(&self) -> Option<f64> {
        Some(self.candidate_ap? - self.baseline_ap?)
    }
}

/// Side-by-side AP of two runs over the same captures, e.g. RIS off vs
/// optimized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeComparison {
    pub baseline: String,
    pub candidate: String,
    pub classes: Vec<ClassDelta>,
    pub baseline_map: Option<f64>,
    pub candidate_map: Option<f64>,
    pub baseline_map50: Option<f64>,
    pub candidate_map50: Option<f64>,
}

impl ModeComparison {
    pub fn new(baseline: &str, base: &ApReport, candidate: &str, cand: &ApReport) -> Self {
        let classes = BoxClass::ALL
            .into_iter()
            .filter(|c| base.classes.contains_key(c) || cand.classes.contains_key(c))
            .map(|class| ClassDelta {
                class,
                baseline_ap50: base.classes.get(&class).and_then(|r| r.ap50),
                candidate_ap50: cand.classes.get(&class).and_then(|r| r.ap50),
                baseline_ap: base.classes.get(&class).and_then(|r| r.ap_mean),
                candidate_ap: cand.classes.get(&class).and_then(|r| r.ap_mean),
            })
            .collect();
        Self {
            baseline: baseline.into(),
            candidate: candidate.into(),
            classes,
            baseline_map: base.map,
            candidate_map: cand.map,
            baseline_map50: base.map50,
            candidate_map50: cand.map50,
        }
    }

    /// Plain-text table, one row per class plus the means.
    pub fn to_table(&self) -> String {
        let f = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
        let d = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:+.3}"));
        let mut s = format!(
            "{:<12} {:>10} {:>10} {:>8} {:>12} {:>12} {:>8}\n",
            "class",
            format!("{}@.5", self.baseline),
            format!("{}@.5", self.candidate),
            "delta",
            format!("{}@.5:.95", self.baseline),
            format!("{}@.5:.95", self.candidate),
            "delta"
        );
        for c in &self.classes {
            s.push_str(&format!(
                "{:<12} {:>10} {:>10} {:>8} {:>12} {:>12} {:>8}\n",
                c.class.name(),
                f(c.baseline_ap50),
                f(c.candidate_ap50),
                d(c.delta_ap50()),
                f(c.baseline_ap),
                f(c.candidate_ap),
                d(c.delta_ap())
            ));
        }
        let diff = |a: Option<f64>, b: Option<f64>| Some(b? - a?);
        s.push_str(&format!(
            "{:<12} {:>10} {:>10} {:>8} {:>12} {:>12} {:>8}\n",
            "mean",
            f(self.baseline_map50),
            f(self.candidate_map50),
            d(diff(self.baseline_map50, self.candidate_map50)),
            f(self.baseline_map),
            f(self.candidate_map),
            d(diff(self.baseline_map, self.candidate_map))
        ));
        s
    }
}
