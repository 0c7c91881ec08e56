//! Per-pixel and mean per-class accuracy against ground truth.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::image::{LabelMap, VOID};

/// Pixel tallies per ground-truth class, pooled over any number of queries.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub num_classes: usize,
    /// Correctly labeled non-VOID pixels per ground-truth class.
    pub correct: Vec<u64>,
    /// Non-VOID ground-truth pixels per class.
    pub total: Vec<u64>,
    pub queries: usize,
    /// Names of queries whose ground truth is entirely VOID.
    pub excluded: Vec<String>,
    /// Wall-clock milliseconds per pipeline stage, summed over queries.
    pub timings: Vec<(String, f64)>,
}

impl EvalReport {
    pub fn new(num_classes: usize) -> Self {
        Self { num_classes, correct: vec![0; num_classes], total: vec![0; num_classes], ..Default::default() }
    }

    /// Fraction of non-VOID pixels labeled correctly; `None` with no such pixels.
    pub fn per_pixel(&self) -> Option<f64> {
        let total: u64 = self.total.iter().sum();
        (total > 0).then(|| self.correct.iter().sum::<u64>() as f64 / total as f64)
    }

    /// Recall of each class that has ground-truth pixels.
    pub fn class_recall(&self) -> Vec<Option<f64>> {
        self.correct
            .iter()
            .zip(&self.total)
            .map(|(&c, &t)| (t > 0).then(|| c as f64 / t as f64))
            .collect()
    }

    /// Unweighted mean of [`Self::class_recall`] over present classes.
    pub fn per_class(&self) -> Option<f64> {
        let present: Vec<f64> = self.class_recall().into_iter().flatten().collect();
        (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
    }

    pub fn is_excluded(&self) -> bool {
        self.total.iter().all(|&t| t == 0)
    }

    pub fn merge(&mut self, other: &EvalReport) {
        if self.num_classes < other.num_classes {
            self.num_classes = other.num_classes;
            self.correct.resize(other.num_classes, 0);
            self.total.resize(other.num_classes, 0);
        }
        for (i, (&c, &t)) in other.correct.iter().zip(&other.total).enumerate() {
            self.correct[i] += c;
            self.total[i] += t;
        }
        self.queries += other.queries;
        self.excluded.extend(other.excluded.iter().cloned());
        for (stage, ms) in &other.timings {
            self.add_time(stage, *ms);
        }
    }

    pub fn add_time(&mut self, stage: &str, ms: f64) {
        match self.timings.iter_mut().find(|(s, _)| s == stage) {
            Some(entry) => entry.1 += ms,
            None => self.timings.push((stage.to_string(), ms)),
        }
    }

    /// Plain-text summary: headline accuracies, per-class table, stage timings.
    pub fn to_text(&self, class_names: &[String]) -> String {
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{:.4}", x));
        let mut out = String::new();
        let _ = writeln!(out, "queries\t{}", self.queries);
        if !self.excluded.is_empty() {
            let _ = writeln!(out, "excluded\t{}", self.excluded.join(","));
        }
        let _ = writeln!(out, "per_pixel\t{}", fmt(self.per_pixel()));
        let _ = writeln!(out, "per_class\t{}", fmt(self.per_class()));
        let _ = writeln!(out, "\nclass\tname\tpixels\trecall");
        for (i, r) in self.class_recall().into_iter().enumerate() {
            let name = class_names.get(i).map_or("", String::as_str);
            let _ = writeln!(out, "{i}\t{name}\t{}\t{}", self.total[i], fmt(r));
        }
        if !self.timings.is_empty() {
            let _ = writeln!(out, "\nstage\tms");
            for (stage, ms) in &self.timings {
                let _ = writeln!(out, "{stage}\t{ms:.1}");
            }
        }
        out
    }
}

/// Tallies one prediction. VOID ground-truth pixels are skipped; a query with
/// no labeled pixels is listed under `excluded`.
pub fn evaluate(name: &str, pred: &LabelMap, gt: &LabelMap) -> Result<EvalReport> {
    if (pred.width(), pred.height()) != (gt.width(), gt.height()) {
        return Err(Error::Dimension(format!(
            "prediction is {}x{} but ground truth is {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    let mut report = EvalReport::new(gt.num_classes().max(pred.num_classes()));
    report.queries = 1;
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        if g == VOID {
            continue;
        }
        report.total[g as usize] += 1;
        if p == g {
            report.correct[g as usize] += 1;
        }
    }
    if report.is_excluded() {
        report.excluded.push(name.to_string());
    }
    Ok(report)
}

/// Indices of wrongly labeled pixels whose 4-neighbours are all labeled
/// correctly. VOID ground truth is never an error.
pub fn isolated_errors(pred: &LabelMap, gt: &LabelMap) -> Result<Vec<usize>> {
    let (w, h) = (gt.width(), gt.height());
    if (pred.width(), pred.height()) != (w, h) {
        return Err(Error::Dimension(format!("prediction is {}x{} but ground truth is {w}x{h}", pred.width(), pred.height())));
    }
    let wrong = |x: usize, y: usize| {
        let g = gt.get(x, y);
        g != VOID && pred.get(x, y) != g
    };
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !wrong(x, y) {
                continue;
            }
            let isolated = (x == 0 || !wrong(x - 1, y))
                && (x + 1 == w || !wrong(x + 1, y))
                && (y == 0 || !wrong(x, y - 1))
                && (y + 1 == h || !wrong(x, y + 1));
            if isolated {
                out.push(y * w + x);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction() {
        let gt = LabelMap::new(3, 1, vec![0, 1, 2], 3).unwrap();
        let r = evaluate("q", &gt, &gt).unwrap();
        assert_eq!(r.per_pixel(), Some(1.0));
        assert_eq!(r.per_class(), Some(1.0));
    }

    #[test]
    fn ninety_ten_split() {
        let mut g = vec![0u8; 90];
        g.extend([1u8; 10]);
        let gt = LabelMap::new(100, 1, g, 2).unwrap();
        let pred = LabelMap::filled(100, 1, 0, 2).unwrap();
        let r = evaluate("q", &pred, &gt).unwrap();
        assert!((r.per_pixel().unwrap() - 0.9).abs() < 1e-12);
        assert!((r.per_class().unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn void_is_ignored_and_all_void_excluded() {
        let gt = LabelMap::new(3, 1, vec![VOID, 1, VOID], 2).unwrap();
        let pred = LabelMap::new(3, 1, vec![0, 1, 1], 2).unwrap();
        let r = evaluate("q", &pred, &gt).unwrap();
        assert_eq!(r.per_pixel(), Some(1.0));
        assert_eq!(r.class_recall(), vec![None, Some(1.0)]);

        let void = LabelMap::filled(3, 1, VOID, 2).unwrap();
        let r = evaluate("blank", &pred, &void).unwrap();
        assert!(r.is_excluded());
        assert_eq!(r.excluded, vec!["blank".to_string()]);
        assert_eq!(r.per_pixel(), None);
    }

    #[test]
    fn size_mismatch_rejected() {
        let a = LabelMap::filled(2, 2, 0, 2).unwrap();
        let b = LabelMap::filled(2, 3, 0, 2).unwrap();
        assert!(evaluate("q", &a, &b).is_err());
    }

    #[test]
    fn isolated_errors_skip_clusters() {
        let gt = LabelMap::filled(4, 3, 0, 2).unwrap();
        let pred = LabelMap::new(4, 3, vec![1, 0, 0, 0, 0, 0, 1, 1, 0, 0, 0, 0], 2).unwrap();
        assert_eq!(isolated_errors(&pred, &gt).unwrap(), vec![0]);
    }

    #[test]
    fn merge_pools_pixels() {
        let gt = LabelMap::new(2, 1, vec![0, 1], 2).unwrap();
        let mut total = EvalReport::new(2);
        total.merge(&evaluate("a", &gt, &gt).unwrap());
        let wrong = LabelMap::new(2, 1, vec![1, 0], 2).unwrap();
        total.merge(&evaluate("b", &wrong, &gt).unwrap());
        total.add_time("crf", 2.0);
        total.add_time("crf", 3.0);
        assert_eq!(total.queries, 2);
        assert_eq!(total.per_pixel(), Some(0.5));
        assert_eq!(total.timings, vec![("crf".to_string(), 5.0)]);
        assert!(total.to_text(&[]).contains("per_pixel\t0.5000"));
    }
}
