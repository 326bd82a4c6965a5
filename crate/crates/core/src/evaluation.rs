//! Token-level scoring, per-surface tag preferences, and seed-aggregated
//! comparison tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{LabelScheme, TagKind, OUTSIDE};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("tag index {0} is out of range")]
    TagOutOfRange(usize),
    #[error("surface form {0:?} does not occur in the corpus")]
    UnseenSurface(String),
    #[error("reports use different label schemes")]
    SchemeMismatch,
    #[error("comparison needs at least {0} reports")]
    TooFew(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    /// Every non-O token is a decision.
    #[default]
    Token,
    /// Exact-match entity spans; diagnostics only.
    Span,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagMetrics {
    pub tag: String,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub granularity: Granularity,
    pub tags: Vec<String>,
    pub tokens: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_tag: Vec<TagMetrics>,
    pub gold_entities: usize,
    pub predicted_entities: usize,
    /// `confusion[gold][predicted]` token counts.
    pub confusion: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub shift_tokens: Vec<SurfaceAccuracy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceAccuracy {
    pub surface: String,
    pub occurrences: usize,
    pub correct: usize,
    pub accuracy: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

fn check_pairs(predicted: &[Vec<usize>], gold: &[Vec<usize>], k: usize) -> Result<(), EvalError> {
    if predicted.len() != gold.len() {
        return Err(EvalError::Length(format!(
            "{} predicted sentences, {} gold",
            predicted.len(),
            gold.len()
        )));
    }
    for (i, (p, g)) in predicted.iter().zip(gold).enumerate() {
        if p.len() != g.len() {
            return Err(EvalError::Length(format!(
                "sentence {i}: {} predicted tags, {} gold",
                p.len(),
                g.len()
            )));
        }
        if let Some(&bad) = p.iter().chain(g).find(|&&t| t >= k) {
            return Err(EvalError::TagOutOfRange(bad));
        }
    }
    Ok(())
}

/// Micro-averaged precision, recall and F1 over all non-O tags, with the
/// per-tag breakdown and a confusion matrix.
pub fn token_f1(
    predicted: &[Vec<usize>],
    gold: &[Vec<usize>],
    scheme: &LabelScheme,
) -> Result<MetricsReport, EvalError> {
    let k = scheme.num_tags();
    check_pairs(predicted, gold, k)?;
    let mut confusion = vec![vec![0usize; k]; k];
    let mut tokens = 0;
    for (p, g) in predicted.iter().zip(gold) {
        for (&pt, &gt) in p.iter().zip(g) {
            confusion[gt][pt] += 1;
            tokens += 1;
        }
    }
    let mut per_tag = Vec::with_capacity(k - 1);
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for t in (0..k).filter(|&t| t != OUTSIDE) {
        let t_tp = confusion[t][t];
        let support: usize = confusion[t].iter().sum();
        let predicted_t: usize = confusion.iter().map(|row| row[t]).sum();
        let (t_fp, t_fn) = (predicted_t - t_tp, support - t_tp);
        tp += t_tp;
        fp += t_fp;
        fn_ += t_fn;
        let (p, r) = (ratio(t_tp, t_tp + t_fp), ratio(t_tp, t_tp + t_fn));
        per_tag.push(TagMetrics {
            tag: scheme.tag(t).to_string(),
            tp: t_tp,
            fp: t_fp,
            fn_: t_fn,
            support,
            precision: p,
            recall: r,
            f1: f1_score(p, r),
        });
    }
    let (precision, recall) = (ratio(tp, tp + fp), ratio(tp, tp + fn_));
    Ok(MetricsReport {
        granularity: Granularity::Token,
        tags: scheme.tags().to_vec(),
        tokens,
        tp,
        fp,
        fn_,
        precision,
        recall,
        f1: f1_score(precision, recall),
        per_tag,
        gold_entities: gold.iter().map(|g| scheme.count_entities(g)).sum(),
        predicted_entities: predicted.iter().map(|p| scheme.count_entities(p)).sum(),
        confusion,
        shift_tokens: Vec::new(),
    })
}

/// `(type, start, end)` spans; an `I-t` that does not continue a `t` span
/// opens a new one.
pub fn spans(labels: &[usize], scheme: &LabelScheme) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    let mut open: Option<(usize, usize)> = None;
    for (i, &l) in labels.iter().enumerate() {
        match scheme.kind(l) {
            TagKind::Outside => {
                if let Some((t, s)) = open.take() {
                    out.push((t, s, i));
                }
            }
            TagKind::Begin(t) => {
                if let Some((pt, s)) = open.take() {
                    out.push((pt, s, i));
                }
                open = Some((t, i));
            }
            TagKind::Inside(t) => match open {
                Some((pt, _)) if pt == t => {}
                _ => {
                    if let Some((pt, s)) = open.take() {
                        out.push((pt, s, i));
                    }
                    open = Some((t, i));
                }
            },
        }
    }
    if let Some((t, s)) = open {
        out.push((t, s, labels.len()));
    }
    out
}

/// Exact-match span F1, per entity type. The confusion matrix is still
/// token-level.
pub fn span_f1(
    predicted: &[Vec<usize>],
    gold: &[Vec<usize>],
    scheme: &LabelScheme,
) -> Result<MetricsReport, EvalError> {
    let mut report = token_f1(predicted, gold, scheme)?;
    let types = scheme.entity_types().len();
    let mut counts = vec![(0usize, 0usize, 0usize); types];
    for (p, g) in predicted.iter().zip(gold) {
        let ps = spans(p, scheme);
        let gs = spans(g, scheme);
        for s in &ps {
            if gs.contains(s) {
                counts[s.0].0 += 1;
            } else {
                counts[s.0].1 += 1;
            }
        }
        for s in &gs {
            if !ps.contains(s) {
                counts[s.0].2 += 1;
            }
        }
    }
    report.granularity = Granularity::Span;
    report.per_tag = counts
        .iter()
        .enumerate()
        .map(|(t, &(tp, fp, fn_))| {
            let (p, r) = (ratio(tp, tp + fp), ratio(tp, tp + fn_));
            TagMetrics {
                tag: scheme.entity_types()[t].clone(),
                tp,
                fp,
                fn_,
                support: tp + fn_,
                precision: p,
                recall: r,
                f1: f1_score(p, r),
            }
        })
        .collect();
    report.tp = counts.iter().map(|c| c.0).sum();
    report.fp = counts.iter().map(|c| c.1).sum();
    report.fn_ = counts.iter().map(|c| c.2).sum();
    report.precision = ratio(report.tp, report.tp + report.fp);
    report.recall = ratio(report.tp, report.tp + report.fn_);
    report.f1 = f1_score(report.precision, report.recall);
    Ok(report)
}

/// Empirical tag distribution of one surface form, keyed by tag name.
pub fn label_preference<T: AsRef<[String]>>(
    sentences: &[T],
    tags: &[Vec<usize>],
    scheme: &LabelScheme,
    surface: &str,
) -> Result<BTreeMap<String, f64>, EvalError> {
    if sentences.len() != tags.len() {
        return Err(EvalError::Length(format!(
            "{} sentences, {} tag rows",
            sentences.len(),
            tags.len()
        )));
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    let mut total = 0;
    for (s, t) in sentences.iter().zip(tags) {
        for (tok, &tag) in s.as_ref().iter().zip(t) {
            if tok == surface {
                *counts.entry(tag).or_default() += 1;
                total += 1;
            }
        }
    }
    if total == 0 {
        return Err(EvalError::UnseenSurface(surface.to_string()));
    }
    Ok(counts
        .into_iter()
        .map(|(t, c)| (scheme.tag(t).to_string(), c as f64 / total as f64))
        .collect())
}

/// Tag accuracy restricted to occurrences of the given surface forms.
pub fn surface_accuracy<T: AsRef<[String]>>(
    sentences: &[T],
    predicted: &[Vec<usize>],
    gold: &[Vec<usize>],
    surfaces: &[String],
) -> Result<Vec<SurfaceAccuracy>, EvalError> {
    if sentences.len() != predicted.len() || sentences.len() != gold.len() {
        return Err(EvalError::Length(
            "sentences, predictions and gold differ in length".into(),
        ));
    }
    let mut out: Vec<SurfaceAccuracy> = surfaces
        .iter()
        .map(|s| SurfaceAccuracy {
            surface: s.clone(),
            occurrences: 0,
            correct: 0,
            accuracy: 0.0,
        })
        .collect();
    for ((s, p), g) in sentences.iter().zip(predicted).zip(gold) {
        for ((tok, &pt), &gt) in s.as_ref().iter().zip(p).zip(g) {
            if let Some(entry) = out.iter_mut().find(|e| &e.surface == tok) {
                entry.occurrences += 1;
                entry.correct += usize::from(pt == gt);
            }
        }
    }
    for e in &mut out {
        e.accuracy = ratio(e.correct, e.occurrences);
    }
    Ok(out)
}

/// Pooled accuracy over all rows of a [`surface_accuracy`] table.
pub fn pooled_accuracy(rows: &[SurfaceAccuracy]) -> f64 {
    ratio(
        rows.iter().map(|r| r.correct).sum(),
        rows.iter().map(|r| r.occurrences).sum(),
    )
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Reports of one configuration, one per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunGroup {
    pub name: String,
    pub reports: Vec<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub seeds: usize,
    pub f1: f64,
    pub f1_delta: f64,
    /// Median pooled shift-token accuracy, when the reports carry one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shift_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shift_delta: Option<f64>,
    pub per_tag_f1: Vec<f64>,
    pub per_tag_delta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub baseline: String,
    pub tags: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

/// Seed-wise medians of every group, with deltas against the first group.
pub fn compare_runs(groups: &[RunGroup]) -> Result<ComparisonTable, EvalError> {
    let reports = groups.iter().flat_map(|g| &g.reports).count();
    if groups.is_empty() || reports < 2 || groups.iter().any(|g| g.reports.is_empty()) {
        return Err(EvalError::TooFew(2));
    }
    let first = &groups[0].reports[0];
    if groups
        .iter()
        .flat_map(|g| &g.reports)
        .any(|r| r.tags != first.tags || r.granularity != first.granularity)
    {
        return Err(EvalError::SchemeMismatch);
    }
    let tags: Vec<String> = first.per_tag.iter().map(|t| t.tag.clone()).collect();
    let summarize = |g: &RunGroup| {
        let f1 = median(&g.reports.iter().map(|r| r.f1).collect::<Vec<_>>());
        let shift = g
            .reports
            .iter()
            .all(|r| !r.shift_tokens.is_empty())
            .then(|| {
                median(
                    &g.reports
                        .iter()
                        .map(|r| pooled_accuracy(&r.shift_tokens))
                        .collect::<Vec<_>>(),
                )
            });
        let per_tag: Vec<f64> = (0..tags.len())
            .map(|t| {
                median(
                    &g.reports
                        .iter()
                        .map(|r| r.per_tag[t].f1)
                        .collect::<Vec<_>>(),
                )
            })
            .collect();
        (f1, shift, per_tag)
    };
    let (base_f1, base_shift, base_tags) = summarize(&groups[0]);
    let rows = groups
        .iter()
        .map(|g| {
            let (f1, shift, per_tag) = summarize(g);
            ComparisonRow {
                name: g.name.clone(),
                seeds: g.reports.len(),
                f1,
                f1_delta: f1 - base_f1,
                shift_accuracy: shift,
                shift_delta: shift.zip(base_shift).map(|(a, b)| a - b),
                per_tag_delta: per_tag.iter().zip(&base_tags).map(|(a, b)| a - b).collect(),
                per_tag_f1: per_tag,
            }
        })
        .collect();
    Ok(ComparisonTable {
        baseline: groups[0].name.clone(),
        tags,
        rows,
    })
}

impl ComparisonTable {
    pub fn row(&self, name: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Aligned plain-text rendering, scores in percent.
    pub fn render(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.name.len())
            .max()
            .unwrap_or(0)
            .max(8);
        let shift = self.rows.iter().any(|r| r.shift_accuracy.is_some());
        let mut out = String::new();
        let _ = write!(
            out,
            "{:<width$} {:>5} {:>7} {:>7}",
            "variant", "seeds", "F1", "delta"
        );
        if shift {
            let _ = write!(out, " {:>7} {:>7}", "shift", "delta");
        }
        for t in &self.tags {
            let _ = write!(out, " {t:>7}");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(
                out,
                "{:<width$} {:>5} {:>7.2} {:>+7.2}",
                r.name,
                r.seeds,
                100.0 * r.f1,
                100.0 * r.f1_delta
            );
            if shift {
                match (r.shift_accuracy, r.shift_delta) {
                    (Some(a), Some(d)) => {
                        let _ = write!(out, " {:>7.2} {:>+7.2}", 100.0 * a, 100.0 * d);
                    }
                    _ => {
                        let _ = write!(out, " {:>7} {:>7}", "-", "-");
                    }
                }
            }
            for v in &r.per_tag_f1 {
                let _ = write!(out, " {:>7.2}", 100.0 * v);
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s() -> LabelScheme {
        LabelScheme::conll()
    }

    fn tag(t: &str) -> usize {
        s().index_of(t).unwrap()
    }

    #[test]
    fn identical_predictions_score_one() {
        let gold = vec![vec![tag("B-PER"), tag("I-PER"), 0]];
        let r = token_f1(&gold, &gold, &s()).unwrap();
        assert_eq!(r.f1, 1.0);
    }

    #[test]
    fn all_outside_scores_zero() {
        let gold = vec![vec![tag("B-PER"), 0, tag("B-LOC")]];
        let pred = vec![vec![0, 0, 0]];
        let r = token_f1(&pred, &gold, &s()).unwrap();
        assert_eq!(r.f1, 0.0);
    }

    #[test]
    fn half_recall() {
        let gold = vec![vec![tag("B-PER"), 0, tag("B-LOC")]];
        let pred = vec![vec![tag("B-PER"), 0, 0]];
        let r = token_f1(&pred, &gold, &s()).unwrap();
        assert_eq!((r.precision, r.recall), (1.0, 0.5));
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch() {
        assert!(token_f1(&[vec![0]], &[vec![0, 0]], &s()).is_err());
        assert!(token_f1(&[vec![0]], &[], &s()).is_err());
        assert!(matches!(
            token_f1(&[vec![99]], &[vec![0]], &s()),
            Err(EvalError::TagOutOfRange(99))
        ));
    }

    #[test]
    fn confusion_rows_sum_to_gold_counts() {
        let gold = vec![vec![1, 2, 0, 3], vec![0, 0, 5]];
        let pred = vec![vec![1, 0, 0, 4], vec![3, 0, 5]];
        let r = token_f1(&pred, &gold, &s()).unwrap();
        for t in 0..9 {
            let expected = gold.iter().flatten().filter(|&&g| g == t).count();
            assert_eq!(r.confusion[t].iter().sum::<usize>(), expected);
        }
        let tp: usize = r.per_tag.iter().map(|t| t.tp).sum();
        assert_eq!(tp, r.tp);
    }

    #[test]
    fn span_mode_requires_exact_boundaries() {
        let gold = vec![vec![tag("B-ORG"), tag("I-ORG"), 0]];
        let pred = vec![vec![tag("B-ORG"), 0, 0]];
        assert_eq!(span_f1(&pred, &gold, &s()).unwrap().f1, 0.0);
        assert!(token_f1(&pred, &gold, &s()).unwrap().f1 > 0.0);
        assert_eq!(span_f1(&gold, &gold, &s()).unwrap().f1, 1.0);
    }

    #[test]
    fn single_occurrence_preference() {
        let sents = vec![vec!["Paris".to_string(), "is".to_string()]];
        let tags = vec![vec![tag("B-LOC"), 0]];
        let p = label_preference(&sents, &tags, &s(), "Paris").unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p["B-LOC"], 1.0);
        assert!(matches!(
            label_preference(&sents, &tags, &s(), "Rome"),
            Err(EvalError::UnseenSurface(_))
        ));
    }

    #[test]
    fn surface_accuracy_counts_occurrences() {
        let sents = vec![vec!["x".to_string(), "y".to_string(), "x".to_string()]];
        let gold = vec![vec![1, 0, 3]];
        let pred = vec![vec![1, 0, 0]];
        let a = surface_accuracy(&sents, &pred, &gold, &["x".to_string()]).unwrap();
        assert_eq!((a[0].occurrences, a[0].correct), (2, 1));
        assert_eq!(pooled_accuracy(&a), 0.5);
    }

    #[test]
    fn self_comparison_has_zero_deltas() {
        let gold = vec![vec![1, 2, 0, 3]];
        let pred = vec![vec![1, 0, 0, 3]];
        let r = token_f1(&pred, &gold, &s()).unwrap();
        let t = compare_runs(&[
            RunGroup {
                name: "a".into(),
                reports: vec![r.clone()],
            },
            RunGroup {
                name: "b".into(),
                reports: vec![r],
            },
        ])
        .unwrap();
        for row in &t.rows {
            assert_eq!(row.f1_delta, 0.0);
            assert!(row.per_tag_delta.iter().all(|&d| d == 0.0));
        }
        assert!(t.render().contains("variant"));
    }

    #[test]
    fn comparison_rejects_mismatched_schemes() {
        let r = token_f1(&[vec![1]], &[vec![1]], &s()).unwrap();
        let other = LabelScheme::new(&["X"]).unwrap();
        let q = token_f1(&[vec![1]], &[vec![1]], &other).unwrap();
        let err = compare_runs(&[
            RunGroup {
                name: "a".into(),
                reports: vec![r],
            },
            RunGroup {
                name: "b".into(),
                reports: vec![q],
            },
        ]);
        assert!(matches!(err, Err(EvalError::SchemeMismatch)));
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
