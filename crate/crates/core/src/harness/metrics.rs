use serde::{Deserialize, Serialize};

use super::run::EpisodeRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Index one past the last episode of the window.
    pub episode_end: usize,
    pub f1: f64,
    pub accuracy: f64,
    pub queries_per_token: f64,
    pub delay_per_token: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub episodes: usize,
    pub tokens: usize,
    pub total_queries: usize,
    pub per_class: Vec<ClassMetrics>,
    /// Micro-averaged over non-background classes.
    pub f1: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub queries_per_token: f64,
    pub delay_per_token: f64,
    pub cumulative_cost: f64,
    pub pool_exhausted_episodes: usize,
    pub curve: Vec<CurvePoint>,
}

/// Precision/recall/F1 from counts: undefined ratios are 0 and F1 is 0 when
/// precision and recall are both 0.
pub fn prf(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    let f = if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    };
    (p, r, f)
}

/// Classes present in gold or predictions, ordered by `labels` first and
/// first appearance after that.
fn class_order(records: &[EpisodeRecord], labels: &[String]) -> Vec<String> {
    let mut order: Vec<String> = Vec::new();
    let present = |l: &String| {
        records
            .iter()
            .any(|r| r.gold.contains(l) || r.predicted.contains(l))
    };
    for l in labels.iter().filter(|l| present(l)) {
        order.push(l.clone());
    }
    for r in records {
        for l in r.gold.iter().chain(&r.predicted) {
            if !order.contains(l) {
                order.push(l.clone());
            }
        }
    }
    order
}

struct Tally {
    f1: f64,
    macro_f1: f64,
    per_class: Vec<ClassMetrics>,
    accuracy: f64,
    tokens: usize,
    queries: usize,
    delay: f64,
}

fn tally(records: &[EpisodeRecord], classes: &[String], background: Option<&str>) -> Tally {
    let mut per_class = Vec::new();
    let (mut tp_all, mut fp_all, mut fn_all) = (0, 0, 0);
    for class in classes.iter().filter(|c| Some(c.as_str()) != background) {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for r in records {
            for (p, g) in r.predicted.iter().zip(&r.gold) {
                match (p == class, g == class) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    _ => {}
                }
            }
        }
        let (precision, recall, f1) = prf(tp, fp, fn_);
        per_class.push(ClassMetrics {
            label: class.clone(),
            precision,
            recall,
            f1,
            support: tp + fn_,
        });
        tp_all += tp;
        fp_all += fp;
        fn_all += fn_;
    }
    let tokens: usize = records.iter().map(EpisodeRecord::len).sum();
    let correct: usize = records.iter().map(EpisodeRecord::correct_tokens).sum();
    let macro_f1 = if per_class.is_empty() {
        0.0
    } else {
        per_class.iter().map(|c| c.f1).sum::<f64>() / per_class.len() as f64
    };
    Tally {
        f1: prf(tp_all, fp_all, fn_all).2,
        macro_f1,
        per_class,
        accuracy: correct as f64 / tokens.max(1) as f64,
        tokens,
        queries: records.iter().map(|r| r.num_queries).sum(),
        delay: records.iter().map(|r| r.latency).sum(),
    }
}

/// Token-level metrics over a run. `labels` fixes the reporting order of
/// classes; `background` (when present) is excluded from F1.
pub fn compute_metrics(
    records: &[EpisodeRecord],
    labels: &[String],
    background: Option<&str>,
    window: usize,
) -> MetricsSummary {
    let classes = class_order(records, labels);
    let all = tally(records, &classes, background);
    let per_token = |x: f64, tokens: usize| x / tokens.max(1) as f64;
    let curve = records
        .chunks(window.max(1))
        .enumerate()
        .map(|(w, chunk)| {
            let t = tally(chunk, &classes, background);
            CurvePoint {
                episode_end: w * window.max(1) + chunk.len(),
                f1: t.f1,
                accuracy: t.accuracy,
                queries_per_token: per_token(t.queries as f64, t.tokens),
                delay_per_token: per_token(t.delay, t.tokens),
            }
        })
        .collect();
    MetricsSummary {
        episodes: records.len(),
        tokens: all.tokens,
        total_queries: all.queries,
        per_class: all.per_class,
        f1: all.f1,
        macro_f1: all.macro_f1,
        accuracy: all.accuracy,
        queries_per_token: per_token(all.queries as f64, all.tokens),
        delay_per_token: per_token(all.delay, all.tokens),
        cumulative_cost: records.iter().map(|r| r.query_cost + r.time_cost).sum(),
        pool_exhausted_episodes: records.iter().filter(|r| r.pool_exhausted).count(),
        curve,
    }
}

impl MetricsSummary {
    /// Flat `(key, value)` rows in a fixed order; each key appears once.
    pub fn rows(&self) -> Vec<(String, String)> {
        let mut rows = vec![
            ("episodes".to_owned(), self.episodes.to_string()),
            ("tokens".to_owned(), self.tokens.to_string()),
            ("queries".to_owned(), self.total_queries.to_string()),
            (
                "queries_per_token".to_owned(),
                self.queries_per_token.to_string(),
            ),
            (
                "delay_per_token".to_owned(),
                self.delay_per_token.to_string(),
            ),
            ("accuracy".to_owned(), self.accuracy.to_string()),
            ("f1".to_owned(), self.f1.to_string()),
            ("macro_f1".to_owned(), self.macro_f1.to_string()),
            (
                "cumulative_cost".to_owned(),
                self.cumulative_cost.to_string(),
            ),
            (
                "pool_exhausted_episodes".to_owned(),
                self.pool_exhausted_episodes.to_string(),
            ),
        ];
        for c in &self.per_class {
            rows.push((format!("precision.{}", c.label), c.precision.to_string()));
            rows.push((format!("recall.{}", c.label), c.recall.to_string()));
            rows.push((format!("f1.{}", c.label), c.f1.to_string()));
        }
        rows
    }
}
