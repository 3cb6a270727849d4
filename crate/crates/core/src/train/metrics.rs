use serde::Serialize;

use crate::model::Head;

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

pub fn is_tied(scores: &[f64]) -> bool {
    let best = scores[argmax(scores)];
    scores.iter().filter(|&&s| s == best).count() > 1
}

/// An option is predicted correct when its sigmoid probability is at least
/// 0.5, i.e. its score is non-negative.
pub fn sigmoid_decisions(scores: &[f64]) -> Vec<bool> {
    scores.iter().map(|&s| s >= 0.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub questions: usize,
    /// Fraction of questions whose argmax option is gold (softmax head).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    /// Mean over questions of per-question F1 (sigmoid head).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1_m: Option<f64>,
    /// F1 over all pooled option decisions (sigmoid head).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1_a: Option<f64>,
    /// Fraction of questions with every option decision correct (sigmoid head).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub em0: Option<f64>,
    /// Questions whose top score was shared by several options.
    pub argmax_ties: usize,
}

impl Metrics {
    /// Model-selection value: accuracy for softmax, micro-F1 for sigmoid.
    pub fn selection_value(&self) -> f64 {
        self.accuracy.or(self.f1_a).unwrap_or(0.0)
    }
}

pub fn selection_metric_name(head: Head) -> &'static str {
    match head {
        Head::Softmax => "accuracy",
        Head::Sigmoid => "f1_a",
    }
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        1.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Metrics over labeled questions; `scores[i]` and `gold[i]` describe question `i`.
pub fn compute_metrics(head: Head, scores: &[Vec<f64>], gold: &[Vec<usize>]) -> Metrics {
    let n = scores.len();
    let ties = scores.iter().filter(|s| is_tied(s)).count();
    let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    match head {
        Head::Softmax => {
            let correct = scores.iter().zip(gold).filter(|(s, g)| g.contains(&argmax(s))).count();
            Metrics {
                questions: n,
                accuracy: Some(frac(correct)),
                f1_m: None,
                f1_a: None,
                em0: None,
                argmax_ties: ties,
            }
        }
        Head::Sigmoid => {
            let (mut tp_all, mut fp_all, mut fn_all) = (0, 0, 0);
            let mut f1_sum = 0.0;
            let mut exact = 0;
            for (s, g) in scores.iter().zip(gold) {
                let (mut tp, mut fp, mut fn_) = (0, 0, 0);
                for (i, predicted) in sigmoid_decisions(s).into_iter().enumerate() {
                    match (predicted, g.contains(&i)) {
                        (true, true) => tp += 1,
                        (true, false) => fp += 1,
                        (false, true) => fn_ += 1,
                        (false, false) => {}
                    }
                }
                f1_sum += f1(tp, fp, fn_);
                exact += (fp == 0 && fn_ == 0) as usize;
                tp_all += tp;
                fp_all += fp;
                fn_all += fn_;
            }
            Metrics {
                questions: n,
                accuracy: None,
                f1_m: Some(if n == 0 { 0.0 } else { f1_sum / n as f64 }),
                f1_a: Some(f1(tp_all, fp_all, fn_all)),
                em0: Some(frac(exact)),
                argmax_ties: ties,
            }
        }
    }
}
