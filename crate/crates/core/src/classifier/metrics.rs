use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Accuracy and F1 averages for single-label multiclass predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub f1_weighted: f64,
    pub f1_micro: f64,
    pub f1_macro: f64,
    pub per_label_f1: BTreeMap<String, f64>,
    pub support: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else if precision == recall {
        precision
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Support-weighted mean of `per`. Labels are summed in groups of equal
/// support and each group is divided by `n / support`, so with uniform
/// supports the result equals the plain mean bit for bit.
fn weighted_mean(per: &[f64], support: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let mut groups: BTreeMap<usize, f64> = BTreeMap::new();
    for (&f, &s) in per.iter().zip(support) {
        if s > 0 {
            *groups.entry(s).or_insert(0.0) += f;
        }
    }
    groups
        .into_iter()
        .map(|(s, sum)| sum / (n as f64 / s as f64))
        .sum()
}

/// Computes the report from parallel truth/prediction slices.
///
/// Labels are the union of both slices. Undefined precision or recall
/// (`0/0`) counts as 0. Macro averages per-label F1 over all labels,
/// weighted uses true-label support, micro pools TP/FP/FN.
pub fn classification_report<S: AsRef<str>>(y_true: &[S], y_pred: &[S]) -> MetricsReport {
    assert_eq!(y_true.len(), y_pred.len(), "truth and predictions differ in length");
    let mut labels: Vec<&str> = Vec::new();
    for l in y_true.iter().chain(y_pred) {
        if !labels.contains(&l.as_ref()) {
            labels.push(l.as_ref());
        }
    }
    let pos = |l: &str| labels.iter().position(|x| *x == l).unwrap();
    let k = labels.len();
    let (mut tp, mut fp, mut fnn, mut support) = (vec![0; k], vec![0; k], vec![0; k], vec![0; k]);
    for (t, p) in y_true.iter().zip(y_pred) {
        let (t, p) = (pos(t.as_ref()), pos(p.as_ref()));
        support[t] += 1;
        if t == p {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fnn[t] += 1;
        }
    }
    let n = y_true.len();
    let per: Vec<f64> = (0..k)
        .map(|i| f1(ratio(tp[i], tp[i] + fp[i]), ratio(tp[i], tp[i] + fnn[i])))
        .collect();
    let f1_macro = if k == 0 { 0.0 } else { per.iter().sum::<f64>() / k as f64 };
    let f1_weighted = weighted_mean(&per, &support, n);
    let (stp, sfp, sfn): (usize, usize, usize) = (tp.iter().sum(), fp.iter().sum(), fnn.iter().sum());
    let f1_micro = f1(ratio(stp, stp + sfp), ratio(stp, stp + sfn));
    MetricsReport {
        accuracy: ratio(stp, n),
        f1_weighted,
        f1_micro,
        f1_macro,
        per_label_f1: labels.iter().map(|l| l.to_string()).zip(per).collect(),
        support: n,
    }
}
