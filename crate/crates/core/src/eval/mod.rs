//! Accuracy statistics, paired significance testing, the nearest-neighbour
//! baseline and class-map images.

mod map;

pub use map::{parse_map, render_map, write_map, PALETTE};

use thiserror::Error;

use crate::data::PatchSet;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("malformed image: {0}")]
    Image(String),
}

/// Counts with rows = true class, columns = predicted class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub n: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn from_counts(n: usize, counts: Vec<u64>) -> Result<Self, EvalError> {
        if n == 0 || counts.len() != n * n {
            return Err(EvalError::Contract(format!("{} counts do not form a {n}x{n} matrix", counts.len())));
        }
        Ok(Self { n, counts })
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.n + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i * self.n..(i + 1) * self.n].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        (0..self.n).map(|i| self.get(i, j)).sum()
    }
}

/// Tallies 1-based labels into an `n × n` matrix.
pub fn confusion(truth: &[u16], predicted: &[u16], n: usize) -> Result<ConfusionMatrix, EvalError> {
    if truth.len() != predicted.len() {
        return Err(EvalError::Contract(format!("{} truths against {} predictions", truth.len(), predicted.len())));
    }
    let mut counts = vec![0u64; n * n];
    for (&t, &p) in truth.iter().zip(predicted) {
        if t == 0 || p == 0 || t as usize > n || p as usize > n {
            return Err(EvalError::Contract(format!("label pair ({t}, {p}) outside 1..{n}")));
        }
        counts[(t as usize - 1) * n + p as usize - 1] += 1;
    }
    ConfusionMatrix::from_counts(n, counts)
}

/// Per-class recall and the three summary scores, as fractions.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// `None` for classes absent from the evaluated set.
    pub per_class: Vec<Option<f64>>,
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    /// Mean training seconds per epoch, when known.
    pub epoch_seconds: Option<f64>,
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<EvalReport, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::Contract("empty confusion matrix".into()));
    }
    let t = total as f64;
    let diag: u64 = (0..cm.n).map(|i| cm.get(i, i)).sum();
    let oa = diag as f64 / t;
    let per_class: Vec<Option<f64>> = (0..cm.n)
        .map(|i| {
            let r = cm.row_sum(i);
            (r > 0).then(|| cm.get(i, i) as f64 / r as f64)
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let aa = present.iter().sum::<f64>() / present.len() as f64;
    let pe = (0..cm.n).map(|i| cm.row_sum(i) as f64 * cm.col_sum(i) as f64).sum::<f64>() / (t * t);
    let kappa = if pe >= 1.0 { 1.0 } else { (oa - pe) / (1.0 - pe) };
    Ok(EvalReport { per_class, oa, aa, kappa, epoch_seconds: None })
}

impl EvalReport {
    /// `metric,value` rows in percent with two decimals: per-class rows, then
    /// OA, AA, Kappa and time.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (i, a) in self.per_class.iter().enumerate() {
            let v = a.map(|a| format!("{:.2}", 100.0 * a)).unwrap_or_default();
            out.push_str(&format!("class_{},{v}\n", i + 1));
        }
        out.push_str(&format!("OA,{:.2}\nAA,{:.2}\nKappa,{:.2}\n", 100.0 * self.oa, 100.0 * self.aa, 100.0 * self.kappa));
        out.push_str(&format!("time,{}\n", self.epoch_seconds.map(|s| format!("{s:.3}")).unwrap_or_default()));
        out
    }
}

/// Discordant counts and the normal-deviate statistic of a paired test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McNemarResult {
    /// `a` right, `b` wrong.
    pub f01: u64,
    /// `a` wrong, `b` right.
    pub f10: u64,
    pub statistic: f64,
}

impl McNemarResult {
    pub fn from_counts(f01: u64, f10: u64) -> Self {
        let s = f01 + f10;
        let statistic = if s == 0 { 0.0 } else { (f01 as f64 - f10 as f64).abs() / (s as f64).sqrt() };
        Self { f01, f10, statistic }
    }

    /// Two-sided 5% level.
    pub fn significant(&self) -> bool {
        self.statistic > 1.96
    }
}

pub fn mcnemar(a: &[u16], b: &[u16], truth: &[u16]) -> Result<McNemarResult, EvalError> {
    if a.len() != truth.len() || b.len() != truth.len() {
        return Err(EvalError::Contract("prediction vectors differ in length from the truth".into()));
    }
    let (mut f01, mut f10) = (0, 0);
    for ((&pa, &pb), &t) in a.iter().zip(b).zip(truth) {
        match (pa == t, pb == t) {
            (true, false) => f01 += 1,
            (false, true) => f10 += 1,
            _ => {}
        }
    }
    Ok(McNemarResult::from_counts(f01, f10))
}

/// Majority vote of the `k` nearest training patches (Euclidean distance on
/// the flattened patch). Distance ties go to the lower training index, vote
/// ties to the lower class id.
pub fn knn_classify(train: &PatchSet, test: &PatchSet, k: usize) -> Result<Vec<u16>, EvalError> {
    if train.is_empty() {
        return Err(EvalError::Contract("empty training set".into()));
    }
    if k == 0 || k > train.len() {
        return Err(EvalError::Contract(format!("k = {k} with {} training samples", train.len())));
    }
    if train.patch_len() != test.patch_len() {
        return Err(EvalError::Contract("train and test patches differ in size".into()));
    }
    let classes = train.classes.max(test.classes);
    let mut dist: Vec<(f64, usize)> = vec![(0.0, 0); train.len()];
    let mut out = Vec::with_capacity(test.len());
    for q in 0..test.len() {
        let qp = test.patch(q);
        for (i, d) in dist.iter_mut().enumerate() {
            let s: f64 = train.patch(i).iter().zip(qp).map(|(&a, &b)| ((a - b) as f64).powi(2)).sum();
            *d = (s, i);
        }
        dist.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut votes = vec![0usize; classes + 1];
        for &(_, i) in &dist[..k] {
            votes[train.labels[i] as usize] += 1;
        }
        let mut best = 1;
        for c in 2..=classes {
            if votes[c] > votes[best] {
                best = c;
            }
        }
        out.push(best as u16);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_kappa() {
        let cm = ConfusionMatrix::from_counts(2, vec![40, 10, 5, 45]).unwrap();
        let r = metrics(&cm).unwrap();
        assert!((r.oa - 0.85).abs() < 1e-12);
        assert!((r.aa - 0.85).abs() < 1e-12);
        assert!((r.kappa - 0.70).abs() < 1e-12);
    }

    #[test]
    fn diagonal_is_perfect() {
        let r = metrics(&confusion(&[1, 2, 3, 3], &[1, 2, 3, 3], 3).unwrap()).unwrap();
        assert_eq!((r.oa, r.aa, r.kappa), (1.0, 1.0, 1.0));
        let r = metrics(&confusion(&[2, 2], &[2, 2], 3).unwrap()).unwrap();
        assert_eq!(r.kappa, 1.0);
        assert_eq!(r.per_class, vec![None, Some(1.0), None]);
    }

    #[test]
    fn all_predicted_first_class() {
        let cm = confusion(&[1, 2, 3, 2], &[1, 1, 1, 1], 3).unwrap();
        assert_eq!(cm.col_sum(0), 4);
        assert!(confusion(&[4], &[1], 3).is_err());
        assert!(metrics(&ConfusionMatrix::from_counts(2, vec![0; 4]).unwrap()).is_err());
    }

    #[test]
    fn mcnemar_examples() {
        let r = McNemarResult::from_counts(40, 10);
        assert!((r.statistic - 30.0 / 50f64.sqrt()).abs() < 1e-12);
        assert!(r.significant());
        let same = mcnemar(&[1, 2, 1], &[1, 2, 1], &[1, 1, 1]).unwrap();
        assert_eq!(same.statistic, 0.0);
    }
}
