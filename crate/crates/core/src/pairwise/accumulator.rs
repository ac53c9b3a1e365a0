use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingSet;

/// Confusion counts over ordered pairs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    #[inline]
    pub(crate) fn record(&mut self, positive_pair: bool, predicted_positive: bool, weight: u64) {
        match (positive_pair, predicted_positive) {
            (true, true) => self.tp += weight,
            (true, false) => self.fn_ += weight,
            (false, true) => self.fp += weight,
            (false, false) => self.tn += weight,
        }
    }

    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> u64 {
        self.fp + self.tn
    }

    pub fn total(&self) -> u64 {
        self.positives() + self.negatives()
    }

    pub fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }

    /// `tp / (tp + fn)`, `None` without positive pairs.
    pub fn tpr(&self) -> Option<f64> {
        ratio(self.tp, self.positives())
    }

    /// `fp / (fp + tn)`, `None` without negative pairs.
    pub fn fpr(&self) -> Option<f64> {
        ratio(self.fp, self.negatives())
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Confusion counts overall, by the attribute of the pair's first element,
/// and by the identity of the pair's first element.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairStatsAccumulator {
    pub overall: Confusion,
    pub by_attribute: Vec<Confusion>,
    pub by_identity: Vec<Confusion>,
}

impl PairStatsAccumulator {
    pub fn new(num_attributes: usize, num_identities: usize) -> Self {
        Self {
            overall: Confusion::default(),
            by_attribute: vec![Confusion::default(); num_attributes],
            by_identity: vec![Confusion::default(); num_identities],
        }
    }

    pub fn for_set(set: &EmbeddingSet) -> Self {
        Self::new(set.num_attributes(), set.num_identities())
    }

    /// Records the ordered pair `(first, ·)`.
    #[inline]
    pub fn record(
        &mut self,
        first_attribute: usize,
        first_identity: usize,
        positive_pair: bool,
        predicted_positive: bool,
    ) {
        self.overall.record(positive_pair, predicted_positive, 1);
        self.by_attribute[first_attribute].record(positive_pair, predicted_positive, 1);
        self.by_identity[first_identity].record(positive_pair, predicted_positive, 1);
    }

    /// Records both orderings of the unordered pair `{i, j}`, `i != j`. Valid
    /// whenever the decision rule is symmetric.
    #[inline]
    pub(crate) fn record_both(
        &mut self,
        set: &EmbeddingSet,
        i: usize,
        j: usize,
        predicted_positive: bool,
    ) {
        let (yi, yj) = (set.identities()[i] as usize, set.identities()[j] as usize);
        let (ai, aj) = (set.attributes()[i] as usize, set.attributes()[j] as usize);
        let positive = yi == yj;
        self.overall.record(positive, predicted_positive, 2);
        self.by_attribute[ai].record(positive, predicted_positive, 1);
        self.by_attribute[aj].record(positive, predicted_positive, 1);
        self.by_identity[yi].record(positive, predicted_positive, 1);
        self.by_identity[yj].record(positive, predicted_positive, 1);
    }

    pub fn merge(mut self, other: Self) -> Self {
        self.merge_from(&other);
        self
    }

    pub fn merge_from(&mut self, other: &Self) {
        assert_eq!(self.by_attribute.len(), other.by_attribute.len());
        assert_eq!(self.by_identity.len(), other.by_identity.len());
        self.overall.merge(&other.overall);
        for (a, b) in self.by_attribute.iter_mut().zip(&other.by_attribute) {
            a.merge(b);
        }
        for (a, b) in self.by_identity.iter_mut().zip(&other.by_identity) {
            a.merge(b);
        }
    }

    /// Counts when every pair is predicted positive (threshold at -inf);
    /// needs only the labels.
    pub fn all_predicted_positive(set: &EmbeddingSet) -> Self {
        let mut acc = Self::for_set(set);
        let n = set.len() as u64;
        let counts = set.identity_counts();
        let attrs = set.identity_attributes();
        for (k, &nk) in counts.iter().enumerate() {
            let nk = nk as u64;
            let c = Confusion {
                tp: nk * (nk - 1),
                fp: nk * (n - nk),
                tn: 0,
                fn_: 0,
            };
            acc.by_identity[k] = c;
            acc.by_attribute[attrs[k] as usize].merge(&c);
            acc.overall.merge(&c);
        }
        acc
    }

    /// True when the overall quadruple equals the sum of each breakdown.
    pub fn is_consistent(&self) -> bool {
        let sum = |parts: &[Confusion]| {
            parts.iter().fold(Confusion::default(), |mut a, b| {
                a.merge(b);
                a
            })
        };
        sum(&self.by_attribute) == self.overall && sum(&self.by_identity) == self.overall
    }
}
