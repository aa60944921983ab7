//! Exhaustive matching, used to check the greedy matcher on small instances.

use crate::error::{Error, Result};
use crate::eval::{candidate_pairs, MatchPair, MatchReport};
use crate::peaks::PeakSet;

/// Largest `|pred| * |truth|` the oracle accepts.
pub const MAX_PRODUCT: usize = 144;

/// A one-to-one matching within `delta` with the most pairs; among those,
/// the smallest total distance; among those, the first in enumeration order.
pub fn brute_force_match_oracle(pred: &PeakSet, truth: &PeakSet, delta: usize) -> Result<MatchReport> {
    if pred.len() * truth.len() > MAX_PRODUCT {
        return Err(Error::Sizing(format!(
            "oracle instance {}x{} exceeds {MAX_PRODUCT} pairs",
            pred.len(),
            truth.len()
        )));
    }
    let t = truth.indices();
    let options: Vec<Vec<usize>> = t
        .iter()
        .map(|&ti| pred.indices().iter().copied().filter(|&p| p.abs_diff(ti) <= delta).collect())
        .collect();
    let mut search = Search {
        truth: t,
        options: &options,
        used: Vec::new(),
        current: Vec::new(),
        best: Vec::new(),
        best_dist: 0,
    };
    search.run(0, 0);
    Ok(MatchReport::from_matches(search.best, pred, truth))
}

struct Search<'a> {
    truth: &'a [usize],
    options: &'a [Vec<usize>],
    used: Vec<usize>,
    current: Vec<MatchPair>,
    best: Vec<MatchPair>,
    best_dist: usize,
}

impl Search<'_> {
    fn run(&mut self, i: usize, dist: usize) {
        let remaining = self.truth.len() - i;
        let (tp, best_tp) = (self.current.len(), self.best.len());
        if tp + remaining < best_tp || (tp + remaining == best_tp && dist >= self.best_dist && best_tp > 0) {
            return;
        }
        if i == self.truth.len() {
            if tp > best_tp || dist < self.best_dist {
                self.best = self.current.clone();
                self.best_dist = dist;
            }
            return;
        }
        let t = self.truth[i];
        for k in 0..self.options[i].len() {
            let p = self.options[i][k];
            if self.used.contains(&p) {
                continue;
            }
            self.used.push(p);
            self.current.push(MatchPair { truth: t, pred: p });
            self.run(i + 1, dist + t.abs_diff(p));
            self.current.pop();
            self.used.pop();
        }
        self.run(i + 1, dist);
    }
}

/// True when no two candidate pairs sharing an endpoint have equal distance.
/// Then every tie-break order yields the same greedy matching.
pub fn greedy_tie_free(pred: &PeakSet, truth: &PeakSet, delta: usize) -> bool {
    let pairs = candidate_pairs(pred, truth, delta);
    for (i, a) in pairs.iter().enumerate() {
        for b in &pairs[i + 1..] {
            if b.distance() != a.distance() {
                break;
            }
            if a.truth == b.truth || a.pred == b.pred {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::match_peaks;

    fn ps(v: &[usize]) -> PeakSet {
        PeakSet::from_sorted(v.to_vec()).unwrap()
    }

    #[test]
    fn small_cases() {
        let r = brute_force_match_oracle(&ps(&[1, 2]), &ps(&[2]), 1).unwrap();
        assert_eq!(r.tp, 1);
        assert_eq!(r.matches, vec![MatchPair { truth: 2, pred: 2 }]);
        assert_eq!(match_peaks(&ps(&[1, 2]), &ps(&[2]), 1).tp, 1);
        let r = brute_force_match_oracle(&ps(&[]), &ps(&[1, 5]), 2).unwrap();
        assert_eq!((r.tp, r.fn_), (0, 2));
    }

    #[test]
    fn greedy_can_lose_a_pair() {
        // The zero-distance pair blocks the only perfect assignment.
        let (pred, truth) = (ps(&[1, 2]), ps(&[2, 3]));
        assert_eq!(match_peaks(&pred, &truth, 1).tp, 1);
        assert_eq!(brute_force_match_oracle(&pred, &truth, 1).unwrap().tp, 2);
        assert!(greedy_tie_free(&pred, &truth, 1));
        let (pred, truth) = (ps(&[1, 2]), ps(&[2, 4]));
        assert_eq!(match_peaks(&pred, &truth, 2).tp, 1);
        assert_eq!(brute_force_match_oracle(&pred, &truth, 2).unwrap().tp, 2);
        assert!(greedy_tie_free(&pred, &truth, 2));
    }

    #[test]
    fn rejects_large_instances() {
        let big = PeakSet::from_unsorted((0..13).collect());
        assert!(matches!(brute_force_match_oracle(&big, &big, 1), Err(Error::Sizing(_))));
    }
}
