//! Two-state Markov model of round-over-round accuracy.
//!
//! A chain is either correct or incorrect at each round. Round 1 is correct
//! with probability `p1`; afterwards a correct chain stays correct with
//! probability `t_cc` and an incorrect chain becomes correct with probability
//! `t_ic`. The accuracy after `n` rounds follows
//! `a(n+1) = a(n) * t_cc + (1 - a(n)) * t_ic`.

use serde::Serialize;

use crate::analysis::TrajectoryCounts;
use crate::domain::{MockModelSpec, TrajectoryLabel};
use crate::error::SimulatorError;
use crate::scalar::Scalar;

/// Largest `n` accepted by [`MarkovModel::brute_force_accuracy`].
pub const MAX_BRUTE_FORCE_ROUNDS: u32 = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct MarkovModel<T> {
    pub p1: T,
    pub t_cc: T,
    pub t_ic: T,
}

impl<T: Scalar> MarkovModel<T> {
    pub fn new(p1: T, t_cc: T, t_ic: T) -> Result<Self, SimulatorError> {
        for (name, value) in [("p1", &p1), ("t_cc", &t_cc), ("t_ic", &t_ic)] {
            if *value < T::zero() || *value > T::one() {
                return Err(SimulatorError::BadProbability { name, value: value.to_f64() });
            }
        }
        Ok(MarkovModel { p1, t_cc, t_ic })
    }

    /// Converts the mock spec exactly (rationals take the binary value of each `f64`).
    pub fn from_spec(spec: &MockModelSpec) -> Result<Self, SimulatorError> {
        let conv = |name, v: f64| T::from_f64(v).ok_or(SimulatorError::BadProbability { name, value: v });
        Self::new(conv("p1", spec.p1)?, conv("t_cc", spec.t_cc)?, conv("t_ic", spec.t_ic)?)
    }

    fn step(&self, a: &T) -> T {
        a.clone() * self.t_cc.clone() + (T::one() - a.clone()) * self.t_ic.clone()
    }

    /// Accuracies `a(1)..=a(n)`.
    pub fn accuracy_curve(&self, n: u32) -> Result<Vec<T>, SimulatorError> {
        if n == 0 {
            return Err(SimulatorError::ZeroRound);
        }
        let mut out = Vec::with_capacity(n as usize);
        let mut a = self.p1.clone();
        for _ in 0..n {
            let next = self.step(&a);
            out.push(a);
            a = next;
        }
        Ok(out)
    }

    /// `a(n)` by the recurrence.
    pub fn expected_accuracy(&self, n: u32) -> Result<T, SimulatorError> {
        Ok(self.accuracy_curve(n)?.pop().expect("n >= 1"))
    }

    /// `a(n)` by summing the probability of every one of the `2^n`
    /// correctness paths that ends correct.
    pub fn brute_force_accuracy(&self, n: u32) -> Result<T, SimulatorError> {
        if n == 0 {
            return Err(SimulatorError::ZeroRound);
        }
        if n > MAX_BRUTE_FORCE_ROUNDS {
            return Err(SimulatorError::TooManyRounds { n, max: MAX_BRUTE_FORCE_ROUNDS });
        }
        let mut total = T::zero();
        for path in 0u32..(1 << n) {
            let correct_at = |i: u32| path & (1 << i) != 0;
            if !correct_at(n - 1) {
                continue;
            }
            let mut p = if correct_at(0) { self.p1.clone() } else { T::one() - self.p1.clone() };
            for i in 1..n {
                let stay = if correct_at(i - 1) { self.t_cc.clone() } else { self.t_ic.clone() };
                p = p * if correct_at(i) { stay } else { T::one() - stay };
            }
            total = total + p;
        }
        Ok(total)
    }

    /// Limit of `a(n)`: `t_ic / (1 - t_cc + t_ic)`. `None` when the chain is
    /// frozen (`t_cc = 1`, `t_ic = 0`) and the limit is `p1` itself.
    pub fn fixed_point(&self) -> Option<T> {
        let denom = T::one() - self.t_cc.clone() + self.t_ic.clone();
        if denom == T::zero() {
            None
        } else {
            Some(self.t_ic.clone() / denom)
        }
    }
}

/// Transition probabilities estimated from observed trajectory counts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitionFit<T> {
    pub t_cc: Option<T>,
    pub t_ic: Option<T>,
    pub diagnostics: Vec<String>,
}

/// `t_cc = CC / (CC + CI)` and `t_ic = IC / (IC + II)`; an estimate is absent
/// when its denominator is zero.
pub fn fit_transitions<T: Scalar>(counts: &TrajectoryCounts) -> TransitionFit<T> {
    let get = |l| counts.get(&l).copied().unwrap_or(0) as i64;
    let (cc, ci, ic, ii) = (get(TrajectoryLabel::CC), get(TrajectoryLabel::CI), get(TrajectoryLabel::IC), get(TrajectoryLabel::II));
    let mut diagnostics = Vec::new();
    let t_cc = if cc + ci > 0 {
        Some(T::from_ratio(cc, cc + ci))
    } else {
        diagnostics.push("no chain was correct in the earlier round; t_cc cannot be estimated".to_string());
        None
    };
    let t_ic = if ic + ii > 0 {
        Some(T::from_ratio(ic, ic + ii))
    } else {
        diagnostics.push("no chain was incorrect in the earlier round; t_ic cannot be estimated".to_string());
        None
    };
    TransitionFit { t_cc, t_ic, diagnostics }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::BigRational;

    fn model(p1: f64, t_cc: f64, t_ic: f64) -> MarkovModel<f64> {
        MarkovModel::new(p1, t_cc, t_ic).unwrap()
    }

    #[test]
    fn frozen_dynamics() {
        let m = model(0.6, 1.0, 0.0);
        for n in 1..10 {
            assert_eq!(m.expected_accuracy(n).unwrap(), 0.6);
        }
        assert_eq!(m.fixed_point(), None);
    }

    #[test]
    fn two_rounds_and_limit() {
        let m = model(0.6, 0.95, 0.3);
        assert!((m.expected_accuracy(2).unwrap() - 0.69).abs() < 1e-15);
        assert!((m.fixed_point().unwrap() - 6.0 / 7.0).abs() < 1e-15);
        assert!((m.expected_accuracy(200).unwrap() - 6.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn exact_rational_agreement() {
        let r = |n, d| BigRational::from_ratio(n, d);
        let m = MarkovModel::new(r(3, 5), r(19, 20), r(3, 10)).unwrap();
        for n in 1..=12 {
            assert_eq!(m.expected_accuracy(n).unwrap(), m.brute_force_accuracy(n).unwrap());
        }
        assert_eq!(m.expected_accuracy(2).unwrap(), r(69, 100));
        assert_eq!(m.fixed_point().unwrap(), r(6, 7));
    }

    #[test]
    fn brute_force_small_cases() {
        let m = model(0.37, 0.8, 0.1);
        assert_eq!(m.brute_force_accuracy(1).unwrap(), 0.37);
        assert!((m.brute_force_accuracy(2).unwrap() - (0.37 * 0.8 + 0.63 * 0.1)).abs() < 1e-15);
        assert_eq!(m.brute_force_accuracy(21), Err(SimulatorError::TooManyRounds { n: 21, max: 20 }));
        assert_eq!(m.brute_force_accuracy(0), Err(SimulatorError::ZeroRound));
    }

    #[test]
    fn fit_examples() {
        let counts: TrajectoryCounts = [
            (TrajectoryLabel::CC, 3),
            (TrajectoryLabel::CI, 1),
            (TrajectoryLabel::IC, 1),
            (TrajectoryLabel::II, 3),
        ]
        .into();
        let fit = fit_transitions::<f64>(&counts);
        assert_eq!((fit.t_cc, fit.t_ic), (Some(0.75), Some(0.25)));
        let degenerate: TrajectoryCounts = [(TrajectoryLabel::IC, 2), (TrajectoryLabel::II, 2)].into();
        let fit = fit_transitions::<f64>(&degenerate);
        assert_eq!((fit.t_cc, fit.t_ic), (None, Some(0.5)));
        assert_eq!(fit.diagnostics.len(), 1);
    }

    #[test]
    fn rejects_bad_probabilities() {
        assert!(MarkovModel::new(1.2, 0.5, 0.5).is_err());
        assert!(MarkovModel::new(0.5, -0.1, 0.5).is_err());
    }
}
