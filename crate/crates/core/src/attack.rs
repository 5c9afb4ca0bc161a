//! Polynomially unbounded false-data injections on the secondary control
//! input channels, with onset gating and derivative-bound queries.

use serde::{Deserialize, Serialize};

/// Which control input a profile corrupts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackChannel {
    Frequency,
    Voltage,
}

/// Additive polynomial injection on one channel of one inverter.
/// Coefficients are in elapsed time: the signal is
/// `sum_k a_k (t - onset)^k` for `t >= onset`, zero before.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackProfile {
    pub channel: AttackChannel,
    /// follower index, 0-based
    pub dg: usize,
    /// a_0..a_d, channel units per s^k
    pub coefficients: Vec<f64>,
    /// s
    pub onset: f64,
}

impl AttackProfile {
    /// Signal value at time `t` (zero before onset; Horner evaluation in
    /// elapsed time after).
    pub fn eval(&self, t: f64) -> f64 {
        if t < self.onset {
            return 0.0;
        }
        let tau = t - self.onset;
        self.coefficients.iter().rev().fold(0.0, |acc, &a| acc * tau + a)
    }

    /// Polynomial degree after trimming trailing zero coefficients.
    pub fn degree(&self) -> usize {
        self.coefficients
            .iter()
            .rposition(|&a| a != 0.0)
            .unwrap_or(0)
    }

    /// `sup_{t >= onset} |d^order Delta / dt^order|`: `None` when the
    /// derivative grows without bound (order below the degree), `d! |a_d|`
    /// at the degree itself, zero above it.
    pub fn derivative_sup(&self, order: usize) -> Option<f64> {
        let d = self.degree();
        if self.coefficients.is_empty() || (d == 0 && self.coefficients.get(0) == Some(&0.0)) {
            return Some(0.0);
        }
        match order.cmp(&d) {
            // the order-th derivative still carries a positive power of tau
            std::cmp::Ordering::Less => None,
            std::cmp::Ordering::Equal => {
                let fact: f64 = (1..=d).map(|k| k as f64).product();
                Some(fact * self.coefficients[d].abs())
            }
            std::cmp::Ordering::Greater => Some(0.0),
        }
    }

    /// Discontinuity introduced at onset (the constant coefficient).
    pub fn jump_at_onset(&self) -> f64 {
        self.coefficients.first().copied().unwrap_or(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn profile(coefficients: Vec<f64>, onset: f64) -> AttackProfile {
        AttackProfile { channel: AttackChannel::Frequency, dg: 0, coefficients, onset }
    }

    #[test]
    fn eval_gates_on_onset_and_uses_elapsed_time() {
        let p = profile(vec![10.0, 0.0, 2.0], 5.0);
        assert_eq!(p.eval(4.0), 0.0);
        assert_eq!(p.eval(5.0), 10.0);
        assert_relative_eq!(p.eval(7.0), 18.0, max_relative = 1e-12);

        let p4 = profile(vec![-12.0, 0.0, -3.0], 5.0);
        assert_relative_eq!(p4.eval(6.0), -15.0, max_relative = 1e-12);
    }

    #[test]
    fn derivative_sup_cases() {
        let p = profile(vec![10.0, 0.0, 2.0], 0.0);
        assert_eq!(p.derivative_sup(2), Some(4.0));
        assert_eq!(p.derivative_sup(1), None);
        assert_eq!(p.derivative_sup(3), Some(0.0));

        let constant = profile(vec![7.5], 0.0);
        assert_eq!(constant.derivative_sup(1), Some(0.0));

        let zero = profile(vec![0.0], 0.0);
        assert_eq!(zero.derivative_sup(1), Some(0.0));

        // trailing zeros do not inflate the degree
        let padded = profile(vec![1.0, 2.0, 0.0, 0.0], 0.0);
        assert_eq!(padded.degree(), 1);
        assert_eq!(padded.derivative_sup(1), Some(2.0));
    }

    #[test]
    fn continuity_at_onset_iff_zero_constant() {
        let cont = profile(vec![0.0, 3.0], 2.0);
        assert_eq!(cont.jump_at_onset(), 0.0);
        assert!(cont.eval(2.0).abs() < 1e-15);

        let jumpy = profile(vec![10.0, 0.0, 2.0], 2.0);
        assert_eq!(jumpy.jump_at_onset(), 10.0);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// derivative_sup(p, order) is finite iff order >= degree.
            #[test]
            fn finiteness_matches_degree(
                coeffs in proptest::collection::vec(-10.0f64..10.0, 1..5),
                order in 0usize..6,
            ) {
                let p = profile(coeffs, 1.0);
                let finite = p.derivative_sup(order).is_some();
                prop_assert_eq!(finite, order >= p.degree() || p.coefficients.iter().all(|&a| a == 0.0));
            }

            /// eval is continuous except possibly at onset.
            #[test]
            fn eval_pre_onset_zero(t in 0.0f64..5.0) {
                let p = profile(vec![1.0, 2.0, 3.0], 5.0);
                prop_assert_eq!(p.eval(t * 0.999), 0.0);
            }
        }
    }
}
