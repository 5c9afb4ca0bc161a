//! Fully distributed adaptive defense: a bounded modulation of the
//! consensus residual whose adaptive magnitude is driven through an
//! integrator chain, plus an exponentially decaying smoothing term.

use crate::error::{Result, SimError};

/// Parameters of one compensator channel (shared across inverters).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompensatorParams {
    /// chain length (integrator order); >= 1
    pub gamma: usize,
    /// adaptation gain, > 0
    pub nu: f64,
    /// decay rate of the smoothing term, 1/s
    pub alpha: f64,
    /// initial adaptive magnitude, > 0
    pub upsilon0: f64,
}

impl CompensatorParams {
    pub fn validate(&self) -> Result<()> {
        if self.gamma < 1 {
            return Err(SimError::InvalidConfig("compensator.gamma must be >= 1".into()));
        }
        if !(self.nu.is_finite() && self.nu > 0.0) {
            return Err(SimError::InvalidConfig(format!(
                "compensator.nu = {} must be > 0",
                self.nu
            )));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(SimError::InvalidConfig(format!(
                "compensator.alpha = {} must be > 0",
                self.alpha
            )));
        }
        if !(self.upsilon0.is_finite() && self.upsilon0 > 0.0) {
            return Err(SimError::InvalidConfig(format!(
                "compensator.upsilon0 = {} must be > 0",
                self.upsilon0
            )));
        }
        Ok(())
    }
}

/// Integrator chain for one channel of one inverter:
/// `chain[0] = Upsilon`, `chain[k]` its k-th derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct CompensatorState {
    pub chain: Vec<f64>,
}

impl CompensatorState {
    pub fn new(params: &CompensatorParams) -> Self {
        let mut chain = vec![0.0; params.gamma];
        chain[0] = params.upsilon0;
        Self { chain }
    }

    pub fn upsilon(&self) -> f64 {
        self.chain[0]
    }
}

/// Smoothing term `eta(t) = exp(-alpha t)`: strictly positive, strictly
/// decreasing.
pub fn eta(t: f64, alpha: f64) -> f64 {
    (-alpha * t).exp()
}

/// Compensation signal `Gamma = xi * Upsilon / (|xi| + eta_t)`.
/// `|Gamma| <= Upsilon` always; sign follows `sign(xi) * sign(Upsilon)`.
pub fn gamma_signal(xi: f64, upsilon: f64, eta_t: f64) -> f64 {
    debug_assert!(eta_t > 0.0);
    xi * upsilon / (xi.abs() + eta_t)
}

/// Chain dynamics: `d chain[k]/dt = chain[k+1]` for `k < gamma-1` and
/// `d chain[gamma-1]/dt = nu |xi|`.
pub fn chain_derivatives(chain: &[f64], xi: f64, nu: f64, out: &mut [f64]) {
    let g = chain.len();
    for k in 0..g - 1 {
        out[k] = chain[k + 1];
    }
    out[g - 1] = nu * xi.abs();
}

/// Final control composition `u = u_safe + Gamma`.
pub fn compose_control(u_safe: f64, gamma_sig: f64) -> f64 {
    u_safe + gamma_sig
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn eta_examples() {
        assert_eq!(eta(0.0, 0.01), 1.0);
        assert_relative_eq!(eta(100.0, 0.01), (-1.0f64).exp(), max_relative = 1e-12);
        assert_relative_eq!(eta(100.0, 0.01), 0.3679, max_relative = 1e-3);
        // exponential decay dominates polynomial growth
        let t: f64 = 5000.0;
        assert!(t.powi(3) * eta(t, 0.01) < 1e-6);
    }

    #[test]
    fn gamma_signal_examples() {
        assert_eq!(gamma_signal(0.0, 5.0, 1.0), 0.0);
        assert_relative_eq!(gamma_signal(3.0, 6.0, 1.0), 4.5, max_relative = 1e-12);
        // saturation toward sign(xi) * Upsilon for |xi| >> eta
        let g = gamma_signal(-1e9, 7.0, 1.0);
        assert_relative_eq!(g, -7.0, max_relative = 1e-6);
    }

    #[test]
    fn chain_derivative_examples() {
        // gamma = 1: dUpsilon/dt = nu |xi|
        let mut out = [0.0];
        chain_derivatives(&[0.01], 0.2, 350.0, &mut out);
        assert_relative_eq!(out[0], 70.0, max_relative = 1e-12);

        // frozen chain when xi = 0
        let mut out2 = [0.0, 0.0];
        chain_derivatives(&[5.0, 0.0], 0.0, 350.0, &mut out2);
        assert_eq!(out2, [0.0, 0.0]);

        // gamma = 2 shifts the derivative state down
        chain_derivatives(&[5.0, 3.0], -0.5, 100.0, &mut out2);
        assert_eq!(out2[0], 3.0);
        assert_relative_eq!(out2[1], 50.0, max_relative = 1e-12);
    }

    #[test]
    fn double_integrator_closed_form() {
        // constant |xi| = c: Upsilon(t) = (nu c / 2) t^2 + Upsilon'(0) t + Upsilon(0)
        let (nu, c, h) = (350.0, 0.2, 1e-4);
        let mut chain = [0.01, 0.5];
        let steps = 10_000; // t = 1 s
        let mut k = [[0.0; 2]; 4];
        for _ in 0..steps {
            let stage = |ch: &[f64; 2], out: &mut [f64; 2]| chain_derivatives(ch, c, nu, out);
            stage(&chain, &mut k[0]);
            stage(&[chain[0] + 0.5 * h * k[0][0], chain[1] + 0.5 * h * k[0][1]], &mut k[1]);
            stage(&[chain[0] + 0.5 * h * k[1][0], chain[1] + 0.5 * h * k[1][1]], &mut k[2]);
            stage(&[chain[0] + h * k[2][0], chain[1] + h * k[2][1]], &mut k[3]);
            for s in 0..2 {
                chain[s] += h / 6.0 * (k[0][s] + 2.0 * k[1][s] + 2.0 * k[2][s] + k[3][s]);
            }
        }
        let expect = 0.5 * nu * c + 0.5 + 0.01;
        assert_relative_eq!(chain[0], expect, max_relative = 1e-10);
    }

    #[test]
    fn compose_examples() {
        assert_eq!(compose_control(1.0, 0.0), 1.0);
        assert_relative_eq!(compose_control(1.2, -0.5), 0.7, max_relative = 1e-12);
    }

    #[test]
    fn rejects_bad_params() {
        let ok = CompensatorParams { gamma: 2, nu: 350.0, alpha: 0.01, upsilon0: 0.01 };
        assert!(ok.validate().is_ok());
        assert!(CompensatorParams { gamma: 0, ..ok }.validate().is_err());
        assert!(CompensatorParams { nu: 0.0, ..ok }.validate().is_err());
        assert!(CompensatorParams { upsilon0: 0.0, ..ok }.validate().is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// |Gamma| <= Upsilon for every input (the modulation factor
            /// |xi|/(|xi|+eta) < 1).
            #[test]
            fn gamma_bounded_by_upsilon(
                xi in -1e6f64..1e6,
                upsilon in 0.0f64..1e6,
                eta_t in 1e-9f64..10.0,
            ) {
                let g = gamma_signal(xi, upsilon, eta_t);
                prop_assert!(g.abs() <= upsilon * (1.0 + 1e-12));
                prop_assert!(g * xi >= 0.0); // sign agreement for Upsilon >= 0
            }

            /// The driven chain state is non-decreasing: its derivative
            /// nu |xi| is never negative.
            #[test]
            fn last_stage_never_decreases(xi in -1e6f64..1e6, nu in 1e-3f64..1e3) {
                let chain = [1.0, -2.0, 3.0];
                let mut out = [0.0; 3];
                chain_derivatives(&chain, xi, nu, &mut out);
                prop_assert!(out[2] >= 0.0);
                prop_assert_eq!(out[0], chain[1]);
                prop_assert_eq!(out[1], chain[2]);
            }
        }
    }
}
