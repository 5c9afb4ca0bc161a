//! Transient-safety layer: barrier functions over the frequency and
//! voltage bands, robust CBF bounds on the control rate, and the
//! minimally invasive filter that projects the nominal control into the
//! admissible interval.

use crate::error::{Result, SimError};

/// Safety band and filter parameters. Bands are deviations from the
/// reference, both sides positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetySpec {
    /// rad/s, lower frequency deviation bound
    pub omega_l: f64,
    /// rad/s, upper frequency deviation bound
    pub omega_h: f64,
    /// volt, lower voltage deviation bound
    pub v_l: f64,
    /// volt, upper voltage deviation bound
    pub v_h: f64,
    /// 1/s, class-K slope on the lower barrier
    pub eta1: f64,
    /// 1/s, class-K slope on the upper barrier
    pub eta2: f64,
    /// watt/s, disturbance bound on dP/dt
    pub d_s: f64,
    /// var/s, disturbance bound on dQ/dt
    pub d_s_v: f64,
}

impl SafetySpec {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("omega_l", self.omega_l),
            ("omega_h", self.omega_h),
            ("v_l", self.v_l),
            ("v_h", self.v_h),
            ("eta1", self.eta1),
            ("eta2", self.eta2),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v <= 0.0 {
                return Err(SimError::InvalidConfig(format!("safety.{name} = {v} must be > 0")));
            }
        }
        for (name, v) in [("d_s", self.d_s), ("d_s_v", self.d_s_v)] {
            if !v.is_finite() || v < 0.0 {
                return Err(SimError::InvalidConfig(format!("safety.{name} = {v} must be >= 0")));
            }
        }
        Ok(())
    }
}

/// Admissible interval for one control channel. `feasible` iff
/// `lower <= upper`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CbfBounds {
    pub lower: f64,
    pub upper: f64,
    pub feasible: bool,
}

impl CbfBounds {
    fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper, feasible: lower <= upper }
    }
}

/// Frequency barrier pair: `h1 = (omega_i - omega_ref) + omega_l`,
/// `h2 = omega_h - (omega_i - omega_ref)`. Both nonnegative inside the
/// band.
pub fn barrier_values_f(omega_i: f64, spec: &SafetySpec, omega_ref: f64) -> (f64, f64) {
    let dev = omega_i - omega_ref;
    (dev + spec.omega_l, spec.omega_h - dev)
}

/// Voltage barrier pair over `(v_l, v_h)`.
pub fn barrier_values_v(v_i: f64, spec: &SafetySpec, v_ref: f64) -> (f64, f64) {
    let dev = v_i - v_ref;
    (dev + spec.v_l, spec.v_h - dev)
}

/// Robust CBF interval for the frequency channel. The droop coupling
/// `m_p dP/dt` is treated as a disturbance bounded by `m_p d_s`, taken
/// at its worst sign on each side:
///
/// `u >= m_p d_s - eta1 h1` and `u <= eta2 h2 - m_p d_s`.
pub fn cbf_bounds_f(omega_i: f64, spec: &SafetySpec, m_p: f64, omega_ref: f64) -> CbfBounds {
    let (h1, h2) = barrier_values_f(omega_i, spec, omega_ref);
    let margin = m_p * spec.d_s;
    CbfBounds::new(margin - spec.eta1 * h1, spec.eta2 * h2 - margin)
}

/// Voltage-channel analogue of [`cbf_bounds_f`] with `n_q d_s_v`.
pub fn cbf_bounds_v(v_i: f64, spec: &SafetySpec, n_q: f64, v_ref: f64) -> CbfBounds {
    let (h1, h2) = barrier_values_v(v_i, spec, v_ref);
    let margin = n_q * spec.d_s_v;
    CbfBounds::new(margin - spec.eta1 * h1, spec.eta2 * h2 - margin)
}

/// Minimally invasive safety filter: the one-dimensional QP
/// `min |u - u_c|` subject to `lower <= u <= upper` has the closed-form
/// solution `clamp(u_c, lower, upper)`. If the interval is inverted the
/// midpoint is returned and the caller logs an infeasibility event.
///
/// Returns `(u_safe, clamped)`.
pub fn safe_filter(u_c: f64, b: &CbfBounds) -> Result<(f64, bool)> {
    if u_c.is_nan() {
        return Err(SimError::NanControl);
    }
    if !b.feasible {
        return Ok((0.5 * (b.lower + b.upper), true));
    }
    let u = u_c.clamp(b.lower, b.upper);
    Ok((u, u != u_c))
}

/// `delta_u = u_safe - u_c`; bounded whenever the interval is feasible.
pub fn delta_u(u_safe: f64, u_c: f64) -> f64 {
    u_safe - u_c
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const PI: f64 = std::f64::consts::PI;

    fn spec(eta: f64, d_s: f64) -> SafetySpec {
        SafetySpec {
            omega_l: 4.0 * PI,
            omega_h: 4.0 * PI,
            v_l: 34.0,
            v_h: 34.0,
            eta1: eta,
            eta2: eta,
            d_s,
            d_s_v: d_s,
        }
    }

    #[test]
    fn barrier_band_cases() {
        let s = spec(1.0, 0.0);
        let w0 = 2.0 * PI * 60.0;
        let (h1, h2) = barrier_values_f(w0, &s, w0);
        assert_relative_eq!(h1, 4.0 * PI);
        assert_relative_eq!(h2, 4.0 * PI);

        let (h1, h2) = barrier_values_f(w0 + 4.0 * PI, &s, w0);
        assert_relative_eq!(h1, 8.0 * PI, max_relative = 1e-12);
        assert!(h2.abs() < 1e-12);

        let (h1, _) = barrier_values_f(w0 - 5.0 * PI, &s, w0);
        assert_relative_eq!(h1, -PI, max_relative = 1e-12);
        assert!(h1 < 0.0);
    }

    #[test]
    fn cbf_bounds_at_band_center_and_boundary() {
        let s = spec(1.0, 0.0);
        let w0 = 2.0 * PI * 60.0;
        let b = cbf_bounds_f(w0, &s, 9.4e-5, w0);
        assert_relative_eq!(b.lower, -4.0 * PI);
        assert_relative_eq!(b.upper, 4.0 * PI);
        assert!(b.feasible);

        // at the upper boundary only non-increasing controls are admissible
        let b = cbf_bounds_f(w0 + 4.0 * PI, &s, 9.4e-5, w0);
        assert!(b.upper.abs() < 1e-12);

        // below the band the filter must push up: lower > m_p d_s
        let s = spec(1.0, 1e4);
        let m_p = 9.4e-5;
        let b = cbf_bounds_f(w0 - 5.0 * PI, &s, m_p, w0);
        assert!(b.lower > m_p * s.d_s);
    }

    #[test]
    fn filter_projection_cases() {
        let b = CbfBounds::new(-4.0 * PI, 4.0 * PI);
        assert_eq!(safe_filter(5.0, &b).unwrap(), (5.0, false));
        let (u, clamped) = safe_filter(20.0, &b).unwrap();
        assert_relative_eq!(u, 4.0 * PI);
        assert!(clamped);
        assert_relative_eq!(delta_u(u, 20.0), 4.0 * PI - 20.0);
        assert!((delta_u(u, 20.0) + 7.433629).abs() < 1e-5);

        let wide = CbfBounds::new(-1e12, 1e12);
        assert_eq!(safe_filter(123.456, &wide).unwrap(), (123.456, false));

        assert!(safe_filter(f64::NAN, &b).is_err());

        let inverted = CbfBounds::new(2.0, -4.0);
        assert!(!inverted.feasible);
        let (u, clamped) = safe_filter(10.0, &inverted).unwrap();
        assert_eq!(u, -1.0);
        assert!(clamped);
    }

    #[test]
    fn unclamped_case_is_exact_identity() {
        let b = CbfBounds::new(-3.0, 7.0);
        for u_c in [-3.0, -1.5, 0.0, 6.999, 7.0] {
            let (u, clamped) = safe_filter(u_c, &b).unwrap();
            assert_eq!(u, u_c);
            assert!(!clamped);
            assert_eq!(delta_u(u, u_c), 0.0);
        }
    }

    #[test]
    fn feasibility_sweep_inside_band() {
        // symmetric bands stay feasible everywhere inside when
        // m_p * d_s < min(eta1 * omega_l, eta2 * omega_h)
        let m_p = 18.8e-5;
        let s = spec(10.0, 0.9 * 10.0 * 4.0 * PI / 18.8e-5);
        assert!(m_p * s.d_s < s.eta1 * s.omega_l);
        let w0 = 2.0 * PI * 60.0;
        let n = 1000;
        for k in 0..=n {
            let dev = -s.omega_l + (s.omega_l + s.omega_h) * k as f64 / n as f64;
            let b = cbf_bounds_f(w0 + dev, &s, m_p, w0);
            assert!(b.feasible, "infeasible at dev = {dev}");
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// |delta_u| never exceeds the interval width on feasible bounds.
            #[test]
            fn delta_bounded_by_interval_width(
                u_c in -1e4f64..1e4,
                lo in -1e3f64..1e3,
                width in 0.0f64..2e3,
            ) {
                let b = CbfBounds::new(lo, lo + width);
                let (u, _) = safe_filter(u_c, &b).unwrap();
                prop_assert!(delta_u(u, u_c).abs() <= (u_c - u_c.clamp(lo, lo + width)).abs() + 1e-12);
                prop_assert!(u >= lo - 1e-12 && u <= lo + width + 1e-12);
            }
        }
    }
}
