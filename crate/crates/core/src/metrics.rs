//! Post-hoc analysis over simulation logs: safety-set membership,
//! ultimate-bound estimation, power-sharing verification, and the
//! Lyapunov-function monitor.

use nalgebra::DVector;

use crate::comm_graph::GraphMatrices;
use crate::config::TAU;
use crate::consensus::LeaderRefs;
use crate::error::{Result, SimError};
use crate::log::SimLog;
use crate::plant::DroopParams;
use crate::safety::SafetySpec;

/// Per-inverter safety summary. The safe set is closed: samples exactly
/// on a band boundary count as safe.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DgSafety {
    pub freq_violations: usize,
    pub volt_violations: usize,
    pub first_violation: Option<f64>,
    /// Hz beyond the band at the worst frequency sample
    pub worst_freq_excursion_hz: f64,
    /// volt beyond the band at the worst voltage sample
    pub worst_volt_excursion_v: f64,
    /// seconds spent with either channel outside its band
    pub time_outside: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SafetyReport {
    pub dg: Vec<DgSafety>,
}

impl SafetyReport {
    pub fn total_violations(&self) -> usize {
        self.dg.iter().map(|d| d.freq_violations + d.volt_violations).sum()
    }

    pub fn first_violation(&self) -> Option<f64> {
        self.dg
            .iter()
            .filter_map(|d| d.first_violation)
            .min_by(|a, b| a.partial_cmp(b).unwrap())
    }
}

/// Checks `-omega_l <= omega_i - omega_ref <= omega_h` and
/// `-v_l <= v_od_i - v_ref <= v_h` per sample. The bands are closed
/// sets; excursions below a 1e-9 fraction of the band width count as
/// boundary contact, not violation (absorbs unit-conversion rounding).
pub fn safety_report(log: &SimLog, spec: &SafetySpec, refs: &LeaderRefs) -> SafetyReport {
    let n = log.n_dg();
    let f_eps = 1e-9 * (spec.omega_l + spec.omega_h);
    let v_eps = 1e-9 * (spec.v_l + spec.v_h);
    let mut report = SafetyReport { dg: vec![DgSafety::default(); n] };
    for k in 0..log.len() {
        let dt = if k == 0 {
            0.0
        } else {
            log.time[k] - log.time[k - 1]
        };
        for i in 0..n {
            let s = &log.samples[k][i];
            let wdev = s.freq_hz * TAU - refs.omega_k;
            let vdev = s.volt_v - refs.v_k;
            let mut f_exc = (wdev - spec.omega_h).max(-spec.omega_l - wdev).max(0.0);
            let mut v_exc = (vdev - spec.v_h).max(-spec.v_l - vdev).max(0.0);
            if f_exc <= f_eps {
                f_exc = 0.0;
            }
            if v_exc <= v_eps {
                v_exc = 0.0;
            }
            let d = &mut report.dg[i];
            if f_exc > 0.0 {
                d.freq_violations += 1;
                d.worst_freq_excursion_hz = d.worst_freq_excursion_hz.max(f_exc / TAU);
            }
            if v_exc > 0.0 {
                d.volt_violations += 1;
                d.worst_volt_excursion_v = d.worst_volt_excursion_v.max(v_exc);
            }
            if f_exc > 0.0 || v_exc > 0.0 {
                d.time_outside += dt;
                if d.first_violation.is_none() {
                    d.first_violation = Some(log.time[k]);
                }
            }
        }
    }
    report
}

/// Ultimate-bound estimate over a norm trace.
#[derive(Debug, Clone, PartialEq)]
pub struct UubEstimate {
    /// max of the norm over the tail window
    pub bound: f64,
    /// earliest time after which the trace never exceeds
    /// `(1 + eps_hold) * bound`; `None` when the trace is still climbing
    /// at the end of the horizon
    pub settle_time: Option<f64>,
    /// seconds of tail used
    pub window: f64,
}

/// `bound = max ||e(t)|| over the tail window`; the settle time scans
/// the whole trace. A trace whose tail maximum sits at the final sample
/// while still rising is marked unsettled.
pub fn uub_estimate(times: &[f64], norms: &[f64], tail_window: f64, eps_hold: f64) -> UubEstimate {
    assert_eq!(times.len(), norms.len());
    assert!(!times.is_empty());
    let t_end = *times.last().unwrap();
    let tail_start = t_end - tail_window;
    let tail_idx: Vec<usize> =
        (0..times.len()).filter(|&k| times[k] >= tail_start).collect();
    let bound = tail_idx.iter().map(|&k| norms[k]).fold(0.0f64, f64::max);

    // diverging: the tail max is the final sample and the trace is still
    // growing over the last tenth of the tail
    let last = times.len() - 1;
    let lookback_t = t_end - 0.1 * tail_window;
    let lookback = (0..times.len()).rfind(|&k| times[k] <= lookback_t).unwrap_or(0);
    let diverging = norms[last] >= 0.999 * bound && bound > 0.0 && norms[last] > norms[lookback];
    if diverging {
        return UubEstimate { bound, settle_time: None, window: tail_window };
    }

    let threshold = (1.0 + eps_hold) * bound;
    let mut settle_idx = 0;
    for k in 0..times.len() {
        if norms[k] > threshold {
            settle_idx = k + 1;
        }
    }
    let settle_time = if settle_idx < times.len() {
        Some(times[settle_idx])
    } else {
        None
    };
    UubEstimate { bound, settle_time, window: tail_window }
}

/// Relative active-power-sharing mismatch over `[t0, t1)`:
/// `max over samples and pairs of |m_pi P_i - m_pj P_j| / max_k m_pk P_k`.
pub fn power_sharing_error(log: &SimLog, droop: &[DroopParams], t0: f64, t1: f64) -> f64 {
    let n = log.n_dg();
    let mut worst: f64 = 0.0;
    for k in 0..log.len() {
        if log.time[k] < t0 || log.time[k] >= t1 {
            continue;
        }
        let wp: Vec<f64> =
            (0..n).map(|i| droop[i].m_p * log.samples[k][i].p_w).collect();
        let scale = wp.iter().cloned().fold(f64::MIN, f64::max).abs().max(1e-30);
        for i in 0..n {
            for j in i + 1..n {
                worst = worst.max((wp[i] - wp[j]).abs() / scale);
            }
        }
    }
    worst
}

/// Lyapunov function `E(t) = xi_f(t)^T L_G^{-1} xi_f(t)` recomputed from
/// the logged consensus residuals.
pub fn lyapunov_trace(log: &SimLog, lg: &GraphMatrices) -> Result<Vec<f64>> {
    let n = log.n_dg();
    let lu = lg.lg.clone().lu();
    let mut out = Vec::with_capacity(log.len());
    for k in 0..log.len() {
        let xi = DVector::from_fn(n, |i, _| log.samples[k][i].xi_f);
        let y = lu
            .solve(&xi)
            .ok_or_else(|| SimError::SingularNetwork("singular L_G".into()))?;
        out.push(xi.dot(&y));
    }
    Ok(out)
}

/// Per-sample indicator: every inverter's |xi_f| strictly exceeds its
/// residual-set radius `kappa_i / nu_i`.
pub fn all_outside_residual_set(log: &SimLog, radii: &[f64]) -> Vec<bool> {
    (0..log.len())
        .map(|k| {
            (0..log.n_dg()).all(|i| log.samples[k][i].xi_f.abs() > radii[i])
        })
        .collect()
}

/// Lyapunov-descent audit of a log.
#[derive(Debug, Clone, PartialEq)]
pub struct DescentReport {
    pub max_e: f64,
    /// first time from which the adaptive magnitude dominates the
    /// injected attack plus the filter deviation on every inverter,
    /// persistently to the end of the horizon
    pub adaptation_time: Option<f64>,
    /// sample intervals (after the adaptation time) with every inverter
    /// outside its residual set
    pub audited_intervals: usize,
    /// audited intervals where E increased beyond tolerance
    pub violations: Vec<(f64, f64)>,
}

/// Audits the descent property: over sample intervals where every
/// |xi_f_i| exceeds its residual radius — after adaptation has caught up
/// with the attack — the discrete differences of E must stay below
/// `tol_frac * max E`.
pub fn descent_report(
    log: &SimLog,
    lg: &GraphMatrices,
    radii: &[f64],
    tol_frac: f64,
) -> Result<DescentReport> {
    let e = lyapunov_trace(log, lg)?;
    let outside = all_outside_residual_set(log, radii);
    let max_e = e.iter().cloned().fold(0.0f64, f64::max);
    let tol = tol_frac * max_e;
    let n = log.n_dg();

    // dominance: Upsilon_i >= |Delta_i| + |u_safe_i - u_c_i| for all i
    let dominant = |k: usize| {
        (0..n).all(|i| {
            let s = &log.samples[k][i];
            s.upsilon_f >= s.attack_f.abs() + (s.u_safe_f - s.u_c_f).abs()
        })
    };
    let mut adapt_idx = None;
    for k in (0..log.len()).rev() {
        if dominant(k) {
            adapt_idx = Some(k);
        } else {
            break;
        }
    }

    let mut audited = 0;
    let mut violations = Vec::new();
    if let Some(a0) = adapt_idx {
        for k in a0..log.len() - 1 {
            if outside[k] && outside[k + 1] {
                audited += 1;
                let de = e[k + 1] - e[k];
                if de > tol {
                    violations.push((log.time[k], de));
                }
            }
        }
    }
    Ok(DescentReport {
        max_e,
        adaptation_time: adapt_idx.map(|k| log.time[k]),
        audited_intervals: audited,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comm_graph::{build_matrices, CommGraph};
    use crate::log::DgSample;
    use approx::assert_relative_eq;

    fn refs() -> LeaderRefs {
        LeaderRefs { omega_k: TAU * 60.0, v_k: 340.0 }
    }

    fn spec() -> SafetySpec {
        SafetySpec {
            omega_l: TAU * 2.0,
            omega_h: TAU * 2.0,
            v_l: 34.0,
            v_h: 34.0,
            eta1: 10.0,
            eta2: 10.0,
            d_s: 0.0,
            d_s_v: 0.0,
        }
    }

    fn log_from_freqs(freqs: &[Vec<f64>]) -> SimLog {
        let mut log = SimLog::default();
        for (k, row) in freqs.iter().enumerate() {
            log.time.push(k as f64 * 1e-3);
            log.samples.push(
                row.iter()
                    .map(|&f| DgSample { freq_hz: f, volt_v: 340.0, ..Default::default() })
                    .collect(),
            );
            log.e_f_norm.push(0.0);
            log.e_v_norm.push(0.0);
            log.lyap_e.push(0.0);
        }
        log
    }

    #[test]
    fn flat_trace_has_zero_violations() {
        let log = log_from_freqs(&[vec![60.0, 60.0], vec![60.0, 60.0]]);
        let r = safety_report(&log, &spec(), &refs());
        assert_eq!(r.total_violations(), 0);
        assert_eq!(r.first_violation(), None);
        for d in &r.dg {
            assert_eq!(d.worst_freq_excursion_hz, 0.0);
        }
    }

    #[test]
    fn boundary_sample_counts_as_safe() {
        let log = log_from_freqs(&[vec![62.0], vec![58.0], vec![62.001]]);
        let r = safety_report(&log, &spec(), &refs());
        assert_eq!(r.dg[0].freq_violations, 1);
        assert!(r.dg[0].worst_freq_excursion_hz < 1.1e-3);
        assert_eq!(r.dg[0].first_violation, Some(2e-3));
    }

    /// Oracle: an independently coded single-pass scan must agree.
    #[test]
    fn report_matches_independent_scan() {
        let freqs: Vec<Vec<f64>> = (0..500)
            .map(|k| {
                let t = k as f64 * 1e-3;
                vec![60.0 + 2.5 * (8.0 * t).sin(), 60.0 + 1.2 * (3.0 * t).cos()]
            })
            .collect();
        let log = log_from_freqs(&freqs);
        let r = safety_report(&log, &spec(), &refs());

        // oracle with a different code shape
        let mut counts = [0usize; 2];
        let mut first: [Option<f64>; 2] = [None, None];
        for (k, row) in freqs.iter().enumerate() {
            for (i, &f) in row.iter().enumerate() {
                if !(58.0..=62.0).contains(&f) {
                    counts[i] += 1;
                    first[i].get_or_insert(k as f64 * 1e-3);
                }
            }
        }
        for i in 0..2 {
            assert_eq!(r.dg[i].freq_violations, counts[i], "dg {i}");
            assert_eq!(r.dg[i].first_violation, first[i], "dg {i}");
        }
    }

    #[test]
    fn uub_on_decaying_exponential() {
        let times: Vec<f64> = (0..=1000).map(|k| k as f64 * 0.01).collect();
        let norms: Vec<f64> = times.iter().map(|t| 5.0 * (-0.8 * t).exp() + 0.01).collect();
        let est = uub_estimate(&times, &norms, 2.0, 0.05);
        assert_relative_eq!(est.bound, 5.0 * (-0.8 * 8.0f64).exp() + 0.01, max_relative = 1e-6);
        let t1 = est.settle_time.unwrap();
        assert!(t1 > 0.0 && t1 < 8.0, "t1 = {t1}");
        // after t1 the trace indeed stays below (1+eps) b
        for (k, &t) in times.iter().enumerate() {
            if t >= t1 {
                assert!(norms[k] <= 1.05 * est.bound * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn uub_marks_diverging_trace_unsettled() {
        let times: Vec<f64> = (0..1000).map(|k| k as f64 * 0.01).collect();
        let norms: Vec<f64> = times.iter().map(|t| (0.5 * t).exp()).collect();
        let est = uub_estimate(&times, &norms, 2.0, 0.05);
        assert_eq!(est.settle_time, None);
    }

    #[test]
    fn power_sharing_zero_when_weighted_powers_equal() {
        let droop = vec![
            DroopParams { m_p: 9.4e-5, n_q: 1.3e-3, omega_c: 31.4 },
            DroopParams { m_p: 18.8e-5, n_q: 2.6e-3, omega_c: 31.4 },
        ];
        let mut log = SimLog::default();
        for k in 0..10 {
            log.time.push(k as f64);
            log.samples.push(vec![
                DgSample { p_w: 10_000.0, ..Default::default() },
                DgSample { p_w: 5_000.0, ..Default::default() },
            ]);
            log.e_f_norm.push(0.0);
            log.e_v_norm.push(0.0);
            log.lyap_e.push(0.0);
        }
        assert_eq!(power_sharing_error(&log, &droop, 0.0, 10.0), 0.0);

        // perturb one sample by 10% on inverter 2's weighted power
        log.samples[5][1].p_w = 5_500.0;
        let e = power_sharing_error(&log, &droop, 0.0, 10.0);
        assert_relative_eq!(e, 0.094 / 1.034, max_relative = 1e-10);
    }

    #[test]
    fn lyapunov_unit_vector_matches_cofactor_inverse() {
        let g = CommGraph::new(
            vec![
                vec![0., 1., 0., 1.],
                vec![1., 0., 1., 0.],
                vec![0., 1., 0., 1.],
                vec![1., 0., 1., 0.],
            ],
            vec![1., 0., 0., 0.],
        )
        .unwrap();
        let m = build_matrices(&g);
        let mut log = SimLog::default();
        log.time.push(0.0);
        let mut row = vec![DgSample::default(); 4];
        row[0].xi_f = 1.0;
        log.samples.push(row);
        log.e_f_norm.push(0.0);
        log.e_v_norm.push(0.0);
        log.lyap_e.push(0.0);
        let e = lyapunov_trace(&log, &m).unwrap();
        // independent hand inversion: L_G * 1 = e1 for this graph, so
        // (L_G^{-1})_{11} = 1 exactly
        assert_relative_eq!(e[0], 1.0, max_relative = 1e-12);

        // zero residual -> zero energy
        log.samples[0][0].xi_f = 0.0;
        assert_eq!(lyapunov_trace(&log, &m).unwrap()[0], 0.0);
    }

    #[test]
    fn lyapunov_nonnegative_on_random_residuals() {
        let g = CommGraph::new(
            vec![
                vec![0., 1., 0., 1.],
                vec![1., 0., 1., 0.],
                vec![0., 1., 0., 1.],
                vec![1., 0., 1., 0.],
            ],
            vec![1., 0., 0., 0.],
        )
        .unwrap();
        let m = build_matrices(&g);
        let mut log = SimLog::default();
        let mut state = 0x2545F4914F6CDD1Du64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        for k in 0..200 {
            log.time.push(k as f64);
            log.samples.push(
                (0..4)
                    .map(|_| DgSample { xi_f: 100.0 * next(), ..Default::default() })
                    .collect(),
            );
            log.e_f_norm.push(0.0);
            log.e_v_norm.push(0.0);
            log.lyap_e.push(0.0);
        }
        for e in lyapunov_trace(&log, &m).unwrap() {
            assert!(e >= -1e-9, "E = {e}");
        }
    }
}
