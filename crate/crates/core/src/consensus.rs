//! Cooperative secondary control layer: neighborhood relative-information
//! terms and the global containment errors they regulate.

use crate::comm_graph::CommGraph;
use crate::plant::DroopParams;

/// Coupling gains shared by all inverters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsensusGains {
    pub c_f: f64,
    pub c_v: f64,
}

/// Leader frequency and voltage references.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaderRefs {
    /// rad/s
    pub omega_k: f64,
    /// volt
    pub v_k: f64,
}

/// Frequency-channel relative information for inverter `i`:
///
/// `xi_f_i = c_f [ sum_j a_ij (omega_j - omega_i) + g_i (omega_k - omega_i)
///                 + sum_j a_ij (m_pj P_j - m_pi P_i) ]`
pub fn xi_f(
    i: usize,
    omega: &[f64],
    p_meas: &[f64],
    droop: &[DroopParams],
    g: &CommGraph,
    gains: &ConsensusGains,
    refs: &LeaderRefs,
) -> f64 {
    let wi = omega[i];
    let qi = droop[i].m_p * p_meas[i];
    let mut acc = g.pinning(i) * (refs.omega_k - wi);
    let row = g.row(i);
    for j in 0..row.len() {
        let a = row[j];
        if a != 0.0 {
            acc += a * ((omega[j] - wi) + (droop[j].m_p * p_meas[j] - qi));
        }
    }
    gains.c_f * acc
}

/// Voltage-channel mirror of [`xi_f`] over `(v_od, n_q Q, v_k, c_v)`.
pub fn xi_v(
    i: usize,
    v_od: &[f64],
    q_meas: &[f64],
    droop: &[DroopParams],
    g: &CommGraph,
    gains: &ConsensusGains,
    refs: &LeaderRefs,
) -> f64 {
    let vi = v_od[i];
    let qi = droop[i].n_q * q_meas[i];
    let mut acc = g.pinning(i) * (refs.v_k - vi);
    let row = g.row(i);
    for j in 0..row.len() {
        let a = row[j];
        if a != 0.0 {
            acc += a * ((v_od[j] - vi) + (droop[j].n_q * q_meas[j] - qi));
        }
    }
    gains.c_v * acc
}

/// Global frequency containment error, `e_f_i = omega_n_i - (omega_k +
/// m_pi P_i)`: zero exactly when the inverter runs at the reference
/// frequency with its droop relation satisfied.
pub fn containment_error_f(
    omega_n: &[f64],
    refs: &LeaderRefs,
    droop: &[DroopParams],
    p_meas: &[f64],
    out: &mut [f64],
) {
    for i in 0..omega_n.len() {
        out[i] = omega_n[i] - (refs.omega_k + droop[i].m_p * p_meas[i]);
    }
}

/// Global voltage containment error, `e_v_i = V_n_i - (v_k + n_qi Q_i)`.
pub fn containment_error_v(
    v_n: &[f64],
    refs: &LeaderRefs,
    droop: &[DroopParams],
    q_meas: &[f64],
    out: &mut [f64],
) {
    for i in 0..v_n.len() {
        out[i] = v_n[i] - (refs.v_k + droop[i].n_q * q_meas[i]);
    }
}
