//! Physical microgrid model: quasi-static phasor network, droop primary
//! control, and first-order power measurement filters.
//!
//! Buses `0..n_dg` carry the inverter terminals (ideal sources
//! `v_od_i ∠ delta_i`); any further buses are interior nodes whose
//! voltages are eliminated algebraically at solve time.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Result, SimError};

/// Series RL branch between two buses (1-based indices in configs are
/// converted before construction).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSpec {
    pub from_bus: usize,
    pub to_bus: usize,
    /// ohm
    pub resistance: f64,
    /// henry
    pub inductance: f64,
}

/// Series RL load from a bus to neutral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadSpec {
    pub bus: usize,
    /// ohm
    pub resistance: f64,
    /// henry
    pub inductance: f64,
}

/// Per-inverter droop coefficients and measurement filter cutoff.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DroopParams {
    /// rad/s per watt
    pub m_p: f64,
    /// volt per var
    pub n_q: f64,
    /// rad/s, measurement low-pass cutoff
    pub omega_c: f64,
}

/// Per-inverter dynamic state consumed by the droop layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    /// rad, phase angles in the common rotating frame
    pub delta: Vec<f64>,
    /// watt, filtered active power measurements
    pub p_meas: Vec<f64>,
    /// var, filtered reactive power measurements
    pub q_meas: Vec<f64>,
    /// rad/s, secondary frequency setpoints
    pub omega_n: Vec<f64>,
    /// volt, secondary voltage setpoints
    pub v_n: Vec<f64>,
}

/// Bus admittance model built from RL lines and loads at nominal
/// frequency.
#[derive(Debug, Clone)]
pub struct ElectricalNetwork {
    pub y_bus: DMatrix<Complex<f64>>,
    pub n_bus: usize,
    pub n_dg: usize,
    lines: Vec<(LineSpec, Complex<f64>)>,
    loads: Vec<(LoadSpec, Complex<f64>)>,
}

/// Assembles the bus admittance matrix. Line admittance
/// `y = 1/(R + j*omega0*L)`; load admittances are added on the load bus
/// diagonal.
pub fn build_admittance(
    lines: &[LineSpec],
    loads: &[LoadSpec],
    n_bus: usize,
    n_dg: usize,
    omega0: f64,
) -> Result<ElectricalNetwork> {
    if omega0 <= 0.0 {
        return Err(SimError::InvalidNetwork(format!("omega0 = {omega0} must be > 0")));
    }
    if n_dg == 0 || n_dg > n_bus {
        return Err(SimError::InvalidNetwork(format!(
            "need 1 <= n_dg ({n_dg}) <= n_bus ({n_bus})"
        )));
    }
    let mut y_bus = DMatrix::from_element(n_bus, n_bus, Complex::new(0.0, 0.0));
    let mut line_adm = Vec::with_capacity(lines.len());
    for l in lines {
        if l.from_bus == l.to_bus {
            return Err(SimError::InvalidNetwork(format!(
                "line connects bus {} to itself",
                l.from_bus
            )));
        }
        if l.from_bus >= n_bus || l.to_bus >= n_bus {
            return Err(SimError::InvalidNetwork(format!(
                "line {}-{} references a bus >= n_bus ({n_bus})",
                l.from_bus, l.to_bus
            )));
        }
        if l.resistance < 0.0 || l.inductance < 0.0 {
            return Err(SimError::InvalidNetwork("negative line impedance".into()));
        }
        let z = Complex::new(l.resistance, omega0 * l.inductance);
        if z.norm() == 0.0 {
            return Err(SimError::InvalidNetwork(format!(
                "zero-impedance line {}-{}",
                l.from_bus, l.to_bus
            )));
        }
        let y = z.inv();
        y_bus[(l.from_bus, l.from_bus)] += y;
        y_bus[(l.to_bus, l.to_bus)] += y;
        y_bus[(l.from_bus, l.to_bus)] -= y;
        y_bus[(l.to_bus, l.from_bus)] -= y;
        line_adm.push((*l, y));
    }
    let mut load_adm = Vec::with_capacity(loads.len());
    for l in loads {
        if l.bus >= n_bus {
            return Err(SimError::InvalidNetwork(format!(
                "load bus {} >= n_bus ({n_bus})",
                l.bus
            )));
        }
        if l.resistance <= 0.0 && l.inductance <= 0.0 {
            return Err(SimError::InvalidNetwork(
                "load needs resistance > 0 or inductance > 0".into(),
            ));
        }
        let z = Complex::new(l.resistance, omega0 * l.inductance);
        let y = z.inv();
        y_bus[(l.bus, l.bus)] += y;
        load_adm.push((*l, y));
    }
    Ok(ElectricalNetwork { y_bus, n_bus, n_dg, lines: line_adm, loads: load_adm })
}

impl ElectricalNetwork {
    pub fn lines(&self) -> impl Iterator<Item = (&LineSpec, Complex<f64>)> {
        self.lines.iter().map(|(l, y)| (l, *y))
    }

    pub fn loads(&self) -> impl Iterator<Item = (&LoadSpec, Complex<f64>)> {
        self.loads.iter().map(|(l, y)| (l, *y))
    }
}

/// Reusable phasor solver over an [`ElectricalNetwork`]. Holds the
/// factorization of the interior-bus block and scratch buffers so the
/// per-call path is allocation-free for all-inverter networks.
pub struct NetworkSolver {
    net: ElectricalNetwork,
    /// row-major copy of y_bus for the allocation-free hot path
    y_flat: Vec<Complex<f64>>,
    /// LU of Y[ll] when interior buses exist.
    interior_lu: Option<nalgebra::LU<Complex<f64>, nalgebra::Dyn, nalgebra::Dyn>>,
    v: Vec<Complex<f64>>,
    rhs: DVector<Complex<f64>>,
}

impl NetworkSolver {
    pub fn new(net: ElectricalNetwork) -> Result<Self> {
        let (nb, nd) = (net.n_bus, net.n_dg);
        let interior_lu = if nb > nd {
            let yll = net.y_bus.view((nd, nd), (nb - nd, nb - nd)).into_owned();
            let lu = yll.lu();
            if lu.determinant().norm() == 0.0 {
                return Err(SimError::SingularNetwork(
                    "interior bus block is singular (floating bus with no connection)".into(),
                ));
            }
            Some(lu)
        } else {
            None
        };
        let v = vec![Complex::new(0.0, 0.0); nb];
        let rhs = DVector::from_element(nb.saturating_sub(nd).max(1), Complex::new(0.0, 0.0));
        let mut y_flat = Vec::with_capacity(nb * nb);
        for i in 0..nb {
            for j in 0..nb {
                y_flat.push(net.y_bus[(i, j)]);
            }
        }
        Ok(Self { net, y_flat, interior_lu, v, rhs })
    }

    pub fn network(&self) -> &ElectricalNetwork {
        &self.net
    }

    /// Solves the phasor network for inverter terminal magnitudes/angles
    /// and writes the injected powers `P_i = Re(S_i)`, `Q_i = Im(S_i)`
    /// with `S_i = V_i conj(I_i)`, `I = Y V`.
    pub fn solve(
        &mut self,
        v_mag: &[f64],
        delta: &[f64],
        p_out: &mut [f64],
        q_out: &mut [f64],
    ) -> Result<()> {
        let nd = self.net.n_dg;
        let nb = self.net.n_bus;
        debug_assert_eq!(v_mag.len(), nd);
        debug_assert_eq!(delta.len(), nd);
        for i in 0..nd {
            let (s, c) = delta[i].sin_cos();
            self.v[i] = Complex::new(v_mag[i] * c, v_mag[i] * s);
        }
        if let Some(lu) = &self.interior_lu {
            // Y[ll] V_l = -Y[ld] V_d
            for r in 0..nb - nd {
                let row = &self.y_flat[(nd + r) * nb..(nd + r) * nb + nd];
                let mut acc = Complex::new(0.0, 0.0);
                for (y, vd) in row.iter().zip(&self.v[..nd]) {
                    acc -= y * vd;
                }
                self.rhs[r] = acc;
            }
            if !lu.solve_mut(&mut self.rhs) {
                return Err(SimError::SingularNetwork("interior solve failed".into()));
            }
            for r in 0..nb - nd {
                self.v[nd + r] = self.rhs[r];
            }
        }
        for i in 0..nd {
            let row = &self.y_flat[i * nb..(i + 1) * nb];
            let mut inj = Complex::new(0.0, 0.0);
            for (y, vj) in row.iter().zip(&self.v) {
                inj += y * vj;
            }
            let s = self.v[i] * inj.conj();
            p_out[i] = s.re;
            q_out[i] = s.im;
        }
        Ok(())
    }

    /// As [`Self::solve`] but also returns all bus voltage phasors
    /// (inverter terminals first, then interior buses).
    pub fn solve_detailed(
        &mut self,
        v_mag: &[f64],
        delta: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<Complex<f64>>)> {
        let nd = self.net.n_dg;
        let mut p = vec![0.0; nd];
        let mut q = vec![0.0; nd];
        self.solve(v_mag, delta, &mut p, &mut q)?;
        Ok((p, q, self.v.iter().copied().collect()))
    }
}

/// Droop primary control: `omega_i = omega_n_i - m_p_i * P_i`,
/// `v_od_i = V_n_i - n_q_i * Q_i`, evaluated on the filtered
/// measurements. Linear in `(p_meas, q_meas)`.
pub fn droop_outputs(s: &PlantState, droop: &[DroopParams], omega: &mut [f64], v_od: &mut [f64]) {
    for i in 0..droop.len() {
        omega[i] = s.omega_n[i] - droop[i].m_p * s.p_meas[i];
        v_od[i] = s.v_n[i] - droop[i].n_q * s.q_meas[i];
    }
}

/// First-order measurement filter: `dP/dt = omega_c (P_inst - P_meas)`,
/// same for Q.
pub fn measurement_filter_derivative(
    p_inst: f64,
    q_inst: f64,
    p_meas: f64,
    q_meas: f64,
    omega_c: f64,
) -> (f64, f64) {
    (omega_c * (p_inst - p_meas), omega_c * (q_inst - q_meas))
}

/// Angle dynamics in the rotating frame of the leader reference:
/// `d delta_i / dt = omega_i - omega_common`.
pub fn angle_derivative(omega: &[f64], omega_common: f64, out: &mut [f64]) {
    for (o, &w) in out.iter_mut().zip(omega) {
        *o = w - omega_common;
    }
}
