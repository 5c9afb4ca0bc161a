//! Closed-loop simulation engine: owns the flattened global state and
//! advances network solve -> droop -> consensus -> safety filter ->
//! compensator -> attack injection with a fixed-step RK4 integrator.

use nalgebra::{DMatrix, DVector};

use crate::attack::{AttackChannel, AttackProfile};
use crate::comm_graph::{build_matrices, has_path_from_leader, CommGraph, GraphMatrices};
use crate::compensator::{self, CompensatorParams};
use crate::config::{InitialState, ScenarioConfig, Severity};
use crate::consensus::{self, ConsensusGains, LeaderRefs};
use crate::error::{Result, SimError};
use crate::log::{DgSample, Event, EventKind, SimLog};
use crate::plant::{build_admittance, DroopParams, NetworkSolver};
use crate::safety::{self, SafetySpec};

/// State vector layout: `[delta | p_meas | q_meas | omega_n | v_n |
/// chain_f (n*gamma) | chain_v (n*gamma)]`.
#[derive(Debug, Clone, Copy)]
pub struct Layout {
    pub n: usize,
    pub gamma: usize,
}

impl Layout {
    pub fn dim(&self) -> usize {
        5 * self.n + 2 * self.n * self.gamma
    }
    pub fn delta(&self, i: usize) -> usize {
        i
    }
    pub fn p_meas(&self, i: usize) -> usize {
        self.n + i
    }
    pub fn q_meas(&self, i: usize) -> usize {
        2 * self.n + i
    }
    pub fn omega_n(&self, i: usize) -> usize {
        3 * self.n + i
    }
    pub fn v_n(&self, i: usize) -> usize {
        4 * self.n + i
    }
    pub fn chain_f(&self, i: usize, k: usize) -> usize {
        5 * self.n + i * self.gamma + k
    }
    pub fn chain_v(&self, i: usize, k: usize) -> usize {
        5 * self.n + self.n * self.gamma + i * self.gamma + k
    }

    fn component_name(&self, idx: usize) -> String {
        let n = self.n;
        match idx {
            x if x < n => format!("delta[{x}]"),
            x if x < 2 * n => format!("p_meas[{}]", x - n),
            x if x < 3 * n => format!("q_meas[{}]", x - 2 * n),
            x if x < 4 * n => format!("omega_n[{}]", x - 3 * n),
            x if x < 5 * n => format!("v_n[{}]", x - 4 * n),
            x if x < 5 * n + n * self.gamma => {
                let r = x - 5 * n;
                format!("chain_f[{}][{}]", r / self.gamma, r % self.gamma)
            }
            x => {
                let r = x - 5 * n - n * self.gamma;
                format!("chain_v[{}][{}]", r / self.gamma, r % self.gamma)
            }
        }
    }
}

/// Per-evaluation controller diagnostics captured at sample times.
#[derive(Debug, Clone, Default)]
pub struct StageDiag {
    pub omega: Vec<f64>,
    pub v_od: Vec<f64>,
    pub xi_f: Vec<f64>,
    pub xi_v: Vec<f64>,
    pub u_safe_f: Vec<f64>,
    pub u_safe_v: Vec<f64>,
    pub gamma_f: Vec<f64>,
    pub gamma_v: Vec<f64>,
    pub attack_f: Vec<f64>,
    pub attack_v: Vec<f64>,
    pub clamped_f: Vec<bool>,
    pub clamped_v: Vec<bool>,
    pub infeasible_f: Vec<bool>,
    pub infeasible_v: Vec<bool>,
}

impl StageDiag {
    fn new(n: usize) -> Self {
        Self {
            omega: vec![0.0; n],
            v_od: vec![0.0; n],
            xi_f: vec![0.0; n],
            xi_v: vec![0.0; n],
            u_safe_f: vec![0.0; n],
            u_safe_v: vec![0.0; n],
            gamma_f: vec![0.0; n],
            gamma_v: vec![0.0; n],
            attack_f: vec![0.0; n],
            attack_v: vec![0.0; n],
            clamped_f: vec![false; n],
            clamped_v: vec![false; n],
            infeasible_f: vec![false; n],
            infeasible_v: vec![false; n],
        }
    }
}

/// Zero-order-hold snapshot of the controller outputs.
#[derive(Debug, Clone)]
struct HeldControls {
    u_f: Vec<f64>,
    u_v: Vec<f64>,
    abs_xi_f: Vec<f64>,
    abs_xi_v: Vec<f64>,
}

/// Prepared simulation over one scenario. Re-entrant across instances;
/// a single run is sequential over its own state vector.
pub struct Engine {
    layout: Layout,
    graph: CommGraph,
    matrices: GraphMatrices,
    lg_lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    droop: Vec<DroopParams>,
    gains: ConsensusGains,
    refs: LeaderRefs,
    safety: Option<SafetySpec>,
    comp_f: Option<CompensatorParams>,
    comp_v: Option<CompensatorParams>,
    attacks_f: Vec<AttackProfile>,
    attacks_v: Vec<AttackProfile>,
    /// per-inverter indices into attacks_f / attacks_v
    atk_f_by_dg: Vec<Vec<usize>>,
    atk_v_by_dg: Vec<Vec<usize>>,
    solver: NetworkSolver,
    step: f64,
    horizon: f64,
    sample_every: usize,
    control_hold_steps: usize,
    initial_state: InitialState,
    held: Option<HeldControls>,
    // scratch buffers for derivatives and RK4 stages
    omega: Vec<f64>,
    v_od: Vec<f64>,
    p_inst: Vec<f64>,
    q_inst: Vec<f64>,
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    xt: Vec<f64>,
}

impl Engine {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self> {
        let findings = cfg.validate();
        let errors: Vec<String> = findings
            .iter()
            .filter(|f| f.severity == Severity::Error)
            .map(|f| f.message.clone())
            .collect();
        if !errors.is_empty() {
            return Err(SimError::InvalidConfig(errors.join("; ")));
        }

        let graph = cfg.comm_graph()?;
        if !has_path_from_leader(&graph) {
            return Err(SimError::InvalidConfig(
                "leader cannot reach every inverter".into(),
            ));
        }
        let matrices = build_matrices(&graph);
        let lg_lu = matrices.lg.clone().lu();
        let n = graph.n();
        let refs = cfg.leader_refs();
        let net = build_admittance(
            &cfg.line_specs(),
            &cfg.load_specs(),
            cfg.n_bus(),
            n,
            refs.omega_k,
        )?;
        let solver = NetworkSolver::new(net)?;
        let gamma = cfg.compensator.gamma;
        let layout = Layout { n, gamma };
        let mut attacks_f = Vec::new();
        let mut attacks_v = Vec::new();
        for p in cfg.attack_profiles() {
            match p.channel {
                AttackChannel::Frequency => attacks_f.push(p),
                AttackChannel::Voltage => attacks_v.push(p),
            }
        }
        let mut atk_f_by_dg = vec![Vec::new(); n];
        for (k, p) in attacks_f.iter().enumerate() {
            atk_f_by_dg[p.dg].push(k);
        }
        let mut atk_v_by_dg = vec![Vec::new(); n];
        for (k, p) in attacks_v.iter().enumerate() {
            atk_v_by_dg[p.dg].push(k);
        }
        let sample_every = (cfg.sim.sample_interval / cfg.sim.step).round().max(1.0) as usize;
        let control_hold_steps = if cfg.sim.control_period > 0.0 {
            (cfg.sim.control_period / cfg.sim.step).round() as usize
        } else {
            0
        };
        Ok(Self {
            layout,
            graph,
            matrices,
            lg_lu,
            droop: cfg.droop_params(),
            gains: cfg.consensus_gains(),
            refs,
            safety: cfg.safety.enabled.then(|| cfg.safety_spec()),
            comp_f: cfg
                .compensator
                .enabled
                .then(|| cfg.compensator_params(AttackChannel::Frequency)),
            comp_v: cfg
                .compensator
                .enabled
                .then(|| cfg.compensator_params(AttackChannel::Voltage)),
            attacks_f,
            attacks_v,
            atk_f_by_dg,
            atk_v_by_dg,
            solver,
            step: cfg.sim.step,
            horizon: cfg.sim.horizon,
            sample_every,
            control_hold_steps,
            initial_state: cfg.sim.initial_state,
            held: None,
            omega: vec![0.0; n],
            v_od: vec![0.0; n],
            p_inst: vec![0.0; n],
            q_inst: vec![0.0; n],
            k1: vec![0.0; layout.dim()],
            k2: vec![0.0; layout.dim()],
            k3: vec![0.0; layout.dim()],
            k4: vec![0.0; layout.dim()],
            xt: vec![0.0; layout.dim()],
        })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn matrices(&self) -> &GraphMatrices {
        &self.matrices
    }

    /// Full closed-loop derivative pipeline. `diag` captures controller
    /// internals when logging.
    pub fn derivatives(
        &mut self,
        t: f64,
        x: &[f64],
        dxdt: &mut [f64],
        mut diag: Option<&mut StageDiag>,
    ) -> Result<()> {
        let n = self.layout.n;
        let lay = self.layout;
        let gamma = lay.gamma;
        let (delta, rest) = x.split_at(n);
        let (p_meas, rest) = rest.split_at(n);
        let (q_meas, rest) = rest.split_at(n);
        let (omega_n, rest) = rest.split_at(n);
        let (v_n, rest) = rest.split_at(n);
        let (chain_f, chain_v) = rest.split_at(n * gamma);

        // (1)-(2): droop outputs from setpoints and filtered measurements,
        // then the quasi-static network solve at those terminals.
        for i in 0..n {
            self.omega[i] = omega_n[i] - self.droop[i].m_p * p_meas[i];
            self.v_od[i] = v_n[i] - self.droop[i].n_q * q_meas[i];
        }
        self.solver.solve(&self.v_od, delta, &mut self.p_inst, &mut self.q_inst)?;

        let eta_f = self.comp_f.as_ref().map(|p| compensator::eta(t, p.alpha));
        let eta_v = self.comp_v.as_ref().map(|p| compensator::eta(t, p.alpha));

        for i in 0..n {
            // (3): neighborhood relative information
            let xi_f =
                consensus::xi_f(i, &self.omega, p_meas, &self.droop, &self.graph, &self.gains, &self.refs);
            let xi_v =
                consensus::xi_v(i, &self.v_od, q_meas, &self.droop, &self.graph, &self.gains, &self.refs);

            // (4): safety filter over the nominal consensus control
            let (u_safe_f, clamped_f, infeasible_f) = match &self.safety {
                Some(spec) => {
                    let b = safety::cbf_bounds_f(self.omega[i], spec, self.droop[i].m_p, self.refs.omega_k);
                    let (u, clamped) = safety::safe_filter(xi_f, &b)?;
                    (u, clamped, !b.feasible)
                }
                None => (xi_f, false, false),
            };
            let (u_safe_v, clamped_v, infeasible_v) = match &self.safety {
                Some(spec) => {
                    let b = safety::cbf_bounds_v(self.v_od[i], spec, self.droop[i].n_q, self.refs.v_k);
                    let (u, clamped) = safety::safe_filter(xi_v, &b)?;
                    (u, clamped, !b.feasible)
                }
                None => (xi_v, false, false),
            };

            // (5): adaptive compensation on top of the safe control
            let (gamma_f, abs_xi_f_drive) = match eta_f {
                Some(e) => (compensator::gamma_signal(xi_f, chain_f[i * gamma], e), xi_f.abs()),
                None => (0.0, 0.0),
            };
            let (gamma_v, abs_xi_v_drive) = match eta_v {
                Some(e) => (compensator::gamma_signal(xi_v, chain_v[i * gamma], e), xi_v.abs()),
                None => (0.0, 0.0),
            };
            let mut u_f = compensator::compose_control(u_safe_f, gamma_f);
            let mut u_v = compensator::compose_control(u_safe_v, gamma_v);
            let mut drive_f = abs_xi_f_drive;
            let mut drive_v = abs_xi_v_drive;
            if let Some(held) = &self.held {
                u_f = held.u_f[i];
                u_v = held.u_v[i];
                drive_f = held.abs_xi_f[i];
                drive_v = held.abs_xi_v[i];
            }

            // (6): corrupted inputs drive the setpoint integrators
            let mut atk_f = 0.0;
            for &k in &self.atk_f_by_dg[i] {
                atk_f += self.attacks_f[k].eval(t);
            }
            let mut atk_v = 0.0;
            for &k in &self.atk_v_by_dg[i] {
                atk_v += self.attacks_v[k].eval(t);
            }
            dxdt[lay.omega_n(i)] = u_f + atk_f;
            dxdt[lay.v_n(i)] = u_v + atk_v;

            // (7): plant derivatives
            dxdt[lay.delta(i)] = self.omega[i] - self.refs.omega_k;
            dxdt[lay.p_meas(i)] = self.droop[i].omega_c * (self.p_inst[i] - p_meas[i]);
            dxdt[lay.q_meas(i)] = self.droop[i].omega_c * (self.q_inst[i] - q_meas[i]);

            // (8): adaptation chains
            if let Some(p) = &self.comp_f {
                let base = lay.chain_f(i, 0);
                compensator::chain_derivatives(
                    &chain_f[i * gamma..(i + 1) * gamma],
                    drive_f,
                    p.nu,
                    &mut dxdt[base..base + p.gamma],
                );
            } else {
                for k in 0..gamma {
                    dxdt[lay.chain_f(i, k)] = 0.0;
                }
            }
            if let Some(p) = &self.comp_v {
                let base = lay.chain_v(i, 0);
                compensator::chain_derivatives(
                    &chain_v[i * gamma..(i + 1) * gamma],
                    drive_v,
                    p.nu,
                    &mut dxdt[base..base + p.gamma],
                );
            } else {
                for k in 0..gamma {
                    dxdt[lay.chain_v(i, k)] = 0.0;
                }
            }

            if let Some(d) = diag.as_deref_mut() {
                d.omega[i] = self.omega[i];
                d.v_od[i] = self.v_od[i];
                d.xi_f[i] = xi_f;
                d.xi_v[i] = xi_v;
                d.u_safe_f[i] = u_safe_f;
                d.u_safe_v[i] = u_safe_v;
                d.gamma_f[i] = gamma_f;
                d.gamma_v[i] = gamma_v;
                d.attack_f[i] = atk_f;
                d.attack_v[i] = atk_v;
                d.clamped_f[i] = clamped_f;
                d.clamped_v[i] = clamped_v;
                d.infeasible_f[i] = infeasible_f;
                d.infeasible_v[i] = infeasible_v;
            }
        }

        // The per-step state scan in `run` catches divergence promptly;
        // the detailed derivative check runs on diagnostic evaluations
        // where its cost is invisible.
        if diag.is_some() {
            if let Some(idx) = dxdt.iter().position(|v| !v.is_finite()) {
                return Err(SimError::NonFinite {
                    time: t,
                    what: format!("d/dt {}", self.layout.component_name(idx)),
                });
            }
        }
        Ok(())
    }

    /// One classical RK4 step in place; attack evaluation uses stage
    /// times.
    pub fn step_rk4(&mut self, t: f64, x: &mut [f64], h: f64) -> Result<()> {
        let dim = x.len();
        let mut k1 = std::mem::take(&mut self.k1);
        let mut k2 = std::mem::take(&mut self.k2);
        let mut k3 = std::mem::take(&mut self.k3);
        let mut k4 = std::mem::take(&mut self.k4);
        let mut xt = std::mem::take(&mut self.xt);
        let res = (|| {
            self.derivatives(t, x, &mut k1, None)?;
            for q in 0..dim {
                xt[q] = x[q] + 0.5 * h * k1[q];
            }
            self.derivatives(t + 0.5 * h, &xt, &mut k2, None)?;
            for q in 0..dim {
                xt[q] = x[q] + 0.5 * h * k2[q];
            }
            self.derivatives(t + 0.5 * h, &xt, &mut k3, None)?;
            for q in 0..dim {
                xt[q] = x[q] + h * k3[q];
            }
            self.derivatives(t + h, &xt, &mut k4, None)?;
            for q in 0..dim {
                x[q] += h / 6.0 * (k1[q] + 2.0 * k2[q] + 2.0 * k3[q] + k4[q]);
            }
            Ok(())
        })();
        self.k1 = k1;
        self.k2 = k2;
        self.k3 = k3;
        self.k4 = k4;
        self.xt = xt;
        res
    }

    /// Initial state per the scenario's `initial_state` policy.
    pub fn initial_state_vector(&mut self) -> Result<Vec<f64>> {
        let lay = self.layout;
        let n = lay.n;
        let mut x = vec![0.0; lay.dim()];
        let ups0_f = self.comp_f.as_ref().map_or(0.0, |p| p.upsilon0);
        let ups0_v = self.comp_v.as_ref().map_or(0.0, |p| p.upsilon0);
        for i in 0..n {
            x[lay.chain_f(i, 0)] = ups0_f;
            x[lay.chain_v(i, 0)] = ups0_v;
        }
        match self.initial_state {
            InitialState::Flat => {
                for i in 0..n {
                    x[lay.omega_n(i)] = self.refs.omega_k;
                    x[lay.v_n(i)] = self.refs.v_k;
                }
            }
            InitialState::Equilibrium => {
                let (delta, v_od, p, q) = self.solve_equilibrium()?;
                for i in 0..n {
                    x[lay.delta(i)] = delta[i];
                    x[lay.p_meas(i)] = p[i];
                    x[lay.q_meas(i)] = q[i];
                    x[lay.omega_n(i)] = self.refs.omega_k + self.droop[i].m_p * p[i];
                    x[lay.v_n(i)] = v_od[i] + self.droop[i].n_q * q[i];
                }
            }
        }
        Ok(x)
    }

    /// Newton solve of the secondary-control rest point: common
    /// frequency at the reference, active power shared in proportion to
    /// the droop gains, and the voltage consensus balance at zero.
    ///
    /// Unknowns are the relative angles (delta_1 = 0) and the terminal
    /// voltage deviations.
    fn solve_equilibrium(&mut self) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
        let n = self.layout.n;
        let dim = 2 * n - 1;
        let mut u = DVector::<f64>::zeros(dim);
        let mut r = DVector::<f64>::zeros(dim);
        let mut r2 = DVector::<f64>::zeros(dim);
        let mut jac = DMatrix::<f64>::zeros(dim, dim);

        let eval = |slf: &mut Self, u: &DVector<f64>, r: &mut DVector<f64>| -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
            let mut delta = vec![0.0; n];
            let mut v_od = vec![0.0; n];
            for i in 1..n {
                delta[i] = u[i - 1];
            }
            for i in 0..n {
                v_od[i] = slf.refs.v_k + u[n - 1 + i];
            }
            let mut p = vec![0.0; n];
            let mut q = vec![0.0; n];
            slf.solver.solve(&v_od, &delta, &mut p, &mut q)?;
            for i in 0..n - 1 {
                r[i] = slf.droop[i].m_p * p[i] - slf.droop[i + 1].m_p * p[i + 1];
            }
            // L_G vhat + L (n_q . q) = 0
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += slf.matrices.lg[(i, j)] * u[n - 1 + j]
                        + slf.matrices.laplacian[(i, j)] * slf.droop[j].n_q * q[j];
                }
                r[n - 1 + i] = acc;
            }
            Ok((delta, v_od, p))
        };

        for _ in 0..60 {
            eval(self, &u, &mut r)?;
            let rnorm = r.amax();
            if rnorm < 1e-10 {
                break;
            }
            // finite-difference Jacobian
            for c in 0..dim {
                let mut up = u.clone();
                let eps = 1e-7 * (1.0 + u[c].abs());
                up[c] += eps;
                eval(self, &up, &mut r2)?;
                for rr in 0..dim {
                    jac[(rr, c)] = (r2[rr] - r[rr]) / eps;
                }
            }
            let delta_u = jac
                .clone()
                .lu()
                .solve(&r)
                .ok_or_else(|| SimError::EquilibriumFailed("singular Jacobian".into()))?;
            // backtracking line search on the residual norm
            let mut lambda = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let cand = &u - &delta_u * lambda;
                eval(self, &cand, &mut r2)?;
                if r2.amax() < rnorm {
                    u = cand;
                    accepted = true;
                    break;
                }
                lambda *= 0.5;
            }
            if !accepted {
                return Err(SimError::EquilibriumFailed(format!(
                    "stalled at residual {rnorm:.3e}"
                )));
            }
        }
        eval(self, &u, &mut r)?;
        if r.amax() >= 1e-8 {
            return Err(SimError::EquilibriumFailed(format!(
                "residual {:.3e} after 60 iterations",
                r.amax()
            )));
        }
        let mut delta = vec![0.0; n];
        let mut v_od = vec![0.0; n];
        for i in 1..n {
            delta[i] = u[i - 1];
        }
        for i in 0..n {
            v_od[i] = self.refs.v_k + u[n - 1 + i];
        }
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        self.solver.solve(&v_od, &delta, &mut p, &mut q)?;
        Ok((delta, v_od, p, q))
    }

    fn refresh_held_controls(&mut self, t: f64, x: &[f64]) -> Result<()> {
        self.held = None; // compute the pipeline un-held
        let n = self.layout.n;
        let mut diag = StageDiag::new(n);
        let mut scratch = vec![0.0; self.layout.dim()];
        self.derivatives(t, x, &mut scratch, Some(&mut diag))?;
        self.held = Some(HeldControls {
            u_f: (0..n)
                .map(|i| compensator::compose_control(diag.u_safe_f[i], diag.gamma_f[i]))
                .collect(),
            u_v: (0..n)
                .map(|i| compensator::compose_control(diag.u_safe_v[i], diag.gamma_v[i]))
                .collect(),
            abs_xi_f: diag.xi_f.iter().map(|v| v.abs()).collect(),
            abs_xi_v: diag.xi_v.iter().map(|v| v.abs()).collect(),
        });
        Ok(())
    }

    /// Runs the scenario to completion. Deterministic: identical configs
    /// produce identical logs.
    pub fn run(&mut self) -> Result<SimLog> {
        let n = self.layout.n;
        let lay = self.layout;
        let h = self.step;
        let n_steps = (self.horizon / h).round() as usize;
        let mut x = self.initial_state_vector()?;
        let mut log = SimLog::default();
        let mut diag = StageDiag::new(n);
        let mut scratch = vec![0.0; lay.dim()];
        let mut e_buf = vec![0.0; n];
        let mut xi_vec = DVector::<f64>::zeros(n);
        let mut prev_clamp_f = vec![false; n];
        let mut prev_clamp_v = vec![false; n];
        let mut prev_infeas_f = vec![false; n];
        let mut prev_infeas_v = vec![false; n];

        for p in self.attacks_f.iter().chain(self.attacks_v.iter()) {
            if p.onset <= self.horizon {
                log.events.push(Event {
                    time: p.onset,
                    dg: p.dg,
                    channel: p.channel,
                    kind: EventKind::AttackOnset,
                });
            }
        }

        for k in 0..=n_steps {
            let t = k as f64 * h;
            if self.control_hold_steps > 0 && k % self.control_hold_steps == 0 && k < n_steps {
                self.refresh_held_controls(t, &x)?;
            }
            if k % self.sample_every == 0 || k == n_steps {
                self.derivatives(t, &x, &mut scratch, Some(&mut diag))?;
                log.time.push(t);
                let mut row = Vec::with_capacity(n);
                for i in 0..n {
                    let ups_f = x[lay.chain_f(i, 0)];
                    let ups_v = x[lay.chain_v(i, 0)];
                    row.push(DgSample {
                        freq_hz: diag.omega[i] / crate::config::TAU,
                        volt_v: diag.v_od[i],
                        p_w: x[lay.p_meas(i)],
                        q_var: x[lay.q_meas(i)],
                        omega_n: x[lay.omega_n(i)],
                        v_n: x[lay.v_n(i)],
                        xi_f: diag.xi_f[i],
                        xi_v: diag.xi_v[i],
                        u_c_f: diag.xi_f[i],
                        u_safe_f: diag.u_safe_f[i],
                        gamma_f: diag.gamma_f[i],
                        attack_f: diag.attack_f[i],
                        upsilon_f: ups_f,
                        u_c_v: diag.xi_v[i],
                        u_safe_v: diag.u_safe_v[i],
                        gamma_v: diag.gamma_v[i],
                        attack_v: diag.attack_v[i],
                        upsilon_v: ups_v,
                    });
                }
                log.samples.push(row);

                consensus::containment_error_f(
                    &x[lay.omega_n(0)..lay.omega_n(0) + n],
                    &self.refs,
                    &self.droop,
                    &x[lay.p_meas(0)..lay.p_meas(0) + n],
                    &mut e_buf,
                );
                log.e_f_norm.push(e_buf.iter().map(|v| v * v).sum::<f64>().sqrt());
                consensus::containment_error_v(
                    &x[lay.v_n(0)..lay.v_n(0) + n],
                    &self.refs,
                    &self.droop,
                    &x[lay.q_meas(0)..lay.q_meas(0) + n],
                    &mut e_buf,
                );
                log.e_v_norm.push(e_buf.iter().map(|v| v * v).sum::<f64>().sqrt());

                for i in 0..n {
                    xi_vec[i] = diag.xi_f[i];
                }
                let y = self
                    .lg_lu
                    .solve(&xi_vec)
                    .ok_or_else(|| SimError::SingularNetwork("singular L_G".into()))?;
                log.lyap_e.push(xi_vec.dot(&y));

                // clamp / infeasibility events on rising edges
                for i in 0..n {
                    for (channel, cur_cl, prev_cl, cur_inf, prev_inf) in [
                        (
                            AttackChannel::Frequency,
                            diag.clamped_f[i],
                            &mut prev_clamp_f[i],
                            diag.infeasible_f[i],
                            &mut prev_infeas_f[i],
                        ),
                        (
                            AttackChannel::Voltage,
                            diag.clamped_v[i],
                            &mut prev_clamp_v[i],
                            diag.infeasible_v[i],
                            &mut prev_infeas_v[i],
                        ),
                    ] {
                        if cur_cl && !*prev_cl {
                            log.events.push(Event { time: t, dg: i, channel, kind: EventKind::Clamp });
                        }
                        if cur_inf && !*prev_inf {
                            log.events.push(Event {
                                time: t,
                                dg: i,
                                channel,
                                kind: EventKind::Infeasible,
                            });
                        }
                        *prev_cl = cur_cl;
                        *prev_inf = cur_inf;
                    }
                }
            }
            if k < n_steps {
                self.step_rk4(t, &mut x, h)?;
                if let Some(idx) = x.iter().position(|v| !v.is_finite()) {
                    return Err(SimError::NonFinite {
                        time: t + h,
                        what: self.layout.component_name(idx),
                    });
                }
            }
        }
        log.events.sort_by(|a, b| {
            a.time
                .partial_cmp(&b.time)
                .unwrap()
                .then(a.dg.cmp(&b.dg))
        });
        Ok(log)
    }
}

/// Builds an engine and runs the scenario.
pub fn run(cfg: &ScenarioConfig) -> Result<SimLog> {
    Engine::new(cfg)?.run()
}

/// Generic classical RK4 step over a caller-supplied derivative;
/// used by tests and simple auxiliary integrations.
pub fn rk4_step<F>(mut f: F, t: f64, h: f64, x: &mut [f64])
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let dim = x.len();
    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut xt = vec![0.0; dim];
    f(t, x, &mut k1);
    for q in 0..dim {
        xt[q] = x[q] + 0.5 * h * k1[q];
    }
    f(t + 0.5 * h, &xt, &mut k2);
    for q in 0..dim {
        xt[q] = x[q] + 0.5 * h * k2[q];
    }
    f(t + 0.5 * h, &xt, &mut k3);
    for q in 0..dim {
        xt[q] = x[q] + h * k3[q];
    }
    f(t + h, &xt, &mut k4);
    for q in 0..dim {
        x[q] += h / 6.0 * (k1[q] + 2.0 * k2[q] + 2.0 * k3[q] + k4[q]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rk4_scalar_decay_matches_closed_form() {
        let mut x = [1.0];
        rk4_step(|_, x, dx| dx[0] = -x[0], 0.0, 0.1, &mut x);
        assert_relative_eq!(x[0], 0.9048375, max_relative = 1e-9);
        assert!((x[0] - (-0.1f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn rk4_zero_derivative_is_identity() {
        let mut x = [3.5, -2.0];
        rk4_step(|_, _, dx| dx.fill(0.0), 0.0, 0.5, &mut x);
        assert_eq!(x, [3.5, -2.0]);
    }
}
