//! Scenario description: the TOML-backed schema, unit conversions into
//! the internal SI representation, and pre-run validation.
//!
//! Units in the file format: resistances in ohm, inductances in henry,
//! frequencies in Hz where the field name says so (`frequency_hz`,
//! `omega_l_hz`), voltages in volt, gains and rates in SI. Bus and
//! inverter indices are 1-based in files, 0-based internally.

use serde::{Deserialize, Serialize};

use crate::attack::{AttackChannel, AttackProfile};
use crate::comm_graph::{has_path_from_leader, CommGraph};
use crate::compensator::CompensatorParams;
use crate::consensus::{ConsensusGains, LeaderRefs};
use crate::error::{Result, SimError};
use crate::plant::{DroopParams, LineSpec, LoadSpec};
use crate::safety::SafetySpec;

pub const TAU: f64 = 2.0 * std::f64::consts::PI;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub graph: GraphConfig,
    #[serde(default)]
    pub network: NetworkConfig,
    pub lines: Vec<LineConfig>,
    #[serde(default)]
    pub loads: Vec<LoadConfig>,
    pub droop: Vec<DroopConfig>,
    #[serde(default)]
    pub references: ReferencesConfig,
    pub consensus: ConsensusConfig,
    #[serde(default)]
    pub compensator: CompensatorConfig,
    #[serde(default)]
    pub safety: SafetyConfig,
    #[serde(default)]
    pub attacks: Vec<AttackConfig>,
    pub sim: SimConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    pub adjacency: Vec<Vec<f64>>,
    pub pinning: Vec<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// Total bus count; defaults to the highest bus index referenced.
    /// Inverter i sits on bus i (1-based); buses beyond the inverter
    /// count are interior nodes.
    pub n_bus: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineConfig {
    pub from: usize,
    pub to: usize,
    pub resistance: f64,
    pub inductance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadConfig {
    pub bus: usize,
    pub resistance: f64,
    pub inductance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DroopConfig {
    pub m_p: f64,
    pub n_q: f64,
    #[serde(default = "default_omega_c")]
    pub omega_c: f64,
}

fn default_omega_c() -> f64 {
    31.4
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferencesConfig {
    #[serde(default = "default_frequency_hz")]
    pub frequency_hz: f64,
    #[serde(default = "default_voltage")]
    pub voltage: f64,
}

impl Default for ReferencesConfig {
    fn default() -> Self {
        Self { frequency_hz: default_frequency_hz(), voltage: default_voltage() }
    }
}

fn default_frequency_hz() -> f64 {
    60.0
}

fn default_voltage() -> f64 {
    340.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsensusConfig {
    pub c_f: f64,
    pub c_v: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompensatorConfig {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default = "default_nu_f")]
    pub nu_f: f64,
    #[serde(default = "default_nu_v")]
    pub nu_v: f64,
    #[serde(default = "default_alpha")]
    pub alpha_f: f64,
    #[serde(default = "default_alpha")]
    pub alpha_v: f64,
    #[serde(default = "default_gamma")]
    pub gamma: usize,
    #[serde(default = "default_upsilon0")]
    pub upsilon0: f64,
}

impl Default for CompensatorConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            nu_f: default_nu_f(),
            nu_v: default_nu_v(),
            alpha_f: default_alpha(),
            alpha_v: default_alpha(),
            gamma: default_gamma(),
            upsilon0: default_upsilon0(),
        }
    }
}

fn default_true() -> bool {
    true
}
fn default_nu_f() -> f64 {
    350.0
}
fn default_nu_v() -> f64 {
    20.0
}
fn default_alpha() -> f64 {
    0.01
}
fn default_gamma() -> usize {
    2
}
fn default_upsilon0() -> f64 {
    0.01
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafetyConfig {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default = "default_band_hz")]
    pub omega_l_hz: f64,
    #[serde(default = "default_band_hz")]
    pub omega_h_hz: f64,
    #[serde(default = "default_band_v")]
    pub v_l: f64,
    #[serde(default = "default_band_v")]
    pub v_h: f64,
    #[serde(default = "default_eta")]
    pub eta1: f64,
    #[serde(default = "default_eta")]
    pub eta2: f64,
    #[serde(default)]
    pub d_s_p: f64,
    #[serde(default)]
    pub d_s_q: f64,
}

impl Default for SafetyConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            omega_l_hz: default_band_hz(),
            omega_h_hz: default_band_hz(),
            v_l: default_band_v(),
            v_h: default_band_v(),
            eta1: default_eta(),
            eta2: default_eta(),
            d_s_p: 0.0,
            d_s_q: 0.0,
        }
    }
}

fn default_band_hz() -> f64 {
    2.0
}
fn default_band_v() -> f64 {
    34.0
}
fn default_eta() -> f64 {
    10.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub channel: AttackChannel,
    /// inverter index, 1-based
    pub dg: usize,
    pub coefficients: Vec<f64>,
    pub onset: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_step")]
    pub step: f64,
    pub horizon: f64,
    #[serde(default = "default_sample_interval")]
    pub sample_interval: f64,
    #[serde(default)]
    pub initial_state: InitialState,
    /// Zero-order-hold period for the control pipeline; 0 evaluates the
    /// controllers inside every integrator stage (continuous idealization).
    #[serde(default)]
    pub control_period: f64,
}

fn default_step() -> f64 {
    1e-3
}
fn default_sample_interval() -> f64 {
    1e-3
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialState {
    /// Newton-solved secondary-control equilibrium (flat traces until a
    /// disturbance or attack hits).
    #[default]
    Equilibrium,
    /// Zero angles, zero measurements, setpoints at the references.
    Flat,
}

/// One validation finding; errors block a run, warnings do not.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub severity: Severity,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

impl std::fmt::Display for Finding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{tag}: {}", self.message)
    }
}

fn err(msg: impl Into<String>) -> Finding {
    Finding { severity: Severity::Error, message: msg.into() }
}

fn warn(msg: impl Into<String>) -> Finding {
    Finding { severity: Severity::Warning, message: msg.into() }
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| SimError::InvalidConfig(e.to_string()))
    }

    pub fn n_followers(&self) -> usize {
        self.graph.adjacency.len()
    }

    /// Total bus count (explicit or inferred from references).
    pub fn n_bus(&self) -> usize {
        let referenced = self
            .lines
            .iter()
            .flat_map(|l| [l.from, l.to])
            .chain(self.loads.iter().map(|l| l.bus))
            .max()
            .unwrap_or(self.n_followers());
        self.network.n_bus.unwrap_or(referenced.max(self.n_followers()))
    }

    pub fn comm_graph(&self) -> Result<CommGraph> {
        CommGraph::new(self.graph.adjacency.clone(), self.graph.pinning.clone())
    }

    pub fn line_specs(&self) -> Vec<LineSpec> {
        self.lines
            .iter()
            .map(|l| LineSpec {
                from_bus: l.from.saturating_sub(1),
                to_bus: l.to.saturating_sub(1),
                resistance: l.resistance,
                inductance: l.inductance,
            })
            .collect()
    }

    pub fn load_specs(&self) -> Vec<LoadSpec> {
        self.loads
            .iter()
            .map(|l| LoadSpec {
                bus: l.bus.saturating_sub(1),
                resistance: l.resistance,
                inductance: l.inductance,
            })
            .collect()
    }

    pub fn droop_params(&self) -> Vec<DroopParams> {
        self.droop
            .iter()
            .map(|d| DroopParams { m_p: d.m_p, n_q: d.n_q, omega_c: d.omega_c })
            .collect()
    }

    pub fn leader_refs(&self) -> LeaderRefs {
        LeaderRefs { omega_k: TAU * self.references.frequency_hz, v_k: self.references.voltage }
    }

    pub fn consensus_gains(&self) -> ConsensusGains {
        ConsensusGains { c_f: self.consensus.c_f, c_v: self.consensus.c_v }
    }

    pub fn safety_spec(&self) -> SafetySpec {
        SafetySpec {
            omega_l: TAU * self.safety.omega_l_hz,
            omega_h: TAU * self.safety.omega_h_hz,
            v_l: self.safety.v_l,
            v_h: self.safety.v_h,
            eta1: self.safety.eta1,
            eta2: self.safety.eta2,
            d_s: self.safety.d_s_p,
            d_s_v: self.safety.d_s_q,
        }
    }

    pub fn compensator_params(&self, channel: AttackChannel) -> CompensatorParams {
        let (nu, alpha) = match channel {
            AttackChannel::Frequency => (self.compensator.nu_f, self.compensator.alpha_f),
            AttackChannel::Voltage => (self.compensator.nu_v, self.compensator.alpha_v),
        };
        CompensatorParams {
            gamma: self.compensator.gamma,
            nu,
            alpha,
            upsilon0: self.compensator.upsilon0,
        }
    }

    pub fn attack_profiles(&self) -> Vec<AttackProfile> {
        self.attacks
            .iter()
            .map(|a| AttackProfile {
                channel: a.channel,
                dg: a.dg.saturating_sub(1),
                coefficients: a.coefficients.clone(),
                onset: a.onset,
            })
            .collect()
    }

    /// Full pre-run validation. Mirrors what `engine::run` enforces, but
    /// collects everything instead of stopping at the first problem.
    pub fn validate(&self) -> Vec<Finding> {
        let mut out = Vec::new();
        let n = self.n_followers();

        match self.comm_graph() {
            Err(e) => out.push(err(e.to_string())),
            Ok(g) => {
                if !has_path_from_leader(&g) {
                    out.push(err(
                        "leader reference cannot reach every inverter through the communication graph",
                    ));
                }
            }
        }

        if self.droop.len() != n {
            out.push(err(format!(
                "droop table has {} entries for {} inverters",
                self.droop.len(),
                n
            )));
        }
        for (i, d) in self.droop.iter().enumerate() {
            if d.m_p <= 0.0 || d.n_q <= 0.0 || d.omega_c <= 0.0 {
                out.push(err(format!(
                    "droop entry {} must have m_p, n_q, omega_c > 0",
                    i + 1
                )));
            }
        }

        if self.consensus.c_f <= 0.0 || self.consensus.c_v <= 0.0 {
            out.push(err("coupling gains c_f and c_v must be > 0"));
        }
        if let Err(e) = (CompensatorParams {
            gamma: self.compensator.gamma,
            nu: self.compensator.nu_f,
            alpha: self.compensator.alpha_f,
            upsilon0: self.compensator.upsilon0,
        })
        .validate()
        {
            out.push(err(e.to_string()));
        }
        if self.compensator.nu_v <= 0.0 || self.compensator.alpha_v <= 0.0 {
            out.push(err("compensator nu_v and alpha_v must be > 0"));
        }
        if let Err(e) = self.safety_spec().validate() {
            out.push(err(e.to_string()));
        }

        if self.references.frequency_hz <= 0.0 || self.references.voltage <= 0.0 {
            out.push(err("references must be positive"));
        }

        if self.sim.step <= 0.0 {
            out.push(err(format!("sim.step = {} must be > 0", self.sim.step)));
        }
        if self.sim.horizon <= self.sim.step {
            out.push(err("sim.horizon must exceed sim.step"));
        }
        if self.sim.sample_interval < self.sim.step {
            out.push(err("sim.sample_interval must be >= sim.step"));
        }
        if self.sim.control_period > 0.0 && !is_grid_multiple(self.sim.control_period, self.sim.step)
        {
            out.push(err("sim.control_period must be a multiple of sim.step"));
        }

        let n_bus = self.n_bus();
        for l in &self.lines {
            if l.from == 0 || l.to == 0 || l.from > n_bus || l.to > n_bus {
                out.push(err(format!("line {}-{} references an invalid bus", l.from, l.to)));
            }
        }
        for l in &self.loads {
            if l.bus == 0 || l.bus > n_bus {
                out.push(err(format!("load bus {} is invalid", l.bus)));
            }
        }

        for (k, a) in self.attacks.iter().enumerate() {
            let p = AttackProfile {
                channel: a.channel,
                dg: a.dg.saturating_sub(1),
                coefficients: a.coefficients.clone(),
                onset: a.onset,
            };
            if a.dg == 0 || a.dg > n {
                out.push(err(format!("attack {} targets invalid inverter {}", k + 1, a.dg)));
            }
            if a.onset < 0.0 {
                out.push(err(format!("attack {} onset {} is negative", k + 1, a.onset)));
            }
            if !is_grid_multiple(a.onset, self.sim.step) {
                out.push(err(format!(
                    "attack {} onset {} s is not a multiple of the step {} s",
                    k + 1,
                    a.onset,
                    self.sim.step
                )));
            }
            if p.derivative_sup(self.compensator.gamma).is_none() {
                out.push(err(format!(
                    "attack {} has polynomial degree {} exceeding the compensator chain order gamma = {}: its gamma-th derivative is unbounded",
                    k + 1,
                    p.degree(),
                    self.compensator.gamma
                )));
            }
            if p.jump_at_onset() != 0.0 {
                out.push(warn(format!(
                    "attack {} jumps by {} at onset t = {} s",
                    k + 1,
                    p.jump_at_onset(),
                    a.onset
                )));
            }
        }

        // CBF feasibility margin at the nominal state (band centers):
        // the admissible interval collapses when the disturbance margin
        // reaches the class-K pullback at the band edges.
        if self.safety.enabled {
            let s = self.safety_spec();
            for (i, d) in self.droop.iter().enumerate() {
                if d.m_p * s.d_s >= (s.eta1 * s.omega_l).min(s.eta2 * s.omega_h) {
                    out.push(warn(format!(
                        "inverter {}: frequency CBF margin m_p*d_s_p = {:.3} exceeds the band pullback; the filter can go infeasible inside the band",
                        i + 1,
                        d.m_p * s.d_s
                    )));
                }
                if d.n_q * s.d_s_v >= (s.eta1 * s.v_l).min(s.eta2 * s.v_h) {
                    out.push(warn(format!(
                        "inverter {}: voltage CBF margin n_q*d_s_q = {:.3} exceeds the band pullback; the filter can go infeasible inside the band",
                        i + 1,
                        d.n_q * s.d_s_v
                    )));
                }
            }
        }

        out
    }

    /// Convenience: true when no Error-severity findings exist.
    pub fn is_runnable(&self) -> bool {
        self.validate().iter().all(|f| f.severity != Severity::Error)
    }
}

fn is_grid_multiple(value: f64, step: f64) -> bool {
    if step <= 0.0 {
        return false;
    }
    let k = value / step;
    (k - k.round()).abs() <= 1e-6 * k.abs().max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"
        [graph]
        adjacency = [[0.0, 1.0], [1.0, 0.0]]
        pinning = [1.0, 0.0]

        [[lines]]
        from = 1
        to = 2
        resistance = 0.23
        inductance = 318e-6

        [[loads]]
        bus = 1
        resistance = 3.0
        inductance = 6.4e-3

        [[droop]]
        m_p = 9.4e-5
        n_q = 1.3e-3

        [[droop]]
        m_p = 9.4e-5
        n_q = 1.3e-3

        [consensus]
        c_f = 20.0
        c_v = 10.0

        [sim]
        step = 1e-4
        horizon = 0.5
    "#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = ScenarioConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.n_followers(), 2);
        assert_eq!(cfg.n_bus(), 2);
        assert_eq!(cfg.droop[0].omega_c, 31.4);
        assert_eq!(cfg.references.frequency_hz, 60.0);
        assert_eq!(cfg.compensator.gamma, 2);
        assert_eq!(cfg.safety.eta1, 10.0);
        assert_eq!(cfg.sim.initial_state, InitialState::Equilibrium);
        let findings = cfg.validate();
        assert!(
            findings.iter().all(|f| f.severity != Severity::Error),
            "unexpected errors: {findings:?}"
        );
    }

    #[test]
    fn unreachable_leader_is_an_error() {
        let mut cfg = ScenarioConfig::from_toml_str(MINIMAL).unwrap();
        cfg.graph.adjacency = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        let findings = cfg.validate();
        assert!(findings
            .iter()
            .any(|f| f.severity == Severity::Error && f.message.contains("cannot reach")));
    }

    #[test]
    fn cubic_attack_with_gamma_two_is_an_error() {
        let mut cfg = ScenarioConfig::from_toml_str(MINIMAL).unwrap();
        cfg.attacks.push(AttackConfig {
            channel: AttackChannel::Frequency,
            dg: 1,
            coefficients: vec![0.0, 0.0, 0.0, 1.0],
            onset: 0.1,
        });
        let findings = cfg.validate();
        assert!(findings
            .iter()
            .any(|f| f.severity == Severity::Error && f.message.contains("gamma")));
    }

    #[test]
    fn onset_off_grid_is_an_error_and_jump_is_a_warning() {
        let mut cfg = ScenarioConfig::from_toml_str(MINIMAL).unwrap();
        cfg.attacks.push(AttackConfig {
            channel: AttackChannel::Voltage,
            dg: 2,
            coefficients: vec![5.0, 0.0, 1.0],
            onset: 0.10005,
        });
        let findings = cfg.validate();
        assert!(findings
            .iter()
            .any(|f| f.severity == Severity::Error && f.message.contains("multiple of the step")));
        assert!(findings
            .iter()
            .any(|f| f.severity == Severity::Warning && f.message.contains("jumps by 5")));
    }

    #[test]
    fn nonpositive_gains_are_errors() {
        let mut cfg = ScenarioConfig::from_toml_str(MINIMAL).unwrap();
        cfg.consensus.c_f = 0.0;
        assert!(!cfg.is_runnable());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let bad = format!("{MINIMAL}\n[extra]\nfoo = 1\n");
        assert!(ScenarioConfig::from_toml_str(&bad).is_err());
    }
}
