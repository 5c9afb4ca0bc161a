//! Dense simulation output: uniformly sampled time series plus discrete
//! events, with an exact-round-trip CSV serialization.

use std::io::{BufRead, Write};

use crate::attack::AttackChannel;
use crate::error::{Result, SimError};

/// Per-inverter, per-sample columns. One `DgSample` block per inverter
/// per time stamp.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DgSample {
    /// Hz (reporting converts angular frequency at the logging boundary)
    pub freq_hz: f64,
    /// volt, inverter terminal voltage magnitude
    pub volt_v: f64,
    /// watt, filtered active power
    pub p_w: f64,
    /// var, filtered reactive power
    pub q_var: f64,
    /// rad/s, frequency setpoint
    pub omega_n: f64,
    /// volt, voltage setpoint
    pub v_n: f64,
    pub xi_f: f64,
    pub xi_v: f64,
    pub u_c_f: f64,
    pub u_safe_f: f64,
    pub gamma_f: f64,
    pub attack_f: f64,
    pub upsilon_f: f64,
    pub u_c_v: f64,
    pub u_safe_v: f64,
    pub gamma_v: f64,
    pub attack_v: f64,
    pub upsilon_v: f64,
}

pub const DG_FIELDS: [&str; 18] = [
    "freq_hz", "volt_v", "p_w", "q_var", "omega_n", "v_n", "xi_f", "xi_v", "u_c_f", "u_safe_f",
    "gamma_f", "attack_f", "upsilon_f", "u_c_v", "u_safe_v", "gamma_v", "attack_v", "upsilon_v",
];

impl DgSample {
    fn fields(&self) -> [f64; 18] {
        [
            self.freq_hz,
            self.volt_v,
            self.p_w,
            self.q_var,
            self.omega_n,
            self.v_n,
            self.xi_f,
            self.xi_v,
            self.u_c_f,
            self.u_safe_f,
            self.gamma_f,
            self.attack_f,
            self.upsilon_f,
            self.u_c_v,
            self.u_safe_v,
            self.gamma_v,
            self.attack_v,
            self.upsilon_v,
        ]
    }

    fn from_fields(f: &[f64]) -> Self {
        Self {
            freq_hz: f[0],
            volt_v: f[1],
            p_w: f[2],
            q_var: f[3],
            omega_n: f[4],
            v_n: f[5],
            xi_f: f[6],
            xi_v: f[7],
            u_c_f: f[8],
            u_safe_f: f[9],
            gamma_f: f[10],
            attack_f: f[11],
            upsilon_f: f[12],
            u_c_v: f[13],
            u_safe_v: f[14],
            gamma_v: f[15],
            attack_v: f[16],
            upsilon_v: f[17],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Clamp,
    Infeasible,
    AttackOnset,
}

impl EventKind {
    fn as_str(&self) -> &'static str {
        match self {
            EventKind::Clamp => "clamp",
            EventKind::Infeasible => "infeasible",
            EventKind::AttackOnset => "attack_onset",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    /// inverter index, 0-based in memory (1-based in files)
    pub dg: usize,
    pub channel: AttackChannel,
    pub kind: EventKind,
}

/// Uniformly sampled simulation log.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimLog {
    pub time: Vec<f64>,
    /// `samples[k][i]`: sample k, inverter i
    pub samples: Vec<Vec<DgSample>>,
    pub e_f_norm: Vec<f64>,
    pub e_v_norm: Vec<f64>,
    pub lyap_e: Vec<f64>,
    pub events: Vec<Event>,
}

impl SimLog {
    pub fn n_dg(&self) -> usize {
        self.samples.first().map_or(0, |s| s.len())
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    /// Column-extraction helper over one inverter.
    pub fn column<F: Fn(&DgSample) -> f64>(&self, dg: usize, f: F) -> Vec<f64> {
        self.samples.iter().map(|row| f(&row[dg])).collect()
    }

    pub fn header(n_dg: usize) -> String {
        let mut cols = vec!["time_s".to_string()];
        for i in 0..n_dg {
            for f in DG_FIELDS {
                cols.push(format!("dg{}_{f}", i + 1));
            }
        }
        cols.push("e_f_norm".into());
        cols.push("e_v_norm".into());
        cols.push("lyap_e".into());
        cols.join(",")
    }

    /// Writes the time series as CSV. Floats use the shortest
    /// representation that round-trips exactly, so parsing the file
    /// reproduces the in-memory log bit for bit.
    pub fn write_timeseries<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.n_dg();
        writeln!(w, "{}", Self::header(n))?;
        let mut line = String::with_capacity(32 * (1 + 18 * n + 3));
        for k in 0..self.len() {
            line.clear();
            push_f64(&mut line, self.time[k]);
            for dg in &self.samples[k] {
                for v in dg.fields() {
                    line.push(',');
                    push_f64(&mut line, v);
                }
            }
            line.push(',');
            push_f64(&mut line, self.e_f_norm[k]);
            line.push(',');
            push_f64(&mut line, self.e_v_norm[k]);
            line.push(',');
            push_f64(&mut line, self.lyap_e[k]);
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_timeseries<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| SimError::MalformedLog("empty file".into()))?
            .map_err(|e| SimError::MalformedLog(e.to_string()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.first() != Some(&"time_s") {
            return Err(SimError::MalformedLog("missing time_s column".into()));
        }
        if (cols.len() - 4) % 18 != 0 {
            return Err(SimError::MalformedLog(format!(
                "unexpected column count {}",
                cols.len()
            )));
        }
        let n_dg = (cols.len() - 4) / 18;
        let mut log = SimLog::default();
        for (lineno, line) in lines.enumerate() {
            let line = line.map_err(|e| SimError::MalformedLog(e.to_string()))?;
            if line.is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| {
                    SimError::MalformedLog(format!("line {}: {e}", lineno + 2))
                })?;
            if vals.len() != cols.len() {
                return Err(SimError::MalformedLog(format!(
                    "line {}: {} fields, expected {}",
                    lineno + 2,
                    vals.len(),
                    cols.len()
                )));
            }
            log.time.push(vals[0]);
            let mut row = Vec::with_capacity(n_dg);
            for i in 0..n_dg {
                row.push(DgSample::from_fields(&vals[1 + 18 * i..1 + 18 * (i + 1)]));
            }
            log.samples.push(row);
            log.e_f_norm.push(vals[cols.len() - 3]);
            log.e_v_norm.push(vals[cols.len() - 2]);
            log.lyap_e.push(vals[cols.len() - 1]);
        }
        Ok(log)
    }

    pub fn write_events<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "time_s,dg,channel,kind")?;
        for e in &self.events {
            let ch = match e.channel {
                AttackChannel::Frequency => "frequency",
                AttackChannel::Voltage => "voltage",
            };
            let mut t = String::new();
            push_f64(&mut t, e.time);
            writeln!(w, "{t},{},{ch},{}", e.dg + 1, e.kind.as_str())?;
        }
        Ok(())
    }
}

fn push_f64(buf: &mut String, v: f64) {
    use std::fmt::Write as _;
    // `{}` prints the shortest string that parses back to the same f64
    let _ = write!(buf, "{v}");
}
