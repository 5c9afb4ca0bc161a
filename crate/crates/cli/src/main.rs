//! Command-line front end: validate scenario configs, run single
//! simulations or parameter sweeps, and emit CSV time series plus a
//! human-readable summary.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

use mgsim_core::config::{ScenarioConfig, Severity};
use mgsim_core::log::SimLog;
use mgsim_core::metrics;
use mgsim_core::SimError;

#[derive(Parser)]
#[command(name = "mgsim", about = "Microgrid secondary-control simulator", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a scenario config and report findings.
    Validate { config: PathBuf },
    /// Run one scenario and write timeseries.csv, events.csv,
    /// summary.txt, and manifest.json.
    Run {
        config: PathBuf,
        /// Output directory (default: $MGSIM_OUT or ./out, plus the
        /// config file stem).
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run the scenario once per value of a swept parameter.
    Sweep {
        config: PathBuf,
        /// Parameter to sweep: a TOML path like `compensator.nu_f`, or a
        /// shorthand (nu_f, nu_v, c_f, c_v, step, omega_c, ...).
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Print metric deltas between two timeseries.csv files.
    Compare { log_a: PathBuf, log_b: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { config } => cmd_validate(&config),
        Command::Run { config, out } => cmd_run(&config, out.as_deref()),
        Command::Sweep { config, param, values, out } => {
            cmd_sweep(&config, &param, &values, out.as_deref())
        }
        Command::Compare { log_a, log_b } => cmd_compare(&log_a, &log_b),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let validation = e
                .downcast_ref::<SimError>()
                .map(SimError::is_validation)
                .unwrap_or(false);
            if validation {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn load_config(path: &Path) -> anyhow::Result<(ScenarioConfig, String, Vec<u8>)> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let text = String::from_utf8(bytes.clone()).context("config is not UTF-8")?;
    let cfg = ScenarioConfig::from_toml_str(&text)?;
    let digest = hex::encode(Sha256::digest(&bytes));
    Ok((cfg, digest, bytes))
}

fn cmd_validate(path: &Path) -> anyhow::Result<ExitCode> {
    let (cfg, digest, _) = load_config(path)?;
    let findings = cfg.validate();
    if findings.is_empty() {
        println!("{}: ok (sha256 {digest})", path.display());
        return Ok(ExitCode::SUCCESS);
    }
    for f in &findings {
        println!("{f}");
    }
    let errors = findings.iter().filter(|f| f.severity == Severity::Error).count();
    if errors > 0 {
        println!("{errors} error(s)");
        Ok(ExitCode::from(1))
    } else {
        Ok(ExitCode::SUCCESS)
    }
}

fn output_dir(explicit: Option<&Path>, config: &Path) -> PathBuf {
    if let Some(dir) = explicit {
        return dir.to_path_buf();
    }
    let root = std::env::var_os("MGSIM_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("out"));
    let stem = config.file_stem().map(|s| s.to_string_lossy().into_owned());
    match stem {
        Some(s) => root.join(s),
        None => root,
    }
}

/// Post-run metrics bundle reused by run, sweep, and the manifest.
#[derive(serde::Serialize)]
struct Summary {
    runtime_s: f64,
    samples: usize,
    violations_total: usize,
    first_violation_s: Option<f64>,
    worst_freq_excursion_hz: f64,
    worst_volt_excursion_v: f64,
    e_f_ultimate_bound: f64,
    e_f_settle_time_s: Option<f64>,
    e_v_ultimate_bound: f64,
    power_sharing_error_tail: f64,
    clamp_events: usize,
    infeasible_events: usize,
}

fn summarize(cfg: &ScenarioConfig, log: &SimLog, runtime_s: f64) -> Summary {
    let spec = cfg.safety_spec();
    let refs = cfg.leader_refs();
    let report = metrics::safety_report(log, &spec, &refs);
    let tail = 0.2 * cfg.sim.horizon;
    let ef = metrics::uub_estimate(&log.time, &log.e_f_norm, tail, 0.05);
    let ev = metrics::uub_estimate(&log.time, &log.e_v_norm, tail, 0.05);
    let t_end = *log.time.last().unwrap_or(&0.0);
    let sharing =
        metrics::power_sharing_error(log, &cfg.droop_params(), t_end - tail, t_end + 1.0);
    let clamp_events = log
        .events
        .iter()
        .filter(|e| e.kind == mgsim_core::log::EventKind::Clamp)
        .count();
    let infeasible_events = log
        .events
        .iter()
        .filter(|e| e.kind == mgsim_core::log::EventKind::Infeasible)
        .count();
    Summary {
        runtime_s,
        samples: log.len(),
        violations_total: report.total_violations(),
        first_violation_s: report.first_violation(),
        worst_freq_excursion_hz: report
            .dg
            .iter()
            .map(|d| d.worst_freq_excursion_hz)
            .fold(0.0, f64::max),
        worst_volt_excursion_v: report
            .dg
            .iter()
            .map(|d| d.worst_volt_excursion_v)
            .fold(0.0, f64::max),
        e_f_ultimate_bound: ef.bound,
        e_f_settle_time_s: ef.settle_time,
        e_v_ultimate_bound: ev.bound,
        power_sharing_error_tail: sharing,
        clamp_events,
        infeasible_events,
    }
}

fn write_summary_text(
    path: &Path,
    cfg: &ScenarioConfig,
    log: &SimLog,
    s: &Summary,
) -> anyhow::Result<()> {
    let spec = cfg.safety_spec();
    let refs = cfg.leader_refs();
    let report = metrics::safety_report(log, &spec, &refs);
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "samples: {} over {} s", s.samples, cfg.sim.horizon)?;
    writeln!(w, "runtime: {:.2} s", s.runtime_s)?;
    writeln!(w, "safety violations (total samples): {}", s.violations_total)?;
    match s.first_violation_s {
        Some(t) => writeln!(w, "first violation: {t:.4} s")?,
        None => writeln!(w, "first violation: none")?,
    }
    for (i, d) in report.dg.iter().enumerate() {
        writeln!(
            w,
            "  dg{}: freq_violations={} volt_violations={} worst_freq_exc={:.4} Hz worst_volt_exc={:.3} V time_outside={:.4} s",
            i + 1,
            d.freq_violations,
            d.volt_violations,
            d.worst_freq_excursion_hz,
            d.worst_volt_excursion_v,
            d.time_outside
        )?;
    }
    writeln!(w, "e_f ultimate bound (tail {:.1} s): {:.6e} rad/s", 0.2 * cfg.sim.horizon, s.e_f_ultimate_bound)?;
    match s.e_f_settle_time_s {
        Some(t) => writeln!(w, "e_f settle time: {t:.4} s")?,
        None => writeln!(w, "e_f settle time: unsettled")?,
    }
    writeln!(w, "e_v ultimate bound: {:.6e} V", s.e_v_ultimate_bound)?;
    writeln!(w, "power sharing error (tail): {:.6}", s.power_sharing_error_tail)?;
    writeln!(w, "clamp events: {}, infeasible events: {}", s.clamp_events, s.infeasible_events)?;
    Ok(())
}

#[derive(serde::Serialize)]
struct Manifest {
    config_path: String,
    config_sha256: String,
    output_dir: String,
    files: Vec<String>,
    summary: Summary,
}

fn run_scenario_to_dir(
    cfg: &ScenarioConfig,
    dir: &Path,
    config_path: &Path,
    digest: &str,
) -> anyhow::Result<Summary> {
    fs::create_dir_all(dir)?;
    let started = Instant::now();
    let log = mgsim_core::run(cfg)?;
    let runtime_s = started.elapsed().as_secs_f64();

    let ts_path = dir.join("timeseries.csv");
    log.write_timeseries(BufWriter::new(fs::File::create(&ts_path)?))?;
    let ev_path = dir.join("events.csv");
    log.write_events(BufWriter::new(fs::File::create(&ev_path)?))?;

    let summary = summarize(cfg, &log, runtime_s);
    let sum_path = dir.join("summary.txt");
    write_summary_text(&sum_path, cfg, &log, &summary)?;

    let manifest = Manifest {
        config_path: config_path.display().to_string(),
        config_sha256: digest.to_string(),
        output_dir: dir.display().to_string(),
        files: vec![
            "timeseries.csv".into(),
            "events.csv".into(),
            "summary.txt".into(),
            "manifest.json".into(),
        ],
        summary,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest.summary)
}

fn cmd_run(config: &Path, out: Option<&Path>) -> anyhow::Result<ExitCode> {
    let (cfg, digest, _) = load_config(config)?;
    let findings = cfg.validate();
    for f in findings.iter().filter(|f| f.severity == Severity::Warning) {
        eprintln!("{f}");
    }
    let errors: Vec<_> = findings.iter().filter(|f| f.severity == Severity::Error).collect();
    if !errors.is_empty() {
        for f in &errors {
            eprintln!("{f}");
        }
        bail!(SimError::InvalidConfig(format!("{} validation error(s)", errors.len())));
    }
    let dir = output_dir(out, config);
    let summary = run_scenario_to_dir(&cfg, &dir, config, &digest)?;
    println!(
        "wrote {} ({} samples, {} violations, runtime {:.2} s)",
        dir.display(),
        summary.samples,
        summary.violations_total,
        summary.runtime_s
    );
    Ok(ExitCode::SUCCESS)
}

/// Expands a sweep shorthand to a full TOML path.
fn expand_param(param: &str) -> String {
    match param {
        "nu_f" | "nu_v" | "alpha_f" | "alpha_v" | "gamma" | "upsilon0" => {
            format!("compensator.{param}")
        }
        "c_f" | "c_v" => format!("consensus.{param}"),
        "eta1" | "eta2" | "d_s_p" | "d_s_q" => format!("safety.{param}"),
        "step" | "horizon" | "sample_interval" | "control_period" => format!("sim.{param}"),
        other => other.to_string(),
    }
}

/// Applies `path = value` to a parsed TOML document. The special path
/// `droop.omega_c` fans out to every inverter.
fn apply_override(doc: &mut toml::Value, path: &str, value: f64) -> anyhow::Result<()> {
    let parts: Vec<&str> = path.split('.').collect();
    if parts.len() == 2 && parts[0] == "droop" {
        let arr = doc
            .get_mut("droop")
            .and_then(|v| v.as_array_mut())
            .context("no droop table")?;
        for entry in arr {
            set_key(entry, parts[1], value)?;
        }
        return Ok(());
    }
    let mut cur = doc;
    for p in &parts[..parts.len() - 1] {
        cur = cur
            .get_mut(*p)
            .with_context(|| format!("no table `{p}` in config"))?;
    }
    set_key(cur, parts[parts.len() - 1], value)
}

fn set_key(table: &mut toml::Value, key: &str, value: f64) -> anyhow::Result<()> {
    let t = table.as_table_mut().context("not a table")?;
    let existing = t.get(key);
    let v = match existing {
        Some(toml::Value::Integer(_)) => toml::Value::Integer(value.round() as i64),
        _ => toml::Value::Float(value),
    };
    t.insert(key.to_string(), v);
    Ok(())
}

fn cmd_sweep(
    config: &Path,
    param: &str,
    values: &[f64],
    out: Option<&Path>,
) -> anyhow::Result<ExitCode> {
    let (base_cfg, digest, bytes) = load_config(config)?;
    drop(base_cfg);
    let text = String::from_utf8(bytes)?;
    let full_path = expand_param(param);
    let root = output_dir(out, config);
    fs::create_dir_all(&root)?;

    let mut rows = Vec::new();
    for &v in values {
        let mut doc: toml::Value = toml::from_str(&text)?;
        apply_override(&mut doc, &full_path, v)?;
        let cfg: ScenarioConfig = doc
            .try_into()
            .map_err(|e: toml::de::Error| SimError::InvalidConfig(e.to_string()))?;
        let errors: Vec<_> = cfg
            .validate()
            .into_iter()
            .filter(|f| f.severity == Severity::Error)
            .collect();
        if !errors.is_empty() {
            bail!(SimError::InvalidConfig(format!(
                "{full_path} = {v}: {}",
                errors
                    .iter()
                    .map(|f| f.message.clone())
                    .collect::<Vec<_>>()
                    .join("; ")
            )));
        }
        let dir = root.join(format!("{param}_{v}"));
        let summary = run_scenario_to_dir(&cfg, &dir, config, &digest)?;
        println!(
            "{full_path} = {v}: e_f bound {:.6e}, violations {}",
            summary.e_f_ultimate_bound, summary.violations_total
        );
        rows.push((v, summary));
    }

    let mut w = BufWriter::new(fs::File::create(root.join("sweep_summary.csv"))?);
    writeln!(
        w,
        "{param},e_f_ultimate_bound,e_v_ultimate_bound,violations_total,first_violation_s,power_sharing_error_tail"
    )?;
    for (v, s) in &rows {
        writeln!(
            w,
            "{v},{},{},{},{},{}",
            s.e_f_ultimate_bound,
            s.e_v_ultimate_bound,
            s.violations_total,
            s.first_violation_s.map_or(String::from(""), |t| t.to_string()),
            s.power_sharing_error_tail
        )?;
    }
    println!("wrote {}", root.join("sweep_summary.csv").display());
    Ok(ExitCode::SUCCESS)
}

/// Log-intrinsic metrics for compare (no config needed).
struct LogStats {
    duration: f64,
    samples: usize,
    e_f_final: f64,
    e_f_max: f64,
    e_v_final: f64,
    lyap_max: f64,
    freq_min: f64,
    freq_max: f64,
    volt_min: f64,
    volt_max: f64,
}

fn log_stats(log: &SimLog) -> LogStats {
    let mut freq_min = f64::INFINITY;
    let mut freq_max = f64::NEG_INFINITY;
    let mut volt_min = f64::INFINITY;
    let mut volt_max = f64::NEG_INFINITY;
    for row in &log.samples {
        for s in row {
            freq_min = freq_min.min(s.freq_hz);
            freq_max = freq_max.max(s.freq_hz);
            volt_min = volt_min.min(s.volt_v);
            volt_max = volt_max.max(s.volt_v);
        }
    }
    LogStats {
        duration: log.time.last().copied().unwrap_or(0.0),
        samples: log.len(),
        e_f_final: log.e_f_norm.last().copied().unwrap_or(0.0),
        e_f_max: log.e_f_norm.iter().cloned().fold(0.0, f64::max),
        e_v_final: log.e_v_norm.last().copied().unwrap_or(0.0),
        lyap_max: log.lyap_e.iter().cloned().fold(0.0, f64::max),
        freq_min,
        freq_max,
        volt_min,
        volt_max,
    }
}

fn cmd_compare(a: &Path, b: &Path) -> anyhow::Result<ExitCode> {
    let log_a = SimLog::read_timeseries(BufReader::new(
        fs::File::open(a).with_context(|| format!("opening {}", a.display()))?,
    ))?;
    let log_b = SimLog::read_timeseries(BufReader::new(
        fs::File::open(b).with_context(|| format!("opening {}", b.display()))?,
    ))?;
    let sa = log_stats(&log_a);
    let sb = log_stats(&log_b);
    println!("metric, {}, {}, delta", a.display(), b.display());
    let rows = [
        ("duration_s", sa.duration, sb.duration),
        ("samples", sa.samples as f64, sb.samples as f64),
        ("e_f_final", sa.e_f_final, sb.e_f_final),
        ("e_f_max", sa.e_f_max, sb.e_f_max),
        ("e_v_final", sa.e_v_final, sb.e_v_final),
        ("lyap_e_max", sa.lyap_max, sb.lyap_max),
        ("freq_min_hz", sa.freq_min, sb.freq_min),
        ("freq_max_hz", sa.freq_max, sb.freq_max),
        ("volt_min_v", sa.volt_min, sb.volt_min),
        ("volt_max_v", sa.volt_max, sb.volt_max),
    ];
    for (name, va, vb) in rows {
        println!("{name}, {va}, {vb}, {}", vb - va);
    }
    Ok(ExitCode::SUCCESS)
}
