//! `motion-studio`: headless driver for the motion studio.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use motion_studio_core::archetypes::Archetype;
use motion_studio_core::moa_metrics::{analyze, metric_series, IntendedTonalities, MetricConfig};
use motion_studio_core::session::{replay, REPLAY_TAIL};
use motion_studio_core::sim_exec::{play_sequence, ControllerGains, SimState, DEFAULT_RECORD_RATE};
use motion_studio_core::teleop::EventLog;
use motion_studio_core::{BindingMap, RobotModel, Sequence, TeleopConfig, TrajectoryLog};
use motion_studio_server::{ServerConfig, DEFAULT_BROADCAST_RATE, DEFAULT_PORT};

/// Environment variable naming the default metric config file.
const CONFIG_ENV: &str = "MOTION_STUDIO_CONFIG";

#[derive(Parser)]
#[command(
    name = "motion-studio",
    version,
    about = "Expressive arm motion: serve, play, replay, analyze, validate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the simulation server (WebSocket at /ws, optional framed TCP).
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        #[arg(long, default_value_t = DEFAULT_PORT)]
        port: u16,
        /// Also listen for length-prefixed TCP clients on this port.
        #[arg(long)]
        tcp_port: Option<u16>,
        /// Snapshot broadcast rate (Hz).
        #[arg(long, default_value_t = DEFAULT_BROADCAST_RATE)]
        rate: f64,
        /// Model file or built-in name.
        #[arg(long, default_value = "gen3lite-like")]
        model: String,
        #[arg(long)]
        gains: Option<PathBuf>,
        #[arg(long)]
        bindings: Option<PathBuf>,
        #[arg(long)]
        teleop_config: Option<PathBuf>,
        /// Metric config used by `analyze` requests.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Execute trajectories unpaced instead of in real time.
        #[arg(long)]
        fast: bool,
    },
    /// Execute a sequence on the simulated arm and write the log.
    Play {
        sequence: PathBuf,
        /// Model file or built-in name; defaults to the sequence's robot.
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        gains: Option<PathBuf>,
        /// Output CSV; metadata goes next to it as `<name>.meta.json`.
        #[arg(long, short)]
        out: PathBuf,
        /// Recording rate (Hz).
        #[arg(long, default_value_t = DEFAULT_RECORD_RATE)]
        rate: f64,
    },
    /// Compute effort metrics and tonalities for a log.
    Analyze {
        log: PathBuf,
        /// Model file or built-in name; defaults to the log's model.
        #[arg(long)]
        model: Option<String>,
        /// Metric config; falls back to $MOTION_STUDIO_CONFIG, then defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Report JSON output.
        #[arg(long, short)]
        out: PathBuf,
        /// Text rendering output; printed to stdout when absent.
        #[arg(long)]
        text: Option<PathBuf>,
        /// Metric time series CSV (t, speed, jerk magnitude).
        #[arg(long)]
        series: Option<PathBuf>,
        /// Step 1 notes: subjective impressions.
        #[arg(long)]
        impressions: Option<String>,
        /// Step 3 notes: construction of meaning.
        #[arg(long)]
        meaning: Option<String>,
        /// JSON file with the intended tonalities, e.g. {"spatial": "Unidirectional"}.
        #[arg(long)]
        intended: Option<PathBuf>,
    },
    /// Re-simulate a recorded teleop event stream.
    Replay {
        events: PathBuf,
        #[arg(long, default_value = "gen3lite-like")]
        model: String,
        #[arg(long)]
        gains: Option<PathBuf>,
        #[arg(long)]
        bindings: Option<PathBuf>,
        #[arg(long)]
        teleop_config: Option<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
        /// Seconds simulated after the last event.
        #[arg(long, default_value_t = REPLAY_TAIL)]
        tail: f64,
        #[arg(long, default_value_t = DEFAULT_RECORD_RATE)]
        rate: f64,
    },
    /// Check files against their schemas.
    Validate {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Kind::Auto)]
        kind: Kind,
        /// Model for sequence and gains checks; defaults to the sequence's robot.
        #[arg(long)]
        model: Option<String>,
    },
    /// Write a synthetic archetype log (gentle-direct, darting, collapsing-heavy).
    Synth {
        archetype: String,
        #[arg(long, short)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Kind {
    Auto,
    Model,
    Sequence,
    Events,
    Bindings,
    Gains,
    Teleop,
    Metrics,
    Log,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read `{}`", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write `{}`", path.display()))
}

/// A model file path, or the name of a built-in model.
fn resolve_model(arg: Option<&str>, fallback: Option<&str>) -> Result<RobotModel> {
    let name = arg.or(fallback).filter(|s| !s.is_empty()).ok_or_else(|| {
        anyhow!(
            "no model given; pass --model <file or one of {}>",
            builtins()
        )
    })?;
    let path = Path::new(name);
    if path.is_file() {
        return RobotModel::from_json(&read(path)?)
            .with_context(|| format!("invalid model `{}`", path.display()));
    }
    RobotModel::builtin(name).ok_or_else(|| {
        anyhow!(
            "model `{name}` is neither a file nor a built-in ({})",
            builtins()
        )
    })
}

fn builtins() -> String {
    RobotModel::BUILTIN_NAMES.join(", ")
}

fn load_gains(path: Option<&Path>, model: &RobotModel) -> Result<ControllerGains> {
    let gains = match path {
        Some(p) => ControllerGains::from_json(&read(p)?)
            .with_context(|| format!("invalid gains `{}`", p.display()))?,
        None => ControllerGains::for_model(model),
    };
    gains.validate(model)?;
    Ok(gains)
}

fn load_bindings(path: Option<&Path>) -> Result<BindingMap> {
    match path {
        Some(p) => BindingMap::from_json(&read(p)?)
            .with_context(|| format!("invalid bindings `{}`", p.display())),
        None => Ok(BindingMap::default_gamepad()),
    }
}

fn load_teleop(path: Option<&Path>) -> Result<TeleopConfig> {
    match path {
        Some(p) => TeleopConfig::from_json(&read(p)?)
            .with_context(|| format!("invalid teleop config `{}`", p.display())),
        None => Ok(TeleopConfig::default()),
    }
}

fn load_metrics(path: Option<&Path>) -> Result<MetricConfig> {
    let env = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
    match path.map(Path::to_path_buf).or(env) {
        Some(p) => MetricConfig::from_json(&read(&p)?)
            .with_context(|| format!("invalid metric config `{}`", p.display())),
        None => Ok(MetricConfig::default()),
    }
}

fn load_sequence(path: &Path) -> Result<Sequence> {
    Sequence::from_json(&read(path)?)
        .with_context(|| format!("invalid sequence `{}`", path.display()))
}

fn save_log(log: &TrajectoryLog, out: &Path) -> Result<()> {
    log.save(out)
        .with_context(|| format!("cannot write log `{}`", out.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Serve {
            host,
            port,
            tcp_port,
            rate,
            model,
            gains,
            bindings,
            teleop_config,
            config,
            fast,
        } => {
            let model = resolve_model(Some(&model), None)?;
            let mut cfg = ServerConfig::new(model.clone());
            cfg.host = host;
            cfg.port = port;
            cfg.tcp_port = tcp_port;
            cfg.broadcast_rate = rate;
            cfg.fast = fast;
            cfg.gains = load_gains(gains.as_deref(), &model)?;
            cfg.bindings = load_bindings(bindings.as_deref())?;
            cfg.teleop = load_teleop(teleop_config.as_deref())?;
            cfg.metrics = load_metrics(config.as_deref())?;
            let handle = motion_studio_server::start(cfg)?;
            println!("serving `{}` on {}", model.name, handle.ws_url());
            if let Some(a) = handle.tcp_addr() {
                println!("framed TCP on {a}");
            }
            handle.wait();
            Ok(())
        }
        Command::Play {
            sequence,
            model,
            gains,
            out,
            rate,
        } => {
            let seq = load_sequence(&sequence)?;
            let model = resolve_model(model.as_deref(), Some(&seq.robot))?;
            seq.validate(&model).with_context(|| {
                format!(
                    "sequence `{}` does not fit `{}`",
                    sequence.display(),
                    model.name
                )
            })?;
            let gains = load_gains(gains.as_deref(), &model)?;
            let (log, _) = play_sequence(&SimState::initial(&model), &model, &gains, &seq, rate)?;
            save_log(&log, &out)?;
            println!("wrote {} rows to {}", log.rows.len(), out.display());
            Ok(())
        }
        Command::Analyze {
            log,
            model,
            config,
            out,
            text,
            series,
            impressions,
            meaning,
            intended,
        } => {
            let traj = TrajectoryLog::load(&log)
                .with_context(|| format!("cannot load log `{}`", log.display()))?;
            let model = resolve_model(model.as_deref(), Some(&traj.model))?;
            let cfg = load_metrics(config.as_deref())?;
            let intended = intended
                .map(|p| -> Result<IntendedTonalities> {
                    serde_json::from_str(&read(&p)?)
                        .with_context(|| format!("invalid intended tonalities `{}`", p.display()))
                })
                .transpose()?;
            let report = analyze(&traj, &model, &cfg, impressions, meaning, intended)
                .with_context(|| format!("cannot analyze `{}`", log.display()))?;
            write(&out, &(report.to_json() + "\n"))?;
            let rendered = report.render_text();
            match text {
                Some(p) => write(&p, &rendered)?,
                None => print!("{rendered}"),
            }
            if let Some(p) = series {
                write(&p, &metric_series(&traj, &model, &cfg)?.to_csv_string())?;
            }
            Ok(())
        }
        Command::Replay {
            events,
            model,
            gains,
            bindings,
            teleop_config,
            out,
            tail,
            rate,
        } => {
            let model = resolve_model(Some(&model), None)?;
            let events = EventLog::from_json(&read(&events)?)
                .with_context(|| format!("invalid event file `{}`", events.display()))?;
            let gains = load_gains(gains.as_deref(), &model)?;
            let bindings = load_bindings(bindings.as_deref())?;
            let teleop = load_teleop(teleop_config.as_deref())?;
            let (log, end) = replay(
                &model,
                &gains,
                &bindings,
                &teleop,
                &events.events,
                tail,
                rate,
            )?;
            save_log(&log, &out)?;
            println!(
                "wrote {} rows to {}; final q = {:?}",
                log.rows.len(),
                out.display(),
                end.q.0
            );
            Ok(())
        }
        Command::Validate { files, kind, model } => {
            let mut failed = 0;
            for f in &files {
                match validate_file(f, kind, model.as_deref()) {
                    Ok(k) => println!("ok: {} ({k:?})", f.display()),
                    Err(e) => {
                        failed += 1;
                        eprintln!("invalid: {}: {e:#}", f.display());
                    }
                }
            }
            if failed > 0 {
                bail!("{failed} of {} files failed validation", files.len());
            }
            Ok(())
        }
        Command::Synth { archetype, out } => {
            let a = Archetype::from_name(&archetype).ok_or_else(|| {
                let names: Vec<_> = Archetype::ALL.iter().map(|a| a.name()).collect();
                anyhow!(
                    "unknown archetype `{archetype}` (one of {})",
                    names.join(", ")
                )
            })?;
            let log = a.log();
            save_log(&log, &out)?;
            println!(
                "wrote {} ({} rows, model {})",
                out.display(),
                log.rows.len(),
                log.model
            );
            Ok(())
        }
    }
}

fn detect(path: &Path, text: &str) -> Kind {
    if path.extension().is_some_and(|e| e == "csv") {
        return Kind::Log;
    }
    let Ok(serde_json::Value::Object(obj)) = serde_json::from_str::<serde_json::Value>(text) else {
        return Kind::Auto;
    };
    let has = |k: &str| obj.contains_key(k);
    if has("joints") {
        Kind::Model
    } else if has("channels") {
        Kind::Sequence
    } else if has("events") {
        Kind::Events
    } else if has("kp") {
        Kind::Gains
    } else if has("inertia_tau") || has("command_timeout") || has("singularity_threshold") {
        Kind::Teleop
    } else if has("filter_hz") || has("spatial_direct") || has("flow_ldj") || has("speed_ref") {
        Kind::Metrics
    } else {
        Kind::Bindings
    }
}

fn validate_file(path: &Path, kind: Kind, model: Option<&str>) -> Result<Kind> {
    let text = if path.extension().is_some_and(|e| e == "csv") {
        String::new()
    } else {
        read(path)?
    };
    let kind = match kind {
        Kind::Auto => detect(path, &text),
        k => k,
    };
    match kind {
        Kind::Auto => bail!("not a JSON object or CSV log"),
        Kind::Model => {
            RobotModel::from_json(&text)?;
        }
        Kind::Sequence => {
            let seq = Sequence::from_json(&text)?;
            let m = resolve_model(model, Some(&seq.robot))?;
            seq.validate(&m)?;
        }
        Kind::Events => {
            EventLog::from_json(&text)?;
        }
        Kind::Bindings => {
            BindingMap::from_json(&text)?;
        }
        Kind::Gains => {
            let g = ControllerGains::from_json(&text)?;
            if let Some(m) = model {
                g.validate(&resolve_model(Some(m), None)?)?;
            }
        }
        Kind::Teleop => {
            TeleopConfig::from_json(&text)?;
        }
        Kind::Metrics => {
            MetricConfig::from_json(&text)?;
        }
        Kind::Log => {
            TrajectoryLog::load(path)?;
        }
    }
    Ok(kind)
}
