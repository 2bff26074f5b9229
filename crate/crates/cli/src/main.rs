use std::fs;
use std::io::Write as _;
use std::net::{Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use brickguide::guidance::GuidanceEvent;
use brickguide::plan::{compile_steps, parse_plan, parse_plan_unchecked, validate_plan, AssemblyPlan};
use brickguide::scene::NoiseConfig;
use brickguide::script::{parse_script, perfect_script};
use brickguide::session::{simulate, Mode, SessionConfig};
use brickguide_server::{Server, SESSION_PATH};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

/// Perfect-script timing used when `simulate` runs without `--script`.
const DEFAULT_HOLD_TICKS: u64 = 6;
const DEFAULT_TAIL_TICKS: u64 = 60;

#[derive(Parser)]
#[command(name = "brickguide", version, about = "Layer-by-layer brick assembly guidance")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum NoisePreset {
    Zero,
    Default,
    Heavy,
}

impl NoisePreset {
    fn config(self, seed: u64) -> NoiseConfig {
        match self {
            NoisePreset::Zero => NoiseConfig::zero(seed),
            NoisePreset::Default => NoiseConfig::default_preset(seed),
            NoisePreset::Heavy => NoiseConfig::heavy(seed),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Sim,
    External,
}

#[derive(Subcommand)]
enum Command {
    /// Check a plan for collisions and unsupported placements.
    Validate {
        plan: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Print the ordered assembly steps.
    Compile {
        plan: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Run a scripted session headlessly and print its event log.
    Simulate {
        plan: PathBuf,
        /// Action script; defaults to picking and placing every step in order.
        #[arg(long)]
        script: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "zero")]
        noise: NoisePreset,
        #[arg(long)]
        json: bool,
        /// Write one JSON object per tick to this file.
        #[arg(long, value_name = "PATH")]
        emit_transcript: Option<PathBuf>,
    },
    /// Serve a live session over WebSocket.
    Serve {
        plan: PathBuf,
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long, value_enum, default_value = "sim")]
        mode: ModeArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "zero")]
        noise: NoisePreset,
        #[arg(long, default_value_t = 15)]
        tick_hz: u32,
    },
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("brickguide: {msg}");
    ExitCode::from(code)
}

fn read(path: &Path) -> Result<String, ExitCode> {
    fs::read_to_string(path).map_err(|e| fail(2, format!("{}: {e}", path.display())))
}

fn load_unchecked(path: &Path) -> Result<AssemblyPlan, ExitCode> {
    parse_plan_unchecked(&read(path)?).map_err(|e| fail(2, format!("{}: {e}", path.display())))
}

fn cmd_validate(path: &Path, as_json: bool) -> ExitCode {
    let plan = match load_unchecked(path) {
        Ok(p) => p,
        Err(code) => return code,
    };
    let report = validate_plan(&plan);
    if as_json {
        println!("{}", serde_json::to_string(&report).expect("report serializes"));
    } else if report.is_valid() {
        println!("{}: valid ({} placements)", plan.name, plan.placements.len());
    } else {
        for v in &report.violations {
            println!("{v}");
        }
    }
    ExitCode::from(if report.is_valid() { 0 } else { 1 })
}

fn cmd_compile(path: &Path, as_json: bool) -> ExitCode {
    let plan = match load_unchecked(path) {
        Ok(p) => p,
        Err(code) => return code,
    };
    let steps = match compile_steps(&plan) {
        Ok(s) => s,
        Err(e) => return fail(1, e),
    };
    if as_json {
        let rows: Vec<_> = steps
            .iter()
            .map(|s| {
                let p = &s.placement;
                json!({"index": s.index, "type_id": p.type_id, "x": p.cell_x, "y": p.cell_y, "layer": p.layer, "rot": p.rotation.degrees()})
            })
            .collect();
        println!("{}", serde_json::Value::Array(rows));
    } else {
        let mut out = std::io::stdout().lock();
        for s in &steps {
            let p = &s.placement;
            let line = format!(
                "STEP {} {} {} {} {} {}",
                s.index, p.type_id, p.cell_x, p.cell_y, p.layer, p.rotation
            );
            if writeln!(out, "{line}").is_err() {
                break;
            }
        }
    }
    ExitCode::SUCCESS
}

fn event_line(e: &GuidanceEvent) -> String {
    let kind = serde_json::to_value(e.kind).expect("event kind serializes");
    let kind = kind.as_str().unwrap_or_default();
    match e.step_index {
        Some(i) => format!("{} {kind} {i}", e.frame),
        None => format!("{} {kind}", e.frame),
    }
}

fn cmd_simulate(
    path: &Path,
    script: Option<&Path>,
    noise: NoiseConfig,
    as_json: bool,
    transcript: Option<&Path>,
) -> ExitCode {
    let plan = match read(path).and_then(|t| parse_plan(&t).map_err(|e| fail(2, format!("{}: {e}", path.display())))) {
        Ok(p) => p,
        Err(code) => return code,
    };
    let script_text = match script {
        Some(p) => match read(p) {
            Ok(t) => t,
            Err(code) => return code,
        },
        None => {
            let steps = compile_steps(&plan).expect("validated plan compiles");
            perfect_script(&plan.name, &steps, DEFAULT_HOLD_TICKS, DEFAULT_TAIL_TICKS)
        }
    };
    let schedule = match parse_script(&script_text) {
        Ok(s) => s,
        Err(e) => return fail(2, e),
    };
    let mut config = SessionConfig::new(plan);
    config.noise = noise;
    let outcome = match simulate(config, &schedule) {
        Ok(o) => o,
        Err(e) => return fail(2, e),
    };

    let mut out = std::io::stdout().lock();
    for e in &outcome.events {
        let line = if as_json {
            serde_json::to_string(e).expect("event serializes")
        } else {
            event_line(e)
        };
        if writeln!(out, "{line}").is_err() {
            break;
        }
    }
    if let Some(path) = transcript {
        let mut text = outcome.transcript.join("\n");
        text.push('\n');
        if let Err(e) = fs::write(path, text) {
            return fail(2, format!("{}: {e}", path.display()));
        }
    }
    if let Some((tick, err)) = outcome.action_errors.first() {
        return fail(2, format!("script action at tick {tick} failed: {err}"));
    }
    if outcome.completed {
        ExitCode::SUCCESS
    } else {
        fail(3, "assembly incomplete at end of script")
    }
}

fn cmd_serve(path: &Path, port: u16, mode: Mode, noise: NoiseConfig, tick_hz: u32) -> ExitCode {
    let plan = match read(path).and_then(|t| parse_plan(&t).map_err(|e| fail(2, format!("{}: {e}", path.display())))) {
        Ok(p) => p,
        Err(code) => return code,
    };
    let mut config = SessionConfig::new(plan);
    config.mode = mode;
    config.noise = noise;
    config.tick_hz = tick_hz;

    let runtime = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(rt) => rt,
        Err(e) => return fail(2, e),
    };
    runtime.block_on(async {
        let addr = SocketAddr::from((Ipv4Addr::LOCALHOST, port));
        let server = match Server::bind(config, addr).await {
            Ok(s) => s,
            Err(e) => return fail(2, e),
        };
        println!(
            "listening on ws://{}{SESSION_PATH} session {}",
            server.local_addr(),
            server.session_id()
        );
        let _ = std::io::stdout().flush();
        server
            .run(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await;
        ExitCode::SUCCESS
    })
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .init();

    match Cli::parse().command {
        Command::Validate { plan, json } => cmd_validate(&plan, json),
        Command::Compile { plan, json } => cmd_compile(&plan, json),
        Command::Simulate {
            plan,
            script,
            seed,
            noise,
            json,
            emit_transcript,
        } => cmd_simulate(
            &plan,
            script.as_deref(),
            noise.config(seed),
            json,
            emit_transcript.as_deref(),
        ),
        Command::Serve {
            plan,
            port,
            mode,
            seed,
            noise,
            tick_hz,
        } => {
            let mode = match mode {
                ModeArg::Sim => Mode::Sim,
                ModeArg::External => Mode::External,
            };
            cmd_serve(&plan, port, mode, noise.config(seed), tick_hz)
        }
    }
}
