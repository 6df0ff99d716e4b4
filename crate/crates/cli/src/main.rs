//! `rapport`: run the lesson service, simulate lessons, audit traces.
//!
//! Exit status: 0 ok, 1 invariant violation, 2 usage or I/O error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rapport_client::{Participant, ServiceClient};
use rapport_core::config::Config;
use rapport_core::display::write_display_csv;
use rapport_core::harness::{check_trace, emit_display, run_scenario, CheckReport, Scenario, SimOptions, SimReport, Viewer};
use rapport_core::lesson::Role;
use rapport_core::protocol::{AdvisoryPayload, ErrorPayload, MessageType};
use rapport_core::signals::io::trace_to_string;
use rapport_core::signals::{GenParams, ScrEvent, SignalChannel};
use rapport_core::trace::Trace;
use rapport_server::{Server, ServerOptions};

#[derive(Parser)]
#[command(name = "rapport", version, about = "Reciprocal signal sharing for remote kanji lessons")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the lesson service (HTTP + web socket, and the NDJSON socket).
    Serve(ServeArgs),
    /// Run a scripted lesson on a virtual clock and audit it.
    Simulate(SimulateArgs),
    /// Audit a recorded trace.
    Check(CheckArgs),
    /// Reconstruct one participant's ambient display values as CSV.
    EmitDisplay(EmitArgs),
    /// Generate a synthetic signal trace.
    Gen(GenArgs),
    /// Join a live session as a synthetic participant.
    Join(JoinArgs),
    /// List the bundled scenarios.
    Scenarios,
}

#[derive(Args)]
struct Remote {
    /// Run the operation on a service at this base URL instead of locally.
    #[arg(long, value_name = "URL")]
    server: Option<String>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// HTTP port (web socket at /ws); overrides the config.
    #[arg(long)]
    port: Option<u16>,
    /// NDJSON socket port; overrides the config.
    #[arg(long)]
    socket_port: Option<u16>,
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
    /// Static browser client to serve at /.
    #[arg(long)]
    ui_dir: Option<PathBuf>,
    /// Directory for per-session trace files.
    #[arg(long, value_name = "DIR")]
    record: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario file, or the name of a bundled scenario.
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Write the trace here.
    #[arg(long, value_name = "FILE")]
    record: Option<PathBuf>,
    /// Leave per-frame delivery records out of the trace.
    #[arg(long)]
    no_frames: bool,
    #[command(flatten)]
    remote: Remote,
}

#[derive(Args)]
struct CheckArgs {
    trace: PathBuf,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    remote: Remote,
}

#[derive(Args)]
struct EmitArgs {
    trace: PathBuf,
    #[arg(long)]
    participant: String,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Reconstruct what this participant saw; by default, what any peer saw.
    #[arg(long, value_name = "ID")]
    viewer: Option<String>,
    #[command(flatten)]
    remote: Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum ChannelArg {
    Bvp,
    Resp,
    Sc,
}

impl From<ChannelArg> for SignalChannel {
    fn from(c: ChannelArg) -> Self {
        match c {
            ChannelArg::Bvp => SignalChannel::Bvp,
            ChannelArg::Resp => SignalChannel::Resp,
            ChannelArg::Sc => SignalChannel::Sc,
        }
    }
}

fn parse_scr(s: &str) -> Result<ScrEvent, String> {
    let (t, a) = s.split_once(':').ok_or("expected T:AMPLITUDE, e.g. 12.5:0.4")?;
    Ok(ScrEvent {
        t_s: t.trim().parse().map_err(|e| format!("time {t:?}: {e}"))?,
        amplitude_us: a.trim().parse().map_err(|e| format!("amplitude {a:?}: {e}"))?,
    })
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    channel: ChannelArg,
    /// Seconds of signal.
    #[arg(long, default_value_t = 60.0)]
    duration: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sampling rate; defaults to the channel's standard rate.
    #[arg(long)]
    rate: Option<f64>,
    /// Heart rate for BVP.
    #[arg(long)]
    hr: Option<f64>,
    /// Breaths per minute for RESP.
    #[arg(long)]
    breaths: Option<f64>,
    /// Tonic skin conductance for SC, in microsiemens.
    #[arg(long)]
    tonic: Option<f64>,
    /// SC response at T seconds with amplitude A µS; repeatable.
    #[arg(long = "scr", value_name = "T:A", value_parser = parse_scr)]
    scr: Vec<ScrEvent>,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[command(flatten)]
    remote: Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum RoleArg {
    Teacher,
    Student,
    Observer,
}

impl From<RoleArg> for Role {
    fn from(r: RoleArg) -> Self {
        match r {
            RoleArg::Teacher => Role::Teacher,
            RoleArg::Student => Role::Student,
            RoleArg::Observer => Role::Observer,
        }
    }
}

#[derive(Args)]
struct JoinArgs {
    /// NDJSON socket address of the service.
    #[arg(long, default_value = "127.0.0.1:7879")]
    addr: String,
    #[arg(long)]
    sid: String,
    #[arg(long)]
    name: String,
    #[arg(long, value_enum)]
    role: RoleArg,
    /// Channels to share, comma separated.
    #[arg(long, value_enum, value_delimiter = ',')]
    share: Vec<ChannelArg>,
    /// Seconds to stay in the session, streaming synthetic signals.
    #[arg(long, default_value_t = 30.0)]
    duration: f64,
    #[arg(long, default_value_t = 72.0)]
    hr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// A command's failure, carrying its exit status.
enum Failure {
    Violation(String),
    Usage(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Usage(e)
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    let runtime = tokio::runtime::Runtime::new().expect("tokio runtime");
    match runtime.block_on(run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Violation(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

async fn run(command: Command) -> Outcome {
    match command {
        Command::Serve(a) => serve(a).await,
        Command::Simulate(a) => simulate(a).await,
        Command::Check(a) => check(a).await,
        Command::EmitDisplay(a) => emit(a).await,
        Command::Gen(a) => gen(a).await,
        Command::Join(a) => join(a).await,
        Command::Scenarios => {
            for name in Scenario::bundled_names() {
                println!("{name}");
            }
            Ok(())
        }
    }
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, contents: &[u8]) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

async fn serve(a: ServeArgs) -> Outcome {
    let mut config = match &a.config {
        Some(p) => Config::load(p).with_context(|| format!("config {}", p.display()))?,
        None => Config::default(),
    };
    if let Some(p) = a.port {
        config.port = p;
    }
    if let Some(p) = a.socket_port {
        config.socket_port = p;
    }
    config.validate().map_err(|e| anyhow!(e))?;
    if let Some(dir) = &a.ui_dir {
        if !dir.is_dir() {
            return Err(anyhow!("--ui-dir {} is not a directory", dir.display()).into());
        }
    }
    let opts = ServerOptions { config, host: a.host, ui_dir: a.ui_dir, record_dir: a.record };
    let server = Server::bind(opts).await.context("binding ports")?;
    println!("http://{} (web socket /ws), ndjson {}", server.http_addr(), server.socket_addr());
    tokio::select! {
        r = server.run() => r.context("serving")?,
        _ = tokio::signal::ctrl_c() => {}
    }
    Ok(())
}

fn print_report(report: &SimReport) {
    let phases: Vec<String> = report.phases.iter().map(ToString::to_string).collect();
    println!("phases: {}", phases.join(" -> "));
    println!("sequenced: {}  frames sent: {}  delivered: {}", report.sequenced, report.frames_sent, report.frames_delivered);
    for (to, code) in &report.errors {
        println!("error to {to}: {code}");
    }
}

async fn simulate(a: SimulateArgs) -> Outcome {
    let record_frames = !a.no_frames;
    let (trace, report) = match &a.remote.server {
        Some(url) => {
            let scenario = match Path::new(&a.scenario).exists() {
                true => serde_json::from_str(&read(Path::new(&a.scenario))?).context("parsing scenario")?,
                false => serde_json::Value::String(a.scenario.clone()),
            };
            let sim = ServiceClient::new(url).simulate(scenario, a.seed, record_frames).await.map_err(|e| anyhow!(e))?;
            (sim.trace, sim.report)
        }
        None => {
            let mut scenario = Scenario::load(&a.scenario).map_err(|e| anyhow!(e))?;
            if let Some(dir) = Path::new(&a.scenario).parent().filter(|_| Path::new(&a.scenario).exists()) {
                scenario.resolve_paths(dir);
            }
            let opts = SimOptions { seed: a.seed, record_frames };
            let out = tokio::task::spawn_blocking(move || run_scenario(&scenario, &opts))
                .await
                .map_err(|e| anyhow!(e))?
                .map_err(|e| anyhow!(e))?;
            (out.trace, out.report)
        }
    };
    if let Some(path) = &a.record {
        write(path, trace.as_bytes())?;
    }
    print_report(&report);
    if report.ok() {
        println!("ok");
        Ok(())
    } else {
        Err(Failure::Violation(format!("{} violation(s):\n{}", report.violations.len(), report.violations.join("\n"))))
    }
}

fn load_trace(text: &str) -> anyhow::Result<Trace> {
    Trace::from_str(text).map_err(|e| anyhow!("{}: {e}", e.code()))
}

async fn check(a: CheckArgs) -> Outcome {
    let text = read(&a.trace)?;
    let report: CheckReport = match &a.remote.server {
        Some(url) => ServiceClient::new(url).check(&text).await.map_err(|e| anyhow!(e))?,
        None => check_trace(&load_trace(&text)?),
    };
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report).expect("reports serialize"));
    } else {
        print!("{}", report.render());
    }
    match report.exit_code() {
        0 => Ok(()),
        _ => Err(Failure::Violation(format!("{}: invariant violated", a.trace.display()))),
    }
}

async fn emit(a: EmitArgs) -> Outcome {
    let text = read(&a.trace)?;
    let csv = match &a.remote.server {
        Some(url) => ServiceClient::new(url)
            .emit_display(&text, &a.participant, a.viewer.as_deref())
            .await
            .map_err(|e| anyhow!(e))?
            .into_bytes(),
        None => {
            let trace = load_trace(&text)?;
            let viewer = a.viewer.clone().map(Viewer::Participant).unwrap_or(Viewer::Peers);
            let rows = emit_display(&trace, &a.participant, &viewer).map_err(|e| anyhow!(e))?;
            let mut buf = Vec::new();
            write_display_csv(&mut buf, &rows).context("formatting CSV")?;
            buf
        }
    };
    write(&a.out, &csv)?;
    Ok(())
}

async fn gen(a: GenArgs) -> Outcome {
    let params = GenParams {
        channel: a.channel.into(),
        duration_s: a.duration,
        seed: a.seed,
        rate_hz: a.rate,
        hr_bpm: a.hr,
        breaths_per_min: a.breaths,
        tonic_us: a.tonic,
        scr_events: a.scr,
    };
    let text = match &a.remote.server {
        Some(url) => ServiceClient::new(url).gen(&params).await.map_err(|e| anyhow!(e))?,
        None => trace_to_string(&params.generate().map_err(|e| anyhow!(e))?, Some(params.seed)),
    };
    write(&a.out, text.as_bytes())?;
    Ok(())
}

/// Stream synthetic signals in real time, printing what the session says.
async fn join(a: JoinArgs) -> Outcome {
    if !(a.duration.is_finite() && a.duration > 0.0) {
        return Err(anyhow!("--duration must be positive").into());
    }
    let mut me = Participant::join(&a.addr, &a.sid, &a.name, a.role.into()).await.map_err(|e| anyhow!(e))?;
    println!("joined {} as {}", a.sid, me.id());
    for ch in &a.share {
        me.consent((*ch).into(), true).await.map_err(|e| anyhow!(e))?;
    }
    let mut samples = Vec::new();
    for (i, ch) in SignalChannel::ALL.into_iter().enumerate() {
        let params = GenParams { hr_bpm: Some(a.hr), ..GenParams::new(ch, a.duration, a.seed.wrapping_add(i as u64)) };
        let trace = params.generate().map_err(|e| anyhow!(e))?;
        samples.extend(trace.samples.into_iter().map(|s| (s.t_ms, ch, s.value)));
    }
    samples.sort_by_key(|(t, ch, _)| (*t, ch.index()));

    let start = tokio::time::Instant::now();
    let mut stdout = std::io::stdout();
    for (t_ms, ch, v) in samples {
        tokio::time::sleep_until(start + Duration::from_millis(t_ms as u64)).await;
        me.frame(ch, t_ms, v).await.map_err(|e| anyhow!(e))?;
        loop {
            match me.recv(Duration::ZERO).await {
                Ok(env) => match env.kind {
                    MessageType::Advisory => {
                        if let Ok(p) = env.payload_as::<AdvisoryPayload>() {
                            writeln!(stdout, "advisory for {}: {:?} ({:.1}/min)", p.subject, p.advisory, p.scr_rate).ok();
                        }
                    }
                    MessageType::Error => {
                        if let Ok(p) = env.payload_as::<ErrorPayload>() {
                            writeln!(stdout, "error: {}: {}", p.code, p.message).ok();
                        }
                    }
                    MessageType::Presence | MessageType::LessonState | MessageType::ConsentState => {
                        writeln!(stdout, "{} {}", env.kind, env.payload).ok();
                    }
                    _ => {}
                },
                Err(rapport_client::ClientError::Timeout(_)) => break,
                Err(e) => return Err(anyhow!(e).into()),
            }
        }
    }
    if let Some(state) = me.mirror().state() {
        println!("leaving at seq {} in phase {}", state.seq_head, state.phase);
    }
    Ok(())
}
