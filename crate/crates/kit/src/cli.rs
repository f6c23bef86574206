//! The `leads-kit` command line.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use crossbeam_channel::RecvTimeoutError;
use leads_kit_core::analysis::{bake, lap_stats, split_laps};
use leads_kit_core::infer::run_pipeline;
use leads_kit_core::model::Trip;
use leads_kit_core::pacer::{Clock, PacerState, SimulatedClock, run_paced_loop};

use crate::comm::{Callback, Client, CommError, Connection, Server};
use crate::config::{parse_inferences, Config, ConfigError};
use crate::emulate::{self, EscContext, Emulator, NetDelays, WallClock};
use crate::io::{self as formats, FormatError, InterventionWriter};

static INTERRUPTED: AtomicBool = AtomicBool::new(false);

/// Asks long-running commands (`serve`, `client`) to wind down.
pub fn interrupt() {
    INTERRUPTED.store(true, Ordering::Release);
}

fn interrupted() -> bool {
    INTERRUPTED.load(Ordering::Acquire)
}

#[derive(Debug, Parser)]
#[command(name = "leads-kit", version, about = "Telemetry emulation, replay, inference and analysis")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON config file; falls back to $LEADS_KIT_CONFIG, then defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides emulation.seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides emulation.duration (seconds).
    #[arg(long, global = true)]
    pub duration: Option<f64>,
    /// Overrides pacer.target_rate (frames per second).
    #[arg(long, global = true)]
    pub target_rate: Option<f64>,
    /// Output file (directory for `analyze`); stdout when absent.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic trip through the paced frame loop.
    Emulate {
        /// Run unpaced on the wall clock and report throughput.
        #[arg(long)]
        uncapped: bool,
    },
    /// Run a JSONL trip through the ESC pipeline and write an intervention CSV.
    Replay { trip: PathBuf },
    /// Bake trip statistics and split laps.
    Analyze { trip: PathBuf },
    /// Fill missing channels of a JSONL trip.
    Infer {
        trip: PathBuf,
        /// Inference to apply, in order; repeat or separate with commas.
        #[arg(long = "inference", value_delimiter = ',')]
        inferences: Vec<String>,
        #[arg(long)]
        cache_limit: Option<usize>,
    },
    /// Measure pacer convergence under a simulated clock.
    PaceBench {
        /// Target rates to test when --target-rate is not given.
        #[arg(long, value_delimiter = ',', default_value = "30,60,120")]
        rates: Vec<f64>,
    },
    /// Broadcast emulated frames to connected clients.
    Serve {
        /// Stop after this many frames.
        #[arg(long)]
        frames: Option<usize>,
        /// Wait for this many clients before sending.
        #[arg(long, default_value_t = 0)]
        wait_clients: usize,
    },
    /// Connect to a server and print every received message.
    Client {
        /// Exit after this many messages.
        #[arg(long)]
        frames: Option<usize>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Comm(#[from] CommError),
    #[error("{0}")]
    Core(#[from] leads_kit_core::Error),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("leads-kit: {e}");
            e.exit_code()
        }
    }
}

pub fn load_config(global: &GlobalArgs) -> Result<Config, ConfigError> {
    let mut config = Config::resolve(global.config.as_deref())?;
    if let Some(s) = global.seed {
        config.emulation.seed = s;
    }
    if let Some(d) = global.duration {
        config.emulation.duration = d;
    }
    if let Some(r) = global.target_rate {
        config.pacer.target_rate = r;
    }
    config.validate()?;
    Ok(config)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let config = load_config(&cli.global)?;
    let output = cli.global.output.clone().or_else(|| config.paths.output.clone());
    match cli.command {
        Command::Emulate { uncapped } => emulate_cmd(&config, output.as_deref(), uncapped),
        Command::Replay { trip } => replay_cmd(&config, &trip, output.as_deref()),
        Command::Analyze { trip } => analyze_cmd(&config, &trip, output.as_deref()),
        Command::Infer {
            trip,
            inferences,
            cache_limit,
        } => infer_cmd(&config, &trip, &inferences, cache_limit, output.as_deref()),
        Command::PaceBench { rates } => {
            let rates = match cli.global.target_rate {
                Some(r) => vec![r],
                None => rates,
            };
            pace_bench_cmd(&config, &rates, output.as_deref())
        }
        Command::Serve {
            frames,
            wait_clients,
        } => serve_cmd(&config, frames, wait_clients),
        Command::Client { frames } => client_cmd(&config, frames, output.as_deref()),
    }
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(io_err(format!("cannot create {}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn read_trip(path: &Path) -> Result<Trip, CliError> {
    let file = File::open(path).map_err(io_err(format!("cannot open {}", path.display())))?;
    Ok(formats::read_jsonl(BufReader::new(file))?)
}

fn emulate_cmd(config: &Config, output: Option<&Path>, uncapped: bool) -> Result<(), CliError> {
    if uncapped {
        let mut out = output.map(|p| open_output(Some(p))).transpose()?;
        let mut write_err = None;
        let report = emulate::run_uncapped(config, config.emulation.duration, |f| {
            if let (Some(w), None) = (out.as_mut(), &write_err) {
                if let Err(e) = formats::write_frame(w, f) {
                    write_err = Some(e);
                }
            }
        });
        if let Some(e) = write_err {
            return Err(e.into());
        }
        if let Some(mut w) = out {
            w.flush().map_err(io_err("flush"))?;
        }
        eprintln!(
            "uncapped: {} frames in {:.3} s = {:.0} FPS, {} interventions",
            report.frames,
            report.seconds,
            report.fps(),
            report.interventions
        );
        return Ok(());
    }
    let run = emulate::run_simulated(config)?;
    let mut out = open_output(output)?;
    formats::write_jsonl(&mut out, &run.frames)?;
    eprintln!(
        "emulated {} frames over {} s: rate {:.2} FPS (target {}), {} interventions",
        run.frames.len(),
        config.emulation.duration,
        run.final_rate(),
        config.pacer.target_rate,
        run.interventions
    );
    Ok(())
}

fn replay_cmd(config: &Config, trip: &Path, output: Option<&Path>) -> Result<(), CliError> {
    let trip = read_trip(trip)?;
    let mut ctx = EscContext::from_config(config);
    let mut out = InterventionWriter::new(open_output(output)?);
    let mut skipped = std::collections::BTreeMap::<String, (usize, String)>::new();
    for f in trip.frames() {
        let combined = ctx.evaluate(f);
        for (system, err) in &combined.skipped {
            let e = skipped.entry(system.name().into()).or_insert((0, err.to_string()));
            e.0 += 1;
        }
        for row in formats::intervention_rows(f.t, &combined) {
            out.write(&row)?;
        }
    }
    out.finish()?;
    for (system, (n, why)) in skipped {
        eprintln!("replay: {system} skipped on {n} frames ({why})");
    }
    Ok(())
}

fn analyze_cmd(config: &Config, trip_path: &Path, output: Option<&Path>) -> Result<(), CliError> {
    let trip = read_trip(trip_path)?;
    let summary = bake(&trip)?;
    let split = match split_laps(&trip, &config.analysis) {
        Ok(s) => Some(s),
        Err(leads_kit_core::Error::InsufficientData { .. }) => {
            eprintln!("analyze: no GPS fixes, lap splitting skipped");
            None
        }
        Err(e) => return Err(e.into()),
    };
    let report = split.as_ref().map(|s| lap_stats(&trip, s));
    let doc = serde_json::json!({
        "summary": summary,
        "split": split,
        "laps": report,
    });
    match output {
        None => {
            let mut out = open_output(None)?;
            serde_json::to_writer_pretty(&mut out, &doc).map_err(FormatError::from)?;
            writeln!(out).map_err(io_err("stdout"))?;
        }
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(io_err(format!("cannot create {}", dir.display())))?;
            let mut f = open_output(Some(&dir.join("summary.json")))?;
            serde_json::to_writer_pretty(&mut f, &doc).map_err(FormatError::from)?;
            f.flush().map_err(io_err("summary.json"))?;
            let mut f = open_output(Some(&dir.join("map.geojson")))?;
            serde_json::to_writer(&mut f, &formats::geojson_linestring(&summary.map))
                .map_err(FormatError::from)?;
            f.flush().map_err(io_err("map.geojson"))?;
            if let Some(report) = &report {
                formats::write_laps_csv(open_output(Some(&dir.join("laps.csv")))?, report)?;
            }
        }
    }
    Ok(())
}

fn infer_cmd(
    config: &Config,
    trip_path: &Path,
    names: &[String],
    cache_limit: Option<usize>,
    output: Option<&Path>,
) -> Result<(), CliError> {
    let inferences = if names.is_empty() {
        config.inferences()?
    } else {
        parse_inferences(names.iter().map(String::as_str)).map_err(CliError::Usage)?
    };
    if inferences.is_empty() {
        return Err(CliError::Usage(
            "no inferences given (use --inference or inference.inferences)".into(),
        ));
    }
    let cache_limit = cache_limit.unwrap_or(config.inference.cache_limit);
    let trip = read_trip(trip_path)?;
    let result = run_pipeline(trip, &inferences, cache_limit).map_err(|e| match e {
        leads_kit_core::Error::Config(m) => CliError::Usage(m),
        other => other.into(),
    })?;
    for (name, why) in &result.skipped {
        eprintln!("infer: {name} skipped ({why})");
    }
    let mut out = open_output(output)?;
    formats::write_jsonl(&mut out, result.trip.frames())?;
    let provenance = serde_json::to_string_pretty(&result.provenance).map_err(FormatError::from)?;
    match output {
        Some(p) => {
            let mut side = p.as_os_str().to_owned();
            side.push(".provenance.json");
            std::fs::write(&side, provenance + "\n")
                .map_err(io_err(format!("cannot write {}", Path::new(&side).display())))?;
        }
        None => eprintln!("{provenance}"),
    }
    Ok(())
}

fn pace_bench_cmd(config: &Config, rates: &[f64], output: Option<&Path>) -> Result<(), CliError> {
    let em = &config.emulation;
    let mut out = open_output(output)?;
    writeln!(out, "target_rate,t,rate,frames,avg_net_delay").map_err(io_err("write"))?;
    for &r in rates {
        if !(r > 0.0 && r < 1000.0) {
            return Err(CliError::Usage(format!("rate {r} outside (0, 1000)")));
        }
        let started = Instant::now();
        let mut delays = NetDelays::new(em.seed, em.net_delay_mean, em.net_delay_std);
        let mut clock = SimulatedClock::new();
        let trace = run_paced_loop(r, |c: &mut SimulatedClock, _| c.advance(delays.sample()), &mut clock, em.duration)?;
        let mut marks: Vec<f64> = [1.0, 10.0, 20.0, 30.0]
            .into_iter()
            .filter(|&t| t < em.duration)
            .collect();
        marks.push(em.duration);
        for t in marks {
            let cp = trace.checkpoint(t);
            writeln!(
                out,
                "{r},{t},{:.4},{},{:.6}",
                cp.rate,
                trace.count_at(t),
                cp.avg_net_delay
            )
            .map_err(io_err("write"))?;
        }
        eprintln!(
            "pace-bench: target {r}: {} frames in {:.3} s real time",
            trace.frames.len(),
            started.elapsed().as_secs_f64()
        );
    }
    out.flush().map_err(io_err("flush"))?;
    Ok(())
}

struct LogCallback {
    connected: std::sync::atomic::AtomicUsize,
}

impl Callback for LogCallback {
    fn on_connect(&self, conn: &Connection) {
        self.connected.fetch_add(1, Ordering::AcqRel);
        eprintln!("serve: {} connected", conn.peer());
    }

    fn on_receive(&self, conn: &Connection, message: &[u8]) {
        eprintln!("serve: {}: {}", conn.peer(), String::from_utf8_lossy(message));
    }

    fn on_disconnect(&self, conn: &Connection) {
        self.connected.fetch_sub(1, Ordering::AcqRel);
        eprintln!("serve: {} disconnected", conn.peer());
    }
}

fn serve_cmd(config: &Config, frames: Option<usize>, wait_clients: usize) -> Result<(), CliError> {
    let callback = Arc::new(LogCallback {
        connected: 0.into(),
    });
    let server = Server::bind(&config.comm.server_options()?, callback.clone())?;
    eprintln!("serve: listening on {}", server.local_addr());
    while callback.connected.load(Ordering::Acquire) < wait_clients {
        if interrupted() {
            server.shutdown();
            return Ok(());
        }
        std::thread::sleep(Duration::from_millis(5));
    }
    let mut emulator = Emulator::new(&config.emulation, config.vehicle);
    let mut pacer = PacerState::new(config.pacer.target_rate)?;
    let mut clock = WallClock::new();
    let mut sent = 0;
    let result = (|| -> Result<(), CliError> {
        while !interrupted()
            && frames.is_none_or(|n| sent < n)
            && (frames.is_some() || clock.now() < config.emulation.duration)
        {
            let start = clock.now();
            let frame = emulator.frame(start);
            let message = serde_json::to_vec(&frame).map_err(FormatError::from)?;
            server.broadcast(&message)?;
            sent += 1;
            let end = clock.now();
            pacer.record_frame(start, end - start)?;
            let wait = pacer.next_interval(end)?;
            clock.sleep(wait);
        }
        Ok(())
    })();
    server.shutdown();
    eprintln!("serve: sent {sent} frames");
    result
}

fn client_cmd(config: &Config, frames: Option<usize>, output: Option<&Path>) -> Result<(), CliError> {
    struct Forward(crossbeam_channel::Sender<Option<Vec<u8>>>);
    impl Callback for Forward {
        fn on_receive(&self, _: &Connection, message: &[u8]) {
            let _ = self.0.send(Some(message.to_vec()));
        }
        fn on_disconnect(&self, _: &Connection) {
            let _ = self.0.send(None);
        }
    }
    let (tx, rx) = crossbeam_channel::unbounded();
    let addr = (config.comm.host.as_str(), config.comm.port);
    let client = Client::connect(addr, config.comm.separator_byte()?, Arc::new(Forward(tx)))?;
    let mut out = open_output(output)?;
    let mut received = 0;
    while frames.is_none_or(|n| received < n) && !interrupted() {
        match rx.recv_timeout(Duration::from_millis(50)) {
            Ok(Some(m)) => {
                out.write_all(&m).map_err(io_err("write"))?;
                out.write_all(b"\n").map_err(io_err("write"))?;
                received += 1;
            }
            Ok(None) | Err(RecvTimeoutError::Disconnected) => break,
            Err(RecvTimeoutError::Timeout) => {}
        }
    }
    out.flush().map_err(io_err("flush"))?;
    client.close();
    client.join();
    eprintln!("client: received {received} messages");
    Ok(())
}
