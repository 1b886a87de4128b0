use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use boulescope_core::sensor::{INDOOR_SIGMA_CM, OUTDOOR_SIGMA_CM};
use boulescope_core::stats::{self, CalibrationSpec};
use boulescope_core::{BenchConfig, EnvironmentConfig, EnvironmentKind, GameConfig};
use boulescope_service::http::{router, AppState};
use boulescope_service::matchplay::random_scene;
use boulescope_service::{
    play_match, DeviceConfig, DeviceHandle, MatchOptions, Scene, SceneSource, ScoringService, ServiceConfig, ADDR_ENV,
    LOG_DIR_ENV,
};
use clap::{Args, Parser, Subcommand};

mod report;

#[derive(Parser)]
#[command(name = "boulescope", version, about = "Petanque jack emulator bench and match driver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reproduce the indoor/outdoor accuracy table.
    Table2(Table2Args),
    /// Fit the noise sigma that yields a target mean max-abs-deviation.
    Calibrate(CalibrateArgs),
    /// Play full matches against an in-process device and service.
    Play(PlayArgs),
    /// Run the HTTP service with an in-process device emulator.
    Serve(ServeArgs),
    /// Run a standalone device emulator.
    Device(DeviceArgs),
}

#[derive(Args)]
struct Table2Args {
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Print the report as JSON instead of a table.
    #[arg(long)]
    json: bool,
    #[arg(long, default_value_t = INDOOR_SIGMA_CM)]
    sigma_indoor: f64,
    #[arg(long, default_value_t = OUTDOOR_SIGMA_CM)]
    sigma_outdoor: f64,
    /// Additional true distance in cm; may be repeated.
    #[arg(long = "extra-distance")]
    extra_distances: Vec<f64>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Target mean max-abs-deviation in cm.
    #[arg(long)]
    target: f64,
    #[arg(long, default_value_t = 3)]
    samples: usize,
    #[arg(long, default_value_t = 100_000)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Systematic offset added to every reading, in cm.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    bias: f64,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct DeviceOpts {
    #[arg(long, default_value = "indoor")]
    env: EnvironmentKind,
    /// Disable sensor noise.
    #[arg(long)]
    noiseless: bool,
    #[arg(long = "device-seed", default_value_t = 1)]
    device_seed: u64,
    /// Artificial delay before every device reply.
    #[arg(long, default_value_t = 0)]
    latency_ms: u64,
}

impl DeviceOpts {
    fn config(&self) -> DeviceConfig {
        let mut env = EnvironmentConfig::for_kind(self.env);
        if self.noiseless {
            env = env.noiseless();
        }
        DeviceConfig::new(env, self.device_seed).with_latency_ms(self.latency_ms)
    }
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("source").required(true))]
struct PlayArgs {
    /// JSON map of boule id to true distance in cm, used every round.
    #[arg(long, group = "source")]
    scene: Option<PathBuf>,
    /// Draw a fresh random layout every round.
    #[arg(long, group = "source")]
    random_seed: Option<u64>,
    #[arg(long, default_value_t = 13)]
    target_score: u32,
    #[arg(long, default_value_t = 3)]
    boules: u32,
    /// Stop after this many rounds.
    #[arg(long)]
    rounds: Option<u32>,
    /// Number of matches; random layouts use consecutive seeds.
    #[arg(long, default_value_t = 1)]
    matches: u32,
    /// Keep event logs here instead of a temporary directory.
    #[arg(long)]
    log_dir: Option<PathBuf>,
    /// Print transcripts as JSON.
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    device: DeviceOpts,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = ADDR_ENV, default_value = "127.0.0.1:8080")]
    addr: String,
    #[arg(long, env = LOG_DIR_ENV, default_value = "logs")]
    log_dir: PathBuf,
    /// Listen address of the in-process device emulator.
    #[arg(long, default_value = "127.0.0.1:9750")]
    device_addr: String,
    /// Use an already running device instead of starting one.
    #[arg(long, conflicts_with = "device_addr")]
    external_device: Option<String>,
    /// Scene file; defaults to a random layout.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    scene_seed: u64,
    #[command(flatten)]
    device: DeviceOpts,
}

#[derive(Args)]
struct DeviceArgs {
    #[arg(long, default_value = "127.0.0.1:9750")]
    listen: String,
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    scene_seed: u64,
    #[command(flatten)]
    device: DeviceOpts,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Table2(args) => table2(args),
        Command::Calibrate(args) => calibrate(args),
        Command::Play(args) => runtime().and_then(|rt| rt.block_on(play(args))),
        Command::Serve(args) => runtime().and_then(|rt| rt.block_on(serve(args))),
        Command::Device(args) => runtime().and_then(|rt| rt.block_on(device(args))),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Runtime::new()?)
}

fn init_tracing() {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
}

fn table2(args: Table2Args) -> Result<ExitCode> {
    let mut config = BenchConfig::new(args.trials, args.seed, args.sigma_indoor, args.sigma_outdoor);
    config.distances_cm.extend(args.extra_distances);
    let report = stats::run_bench(&config)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", report::table2(&report));
    }
    Ok(ExitCode::SUCCESS)
}

fn calibrate(args: CalibrateArgs) -> Result<ExitCode> {
    let spec = CalibrationSpec::new(args.target, args.samples, args.trials, args.seed).with_bias(args.bias);
    let sigma = stats::calibrate(&spec)?;
    if args.json {
        let out = serde_json::json!({
            "sigma_cm": sigma,
            "target_cm": args.target,
            "samples_per_trial": args.samples,
            "trials": args.trials,
            "seed": args.seed,
            "bias_cm": args.bias,
        });
        println!("{out}");
    } else {
        println!(
            "sigma = {sigma:.4} cm (target {} cm, {} samples/trial, {} trials, seed {}, bias {} cm)",
            args.target, args.samples, args.trials, args.seed, args.bias
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn load_scene(path: &Path) -> Result<Scene> {
    Scene::load(path).with_context(|| format!("reading scene {}", path.display()))
}

async fn play(args: PlayArgs) -> Result<ExitCode> {
    let game = GameConfig {
        boules_per_player: args.boules,
        target_score: args.target_score,
        ..GameConfig::default()
    };
    game.validate()?;
    let fixed = args.scene.as_deref().map(load_scene).transpose()?;

    let tmp;
    let log_dir = match &args.log_dir {
        Some(dir) => dir.clone(),
        None => {
            tmp = tempfile::tempdir()?;
            tmp.path().to_path_buf()
        }
    };
    let service = ScoringService::new(ServiceConfig::new(&log_dir))?;
    let scene = Scene::default();
    let device = DeviceHandle::spawn("127.0.0.1:0", args.device.config(), scene.clone()).await?;
    let mut opts = MatchOptions::new(device.addr.to_string());
    opts.max_rounds = args.rounds;

    let mut failed = false;
    for i in 0..args.matches {
        let source = match (&fixed, args.random_seed) {
            (Some(s), _) => SceneSource::Fixed(s.snapshot()),
            (None, Some(seed)) => SceneSource::Random(seed + i as u64),
            (None, None) => bail!("either --scene or --random-seed is required"),
        };
        match play_match(&service, &scene, &source, game.clone(), &opts).await {
            Ok(t) => {
                if args.json {
                    println!("{}", serde_json::to_string(&t)?);
                } else {
                    print!("{}", report::transcript(&t));
                }
            }
            Err(e) => {
                failed = true;
                eprintln!("match {}: {e}", i + 1);
            }
        }
    }
    device.shutdown().await?;
    Ok(if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

fn serve_scene(path: Option<&Path>, seed: u64) -> Result<Scene> {
    match path {
        Some(p) => load_scene(p),
        None => Ok(Scene::new(random_scene(seed, &GameConfig::default()))),
    }
}

async fn serve(args: ServeArgs) -> Result<ExitCode> {
    init_tracing();
    let service = ScoringService::new(ServiceConfig::new(&args.log_dir))
        .with_context(|| format!("creating log directory {}", args.log_dir.display()))?;
    let (device, device_addr) = match &args.external_device {
        Some(addr) => (None, addr.clone()),
        None => {
            let scene = serve_scene(args.scene.as_deref(), args.scene_seed)?;
            let handle = DeviceHandle::spawn(&args.device_addr, args.device.config(), scene).await?;
            let addr = handle.addr.to_string();
            (Some(handle), addr)
        }
    };
    let listener = tokio::net::TcpListener::bind(&args.addr).await?;
    let local: SocketAddr = listener.local_addr()?;
    println!("listening on http://{local} (device {device_addr}, logs {})", args.log_dir.display());
    let app = router(AppState {
        service,
        default_device: Some(device_addr),
    });
    axum::serve(listener, app).with_graceful_shutdown(shutdown_signal()).await?;
    if let Some(d) = device {
        d.shutdown().await?;
    }
    Ok(ExitCode::SUCCESS)
}

async fn device(args: DeviceArgs) -> Result<ExitCode> {
    init_tracing();
    let scene = serve_scene(args.scene.as_deref(), args.scene_seed)?;
    let handle = DeviceHandle::spawn(&args.listen, args.device.config(), scene).await?;
    println!("device listening on {}", handle.addr);
    shutdown_signal().await;
    handle.shutdown().await?;
    Ok(ExitCode::SUCCESS)
}

async fn shutdown_signal() {
    let _ = tokio::signal::ctrl_c().await;
}
