use std::io::{self, BufRead, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use sopforge::agents::AgentId;
use sopforge::datafree::{datafree_train, DataFreeConfig, DataFreeReport, HitlMode, NoHumans};
use sopforge::metrics::{report, MetricsInput};
use sopforge::pipeline::{
    create_run, AgentSuite, HumanDecision, PipelineConfig, PipelineError, PipelineRun, RunInputs,
    RunStatus, TaskKind,
};
use sopforge::selfmod::{gradient_check, TrainConfig};
use sopforge::server::{self, ServerOptions, DEFAULT_HOST, DEFAULT_PORT};
use sopforge::store::{
    append_history, history_path, load_tvid, read_checkpoint, save_tvid, write_atomic,
    write_checkpoint, TrainMeta,
};
use sopforge::video::{TextPrompt, Video};

const GRADCHECK_THRESHOLD: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "sopforge", version, about = "Multi-agent toy video generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one task through its stages.
    Run(RunArgs),
    /// Data-free training with simulated reviewers.
    Train(TrainArgs),
    /// Compare analytic gradients with central differences.
    Gradcheck(GradcheckArgs),
    /// Compute metrics for a TVID file.
    Metrics(MetricsArgs),
    /// Start the HTTP server.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum TaskArg {
    TextToVideo,
    ImageToVideo,
    ExtendVideo,
    VideoEdit,
    ConnectVideos,
    SimulateDigitalWorld,
}

impl From<TaskArg> for TaskKind {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::TextToVideo => TaskKind::TextToVideo,
            TaskArg::ImageToVideo => TaskKind::ImageToVideo,
            TaskArg::ExtendVideo => TaskKind::ExtendVideo,
            TaskArg::VideoEdit => TaskKind::VideoEdit,
            TaskArg::ConnectVideos => TaskKind::ConnectVideos,
            TaskArg::SimulateDigitalWorld => TaskKind::SimulateDigitalWorld,
        }
    }
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long, value_enum)]
    task: TaskArg,
    #[arg(long)]
    prompt: Option<String>,
    /// Input TVID; repeat for tasks with two inputs.
    #[arg(long = "input")]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Approve every checkpoint without asking.
    #[arg(long)]
    auto: bool,
    /// Checkpoint directory with trained chain agents.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = sopforge::video::DEFAULT_FRAMES)]
    t_frames: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum HitlArg {
    AutoOracle,
    AutoDiscard,
}

#[derive(clap::Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 3)]
    iterations: usize,
    #[arg(long, default_value_t = 16)]
    prompts: usize,
    #[arg(long, value_enum, default_value = "auto-oracle")]
    hitl: HitlArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value = "checkpoint")]
    out: PathBuf,
}

#[derive(clap::Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-4)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(clap::Args)]
struct MetricsArgs {
    #[arg(long)]
    video: PathBuf,
    #[arg(long)]
    prompt: Option<String>,
    /// Reference video for TCON.
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    /// Neighbours for Tmean.
    #[arg(long, requires = "next")]
    prev: Option<PathBuf>,
    #[arg(long, requires = "prev")]
    next: Option<PathBuf>,
}

#[derive(clap::Args)]
struct ServeArgs {
    #[arg(long, default_value = DEFAULT_HOST)]
    host: IpAddr,
    #[arg(long, default_value_t = DEFAULT_PORT)]
    port: u16,
    /// Overridden by SOPFORGE_DATA_DIR.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Failure with its exit code.
struct Fail(u8, String);

impl Fail {
    fn usage(msg: impl Into<String>) -> Self {
        Fail(2, msg.into())
    }

    fn runtime(msg: impl Into<String>) -> Self {
        Fail(1, msg.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Train(a) => cmd_train(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Serve(a) => cmd_serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Fail(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<(), Fail> {
    let s = serde_json::to_string_pretty(value).map_err(|e| Fail::runtime(e.to_string()))?;
    println!("{s}");
    Ok(())
}

fn load_input(path: &Path) -> Result<Video, Fail> {
    load_tvid(path).map_err(|e| Fail::usage(format!("{}: {e}", path.display())))
}

fn build_inputs(task: TaskKind, args: &RunArgs) -> Result<RunInputs, Fail> {
    let prompt = args
        .prompt
        .as_deref()
        .map(TextPrompt::new)
        .transpose()
        .map_err(|e| Fail::usage(e.to_string()))?;
    let mut videos = args
        .inputs
        .iter()
        .map(|p| load_input(p))
        .collect::<Result<Vec<_>, _>>()?;
    let mut inputs = RunInputs {
        prompt,
        ..RunInputs::default()
    };
    if task == TaskKind::ImageToVideo {
        if videos.len() != 1 {
            return Err(Fail::usage("image_to_video takes exactly one --input"));
        }
        inputs.frame = Some(videos.remove(0).first_frame().clone());
    } else {
        inputs.videos = videos;
    }
    Ok(inputs)
}

fn ask(run: &PipelineRun) -> Result<HumanDecision, Fail> {
    let stdin = io::stdin();
    let mut line = String::new();
    loop {
        let artifact = run.artifacts.get(&run.stage).map_or("-", |a| a.kind());
        eprint!(
            "[{}] {} ready (retries {}). approve/retry/edit/abort? ",
            run.stage,
            artifact,
            run.retries(run.stage)
        );
        io::stderr().flush().ok();
        line.clear();
        let n = stdin
            .lock()
            .read_line(&mut line)
            .map_err(|e| Fail::runtime(e.to_string()))?;
        if n == 0 {
            return Ok(HumanDecision::Abort);
        }
        let d = match line.trim().to_ascii_lowercase().as_str() {
            "a" | "approve" | "" => HumanDecision::Approve,
            "r" | "retry" => HumanDecision::Retry,
            "e" | "edit" => HumanDecision::RouteToEdit,
            "q" | "abort" => HumanDecision::Abort,
            _ => continue,
        };
        return Ok(d);
    }
}

fn interactive(run: &mut PipelineRun, suite: &AgentSuite) -> Result<(), PipelineError> {
    while !run.status.is_terminal() {
        run.advance(suite)?;
        if run.status != RunStatus::AwaitingDecision {
            continue;
        }
        let decision = ask(run).unwrap_or(HumanDecision::Abort);
        match run.apply_decision(run.stage, decision) {
            Err(PipelineError::IllegalDecision { stage, decision }) => {
                eprintln!("{decision} is not available at {stage}");
            }
            other => other?,
        }
    }
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<(), Fail> {
    let task = TaskKind::from(args.task);
    let inputs = build_inputs(task, &args)?;
    let config = PipelineConfig {
        seed: args.seed,
        t_frames: args.t_frames,
        ..PipelineConfig::default()
    };
    let mut run = create_run(task, inputs, config).map_err(|e| Fail::usage(e.to_string()))?;
    let suite = match &args.checkpoint {
        Some(dir) => {
            let ckpt = read_checkpoint(dir).map_err(|e| Fail::runtime(e.to_string()))?;
            AgentSuite::with_trained(&ckpt.state, args.seed)
        }
        None => AgentSuite::init(args.seed),
    }
    .map_err(|e| Fail::runtime(e.to_string()))?;
    let outcome = if args.auto {
        run.auto_run(&suite)
    } else {
        interactive(&mut run, &suite)
    };
    outcome.map_err(|e| Fail::runtime(e.to_string()))?;
    let Some(video) = run.final_video() else {
        return Err(Fail::runtime(format!("run ended {}", run.status)));
    };
    if let Some(out) = &args.out {
        save_tvid(video, out).map_err(|e| Fail::runtime(e.to_string()))?;
    }
    let text = run.inputs.prompt.as_ref().map(|p| p.text().to_string());
    let input = MetricsInput {
        prompt: text.as_deref(),
        input_frame: run.inputs.frame.as_ref(),
        reference: match task {
            TaskKind::ExtendVideo | TaskKind::VideoEdit => run.inputs.videos.first(),
            _ => None,
        },
        neighbours: match run.inputs.videos.as_slice() {
            [a, b] => Some((a, b)),
            _ => None,
        },
    };
    let metrics = report(video, &input).map_err(|e| Fail::runtime(e.to_string()))?;
    print_json(&metrics)
}

fn cmd_train(args: TrainArgs) -> Result<(), Fail> {
    let mut train_cfg = TrainConfig {
        seed: args.seed,
        ..TrainConfig::default()
    };
    if let Some(e) = args.epochs {
        train_cfg.epochs = e;
    }
    let cfg = DataFreeConfig {
        iterations: args.iterations,
        prompts_per_iter: args.prompts,
        hitl_mode: match args.hitl {
            HitlArg::AutoOracle => HitlMode::AutoOracle,
            HitlArg::AutoDiscard => HitlMode::AutoDiscard,
        },
        train_cfg,
        ..DataFreeConfig::default()
    };
    cfg.validate().map_err(|e| Fail::usage(e.to_string()))?;
    let out = datafree_train(&cfg, &mut |_| {}, &mut NoHumans)
        .map_err(|e| Fail::runtime(e.to_string()))?;
    let meta = TrainMeta {
        iteration: cfg.iterations,
        epoch: cfg.iterations * cfg.train_cfg.epochs,
        seed: cfg.train_cfg.seed,
    };
    write_checkpoint(&out.state, &cfg.train_cfg.chain, meta, &args.out)
        .map_err(|e| Fail::runtime(e.to_string()))?;
    let mut log = Vec::new();
    for r in &out.history {
        append_history(r, &mut log).map_err(|e| Fail::runtime(e.to_string()))?;
    }
    write_atomic(&history_path(&args.out), &log).map_err(|e| Fail::runtime(e.to_string()))?;
    for it in &out.report.iterations {
        if let Some(w) = &it.warning {
            eprintln!("warning: {w}");
        }
    }
    print_json::<DataFreeReport>(&out.report)
}

#[derive(Serialize)]
struct ChainCheck {
    chain: Vec<AgentId>,
    max_relative_error: f64,
    checked: usize,
}

#[derive(Serialize)]
struct GradcheckOutput {
    epsilon: f64,
    threshold: f64,
    max_relative_error: f64,
    chains: Vec<ChainCheck>,
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<(), Fail> {
    if !(args.eps > 0.0 && args.eps.is_finite()) {
        return Err(Fail::usage("--eps must be positive"));
    }
    let chains = [
        vec![AgentId::TextToImage, AgentId::ImageToVideo],
        vec![AgentId::TextToImage, AgentId::ImageToImage, AgentId::ImageToVideo],
    ];
    let mut checks = Vec::new();
    for chain in chains {
        let cfg = TrainConfig {
            chain: chain.clone(),
            seed: args.seed,
            ..TrainConfig::default()
        };
        let r = gradient_check(&cfg, args.eps).map_err(|e| Fail::runtime(e.to_string()))?;
        checks.push(ChainCheck {
            chain,
            max_relative_error: r.max_relative_error,
            checked: r.checked,
        });
    }
    let max = checks
        .iter()
        .map(|c| c.max_relative_error)
        .fold(0.0, f64::max);
    print_json(&GradcheckOutput {
        epsilon: args.eps,
        threshold: GRADCHECK_THRESHOLD,
        max_relative_error: max,
        chains: checks,
    })?;
    if max < GRADCHECK_THRESHOLD {
        Ok(())
    } else {
        Err(Fail::runtime(format!(
            "max relative error {max:e} exceeds {GRADCHECK_THRESHOLD:e}"
        )))
    }
}

fn cmd_metrics(args: MetricsArgs) -> Result<(), Fail> {
    let video = load_input(&args.video)?;
    let reference = args.reference.as_deref().map(load_input).transpose()?;
    let prev = args.prev.as_deref().map(load_input).transpose()?;
    let next = args.next.as_deref().map(load_input).transpose()?;
    let input = MetricsInput {
        prompt: args.prompt.as_deref(),
        input_frame: None,
        reference: reference.as_ref(),
        neighbours: prev.as_ref().zip(next.as_ref()),
    };
    let metrics = report(&video, &input).map_err(|e| Fail::runtime(e.to_string()))?;
    print_json(&metrics)
}

fn cmd_serve(args: ServeArgs) -> Result<(), Fail> {
    let data_dir = std::env::var_os("SOPFORGE_DATA_DIR")
        .map(PathBuf::from)
        .or(args.data_dir);
    let options = ServerOptions {
        data_dir,
        suite_seed: args.seed,
        ..ServerOptions::default()
    };
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Fail::runtime(e.to_string()))?;
    let addr = SocketAddr::new(args.host, args.port);
    runtime
        .block_on(server::serve(addr, options, |bound| {
            println!("listening on http://{bound}");
            println!("port {}", bound.port());
            io::stdout().flush().ok();
        }))
        .map_err(|e| Fail::runtime(e.to_string()))
}
