//! `spatialbox`: generate scenes and questions, build training data, run
//! evaluations and score trajectories.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde::Serialize;

use spatial_core::data::{build_sft, build_warmup};
use spatial_core::eval::{
    compute_metrics, run_episode, run_eval, Agent, CallOutcome, EpisodeLimits, NoToolAgent, OracleAgent, ToolCallRecord,
    DEFAULT_MARGIN,
};
use spatial_core::grammar::{parse_trajectory, GrammarConfig};
use spatial_core::reward::{
    correctness_from_text, format_reward, group_advantages, tool_reward_from, RewardConfig, RewardParts,
};
use spatial_core::eval::score_answer;
use spatial_core::grammar::normalize_answer;
use spatial_core::skills::{SkillResult, SkillStatus, Toolbox};
use spatial_core::tools::{Binding, SyntheticBackend};
use spatial_core::world::{generate_qa_set, generate_scenes, NoiseConfig, QAItem, SceneSpec, SceneStore, TaskType};
use spatial_core::RewardBreakdown;
use spatial_transport::{MockServer, RemoteAgent, RemoteBackend, AGENT_ENDPOINT_ENV};

#[derive(Parser)]
#[command(name = "spatialbox", version, about = "Spatial-skill tool sandbox")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scenes, one JSON file each.
    GenScenes(GenScenes),
    /// Generate questions over a scene directory as JSONL.
    GenQa(GenQa),
    /// Build warm-up view pairs or SFT trajectories as JSONL.
    BuildData(BuildData),
    /// Evaluate an agent on a question file.
    Eval(Eval),
    /// Run a single question and print its transcript.
    RunEpisode(RunEpisode),
    /// Score trajectories with the format, correctness and tool rewards.
    Reward(Reward),
    /// Serve the synthetic backend over HTTP until interrupted.
    Serve(Serve),
}

#[derive(Args)]
struct GenScenes {
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    min_objects: usize,
    #[arg(long, default_value_t = 8)]
    max_objects: usize,
    #[arg(long, default_value_t = 640)]
    width: u32,
    #[arg(long, default_value_t = 480)]
    height: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    RelDir,
    RelDist,
    AbsDist,
    SizeEst,
    Count,
}

impl From<TaskArg> for TaskType {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::RelDir => TaskType::RelDir,
            TaskArg::RelDist => TaskType::RelDist,
            TaskArg::AbsDist => TaskType::AbsDist,
            TaskArg::SizeEst => TaskType::SizeEst,
            TaskArg::Count => TaskType::Count,
        }
    }
}

#[derive(Args)]
struct GenQa {
    #[arg(long)]
    scenes: PathBuf,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Restrict to these task types (default: all five).
    #[arg(long, value_enum, value_delimiter = ',')]
    tasks: Vec<TaskArg>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum DataKind {
    Warmup,
    Sft,
}

#[derive(Args)]
struct BuildData {
    #[arg(value_enum)]
    kind: DataKind,
    #[arg(long)]
    scenes: PathBuf,
    /// Questions for SFT; generated from the scenes when omitted.
    #[arg(long)]
    qa: Option<PathBuf>,
    #[arg(long, default_value_t = 1600)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.1875)]
    failure_fraction: f64,
    #[arg(long, default_value_t = DEFAULT_MARGIN)]
    r: f64,
    /// Output JSONL; rendered images go to `<out>.images/`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum AgentKind {
    Oracle,
    Notool,
    Remote,
}

#[derive(Args)]
struct Sandbox {
    #[arg(long)]
    scenes: PathBuf,
    /// `inprocess` or a tool.v1 server URL; defaults to SPATIALBOX_BACKEND or in-process.
    #[arg(long)]
    backend: Option<String>,
    /// `off`, a failure probability, or a JSON noise configuration file.
    #[arg(long, default_value = "off")]
    noise: String,
    #[arg(long, value_enum, default_value = "oracle")]
    agent: AgentKind,
    /// Chat-completions base URL for `--agent remote`; defaults to SPATIALBOX_AGENT.
    #[arg(long)]
    agent_url: Option<String>,
    #[arg(long, default_value = "default")]
    model: String,
    #[arg(long, default_value_t = 8)]
    max_calls: usize,
    #[arg(long, default_value_t = 8)]
    max_turns: usize,
    #[arg(long, default_value_t = DEFAULT_MARGIN)]
    r: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    qa: PathBuf,
    #[command(flatten)]
    sandbox: Sandbox,
    #[arg(long, default_value_t = 4)]
    parallelism: usize,
    /// Report JSON path.
    #[arg(long)]
    out: PathBuf,
    /// Optional JSONL of per-episode records.
    #[arg(long)]
    records: Option<PathBuf>,
}

#[derive(Args)]
struct RunEpisode {
    #[arg(long)]
    qa: PathBuf,
    /// Question id; the first question when omitted.
    #[arg(long)]
    id: Option<String>,
    #[command(flatten)]
    sandbox: Sandbox,
}

#[derive(Args)]
struct Reward {
    /// JSONL of SFT trajectories or episode records.
    #[arg(long)]
    trajectories: PathBuf,
    /// Reward configuration JSON; defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MARGIN)]
    r: f64,
    /// Also emit group-normalized advantages over consecutive groups of this size.
    #[arg(long)]
    group_size: Option<usize>,
}

#[derive(Args)]
struct Serve {
    #[arg(long)]
    scenes: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8700")]
    bind: String,
    #[arg(long, default_value = "off")]
    noise: String,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenScenes(a) => gen_scenes(a),
        Command::GenQa(a) => gen_qa(a),
        Command::BuildData(a) => build_data(a),
        Command::Eval(a) => eval(a),
        Command::RunEpisode(a) => run_one(a),
        Command::Reward(a) => reward(a),
        Command::Serve(a) => serve(a),
    }
}

fn load_scenes(dir: &Path) -> Result<Vec<SceneSpec>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading scene directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let scenes = paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p)?;
            let scene: SceneSpec = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            scene.validate().with_context(|| format!("validating {}", p.display()))?;
            Ok(scene)
        })
        .collect::<Result<Vec<_>>>()?;
    if scenes.is_empty() {
        bail!("no scene files in {}", dir.display());
    }
    Ok(scenes)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    BufReader::new(file)
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|(i, line)| {
            let line = line?;
            serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))
        })
        .collect()
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut out = BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn parse_noise(spec: &str) -> Result<NoiseConfig> {
    let noise = if spec == "off" {
        NoiseConfig::off()
    } else if let Ok(p) = spec.parse::<f64>() {
        NoiseConfig::with_failures(p)
    } else {
        let text = fs::read_to_string(spec).with_context(|| format!("reading noise config {spec}"))?;
        serde_json::from_str(&text).with_context(|| format!("parsing noise config {spec}"))?
    };
    noise.validate().map_err(anyhow::Error::msg)?;
    Ok(noise)
}

fn toolbox(scenes: Vec<SceneSpec>, backend: Option<&str>, noise: NoiseConfig) -> Result<Toolbox> {
    let store = SceneStore::new(scenes);
    let remote = match backend {
        Some("inprocess") => None,
        Some(url) => Some(RemoteBackend::new(url)?),
        None => RemoteBackend::from_env().transpose()?,
    };
    let perception: Binding = match remote {
        Some(r) => Arc::new(r),
        None => Arc::new(SyntheticBackend::new(store.clone()).with_noise(noise.clone())),
    };
    Ok(Toolbox::with_backend(store, perception).with_failures(noise))
}

fn make_agent(kind: AgentKind, url: Option<&str>, model: &str) -> Result<Box<dyn Fn() -> Box<dyn Agent> + Sync>> {
    Ok(match kind {
        AgentKind::Oracle => Box::new(|| Box::new(OracleAgent) as Box<dyn Agent>),
        AgentKind::Notool => Box::new(|| Box::new(NoToolAgent) as Box<dyn Agent>),
        AgentKind::Remote => {
            let url = url
                .map(str::to_string)
                .or_else(|| std::env::var(AGENT_ENDPOINT_ENV).ok())
                .context("--agent remote needs --agent-url or SPATIALBOX_AGENT")?;
            let mut agent = RemoteAgent::new(&url, model)?;
            if let Ok(key) = std::env::var("SPATIALBOX_API_KEY") {
                agent = agent.with_api_key(key);
            }
            Box::new(move || Box::new(agent.clone()) as Box<dyn Agent>)
        }
    })
}

fn gen_scenes(a: GenScenes) -> Result<()> {
    let scenes = generate_scenes(a.n, a.seed, (a.min_objects, a.max_objects), a.width, a.height)?;
    fs::create_dir_all(&a.out)?;
    for s in &scenes {
        fs::write(a.out.join(format!("{}.json", s.id)), serde_json::to_string_pretty(s)?)?;
    }
    println!("wrote {} scenes to {}", scenes.len(), a.out.display());
    Ok(())
}

fn gen_qa(a: GenQa) -> Result<()> {
    let scenes = load_scenes(&a.scenes)?;
    let tasks: Vec<TaskType> =
        if a.tasks.is_empty() { TaskType::ALL.to_vec() } else { a.tasks.into_iter().map(Into::into).collect() };
    let items = generate_qa_set(&scenes, a.n, &tasks, a.seed);
    if items.len() < a.n {
        eprintln!("only {} of {} questions could be generated", items.len(), a.n);
    }
    write_jsonl(&a.out, &items)?;
    println!("wrote {} questions to {}", items.len(), a.out.display());
    Ok(())
}

fn build_data(a: BuildData) -> Result<()> {
    let scenes = load_scenes(&a.scenes)?;
    let images = PathBuf::from(format!("{}.images", a.out.display()));
    let qa_items = match (&a.qa, a.kind) {
        (Some(p), DataKind::Sft) => read_jsonl::<QAItem>(p)?.into_iter().take(a.n).collect(),
        (None, DataKind::Sft) => generate_qa_set(&scenes, a.n, &TaskType::ALL, a.seed),
        (_, DataKind::Warmup) => Vec::new(),
    };
    let tb = Toolbox::in_process(SceneStore::new(scenes)).with_image_root(&images);
    match a.kind {
        DataKind::Warmup => {
            let pairs = build_warmup(&tb, a.n, a.seed)?;
            write_jsonl(&a.out, &pairs)?;
            println!("wrote {} warm-up pairs to {}", pairs.len(), a.out.display());
        }
        DataKind::Sft => {
            let trajs = build_sft(&qa_items, &tb, a.failure_fraction, a.seed, a.r)?;
            write_jsonl(&a.out, &trajs)?;
            let failed = trajs.iter().filter(|t| t.failure_injected).count();
            println!("wrote {} trajectories ({failed} with injected failures) to {}", trajs.len(), a.out.display());
        }
    }
    Ok(())
}

fn limits(s: &Sandbox) -> EpisodeLimits {
    EpisodeLimits { max_calls: s.max_calls, max_turns: s.max_turns, deadline: None }
}

fn eval(a: Eval) -> Result<()> {
    let items: Vec<QAItem> = read_jsonl(&a.qa)?;
    let s = &a.sandbox;
    let tb = toolbox(load_scenes(&s.scenes)?, s.backend.as_deref(), parse_noise(&s.noise)?)?;
    let factory = make_agent(s.agent, s.agent_url.as_deref(), &s.model)?;
    let records = run_eval(&items, &tb, factory.as_ref(), &limits(s), s.seed, s.r, a.parallelism)?;
    let report = compute_metrics(&records)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(&a.out, serde_json::to_string_pretty(&report)?)?;
    if let Some(path) = &a.records {
        write_jsonl(path, &records)?;
    }
    print!("{}", report.to_table());
    Ok(())
}

fn run_one(a: RunEpisode) -> Result<()> {
    let items: Vec<QAItem> = read_jsonl(&a.qa)?;
    let qa = match &a.id {
        Some(id) => items.iter().find(|q| &q.id == id).with_context(|| format!("no question `{id}`"))?,
        None => items.first().context("question file is empty")?,
    };
    let s = &a.sandbox;
    let tb = toolbox(load_scenes(&s.scenes)?, s.backend.as_deref(), parse_noise(&s.noise)?)?;
    let mut agent = make_agent(s.agent, s.agent_url.as_deref(), &s.model)?();
    let rec = run_episode(agent.as_mut(), qa, &tb, &limits(s), s.seed, s.r)?;
    println!("{}\n", qa.prompt());
    println!("{}\n", rec.transcript);
    println!("ground truth: {:?}; correct: {}; calls: {}; {:?}", qa.answer, rec.answer_correct, rec.n_calls, rec.termination);
    Ok(())
}

/// The fields of an SFT trajectory or episode record that the rewards need.
#[derive(Deserialize)]
struct Scorable {
    #[serde(alias = "transcript")]
    text: String,
    qa: QAItem,
    #[serde(default)]
    tool_calls: Vec<ToolCallRecord>,
    #[serde(default)]
    tool_results: Vec<SkillResult>,
}

#[derive(Serialize)]
struct Scored {
    id: String,
    #[serde(flatten)]
    breakdown: RewardBreakdown,
    #[serde(skip_serializing_if = "Option::is_none")]
    advantage: Option<f64>,
}

fn reward(a: Reward) -> Result<()> {
    let config = match &a.config {
        Some(p) => RewardConfig::from_json(&fs::read_to_string(p)?)?,
        None => RewardConfig::default(),
    };
    config.validate()?;
    let grammar = GrammarConfig::default();
    let items: Vec<Scorable> = read_jsonl(&a.trajectories)?;
    let mut scored: Vec<Scored> = items
        .iter()
        .map(|it| {
            let answer = parse_trajectory(&it.text, &grammar)
                .ok()
                .and_then(|t| t.answer_turn().map(|turn| turn.content.clone()));
            let correct = answer
                .as_deref()
                .and_then(|t| normalize_answer(t, it.qa.kind).ok())
                .is_some_and(|p| score_answer(&p, &it.qa.answer, a.r).unwrap_or(false));
            let any_success = it.tool_calls.iter().any(|c| c.outcome == CallOutcome::Success)
                || it.tool_results.iter().any(|r| r.status == SkillStatus::Complete);
            let parts = RewardParts {
                format: format_reward(&it.text, &config.tags),
                correct: correctness_from_text(answer.as_deref(), &it.qa.answer, config.weights.alpha),
                tool: tool_reward_from(any_success, correct),
            };
            Scored { id: it.qa.id.clone(), breakdown: RewardBreakdown::new(parts, &config.weights), advantage: None }
        })
        .collect();
    if let Some(g) = a.group_size {
        for chunk in scored.chunks_mut(g) {
            let rewards: Vec<f64> = chunk.iter().map(|s| s.breakdown.r_all).collect();
            for (s, adv) in chunk.iter_mut().zip(group_advantages(&rewards)?) {
                s.advantage = Some(adv);
            }
        }
    }
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for s in &scored {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    let n = scored.len().max(1) as f64;
    let mean = |f: fn(&RewardBreakdown) -> f64| scored.iter().map(|s| f(&s.breakdown)).sum::<f64>() / n;
    eprintln!(
        "{} trajectories: mean r_all {:.4}, r_format {:.4}, r_correct {:.4}, r_tool {:.4}",
        scored.len(),
        mean(|b| b.r_all),
        mean(|b| b.r_format),
        mean(|b| b.r_correct),
        mean(|b| b.r_tool)
    );
    Ok(())
}

fn serve(a: Serve) -> Result<()> {
    let store = SceneStore::new(load_scenes(&a.scenes)?);
    let backend = SyntheticBackend::new(store).with_noise(parse_noise(&a.noise)?);
    let server = MockServer::with_backend(backend, &a.bind)?;
    println!("serving tool.v1 on {}", server.url());
    loop {
        std::thread::park();
    }
}
