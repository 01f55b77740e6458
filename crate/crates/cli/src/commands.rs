//! The `run`, `bench`, `ablate`, `metrics`, `chat` and `replay` commands.

use std::collections::BTreeMap;
use std::io::{BufRead, IsTerminal, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Deserialize;
use serde_json::{Map, Value};
use shopdesk::agent::Agent;
use shopdesk::eval::{
    ai_contribution_ratio, compare_scenarios, format_decimal, mean, mean_completion_time,
    pass_hat_k, percent, read_annotations, relative_improvement, run_ablation, time_reduction,
    to_f64, AblationConfig, AblationError, MetricError, Scenario, TrialSet,
};
use shopdesk::memory::WorkingMemory;
use shopdesk::simenv::{run_episode, tools, Modality, TrialRecord};
use shopdesk::trace::TraceEvent;

use crate::config::{
    agent_config, load_suite, load_task, merge_agent, parse_agent, select_backend, AgentArgs,
    BackendArgs, CliFactory, FileConfig,
};
use crate::render::{event_lines, message_line, transcript_lines};
use crate::CliError;

const DEFAULT_OUT: &str = "shopdesk-out";
const DEFAULT_TRIALS: usize = 5;

fn out_dir(flag: Option<PathBuf>, file: &FileConfig) -> PathBuf {
    flag.or_else(|| file.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn io_failure(what: &str, path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::failure(format!("{what} {}: {e}", path.display()))
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::Malformed { .. } => CliError::failure(e.to_string()),
            MetricError::Usage(_) | MetricError::Io(_) => CliError::usage(e.to_string()),
        }
    }
}

impl From<AblationError> for CliError {
    fn from(e: AblationError) -> Self {
        match e {
            AblationError::Metric(m) => m.into(),
            AblationError::Backend { .. } | AblationError::Pool(_) => {
                CliError::usage(e.to_string())
            }
            AblationError::Io(_) => CliError::failure(e.to_string()),
        }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Task file, or a task id when a suite is given.
    pub task: String,
    #[arg(long)]
    pub suite: Option<PathBuf>,
    /// Image fixture file; defaults to the suite's.
    #[arg(long)]
    pub assets: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    pub agent: AgentArgs,
}

pub fn run(args: RunArgs, file: &FileConfig) -> Result<u8, CliError> {
    let agent = agent_config(file, &args.agent)?;
    let (choice, record) = select_backend(file, &args.backend)?;
    let (task, assets) = load_task(
        &args.task,
        args.suite.as_deref(),
        args.assets.as_deref(),
        file,
    )?;
    let factory = CliFactory::new(choice, record, assets)?;
    let mut backend = factory
        .backend_for(&task)
        .map_err(|e| CliError::usage(e.to_string()))?;
    let result = run_episode(&task, 0, &agent, backend.as_mut(), factory.visual.clone());

    let dir = out_dir(args.out, file).join(&task.task_id);
    result
        .write_to(&dir)
        .map_err(|e| io_failure("cannot write", &dir, e))?;
    let r = &result.record;
    println!("task={} success={}", r.task_id, r.success);
    for check in &r.report {
        let mark = if check.passed { "ok" } else { "FAIL" };
        let detail = check
            .detail
            .as_deref()
            .map_or_else(String::new, |d| format!(" ({d})"));
        println!("  [{mark}] {}{detail}", check.predicate);
    }
    if let Some(error) = &r.error {
        println!("error: {error}");
    }
    println!(
        "turns={} tool_calls={} describe_calls={} prompt_chars={} backend_calls={} wall_time_ms={:.1}",
        result.transcript.len(),
        result.trace.tool_calls().count(),
        r.usage.describe_calls,
        r.usage.prompt_chars,
        r.usage.backend_calls,
        r.wall_time_ms
    );
    println!(
        "artifacts: {}",
        dir.join(format!("trial-{:02}.*", r.trial_index)).display()
    );
    Ok(if r.success { 0 } else { 1 })
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Suite file (suite.json).
    #[arg(long)]
    pub suite: Option<PathBuf>,
    /// Row name in the report.
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long = "trials")]
    pub n_trials: Option<usize>,
    /// pass^k values to report; defaults to 1..=trials.
    #[arg(long = "k", value_delimiter = ',')]
    pub k_values: Vec<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    pub agent: AgentArgs,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, usize::from)
}

pub fn bench(args: BenchArgs, file: &FileConfig) -> Result<u8, CliError> {
    let agent = agent_config(file, &args.agent)?;
    let n_trials = args.n_trials.or(file.n_trials).unwrap_or(DEFAULT_TRIALS);
    let k_values = resolve_ks(args.k_values, file.k_values.clone(), n_trials);
    let config = AblationConfig {
        name: args
            .name
            .or_else(|| file.name.clone())
            .unwrap_or_else(|| "default".into()),
        agent,
        n_trials,
        k_values,
    };
    execute(
        &[config],
        args.suite.as_deref(),
        args.workers,
        args.out,
        &args.backend,
        file,
    )
}

fn resolve_ks(flag: Vec<usize>, file: Option<Vec<usize>>, n_trials: usize) -> Vec<usize> {
    if !flag.is_empty() {
        flag
    } else {
        file.unwrap_or_else(|| (1..=n_trials).collect())
    }
}

fn execute(
    configs: &[AblationConfig],
    suite: Option<&Path>,
    workers: Option<usize>,
    out: Option<PathBuf>,
    backend: &BackendArgs,
    file: &FileConfig,
) -> Result<u8, CliError> {
    let (choice, record) = select_backend(file, backend)?;
    if record.is_some() {
        return Err(CliError::usage("--record applies to run and chat only"));
    }
    for c in configs {
        c.validate()?;
    }
    let suite = load_suite(suite, file)?;
    let factory = CliFactory::new(choice, None, suite.assets.clone())?;
    let workers = workers.or(file.workers).unwrap_or_else(default_workers);
    let result = run_ablation(&suite, configs, &factory, workers)?;
    let dir = out_dir(out, file);
    result
        .write_to(&dir)
        .map_err(|e| io_failure("cannot write", &dir, e))?;
    print!("{}", result.report.to_text());
    println!("report: {}", dir.join("report.json").display());
    for row in result.report.rows.iter().filter(|r| r.errored_episodes > 0) {
        eprintln!(
            "config `{}`: {} of {} episodes ended with a backend error",
            row.config, row.errored_episodes, row.episodes
        );
    }
    Ok(if result.report.has_errors() { 1 } else { 0 })
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// JSON list of configs `{name, agent?, n_trials?, k_values?}`, or `{"configs": [...]}`.
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    #[arg(long)]
    pub suite: Option<PathBuf>,
    /// Default trials for configs that do not set their own.
    #[arg(long = "trials")]
    pub n_trials: Option<usize>,
    #[arg(long = "k", value_delimiter = ',')]
    pub k_values: Vec<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Base agent settings each config overrides.
    #[command(flatten)]
    pub agent: AgentArgs,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixEntry {
    name: String,
    #[serde(default)]
    agent: Map<String, Value>,
    n_trials: Option<usize>,
    k_values: Option<Vec<usize>>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum MatrixFile {
    List(Vec<MatrixEntry>),
    Wrapped { configs: Vec<MatrixEntry> },
}

pub fn ablate(args: AblateArgs, file: &FileConfig) -> Result<u8, CliError> {
    let path = args
        .matrix
        .or_else(|| file.matrix.clone())
        .ok_or_else(|| CliError::usage("no config matrix given (use --matrix)"))?;
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::usage(format!("cannot read matrix {}: {e}", path.display())))?;
    let entries = match serde_json::from_str::<MatrixFile>(&text)
        .map_err(|e| CliError::usage(format!("matrix {}: {e}", path.display())))?
    {
        MatrixFile::List(v) | MatrixFile::Wrapped { configs: v } => v,
    };
    let base = agent_config(file, &args.agent)?;
    let Value::Object(base) = serde_json::to_value(&base).expect("agent config serializes") else {
        unreachable!("agent config is an object")
    };
    let default_trials = args.n_trials.or(file.n_trials).unwrap_or(DEFAULT_TRIALS);
    let mut configs = Vec::with_capacity(entries.len());
    for entry in entries {
        if configs
            .iter()
            .any(|c: &AblationConfig| c.name == entry.name)
        {
            return Err(CliError::usage(format!(
                "matrix: duplicate config name `{}`",
                entry.name
            )));
        }
        let mut agent = base.clone();
        merge_agent(
            &mut agent,
            &entry.agent,
            &format!("matrix config `{}`", entry.name),
        )?;
        let n_trials = entry.n_trials.unwrap_or(default_trials);
        let k_values = match entry.k_values {
            Some(ks) => ks,
            None => resolve_ks(args.k_values.clone(), file.k_values.clone(), n_trials),
        };
        configs.push(AblationConfig {
            name: entry.name,
            agent: parse_agent(agent)?,
            n_trials,
            k_values,
        });
    }
    execute(
        &configs,
        args.suite.as_deref(),
        args.workers,
        args.out,
        &args.backend,
        file,
    )
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Directory of `trial-NN.json` records, or a JSONL file of records.
    #[arg(long)]
    pub records: Option<PathBuf>,
    /// CSV with columns session_id, message_id, source, judged_valid.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// JSON list of `{name, baseline, treatment}` annotation counts.
    #[arg(long)]
    pub scenarios: Option<PathBuf>,
    /// Relative improvement of TREAT over BASE; each side is a number or a
    /// config name from --records (its pass^1). Repeat for a mean.
    #[arg(long, value_name = "BASE:TREAT")]
    pub improve: Vec<String>,
    /// Relative reduction from BASE to TREAT (numbers).
    #[arg(long, value_name = "BASE:TREAT")]
    pub time_reduction: Vec<String>,
    /// pass^k values for --records; defaults to 1..=trials.
    #[arg(long = "k", value_delimiter = ',')]
    pub k_values: Vec<usize>,
}

fn split_pair(text: &str) -> Result<(&str, &str), CliError> {
    text.rsplit_once(':')
        .filter(|(a, b)| !a.is_empty() && !b.is_empty())
        .ok_or_else(|| CliError::usage(format!("expected BASE:TREAT, got `{text}`")))
}

fn load_records(path: &Path) -> Result<Vec<TrialRecord>, CliError> {
    let mut records = Vec::new();
    let mut bad = Vec::new();
    if path.is_dir() {
        for entry in walkdir::WalkDir::new(path).sort_by_file_name() {
            let entry = entry.map_err(|e| CliError::usage(e.to_string()))?;
            let name = entry.file_name().to_string_lossy();
            if !(entry.file_type().is_file()
                && name.starts_with("trial-")
                && name.ends_with(".json"))
            {
                continue;
            }
            let text = std::fs::read_to_string(entry.path())
                .map_err(|e| io_failure("cannot read", entry.path(), e))?;
            match serde_json::from_str::<TrialRecord>(&text) {
                Ok(r) => records.push(r),
                Err(e) => bad.push(format!("{}: {e}", entry.path().display())),
            }
        }
    } else {
        let input = std::fs::File::open(path)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        for (i, line) in std::io::BufReader::new(input).lines().enumerate() {
            let line = line.map_err(|e| io_failure("cannot read", path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<TrialRecord>(&line) {
                Ok(r) => records.push(r),
                Err(e) => bad.push(format!("line {}: {e}", i + 1)),
            }
        }
    }
    if !bad.is_empty() {
        return Err(CliError::failure(format!(
            "malformed trial records:\n  {}",
            bad.join("\n  ")
        )));
    }
    if records.is_empty() {
        return Err(CliError::failure(format!(
            "no trial records under {}",
            path.display()
        )));
    }
    Ok(records)
}

pub fn metrics(args: MetricsArgs) -> Result<u8, CliError> {
    if args.records.is_none()
        && args.annotations.is_none()
        && args.scenarios.is_none()
        && args.improve.is_empty()
        && args.time_reduction.is_empty()
    {
        return Err(CliError::usage(
            "nothing to compute: give --records, --annotations, --scenarios, --improve or --time-reduction",
        ));
    }

    let mut sets: BTreeMap<String, TrialSet> = BTreeMap::new();
    if let Some(path) = &args.records {
        let records = load_records(path)?;
        let mut grouped: BTreeMap<String, Vec<TrialRecord>> = BTreeMap::new();
        for r in records {
            grouped
                .entry(r.config.clone().unwrap_or_else(|| "default".into()))
                .or_default()
                .push(r);
        }
        for (config, records) in grouped {
            let set = TrialSet::from_records(&records);
            let n = set.min_trials();
            let ks = if args.k_values.is_empty() {
                (1..=n).collect()
            } else {
                args.k_values.clone()
            };
            println!(
                "config {config}: {} task(s), {n} trial(s) per task",
                set.tasks.len()
            );
            for k in ks {
                println!("  pass^{k} = {}", format_decimal(&pass_hat_k(&set, k)?, 4));
            }
            for (label, modality) in [
                ("all", None),
                ("unimodal", Some(Modality::Unimodal)),
                ("multimodal", Some(Modality::Multimodal)),
            ] {
                if let Ok(t) = mean_completion_time(&set, modality) {
                    println!("  mean_time_ms[{label}] = {t:.1}");
                }
            }
            sets.insert(config, set);
        }
    }

    if let Some(path) = &args.annotations {
        let input = std::fs::File::open(path)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let counts = read_annotations(input)?;
        let ratio = ai_contribution_ratio(&counts)?;
        println!(
            "ai_contribution_ratio = {}/{} = {:.4} (V_AI={}, T_AI={}, T_CR={})",
            ratio.numer(),
            ratio.denom(),
            *ratio.numer() as f64 / *ratio.denom() as f64,
            counts.v_ai,
            counts.t_ai,
            counts.t_cr
        );
    }

    if let Some(path) = &args.scenarios {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum ScenarioFile {
            List(Vec<Scenario>),
            Wrapped { scenarios: Vec<Scenario> },
        }
        let scenarios = match serde_json::from_str::<ScenarioFile>(&text)
            .map_err(|e| CliError::failure(format!("{}: {e}", path.display())))?
        {
            ScenarioFile::List(v) | ScenarioFile::Wrapped { scenarios: v } => v,
        };
        let (rows, avg) = compare_scenarios(&scenarios)?;
        for row in &rows {
            println!(
                "relative_improvement[{}] = {} (ratio {:.4} -> {:.4})",
                row.name,
                percent(row.improvement),
                row.baseline_ratio,
                row.treatment_ratio
            );
        }
        println!("relative_improvement[mean] = {}", percent(avg));
    }

    let rate = |side: &str| -> Result<f64, CliError> {
        if let Ok(v) = side.parse::<f64>() {
            return Ok(v);
        }
        let set = sets.get(side).ok_or_else(|| {
            CliError::usage(format!(
                "`{side}` is neither a number nor a config in --records"
            ))
        })?;
        Ok(to_f64(&pass_hat_k(set, 1)?))
    };
    let mut improvements = Vec::new();
    for pair in &args.improve {
        let (base, treat) = split_pair(pair)?;
        let value = relative_improvement(rate(base)?, rate(treat)?)?;
        println!("relative_improvement[{base}:{treat}] = {}", percent(value));
        improvements.push(value);
    }
    if improvements.len() > 1 {
        let avg = mean(&improvements).expect("non-empty");
        println!("relative_improvement[mean] = {}", percent(avg));
    }
    for pair in &args.time_reduction {
        let (base, treat) = split_pair(pair)?;
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| CliError::usage(format!("time must be a number, got `{s}`")))
        };
        let value = time_reduction(parse(base)?, parse(treat)?)?;
        println!("time_reduction[{base}:{treat}] = {}", percent(value));
    }
    Ok(0)
}

#[derive(Debug, Args)]
pub struct ChatArgs {
    /// Task whose store and (for scripted runs) script back the session.
    pub task: String,
    #[arg(long)]
    pub suite: Option<PathBuf>,
    #[arg(long)]
    pub assets: Option<PathBuf>,
    /// Write the transcript and trace here on exit.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    pub agent: AgentArgs,
}

pub fn chat(args: ChatArgs, file: &FileConfig) -> Result<u8, CliError> {
    let config = agent_config(file, &args.agent)?;
    let (choice, record) = select_backend(file, &args.backend)?;
    let (task, assets) = load_task(
        &args.task,
        args.suite.as_deref(),
        args.assets.as_deref(),
        file,
    )?;
    let factory = CliFactory::new(choice, record, assets)?;
    let mut backend = factory
        .backend_for(&task)
        .map_err(|e| CliError::usage(e.to_string()))?;
    let registry = tools::registry(config.strategy);
    let mut agent = Agent::new(
        &format!("chat-{}", task.task_id),
        &config,
        &registry,
        backend.as_mut(),
        task.reset(),
        factory.visual.clone(),
    );

    let interactive = std::io::stdin().is_terminal();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let _ = writeln!(
        out,
        "chat with task `{}`; /trace, /transcript, /quit",
        task.task_id
    );
    let mut shown = 0;
    let stdin = std::io::stdin();
    let mut lines = stdin.lock().lines();
    loop {
        if interactive {
            let _ = write!(out, "buyer> ");
            let _ = out.flush();
        }
        let Some(line) = lines.next() else { break };
        let line = line.map_err(|e| CliError::failure(format!("cannot read input: {e}")))?;
        let line = line.trim();
        match line {
            "" => continue,
            "/quit" | "/exit" => break,
            "/trace" => {
                for event in agent.session().trace.events() {
                    for l in event_lines(event) {
                        let _ = writeln!(out, "{l}");
                    }
                }
                continue;
            }
            "/transcript" => {
                for l in transcript_lines(agent.transcript()) {
                    let _ = writeln!(out, "{l}");
                }
                continue;
            }
            _ => {}
        }
        if !interactive {
            let _ = writeln!(out, "buyer> {line}");
        }
        let outcome = agent.handle_buyer_turn(line);
        let events = agent.session().trace.events();
        for event in &events[shown..] {
            for l in event_lines(event) {
                let _ = writeln!(out, "{l}");
            }
        }
        shown = events.len();
        if let Some(reply) = &outcome.reply {
            let _ = writeln!(out, "agent: {reply}");
        }
        if let Some(error) = &outcome.fatal {
            let _ = writeln!(out, "error: {error}");
        }
    }

    if let Some(dir) = args.out.or_else(|| file.out_dir.clone()) {
        let (transcript, session, _) = agent.into_parts();
        write_session(&dir, &transcript, session.trace.events())?;
        let _ = writeln!(out, "session written to {}", dir.display());
    }
    Ok(0)
}

fn write_session(
    dir: &Path,
    transcript: &WorkingMemory,
    events: &[TraceEvent],
) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io_failure("cannot create", dir, e))?;
    let path = dir.join("chat.transcript.jsonl");
    let f = std::fs::File::create(&path).map_err(|e| io_failure("cannot write", &path, e))?;
    transcript
        .write_jsonl(std::io::BufWriter::new(f))
        .map_err(|e| io_failure("cannot write", &path, e))?;
    let path = dir.join("chat.trace.jsonl");
    let mut text = String::new();
    for event in events {
        text.push_str(&serde_json::to_string(event).expect("event serializes"));
        text.push('\n');
    }
    std::fs::write(&path, text).map_err(|e| io_failure("cannot write", &path, e))
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// A `*.transcript.jsonl` file.
    pub transcript: PathBuf,
    /// Also print the sibling `*.trace.jsonl`.
    #[arg(long)]
    pub trace: bool,
}

pub fn replay(args: ReplayArgs) -> Result<u8, CliError> {
    let input = std::fs::File::open(&args.transcript)
        .map_err(|e| CliError::usage(format!("{}: {e}", args.transcript.display())))?;
    let memory = WorkingMemory::read_jsonl(std::io::BufReader::new(input))
        .map_err(|e| CliError::failure(format!("{}: {e}", args.transcript.display())))?;
    let mut text = format!("session {} ({} turns)\n", memory.session_id, memory.len());
    for message in memory.turns() {
        text.push_str(&message_line(message));
        text.push('\n');
    }
    if args.trace {
        let name = args.transcript.to_string_lossy();
        let Some(stem) = name.strip_suffix(".transcript.jsonl") else {
            return Err(CliError::usage(
                "--trace needs a file named *.transcript.jsonl",
            ));
        };
        let path = PathBuf::from(format!("{stem}.trace.jsonl"));
        let raw = std::fs::read_to_string(&path)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        text.push_str("trace:\n");
        for (i, line) in raw
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let event: TraceEvent = serde_json::from_str(line).map_err(|e| {
                CliError::failure(format!("{} line {}: {e}", path.display(), i + 1))
            })?;
            for l in event_lines(&event) {
                text.push_str(&l);
                text.push('\n');
            }
        }
    }
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
    Ok(0)
}
