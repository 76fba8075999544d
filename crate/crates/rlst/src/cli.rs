//! Argument parsing and the subcommands of the `rlst` binary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use rlst_core::discriminator::Discriminator;
use rlst_core::generator::Generator;
use rlst_core::lm::LanguageModel;
use rlst_core::metrics::EvaluationReport;
use rlst_core::rl::{Control, RlModels};
use rlst_core::{ParameterSet, Sentence, Style};

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::io::{self, DirLock, TsvLog};
use crate::pipeline::{self, EvalModels, PretrainRecord, RlEvent, Role, Workspace};

const FORMAT_VERSION: f64 = 1.0;

#[derive(Debug, Parser)]
#[command(name = "rlst", version, about = "Text style transfer trained with reinforcement learning")]
pub struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Random seed (overrides the configuration).
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory for checkpoints, logs and reports.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Override one configuration key; may be repeated.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic marker-substitution corpus and its word vectors.
    SynthData,
    /// Pre-train the generator as a target-style autoencoder.
    PretrainGen,
    /// Pre-train the reward discriminator and the frozen evaluation classifier.
    PretrainStyle,
    /// Pre-train the reward language model and the frozen evaluation one.
    PretrainLm,
    /// Fine-tune the generator with REINFORCE against the reward models.
    TrainRl {
        /// Continue from `rl_state.ckpt` instead of starting over.
        #[arg(long)]
        resume: bool,
        /// Stop (and save state) after this many updates in total.
        #[arg(long, value_name = "N")]
        stop_after: Option<usize>,
    },
    /// Transfer every line of a file into the target style.
    Transfer {
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        /// Defaults to standard output.
        #[arg(long, value_name = "PATH")]
        output: Option<PathBuf>,
        /// Generator checkpoint; defaults to `<out>/rl_generator.ckpt`.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Score transferred sentences with the frozen evaluation models.
    ///
    /// Without `--generated`, the generator transfers the source sentences
    /// of `--split` first.
    Evaluate {
        #[arg(long, value_name = "PATH", requires = "sources")]
        generated: Option<PathBuf>,
        #[arg(long, value_name = "PATH", requires = "generated")]
        sources: Option<PathBuf>,
        #[arg(long, value_name = "PATH", conflicts_with = "generated")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
    },
    /// Perplexity of a file under the evaluation language model.
    Ppl {
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        /// Use the reward language model instead.
        #[arg(long)]
        reward_lm: bool,
    },
    /// Summarize training logs into tables and plot data.
    Report,
}

/// Where every artifact of a run lives.
#[derive(Debug, Clone)]
pub struct Layout {
    pub out: PathBuf,
}

impl Layout {
    pub fn generator(&self) -> PathBuf {
        self.out.join("generator.ckpt")
    }
    pub fn discriminator(&self) -> PathBuf {
        self.out.join("discriminator.ckpt")
    }
    pub fn eval_classifier(&self) -> PathBuf {
        self.out.join("eval_classifier.ckpt")
    }
    pub fn lm(&self) -> PathBuf {
        self.out.join("lm.ckpt")
    }
    pub fn eval_lm(&self) -> PathBuf {
        self.out.join("eval_lm.ckpt")
    }
    pub fn rl_generator(&self) -> PathBuf {
        self.out.join("rl_generator.ckpt")
    }
    pub fn rl_state(&self) -> PathBuf {
        self.out.join("rl_state.ckpt")
    }
    pub fn logs(&self) -> PathBuf {
        self.out.join("logs")
    }
    pub fn log(&self, name: &str) -> PathBuf {
        self.logs().join(format!("{name}.tsv"))
    }
    pub fn report(&self) -> PathBuf {
        self.out.join("report")
    }
}

/// Defaults, then the config file, then `--set`, then `--seed`/`--out`.
pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parses `args`, runs the subcommand and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match resolve_config(&cli).and_then(|cfg| run(&cli.command, &cfg)) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: &Command, cfg: &ExperimentConfig) -> Result<()> {
    let layout = Layout { out: cfg.out_dir.clone() };
    match command {
        Command::SynthData => {
            let _lock = DirLock::acquire(&layout.out)?;
            synth_data(cfg)
        }
        Command::PretrainGen => {
            let _lock = DirLock::acquire(&layout.out)?;
            pretrain_gen(cfg, &layout)
        }
        Command::PretrainStyle => {
            let _lock = DirLock::acquire(&layout.out)?;
            pretrain_style(cfg, &layout)
        }
        Command::PretrainLm => {
            let _lock = DirLock::acquire(&layout.out)?;
            pretrain_lm(cfg, &layout)
        }
        Command::TrainRl { resume, stop_after } => {
            let _lock = DirLock::acquire(&layout.out)?;
            train_rl(cfg, &layout, *resume, *stop_after)
        }
        Command::Transfer { input, output, checkpoint } => transfer(cfg, &layout, input, output.as_deref(), checkpoint.as_deref()),
        Command::Evaluate { generated, sources, checkpoint, split } => {
            let _lock = DirLock::acquire(&layout.out)?;
            evaluate(cfg, &layout, generated.as_deref().zip(sources.as_deref()), checkpoint.as_deref(), *split)
        }
        Command::Ppl { input, reward_lm } => ppl(cfg, &layout, input, *reward_lm),
        Command::Report => {
            let _lock = DirLock::acquire(&layout.out)?;
            report(&layout)
        }
    }
}

fn synth_data(cfg: &ExperimentConfig) -> Result<()> {
    let (task, vectors) = pipeline::synth_data(cfg)?;
    let dir = cfg.data_dir();
    io::write_corpus(&dir, &task.corpus)?;
    io::write_embeddings(&cfg.embeddings_path(), &vectors)?;
    log::info!(
        "wrote {} + {} training sentences and {} word vectors to {}",
        task.corpus.source.train.len(),
        task.corpus.target.train.len(),
        vectors.len(),
        dir.display()
    );
    Ok(())
}

/// Corpus, vectors and stopwords named by the configuration.
pub fn load_workspace(cfg: &ExperimentConfig) -> Result<Workspace> {
    let corpus = io::read_corpus(&cfg.data_dir())?;
    let vectors = io::read_embeddings(&cfg.embeddings_path())?;
    let stopwords = match &cfg.stopwords {
        Some(path) => io::read_text(path)?.split_whitespace().map(str::to_string).collect(),
        None => Vec::new(),
    };
    Workspace::build(&corpus, &vectors, &stopwords, cfg)
}

fn checkpoint_of(set: &ParameterSet, ws: &Workspace) -> Checkpoint {
    let mut c = Checkpoint::new();
    c.add_set(set).set_meta("version", FORMAT_VERSION).set_meta("vocab_size", ws.vocab.len() as f64);
    c
}

/// Loads a checkpoint that an earlier subcommand should have written.
fn require(path: &Path, command: &'static str, ws: &Workspace) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(CliError::MissingPrerequisite { artifact: path.to_path_buf(), command });
    }
    let c = Checkpoint::load(path)?;
    if c.meta("version") != Some(FORMAT_VERSION) {
        return Err(CliError::format(path, "unsupported checkpoint version"));
    }
    if c.meta("vocab_size") != Some(ws.vocab.len() as f64) {
        return Err(CliError::format(
            path,
            format!("trained with a different vocabulary than {}; rerun `rlst {command}`", ws.vocab.len()),
        ));
    }
    Ok(c)
}

fn load_generator(c: &Checkpoint, path: &Path) -> Result<Generator> {
    let set = c.parameter_set("gen").and_then(Generator::from_params);
    set.map_err(|e| CliError::format(path, e.to_string()))
}

fn load_classifier(c: &Checkpoint, path: &Path, prefix: &str) -> Result<Discriminator> {
    let d = c.parameter_set(prefix).and_then(|p| Discriminator::from_params(p, prefix));
    d.map_err(|e| CliError::format(path, e.to_string()))
}

fn load_lm(c: &Checkpoint, path: &Path, prefix: &str) -> Result<LanguageModel> {
    let lm = c.parameter_set(prefix).and_then(|p| LanguageModel::from_params(p, prefix));
    lm.map_err(|e| CliError::format(path, e.to_string()))
}

fn pretrain_logger<'a>(log: &'a mut TsvLog, what: &'a str) -> impl FnMut(PretrainRecord) -> Result<()> + 'a {
    let mut epoch = None;
    move |r: PretrainRecord| {
        if epoch != Some(r.epoch) {
            log::info!("{what}: epoch {}", r.epoch + 1);
            epoch = Some(r.epoch);
        }
        log::debug!("{what}: step {} loss {:.6}", r.step, r.loss);
        log.row(&r.tsv())
    }
}

fn pretrain_gen(cfg: &ExperimentConfig, layout: &Layout) -> Result<()> {
    let ws = load_workspace(cfg)?;
    let mut log = TsvLog::create(&layout.log("pretrain_gen"), PretrainRecord::HEADER)?;
    let generator = pipeline::pretrain_generator(&ws, cfg, &mut pretrain_logger(&mut log, "generator"))?;
    checkpoint_of(&generator.params, &ws).save(&layout.generator())?;
    log::info!("saved {}", layout.generator().display());
    Ok(())
}

fn pretrain_style(cfg: &ExperimentConfig, layout: &Layout) -> Result<()> {
    let ws = load_workspace(cfg)?;
    for (role, path, name) in [
        (Role::Reward, layout.discriminator(), "pretrain_style"),
        (Role::Evaluation, layout.eval_classifier(), "pretrain_eval_style"),
    ] {
        let mut log = TsvLog::create(&layout.log(name), PretrainRecord::HEADER)?;
        let d = pipeline::pretrain_classifier(&ws, cfg, role, &mut pretrain_logger(&mut log, role.classifier_prefix()))?;
        checkpoint_of(&d.params, &ws).save(&path)?;
        log::info!("saved {}", path.display());
    }
    Ok(())
}

fn pretrain_lm(cfg: &ExperimentConfig, layout: &Layout) -> Result<()> {
    let ws = load_workspace(cfg)?;
    for (role, path, name) in [
        (Role::Reward, layout.lm(), "pretrain_lm"),
        (Role::Evaluation, layout.eval_lm(), "pretrain_eval_lm"),
    ] {
        let mut log = TsvLog::create(&layout.log(name), PretrainRecord::HEADER)?;
        let lm = pipeline::pretrain_language_model(&ws, cfg, role, &mut pretrain_logger(&mut log, role.lm_prefix()))?;
        checkpoint_of(&lm.params, &ws).save(&path)?;
        log::info!("saved {}", path.display());
    }
    Ok(())
}

fn load_eval_models(ws: &Workspace, layout: &Layout) -> Result<EvalModels> {
    let clf_path = layout.eval_classifier();
    let lm_path = layout.eval_lm();
    let classifier = load_classifier(&require(&clf_path, "pretrain-style", ws)?, &clf_path, Role::Evaluation.classifier_prefix())?;
    let lm = load_lm(&require(&lm_path, "pretrain-lm", ws)?, &lm_path, Role::Evaluation.lm_prefix())?;
    Ok(EvalModels { classifier, lm })
}

fn save_rl_state(layout: &Layout, ws: &Workspace, models: &RlModels, step: usize, best: Option<f64>) -> Result<()> {
    let mut c = checkpoint_of(&models.generator.params, ws);
    c.add_set(&models.discriminator.params);
    c.set_meta("step", step as f64).set_meta("best_overall", best.unwrap_or(f64::NAN));
    c.save(&layout.rl_state())
}

fn train_rl(cfg: &ExperimentConfig, layout: &Layout, resume: bool, stop_after: Option<usize>) -> Result<()> {
    let ws = load_workspace(cfg)?;
    let (gen_path, disc_path, lm_path) = (layout.generator(), layout.discriminator(), layout.lm());
    let gen_ckpt = require(&gen_path, "pretrain-gen", &ws)?;
    let disc_ckpt = require(&disc_path, "pretrain-style", &ws)?;
    let lm_ckpt = require(&lm_path, "pretrain-lm", &ws)?;
    let eval = load_eval_models(&ws, layout)?;
    let lm = load_lm(&lm_ckpt, &lm_path, Role::Reward.lm_prefix())?;

    let (generator, discriminator, start, mut best, mut rl_log, mut eval_log);
    if resume {
        let path = layout.rl_state();
        let state = require(&path, "train-rl", &ws)?;
        generator = load_generator(&state, &path)?;
        discriminator = load_classifier(&state, &path, Role::Reward.classifier_prefix())?;
        start = state.meta("step").ok_or_else(|| CliError::format(&path, "no step recorded"))? as usize;
        best = state.meta("best_overall").filter(|b| !b.is_nan());
        rl_log = TsvLog::resume(&layout.log("rl"), start)?;
        eval_log = TsvLog::resume(&layout.log("rl_eval"), start + 1)?;
        log::info!("resuming after {start} updates");
    } else {
        generator = load_generator(&gen_ckpt, &gen_path)?;
        discriminator = load_classifier(&disc_ckpt, &disc_path, Role::Reward.classifier_prefix())?;
        start = 0;
        best = None;
        rl_log = TsvLog::create(&layout.log("rl"), pipeline::RL_LOG_HEADER)?;
        eval_log = TsvLog::create(&layout.log("rl_eval"), pipeline::EVAL_LOG_HEADER)?;
    }
    let mut models = RlModels { generator, discriminator, lm, embeddings: ws.embeddings.clone(), filter: ws.filter.clone() };
    let mut done = start;
    let mut saved_best = layout.rl_generator().exists() && resume;
    pipeline::train_rl(&ws, cfg, &mut models, &eval, start, &mut |event| match event {
        RlEvent::Update { step, report, .. } => {
            rl_log.row(&pipeline::rl_log_row(step, report))?;
            done = step + 1;
            if done % 50 == 0 {
                log::info!("update {done}: reward {:.4}, discriminator loss {:.4}", report.reward, report.discriminator_loss);
            }
            if report.skipped > 0 {
                log::warn!("update {step}: skipped {} episode(s) with non-finite gradients", report.skipped);
            }
            Ok(if stop_after.is_some_and(|s| done >= s) { Control::Stop } else { Control::Continue })
        }
        RlEvent::Evaluation { step, result, models } => {
            if let Ok(report) = result {
                eval_log.row(&pipeline::eval_log_row(step, report))?;
                log::info!("dev after {step} updates: {}", report.tsv_row());
                let better = match (report.overall, best) {
                    (Some(o), Some(b)) => o > b,
                    (Some(_), None) => true,
                    (None, _) => !saved_best,
                };
                if better {
                    best = report.overall.or(best);
                    let mut c = checkpoint_of(&models.generator.params, &ws);
                    c.set_meta("step", step as f64);
                    c.save(&layout.rl_generator())?;
                    saved_best = true;
                }
            }
            save_rl_state(layout, &ws, models, step, best)?;
            Ok(Control::Continue)
        }
    })?;
    save_rl_state(layout, &ws, &models, done, best)?;
    if !saved_best {
        checkpoint_of(&models.generator.params, &ws).save(&layout.rl_generator())?;
    }
    log::info!("saved {} after {done} updates", layout.rl_state().display());
    Ok(())
}

fn generator_for(layout: &Layout, ws: &Workspace, checkpoint: Option<&Path>) -> Result<Generator> {
    let path = checkpoint.map_or_else(|| layout.rl_generator(), Path::to_path_buf);
    let command = if checkpoint.is_some() { "pretrain-gen" } else { "train-rl" };
    load_generator(&require(&path, command, ws)?, &path)
}

fn decode_all(ws: &Workspace, sentences: &[Sentence]) -> Vec<Vec<String>> {
    sentences.iter().map(|s| ws.vocab.decode(&s.content())).collect()
}

fn transfer(cfg: &ExperimentConfig, layout: &Layout, input: &Path, output: Option<&Path>, checkpoint: Option<&Path>) -> Result<()> {
    let ws = load_workspace(cfg)?;
    let generator = generator_for(layout, &ws, checkpoint)?;
    let text = io::read_text(input)?;
    let mut out = String::new();
    for line in text.lines() {
        let source = ws.encode_line(line, Style::Source);
        if source.content().is_empty() {
            out.push('\n');
            continue;
        }
        let generated = pipeline::transfer_all(&generator, std::slice::from_ref(&source), cfg.beam_width)?;
        out.push_str(&ws.vocab.decode(&generated[0].content()).join(" "));
        out.push('\n');
    }
    match output {
        Some(path) => io::write_atomic(path, out.as_bytes()),
        None => {
            print!("{out}");
            Ok(())
        }
    }
}

fn evaluate(
    cfg: &ExperimentConfig,
    layout: &Layout,
    files: Option<(&Path, &Path)>,
    checkpoint: Option<&Path>,
    split: Split,
) -> Result<()> {
    let ws = load_workspace(cfg)?;
    let eval = load_eval_models(&ws, layout)?;
    let (generated, sources) = match files {
        Some((gen_path, src_path)) => {
            let generated = io::read_sentences(gen_path)?;
            let sources = io::read_sentences(src_path)?;
            if generated.len() != sources.len() {
                return Err(CliError::Usage(format!(
                    "{} has {} sentences but {} has {}",
                    gen_path.display(),
                    generated.len(),
                    src_path.display(),
                    sources.len()
                )));
            }
            let enc = |s: &[Vec<String>], style| s.iter().map(|w| ws.vocab.encode(w, style)).collect::<Vec<_>>();
            (enc(&generated, Style::Target), enc(&sources, Style::Source))
        }
        None => {
            let generator = generator_for(layout, &ws, checkpoint)?;
            let sources = match split {
                Split::Train => ws.source.train.clone(),
                Split::Dev => ws.source.dev.clone(),
                Split::Test => ws.source.test.clone(),
            };
            let generated = pipeline::transfer_all(&generator, &sources, cfg.beam_width)?;
            let path = layout.out.join(format!("transfer.{}.txt", split.name()));
            io::write_sentences(&path, &decode_all(&ws, &generated))?;
            (generated, sources)
        }
    };
    let report = eval.evaluate(&ws, cfg, &generated, &sources)?;
    let tsv = format!("{}\n{}\n", EvaluationReport::TSV_HEADER, report.tsv_row());
    io::write_atomic(&layout.out.join("evaluation.tsv"), tsv.as_bytes())?;
    print!("{}", report.table());
    Ok(())
}

fn ppl(cfg: &ExperimentConfig, layout: &Layout, input: &Path, reward_lm: bool) -> Result<()> {
    let ws = load_workspace(cfg)?;
    let role = if reward_lm { Role::Reward } else { Role::Evaluation };
    let (path, command) = if reward_lm { (layout.lm(), "pretrain-lm") } else { (layout.eval_lm(), "pretrain-lm") };
    let lm = load_lm(&require(&path, command, &ws)?, &path, role.lm_prefix())?;
    let sentences: Vec<Sentence> =
        io::read_sentences(input)?.iter().map(|w| ws.vocab.encode(w, Style::Target)).collect();
    let value = rlst_core::metrics::corpus_perplexity(&sentences, &lm)?;
    println!("{value:.6}");
    Ok(())
}

/// Summary statistics of one logged metric.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSummary {
    pub log: String,
    pub metric: String,
    pub points: usize,
    pub first: f64,
    pub last: f64,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

impl MetricSummary {
    pub const HEADER: &'static str = "log\tmetric\tpoints\tfirst\tlast\tmin\tmax\tmean";

    fn from_series(log: &str, metric: &str, series: &[(f64, f64)]) -> Option<Self> {
        let (&(_, first), &(_, last)) = (series.first()?, series.last()?);
        let values = series.iter().map(|p| p.1);
        Some(Self {
            log: log.into(),
            metric: metric.into(),
            points: series.len(),
            first,
            last,
            min: values.clone().fold(f64::INFINITY, f64::min),
            max: values.clone().fold(f64::NEG_INFINITY, f64::max),
            mean: values.sum::<f64>() / series.len() as f64,
        })
    }

    fn cells(&self) -> [String; 8] {
        let f = |x: f64| format!("{x:.6}");
        [
            self.log.clone(),
            self.metric.clone(),
            self.points.to_string(),
            f(self.first),
            f(self.last),
            f(self.min),
            f(self.max),
            f(self.mean),
        ]
    }
}

/// Columns of a TSV log as (step, value) series; cells that do not parse as
/// numbers (such as `NA`) are left out.
pub fn log_series(text: &str) -> Vec<(String, Vec<(f64, f64)>)> {
    let mut lines = text.lines();
    let Some(header) = lines.next() else { return Vec::new() };
    let names: Vec<&str> = header.split('\t').collect();
    let mut series: Vec<(String, Vec<(f64, f64)>)> = names.iter().skip(1).map(|n| (n.to_string(), Vec::new())).collect();
    for line in lines {
        let cells: Vec<&str> = line.split('\t').collect();
        let Some(step) = cells.first().and_then(|c| c.parse::<f64>().ok()) else { continue };
        for (i, cell) in cells.iter().enumerate().skip(1) {
            if let (Some(s), Ok(v)) = (series.get_mut(i - 1), cell.parse::<f64>()) {
                if v.is_finite() {
                    s.1.push((step, v));
                }
            }
        }
    }
    series
}

fn report(layout: &Layout) -> Result<()> {
    let dir = layout.logs();
    let mut names: Vec<String> = match std::fs::read_dir(&dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(".tsv")).map(str::to_string))
            .collect(),
        Err(_) => Vec::new(),
    };
    if names.is_empty() {
        return Err(CliError::MissingPrerequisite { artifact: dir, command: "pretrain-gen" });
    }
    names.sort();
    let plots = layout.report().join("plots");
    let mut summaries = Vec::new();
    for name in &names {
        for (metric, series) in log_series(&io::read_text(&layout.log(name))?) {
            let mut data = format!("# step\t{metric}\n");
            for (step, value) in &series {
                let _ = writeln!(data, "{step}\t{value}");
            }
            io::write_atomic(&plots.join(format!("{name}.{metric}.tsv")), data.as_bytes())?;
            summaries.extend(MetricSummary::from_series(name, &metric, &series));
        }
    }
    let mut tsv = format!("{}\n", MetricSummary::HEADER);
    for s in &summaries {
        tsv.push_str(&s.cells().join("\t"));
        tsv.push('\n');
    }
    io::write_atomic(&layout.report().join("summary.tsv"), tsv.as_bytes())?;

    let rows: Vec<[String; 8]> = summaries.iter().map(MetricSummary::cells).collect();
    let header: Vec<&str> = MetricSummary::HEADER.split('\t').collect();
    let widths: Vec<usize> =
        (0..8).map(|i| rows.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0)).collect();
    let mut table = String::new();
    let mut line = |cells: &[&str]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i < 2 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        table.push_str(padded.join("  ").trim_end());
        table.push('\n');
    };
    line(&header);
    for r in &rows {
        line(&r.iter().map(String::as_str).collect::<Vec<_>>());
    }
    if let Ok(eval) = io::read_text(&layout.out.join("evaluation.tsv")) {
        table.push_str("\nfinal evaluation\n");
        table.push_str(&eval);
    }
    io::write_atomic(&layout.report().join("summary.txt"), table.as_bytes())?;
    print!("{table}");
    Ok(())
}
