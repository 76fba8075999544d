//! The experiment stages, independent of where their inputs come from.

use rand::seq::SliceRandom;
use rand::SeedableRng;

use rlst_core::corpus::{encode_all, make_synthetic_task, synthetic_embeddings, StyleCorpus, SyntheticSpec, SyntheticTask, Vocabulary};
use rlst_core::discriminator::{Discriminator, DiscriminatorConfig};
use rlst_core::embedding::Embeddings;
use rlst_core::generator::{default_max_len, Generator, GeneratorConfig};
use rlst_core::lm::{LanguageModel, LmConfig};
use rlst_core::metrics::{EvaluationReport, Evaluator};
use rlst_core::rl::{self, Control, RlModels, RlStepReport, Schedule};
use rlst_core::semantic::ContentFilter;
use rlst_core::{Rng, Sentence, Style};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

/// Independent random streams for each stage of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stage {
    Data = 1,
    Generator = 2,
    Discriminator = 3,
    EvalClassifier = 4,
    LanguageModel = 5,
    EvalLanguageModel = 6,
}

pub fn stage_rng(seed: u64, stage: Stage) -> Rng {
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream((stage as u64) << 56);
    rng
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EncodedSplits {
    pub train: Vec<Sentence>,
    pub dev: Vec<Sentence>,
    pub test: Vec<Sentence>,
}

/// Vocabulary, vectors and encoded corpus shared by every stage.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub vocab: Vocabulary,
    pub embeddings: Embeddings,
    pub source: EncodedSplits,
    pub target: EncodedSplits,
    pub filter: ContentFilter,
}

impl Workspace {
    pub fn build(
        corpus: &StyleCorpus,
        vectors: &[(String, Vec<f64>)],
        stopwords: &[String],
        cfg: &ExperimentConfig,
    ) -> Result<Self> {
        let vocab = corpus.build_vocab(cfg.min_freq, cfg.max_vocab);
        let embeddings = Embeddings::from_pretrained(&vocab, vectors)?;
        if embeddings.dim() != cfg.embed_dim {
            return Err(CliError::Config(format!(
                "word vectors have dimension {}, but embed_dim = {}",
                embeddings.dim(),
                cfg.embed_dim
            )));
        }
        let encode = |splits: &rlst_core::corpus::Splits, style| EncodedSplits {
            train: encode_all(&vocab, &splits.train, style),
            dev: encode_all(&vocab, &splits.dev, style),
            test: encode_all(&vocab, &splits.test, style),
        };
        let source = encode(&corpus.source, Style::Source);
        let target = encode(&corpus.target, Style::Target);
        if source.train.is_empty() || target.train.is_empty() {
            return Err(CliError::Usage("both styles need training sentences".into()));
        }
        let filter = ContentFilter { stopwords: stopwords.iter().filter_map(|w| vocab.index(w)).collect() };
        Ok(Self { vocab, embeddings, source, target, filter })
    }

    pub fn encode_line(&self, line: &str, style: Style) -> Sentence {
        self.vocab.encode(&rlst_core::corpus::tokenize(line), style)
    }
}

/// The synthetic marker task and its word vectors.
pub fn synth_data(cfg: &ExperimentConfig) -> Result<(SyntheticTask, Vec<(String, Vec<f64>)>)> {
    let spec = SyntheticSpec {
        content_vocab_size: cfg.synth_content_words,
        train_per_style: cfg.synth_train,
        dev_per_style: cfg.synth_dev,
        test_per_style: cfg.synth_test,
        ..SyntheticSpec::default()
    };
    let mut rng = stage_rng(cfg.seed, Stage::Data);
    let task = make_synthetic_task(&mut rng, &spec)?;
    let vectors = synthetic_embeddings(&task, cfg.embed_dim, &mut rng);
    Ok((task, vectors))
}

/// Loss after one pre-training step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
}

impl PretrainRecord {
    pub const HEADER: &'static str = "step\tepoch\tloss";

    pub fn tsv(&self) -> String {
        format!("{}\t{}\t{:.8}", self.step, self.epoch, self.loss)
    }
}

fn run_epochs(
    data: &[Sentence],
    epochs: usize,
    batch: usize,
    rng: &mut Rng,
    mut step: impl FnMut(&[Sentence]) -> rlst_core::Result<f64>,
    on_record: &mut dyn FnMut(PretrainRecord) -> Result<()>,
) -> Result<()> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut n = 0;
    for epoch in 0..epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch) {
            let items: Vec<Sentence> = chunk.iter().map(|&i| data[i].clone()).collect();
            let loss = step(&items)?;
            on_record(PretrainRecord { epoch, step: n, loss })?;
            n += 1;
        }
    }
    Ok(())
}

/// Target-style autoencoding (source and target with `union_pretraining`).
pub fn pretrain_generator(
    ws: &Workspace,
    cfg: &ExperimentConfig,
    on_record: &mut dyn FnMut(PretrainRecord) -> Result<()>,
) -> Result<Generator> {
    let mut rng = stage_rng(cfg.seed, Stage::Generator);
    let gcfg = GeneratorConfig { vocab_size: ws.vocab.len(), embed_dim: cfg.embed_dim, hidden_dim: cfg.hidden_dim };
    let mut generator = Generator::new(gcfg, &mut rng, Some(&ws.embeddings))?;
    let mut data = ws.target.train.clone();
    if cfg.union_pretraining {
        data.extend(ws.source.train.iter().cloned());
    }
    run_epochs(&data, cfg.gen_epochs, cfg.gen_batch, &mut rng, |b| generator.pretrain_step(b, cfg.gen_lr), on_record)?;
    Ok(generator)
}

/// Which copy of a scorer is trained: the one that feeds rewards or the
/// frozen one used for evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Reward,
    Evaluation,
}

impl Role {
    pub fn classifier_prefix(self) -> &'static str {
        match self {
            Role::Reward => "disc",
            Role::Evaluation => "eval_clf",
        }
    }

    pub fn lm_prefix(self) -> &'static str {
        match self {
            Role::Reward => "lm",
            Role::Evaluation => "eval_lm",
        }
    }
}

/// Style classification on labeled source and target training sentences.
pub fn pretrain_classifier(
    ws: &Workspace,
    cfg: &ExperimentConfig,
    role: Role,
    on_record: &mut dyn FnMut(PretrainRecord) -> Result<()>,
) -> Result<Discriminator> {
    let stage = if role == Role::Reward { Stage::Discriminator } else { Stage::EvalClassifier };
    let mut rng = stage_rng(cfg.seed, stage);
    let dcfg = DiscriminatorConfig { vocab_size: ws.vocab.len(), embed_dim: cfg.embed_dim, hidden_dim: cfg.hidden_dim };
    let mut d = Discriminator::new(dcfg, role.classifier_prefix(), &mut rng, Some(&ws.embeddings))?;
    let data: Vec<Sentence> = ws.source.train.iter().chain(&ws.target.train).cloned().collect();
    run_epochs(&data, cfg.style_epochs, cfg.style_batch, &mut rng, |b| d.pretrain_step(b, cfg.style_lr), on_record)?;
    Ok(d)
}

/// Next-token modelling of the target-style training sentences.
pub fn pretrain_language_model(
    ws: &Workspace,
    cfg: &ExperimentConfig,
    role: Role,
    on_record: &mut dyn FnMut(PretrainRecord) -> Result<()>,
) -> Result<LanguageModel> {
    let stage = if role == Role::Reward { Stage::LanguageModel } else { Stage::EvalLanguageModel };
    let mut rng = stage_rng(cfg.seed, stage);
    let lcfg = LmConfig { vocab_size: ws.vocab.len(), embed_dim: cfg.embed_dim, hidden_dim: cfg.hidden_dim };
    let mut lm = LanguageModel::new(lcfg, role.lm_prefix(), &mut rng, Some(&ws.embeddings))?;
    run_epochs(&ws.target.train, cfg.lm_epochs, cfg.lm_batch, &mut rng, |b| lm.pretrain_step(b, cfg.lm_lr), on_record)?;
    Ok(lm)
}

/// Beam-search transfer of every sentence.
pub fn transfer_all(generator: &Generator, sources: &[Sentence], beam_width: usize) -> Result<Vec<Sentence>> {
    sources
        .iter()
        .map(|s| Ok(generator.beam_search(s, beam_width, default_max_len(s))?.sentence))
        .collect()
}

/// Frozen evaluation models.
#[derive(Debug, Clone)]
pub struct EvalModels {
    pub classifier: Discriminator,
    pub lm: LanguageModel,
}

impl EvalModels {
    pub fn evaluate(&self, ws: &Workspace, cfg: &ExperimentConfig, generated: &[Sentence], sources: &[Sentence]) -> Result<EvaluationReport> {
        let evaluator = Evaluator { classifier: &self.classifier, lm: &self.lm, embeddings: &ws.embeddings, pooling: cfg.pooling };
        Ok(evaluator.evaluate(generated, sources)?)
    }

    /// Transfers the first `eval_samples` sentences of `sources` and scores
    /// the result.
    pub fn evaluate_generator(
        &self,
        ws: &Workspace,
        cfg: &ExperimentConfig,
        generator: &Generator,
        sources: &[Sentence],
    ) -> Result<EvaluationReport> {
        let sources = &sources[..cfg.eval_samples.min(sources.len())];
        let generated = transfer_all(generator, sources, cfg.beam_width)?;
        self.evaluate(ws, cfg, &generated, sources)
    }
}

pub const RL_LOG_HEADER: &str = "step\treward\tgenerator_loss\tdiscriminator_loss\tstyle\tsemantic\tfluency\tgrad_norm\tskipped";
pub const EVAL_LOG_HEADER: &str = "step\tcontent\tstyle\toverall\tperplexity\tsamples\tdegenerate";

pub fn rl_log_row(step: usize, r: &RlStepReport) -> String {
    format!(
        "{step}\t{:.8}\t{:.8}\t{:.8}\t{:.8}\t{:.8}\t{:.8}\t{:.8}\t{}",
        r.reward,
        r.generator_loss,
        r.discriminator_loss,
        r.modules.style,
        r.modules.semantic,
        r.modules.fluency,
        r.generator_step.grad_norm,
        r.skipped
    )
}

pub fn eval_log_row(step: usize, e: &EvaluationReport) -> String {
    format!("{step}\t{}", e.tsv_row())
}

/// Something that happened during RL training.
pub enum RlEvent<'a> {
    Update { step: usize, report: &'a RlStepReport, models: &'a RlModels },
    /// Dev-set evaluation after `step` updates (0 is the initial one).
    Evaluation { step: usize, result: &'a Result<EvaluationReport>, models: &'a RlModels },
}

/// RL over the source training sentences with periodic dev evaluation.
/// Training stops early when the handler returns [`Control::Stop`]; an
/// evaluation due at that step still runs first.
pub fn train_rl(
    ws: &Workspace,
    cfg: &ExperimentConfig,
    models: &mut RlModels,
    eval: &EvalModels,
    start: usize,
    on_event: &mut dyn FnMut(RlEvent<'_>) -> Result<Control>,
) -> Result<()> {
    let dev = if ws.source.dev.is_empty() { &ws.source.test } else { &ws.source.dev };
    let evaluate = |m: &RlModels, step: usize, on_event: &mut dyn FnMut(RlEvent<'_>) -> Result<Control>| {
        let result = eval.evaluate_generator(ws, cfg, &m.generator, dev);
        if let Err(e) = &result {
            log::warn!("evaluation after {step} updates failed: {e}");
        }
        on_event(RlEvent::Evaluation { step, result: &result, models: m })
    };
    if start == 0 && evaluate(models, 0, on_event)? == Control::Stop {
        return Ok(());
    }
    let schedule = Schedule { updates: cfg.rl_updates, batch_size: cfg.rl_batch, start };
    let mut failure: Option<CliError> = None;
    let mut observer = |step: usize, report: &RlStepReport, m: &RlModels| -> rlst_core::Result<Control> {
        let done = step + 1;
        let outcome = on_event(RlEvent::Update { step, report, models: m }).and_then(|control| {
            let evaluated = if done.is_multiple_of(cfg.eval_every) || done == cfg.rl_updates {
                evaluate(m, done, on_event)?
            } else {
                Control::Continue
            };
            Ok(if control == Control::Stop { control } else { evaluated })
        });
        outcome.or_else(|e| {
            failure = Some(e);
            Ok(Control::Stop)
        })
    };
    rl::train(models, &ws.source.train, &ws.target.train, &cfg.rl(), schedule, cfg.seed, &mut observer)?;
    failure.map_or(Ok(()), Err)
}
