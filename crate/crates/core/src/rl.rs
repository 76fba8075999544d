//! REINFORCE training: beam references, rollout action scores, shaped
//! rewards, discounted returns, and the interleaved adversarial update.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;

use crate::discriminator::Discriminator;
use crate::embedding::Embeddings;
use crate::error::{config, numerical, usage, Result};
use crate::generator::{default_max_len, Generator};
use crate::graph::{Compute, Graph, Var};
use crate::lm::LanguageModel;
use crate::nn::PROB_FLOOR;
use crate::optim::{sgd_step, StepStats, DEFAULT_CLIP_NORM};
use crate::semantic::{semantic_score, ContentFilter};
use crate::sentence::Sentence;
use crate::Rng;

/// Weights of the three evaluator scores, discount and rollout count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreWeights {
    pub alpha: f64,
    pub beta: f64,
    pub eta: f64,
    pub gamma: f64,
    pub rollouts: usize,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 0.5, eta: 0.5, gamma: 0.9, rollouts: 8 }
    }
}

impl ScoreWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("alpha", self.alpha), ("beta", self.beta), ("eta", self.eta)] {
            if !(w > 0.0) || !w.is_finite() {
                return Err(config!("{name} must be positive, got {w}"));
            }
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(config!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if self.rollouts == 0 {
            return Err(config!("at least one rollout per timestep is required"));
        }
        Ok(())
    }

    pub fn combine(&self, s: &ModuleScores) -> f64 {
        self.alpha * s.style + self.beta * s.semantic + self.eta * s.fluency
    }
}

/// Scores of one complete sentence from the three evaluator modules.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ModuleScores {
    pub style: f64,
    pub semantic: f64,
    pub fluency: f64,
}

impl ModuleScores {
    fn add(&mut self, o: &ModuleScores) {
        self.style += o.style;
        self.semantic += o.semantic;
        self.fluency += o.fluency;
    }

    fn scaled(self, f: f64) -> Self {
        Self { style: self.style * f, semantic: self.semantic * f, fluency: self.fluency * f }
    }
}

/// Scores complete candidate sentences against their source.
pub trait SentenceScorer {
    fn score(&mut self, candidate: &Sentence, source: &Sentence) -> ModuleScores;
}

/// The reward-side evaluators: discriminator, WMD content scorer and LM.
///
/// A module that fails on a candidate is replaced by the worst score it has
/// produced since the last [`RewardModels::reset_batch`].
#[derive(Debug)]
pub struct RewardModels<'a> {
    pub discriminator: &'a Discriminator,
    pub lm: &'a LanguageModel,
    pub embeddings: &'a Embeddings,
    pub filter: &'a ContentFilter,
    worst: [Option<f64>; 3],
    fallback: [f64; 3],
    pub failures: usize,
}

impl<'a> RewardModels<'a> {
    pub fn new(
        discriminator: &'a Discriminator,
        lm: &'a LanguageModel,
        embeddings: &'a Embeddings,
        filter: &'a ContentFilter,
    ) -> Self {
        // With nothing observed yet, fall back to each module's floor: the
        // clamped style score, an embedding-diameter bound on WMD, and the
        // log-probability floor.
        let radius = (0..embeddings.len())
            .map(|i| libm::sqrt(embeddings.row(i).iter().map(|x| x * x).sum()))
            .fold(0.0, f64::max);
        let fallback = [crate::discriminator::SCORE_CLAMP, -2.0 * radius, libm::log(PROB_FLOOR)];
        Self { discriminator, lm, embeddings, filter, worst: [None; 3], fallback, failures: 0 }
    }

    pub fn reset_batch(&mut self) {
        self.worst = [None; 3];
        self.failures = 0;
    }

    fn settle(&mut self, module: usize, value: Result<f64>) -> f64 {
        match value {
            Ok(v) if v.is_finite() => {
                let w = self.worst[module].get_or_insert(v);
                *w = w.min(v);
                v
            }
            other => {
                self.failures += 1;
                let substitute = self.worst[module].unwrap_or(self.fallback[module]);
                log::warn!("evaluator {module} failed ({:?}); substituting {substitute}", other.err());
                substitute
            }
        }
    }
}

impl SentenceScorer for RewardModels<'_> {
    fn score(&mut self, candidate: &Sentence, source: &Sentence) -> ModuleScores {
        let style = self.discriminator.style_score(candidate);
        let semantic = semantic_score(candidate, source, self.embeddings, self.filter).map(|s| s.score);
        let fluency = self.lm.fluency_score(candidate);
        ModuleScores {
            style: self.settle(0, style),
            semantic: self.settle(1, semantic),
            fluency: self.settle(2, fluency),
        }
    }
}

/// Per-timestep action scores with the mean module scores over all scored
/// sentences.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionScores {
    pub f: Vec<f64>,
    pub modules: ModuleScores,
}

/// `f(s_t, y_t)` for every predicted position `t` of `reference`.
///
/// Each prefix `Y_{1:t}` is completed by `N` multinomial rollouts whose
/// combined scores are averaged. The final position is the complete
/// reference, which is scored once.
pub fn estimate_action_scores<S: SentenceScorer>(
    generator: &Generator,
    source: &Sentence,
    reference: &Sentence,
    scorer: &mut S,
    weights: &ScoreWeights,
    rng: &mut Rng,
) -> Result<ActionScores> {
    reference.require_framed()?;
    let tokens = reference.tokens();
    let horizon = reference.predicted_len();
    let path = generator.decode_path(source, &tokens[..tokens.len() - 1])?;
    let max_len = default_max_len(source).max(horizon - 1);
    let mut f = Vec::with_capacity(horizon);
    let mut modules = ModuleScores::default();
    let mut scored = 0usize;
    for t in 1..=horizon {
        if t == horizon {
            let s = scorer.score(reference, source);
            modules.add(&s);
            scored += 1;
            f.push(weights.combine(&s));
            continue;
        }
        let (dist, state) = &path.steps[t];
        let mut combined = Vec::with_capacity(weights.rollouts);
        for _ in 0..weights.rollouts {
            let out = generator.continue_rollout(&path.encoder, tokens[..=t].to_vec(), state.clone(), dist.clone(), max_len, rng);
            let candidate = Sentence::from_framed(out, crate::Style::Target)?;
            let s = scorer.score(&candidate, source);
            modules.add(&s);
            scored += 1;
            combined.push(weights.combine(&s));
        }
        f.push(mean(&combined));
    }
    Ok(ActionScores { f, modules: modules.scaled(1.0 / scored as f64) })
}

/// Mean with a compensated sum and a remainder correction on the division,
/// so e.g. the mean of 0.2, 0.5 and 0.5 is the double nearest 0.4.
fn mean(values: &[f64]) -> f64 {
    let (mut sum, mut err) = (0.0f64, 0.0f64);
    for &v in values {
        let t = sum + v;
        let bv = t - sum;
        err += (sum - (t - bv)) + (v - bv);
        sum = t;
    }
    let n = values.len() as f64;
    let q = sum / n;
    q + (libm::fma(-q, n, sum) + err) / n
}

/// `r_1 = f_1`, `r_τ = f_τ − f_{τ−1}`.
pub fn shape_rewards(f: &[f64]) -> Vec<f64> {
    f.iter().enumerate().map(|(i, &v)| if i == 0 { v } else { v - f[i - 1] }).collect()
}

/// `Q_t = r_t + γ·Q_{t+1}`.
pub fn discounted_returns(r: &[f64], gamma: f64) -> Vec<f64> {
    let mut q = alloc::vec![0.0; r.len()];
    let mut acc = 0.0;
    for (i, &v) in r.iter().enumerate().rev() {
        acc = v + gamma * acc;
        q[i] = acc;
    }
    q
}

/// One episode: the reference, its action scores, rewards, returns and the
/// policy's log-probabilities of the chosen tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionScoreTrace {
    pub reference: Sentence,
    pub f: Vec<f64>,
    pub r: Vec<f64>,
    pub q: Vec<f64>,
    pub logp: Vec<f64>,
}

impl ActionScoreTrace {
    /// One-episode reward `Σ_t P(y_t|s_t)·Q_t`.
    pub fn reward(&self) -> f64 {
        self.logp.iter().zip(&self.q).map(|(lp, q)| libm::exp(*lp) * q).sum()
    }
}

/// Surrogate whose gradient is `−Σ_t Q_t ∇ln P(y_t|s_t)`, given the
/// per-step `−ln P` nodes.
pub fn reinforce_surrogate<C: Compute>(c: &mut C, neg_log_probs: &[C::V], returns: &[f64]) -> C::V {
    let weighted: Vec<C::V> = neg_log_probs.iter().zip(returns).map(|(l, &q)| c.scale(l, q)).collect();
    c.sum(&weighted)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RlConfig {
    pub weights: ScoreWeights,
    pub beam_width: usize,
    pub learning_rate: f64,
    pub disc_learning_rate: f64,
    /// Subtract from each return the batch mean of the returns at the same
    /// timestep. Off by default.
    pub baseline_centering: bool,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            weights: ScoreWeights::default(),
            beam_width: 8,
            learning_rate: 0.01,
            disc_learning_rate: 0.01,
            baseline_centering: false,
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.beam_width == 0 {
            return Err(config!("beam width must be at least 1"));
        }
        for (name, lr) in [("learning rate", self.learning_rate), ("discriminator learning rate", self.disc_learning_rate)] {
            if !(lr > 0.0) || !lr.is_finite() {
                return Err(config!("{name} must be positive"));
            }
        }
        Ok(())
    }
}

/// Models updated or consulted during RL.
#[derive(Debug, Clone)]
pub struct RlModels {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub lm: LanguageModel,
    pub embeddings: Embeddings,
    pub filter: ContentFilter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RlStepReport {
    /// Mean one-episode reward over the batch.
    pub reward: f64,
    /// `−reward`.
    pub generator_loss: f64,
    pub discriminator_loss: f64,
    pub modules: ModuleScores,
    pub skipped: usize,
    pub evaluator_failures: usize,
    pub generator_step: StepStats,
    pub traces: Vec<ActionScoreTrace>,
}

/// Beam reference plus its scores, rewards and returns.
pub fn episode<S: SentenceScorer>(
    generator: &Generator,
    source: &Sentence,
    scorer: &mut S,
    cfg: &RlConfig,
    rng: &mut Rng,
) -> Result<(ActionScoreTrace, ModuleScores)> {
    let beam = generator.beam_search(source, cfg.beam_width, default_max_len(source))?;
    let reference = beam.sentence;
    let scores = estimate_action_scores(generator, source, &reference, scorer, &cfg.weights, rng)?;
    let r = shape_rewards(&scores.f);
    let q = discounted_returns(&r, cfg.weights.gamma);
    let path = generator.decode_path(source, &reference.tokens()[..reference.len() - 1])?;
    let logp = path
        .steps
        .iter()
        .zip(&reference.tokens()[1..])
        .map(|((dist, _), &y)| libm::log(dist[y].max(PROB_FLOOR)))
        .collect();
    Ok((ActionScoreTrace { reference, f: scores.f, r, q, logp }, scores.modules))
}

/// One REINFORCE step over `sources`, then one adversarial discriminator
/// step on `humans` against the batch's references.
///
/// All rewards are computed before either model changes, so the step scores
/// against a fixed snapshot. The LM and embeddings are never modified.
pub fn reinforce_update(
    models: &mut RlModels,
    sources: &[Sentence],
    humans: &[Sentence],
    cfg: &RlConfig,
    rng: &mut Rng,
) -> Result<RlStepReport> {
    if sources.is_empty() {
        return Err(usage!("empty RL batch"));
    }
    if humans.len() != sources.len() {
        return Err(usage!("{} human sentences for a batch of {}", humans.len(), sources.len()));
    }
    let mut traces = Vec::with_capacity(sources.len());
    let mut modules = ModuleScores::default();
    let failures;
    {
        let mut scorer = RewardModels::new(&models.discriminator, &models.lm, &models.embeddings, &models.filter);
        for source in sources {
            let (trace, m) = episode(&models.generator, source, &mut scorer, cfg, rng)?;
            modules.add(&m);
            traces.push(trace);
        }
        failures = scorer.failures;
    }
    let baseline = if cfg.baseline_centering { timestep_means(&traces) } else { Vec::new() };
    let scale = 1.0 / sources.len() as f64;
    let mut skipped = 0;
    for (source, trace) in sources.iter().zip(&traces) {
        let returns: Vec<f64> =
            trace.q.iter().enumerate().map(|(t, q)| (q - baseline.get(t).copied().unwrap_or(0.0)) * scale).collect();
        let grads = {
            let mut g = Graph::new(&models.generator.params);
            let losses = models.generator.token_losses(&mut g, source, &trace.reference)?;
            let surrogate: Var = reinforce_surrogate(&mut g, &losses, &returns);
            g.backward(surrogate)
        };
        if grads.is_finite() {
            models.generator.params.accumulate(&grads);
        } else {
            skipped += 1;
            log::warn!("skipping episode with a non-finite policy gradient");
        }
    }
    let generator_step = sgd_step(&mut models.generator.params, cfg.learning_rate, DEFAULT_CLIP_NORM)?;
    let references: Vec<Sentence> = traces.iter().map(|t| t.reference.clone()).collect();
    let discriminator_loss = models.discriminator.adversarial_step(humans, &references, cfg.disc_learning_rate)?;
    let reward = traces.iter().map(ActionScoreTrace::reward).sum::<f64>() * scale;
    if !reward.is_finite() {
        return Err(numerical!("non-finite episode reward"));
    }
    Ok(RlStepReport {
        reward,
        generator_loss: -reward,
        discriminator_loss,
        modules: modules.scaled(scale),
        skipped,
        evaluator_failures: failures,
        generator_step,
        traces,
    })
}

/// Mean return at each timestep over the episodes that reach it.
fn timestep_means(traces: &[ActionScoreTrace]) -> Vec<f64> {
    let horizon = traces.iter().map(|t| t.q.len()).max().unwrap_or(0);
    (0..horizon)
        .map(|t| {
            let qs: Vec<f64> = traces.iter().filter_map(|tr| tr.q.get(t).copied()).collect();
            qs.iter().sum::<f64>() / qs.len() as f64
        })
        .collect()
}

/// Length and batching of an RL run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Schedule {
    pub updates: usize,
    pub batch_size: usize,
    /// First update index to run; earlier ones are assumed done.
    pub start: usize,
}

/// What the caller wants after an update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Hook called after every update, e.g. for logging, evaluation and
/// checkpoints.
pub trait TrainObserver {
    fn after_update(&mut self, step: usize, report: &RlStepReport, models: &RlModels) -> Result<Control>;
}

impl<F: FnMut(usize, &RlStepReport, &RlModels) -> Result<Control>> TrainObserver for F {
    fn after_update(&mut self, step: usize, report: &RlStepReport, models: &RlModels) -> Result<Control> {
        self(step, report, models)
    }
}

/// Randomness for update `step` of a run seeded with `seed`. Every update
/// has its own stream, so a resumed run repeats the same draws.
pub fn step_rng(seed: u64, step: usize) -> Rng {
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(1 + step as u64);
    rng
}

fn epoch_order(seed: u64, epoch: usize, len: usize) -> Vec<usize> {
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream((1 << 40) + epoch as u64);
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng);
    order
}

/// Runs updates `start..updates` over epochs of the source corpus. Each
/// update pairs its batch with as many target-style sentences drawn at
/// random.
pub fn train<O: TrainObserver>(
    models: &mut RlModels,
    sources: &[Sentence],
    targets: &[Sentence],
    cfg: &RlConfig,
    schedule: Schedule,
    seed: u64,
    observer: &mut O,
) -> Result<()> {
    cfg.validate()?;
    if schedule.batch_size == 0 {
        return Err(config!("batch size must be at least 1"));
    }
    if sources.is_empty() || targets.is_empty() {
        return Err(usage!("RL training needs source and target sentences"));
    }
    let mut cached: Option<(usize, Vec<usize>)> = None;
    for step in schedule.start..schedule.updates {
        let mut batch = Vec::with_capacity(schedule.batch_size);
        for k in 0..schedule.batch_size {
            let pos = step * schedule.batch_size + k;
            let epoch = pos / sources.len();
            if cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
                cached = Some((epoch, epoch_order(seed, epoch, sources.len())));
            }
            let order = &cached.as_ref().expect("epoch order").1;
            batch.push(sources[order[pos % sources.len()]].clone());
        }
        let mut rng = step_rng(seed, step);
        let humans: Vec<Sentence> = (0..batch.len()).map(|_| targets.choose(&mut rng).expect("targets").clone()).collect();
        let report = reinforce_update(models, &batch, &humans, cfg, &mut rng)?;
        if observer.after_update(step, &report, models)? == Control::Stop {
            break;
        }
    }
    Ok(())
}
