//! Property checks shared by the integration tests and the acceptance run.
//! Each returns a one-line summary on success and the first violation on
//! failure.

use rand::seq::SliceRandom;
use rand::Rng;

use rlst_core::discriminator::{Discriminator, DiscriminatorConfig};
use rlst_core::embedding::Embeddings;
use rlst_core::generator::{Generator, GeneratorConfig};
use rlst_core::gradcheck::grad_check;
use rlst_core::graph::{Compute, Graph};
use rlst_core::lm::{LanguageModel, LmConfig};
use rlst_core::metrics::overall_score;
use rlst_core::optim::{sgd_step, DEFAULT_CLIP_NORM};
use rlst_core::rl::{discounted_returns, estimate_action_scores, reinforce_surrogate, shape_rewards, ModuleScores, ScoreWeights, SentenceScorer};
use rlst_core::semantic::{ground_distance, wmd, WordDistribution};
use rlst_core::{seeded_rng, ParameterSet, Sentence, Style, Tensor};

use super::transport::{random_rows, random_weights, tableau_simplex, vertex_enumeration};

pub type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

const FIXTURE_VOCAB: usize = 10;

fn fixture(seed: u64, style: Style) -> Sentence {
    let mut rng = seeded_rng(seed);
    let words: Vec<usize> = (0..3).map(|_| rng.gen_range(4..FIXTURE_VOCAB)).collect();
    Sentence::framed(&words, style)
}

fn amplify(params: &mut ParameterSet, factor: f64) {
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        params.get_mut(id).values_mut().iter_mut().for_each(|v| *v *= factor);
    }
}

/// Tape gradients of the three training losses against central differences
/// with step 1e-5, on every coordinate, at initial weights and at weights
/// scaled up so that the nonlinearities leave their linear range.
pub fn gradient_fidelity() -> Check {
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (seed, factor) in [(1u64, 1.0), (2, 1.0), (3, 8.0), (4, 8.0)] {
        let mut gen = Generator::new(
            GeneratorConfig { vocab_size: FIXTURE_VOCAB, embed_dim: 5, hidden_dim: 4 },
            &mut seeded_rng(seed),
            None,
        )
        .map_err(|e| e.to_string())?;
        amplify(&mut gen.params, factor);
        let (src, tgt) = (fixture(seed, Style::Source), fixture(seed + 100, Style::Target));
        let r = grad_check(
            &gen.params,
            |g| {
                let losses = gen.token_losses(g, &src, &tgt)?;
                Ok(g.sum(&losses))
            },
            1e-5,
            usize::MAX,
            &mut seeded_rng(seed),
        )
        .map_err(|e| e.to_string())?;
        ensure(r.max_rel_error <= 1e-4, || format!("generator: {r:?}"))?;
        worst = worst.max(r.max_rel_error);
        checked += r.checked;

        let cfg = DiscriminatorConfig { vocab_size: FIXTURE_VOCAB, embed_dim: 5, hidden_dim: 4 };
        let mut d = Discriminator::new(cfg, "disc", &mut seeded_rng(seed), None).map_err(|e| e.to_string())?;
        amplify(&mut d.params, factor);
        let batch = [fixture(seed + 200, Style::Source), fixture(seed + 300, Style::Target)];
        let r = grad_check(&d.params, |g| d.classification_loss_node(g, &batch), 1e-5, usize::MAX, &mut seeded_rng(seed))
            .map_err(|e| e.to_string())?;
        ensure(r.max_rel_error <= 1e-4, || format!("discriminator: {r:?}"))?;
        worst = worst.max(r.max_rel_error);
        checked += r.checked;

        let cfg = LmConfig { vocab_size: FIXTURE_VOCAB, embed_dim: 5, hidden_dim: 4 };
        let mut lm = LanguageModel::new(cfg, "lm", &mut seeded_rng(seed), None).map_err(|e| e.to_string())?;
        amplify(&mut lm.params, factor);
        let batch = [fixture(seed + 400, Style::Target)];
        let r = grad_check(&lm.params, |g| lm.loss_node(g, &batch), 1e-5, usize::MAX, &mut seeded_rng(seed))
            .map_err(|e| e.to_string())?;
        ensure(r.max_rel_error <= 1e-4, || format!("language model: {r:?}"))?;
        worst = worst.max(r.max_rel_error);
        checked += r.checked;
    }
    Ok(format!("{checked} coordinates, max relative error {worst:.2e}"))
}

const WMD_VOCAB: usize = 12;

fn random_distribution(rng: &mut rlst_core::Rng, max_support: usize) -> WordDistribution {
    let len = rng.gen_range(1..=max_support);
    let mut idx: Vec<usize> = (0..WMD_VOCAB).collect();
    idx.shuffle(rng);
    let integral = rng.gen_bool(0.5);
    let weights = random_weights(rng, len, integral);
    WordDistribution::from_weights(idx[..len].iter().copied().zip(weights).collect()).expect("valid weights")
}

fn cost_matrix(a: &WordDistribution, b: &WordDistribution, e: &Embeddings) -> Vec<f64> {
    a.indices().flat_map(|i| b.indices().map(move |j| (i, j))).map(|(i, j)| ground_distance(i, j, e)).collect()
}

/// WMD against exhaustive vertex enumeration (≤3×3) and a dense tableau
/// simplex (≤5×5), then identity, symmetry and the triangle inequality.
pub fn transport_exactness() -> Check {
    let mut worst = 0.0f64;
    let mut rng = seeded_rng(2024);
    for _ in 0..500 {
        let e = Embeddings::from_rows(random_rows(&mut rng, WMD_VOCAB, 3)).expect("rows");
        let (a, b) = (random_distribution(&mut rng, 3), random_distribution(&mut rng, 3));
        let expected = vertex_enumeration(&a.weights(), &b.weights(), &cost_matrix(&a, &b, &e));
        let got = wmd(&a, &b, &e).map_err(|e| e.to_string())?;
        ensure((got - expected).abs() <= 1e-9, || format!("3x3: {got} vs enumeration {expected}"))?;
        worst = worst.max((got - expected).abs());
    }
    let mut rng = seeded_rng(77);
    for _ in 0..200 {
        let e = Embeddings::from_rows(random_rows(&mut rng, WMD_VOCAB, 4)).expect("rows");
        let (a, b) = (random_distribution(&mut rng, 5), random_distribution(&mut rng, 5));
        let expected = tableau_simplex(&a.weights(), &b.weights(), &cost_matrix(&a, &b, &e));
        let got = wmd(&a, &b, &e).map_err(|e| e.to_string())?;
        ensure((got - expected).abs() <= 1e-9, || format!("5x5: {got} vs tableau {expected}"))?;
        worst = worst.max((got - expected).abs());
    }
    let mut rng = seeded_rng(99);
    let e = Embeddings::from_rows(random_rows(&mut rng, WMD_VOCAB, 3)).expect("rows");
    for _ in 0..1000 {
        let (a, b, c) = (random_distribution(&mut rng, 5), random_distribution(&mut rng, 5), random_distribution(&mut rng, 5));
        let d = |x: &WordDistribution, y: &WordDistribution| wmd(x, y, &e).expect("wmd");
        let (ab, bc, ac) = (d(&a, &b), d(&b, &c), d(&a, &c));
        ensure(d(&a, &a) == 0.0, || format!("identity fails for {a:?}"))?;
        ensure(ab == d(&b, &a), || format!("asymmetric: {ab} vs {}", d(&b, &a)))?;
        ensure(ac <= ab + bc + 1e-9, || format!("triangle: {ac} > {ab} + {bc}"))?;
    }
    Ok(format!("700 instances vs oracles (max |diff| {worst:.1e}), 1000 metric triples"))
}

/// Returns the scores of a fixed list in turn.
pub struct ScriptedScorer {
    pub scores: Vec<f64>,
    pub calls: usize,
}

impl SentenceScorer for ScriptedScorer {
    fn score(&mut self, _: &Sentence, _: &Sentence) -> ModuleScores {
        let v = self.scores[self.calls % self.scores.len()];
        self.calls += 1;
        ModuleScores { style: v, semantic: 0.0, fluency: 0.0 }
    }
}

/// Telescoping of shaped rewards and the undiscounted return on random score
/// sequences, and the three-rollout walkthrough.
pub fn reward_algebra() -> Check {
    let mut rng = seeded_rng(11);
    for _ in 0..1000 {
        let len = rng.gen_range(1..=30);
        let f: Vec<f64> = (0..len).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let r = shape_rewards(&f);
        let last = f[len - 1];
        let total: f64 = r.iter().sum();
        ensure((total - last).abs() <= 1e-12, || format!("sum of rewards {total} vs final score {last}"))?;
        let q = discounted_returns(&r, 1.0);
        ensure((q[0] - last).abs() <= 1e-12, || format!("Q_1 {} vs final score {last}", q[0]))?;
    }

    let gen = Generator::new(GeneratorConfig { vocab_size: 8, embed_dim: 4, hidden_dim: 3 }, &mut seeded_rng(3), None)
        .map_err(|e| e.to_string())?;
    let source = Sentence::framed(&[4, 5], Style::Source);
    let reference = Sentence::framed(&[6, 7], Style::Target);
    let weights = ScoreWeights { rollouts: 3, ..ScoreWeights::default() };
    let mut scorer = ScriptedScorer { scores: vec![0.2, 0.5, 0.5], calls: 0 };
    let scores = estimate_action_scores(&gen, &source, &reference, &mut scorer, &weights, &mut seeded_rng(1))
        .map_err(|e| e.to_string())?;
    ensure(scores.f[0] == 0.4, || format!("walkthrough gives {:?}, expected 0.4", scores.f[0]))?;
    Ok("1000 sequences within 1e-12; rollouts 0.2/0.5/0.5 give f = 0.4".into())
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

fn draw(p: &[f64], rng: &mut rlst_core::Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// Gradient of the REINFORCE surrogate for one single-token episode whose
/// final score is `reward`.
fn surrogate_grad(params: &ParameterSet, action: usize, reward: f64) -> Vec<f64> {
    let id = params.id("policy.logits").expect("logits");
    let mut g = Graph::new(params);
    let logits = g.param(id);
    let nll = g.neg_log_softmax(&logits, action);
    let q = discounted_returns(&shape_rewards(&[reward]), 0.9);
    let s = reinforce_surrogate(&mut g, &[nll], &q);
    g.backward(s).get(id).map_or(vec![0.0; 3], <[f64]>::to_vec)
}

fn bandit_policy(logits: Vec<f64>) -> ParameterSet {
    let mut p = ParameterSet::new();
    p.add("policy.logits", Tensor::new(&[3], logits).expect("tensor")).expect("unique");
    p
}

/// Three-armed bandit trained by the surrogate update, and the Monte Carlo
/// score-function gradient against finite differences of the exact return.
pub fn reinforce_correctness() -> Check {
    let mut converged = 0;
    let mut worst_updates = 0;
    for seed in 0..10u64 {
        let target = (seed % 3) as usize;
        let mut params = bandit_policy(vec![0.0; 3]);
        let id = params.id("policy.logits").expect("logits");
        let mut rng = seeded_rng(1000 + seed);
        let mut reached = None;
        for update in 1..=500 {
            let p = softmax(params.get(id).values());
            let a = draw(&p, &mut rng);
            let grad = surrogate_grad(&params, a, f64::from(u8::from(a == target)));
            params.get_mut(id).accumulate_grad(&grad);
            sgd_step(&mut params, 0.5, DEFAULT_CLIP_NORM).map_err(|e| e.to_string())?;
            if softmax(params.get(id).values())[target] >= 0.99 {
                reached = Some(update);
                break;
            }
        }
        if let Some(n) = reached {
            converged += 1;
            worst_updates = worst_updates.max(n);
        }
    }
    ensure(converged >= 9, || format!("only {converged}/10 seeds reached P >= 0.99 within 500 updates"))?;

    let rewards = [1.0, 0.25, -0.5];
    let logits = vec![0.3, -0.2, 0.1];
    let exact = |l: &[f64]| softmax(l).iter().zip(rewards).map(|(p, r)| p * r).sum::<f64>();
    let h = 1e-5;
    let fd: Vec<f64> = (0..3)
        .map(|i| {
            let (mut up, mut down) = (logits.clone(), logits.clone());
            up[i] += h;
            down[i] -= h;
            (exact(&up) - exact(&down)) / (2.0 * h)
        })
        .collect();
    let params = bandit_policy(logits.clone());
    let p = softmax(&logits);
    let mut rng = seeded_rng(4242);
    let n = 10_000;
    let (mut sum, mut sq) = ([0.0; 3], [0.0; 3]);
    for _ in 0..n {
        let a = draw(&p, &mut rng);
        let g = surrogate_grad(&params, a, rewards[a]);
        for i in 0..3 {
            // The surrogate is minimized, so the return gradient is its negation.
            sum[i] -= g[i];
            sq[i] += g[i] * g[i];
        }
    }
    let mut max_z = 0.0f64;
    for i in 0..3 {
        let mean = sum[i] / n as f64;
        let var = sq[i] / n as f64 - mean * mean;
        let se = (var / n as f64).sqrt();
        let z = (mean - fd[i]).abs() / se;
        ensure(z <= 3.0, || format!("component {i}: Monte Carlo {mean:.5} vs finite difference {:.5} ({z:.2} sigma)", fd[i]))?;
        max_z = max_z.max(z);
    }
    Ok(format!(
        "{converged}/10 bandit seeds converged (slowest {worst_updates} updates); MC gradient within {max_z:.2} sigma"
    ))
}

fn random_sentence(rng: &mut rlst_core::Rng, vocab: usize, style: Style) -> Sentence {
    let len = rng.gen_range(1..=5);
    let words: Vec<usize> = (0..len).map(|_| rng.gen_range(4..vocab)).collect();
    Sentence::framed(&words, style)
}

/// `L_D` at a constant one-half discriminator, and the effect of a single
/// adversarial step.
pub fn adversarial_arithmetic() -> Check {
    let cfg = DiscriminatorConfig { vocab_size: 12, embed_dim: 6, hidden_dim: 5 };
    let mut rng = seeded_rng(8);
    let mut half = Discriminator::new(cfg, "disc", &mut rng, None).map_err(|e| e.to_string())?;
    let ids: Vec<_> = half.params.ids().collect();
    for id in ids {
        half.params.get_mut(id).values_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let human: Vec<Sentence> = (0..4).map(|_| random_sentence(&mut rng, 12, Style::Target)).collect();
    let model: Vec<Sentence> = (0..4).map(|_| random_sentence(&mut rng, 12, Style::Target)).collect();
    let l = half.adversarial_loss(&human, &model).map_err(|e| e.to_string())?;
    let two_ln2 = 2.0 * std::f64::consts::LN_2;
    ensure((l - two_ln2).abs() <= 1e-12, || format!("L_D at D = 1/2 is {l}, expected {two_ln2}"))?;

    let mut decreased = 0;
    for trial in 0..100u64 {
        let mut rng = seeded_rng(500 + trial);
        let mut d = Discriminator::new(cfg, "disc", &mut rng, None).map_err(|e| e.to_string())?;
        let human: Vec<Sentence> = (0..4).map(|_| random_sentence(&mut rng, 12, Style::Target)).collect();
        let model: Vec<Sentence> = (0..4).map(|_| random_sentence(&mut rng, 12, Style::Target)).collect();
        let before = d.adversarial_step(&human, &model, 1e-2).map_err(|e| e.to_string())?;
        let after = d.adversarial_loss(&human, &model).map_err(|e| e.to_string())?;
        if after < before {
            decreased += 1;
        }
    }
    ensure(decreased >= 95, || format!("loss decreased in only {decreased}/100 trials"))?;
    Ok(format!("L_D(1/2) = 2 ln 2; one step decreased L_D in {decreased}/100 trials"))
}

/// Perplexity of a uniform model and its relation to the fluency score.
pub fn perplexity_identities() -> Check {
    let mut rng = seeded_rng(21);
    for vocab in [6usize, 9, 64, 1000] {
        let cfg = LmConfig { vocab_size: vocab, embed_dim: 4, hidden_dim: 3 };
        let mut lm = LanguageModel::new(cfg, "lm", &mut rng, None).map_err(|e| e.to_string())?;
        for name in ["lm.out_weights", "lm.out_bias"] {
            let id = lm.params.id(name).ok_or_else(|| format!("no parameter {name}"))?;
            lm.params.get_mut(id).values_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let lm = LanguageModel::from_params(lm.params, "lm").map_err(|e| e.to_string())?;
        let corpus: Vec<Sentence> = (0..20).map(|_| random_sentence(&mut rng, vocab, Style::Target)).collect();
        let ppl = lm.corpus_perplexity(&corpus).map_err(|e| e.to_string())?;
        let v = vocab as f64;
        ensure((ppl - v).abs() <= 1e-12 * v, || format!("uniform model over {vocab} words: perplexity {ppl}"))?;
    }
    let cfg = LmConfig { vocab_size: 15, embed_dim: 4, hidden_dim: 6 };
    let lm = LanguageModel::new(cfg, "lm", &mut seeded_rng(4), None).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let s = random_sentence(&mut rng, 15, Style::Target);
        let ppl = lm.perplexity(&s).map_err(|e| e.to_string())?;
        let f = lm.fluency_score(&s).map_err(|e| e.to_string())?;
        let diff = (ppl - (-f).exp()).abs();
        ensure(diff <= 1e-12, || format!("perplexity {ppl} vs exp(-fluency) {}", (-f).exp()))?;
        worst = worst.max(diff);
    }
    Ok(format!("uniform perplexity equals vocabulary size; exp(-fluency) within {worst:.1e}"))
}

/// (content, style, overall) triples as printed for both tasks and all
/// three systems.
pub const PRINTED_OVERALL: [(f64, f64, f64); 12] = [
    (0.894, 0.836, 0.432),
    (0.905, 0.836, 0.435),
    (0.783, 0.988, 0.437),
    (0.756, 0.860, 0.402),
    (0.868, 0.980, 0.460),
    (0.856, 0.992, 0.459),
    (0.865, 0.558, 0.339),
    (0.789, 0.956, 0.432),
    (0.519, 0.435, 0.237),
    (0.546, 0.998, 0.353),
    (0.885, 0.601, 0.358),
    (0.873, 0.982, 0.462),
];

pub fn overall_audit() -> Check {
    let mut worst = 0.0f64;
    for (content, style, printed) in PRINTED_OVERALL {
        let got = overall_score(content, style).ok_or_else(|| format!("no overall score for ({content}, {style})"))?;
        ensure((got - printed).abs() <= 1e-3, || format!("({content}, {style}) gives {got:.4}, printed {printed}"))?;
        worst = worst.max((got - printed).abs());
    }
    Ok(format!("12 entries within {worst:.4}"))
}
