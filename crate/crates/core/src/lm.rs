//! Two-layer GRU language model: fluency reward and perplexity.
//!
//! The predicted-token count `M` of a framed sentence counts every token after
//! BOS, EOS included.

use alloc::vec;
use alloc::vec::Vec;

use crate::embedding::{embedding_table, Embeddings};
use crate::error::{config, numerical, usage, Result};
use crate::graph::{Compute, Eval, Graph, Var};
use crate::nn::{Gru, Init};
use crate::optim::{sgd_step, DEFAULT_CLIP_NORM};
use crate::sentence::Sentence;
use crate::tensor::{ParamId, ParameterSet};
use crate::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LmConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LanguageModel {
    pub params: ParameterSet,
    pub embedding: ParamId,
    pub lower: Gru,
    pub upper: Gru,
    pub out_weights: ParamId,
    pub out_bias: ParamId,
    vocab_size: usize,
    hidden_dim: usize,
}

impl LanguageModel {
    pub fn new(cfg: LmConfig, prefix: &str, rng: &mut Rng, pretrained: Option<&Embeddings>) -> Result<Self> {
        let LmConfig { vocab_size, embed_dim, hidden_dim } = cfg;
        if vocab_size == 0 || embed_dim == 0 || hidden_dim == 0 {
            return Err(config!("language model dimensions must be positive"));
        }
        let mut init = Init::new(rng);
        let mut p = ParameterSet::new();
        let name = |s: &str| alloc::format!("{prefix}.{s}");
        p.add(&name("embedding"), embedding_table(vocab_size, embed_dim, pretrained, &mut init)?)?;
        Gru::register(&mut p, &name("lower"), embed_dim, hidden_dim, &mut init)?;
        Gru::register(&mut p, &name("upper"), hidden_dim, hidden_dim, &mut init)?;
        p.add(&name("out_weights"), init.weights(&[vocab_size, hidden_dim])?)?;
        p.add(&name("out_bias"), init.bias(vocab_size)?)?;
        Self::from_params(p, prefix)
    }

    pub fn from_params(params: ParameterSet, prefix: &str) -> Result<Self> {
        let id = |s: &str| {
            let n = alloc::format!("{prefix}.{s}");
            params.id(&n).ok_or_else(|| config!("missing parameter `{n}`"))
        };
        let embedding = id("embedding")?;
        let lower = Gru::bind(&params, &alloc::format!("{prefix}.lower"))?;
        let upper = Gru::bind(&params, &alloc::format!("{prefix}.upper"))?;
        let (out_weights, out_bias) = (id("out_weights")?, id("out_bias")?);
        let vocab_size = params.get(embedding).rows();
        let h = lower.hidden_dim;
        let ok = lower.input_dim == params.get(embedding).cols()
            && upper.input_dim == h
            && upper.hidden_dim == h
            && params.get(out_weights).shape() == [vocab_size, h]
            && params.get(out_bias).shape() == [vocab_size];
        if !ok {
            return Err(config!("language model parameter shapes are inconsistent"));
        }
        Ok(Self { params, embedding, lower, upper, out_weights, out_bias, vocab_size, hidden_dim: h })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Per-position `−ln P(tokens[i+1] | tokens[..=i])`.
    pub(crate) fn token_losses_with<C: Compute>(&self, c: &mut C, tokens: &[usize]) -> Vec<C::V> {
        let zero = c.constant(vec![0.0; self.hidden_dim]);
        let (mut h1, mut h2) = (zero.clone(), zero);
        let bias = c.param(self.out_bias);
        let mut out = Vec::with_capacity(tokens.len().saturating_sub(1));
        for w in tokens.windows(2) {
            let x = c.embed(self.embedding, w[0]);
            h1 = self.lower.step(c, &h1, &x);
            h2 = self.upper.step(c, &h2, &h1);
            let proj = c.matvec(self.out_weights, &h2);
            let logits = c.add(&proj, &bias);
            out.push(c.neg_log_softmax(&logits, w[1]));
        }
        out
    }

    fn check(&self, sentence: &Sentence) -> Result<()> {
        sentence.require_framed()?;
        sentence.check_vocab(self.vocab_size)
    }

    /// `ln P(w_t | w_<t)` for every predicted position of a framed sentence.
    pub fn token_log_probs(&self, sentence: &Sentence) -> Result<Vec<f64>> {
        self.check(sentence)?;
        let mut e = Eval::new(&self.params);
        Ok(self.token_losses_with(&mut e, sentence.tokens()).into_iter().map(|v| -v[0]).collect())
    }

    /// `Σ_t ln P(w_t | w_<t)` from BOS through EOS.
    pub fn sentence_log_prob(&self, sentence: &Sentence) -> Result<f64> {
        Ok(self.token_log_probs(sentence)?.iter().sum())
    }

    /// Log-probability of `continuation` given the already observed `context`
    /// (which starts with BOS).
    pub fn conditional_log_prob(&self, context: &[usize], continuation: &[usize]) -> Result<f64> {
        if context.is_empty() {
            return Err(usage!("conditioning context must contain BOS"));
        }
        let tokens = [context, continuation].concat();
        if let Some(t) = tokens.iter().find(|&&t| t >= self.vocab_size) {
            return Err(usage!("token {t} outside vocabulary"));
        }
        let mut e = Eval::new(&self.params);
        let losses = self.token_losses_with(&mut e, &tokens);
        Ok(-losses[context.len() - 1..].iter().map(|v| v[0]).sum::<f64>())
    }

    /// Length-normalized log-probability.
    pub fn fluency_score(&self, sentence: &Sentence) -> Result<f64> {
        let lp = self.sentence_log_prob(sentence)?;
        Ok(lp / sentence.predicted_len() as f64)
    }

    /// `exp(−ln p / M)`.
    pub fn perplexity(&self, sentence: &Sentence) -> Result<f64> {
        Ok(libm::exp(-self.fluency_score(sentence)?))
    }

    /// Perplexity over a corpus: total log-probability over total predicted
    /// tokens.
    pub fn corpus_perplexity(&self, corpus: &[Sentence]) -> Result<f64> {
        if corpus.is_empty() {
            return Err(usage!("empty corpus"));
        }
        let mut total = 0.0;
        let mut count = 0usize;
        for s in corpus {
            total += self.sentence_log_prob(s)?;
            count += s.predicted_len();
        }
        Ok(libm::exp(-total / count as f64))
    }

    /// Teacher-forced next-token step. Returns the mean per-token loss before
    /// the update.
    pub fn pretrain_step(&mut self, batch: &[Sentence], learning_rate: f64) -> Result<f64> {
        let (loss, grads) = {
            let mut g = Graph::new(&self.params);
            let mean = self.loss_node(&mut g, batch)?;
            (g.scalar(mean), g.backward(mean))
        };
        if !loss.is_finite() {
            return Err(numerical!("non-finite language-model loss"));
        }
        self.params.accumulate(&grads);
        sgd_step(&mut self.params, learning_rate, DEFAULT_CLIP_NORM)?;
        Ok(loss)
    }

    /// Mean per-token negative log-likelihood of a batch, as a tape node.
    pub fn loss_node(&self, g: &mut Graph<'_>, batch: &[Sentence]) -> Result<Var> {
        if batch.is_empty() {
            return Err(usage!("empty language-model batch"));
        }
        for s in batch {
            self.check(s)?;
        }
        let count: usize = batch.iter().map(Sentence::predicted_len).sum();
        Ok(self.mean_loss_node(g, batch, count))
    }

    pub(crate) fn mean_loss_node(&self, g: &mut Graph<'_>, batch: &[Sentence], count: usize) -> Var {
        let mut all = Vec::new();
        for s in batch {
            all.extend(self.token_losses_with(g, s.tokens()));
        }
        let total = g.sum(&all);
        g.scale(&total, 1.0 / count as f64)
    }
}
