//! Bidirectional GRU style classifier with additive attention pooling.
//!
//! `D(Y)` is the probability that `Y` is in the target style. The same
//! architecture serves as the reward-side discriminator, which keeps being
//! trained adversarially, and as the frozen evaluation classifier.

use alloc::vec;
use alloc::vec::Vec;

use crate::embedding::{embedding_table, Embeddings};
use crate::error::{config, numerical, usage, Result};
use crate::graph::{Compute, Eval, Graph, Var};
use crate::nn::{Gru, Init};
use crate::optim::{sgd_step, DEFAULT_CLIP_NORM};
use crate::sentence::{Sentence, Style};
use crate::tensor::{ParamId, ParameterSet};
use crate::Rng;

/// Scores are clamped to `[SCORE_CLAMP, 1 − SCORE_CLAMP]`.
pub const SCORE_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiscriminatorConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub params: ParameterSet,
    pub embedding: ParamId,
    pub forward: Gru,
    pub backward: Gru,
    /// Attention projection, hidden × 2·hidden.
    pub attn_proj: ParamId,
    pub attn_bias: ParamId,
    /// Learned attention context vector.
    pub attn_context: ParamId,
    /// Logistic output weights over the pooled state, 1 × 2·hidden.
    pub out_weights: ParamId,
    pub out_bias: ParamId,
    vocab_size: usize,
    hidden_dim: usize,
}

impl Discriminator {
    /// `prefix` names the parameter group, e.g. `disc` or `eval_clf`.
    pub fn new(cfg: DiscriminatorConfig, prefix: &str, rng: &mut Rng, pretrained: Option<&Embeddings>) -> Result<Self> {
        let DiscriminatorConfig { vocab_size, embed_dim, hidden_dim } = cfg;
        if vocab_size == 0 || embed_dim == 0 || hidden_dim == 0 {
            return Err(config!("discriminator dimensions must be positive"));
        }
        let mut init = Init::new(rng);
        let mut p = ParameterSet::new();
        let name = |s: &str| alloc::format!("{prefix}.{s}");
        p.add(&name("embedding"), embedding_table(vocab_size, embed_dim, pretrained, &mut init)?)?;
        Gru::register(&mut p, &name("forward"), embed_dim, hidden_dim, &mut init)?;
        Gru::register(&mut p, &name("backward"), embed_dim, hidden_dim, &mut init)?;
        p.add(&name("attn_proj"), init.weights(&[hidden_dim, 2 * hidden_dim])?)?;
        p.add(&name("attn_bias"), init.bias(hidden_dim)?)?;
        p.add(&name("attn_context"), init.weights(&[hidden_dim])?)?;
        p.add(&name("out_weights"), init.weights(&[1, 2 * hidden_dim])?)?;
        p.add(&name("out_bias"), init.bias(1)?)?;
        Self::from_params(p, prefix)
    }

    pub fn from_params(params: ParameterSet, prefix: &str) -> Result<Self> {
        let id = |s: &str| {
            let n = alloc::format!("{prefix}.{s}");
            params.id(&n).ok_or_else(|| config!("missing parameter `{n}`"))
        };
        let embedding = id("embedding")?;
        let forward = Gru::bind(&params, &alloc::format!("{prefix}.forward"))?;
        let backward = Gru::bind(&params, &alloc::format!("{prefix}.backward"))?;
        let (attn_proj, attn_bias, attn_context) = (id("attn_proj")?, id("attn_bias")?, id("attn_context")?);
        let (out_weights, out_bias) = (id("out_weights")?, id("out_bias")?);
        let vocab_size = params.get(embedding).rows();
        let e = params.get(embedding).cols();
        let h = forward.hidden_dim;
        let ok = forward.input_dim == e
            && backward.input_dim == e
            && backward.hidden_dim == h
            && params.get(attn_proj).shape() == [h, 2 * h]
            && params.get(attn_bias).shape() == [h]
            && params.get(attn_context).shape() == [h]
            && params.get(out_weights).shape() == [1, 2 * h]
            && params.get(out_bias).shape() == [1];
        if !ok {
            return Err(config!("discriminator parameter shapes are inconsistent"));
        }
        Ok(Self {
            params,
            embedding,
            forward,
            backward,
            attn_proj,
            attn_bias,
            attn_context,
            out_weights,
            out_bias,
            vocab_size,
            hidden_dim: h,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Clamped target-style probability as a scalar node.
    pub(crate) fn score_with<C: Compute>(&self, c: &mut C, tokens: &[usize]) -> C::V {
        let embedded: Vec<C::V> = tokens.iter().map(|&t| c.embed(self.embedding, t)).collect();
        let zero = c.constant(vec![0.0; self.hidden_dim]);
        let mut fwd = Vec::with_capacity(tokens.len());
        let mut h = zero.clone();
        for x in &embedded {
            h = self.forward.step(c, &h, x);
            fwd.push(h.clone());
        }
        let mut bwd = vec![zero.clone(); tokens.len()];
        let mut h = zero;
        for (i, x) in embedded.iter().enumerate().rev() {
            h = self.backward.step(c, &h, x);
            bwd[i] = h.clone();
        }
        let joined: Vec<C::V> = fwd.iter().zip(&bwd).map(|(f, b)| c.concat(f, b)).collect();
        let bias = c.param(self.attn_bias);
        let context = c.param(self.attn_context);
        let energies: Vec<C::V> = joined
            .iter()
            .map(|u| {
                let proj = c.matvec(self.attn_proj, u);
                let shifted = c.add(&proj, &bias);
                let act = c.tanh(&shifted);
                c.dot(&act, &context)
            })
            .collect();
        let energies = c.stack(&energies);
        let weights = c.softmax(&energies);
        let pooled = c.weighted_sum(&weights, &joined);
        let logit = c.matvec(self.out_weights, &pooled);
        let out_bias = c.param(self.out_bias);
        let logit = c.add(&logit, &out_bias);
        let prob = c.sigmoid(&logit);
        c.clamp(&prob, SCORE_CLAMP, 1.0 - SCORE_CLAMP)
    }

    fn check(&self, sentence: &Sentence) -> Result<()> {
        sentence.check_vocab(self.vocab_size)
    }

    /// `D(Y)`: probability that the sentence is in the target style.
    pub fn style_score(&self, sentence: &Sentence) -> Result<f64> {
        sentence.require_framed()?;
        self.check(sentence)?;
        Ok(self.score_tokens(sentence.tokens()))
    }

    /// As [`Discriminator::style_score`] on a raw token sequence.
    pub fn score_tokens(&self, tokens: &[usize]) -> f64 {
        let mut e = Eval::new(&self.params);
        let v = self.score_with(&mut e, tokens);
        v[0]
    }

    /// `−ln D(Y)` for target-style labels, `−ln(1 − D(Y))` otherwise.
    pub(crate) fn bce_node(&self, g: &mut Graph<'_>, sentence: &Sentence, target: bool) -> Var {
        let d = self.score_with(g, sentence.tokens());
        let p = if target { d } else { g.affine(&d, -1.0, 1.0) };
        let ln = g.ln(&p);
        g.scale(&ln, -1.0)
    }

    fn apply(&mut self, loss_of: impl FnOnce(&Self, &mut Graph<'_>) -> Result<Var>, lr: f64) -> Result<f64> {
        let (loss, grads) = {
            let mut g = Graph::new(&self.params);
            let out = loss_of(self, &mut g)?;
            (g.scalar(out), g.backward(out))
        };
        if !loss.is_finite() {
            return Err(numerical!("non-finite discriminator loss"));
        }
        self.params.accumulate(&grads);
        sgd_step(&mut self.params, lr, DEFAULT_CLIP_NORM)?;
        Ok(loss)
    }

    /// Mean binary cross-entropy over a labeled batch (target style = 1).
    pub fn classification_loss(&self, batch: &[Sentence]) -> Result<f64> {
        if batch.is_empty() {
            return Err(usage!("empty classification batch"));
        }
        let mut g = Graph::new(&self.params);
        let mut total = 0.0;
        for s in batch {
            self.check(s)?;
            let l = self.bce_node(&mut g, s, s.style() == Style::Target);
            total += g.scalar(l);
        }
        Ok(total / batch.len() as f64)
    }

    /// Tape node of [`Discriminator::classification_loss`].
    pub fn classification_loss_node(&self, g: &mut Graph<'_>, batch: &[Sentence]) -> Result<Var> {
        if batch.is_empty() {
            return Err(usage!("empty discriminator batch"));
        }
        for s in batch {
            self.check(s)?;
        }
        let losses: Vec<Var> = batch.iter().map(|s| self.bce_node(g, s, s.style() == Style::Target)).collect();
        let total = g.sum(&losses);
        Ok(g.scale(&total, 1.0 / batch.len() as f64))
    }

    /// One supervised step on labeled sentences. Returns the mean loss before
    /// the update.
    pub fn pretrain_step(&mut self, batch: &[Sentence], learning_rate: f64) -> Result<f64> {
        self.apply(|d, g| d.classification_loss_node(g, batch), learning_rate)
    }

    /// Adversarial loss
    /// `L_D = (1/K)(−Σ ln(1 − D(Y_model)) − Σ ln D(Y_human))`.
    pub fn adversarial_loss(&self, human: &[Sentence], model: &[Sentence]) -> Result<f64> {
        check_batches(human, model)?;
        let mut g = Graph::new(&self.params);
        let out = self.adversarial_node(&mut g, human, model);
        Ok(g.scalar(out))
    }

    fn adversarial_node(&self, g: &mut Graph<'_>, human: &[Sentence], model: &[Sentence]) -> Var {
        let mut terms: Vec<Var> = Vec::with_capacity(2 * human.len());
        for s in model {
            terms.push(self.bce_node(g, s, false));
        }
        for s in human {
            terms.push(self.bce_node(g, s, true));
        }
        let total = g.sum(&terms);
        g.scale(&total, 1.0 / human.len() as f64)
    }

    /// One gradient step on [`Discriminator::adversarial_loss`]; returns the
    /// loss before the update.
    pub fn adversarial_step(&mut self, human: &[Sentence], model: &[Sentence], learning_rate: f64) -> Result<f64> {
        check_batches(human, model)?;
        for s in human.iter().chain(model) {
            self.check(s)?;
        }
        self.apply(|d, g| Ok(d.adversarial_node(g, human, model)), learning_rate)
    }

    /// Copy with the forward and backward passes exchanged, and the halves of
    /// every layer reading the concatenated state swapped to match.
    pub fn swapped_directions(&self) -> Self {
        let mut out = self.clone();
        let pairs = [
            (self.forward.w_update, self.backward.w_update),
            (self.forward.u_update, self.backward.u_update),
            (self.forward.b_update, self.backward.b_update),
            (self.forward.w_reset, self.backward.w_reset),
            (self.forward.u_reset, self.backward.u_reset),
            (self.forward.b_reset, self.backward.b_reset),
            (self.forward.w_cand, self.backward.w_cand),
            (self.forward.u_cand, self.backward.u_cand),
            (self.forward.b_cand, self.backward.b_cand),
        ];
        for (f, b) in pairs {
            let fv = self.params.get(f).values().to_vec();
            let bv = self.params.get(b).values().to_vec();
            out.params.get_mut(f).values_mut().copy_from_slice(&bv);
            out.params.get_mut(b).values_mut().copy_from_slice(&fv);
        }
        let h = self.hidden_dim;
        for id in [self.attn_proj, self.out_weights] {
            let t = out.params.get_mut(id);
            let cols = 2 * h;
            let rows = t.len() / cols;
            for r in 0..rows {
                let row = &mut t.values_mut()[r * cols..(r + 1) * cols];
                let (a, b) = row.split_at_mut(h);
                a.swap_with_slice(b);
            }
        }
        out
    }
}

fn check_batches(human: &[Sentence], model: &[Sentence]) -> Result<()> {
    if human.is_empty() || human.len() != model.len() {
        return Err(usage!(
            "adversarial batches must be the same non-zero size, got {} human and {} model",
            human.len(),
            model.len()
        ));
    }
    Ok(())
}
