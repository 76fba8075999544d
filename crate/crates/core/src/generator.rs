//! GRU encoder-decoder with bilinear attention.
//!
//! ```text
//! h̄_t = GRU_enc(h̄_{t−1}, vec(x_t))            encoder, from a zero state
//! h_t = GRU_dec(h_{t−1}, vec(y_{t−1}))          decoder, from h̄_T
//! α_t = softmax_s(h_tᵀ W_a h̄_s),  c_t = Σ_s α_t(s) h̄_s
//! h̃_t = tanh(W_c [c_t; h_t])
//! P(y_t | y_<t, x) = softmax(W_s h̃_t)
//! ```

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::embedding::{embedding_table, Embeddings};
use crate::error::{config, numerical, usage, Result};
use crate::graph::{Compute, Eval, Graph, Var};
use crate::nn::{Gru, Init};
use crate::optim::{sgd_step, DEFAULT_CLIP_NORM};
use crate::sentence::{Sentence, Style, BOS, EOS, PAD};
use crate::tensor::{ParamId, ParameterSet};
use crate::Rng;

/// Hard cap on generated tokens.
pub const MAX_DECODE_CAP: usize = 30;

/// Decoding budget for a source sentence: 1.5× its content length plus 5,
/// capped at [`MAX_DECODE_CAP`].
pub fn default_max_len(source: &Sentence) -> usize {
    let n = source.content().len();
    ((3 * n).div_ceil(2) + 5).min(MAX_DECODE_CAP)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeneratorConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

/// Parameters of the encoder-decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub params: ParameterSet,
    pub embedding: ParamId,
    pub encoder: Gru,
    pub decoder: Gru,
    /// Bilinear attention score matrix, hidden × hidden.
    pub attention: ParamId,
    /// Projection of `[c_t; h_t]`, hidden × 2·hidden.
    pub concat: ParamId,
    /// Output projection, vocab × hidden.
    pub output: ParamId,
    vocab_size: usize,
    hidden_dim: usize,
}

/// Encoder hidden states, one per source token.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderStates {
    pub states: Vec<Vec<f64>>,
    pub source: Sentence,
}

impl EncoderStates {
    /// Decoder initial state: the final encoder state.
    pub fn initial_state(&self) -> Vec<f64> {
        self.states.last().cloned().unwrap_or_default()
    }
}

/// Result of [`Generator::beam_search`].
#[derive(Debug, Clone, PartialEq)]
pub struct BeamOutput {
    pub sentence: Sentence,
    /// Sum of token log-probabilities, EOS included when it was generated.
    pub log_prob: f64,
    /// No hypothesis produced EOS within the budget; EOS was appended.
    pub truncated: bool,
}

/// Partial hypothesis kept on the beam.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamHypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub state: Vec<f64>,
    pub finished: bool,
}

impl BeamHypothesis {
    fn normalized(&self) -> f64 {
        self.log_prob / (self.tokens.len() - 1).max(1) as f64
    }
}

/// Decoder distribution and state after feeding each token of a path.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodePath {
    pub encoder: EncoderStates,
    /// `steps[i]` is the result of feeding `tokens[i]`: the distribution over
    /// `tokens[i + 1]` and the decoder state after that step.
    pub steps: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Generator {
    pub fn new(cfg: GeneratorConfig, rng: &mut Rng, pretrained: Option<&Embeddings>) -> Result<Self> {
        let GeneratorConfig { vocab_size, embed_dim, hidden_dim } = cfg;
        if vocab_size <= EOS || embed_dim == 0 || hidden_dim == 0 {
            return Err(config!("generator needs a vocabulary beyond the reserved tokens and positive dims"));
        }
        let mut init = Init::new(rng);
        let mut params = ParameterSet::new();
        params.add("gen.embedding", embedding_table(vocab_size, embed_dim, pretrained, &mut init)?)?;
        Gru::register(&mut params, "gen.encoder", embed_dim, hidden_dim, &mut init)?;
        Gru::register(&mut params, "gen.decoder", embed_dim, hidden_dim, &mut init)?;
        params.add("gen.attention", init.weights(&[hidden_dim, hidden_dim])?)?;
        params.add("gen.concat", init.weights(&[hidden_dim, 2 * hidden_dim])?)?;
        params.add("gen.output", init.weights(&[vocab_size, hidden_dim])?)?;
        Self::from_params(params)
    }

    /// Binds handles to a parameter set loaded from a checkpoint.
    pub fn from_params(params: ParameterSet) -> Result<Self> {
        let id = |name: &str| params.id(name).ok_or_else(|| config!("missing parameter `{name}`"));
        let embedding = id("gen.embedding")?;
        let attention = id("gen.attention")?;
        let concat = id("gen.concat")?;
        let output = id("gen.output")?;
        let encoder = Gru::bind(&params, "gen.encoder")?;
        let decoder = Gru::bind(&params, "gen.decoder")?;
        let vocab_size = params.get(embedding).rows();
        let embed_dim = params.get(embedding).cols();
        let hidden_dim = encoder.hidden_dim;
        let ok = encoder.input_dim == embed_dim
            && decoder.input_dim == embed_dim
            && decoder.hidden_dim == hidden_dim
            && params.get(attention).shape() == [hidden_dim, hidden_dim]
            && params.get(concat).shape() == [hidden_dim, 2 * hidden_dim]
            && params.get(output).shape() == [vocab_size, hidden_dim];
        if !ok {
            return Err(config!("generator parameter shapes are inconsistent"));
        }
        Ok(Self { params, embedding, encoder, decoder, attention, concat, output, vocab_size, hidden_dim })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        match tokens.iter().find(|&&t| t >= self.vocab_size) {
            Some(t) => Err(usage!("token {t} outside embedding range {}", self.vocab_size)),
            None => Ok(()),
        }
    }

    pub(crate) fn encode_with<C: Compute>(&self, c: &mut C, tokens: &[usize]) -> Vec<C::V> {
        let mut h = c.constant(vec![0.0; self.hidden_dim]);
        let mut states = Vec::with_capacity(tokens.len());
        for &t in tokens {
            let x = c.embed(self.embedding, t);
            h = self.encoder.step(c, &h, &x);
            states.push(h.clone());
        }
        states
    }

    pub(crate) fn attend_with<C: Compute>(&self, c: &mut C, state: &C::V, enc: &[C::V]) -> (C::V, C::V) {
        let query = c.matvec_t(self.attention, state);
        let scores: Vec<C::V> = enc.iter().map(|h| c.dot(&query, h)).collect();
        let scores = c.stack(&scores);
        let weights = c.softmax(&scores);
        let context = c.weighted_sum(&weights, enc);
        (context, weights)
    }

    /// Advances the decoder by one token and returns `(logits, new_state)`.
    pub(crate) fn step_with<C: Compute>(
        &self,
        c: &mut C,
        prev_token: usize,
        state: &C::V,
        enc: &[C::V],
    ) -> (C::V, C::V) {
        let x = c.embed(self.embedding, prev_token);
        let h = self.decoder.step(c, state, &x);
        let (context, _) = self.attend_with(c, &h, enc);
        let joined = c.concat(&context, &h);
        let pre = c.matvec(self.concat, &joined);
        let attentional = c.tanh(&pre);
        let logits = c.matvec(self.output, &attentional);
        (logits, h)
    }

    pub fn encode(&self, source: &Sentence) -> Result<EncoderStates> {
        source.require_framed()?;
        self.check_tokens(source.tokens())?;
        let mut e = Eval::new(&self.params);
        let states = self.encode_with(&mut e, source.tokens());
        Ok(EncoderStates { states, source: source.clone() })
    }

    /// Context vector and attention weights for a decoder state.
    pub fn attention_context(&self, decoder_state: &[f64], enc: &EncoderStates) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_state(decoder_state, enc)?;
        let mut e = Eval::new(&self.params);
        Ok(self.attend_with(&mut e, &decoder_state.to_vec(), &enc.states))
    }

    fn check_state(&self, state: &[f64], enc: &EncoderStates) -> Result<()> {
        if state.len() != self.hidden_dim || enc.states.iter().any(|s| s.len() != self.hidden_dim) {
            return Err(config!("decoder state and encoder states must have dimension {}", self.hidden_dim));
        }
        Ok(())
    }

    /// Next-word distribution and the advanced decoder state.
    pub fn decode_step(
        &self,
        prev_token: usize,
        decoder_state: &[f64],
        enc: &EncoderStates,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_tokens(&[prev_token])?;
        self.check_state(decoder_state, enc)?;
        Ok(self.decode_step_unchecked(prev_token, decoder_state, enc))
    }

    fn decode_step_unchecked(&self, prev_token: usize, state: &[f64], enc: &EncoderStates) -> (Vec<f64>, Vec<f64>) {
        let mut e = Eval::new(&self.params);
        let (logits, h) = self.step_with(&mut e, prev_token, &state.to_vec(), &enc.states);
        (e.softmax(&logits), h)
    }

    /// Feeds `tokens` (starting with BOS) through the decoder.
    pub fn decode_path(&self, source: &Sentence, tokens: &[usize]) -> Result<DecodePath> {
        if tokens.first() != Some(&BOS) {
            return Err(usage!("decoder input must start with BOS"));
        }
        self.check_tokens(tokens)?;
        let encoder = self.encode(source)?;
        let mut state = encoder.initial_state();
        let mut steps = Vec::with_capacity(tokens.len());
        for &t in tokens {
            let (dist, h) = self.decode_step_unchecked(t, &state, &encoder);
            state = h.clone();
            steps.push((dist, h));
        }
        Ok(DecodePath { encoder, steps })
    }

    /// Beam search scored by length-normalized log-probability.
    ///
    /// Each step expands every live hypothesis by its `width` most likely
    /// tokens and keeps the `width` best candidates. Candidates ending in EOS
    /// move to the finished pool; search stops once `width` hypotheses have
    /// finished or `max_len` non-EOS tokens have been generated.
    pub fn beam_search(&self, source: &Sentence, width: usize, max_len: usize) -> Result<BeamOutput> {
        if width == 0 || max_len == 0 {
            return Err(usage!("beam width and maximum length must be at least 1"));
        }
        let enc = self.encode(source)?;
        let mut live = vec![BeamHypothesis {
            tokens: vec![BOS],
            log_prob: 0.0,
            state: enc.initial_state(),
            finished: false,
        }];
        let mut finished: Vec<BeamHypothesis> = Vec::new();
        for step in 0..=max_len {
            let final_step = step == max_len;
            // (log_prob, hypothesis index, token)
            let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
            let mut states = Vec::with_capacity(live.len());
            for (hi, hyp) in live.iter().enumerate() {
                let last = *hyp.tokens.last().unwrap_or(&BOS);
                let (dist, h) = self.decode_step_unchecked(last, &hyp.state, &enc);
                states.push(h);
                for (tok, lp) in top_k(&dist, width) {
                    if final_step && tok != EOS {
                        continue;
                    }
                    candidates.push((hyp.log_prob + lp, hi, tok));
                }
            }
            candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let mut next = Vec::with_capacity(width);
            for (lp, hi, tok) in candidates.into_iter().take(width) {
                let mut tokens = live[hi].tokens.clone();
                tokens.push(tok);
                let hyp = BeamHypothesis { tokens, log_prob: lp, state: states[hi].clone(), finished: tok == EOS };
                if hyp.finished {
                    finished.push(hyp);
                } else {
                    next.push(hyp);
                }
            }
            if final_step {
                break;
            }
            live = next;
            if live.is_empty() || finished.len() >= width {
                break;
            }
        }
        let best_of = |pool: &[BeamHypothesis]| -> Option<BeamHypothesis> {
            let mut best: Option<&BeamHypothesis> = None;
            for h in pool {
                if best.is_none_or(|b| h.normalized() > b.normalized()) {
                    best = Some(h);
                }
            }
            best.cloned()
        };
        let (hyp, truncated) = match best_of(&finished) {
            Some(h) => (h, false),
            None => {
                let h = best_of(&live).ok_or_else(|| numerical!("beam search produced no hypothesis"))?;
                (h, true)
            }
        };
        let mut tokens = hyp.tokens;
        if truncated {
            tokens.push(EOS);
        }
        Ok(BeamOutput { sentence: Sentence::from_framed(tokens, Style::Target)?, log_prob: hyp.log_prob, truncated })
    }

    /// Argmax decoding: the most likely token at every step, lowest index on
    /// ties.
    pub fn greedy(&self, source: &Sentence, max_len: usize) -> Result<BeamOutput> {
        let enc = self.encode(source)?;
        let mut tokens = vec![BOS];
        let mut state = enc.initial_state();
        let mut log_prob = 0.0;
        loop {
            let (dist, h) = self.decode_step_unchecked(*tokens.last().unwrap_or(&BOS), &state, &enc);
            state = h;
            let content_len = tokens.len() - 1;
            let (tok, lp) = if content_len == max_len {
                (EOS, libm::log(dist[EOS]))
            } else {
                top_k(&dist, 1)[0]
            };
            log_prob += lp;
            tokens.push(tok);
            if tok == EOS {
                break;
            }
        }
        Ok(BeamOutput { sentence: Sentence::from_framed(tokens, Style::Target)?, log_prob, truncated: false })
    }

    /// Completes `prefix` by sampling from the decoder until EOS; EOS is
    /// forced once `max_len` non-EOS tokens follow BOS.
    pub fn multinomial_rollout(
        &self,
        prefix: &[usize],
        source: &Sentence,
        max_len: usize,
        rng: &mut Rng,
    ) -> Result<Sentence> {
        if prefix.last() == Some(&EOS) {
            return Sentence::from_framed(prefix.to_vec(), Style::Target);
        }
        let path = self.decode_path(source, prefix)?;
        let (dist, state) = path.steps.last().cloned().ok_or_else(|| usage!("empty prefix"))?;
        let tokens = self.continue_rollout(&path.encoder, prefix.to_vec(), state, dist, max_len, rng);
        Sentence::from_framed(tokens, Style::Target)
    }

    /// Sampling continuation from a known decoder state and next-token
    /// distribution.
    pub fn continue_rollout(
        &self,
        enc: &EncoderStates,
        mut tokens: Vec<usize>,
        mut state: Vec<f64>,
        mut dist: Vec<f64>,
        max_len: usize,
        rng: &mut Rng,
    ) -> Vec<usize> {
        loop {
            let tok = if tokens.len() > max_len { EOS } else { sample(&dist, rng) };
            tokens.push(tok);
            if tok == EOS {
                return tokens;
            }
            let (d, h) = self.decode_step_unchecked(tok, &state, enc);
            dist = d;
            state = h;
        }
    }

    /// Per-token `−ln P(target[i+1] | target[..=i], source)` nodes under
    /// teacher forcing.
    pub fn token_losses(&self, g: &mut Graph<'_>, source: &Sentence, target: &Sentence) -> Result<Vec<Var>> {
        source.require_framed()?;
        target.require_framed()?;
        self.check_tokens(source.tokens())?;
        self.check_tokens(target.tokens())?;
        let enc = self.encode_with(g, source.tokens());
        let mut state = enc.last().copied().ok_or_else(|| usage!("empty source"))?;
        let tokens = target.tokens();
        let mut losses = Vec::with_capacity(tokens.len() - 1);
        for w in tokens.windows(2) {
            let (logits, h) = self.step_with(g, w[0], &state, &enc);
            losses.push(g.neg_log_softmax(&logits, w[1]));
            state = h;
        }
        Ok(losses)
    }

    /// One autoencoding step: each sentence is both input and expected
    /// output. Returns the mean per-token loss before the update.
    pub fn pretrain_step(&mut self, batch: &[Sentence], learning_rate: f64) -> Result<f64> {
        if batch.is_empty() {
            return Err(usage!("empty pre-training batch"));
        }
        let total_tokens: usize = batch.iter().map(Sentence::predicted_len).sum();
        let (loss, grads) = {
            let mut g = Graph::new(&self.params);
            let mut all = Vec::new();
            for s in batch {
                all.extend(self.token_losses(&mut g, s, s)?);
            }
            let summed = g.sum(&all);
            let mean = g.scale(&summed, 1.0 / total_tokens as f64);
            (g.scalar(mean), g.backward(mean))
        };
        if !loss.is_finite() {
            return Err(numerical!("non-finite pre-training loss on a batch of {}", batch.len()));
        }
        self.params.accumulate(&grads);
        sgd_step(&mut self.params, learning_rate, DEFAULT_CLIP_NORM)?;
        Ok(loss)
    }

    /// Mean per-token autoencoding loss without updating.
    pub fn autoencode_loss(&self, batch: &[Sentence]) -> Result<f64> {
        let mut g = Graph::new(&self.params);
        let mut total = 0.0;
        let mut count = 0;
        for s in batch {
            for l in self.token_losses(&mut g, s, s)? {
                total += g.scalar(l);
                count += 1;
            }
        }
        Ok(total / count.max(1) as f64)
    }
}

/// Tokens that are never emitted: PAD and BOS.
fn emittable(token: usize) -> bool {
    token != PAD && token != BOS
}

/// The `k` most probable emittable entries as `(index, ln p)`, most likely
/// first, ties broken by lower index.
fn top_k(dist: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut idx: Vec<usize> = (0..dist.len()).filter(|&t| emittable(t)).collect();
    idx.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx.into_iter().map(|i| (i, libm::log(dist[i]))).collect()
}

/// Inverse-CDF draw from the decoder distribution restricted to emittable
/// tokens.
pub fn sample(dist: &[f64], rng: &mut Rng) -> usize {
    let mass: f64 = dist.iter().enumerate().filter(|(t, _)| emittable(*t)).map(|(_, p)| p).sum();
    let u = rng.gen::<f64>() * mass;
    let mut acc = 0.0;
    for (i, p) in dist.iter().enumerate() {
        if !emittable(i) {
            continue;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    (0..dist.len()).rev().find(|&t| emittable(t) && dist[t] > 0.0).unwrap_or(EOS)
}
