//! Frozen automatic evaluation: content preservation, transfer strength,
//! overall score and perplexity.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::discriminator::Discriminator;
use crate::embedding::Embeddings;
use crate::error::{usage, Result};
use crate::lm::LanguageModel;
use crate::sentence::{Sentence, BOS, EOS};

/// How word vectors are pooled into a sentence vector.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Pooling {
    #[default]
    Mean,
    /// Concatenation of element-wise min, mean and max.
    MinMeanMax,
}

impl core::str::FromStr for Pooling {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "min-mean-max" => Ok(Self::MinMeanMax),
            _ => Err(crate::error::config!("unknown pooling `{s}` (mean, min-mean-max)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContentScore {
    pub value: f64,
    /// A pooled vector had zero norm; the score was set to 0.
    pub degenerate: bool,
}

fn pooled(sentence: &Sentence, embeddings: &Embeddings, pooling: Pooling) -> Result<Vec<f64>> {
    let words: Vec<usize> = sentence.tokens().iter().copied().filter(|&t| t != BOS && t != EOS).collect();
    if words.is_empty() {
        return Err(usage!("sentence has no content tokens"));
    }
    let dim = embeddings.dim();
    let mut mean = vec![0.0; dim];
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for &w in &words {
        for (k, &x) in embeddings.row(w).iter().enumerate() {
            mean[k] += x;
            lo[k] = lo[k].min(x);
            hi[k] = hi[k].max(x);
        }
    }
    mean.iter_mut().for_each(|m| *m /= words.len() as f64);
    Ok(match pooling {
        Pooling::Mean => mean,
        Pooling::MinMeanMax => [lo, mean, hi].concat(),
    })
}

/// Cosine similarity of pooled word embeddings, BOS/EOS excluded.
pub fn content_preservation(
    generated: &Sentence,
    source: &Sentence,
    embeddings: &Embeddings,
    pooling: Pooling,
) -> Result<ContentScore> {
    let a = pooled(generated, embeddings, pooling)?;
    let b = pooled(source, embeddings, pooling)?;
    let norm = |v: &[f64]| libm::sqrt(v.iter().map(|x| x * x).sum());
    let (na, nb) = (norm(&a), norm(&b));
    if na == 0.0 || nb == 0.0 {
        return Ok(ContentScore { value: 0.0, degenerate: true });
    }
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    Ok(ContentScore { value: (dot / (na * nb)).clamp(-1.0, 1.0), degenerate: false })
}

/// Fraction of scores strictly above 0.5.
pub fn transfer_strength(target_probabilities: &[f64]) -> Result<f64> {
    if target_probabilities.is_empty() {
        return Err(usage!("transfer strength of an empty corpus"));
    }
    let hits = target_probabilities.iter().filter(|&&p| p > 0.5).count();
    Ok(hits as f64 / target_probabilities.len() as f64)
}

/// Transfer strength of `generated` under a frozen classifier.
pub fn classifier_transfer_strength(generated: &[Sentence], classifier: &Discriminator) -> Result<f64> {
    let scores = generated.iter().map(|s| classifier.style_score(s)).collect::<Result<Vec<_>>>()?;
    transfer_strength(&scores)
}

/// `s_sem·s_style / (s_sem + s_style)`; `None` when the denominator is not
/// positive.
pub fn overall_score(s_sem: f64, s_style: f64) -> Option<f64> {
    let denom = s_sem + s_style;
    (denom > 0.0).then(|| s_sem * s_style / denom)
}

/// Perplexity of a generated corpus under the frozen evaluation LM.
pub fn corpus_perplexity(generated: &[Sentence], lm: &LanguageModel) -> Result<f64> {
    lm.corpus_perplexity(generated)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub content: f64,
    pub style: f64,
    pub overall: Option<f64>,
    pub perplexity: f64,
    pub samples: usize,
    /// Pairs whose content score hit a zero-norm pooled vector.
    pub degenerate: usize,
}

/// Frozen models and vectors used for evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Evaluator<'a> {
    pub classifier: &'a Discriminator,
    pub lm: &'a LanguageModel,
    pub embeddings: &'a Embeddings,
    pub pooling: Pooling,
}

impl Evaluator<'_> {
    /// Scores `(generated, source)` pairs.
    pub fn evaluate(&self, generated: &[Sentence], sources: &[Sentence]) -> Result<EvaluationReport> {
        if generated.is_empty() {
            return Err(usage!("nothing to evaluate"));
        }
        if generated.len() != sources.len() {
            return Err(usage!("{} outputs for {} sources", generated.len(), sources.len()));
        }
        let mut content = 0.0;
        let mut degenerate = 0;
        for (g, s) in generated.iter().zip(sources) {
            // An empty output has nothing to compare; it counts as zero content.
            let c = if g.content().is_empty() {
                ContentScore { value: 0.0, degenerate: true }
            } else {
                content_preservation(g, s, self.embeddings, self.pooling)?
            };
            content += c.value;
            degenerate += usize::from(c.degenerate);
        }
        let content = content / generated.len() as f64;
        let style = classifier_transfer_strength(generated, self.classifier)?;
        Ok(EvaluationReport {
            content,
            style,
            overall: overall_score(content, style),
            perplexity: corpus_perplexity(generated, self.lm)?,
            samples: generated.len(),
            degenerate,
        })
    }
}

impl EvaluationReport {
    pub const TSV_HEADER: &'static str = "content\tstyle\toverall\tperplexity\tsamples\tdegenerate";

    pub fn overall_text(&self) -> String {
        self.overall.map_or_else(|| String::from("undefined"), |o| format!("{o:.6}"))
    }

    pub fn tsv_row(&self) -> String {
        format!(
            "{:.6}\t{:.6}\t{}\t{:.6}\t{}\t{}",
            self.content,
            self.style,
            self.overall_text(),
            self.perplexity,
            self.samples,
            self.degenerate
        )
    }

    /// Aligned two-column table.
    pub fn table(&self) -> String {
        let rows = [
            ("content preservation", format!("{:.4}", self.content)),
            ("transfer strength", format!("{:.4}", self.style)),
            ("overall", self.overall.map_or_else(|| String::from("undefined"), |o| format!("{o:.4}"))),
            ("perplexity", format!("{:.3}", self.perplexity)),
            ("samples", format!("{}", self.samples)),
            ("degenerate", format!("{}", self.degenerate)),
        ];
        let mut out = String::new();
        for (k, v) in rows {
            out.push_str(&format!("{k:<22}{v:>12}\n"));
        }
        out
    }
}
