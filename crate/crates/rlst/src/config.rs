//! Experiment configuration: `key = value` lines, `#` comments.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use rlst_core::metrics::Pooling;
use rlst_core::rl::{RlConfig, ScoreWeights};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Corpus directory; defaults to `<out_dir>/data`.
    pub data_dir: Option<PathBuf>,
    /// Word-vector file; defaults to `<data_dir>/embeddings.txt`.
    pub embeddings: Option<PathBuf>,
    pub min_freq: u64,
    pub max_vocab: usize,

    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub beam_width: usize,

    pub alpha: f64,
    pub beta: f64,
    pub eta: f64,
    pub gamma: f64,
    pub rollouts: usize,
    pub baseline_centering: bool,
    /// File of stopwords removed before WMD; empty for none.
    pub stopwords: Option<PathBuf>,
    pub union_pretraining: bool,
    pub pooling: Pooling,

    pub gen_lr: f64,
    pub gen_epochs: usize,
    pub gen_batch: usize,
    pub style_lr: f64,
    pub style_epochs: usize,
    pub style_batch: usize,
    pub lm_lr: f64,
    pub lm_epochs: usize,
    pub lm_batch: usize,

    pub rl_lr: f64,
    pub disc_lr: f64,
    pub rl_updates: usize,
    pub rl_batch: usize,
    pub eval_every: usize,
    pub eval_samples: usize,

    pub synth_content_words: usize,
    pub synth_train: usize,
    pub synth_dev: usize,
    pub synth_test: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out_dir: PathBuf::from("run"),
            data_dir: None,
            embeddings: None,
            min_freq: 1,
            max_vocab: 20_000,
            embed_dim: rlst_core::embedding::EMBED_DIM,
            hidden_dim: 32,
            beam_width: 8,
            alpha: 1.0,
            beta: 0.5,
            eta: 0.5,
            gamma: 0.9,
            rollouts: 8,
            baseline_centering: false,
            stopwords: None,
            union_pretraining: false,
            pooling: Pooling::Mean,
            gen_lr: 1.0,
            gen_epochs: 10,
            gen_batch: 8,
            style_lr: 0.5,
            style_epochs: 2,
            style_batch: 16,
            lm_lr: 0.5,
            lm_epochs: 3,
            lm_batch: 16,
            rl_lr: 0.05,
            disc_lr: 0.05,
            rl_updates: 2000,
            rl_batch: 2,
            eval_every: 250,
            eval_samples: 100,
            synth_content_words: 50,
            synth_train: 2000,
            synth_dev: 100,
            synth_test: 200,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| CliError::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(CliError::Config(format!("`{key}`: expected true or false, got `{value}`"))),
    }
}

fn optional_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl ExperimentConfig {
    /// Applies one `key = value` setting. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "data_dir" => self.data_dir = optional_path(v),
            "embeddings" => self.embeddings = optional_path(v),
            "min_freq" => self.min_freq = parse(key, v)?,
            "max_vocab" => self.max_vocab = parse(key, v)?,
            "embed_dim" => self.embed_dim = parse(key, v)?,
            "hidden_dim" => self.hidden_dim = parse(key, v)?,
            "beam_width" => self.beam_width = parse(key, v)?,
            "alpha" => self.alpha = parse(key, v)?,
            "beta" => self.beta = parse(key, v)?,
            "eta" => self.eta = parse(key, v)?,
            "gamma" => self.gamma = parse(key, v)?,
            "rollouts" => self.rollouts = parse(key, v)?,
            "baseline_centering" => self.baseline_centering = parse_bool(key, v)?,
            "stopwords" => self.stopwords = optional_path(v),
            "union_pretraining" => self.union_pretraining = parse_bool(key, v)?,
            "pooling" => self.pooling = v.parse().map_err(|e: rlst_core::Error| CliError::Config(e.to_string()))?,
            "gen_lr" => self.gen_lr = parse(key, v)?,
            "gen_epochs" => self.gen_epochs = parse(key, v)?,
            "gen_batch" => self.gen_batch = parse(key, v)?,
            "style_lr" => self.style_lr = parse(key, v)?,
            "style_epochs" => self.style_epochs = parse(key, v)?,
            "style_batch" => self.style_batch = parse(key, v)?,
            "lm_lr" => self.lm_lr = parse(key, v)?,
            "lm_epochs" => self.lm_epochs = parse(key, v)?,
            "lm_batch" => self.lm_batch = parse(key, v)?,
            "rl_lr" => self.rl_lr = parse(key, v)?,
            "disc_lr" => self.disc_lr = parse(key, v)?,
            "rl_updates" => self.rl_updates = parse(key, v)?,
            "rl_batch" => self.rl_batch = parse(key, v)?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "eval_samples" => self.eval_samples = parse(key, v)?,
            "synth_content_words" => self.synth_content_words = parse(key, v)?,
            "synth_train" => self.synth_train = parse(key, v)?,
            "synth_dev" => self.synth_dev = parse(key, v)?,
            "synth_test" => self.synth_test = parse(key, v)?,
            _ => return Err(CliError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies the settings in `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| CliError::Config(format!("line {}: {}", n + 1, e.to_string().trim_start_matches("invalid configuration: "))))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.to_string().trim_start_matches("invalid configuration: "))))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("beam_width", self.beam_width),
            ("gen_batch", self.gen_batch),
            ("style_batch", self.style_batch),
            ("lm_batch", self.lm_batch),
            ("rl_batch", self.rl_batch),
            ("eval_every", self.eval_every),
            ("eval_samples", self.eval_samples),
            ("max_vocab", self.max_vocab),
            ("synth_content_words", self.synth_content_words),
            ("synth_train", self.synth_train),
            ("synth_dev", self.synth_dev),
            ("synth_test", self.synth_test),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(CliError::Config(format!("`{k}` must be at least 1")));
        }
        for (k, lr) in [("gen_lr", self.gen_lr), ("style_lr", self.style_lr), ("lm_lr", self.lm_lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(CliError::Config(format!("`{k}` must be positive")));
            }
        }
        self.rl().validate()?;
        Ok(())
    }

    pub fn weights(&self) -> ScoreWeights {
        ScoreWeights { alpha: self.alpha, beta: self.beta, eta: self.eta, gamma: self.gamma, rollouts: self.rollouts }
    }

    pub fn rl(&self) -> RlConfig {
        RlConfig {
            weights: self.weights(),
            beam_width: self.beam_width,
            learning_rate: self.rl_lr,
            disc_learning_rate: self.disc_lr,
            baseline_centering: self.baseline_centering,
        }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(|| self.out_dir.join("data"))
    }

    pub fn embeddings_path(&self) -> PathBuf {
        self.embeddings.clone().unwrap_or_else(|| self.data_dir().join("embeddings.txt"))
    }

    /// Every setting as `key = value` lines, parseable by [`Self::apply_text`].
    pub fn to_text(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let pooling = match self.pooling {
            Pooling::Mean => "mean",
            Pooling::MinMeanMax => "min-mean-max",
        };
        let entries: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("out_dir", self.out_dir.display().to_string()),
            ("data_dir", path(&self.data_dir)),
            ("embeddings", path(&self.embeddings)),
            ("min_freq", self.min_freq.to_string()),
            ("max_vocab", self.max_vocab.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("hidden_dim", self.hidden_dim.to_string()),
            ("beam_width", self.beam_width.to_string()),
            ("alpha", self.alpha.to_string()),
            ("beta", self.beta.to_string()),
            ("eta", self.eta.to_string()),
            ("gamma", self.gamma.to_string()),
            ("rollouts", self.rollouts.to_string()),
            ("baseline_centering", self.baseline_centering.to_string()),
            ("stopwords", path(&self.stopwords)),
            ("union_pretraining", self.union_pretraining.to_string()),
            ("pooling", pooling.to_string()),
            ("gen_lr", self.gen_lr.to_string()),
            ("gen_epochs", self.gen_epochs.to_string()),
            ("gen_batch", self.gen_batch.to_string()),
            ("style_lr", self.style_lr.to_string()),
            ("style_epochs", self.style_epochs.to_string()),
            ("style_batch", self.style_batch.to_string()),
            ("lm_lr", self.lm_lr.to_string()),
            ("lm_epochs", self.lm_epochs.to_string()),
            ("lm_batch", self.lm_batch.to_string()),
            ("rl_lr", self.rl_lr.to_string()),
            ("disc_lr", self.disc_lr.to_string()),
            ("rl_updates", self.rl_updates.to_string()),
            ("rl_batch", self.rl_batch.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("eval_samples", self.eval_samples.to_string()),
            ("synth_content_words", self.synth_content_words.to_string()),
            ("synth_train", self.synth_train.to_string()),
            ("synth_dev", self.synth_dev.to_string()),
            ("synth_test", self.synth_test.to_string()),
        ];
        entries.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text("# comment\nseed = 7\n\nbeta = 0.25 # trailing\nbaseline_centering = yes\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.beta, 0.25);
        assert!(cfg.baseline_centering);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        let mut cfg = ExperimentConfig::default();
        assert!(matches!(cfg.apply_text("colour = red"), Err(CliError::Config(_))));
        assert!(cfg.apply_text("seed").is_err());
        assert!(cfg.apply_text("seed = -3").is_err());
        let bad = ExperimentConfig { gamma: 1.0, ..ExperimentConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn text_round_trip() {
        let cfg = ExperimentConfig { seed: 9, stopwords: Some("s.txt".into()), pooling: Pooling::MinMeanMax, ..Default::default() };
        let mut back = ExperimentConfig::default();
        back.apply_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert!(ExperimentConfig::default().validate().is_ok());
    }
}
