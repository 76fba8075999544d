//! Vocabulary, tokenization, corpora and the synthetic marker-swap task.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{usage, Result};
use crate::sentence::{Sentence, Style, BOS, EOS, PAD, RESERVED, UNK};
use crate::Rng;

pub const RESERVED_TOKENS: [&str; RESERVED] = ["<pad>", "<unk>", "<s>", "</s>"];

/// Whitespace split after lowercasing. Nothing else is normalized.
pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(|w| w.to_lowercase()).collect()
}

pub fn detokenize<S: AsRef<str>>(words: &[S]) -> String {
    let mut out = String::new();
    for (i, w) in words.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(w.as_ref());
    }
    out
}

/// Surface form ↔ index bijection. Indices 0..4 are PAD, UNK, BOS, EOS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: BTreeMap<String, usize>,
    frequency: Vec<u64>,
}

impl Vocabulary {
    /// Keeps tokens seen at least `min_frequency` times, at most `max_size`
    /// of them, ordered by descending frequency then lexicographically.
    pub fn build<'a, I, S>(sentences: I, min_frequency: u64, max_size: usize) -> Self
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
        let mut owned: Vec<&'a [S]> = Vec::new();
        for s in sentences {
            owned.push(s);
        }
        for s in &owned {
            for w in s.iter() {
                *counts.entry(w.as_ref()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, u64)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= min_frequency && !RESERVED_TOKENS.contains(w))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_size);
        let entries = ranked.into_iter().map(|(w, c)| (w.to_string(), c));
        Self::from_entries(entries)
    }

    /// Builds from non-reserved `(word, frequency)` pairs in index order.
    pub fn from_entries(entries: impl IntoIterator<Item = (String, u64)>) -> Self {
        let mut words: Vec<String> = RESERVED_TOKENS.iter().map(|w| w.to_string()).collect();
        let mut frequency = alloc::vec![0; RESERVED];
        for (w, c) in entries {
            words.push(w);
            frequency.push(c);
        }
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self { words, index, frequency }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn word(&self, index: usize) -> Option<&str> {
        self.words.get(index).map(String::as_str)
    }

    pub fn index(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn frequency(&self, index: usize) -> u64 {
        self.frequency.get(index).copied().unwrap_or(0)
    }

    /// Non-reserved `(word, frequency)` pairs in index order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, u64)> {
        self.words[RESERVED..].iter().map(String::as_str).zip(self.frequency[RESERVED..].iter().copied())
    }

    /// Framed sentence; unknown words map to UNK.
    pub fn encode<S: AsRef<str>>(&self, words: &[S], style: Style) -> Sentence {
        let ids: Vec<usize> = words.iter().map(|w| self.index(w.as_ref()).unwrap_or(UNK)).collect();
        Sentence::framed(&ids, style)
    }

    /// Surface words with PAD, BOS and EOS dropped.
    pub fn decode(&self, tokens: &[usize]) -> Vec<String> {
        tokens
            .iter()
            .filter(|&&t| !matches!(t, PAD | BOS | EOS))
            .map(|&t| self.words.get(t).cloned().unwrap_or_else(|| RESERVED_TOKENS[UNK].to_string()))
            .collect()
    }

    pub fn decode_line(&self, sentence: &Sentence) -> String {
        detokenize(&self.decode(sentence.tokens()))
    }
}

/// Tokenized sentences of one style.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<Vec<String>>,
    pub dev: Vec<Vec<String>>,
    pub test: Vec<Vec<String>>,
}

impl Splits {
    pub fn all(&self) -> impl Iterator<Item = &Vec<String>> {
        self.train.iter().chain(&self.dev).chain(&self.test)
    }
}

/// Non-parallel two-style corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StyleCorpus {
    pub source: Splits,
    pub target: Splits,
    pub style_names: [String; 2],
    pub provenance: String,
}

impl StyleCorpus {
    pub fn split(&self, style: Style) -> &Splits {
        match style {
            Style::Source => &self.source,
            Style::Target => &self.target,
        }
    }

    /// Vocabulary over the training splits of both styles.
    pub fn build_vocab(&self, min_frequency: u64, max_size: usize) -> Vocabulary {
        Vocabulary::build(
            self.source.train.iter().chain(&self.target.train).map(|s| s.as_slice()),
            min_frequency,
            max_size,
        )
    }
}

pub fn encode_all(vocab: &Vocabulary, sentences: &[Vec<String>], style: Style) -> Vec<Sentence> {
    sentences.iter().map(|s| vocab.encode(s, style)).collect()
}

/// Parameters of the synthetic marker task.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub content_vocab_size: usize,
    pub markers_source: Vec<String>,
    pub markers_target: Vec<String>,
    pub train_per_style: usize,
    pub dev_per_style: usize,
    pub test_per_style: usize,
    /// Inclusive bounds on surface tokens per sentence, markers included.
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let markers = |p: &str| (0..5).map(|i| format!("{p}{i}")).collect();
        Self {
            content_vocab_size: 50,
            markers_source: markers("neg"),
            markers_target: markers("pos"),
            train_per_style: 2000,
            dev_per_style: 100,
            test_per_style: 200,
            min_len: 4,
            max_len: 9,
        }
    }
}

/// A generated corpus plus its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub corpus: StyleCorpus,
    /// Source-style test sentences paired with their marker-swapped transfer.
    pub oracle: Vec<(Vec<String>, Vec<String>)>,
    pub markers_source: Vec<String>,
    pub markers_target: Vec<String>,
}

pub fn content_word(i: usize) -> String {
    format!("w{i}")
}

impl SyntheticTask {
    /// Replaces each marker by its partner in the other set.
    pub fn transfer(&self, words: &[String]) -> Vec<String> {
        swap_markers(words, &self.markers_source, &self.markers_target)
    }

    pub fn is_source_marker(&self, w: &str) -> bool {
        self.markers_source.iter().any(|m| m == w)
    }

    pub fn is_target_marker(&self, w: &str) -> bool {
        self.markers_target.iter().any(|m| m == w)
    }

    /// Style by marker presence: target if any target marker appears and no
    /// source marker does.
    pub fn oracle_style(&self, words: &[String]) -> Style {
        let has_target = words.iter().any(|w| self.is_target_marker(w));
        let has_source = words.iter().any(|w| self.is_source_marker(w));
        if has_target && !has_source {
            Style::Target
        } else {
            Style::Source
        }
    }
}

fn swap_markers(words: &[String], from: &[String], to: &[String]) -> Vec<String> {
    words
        .iter()
        .map(|w| {
            if let Some(i) = from.iter().position(|m| m == w) {
                to[i].clone()
            } else if let Some(i) = to.iter().position(|m| m == w) {
                from[i].clone()
            } else {
                w.clone()
            }
        })
        .collect()
}

/// Generates a marker-swap style corpus.
///
/// Every sentence is `min_len..=max_len` surface tokens: uniformly drawn
/// content words `w0..` plus one marker (two, a quarter of the time, when the
/// sentence has at least five tokens) from its style's set, placed at random
/// positions. Marker `i` of one style corresponds to marker `i` of the other.
pub fn make_synthetic_task(rng: &mut Rng, spec: &SyntheticSpec) -> Result<SyntheticTask> {
    let (a, b) = (&spec.markers_source, &spec.markers_target);
    if a.is_empty() || a.len() != b.len() {
        return Err(usage!("marker sets must be non-empty and the same size"));
    }
    let set_a: BTreeSet<&String> = a.iter().collect();
    let set_b: BTreeSet<&String> = b.iter().collect();
    if set_a.len() != a.len() || set_b.len() != b.len() || !set_a.is_disjoint(&set_b) {
        return Err(usage!("marker sets must be disjoint and free of duplicates"));
    }
    let content: Vec<String> = (0..spec.content_vocab_size).map(content_word).collect();
    if a.iter().chain(b).any(|m| content.contains(m) || RESERVED_TOKENS.contains(&m.as_str())) {
        return Err(usage!("markers overlap the content vocabulary"));
    }
    if spec.content_vocab_size == 0 || spec.min_len < 2 || spec.min_len > spec.max_len {
        return Err(usage!("invalid content vocabulary size or length range"));
    }

    let mut seen: BTreeSet<Vec<String>> = BTreeSet::new();
    let mut style_splits = |markers: &[String], rng: &mut Rng| -> Splits {
        let mut draw = |count: usize, rng: &mut Rng| -> Vec<Vec<String>> {
            let mut out = Vec::with_capacity(count);
            while out.len() < count {
                let len = rng.gen_range(spec.min_len..=spec.max_len);
                let n_markers = if len >= 5 && rng.gen_bool(0.25) { 2 } else { 1 };
                let mut positions: Vec<usize> = (0..len).collect();
                positions.shuffle(rng);
                positions.truncate(n_markers);
                let words: Vec<String> = (0..len)
                    .map(|i| {
                        if positions.contains(&i) {
                            markers[rng.gen_range(0..markers.len())].clone()
                        } else {
                            content[rng.gen_range(0..content.len())].clone()
                        }
                    })
                    .collect();
                if seen.insert(words.clone()) {
                    out.push(words);
                }
            }
            out
        };
        Splits {
            train: draw(spec.train_per_style, rng),
            dev: draw(spec.dev_per_style, rng),
            test: draw(spec.test_per_style, rng),
        }
    };
    let source = style_splits(a, rng);
    let target = style_splits(b, rng);
    let oracle = source.test.iter().map(|s| (s.clone(), swap_markers(s, a, b))).collect();
    Ok(SyntheticTask {
        corpus: StyleCorpus {
            source,
            target,
            style_names: [String::from("source"), String::from("target")],
            provenance: String::from("synthetic"),
        },
        oracle,
        markers_source: a.clone(),
        markers_target: b.clone(),
    })
}

/// Word vectors for the synthetic task.
///
/// Content words get independent uniform(−1, 1) vectors. Marker `i` of each
/// style is a shared pair vector plus a small style-specific offset, so the
/// two markers of a pair are near neighbours in the same way that antonymous
/// sentiment words are in distributional embeddings.
pub fn synthetic_embeddings(task: &SyntheticTask, dim: usize, rng: &mut Rng) -> Vec<(String, Vec<f64>)> {
    const STYLE_OFFSET: f64 = 0.35;
    let draw = |rng: &mut Rng| -> Vec<f64> { (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect() };
    let mut out = Vec::new();
    let content_count = task
        .corpus
        .source
        .all()
        .chain(task.corpus.target.all())
        .flatten()
        .filter_map(|w| w.strip_prefix('w').and_then(|n| n.parse::<usize>().ok()))
        .max()
        .map_or(0, |m| m + 1);
    for i in 0..content_count {
        out.push((content_word(i), draw(rng)));
    }
    let offset_a = draw(rng);
    let offset_b = draw(rng);
    for (ma, mb) in task.markers_source.iter().zip(&task.markers_target) {
        let pair = draw(rng);
        let shifted = |off: &[f64]| -> Vec<f64> { pair.iter().zip(off).map(|(p, o)| p + STYLE_OFFSET * o).collect() };
        out.push((ma.clone(), shifted(&offset_a)));
        out.push((mb.clone(), shifted(&offset_b)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;
    use alloc::vec;

    fn words(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn tokenization_lowercases_and_splits() {
        let w = tokenize("I was very impressed with this location .");
        assert_eq!(w.len(), 8);
        assert_eq!(w[0], "i");
        let line = "the food was defenetely good !";
        assert_eq!(detokenize(&tokenize(line)), line);
    }

    #[test]
    fn vocabulary_order_and_limits() {
        let corpus = [words("b a c"), words("a b"), words("a d")];
        let v = Vocabulary::build(corpus.iter().map(|s| s.as_slice()), 1, usize::MAX);
        assert_eq!(v.word(0), Some("<pad>"));
        assert_eq!(v.word(3), Some("</s>"));
        let order: Vec<&str> = v.entries().map(|(w, _)| w).collect();
        assert_eq!(order, ["a", "b", "c", "d"]);
        assert_eq!(v.frequency(v.index("a").unwrap()), 3);

        let v2 = Vocabulary::build(corpus.iter().map(|s| s.as_slice()), 2, usize::MAX);
        assert_eq!(v2.len(), RESERVED + 2);
        let s = v2.encode(&words("a c"), Style::Source);
        assert_eq!(s.tokens(), &[BOS, v2.index("a").unwrap(), UNK, EOS]);
        assert_eq!(v2.decode_line(&s), "a <unk>");
    }

    #[test]
    fn vocabulary_max_size() {
        let line: Vec<String> = (0..30).map(|i| format!("t{i}")).collect();
        let v = Vocabulary::build([line.as_slice()], 1, 10);
        assert_eq!(v.len(), 10 + RESERVED);
    }

    #[test]
    fn synthetic_task_shape() {
        let spec = SyntheticSpec { train_per_style: 1000, dev_per_style: 10, test_per_style: 20, ..Default::default() };
        let task = make_synthetic_task(&mut seeded_rng(5), &spec).unwrap();
        let all = task.corpus.source.all().chain(task.corpus.target.all());
        for s in all {
            assert!((4..=9).contains(&s.len()));
        }
        assert_eq!(task.corpus.source.train.len(), 1000);
        for s in task.corpus.source.all() {
            assert_eq!(task.oracle_style(s), Style::Source);
        }
        for s in task.corpus.target.all() {
            assert_eq!(task.oracle_style(s), Style::Target);
        }
        for (src, gt) in &task.oracle {
            assert_eq!(task.oracle_style(gt), Style::Target);
            let diffs: Vec<_> = src.iter().zip(gt).filter(|(x, y)| x != y).collect();
            assert!(diffs.iter().all(|(x, _)| task.is_source_marker(x)));
            assert_eq!(diffs.len(), src.iter().filter(|w| task.is_source_marker(w)).count());
        }
    }

    #[test]
    fn synthetic_marker_swap_example() {
        let spec = SyntheticSpec {
            markers_source: vec!["aa".into()],
            markers_target: vec!["bb".into()],
            train_per_style: 3,
            dev_per_style: 0,
            test_per_style: 0,
            ..Default::default()
        };
        let task = make_synthetic_task(&mut seeded_rng(0), &spec).unwrap();
        assert_eq!(task.transfer(&words("w3 aa w7")), words("w3 bb w7"));
    }

    #[test]
    fn overlapping_markers_rejected() {
        let spec = SyntheticSpec {
            markers_source: vec!["aa".into()],
            markers_target: vec!["aa".into()],
            ..Default::default()
        };
        assert!(make_synthetic_task(&mut seeded_rng(0), &spec).is_err());
        let spec = SyntheticSpec { markers_source: vec!["w1".into()], markers_target: vec!["bb".into()], ..Default::default() };
        assert!(make_synthetic_task(&mut seeded_rng(0), &spec).is_err());
    }

    #[test]
    fn synthetic_splits_disjoint_and_deterministic() {
        let spec = SyntheticSpec { train_per_style: 300, dev_per_style: 30, test_per_style: 30, ..Default::default() };
        let a = make_synthetic_task(&mut seeded_rng(9), &spec).unwrap();
        let b = make_synthetic_task(&mut seeded_rng(9), &spec).unwrap();
        assert_eq!(a, b);
        let train: BTreeSet<_> = a.corpus.source.train.iter().collect();
        assert!(a.corpus.source.test.iter().all(|s| !train.contains(s)));
    }
}
