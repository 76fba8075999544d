//! Corpus, word-vector and log files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rlst_core::corpus::{tokenize, Splits, StyleCorpus};

use crate::error::{CliError, Result};

pub const SPLITS: [&str; 3] = ["train", "dev", "test"];
pub const STYLES: [&str; 2] = ["source", "target"];

/// Writes through a temporary sibling and renames, so readers never see a
/// half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// One tokenized sentence per non-blank line.
pub fn read_sentences(path: &Path) -> Result<Vec<Vec<String>>> {
    Ok(read_text(path)?.lines().map(tokenize).filter(|t| !t.is_empty()).collect())
}

pub fn write_sentences(path: &Path, sentences: &[Vec<String>]) -> Result<()> {
    let mut text = String::new();
    for s in sentences {
        text.push_str(&s.join(" "));
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

pub fn corpus_file(dir: &Path, style: &str, split: &str) -> PathBuf {
    dir.join(format!("{style}.{split}.txt"))
}

/// Reads `{source,target}.{train,dev,test}.txt` from `dir`.
pub fn read_corpus(dir: &Path) -> Result<StyleCorpus> {
    let read = |style: &str| -> Result<Splits> {
        let f = |split| {
            let path = corpus_file(dir, style, split);
            if !path.exists() {
                return Err(CliError::MissingPrerequisite { artifact: path, command: "synth-data" });
            }
            read_sentences(&path)
        };
        Ok(Splits { train: f("train")?, dev: f("dev")?, test: f("test")? })
    };
    Ok(StyleCorpus {
        source: read("source")?,
        target: read("target")?,
        style_names: [String::from("source"), String::from("target")],
        provenance: dir.display().to_string(),
    })
}

pub fn write_corpus(dir: &Path, corpus: &StyleCorpus) -> Result<()> {
    for (style, splits) in STYLES.iter().zip([&corpus.source, &corpus.target]) {
        for (split, data) in SPLITS.iter().zip([&splits.train, &splits.dev, &splits.test]) {
            write_sentences(&corpus_file(dir, style, split), data)?;
        }
    }
    Ok(())
}

/// Text word vectors: a word followed by its components on each line.
pub fn read_embeddings(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    if !path.exists() {
        return Err(CliError::MissingPrerequisite { artifact: path.to_path_buf(), command: "synth-data" });
    }
    let mut out = Vec::new();
    for (n, line) in read_text(path)?.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let values = parts
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| CliError::format(path, format!("line {}: {e}", n + 1)))?;
        if values.is_empty() {
            return Err(CliError::format(path, format!("line {}: no vector components", n + 1)));
        }
        out.push((word.to_string(), values));
    }
    Ok(out)
}

pub fn write_embeddings(path: &Path, vectors: &[(String, Vec<f64>)]) -> Result<()> {
    let mut text = String::new();
    for (w, v) in vectors {
        text.push_str(w);
        for x in v {
            text.push_str(&format!(" {x}"));
        }
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

/// Tab-separated log with a header row, flushed after every record.
pub struct TsvLog {
    file: fs::File,
    path: PathBuf,
}

impl TsvLog {
    pub fn create(path: &Path, header: &str) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
        let mut log = Self { file, path: path.to_path_buf() };
        log.row(header)?;
        Ok(log)
    }

    /// Opens an existing log for appending, keeping only the header and the
    /// rows whose first column is below `keep_before`.
    pub fn resume(path: &Path, keep_before: usize) -> Result<Self> {
        let text = read_text(path)?;
        let mut kept = String::new();
        for (i, line) in text.lines().enumerate() {
            let step = line.split('\t').next().and_then(|s| s.parse::<usize>().ok());
            if i == 0 || step.is_some_and(|s| s < keep_before) {
                kept.push_str(line);
                kept.push('\n');
            }
        }
        fs::write(path, &kept).map_err(|e| CliError::io(path, e))?;
        let file = fs::OpenOptions::new().append(true).open(path).map_err(|e| CliError::io(path, e))?;
        Ok(Self { file, path: path.to_path_buf() })
    }

    pub fn row(&mut self, line: &str) -> Result<()> {
        writeln!(self.file, "{line}").and_then(|_| self.file.flush()).map_err(|e| CliError::io(&self.path, e))
    }
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(".rlst.lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Locked(path)),
            Err(e) => Err(CliError::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
