//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! The desk-scale criteria drive the `rlst` binary through the documented
//! command sequence with `configs/synthetic.conf`, so this target takes
//! several minutes.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use common::criteria::{self, Check};

const SEEDS: [u64; 3] = [1, 2, 3];
const THRESHOLD: f64 = 0.90;
const SPREAD: f64 = 0.03;
const BUDGET: Duration = Duration::from_secs(15 * 60);
const DETERMINISM_UPDATES: usize = 200;
const SEQUENCE: [&str; 6] = ["synth-data", "pretrain-gen", "pretrain-style", "pretrain-lm", "train-rl", "evaluate"];

fn config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic.conf")
}

fn rlst(out: &Path, seed: u64, extra: &[&str], command: &str) -> Result<(), String> {
    let output = Command::new(env!("CARGO_BIN_EXE_rlst"))
        .arg("--config")
        .arg(config())
        .arg("--out")
        .arg(out)
        .args(["--seed", &seed.to_string()])
        .args(extra)
        .arg(command)
        .env("RLST_LOG_LEVEL", "warn")
        .output()
        .map_err(|e| format!("cannot run rlst: {e}"))?;
    if output.status.success() {
        Ok(())
    } else {
        Err(format!("rlst {command} failed: {}", String::from_utf8_lossy(&output.stderr).trim()))
    }
}

fn pipeline(out: &Path, seed: u64, extra: &[&str], commands: &[&str]) -> Result<Duration, String> {
    let _ = fs::remove_dir_all(out);
    let start = Instant::now();
    for command in commands {
        rlst(out, seed, extra, command)?;
    }
    Ok(start.elapsed())
}

struct Outcome {
    content: f64,
    style: f64,
    samples: usize,
    elapsed: Duration,
}

fn desk_run(root: &Path, seed: u64) -> Result<Outcome, String> {
    let out = root.join(format!("seed{seed}"));
    let elapsed = pipeline(&out, seed, &[], &SEQUENCE)?;
    let tsv = fs::read_to_string(out.join("evaluation.tsv")).map_err(|e| e.to_string())?;
    let (header, row) = tsv.split_once('\n').ok_or("evaluation.tsv has no row")?;
    let field = |name: &str| -> Result<f64, String> {
        let at = header.split('\t').position(|h| h == name).ok_or(format!("no {name} column"))?;
        row.trim_end().split('\t').nth(at).and_then(|v| v.parse().ok()).ok_or(format!("bad {name} value"))
    };
    Ok(Outcome { content: field("content")?, style: field("style")?, samples: field("samples")? as usize, elapsed })
}

fn desk_scale_transfer(root: &Path) -> Check {
    let mut runs = Vec::new();
    for seed in SEEDS {
        let o = desk_run(root, seed)?;
        println!(
            "      seed {seed}: content {:.4}, style {:.4} on {} sentences, {:.0}s",
            o.content,
            o.style,
            o.samples,
            o.elapsed.as_secs_f64()
        );
        runs.push(o);
    }
    let mut problems = Vec::new();
    for (seed, o) in SEEDS.iter().zip(&runs) {
        if o.samples != 200 {
            problems.push(format!("seed {seed} evaluated {} sentences", o.samples));
        }
        if o.content < THRESHOLD || o.style < THRESHOLD {
            problems.push(format!("seed {seed} below {THRESHOLD}"));
        }
        if o.elapsed > BUDGET {
            problems.push(format!("seed {seed} took {:.0}s", o.elapsed.as_secs_f64()));
        }
    }
    let n = runs.len() as f64;
    let mean_content = runs.iter().map(|o| o.content).sum::<f64>() / n;
    let mean_style = runs.iter().map(|o| o.style).sum::<f64>() / n;
    let deviation = runs
        .iter()
        .map(|o| (o.content - mean_content).abs().max((o.style - mean_style).abs()))
        .fold(0.0, f64::max);
    if deviation > SPREAD {
        problems.push(format!("seeds deviate from their mean by {deviation:.4}"));
    }
    let summary = format!(
        "mean content {mean_content:.4}, mean style {mean_style:.4}, max deviation {deviation:.4}, slowest run {:.0}s",
        runs.iter().map(|o| o.elapsed.as_secs_f64()).fold(0.0, f64::max)
    );
    if problems.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{summary}; {}", problems.join("; ")))
    }
}

fn determinism(root: &Path) -> Check {
    let updates = format!("rl_updates={DETERMINISM_UPDATES}");
    let extra = ["--set", updates.as_str()];
    let (a, b) = (root.join("det_a"), root.join("det_b"));
    pipeline(&a, 5, &extra, &SEQUENCE[..5])?;
    pipeline(&b, 5, &extra, &SEQUENCE[..5])?;
    let logs = ["pretrain_gen", "pretrain_style", "pretrain_eval_style", "pretrain_lm", "pretrain_eval_lm", "rl", "rl_eval"];
    let mut rl_rows = 0;
    for log in logs {
        let path = |dir: &Path| dir.join("logs").join(format!("{log}.tsv"));
        let (x, y) = (fs::read(path(&a)).map_err(|e| e.to_string())?, fs::read(path(&b)).map_err(|e| e.to_string())?);
        if x != y {
            return Err(format!("logs/{log}.tsv differs between identical runs"));
        }
        if log == "rl" {
            rl_rows = x.iter().filter(|&&c| c == b'\n').count() - 1;
        }
    }
    if rl_rows != DETERMINISM_UPDATES {
        return Err(format!("rl.tsv holds {rl_rows} updates"));
    }
    Ok(format!("{} logs byte-identical across two runs of {DETERMINISM_UPDATES} updates", logs.len()))
}

fn timed(limit: Duration, check: impl FnOnce() -> Check) -> Check {
    let start = Instant::now();
    let summary = check()?;
    let elapsed = start.elapsed();
    if elapsed > limit {
        return Err(format!("{summary}; took {:.1}s", elapsed.as_secs_f64()));
    }
    Ok(format!("{summary}; {:.1}s", elapsed.as_secs_f64()))
}

fn main() {
    let root = std::env::temp_dir().join(format!("rlst-acceptance-{}", std::process::id()));
    let criteria: [(&str, Box<dyn FnOnce() -> Check + '_>); 9] = [
        ("gradient fidelity", Box::new(|| timed(Duration::from_secs(120), criteria::gradient_fidelity))),
        ("transport exactness", Box::new(criteria::transport_exactness)),
        ("reward algebra", Box::new(criteria::reward_algebra)),
        ("REINFORCE correctness", Box::new(|| timed(Duration::from_secs(300), criteria::reinforce_correctness))),
        ("adversarial loss arithmetic", Box::new(criteria::adversarial_arithmetic)),
        ("perplexity identities", Box::new(criteria::perplexity_identities)),
        ("overall score audit", Box::new(criteria::overall_audit)),
        ("desk-scale transfer", Box::new(|| desk_scale_transfer(&root))),
        ("determinism", Box::new(|| determinism(&root))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        match check() {
            Ok(summary) => println!("PASS {} {name}: {summary}", i + 1),
            Err(reason) => {
                failed += 1;
                println!("FAIL {} {name}: {reason}", i + 1);
            }
        }
    }
    let _ = fs::remove_dir_all(&root);
    println!("{} of 9 criteria passed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
