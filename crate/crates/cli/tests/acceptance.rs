//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use depprobe::analysis::ScoreMatrix;
use depprobe::probe::{depprobe_parameter_count, dirprobe_parameter_count};
use depprobe::synthetic::{embedding_file, SyntheticConfig, SyntheticCorpus};
use depprobe::{write_embeddings, GoldSentence, ProbeModel, RelationVocab};
use depprobe_cli::commands::{eval, parse, train, transfer};
use depprobe_cli::commands::OptimFlags;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::Value;
use support::CheckResult;
use tempfile::TempDir;

struct Criterion {
    name: &'static str,
    budget: Duration,
    check: fn() -> CheckResult,
}

fn main() {
    let criteria = [
        Criterion {
            name: "parameter accounting",
            budget: Duration::from_secs(1),
            check: parameter_accounting,
        },
        Criterion {
            name: "gradient suite",
            budget: Duration::from_secs(5),
            check: || support::check_gradients(10),
        },
        Criterion {
            name: "decoder oracles",
            budget: Duration::from_secs(60),
            check: decoder_oracles,
        },
        Criterion {
            name: "synthetic recoverability",
            budget: Duration::from_secs(300),
            check: synthetic_recoverability,
        },
        Criterion {
            name: "metric oracle",
            budget: Duration::from_secs(10),
            check: || support::check_metric_oracle(200),
        },
        Criterion {
            name: "weighted tau oracle",
            budget: Duration::from_secs(5),
            check: || support::check_tau_oracle(500),
        },
        Criterion {
            name: "subspace angle properties",
            budget: Duration::from_secs(5),
            check: || support::check_ssa_properties(20),
        },
        Criterion {
            name: "transfer pipeline smoke",
            budget: Duration::from_secs(5),
            check: transfer_smoke,
        },
        Criterion {
            name: "training determinism",
            budget: Duration::from_secs(600),
            check: determinism,
        },
    ];

    let mut failures = 0;
    for c in &criteria {
        let start = Instant::now();
        let result = (c.check)();
        let elapsed = start.elapsed();
        let result = match result {
            Ok(detail) if elapsed > c.budget => Err(format!("{}; over the {:?} budget", detail, c.budget)),
            other => other,
        };
        match result {
            Ok(detail) => println!("PASS {} [{:.2?}] {}", c.name, elapsed, detail),
            Err(detail) => {
                failures += 1;
                println!("FAIL {} [{:.2?}] {}", c.name, elapsed, detail);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}

fn ensure(ok: bool, message: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(message())
    }
}

fn parameter_accounting() -> CheckResult {
    let vocab = RelationVocab::ud();
    let dep = ProbeModel::depprobe(768, 128, vocab.clone(), 6, 7, 0).trainable_parameters();
    let dir = ProbeModel::dirprobe(768, 128, 128, 6, 6, 0).trainable_parameters();
    ensure(dep == 126_720 && depprobe_parameter_count(768, 128, vocab.len()) == dep, || {
        format!("structural + relational probe has {} parameters", dep)
    })?;
    ensure(dir == 196_608 && dirprobe_parameter_count(768, 128, 128) == dir, || {
        format!("structural + depth probe has {} parameters", dir)
    })?;
    let thousands = |n: usize| (n as f64 / 1000.0).round() as usize;
    ensure(thousands(dep) == 127 && thousands(dir) == 197, || "rounding to thousands".into())?;
    Ok(format!("{} and {}", dep, dir))
}

fn decoder_oracles() -> CheckResult {
    let mst = support::check_mst_oracle(200)?;
    let cle = support::check_arborescence_oracle(200)?;
    let greedy = support::check_depprobe_simulation(500)?;
    Ok(format!("{}; {}; {}", mst, cle, greedy))
}

fn arg(p: &Path) -> String {
    p.display().to_string()
}

fn read_json(path: &Path) -> Result<Value, String> {
    let bytes = fs::read(path).map_err(|e| format!("{}: {}", path.display(), e))?;
    serde_json::from_slice(&bytes).map_err(|e| e.to_string())
}

/// Synthetic treebank and embeddings on disk, split 400/50/50.
struct SyntheticRun {
    dir: TempDir,
}

impl SyntheticRun {
    fn create() -> Result<Self, String> {
        let dir = TempDir::new().map_err(|e| e.to_string())?;
        let vocab = RelationVocab::ud();
        let config = SyntheticConfig::default();
        let corpus = SyntheticCorpus::generate(&config, &vocab);
        for (name, range) in [("train", 0..400), ("dev", 400..450), ("test", 450..500)] {
            let (gold, embeddings) = corpus.slice(range);
            write_conllu(&dir.path().join(format!("{}.conllu", name)), &gold, &vocab)?;
            for layer in [6, 7] {
                let file = embedding_file(layer, &embeddings).map_err(|e| e.to_string())?;
                write_embeddings(dir.path().join(format!("{}.l{}.dpe", name, layer)), &file).map_err(|e| e.to_string())?;
            }
        }
        Ok(SyntheticRun { dir })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn pattern(&self, split: &str) -> String {
        arg(&self.path(&format!("{}.l{{layer}}.dpe", split)))
    }

    fn train(&self, out: &str) -> Result<PathBuf, String> {
        let out = self.path(out);
        let args = train::TrainArgs {
            train_conllu: self.path("train.conllu"),
            dev_conllu: Some(self.path("dev.conllu")),
            train_emb: self.pattern("train"),
            dev_emb: Some(self.pattern("dev")),
            probe: train::ProbeArg::Depprobe,
            dim_b: 128,
            dim_c: 128,
            layer_b: 6,
            layer_l: 7,
            layer_c: None,
            seeds: vec![42],
            optim: default_optim(),
            out: out.clone(),
        };
        train::run(&args).map_err(|e| e.to_string())?;
        Ok(out)
    }
}

fn default_optim() -> OptimFlags {
    let c = depprobe::TrainConfig::default();
    OptimFlags {
        learning_rate: c.learning_rate,
        max_epochs: c.max_epochs,
        batch_size: c.batch_size,
        patience: c.early_stop_patience,
        plateau_factor: c.plateau_factor,
        plateau_threshold: c.plateau_threshold,
        weight_decay: c.weight_decay,
    }
}

fn write_conllu(path: &Path, gold: &[GoldSentence], vocab: &RelationVocab) -> Result<(), String> {
    let mut bytes = Vec::new();
    for s in gold {
        s.write_conllu(vocab, &mut bytes).map_err(|e| e.to_string())?;
    }
    fs::write(path, bytes).map_err(|e| e.to_string())
}

fn synthetic_recoverability() -> CheckResult {
    let run = SyntheticRun::create()?;
    let trained = run.train("trained")?;
    let report = read_json(&trained.join(train::report_name(42)))?;
    let epochs = report["epochs"].as_array().map_or(0, Vec::len);
    ensure(epochs <= 30, || format!("{} epochs", epochs))?;

    let parsed = run.path("parsed");
    parse::run(&parse::ParseArgs {
        checkpoint: trained.join(train::checkpoint_name(42)),
        conllu: run.path("test.conllu"),
        emb: run.pattern("test"),
        decoder: Some(parse::DecoderArg::Depprobe),
        gate: parse::GateArg::HeadDeeperForbidden,
        out: parsed.clone(),
    })
    .map_err(|e| e.to_string())?;
    let scored = run.path("scored");
    eval::run(&eval::EvalArgs {
        pred: parsed.join(parse::PREDICTIONS_FILE),
        gold: run.path("test.conllu"),
        out: scored.clone(),
    })
    .map_err(|e| e.to_string())?;

    let scores = read_json(&scored.join(eval::EVAL_JSON))?;
    let get = |k: &str| scores[k].as_f64().unwrap_or(f64::NAN);
    let (uuas, rel_acc, las) = (get("uuas"), get("rel_acc"), get("las"));
    let detail = format!(
        "UUAS {:.4}, RelAcc {:.4}, LAS {:.4}, UAS {:.4} after {} epochs",
        uuas,
        rel_acc,
        las,
        get("uas"),
        epochs
    );
    ensure(uuas >= 0.99 && rel_acc >= 0.99 && las >= 0.95, || detail.clone())?;
    Ok(detail)
}

const LANGS: [&str; 5] = ["l1", "l2", "l3", "l4", "l5"];

fn write_scores(path: &Path, values: Array2<f64>) -> Result<(), String> {
    let langs: Vec<String> = LANGS.iter().map(|s| s.to_string()).collect();
    let m = ScoreMatrix::new("las", langs.clone(), langs, values).map_err(|e| e.to_string())?;
    fs::write(path, m.to_tsv()).map_err(|e| e.to_string())
}

fn run_transfer(dir: &Path, parser: &Path, probe: &Path, out: &str) -> Result<Value, String> {
    let out = dir.join(out);
    transfer::run(&transfer::TransferArgs {
        parser_scores: parser.to_path_buf(),
        probe_scores: vec![("probe".into(), probe.to_path_buf())],
        probes: vec![],
        lang2vec: None,
        exclude_diagonal: false,
        out: out.clone(),
    })
    .map_err(|e| e.to_string())?;
    let report = read_json(&out.join(transfer::TRANSFER_JSON))?;
    Ok(report["predictors"][0]["correlation"].clone())
}

fn transfer_smoke() -> CheckResult {
    let dir = TempDir::new().map_err(|e| e.to_string())?;
    let mut rng = support::rng(5);
    let parser_values = Array2::from_shape_simple_fn((5, 5), || rng.random_range(10.0..90.0));
    let parser = dir.path().join("parser.tsv");
    write_scores(&parser, parser_values.clone())?;

    let c = run_transfer(dir.path(), &parser, &parser, "identity")?;
    let rho = c["pearson"]["rho"].as_f64().unwrap_or(f64::NAN);
    ensure((rho - 1.0).abs() < 1e-12, || format!("identity rho {}", rho))?;
    ensure(c["tau_w"] == 1.0, || format!("identity tau_w {}", c["tau_w"]))?;
    ensure(c["best_source_hit_rate"] == 1.0, || format!("identity hit-rate {}", c["best_source_hit_rate"]))?;

    let mut shuffled_rhos = Vec::new();
    for attempt in 0..3 {
        let mut cells: Vec<f64> = parser_values.iter().copied().collect();
        cells.shuffle(&mut rng);
        let probe = dir.path().join(format!("shuffled{}.tsv", attempt));
        write_scores(&probe, Array2::from_shape_vec((5, 5), cells).map_err(|e| e.to_string())?)?;
        let c = run_transfer(dir.path(), &parser, &probe, &format!("shuffled{}", attempt))?;
        let rho = c["pearson"]["rho"].as_f64().unwrap_or(f64::NAN);
        shuffled_rhos.push(rho);
        if rho.abs() < 0.5 {
            return Ok(format!("identity rho 1, tau_w 1, hit-rate 1; shuffled rho {:?}", shuffled_rhos));
        }
    }
    Err(format!("shuffled |rho| >= 0.5 in all attempts: {:?}", shuffled_rhos))
}

fn determinism() -> CheckResult {
    let run = SyntheticRun::create()?;
    let a = run.train("first")?;
    let b = run.train("second")?;
    for name in [train::checkpoint_name(42), train::report_name(42)] {
        let (x, y) = (fs::read(a.join(&name)), fs::read(b.join(&name)));
        let (x, y) = (x.map_err(|e| e.to_string())?, y.map_err(|e| e.to_string())?);
        ensure(x == y, || format!("{} differs between runs", name))?;
    }
    Ok("checkpoint and report byte-identical".into())
}
