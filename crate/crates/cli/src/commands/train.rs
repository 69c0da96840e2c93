//! `train`: fit one probe per seed.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use depprobe::probe::{DEFAULT_DEPTH_DIM, DEFAULT_STRUCTURAL_DIM, DEFAULT_STRUCTURAL_LAYER, DEFAULT_RELATIONAL_LAYER};
use depprobe::train::TrainReport;
use depprobe::{build_examples, fit, Example, GoldSentence, ProbeKind, ProbeModel, RelationVocab};
use rayon::prelude::*;
use serde::Serialize;

use super::OptimFlags;
use crate::error::CliError;
use crate::inputs::{self, LayerSet};
use crate::manifest::{RunDir, RunManifest, CHECKPOINTS_DIR, REPORTS_DIR};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeArg {
    /// Structural and relational probe.
    Depprobe,
    /// Structural and depth probe.
    Dirprobe,
}

impl From<ProbeArg> for ProbeKind {
    fn from(p: ProbeArg) -> Self {
        match p {
            ProbeArg::Depprobe => ProbeKind::DepProbe,
            ProbeArg::Dirprobe => ProbeKind::DirProbe,
        }
    }
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub train_conllu: PathBuf,
    /// Development treebank; the training set is reused when absent.
    #[arg(long, requires = "dev_emb")]
    pub dev_conllu: Option<PathBuf>,
    /// Training embedding files, with `{layer}` standing for the layer index.
    #[arg(long)]
    pub train_emb: String,
    #[arg(long, requires = "dev_conllu")]
    pub dev_emb: Option<String>,
    #[arg(long, value_enum, default_value_t = ProbeArg::Depprobe)]
    pub probe: ProbeArg,
    #[arg(long, default_value_t = DEFAULT_STRUCTURAL_DIM)]
    pub dim_b: usize,
    #[arg(long, default_value_t = DEFAULT_DEPTH_DIM)]
    pub dim_c: usize,
    #[arg(long, default_value_t = DEFAULT_STRUCTURAL_LAYER)]
    pub layer_b: u32,
    #[arg(long, default_value_t = DEFAULT_RELATIONAL_LAYER)]
    pub layer_l: u32,
    /// Depth probe layer; defaults to the structural layer.
    #[arg(long)]
    pub layer_c: Option<u32>,
    /// Comma-separated seeds; one probe is trained per seed.
    #[arg(long, value_delimiter = ',', default_value = "42")]
    pub seeds: Vec<u64>,
    #[command(flatten)]
    pub optim: OptimFlags,
    #[arg(long)]
    pub out: PathBuf,
}

impl TrainArgs {
    fn initial_model(&self, embedding_dim: usize, seed: u64) -> ProbeModel {
        match self.probe {
            ProbeArg::Depprobe => {
                ProbeModel::depprobe(embedding_dim, self.dim_b, RelationVocab::ud(), self.layer_b, self.layer_l, seed)
            }
            ProbeArg::Dirprobe => ProbeModel::dirprobe(
                embedding_dim,
                self.dim_b,
                self.dim_c,
                self.layer_b,
                self.layer_c.unwrap_or(self.layer_b),
                seed,
            ),
        }
    }

    fn layers(&self) -> Vec<u32> {
        match self.probe {
            ProbeArg::Depprobe => vec![self.layer_b, self.layer_l],
            ProbeArg::Dirprobe => vec![self.layer_b, self.layer_c.unwrap_or(self.layer_b)],
        }
    }
}

/// Mean and population standard deviation over seeds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Spread {
    pub mean: f64,
    pub std_dev: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Spread {
            mean,
            std_dev: var.sqrt(),
        }
    }
}

/// Aggregate of a multi-seed run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeedSummary {
    pub seeds: Vec<u64>,
    pub dev_uuas: Spread,
    pub dev_rel_acc: Option<Spread>,
    pub best_dev_loss: Spread,
    pub stopping_epoch: Spread,
}

impl SeedSummary {
    pub fn of(reports: &[TrainReport]) -> Self {
        let collect = |f: fn(&TrainReport) -> f64| reports.iter().map(f).collect::<Vec<_>>();
        let rel: Option<Vec<f64>> = reports.iter().map(|r| r.dev_rel_acc).collect();
        SeedSummary {
            seeds: reports.iter().map(|r| r.seed).collect(),
            dev_uuas: Spread::of(&collect(|r| r.dev_uuas)),
            dev_rel_acc: rel.map(|v| Spread::of(&v)),
            best_dev_loss: Spread::of(&collect(|r| r.best_dev_loss)),
            stopping_epoch: Spread::of(&collect(|r| r.stopping_epoch as f64)),
        }
    }
}

pub fn checkpoint_name(seed: u64) -> String {
    format!("{}/probe-seed{}.json", CHECKPOINTS_DIR, seed)
}

pub fn report_name(seed: u64) -> String {
    format!("{}/train-seed{}.json", REPORTS_DIR, seed)
}

pub const SUMMARY_REPORT: &str = "reports/train-summary.json";

fn examples(
    run: &mut RunDir,
    corpus: &[GoldSentence],
    pattern: &str,
    layers: &[u32],
    model: &ProbeModel,
) -> Result<Vec<Example>, CliError> {
    let set = LayerSet::load(run, pattern, layers.iter().copied())?;
    Ok(build_examples(corpus, set.files_for(model)?)?)
}

pub fn run(args: &TrainArgs) -> Result<RunManifest, CliError> {
    if args.seeds.is_empty() {
        return Err(CliError::argument("at least one seed is required"));
    }
    let mut seeds = args.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();
    if seeds.len() != args.seeds.len() {
        return Err(CliError::argument("seeds must be distinct"));
    }

    let mut run = RunDir::create(&args.out, "train")?;
    let layers = args.layers();
    let train_corpus = inputs::gold(&mut run, &args.train_conllu)?;
    let train_set = LayerSet::load(&mut run, &args.train_emb, layers.iter().copied())?;
    let template = args.initial_model(train_set.dim()?, 0);
    let train = build_examples(&train_corpus, train_set.files_for(&template)?)?;
    drop(train_set);
    let dev = match (&args.dev_conllu, &args.dev_emb) {
        (Some(conllu), Some(pattern)) => {
            let corpus = inputs::gold(&mut run, conllu)?;
            examples(&mut run, &corpus, pattern, &layers, &template)?
        }
        _ => Vec::new(),
    };

    let results: Vec<(ProbeModel, TrainReport)> = args
        .seeds
        .par_iter()
        .map(|&seed| fit(args.initial_model(template.embedding_dim(), seed), &train, &dev, &args.optim.config(seed)))
        .collect::<Result<_, _>>()?;

    for (&seed, (model, report)) in args.seeds.iter().zip(&results) {
        let mut bytes = Vec::new();
        model.write_checkpoint(&mut bytes)?;
        bytes.push(b'\n');
        run.write(&checkpoint_name(seed), &bytes)?;
        run.write_json(&report_name(seed), report)?;
    }
    if results.len() > 1 {
        let reports: Vec<TrainReport> = results.into_iter().map(|(_, r)| r).collect();
        run.write_json(SUMMARY_REPORT, &SeedSummary::of(&reports))?;
    }
    run.finish(args, args.seeds.clone())
}
