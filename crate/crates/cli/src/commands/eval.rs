//! `eval`: score predicted trees against gold trees.

use std::path::PathBuf;

use clap::Args;
use depprobe::eval::{edge_length_stats, score, EdgeLengthStats, EvalReport};
use depprobe::RelationVocab;
use serde::Serialize;

use crate::error::CliError;
use crate::inputs;
use crate::manifest::{RunDir, RunManifest};

#[derive(Args, Clone, Debug, Serialize)]
pub struct EvalArgs {
    /// Predicted trees in CoNLL-U.
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

pub const EVAL_JSON: &str = "reports/eval.json";
pub const EVAL_TSV: &str = "reports/eval.tsv";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalOutput {
    #[serde(flatten)]
    pub scores: EvalReport,
    pub gold_edge_lengths: Option<EdgeLengthStats>,
}

pub fn run(args: &EvalArgs) -> Result<RunManifest, CliError> {
    let mut run = RunDir::create(&args.out, "eval")?;
    let pred = inputs::predictions(&mut run, &args.pred)?;
    let gold = inputs::gold(&mut run, &args.gold)?;
    let scores = score(&pred, &gold, &RelationVocab::ud())?;
    run.write(EVAL_TSV, scores.to_tsv().as_bytes())?;
    let output = EvalOutput {
        scores,
        gold_edge_lengths: edge_length_stats(&gold),
    };
    run.write_json(EVAL_JSON, &output)?;
    run.finish(args, Vec::new())
}
