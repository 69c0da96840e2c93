//! `parse`: decode trees with a trained probe.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use depprobe::decode::DepthGate;
use depprobe::{build_examples, predict_all, Decoder, ProbeKind, RelationVocab};
use serde::Serialize;

use crate::error::CliError;
use crate::inputs::{self, LayerSet};
use crate::manifest::{RunDir, RunManifest};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderArg {
    /// Greedy rooted expansion with relation labels.
    Depprobe,
    /// Undirected minimum spanning tree.
    Mst,
    /// Depth-gated maximum spanning arborescence.
    Dirprobe,
}

impl From<DecoderArg> for Decoder {
    fn from(d: DecoderArg) -> Self {
        match d {
            DecoderArg::Depprobe => Decoder::DepProbe,
            DecoderArg::Mst => Decoder::Mst,
            DecoderArg::Dirprobe => Decoder::DirProbe,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateArg {
    /// A head may not be deeper than its child.
    HeadDeeperForbidden,
    /// A head may not be shallower than its child.
    HeadShallowerForbidden,
}

impl From<GateArg> for DepthGate {
    fn from(g: GateArg) -> Self {
        match g {
            GateArg::HeadDeeperForbidden => DepthGate::HeadDeeperForbidden,
            GateArg::HeadShallowerForbidden => DepthGate::HeadShallowerForbidden,
        }
    }
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct ParseArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Sentences to parse. Only the word forms and sentence ids are used, but
    /// the file must be well-formed CoNLL-U with a tree per sentence.
    #[arg(long)]
    pub conllu: PathBuf,
    /// Embedding files, with `{layer}` standing for the layer index.
    #[arg(long)]
    pub emb: String,
    /// Defaults to the decoder matching the probe kind.
    #[arg(long, value_enum)]
    pub decoder: Option<DecoderArg>,
    #[arg(long, value_enum, default_value_t = GateArg::HeadDeeperForbidden)]
    pub gate: GateArg,
    #[arg(long)]
    pub out: PathBuf,
}

pub const PREDICTIONS_FILE: &str = "predictions/predictions.conllu";
pub const PARSE_REPORT: &str = "reports/parse.json";

/// Words whose depth gate was lifted, per sentence.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Relaxation {
    pub sentence_id: String,
    pub words: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParseReport {
    pub decoder: Decoder,
    pub gate: Option<DepthGate>,
    pub sentences: usize,
    pub tokens: usize,
    pub relaxed_words: usize,
    pub relaxations: Vec<Relaxation>,
}

pub fn run(args: &ParseArgs) -> Result<RunManifest, CliError> {
    let mut run = RunDir::create(&args.out, "parse")?;
    let model = inputs::checkpoint(&mut run, &args.checkpoint)?;
    let decoder: Decoder = match args.decoder {
        Some(d) => d.into(),
        None => match model.kind() {
            ProbeKind::DepProbe => Decoder::DepProbe,
            ProbeKind::DirProbe => Decoder::DirProbe,
        },
    };
    decoder.check(&model)?;
    let corpus = inputs::gold(&mut run, &args.conllu)?;
    let set = LayerSet::for_model(&mut run, &args.emb, &model)?;
    let examples = build_examples(&corpus, set.files_for(&model)?)?;
    drop(set);

    let gate: DepthGate = args.gate.into();
    let predictions = predict_all(&model, &examples, decoder, gate)?;

    let vocab = RelationVocab::ud();
    let mut conllu = Vec::new();
    let mut relaxations = Vec::new();
    for (sentence, prediction) in corpus.iter().zip(&predictions) {
        prediction
            .tree
            .write_conllu(&sentence.sentence_id, &sentence.words, &vocab, &mut conllu)?;
        if !prediction.relaxed_words.is_empty() {
            relaxations.push(Relaxation {
                sentence_id: sentence.sentence_id.clone(),
                words: prediction.relaxed_words.clone(),
            });
        }
    }
    run.write(PREDICTIONS_FILE, &conllu)?;
    let report = ParseReport {
        decoder,
        gate: (decoder == Decoder::DirProbe).then_some(gate),
        sentences: corpus.len(),
        tokens: corpus.iter().map(|s| s.len()).sum(),
        relaxed_words: relaxations.iter().map(|r| r.words.len()).sum(),
        relaxations,
    };
    run.write_json(PARSE_REPORT, &report)?;
    run.finish(args, Vec::new())
}
