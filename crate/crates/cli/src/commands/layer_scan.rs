//! `layer-scan`: train a probe per encoder layer and compare dev scores.

use std::path::PathBuf;

use clap::Args;
use depprobe::probe::DEFAULT_STRUCTURAL_DIM;
use depprobe::train::layer_scan;
use serde::Serialize;

use super::OptimFlags;
use crate::error::CliError;
use crate::inputs;
use crate::manifest::{RunDir, RunManifest};

#[derive(Args, Clone, Debug, Serialize)]
pub struct LayerScanArgs {
    #[arg(long)]
    pub train_conllu: PathBuf,
    #[arg(long)]
    pub dev_conllu: PathBuf,
    /// Training embedding files, with `{layer}` standing for the layer index.
    #[arg(long)]
    pub train_emb: String,
    #[arg(long)]
    pub dev_emb: String,
    /// Layers to scan: comma-separated indices and inclusive ranges such as `0-12`.
    #[arg(long, default_value = "0-12")]
    pub layers: String,
    #[arg(long, default_value_t = DEFAULT_STRUCTURAL_DIM)]
    pub dim_b: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[command(flatten)]
    pub optim: OptimFlags,
    #[arg(long)]
    pub out: PathBuf,
}

pub const SCAN_TSV: &str = "reports/layer-scan.tsv";
pub const SCAN_JSON: &str = "reports/layer-scan.json";

/// Parse a layer list such as `0-3,6,8-9` into ascending distinct indices.
pub fn parse_layers(list: &str) -> Result<Vec<u32>, CliError> {
    let bad = || CliError::argument(format!("invalid layer list `{}`", list));
    let mut layers = Vec::new();
    for part in list.split(',').map(str::trim) {
        match part.split_once('-') {
            Some((a, b)) => {
                let a: u32 = a.trim().parse().map_err(|_| bad())?;
                let b: u32 = b.trim().parse().map_err(|_| bad())?;
                if a > b {
                    return Err(bad());
                }
                layers.extend(a..=b);
            }
            None => layers.push(part.parse().map_err(|_| bad())?),
        }
    }
    layers.sort_unstable();
    layers.dedup();
    Ok(layers)
}

pub fn run(args: &LayerScanArgs) -> Result<RunManifest, CliError> {
    let layers = parse_layers(&args.layers)?;
    let mut run = RunDir::create(&args.out, "layer-scan")?;
    let train_corpus = inputs::gold(&mut run, &args.train_conllu)?;
    let dev_corpus = inputs::gold(&mut run, &args.dev_conllu)?;
    let mut train_files = Vec::with_capacity(layers.len());
    let mut dev_files = Vec::with_capacity(layers.len());
    for &layer in &layers {
        train_files.push(inputs::embedding_file(&mut run, &args.train_emb, layer)?);
        dev_files.push(inputs::embedding_file(&mut run, &args.dev_emb, layer)?);
    }

    let config = args.optim.config(args.seed);
    let scan = layer_scan(&train_corpus, &dev_corpus, &train_files, &dev_files, args.dim_b, &config)?;

    let mut tsv = String::from("layer\tuuas\trel_acc\tstopping_epoch\n");
    for r in &scan.layers {
        tsv += &format!("{}\t{}\t{}\t{}\n", r.layer, r.uuas, r.rel_acc, r.stopping_epoch);
    }
    run.write(SCAN_TSV, tsv.as_bytes())?;
    run.write_json(SCAN_JSON, &scan)?;
    run.finish(args, vec![args.seed])
}
