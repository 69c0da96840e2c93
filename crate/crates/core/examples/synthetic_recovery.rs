//! Train a DepProbe on a synthetic corpus and report held-out scores.
//!
//! Run with `cargo run --release --example synthetic_recovery`.

use depprobe::synthetic::{embedding_file, SyntheticConfig, SyntheticCorpus};
use depprobe::{
    build_examples, eval, fit, predict_all, Decoder, DepthGate, LayerFiles, ProbeModel, RelationVocab,
    TrainConfig,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let vocab = RelationVocab::ud();
    let config = SyntheticConfig::default();
    let corpus = SyntheticCorpus::generate(&config, &vocab);

    let split = |range: std::ops::Range<usize>| -> Result<_, Box<dyn std::error::Error>> {
        let (sentences, embeddings) = corpus.slice(range);
        let file = embedding_file(6, &embeddings)?;
        let examples = build_examples(&sentences, LayerFiles::single(&file))?;
        Ok((sentences, examples))
    };
    let (_, train) = split(0..400)?;
    let (_, dev) = split(400..450)?;
    let (test_gold, test) = split(450..500)?;

    let model = ProbeModel::depprobe(config.embedding_dim(&vocab), 128, vocab.clone(), 6, 6, 42);
    let (model, report) = fit(model, &train, &dev, &TrainConfig::default())?;
    println!(
        "trained {} epochs, best epoch {}, dev loss {:.4}",
        report.epochs.len(),
        report.best_epoch,
        report.best_dev_loss
    );

    let trees: Vec<_> = predict_all(&model, &test, Decoder::DepProbe, DepthGate::default())?
        .into_iter()
        .map(|p| p.tree)
        .collect();
    let scores = eval::score(&trees, &test_gold, &vocab)?;
    println!(
        "UUAS {:.4}  UAS {:.4}  LAS {:.4}  RelAcc {:.4}",
        scores.uuas,
        scores.uas.unwrap_or(f64::NAN),
        scores.las.unwrap_or(f64::NAN),
        scores.rel_acc.unwrap_or(f64::NAN)
    );
    Ok(())
}
