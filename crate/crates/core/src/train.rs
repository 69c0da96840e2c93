//! Probe losses, their analytic gradients and the training loop.

use std::collections::HashSet;

use ndarray::{Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{build_examples, Example, LayerFiles};
use crate::decode::undirected_mst;
use crate::embstore::{EmbeddingError, EmbeddingFile};
use crate::probe::{projected_distances, softmax, ProbeModel};
use crate::treebank::{GoldSentence, RelationVocab};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{0}")]
    Argument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite loss in epoch {0}")]
    Numeric(usize),

    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

/// Relative weights of the loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub structural: f64,
    pub relational: f64,
    pub depth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            structural: 1.0,
            relational: 1.0,
            depth: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub plateau_factor: f64,
    /// Minimum dev loss improvement that does not count as a plateau.
    pub plateau_threshold: f64,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub loss_weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            plateau_factor: 0.1,
            plateau_threshold: 1e-4,
            early_stop_patience: 3,
            max_epochs: 30,
            batch_size: 64,
            weight_decay: 0.01,
            seed: 42,
            loss_weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return fail("learning rate must be positive");
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return fail("plateau factor must lie in (0, 1)");
        }
        if self.early_stop_patience < 1 {
            return fail("early stopping patience must be at least 1");
        }
        if self.batch_size < 1 {
            return fail("batch size must be at least 1");
        }
        let negative = |v: f64| v.is_nan() || v < 0.0;
        if negative(self.weight_decay) || negative(self.plateau_threshold) {
            return fail("weight decay and plateau threshold must be non-negative");
        }
        let w = self.loss_weights;
        if ![w.structural, w.relational, w.depth].iter().all(|v| v.is_finite() && *v >= 0.0) {
            return fail("loss weights must be finite and non-negative");
        }
        Ok(())
    }
}

fn check_aligned(sentence: &GoldSentence, embeddings: ArrayView2<f64>, map: ArrayView2<f64>) -> Result<(), TrainError> {
    if sentence.len() != embeddings.nrows() {
        return Err(TrainError::Argument(format!(
            "sentence {} has {} words, embeddings have {} rows",
            sentence.sentence_id,
            sentence.len(),
            embeddings.nrows()
        )));
    }
    if embeddings.ncols() != map.nrows() {
        return Err(TrainError::Argument(format!(
            "embeddings have dimensionality {}, probe expects {}",
            embeddings.ncols(),
            map.nrows()
        )));
    }
    Ok(())
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean absolute difference between tree and probe distances over all
/// ordered word pairs, with its gradient with respect to the structural map.
pub fn structural_loss_grad(
    structural: ArrayView2<f64>,
    sentence: &GoldSentence,
    embeddings: ArrayView2<f64>,
) -> Result<(f64, Array2<f64>), TrainError> {
    check_aligned(sentence, embeddings, structural)?;
    let n = sentence.len();
    let norm = (n * n) as f64;
    let projected = embeddings.dot(&structural);
    let dist = projected_distances(projected.view());

    // d(dist_ij)/dB = (h_i - h_j)(p_i - p_j)^T / dist_ij, so with a symmetric
    // coefficient matrix W the summed gradient is 2 H^T (diag(W 1) - W) P.
    let mut loss = 0.0;
    let mut laplacian = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let gold = f64::from(sentence.tree_dist[(i, j)]);
            let diff = dist[(i, j)] - gold;
            loss += diff.abs();
            if i != j {
                let w = sign(diff) / (norm * dist[(i, j)]);
                laplacian[(i, j)] -= w;
                laplacian[(i, i)] += w;
            }
        }
    }
    let grad = embeddings.t().dot(&laplacian.dot(&projected)) * 2.0;
    Ok((loss / norm, grad))
}

pub fn structural_loss(
    structural: ArrayView2<f64>,
    sentence: &GoldSentence,
    embeddings: ArrayView2<f64>,
) -> Result<f64, TrainError> {
    structural_loss_grad(structural, sentence, embeddings).map(|(l, _)| l)
}

/// Mean cross-entropy of the gold relations, with its gradient with respect
/// to the relational map. Gold labels outside the probe's label space (the
/// legacy `ref`) are excluded from the mean.
pub fn relational_loss_grad(
    relational: ArrayView2<f64>,
    sentence: &GoldSentence,
    embeddings: ArrayView2<f64>,
) -> Result<(f64, Array2<f64>), TrainError> {
    check_aligned(sentence, embeddings, relational)?;
    let labels = relational.ncols();
    let logits = embeddings.dot(&relational);

    let counted = sentence.rels.iter().filter(|&&r| r < labels).count();
    let mut residual = Array2::<f64>::zeros(logits.raw_dim());
    if counted == 0 {
        return Ok((0.0, Array2::zeros(relational.raw_dim())));
    }
    let norm = counted as f64;

    let mut loss = 0.0;
    for (i, &gold) in sentence.rels.iter().enumerate() {
        if gold >= labels {
            continue;
        }
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_total = row.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
        loss += log_total - row[gold];

        let mut r = residual.row_mut(i);
        r.assign(&softmax(row));
        r[gold] -= 1.0;
        r /= norm;
    }
    let grad = embeddings.t().dot(&residual);
    Ok((loss / norm, grad))
}

pub fn relational_loss(
    relational: ArrayView2<f64>,
    sentence: &GoldSentence,
    embeddings: ArrayView2<f64>,
) -> Result<f64, TrainError> {
    relational_loss_grad(relational, sentence, embeddings).map(|(l, _)| l)
}

/// Mean absolute difference between gold depth and squared depth-space norm,
/// with its gradient with respect to the depth map.
pub fn depth_loss_grad(
    depth: ArrayView2<f64>,
    sentence: &GoldSentence,
    embeddings: ArrayView2<f64>,
) -> Result<(f64, Array2<f64>), TrainError> {
    check_aligned(sentence, embeddings, depth)?;
    let n = sentence.len() as f64;
    let mut projected = embeddings.dot(&depth);
    let mut loss = 0.0;
    for (mut row, &gold) in projected.axis_iter_mut(Axis(0)).zip(&sentence.depth) {
        let score = row.dot(&row);
        let diff = score - f64::from(gold);
        loss += diff.abs();
        row *= 2.0 * sign(diff) / n;
    }
    let grad = embeddings.t().dot(&projected);
    Ok((loss / n, grad))
}

pub fn depth_loss(depth: ArrayView2<f64>, sentence: &GoldSentence, embeddings: ArrayView2<f64>) -> Result<f64, TrainError> {
    depth_loss_grad(depth, sentence, embeddings).map(|(l, _)| l)
}

/// Per-term losses, each a mean over sentences.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub structural: f64,
    pub relational: Option<f64>,
    pub depth: Option<f64>,
    /// Weighted sum of the terms.
    pub total: f64,
}

impl LossBreakdown {
    fn is_finite(&self) -> bool {
        self.total.is_finite()
            && self.structural.is_finite()
            && self.relational.is_none_or(f64::is_finite)
            && self.depth.is_none_or(f64::is_finite)
    }
}

/// Gradients shaped like the model's matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub structural: Array2<f64>,
    pub relational: Option<Array2<f64>>,
    pub depth: Option<Array2<f64>>,
    pub loss: LossBreakdown,
}

/// Analytic gradients of the batch mean of the weighted loss.
pub fn gradients(model: &ProbeModel, batch: &[&Example], weights: LossWeights) -> Result<Gradients, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::Argument("empty batch".into()));
    }
    let per_sentence: Vec<Gradients> = batch
        .iter()
        .map(|ex| sentence_gradients(model, ex, weights))
        .collect::<Result<_, _>>()?;

    // Reduce in batch order.
    let scale = 1.0 / batch.len() as f64;
    let mut iter = per_sentence.into_iter();
    let mut acc = iter.next().unwrap();
    for g in iter {
        acc.structural += &g.structural;
        add_opt(&mut acc.relational, g.relational);
        add_opt(&mut acc.depth, g.depth);
        acc.loss.structural += g.loss.structural;
        acc.loss.relational = acc.loss.relational.zip(g.loss.relational).map(|(a, b)| a + b);
        acc.loss.depth = acc.loss.depth.zip(g.loss.depth).map(|(a, b)| a + b);
        acc.loss.total += g.loss.total;
    }
    acc.structural *= scale;
    if let Some(r) = acc.relational.as_mut() {
        *r *= scale;
    }
    if let Some(d) = acc.depth.as_mut() {
        *d *= scale;
    }
    acc.loss.structural *= scale;
    acc.loss.relational = acc.loss.relational.map(|v| v * scale);
    acc.loss.depth = acc.loss.depth.map(|v| v * scale);
    acc.loss.total *= scale;
    Ok(acc)
}

fn add_opt(acc: &mut Option<Array2<f64>>, g: Option<Array2<f64>>) {
    if let (Some(a), Some(g)) = (acc.as_mut(), g) {
        *a += &g;
    }
}

fn embeddings_for<'a>(ex: &'a Example, which: &str, emb: Option<&'a Array2<f32>>) -> Result<Array2<f64>, TrainError> {
    emb.map(|m| m.mapv(f64::from)).ok_or_else(|| {
        TrainError::Argument(format!(
            "sentence {} has no embeddings for the {} probe",
            ex.sentence.sentence_id, which
        ))
    })
}

fn sentence_gradients(model: &ProbeModel, ex: &Example, weights: LossWeights) -> Result<Gradients, TrainError> {
    let h = ex.structural.mapv(f64::from);
    let (ls, gs) = structural_loss_grad(model.structural.view(), &ex.sentence, h.view())?;
    let mut total = weights.structural * ls;
    let structural = gs * weights.structural;

    let (relational, lr) = match &model.relational {
        Some(l) => {
            let h = embeddings_for(ex, "relational", ex.relational.as_deref())?;
            let (loss, g) = relational_loss_grad(l.view(), &ex.sentence, h.view())?;
            total += weights.relational * loss;
            (Some(g * weights.relational), Some(loss))
        }
        None => (None, None),
    };

    let (depth, ld) = match &model.depth {
        Some(c) => {
            let h = embeddings_for(ex, "depth", ex.depth.as_deref())?;
            let (loss, g) = depth_loss_grad(c.view(), &ex.sentence, h.view())?;
            total += weights.depth * loss;
            (Some(g * weights.depth), Some(loss))
        }
        None => (None, None),
    };

    Ok(Gradients {
        structural,
        relational,
        depth,
        loss: LossBreakdown {
            structural: ls,
            relational: lr,
            depth: ld,
            total,
        },
    })
}

/// Mean losses over a dataset.
pub fn evaluate_loss(model: &ProbeModel, examples: &[Example], weights: LossWeights) -> Result<LossBreakdown, TrainError> {
    if examples.is_empty() {
        return Ok(LossBreakdown::default());
    }
    let refs: Vec<&Example> = examples.iter().collect();
    Ok(gradients(model, &refs, weights)?.loss)
}

/// AdamW with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    step: i32,
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// Update `params` in place. Parameter shapes must not change between calls.
    pub fn step(&mut self, params: &mut [&mut Array2<f64>], grads: &[&Array2<f64>], lr: f64) {
        assert_eq!(params.len(), grads.len());
        if self.first.is_empty() {
            self.first = grads.iter().map(|g| Array2::zeros(g.raw_dim())).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, eps, decay) = (self.beta1, self.beta2, self.epsilon, lr * self.weight_decay);

        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            Zip::from(&mut **p)
                .and(*g)
                .and(&mut self.first[k])
                .and(&mut self.second[k])
                .for_each(|p, &g, m, v| {
                    *p -= decay * *p;
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Learning rate used during the epoch.
    pub learning_rate: f64,
    pub train: LossBreakdown,
    pub dev: LossBreakdown,
    pub improved: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub trainable_parameters: usize,
    pub initial_dev: LossBreakdown,
    pub epochs: Vec<EpochRecord>,
    /// Learning rate after each epoch's plateau check.
    pub learning_rates: Vec<f64>,
    pub stopping_epoch: usize,
    /// Epoch whose parameters were returned; 0 is the initialization.
    pub best_epoch: usize,
    pub best_dev_loss: f64,
    pub dev_uuas: f64,
    pub dev_rel_acc: Option<f64>,
}

/// Dev-set quality of a model: UUAS of the undirected MST and raw relation
/// classification accuracy (argmax over all labels).
pub fn dev_metrics(model: &ProbeModel, examples: &[Example]) -> (f64, Option<f64>) {
    let mut edges = 0usize;
    let mut edges_found = 0usize;
    let mut words = 0usize;
    let mut rel_correct = 0usize;

    for ex in examples {
        let h = ex.structural.mapv(f64::from);
        let dist = projected_distances(h.dot(&model.structural).view());
        let predicted: HashSet<(usize, usize)> = undirected_mst(dist.view())
            .expect("non-empty sentence")
            .into_iter()
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        for (child, head) in ex.sentence.heads.iter().enumerate() {
            if let Some(head) = head.word() {
                edges += 1;
                if predicted.contains(&(head.min(child), head.max(child))) {
                    edges_found += 1;
                }
            }
        }

        if let (Some(l), Some(emb)) = (&model.relational, &ex.relational) {
            let logits = emb.mapv(f64::from).dot(l);
            for (row, &gold) in logits.rows().into_iter().zip(&ex.sentence.rels) {
                words += 1;
                let best = row
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |b, (k, &v)| if v > b.1 { (k, v) } else { b })
                    .0;
                if best == gold {
                    rel_correct += 1;
                }
            }
        }
    }

    let uuas = if edges == 0 { 1.0 } else { edges_found as f64 / edges as f64 };
    let rel_acc = model
        .relational
        .as_ref()
        .map(|_| if words == 0 { 1.0 } else { rel_correct as f64 / words as f64 });
    (uuas, rel_acc)
}

fn matrices_mut(model: &mut ProbeModel) -> Vec<&mut Array2<f64>> {
    let mut params = vec![&mut model.structural];
    if let Some(r) = model.relational.as_mut() {
        params.push(r);
    }
    if let Some(d) = model.depth.as_mut() {
        params.push(d);
    }
    params
}

/// Train a probe with AdamW, reducing the learning rate on dev-loss plateaus
/// and stopping early. Returns the parameters with the lowest dev loss seen,
/// which may be the initialization.
pub fn fit(
    mut model: ProbeModel,
    train: &[Example],
    dev: &[Example],
    config: &TrainConfig,
) -> Result<(ProbeModel, TrainReport), TrainError> {
    config.validate()?;
    if train.is_empty() {
        return Err(TrainError::Argument("empty training set".into()));
    }
    let dev = if dev.is_empty() { train } else { dev };
    let weights = config.loss_weights;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut optimizer = AdamW::new(config.weight_decay);
    let mut lr = config.learning_rate;

    let initial_dev = evaluate_loss(&model, dev, weights)?;
    if !initial_dev.is_finite() {
        return Err(TrainError::Numeric(0));
    }
    let mut best_loss = initial_dev.total;
    let mut best_model = model.clone();
    let mut best_epoch = 0;
    let mut stale = 0;

    let mut epochs = Vec::new();
    let mut learning_rates = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let epoch_lr = lr;

        let mut sums = LossBreakdown::default();
        let mut relational_sum = 0.0;
        let mut depth_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
            let g = gradients(&model, &batch, weights)?;
            let m = batch.len() as f64;
            sums.structural += g.loss.structural * m;
            sums.total += g.loss.total * m;
            relational_sum += g.loss.relational.unwrap_or(0.0) * m;
            depth_sum += g.loss.depth.unwrap_or(0.0) * m;

            let mut grads = vec![&g.structural];
            grads.extend(g.relational.as_ref());
            grads.extend(g.depth.as_ref());
            optimizer.step(&mut matrices_mut(&mut model), &grads, lr);
        }
        let count = train.len() as f64;
        let train_loss = LossBreakdown {
            structural: sums.structural / count,
            relational: model.relational.as_ref().map(|_| relational_sum / count),
            depth: model.depth.as_ref().map(|_| depth_sum / count),
            total: sums.total / count,
        };

        let dev_loss = evaluate_loss(&model, dev, weights)?;
        if !train_loss.is_finite() || !dev_loss.is_finite() || !model.is_finite() {
            return Err(TrainError::Numeric(epoch));
        }

        let improved = dev_loss.total < best_loss - config.plateau_threshold;
        if dev_loss.total < best_loss {
            best_loss = dev_loss.total;
            best_model = model.clone();
            best_epoch = epoch;
        }
        if improved {
            stale = 0;
        } else {
            stale += 1;
            lr *= config.plateau_factor;
        }

        epochs.push(EpochRecord {
            epoch,
            learning_rate: epoch_lr,
            train: train_loss,
            dev: dev_loss,
            improved,
        });
        learning_rates.push(lr);

        if stale >= config.early_stop_patience {
            break;
        }
    }

    let (dev_uuas, dev_rel_acc) = dev_metrics(&best_model, dev);
    let report = TrainReport {
        seed: config.seed,
        trainable_parameters: best_model.trainable_parameters(),
        initial_dev,
        stopping_epoch: epochs.len(),
        epochs,
        learning_rates,
        best_epoch,
        best_dev_loss: best_loss,
        dev_uuas,
        dev_rel_acc,
    };
    Ok((best_model, report))
}

/// Outcome of training a structural + relational probe on one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerResult {
    pub layer: u32,
    pub uuas: f64,
    pub rel_acc: f64,
    pub stopping_epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerScan {
    pub layers: Vec<LayerResult>,
    pub best_structural_layer: u32,
    pub best_relational_layer: u32,
}

/// Train an independent structural + relational probe per layer and report
/// dev UUAS and RelAcc. Files are paired by position; the layer index is
/// taken from the training file header. Layers train in parallel.
pub fn layer_scan(
    train_corpus: &[GoldSentence],
    dev_corpus: &[GoldSentence],
    train_files: &[EmbeddingFile],
    dev_files: &[EmbeddingFile],
    structural_dim: usize,
    config: &TrainConfig,
) -> Result<LayerScan, TrainError> {
    if train_files.is_empty() || train_files.len() != dev_files.len() {
        return Err(TrainError::Argument(format!(
            "{} training and {} dev layer files",
            train_files.len(),
            dev_files.len()
        )));
    }

    let layers: Vec<LayerResult> = train_files
        .par_iter()
        .zip(dev_files)
        .map(|(train_file, dev_file)| {
            if train_file.layer != dev_file.layer {
                return Err(TrainError::Argument(format!(
                    "training file holds layer {}, dev file holds layer {}",
                    train_file.layer, dev_file.layer
                )));
            }
            let layer = train_file.layer;
            let train = build_examples(train_corpus, LayerFiles::single(train_file))?;
            let dev = build_examples(dev_corpus, LayerFiles::single(dev_file))?;
            let model = ProbeModel::depprobe(
                train_file.dim,
                structural_dim,
                RelationVocab::ud(),
                layer,
                layer,
                config.seed,
            );
            let (_, report) = fit(model, &train, &dev, config)?;
            Ok(LayerResult {
                layer,
                uuas: report.dev_uuas,
                rel_acc: report.dev_rel_acc.unwrap_or(0.0),
                stopping_epoch: report.stopping_epoch,
            })
        })
        .collect::<Result<_, TrainError>>()?;

    let best_by = |key: fn(&LayerResult) -> f64| {
        layers
            .iter()
            .fold(None::<&LayerResult>, |best, r| match best {
                Some(b) if key(b) >= key(r) => Some(b),
                _ => Some(r),
            })
            .unwrap()
            .layer
    };
    Ok(LayerScan {
        best_structural_layer: best_by(|r| r.uuas),
        best_relational_layer: best_by(|r| r.rel_acc),
        layers,
    })
}

/// Relative frequency of the most common gold relation.
pub fn majority_relation_frequency(corpus: &[GoldSentence]) -> f64 {
    let mut counts = std::collections::HashMap::new();
    let mut total = 0usize;
    for s in corpus {
        for &r in &s.rels {
            *counts.entry(r).or_insert(0usize) += 1;
            total += 1;
        }
    }
    counts.values().copied().max().map_or(0.0, |m| m as f64 / total as f64)
}
