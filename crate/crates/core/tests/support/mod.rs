//! Independent oracles and randomized checks shared by the integration tests
//! and the acceptance suite. Each `check_*` function runs a fixed number of
//! seeded trials and returns a summary, or the first disagreement found.

#![allow(dead_code)]

use std::collections::BTreeSet;

use depprobe::analysis::{subspace_angle, weighted_kendall};
use depprobe::dataset::Example;
use depprobe::decode::{depprobe_decode, dirprobe_decode, undirected_mst, DepthGate, PredictedTree};
use depprobe::eval::score;
use depprobe::synthetic::{random_heads, random_orthogonal, random_sentence};
use depprobe::train::{gradients, LossWeights};
use depprobe::{GoldSentence, Head, ProbeModel, RelationVocab};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

pub type CheckResult = Result<String, String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// Random instances

/// Symmetric matrix with zero diagonal. With `quantized`, entries come from
/// a small integer set so that ties are common.
pub fn random_distances<R: Rng>(rng: &mut R, n: usize, quantized: bool) -> Array2<f64> {
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let v = if quantized {
                f64::from(rng.random_range(1..4u8))
            } else {
                rng.random_range(0.01..10.0)
            };
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

/// Row-stochastic `n x labels` matrix.
pub fn random_probs<R: Rng>(rng: &mut R, n: usize, labels: usize, quantized: bool) -> Array2<f64> {
    let mut p = Array2::from_shape_simple_fn((n, labels), || {
        if quantized {
            f64::from(rng.random_range(1..4u8))
        } else {
            rng.random_range(0.0..1.0)
        }
    });
    for mut row in p.rows_mut() {
        let total = row.sum();
        row /= total;
    }
    p
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}

pub fn random_corpus<R: Rng>(rng: &mut R, sentences: usize, max_words: usize, vocab: &RelationVocab) -> Vec<GoldSentence> {
    (0..sentences)
        .map(|s| {
            let n = rng.random_range(1..=max_words);
            random_sentence(rng, format!("s{}", s), n, vocab)
        })
        .collect()
}

/// A prediction for `gold`: a random tree, or with probability one half a
/// perturbed copy of the gold tree, with labels copied or resampled.
pub fn random_prediction<R: Rng>(rng: &mut R, gold: &GoldSentence, vocab: &RelationVocab, labeled: bool) -> PredictedTree {
    let n = gold.len();
    let heads = if rng.random_bool(0.5) {
        gold.heads.clone()
    } else {
        random_heads(rng, n)
    };
    let root = heads.iter().position(|h| *h == Head::Root).unwrap();
    let parents: Vec<Option<usize>> = heads.iter().map(|h| h.word()).collect();
    let rels = labeled.then(|| {
        (0..n)
            .map(|i| {
                if i == root {
                    vocab.root()
                } else if rng.random_bool(0.6) && gold.rels[i] != vocab.root() {
                    gold.rels[i]
                } else {
                    loop {
                        let r = rng.random_range(0..vocab.len());
                        if r != vocab.root() {
                            break r;
                        }
                    }
                }
            })
            .collect()
    });
    PredictedTree::from_parents(root, &parents, rels, true).unwrap()
}

pub fn example(sentence: GoldSentence, embeddings: Array2<f64>) -> Example {
    let h = Arc::new(embeddings.mapv(|v| v as f32));
    Example {
        sentence,
        structural: h.clone(),
        relational: Some(h.clone()),
        depth: Some(h),
    }
}

// ---------------------------------------------------------------------------
// Oracles

/// All-pairs shortest paths over the undirected tree edges.
pub fn floyd_warshall(heads: &[Head]) -> Vec<Vec<u32>> {
    let n = heads.len();
    let inf = u32::MAX / 2;
    let mut d = vec![vec![inf; n]; n];
    for i in 0..n {
        d[i][i] = 0;
        if let Head::Word(h) = heads[i] {
            d[i][h] = 1;
            d[h][i] = 1;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    d
}

/// Edge list of the labeled tree with the given Prüfer sequence.
fn prufer_tree(seq: &[usize], n: usize) -> Vec<(usize, usize)> {
    let mut degree = vec![1usize; n];
    for &v in seq {
        degree[v] += 1;
    }
    let mut edges = Vec::with_capacity(n - 1);
    for &v in seq {
        let leaf = (0..n).find(|&u| degree[u] == 1).unwrap();
        edges.push((leaf, v));
        degree[leaf] -= 1;
        degree[v] -= 1;
    }
    let rest: Vec<usize> = (0..n).filter(|&u| degree[u] == 1).collect();
    edges.push((rest[0], rest[1]));
    edges
}

/// Minimum total weight over every labeled spanning tree (Cayley enumeration).
pub fn exhaustive_mst_weight(d: &Array2<f64>) -> f64 {
    let n = d.nrows();
    if n < 2 {
        return 0.0;
    }
    let mut seq = vec![0usize; n - 2];
    let mut best = f64::INFINITY;
    loop {
        let w: f64 = prufer_tree(&seq, n).iter().map(|&(a, b)| d[(a, b)]).sum();
        best = best.min(w);
        // Next sequence in base-n counting.
        let mut k = 0;
        loop {
            if k == seq.len() {
                return best;
            }
            seq[k] += 1;
            if seq[k] < n {
                break;
            }
            seq[k] = 0;
            k += 1;
        }
    }
}

/// Maximum total score over every arborescence rooted at `root`, allowing
/// only edges `allowed(head, child)`.
pub fn exhaustive_arborescence(n: usize, root: usize, score: impl Fn(usize, usize) -> Option<f64>) -> Option<f64> {
    let others: Vec<usize> = (0..n).filter(|&v| v != root).collect();
    let mut choice = vec![0usize; others.len()];
    let mut best: Option<f64> = None;
    loop {
        let mut parent = vec![usize::MAX; n];
        let mut total = 0.0;
        let mut feasible = true;
        for (k, &child) in others.iter().enumerate() {
            match score(choice[k], child) {
                Some(s) => {
                    parent[child] = choice[k];
                    total += s;
                }
                None => {
                    feasible = false;
                    break;
                }
            }
        }
        if feasible {
            let acyclic = others.iter().all(|&start| {
                let mut v = start;
                for _ in 0..n {
                    if v == root {
                        return true;
                    }
                    v = parent[v];
                }
                false
            });
            if acyclic && best.is_none_or(|b| total > b) {
                best = Some(total);
            }
        }
        let mut k = 0;
        loop {
            if k == choice.len() {
                return best;
            }
            choice[k] += 1;
            if choice[k] < n {
                break;
            }
            choice[k] = 0;
            k += 1;
        }
    }
}

/// Step-by-step greedy expansion: root by highest root probability, then
/// repeatedly the (distance, tree word, outside word) lexicographic minimum,
/// labeled by the best non-root relation. Lowest index wins every tie.
pub fn simulate_greedy(d: &Array2<f64>, probs: &Array2<f64>, root_rel: usize) -> (usize, Vec<Option<usize>>, Vec<usize>) {
    let n = d.nrows();
    let mut root = 0;
    for i in 0..n {
        if probs[(i, root_rel)] > probs[(root, root_rel)] {
            root = i;
        }
    }
    let mut parents = vec![None; n];
    let mut rels = vec![root_rel; n];
    let mut in_tree = BTreeSet::from([root]);
    while in_tree.len() < n {
        let mut best: Option<(f64, usize, usize)> = None;
        for &i in &in_tree {
            for j in (0..n).filter(|j| !in_tree.contains(j)) {
                let better = match best {
                    None => true,
                    Some((bd, bi, bj)) => d[(i, j)] < bd || (d[(i, j)] == bd && (i, j) < (bi, bj)),
                };
                if better {
                    best = Some((d[(i, j)], i, j));
                }
            }
        }
        let (_, head, child) = best.unwrap();
        parents[child] = Some(head);
        let mut label = None;
        for k in 0..probs.ncols() {
            if k != root_rel && label.is_none_or(|l| probs[(child, k)] > probs[(child, l)]) {
                label = Some(k);
            }
        }
        rels[child] = label.unwrap();
        in_tree.insert(child);
    }
    (root, parents, rels)
}

/// Attachment metrics by direct per-token counting.
pub struct CountedMetrics {
    pub uas: f64,
    pub las: f64,
    pub rel_acc: f64,
    pub uuas: f64,
}

#[allow(clippy::needless_range_loop)]
pub fn count_metrics(pred: &[PredictedTree], gold: &[GoldSentence], root_rel: usize) -> CountedMetrics {
    let (mut tokens, mut heads, mut labeled, mut rels, mut edges, mut found) = (0, 0, 0, 0, 0, 0);
    for (p, g) in pred.iter().zip(gold) {
        let p_rels = p.rels.as_ref().unwrap();
        for i in 0..g.len() {
            tokens += 1;
            let p_rel = if i == p.root { root_rel } else { p_rels[i] };
            let head_ok = p.heads[i] == g.heads[i];
            let rel_ok = p_rel == g.rels[i];
            heads += head_ok as usize;
            rels += rel_ok as usize;
            labeled += (head_ok && rel_ok) as usize;
            if let Head::Word(h) = g.heads[i] {
                edges += 1;
                let present = (0..p.len()).any(|c| {
                    matches!(p.heads[c], Head::Word(ph) if (ph == h && c == i) || (ph == i && c == h))
                });
                found += present as usize;
            }
        }
    }
    let t = tokens as f64;
    CountedMetrics {
        uas: heads as f64 / t,
        las: labeled as f64 / t,
        rel_acc: rels as f64 / t,
        uuas: if edges == 0 { 1.0 } else { found as f64 / edges as f64 },
    }
}

/// Weighted tau by enumerating pairs; ranks count strictly larger ground
/// values plus half the other tied ones.
pub fn brute_force_tau(ground: &[f64], predicted: &[f64]) -> f64 {
    let n = ground.len();
    let rank = |i: usize| {
        let greater = ground.iter().filter(|&&g| g > ground[i]).count() as f64;
        let equal = ground.iter().filter(|&&g| g == ground[i]).count() as f64;
        greater + (equal - 1.0) / 2.0
    };
    let (mut concordant, mut discordant, mut total) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let w = 1.0 / (1.0 + rank(i)) + 1.0 / (1.0 + rank(j));
            total += w;
            let dg = ground[i] - ground[j];
            let dp = predicted[i] - predicted[j];
            if (dg > 0.0 && dp > 0.0) || (dg < 0.0 && dp < 0.0) {
                concordant += w;
            } else if (dg > 0.0 && dp < 0.0) || (dg < 0.0 && dp > 0.0) {
                discordant += w;
            }
        }
    }
    (concordant - discordant) / total
}

// ---------------------------------------------------------------------------
// Checks

pub const FD_STEP: f64 = 1e-4;
pub const FD_RELATIVE: f64 = 1e-4;
pub const FD_ABSOLUTE: f64 = 1e-7;

fn entry(model: &mut ProbeModel, which: usize, idx: (usize, usize)) -> &mut f64 {
    let matrix = match which {
        0 => &mut model.structural,
        1 => model.relational.as_mut().unwrap(),
        _ => model.depth.as_mut().unwrap(),
    };
    &mut matrix[idx]
}

fn total_loss(model: &ProbeModel, batch: &[&Example], weights: LossWeights) -> f64 {
    gradients(model, batch, weights).unwrap().loss.total
}

/// Compare analytic gradients of the weighted batch loss with central
/// differences on every coordinate of every matrix.
pub fn check_gradients(seeds: u64) -> CheckResult {
    let vocab = RelationVocab::ud();
    let (e, b, c) = (5, 3, 2);
    let mut coordinates = 0;
    let (mut worst, mut worst_absolute, mut largest): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for seed in 0..seeds {
        let mut r = rng(1000 + seed);
        let batch: Vec<Example> = (0..3)
            .map(|s| {
                let n = r.random_range(2..=6);
                let sentence = random_sentence(&mut r, format!("g{}", s), n, &vocab);
                example(sentence, random_matrix(&mut r, n, e) * 2.0)
            })
            .collect();
        let refs: Vec<&Example> = batch.iter().collect();
        let weights = LossWeights {
            structural: r.random_range(0.5..2.0),
            relational: r.random_range(0.5..2.0),
            depth: r.random_range(0.5..2.0),
        };
        let mut dep = ProbeModel::depprobe(e, b, vocab.clone(), 0, 0, seed);
        let mut dir = ProbeModel::dirprobe(e, b, c, 0, 0, seed);

        for model in [&mut dep, &mut dir] {
            let analytic = gradients(model, &refs, weights).unwrap();
            let mut targets = vec![(0, analytic.structural.clone())];
            if let Some(g) = analytic.relational {
                targets.push((1, g));
            }
            if let Some(g) = analytic.depth {
                targets.push((2, g));
            }
            for (which, grad) in targets {
                for idx in ndarray::indices(grad.raw_dim()) {
                    let original = *entry(model, which, idx);
                    *entry(model, which, idx) = original + FD_STEP;
                    let plus = total_loss(model, &refs, weights);
                    *entry(model, which, idx) = original - FD_STEP;
                    let minus = total_loss(model, &refs, weights);
                    *entry(model, which, idx) = original;
                    let numeric = (plus - minus) / (2.0 * FD_STEP);
                    let a = grad[idx];
                    let diff = (a - numeric).abs();
                    let relative = diff / a.abs().max(numeric.abs());
                    coordinates += 1;
                    worst_absolute = worst_absolute.max(diff);
                    largest = largest.max(a.abs());
                    if diff > FD_ABSOLUTE {
                        worst = worst.max(relative);
                        if relative > FD_RELATIVE {
                            return Err(format!(
                                "seed {}, matrix {}, coordinate {:?}: analytic {:.9e}, numeric {:.9e}",
                                seed, which, idx, a, numeric
                            ));
                        }
                    }
                }
            }
        }
    }
    Ok(format!(
        "{} coordinates (largest |gradient| {:.2e}), worst absolute error {:.2e}, worst relative error above the floor {:.2e}",
        coordinates, largest, worst_absolute, worst
    ))
}

fn tree_weight(d: &Array2<f64>, edges: &[(usize, usize)]) -> f64 {
    edges.iter().map(|&(a, b)| d[(a, b)]).sum()
}

pub fn check_mst_oracle(cases: u64) -> CheckResult {
    for case in 0..cases {
        let mut r = rng(2000 + case);
        let n = r.random_range(1..=7);
        let d = random_distances(&mut r, n, case % 4 == 0);
        let got = tree_weight(&d, &undirected_mst(d.view()).unwrap());
        let want = exhaustive_mst_weight(&d);
        if (got - want).abs() > 1e-9 {
            return Err(format!("case {} (n={}): MST weight {} vs exhaustive {}", case, n, got, want));
        }
    }
    Ok(format!("{} instances", cases))
}

pub fn check_arborescence_oracle(cases: u64) -> CheckResult {
    for case in 0..cases {
        let mut r = rng(3000 + case);
        let n = r.random_range(1..=5);
        let d = random_distances(&mut r, n, case % 4 == 0);
        let depths: Vec<f64> = (0..n).map(|_| f64::from(r.random_range(0..4u8)) + r.random_range(0.0..0.5)).collect();
        let out = dirprobe_decode(d.view(), ndarray::ArrayView1::from(&depths), DepthGate::HeadDeeperForbidden).unwrap();
        if !out.relaxed_words.is_empty() {
            return Err(format!("case {}: unexpected relaxation {:?}", case, out.relaxed_words));
        }
        let root = (0..n).fold(0, |best, i| if depths[i] < depths[best] { i } else { best });
        if out.tree.root != root {
            return Err(format!("case {}: root {} instead of the shallowest word {}", case, out.tree.root, root));
        }
        let got: f64 = out.tree.edges().map(|(h, c, _)| -d[(h, c)]).sum();
        let want = exhaustive_arborescence(n, root, |h, c| {
            (h != c && c != root && depths[h] <= depths[c]).then(|| -d[(h, c)])
        })
        .unwrap();
        if (got - want).abs() > 1e-9 {
            return Err(format!("case {} (n={}): arborescence weight {} vs exhaustive {}", case, n, got, want));
        }
    }
    Ok(format!("{} instances", cases))
}

pub fn check_depprobe_simulation(cases: u64) -> CheckResult {
    let labels = 37;
    let root_rel = 30;
    for case in 0..cases {
        let mut r = rng(4000 + case);
        let n = r.random_range(1..=10);
        let quantized = case % 3 == 0;
        let d = random_distances(&mut r, n, quantized);
        let p = random_probs(&mut r, n, labels, quantized);
        let tree = depprobe_decode(d.view(), p.view(), root_rel).unwrap();
        let (root, parents, rels) = simulate_greedy(&d, &p, root_rel);
        let heads: Vec<Head> = parents.iter().map(|p| p.map_or(Head::Root, Head::Word)).collect();
        if tree.root != root || tree.heads != heads || tree.rels.as_ref() != Some(&rels) {
            return Err(format!(
                "case {} (n={}): decoder {:?}/{:?}, simulation {:?}/{:?}",
                case, n, tree.heads, tree.rels, heads, rels
            ));
        }
    }
    Ok(format!("{} instances", cases))
}

pub fn check_metric_oracle(corpora: u64) -> CheckResult {
    let vocab = RelationVocab::ud();
    for case in 0..corpora {
        let mut r = rng(5000 + case);
        let sentences = r.random_range(1..=8);
        let gold = random_corpus(&mut r, sentences, 9, &vocab);
        let pred: Vec<PredictedTree> = gold.iter().map(|g| random_prediction(&mut r, g, &vocab, true)).collect();
        let report = score(&pred, &gold, &vocab).map_err(|e| e.to_string())?;
        let want = count_metrics(&pred, &gold, vocab.root());
        let got = (report.uas.unwrap(), report.las.unwrap(), report.rel_acc.unwrap(), report.uuas);
        if got != (want.uas, want.las, want.rel_acc, want.uuas) {
            return Err(format!(
                "corpus {}: score {:?}, oracle {:?}",
                case,
                got,
                (want.uas, want.las, want.rel_acc, want.uuas)
            ));
        }
        if got.1 > got.0.min(got.2) {
            return Err(format!("corpus {}: LAS {} exceeds min(UAS {}, RelAcc {})", case, got.1, got.0, got.2));
        }
    }
    Ok(format!("{} corpora", corpora))
}

pub fn check_tau_oracle(cases: u64) -> CheckResult {
    for case in 0..cases {
        let mut r = rng(6000 + case);
        let n = r.random_range(2..=8);
        let draw = |r: &mut ChaCha8Rng| -> Vec<f64> {
            if case % 2 == 0 {
                (0..n).map(|_| f64::from(r.random_range(0..4u8))).collect()
            } else {
                (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
            }
        };
        let ground = draw(&mut r);
        let predicted = draw(&mut r);
        let got = weighted_kendall(&ground, &predicted).unwrap();
        let want = brute_force_tau(&ground, &predicted);
        if got != want && !(got.is_nan() && want.is_nan()) {
            return Err(format!("case {}: {:?} vs {:?}: {} != {}", case, ground, predicted, got, want));
        }

        let distinct: Vec<f64> = (0..n).map(|i| i as f64 * 1.5 - r.random_range(0.0..1.0)).collect();
        let reversed: Vec<f64> = distinct.iter().map(|v| -v).collect();
        if weighted_kendall(&distinct, &distinct).unwrap() != 1.0 {
            return Err(format!("case {}: identical ranking is not exactly 1", case));
        }
        if weighted_kendall(&distinct, &reversed).unwrap() != -1.0 {
            return Err(format!("case {}: reversed ranking is not exactly -1", case));
        }
    }
    Ok(format!("{} cases", cases))
}

pub const SSA_TOLERANCE: f64 = 1e-6;

pub fn check_ssa_properties(trials: u64) -> CheckResult {
    let mut worst: f64 = 0.0;
    for trial in 0..trials {
        let mut r = rng(7000 + trial);
        let e = r.random_range(4..=12);
        let k = r.random_range(1..=e / 2);
        let m = r.random_range(1..=e / 2);
        let a = random_matrix(&mut r, e, k);
        let b = random_matrix(&mut r, e, m);

        let self_angle = subspace_angle(a.view(), a.view()).unwrap();
        worst = worst.max(self_angle.abs());
        if self_angle.abs() > SSA_TOLERANCE {
            return Err(format!("trial {}: SSA(A, A) = {}", trial, self_angle));
        }

        // Disjoint coordinate axes of a random rotation.
        let q = random_orthogonal(&mut r, e);
        let qa = q.slice(ndarray::s![.., 0..k]).to_owned();
        let qb = q.slice(ndarray::s![.., k..k + m]).to_owned();
        let orthogonal = subspace_angle(qa.view(), qb.view()).unwrap();
        worst = worst.max((orthogonal - 90.0).abs());
        if (orthogonal - 90.0).abs() > SSA_TOLERANCE {
            return Err(format!("trial {}: orthogonal subspaces at {}", trial, orthogonal));
        }

        let ab = subspace_angle(a.view(), b.view()).unwrap();
        let ba = subspace_angle(b.view(), a.view()).unwrap();
        worst = worst.max((ab - ba).abs());
        if (ab - ba).abs() > SSA_TOLERANCE || !(0.0..=90.0).contains(&ab) {
            return Err(format!("trial {}: SSA(A, B) = {}, SSA(B, A) = {}", trial, ab, ba));
        }

        let ra = random_matrix(&mut r, k, k) + Array2::<f64>::eye(k) * 2.0;
        let rb = random_matrix(&mut r, m, m) + Array2::<f64>::eye(m) * 2.0;
        let mixed = subspace_angle(a.dot(&ra).view(), b.dot(&rb).view()).unwrap();
        let same_space = subspace_angle(a.view(), a.dot(&ra).view()).unwrap();
        worst = worst.max((mixed - ab).abs()).max(same_space.abs());
        if (mixed - ab).abs() > SSA_TOLERANCE || same_space.abs() > SSA_TOLERANCE {
            return Err(format!(
                "trial {}: right-multiplication changed SSA from {} to {} (A vs AR: {})",
                trial, ab, mixed, same_space
            ));
        }
    }
    Ok(format!("{} trials, worst deviation {:.2e} degrees", trials, worst))
}
