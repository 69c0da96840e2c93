//! Attachment scores, relation accuracy and error breakdowns.
//!
//! All scores are micro-averaged over words, punctuation included. The root
//! word counts as correctly attached when the predicted root is the gold
//! root, which equates the root with a virtual head 0.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::decode::PredictedTree;
use crate::treebank::{GoldSentence, Head, RelationVocab, TaxonomyGroup, TaxonomyGroups};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("alignment: {0}")]
    Alignment(String),

    #[error("relation accuracy requires labeled predictions")]
    Unlabeled,
}

/// Head offset bucket.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OffsetBucket {
    BelowMinus5,
    Offset(i8),
    AbovePlus5,
}

impl OffsetBucket {
    pub fn of(offset: i64) -> Self {
        match offset {
            o if o < -5 => OffsetBucket::BelowMinus5,
            o if o > 5 => OffsetBucket::AbovePlus5,
            o => OffsetBucket::Offset(o as i8),
        }
    }

    /// The thirteen buckets in ascending order.
    pub fn all() -> Vec<OffsetBucket> {
        std::iter::once(OffsetBucket::BelowMinus5)
            .chain((-5..=5).map(OffsetBucket::Offset))
            .chain(std::iter::once(OffsetBucket::AbovePlus5))
            .collect()
    }
}

impl fmt::Display for OffsetBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OffsetBucket::BelowMinus5 => write!(f, "<-5"),
            OffsetBucket::Offset(o) => write!(f, "{}", o),
            OffsetBucket::AbovePlus5 => write!(f, ">5"),
        }
    }
}

impl Serialize for OffsetBucket {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Correct and total counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Tally {
    pub correct: usize,
    pub total: usize,
}

impl Tally {
    fn add(&mut self, correct: bool) {
        self.total += 1;
        if correct {
            self.correct += 1;
        }
    }

    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

/// Relation accuracy per gold label and per taxonomy group.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct GroupRelationAccuracy {
    /// Only relations that occur in the gold data.
    pub relations: BTreeMap<String, Tally>,
    pub groups: BTreeMap<TaxonomyGroup, Tally>,
}

impl GroupRelationAccuracy {
    pub fn relation(&self, label: &str) -> Option<f64> {
        self.relations.get(label).and_then(Tally::accuracy)
    }

    pub fn group(&self, group: TaxonomyGroup) -> Option<f64> {
        self.groups.get(&group).and_then(Tally::accuracy)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub tokens: usize,
    pub sentences: usize,
    /// Absent for undirected predictions.
    pub uas: Option<f64>,
    /// Absent for unlabeled predictions.
    pub las: Option<f64>,
    /// Vacuously 1 when the gold trees have no edges.
    pub uuas: f64,
    pub rel_acc: Option<f64>,
    /// Absent for undirected predictions.
    pub offset_histogram: Option<BTreeMap<OffsetBucket, f64>>,
    pub group_rel_acc: Option<GroupRelationAccuracy>,
    /// Gold `ref` edges, which a probe can never label correctly.
    pub legacy_ref_edges: usize,
}

fn check_aligned(pred: &[PredictedTree], gold: &[GoldSentence]) -> Result<(), EvalError> {
    if pred.len() != gold.len() {
        return Err(EvalError::Alignment(format!(
            "{} predicted trees for {} gold sentences",
            pred.len(),
            gold.len()
        )));
    }
    for (i, (p, g)) in pred.iter().zip(gold).enumerate() {
        if p.len() != g.len() {
            return Err(EvalError::Alignment(format!(
                "sentence {} ({}): {} predicted words, {} gold words",
                i,
                g.sentence_id,
                p.len(),
                g.len()
            )));
        }
    }
    Ok(())
}

/// Predicted relation of word `i`; the root word carries the root label.
fn predicted_rel(tree: &PredictedTree, i: usize, vocab: &RelationVocab) -> Option<usize> {
    let rels = tree.rels.as_ref()?;
    Some(if tree.heads[i] == Head::Root { vocab.root() } else { rels[i] })
}

/// Score predictions against gold trees.
pub fn score(pred: &[PredictedTree], gold: &[GoldSentence], vocab: &RelationVocab) -> Result<EvalReport, EvalError> {
    check_aligned(pred, gold)?;

    let directed = pred.iter().all(|p| p.directed);
    let labeled = pred.iter().all(PredictedTree::is_labeled);

    let mut tokens = 0;
    let mut head_correct = 0;
    let mut labeled_correct = 0;
    let mut rel_correct = 0;
    let mut gold_edges = 0;
    let mut edges_found = 0;
    let mut legacy_ref_edges = 0;

    for (p, g) in pred.iter().zip(gold) {
        let predicted_edges: HashSet<(usize, usize)> = p.undirected_edges().into_iter().collect();
        for i in 0..g.len() {
            tokens += 1;
            let head_ok = p.heads[i] == g.heads[i];
            let rel_ok = predicted_rel(p, i, vocab) == Some(g.rels[i]);
            head_correct += usize::from(head_ok);
            labeled_correct += usize::from(head_ok && rel_ok);
            rel_correct += usize::from(rel_ok);
            if g.rels[i] == vocab.legacy_ref() {
                legacy_ref_edges += 1;
            }
            if let Head::Word(h) = g.heads[i] {
                gold_edges += 1;
                if predicted_edges.contains(&(h.min(i), h.max(i))) {
                    edges_found += 1;
                }
            }
        }
    }

    let ratio = |c: usize| if tokens == 0 { 0.0 } else { c as f64 / tokens as f64 };
    let uuas = if gold_edges == 0 {
        1.0
    } else {
        edges_found as f64 / gold_edges as f64
    };

    Ok(EvalReport {
        tokens,
        sentences: gold.len(),
        uas: directed.then(|| ratio(head_correct)),
        las: (directed && labeled).then(|| ratio(labeled_correct)),
        uuas,
        rel_acc: labeled.then(|| ratio(rel_correct)),
        offset_histogram: if directed { Some(head_offsets(pred, gold)?) } else { None },
        group_rel_acc: if labeled {
            Some(group_relation_accuracy(pred, gold, &TaxonomyGroups::ud(), vocab)?)
        } else {
            None
        },
        legacy_ref_edges,
    })
}

/// Distribution of predicted minus gold head position over words that are
/// not the gold root. Heads use CoNLL-U numbering, so a word wrongly
/// predicted as root has predicted head 0.
pub fn head_offsets(pred: &[PredictedTree], gold: &[GoldSentence]) -> Result<BTreeMap<OffsetBucket, f64>, EvalError> {
    check_aligned(pred, gold)?;
    let mut counts: BTreeMap<OffsetBucket, usize> = OffsetBucket::all().into_iter().map(|b| (b, 0)).collect();
    let mut total = 0usize;
    for (p, g) in pred.iter().zip(gold) {
        for (ph, gh) in p.heads.iter().zip(&g.heads) {
            if *gh == Head::Root {
                continue;
            }
            let offset = ph.conllu_id() as i64 - gh.conllu_id() as i64;
            *counts.get_mut(&OffsetBucket::of(offset)).unwrap() += 1;
            total += 1;
        }
    }
    Ok(counts
        .into_iter()
        .map(|(b, c)| (b, if total == 0 { 0.0 } else { c as f64 / total as f64 }))
        .collect())
}

/// Relation accuracy for every gold relation, micro-averaged per taxonomy group.
pub fn group_relation_accuracy(
    pred: &[PredictedTree],
    gold: &[GoldSentence],
    groups: &TaxonomyGroups,
    vocab: &RelationVocab,
) -> Result<GroupRelationAccuracy, EvalError> {
    check_aligned(pred, gold)?;
    if !pred.iter().all(PredictedTree::is_labeled) {
        return Err(EvalError::Unlabeled);
    }
    let mut result = GroupRelationAccuracy::default();
    for (p, g) in pred.iter().zip(gold) {
        for (i, &gold_rel) in g.rels.iter().enumerate() {
            let correct = predicted_rel(p, i, vocab) == Some(gold_rel);
            let label = vocab.label(gold_rel).unwrap_or("?");
            result.relations.entry(label.to_string()).or_default().add(correct);
            if let Some(group) = groups.group_of(label) {
                result.groups.entry(group).or_default().add(correct);
            }
        }
    }
    Ok(result)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EdgeLengthStats {
    pub edges: usize,
    pub median: f64,
    pub mean: f64,
    /// Population standard deviation.
    pub std_dev: f64,
    pub fraction_over_10: f64,
}

/// Statistics of `|head - child|` over all gold edges; `None` without edges.
pub fn edge_length_stats(gold: &[GoldSentence]) -> Option<EdgeLengthStats> {
    let mut lengths: Vec<usize> = gold
        .iter()
        .flat_map(|s| {
            s.heads
                .iter()
                .enumerate()
                .filter_map(|(c, h)| h.word().map(|h| h.abs_diff(c)))
        })
        .collect();
    if lengths.is_empty() {
        return None;
    }
    lengths.sort_unstable();
    let n = lengths.len();
    let median = if n % 2 == 1 {
        lengths[n / 2] as f64
    } else {
        (lengths[n / 2 - 1] + lengths[n / 2]) as f64 / 2.0
    };
    let mean = lengths.iter().sum::<usize>() as f64 / n as f64;
    let var = lengths.iter().map(|&l| (l as f64 - mean).powi(2)).sum::<f64>() / n as f64;
    Some(EdgeLengthStats {
        edges: n,
        median,
        mean,
        std_dev: var.sqrt(),
        fraction_over_10: lengths.iter().filter(|&&l| l > 10).count() as f64 / n as f64,
    })
}

impl EvalReport {
    /// Flat TSV: `kind<TAB>name<TAB>value`, one row per metric, relation,
    /// group and offset bucket. Absent values are written as `NA`.
    pub fn to_tsv(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| v.to_string());
        let mut out = String::from("kind\tname\tvalue\n");
        let metrics = [
            ("uas", self.uas),
            ("las", self.las),
            ("uuas", Some(self.uuas)),
            ("rel_acc", self.rel_acc),
            ("tokens", Some(self.tokens as f64)),
        ];
        for (name, v) in metrics {
            out += &format!("metric\t{}\t{}\n", name, fmt(v));
        }
        if let Some(groups) = &self.group_rel_acc {
            for (label, t) in &groups.relations {
                out += &format!("relation\t{}\t{}\n", label, fmt(t.accuracy()));
            }
            for (group, t) in &groups.groups {
                out += &format!("group\t{}\t{}\n", group, fmt(t.accuracy()));
            }
        }
        if let Some(hist) = &self.offset_histogram {
            for (bucket, ratio) in hist {
                out += &format!("offset\t{}\t{}\n", bucket, ratio);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> RelationVocab {
        RelationVocab::ud()
    }

    fn rel(label: &str) -> usize {
        vocab().index_of(label).unwrap()
    }

    fn gold(heads: &[Option<usize>], rels: &[&str]) -> GoldSentence {
        GoldSentence::new(
            "g",
            vec!["w".into(); heads.len()],
            heads.iter().map(|h| h.map_or(Head::Root, Head::Word)).collect(),
            rels.iter().map(|r| rel(r)).collect(),
        )
        .unwrap()
    }

    fn pred(heads: &[Option<usize>], rels: Option<&[&str]>) -> PredictedTree {
        let root = heads.iter().position(Option::is_none).unwrap();
        PredictedTree::from_parents(root, heads, rels.map(|r| r.iter().map(|l| rel(l)).collect()), true).unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let g = gold(&[None, Some(0), Some(0)], &["root", "nsubj", "obj"]);
        let p = pred(&[None, Some(0), Some(0)], Some(&["root", "nsubj", "obj"]));
        let r = score(&[p], &[g], &vocab()).unwrap();
        assert_eq!(r.uas, Some(1.0));
        assert_eq!(r.las, Some(1.0));
        assert_eq!(r.uuas, 1.0);
        assert_eq!(r.rel_acc, Some(1.0));
        assert_eq!(r.offset_histogram.unwrap()[&OffsetBucket::Offset(0)], 1.0);
    }

    #[test]
    fn mixed_three_words() {
        let g = gold(&[None, Some(0), Some(0)], &["root", "nsubj", "obj"]);
        let p = pred(&[None, Some(0), Some(1)], Some(&["root", "nsubj", "obj"]));
        let r = score(&[p], &[g], &vocab()).unwrap();
        assert!((r.uas.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.las.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.rel_acc, Some(1.0));
        assert_eq!(r.uuas, 0.5);
    }

    #[test]
    fn unlabeled_predictions_have_no_las() {
        let g = gold(&[None, Some(0)], &["root", "obj"]);
        let p = pred(&[None, Some(0)], None);
        let r = score(std::slice::from_ref(&p), std::slice::from_ref(&g), &vocab()).unwrap();
        assert_eq!(r.uas, Some(1.0));
        assert_eq!(r.las, None);
        assert_eq!(r.rel_acc, None);
        assert!(matches!(
            group_relation_accuracy(&[p], &[g], &TaxonomyGroups::ud(), &vocab()),
            Err(EvalError::Unlabeled)
        ));
    }

    #[test]
    fn misalignment() {
        let g = gold(&[None, Some(0)], &["root", "obj"]);
        let p = pred(&[None], None);
        assert!(matches!(score(&[p], std::slice::from_ref(&g), &vocab()), Err(EvalError::Alignment(_))));
        assert!(matches!(score(&[], &[g], &vocab()), Err(EvalError::Alignment(_))));
    }

    #[test]
    fn single_word_sentences_measure_root_identification() {
        let g = gold(&[None], &["root"]);
        let p = pred(&[None], Some(&["root"]));
        let r = score(&[p], &[g], &vocab()).unwrap();
        assert_eq!(r.uas, Some(1.0));
        assert_eq!(r.las, Some(1.0));
    }

    #[test]
    fn legacy_ref_never_correct() {
        let vocab = vocab();
        let g = GoldSentence::new(
            "r",
            vec!["a".into(), "b".into()],
            vec![Head::Root, Head::Word(0)],
            vec![vocab.root(), vocab.legacy_ref()],
        )
        .unwrap();
        let p = pred(&[None, Some(0)], Some(&["root", "dep"]));
        let r = score(&[p], &[g], &vocab).unwrap();
        assert_eq!(r.legacy_ref_edges, 1);
        assert_eq!(r.rel_acc, Some(0.5));
        assert_eq!(r.uas, Some(1.0));
        assert_eq!(r.group_rel_acc.unwrap().relation("ref"), Some(0.0));
    }

    #[test]
    fn long_offset_bucket() {
        let mut heads = vec![Some(1); 9];
        heads[1] = None;
        heads.push(Some(1));
        let g = gold(&heads, &["dep", "root", "dep", "dep", "dep", "dep", "dep", "dep", "dep", "dep"]);
        let mut p_heads = heads.clone();
        p_heads[9] = Some(7);
        let p = pred(&p_heads, None);
        let hist = head_offsets(&[p], &[g]).unwrap();
        assert!((hist[&OffsetBucket::AbovePlus5] - 1.0 / 9.0).abs() < 1e-15);
        assert!((hist[&OffsetBucket::Offset(0)] - 8.0 / 9.0).abs() < 1e-15);
        assert!((hist.values().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn offset_tally_ten_words() {
        // Gold: root word 0, word i attached to word i - 1.
        let heads: Vec<Option<usize>> = (0..10).map(|i| if i == 0 { None } else { Some(i - 1) }).collect();
        let g = gold(&heads, &["root", "dep", "dep", "dep", "dep", "dep", "dep", "dep", "dep", "dep"]);
        // Predicted: word 9 and word 8 attach to 0; word 2 attaches to word 0;
        // the rest are correct.
        let mut ph = heads.clone();
        ph[9] = Some(0);
        ph[8] = Some(0);
        ph[2] = Some(0);
        let p = pred(&ph, None);
        let hist = head_offsets(&[p], &[g]).unwrap();
        // Offsets (pred - gold): word 9: 0 - 8 = -8, word 8: 0 - 7 = -7,
        // word 2: 0 - 1 = -1, six others 0. Nine non-root words.
        assert!((hist[&OffsetBucket::BelowMinus5] - 2.0 / 9.0).abs() < 1e-15);
        assert!((hist[&OffsetBucket::Offset(-1)] - 1.0 / 9.0).abs() < 1e-15);
        assert!((hist[&OffsetBucket::Offset(0)] - 6.0 / 9.0).abs() < 1e-15);
        assert_eq!(hist[&OffsetBucket::Offset(3)], 0.0);
    }

    #[test]
    fn all_punct_predictions() {
        // 2 of 5 words are punct (40%).
        let g = gold(
            &[None, Some(0), Some(0), Some(0), Some(0)],
            &["root", "punct", "nsubj", "punct", "obj"],
        );
        let p = pred(
            &[None, Some(0), Some(0), Some(0), Some(0)],
            Some(&["root", "punct", "punct", "punct", "punct"]),
        );
        let groups = group_relation_accuracy(&[p], &[g], &TaxonomyGroups::ud(), &vocab()).unwrap();
        assert_eq!(groups.relation("punct"), Some(1.0));
        assert_eq!(groups.relation("nsubj"), Some(0.0));
        assert_eq!(groups.relation("obj"), Some(0.0));
        assert_eq!(groups.relation("amod"), None);
        assert_eq!(groups.group(TaxonomyGroup::Nominal), Some(0.0));
        // other = root (correct) + 2 punct (correct)
        assert_eq!(groups.group(TaxonomyGroup::Other), Some(1.0));
    }

    #[test]
    fn mixed_group_tally() {
        let g = gold(
            &[None, Some(0), Some(0), Some(1), Some(1), Some(0)],
            &["root", "nsubj", "obj", "det", "amod", "punct"],
        );
        let p = pred(
            &[None, Some(0), Some(0), Some(1), Some(1), Some(0)],
            Some(&["root", "nsubj", "iobj", "det", "det", "punct"]),
        );
        let groups = group_relation_accuracy(&[p], &[g], &TaxonomyGroups::ud(), &vocab()).unwrap();
        // nominal: nsubj right, obj wrong
        assert_eq!(groups.group(TaxonomyGroup::Nominal), Some(0.5));
        assert_eq!(groups.group(TaxonomyGroup::Function), Some(1.0));
        assert_eq!(groups.group(TaxonomyGroup::Modifier), Some(0.0));
        assert_eq!(groups.group(TaxonomyGroup::Other), Some(1.0));
        assert_eq!(groups.group(TaxonomyGroup::Clause), None);
    }

    #[test]
    fn edge_lengths() {
        let chain: Vec<Option<usize>> = (0..5).map(|i| if i == 0 { None } else { Some(i - 1) }).collect();
        let s = gold(&chain, &["root", "dep", "dep", "dep", "dep"]);
        let st = edge_length_stats(&[s]).unwrap();
        assert_eq!((st.median, st.mean, st.std_dev, st.fraction_over_10), (1.0, 1.0, 0.0, 0.0));

        let rels: Vec<&str> = (0..13).map(|i| if i == 0 { "root" } else { "dep" }).collect();
        let lengths_sentence = gold(
            &[None, Some(0), Some(1), Some(2), Some(3), Some(0), Some(5), Some(6), Some(7), Some(8), Some(9), Some(10), Some(0)],
            &rels,
        );
        // Edge lengths: 1,1,1,1,5,1,1,1,1,1,1,12
        let st = edge_length_stats(&[lengths_sentence]).unwrap();
        let lengths = [1.0, 1.0, 1.0, 1.0, 5.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 12.0];
        let mean = 27.0 / 12.0;
        let var = lengths.iter().map(|l: &f64| (l - mean).powi(2)).sum::<f64>() / 12.0;
        assert_eq!(st.median, 1.0);
        assert!((st.mean - mean).abs() < 1e-12);
        assert!((st.std_dev - var.sqrt()).abs() < 1e-12);
        assert!((st.fraction_over_10 - 1.0 / 12.0).abs() < 1e-15);
    }
}
