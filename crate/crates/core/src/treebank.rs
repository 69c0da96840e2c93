//! CoNLL-U treebank reading, tree geometry and the UD relation inventory.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The 37 universal dependency relations, in alphabetical order.
pub const UD_RELATIONS: [&str; 37] = [
    "acl",
    "advcl",
    "advmod",
    "amod",
    "appos",
    "aux",
    "case",
    "cc",
    "ccomp",
    "clf",
    "compound",
    "conj",
    "cop",
    "csubj",
    "dep",
    "det",
    "discourse",
    "dislocated",
    "expl",
    "fixed",
    "flat",
    "goeswith",
    "iobj",
    "list",
    "mark",
    "nmod",
    "nsubj",
    "nummod",
    "obj",
    "obl",
    "orphan",
    "parataxis",
    "punct",
    "reparandum",
    "root",
    "vocative",
    "xcomp",
];

/// Legacy label accepted on input. It is mapped to an index one past the
/// probe's label space, so it can be evaluated but never predicted.
pub const LEGACY_REF: &str = "ref";

#[derive(Debug, Error)]
pub enum TreebankError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("sentence {sentence_id}: {message}")]
    Structure { sentence_id: String, message: String },

    #[error("line {line}: relation `{label}` is not a universal dependency relation")]
    Vocabulary { line: usize, label: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Structural problems with a head assignment.
#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum TreeError {
    #[error("empty sentence")]
    Empty,
    #[error("no root word")]
    NoRoot,
    #[error("multiple root words: {0} and {1}")]
    MultipleRoots(usize, usize),
    #[error("word {word} has out-of-range head {head}")]
    HeadOutOfRange { word: usize, head: usize },
    #[error("word {0} is not reachable from the root (cycle)")]
    Unreachable(usize),
}

/// Ordered relation label inventory of the relational probe.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationVocab {
    labels: Vec<String>,
    root: usize,
}

impl RelationVocab {
    /// The 37 UD relations.
    pub fn ud() -> Self {
        RelationVocab::new(UD_RELATIONS.iter().map(|s| s.to_string()).collect())
            .expect("UD relation list is valid")
    }

    /// Build a vocabulary from labels. Labels must be distinct and contain `root`.
    pub fn new(labels: Vec<String>) -> Option<Self> {
        let mut seen = std::collections::HashSet::new();
        if !labels.iter().all(|l| seen.insert(l.as_str())) {
            return None;
        }
        let root = labels.iter().position(|l| l == "root")?;
        Some(RelationVocab { labels, root })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    /// Index used for gold `ref` edges; never produced by a probe.
    pub fn legacy_ref(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        if label == LEGACY_REF {
            return Some(self.legacy_ref());
        }
        self.labels.iter().position(|l| l == label)
    }

    /// Label for an index, including the legacy `ref` slot.
    pub fn label(&self, index: usize) -> Option<&str> {
        if index == self.legacy_ref() {
            Some(LEGACY_REF)
        } else {
            self.labels.get(index).map(String::as_str)
        }
    }
}

/// Head of a word: either the artificial root or another word (0-based).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Head {
    Root,
    Word(usize),
}

impl Head {
    /// CoNLL-U head column value (root is 0, words are 1-based).
    pub fn conllu_id(self) -> usize {
        match self {
            Head::Root => 0,
            Head::Word(i) => i + 1,
        }
    }

    pub fn word(self) -> Option<usize> {
        match self {
            Head::Root => None,
            Head::Word(i) => Some(i),
        }
    }
}

/// Words of a CoNLL-U sentence with the raw head and relation columns.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawSentence {
    pub sentence_id: Option<String>,
    pub comments: Vec<String>,
    pub words: Vec<String>,
    pub heads: Vec<String>,
    pub rels: Vec<String>,
    /// Input line of every word, for error reporting.
    pub lines: Vec<usize>,
}

/// A gold-annotated sentence with its tree geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct GoldSentence {
    pub sentence_id: String,
    pub words: Vec<String>,
    pub heads: Vec<Head>,
    pub rels: Vec<usize>,
    pub tree_dist: Array2<u32>,
    pub depth: Vec<u32>,
}

impl GoldSentence {
    /// Construct from heads and relations, computing distances and depths.
    pub fn new(
        sentence_id: impl Into<String>,
        words: Vec<String>,
        heads: Vec<Head>,
        rels: Vec<usize>,
    ) -> Result<Self, TreeError> {
        assert_eq!(words.len(), heads.len(), "words and heads differ in length");
        assert_eq!(words.len(), rels.len(), "words and relations differ in length");
        let (tree_dist, depth) = compute_tree_geometry(&heads)?;
        Ok(GoldSentence {
            sentence_id: sentence_id.into(),
            words,
            heads,
            rels,
            tree_dist,
            depth,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn root(&self) -> usize {
        self.heads
            .iter()
            .position(|h| *h == Head::Root)
            .expect("gold sentence has a root")
    }

    /// Write the sentence as CoNLL-U, with `_` in all unused columns.
    pub fn write_conllu<W: Write>(&self, vocab: &RelationVocab, mut w: W) -> io::Result<()> {
        writeln!(w, "# sent_id = {}", self.sentence_id)?;
        for (i, word) in self.words.iter().enumerate() {
            let rel = vocab.label(self.rels[i]).unwrap_or("_");
            writeln!(
                w,
                "{}\t{}\t_\t_\t_\t_\t{}\t{}\t_\t_",
                i + 1,
                word,
                self.heads[i].conllu_id(),
                rel
            )?;
        }
        writeln!(w)
    }
}

/// Depths (edges from the root) and pairwise undirected edge counts.
pub fn compute_tree_geometry(heads: &[Head]) -> Result<(Array2<u32>, Vec<u32>), TreeError> {
    let n = heads.len();
    if n == 0 {
        return Err(TreeError::Empty);
    }

    let mut root = None;
    let mut adjacency = vec![Vec::new(); n];
    for (child, head) in heads.iter().enumerate() {
        match *head {
            Head::Root => match root {
                None => root = Some(child),
                Some(r) => return Err(TreeError::MultipleRoots(r, child)),
            },
            Head::Word(h) => {
                if h >= n || h == child {
                    return Err(TreeError::HeadOutOfRange { word: child, head: h });
                }
                adjacency[h].push(child);
                adjacency[child].push(h);
            }
        }
    }
    let root = root.ok_or(TreeError::NoRoot)?;

    // With n - 1 head edges, connectivity implies acyclicity.
    let depth = bfs(&adjacency, root);
    if let Some(word) = depth.iter().position(Option::is_none) {
        return Err(TreeError::Unreachable(word));
    }
    let depth: Vec<u32> = depth.into_iter().map(Option::unwrap).collect();

    let mut dist = Array2::zeros((n, n));
    for source in 0..n {
        for (target, d) in bfs(&adjacency, source).into_iter().enumerate() {
            dist[(source, target)] = d.expect("tree is connected");
        }
    }

    Ok((dist, depth))
}

fn bfs(adjacency: &[Vec<usize>], source: usize) -> Vec<Option<u32>> {
    let mut dist = vec![None; adjacency.len()];
    dist[source] = Some(0);
    let mut queue = VecDeque::from([source]);
    while let Some(v) = queue.pop_front() {
        let d = dist[v].unwrap();
        for &u in &adjacency[v] {
            if dist[u].is_none() {
                dist[u] = Some(d + 1);
                queue.push_back(u);
            }
        }
    }
    dist
}

/// Read CoNLL-U sentences without interpreting heads or relations.
///
/// Multiword token ranges (`3-4`) and empty nodes (`3.1`) are skipped.
pub fn parse_conllu_raw<R: BufRead>(reader: R) -> Result<Vec<RawSentence>, TreebankError> {
    let mut sentences = Vec::new();
    let mut current = RawSentence::empty();

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');

        if line.trim().is_empty() {
            if !current.words.is_empty() {
                sentences.push(std::mem::replace(&mut current, RawSentence::empty()));
            } else {
                current = RawSentence::empty();
            }
            continue;
        }

        if let Some(comment) = line.strip_prefix('#') {
            let comment = comment.trim();
            if let Some(id) = comment.strip_prefix("sent_id") {
                if let Some(id) = id.trim_start().strip_prefix('=') {
                    current.sentence_id = Some(id.trim().to_string());
                }
            }
            current.comments.push(comment.to_string());
            continue;
        }

        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 10 {
            return Err(TreebankError::Parse {
                line: lineno,
                message: format!("expected 10 tab-separated columns, found {}", fields.len()),
            });
        }

        let id = fields[0];
        if id.contains('-') || id.contains('.') {
            continue;
        }
        let id: usize = id.parse().map_err(|_| TreebankError::Parse {
            line: lineno,
            message: format!("invalid token id `{}`", id),
        })?;
        if id != current.words.len() + 1 {
            return Err(TreebankError::Parse {
                line: lineno,
                message: format!("expected token id {}, found {}", current.words.len() + 1, id),
            });
        }

        current.words.push(fields[1].to_string());
        current.heads.push(fields[6].to_string());
        current.rels.push(fields[7].to_string());
        current.lines.push(lineno);
    }

    if !current.words.is_empty() {
        sentences.push(current);
    }

    Ok(sentences)
}

impl RawSentence {
    fn empty() -> Self {
        RawSentence {
            sentence_id: None,
            comments: Vec::new(),
            words: Vec::new(),
            heads: Vec::new(),
            rels: Vec::new(),
            lines: Vec::new(),
        }
    }

    /// The sentence id, falling back to the 1-based position in the file.
    pub fn id_or(&self, position: usize) -> String {
        self.sentence_id
            .clone()
            .unwrap_or_else(|| (position + 1).to_string())
    }
}

/// Parse a CoNLL-U head column.
pub(crate) fn parse_head(value: &str, n: usize, line: usize) -> Result<Head, TreebankError> {
    let head: usize = value.parse().map_err(|_| TreebankError::Parse {
        line,
        message: format!("invalid head `{}`", value),
    })?;
    match head {
        0 => Ok(Head::Root),
        h if h <= n => Ok(Head::Word(h - 1)),
        h => Err(TreebankError::Parse {
            line,
            message: format!("head {} exceeds sentence length {}", h, n),
        }),
    }
}

/// Strip a relation subtype (`nmod:poss` becomes `nmod`).
pub fn universal_relation(label: &str) -> &str {
    label.split(':').next().unwrap_or(label)
}

/// Parse gold CoNLL-U into sentences with tree geometry.
pub fn parse_conllu<R: BufRead>(
    reader: R,
    vocab: &RelationVocab,
) -> Result<Vec<GoldSentence>, TreebankError> {
    parse_conllu_raw(reader)?
        .into_iter()
        .enumerate()
        .map(|(position, raw)| gold_from_raw(raw, position, vocab))
        .collect()
}

/// Read a gold CoNLL-U file.
pub fn read_conllu(path: impl AsRef<Path>, vocab: &RelationVocab) -> Result<Vec<GoldSentence>, TreebankError> {
    parse_conllu(BufReader::new(File::open(path)?), vocab)
}

fn gold_from_raw(
    raw: RawSentence,
    position: usize,
    vocab: &RelationVocab,
) -> Result<GoldSentence, TreebankError> {
    let n = raw.words.len();
    let sentence_id = raw.id_or(position);

    let heads = raw
        .heads
        .iter()
        .zip(&raw.lines)
        .map(|(h, &line)| parse_head(h, n, line))
        .collect::<Result<Vec<_>, _>>()?;

    let rels = raw
        .rels
        .iter()
        .zip(&raw.lines)
        .map(|(r, &line)| {
            vocab
                .index_of(universal_relation(r))
                .ok_or_else(|| TreebankError::Vocabulary {
                    line,
                    label: r.clone(),
                })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let structure_error = |message: String| TreebankError::Structure {
        sentence_id: sentence_id.clone(),
        message,
    };

    for (i, (&head, &rel)) in heads.iter().zip(&rels).enumerate() {
        let is_root_rel = rel == vocab.root();
        if (head == Head::Root) != is_root_rel {
            return Err(structure_error(format!(
                "word {} has head {} but relation {}",
                i + 1,
                head.conllu_id(),
                vocab.label(rel).unwrap_or("?")
            )));
        }
    }

    let (tree_dist, depth) =
        compute_tree_geometry(&heads).map_err(|e| structure_error(e.to_string()))?;

    Ok(GoldSentence {
        sentence_id,
        words: raw.words,
        heads,
        rels,
        tree_dist,
        depth,
    })
}

/// Coarse grouping of relations following the UD taxonomy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaxonomyGroup {
    Nominal,
    Clause,
    Modifier,
    Function,
    Coord,
    Multi,
    Loose,
    Special,
    Other,
}

impl TaxonomyGroup {
    pub const ALL: [TaxonomyGroup; 9] = [
        TaxonomyGroup::Nominal,
        TaxonomyGroup::Clause,
        TaxonomyGroup::Modifier,
        TaxonomyGroup::Function,
        TaxonomyGroup::Coord,
        TaxonomyGroup::Multi,
        TaxonomyGroup::Loose,
        TaxonomyGroup::Special,
        TaxonomyGroup::Other,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaxonomyGroup::Nominal => "nominal",
            TaxonomyGroup::Clause => "clause",
            TaxonomyGroup::Modifier => "modifier",
            TaxonomyGroup::Function => "function",
            TaxonomyGroup::Coord => "coord",
            TaxonomyGroup::Multi => "multi",
            TaxonomyGroup::Loose => "loose",
            TaxonomyGroup::Special => "special",
            TaxonomyGroup::Other => "other",
        }
    }
}

impl fmt::Display for TaxonomyGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Relation label to taxonomy group.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaxonomyGroups {
    groups: BTreeMap<String, TaxonomyGroup>,
}

impl TaxonomyGroups {
    pub fn ud() -> Self {
        use TaxonomyGroup::*;
        let table: [(TaxonomyGroup, &[&str]); 9] = [
            (
                Nominal,
                &[
                    "appos",
                    "dislocated",
                    "expl",
                    "iobj",
                    "nmod",
                    "nsubj",
                    "nummod",
                    "obj",
                    "obl",
                    "vocative",
                ],
            ),
            (Clause, &["acl", "advcl", "ccomp", "csubj", "xcomp"]),
            (Modifier, &["advmod", "amod", "discourse"]),
            (Function, &["aux", "case", "clf", "cop", "det", "mark"]),
            (Coord, &["cc", "conj"]),
            (Multi, &["compound", "fixed", "flat"]),
            (Loose, &["list", "parataxis"]),
            (Special, &["goeswith", "orphan", "reparandum"]),
            (Other, &["dep", "punct", "ref", "root"]),
        ];

        let groups = table
            .iter()
            .flat_map(|(group, labels)| labels.iter().map(move |l| (l.to_string(), *group)))
            .collect();
        TaxonomyGroups { groups }
    }

    pub fn group_of(&self, label: &str) -> Option<TaxonomyGroup> {
        self.groups.get(universal_relation(label)).copied()
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}
