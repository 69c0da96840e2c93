//! Tree decoders over probe outputs.
//!
//! Ties are always broken towards the lowest index.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::{self, BufRead, Write};

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::treebank::{
    parse_conllu_raw, parse_head, universal_relation, Head, RelationVocab, TreebankError,
};

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("cannot decode an empty sentence")]
    Empty,

    #[error("{0}")]
    Shape(String),

    #[error("invalid tree: {0}")]
    InvalidTree(String),

    #[error(transparent)]
    Treebank(#[from] TreebankError),
}

/// A decoded tree. Heads are stored per word, which makes every non-root
/// word the child of exactly one edge.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictedTree {
    pub root: usize,
    pub heads: Vec<Head>,
    /// Relation per word; `None` for unlabeled decoders.
    pub rels: Option<Vec<usize>>,
    /// Undirected trees store an arbitrary orientation.
    pub directed: bool,
}

impl PredictedTree {
    /// Build from per-word parents, validating the tree.
    pub fn from_parents(
        root: usize,
        parents: &[Option<usize>],
        rels: Option<Vec<usize>>,
        directed: bool,
    ) -> Result<Self, DecodeError> {
        let heads = parents
            .iter()
            .map(|p| p.map_or(Head::Root, Head::Word))
            .collect();
        let tree = PredictedTree {
            root,
            heads,
            rels,
            directed,
        };
        tree.validate(None)?;
        Ok(tree)
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.rels.is_some()
    }

    /// `(head, child, relation)` for every non-root word.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, Option<usize>)> + '_ {
        self.heads.iter().enumerate().filter_map(move |(child, h)| {
            h.word()
                .map(|head| (head, child, self.rels.as_ref().map(|r| r[child])))
        })
    }

    /// Undirected edges as `(min, max)` pairs.
    pub fn undirected_edges(&self) -> Vec<(usize, usize)> {
        self.edges().map(|(h, c, _)| (h.min(c), h.max(c))).collect()
    }

    /// Check single root, `n - 1` edges, connectivity, and (when a root
    /// relation index is given) that no edge carries the root label.
    pub fn validate(&self, root_relation: Option<usize>) -> Result<(), DecodeError> {
        let n = self.heads.len();
        if n == 0 {
            return Err(DecodeError::Empty);
        }
        let invalid = |m: String| Err(DecodeError::InvalidTree(m));

        if self.root >= n || self.heads[self.root] != Head::Root {
            return invalid(format!("root {} does not have the root head", self.root));
        }
        if self.heads.iter().filter(|h| **h == Head::Root).count() != 1 {
            return invalid("more than one root".into());
        }
        if let Some(rels) = &self.rels {
            if rels.len() != n {
                return invalid(format!("{} relations for {} words", rels.len(), n));
            }
        }
        if self.edges().count() != n - 1 {
            return invalid("edge count differs from n - 1".into());
        }

        let mut children = vec![Vec::new(); n];
        for (head, child, rel) in self.edges() {
            if head >= n || head == child {
                return invalid(format!("word {} has invalid head {}", child, head));
            }
            if rel.is_some() && rel == root_relation {
                return invalid(format!("edge to word {} carries the root relation", child));
            }
            children[head].push(child);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![self.root];
        while let Some(v) = stack.pop() {
            if std::mem::replace(&mut seen[v], true) {
                return invalid("cycle".into());
            }
            stack.extend(&children[v]);
        }
        if let Some(w) = seen.iter().position(|s| !s) {
            return invalid(format!("word {} is not reachable from the root", w));
        }
        Ok(())
    }

    /// Write as CoNLL-U with heads and relation labels; other columns are `_`.
    pub fn write_conllu<W: Write>(
        &self,
        sentence_id: &str,
        words: &[String],
        vocab: &RelationVocab,
        mut w: W,
    ) -> io::Result<()> {
        writeln!(w, "# sent_id = {}", sentence_id)?;
        if !self.directed {
            writeln!(w, "# {} = undirected", DIRECTION_COMMENT)?;
        }
        for (i, head) in self.heads.iter().enumerate() {
            let rel = match (&self.rels, head) {
                (Some(rels), Head::Word(_)) => vocab.label(rels[i]).unwrap_or("_"),
                (Some(_), Head::Root) => "root",
                (None, _) => "_",
            };
            let form = words.get(i).map(String::as_str).unwrap_or("_");
            writeln!(w, "{}\t{}\t_\t_\t_\t_\t{}\t{}\t_\t_", i + 1, form, head.conllu_id(), rel)?;
        }
        writeln!(w)
    }
}

/// Comment key marking undirected predictions in CoNLL-U output.
pub const DIRECTION_COMMENT: &str = "depprobe.direction";

/// Read predicted trees from CoNLL-U. A relation column of `_` marks an
/// unlabeled tree.
pub fn read_predictions<R: BufRead>(
    reader: R,
    vocab: &RelationVocab,
) -> Result<Vec<PredictedTree>, DecodeError> {
    let mut trees = Vec::new();
    for (position, raw) in parse_conllu_raw(reader)?.into_iter().enumerate() {
        let n = raw.words.len();
        let heads = raw
            .heads
            .iter()
            .zip(&raw.lines)
            .map(|(h, &line)| parse_head(h, n, line))
            .collect::<Result<Vec<_>, _>>()?;

        let labeled = raw.rels.iter().all(|r| r != "_");
        let rels = if labeled {
            Some(
                raw.rels
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
                    .collect::<Result<Vec<_>, _>>()?,
            )
        } else {
            None
        };

        let directed = !raw
            .comments
            .iter()
            .any(|c| c.starts_with(DIRECTION_COMMENT) && c.ends_with("undirected"));
        let root = heads.iter().position(|h| *h == Head::Root).ok_or_else(|| {
            DecodeError::InvalidTree(format!("sentence {} has no root", raw.id_or(position)))
        })?;

        let tree = PredictedTree {
            root,
            heads,
            rels,
            directed,
        };
        tree.validate(None).map_err(|e| {
            DecodeError::InvalidTree(format!("sentence {}: {}", raw.id_or(position), e))
        })?;
        trees.push(tree);
    }
    Ok(trees)
}

fn check_square(m: ArrayView2<f64>, what: &str) -> Result<usize, DecodeError> {
    if m.nrows() != m.ncols() {
        return Err(DecodeError::Shape(format!(
            "{} must be square, is {}x{}",
            what,
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Err(DecodeError::Empty);
    }
    Ok(m.nrows())
}

/// Index of the largest value, lowest index on ties.
fn argmax(values: impl IntoIterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Greedy rooted expansion over structural distances with relation labels.
///
/// The root is the word with the highest root probability. The tree then
/// grows by repeatedly attaching the outside word closest to any word
/// already in the tree; the edge points away from the tree. Each attached
/// word takes its most probable non-root relation. `O(n^2)`.
pub fn depprobe_decode(
    distances: ArrayView2<f64>,
    rel_probs: ArrayView2<f64>,
    root_relation: usize,
) -> Result<PredictedTree, DecodeError> {
    let n = check_square(distances, "distance matrix")?;
    if rel_probs.nrows() != n || root_relation >= rel_probs.ncols() {
        return Err(DecodeError::Shape(format!(
            "relation probabilities have shape {:?} for {} words, root relation {}",
            rel_probs.dim(),
            n,
            root_relation
        )));
    }

    let root = argmax(rel_probs.column(root_relation).iter().copied()).unwrap();
    let mut parents = vec![None; n];
    let mut rels = vec![root_relation; n];
    let mut in_tree = vec![false; n];
    in_tree[root] = true;

    // Cheapest connection of every outside word: (distance, tree word).
    let mut best: Vec<(f64, usize)> = (0..n).map(|j| (distances[(root, j)], root)).collect();

    for _ in 1..n {
        let mut pick: Option<usize> = None;
        for j in (0..n).filter(|&j| !in_tree[j]) {
            let better = match pick {
                None => true,
                Some(p) => {
                    let (dj, ij) = best[j];
                    let (dp, ip) = best[p];
                    dj < dp || (dj == dp && ij < ip)
                }
            };
            if better {
                pick = Some(j);
            }
        }
        let child = pick.unwrap();
        let head = best[child].1;
        in_tree[child] = true;
        parents[child] = Some(head);
        rels[child] = argmax(
            rel_probs
                .row(child)
                .iter()
                .enumerate()
                .map(|(k, &p)| if k == root_relation { f64::NEG_INFINITY } else { p }),
        )
        .unwrap();

        for j in (0..n).filter(|&j| !in_tree[j]) {
            let d = distances[(child, j)];
            let (bd, bi) = best[j];
            if d < bd || (d == bd && child < bi) {
                best[j] = (d, child);
            }
        }
    }

    PredictedTree::from_parents(root, &parents, Some(rels), true)
}

#[derive(PartialEq)]
struct Frontier {
    weight: f64,
    vertex: usize,
    from: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    // Reversed: the max-heap pops the lightest edge, then the lowest vertex.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .weight
            .total_cmp(&self.weight)
            .then_with(|| other.vertex.cmp(&self.vertex))
            .then_with(|| other.from.cmp(&self.from))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Minimum spanning tree of the complete graph weighted by `distances`,
/// grown from vertex 0 with a binary heap.
///
/// Edges are returned as `(tree vertex, new vertex)` in insertion order.
pub fn undirected_mst(distances: ArrayView2<f64>) -> Result<Vec<(usize, usize)>, DecodeError> {
    let n = check_square(distances, "distance matrix")?;
    let mut in_tree = vec![false; n];
    let mut edges = Vec::with_capacity(n - 1);
    let mut heap = BinaryHeap::new();
    heap.push(Frontier {
        weight: 0.0,
        vertex: 0,
        from: 0,
    });

    while let Some(Frontier { vertex, from, .. }) = heap.pop() {
        if in_tree[vertex] {
            continue;
        }
        in_tree[vertex] = true;
        if vertex != from {
            edges.push((from, vertex));
        }
        for next in (0..n).filter(|&v| !in_tree[v]) {
            heap.push(Frontier {
                weight: distances[(vertex, next)],
                vertex: next,
                from: vertex,
            });
        }
    }

    Ok(edges)
}

/// The undirected MST as an (undirected) tree oriented away from vertex 0.
pub fn mst_tree(distances: ArrayView2<f64>) -> Result<PredictedTree, DecodeError> {
    let n = check_square(distances, "distance matrix")?;
    let mut parents = vec![None; n];
    for (head, child) in undirected_mst(distances)? {
        parents[child] = Some(head);
    }
    PredictedTree::from_parents(0, &parents, None, false)
}

/// Reading of the depth gate in the score matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DepthGate {
    /// A head deeper than its child is forbidden.
    #[default]
    HeadDeeperForbidden,
    /// A head shallower than its child is forbidden.
    HeadShallowerForbidden,
}

/// Result of depth-gated arborescence decoding.
#[derive(Clone, Debug, PartialEq)]
pub struct DirProbeOutput {
    pub tree: PredictedTree,
    /// Words whose depth gate had to be lifted to obtain a spanning arborescence.
    pub relaxed_words: Vec<usize>,
}

/// Allowed edge scores, `None` marks a forbidden edge. Indexed `[head][child]`.
pub type ScoreMatrix = Vec<Vec<Option<f64>>>;

/// Build the depth-gated score matrix for a fixed root. Self edges and edges
/// into the root are forbidden; the gate is lifted for words listed in `relaxed`.
pub fn dirprobe_scores(
    distances: ArrayView2<f64>,
    depths: ArrayView1<f64>,
    root: usize,
    gate: DepthGate,
    relaxed: &[usize],
) -> ScoreMatrix {
    let n = distances.nrows();
    (0..n)
        .map(|head| {
            (0..n)
                .map(|child| {
                    if head == child || child == root {
                        return None;
                    }
                    let gated = match gate {
                        DepthGate::HeadDeeperForbidden => depths[head] > depths[child],
                        DepthGate::HeadShallowerForbidden => depths[head] < depths[child],
                    };
                    if gated && !relaxed.contains(&child) {
                        None
                    } else {
                        Some(-distances[(head, child)])
                    }
                })
                .collect()
        })
        .collect()
}

/// Depth-gated maximum spanning arborescence decoding.
///
/// The root is the shallowest word. Candidate edges score the negative
/// structural distance; edges violating the depth gate are forbidden. When
/// forbidden edges leave some word unreachable, the gate is lifted for that
/// word alone and the relaxation is reported.
pub fn dirprobe_decode(
    distances: ArrayView2<f64>,
    depths: ArrayView1<f64>,
    gate: DepthGate,
) -> Result<DirProbeOutput, DecodeError> {
    let n = check_square(distances, "distance matrix")?;
    if depths.len() != n {
        return Err(DecodeError::Shape(format!("{} depth scores for {} words", depths.len(), n)));
    }

    let mut root = 0;
    for i in 1..n {
        if depths[i] < depths[root] {
            root = i;
        }
    }

    let mut relaxed = Vec::new();
    let scores = loop {
        let scores = dirprobe_scores(distances, depths, root, gate, &relaxed);

        // Words without any candidate head are relaxed first, then the lowest
        // word that is still unreachable from the root.
        let orphans: Vec<usize> = (0..n)
            .filter(|&c| c != root && !relaxed.contains(&c) && (0..n).all(|h| scores[h][c].is_none()))
            .collect();
        if !orphans.is_empty() {
            relaxed.extend(orphans);
            continue;
        }
        match unreachable_from(&scores, root) {
            Some(w) => relaxed.push(w),
            None => break scores,
        }
    };
    relaxed.sort_unstable();

    let parents = chu_liu_edmonds(&scores, root);
    let tree = PredictedTree::from_parents(root, &parents, None, true)?;
    Ok(DirProbeOutput {
        tree,
        relaxed_words: relaxed,
    })
}

fn unreachable_from(scores: &ScoreMatrix, root: usize) -> Option<usize> {
    let n = scores.len();
    let mut seen = vec![false; n];
    seen[root] = true;
    let mut stack = vec![root];
    while let Some(v) = stack.pop() {
        for c in 0..n {
            if !seen[c] && scores[v][c].is_some() {
                seen[c] = true;
                stack.push(c);
            }
        }
    }
    seen.iter().position(|s| !s)
}

#[derive(Clone, Copy, Debug)]
struct Edge {
    from: usize,
    to: usize,
    weight: f64,
}

/// Maximum spanning arborescence rooted at `root` by recursive cycle
/// contraction. Every non-root vertex must be reachable from the root through
/// allowed edges. Returns the parent of every vertex.
pub fn chu_liu_edmonds(scores: &ScoreMatrix, root: usize) -> Vec<Option<usize>> {
    let n = scores.len();
    let mut edges = Vec::new();
    for (from, row) in scores.iter().enumerate() {
        for (to, w) in row.iter().enumerate() {
            if let Some(weight) = *w {
                if from != to && to != root {
                    edges.push(Edge { from, to, weight });
                }
            }
        }
    }

    let mut parents = vec![None; n];
    for i in arborescence(n, root, &edges) {
        parents[edges[i].to] = Some(edges[i].from);
    }
    parents
}

/// Returns indices into `edges` forming the maximum arborescence.
fn arborescence(n: usize, root: usize, edges: &[Edge]) -> Vec<usize> {
    // Best incoming edge per vertex; ties go to the lowest source, then the
    // earliest edge.
    let mut best_in: Vec<Option<usize>> = vec![None; n];
    for (i, e) in edges.iter().enumerate() {
        if e.to == root || e.from == e.to {
            continue;
        }
        let replace = match best_in[e.to] {
            None => true,
            Some(b) => {
                let b = &edges[b];
                e.weight > b.weight || (e.weight == b.weight && e.from < b.from)
            }
        };
        if replace {
            best_in[e.to] = Some(i);
        }
    }

    let cycle = match find_cycle(n, root, edges, &best_in) {
        None => return best_in.into_iter().flatten().collect(),
        Some(cycle) => cycle,
    };

    // Contract the cycle into a fresh vertex; other vertices keep their
    // relative order.
    let mut in_cycle = vec![false; n];
    for &v in &cycle {
        in_cycle[v] = true;
    }
    let mut component = vec![0; n];
    let mut next = 0;
    for v in 0..n {
        if !in_cycle[v] {
            component[v] = next;
            next += 1;
        }
    }
    let contracted = next;
    for &v in &cycle {
        component[v] = contracted;
    }

    let mut new_edges = Vec::new();
    let mut origin = Vec::new();
    for (i, e) in edges.iter().enumerate() {
        let (from, to) = (component[e.from], component[e.to]);
        if from == to {
            continue;
        }
        let weight = if in_cycle[e.to] {
            e.weight - edges[best_in[e.to].unwrap()].weight
        } else {
            e.weight
        };
        new_edges.push(Edge { from, to, weight });
        origin.push(i);
    }

    let chosen: Vec<usize> = arborescence(contracted + 1, component[root], &new_edges)
        .into_iter()
        .map(|i| origin[i])
        .collect();

    // The edge entering the cycle breaks it at its target.
    let entry = chosen
        .iter()
        .map(|&i| edges[i].to)
        .find(|&v| in_cycle[v])
        .expect("contracted cycle has an incoming edge");

    let mut result = chosen;
    result.extend(
        cycle
            .iter()
            .filter(|&&v| v != entry)
            .map(|&v| best_in[v].unwrap()),
    );
    result
}

fn find_cycle(n: usize, root: usize, edges: &[Edge], best_in: &[Option<usize>]) -> Option<Vec<usize>> {
    // 0 = unvisited, 1 = on current path, 2 = done
    let mut state = vec![0u8; n];
    state[root] = 2;
    for start in 0..n {
        let mut path = Vec::new();
        let mut v = start;
        while state[v] == 0 {
            state[v] = 1;
            path.push(v);
            match best_in[v] {
                Some(e) => v = edges[e].from,
                None => break,
            }
        }
        if state[v] == 1 {
            let pos = path.iter().position(|&u| u == v).unwrap();
            return Some(path[pos..].to_vec());
        }
        for u in path {
            state[u] = 2;
        }
    }
    None
}
