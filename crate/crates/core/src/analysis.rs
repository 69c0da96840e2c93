//! Transfer-prediction statistics.
//!
//! Rankings follow the convention that higher scores rank first: the best
//! source has rank 0.

use std::collections::BTreeMap;
use std::io::{BufRead, Read};

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

use crate::probe::{ProbeMatrix, ProbeModel};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("{0}")]
    Argument(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("matrix {0} is rank deficient")]
    Rank(String),

    #[error("unknown language `{0}`")]
    Lookup(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Correlation coefficient with a two-sided p-value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Correlation {
    pub rho: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Sample Pearson correlation; the p-value comes from the t statistic with
/// `n - 2` degrees of freedom.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::Argument(format!("lengths {} and {} differ", x.len(), y.len())));
    }
    let n = x.len();
    if n < 3 {
        return Err(AnalysisError::Argument(format!("need at least 3 points, got {}", n)));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AnalysisError::Degenerate("constant input, correlation undefined".into()));
    }
    let rho = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);

    let df = (n - 2) as f64;
    let p_value = if rho.abs() == 1.0 {
        0.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
        (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
    };
    Ok(Correlation { rho, p_value, n })
}

/// Descending ranks, 0-based; tied values share their average rank.
pub fn descending_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let avg = (start + end - 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Weighted Kendall's tau with additive hyperbolic weights.
///
/// A pair `(i, j)` weighs `1/(1 + r_i) + 1/(1 + r_j)`, with `r` the rank in
/// the ground ordering. Concordant pairs add their weight, discordant pairs
/// subtract it, and pairs tied in either list only enter the normalizer.
pub fn weighted_kendall(ground: &[f64], predicted: &[f64]) -> Result<f64, AnalysisError> {
    if ground.len() != predicted.len() {
        return Err(AnalysisError::Argument(format!(
            "lengths {} and {} differ",
            ground.len(),
            predicted.len()
        )));
    }
    let n = ground.len();
    if n < 2 {
        return Err(AnalysisError::Argument("need at least 2 elements".into()));
    }
    if ground.iter().chain(predicted).any(|v| !v.is_finite()) {
        return Err(AnalysisError::Argument("non-finite value".into()));
    }
    let weights: Vec<f64> = descending_ranks(ground).iter().map(|r| 1.0 / (1.0 + r)).collect();
    let order = |a: f64, b: f64| a.partial_cmp(&b).map_or(0, |o| o as i32);

    let (mut concordant, mut discordant, mut total) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let w = weights[i] + weights[j];
            total += w;
            match order(ground[i], ground[j]) * order(predicted[i], predicted[j]) {
                1 => concordant += w,
                -1 => discordant += w,
                _ => {}
            }
        }
    }
    Ok((concordant - discordant) / total)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ZTest {
    pub z: f64,
    pub p_value: f64,
}

/// Difference of two correlations via Fisher's transform, treating the
/// samples as independent.
pub fn correlation_z_test(r1: f64, n1: usize, r2: f64, n2: usize) -> Result<ZTest, AnalysisError> {
    if r1.abs() >= 1.0 || r2.abs() >= 1.0 {
        return Err(AnalysisError::Degenerate(format!("|r| = 1 in ({}, {})", r1, r2)));
    }
    if n1 <= 3 || n2 <= 3 {
        return Err(AnalysisError::Argument("sample sizes must exceed 3".into()));
    }
    let se = (1.0 / (n1 - 3) as f64 + 1.0 / (n2 - 3) as f64).sqrt();
    let z = (r1.atanh() - r2.atanh()) / se;
    let normal = Normal::standard();
    let p_value = (2.0 * (1.0 - normal.cdf(z.abs()))).clamp(0.0, 1.0);
    Ok(ZTest { z, p_value })
}

/// Relative singular value threshold for full column rank.
pub const RANK_TOLERANCE: f64 = 1e-10;

fn orthonormal_basis(m: ArrayView2<f64>, name: &str) -> Result<DMatrix<f64>, AnalysisError> {
    let (rows, cols) = m.dim();
    if cols == 0 || rows < cols {
        return Err(AnalysisError::Rank(name.to_string()));
    }
    let dm = DMatrix::from_fn(rows, cols, |i, j| m[(i, j)]);
    let svd = dm.svd(true, false);
    let max = svd.singular_values.max();
    if max.is_nan() || max <= 0.0 || svd.singular_values.iter().any(|&s| s <= RANK_TOLERANCE * max) {
        return Err(AnalysisError::Rank(name.to_string()));
    }
    Ok(svd.u.expect("left singular vectors requested"))
}

fn singular_values_desc(m: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Principal angles between the column spaces of `a` and `b`, in radians,
/// ascending. Small angles come from sines, large ones from cosines, which
/// keeps both ends accurate.
pub fn principal_angles(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Vec<f64>, AnalysisError> {
    if a.nrows() != b.nrows() {
        return Err(AnalysisError::Argument(format!(
            "matrices live in {} and {} dimensions",
            a.nrows(),
            b.nrows()
        )));
    }
    let qa = orthonormal_basis(a, "A")?;
    let qb = orthonormal_basis(b, "B")?;
    let (qa, qb) = if qa.ncols() >= qb.ncols() { (qa, qb) } else { (qb, qa) };
    let k = qb.ncols();

    let cross = qa.transpose() * &qb;
    let cosines = singular_values_desc(&cross);
    let residual = &qb - &qa * &cross;
    let mut sines = singular_values_desc(&residual);
    sines.reverse();

    Ok((0..k)
        .map(|i| {
            let c = cosines[i].clamp(0.0, 1.0);
            if c * c >= 0.5 {
                sines[i].clamp(0.0, 1.0).asin()
            } else {
                c.acos()
            }
        })
        .collect())
}

/// Mean principal angle between two column spaces, in degrees.
pub fn subspace_angle(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<f64, AnalysisError> {
    let angles = principal_angles(a, b)?;
    Ok(angles.iter().sum::<f64>() / angles.len() as f64 * 180.0 / std::f64::consts::PI)
}

/// Scores of models trained on each source and evaluated on each target.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoreMatrix {
    pub metric: String,
    pub sources: Vec<String>,
    pub targets: Vec<String>,
    /// `sources x targets`
    #[serde(serialize_with = "serialize_rows")]
    pub values: Array2<f64>,
}

fn serialize_rows<S: serde::Serializer>(values: &Array2<f64>, s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(values.rows().into_iter().map(|r| r.to_vec()))
}

impl ScoreMatrix {
    pub fn new(metric: impl Into<String>, sources: Vec<String>, targets: Vec<String>, values: Array2<f64>) -> Result<Self, AnalysisError> {
        if values.dim() != (sources.len(), targets.len()) {
            return Err(AnalysisError::Argument(format!(
                "values have shape {:?} for {} sources and {} targets",
                values.dim(),
                sources.len(),
                targets.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(AnalysisError::Argument("non-finite score".into()));
        }
        Ok(ScoreMatrix {
            metric: metric.into(),
            sources,
            targets,
            values,
        })
    }

    pub fn get(&self, source: &str, target: &str) -> Option<f64> {
        let s = self.sources.iter().position(|x| x == source)?;
        let t = self.targets.iter().position(|x| x == target)?;
        Some(self.values[(s, t)])
    }

    /// Parse TSV: a header with the metric name followed by target codes,
    /// then one row per source.
    pub fn read_tsv<R: BufRead>(reader: R) -> Result<Self, AnalysisError> {
        let mut lines = reader.lines().filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()));
        let header = lines.next().ok_or_else(|| AnalysisError::Format("empty score matrix".into()))??;
        let mut header = header.split('\t');
        let metric = header.next().unwrap_or_default().to_string();
        let targets: Vec<String> = header.map(str::to_string).collect();

        let mut sources = Vec::new();
        let mut values = Vec::new();
        for (row, line) in lines.enumerate() {
            let line = line?;
            let mut fields = line.split('\t');
            sources.push(fields.next().unwrap_or_default().to_string());
            let row_values = fields
                .map(|f| {
                    f.trim()
                        .parse::<f64>()
                        .map_err(|_| AnalysisError::Format(format!("row {}: invalid value `{}`", row + 2, f)))
                })
                .collect::<Result<Vec<_>, _>>()?;
            if row_values.len() != targets.len() {
                return Err(AnalysisError::Format(format!(
                    "row {} has {} values for {} targets",
                    row + 2,
                    row_values.len(),
                    targets.len()
                )));
            }
            values.extend(row_values);
        }
        let values = Array2::from_shape_vec((sources.len(), targets.len()), values).unwrap();
        ScoreMatrix::new(metric, sources, targets, values)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = self.metric.clone();
        for t in &self.targets {
            out.push('\t');
            out += t;
        }
        out.push('\n');
        for (s, row) in self.sources.iter().zip(self.values.rows()) {
            out += s;
            for v in row {
                out += &format!("\t{}", v);
            }
            out.push('\n');
        }
        out
    }

    fn check_same_shape(&self, other: &ScoreMatrix) -> Result<(), AnalysisError> {
        if self.sources != other.sources || self.targets != other.targets {
            return Err(AnalysisError::Argument(format!(
                "score matrices disagree: sources {:?} / {:?}, targets {:?} / {:?}",
                self.sources, other.sources, self.targets, other.targets
            )));
        }
        Ok(())
    }

    fn is_diagonal(&self, s: usize, t: usize) -> bool {
        self.sources[s] == self.targets[t]
    }
}

/// Correlation between a predictor and a parser's transfer scores.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransferCorrelation {
    pub pearson: Correlation,
    /// Mean over targets of the weighted tau of the source ranking.
    pub tau_w: f64,
    /// Weighted tau over all cells at once.
    pub tau_w_global: f64,
    pub tau_w_per_target: BTreeMap<String, f64>,
    /// Fraction of targets whose best source agrees.
    pub best_source_hit_rate: f64,
    pub include_diagonal: bool,
}

fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Correlate predicted transfer scores with a parser's scores. When
/// `include_diagonal` is false, same-language cells are left out of every
/// statistic.
pub fn correlate_scores(
    parser: &ScoreMatrix,
    predictor: &ScoreMatrix,
    include_diagonal: bool,
) -> Result<TransferCorrelation, AnalysisError> {
    parser.check_same_shape(predictor)?;
    let keep = |s: usize, t: usize| include_diagonal || !parser.is_diagonal(s, t);

    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for s in 0..parser.sources.len() {
        for t in 0..parser.targets.len() {
            if keep(s, t) {
                xs.push(predictor.values[(s, t)]);
                ys.push(parser.values[(s, t)]);
            }
        }
    }
    let pearson = pearson(&xs, &ys)?;
    let tau_w_global = weighted_kendall(&ys, &xs)?;

    let mut per_target = BTreeMap::new();
    let mut hits = 0;
    let mut targets_ranked = 0;
    for (t, target) in parser.targets.iter().enumerate() {
        let rows: Vec<usize> = (0..parser.sources.len()).filter(|&s| keep(s, t)).collect();
        if rows.len() < 2 {
            continue;
        }
        let ground: Vec<f64> = rows.iter().map(|&s| parser.values[(s, t)]).collect();
        let pred: Vec<f64> = rows.iter().map(|&s| predictor.values[(s, t)]).collect();
        per_target.insert(target.clone(), weighted_kendall(&ground, &pred)?);
        targets_ranked += 1;
        if argmax_first(&ground) == argmax_first(&pred) {
            hits += 1;
        }
    }
    if targets_ranked == 0 {
        return Err(AnalysisError::Argument("no target has two sources to rank".into()));
    }

    Ok(TransferCorrelation {
        pearson,
        tau_w: per_target.values().sum::<f64>() / per_target.len() as f64,
        tau_w_global,
        tau_w_per_target: per_target,
        best_source_hit_rate: hits as f64 / targets_ranked as f64,
        include_diagonal,
    })
}

/// Probe scores against parser scores over every cell.
pub fn transfer_correlation(parser: &ScoreMatrix, probe: &ScoreMatrix) -> Result<TransferCorrelation, AnalysisError> {
    correlate_scores(parser, probe, true)
}

/// Subspace angles between probes of different languages and their
/// correlation with parser scores.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SsaCorrelation {
    pub matrix: ProbeMatrix,
    /// Mean subspace angle (degrees) between the source and target probes.
    pub angles: ScoreMatrix,
    pub correlation: TransferCorrelation,
}

/// Correlate negative subspace angles with parser scores over the
/// cross-language cells.
pub fn ssa_correlation(
    parser: &ScoreMatrix,
    probes: &BTreeMap<String, ProbeModel>,
    which: ProbeMatrix,
) -> Result<SsaCorrelation, AnalysisError> {
    let matrix_of = |lang: &str| -> Result<&Array2<f64>, AnalysisError> {
        let model = probes
            .get(lang)
            .ok_or_else(|| AnalysisError::Argument(format!("no probe for `{}`", lang)))?;
        model
            .matrix(which)
            .ok_or_else(|| AnalysisError::Argument(format!("probe for `{}` has no {:?} matrix", lang, which)))
    };

    let sources = parser.sources.iter().map(|l| matrix_of(l)).collect::<Result<Vec<_>, _>>()?;
    let targets = parser.targets.iter().map(|l| matrix_of(l)).collect::<Result<Vec<_>, _>>()?;

    let mut angles = Array2::zeros((parser.sources.len(), parser.targets.len()));
    for (s, source) in parser.sources.iter().enumerate() {
        for (t, target) in parser.targets.iter().enumerate() {
            if source != target {
                angles[(s, t)] = subspace_angle(sources[s].view(), targets[t].view())?;
            }
        }
    }
    let angles = ScoreMatrix::new(
        format!("ssa-{:?}", which).to_lowercase(),
        parser.sources.clone(),
        parser.targets.clone(),
        angles,
    )?;
    let negative = ScoreMatrix {
        values: angles.values.mapv(|a| -a),
        ..angles.clone()
    };
    let correlation = correlate_scores(parser, &negative, false)?;
    Ok(SsaCorrelation {
        matrix: which,
        angles,
        correlation,
    })
}

/// Typological feature vectors with missing values.
#[derive(Clone, Debug, PartialEq)]
pub struct Lang2VecTable {
    /// Feature names in syntax, phonology, inventory order.
    pub features: Vec<String>,
    pub vectors: BTreeMap<String, Vec<Option<f64>>>,
}

/// Feature blocks, in concatenation order, by lang2vec name prefix.
const FEATURE_BLOCKS: [&str; 3] = ["S_", "P_", "INV_"];

impl Lang2VecTable {
    /// Read CSV with a `language` column followed by feature columns named
    /// with the `S_`, `P_` or `INV_` prefixes; `--` marks a missing value.
    /// Columns are regrouped into syntax, phonology, inventory order.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, AnalysisError> {
        let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = csv.headers().map_err(|e| AnalysisError::Format(e.to_string()))?.clone();
        if header.len() < 2 {
            return Err(AnalysisError::Format("lang2vec table needs feature columns".into()));
        }

        let mut order = Vec::new();
        for prefix in FEATURE_BLOCKS {
            order.extend((1..header.len()).filter(|&c| header[c].starts_with(prefix)));
        }
        if order.len() != header.len() - 1 {
            let unknown: Vec<&str> = (1..header.len())
                .filter(|c| !order.contains(c))
                .map(|c| &header[c])
                .collect();
            return Err(AnalysisError::Format(format!("features without a known block prefix: {:?}", unknown)));
        }
        let features = order.iter().map(|&c| header[c].to_string()).collect();

        let mut vectors = BTreeMap::new();
        for (row, record) in csv.records().enumerate() {
            let record = record.map_err(|e| AnalysisError::Format(e.to_string()))?;
            let values = order
                .iter()
                .map(|&c| match &record[c] {
                    "--" => Ok(None),
                    v => v.parse::<f64>().map(Some).map_err(|_| {
                        AnalysisError::Format(format!("row {}: invalid value `{}`", row + 2, v))
                    }),
                })
                .collect::<Result<Vec<_>, _>>()?;
            vectors.insert(record[0].to_string(), values);
        }
        Ok(Lang2VecTable { features, vectors })
    }
}

/// Cosine similarity over the features known for both languages.
pub fn lang2vec_similarity(table: &Lang2VecTable, a: &str, b: &str) -> Result<f64, AnalysisError> {
    let va = table.vectors.get(a).ok_or_else(|| AnalysisError::Lookup(a.to_string()))?;
    let vb = table.vectors.get(b).ok_or_else(|| AnalysisError::Lookup(b.to_string()))?;
    let (mut dot, mut na, mut nb, mut support) = (0.0, 0.0, 0.0, 0);
    for (x, y) in va.iter().zip(vb) {
        if let (Some(x), Some(y)) = (x, y) {
            dot += x * y;
            na += x * x;
            nb += y * y;
            support += 1;
        }
    }
    if support == 0 {
        return Err(AnalysisError::Degenerate(format!("`{}` and `{}` share no known features", a, b)));
    }
    if na == 0.0 || nb == 0.0 {
        return Err(AnalysisError::Degenerate(format!("zero vector for `{}` or `{}`", a, b)));
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Typological similarity between every source and target, shaped like `like`.
pub fn lang2vec_matrix(table: &Lang2VecTable, like: &ScoreMatrix) -> Result<ScoreMatrix, AnalysisError> {
    let mut values = Array2::zeros((like.sources.len(), like.targets.len()));
    for (s, source) in like.sources.iter().enumerate() {
        for (t, target) in like.targets.iter().enumerate() {
            values[(s, t)] = lang2vec_similarity(table, source, target)?;
        }
    }
    ScoreMatrix::new("l2v-cosine", like.sources.clone(), like.targets.clone(), values)
}
