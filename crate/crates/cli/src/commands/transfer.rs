//! `transfer`: how well probe-derived scores predict parser transfer scores.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::Args;
use depprobe::analysis::{
    correlate_scores, correlation_z_test, lang2vec_matrix, ssa_correlation, Lang2VecTable, ScoreMatrix,
    TransferCorrelation,
};
use depprobe::{ProbeMatrix, ProbeModel};
use ndarray::Array2;
use serde::Serialize;

use crate::error::{CliError, PathContext};
use crate::inputs;
use crate::manifest::{RunDir, RunManifest};

/// Parse `NAME=PATH`.
pub fn named_path(value: &str) -> Result<(String, PathBuf), String> {
    match value.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
        _ => Err(format!("expected NAME=PATH, got `{}`", value)),
    }
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct TransferArgs {
    /// Parser transfer scores: TSV with a header of targets and one row per source.
    #[arg(long)]
    pub parser_scores: PathBuf,
    /// Probe transfer scores in the same layout, as NAME=PATH. Repeatable.
    #[arg(long = "probe-scores", value_parser = named_path)]
    pub probe_scores: Vec<(String, PathBuf)>,
    /// Probe checkpoint of one language, as LANG=PATH. Repeatable.
    #[arg(long = "probe", value_parser = named_path)]
    pub probes: Vec<(String, PathBuf)>,
    /// Typological feature table (CSV, `--` for missing values).
    #[arg(long)]
    pub lang2vec: Option<PathBuf>,
    /// Leave same-language cells out of the correlations.
    #[arg(long)]
    pub exclude_diagonal: bool,
    #[arg(long)]
    pub out: PathBuf,
}

pub const TRANSFER_JSON: &str = "reports/transfer.json";
pub const CORRELATIONS_TSV: &str = "reports/correlations.tsv";

/// Correlation of one predictor with the parser scores.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PredictorResult {
    pub name: String,
    pub correlation: TransferCorrelation,
    /// Best source per target according to the predictor.
    pub best_sources: BTreeMap<String, String>,
    /// Best source per target according to the parser, over the same cells.
    pub parser_best_sources: BTreeMap<String, String>,
}

/// Fisher Z-test between two predictors' Pearson correlations.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairTest {
    pub a: String,
    pub b: String,
    pub z: Option<f64>,
    pub p_value: Option<f64>,
    /// Why the test could not be computed.
    pub skipped: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransferReport {
    pub metric: String,
    pub sources: Vec<String>,
    pub targets: Vec<String>,
    pub include_diagonal: bool,
    pub predictors: Vec<PredictorResult>,
    pub z_tests: Vec<PairTest>,
    pub z_test_note: String,
}

const Z_TEST_NOTE: &str = "Z-tests treat the two correlations as independent samples; \
     correlations computed over the same language pairs are dependent, so p-values are approximate";

/// Describe how `got` differs from `expected` as a set, or `None` if equal.
pub fn language_difference(expected: &[String], got: &[String]) -> Option<String> {
    let e: BTreeSet<&String> = expected.iter().collect();
    let g: BTreeSet<&String> = got.iter().collect();
    if e == g && expected.len() == got.len() {
        return None;
    }
    let missing: Vec<&&String> = e.difference(&g).collect();
    let extra: Vec<&&String> = g.difference(&e).collect();
    Some(format!("missing {:?}, unexpected {:?}", missing, extra))
}

/// Rearrange `m` into the source and target order of `like`.
fn reorder(m: &ScoreMatrix, like: &ScoreMatrix) -> Result<ScoreMatrix, CliError> {
    if let Some(diff) = language_difference(&like.sources, &m.sources) {
        return Err(CliError::argument(format!("source languages differ: {}", diff)));
    }
    if let Some(diff) = language_difference(&like.targets, &m.targets) {
        return Err(CliError::argument(format!("target languages differ: {}", diff)));
    }
    let values = Array2::from_shape_fn((like.sources.len(), like.targets.len()), |(s, t)| {
        m.get(&like.sources[s], &like.targets[t]).expect("same language sets")
    });
    Ok(ScoreMatrix::new(m.metric.clone(), like.sources.clone(), like.targets.clone(), values)?)
}

fn read_scores(run: &mut RunDir, path: &Path) -> Result<ScoreMatrix, CliError> {
    let file = File::open(path).at(path)?;
    let m = ScoreMatrix::read_tsv(BufReader::new(file)).at(path)?;
    run.record_input(path)?;
    Ok(m)
}

/// First-argmax source per target over the kept cells.
fn best_sources(m: &ScoreMatrix, include_diagonal: bool) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for (t, target) in m.targets.iter().enumerate() {
        let mut best: Option<usize> = None;
        for (s, source) in m.sources.iter().enumerate() {
            if !include_diagonal && source == target {
                continue;
            }
            if best.is_none_or(|b| m.values[(s, t)] > m.values[(b, t)]) {
                best = Some(s);
            }
        }
        if let Some(b) = best {
            out.insert(target.clone(), m.sources[b].clone());
        }
    }
    out
}

fn predictor(
    name: String,
    parser: &ScoreMatrix,
    scores: &ScoreMatrix,
    correlation: TransferCorrelation,
) -> PredictorResult {
    let include = correlation.include_diagonal;
    PredictorResult {
        name,
        best_sources: best_sources(scores, include),
        parser_best_sources: best_sources(parser, include),
        correlation,
    }
}

pub fn run(args: &TransferArgs) -> Result<RunManifest, CliError> {
    let mut run = RunDir::create(&args.out, "transfer")?;
    let parser = read_scores(&mut run, &args.parser_scores)?;
    let include_diagonal = !args.exclude_diagonal;
    let mut predictors = Vec::new();
    let mut names = BTreeSet::new();
    let mut claim = |name: &str| {
        if names.insert(name.to_string()) {
            Ok(())
        } else {
            Err(CliError::argument(format!("predictor `{}` given twice", name)))
        }
    };

    for (name, path) in &args.probe_scores {
        claim(name)?;
        let scores = reorder(&read_scores(&mut run, path)?, &parser).map_err(|e| e.at(path))?;
        let correlation = correlate_scores(&parser, &scores, include_diagonal).at(path)?;
        predictors.push(predictor(name.clone(), &parser, &scores, correlation));
    }

    if !args.probes.is_empty() {
        let mut models: BTreeMap<String, ProbeModel> = BTreeMap::new();
        for (lang, path) in &args.probes {
            if models.insert(lang.clone(), inputs::checkpoint(&mut run, path)?).is_some() {
                return Err(CliError::argument(format!("two probes for `{}`", lang)));
            }
        }
        let langs: BTreeSet<String> = parser.sources.iter().chain(&parser.targets).cloned().collect();
        let langs: Vec<String> = langs.into_iter().collect();
        let have: Vec<String> = models.keys().cloned().collect();
        if let Some(diff) = language_difference(&langs, &have) {
            return Err(CliError::argument(format!("probe languages differ from score languages: {}", diff)));
        }
        for which in [ProbeMatrix::Structural, ProbeMatrix::Depth, ProbeMatrix::Relational] {
            if models.values().any(|m| m.matrix(which).is_none()) {
                continue;
            }
            let ssa = ssa_correlation(&parser, &models, which)?;
            let name = ssa.angles.metric.clone();
            run.write(&format!("reports/{}.tsv", name), ssa.angles.to_tsv().as_bytes())?;
            let negative = ScoreMatrix {
                values: ssa.angles.values.mapv(|a| -a),
                ..ssa.angles.clone()
            };
            claim(&name)?;
            predictors.push(predictor(name, &parser, &negative, ssa.correlation));
        }
    }

    if let Some(path) = &args.lang2vec {
        let file = File::open(path).at(path)?;
        let table = Lang2VecTable::read_csv(file).at(path)?;
        run.record_input(path)?;
        let langs: BTreeSet<&String> = parser.sources.iter().chain(&parser.targets).collect();
        let missing: Vec<&&String> = langs.iter().filter(|l| !table.vectors.contains_key(**l)).collect();
        if !missing.is_empty() {
            return Err(CliError::argument(format!("languages missing from the feature table: {:?}", missing)).at(path));
        }
        let similarity = lang2vec_matrix(&table, &parser)?;
        run.write("reports/lang2vec.tsv", similarity.to_tsv().as_bytes())?;
        let correlation = correlate_scores(&parser, &similarity, include_diagonal)?;
        claim("lang2vec")?;
        predictors.push(predictor("lang2vec".into(), &parser, &similarity, correlation));
    }

    if predictors.is_empty() {
        return Err(CliError::argument("nothing to correlate: give --probe-scores, --probe or --lang2vec"));
    }

    let mut z_tests = Vec::new();
    for (i, a) in predictors.iter().enumerate() {
        for b in &predictors[i + 1..] {
            let (ra, rb) = (a.correlation.pearson, b.correlation.pearson);
            let test = correlation_z_test(ra.rho, ra.n, rb.rho, rb.n);
            z_tests.push(PairTest {
                a: a.name.clone(),
                b: b.name.clone(),
                z: test.as_ref().ok().map(|t| t.z),
                p_value: test.as_ref().ok().map(|t| t.p_value),
                skipped: test.err().map(|e| e.to_string()),
            });
        }
    }

    let mut tsv = String::from("predictor\trho\tp_value\tn\ttau_w\ttau_w_global\tbest_source_hit_rate\tinclude_diagonal\n");
    for p in &predictors {
        let c = &p.correlation;
        tsv += &format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            p.name, c.pearson.rho, c.pearson.p_value, c.pearson.n, c.tau_w, c.tau_w_global, c.best_source_hit_rate, c.include_diagonal
        );
    }
    run.write(CORRELATIONS_TSV, tsv.as_bytes())?;

    let report = TransferReport {
        metric: parser.metric.clone(),
        sources: parser.sources.clone(),
        targets: parser.targets.clone(),
        include_diagonal,
        predictors,
        z_tests,
        z_test_note: Z_TEST_NOTE.to_string(),
    };
    run.write_json(TRANSFER_JSON, &report)?;
    run.finish(args, Vec::new())
}
