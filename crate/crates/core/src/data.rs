//! Binary symptom datasets: CSV ingestion, missingness statistics, folds and
//! synthetic generation from the factor model.
//!
//! Cause labels are stored 0-based (`0..n_causes`); files use 1-based labels.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{RandomStream, StreamKey};

/// Sentinel stored in place of a missing response.
pub const MISSING: u8 = u8::MAX;

/// Tokens read as a missing response.
pub const MISSING_TOKENS: [&str; 3] = ["NA", ".", ""];

const SYNTH_STREAM: u64 = 0x5917;
const FOLD_STREAM: u64 = 0xF01D;

/// n×p binary responses with a missing mask and optional cause labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SymptomDataset {
    ids: Vec<String>,
    predictor_names: Vec<String>,
    cause_names: Vec<String>,
    /// Row-major, values in {0, 1, MISSING}.
    x: Vec<u8>,
    labels: Option<Vec<usize>>,
}

pub fn default_cause_names(n_causes: usize) -> Vec<String> {
    (1..=n_causes).map(|c| format!("cause_{c}")).collect()
}

impl SymptomDataset {
    /// Builds a dataset from row-major responses (`None` is missing).
    ///
    /// `cause_names` fixes the number of causes; it may be empty for
    /// unlabeled data.
    pub fn new(
        ids: Vec<String>,
        predictor_names: Vec<String>,
        cause_names: Vec<String>,
        responses: &[Option<bool>],
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let n = ids.len();
        let p = predictor_names.len();
        if p == 0 {
            return Err(Error::input("p must be positive"));
        }
        if n == 0 {
            return Err(Error::input("n must be positive"));
        }
        if responses.len() != n * p {
            return Err(Error::input(format!(
                "expected {} responses for {n}x{p} data, got {}",
                n * p,
                responses.len()
            )));
        }
        let mut seen = HashSet::with_capacity(n);
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::input(format!("duplicated id `{id}`")));
            }
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(Error::input("label vector length differs from n"));
            }
            if let Some(bad) = labels.iter().find(|&&y| y >= cause_names.len()) {
                return Err(Error::input(format!(
                    "cause label {} outside 1..={}",
                    bad + 1,
                    cause_names.len()
                )));
            }
        }
        let x = responses
            .iter()
            .map(|r| match r {
                Some(true) => 1,
                Some(false) => 0,
                None => MISSING,
            })
            .collect();
        Ok(Self {
            ids,
            predictor_names,
            cause_names,
            x,
            labels,
        })
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn p(&self) -> usize {
        self.predictor_names.len()
    }

    pub fn n_causes(&self) -> usize {
        self.cause_names.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn predictor_names(&self) -> &[String] {
        &self.predictor_names
    }

    pub fn cause_names(&self) -> &[String] {
        &self.cause_names
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn is_labeled(&self) -> bool {
        self.labels.is_some()
    }

    /// Labels, or an input error naming `what` when absent.
    pub fn require_labels(&self, what: &str) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::input(format!("{what} requires labeled data")))
    }

    /// Raw row in {0, 1, MISSING}.
    pub fn row(&self, i: usize) -> &[u8] {
        let p = self.p();
        &self.x[i * p..(i + 1) * p]
    }

    pub fn value(&self, i: usize, j: usize) -> Option<bool> {
        match self.x[i * self.p() + j] {
            MISSING => None,
            v => Some(v == 1),
        }
    }

    pub fn is_missing(&self, i: usize, j: usize) -> bool {
        self.x[i * self.p() + j] == MISSING
    }

    /// Missing mask, row-major (`true` where the response is missing).
    pub fn mask(&self) -> Vec<bool> {
        self.x.iter().map(|&v| v == MISSING).collect()
    }

    pub fn responses(&self) -> Vec<Option<bool>> {
        (0..self.n())
            .flat_map(|i| (0..self.p()).map(move |j| (i, j)))
            .map(|(i, j)| self.value(i, j))
            .collect()
    }

    /// Number of individuals per cause.
    pub fn cause_counts(&self) -> Option<Vec<usize>> {
        let labels = self.labels.as_ref()?;
        let mut counts = vec![0; self.n_causes()];
        labels.iter().for_each(|&y| counts[y] += 1);
        Some(counts)
    }

    /// Empirical cause distribution of the labels.
    pub fn empirical_csmf(&self) -> Option<Vec<f64>> {
        let n = self.n() as f64;
        self.cause_counts()
            .map(|c| c.into_iter().map(|k| k as f64 / n).collect())
    }

    /// Rows `rows` in the given order.
    pub fn subset(&self, rows: &[usize]) -> Self {
        let p = self.p();
        let mut x = Vec::with_capacity(rows.len() * p);
        rows.iter().for_each(|&i| x.extend_from_slice(self.row(i)));
        Self {
            ids: rows.iter().map(|&i| self.ids[i].clone()).collect(),
            predictor_names: self.predictor_names.clone(),
            cause_names: self.cause_names.clone(),
            x,
            labels: self
                .labels
                .as_ref()
                .map(|l| rows.iter().map(|&i| l[i]).collect()),
        }
    }

    /// Same responses with the labels dropped.
    pub fn without_labels(&self) -> Self {
        Self {
            labels: None,
            ..self.clone()
        }
    }

    /// Declares the cause list, e.g. to match a training set.
    pub fn with_cause_names(mut self, names: Vec<String>) -> Result<Self> {
        if let Some(labels) = &self.labels {
            if labels.iter().any(|&y| y >= names.len()) {
                return Err(Error::input("cause label outside the declared cause list"));
            }
        }
        self.cause_names = names;
        Ok(self)
    }
}

/// Columns to read from a symptom CSV.
#[derive(Clone, Debug)]
pub struct CsvSchema {
    pub id_col: String,
    /// Absent or blank-valued column means unlabeled data.
    pub cause_col: Option<String>,
    /// `None` takes every remaining column as a symptom.
    pub symptom_cols: Option<Vec<String>>,
    /// Declared number of causes; defaults to the largest label.
    pub n_causes: Option<usize>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            id_col: "id".into(),
            cause_col: Some("cause".into()),
            symptom_cols: None,
            n_causes: None,
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<SymptomDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, path, schema)
}

/// Parses symptom CSV from any reader; `source` names it in error messages.
pub fn read_csv<R: Read>(reader: R, source: &Path, schema: &CsvSchema) -> Result<SymptomDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| headers.iter().position(|h| h == name);

    let id_idx = find(&schema.id_col)
        .ok_or_else(|| Error::input(format!("{}: no `{}` column", source.display(), schema.id_col)))?;
    let cause_idx = schema.cause_col.as_deref().and_then(find);
    let symptom_idx: Vec<usize> = match &schema.symptom_cols {
        Some(cols) => cols
            .iter()
            .map(|c| {
                find(c).ok_or_else(|| {
                    Error::input(format!("{}: no symptom column `{c}`", source.display()))
                })
            })
            .collect::<Result<_>>()?,
        None => (0..headers.len())
            .filter(|&k| k != id_idx && Some(k) != cause_idx)
            .collect(),
    };
    if symptom_idx.is_empty() {
        return Err(Error::input(format!("{}: p must be positive", source.display())));
    }

    let parse_err = |row: usize, col: usize, message: String| Error::Parse {
        path: source.to_path_buf(),
        row,
        column: headers[col].clone(),
        message,
    };

    let mut ids = Vec::new();
    let mut responses = Vec::new();
    let mut raw_labels: Vec<Option<usize>> = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        // data rows are numbered from 1, after the header
        let row = r + 1;
        let cell = |k: usize| record.get(k).unwrap_or("").trim();
        ids.push(cell(id_idx).to_string());
        for &k in &symptom_idx {
            let v = match cell(k) {
                "0" => Some(false),
                "1" => Some(true),
                t if MISSING_TOKENS.contains(&t) => None,
                t => return Err(parse_err(row, k, format!("expected 0, 1 or a missing token, got `{t}`"))),
            };
            responses.push(v);
        }
        let label = match cause_idx {
            Some(k) if !cell(k).is_empty() => {
                let y: usize = cell(k)
                    .parse()
                    .map_err(|_| parse_err(row, k, format!("cause `{}` is not a positive integer", cell(k))))?;
                if y == 0 || schema.n_causes.is_some_and(|c| y > c) {
                    return Err(parse_err(
                        row,
                        k,
                        format!("cause {y} outside 1..={}", schema.n_causes.unwrap_or(usize::MAX)),
                    ));
                }
                Some(y - 1)
            }
            _ => None,
        };
        raw_labels.push(label);
    }
    if ids.is_empty() {
        return Err(Error::input(format!("{}: n must be positive", source.display())));
    }

    let n_present = raw_labels.iter().filter(|l| l.is_some()).count();
    let labels = match n_present {
        0 => None,
        k if k == raw_labels.len() => Some(raw_labels.into_iter().flatten().collect::<Vec<_>>()),
        _ => {
            return Err(Error::input(format!(
                "{}: cause column is only partially filled",
                source.display()
            )))
        }
    };
    let n_causes = schema
        .n_causes
        .or_else(|| labels.as_ref().map(|l| l.iter().max().map_or(0, |m| m + 1)))
        .unwrap_or(0);
    let predictor_names = symptom_idx.iter().map(|&k| headers[k].clone()).collect();
    SymptomDataset::new(ids, predictor_names, default_cause_names(n_causes), &responses, labels)
        .map_err(|e| match e {
            Error::Input(m) => Error::input(format!("{}: {m}", source.display())),
            other => other,
        })
}

/// Writes `id,cause,<symptoms...>` with `NA` for missing cells.
pub fn write_csv_to<W: Write>(dataset: &SymptomDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string(), "cause".to_string()];
    header.extend(dataset.predictor_names().iter().cloned());
    w.write_record(&header)?;
    for i in 0..dataset.n() {
        let mut rec = Vec::with_capacity(dataset.p() + 2);
        rec.push(dataset.ids()[i].clone());
        rec.push(dataset.labels().map_or(String::new(), |l| (l[i] + 1).to_string()));
        rec.extend(dataset.row(i).iter().map(|&v| match v {
            MISSING => "NA".to_string(),
            v => v.to_string(),
        }));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn write_csv(dataset: &SymptomDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv_to(dataset, std::io::BufWriter::new(file))
}

/// Per-predictor fraction of missing responses.
pub fn missing_rate(dataset: &SymptomDataset) -> Vec<f64> {
    let n = dataset.n() as f64;
    (0..dataset.p())
        .map(|j| (0..dataset.n()).filter(|&i| dataset.is_missing(i, j)).count() as f64 / n)
        .collect()
}

/// Fold index (0-based) for every individual.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldAssignment {
    pub fold_index: Vec<usize>,
    pub n_folds: usize,
}

impl FoldAssignment {
    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_folds];
        self.fold_index.iter().for_each(|&f| sizes[f] += 1);
        sizes
    }

    pub fn held_out(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_index.len()).filter(|&i| self.fold_index[i] == fold).collect()
    }

    pub fn training(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_index.len()).filter(|&i| self.fold_index[i] != fold).collect()
    }

    /// Stratified folds when the dataset is labeled, plain otherwise.
    pub fn for_dataset(dataset: &SymptomDataset, n_folds: usize, seed: u64) -> Result<Self> {
        match dataset.labels() {
            Some(labels) => make_stratified_folds(labels, dataset.n_causes(), n_folds, seed),
            None => make_folds(dataset.n(), n_folds, seed),
        }
    }
}

fn check_fold_args(n: usize, n_folds: usize) -> Result<()> {
    if n_folds < 2 {
        return Err(Error::param("at least 2 folds are required"));
    }
    if n < n_folds {
        return Err(Error::param(format!("cannot split {n} individuals into {n_folds} folds")));
    }
    Ok(())
}

/// Deals `order` round-robin into folds under a random fold relabeling.
fn deal(order: &[usize], n: usize, n_folds: usize, rng: &mut RandomStream) -> FoldAssignment {
    let mut relabel: Vec<usize> = (0..n_folds).collect();
    relabel.shuffle(rng);
    let mut fold_index = vec![0; n];
    for (k, &i) in order.iter().enumerate() {
        fold_index[i] = relabel[k % n_folds];
    }
    FoldAssignment { fold_index, n_folds }
}

/// Balanced random partition of `0..n` into `n_folds` folds.
pub fn make_folds(n: usize, n_folds: usize, seed: u64) -> Result<FoldAssignment> {
    check_fold_args(n, n_folds)?;
    let mut rng = StreamKey::new(seed).stream(FOLD_STREAM, n as u64, n_folds as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    Ok(deal(&order, n, n_folds, &mut rng))
}

/// Balanced partition that spreads every cause across the folds.
pub fn make_stratified_folds(
    labels: &[usize],
    n_causes: usize,
    n_folds: usize,
    seed: u64,
) -> Result<FoldAssignment> {
    let n = labels.len();
    check_fold_args(n, n_folds)?;
    let mut rng = StreamKey::new(seed).stream(FOLD_STREAM + 1, n as u64, n_folds as u64);
    let mut order = Vec::with_capacity(n);
    for c in 0..n_causes {
        let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng);
        order.extend(members);
    }
    Ok(deal(&order, n, n_folds, &mut rng))
}

/// Parameters of a synthetic draw from the factor model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub p: usize,
    pub n_causes: usize,
    pub k: usize,
    pub csmf: Vec<f64>,
    /// C×p, row-major.
    pub mu: Vec<f64>,
    /// C×p×K, row-major.
    pub lambda: Vec<f64>,
    pub missing_prob: f64,
    /// Per-column override of `missing_prob`.
    #[serde(default)]
    pub column_missing_prob: Option<Vec<f64>>,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Means drawn as `N(0, mean_scale²)` and loadings as `N(0, loading_scale²)`.
    #[allow(clippy::too_many_arguments)]
    pub fn with_random_parameters(
        n: usize,
        p: usize,
        csmf: Vec<f64>,
        k: usize,
        mean_scale: f64,
        loading_scale: f64,
        missing_prob: f64,
        seed: u64,
    ) -> Self {
        let n_causes = csmf.len();
        let mut rng = StreamKey::new(seed).stream(SYNTH_STREAM + 1, 0, 0);
        let mut normal = |s: f64| -> f64 {
            let e: f64 = StandardNormal.sample(&mut rng);
            s * e
        };
        let mu = (0..n_causes * p).map(|_| normal(mean_scale)).collect();
        let lambda = (0..n_causes * p * k).map(|_| normal(loading_scale)).collect();
        Self {
            n,
            p,
            n_causes,
            k,
            csmf,
            mu,
            lambda,
            missing_prob,
            column_missing_prob: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (c, p, k) = (self.n_causes, self.p, self.k);
        if self.n == 0 || p == 0 || c == 0 {
            return Err(Error::param("n, p and the number of causes must be positive"));
        }
        if self.csmf.len() != c || self.mu.len() != c * p || self.lambda.len() != c * p * k {
            return Err(Error::param("synthetic parameter dimensions do not match (C, p, K)"));
        }
        if self.csmf.iter().any(|&w| !(w >= 0.0)) || (self.csmf.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::param("csmf must be a probability vector"));
        }
        let probs = std::iter::once(self.missing_prob)
            .chain(self.column_missing_prob.iter().flatten().copied());
        for q in probs {
            if !(0.0..1.0).contains(&q) {
                return Err(Error::param("missing probabilities must lie in [0, 1)"));
            }
        }
        if self.column_missing_prob.as_ref().is_some_and(|v| v.len() != p) {
            return Err(Error::param("column_missing_prob must have p entries"));
        }
        Ok(())
    }

    fn missing_prob_for(&self, j: usize) -> f64 {
        self.column_missing_prob
            .as_ref()
            .map_or(self.missing_prob, |v| v[j])
    }
}

/// Simulates a labeled dataset from the probit factor model with MCAR masking.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SymptomDataset> {
    spec.validate()?;
    let (p, k) = (spec.p, spec.k);
    let key = StreamKey::new(spec.seed);
    let mut labels = Vec::with_capacity(spec.n);
    let mut responses = Vec::with_capacity(spec.n * p);
    let mut eta = vec![0.0; k];
    for i in 0..spec.n {
        let mut rng = key.stream(SYNTH_STREAM, 0, i as u64);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut y = spec.n_causes - 1;
        for (c, &w) in spec.csmf.iter().enumerate() {
            acc += w;
            if u < acc {
                y = c;
                break;
            }
        }
        labels.push(y);
        eta.iter_mut().for_each(|e| *e = StandardNormal.sample(&mut rng));
        for j in 0..p {
            let base = (y * p + j) * k;
            let loading: f64 = (0..k).map(|f| spec.lambda[base + f] * eta[f]).sum();
            let noise: f64 = StandardNormal.sample(&mut rng);
            let z = spec.mu[y * p + j] + loading + noise;
            let masked = rng.random::<f64>() < spec.missing_prob_for(j);
            responses.push(if masked { None } else { Some(z > 0.0) });
        }
    }
    let ids = (1..=spec.n).map(|i| i.to_string()).collect();
    let predictor_names = (1..=p).map(|j| format!("s{j}")).collect();
    SymptomDataset::new(
        ids,
        predictor_names,
        default_cause_names(spec.n_causes),
        &responses,
        Some(labels),
    )
}
