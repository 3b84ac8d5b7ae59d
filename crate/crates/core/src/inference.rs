//! Chain orchestration: burn-in and thinning, prediction of target causes and
//! their population distribution, and the model-based association measure δ.

use log::warn;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{missing_rate, SymptomDataset};
use crate::error::{Error, Result};
use crate::model::{
    draw_factors, marginal_symptom_probs, purpose, CauseLikelihoodTable, FactorParams, GibbsSampler,
    DEFAULT_A,
};
use crate::numerics::{log_sum_exp, mean, quantile, sample_dirichlet, StreamKey};

/// How the cause-weight Dirichlet is updated in δ mode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DirichletUpdate {
    /// `Dirichlet(n_c + 1)`.
    #[default]
    Counts,
    /// `Dirichlet(n_c / n + 1)`.
    Proportions,
}

impl std::str::FromStr for DirichletUpdate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "counts" => Ok(Self::Counts),
            "proportions" => Ok(Self::Proportions),
            other => Err(Error::Config(format!("unknown dirichlet update `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    /// Sweeps after burn-in.
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Monte Carlo size for the cause likelihood.
    pub r: usize,
    /// Number of latent factors.
    pub k: usize,
    pub a: f64,
    pub seed: u64,
    pub dirichlet_update: DirichletUpdate,
    /// Keep a copy of the parameters at every saved iteration.
    pub keep_params: bool,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            iterations: 5000,
            burn_in: 500,
            thin: 10,
            r: 200,
            k: 2,
            a: DEFAULT_A,
            seed: 1,
            dirichlet_update: DirichletUpdate::Counts,
            keep_params: false,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be positive".into()));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if self.r == 0 {
            return Err(Error::Config("R must be at least 1".into()));
        }
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(Error::Config("a must be positive".into()));
        }
        Ok(())
    }

    /// Number of saved draws: `floor(iterations / thin)`.
    pub fn saved_draws(&self) -> usize {
        self.iterations / self.thin
    }

    /// Sweep numbers (1-based, counting burn-in) at which draws are saved.
    pub fn saved_iterations(&self) -> impl Iterator<Item = usize> + '_ {
        (1..=self.saved_draws()).map(move |s| self.burn_in + s * self.thin)
    }

    fn is_saved(&self, sweep: usize) -> bool {
        sweep > self.burn_in && (sweep - self.burn_in).is_multiple_of(self.thin)
    }
}

/// Options for δ estimation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaOptions {
    /// Predictors missing more often than this get δ = 0.
    pub missing_threshold: f64,
    pub per_cause: bool,
}

impl Default for DeltaOptions {
    fn default() -> Self {
        Self {
            missing_threshold: 0.05,
            per_cause: false,
        }
    }
}

/// Thinned posterior output.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PosteriorDraws {
    pub cause_names: Vec<String>,
    pub predictor_names: Vec<String>,
    pub target_ids: Vec<String>,
    /// Sweep number of every saved draw.
    pub saved_iterations: Vec<usize>,
    /// draws × C.
    pub csmf_draws: Vec<Vec<f64>>,
    /// draws × targets × C.
    pub individual_prob_draws: Option<Vec<Vec<Vec<f64>>>>,
    /// draws × targets, 0-based causes.
    pub sampled_causes: Option<Vec<Vec<usize>>>,
    /// draws × p.
    pub delta_draws: Option<Vec<Vec<f64>>>,
    /// draws × C × p.
    pub delta_per_cause_draws: Option<Vec<Vec<Vec<f64>>>>,
    /// Predictors left out of δ estimation by the missing-rate rule.
    pub delta_excluded: Option<Vec<bool>>,
    pub param_draws: Option<Vec<FactorParams>>,
}

/// Posterior mean and central 95% interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub q025: f64,
    pub q975: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        Self {
            mean: mean(values),
            q025: quantile(values, 0.025),
            q975: quantile(values, 0.975),
        }
    }
}

/// Column-wise summaries of a draws × columns array.
pub fn summarize_columns(draws: &[Vec<f64>]) -> Vec<Summary> {
    let width = draws.first().map_or(0, Vec::len);
    (0..width)
        .map(|col| Summary::of(&draws.iter().map(|d| d[col]).collect::<Vec<_>>()))
        .collect()
}

impl PosteriorDraws {
    pub fn n_draws(&self) -> usize {
        self.saved_iterations.len()
    }

    pub fn n_causes(&self) -> usize {
        self.cause_names.len()
    }

    /// Posterior mean of the sampled-cause CSMF.
    pub fn posterior_mean_csmf(&self) -> Vec<f64> {
        summarize_columns(&self.csmf_draws).iter().map(|s| s.mean).collect()
    }

    /// Per-draw mean of individual probabilities (Rao-Blackwellized CSMF).
    pub fn mean_probability_csmf_draws(&self) -> Option<Vec<Vec<f64>>> {
        let probs = self.individual_prob_draws.as_ref()?;
        Some(
            probs
                .iter()
                .map(|draw| {
                    let n = draw.len() as f64;
                    (0..self.n_causes())
                        .map(|c| draw.iter().map(|row| row[c]).sum::<f64>() / n)
                        .collect()
                })
                .collect(),
        )
    }

    pub fn csmf_summary(&self) -> Vec<Summary> {
        summarize_columns(&self.csmf_draws)
    }
}

fn check_compatible(train: &SymptomDataset, target: &SymptomDataset) -> Result<()> {
    if train.predictor_names() != target.predictor_names() {
        return Err(Error::input(format!(
            "training and target predictors differ ({} vs {} columns, or different names/order)",
            train.p(),
            target.p()
        )));
    }
    Ok(())
}

fn warn_absent_causes(train: &SymptomDataset) {
    if let Some(counts) = train.cause_counts() {
        for (c, &k) in counts.iter().enumerate() {
            if k == 0 {
                warn!(
                    "cause {} ({}) has no training individuals; its likelihood is prior-only",
                    c + 1,
                    train.cause_names()[c]
                );
            }
        }
    }
}

/// Categorical draw from probabilities that sum to one.
pub(crate) fn sample_categorical<G: Rng + ?Sized>(probs: &[f64], rng: &mut G) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (c, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return c;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Normalizes log weights into probabilities summing to one.
pub(crate) fn normalize_log_weights(log_weights: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(log_weights);
    let mut probs: Vec<f64> = log_weights.iter().map(|l| (l - lse).exp()).collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    probs
}

/// Cause probabilities and sampled causes for one saved iteration.
pub(crate) struct CausePrediction {
    pub probs: Vec<Vec<f64>>,
    pub causes: Vec<usize>,
    pub csmf: Vec<f64>,
}

/// Scores every target row under a uniform cause prior and samples causes.
pub(crate) fn predict_causes<F>(
    target: &SymptomDataset,
    n_causes: usize,
    key: StreamKey,
    sweep: usize,
    log_likelihoods: F,
) -> CausePrediction
where
    F: Fn(&[u8]) -> Vec<f64> + Sync,
{
    let scored: Vec<(Vec<f64>, usize)> = (0..target.n())
        .into_par_iter()
        .map(|i| {
            let probs = normalize_log_weights(&log_likelihoods(target.row(i)));
            let cause = sample_categorical(&probs, &mut key.stream(purpose::CAUSE, sweep as u64, i as u64));
            (probs, cause)
        })
        .collect();
    let mut counts = vec![0usize; n_causes];
    scored.iter().for_each(|(_, c)| counts[*c] += 1);
    let n = target.n() as f64;
    let (probs, causes) = scored.into_iter().unzip();
    CausePrediction {
        probs,
        causes,
        csmf: counts.into_iter().map(|k| k as f64 / n).collect(),
    }
}

/// Runs the chain on `train` and predicts the causes of `target`.
pub fn run_gibbs(train: &SymptomDataset, target: &SymptomDataset, config: &McmcConfig) -> Result<PosteriorDraws> {
    config.validate()?;
    check_compatible(train, target)?;
    train.require_labels("training data")?;
    warn_absent_causes(train);
    let key = StreamKey::new(config.seed);
    let mut sampler = GibbsSampler::new(train, config.k, config.a, key)?;
    let n_causes = train.n_causes();

    let mut out = PosteriorDraws {
        cause_names: train.cause_names().to_vec(),
        predictor_names: train.predictor_names().to_vec(),
        target_ids: target.ids().to_vec(),
        individual_prob_draws: Some(Vec::with_capacity(config.saved_draws())),
        sampled_causes: Some(Vec::with_capacity(config.saved_draws())),
        param_draws: config.keep_params.then(Vec::new),
        ..PosteriorDraws::default()
    };
    for sweep in 1..=config.burn_in + config.iterations {
        sampler.sweep()?;
        if !config.is_saved(sweep) {
            continue;
        }
        // one set of factor draws shared by every cause and target individual
        let draws = draw_factors(config.k, config.r, &mut key.stream(purpose::MC_FACTORS, sweep as u64, 0));
        let table = CauseLikelihoodTable::new(&sampler.params, &draws);
        let pred = predict_causes(target, n_causes, key, sweep, |row| table.log_likelihoods(row));
        out.saved_iterations.push(sweep);
        out.csmf_draws.push(pred.csmf);
        out.individual_prob_draws.as_mut().unwrap().push(pred.probs);
        out.sampled_causes.as_mut().unwrap().push(pred.causes);
        if let Some(params) = out.param_draws.as_mut() {
            params.push(sampler.params.clone());
        }
    }
    Ok(out)
}

/// A probability table over (cause, response) or any two discrete variables.
#[derive(Clone, Debug, PartialEq)]
pub struct JointTable {
    pub n_rows: usize,
    pub n_cols: usize,
    /// Row-major.
    pub cells: Vec<f64>,
}

impl JointTable {
    pub fn new(n_rows: usize, n_cols: usize, cells: Vec<f64>) -> Result<Self> {
        if cells.len() != n_rows * n_cols {
            return Err(Error::input("table cell count does not match its shape"));
        }
        Ok(Self { n_rows, n_cols, cells })
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.cells[r * self.n_cols + c]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.cells.chunks(self.n_cols).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        (0..self.n_cols)
            .map(|c| (0..self.n_rows).map(|r| self.get(r, c)).sum())
            .collect()
    }

    pub fn total(&self) -> f64 {
        self.cells.iter().sum()
    }
}

/// δ² = Σ (P(c,d) − P(c)P(d))² / (P(c)P(d)) / (min{m_y, m_x} − 1).
pub fn delta_squared(table: &JointTable) -> Result<f64> {
    if table.n_rows < 2 || table.n_cols < 2 {
        return Err(Error::Degenerate("δ needs at least two levels per variable".into()));
    }
    let rows = table.row_sums();
    let cols = table.col_sums();
    if rows.iter().chain(&cols).any(|&m| !(m > 0.0)) {
        return Err(Error::Degenerate("a marginal probability is zero".into()));
    }
    let mut acc = 0.0;
    for (r, &pr) in rows.iter().enumerate() {
        for (c, &pc) in cols.iter().enumerate() {
            let expected = pr * pc;
            let diff = table.get(r, c) - expected;
            acc += diff * diff / expected;
        }
    }
    Ok(acc / (table.n_rows.min(table.n_cols) - 1) as f64)
}

/// δ in [0, 1]; a degenerate table (a variable with one level) gives 0.
pub fn delta(table: &JointTable) -> f64 {
    match delta_squared(table) {
        Ok(d2) => d2.sqrt().min(1.0),
        Err(_) => 0.0,
    }
}

/// C×2 table `w_c · P(x_j = d | c)` for the current parameters.
pub fn model_joint_table(params: &FactorParams, cause_weights: &[f64], j: usize) -> JointTable {
    let cells = cause_weights
        .iter()
        .enumerate()
        .flat_map(|(c, &w)| {
            let (p0, p1) = marginal_symptom_probs(params, c, j);
            [w * p0, w * p1]
        })
        .collect();
    JointTable {
        n_rows: cause_weights.len(),
        n_cols: 2,
        cells,
    }
}

/// 2×2 table of "cause `c`" against "any other cause".
pub fn collapse_cause(table: &JointTable, c: usize) -> JointTable {
    let mut cells = vec![0.0; 2 * table.n_cols];
    for r in 0..table.n_rows {
        let dst = if r == c { 0 } else { 1 };
        for d in 0..table.n_cols {
            cells[dst * table.n_cols + d] += table.get(r, d);
        }
    }
    JointTable {
        n_rows: 2,
        n_cols: table.n_cols,
        cells,
    }
}

/// Runs the chain on labeled data and records δ for every predictor at the
/// saved iterations.
pub fn run_delta_mode(train: &SymptomDataset, config: &McmcConfig, options: &DeltaOptions) -> Result<PosteriorDraws> {
    config.validate()?;
    let labels = train.require_labels("δ estimation")?;
    warn_absent_causes(train);
    let (n_causes, p) = (train.n_causes(), train.p());
    let key = StreamKey::new(config.seed);
    let mut sampler = GibbsSampler::new(train, config.k, config.a, key)?;

    let excluded: Vec<bool> = missing_rate(train)
        .into_iter()
        .map(|rate| rate > options.missing_threshold)
        .collect();
    let mut counts = vec![0.0; n_causes];
    labels.iter().for_each(|&y| counts[y] += 1.0);
    let n = train.n() as f64;
    let alpha: Vec<f64> = counts
        .iter()
        .map(|&k| match config.dirichlet_update {
            DirichletUpdate::Counts => k + 1.0,
            DirichletUpdate::Proportions => k / n + 1.0,
        })
        .collect();

    let mut out = PosteriorDraws {
        cause_names: train.cause_names().to_vec(),
        predictor_names: train.predictor_names().to_vec(),
        delta_draws: Some(Vec::new()),
        delta_per_cause_draws: options.per_cause.then(Vec::new),
        delta_excluded: Some(excluded.clone()),
        param_draws: config.keep_params.then(Vec::new),
        ..PosteriorDraws::default()
    };
    for sweep in 1..=config.burn_in + config.iterations {
        sampler.sweep()?;
        if !config.is_saved(sweep) {
            continue;
        }
        let weights = sample_dirichlet(&alpha, &mut key.stream(purpose::WEIGHTS, sweep as u64, 0))?;
        let params = &sampler.params;
        let tables: Vec<Option<JointTable>> = (0..p)
            .map(|j| (!excluded[j]).then(|| model_joint_table(params, &weights, j)))
            .collect();
        let deltas = tables.iter().map(|t| t.as_ref().map_or(0.0, delta)).collect();
        if let Some(per_cause) = out.delta_per_cause_draws.as_mut() {
            per_cause.push(
                (0..n_causes)
                    .map(|c| {
                        tables
                            .iter()
                            .map(|t| t.as_ref().map_or(0.0, |t| delta(&collapse_cause(t, c))))
                            .collect()
                    })
                    .collect(),
            );
        }
        out.saved_iterations.push(sweep);
        out.csmf_draws.push(weights);
        out.delta_draws.as_mut().unwrap().push(deltas);
        if let Some(saved) = out.param_draws.as_mut() {
            saved.push(params.clone());
        }
    }
    Ok(out)
}

/// One predictor's δ summary, ranked by posterior mean.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedPredictor {
    pub rank: usize,
    pub index: usize,
    pub name: String,
    pub summary: Summary,
    pub excluded: bool,
}

/// Orders predictors by posterior mean δ, largest first (ties by position).
pub fn rank_predictors(delta_draws: &[Vec<f64>], names: &[String], excluded: &[bool]) -> Vec<RankedPredictor> {
    let summaries = summarize_columns(delta_draws);
    let mut order: Vec<usize> = (0..summaries.len()).collect();
    order.sort_by(|&a, &b| summaries[b].mean.total_cmp(&summaries[a].mean).then(a.cmp(&b)));
    order
        .into_iter()
        .enumerate()
        .map(|(rank, j)| RankedPredictor {
            rank: rank + 1,
            index: j,
            name: names[j].clone(),
            summary: summaries[j],
            excluded: excluded.get(j).copied().unwrap_or(false),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: usize, cols: usize, cells: &[f64]) -> JointTable {
        JointTable::new(rows, cols, cells.to_vec()).unwrap()
    }

    #[test]
    fn delta_product_table_is_zero() {
        let py = [0.2, 0.5, 0.3];
        let px = [0.4, 0.6];
        let cells: Vec<f64> = py.iter().flat_map(|a| px.iter().map(move |b| a * b)).collect();
        assert!(delta_squared(&table(3, 2, &cells)).unwrap() < 1e-30);
    }

    #[test]
    fn delta_diagonal_is_one() {
        let t = table(2, 2, &[0.5, 0.0, 0.0, 0.5]);
        assert_eq!(delta_squared(&t).unwrap(), 1.0);
        assert_eq!(delta(&t), 1.0);
    }

    #[test]
    fn delta_zero_marginal_is_degenerate() {
        let t = table(2, 2, &[0.5, 0.0, 0.5, 0.0]);
        assert!(matches!(delta_squared(&t), Err(Error::Degenerate(_))));
        assert_eq!(delta(&t), 0.0);
    }

    #[test]
    fn joint_table_cases() {
        let params = FactorParams::initial(3, 2, 1, DEFAULT_A);
        let t = model_joint_table(&params, &[1.0 / 3.0; 3], 1);
        assert!(t.cells.iter().all(|&v| (v - 1.0 / 6.0).abs() < 1e-15));

        let mut params = FactorParams::initial(2, 1, 1, DEFAULT_A);
        params.mu = vec![40.0, -40.0];
        let t = model_joint_table(&params, &[0.5, 0.5], 0);
        assert_eq!(t.cells, vec![0.0, 0.5, 0.5, 0.0]);

        params.mu = vec![0.4, -1.1];
        params.lambda = vec![0.3, 2.0];
        let w = [0.3, 0.7];
        let t = model_joint_table(&params, &w, 0);
        for (r, s) in t.row_sums().iter().zip(&w) {
            assert!((r - s).abs() < 1e-15);
        }
    }

    #[test]
    fn collapse_cases() {
        let t = table(2, 2, &[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(collapse_cause(&t, 0), t);
        assert_eq!(collapse_cause(&t, 1).cells, vec![0.3, 0.4, 0.1, 0.2]);
        let u = table(3, 2, &[1.0 / 6.0; 6]);
        let c = collapse_cause(&u, 2);
        let rows = c.row_sums();
        assert!((rows[0] - 1.0 / 3.0).abs() < 1e-15 && (rows[1] - 2.0 / 3.0).abs() < 1e-15);
        assert!((c.total() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn saved_draw_bookkeeping() {
        let cfg = McmcConfig::default();
        assert_eq!(cfg.saved_draws(), 500);
        let its: Vec<usize> = cfg.saved_iterations().collect();
        assert_eq!(its.first(), Some(&510));
        assert_eq!(its.last(), Some(&5500));
        assert!(its.iter().all(|&s| cfg.is_saved(s)));
        assert_eq!((1..=5500).filter(|&s| cfg.is_saved(s)).count(), 500);
        let odd = McmcConfig { iterations: 25, burn_in: 3, thin: 7, ..McmcConfig::default() };
        assert_eq!(odd.saved_draws(), 3);
        assert_eq!(odd.saved_iterations().collect::<Vec<_>>(), vec![10, 17, 24]);
    }

    #[test]
    fn config_validation() {
        assert!(McmcConfig { thin: 0, ..McmcConfig::default() }.validate().is_err());
        assert!(McmcConfig { r: 0, ..McmcConfig::default() }.validate().is_err());
        assert!(McmcConfig { iterations: 0, ..McmcConfig::default() }.validate().is_err());
        assert!("counts".parse::<DirichletUpdate>().is_ok());
        assert!("bogus".parse::<DirichletUpdate>().is_err());
    }

    #[test]
    fn normalization_and_categorical() {
        let probs = normalize_log_weights(&[-1000.0, -1000.0 + 2f64.ln(), f64::NEG_INFINITY]);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((probs[1] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(probs[2], 0.0);
        let mut rng = crate::numerics::RandomStream::new(1, 1);
        for _ in 0..1000 {
            assert_ne!(sample_categorical(&probs, &mut rng), 2);
        }
    }

    #[test]
    fn ranking_orders_by_mean() {
        let draws = vec![vec![0.1, 0.5, 0.3], vec![0.1, 0.7, 0.3]];
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let ranked = rank_predictors(&draws, &names, &[false, false, true]);
        assert_eq!(ranked.iter().map(|r| r.index).collect::<Vec<_>>(), vec![1, 2, 0]);
        assert_eq!(ranked[0].rank, 1);
        assert!(ranked[1].excluded);
    }
}
