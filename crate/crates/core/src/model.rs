//! Multivariate probit factor model: parameter state, the six full-conditional
//! Gibbs updates on labeled data, and the Monte Carlo cause likelihood.
//!
//! For an individual with cause `c` the latent scores are
//! `z = μ_c + Λ_c η + ε` with `η ~ N(0, I_K)`, `ε ~ N(0, I_p)` and
//! `x_j = 1(z_j > 0)`. Missing responses have no latent score; they are
//! integrated out rather than imputed.
//!
//! Every update comes in two halves: a pure function returning the
//! conditional distribution's parameters, and a `step_*` function that draws
//! from it. Steps read the frozen pre-step state and write disjoint outputs,
//! so they run in parallel with one random stream per unit.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{SymptomDataset, MISSING};
use crate::error::{Error, Result};
use crate::numerics::{
    log_mean_exp, log_std_normal_cdf, sample_gamma, sample_truncated_normal, std_normal_cdf,
    GaussianConditional, RandomStream, Side, StreamKey,
};

/// Default shape and rate of the Ga(a, a) precision priors.
pub const DEFAULT_A: f64 = 0.5;

/// Stream purposes; one namespace per kind of draw.
pub(crate) mod purpose {
    pub const MU: u64 = 1;
    pub const LAMBDA: u64 = 2;
    pub const ETA: u64 = 3;
    pub const TAU: u64 = 4;
    pub const PHI: u64 = 5;
    pub const Z: u64 = 6;
    pub const INIT_ETA: u64 = 7;
    pub const INIT_Z: u64 = 8;
    pub const MC_FACTORS: u64 = 9;
    pub const CAUSE: u64 = 10;
    pub const WEIGHTS: u64 = 11;
    pub const CI_THETA: u64 = 12;
}

/// Cause-specific means and loadings with shared precisions.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorParams {
    pub n_causes: usize,
    pub p: usize,
    pub k: usize,
    /// Hyperparameter of the Ga(a, a) priors on `tau` and `phi`.
    pub a: f64,
    /// C×p, row-major.
    pub mu: Vec<f64>,
    /// C×p×K, row-major.
    pub lambda: Vec<f64>,
    pub tau: Vec<f64>,
    pub phi: Vec<f64>,
}

/// Flat checkpoint record, fields in the order K, a, mu, lambda, tau, phi.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamsRecord {
    pub k: usize,
    pub a: f64,
    pub mu: Vec<f64>,
    pub lambda: Vec<f64>,
    pub tau: Vec<f64>,
    pub phi: Vec<f64>,
}

impl FactorParams {
    /// Starting point of a chain: zero means and loadings, unit precisions.
    pub fn initial(n_causes: usize, p: usize, k: usize, a: f64) -> Self {
        Self {
            n_causes,
            p,
            k,
            a,
            mu: vec![0.0; n_causes * p],
            lambda: vec![0.0; n_causes * p * k],
            tau: vec![1.0; p],
            phi: vec![1.0; p],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (c, p, k) = (self.n_causes, self.p, self.k);
        if self.mu.len() != c * p || self.lambda.len() != c * p * k || self.tau.len() != p || self.phi.len() != p {
            return Err(Error::param("parameter dimensions do not match (C, p, K)"));
        }
        if !(self.a > 0.0) {
            return Err(Error::param("hyperparameter a must be positive"));
        }
        if self.tau.iter().chain(&self.phi).any(|&v| !(v > 0.0)) {
            return Err(Error::param("precisions must be positive"));
        }
        Ok(())
    }

    pub fn mu(&self, c: usize, j: usize) -> f64 {
        self.mu[c * self.p + j]
    }

    /// Loadings `λ_{cj·}`.
    pub fn loadings(&self, c: usize, j: usize) -> &[f64] {
        let start = (c * self.p + j) * self.k;
        &self.lambda[start..start + self.k]
    }

    /// Probit mean `μ_cj + λ_{cj·}′ η`.
    pub fn linear_predictor(&self, c: usize, j: usize, eta: &[f64]) -> f64 {
        self.mu(c, j) + dot(self.loadings(c, j), eta)
    }

    /// `Λ_c Λ_c′ + I`, the covariance of the latent scores given cause `c`.
    pub fn marginal_covariance(&self, c: usize) -> DMatrix<f64> {
        let loadings = DMatrix::from_row_slice(self.p, self.k, &self.lambda[c * self.p * self.k..(c + 1) * self.p * self.k]);
        &loadings * loadings.transpose() + DMatrix::identity(self.p, self.p)
    }

    pub fn to_record(&self) -> ParamsRecord {
        ParamsRecord {
            k: self.k,
            a: self.a,
            mu: self.mu.clone(),
            lambda: self.lambda.clone(),
            tau: self.tau.clone(),
            phi: self.phi.clone(),
        }
    }

    pub fn from_record(record: ParamsRecord) -> Result<Self> {
        let p = record.tau.len();
        if p == 0 || !record.mu.len().is_multiple_of(p) {
            return Err(Error::input("checkpoint record has inconsistent dimensions"));
        }
        let params = Self {
            n_causes: record.mu.len() / p,
            p,
            k: record.k,
            a: record.a,
            mu: record.mu,
            lambda: record.lambda,
            tau: record.tau,
            phi: record.phi,
        };
        params.validate()?;
        Ok(params)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Observed cells of a labeled dataset, laid out for the Gibbs updates.
///
/// Cell `t` is the `t`-th observed response in row-major order; latent
/// scores are stored in the same order.
#[derive(Clone, Debug)]
pub struct ObservedIndex {
    pub n: usize,
    pub p: usize,
    pub n_causes: usize,
    pub labels: Vec<usize>,
    row_start: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<bool>,
    /// `(individual, cell)` pairs for every `(cause, predictor)`.
    by_cause_col: Vec<Vec<(usize, usize)>>,
}

impl ObservedIndex {
    pub fn new(dataset: &SymptomDataset) -> Result<Self> {
        let labels = dataset.require_labels("model fitting")?.to_vec();
        let (n, p, n_causes) = (dataset.n(), dataset.p(), dataset.n_causes());
        let mut row_start = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut values = Vec::new();
        let mut by_cause_col = vec![Vec::new(); n_causes * p];
        for (i, &c) in labels.iter().enumerate() {
            row_start.push(cols.len());
            for (j, &v) in dataset.row(i).iter().enumerate() {
                if v != MISSING {
                    by_cause_col[c * p + j].push((i, cols.len()));
                    cols.push(j);
                    values.push(v == 1);
                }
            }
        }
        row_start.push(cols.len());
        Ok(Self {
            n,
            p,
            n_causes,
            labels,
            row_start,
            cols,
            values,
            by_cause_col,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.cols.len()
    }

    /// Cell range of individual `i`.
    pub fn cells(&self, i: usize) -> std::ops::Range<usize> {
        self.row_start[i]..self.row_start[i + 1]
    }

    pub fn col(&self, cell: usize) -> usize {
        self.cols[cell]
    }

    pub fn value(&self, cell: usize) -> bool {
        self.values[cell]
    }

    /// Individuals with cause `c` and predictor `j` observed, with their cells.
    pub fn cause_col(&self, c: usize, j: usize) -> &[(usize, usize)] {
        &self.by_cause_col[c * self.p + j]
    }

    /// Number of individuals with cause `c` and predictor `j` observed.
    pub fn count(&self, c: usize, j: usize) -> usize {
        self.cause_col(c, j).len()
    }
}

/// Latent probit scores on observed cells and latent factors.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentState {
    /// One score per observed cell of the bound [`ObservedIndex`].
    pub z: Vec<f64>,
    /// n×K, row-major.
    pub eta: Vec<f64>,
    pub k: usize,
}

impl LatentState {
    pub fn eta(&self, i: usize) -> &[f64] {
        &self.eta[i * self.k..(i + 1) * self.k]
    }

    /// Whether every score's sign agrees with its observed response.
    pub fn signs_consistent(&self, index: &ObservedIndex) -> bool {
        self.z.len() == index.n_cells()
            && self
                .z
                .iter()
                .enumerate()
                .all(|(t, &z)| if index.value(t) { z > 0.0 } else { z <= 0.0 })
    }
}

/// Univariate normal conditional.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalParams {
    pub mean: f64,
    pub variance: f64,
}

/// Gamma conditional with mean `shape / rate`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GammaParams {
    pub shape: f64,
    pub rate: f64,
}

/// Per-unit random streams for one sweep.
#[derive(Clone, Copy, Debug)]
pub struct SweepStreams {
    pub key: StreamKey,
    pub iteration: u64,
}

impl SweepStreams {
    pub fn new(key: StreamKey, iteration: u64) -> Self {
        Self { key, iteration }
    }

    pub fn rng(&self, purpose: u64, unit: usize) -> RandomStream {
        self.key.stream(purpose, self.iteration, unit as u64)
    }
}

/// Conditional of `μ_{·j}`: independent normals, one per cause.
pub fn mu_conditional(
    params: &FactorParams,
    latent: &LatentState,
    index: &ObservedIndex,
    j: usize,
) -> Vec<NormalParams> {
    (0..params.n_causes)
        .map(|c| {
            let loadings = params.loadings(c, j);
            let cells = index.cause_col(c, j);
            let sum: f64 = cells
                .iter()
                .map(|&(i, t)| latent.z[t] - dot(loadings, latent.eta(i)))
                .sum();
            let precision = cells.len() as f64 + params.tau[j];
            NormalParams {
                mean: sum / precision,
                variance: 1.0 / precision,
            }
        })
        .collect()
}

/// Draws every `μ_cj`; returns the new C×p mean matrix.
pub fn step_mu(
    params: &FactorParams,
    latent: &LatentState,
    index: &ObservedIndex,
    streams: &SweepStreams,
) -> Vec<f64> {
    let columns: Vec<Vec<f64>> = (0..params.p)
        .into_par_iter()
        .map(|j| {
            let mut rng = streams.rng(purpose::MU, j);
            mu_conditional(params, latent, index, j)
                .into_iter()
                .map(|np| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    np.mean + np.variance.sqrt() * e
                })
                .collect()
        })
        .collect();
    let mut mu = vec![0.0; params.n_causes * params.p];
    for (j, col) in columns.iter().enumerate() {
        for (c, &m) in col.iter().enumerate() {
            mu[c * params.p + j] = m;
        }
    }
    mu
}

/// Conditional of `λ_{cj·}`: precision `Σ η_i η_i′ + φ_j I` over the
/// individuals of cause `c` with predictor `j` observed.
pub fn lambda_conditional(
    params: &FactorParams,
    latent: &LatentState,
    index: &ObservedIndex,
    c: usize,
    j: usize,
) -> Result<GaussianConditional> {
    let k = params.k;
    let mut precision = DMatrix::identity(k, k) * params.phi[j];
    let mut linear = DVector::zeros(k);
    let mu = params.mu(c, j);
    for &(i, t) in index.cause_col(c, j) {
        let eta = latent.eta(i);
        let resid = latent.z[t] - mu;
        for a in 0..k {
            linear[a] += eta[a] * resid;
            for b in 0..k {
                precision[(a, b)] += eta[a] * eta[b];
            }
        }
    }
    GaussianConditional::from_canonical(precision, &linear, &format!("loadings of cause {}, predictor {}", c + 1, j + 1))
}

/// Draws every loading row; returns the new C×p×K loading array.
pub fn step_lambda(
    params: &FactorParams,
    latent: &LatentState,
    index: &ObservedIndex,
    streams: &SweepStreams,
) -> Result<Vec<f64>> {
    if params.k == 0 {
        return Ok(Vec::new());
    }
    let rows: Vec<DVector<f64>> = (0..params.n_causes * params.p)
        .into_par_iter()
        .map(|cj| {
            let (c, j) = (cj / params.p, cj % params.p);
            let cond = lambda_conditional(params, latent, index, c, j)?;
            Ok(cond.sample(&mut streams.rng(purpose::LAMBDA, cj)))
        })
        .collect::<Result<_>>()?;
    Ok(rows.iter().flat_map(|r| r.iter().copied()).collect())
}

/// Conditional of `η_i` using only the observed coordinates of row `i`.
pub fn eta_conditional(
    params: &FactorParams,
    latent: &LatentState,
    index: &ObservedIndex,
    i: usize,
) -> Result<GaussianConditional> {
    let k = params.k;
    let c = index.labels[i];
    let mut precision = DMatrix::identity(k, k);
    let mut linear = DVector::zeros(k);
    for t in index.cells(i) {
        let j = index.col(t);
        let loadings = params.loadings(c, j);
        let resid = latent.z[t] - params.mu(c, j);
        for a in 0..k {
            linear[a] += loadings[a] * resid;
            for b in 0..k {
                precision[(a, b)] += loadings[a] * loadings[b];
            }
        }
    }
    GaussianConditional::from_canonical(precision, &linear, &format!("factors of individual {}", i + 1))
}

/// Draws every `η_i`; returns the new n×K factor array.
pub fn step_eta(
    params: &FactorParams,
    latent: &LatentState,
    index: &ObservedIndex,
    streams: &SweepStreams,
) -> Result<Vec<f64>> {
    if params.k == 0 {
        return Ok(Vec::new());
    }
    let rows: Vec<DVector<f64>> = (0..index.n)
        .into_par_iter()
        .map(|i| {
            let cond = eta_conditional(params, latent, index, i)?;
            Ok(cond.sample(&mut streams.rng(purpose::ETA, i)))
        })
        .collect::<Result<_>>()?;
    Ok(rows.iter().flat_map(|r| r.iter().copied()).collect())
}

/// `Ga((C + 2a)/2, (Σ_c μ²_cj + 2a)/2)`.
pub fn tau_conditional(params: &FactorParams, j: usize) -> GammaParams {
    let ss: f64 = (0..params.n_causes).map(|c| params.mu(c, j).powi(2)).sum();
    GammaParams {
        shape: (params.n_causes as f64 + 2.0 * params.a) / 2.0,
        rate: (ss + 2.0 * params.a) / 2.0,
    }
}

/// `Ga((CK + 2a)/2, (Σ_c Σ_k λ²_cjk + 2a)/2)`.
pub fn phi_conditional(params: &FactorParams, j: usize) -> GammaParams {
    let ss: f64 = (0..params.n_causes)
        .flat_map(|c| params.loadings(c, j).iter())
        .map(|l| l * l)
        .sum();
    GammaParams {
        shape: ((params.n_causes * params.k) as f64 + 2.0 * params.a) / 2.0,
        rate: (ss + 2.0 * params.a) / 2.0,
    }
}

fn draw_precisions(
    params: &FactorParams,
    streams: &SweepStreams,
    stream_purpose: u64,
    conditional: fn(&FactorParams, usize) -> GammaParams,
) -> Result<Vec<f64>> {
    (0..params.p)
        .into_par_iter()
        .map(|j| {
            let g = conditional(params, j);
            sample_gamma(g.shape, g.rate, &mut streams.rng(stream_purpose, j))
        })
        .collect()
}

pub fn step_tau(params: &FactorParams, streams: &SweepStreams) -> Result<Vec<f64>> {
    draw_precisions(params, streams, purpose::TAU, tau_conditional)
}

pub fn step_phi(params: &FactorParams, streams: &SweepStreams) -> Result<Vec<f64>> {
    draw_precisions(params, streams, purpose::PHI, phi_conditional)
}

/// Mean and truncation side of the latent score in `cell` of individual `i`.
pub fn z_conditional(
    params: &FactorParams,
    latent: &LatentState,
    index: &ObservedIndex,
    i: usize,
    cell: usize,
) -> (f64, Side) {
    let mean = params.linear_predictor(index.labels[i], index.col(cell), latent.eta(i));
    let side = if index.value(cell) { Side::Positive } else { Side::Negative };
    (mean, side)
}

fn draw_scores(
    params: &FactorParams,
    latent: &LatentState,
    index: &ObservedIndex,
    streams: &SweepStreams,
    stream_purpose: u64,
) -> Vec<f64> {
    let rows: Vec<Vec<f64>> = (0..index.n)
        .into_par_iter()
        .map(|i| {
            let mut rng = streams.rng(stream_purpose, i);
            index
                .cells(i)
                .map(|t| {
                    let (mean, side) = z_conditional(params, latent, index, i, t);
                    sample_truncated_normal(mean, side, &mut rng)
                })
                .collect()
        })
        .collect();
    rows.concat()
}

/// Draws every observed latent score from its truncated normal.
pub fn step_z(
    params: &FactorParams,
    latent: &LatentState,
    index: &ObservedIndex,
    streams: &SweepStreams,
) -> Vec<f64> {
    draw_scores(params, latent, index, streams, purpose::Z)
}

/// Gibbs sampler over the training data.
#[derive(Clone, Debug)]
pub struct GibbsSampler {
    pub index: ObservedIndex,
    pub params: FactorParams,
    pub latent: LatentState,
    key: StreamKey,
    iteration: u64,
}

impl GibbsSampler {
    /// Initial state: zero means and loadings, unit precisions, factors from
    /// their prior and scores from their truncated conditionals.
    pub fn new(dataset: &SymptomDataset, k: usize, a: f64, key: StreamKey) -> Result<Self> {
        let index = ObservedIndex::new(dataset)?;
        let params = FactorParams::initial(index.n_causes, index.p, k, a);
        params.validate()?;
        let init = SweepStreams::new(key, 0);
        let eta = (0..index.n)
            .into_par_iter()
            .flat_map_iter(|i| {
                let mut rng = init.rng(purpose::INIT_ETA, i);
                (0..k).map(move |_| StandardNormal.sample(&mut rng)).collect::<Vec<f64>>()
            })
            .collect();
        let mut latent = LatentState { z: Vec::new(), eta, k };
        latent.z = draw_scores(&params, &latent, &index, &init, purpose::INIT_Z);
        Ok(Self::from_parts(index, params, latent, key))
    }

    /// Resumes from an explicit state (e.g. a checkpoint or a test fixture).
    pub fn from_parts(index: ObservedIndex, params: FactorParams, latent: LatentState, key: StreamKey) -> Self {
        Self {
            index,
            params,
            latent,
            key,
            iteration: 0,
        }
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// One pass of the six updates in order: μ, Λ, η, τ, φ, z.
    pub fn sweep(&mut self) -> Result<()> {
        self.iteration += 1;
        let streams = SweepStreams::new(self.key, self.iteration);
        self.params.mu = step_mu(&self.params, &self.latent, &self.index, &streams);
        self.params.lambda = step_lambda(&self.params, &self.latent, &self.index, &streams)?;
        self.latent.eta = step_eta(&self.params, &self.latent, &self.index, &streams)?;
        self.params.tau = step_tau(&self.params, &streams)?;
        self.params.phi = step_phi(&self.params, &streams)?;
        self.latent.z = step_z(&self.params, &self.latent, &self.index, &streams);
        Ok(())
    }
}

/// ln π(x_obs | cause c) from given factor draws (R×K, row-major).
///
/// Averages the per-draw products of `Φ(±(μ_cj + λ′_{cj·} η_r))` over the
/// observed cells, entirely in log space.
pub fn log_cause_likelihood_with_draws(params: &FactorParams, row: &[u8], c: usize, draws: &[f64]) -> f64 {
    let k = params.k;
    let r_count = draws.len().checked_div(k).unwrap_or(1);
    let terms: Vec<f64> = (0..r_count)
        .map(|r| {
            let eta = &draws[r * k..(r + 1) * k];
            row.iter()
                .enumerate()
                .filter(|(_, &v)| v != MISSING)
                .map(|(j, &v)| {
                    let m = params.linear_predictor(c, j, eta);
                    log_std_normal_cdf(if v == 1 { m } else { -m })
                })
                .sum()
        })
        .collect();
    log_mean_exp(&terms)
}

/// `R` standard normal factor draws, R×K row-major.
pub fn draw_factors<G: Rng + ?Sized>(k: usize, r: usize, rng: &mut G) -> Vec<f64> {
    (0..r * k).map(|_| StandardNormal.sample(rng)).collect()
}

/// Monte Carlo estimate of ln π(x_obs | cause c) with `r` fresh factor draws.
pub fn log_cause_likelihood<G: Rng + ?Sized>(
    params: &FactorParams,
    row: &[u8],
    c: usize,
    r: usize,
    rng: &mut G,
) -> Result<f64> {
    if r == 0 {
        return Err(Error::param("Monte Carlo size R must be at least 1"));
    }
    let draws = draw_factors(params.k, r, rng);
    Ok(log_cause_likelihood_with_draws(params, row, c, &draws))
}

/// Precomputed `ln Φ(±m_crj)` for a fixed set of factor draws, shared by
/// every individual scored in one iteration.
#[derive(Clone, Debug)]
pub struct CauseLikelihoodTable {
    n_causes: usize,
    p: usize,
    r: usize,
    /// `[c][r][j][x]`, x = 0 for ln Φ(−m) and 1 for ln Φ(m).
    log_probs: Vec<f64>,
}

impl CauseLikelihoodTable {
    pub fn new(params: &FactorParams, draws: &[f64]) -> Self {
        let (n_causes, p, k) = (params.n_causes, params.p, params.k);
        let r = draws.len().checked_div(k).unwrap_or(1);
        let log_probs = (0..n_causes * r)
            .into_par_iter()
            .flat_map_iter(|cr| {
                let (c, ri) = (cr / r, cr % r);
                let eta = &draws[ri * k..(ri + 1) * k];
                (0..p).flat_map(move |j| {
                    let m = params.linear_predictor(c, j, eta);
                    [log_std_normal_cdf(-m), log_std_normal_cdf(m)]
                })
            })
            .collect();
        Self {
            n_causes,
            p,
            r,
            log_probs,
        }
    }

    /// ln π(x_obs | cause c) for every cause.
    pub fn log_likelihoods(&self, row: &[u8]) -> Vec<f64> {
        let mut terms = vec![0.0; self.r];
        (0..self.n_causes)
            .map(|c| {
                for (ri, term) in terms.iter_mut().enumerate() {
                    let block = &self.log_probs[(c * self.r + ri) * self.p * 2..][..self.p * 2];
                    *term = row
                        .iter()
                        .enumerate()
                        .filter(|(_, &v)| v != MISSING)
                        .map(|(j, &v)| block[2 * j + v as usize])
                        .sum();
                }
                log_mean_exp(&terms)
            })
            .collect()
    }
}

/// P(x_j = 1 | cause c) = Φ(μ_cj / sqrt(1 + Σ_k λ²_cjk)).
pub fn marginal_symptom_prob(params: &FactorParams, c: usize, j: usize) -> f64 {
    std_normal_cdf(standardized_mean(params, c, j))
}

/// `(P(x_j = 0 | c), P(x_j = 1 | c))` without cancellation in either entry.
pub fn marginal_symptom_probs(params: &FactorParams, c: usize, j: usize) -> (f64, f64) {
    let s = standardized_mean(params, c, j);
    (std_normal_cdf(-s), std_normal_cdf(s))
}

fn standardized_mean(params: &FactorParams, c: usize, j: usize) -> f64 {
    let ss: f64 = params.loadings(c, j).iter().map(|l| l * l).sum();
    params.mu(c, j) / (1.0 + ss).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(rows: &[&[Option<bool>]], labels: &[usize], n_causes: usize) -> SymptomDataset {
        let p = rows[0].len();
        let responses: Vec<Option<bool>> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        SymptomDataset::new(
            (0..rows.len()).map(|i| i.to_string()).collect(),
            (0..p).map(|j| format!("s{j}")).collect(),
            crate::data::default_cause_names(n_causes),
            &responses,
            Some(labels.to_vec()),
        )
        .unwrap()
    }

    #[test]
    fn mu_prior_fallback_and_single_observation() {
        // cause 2 has no observations of predictor 1
        let ds = dataset(&[&[Some(true)]], &[0], 2);
        let index = ObservedIndex::new(&ds).unwrap();
        let params = FactorParams::initial(2, 1, 1, DEFAULT_A);
        let latent = LatentState { z: vec![2.0], eta: vec![0.3], k: 1 };
        let cond = mu_conditional(&params, &latent, &index, 0);
        assert_eq!(cond[0], NormalParams { mean: 1.0, variance: 0.5 });
        assert_eq!(cond[1], NormalParams { mean: 0.0, variance: 1.0 });
    }

    #[test]
    fn lambda_conditional_hand_values() {
        let ds = dataset(&[&[Some(true)], &[None]], &[0, 1], 2);
        let index = ObservedIndex::new(&ds).unwrap();
        let mut params = FactorParams::initial(2, 1, 1, DEFAULT_A);
        params.mu = vec![0.5, 0.0];
        let latent = LatentState { z: vec![1.5], eta: vec![1.0, 7.0], k: 1 };
        let cond = lambda_conditional(&params, &latent, &index, 0, 0).unwrap();
        assert!((cond.mean[0] - 0.5).abs() < 1e-15);
        assert!((cond.covariance()[(0, 0)] - 0.5).abs() < 1e-15);
        let prior = lambda_conditional(&params, &latent, &index, 1, 0).unwrap();
        assert_eq!(prior.mean[0], 0.0);
        assert!((prior.covariance()[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn eta_conditional_hand_values_and_all_missing() {
        let ds = dataset(&[&[Some(true)], &[None]], &[0, 0], 1);
        let index = ObservedIndex::new(&ds).unwrap();
        let mut params = FactorParams::initial(1, 1, 1, DEFAULT_A);
        params.lambda = vec![1.0];
        let latent = LatentState { z: vec![2.0], eta: vec![0.0, 0.0], k: 1 };
        let cond = eta_conditional(&params, &latent, &index, 0).unwrap();
        assert!((cond.mean[0] - 1.0).abs() < 1e-15);
        assert!((cond.covariance()[(0, 0)] - 0.5).abs() < 1e-15);
        let prior = eta_conditional(&params, &latent, &index, 1).unwrap();
        assert_eq!(prior.mean[0], 0.0);
        assert_eq!(prior.covariance()[(0, 0)], 1.0);
    }

    #[test]
    fn masking_a_column_equals_deleting_it() {
        let full = dataset(&[&[Some(true), None, Some(false)]], &[0], 1);
        let reduced = dataset(&[&[Some(true), Some(false)]], &[0], 1);
        let mut params = FactorParams::initial(1, 3, 2, DEFAULT_A);
        params.lambda = vec![0.3, -1.0, 5.0, 5.0, 0.7, 0.2];
        params.mu = vec![0.1, 9.0, -0.4];
        let mut reduced_params = FactorParams::initial(1, 2, 2, DEFAULT_A);
        reduced_params.lambda = vec![0.3, -1.0, 0.7, 0.2];
        reduced_params.mu = vec![0.1, -0.4];
        let latent = LatentState { z: vec![0.8, -0.6], eta: vec![0.0, 0.0], k: 2 };
        let a = eta_conditional(&params, &latent, &ObservedIndex::new(&full).unwrap(), 0).unwrap();
        let b = eta_conditional(&reduced_params, &latent, &ObservedIndex::new(&reduced).unwrap(), 0).unwrap();
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.precision, b.precision);
    }

    #[test]
    fn precision_conditionals() {
        let mut params = FactorParams::initial(2, 1, 2, 0.5);
        let t = tau_conditional(&params, 0);
        assert_eq!((t.shape, t.rate), (1.5, 0.5));
        params.mu = vec![1.0, 1.0];
        let t = tau_conditional(&params, 0);
        assert_eq!((t.shape, t.rate), (1.5, 1.5));
        params.mu = vec![0.0, 0.0];
        params.a = 1.0;
        let t = tau_conditional(&params, 0);
        assert_eq!((t.shape, t.rate), (2.0, 1.0));
        params.a = 0.5;
        let f = phi_conditional(&params, 0);
        assert_eq!((f.shape, f.rate), (2.5, 0.5));
        params.lambda = vec![1.0; 4];
        let f = phi_conditional(&params, 0);
        assert_eq!((f.shape, f.rate), (2.5, 2.5));
    }

    #[test]
    fn z_step_respects_signs_and_skips_missing() {
        let ds = dataset(&[&[Some(true), None, Some(false)], &[None, Some(true), Some(true)]], &[0, 1], 2);
        let index = ObservedIndex::new(&ds).unwrap();
        assert_eq!(index.n_cells(), 4);
        let mut params = FactorParams::initial(2, 3, 1, DEFAULT_A);
        params.mu = vec![-8.0, 0.0, 8.0, 0.0, -30.0, 2.0];
        let latent = LatentState { z: vec![0.0; 4], eta: vec![0.5, -0.5], k: 1 };
        for it in 0..200 {
            let z = step_z(&params, &latent, &index, &SweepStreams::new(StreamKey::new(1), it));
            assert_eq!(z.len(), 4);
            let state = LatentState { z, ..latent.clone() };
            assert!(state.signs_consistent(&index));
        }
    }

    #[test]
    fn z_step_half_normal_mean() {
        let n = 100_000;
        let rows: Vec<&[Option<bool>]> = vec![&[Some(true)]; n];
        let ds = dataset(&rows, &vec![0; n], 1);
        let index = ObservedIndex::new(&ds).unwrap();
        let params = FactorParams::initial(1, 1, 1, DEFAULT_A);
        let latent = LatentState { z: vec![1.0; n], eta: vec![0.0; n], k: 1 };
        let z = step_z(&params, &latent, &index, &SweepStreams::new(StreamKey::new(2), 1));
        let m = z.iter().sum::<f64>() / n as f64;
        let se = ((1.0 - 2.0 / std::f64::consts::PI) / n as f64).sqrt();
        assert!((m - 0.797_884_560_802_865_4).abs() < 3.0 * se);
    }

    #[test]
    fn likelihood_empty_row_is_zero() {
        let params = FactorParams::initial(2, 3, 2, DEFAULT_A);
        let mut rng = RandomStream::new(0, 0);
        let row = [MISSING; 3];
        assert_eq!(log_cause_likelihood(&params, &row, 1, 50, &mut rng).unwrap(), 0.0);
        assert!(log_cause_likelihood(&params, &row, 1, 0, &mut rng).is_err());
    }

    #[test]
    fn factor_free_likelihood_is_exact_product() {
        let mut params = FactorParams::initial(2, 3, 2, DEFAULT_A);
        params.mu = vec![0.3, -1.2, 2.0, 0.0, 0.5, -0.5];
        let row = [1, 0, MISSING];
        let exact = log_std_normal_cdf(0.3) + log_std_normal_cdf(1.2);
        for r in [1, 7, 200] {
            let mut rng = RandomStream::new(r as u64, 3);
            let ll = log_cause_likelihood(&params, &row, 0, r, &mut rng).unwrap();
            assert_eq!(ll.to_bits(), exact.to_bits());
        }
    }

    #[test]
    fn table_matches_direct_evaluation() {
        let mut params = FactorParams::initial(3, 4, 2, DEFAULT_A);
        let mut rng = RandomStream::new(9, 0);
        params.mu.iter_mut().chain(params.lambda.iter_mut()).for_each(|v| *v = StandardNormal.sample(&mut rng));
        let draws = draw_factors(2, 64, &mut rng);
        let table = CauseLikelihoodTable::new(&params, &draws);
        for row in [[1u8, 0, MISSING, 1], [MISSING; 4], [0, 0, 0, 1]] {
            let batch = table.log_likelihoods(&row);
            for (c, &ll) in batch.iter().enumerate() {
                assert_eq!(ll.to_bits(), log_cause_likelihood_with_draws(&params, &row, c, &draws).to_bits());
            }
        }
    }

    #[test]
    fn marginal_probabilities() {
        let mut params = FactorParams::initial(1, 3, 1, DEFAULT_A);
        params.mu = vec![0.0, 1.0, 3.0];
        params.lambda = vec![5.0, 0.0, 4.0];
        assert_eq!(marginal_symptom_prob(&params, 0, 0), 0.5);
        assert!((marginal_symptom_prob(&params, 0, 1) - 0.841_344_746_068_542_9).abs() < 1e-12);
        assert!((marginal_symptom_prob(&params, 0, 2) - std_normal_cdf(3.0 / 17f64.sqrt())).abs() < 1e-15);
        let (p0, p1) = marginal_symptom_probs(&params, 0, 2);
        assert!((p0 + p1 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn marginal_prob_matches_simulation() {
        let mut rng = RandomStream::new(33, 0);
        let n = 400_000;
        let hits = (0..n)
            .filter(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                let eps: f64 = StandardNormal.sample(&mut rng);
                3.0 + 4.0 * e + eps > 0.0
            })
            .count() as f64
            / n as f64;
        let target = std_normal_cdf(3.0 / 17f64.sqrt());
        assert!((hits - target).abs() < 4.0 * (target * (1.0 - target) / n as f64).sqrt());
    }

    #[test]
    fn checkpoint_record_roundtrip() {
        let mut params = FactorParams::initial(2, 3, 2, 0.25);
        params.mu[4] = 1.5;
        params.lambda[7] = -0.25;
        params.tau[1] = 3.0;
        let json = serde_json::to_string(&params.to_record()).unwrap();
        assert!(json.starts_with("{\"k\":2,\"a\":0.25,\"mu\""));
        let back = FactorParams::from_record(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, params);
    }

    #[test]
    fn sweeps_keep_signs_and_are_deterministic() {
        let spec = crate::data::SyntheticSpec::with_random_parameters(60, 5, vec![0.5, 0.5], 2, 1.0, 1.0, 0.2, 4);
        let ds = crate::data::generate_synthetic(&spec).unwrap();
        let mut a = GibbsSampler::new(&ds, 2, DEFAULT_A, StreamKey::new(8)).unwrap();
        let mut b = GibbsSampler::new(&ds, 2, DEFAULT_A, StreamKey::new(8)).unwrap();
        assert!(a.latent.signs_consistent(&a.index));
        for _ in 0..20 {
            a.sweep().unwrap();
            b.sweep().unwrap();
            assert!(a.latent.signs_consistent(&a.index));
        }
        assert_eq!(a.params, b.params);
        assert_eq!(a.latent, b.latent);
    }

    #[test]
    fn zero_factor_sweeps() {
        let spec = crate::data::SyntheticSpec::with_random_parameters(30, 4, vec![0.5, 0.5], 0, 1.0, 0.0, 0.1, 5);
        let ds = crate::data::generate_synthetic(&spec).unwrap();
        let mut g = GibbsSampler::new(&ds, 0, DEFAULT_A, StreamKey::new(1)).unwrap();
        for _ in 0..5 {
            g.sweep().unwrap();
        }
        assert!(g.params.lambda.is_empty());
        assert!(g.latent.eta.is_empty());
        assert!(g.params.phi.iter().all(|&v| v > 0.0));
    }
}
