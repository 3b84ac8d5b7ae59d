//! Conditionally independent comparator: each predictor is Bernoulli given the
//! cause, with a beta(1, 1) prior on every success probability.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{SymptomDataset, MISSING};
use crate::error::{Error, Result};
use crate::inference::{normalize_log_weights, predict_causes, McmcConfig, PosteriorDraws};
use crate::model::purpose;
use crate::numerics::{sample_gamma, StreamKey};

/// Beta posterior of `P(x_j = 1 | cause c)`, stored C×p row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CiPosterior {
    pub n_causes: usize,
    pub p: usize,
    /// `1 + #observed zeros`.
    pub alpha0: Vec<f64>,
    /// `1 + #observed ones`.
    pub alpha1: Vec<f64>,
}

impl CiPosterior {
    pub fn alpha(&self, c: usize, j: usize) -> (f64, f64) {
        let t = c * self.p + j;
        (self.alpha0[t], self.alpha1[t])
    }

    pub fn mean_prob(&self, c: usize, j: usize) -> f64 {
        let (a0, a1) = self.alpha(c, j);
        a1 / (a0 + a1)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CiMode {
    /// Draw θ from its posterior at every saved iteration.
    #[default]
    Sampled,
    /// Plug in the posterior mean once; no randomness.
    Mean,
}

impl std::str::FromStr for CiMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sampled" => Ok(Self::Sampled),
            "mean" => Ok(Self::Mean),
            other => Err(Error::Config(format!("unknown baseline mode `{other}`"))),
        }
    }
}

pub fn fit_ci(train: &SymptomDataset) -> Result<CiPosterior> {
    let labels = train.require_labels("baseline fitting")?;
    let (n_causes, p) = (train.n_causes(), train.p());
    let zero = || (vec![0usize; n_causes * p], vec![0usize; n_causes * p]);
    let (zeros, ones) = (0..train.n())
        .into_par_iter()
        .fold(zero, |(mut zeros, mut ones), i| {
            let base = labels[i] * p;
            for (j, &v) in train.row(i).iter().enumerate() {
                match v {
                    0 => zeros[base + j] += 1,
                    1 => ones[base + j] += 1,
                    _ => {}
                }
            }
            (zeros, ones)
        })
        .reduce(zero, |(mut z0, mut o0), (z1, o1)| {
            z0.iter_mut().zip(z1).for_each(|(a, b)| *a += b);
            o0.iter_mut().zip(o1).for_each(|(a, b)| *a += b);
            (z0, o0)
        });
    Ok(CiPosterior {
        n_causes,
        p,
        alpha0: zeros.into_iter().map(|k| 1.0 + k as f64).collect(),
        alpha1: ones.into_iter().map(|k| 1.0 + k as f64).collect(),
    })
}

/// `ln θ` and `ln(1 − θ)` for every (cause, predictor).
struct LogTheta {
    p: usize,
    log_one: Vec<f64>,
    log_zero: Vec<f64>,
}

impl LogTheta {
    fn from_probs(p: usize, theta: &[f64]) -> Self {
        Self {
            p,
            log_one: theta.iter().map(|t| t.ln()).collect(),
            log_zero: theta.iter().map(|t| (-t).ln_1p()).collect(),
        }
    }

    /// Draws θ = G1 / (G0 + G1) with independent unit-rate gammas.
    fn sample(posterior: &CiPosterior, key: StreamKey, sweep: usize) -> Result<Self> {
        let p = posterior.p;
        let mut log_one = Vec::with_capacity(posterior.alpha1.len());
        let mut log_zero = Vec::with_capacity(posterior.alpha0.len());
        for c in 0..posterior.n_causes {
            let mut rng = key.stream(purpose::CI_THETA, sweep as u64, c as u64);
            for j in 0..p {
                let (a0, a1) = posterior.alpha(c, j);
                let g1 = sample_gamma(a1, 1.0, &mut rng)?;
                let g0 = sample_gamma(a0, 1.0, &mut rng)?;
                // log space keeps tiny gamma draws from rounding θ to 0 or 1
                let log_total = (g0 + g1).ln();
                log_one.push(g1.ln() - log_total);
                log_zero.push(g0.ln() - log_total);
            }
        }
        Ok(Self { p, log_one, log_zero })
    }

    fn log_likelihoods(&self, row: &[u8], n_causes: usize) -> Vec<f64> {
        (0..n_causes)
            .map(|c| {
                let base = c * self.p;
                row.iter()
                    .enumerate()
                    .map(|(j, &v)| match v {
                        1 => self.log_one[base + j],
                        0 => self.log_zero[base + j],
                        MISSING => 0.0,
                        _ => unreachable!("response codes are 0, 1 or missing"),
                    })
                    .sum()
            })
            .collect()
    }
}

/// Predicts target causes under the fitted comparator. `Sampled` mode follows
/// the chain bookkeeping of `config`; `Mean` mode yields a single draw whose
/// CSMF is the average of individual probabilities.
pub fn predict_ci(
    posterior: &CiPosterior,
    target: &SymptomDataset,
    cause_names: &[String],
    predictor_names: &[String],
    mode: CiMode,
    config: &McmcConfig,
) -> Result<PosteriorDraws> {
    config.validate()?;
    if target.predictor_names() != predictor_names || target.p() != posterior.p {
        return Err(Error::input("training and target predictors differ"));
    }
    let n_causes = posterior.n_causes;
    let mut out = PosteriorDraws {
        cause_names: cause_names.to_vec(),
        predictor_names: predictor_names.to_vec(),
        target_ids: target.ids().to_vec(),
        individual_prob_draws: Some(Vec::new()),
        ..PosteriorDraws::default()
    };
    match mode {
        CiMode::Mean => {
            let theta: Vec<f64> = (0..n_causes)
                .flat_map(|c| (0..posterior.p).map(move |j| (c, j)))
                .map(|(c, j)| posterior.mean_prob(c, j))
                .collect();
            let logs = LogTheta::from_probs(posterior.p, &theta);
            let probs: Vec<Vec<f64>> = (0..target.n())
                .into_par_iter()
                .map(|i| normalize_log_weights(&logs.log_likelihoods(target.row(i), n_causes)))
                .collect();
            let n = target.n() as f64;
            let csmf = (0..n_causes).map(|c| probs.iter().map(|r| r[c]).sum::<f64>() / n).collect();
            out.saved_iterations.push(0);
            out.csmf_draws.push(csmf);
            out.individual_prob_draws.as_mut().unwrap().push(probs);
        }
        CiMode::Sampled => {
            let key = StreamKey::new(config.seed);
            let mut causes = Vec::new();
            for sweep in config.saved_iterations() {
                let logs = LogTheta::sample(posterior, key, sweep)?;
                let pred = predict_causes(target, n_causes, key, sweep, |row| logs.log_likelihoods(row, n_causes));
                out.saved_iterations.push(sweep);
                out.csmf_draws.push(pred.csmf);
                out.individual_prob_draws.as_mut().unwrap().push(pred.probs);
                causes.push(pred.causes);
            }
            out.sampled_causes = Some(causes);
        }
    }
    Ok(out)
}

/// Fits on `train` and predicts `target`.
pub fn run_baseline(
    train: &SymptomDataset,
    target: &SymptomDataset,
    mode: CiMode,
    config: &McmcConfig,
) -> Result<PosteriorDraws> {
    let posterior = fit_ci(train)?;
    predict_ci(&posterior, target, train.cause_names(), train.predictor_names(), mode, config)
}
