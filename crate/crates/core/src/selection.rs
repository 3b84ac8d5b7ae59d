//! Choosing the number of factors by cross-validation, and sensitivity sweeps
//! over the precision prior and the Monte Carlo size.

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{FoldAssignment, SymptomDataset};
use crate::error::{Error, Result};
use crate::inference::{run_gibbs, McmcConfig, PosteriorDraws};
use crate::metrics::{csmf_accuracy, CsmfVector};
use crate::numerics::{mean, StreamKey};

pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_A_GRID: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 3.0];
pub const DEFAULT_R_GRID: [usize; 5] = [100, 200, 300, 400, 500];

/// Chain lengths used by default inside cross-validation.
pub fn shortened_config(base: &McmcConfig) -> McmcConfig {
    McmcConfig {
        iterations: 1000,
        burn_in: 100,
        ..base.clone()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridPoint {
    pub setting: f64,
    /// Per-fold accuracies for cross-validation, per-draw accuracies for sweeps.
    pub accuracies: Vec<f64>,
    pub mean_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepResult {
    /// `k`, `a` or `r`.
    pub parameter: String,
    pub grid: Vec<GridPoint>,
    pub best: f64,
}

impl SweepResult {
    fn from_grid(parameter: &str, grid: Vec<GridPoint>) -> Result<Self> {
        let best = grid
            .iter()
            .max_by(|a, b| {
                a.mean_accuracy
                    .total_cmp(&b.mean_accuracy)
                    .then(b.setting.total_cmp(&a.setting))
            })
            .ok_or_else(|| Error::param("grid is empty"))?
            .setting;
        Ok(Self {
            parameter: parameter.to_string(),
            grid,
            best,
        })
    }

    pub fn point(&self, setting: f64) -> Option<&GridPoint> {
        self.grid.iter().find(|g| g.setting == setting)
    }
}

/// CSMF accuracy of every saved draw against `truth`.
pub fn draw_accuracies(draws: &PosteriorDraws, truth: &CsmfVector) -> Result<Vec<f64>> {
    draws
        .csmf_draws
        .iter()
        .map(|d| csmf_accuracy(truth, &CsmfVector::new(d.clone())?))
        .collect()
}

fn check_grid<T>(grid: &[T]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::param("grid is empty"));
    }
    Ok(())
}

fn truth_of(dataset: &SymptomDataset, what: &str) -> Result<CsmfVector> {
    dataset.require_labels(what)?;
    CsmfVector::new(dataset.empirical_csmf().expect("labels checked"))
}

/// K-fold cross-validation over the number of factors. Every fold is fitted
/// with the same seed for all K so the grid points share random numbers.
pub fn cross_validate_k(
    train: &SymptomDataset,
    k_grid: &[usize],
    n_folds: usize,
    config: &McmcConfig,
) -> Result<SweepResult> {
    check_grid(k_grid)?;
    config.validate()?;
    train.require_labels("cross-validation")?;
    let folds = FoldAssignment::for_dataset(train, n_folds, config.seed)?;
    let key = StreamKey::new(config.seed);

    let mut splits = Vec::with_capacity(n_folds);
    for f in 0..n_folds {
        let fit = train.subset(&folds.training(f));
        let counts = fit.cause_counts().expect("labels checked");
        if let Some(c) = counts.iter().position(|&k| k == 0) {
            return Err(Error::input(format!(
                "fold {} leaves cause {} ({}) out of its training part; use fewer folds or more data per cause",
                f + 1,
                c + 1,
                train.cause_names()[c]
            )));
        }
        let held = train.subset(&folds.held_out(f));
        let truth = truth_of(&held, "cross-validation")?;
        splits.push((fit, held.without_labels(), truth));
    }

    let jobs: Vec<(usize, usize)> = (0..k_grid.len())
        .flat_map(|g| (0..n_folds).map(move |f| (g, f)))
        .collect();
    let fold_acc: Vec<f64> = jobs
        .par_iter()
        .map(|&(g, f)| {
            let (fit, held, truth) = &splits[f];
            let cfg = McmcConfig {
                k: k_grid[g],
                seed: key.child(f as u64).seed,
                ..config.clone()
            };
            let draws = run_gibbs(fit, held, &cfg)?;
            Ok(mean(&draw_accuracies(&draws, truth)?))
        })
        .collect::<Result<_>>()?;

    let grid = k_grid
        .iter()
        .enumerate()
        .map(|(g, &k)| {
            let accuracies = fold_acc[g * n_folds..(g + 1) * n_folds].to_vec();
            GridPoint {
                setting: k as f64,
                mean_accuracy: mean(&accuracies),
                accuracies,
            }
        })
        .collect();
    SweepResult::from_grid("k", grid)
}

fn sweep<F>(
    parameter: &str,
    train: &SymptomDataset,
    target: &SymptomDataset,
    settings: &[f64],
    config: &McmcConfig,
    apply: F,
) -> Result<SweepResult>
where
    F: Fn(&McmcConfig, f64) -> McmcConfig + Sync,
{
    check_grid(settings)?;
    let truth = truth_of(target, "a sensitivity sweep target")?;
    let unlabeled = target.without_labels();
    let grid = settings
        .par_iter()
        .map(|&s| {
            let draws = run_gibbs(train, &unlabeled, &apply(config, s))?;
            let accuracies = draw_accuracies(&draws, &truth)?;
            Ok(GridPoint {
                setting: s,
                mean_accuracy: mean(&accuracies),
                accuracies,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SweepResult::from_grid(parameter, grid)
}

/// Refits with each Gamma(a, a) hyperparameter; `target` must carry labels.
pub fn sensitivity_sweep_a(
    train: &SymptomDataset,
    target: &SymptomDataset,
    a_grid: &[f64],
    config: &McmcConfig,
) -> Result<SweepResult> {
    sweep("a", train, target, a_grid, config, |c, a| McmcConfig { a, ..c.clone() })
}

/// Refits with each Monte Carlo size R; `target` must carry labels.
pub fn sensitivity_sweep_r(
    train: &SymptomDataset,
    target: &SymptomDataset,
    r_grid: &[usize],
    config: &McmcConfig,
) -> Result<SweepResult> {
    let settings: Vec<f64> = r_grid.iter().map(|&r| r as f64).collect();
    sweep("r", train, target, &settings, config, |c, r| McmcConfig { r: r as usize, ..c.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};

    fn point(setting: f64, mean_accuracy: f64) -> GridPoint {
        GridPoint {
            setting,
            accuracies: vec![mean_accuracy],
            mean_accuracy,
        }
    }

    #[test]
    fn best_prefers_smaller_setting_on_ties() {
        let r = SweepResult::from_grid("k", vec![point(4.0, 0.9), point(1.0, 0.9), point(2.0, 0.8)]).unwrap();
        assert_eq!(r.best, 1.0);
        let r = SweepResult::from_grid("k", vec![point(0.0, 0.5), point(3.0, 0.7)]).unwrap();
        assert_eq!(r.best, 3.0);
        assert!(SweepResult::from_grid("k", vec![]).is_err());
    }

    fn small_data(seed: u64, n: usize) -> SymptomDataset {
        let spec = SyntheticSpec::with_random_parameters(n, 4, vec![0.5, 0.5], 1, 1.5, 0.5, 0.0, seed);
        generate_synthetic(&spec).unwrap()
    }

    fn short() -> McmcConfig {
        McmcConfig {
            iterations: 40,
            burn_in: 10,
            thin: 4,
            r: 20,
            k: 1,
            seed: 3,
            ..McmcConfig::default()
        }
    }

    #[test]
    fn singleton_grids() {
        let all = small_data(1, 90);
        let train = all.subset(&(0..60).collect::<Vec<_>>());
        let target = all.subset(&(60..90).collect::<Vec<_>>());
        let cv = cross_validate_k(&train, &[1], 3, &short()).unwrap();
        assert_eq!(cv.best, 1.0);
        assert_eq!(cv.grid[0].accuracies.len(), 3);
        let a = sensitivity_sweep_a(&train, &target, &[0.5], &short()).unwrap();
        assert_eq!(a.grid.len(), 1);
        assert_eq!(a.grid[0].accuracies.len(), 10);
        assert!(a.grid[0].accuracies.iter().all(|&x| x <= 1.0));
    }

    #[test]
    fn cv_is_reproducible() {
        let train = small_data(5, 60);
        let a = cross_validate_k(&train, &[0, 1], 3, &short()).unwrap();
        let b = cross_validate_k(&train, &[0, 1], 3, &short()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cv_rejects_fold_missing_a_cause() {
        let base = small_data(7, 20);
        let mut labels = vec![0; 20];
        labels[0] = 1;
        let cells = base.responses();
        let ds = SymptomDataset::new(
            base.ids().to_vec(),
            base.predictor_names().to_vec(),
            base.cause_names().to_vec(),
            &cells,
            Some(labels),
        )
        .unwrap();
        let err = cross_validate_k(&ds, &[0], 5, &short()).unwrap_err();
        assert!(err.to_string().contains("fold"), "{err}");
    }

    #[test]
    fn r_sweep_needs_labeled_target() {
        let all = small_data(1, 60);
        let train = all.subset(&(0..40).collect::<Vec<_>>());
        let target = all.subset(&(40..60).collect::<Vec<_>>()).without_labels();
        assert!(sensitivity_sweep_r(&train, &target, &[10], &short()).is_err());
    }
}
