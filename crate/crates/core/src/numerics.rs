//! Special functions and random samplers shared by the samplers.
//!
//! All randomness flows through [`RandomStream`], a ChaCha8 generator keyed by
//! a `(seed, stream_id)` pair. Parallel sweeps derive one stream per
//! `(step, iteration, unit)` through [`StreamKey`], so results do not depend on
//! the order in which workers run.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, StandardNormal};

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

/// Below this point `ln Φ` switches to the Mills-ratio continued fraction.
const LOG_CDF_TAIL: f64 = -8.0;

/// Truncation points beyond this magnitude use rejection samplers.
const TRUNC_TAIL_SWITCH: f64 = 5.0;

/// Seedable, splittable random source.
///
/// Two streams with the same `(seed, stream_id)` yield identical sequences;
/// different `stream_id`s select disjoint ChaCha streams under the same key.
#[derive(Clone, Debug)]
pub struct RandomStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derives per-unit streams from a run seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamKey {
    pub seed: u64,
}

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    /// Stream for `unit` within `(purpose, iteration)`.
    pub fn stream(&self, purpose: u64, iteration: u64, unit: u64) -> RandomStream {
        let id = splitmix64(splitmix64(splitmix64(purpose) ^ iteration) ^ unit);
        RandomStream::new(self.seed, id)
    }

    /// A key for an independent sub-run (a fold, a grid point, ...).
    pub fn child(&self, tag: u64) -> StreamKey {
        StreamKey::new(splitmix64(self.seed ^ splitmix64(tag.wrapping_add(0x5EED))))
    }
}

/// Standard normal CDF Φ(x).
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal density φ(x).
pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

/// Inverse standard normal CDF for `p` in (0, 1).
///
/// Acklam's rational approximation followed by one Halley step against
/// [`std_normal_cdf`].
pub fn std_normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let x = if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    };
    let e = std_normal_cdf(x) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

/// Mills ratio (1 − Φ(t)) / φ(t) for t ≥ 8, by its continued fraction
/// t + 1/(t + 2/(t + 3/(t + ...))) evaluated bottom-up.
fn mills_ratio_tail(t: f64) -> f64 {
    let mut f = t;
    for k in (1..=60).rev() {
        f = t + k as f64 / f;
    }
    1.0 / f
}

/// ln Φ(x), finite for every finite `x`.
pub fn log_std_normal_cdf(x: f64) -> f64 {
    if x < LOG_CDF_TAIL {
        -0.5 * x * x - LN_SQRT_2PI + mills_ratio_tail(-x).ln()
    } else if x > 0.0 {
        (-std_normal_cdf(-x)).ln_1p()
    } else {
        std_normal_cdf(x).ln()
    }
}

/// Which half-line a truncated normal draw lives on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// `[0, ∞)`
    Positive,
    /// `(−∞, 0]`
    Negative,
}

/// Standard normal conditioned on `t ≥ lower`.
fn std_normal_above<R: Rng + ?Sized>(lower: f64, rng: &mut R) -> f64 {
    if lower >= TRUNC_TAIL_SWITCH {
        // exponential proposal with the optimal rate for this truncation point
        let alpha = 0.5 * (lower + (lower * lower + 4.0).sqrt());
        let exp = Exp::new(alpha).expect("alpha is positive");
        loop {
            let t = lower + exp.sample(rng);
            let u: f64 = rng.random();
            if u <= (-0.5 * (t - alpha) * (t - alpha)).exp() {
                return t;
            }
        }
    } else if lower <= -TRUNC_TAIL_SWITCH {
        loop {
            let t: f64 = StandardNormal.sample(rng);
            if t >= lower {
                return t;
            }
        }
    } else {
        // −t is a normal truncated above at −lower
        let u = 1.0 - rng.random::<f64>();
        let t = -std_normal_quantile(u * std_normal_cdf(-lower));
        t.max(lower)
    }
}

/// Draws from N(mean, 1) truncated to the half-line given by `side`.
///
/// A positive draw is strictly greater than zero, a negative one is `≤ 0`.
pub fn sample_truncated_normal<R: Rng + ?Sized>(mean: f64, side: Side, rng: &mut R) -> f64 {
    match side {
        Side::Positive => loop {
            let x = mean + std_normal_above(-mean, rng);
            if x > 0.0 {
                return x;
            }
        },
        Side::Negative => (mean - std_normal_above(mean, rng)).min(0.0),
    }
}

/// Gamma draw with mean `shape / rate`.
pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    if !(shape > 0.0 && shape.is_finite() && rate > 0.0 && rate.is_finite()) {
        return Err(Error::param(format!(
            "gamma requires positive finite shape and rate, got ({shape}, {rate})"
        )));
    }
    let g = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::param(e.to_string()))?;
    Ok(g.sample(rng).max(f64::MIN_POSITIVE))
}

pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    if alpha.is_empty() {
        return Err(Error::param("dirichlet requires at least one component"));
    }
    let mut draws = alpha
        .iter()
        .map(|&a| sample_gamma(a, 1.0, rng))
        .collect::<Result<Vec<_>>>()?;
    let total: f64 = draws.iter().sum();
    draws.iter_mut().for_each(|g| *g /= total);
    Ok(draws)
}

/// Whether a matrix passed to [`sample_mvn`] is a covariance or a precision.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpdForm {
    Covariance,
    Precision,
}

fn cholesky(matrix: &DMatrix<f64>, context: &str) -> Result<Cholesky<f64, Dyn>> {
    if !matrix.is_square() {
        return Err(Error::param(format!("{context}: matrix is not square")));
    }
    Cholesky::new(matrix.clone()).ok_or_else(|| Error::NotPositiveDefinite {
        context: context.to_string(),
    })
}

fn std_normal_vector<R: Rng + ?Sized>(k: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(k, (0..k).map(|_| StandardNormal.sample(rng)))
}

/// Multivariate normal draw; the matrix is factorized, never regularized.
pub fn sample_mvn<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    matrix: &DMatrix<f64>,
    form: SpdForm,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if matrix.nrows() != mean.len() {
        return Err(Error::param("mean and matrix dimensions differ"));
    }
    let chol = cholesky(matrix, "sample_mvn")?;
    let eps = std_normal_vector(mean.len(), rng);
    let offset = match form {
        SpdForm::Covariance => chol.l() * eps,
        SpdForm::Precision => chol
            .l()
            .transpose()
            .solve_upper_triangular(&eps)
            .expect("cholesky factor has a positive diagonal"),
    };
    Ok(mean + offset)
}

/// Gaussian in canonical form: precision `Q` and mean `Q⁻¹ b`.
#[derive(Clone, Debug)]
pub struct GaussianConditional {
    pub mean: DVector<f64>,
    pub precision: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl GaussianConditional {
    pub fn from_canonical(precision: DMatrix<f64>, linear: &DVector<f64>, context: &str) -> Result<Self> {
        let chol = cholesky(&precision, context)?;
        let mean = chol.solve(linear);
        Ok(Self {
            mean,
            precision,
            chol,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let eps = std_normal_vector(self.dim(), rng);
        let offset = self
            .chol
            .l()
            .transpose()
            .solve_upper_triangular(&eps)
            .expect("cholesky factor has a positive diagonal");
        &self.mean + offset
    }
}

/// ln Σ exp(vᵢ) with max shift. All `−∞` gives `−∞`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    if values.len() == 1 {
        return values[0];
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// ln((1/n) Σ exp(vᵢ)).
///
/// Identical inputs return that value bit-exactly for any `n`: the shifted
/// sum is exactly `n`, so the two logarithms cancel.
pub fn log_mean_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    let shifted: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + (shifted.ln() - (values.len() as f64).ln())
}

/// Linear-interpolation sample quantile (type 7). `values` need not be sorted.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    /// erf by its Maclaurin series; accurate for |x| ≲ 3.
    fn erf_series(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        for n in 1..200 {
            term *= -x * x / n as f64;
            sum += term / (2 * n + 1) as f64;
        }
        2.0 / std::f64::consts::PI.sqrt() * sum
    }

    #[test]
    fn cdf_matches_series_oracle() {
        assert_eq!(std_normal_cdf(0.0), 0.5);
        let x = 1.959964;
        let oracle = 0.5 * (1.0 + erf_series(x / std::f64::consts::SQRT_2));
        assert!((std_normal_cdf(x) - oracle).abs() < 1e-13);
        assert!((std_normal_cdf(x) - 0.975).abs() < 1e-6);
        for &x in &[-2.5, -0.3, 0.7, 2.2] {
            let oracle = 0.5 * (1.0 + erf_series(x / std::f64::consts::SQRT_2));
            assert!((std_normal_cdf(x) - oracle).abs() < 1e-14, "x = {x}");
        }
    }

    #[test]
    fn cdf_symmetry() {
        for i in -400..=400 {
            let x = i as f64 * 0.02;
            let s = std_normal_cdf(x) + std_normal_cdf(-x);
            assert!((s - 1.0).abs() <= 1e-15, "x = {x}: {s}");
        }
    }

    /// ∫_t^∞ φ(u) du by composite Simpson on u = t + s, scaled by e^{t²/2}.
    fn log_upper_tail_quadrature(t: f64) -> f64 {
        let width = 40.0 / t;
        let steps = 20_000;
        let h = width / steps as f64;
        let f = |s: f64| (-(t * s) - 0.5 * s * s).exp();
        let mut acc = f(0.0) + f(width);
        for i in 1..steps {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(i as f64 * h);
        }
        (acc * h / 3.0).ln() - 0.5 * t * t - LN_SQRT_2PI
    }

    #[test]
    fn log_cdf_deep_tail() {
        let oracle = log_upper_tail_quadrature(10.0);
        assert!((oracle - (-53.231)).abs() < 1e-3);
        let got = log_std_normal_cdf(-10.0);
        assert!(((got - oracle) / oracle).abs() < 1e-10, "{got} vs {oracle}");
        for &t in &[8.5, 15.0, 40.0, 300.0] {
            let oracle = log_upper_tail_quadrature(t);
            let got = log_std_normal_cdf(-t);
            assert!(got.is_finite());
            assert!(((got - oracle) / oracle).abs() < 1e-10, "t = {t}: {got} vs {oracle}");
        }
    }

    #[test]
    fn log_cdf_trivial_points() {
        assert_eq!(log_std_normal_cdf(0.0), 0.5f64.ln());
        assert!(log_std_normal_cdf(40.0).abs() < 1e-300);
        // the branch seam at -8 is continuous
        let left = log_std_normal_cdf(-8.0 - 1e-12);
        let right = log_std_normal_cdf(-8.0);
        assert!(((left - right) / right).abs() < 1e-10);
    }

    #[test]
    fn log_cdf_consistent_with_cdf() {
        for i in -800..=800 {
            let x = i as f64 * 0.01;
            let a = log_std_normal_cdf(x).exp();
            let b = std_normal_cdf(x);
            assert!(((a - b) / b).abs() < 1e-12, "x = {x}");
        }
    }

    #[test]
    fn log_sum_exp_cases() {
        assert!((log_sum_exp(&[0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
        assert!((log_sum_exp(&[-1000.0, -1000.0]) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[0.0, f64::NEG_INFINITY]), 0.0);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[-3.25]), -3.25);
        assert_eq!(log_mean_exp(&[-7.125; 200]), -7.125);
    }

    fn moments(draws: &[f64]) -> (f64, f64) {
        let m = mean(draws);
        let v = draws.iter().map(|d| (d - m) * (d - m)).sum::<f64>() / (draws.len() - 1) as f64;
        (m, v)
    }

    #[test]
    fn truncated_normal_half_normal_mean() {
        let mut rng = RandomStream::new(11, 0);
        let draws: Vec<f64> = (0..1_000_000)
            .map(|_| sample_truncated_normal(0.0, Side::Positive, &mut rng))
            .collect();
        let (m, v) = moments(&draws);
        let target = (2.0 / std::f64::consts::PI).sqrt();
        assert!((target - 0.79788).abs() < 1e-5);
        let se = (v / draws.len() as f64).sqrt();
        assert!((m - target).abs() < 3.0 * se, "{m} vs {target}");
    }

    #[test]
    fn truncated_normal_shifted_mean() {
        let mut rng = RandomStream::new(12, 0);
        let draws: Vec<f64> = (0..200_000)
            .map(|_| sample_truncated_normal(5.0, Side::Positive, &mut rng))
            .collect();
        let (m, v) = moments(&draws);
        let target = 5.0 + std_normal_pdf(5.0) / std_normal_cdf(5.0);
        assert!((m - target).abs() < 4.0 * (v / draws.len() as f64).sqrt());
        assert!(draws.iter().all(|&d| d > 0.0));
    }

    #[test]
    fn truncated_normal_support() {
        let mut rng = RandomStream::new(13, 0);
        for &mean in &[-30.0, -5.0, -4.99, 0.0, 3.0, 30.0] {
            for _ in 0..10_000 {
                assert!(sample_truncated_normal(mean, Side::Negative, &mut rng) <= 0.0);
                assert!(sample_truncated_normal(mean, Side::Positive, &mut rng) > 0.0);
            }
        }
    }

    #[test]
    fn gamma_moments() {
        let mut rng = RandomStream::new(14, 0);
        for &(shape, rate) in &[(1.0, 1.0), (0.5, 0.5), (1.5, 0.5)] {
            let draws: Vec<f64> = (0..1_000_000)
                .map(|_| sample_gamma(shape, rate, &mut rng).unwrap())
                .collect();
            let (m, v) = moments(&draws);
            let target_mean = shape / rate;
            let target_var = shape / (rate * rate);
            assert!((m - target_mean).abs() < 4.0 * (target_var / 1e6).sqrt(), "{shape},{rate}: {m}");
            assert!(((v - target_var) / target_var).abs() < 0.03, "{shape},{rate}: {v}");
        }
    }

    #[test]
    fn gamma_rejects_bad_parameters() {
        let mut rng = RandomStream::new(0, 0);
        assert!(sample_gamma(0.0, 1.0, &mut rng).is_err());
        assert!(sample_gamma(1.0, -1.0, &mut rng).is_err());
        assert!(sample_gamma(f64::NAN, 1.0, &mut rng).is_err());
    }

    #[test]
    fn dirichlet_means_and_validation() {
        let mut rng = RandomStream::new(15, 0);
        for alpha in [vec![1.0, 1.0], vec![2.0, 1.0, 1.0]] {
            let total: f64 = alpha.iter().sum();
            let mut acc = vec![0.0; alpha.len()];
            let n = 200_000;
            for _ in 0..n {
                let d = sample_dirichlet(&alpha, &mut rng).unwrap();
                assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(d.iter().all(|&v| v > 0.0));
                acc.iter_mut().zip(&d).for_each(|(a, v)| *a += v);
            }
            for (a, al) in acc.iter().zip(&alpha) {
                assert!((a / n as f64 - al / total).abs() < 0.005);
            }
        }
        let d = sample_dirichlet(&[1e6, 1e6], &mut rng).unwrap();
        assert!((d[0] - 0.5).abs() < 0.01);
        assert!(sample_dirichlet(&[1.0, 0.0], &mut rng).is_err());
    }

    #[test]
    fn mvn_moments() {
        let mut rng = RandomStream::new(16, 0);
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let mean = DVector::from_vec(vec![1.0, -1.0]);
        let n = 200_000;
        let mut s = [0.0; 2];
        let mut ss = [[0.0; 2]; 2];
        for _ in 0..n {
            let d = sample_mvn(&mean, &cov, SpdForm::Covariance, &mut rng).unwrap();
            for a in 0..2 {
                s[a] += d[a];
                for b in 0..2 {
                    ss[a][b] += d[a] * d[b];
                }
            }
        }
        let nf = n as f64;
        for a in 0..2 {
            assert!((s[a] / nf - mean[a]).abs() < 0.015);
            for b in 0..2 {
                let c = ss[a][b] / nf - (s[a] / nf) * (s[b] / nf);
                assert!((c - cov[(a, b)]).abs() < 0.04, "cov[{a},{b}] = {c}");
            }
        }
    }

    #[test]
    fn mvn_precision_form_and_scalar() {
        let mut rng = RandomStream::new(17, 0);
        let mean = DVector::from_vec(vec![0.0]);
        let prec = DMatrix::from_row_slice(1, 1, &[0.25]);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| sample_mvn(&mean, &prec, SpdForm::Precision, &mut rng).unwrap()[0])
            .collect();
        let (_, v) = moments(&draws);
        assert!((v.sqrt() - 2.0).abs() < 0.02);
        let cov = DMatrix::from_row_slice(1, 1, &[4.0]);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| sample_mvn(&mean, &cov, SpdForm::Covariance, &mut rng).unwrap()[0])
            .collect();
        let (_, v) = moments(&draws);
        assert!((v.sqrt() - 2.0).abs() < 0.02);
    }

    #[test]
    fn mvn_reports_non_pd() {
        let mut rng = RandomStream::new(0, 0);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let mean = DVector::zeros(2);
        assert!(matches!(
            sample_mvn(&mean, &bad, SpdForm::Covariance, &mut rng),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn streams_reproducible_and_distinct() {
        let a: Vec<u64> = (0..8).map(|_| 0).scan(RandomStream::new(5, 9), |r, _| Some(r.next_u64())).collect();
        let b: Vec<u64> = (0..8).map(|_| 0).scan(RandomStream::new(5, 9), |r, _| Some(r.next_u64())).collect();
        let c: Vec<u64> = (0..8).map(|_| 0).scan(RandomStream::new(5, 10), |r, _| Some(r.next_u64())).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let key = StreamKey::new(5);
        assert_ne!(key.stream(1, 0, 0).stream_id(), key.stream(1, 0, 1).stream_id());
        assert_ne!(key.stream(1, 0, 0).stream_id(), key.stream(2, 0, 0).stream_id());
    }

    #[test]
    fn normal_quantile_inverts_cdf() {
        for &p in &[1e-30, 1e-20, 1e-5, 0.01, 0.3, 0.5, 0.77, 0.99, 1.0 - 1e-9] {
            let x = std_normal_quantile(p);
            assert!(((std_normal_cdf(x) - p) / p).abs() < 1e-12, "p = {p}");
        }
        assert_eq!(std_normal_quantile(0.5), 0.0);
    }

    #[test]
    fn quantile_type7() {
        let v = [3.0, 1.0, 2.0, 4.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert!((quantile(&v, 0.5) - 2.5).abs() < 1e-15);
    }
}
