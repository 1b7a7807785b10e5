//! Chi-square evaluation machinery, joint Gaussian noise sampling and
//! empirical alarm-rate estimation.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::synthesis::NoiseSpec;

/// Chi-square test description: degrees of freedom, false-alarm bound and a
/// noncentrality parameter carried for reporting only.
#[derive(Debug, Clone, Copy)]
pub struct ChiSquareSpec {
    pub dof: usize,
    pub alpha: f64,
    pub delta: f64,
}

impl ChiSquareSpec {
    pub fn new(dof: usize, alpha: f64) -> Result<Self> {
        if dof == 0 {
            return Err(Error::InvalidArgument("chi-square dof must be >= 1".into()));
        }
        if !(0.0 < alpha && alpha < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must be in (0,1), got {alpha}"
            )));
        }
        Ok(Self { dof, alpha, delta: 0.0 })
    }

    pub fn threshold(&self) -> f64 {
        chi2_threshold(self.alpha, self.dof)
    }
}

// Lanczos g=7, n=9 coefficients.
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

fn ln_gamma(x: f64) -> f64 {
    // Valid for x >= 0.5, which covers every a = m/2 used here.
    debug_assert!(x >= 0.5);
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x - 1.0 + i as f64);
    }
    let t = x + 6.5;
    0.5 * (std::f64::consts::TAU).ln() + (x - 0.5) * t.ln() - t + acc.ln()
}

const GAMMA_EPS: f64 = 1e-15;
const GAMMA_ITMAX: usize = 500;

/// Regularized lower incomplete gamma P(a, x); series below x = a + 1,
/// Lentz continued fraction above.
fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let lg = ln_gamma(a);
    let prefix = (-x + a * x.ln() - lg).exp();
    if x < a + 1.0 {
        // Series representation.
        let mut ap = a;
        let mut del = 1.0 / a;
        let mut sum = del;
        for _ in 0..GAMMA_ITMAX {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if del.abs() < sum.abs() * GAMMA_EPS {
                break;
            }
        }
        (sum * prefix).clamp(0.0, 1.0)
    } else {
        // Lentz continued fraction for Q(a, x).
        const FPMIN: f64 = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / FPMIN;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..=GAMMA_ITMAX {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < FPMIN {
                d = FPMIN;
            }
            c = b + an / c;
            if c.abs() < FPMIN {
                c = FPMIN;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < GAMMA_EPS {
                break;
            }
        }
        (1.0 - prefix * h).clamp(0.0, 1.0)
    }
}

/// CDF of the central chi-square distribution with `m` degrees of freedom.
pub fn chi2_cdf(x: f64, m: usize) -> f64 {
    gamma_p(m as f64 / 2.0, x / 2.0)
}

/// Threshold `J_th` with `P(chi2(m) > J_th) = alpha`, by bisection on the
/// regularized incomplete gamma.
pub fn chi2_threshold(alpha: f64, m: usize) -> f64 {
    assert!(m >= 1, "dof must be >= 1");
    assert!(0.0 < alpha && alpha < 1.0, "alpha must be in (0,1)");
    let target = 1.0 - alpha;
    let mf = m as f64;
    let mut lo = 0.0;
    let mut hi = mf + 40.0 * (2.0 * mf).sqrt();
    // Widen in the (pathological) tiny-alpha case.
    while chi2_cdf(hi, m) < target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if chi2_cdf(mid, m) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 * hi.max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Precomputed sampler for the joint draw `(omega, nu)` with cross-covariance
/// honored: `cov([omega; nu]) = [[Sigma_w, S], [S^T, Sigma_v]]`.
#[derive(Debug, Clone)]
pub struct JointNoiseSampler {
    factor: DMatrix<f64>,
    n: usize,
    m: usize,
}

impl JointNoiseSampler {
    pub fn new(noise: &NoiseSpec) -> Result<Self> {
        let n = noise.sigma_w.nrows();
        let m = noise.sigma_v.nrows();
        let dim = n + m;
        let mut joint = DMatrix::zeros(dim, dim);
        joint.view_mut((0, 0), (n, n)).copy_from(&noise.sigma_w);
        joint.view_mut((0, n), (n, m)).copy_from(&noise.s);
        joint.view_mut((n, 0), (m, n)).copy_from(&noise.s.transpose());
        joint.view_mut((n, n), (m, m)).copy_from(&noise.sigma_v);
        let factor = psd_sqrt(&joint)?;
        Ok(Self { factor, n, m })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> (DVector<f64>, DVector<f64>) {
        let dim = self.n + self.m;
        let z = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let joint = &self.factor * z;
        (
            joint.rows(0, self.n).into_owned(),
            joint.rows(self.n, self.m).into_owned(),
        )
    }
}

/// Square root of a PSD matrix: Cholesky fast path, symmetric-eigen fallback
/// for the semidefinite case (exact zeros stay exact zeros).
fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() == 0 {
        return Ok(m.clone());
    }
    if let Some(chol) = m.clone().cholesky() {
        return Ok(chol.l());
    }
    let sym = (m + m.transpose()) * 0.5;
    let scale = sym.amax().max(1.0);
    let eig = sym.symmetric_eigen();
    let mut evals = eig.eigenvalues.clone();
    for v in evals.iter_mut() {
        if *v < -1e-8 * scale {
            return Err(Error::IndefiniteCovariance { eigenvalue: *v });
        }
        *v = v.max(0.0).sqrt();
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&evals))
}

/// One joint Gaussian draw `(omega, nu)` from the noise spec.
pub fn sample_joint_noise(noise: &NoiseSpec, rng: &mut impl Rng) -> Result<(DVector<f64>, DVector<f64>)> {
    Ok(JointNoiseSampler::new(noise)?.sample(rng))
}

/// One zero-mean Gaussian draw with the given covariance.
pub fn sample_gaussian(cov: &DMatrix<f64>, rng: &mut impl Rng) -> Result<DVector<f64>> {
    let factor = psd_sqrt(cov)?;
    let z = DVector::from_fn(cov.nrows(), |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(factor * z)
}

/// Empirical alarm-rate summary with a normal-approximation 95% CI and the
/// detection delay when an attack onset is given.
#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    /// Steps counted for the false-alarm rate (pre-onset when an onset is set).
    pub n_steps: usize,
    pub n_alarms: usize,
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Steps from attack onset to the first alarm at or after it.
    pub detection_delay: Option<usize>,
}

impl RateReport {
    pub fn contains(&self, rate: f64) -> bool {
        self.ci_low <= rate && rate <= self.ci_high
    }
}

/// Counts pre-onset alarms as false alarms; the first alarm at or after the
/// onset gives the detection delay.
pub fn empirical_rates(alarms: &[bool], onset: Option<usize>) -> RateReport {
    let cutoff = onset.unwrap_or(alarms.len()).min(alarms.len());
    let n_steps = cutoff;
    let n_alarms = alarms[..cutoff].iter().filter(|&&a| a).count();
    let rate = if n_steps == 0 {
        0.0
    } else {
        n_alarms as f64 / n_steps as f64
    };
    let (ci_low, ci_high) = if n_steps == 0 {
        (0.0, 1.0)
    } else {
        let n = n_steps as f64;
        let half = 1.96 * (rate * (1.0 - rate) / n).sqrt() + 0.5 / n;
        ((rate - half).max(0.0), (rate + half).min(1.0))
    };
    let detection_delay = onset.and_then(|k_a| {
        alarms
            .iter()
            .enumerate()
            .skip(k_a)
            .find(|(_, &a)| a)
            .map(|(k, _)| k - k_a)
    });
    RateReport {
        n_steps,
        n_alarms,
        rate,
        ci_low,
        ci_high,
        detection_delay,
    }
}

/// Auxiliary windowed mean-shift alarm: the moving sum of `J` over a length-W
/// window is compared against the (1-alpha) quantile of chi-square(W*m).
/// Intended for replay scenarios where per-step statistics may stay calibrated.
#[derive(Debug, Clone)]
pub struct WindowedMeanShift {
    window: usize,
    threshold: f64,
    buf: VecDeque<f64>,
    sum: f64,
}

impl WindowedMeanShift {
    pub const DEFAULT_WINDOW: usize = 50;

    pub fn new(window: usize, dof_per_step: usize, alpha: f64) -> Self {
        let threshold = chi2_threshold(alpha, window * dof_per_step);
        Self {
            window,
            threshold,
            buf: VecDeque::with_capacity(window),
            sum: 0.0,
        }
    }

    /// Pushes one J sample; returns true when the filled window alarms.
    pub fn push(&mut self, j: f64) -> bool {
        self.buf.push_back(j);
        self.sum += j;
        if self.buf.len() > self.window {
            self.sum -= self.buf.pop_front().unwrap();
        }
        self.buf.len() == self.window && self.sum > self.threshold
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn threshold_known_values() {
        assert_abs_diff_eq!(chi2_threshold(0.05, 1), 3.841458820694124, epsilon = 1e-8);
        assert_abs_diff_eq!(chi2_threshold(0.05, 2), -2.0 * 0.05f64.ln(), epsilon = 1e-9);
        assert_abs_diff_eq!(chi2_threshold(0.5, 2), 2.0 * 2.0f64.ln(), epsilon = 1e-9);
    }

    #[test]
    fn threshold_inverts_cdf() {
        for &alpha in &[0.001, 0.01, 0.05, 0.5] {
            for m in 1..=10 {
                let jth = chi2_threshold(alpha, m);
                assert!(
                    (chi2_cdf(jth, m) - (1.0 - alpha)).abs() < 1e-9,
                    "alpha={alpha} m={m}"
                );
            }
        }
    }

    #[test]
    fn joint_sampler_honors_independence() {
        let noise = NoiseSpec::new(
            dmatrix![1.0, 0.0; 0.0, 1.0],
            dmatrix![0.5],
            DMatrix::zeros(2, 1),
            DMatrix::zeros(2, 2),
        )
        .unwrap();
        let sampler = JointNoiseSampler::new(&noise).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 100_000;
        let mut cross = [0.0f64; 2];
        let mut var_v = 0.0;
        for _ in 0..n {
            let (w, v) = sampler.sample(&mut rng);
            cross[0] += w[0] * v[0];
            cross[1] += w[1] * v[0];
            var_v += v[0] * v[0];
        }
        let nf = n as f64;
        assert!((var_v / nf - 0.5).abs() < 0.025);
        assert!(cross[0].abs() / nf < 0.05 * 1.0);
        assert!(cross[1].abs() / nf < 0.05 * 1.0);
    }

    #[test]
    fn zero_process_noise_stays_zero() {
        let noise = NoiseSpec::new(
            DMatrix::zeros(2, 2),
            dmatrix![1.0],
            DMatrix::zeros(2, 1),
            DMatrix::zeros(2, 2),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let (w, _) = sample_joint_noise(&noise, &mut rng).unwrap();
            assert_eq!(w[0], 0.0);
            assert_eq!(w[1], 0.0);
        }
    }

    #[test]
    fn sampler_is_deterministic_per_seed() {
        let noise = NoiseSpec::new(
            dmatrix![0.3],
            dmatrix![0.7],
            dmatrix![0.1],
            dmatrix![0.0],
        )
        .unwrap();
        let sampler = JointNoiseSampler::new(&noise).unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..10).map(|_| sampler.sample(&mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
    }

    #[test]
    fn cross_covariance_honored() {
        let noise = NoiseSpec::new(
            dmatrix![1.0],
            dmatrix![1.0],
            dmatrix![0.6],
            dmatrix![0.0],
        )
        .unwrap();
        let sampler = JointNoiseSampler::new(&noise).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let (w, v) = sampler.sample(&mut rng);
            acc += w[0] * v[0];
        }
        assert!((acc / n as f64 - 0.6).abs() < 0.03);
    }

    #[test]
    fn rates_all_clear() {
        let r = empirical_rates(&[false; 100], None);
        assert_eq!(r.rate, 0.0);
        assert_eq!(r.n_alarms, 0);
        assert!(r.detection_delay.is_none());
    }

    #[test]
    fn rates_delay_measured_from_onset() {
        let mut alarms = vec![false; 600];
        alarms[503] = true;
        let r = empirical_rates(&alarms, Some(500));
        assert_eq!(r.detection_delay, Some(3));
        assert_eq!(r.n_steps, 500);
        assert_eq!(r.n_alarms, 0);
    }

    #[test]
    fn windowed_alarm_fires_on_shift() {
        let mut w = WindowedMeanShift::new(20, 1, 0.05);
        let mut fired = false;
        for _ in 0..40 {
            fired |= w.push(1.0); // calibrated level: mean 1 per step
        }
        assert!(!fired);
        for _ in 0..40 {
            fired |= w.push(4.0);
        }
        assert!(fired);
    }
}
