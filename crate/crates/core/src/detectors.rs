//! Classical detection: ZF, MMSE, brute-force ML, hard decision, SER, and
//! ZF-noise diagnostics.
//!
//! ZF and MMSE operate on the real lift; the ZF-noise analysis runs in the
//! complex domain where its covariance has the clean closed form
//! sigma_n^2 (H^H H)^-1.

use num_complex::Complex64;

use crate::channel::QPSK_AMP;
use crate::error::{Error, Result};
use crate::numerics::{eigen_spectrum, pseudo_inverse, CMat, CVec, RMat, RVec};

/// Exhaustive ML search is capped at 4^5 candidate vectors.
pub const ML_NT_LIMIT: usize = 5;

/// QPSK components in lexicographic order (re, then im, ascending).
const QPSK_COMPONENTS: [f64; 2] = [-QPSK_AMP, QPSK_AMP];

/// Soft estimate plus hard QPSK decisions from one detector.
#[derive(Debug, Clone)]
pub struct DetectionResult {
    pub soft: RVec,
    pub hard: CVec,
    pub detector: &'static str,
}

impl DetectionResult {
    pub fn new(soft: RVec, detector: &'static str) -> Self {
        let hard = hard_decision(&soft);
        Self { soft, hard, detector }
    }
}

/// ZF detection: pinv(H) * y on the real lift.
pub fn zf_detect(h_real: &RMat, y: &RVec) -> Result<RVec> {
    Ok(pseudo_inverse(h_real)? * y)
}

/// MMSE detection: (H^T H + sigma_n^2 I)^-1 H^T y.
pub fn mmse_detect(h_real: &RMat, y: &RVec, noise_var: f64) -> Result<RVec> {
    assert!(noise_var >= 0.0);
    let n = h_real.ncols();
    let reg = h_real.transpose() * h_real + RMat::identity(n, n) * noise_var;
    let chol = reg.cholesky().ok_or(Error::RankDeficient {
        sigma_min: 0.0,
        tol: 0.0,
    })?;
    Ok(chol.solve(&(h_real.transpose() * y)))
}

/// Exhaustive ML detection over all QPSK candidate vectors.
///
/// Candidates are enumerated in lexicographic symbol order and ties resolve
/// to the first (lexicographically smallest) minimizer.
pub fn ml_detect(h_real: &RMat, y: &RVec) -> Result<RVec> {
    let nt = h_real.ncols() / 2;
    if nt > ML_NT_LIMIT {
        return Err(Error::SearchSpaceTooLarge { nt, limit: ML_NT_LIMIT });
    }
    // Precompute column contributions so each candidate costs O(2Nr * 2Nt).
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut candidate = vec![0.0_f64; 2 * nt];
    enumerate_candidates(h_real, y, 0, nt, &mut candidate, &mut best);
    let (_, soft) = best.expect("non-empty search space");
    Ok(RVec::from_vec(soft))
}

fn enumerate_candidates(
    h_real: &RMat,
    y: &RVec,
    stream: usize,
    nt: usize,
    candidate: &mut Vec<f64>,
    best: &mut Option<(f64, Vec<f64>)>,
) {
    if stream == nt {
        let x = RVec::from_vec(candidate.clone());
        let cost = (y - h_real * &x).norm_squared();
        let better = match best {
            None => true,
            Some((b, _)) => cost < *b,
        };
        if better {
            *best = Some((cost, candidate.clone()));
        }
        return;
    }
    for &re in &QPSK_COMPONENTS {
        for &im in &QPSK_COMPONENTS {
            candidate[stream] = re;
            candidate[stream + nt] = im;
            enumerate_candidates(h_real, y, stream + 1, nt, candidate, best);
        }
    }
}

/// Per-dimension sign slicing to the QPSK grid; sign(0) counts as +.
pub fn hard_decision(soft: &RVec) -> CVec {
    assert!(soft.len() % 2 == 0);
    let nt = soft.len() / 2;
    let slice = |v: f64| if v >= 0.0 { QPSK_AMP } else { -QPSK_AMP };
    CVec::from_fn(nt, |i, _| Complex64::new(slice(soft[i]), slice(soft[i + nt])))
}

/// Symbol error rate: a complex symbol counts as wrong when either quadrature
/// decision differs from the truth.
pub fn ser(predictions: &[CVec], truths: &[CVec]) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: truths.len(),
        });
    }
    let mut wrong = 0usize;
    let mut total = 0usize;
    for (p, t) in predictions.iter().zip(truths) {
        if p.len() != t.len() {
            return Err(Error::LengthMismatch { left: p.len(), right: t.len() });
        }
        for (a, b) in p.iter().zip(t.iter()) {
            total += 1;
            if a.re.signum() != b.re.signum() || a.im.signum() != b.im.signum() {
                wrong += 1;
            }
        }
    }
    Ok(wrong as f64 / total as f64)
}

/// Monte Carlo standard error of an SER estimate: sqrt(p(1-p)/n).
pub fn ser_stderr(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Empirical and analytic statistics of the ZF error component
/// n_zf = (H^H H)^-1 H^H n under perfect CSI.
#[derive(Debug, Clone)]
pub struct ZfNoiseStats {
    pub empirical_cov: CMat,
    pub analytic_cov: CMat,
    pub empirical_total_var: f64,
    pub analytic_total_var: f64,
    pub n_trials: usize,
}

/// Monte Carlo ZF-noise statistics for a fixed channel.
pub fn zf_noise_stats(
    h: &CMat,
    noise_var: f64,
    n_trials: usize,
    rng: &mut crate::numerics::RngStream,
) -> Result<ZfNoiseStats> {
    let nt = h.ncols();
    let gram = h.adjoint() * h;
    let chol = gram.cholesky().ok_or(Error::RankDeficient {
        sigma_min: 0.0,
        tol: 0.0,
    })?;
    let pinv = chol.solve(&h.adjoint());
    let gram_inv = chol.solve(&CMat::identity(nt, nt));

    let mut cov_acc = CMat::zeros(nt, nt);
    let mut total_acc = 0.0;
    for _ in 0..n_trials {
        let n = CVec::from_fn(h.nrows(), |_, _| rng.complex_normal(noise_var));
        let n_zf = &pinv * n;
        cov_acc += &n_zf * n_zf.adjoint();
        total_acc += n_zf.norm_squared();
    }
    let empirical_cov = cov_acc.map(|z| z / n_trials as f64);
    let analytic_cov = gram_inv.map(|z| z * noise_var);
    let analytic_total_var: f64 =
        noise_var * eigen_spectrum(h).iter().map(|l| 1.0 / l).sum::<f64>();
    Ok(ZfNoiseStats {
        empirical_cov,
        analytic_cov,
        empirical_total_var: total_acc / n_trials as f64,
        analytic_total_var,
        n_trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{complex_to_real_channel, realify, RngStream};

    fn random_rmat(rows: usize, cols: usize, rng: &mut RngStream) -> RMat {
        RMat::from_fn(rows, cols, |_, _| rng.standard_normal())
    }

    #[test]
    fn zf_identity_channel() {
        let h = RMat::identity(8, 8);
        let x = RVec::from_fn(8, |i, _| if i % 2 == 0 { QPSK_AMP } else { -QPSK_AMP });
        let out = zf_detect(&h, &x).unwrap();
        assert!((out - x).amax() < 1e-12);
    }

    #[test]
    fn zf_exact_on_noiseless() {
        let mut rng = RngStream::derive(1, "test/zf", 0);
        let h = random_rmat(12, 6, &mut rng);
        let x = RVec::from_fn(6, |_, _| rng.standard_normal());
        let y = &h * &x;
        let out = zf_detect(&h, &y).unwrap();
        assert!((out - x).amax() < 1e-9);
    }

    #[test]
    fn zf_matches_normal_equation_oracle() {
        let mut rng = RngStream::derive(2, "test/zf", 1);
        let h = random_rmat(10, 4, &mut rng);
        let y = RVec::from_fn(10, |_, _| rng.standard_normal());
        let out = zf_detect(&h, &y).unwrap();
        let oracle = (h.transpose() * &h)
            .cholesky()
            .unwrap()
            .solve(&(h.transpose() * &y));
        assert!((out - &oracle).norm() / oracle.norm() < 1e-9);
    }

    #[test]
    fn zf_estimator_equivariance() {
        let mut rng = RngStream::derive(3, "test/zf", 2);
        let h = random_rmat(10, 4, &mut rng);
        let y = RVec::from_fn(10, |_, _| rng.standard_normal());
        let a = zf_detect(&h, &y).unwrap();
        let c = -2.5;
        let b = zf_detect(&(&h * c), &(&y * c)).unwrap();
        assert!((a - b).amax() < 1e-10);
    }

    #[test]
    fn mmse_reduces_to_zf_at_zero_noise() {
        let mut rng = RngStream::derive(4, "test/mmse", 0);
        let h = random_rmat(10, 4, &mut rng);
        let y = RVec::from_fn(10, |_, _| rng.standard_normal());
        let zf = zf_detect(&h, &y).unwrap();
        let mmse = mmse_detect(&h, &y, 0.0).unwrap();
        assert!((zf - mmse).amax() < 1e-9);
    }

    #[test]
    fn mmse_shrinks_to_zero_at_huge_noise() {
        let mut rng = RngStream::derive(5, "test/mmse", 1);
        let h = random_rmat(10, 4, &mut rng);
        let y = RVec::from_fn(10, |_, _| rng.standard_normal());
        let out = mmse_detect(&h, &y, 1e12).unwrap();
        assert!(out.norm() < 1e-6 * y.norm());
    }

    #[test]
    fn mmse_matches_dense_solve_oracle() {
        let mut rng = RngStream::derive(6, "test/mmse", 2);
        let h = random_rmat(10, 4, &mut rng);
        let y = RVec::from_fn(10, |_, _| rng.standard_normal());
        let s2 = 0.37;
        let out = mmse_detect(&h, &y, s2).unwrap();
        let reg = h.transpose() * &h + RMat::identity(4, 4) * s2;
        let oracle = reg.lu().solve(&(h.transpose() * &y)).unwrap();
        assert!((out - &oracle).norm() / oracle.norm() < 1e-9);
    }

    #[test]
    fn ml_recovers_noiseless_perfect_csi() {
        let mut rng = RngStream::derive(7, "test/ml", 0);
        let hc = CMat::from_fn(6, 3, |_, _| rng.complex_normal(1.0));
        let x = crate::channel::qpsk_vector(3, &mut rng);
        let h = complex_to_real_channel(&hc);
        let y = &h * realify(&x);
        let out = ml_detect(&h, &y).unwrap();
        assert!((out - realify(&x)).amax() < 1e-12);
    }

    #[test]
    fn ml_matches_explicit_enumeration() {
        let mut rng = RngStream::derive(8, "test/ml", 1);
        let h = random_rmat(8, 4, &mut rng); // Nt = 2
        let y = RVec::from_fn(8, |_, _| rng.standard_normal());
        let out = ml_detect(&h, &y).unwrap();
        // Oracle: all 16 candidates by hand.
        let a = QPSK_AMP;
        let mut best = f64::INFINITY;
        let mut best_x = RVec::zeros(4);
        for s0r in [-a, a] {
            for s0i in [-a, a] {
                for s1r in [-a, a] {
                    for s1i in [-a, a] {
                        let x = RVec::from_vec(vec![s0r, s1r, s0i, s1i]);
                        let cost = (&y - &h * &x).norm_squared();
                        if cost < best {
                            best = cost;
                            best_x = x;
                        }
                    }
                }
            }
        }
        assert_eq!(out, best_x);
    }

    #[test]
    fn ml_invariant_to_orthogonal_shift() {
        let mut rng = RngStream::derive(9, "test/ml", 2);
        let h = random_rmat(8, 4, &mut rng);
        let y = RVec::from_fn(8, |_, _| rng.standard_normal());
        // Build a vector orthogonal to the column space of H.
        let proj = &h * pseudo_inverse(&h).unwrap();
        let v = RVec::from_fn(8, |_, _| rng.standard_normal());
        let orth = &v - &proj * &v;
        let a = ml_detect(&h, &y).unwrap();
        let b = ml_detect(&h, &(&y + orth * 3.0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ml_rejects_large_search_space() {
        let h = RMat::identity(12, 12); // Nt = 6
        let y = RVec::zeros(12);
        assert!(matches!(
            ml_detect(&h, &y),
            Err(Error::SearchSpaceTooLarge { nt: 6, .. })
        ));
    }

    #[test]
    fn hard_decision_basic_and_tie_rule() {
        let out = hard_decision(&RVec::from_vec(vec![0.7, -0.7]));
        assert_eq!(out[0], Complex64::new(QPSK_AMP, -QPSK_AMP));
        let tie = hard_decision(&RVec::from_vec(vec![0.0, 0.0]));
        assert_eq!(tie[0], Complex64::new(QPSK_AMP, QPSK_AMP));
    }

    #[test]
    fn hard_decision_idempotent_on_constellation() {
        for re in [-QPSK_AMP, QPSK_AMP] {
            for im in [-QPSK_AMP, QPSK_AMP] {
                let soft = RVec::from_vec(vec![re, im]);
                let once = hard_decision(&soft);
                let lifted = realify(&once);
                let twice = hard_decision(&lifted);
                assert_eq!(once, twice);
            }
        }
    }

    #[test]
    fn ser_counting() {
        let a = Complex64::new(QPSK_AMP, QPSK_AMP);
        let truths: Vec<CVec> = (0..50).map(|_| CVec::from_element(2, a)).collect();
        assert_eq!(ser(&truths, &truths).unwrap(), 0.0);
        let negated: Vec<CVec> = truths.iter().map(|v| v.map(|z| -z)).collect();
        assert_eq!(ser(&negated, &truths).unwrap(), 1.0);
        let mut one_wrong = truths.clone();
        one_wrong[3][1] = Complex64::new(-QPSK_AMP, QPSK_AMP);
        assert_eq!(ser(&one_wrong, &truths).unwrap(), 0.01);
        let short: Vec<CVec> = truths[..10].to_vec();
        assert!(matches!(ser(&short, &truths), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn zf_noise_unitary_channel() {
        // Scaled-unitary H: analytic covariance is (sigma^2 / s^2) * I.
        let mut rng = RngStream::derive(10, "test/zfn", 0);
        let h = CMat::identity(4, 4).map(|z| z * 2.0);
        let s2 = 0.5;
        let stats = zf_noise_stats(&h, s2, 20_000, &mut rng).unwrap();
        let expect = CMat::identity(4, 4).map(|z| z * (s2 / 4.0));
        let rel = (&stats.analytic_cov - &expect)
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        assert!(rel < 1e-12);
        let err = (&stats.empirical_cov - &stats.analytic_cov)
            .iter()
            .map(|z| z.norm_sqr())
            .sum::<f64>()
            .sqrt()
            / stats
                .analytic_cov
                .iter()
                .map(|z| z.norm_sqr())
                .sum::<f64>()
                .sqrt();
        assert!(err < 0.05, "relative Frobenius error {err}");
    }

    #[test]
    fn zf_noise_zero_variance() {
        let mut rng = RngStream::derive(11, "test/zfn", 1);
        let h = CMat::from_fn(6, 3, |_, _| rng.complex_normal(1.0));
        let stats = zf_noise_stats(&h, 0.0, 100, &mut rng).unwrap();
        assert_eq!(stats.empirical_cov.iter().map(|z| z.norm()).fold(0.0, f64::max), 0.0);
        assert_eq!(stats.empirical_total_var, 0.0);
        assert_eq!(stats.analytic_total_var, 0.0);
    }
}
