//! Deterministic linear-algebra and random-number substrate.
//!
//! Complex channel matrices live in `CMat`; the real-valued lift used by the
//! detectors and the network is a `RMat` with block structure
//! `[[Re, -Im], [Im, Re]]`. All randomness flows through [`RngStream`], a
//! PCG64 generator addressed by (seed, stream-id) so every dataset and
//! training run is reproducible bit-for-bit.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use rand_pcg::Pcg64;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type RMat = DMatrix<f64>;
pub type CVec = DVector<Complex64>;
pub type RVec = DVector<f64>;

/// Relative rank tolerance: sigma_min <= RANK_TOL_REL * sigma_max is rank-deficient.
pub const RANK_TOL_REL: f64 = 1e-10;

/// Stack a complex vector as [Re; Im].
pub fn realify(x: &CVec) -> RVec {
    let n = x.len();
    RVec::from_fn(2 * n, |i, _| if i < n { x[i].re } else { x[i - n].im })
}

/// Inverse of [`realify`].
pub fn complexify(x: &RVec) -> CVec {
    assert!(x.len() % 2 == 0, "real lift must have even length");
    let n = x.len() / 2;
    CVec::from_fn(n, |i, _| Complex64::new(x[i], x[i + n]))
}

/// Real-valued lift of a complex channel matrix: [[Re, -Im], [Im, Re]].
///
/// Satisfies `complex_to_real_channel(H) * realify(x) == realify(H * x)`.
pub fn complex_to_real_channel(hc: &CMat) -> RMat {
    let (nr, nt) = (hc.nrows(), hc.ncols());
    RMat::from_fn(2 * nr, 2 * nt, |i, j| {
        let e = hc[(i % nr, j % nt)];
        match (i < nr, j < nt) {
            (true, true) => e.re,
            (true, false) => -e.im,
            (false, true) => e.im,
            (false, false) => e.re,
        }
    })
}

/// Moore-Penrose pseudo-inverse of a full-column-rank tall matrix, via SVD.
///
/// Returns [`Error::RankDeficient`] when the smallest singular value falls at
/// or below `RANK_TOL_REL * sigma_max`; callers treat the sample as unusable.
pub fn pseudo_inverse(m: &RMat) -> Result<RMat> {
    let svd = m.clone().svd(true, true);
    let s = &svd.singular_values;
    let sigma_max = s.iter().cloned().fold(0.0_f64, f64::max);
    let sigma_min = s.iter().cloned().fold(f64::INFINITY, f64::min);
    let tol = RANK_TOL_REL * sigma_max;
    if !(sigma_min > tol) {
        return Err(Error::RankDeficient { sigma_min, tol });
    }
    let u = svd.u.as_ref().expect("svd with u");
    let vt = svd.v_t.as_ref().expect("svd with v_t");
    let s_inv = RMat::from_fn(s.len(), s.len(), |i, j| if i == j { 1.0 / s[i] } else { 0.0 });
    Ok(vt.transpose() * s_inv * u.transpose())
}

/// Eigenvalues of `Hc^H Hc`, descending, clamped to be nonnegative.
///
/// Computed from the singular values of the real lift: each complex singular
/// value appears twice there, so adjacent pairs are averaged.
pub fn eigen_spectrum(hc: &CMat) -> Vec<f64> {
    let nt = hc.ncols();
    let lift = complex_to_real_channel(hc);
    let svd = lift.svd(false, false);
    let mut s: Vec<f64> = svd.singular_values.iter().cloned().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut eig = Vec::with_capacity(nt);
    for i in 0..nt {
        let a = s[2 * i];
        let b = s[2 * i + 1];
        eig.push(((a * a + b * b) / 2.0).max(0.0));
    }
    eig
}

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Counter-based PCG64 stream addressed by (seed, stream-id).
///
/// Same (seed, stream-id) yields the identical sequence on every platform.
/// Parallel consumers must each derive their own stream.
pub struct RngStream {
    rng: Pcg64,
    seed: u64,
    stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        // Spread the 64-bit seed over the 128-bit PCG state.
        let state = ((seed as u128) << 64) | (seed.wrapping_mul(0x9e3779b97f4a7c15) as u128);
        Self {
            rng: Pcg64::new(state, stream_id as u128),
            seed,
            stream_id,
        }
    }

    /// Stream-id = FNV-1a hash of the purpose string, offset by the index.
    pub fn derive(master_seed: u64, purpose: &str, index: u64) -> Self {
        let sid = fnv1a(purpose.as_bytes()).wrapping_add(index.wrapping_mul(0x9e3779b97f4a7c15));
        Self::new(master_seed, sid)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn uniform(&mut self) -> f64 {
        // 53-bit uniform in [0, 1).
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Draw from CN(0, var): real and imaginary parts each N(0, var/2).
    pub fn complex_normal(&mut self, var: f64) -> Complex64 {
        let s = (var / 2.0).sqrt();
        Complex64::new(s * self.standard_normal(), s * self.standard_normal())
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: u64) -> u64 {
        // Lemire-style rejection to avoid modulo bias.
        debug_assert!(n > 0);
        loop {
            let x = self.rng.next_u64();
            let (hi, lo) = {
                let wide = (x as u128) * (n as u128);
                ((wide >> 64) as u64, wide as u64)
            };
            if lo >= n || lo >= n.wrapping_neg() % n {
                return hi;
            }
        }
    }

    /// Seeded Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            xs.swap(i, j);
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_cmat(rows: usize, cols: usize, rng: &mut RngStream) -> CMat {
        CMat::from_fn(rows, cols, |_, _| rng.complex_normal(2.0))
    }

    #[test]
    fn lift_1x1_block() {
        let hc = CMat::from_element(1, 1, Complex64::new(1.0, 2.0));
        let h = complex_to_real_channel(&hc);
        assert_eq!(h, RMat::from_row_slice(2, 2, &[1.0, -2.0, 2.0, 1.0]));
    }

    #[test]
    fn lift_zero_matrix() {
        let hc = CMat::zeros(3, 2);
        let h = complex_to_real_channel(&hc);
        assert_eq!(h, RMat::zeros(6, 4));
        assert_eq!((h.nrows(), h.ncols()), (6, 4));
    }

    #[test]
    fn lift_homomorphism_matches_complex_multiply() {
        let mut rng = RngStream::derive(7, "test/lift", 0);
        let hc = random_cmat(4, 2, &mut rng);
        let x = CVec::from_fn(2, |_, _| rng.complex_normal(2.0));
        let via_lift = complex_to_real_channel(&hc) * realify(&x);
        let direct = realify(&(&hc * &x));
        assert!((via_lift - direct).amax() < 1e-12);
    }

    #[test]
    fn pinv_identity() {
        let m = RMat::identity(4, 4);
        let p = pseudo_inverse(&m).unwrap();
        assert!((p - RMat::identity(4, 4)).amax() < 1e-12);
    }

    #[test]
    fn pinv_orthonormal_columns_is_transpose() {
        // First two columns of a 4x4 DFT-like orthogonal basis.
        let q = RMat::from_row_slice(
            4,
            2,
            &[0.5, 0.5, 0.5, 0.5, 0.5, -0.5, 0.5, -0.5],
        );
        let p = pseudo_inverse(&q).unwrap();
        assert!((&p - q.transpose()).amax() < 1e-12);
    }

    #[test]
    fn pinv_matches_normal_equation_oracle() {
        let mut rng = RngStream::derive(11, "test/pinv", 0);
        let m = RMat::from_fn(8, 4, |_, _| rng.standard_normal());
        let p = pseudo_inverse(&m).unwrap();
        // Independent oracle: Cholesky solve of the normal equations.
        let gram = m.transpose() * &m;
        let chol = gram.cholesky().unwrap();
        let oracle = chol.solve(&m.transpose());
        let rel = (&p - &oracle).norm() / oracle.norm();
        assert!(rel < 1e-9, "relative error {rel}");
        // pinv(M) * M = I for conditioned inputs.
        assert!((p * m - RMat::identity(4, 4)).amax() < 1e-8);
    }

    #[test]
    fn pinv_rank_deficient_errors() {
        let mut m = RMat::zeros(6, 3);
        for i in 0..6 {
            m[(i, 0)] = 1.0;
            m[(i, 1)] = 2.0; // column 1 = 2 * column 0
            m[(i, 2)] = (i as f64).sin();
        }
        assert!(matches!(pseudo_inverse(&m), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn spectrum_identity() {
        let hc = CMat::identity(4, 4);
        let eig = eigen_spectrum(&hc);
        for v in eig {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn spectrum_rank_one_outer_product() {
        let mut rng = RngStream::derive(3, "test/spectrum", 0);
        let u = CVec::from_fn(5, |_, _| rng.complex_normal(2.0));
        let v = CVec::from_fn(3, |_, _| rng.complex_normal(2.0));
        let hc = &u * v.adjoint();
        let eig = eigen_spectrum(&hc);
        let expect = u.norm_squared() * v.norm_squared();
        assert!((eig[0] - expect).abs() / expect < 1e-9);
        assert!(eig[1] < 1e-9 * eig[0]);
        assert!(eig[2] < 1e-9 * eig[0]);
    }

    #[test]
    fn spectrum_trace_identity() {
        let mut rng = RngStream::derive(5, "test/spectrum", 1);
        let hc = random_cmat(6, 4, &mut rng);
        let eig = eigen_spectrum(&hc);
        let sum: f64 = eig.iter().sum();
        let fro2: f64 = hc.iter().map(|z| z.norm_sqr()).sum();
        assert!((sum - fro2).abs() / fro2 < 1e-9);
    }

    #[test]
    fn rng_determinism_and_stream_separation() {
        let mut a = RngStream::derive(42, "purpose", 3);
        let mut b = RngStream::derive(42, "purpose", 3);
        let mut c = RngStream::derive(42, "purpose", 4);
        let xa: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        let xc: Vec<u64> = (0..8).map(|_| c.next_u64()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }
}
