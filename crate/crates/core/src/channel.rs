//! Per-task channel generation, pilot transmission, LS estimation, datasets.
//!
//! Each task is a clustered geometric channel: L scatterer clusters with
//! fixed departure/arrival angles and power fractions, plus per-draw complex
//! gains and angular jitter. Half-wavelength uniform linear arrays at both
//! ends. The model is normalized so E[||H||_F^2] = Nt * Nr.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{
    complex_to_real_channel, pseudo_inverse, realify, CMat, CVec, RVec, RngStream,
};

/// QPSK component amplitude: symbols are {(+-1 +- i)/sqrt(2)}.
pub const QPSK_AMP: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Geometry and channel-model knobs shared by all tasks of a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelParams {
    pub nt: usize,
    pub nr: usize,
    pub np: usize,
    pub cluster_count: usize,
    /// Per-cluster angular spread (radians) for the jitter draws.
    pub angular_spread: f64,
    /// Train/val/test fractions, summing to 1.
    pub split: [f64; 3],
    /// Number of calibration draws used to pin the SNR convention.
    pub n_calib: usize,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            nt: 8,
            nr: 32,
            np: 16,
            cluster_count: 6,
            angular_spread: 5.0 * PI / 180.0,
            split: [0.81, 0.09, 0.10],
            n_calib: 1000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cluster {
    /// Departure angle at the transmit array, radians in [-pi, pi).
    pub departure: f64,
    /// Arrival angle at the receive array, radians in [-pi, pi).
    pub arrival: f64,
    /// Power fraction; fractions over a task sum to 1.
    pub power: f64,
    /// Angular spread of the per-draw jitter, radians.
    pub spread: f64,
}

/// Fixed scatterer layout of one task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScattererConfig {
    pub task_id: u64,
    pub clusters: Vec<Cluster>,
}

impl ScattererConfig {
    pub fn cluster_count(&self) -> usize {
        self.clusters.len()
    }
}

/// One generated link realization with everything the detectors and SDNet need.
#[derive(Debug, Clone)]
pub struct Sample {
    /// Transmitted QPSK symbol vector (Nt).
    pub x: CVec,
    /// Received vector y = H x + n (Nr).
    pub y: CVec,
    /// True channel (Nr x Nt).
    pub h: CMat,
    /// Received pilot matrix (Nr x Np); dropped on dataset round-trips.
    pub y_pilot: Option<CMat>,
    /// Stored noise draw; dropped on dataset round-trips.
    pub noise: Option<CVec>,
    /// LS channel estimate (Nr x Nt).
    pub h_ls: CMat,
    /// ZF soft output on the real lift (2Nt).
    pub x_zf: RVec,
    /// Per-complex-entry noise variance used for this sample.
    pub noise_var: f64,
}

/// Samples of one task, partitioned train/val/test in storage order.
#[derive(Debug, Clone)]
pub struct TaskDataset {
    pub task_id: u64,
    pub config: ScattererConfig,
    pub snr_db: f64,
    pub nt: usize,
    pub nr: usize,
    pub np: usize,
    pub master_seed: u64,
    pub samples: Vec<Sample>,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Samples redrawn because ZF hit a rank-deficient estimate.
    pub redraw_count: usize,
}

impl TaskDataset {
    pub fn train(&self) -> &[Sample] {
        &self.samples[..self.n_train]
    }
    pub fn val(&self) -> &[Sample] {
        &self.samples[self.n_train..self.n_train + self.n_val]
    }
    pub fn test(&self) -> &[Sample] {
        &self.samples[self.n_train + self.n_val..]
    }

    /// Content hash over the serialized sample blob; used to assert that
    /// competing schemes consumed identical data.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(sample_blob(self));
        hex_string(&hasher.finalize())
    }
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Deterministic per-task scatterer layout.
///
/// Angles are uniform on [-pi, pi); power fractions come from normalized
/// unit-mean exponential draws, all from a task-addressed stream.
pub fn make_task(master_seed: u64, task_id: u64, params: &ChannelParams) -> ScattererConfig {
    assert!(params.cluster_count >= 1);
    let mut rng = RngStream::derive(master_seed, "task-config", task_id);
    let l = params.cluster_count;
    let mut clusters = Vec::with_capacity(l);
    let mut raw_powers = Vec::with_capacity(l);
    for _ in 0..l {
        let departure = rng.uniform() * 2.0 * PI - PI;
        let arrival = rng.uniform() * 2.0 * PI - PI;
        // Unit-mean exponential.
        let p = -(1.0 - rng.uniform()).ln();
        raw_powers.push(p);
        clusters.push(Cluster {
            departure,
            arrival,
            power: 0.0,
            spread: params.angular_spread,
        });
    }
    let total: f64 = raw_powers.iter().sum();
    for (c, p) in clusters.iter_mut().zip(&raw_powers) {
        c.power = p / total;
    }
    ScattererConfig { task_id, clusters }
}

/// Unit-norm half-wavelength ULA steering vector.
pub fn steering_vector(n: usize, angle: f64) -> CVec {
    let scale = 1.0 / (n as f64).sqrt();
    CVec::from_fn(n, |k, _| {
        let phase = PI * k as f64 * angle.sin();
        Complex64::from_polar(scale, phase)
    })
}

/// Draw one channel realization from a task's scatterer layout.
///
/// H = sqrt(Nt*Nr) * sum_l sqrt(p_l) * alpha_l * a_r(theta_l + d) a_t(phi_l + d')^H
/// with alpha_l ~ CN(0,1) and Gaussian angle jitter; steering vectors are
/// unit-norm, so E[||H||_F^2] = Nt * Nr.
pub fn draw_channel(config: &ScattererConfig, nt: usize, nr: usize, rng: &mut RngStream) -> CMat {
    let scale = ((nt * nr) as f64).sqrt();
    let mut h = CMat::zeros(nr, nt);
    for c in &config.clusters {
        let alpha = rng.complex_normal(1.0);
        let d_arr = rng.standard_normal() * c.spread;
        let d_dep = rng.standard_normal() * c.spread;
        let a_r = steering_vector(nr, c.arrival + d_arr);
        let a_t = steering_vector(nt, c.departure + d_dep);
        let gain = alpha * Complex64::from(scale * c.power.sqrt());
        h += (&a_r * a_t.adjoint()).map(|z| z * gain);
    }
    h
}

/// Unit-modulus orthogonal pilots: the first Nt rows of the Np-point DFT
/// matrix, so X_p X_p^H = Np * I.
pub fn pilot_matrix(nt: usize, np: usize) -> CMat {
    CMat::from_fn(nt, np, |k, n| {
        Complex64::from_polar(1.0, -2.0 * PI * (k * n) as f64 / np as f64)
    })
}

/// LS channel estimate H_LS = Y_p X_p^H (X_p X_p^H)^-1.
pub fn ls_estimate(y_pilot: &CMat, x_pilot: &CMat) -> Result<CMat> {
    let gram = x_pilot * x_pilot.adjoint();
    let chol = gram.cholesky().ok_or(Error::RankDeficient {
        sigma_min: 0.0,
        tol: 0.0,
    })?;
    // (G^-1 X_p Y_p^H)^H = Y_p X_p^H G^-1 for Hermitian G.
    let solved = chol.solve(&(x_pilot * y_pilot.adjoint()));
    Ok(solved.adjoint())
}

/// Draw a uniform QPSK symbol vector.
pub fn qpsk_vector(nt: usize, rng: &mut RngStream) -> CVec {
    CVec::from_fn(nt, |_, _| {
        let re = if rng.below(2) == 0 { QPSK_AMP } else { -QPSK_AMP };
        let im = if rng.below(2) == 0 { QPSK_AMP } else { -QPSK_AMP };
        Complex64::new(re, im)
    })
}

/// Per-complex-entry noise variance for a target receive SNR.
///
/// Convention: sigma_n^2 is set so 10*log10(E_rx / sigma_n^2) equals the
/// target, where E_rx is the empirical mean of ||H x||^2 / Nr over a
/// calibration draw from the task's own channel statistics.
pub fn calibrate_noise_var(
    config: &ScattererConfig,
    snr_db: f64,
    params: &ChannelParams,
    master_seed: u64,
) -> f64 {
    if snr_db.is_infinite() {
        return 0.0;
    }
    let mut rng = RngStream::derive(master_seed, "snr-calibration", config.task_id);
    let mut acc = 0.0;
    for _ in 0..params.n_calib {
        let h = draw_channel(config, params.nt, params.nr, &mut rng);
        let x = qpsk_vector(params.nt, &mut rng);
        acc += (&h * &x).norm_squared() / params.nr as f64;
    }
    let e_rx = acc / params.n_calib as f64;
    e_rx / 10f64.powf(snr_db / 10.0)
}

fn split_sizes(n: usize, split: [f64; 3]) -> (usize, usize, usize) {
    let n_train = (n as f64 * split[0]).round() as usize;
    let n_val = (n as f64 * split[1]).round() as usize;
    let n_test = n - n_train - n_val;
    (n_train, n_val, n_test)
}

/// Generate a full task dataset: channels, symbols, pilots, noise, LS
/// estimates, and cached ZF outputs, split train/val/test.
///
/// Channel draws and noise draws come from separate streams, so regenerating
/// at a different SNR reuses the same channel realizations with fresh noise.
pub fn generate_dataset(
    config: &ScattererConfig,
    n_samples: usize,
    snr_db: f64,
    params: &ChannelParams,
    master_seed: u64,
) -> Result<TaskDataset> {
    assert!(n_samples >= 10, "need at least 10 samples");
    assert!(params.np >= params.nt, "pilot length must cover Nt");
    let (nt, nr, np) = (params.nt, params.nr, params.np);
    let noise_var = calibrate_noise_var(config, snr_db, params, master_seed);
    let x_pilot = pilot_matrix(nt, np);

    let mut ch_rng = RngStream::derive(master_seed, "channel", config.task_id);
    let mut sym_rng = RngStream::derive(master_seed, "symbols", config.task_id);
    let noise_stream_index = config.task_id.wrapping_mul(0x10001) ^ snr_db.to_bits();
    let mut noise_rng = RngStream::derive(master_seed, "noise", noise_stream_index);

    let mut samples = Vec::with_capacity(n_samples);
    let mut redraw_count = 0usize;
    while samples.len() < n_samples {
        let h = draw_channel(config, nt, nr, &mut ch_rng);
        let x = qpsk_vector(nt, &mut sym_rng);
        let n = CVec::from_fn(nr, |_, _| noise_rng.complex_normal(noise_var));
        let y = &h * &x + &n;
        let n_pilot = CMat::from_fn(nr, np, |_, _| noise_rng.complex_normal(noise_var));
        let y_pilot = &h * &x_pilot + &n_pilot;
        let h_ls = ls_estimate(&y_pilot, &x_pilot)?;
        let h_ls_real = complex_to_real_channel(&h_ls);
        let x_zf = match pseudo_inverse(&h_ls_real) {
            Ok(pinv) => pinv * realify(&y),
            Err(Error::RankDeficient { .. }) => {
                redraw_count += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        samples.push(Sample {
            x,
            y,
            h,
            y_pilot: Some(y_pilot),
            noise: Some(n),
            h_ls,
            x_zf,
            noise_var,
        });
    }

    let (n_train, n_val, n_test) = split_sizes(n_samples, params.split);
    Ok(TaskDataset {
        task_id: config.task_id,
        config: config.clone(),
        snr_db,
        nt,
        nr,
        np,
        master_seed,
        samples,
        n_train,
        n_val,
        n_test,
        redraw_count,
    })
}

/// Mean Euclidean distance between channel realizations of two datasets over
/// k random pairings, complex entries counted as two reals.
pub fn dataset_distance(a: &TaskDataset, b: &TaskDataset, k: usize, rng: &mut RngStream) -> f64 {
    assert!(k <= a.samples.len().min(b.samples.len()));
    let mut acc = 0.0;
    for _ in 0..k {
        let ia = rng.below(a.samples.len() as u64) as usize;
        let ib = rng.below(b.samples.len() as u64) as usize;
        let diff = &a.samples[ia].h - &b.samples[ib].h;
        acc += diff.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    }
    acc / k as f64
}

// ---------------------------------------------------------------------------
// Persistence: JSON manifest + little-endian float32 blob.

const DATASET_MAGIC: &[u8; 8] = b"SDNETDS1";
pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetManifest {
    format_version: u32,
    task_id: u64,
    config: ScattererConfig,
    /// None encodes the noiseless (infinite SNR) switch.
    snr_db: Option<f64>,
    nt: usize,
    nr: usize,
    np: usize,
    master_seed: u64,
    n_train: usize,
    n_val: usize,
    n_test: usize,
    redraw_count: usize,
    noise_var: f64,
    floats_per_sample: usize,
}

fn floats_per_sample(nt: usize, nr: usize) -> usize {
    // x re/im, y re/im, H re/im, H_LS re/im, x_zf.
    2 * nt + 2 * nr + 2 * nr * nt + 2 * nr * nt + 2 * nt
}

fn push_cvec(out: &mut Vec<f32>, v: &CVec) {
    for z in v.iter() {
        out.push(z.re as f32);
    }
    for z in v.iter() {
        out.push(z.im as f32);
    }
}

fn push_cmat(out: &mut Vec<f32>, m: &CMat) {
    // Row-major, real parts then imaginary parts.
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)].re as f32);
        }
    }
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)].im as f32);
        }
    }
}

fn sample_blob(ds: &TaskDataset) -> Vec<u8> {
    let mut floats: Vec<f32> =
        Vec::with_capacity(ds.samples.len() * floats_per_sample(ds.nt, ds.nr));
    for s in &ds.samples {
        push_cvec(&mut floats, &s.x);
        push_cvec(&mut floats, &s.y);
        push_cmat(&mut floats, &s.h);
        push_cmat(&mut floats, &s.h_ls);
        for v in s.x_zf.iter() {
            floats.push(*v as f32);
        }
    }
    let mut bytes = Vec::with_capacity(floats.len() * 4);
    for f in floats {
        bytes.extend_from_slice(&f.to_le_bytes());
    }
    bytes
}

pub fn save_dataset(ds: &TaskDataset, path: &Path) -> Result<()> {
    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        task_id: ds.task_id,
        config: ds.config.clone(),
        snr_db: if ds.snr_db.is_infinite() { None } else { Some(ds.snr_db) },
        nt: ds.nt,
        nr: ds.nr,
        np: ds.np,
        master_seed: ds.master_seed,
        n_train: ds.n_train,
        n_val: ds.n_val,
        n_test: ds.n_test,
        redraw_count: ds.redraw_count,
        noise_var: ds.samples.first().map(|s| s.noise_var).unwrap_or(0.0),
        floats_per_sample: floats_per_sample(ds.nt, ds.nr),
    };
    let manifest_bytes = serde_json::to_vec(&manifest)?;
    let blob = sample_blob(ds);
    let mut f = std::fs::File::create(path)?;
    f.write_all(DATASET_MAGIC)?;
    f.write_all(&(manifest_bytes.len() as u64).to_le_bytes())?;
    f.write_all(&manifest_bytes)?;
    f.write_all(&blob)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<TaskDataset> {
    let mut f = std::fs::File::open(path)?;
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic != DATASET_MAGIC {
        return Err(Error::CorruptBlob("bad dataset magic".into()));
    }
    let mut len_bytes = [0u8; 8];
    f.read_exact(&mut len_bytes)?;
    let mlen = u64::from_le_bytes(len_bytes) as usize;
    let mut manifest_bytes = vec![0u8; mlen];
    f.read_exact(&mut manifest_bytes)?;
    let manifest: DatasetManifest = serde_json::from_slice(&manifest_bytes)?;
    if manifest.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::FormatVersionMismatch {
            expected: DATASET_FORMAT_VERSION,
            found: manifest.format_version,
        });
    }
    let mut blob = Vec::new();
    f.read_to_end(&mut blob)?;

    let n_samples = manifest.n_train + manifest.n_val + manifest.n_test;
    let fps = floats_per_sample(manifest.nt, manifest.nr);
    if fps != manifest.floats_per_sample || blob.len() != n_samples * fps * 4 {
        return Err(Error::CorruptBlob(format!(
            "blob length {} does not match {} samples of {} floats",
            blob.len(),
            n_samples,
            fps
        )));
    }
    let floats: Vec<f64> = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();

    let (nt, nr) = (manifest.nt, manifest.nr);
    let mut samples = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let mut off = i * fps;
        let mut take = |n: usize| {
            let s = &floats[off..off + n];
            off += n;
            s.to_vec()
        };
        let read_cvec = |re: Vec<f64>, im: Vec<f64>| {
            CVec::from_fn(re.len(), |k, _| Complex64::new(re[k], im[k]))
        };
        let x = read_cvec(take(nt), take(nt));
        let y = read_cvec(take(nr), take(nr));
        let read_cmat = |re: Vec<f64>, im: Vec<f64>, rows: usize, cols: usize| {
            CMat::from_fn(rows, cols, |r, c| {
                Complex64::new(re[r * cols + c], im[r * cols + c])
            })
        };
        let h = read_cmat(take(nr * nt), take(nr * nt), nr, nt);
        let h_ls = read_cmat(take(nr * nt), take(nr * nt), nr, nt);
        let x_zf = RVec::from_vec(take(2 * nt));
        samples.push(Sample {
            x,
            y,
            h,
            y_pilot: None,
            noise: None,
            h_ls,
            x_zf,
            noise_var: manifest.noise_var,
        });
    }

    Ok(TaskDataset {
        task_id: manifest.task_id,
        config: manifest.config,
        snr_db: manifest.snr_db.unwrap_or(f64::INFINITY),
        nt,
        nr,
        np: manifest.np,
        master_seed: manifest.master_seed,
        samples,
        n_train: manifest.n_train,
        n_val: manifest.n_val,
        n_test: manifest.n_test,
        redraw_count: manifest.redraw_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::eigen_spectrum;

    fn small_params() -> ChannelParams {
        ChannelParams {
            nt: 4,
            nr: 8,
            np: 8,
            n_calib: 200,
            ..ChannelParams::default()
        }
    }

    #[test]
    fn make_task_deterministic_and_distinct() {
        let p = ChannelParams::default();
        let a = make_task(7, 0, &p);
        let b = make_task(7, 0, &p);
        let c = make_task(7, 1, &p);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_ne!(a.clusters[0].departure, c.clusters[0].departure);
        let total: f64 = a.clusters.iter().map(|cl| cl.power).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn make_task_single_cluster_power_one() {
        let p = ChannelParams {
            cluster_count: 1,
            ..ChannelParams::default()
        };
        let cfg = make_task(7, 0, &p);
        assert_eq!(cfg.clusters.len(), 1);
        assert!((cfg.clusters[0].power - 1.0).abs() < 1e-12);
    }

    #[test]
    fn channel_normalization_monte_carlo() {
        let p = small_params();
        let cfg = make_task(13, 2, &p);
        let mut rng = RngStream::derive(13, "test/norm", 0);
        let n = 10_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let h = draw_channel(&cfg, p.nt, p.nr, &mut rng);
            acc += h.iter().map(|z| z.norm_sqr()).sum::<f64>();
        }
        let mean = acc / (n as f64 * (p.nt * p.nr) as f64);
        assert!((0.97..=1.03).contains(&mean), "normalization off: {mean}");
    }

    #[test]
    fn single_cluster_zero_spread_is_rank_one() {
        let cfg = ScattererConfig {
            task_id: 0,
            clusters: vec![Cluster {
                departure: 0.4,
                arrival: -0.9,
                power: 1.0,
                spread: 0.0,
            }],
        };
        let mut rng = RngStream::derive(1, "test/rank1", 0);
        let h = draw_channel(&cfg, 4, 8, &mut rng);
        let eig = eigen_spectrum(&h);
        assert!(eig[1] < 1e-9 * eig[0]);
    }

    #[test]
    fn draw_channel_deterministic() {
        let p = small_params();
        let cfg = make_task(5, 1, &p);
        let mut r1 = RngStream::derive(5, "test/det", 0);
        let mut r2 = RngStream::derive(5, "test/det", 0);
        let h1 = draw_channel(&cfg, p.nt, p.nr, &mut r1);
        let h2 = draw_channel(&cfg, p.nt, p.nr, &mut r2);
        assert_eq!(h1, h2);
    }

    #[test]
    fn noiseless_dataset_is_exact() {
        let p = small_params();
        let cfg = make_task(21, 0, &p);
        let ds = generate_dataset(&cfg, 20, f64::INFINITY, &p, 21).unwrap();
        for s in &ds.samples {
            assert!((&s.h_ls - &s.h).iter().map(|z| z.norm()).fold(0.0, f64::max) < 1e-10);
            let lifted = realify(&s.x);
            assert!((&s.x_zf - lifted).amax() < 1e-9);
        }
    }

    #[test]
    fn split_sizes_match_table() {
        let p = small_params();
        let cfg = make_task(22, 0, &p);
        let ds = generate_dataset(&cfg, 100, 25.0, &p, 22).unwrap();
        assert_eq!((ds.n_train, ds.n_val, ds.n_test), (81, 9, 10));
        assert_eq!(ds.train().len() + ds.val().len() + ds.test().len(), 100);
    }

    #[test]
    fn empirical_snr_matches_request() {
        let p = ChannelParams { n_calib: 5000, ..small_params() };
        let cfg = make_task(23, 0, &p);
        let target = 18.0;
        let ds = generate_dataset(&cfg, 4000, target, &p, 23).unwrap();
        let e_rx: f64 = ds
            .samples
            .iter()
            .map(|s| (&s.h * &s.x).norm_squared() / p.nr as f64)
            .sum::<f64>()
            / ds.samples.len() as f64;
        let measured = 10.0 * (e_rx / ds.samples[0].noise_var).log10();
        assert!((measured - target).abs() < 0.3, "measured {measured} dB");
    }

    #[test]
    fn construction_identity_holds_exactly() {
        let p = small_params();
        let cfg = make_task(24, 0, &p);
        let ds = generate_dataset(&cfg, 20, 10.0, &p, 24).unwrap();
        for s in &ds.samples {
            let n = s.noise.as_ref().unwrap();
            // Recompute with the same expression shape so equality is bitwise.
            let expected = &s.h * &s.x + n;
            assert_eq!(s.y, expected);
        }
    }

    #[test]
    fn ls_consistency_at_vanishing_noise() {
        let p = small_params();
        let cfg = make_task(25, 0, &p);
        let x_p = pilot_matrix(p.nt, p.np);
        let mut rng = RngStream::derive(25, "test/ls", 0);
        let h = draw_channel(&cfg, p.nt, p.nr, &mut rng);
        let n_p = CMat::from_fn(p.nr, p.np, |_, _| rng.complex_normal(1e-12));
        let y_p = &h * &x_p + &n_p;
        let h_ls = ls_estimate(&y_p, &x_p).unwrap();
        let err = (&h_ls - &h).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        assert!(err < 1e-4, "LS error {err}");
    }

    #[test]
    fn ls_error_equals_projected_pilot_noise() {
        // With orthogonal pilots, H_LS - H = N_p X_p^H / Np exactly.
        let p = small_params();
        let cfg = make_task(26, 0, &p);
        let x_p = pilot_matrix(p.nt, p.np);
        let mut rng = RngStream::derive(26, "test/ls", 1);
        let h = draw_channel(&cfg, p.nt, p.nr, &mut rng);
        let n_p = CMat::from_fn(p.nr, p.np, |_, _| rng.complex_normal(0.5));
        let y_p = &h * &x_p + &n_p;
        let h_ls = ls_estimate(&y_p, &x_p).unwrap();
        let oracle = &h + (&n_p * x_p.adjoint()).map(|z| z / p.np as f64);
        let diff = (&h_ls - &oracle).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(diff < 1e-10, "diff {diff}");
    }

    #[test]
    fn ls_linearity_in_observations() {
        let p = small_params();
        let x_p = pilot_matrix(p.nt, p.np);
        let mut rng = RngStream::derive(27, "test/ls", 2);
        let y_p = CMat::from_fn(p.nr, p.np, |_, _| rng.complex_normal(1.0));
        let h1 = ls_estimate(&y_p, &x_p).unwrap();
        let h2 = ls_estimate(&y_p.map(|z| z * 3.0), &x_p).unwrap();
        let diff = (&h2 - h1.map(|z| z * 3.0))
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        assert!(diff < 1e-10);
    }

    #[test]
    fn pilot_gram_is_np_identity() {
        let x_p = pilot_matrix(4, 16);
        let gram = &x_p * x_p.adjoint();
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 16.0 } else { 0.0 };
                assert!((gram[(i, j)] - Complex64::from(expect)).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn distance_self_with_identical_pairing_is_zero() {
        let p = small_params();
        let cfg = make_task(28, 0, &p);
        let ds = generate_dataset(&cfg, 30, 20.0, &p, 28).unwrap();
        // Identical pairing indices: pair each sample with itself directly.
        let d: f64 = ds
            .samples
            .iter()
            .map(|s| (&s.h - &s.h).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
            .sum::<f64>()
            / ds.samples.len() as f64;
        assert_eq!(d, 0.0);
    }

    #[test]
    fn distance_scaled_channels() {
        let p = small_params();
        let cfg = make_task(29, 0, &p);
        let ds = generate_dataset(&cfg, 30, f64::INFINITY, &p, 29).unwrap();
        let mut scaled = ds.clone();
        for s in &mut scaled.samples {
            s.h = s.h.map(|z| z * 2.0);
        }
        // Paired on the same realizations: distance per pair is ||H||_F.
        let mean: f64 = ds
            .samples
            .iter()
            .zip(&scaled.samples)
            .map(|(a, b)| (&b.h - &a.h).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
            .sum::<f64>()
            / ds.samples.len() as f64;
        let mean_fro: f64 = ds
            .samples
            .iter()
            .map(|s| s.h.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
            .sum::<f64>()
            / ds.samples.len() as f64;
        assert!((mean - mean_fro).abs() < 1e-9);
    }

    #[test]
    fn distance_roughly_symmetric() {
        let p = small_params();
        let a = generate_dataset(&make_task(30, 0, &p), 1000, 25.0, &p, 30).unwrap();
        let b = generate_dataset(&make_task(30, 1, &p), 1000, 25.0, &p, 30).unwrap();
        let mut r1 = RngStream::derive(30, "test/dist", 0);
        let mut r2 = RngStream::derive(30, "test/dist", 1);
        let dab = dataset_distance(&a, &b, 1000, &mut r1);
        let dba = dataset_distance(&b, &a, 1000, &mut r2);
        assert!((dab - dba).abs() / dab < 0.1, "dab {dab} dba {dba}");
    }

    #[test]
    fn task_spectra_are_distinguishable() {
        let p = small_params();
        let a = generate_dataset(&make_task(31, 0, &p), 50, f64::INFINITY, &p, 31).unwrap();
        let b = generate_dataset(&make_task(31, 1, &p), 50, f64::INFINITY, &p, 31).unwrap();
        let mean_spec = |ds: &TaskDataset| {
            let mut acc = vec![0.0; p.nt];
            for s in &ds.samples {
                for (i, v) in eigen_spectrum(&s.h).iter().enumerate() {
                    acc[i] += v / ds.samples.len() as f64;
                }
            }
            acc
        };
        let sa = mean_spec(&a);
        let sb = mean_spec(&b);
        let gap = sa
            .iter()
            .zip(&sb)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(gap > 0.0);
    }

    #[test]
    fn dataset_roundtrip_via_file() {
        let p = small_params();
        let cfg = make_task(32, 0, &p);
        let ds = generate_dataset(&cfg, 20, 15.0, &p, 32).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("task0.ds");
        save_dataset(&ds, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back.samples.len(), 20);
        assert_eq!(back.task_id, ds.task_id);
        assert_eq!((back.n_train, back.n_val, back.n_test), (ds.n_train, ds.n_val, ds.n_test));
        // Stored at f32; compare with matching tolerance.
        for (a, b) in ds.samples.iter().zip(&back.samples) {
            assert!((&a.x_zf - &b.x_zf).amax() < 1e-5);
            let dh = (&a.h - &b.h).iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!(dh < 1e-5);
        }
        assert_eq!(back.content_hash(), ds.content_hash());
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let p = small_params();
        let cfg = make_task(33, 0, &p);
        let ds = generate_dataset(&cfg, 20, 15.0, &p, 33).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("task0.ds");
        save_dataset(&ds, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::CorruptBlob(_))));
    }
}
