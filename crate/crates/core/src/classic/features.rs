use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::dataio::LabeledDataset;
use crate::{par, Error, Result};

/// Energies are clamped here before the logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Wavelet,
    Stft,
    Ar,
}

impl FeatureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Wavelet => "wavelet",
            FeatureKind::Stft => "stft",
            FeatureKind::Ar => "ar",
        }
    }
}

impl std::str::FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "wavelet" => Ok(FeatureKind::Wavelet),
            "stft" => Ok(FeatureKind::Stft),
            "ar" => Ok(FeatureKind::Ar),
            other => Err(Error::invalid(
                "feature",
                format!("unknown feature kind `{other}`"),
            )),
        }
    }
}

/// Orthogonal wavelet filters available for packet decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Wavelet {
    Haar,
    Db4,
}

impl Wavelet {
    /// Decomposition low-pass filter.
    pub fn low_pass(self) -> &'static [f64] {
        match self {
            Wavelet::Haar => &[
                std::f64::consts::FRAC_1_SQRT_2,
                std::f64::consts::FRAC_1_SQRT_2,
            ],
            Wavelet::Db4 => &[
                -0.010_597_401_784_997_278,
                0.032_883_011_666_982_945,
                0.030_841_381_835_986_965,
                -0.187_034_811_718_881_14,
                -0.027_983_769_416_983_85,
                0.630_880_767_929_590_4,
                0.714_846_570_552_541_5,
                0.230_377_813_308_855_23,
            ],
        }
    }

    /// Quadrature-mirror high-pass: `h[k] = (-1)^(k+1) g[N-1-k]`.
    pub fn high_pass(self) -> Vec<f64> {
        let lo = self.low_pass();
        let n = lo.len();
        (0..n)
            .map(|k| {
                if k % 2 == 0 {
                    -lo[n - 1 - k]
                } else {
                    lo[n - 1 - k]
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureSpec {
    pub kind: FeatureKind,
    pub wavelet_depth: usize,
    pub wavelet: Wavelet,
    /// Defaults to `T / 8`.
    pub stft_window: Option<usize>,
    /// Defaults to `T / 16`.
    pub stft_hop: Option<usize>,
    /// Contiguous groups of one-sided frequency bins per frame.
    pub stft_bands: usize,
    pub ar_order: usize,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self {
            kind: FeatureKind::Ar,
            wavelet_depth: 3,
            wavelet: Wavelet::Db4,
            stft_window: None,
            stft_hop: None,
            stft_bands: 4,
            ar_order: 6,
        }
    }
}

impl FeatureSpec {
    pub fn of(kind: FeatureKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    fn window(&self, t: usize) -> usize {
        self.stft_window.unwrap_or((t / 8).max(1))
    }

    fn hop(&self, t: usize) -> usize {
        self.stft_hop.unwrap_or((t / 16).max(1))
    }

    /// Check the spec against a trial length.
    pub fn validate(&self, t: usize) -> Result<()> {
        let geometry = |message: String| Error::Geometry {
            channels: 0,
            samples: t,
            message,
        };
        match self.kind {
            FeatureKind::Wavelet => {
                if self.wavelet_depth == 0 {
                    return Err(Error::invalid("wavelet_depth", "must be at least 1"));
                }
                let block = 1usize.checked_shl(self.wavelet_depth as u32).unwrap_or(0);
                if block == 0 || !t.is_multiple_of(block) {
                    return Err(geometry(format!(
                        "length must be divisible by 2^{}",
                        self.wavelet_depth
                    )));
                }
            }
            FeatureKind::Stft => {
                let (w, h) = (self.window(t), self.hop(t));
                if w < 2 || w > t {
                    return Err(geometry(format!("window {w} must lie in 2..={t}")));
                }
                if h == 0 {
                    return Err(Error::invalid("stft_hop", "must be at least 1"));
                }
                if self.stft_bands == 0 || self.stft_bands > w / 2 + 1 {
                    return Err(Error::invalid(
                        "stft_bands",
                        format!("must lie in 1..={}", w / 2 + 1),
                    ));
                }
            }
            FeatureKind::Ar => {
                if self.ar_order == 0 {
                    return Err(Error::invalid("ar_order", "must be at least 1"));
                }
                if self.ar_order >= t {
                    return Err(geometry(format!(
                        "order {} needs more than {} samples",
                        self.ar_order, t
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Feature vector for one row-major `[C, T]` trial.
pub fn extract(trial: &[f32], n_samples: usize, spec: &FeatureSpec) -> Result<Vec<f64>> {
    if n_samples == 0 || !trial.len().is_multiple_of(n_samples) {
        return Err(Error::Shape {
            field: "trial".into(),
            expected: n_samples,
            found: trial.len(),
        });
    }
    spec.validate(n_samples)?;
    let fft = (spec.kind == FeatureKind::Stft)
        .then(|| FftPlanner::new().plan_fft_forward(spec.window(n_samples)));
    Ok(extract_with(trial, n_samples, spec, fft.as_ref()))
}

fn extract_with(
    trial: &[f32],
    t: usize,
    spec: &FeatureSpec,
    fft: Option<&Arc<dyn Fft<f64>>>,
) -> Vec<f64> {
    let mut out = Vec::new();
    for row in trial.chunks_exact(t) {
        let x: Vec<f64> = row.iter().map(|&v| f64::from(v)).collect();
        match spec.kind {
            FeatureKind::Wavelet => out.extend(
                packet_energies(&x, spec.wavelet, spec.wavelet_depth)
                    .into_iter()
                    .map(log_energy),
            ),
            FeatureKind::Stft => out.extend(stft_band_energies(
                &x,
                spec.window(t),
                spec.hop(t),
                spec.stft_bands,
                fft.expect("planned for stft"),
            )),
            FeatureKind::Ar => out.extend(yule_walker(&x, spec.ar_order)),
        }
    }
    out
}

/// Features for every trial of a dataset, in trial order.
pub fn extract_dataset(dataset: &LabeledDataset, spec: &FeatureSpec) -> Result<Vec<Vec<f64>>> {
    let t = dataset.n_samples();
    spec.validate(t)?;
    let fft = (spec.kind == FeatureKind::Stft)
        .then(|| FftPlanner::new().plan_fft_forward(spec.window(t)));
    Ok(par::map_range(dataset.n_trials(), |i| {
        extract_with(dataset.trial(i), t, spec, fft.as_ref())
    }))
}

fn log_energy(e: f64) -> f64 {
    e.max(LOG_FLOOR).ln()
}

/// Periodic analysis step: `(approximation, detail)`, each half length.
fn dwt_step(x: &[f64], lo: &[f64], hi: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let half = n / 2;
    let mut a = vec![0.0; half];
    let mut d = vec![0.0; half];
    for j in 0..half {
        for (k, (&l, &h)) in lo.iter().zip(hi).enumerate() {
            let v = x[(2 * j + k) % n];
            a[j] += l * v;
            d[j] += h * v;
        }
    }
    (a, d)
}

/// Energies of the `2^depth` leaves of a full wavelet packet tree, in
/// natural (not frequency) order.
pub(crate) fn packet_energies(x: &[f64], wavelet: Wavelet, depth: usize) -> Vec<f64> {
    let lo = wavelet.low_pass();
    let hi = wavelet.high_pass();
    let mut nodes = vec![x.to_vec()];
    for _ in 0..depth {
        nodes = nodes
            .iter()
            .flat_map(|n| {
                let (a, d) = dwt_step(n, lo, &hi);
                [a, d]
            })
            .collect();
    }
    nodes
        .iter()
        .map(|n| n.iter().map(|v| v * v).sum())
        .collect()
}

/// Hann-windowed frames; per frame the one-sided power spectrum summed into
/// `bands` contiguous near-equal bin groups, then logged.
fn stft_band_energies(
    x: &[f64],
    w: usize,
    hop: usize,
    bands: usize,
    fft: &Arc<dyn Fft<f64>>,
) -> Vec<f64> {
    let window: Vec<f64> = (0..w)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / w as f64).cos())
        .collect();
    let n_bins = w / 2 + 1;
    let groups = crate::perturb::segment_bounds(n_bins, bands).expect("bands validated");
    let mut out = Vec::new();
    let mut buf = vec![Complex::new(0.0, 0.0); w];
    let mut start = 0;
    while start + w <= x.len() {
        for (b, (&v, &h)) in buf.iter_mut().zip(x[start..start + w].iter().zip(&window)) {
            *b = Complex::new(v * h, 0.0);
        }
        fft.process(&mut buf);
        for &(lo, hi) in &groups {
            out.push(log_energy(buf[lo..hi].iter().map(|c| c.norm_sqr()).sum()));
        }
        start += hop;
    }
    out
}

/// Yule-Walker AR coefficients `a_1..a_p` (`x_n ≈ Σ a_k x_{n-k}`) from the
/// biased autocovariance, solved by Levinson-Durbin recursion.
pub(crate) fn yule_walker(x: &[f64], order: usize) -> Vec<f64> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let r: Vec<f64> = (0..=order)
        .map(|lag| {
            (lag..n)
                .map(|i| (x[i] - mean) * (x[i - lag] - mean))
                .sum::<f64>()
                / n as f64
        })
        .collect();
    let mut a = vec![0.0; order];
    if r[0] <= 0.0 {
        return a;
    }
    let mut err = r[0];
    for k in 0..order {
        let acc: f64 = (0..k).map(|j| a[j] * r[k - j]).sum();
        let refl = (r[k + 1] - acc) / err;
        let prev = a.clone();
        a[k] = refl;
        for j in 0..k {
            a[j] = prev[j] - refl * prev[k - 1 - j];
        }
        err *= 1.0 - refl * refl;
        if err <= 0.0 {
            break;
        }
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn zero_trial_hits_the_floor() {
        let z = vec![0f32; 2 * 64];
        for kind in [FeatureKind::Wavelet, FeatureKind::Stft] {
            let f = extract(&z, 64, &FeatureSpec::of(kind)).unwrap();
            assert!(!f.is_empty());
            assert!(f.iter().all(|&v| v == LOG_FLOOR.ln()));
        }
        let ar = extract(&z, 64, &FeatureSpec::of(FeatureKind::Ar)).unwrap();
        assert_eq!(ar, vec![0.0; 12]);
    }

    #[test]
    fn db4_filters_are_orthonormal() {
        for w in [Wavelet::Haar, Wavelet::Db4] {
            let lo = w.low_pass();
            let hi = w.high_pass();
            let dot = |a: &[f64], b: &[f64], s: usize| {
                (0..a.len() - s).map(|i| a[i + s] * b[i]).sum::<f64>()
            };
            assert!((dot(lo, lo, 0) - 1.0).abs() < 1e-12);
            assert!((dot(&hi, &hi, 0) - 1.0).abs() < 1e-12);
            for s in (2..lo.len()).step_by(2) {
                assert!(dot(lo, lo, s).abs() < 1e-12);
            }
            assert!(dot(lo, &hi, 0).abs() < 1e-12);
        }
    }

    #[test]
    fn packet_energy_is_conserved() {
        let mut rng = crate::seed::rng(4);
        let x: Vec<f64> = (0..256).map(|_| rng.random_range(-3.0..3.0)).collect();
        let total: f64 = x.iter().map(|v| v * v).sum();
        for depth in 1..=4 {
            let leaves = packet_energies(&x, Wavelet::Db4, depth);
            assert_eq!(leaves.len(), 1 << depth);
            let s: f64 = leaves.iter().sum();
            assert!((s - total).abs() / total < 1e-6);
        }
    }

    #[test]
    fn ar1_coefficient_recovered() {
        let mut rng = crate::seed::rng(21);
        let mut x = vec![0.0f64; 20_000];
        for n in 1..x.len() {
            let e: f64 = StandardNormal.sample(&mut rng);
            x[n] = 0.9 * x[n - 1] + e;
        }
        let a = yule_walker(&x, 6);
        assert!((a[0] - 0.9).abs() < 0.02, "{a:?}");
        assert!(a[1..].iter().all(|v| v.abs() < 0.05));
    }

    #[test]
    fn levinson_matches_direct_solve() {
        // Independent check: solve the Toeplitz normal equations directly.
        let x: Vec<f64> = (0..200)
            .map(|i| ((i * 37) % 23) as f64 + (i as f64 * 0.3).sin() * 5.0)
            .collect();
        let p = 3;
        let n = x.len();
        let m = x.iter().sum::<f64>() / n as f64;
        let r: Vec<f64> = (0..=p)
            .map(|l| (l..n).map(|i| (x[i] - m) * (x[i - l] - m)).sum::<f64>() / n as f64)
            .collect();
        let toeplitz = nalgebra::DMatrix::from_fn(p, p, |i, j| r[i.abs_diff(j)]);
        let rhs = nalgebra::DVector::from_fn(p, |i, _| r[i + 1]);
        let direct = toeplitz.lu().solve(&rhs).unwrap();
        let a = yule_walker(&x, p);
        for i in 0..p {
            assert!((a[i] - direct[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn sinusoid_at_bin_centre_stays_in_its_band() {
        // Window 32 gives 17 one-sided bins split into bands of 5, 4, 4, 4.
        // Bin 7 sits inside band 1 (bins 5..9) with both neighbours.
        let (t, w) = (256usize, 32usize);
        let x: Vec<f32> = (0..t)
            .map(|n| (2.0 * std::f64::consts::PI * 7.0 * n as f64 / w as f64).sin() as f32)
            .collect();
        let f = extract(&x, t, &FeatureSpec::of(FeatureKind::Stft)).unwrap();
        let frames = f.len() / 4;
        assert_eq!(frames, (t - w) / (t / 16) + 1);
        let e: Vec<f64> = f.iter().map(|v| v.exp()).collect();
        let in_band: f64 = (0..frames).map(|k| e[k * 4 + 1]).sum();
        let total: f64 = e.iter().sum();
        assert!(in_band / total >= 0.9);
    }

    #[test]
    fn spec_validation() {
        assert!(FeatureSpec {
            wavelet_depth: 3,
            ..FeatureSpec::of(FeatureKind::Wavelet)
        }
        .validate(20)
        .is_err());
        assert!(FeatureSpec {
            ar_order: 0,
            ..FeatureSpec::default()
        }
        .validate(20)
        .is_err());
        assert!(FeatureSpec {
            stft_window: Some(40),
            ..FeatureSpec::of(FeatureKind::Stft)
        }
        .validate(20)
        .is_err());
        assert!(extract(&[0.0; 10], 3, &FeatureSpec::default()).is_err());
    }
}
