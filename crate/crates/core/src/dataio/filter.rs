//! Zero-phase band-pass filtering and FFT resampling.
//!
//! The band-pass applies the squared magnitude of a 4th-order Butterworth
//! high-pass/low-pass pair in the frequency domain, which is the response a
//! forward-backward IIR pass would give, without phase distortion. Signals
//! are treated as periodic over the trial.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::LabeledDataset;
use crate::{Error, Result};

const BUTTERWORTH_ORDER: i32 = 4;

fn band_gain(f: f64, low: f64, high: f64) -> f64 {
    if f <= 0.0 {
        return 0.0;
    }
    let hp = 1.0 / (1.0 + (low / f).powi(2 * BUTTERWORTH_ORDER));
    let lp = 1.0 / (1.0 + (f / high).powi(2 * BUTTERWORTH_ORDER));
    hp * lp
}

/// Zero-phase band-pass to `[low_hz, high_hz]`, then resample to `target_rate`.
pub fn bandpass_downsample(
    dataset: &LabeledDataset,
    low_hz: f64,
    high_hz: f64,
    target_rate: f64,
) -> Result<LabeledDataset> {
    let fs = dataset.sampling_rate();
    if !(low_hz > 0.0 && low_hz < high_hz && high_hz < fs / 2.0) {
        return Err(Error::invalid(
            "band",
            format!(
                "need 0 < low < high < {} Hz, got [{low_hz}, {high_hz}]",
                fs / 2.0
            ),
        ));
    }
    if !(target_rate > 0.0 && target_rate <= fs) {
        return Err(Error::invalid(
            "target_rate",
            format!("must be in (0, {fs}] Hz, got {target_rate}"),
        ));
    }
    let t = dataset.n_samples();
    let t_out = ((t as f64) * target_rate / fs).round().max(1.0) as usize;
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(t);
    let inv = planner.plan_fft_inverse(t_out);
    let gains: Vec<f64> = (0..t)
        .map(|k| {
            let bin = k.min(t - k) as f64;
            band_gain(bin * fs / t as f64, low_hz, high_hz)
        })
        .collect();

    let rows = dataset.n_trials() * dataset.n_channels();
    let mut out = Vec::with_capacity(rows * t_out);
    let mut buf = vec![Complex64::default(); t];
    let mut res = vec![Complex64::default(); t_out];
    for row in dataset.trials().chunks_exact(t) {
        for (b, &x) in buf.iter_mut().zip(row) {
            *b = Complex64::new(f64::from(x), 0.0);
        }
        fwd.process(&mut buf);
        for (b, g) in buf.iter_mut().zip(&gains) {
            *b *= g;
        }
        res.iter_mut().for_each(|r| *r = Complex64::default());
        // Positive then negative frequencies that fit below the new Nyquist.
        let pos = t_out.div_ceil(2).min(t.div_ceil(2));
        let neg = ((t_out - 1) / 2).min((t - 1) / 2);
        res[..pos].copy_from_slice(&buf[..pos]);
        for j in 1..=neg {
            res[t_out - j] = buf[t - j];
        }
        if t_out == t {
            res.copy_from_slice(&buf);
        }
        inv.process(&mut res);
        out.extend(res.iter().map(|c| (c.re / t as f64) as f32));
    }
    dataset.with_geometry(out, dataset.n_channels(), t_out, target_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::DatasetParts;

    fn sine_dataset(freq: f64, fs: f64, t: usize) -> LabeledDataset {
        let trials = (0..t)
            .map(|s| (2.0 * std::f64::consts::PI * freq * s as f64 / fs).sin() as f32)
            .collect();
        LabeledDataset::new(DatasetParts {
            trials,
            n_channels: 1,
            n_samples: t,
            task_labels: vec![1],
            user_labels: vec![1],
            session_ids: vec![1],
            sampling_rate: fs,
            class_names: vec!["a".into()],
            user_names: vec!["u".into()],
        })
        .unwrap()
    }

    fn rms(x: &[f32]) -> f64 {
        (x.iter().map(|v| f64::from(*v).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn stopband_and_passband_levels() {
        let stop = sine_dataset(50.0, 250.0, 1000);
        let out = bandpass_downsample(&stop, 8.0, 32.0, 250.0).unwrap();
        assert!(rms(out.trials()) < 0.05 * rms(stop.trials()));

        let pass = sine_dataset(16.0, 250.0, 1000);
        let out = bandpass_downsample(&pass, 8.0, 32.0, 250.0).unwrap();
        let ratio = rms(out.trials()) / rms(pass.trials());
        assert!((ratio - 1.0).abs() < 0.10, "ratio {ratio}");
        assert_eq!(out.n_samples(), 1000);
    }

    #[test]
    fn downsampling_keeps_in_band_tone() {
        let d = sine_dataset(10.0, 512.0, 2048);
        let out = bandpass_downsample(&d, 4.0, 32.0, 128.0).unwrap();
        assert_eq!(out.n_samples(), 512);
        assert_eq!(out.sampling_rate(), 128.0);
        let expect: Vec<f64> = (0..512)
            .map(|s| (2.0 * std::f64::consts::PI * 10.0 * s as f64 / 128.0).sin())
            .collect();
        let err: f64 = out
            .trials()
            .iter()
            .zip(&expect)
            .map(|(a, b)| (f64::from(*a) - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 0.02, "max err {err}");
    }

    #[test]
    fn invalid_band_or_rate() {
        let d = sine_dataset(10.0, 128.0, 128);
        assert!(bandpass_downsample(&d, 30.0, 8.0, 128.0).is_err());
        assert!(bandpass_downsample(&d, 8.0, 70.0, 128.0).is_err());
        assert!(bandpass_downsample(&d, 8.0, 30.0, 256.0).is_err());
    }
}
