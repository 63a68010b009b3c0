//! The L1SNR training objective and full-track SNR evaluation with quartile aggregation.

use std::collections::BTreeMap;

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::dsp::{AudioClip, Spectrogram};
use crate::error::{Error, Result};
use crate::model::Separation;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { epsilon: 1e-3 }
    }
}

/// `10 log10((‖ŷ − y‖₁ + ε) / (‖y‖₁ + ε))` in dB.
pub fn l1_snr_term(y_hat: &[f32], y: &[f32], cfg: &LossConfig) -> Result<f64> {
    if y_hat.len() != y.len() {
        return Err(Error::shape(format!(
            "l1 snr inputs have {} and {} elements",
            y_hat.len(),
            y.len()
        )));
    }
    let err: f64 = y_hat.iter().zip(y).map(|(a, b)| (*a as f64 - *b as f64).abs()).sum();
    let norm: f64 = y.iter().map(|v| (*v as f64).abs()).sum();
    Ok(10.0 * ((err + cfg.epsilon) / (norm + cfg.epsilon)).log10())
}

/// Per-item L1SNR over every axis but the first: `[N, ...]` → `[N]`.
pub fn l1_snr_batch(y_hat: &Tensor, y: &Tensor, cfg: &LossConfig) -> Result<Tensor> {
    if y_hat.dims() != y.dims() {
        return Err(Error::shape(format!(
            "l1 snr inputs {:?} and {:?}",
            y_hat.dims(),
            y.dims()
        )));
    }
    let n = y.dim(0)?;
    let err = (y_hat - y)?.abs()?.reshape((n, ()))?.sum(D::Minus1)?;
    let norm = y.abs()?.reshape((n, ()))?.sum(D::Minus1)?;
    let ratio = ((err + cfg.epsilon)? / (norm + cfg.epsilon)?)?;
    Ok((ratio.log()? * (10.0 / std::f64::consts::LN_10))?)
}

/// Time-domain, real-part and imaginary-part L1SNR terms summed per item, averaged over the batch.
pub fn separation_loss(
    estimate: &Separation,
    target_wave: &Tensor,
    target_re: &Tensor,
    target_im: &Tensor,
    cfg: &LossConfig,
) -> Result<Tensor> {
    let per_item = ((l1_snr_batch(&estimate.wave, target_wave, cfg)?
        + l1_snr_batch(&estimate.re, target_re, cfg)?)?
        + l1_snr_batch(&estimate.im, target_im, cfg)?)?;
    Ok(per_item.mean_all()?)
}

/// Host evaluation of the separation loss for a single item.
pub fn separation_loss_host(
    s_hat: &AudioClip,
    spec_hat: &Spectrogram,
    s: &AudioClip,
    spec: &Spectrogram,
    cfg: &LossConfig,
) -> Result<f64> {
    s_hat.check_compatible(s)?;
    if spec_hat.data.dim() != spec.data.dim() {
        return Err(Error::shape("spectrogram shapes differ"));
    }
    let flat = |c: &AudioClip| c.samples().iter().copied().collect::<Vec<f32>>();
    let part = |sp: &Spectrogram, re: bool| {
        sp.data
            .iter()
            .map(|c| if re { c.re } else { c.im })
            .collect::<Vec<f32>>()
    };
    Ok(l1_snr_term(&flat(s_hat), &flat(s), cfg)?
        + l1_snr_term(&part(spec_hat, true), &part(spec, true), cfg)?
        + l1_snr_term(&part(spec_hat, false), &part(spec, false), cfg)?)
}

/// Signal-to-noise ratio with explicit sentinels for the degenerate cases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "db", rename_all = "snake_case")]
pub enum Snr {
    Finite(f64),
    /// The estimate equals the reference exactly.
    PosInfinity,
    /// The reference is silent.
    Undefined,
}

impl Snr {
    pub fn finite(&self) -> Option<f64> {
        match self {
            Snr::Finite(v) => Some(*v),
            _ => None,
        }
    }
}

/// `10 log10(‖s‖² / ‖ŝ − s‖²)` over all channels jointly.
pub fn snr(s_hat: &AudioClip, s: &AudioClip) -> Result<Snr> {
    s_hat.check_compatible(s)?;
    let mut signal = 0.0f64;
    let mut noise = 0.0f64;
    for (a, b) in s_hat.samples().iter().zip(s.samples().iter()) {
        let (a, b) = (*a as f64, *b as f64);
        signal += b * b;
        noise += (a - b) * (a - b);
    }
    Ok(if signal == 0.0 {
        Snr::Undefined
    } else if noise == 0.0 {
        Snr::PosInfinity
    } else {
        Snr::Finite(10.0 * (signal / noise).log10())
    })
}

/// Linear-interpolation quantile of sorted values: position `(n − 1) p`.
pub fn quantile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

pub const QUANTILE_RULE: &str = "linear";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEntry {
    pub song: String,
    pub stem: String,
    pub query_mode: String,
    pub snr: Snr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub count: usize,
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub song: String,
    pub stem: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub quantile_rule: String,
    pub entries: Vec<MetricEntry>,
    pub aggregates: BTreeMap<String, Quartiles>,
    /// Entries left out of the aggregates (sentinels, skipped pairs).
    pub excluded: Vec<Exclusion>,
    /// Stems with no finite entry at all.
    pub omitted: BTreeMap<String, String>,
}

impl MetricReport {
    pub fn median(&self, stem: &str) -> Option<f64> {
        self.aggregates.get(stem).map(|q| q.q2)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Per-stem quartiles over finite entries; sentinels and `skipped` records are listed as exclusions.
pub fn aggregate(entries: Vec<MetricEntry>, skipped: Vec<Exclusion>) -> MetricReport {
    let mut by_stem: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut excluded = skipped;
    for e in &entries {
        let values = by_stem.entry(e.stem.clone()).or_default();
        match e.snr {
            Snr::Finite(v) => values.push(v),
            Snr::PosInfinity => excluded.push(Exclusion {
                song: e.song.clone(),
                stem: e.stem.clone(),
                reason: "zero error (+inf SNR)".into(),
            }),
            Snr::Undefined => excluded.push(Exclusion {
                song: e.song.clone(),
                stem: e.stem.clone(),
                reason: "silent reference (undefined SNR)".into(),
            }),
        }
    }
    for x in &excluded {
        by_stem.entry(x.stem.clone()).or_default();
    }
    let mut aggregates = BTreeMap::new();
    let mut omitted = BTreeMap::new();
    for (stem, mut values) in by_stem {
        if values.is_empty() {
            omitted.insert(stem, "no finite entries".to_string());
            continue;
        }
        values.sort_by(f64::total_cmp);
        aggregates.insert(
            stem,
            Quartiles {
                count: values.len(),
                q1: quantile(&values, 0.25).unwrap(),
                q2: quantile(&values, 0.5).unwrap(),
                q3: quantile(&values, 0.75).unwrap(),
            },
        );
    }
    MetricReport {
        quantile_rule: QUANTILE_RULE.to_string(),
        entries,
        aggregates,
        excluded,
        omitted,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn clip(v: Vec<f32>) -> AudioClip {
        AudioClip::from_channels(vec![v], 44100).unwrap()
    }

    #[test]
    fn l1_snr_zero_estimate_is_zero_db() {
        let y = vec![0.3f32, -0.2, 0.5];
        let d = l1_snr_term(&[0.0; 3], &y, &LossConfig::default()).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn l1_snr_perfect_estimate() {
        // ‖y‖₁ = 0.999
        let y = vec![0.5f32, -0.499];
        let norm: f64 = y.iter().map(|v| (*v as f64).abs()).sum();
        let d = l1_snr_term(&y, &y, &LossConfig::default()).unwrap();
        assert!((d - 10.0 * (1e-3 / (norm + 1e-3)).log10()).abs() < 1e-12);
        assert!((d + 30.0).abs() < 1e-5);
    }

    #[test]
    fn l1_snr_double_estimate_is_zero_db() {
        let y = vec![0.25f32, -0.75];
        let y2: Vec<f32> = y.iter().map(|v| 2.0 * v).collect();
        let d = l1_snr_term(&y2, &y, &LossConfig::default()).unwrap();
        assert!(d.abs() < 1e-12);
    }

    #[test]
    fn l1_snr_shape_mismatch() {
        assert!(l1_snr_term(&[0.0], &[0.0, 1.0], &LossConfig::default()).is_err());
    }

    #[test]
    fn snr_reference_values() {
        let s = clip(vec![0.5, -0.25, 0.125, 1.0]);
        let half = s.scaled(0.5);
        let double = s.scaled(2.0);
        assert!((snr(&half, &s).unwrap().finite().unwrap() - 6.0206).abs() < 1e-3);
        assert_eq!(snr(&double, &s).unwrap(), Snr::Finite(0.0));
        assert_eq!(snr(&s, &s).unwrap(), Snr::PosInfinity);
        let silent = clip(vec![0.0; 4]);
        assert_eq!(snr(&s, &silent).unwrap(), Snr::Undefined);
        let zero = clip(vec![0.0; 4]);
        assert_eq!(snr(&zero, &s).unwrap(), Snr::Finite(0.0));
    }

    #[test]
    fn snr_channel_permutation_invariant() {
        let a = AudioClip::new(
            Array2::from_shape_vec((2, 3), vec![0.1, 0.2, 0.3, -0.4, 0.5, 0.0]).unwrap(),
            8000,
        )
        .unwrap();
        let b = AudioClip::new(
            Array2::from_shape_vec((2, 3), vec![0.15, 0.1, 0.3, -0.2, 0.5, 0.1]).unwrap(),
            8000,
        )
        .unwrap();
        let swap = |c: &AudioClip| {
            AudioClip::from_channels(vec![c.channel(1).to_vec(), c.channel(0).to_vec()], 8000)
                .unwrap()
        };
        let x = snr(&a, &b).unwrap().finite().unwrap();
        let y = snr(&swap(&a), &swap(&b)).unwrap().finite().unwrap();
        assert!((x - y).abs() < 1e-12);
    }

    #[test]
    fn quartiles_of_three() {
        let entries = [1.0, 2.0, 3.0]
            .iter()
            .enumerate()
            .map(|(i, v)| MetricEntry {
                song: format!("s{i}"),
                stem: "bass".into(),
                query_mode: "same-song".into(),
                snr: Snr::Finite(*v),
            })
            .collect();
        let report = aggregate(entries, vec![]);
        let q = &report.aggregates["bass"];
        assert_eq!((q.q1, q.q2, q.q3), (1.5, 2.0, 2.5));
    }

    #[test]
    fn sentinels_are_excluded_and_listed() {
        let mk = |song: &str, snr| MetricEntry {
            song: song.into(),
            stem: "drums".into(),
            query_mode: "same-song".into(),
            snr,
        };
        let report = aggregate(
            vec![mk("a", Snr::Finite(4.0)), mk("b", Snr::PosInfinity), mk("c", Snr::Undefined)],
            vec![],
        );
        let q = &report.aggregates["drums"];
        assert_eq!((q.count, q.q1, q.q2, q.q3), (1, 4.0, 4.0, 4.0));
        assert_eq!(report.excluded.len(), 2);
        let json = report.to_json().unwrap();
        let back: MetricReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }
}
