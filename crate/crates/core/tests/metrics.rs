use banquet::dsp::{stft, AudioClip, StftConfig};
use banquet::metrics::{
    aggregate, l1_snr_batch, l1_snr_term, quantile, separation_loss, separation_loss_host, snr,
    Exclusion, LossConfig, MetricEntry, Snr, QUANTILE_RULE,
};
use banquet::model::Separation;
use candle_core::{Device, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise(channels: usize, len: usize, seed: u64) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..channels)
        .map(|_| (0..len).map(|_| rng.random_range(-0.5f32..0.5)).collect())
        .collect();
    AudioClip::from_channels(data, 8000).unwrap()
}

fn entry(song: &str, stem: &str, snr: Snr) -> MetricEntry {
    MetricEntry {
        song: song.into(),
        stem: stem.into(),
        query_mode: "different_song".into(),
        snr,
    }
}

#[test]
fn zero_estimate_scores_zero_db_exactly() {
    let y: Vec<f32> = noise(1, 500, 1).channel(0).to_vec();
    let zero = vec![0.0f32; y.len()];
    assert_eq!(l1_snr_term(&zero, &y, &LossConfig::default()).unwrap(), 0.0);
}

#[test]
fn perfect_estimate_matches_scalar_oracle() {
    let cfg = LossConfig::default();
    for seed in 0..5 {
        let y: Vec<f32> = noise(1, 300 + seed as usize * 17, seed).channel(0).to_vec();
        let l1: f64 = y.iter().map(|v| (*v as f64).abs()).sum();
        let oracle = 10.0 * (1e-3 / (l1 + 1e-3)).log10();
        let got = l1_snr_term(&y, &y, &cfg).unwrap();
        assert!((got - oracle).abs() < 1e-9, "{got} vs {oracle}");
    }
}

#[test]
fn snr_reference_points() {
    let s = noise(2, 4000, 3);
    let half = snr(&s.scaled(0.5), &s).unwrap().finite().unwrap();
    assert!((half - 6.02).abs() < 0.01, "{half}");
    assert_eq!(snr(&s.scaled(2.0), &s).unwrap(), Snr::Finite(0.0));
    assert_eq!(snr(&s, &s).unwrap(), Snr::PosInfinity);
    let silent = AudioClip::zeros(2, 4000, 8000);
    assert_eq!(snr(&s, &silent).unwrap(), Snr::Undefined);
    assert!(snr(&s, &noise(1, 4000, 3)).is_err());
}

#[test]
fn quartiles_of_one_two_three() {
    let report = aggregate(
        vec![
            entry("a", "bass", Snr::Finite(3.0)),
            entry("b", "bass", Snr::Finite(1.0)),
            entry("c", "bass", Snr::Finite(2.0)),
        ],
        Vec::new(),
    );
    let q = &report.aggregates["bass"];
    assert_eq!((q.count, q.q1, q.q2, q.q3), (3, 1.5, 2.0, 2.5));
    assert_eq!(report.quantile_rule, QUANTILE_RULE);
}

#[test]
fn sentinels_and_skips_are_reported_not_aggregated() {
    let report = aggregate(
        vec![
            entry("a", "drums", Snr::Finite(4.0)),
            entry("b", "drums", Snr::PosInfinity),
            entry("c", "drums", Snr::Undefined),
            entry("a", "bass", Snr::Undefined),
        ],
        vec![Exclusion {
            song: "d".into(),
            stem: "synth_pad".into(),
            reason: "stem absent from song".into(),
        }],
    );
    assert_eq!(report.aggregates["drums"].count, 1);
    assert_eq!(report.excluded.len(), 4);
    assert!(report.omitted.contains_key("bass"));
    assert!(report.omitted.contains_key("synth_pad"));
    assert_eq!(report.median("drums"), Some(4.0));
}

#[test]
fn tensor_and_host_losses_agree() {
    let cfg = StftConfig {
        frame_size: 64,
        hop: 16,
        ..StftConfig::default()
    };
    let s = noise(2, 400, 10);
    let s_hat = noise(2, 400, 11);
    let (spec, spec_hat) = (stft(&s, &cfg).unwrap(), stft(&s_hat, &cfg).unwrap());
    let host = separation_loss_host(&s_hat, &spec_hat, &s, &spec, &LossConfig::default()).unwrap();

    let wave = |c: &AudioClip| {
        Tensor::from_vec(c.samples().iter().copied().collect::<Vec<f32>>(), (1, 2, 400), &Device::Cpu).unwrap()
    };
    let part = |sp: &banquet::dsp::Spectrogram, re: bool| {
        let (c, f, t) = sp.data.dim();
        let v: Vec<f32> = sp.data.iter().map(|z| if re { z.re } else { z.im }).collect();
        Tensor::from_vec(v, (1, c, f, t), &Device::Cpu).unwrap()
    };
    let est = Separation {
        wave: wave(&s_hat),
        re: part(&spec_hat, true),
        im: part(&spec_hat, false),
    };
    let loss = separation_loss(&est, &wave(&s), &part(&spec, true), &part(&spec, false), &LossConfig::default())
        .unwrap()
        .to_scalar::<f32>()
        .unwrap() as f64;
    assert!((loss - host).abs() < 1e-4, "{loss} vs {host}");
}

#[test]
fn batched_loss_is_per_item() {
    let a = noise(1, 64, 20).channel(0).to_vec();
    let b = noise(1, 64, 21).channel(0).to_vec();
    let y_hat = Tensor::from_vec([a.clone(), b.clone()].concat(), (2, 64), &Device::Cpu).unwrap();
    let y = Tensor::from_vec([b.clone(), a.clone()].concat(), (2, 64), &Device::Cpu).unwrap();
    let got: Vec<f32> = l1_snr_batch(&y_hat, &y, &LossConfig::default()).unwrap().to_vec1().unwrap();
    let cfg = LossConfig::default();
    assert!((got[0] as f64 - l1_snr_term(&a, &b, &cfg).unwrap()).abs() < 1e-4);
    assert!((got[1] as f64 - l1_snr_term(&b, &a, &cfg).unwrap()).abs() < 1e-4);
}

proptest! {
    #[test]
    fn quantiles_are_ordered_and_bounded(mut values in proptest::collection::vec(-100.0f64..100.0, 1..40)) {
        values.sort_by(f64::total_cmp);
        let q: Vec<f64> = [0.0, 0.25, 0.5, 0.75, 1.0].iter().map(|&p| quantile(&values, p).unwrap()).collect();
        prop_assert_eq!(q[0], values[0]);
        prop_assert_eq!(q[4], *values.last().unwrap());
        prop_assert!(q.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn snr_is_invariant_to_joint_power_of_two_scaling(seed in 0u64..1000, k in -4i32..4) {
        let s = noise(2, 200, seed);
        let e = noise(2, 200, seed + 1);
        let g = 2f32.powi(k);
        let a = snr(&e, &s).unwrap().finite().unwrap();
        let b = snr(&e.scaled(g), &s.scaled(g)).unwrap().finite().unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn l1_snr_improves_as_error_shrinks(seed in 0u64..1000, t in 0.05f32..0.95) {
        let y = noise(1, 128, seed).channel(0).to_vec();
        let far: Vec<f32> = y.iter().map(|v| v * (1.0 - t)).collect();
        let near: Vec<f32> = y.iter().map(|v| v * (1.0 - t / 2.0)).collect();
        let cfg = LossConfig::default();
        prop_assert!(l1_snr_term(&near, &y, &cfg).unwrap() < l1_snr_term(&far, &y, &cfg).unwrap());
    }
}
