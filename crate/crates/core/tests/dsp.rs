use banquet::dsp::{istft, stft, AudioClip, StftConfig};
use banquet::infer::{segment_layout, separate_track, InferenceConfig};
use banquet::model::{Banquet, BandsConfig, ModelConfig, ModelMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise(channels: usize, len: usize, rate: u32, seed: u64) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..channels)
        .map(|_| (0..len).map(|_| rng.random_range(-0.5f32..0.5)).collect())
        .collect();
    AudioClip::from_channels(data, rate).unwrap()
}

fn relative_error(a: &AudioClip, b: &AudioClip) -> f64 {
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for (x, y) in a.samples().iter().zip(b.samples().iter()) {
        num += (*x as f64 - *y as f64).powi(2);
        den += (*y as f64).powi(2);
    }
    (num / den).sqrt()
}

fn error_db(a: &AudioClip, b: &AudioClip) -> f64 {
    20.0 * relative_error(a, b).log10()
}

/// A default-STFT stereo model small enough to build quickly; with the mask
/// bypass only the analysis/synthesis path runs.
fn bypass_model() -> Banquet {
    let cfg = ModelConfig {
        bands: BandsConfig {
            count: 16,
            ..ModelConfig::default().bands
        },
        embed_dim: 8,
        tf_pairs: 1,
        rnn_hidden: 8,
        decoder_hidden: 8,
        query_dim: 784,
        film_hidden: 8,
        ..ModelConfig::default()
    };
    let mut m = Banquet::new(cfg, ModelMode::Query, 0).unwrap();
    m.set_mask_bypass(true);
    m
}

#[test]
fn stft_round_trip_is_exact_to_one_part_per_million() {
    let cfg = StftConfig::default();
    for (len, seed) in [(44_100, 1), (100_003, 2), (2048, 3)] {
        let x = noise(2, len, 44_100, seed);
        let spec = stft(&x, &cfg).unwrap();
        assert_eq!(spec.frames(), 1 + len / 512);
        let y = istft(&spec, len).unwrap();
        let err = relative_error(&y, &x);
        assert!(err < 1e-6, "len {len}: {err:e}");
    }
}

#[test]
fn all_ones_mask_pipeline_reproduces_a_thirty_second_track() {
    let m = bypass_model();
    let x = noise(2, 30 * 44_100, 44_100, 4);
    let q = vec![0.0f32; 784];
    let y = separate_track(&m, &x, &q, &InferenceConfig::default()).unwrap();
    assert_eq!(y.len(), x.len());
    let db = error_db(&y, &x);
    assert!(db < -80.0, "{db} dB");
}

#[test]
fn output_length_matches_input_for_awkward_durations() {
    let m = bypass_model();
    let q = vec![0.0f32; 784];
    for secs in [5.0, 6.0, 37.3] {
        let len = (secs * 44_100.0f64).round() as usize;
        let x = noise(2, len, 44_100, 5);
        let y = separate_track(&m, &x, &q, &InferenceConfig::default()).unwrap();
        assert_eq!(y.len(), len);
        assert!(error_db(&y, &x) < -80.0);
    }
}

#[test]
fn segment_counts() {
    let cfg = InferenceConfig::default();
    assert_eq!(segment_layout(&cfg, 5 * 44_100, 44_100), (264_600, 22_050, 1));
    assert_eq!(segment_layout(&cfg, 6 * 44_100, 44_100), (264_600, 22_050, 1));
    // 37.3 s: 1 + ceil(31.3 / 0.5) = 64 segments
    assert_eq!(segment_layout(&cfg, 1_644_930, 44_100).2, 64);
}

#[test]
fn mismatched_inputs_are_rejected() {
    let m = bypass_model();
    let q = vec![0.0f32; 784];
    assert!(separate_track(&m, &noise(1, 44_100, 44_100, 6), &q, &InferenceConfig::default()).is_err());
    assert!(separate_track(&m, &noise(2, 44_100, 22_050, 6), &q, &InferenceConfig::default()).is_err());
    assert!(separate_track(&m, &noise(2, 44_100, 44_100, 6), &q[..10], &InferenceConfig::default()).is_err());
}
