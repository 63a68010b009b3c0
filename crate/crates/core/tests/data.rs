use std::collections::BTreeMap;
use std::path::PathBuf;

use banquet::data::taxonomy::coarse_of;
use banquet::data::{
    extract_query, make_splits, onset_strength, scan_dataset, synth_stem, synth_toy_dataset, AudioBank,
    Manifest, PairSampler, RmsTier, SamplingStrategy, SongAudio, SongRecord, SplitRole, StemRecord,
    StemRoster, SynthConfig, ONSET_HOP,
};
use banquet::dsp::{downmix_mono, load_audio, rms_dbfs, stft, AudioClip, StftConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn stem_record(song: &str, label: &str) -> StemRecord {
    StemRecord {
        stem_id: label.into(),
        fine_label: label.into(),
        coarse_label: coarse_of(label).unwrap().into(),
        path: PathBuf::from(format!("{song}/{label}.wav")),
    }
}

/// In-memory songs: `(song id, [(fine label, clip)])`.
fn in_memory(songs: Vec<(String, Vec<(&str, AudioClip)>)>) -> (Manifest, AudioBank) {
    let mut records = Vec::new();
    let mut audio = Vec::new();
    for (id, stems) in songs {
        records.push(SongRecord {
            song_id: id.clone(),
            artist: format!("artist_{id}"),
            genre: "rock".into(),
            path: PathBuf::from(&id),
            stems: stems.iter().map(|(l, _)| stem_record(&id, l)).collect(),
        });
        audio.push(SongAudio {
            song_id: id.clone(),
            stems: stems.into_iter().map(|(l, c)| (stem_record(&id, l), c)).collect(),
        });
    }
    let manifest = Manifest {
        schema_version: 1,
        songs: records,
        orphans: Vec::new(),
        warnings: Vec::new(),
    };
    (manifest, AudioBank::from_songs(audio))
}

fn tone(len: usize, level: f32, rate: u32) -> AudioClip {
    let x = (0..len).map(|i| level * (i as f32 * 0.05).sin()).collect();
    AudioClip::from_channels(vec![x], rate).unwrap()
}

fn spectral_centroid(clip: &AudioClip) -> f64 {
    let mono = downmix_mono(clip);
    let spec = stft(&mono, &StftConfig::default()).unwrap();
    let bin_hz = clip.sample_rate() as f64 / 2048.0;
    let (mut num, mut den) = (0.0, 0.0);
    for ((_, f, _), z) in spec.data.indexed_iter() {
        let m = z.norm() as f64;
        num += m * f as f64 * bin_hz;
        den += m;
    }
    num / den
}

#[test]
fn toy_dataset_is_additive_and_scannable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        duration_secs: 3.0,
        sample_rate: 16000,
        ..SynthConfig::default()
    };
    synth_toy_dataset(&cfg, 7, dir.path()).unwrap();
    let manifest = scan_dataset(dir.path()).unwrap();
    assert_eq!(manifest.songs.len(), 10);
    for song in &manifest.songs {
        assert!(song.stems.len() >= 3);
        let mixture = load_audio(song.path.join("mixture.wav")).unwrap();
        let stems: Vec<AudioClip> = song.stems.iter().map(|s| load_audio(&s.path).unwrap()).collect();
        let sum = AudioClip::sum(&stems).unwrap();
        assert_eq!(mixture.len(), 48_000);
        // the mixture is written from the f32 sum, so re-summing the stems is exact
        assert_eq!(mixture, sum, "{}", song.song_id);
    }
}

#[test]
fn toy_dataset_is_byte_deterministic() {
    let cfg = SynthConfig {
        songs: 3,
        duration_secs: 2.0,
        sample_rate: 8000,
        ..SynthConfig::default()
    };
    let read_all = |root: &std::path::Path| {
        let mut files = BTreeMap::new();
        for entry in walk(root) {
            files.insert(entry.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&entry).unwrap());
        }
        files
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    synth_toy_dataset(&cfg, 3, a.path()).unwrap();
    synth_toy_dataset(&cfg, 3, b.path()).unwrap();
    let (fa, fb) = (read_all(a.path()), read_all(b.path()));
    assert!(fa.len() > 6);
    assert_eq!(fa, fb);
}

fn walk(dir: &std::path::Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn palette_centroids_are_at_least_an_octave_apart() {
    let labels = [
        "bass_guitar",
        "lead_male_singer",
        "lead_female_singer",
        "clean_electric_guitar",
        "full_acoustic_drumkit",
        "fx",
    ];
    let mut centroids = Vec::new();
    for (i, label) in labels.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + i as u64);
        let clip = synth_stem(label, 8 * 44_100, 44_100, 1, -20.0, &mut rng).unwrap();
        centroids.push(spectral_centroid(&clip));
    }
    for w in centroids.windows(2) {
        assert!(w[1] / w[0] >= 2.0, "{centroids:?}");
    }
}

#[test]
fn splits_partition_songs_and_keep_test_apart() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        songs: 20,
        duration_secs: 0.5,
        sample_rate: 8000,
        ..SynthConfig::default()
    };
    synth_toy_dataset(&cfg, 1, dir.path()).unwrap();
    let manifest = scan_dataset(dir.path()).unwrap();
    let splits = make_splits(&manifest, 5, 9).unwrap();
    assert_eq!(splits.folds.len(), 20);
    let train = splits.songs(SplitRole::Train);
    let test = splits.songs(SplitRole::Test);
    let val = splits.songs(SplitRole::Validation);
    assert_eq!(train.len() + test.len() + val.len(), 20);
    assert!(train.is_disjoint(&test) && train.is_disjoint(&val) && val.is_disjoint(&test));
}

/// Mean onset over every 512-hop window, scanned naively; earliest of the
/// maxima wins.
fn brute_force_offset(envelope: &[f32], len: usize, window: usize) -> usize {
    let frames = window.div_ceil(ONSET_HOP);
    let mut means = Vec::new();
    let mut k = 0;
    while k * ONSET_HOP + window <= len {
        let end = (k + frames).min(envelope.len());
        let total: f64 = envelope[k..end].iter().map(|&v| v as f64).sum();
        means.push(total / (end - k) as f64);
        k += 1;
    }
    let best = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let first = means
        .iter()
        .position(|&m| m >= best - 1e-9 * best.abs())
        .unwrap();
    first * ONSET_HOP
}

#[test]
fn query_extraction_matches_exhaustive_scan_on_fifty_stems() {
    let labels = [
        "bass_guitar",
        "lead_male_singer",
        "lead_female_singer",
        "clean_electric_guitar",
        "full_acoustic_drumkit",
    ];
    let rate = 22_050;
    let mut mismatches = 0;
    for i in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + i);
        let secs = rng.random_range(11.0..24.0);
        let len = (secs * rate as f64) as usize;
        let clip = synth_stem(labels[i as usize % 5], len, rate, 2, -20.0, &mut rng).unwrap();
        let (excerpt, window) = extract_query(&clip, 10.0).unwrap();
        let env = onset_strength(&clip).unwrap();
        let oracle = brute_force_offset(&env, len, 10 * rate as usize);
        assert_eq!(excerpt.len(), 10 * rate as usize);
        assert_eq!(excerpt, clip.segment(window.offset, 10 * rate as usize));
        assert!(!window.padded);
        if window.offset != oracle {
            mismatches += 1;
        }
    }
    assert_eq!(mismatches, 0);
}

#[test]
fn short_stems_are_padded_and_flagged() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let clip = synth_stem("bass_guitar", 4 * 8000, 8000, 1, -20.0, &mut rng).unwrap();
    let (excerpt, window) = extract_query(&clip, 10.0).unwrap();
    assert!(window.padded);
    assert_eq!(window.offset, 0);
    assert_eq!(excerpt.len(), 80_000);
    assert!(excerpt.samples().iter().skip(32_000).all(|&v| v == 0.0));
}

#[test]
fn activity_in_one_region_selects_that_region() {
    let rate = 8000;
    let mut x = vec![0.0f32; 40 * rate];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for v in x[20 * rate..30 * rate].iter_mut() {
        *v = rng.random_range(-0.5..0.5) * if rng.random_bool(0.01) { 1.0 } else { 0.1 };
    }
    let clip = AudioClip::from_channels(vec![x], rate as u32).unwrap();
    let (_, w) = extract_query(&clip, 10.0).unwrap();
    let start = 20 * rate;
    assert!(w.offset.abs_diff(start) <= ONSET_HOP * 4, "offset {}", w.offset);
}

fn skewed_set(rate: u32) -> (Manifest, AudioBank) {
    let len = rate as usize;
    let mut songs = Vec::new();
    for i in 0..20 {
        let stems: Vec<(&str, AudioClip)> = match i {
            0..=17 => vec![("bass_guitar", tone(len, 0.2, rate))],
            18 => vec![("bass_guitar", tone(len, 0.2, rate)), ("full_acoustic_drumkit", tone(len, 0.2, rate))],
            _ => vec![("full_acoustic_drumkit", tone(len, 0.2, rate))],
        };
        songs.push((format!("s{i:02}"), stems));
    }
    in_memory(songs)
}

fn roster() -> StemRoster {
    StemRoster {
        name: "skewed".into(),
        labels: vec!["bass".into(), "drums".into()],
    }
}

fn draw_frequencies(strategy: SamplingStrategy) -> BTreeMap<String, f64> {
    let (manifest, bank) = skewed_set(4000);
    let ids: Vec<String> = manifest.songs.iter().map(|s| s.song_id.clone()).collect();
    let mut sampler = PairSampler::new(&bank, &manifest, &ids, &roster(), 1000).unwrap();
    sampler.strategy = strategy;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut counts: BTreeMap<String, f64> = BTreeMap::new();
    let n = 10_000;
    for _ in 0..n {
        let (_, label) = sampler.draw_target(&mut rng);
        *counts.entry(label).or_default() += 1.0 / n as f64;
    }
    counts
}

#[test]
fn balanced_sampling_is_uniform_over_stems() {
    let f = draw_frequencies(SamplingStrategy::Balanced);
    assert!((f["bass"] - 0.5).abs() < 0.02, "{f:?}");
    assert!((f["drums"] - 0.5).abs() < 0.02, "{f:?}");
}

#[test]
fn default_sampling_tracks_availability() {
    let f = draw_frequencies(SamplingStrategy::Default);
    // 18 bass-only songs, one with both stems, one drums-only
    let expected_bass = 18.0 / 20.0 + 0.5 / 20.0;
    assert!((f["bass"] - expected_bass).abs() < 0.02, "{f:?}");
    assert!((f["drums"] - (1.0 - expected_bass)).abs() < 0.02, "{f:?}");
}

#[test]
fn ladder_tiers_agree_with_measured_levels() {
    let rate = 4000;
    let len = 8 * rate as usize;
    let mut songs = Vec::new();
    for i in 0..6 {
        let mut rng = ChaCha8Rng::seed_from_u64(i);
        // loud, quiet (-40 dBFS) and silent regions in random order
        let mut x = vec![0.0f32; len];
        for (j, v) in x.iter_mut().enumerate() {
            let region = (j / rate as usize + i as usize) % 4;
            let level = [0.3, 0.014, 0.0, 0.0014][region];
            *v = level * rng.random_range(-1.0f32..1.0) * 3f32.sqrt();
        }
        let target = AudioClip::from_channels(vec![x], rate).unwrap();
        songs.push((format!("l{i}"), vec![("bass_guitar", target), ("lead_male_singer", tone(len, 0.1, rate))]));
    }
    songs.push(("silent".into(), vec![("bass_guitar", AudioClip::zeros(1, len, rate)), ("lead_male_singer", tone(len, 0.1, rate))]));
    let (manifest, bank) = in_memory(songs);
    let ids: Vec<String> = manifest.songs.iter().map(|s| s.song_id.clone()).collect();
    let roster = StemRoster {
        name: "b".into(),
        labels: vec!["bass".into()],
    };
    let sampler = PairSampler::new(&bank, &manifest, &ids, &roster, rate as usize / 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut seen = BTreeMap::new();
    for _ in 0..600 {
        let ex = sampler.sample(&mut rng).unwrap();
        let measured = rms_dbfs(&ex.target).unwrap();
        assert_eq!(measured.value(), ex.chunk.target_dbfs);
        match ex.chunk.tier {
            RmsTier::Tier(1) => {
                assert!(measured.is_at_least(-36.0));
                assert!(ex.chunk.retries < 10);
            }
            RmsTier::Tier(2) => {
                assert!(measured.is_at_least(-48.0));
                assert!((10..20).contains(&ex.chunk.retries));
            }
            RmsTier::Forced => assert_eq!(ex.chunk.retries, 20),
            other => panic!("unexpected tier {other:?}"),
        }
        if ex.song_id == "silent" {
            assert_eq!(ex.chunk.tier, RmsTier::Forced);
        }
        *seen.entry(format!("{:?}", ex.chunk.tier)).or_insert(0) += 1;
    }
    assert!(seen.len() >= 2, "{seen:?}");
}

#[test]
fn augmented_mixture_is_the_sum_of_augmented_stems() {
    let rate = 4000;
    let len = 3 * rate as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut songs = Vec::new();
    for i in 0..3 {
        let stems = ["bass_guitar", "lead_male_singer", "full_acoustic_drumkit"]
            .into_iter()
            .map(|l| (l, synth_stem(l, len, rate, 2, -20.0, &mut rng).unwrap()))
            .collect();
        songs.push((format!("a{i}"), stems));
    }
    let (manifest, bank) = in_memory(songs);
    let ids: Vec<String> = manifest.songs.iter().map(|s| s.song_id.clone()).collect();
    let mut sampler = PairSampler::new(&bank, &manifest, &ids, &StemRoster {
        name: "three".into(),
        labels: vec!["bass".into(), "lead_male_singer".into(), "drums".into()],
    }, rate as usize).unwrap();
    sampler.chunk.augment.enabled = true;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let mut replay = rng.clone();
        let ex = sampler.sample(&mut rng).unwrap();
        let (song_id, label) = sampler.draw_target(&mut replay);
        let song = bank.song(&song_id).unwrap();
        let chunk = sampler.chunk.choose_chunk(&song.target(&label), &mut replay).unwrap();
        let stems = sampler.chunk.chunk_stems(song, chunk.offset, &mut replay);
        let sum = AudioClip::sum(&stems).unwrap();
        let diff = ex
            .mixture
            .samples()
            .iter()
            .zip(sum.samples().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(diff < 1e-6);
        assert_eq!(ex.chunk, chunk);
    }
}
