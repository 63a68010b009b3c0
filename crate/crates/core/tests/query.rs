use std::path::PathBuf;

use banquet::data::taxonomy::coarse_of;
use banquet::data::{synth_stem, Manifest, QueryIndex, QueryIndexEntry, SongRecord, StemRecord};
use banquet::dsp::{save_audio, AudioClip};
use banquet::infer::{select_query, QueryMode, QueryTier};
use banquet::query::{
    backend_from_name, cache_embeddings, embed_query, EmbedderBackend, EmbeddingStore, ExternalBackend,
    MockBackend, QueryBank, QUERY_FEATURE_DIM,
};
use banquet::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn stem(label: &str, secs: f64, rate: u32, seed: u64) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    synth_stem(label, (secs * rate as f64) as usize, rate, 2, -20.0, &mut rng).unwrap()
}

#[test]
fn mock_features_of_silence_are_zero() {
    let clip = AudioClip::zeros(1, 32_000 * 2, 32_000);
    let raw = embed_query(&clip, &MockBackend).unwrap();
    assert_eq!(raw.dim(), QUERY_FEATURE_DIM);
    assert!(raw.frames() > 0);
    assert!(raw.pooled().iter().all(|&v| v == 0.0));
}

#[test]
fn mock_separates_disjoint_octaves() {
    let low = embed_query(&stem("bass_guitar", 4.0, 44_100, 1), &MockBackend).unwrap();
    let high = embed_query(&stem("lead_female_singer", 4.0, 44_100, 2), &MockBackend).unwrap();
    let c = cosine(&low.pooled(), &high.pooled());
    assert!(c < 0.9, "cosine {c}");
}

#[test]
fn mock_is_deterministic_and_rate_agnostic_in_shape() {
    let clip = stem("lead_male_singer", 3.0, 22_050, 3);
    let a = embed_query(&clip, &MockBackend).unwrap();
    let b = embed_query(&clip, &MockBackend).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.backend_id, MockBackend.id());
}

#[test]
fn too_short_or_empty_queries_are_rejected() {
    assert!(matches!(
        embed_query(&AudioClip::zeros(1, 16_000, 32_000), &MockBackend),
        Err(Error::InvalidArgument(_))
    ));
    assert!(matches!(
        embed_query(&AudioClip::zeros(1, 0, 32_000), &MockBackend),
        Err(Error::Empty(_))
    ));
}

#[test]
fn external_backend_reports_unavailable() {
    let err = backend_from_name("passt", Some(PathBuf::from("/nonexistent/weights.onnx"))).err().unwrap();
    assert_eq!(err.code(), "backend_unavailable");
    assert!(err.to_string().contains("mock"));
    let ext = ExternalBackend {
        name: "passt".into(),
        weights: None,
    };
    assert!(matches!(
        embed_query(&AudioClip::zeros(1, 64_000, 32_000), &ext),
        Err(Error::BackendUnavailable { .. })
    ));
    assert!(backend_from_name("mock", None).is_ok());
}

fn write_index(dir: &std::path::Path) -> QueryIndex {
    let mut entries = Vec::new();
    for (i, (song, label)) in [("a", "bass_guitar"), ("a", "lead_male_singer"), ("b", "bass_guitar")]
        .into_iter()
        .enumerate()
    {
        let path = dir.join(song).join(format!("{label}.wav"));
        save_audio(&path, &stem(label, 1.5, 16_000, i as u64)).unwrap();
        entries.push(QueryIndexEntry {
            song_id: song.into(),
            label: label.into(),
            path,
            onset_score: 0.0,
            offset: 0,
            padded: false,
        });
    }
    QueryIndex {
        schema_version: 1,
        window_secs: 1.5,
        entries,
    }
}

#[test]
fn store_round_trips_and_skips_cached_entries() {
    let dir = tempfile::tempdir().unwrap();
    let index = write_index(&dir.path().join("queries"));
    let store = EmbeddingStore::new(dir.path().join("emb"));
    let first = cache_embeddings(&index, &MockBackend, &store).unwrap();
    assert_eq!((first.computed, first.skipped), (3, 0));
    let path = dir.path().join("emb/mock/a/bass_guitar.emb");
    let bytes = std::fs::read(&path).unwrap();
    let second = cache_embeddings(&index, &MockBackend, &store).unwrap();
    assert_eq!((second.computed, second.skipped), (0, 3));
    assert_eq!(std::fs::read(&path).unwrap(), bytes);

    let direct = embed_query(&index.load_clip("a", "bass_guitar").unwrap(), &MockBackend).unwrap();
    assert_eq!(store.get("mock", "a", "bass_guitar").unwrap(), direct);

    let bank = QueryBank::load(&store, "mock", &index).unwrap();
    assert_eq!(bank.len(), 3);
    assert_eq!(bank.get("b", "bass_guitar").unwrap(), direct_pooled(&store, "b", "bass_guitar"));
    assert!(matches!(bank.get("b", "drums"), Err(Error::EmbeddingNotFound { .. })));
}

fn direct_pooled(store: &EmbeddingStore, song: &str, label: &str) -> Vec<f32> {
    store.get("mock", song, label).unwrap().pooled()
}

#[test]
fn corrupt_and_missing_entries_are_distinct_errors() {
    let dir = tempfile::tempdir().unwrap();
    let index = write_index(&dir.path().join("queries"));
    let store = EmbeddingStore::new(dir.path().join("emb"));
    cache_embeddings(&index, &MockBackend, &store).unwrap();
    assert!(matches!(
        store.get("mock", "zzz", "bass_guitar"),
        Err(Error::EmbeddingNotFound { .. })
    ));
    let path = dir.path().join("emb/mock/a/lead_male_singer.emb");
    let mut bytes = std::fs::read(&path).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0x55;
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(store.get("mock", "a", "lead_male_singer"), Err(Error::CorruptEntry { .. })));
    assert!(matches!(
        cache_embeddings(&index, &MockBackend, &store),
        Err(Error::CorruptEntry { .. })
    ));
    std::fs::write(&path, b"garbage").unwrap();
    assert!(matches!(store.get("mock", "a", "lead_male_singer"), Err(Error::CorruptEntry { .. })));
}

fn manifest(songs: &[(String, String, String, Vec<&str>)]) -> Manifest {
    Manifest {
        schema_version: 1,
        songs: songs
            .iter()
            .map(|(id, artist, genre, labels)| SongRecord {
                song_id: id.clone(),
                artist: artist.clone(),
                genre: genre.clone(),
                path: PathBuf::from(id),
                stems: labels
                    .iter()
                    .map(|l| StemRecord {
                        stem_id: l.to_string(),
                        fine_label: l.to_string(),
                        coarse_label: coarse_of(l).unwrap().into(),
                        path: PathBuf::from(format!("{id}/{l}.wav")),
                    })
                    .collect(),
            })
            .collect(),
        orphans: Vec::new(),
        warnings: Vec::new(),
    }
}

proptest! {
    /// Different-song selection never returns the target song or its artist,
    /// only songs holding the stem, and uses the any-genre tier only when no
    /// same-genre candidate exists.
    #[test]
    fn query_selection_cascade(
        spec in proptest::collection::vec((0usize..4, 0usize..3, any::<bool>(), any::<bool>()), 2..12),
        target in 0usize..12,
        seed in 0u64..500,
    ) {
        let songs: Vec<_> = spec
            .iter()
            .enumerate()
            .map(|(i, (artist, genre, bass, drums))| {
                let mut labels = vec!["lead_male_singer"];
                if *bass { labels.push("bass_guitar"); }
                if *drums { labels.push("full_acoustic_drumkit"); }
                (format!("s{i:02}"), format!("artist{artist}"), format!("genre{genre}"), labels)
            })
            .collect();
        let m = manifest(&songs);
        let pool: Vec<String> = songs.iter().map(|s| s.0.clone()).collect();
        let target = &songs[target % songs.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for label in ["bass", "drums", "lead_male_singer"] {
            let pick = select_query(&m, &pool, &target.0, label, QueryMode::DifferentSong, &mut rng);
            let eligible: Vec<_> = m
                .songs
                .iter()
                .filter(|s| s.song_id != target.0 && s.artist != target.1 && s.has(label))
                .collect();
            match pick {
                None => prop_assert!(eligible.is_empty()),
                Some(sel) => {
                    let chosen = m.song(&sel.song_id).unwrap();
                    prop_assert!(chosen.song_id != target.0);
                    prop_assert!(chosen.artist != target.1);
                    prop_assert!(chosen.has(label));
                    let same_genre_exists = eligible.iter().any(|s| s.genre == target.2);
                    match sel.tier {
                        QueryTier::SameGenreOtherArtist => prop_assert_eq!(&chosen.genre, &target.2),
                        QueryTier::AnyGenreOtherArtist => prop_assert!(!same_genre_exists),
                        QueryTier::SameSong => prop_assert!(false, "same-song tier in different-song mode"),
                    }
                }
            }
            let same = select_query(&m, &pool, &target.0, label, QueryMode::SameSong, &mut rng);
            prop_assert_eq!(same.is_some(), m.song(&target.0).unwrap().has(label));
        }
    }
}
