use rand::seq::IndexedRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Manifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    SameSong,
    #[default]
    DifferentSong,
}

impl QueryMode {
    pub fn as_str(self) -> &'static str {
        match self {
            QueryMode::SameSong => "same_song",
            QueryMode::DifferentSong => "different_song",
        }
    }
}

impl std::str::FromStr for QueryMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.replace('-', "_").as_str() {
            "same_song" => Ok(QueryMode::SameSong),
            "different_song" => Ok(QueryMode::DifferentSong),
            _ => Err(crate::Error::InvalidArgument(format!(
                "unknown query policy `{s}` (expected same-song or different-song)"
            ))),
        }
    }
}

/// Which rung of the preference cascade produced the query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryTier {
    SameSong,
    SameGenreOtherArtist,
    AnyGenreOtherArtist,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySelection {
    pub song_id: String,
    pub label: String,
    pub tier: QueryTier,
}

/// Pick the query song for `(target, stem)` from `pool`. Different-song mode
/// prefers a same-genre song by another artist, then any genre by another
/// artist; `None` when no song qualifies. Same-artist songs are never used.
pub fn select_query(
    manifest: &Manifest,
    pool: &[String],
    target: &str,
    stem: &str,
    mode: QueryMode,
    rng: &mut ChaCha8Rng,
) -> Option<QuerySelection> {
    let song = manifest.song(target)?;
    if mode == QueryMode::SameSong {
        return song.has(stem).then(|| QuerySelection {
            song_id: target.to_string(),
            label: stem.to_string(),
            tier: QueryTier::SameSong,
        });
    }
    let candidates: Vec<_> = pool
        .iter()
        .filter_map(|id| manifest.song(id))
        .filter(|s| s.song_id != song.song_id && s.artist != song.artist && s.has(stem))
        .collect();
    let same_genre: Vec<_> = candidates.iter().filter(|s| s.genre == song.genre).collect();
    let (chosen, tier) = if let Some(s) = same_genre.choose(rng) {
        (*s, QueryTier::SameGenreOtherArtist)
    } else {
        (candidates.choose(rng)?, QueryTier::AnyGenreOtherArtist)
    };
    Some(QuerySelection {
        song_id: chosen.song_id.clone(),
        label: stem.to_string(),
        tier,
    })
}
