use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fine label → coarse class, after the public multitrack dataset's two-level labelling.
const TAXONOMY: &[(&str, &str)] = &[
    ("lead_male_singer", "vocals"),
    ("lead_female_singer", "vocals"),
    ("human_choir", "vocals"),
    ("background_vocals", "vocals"),
    ("other_vocals", "vocals"),
    ("bass_guitar", "bass"),
    ("bass_synthesizer", "bass"),
    ("contrabass", "bass"),
    ("tuba", "bass"),
    ("bassoon", "bass"),
    ("snare_drum", "drums"),
    ("toms", "drums"),
    ("kick_drum", "drums"),
    ("cymbals", "drums"),
    ("overheads", "drums"),
    ("full_acoustic_drumkit", "drums"),
    ("drum_machine", "drums"),
    ("clean_electric_guitar", "guitar"),
    ("distorted_electric_guitar", "guitar"),
    ("lap_steel_guitar", "guitar"),
    ("acoustic_guitar", "guitar"),
    ("plucked_strings", "other_plucked"),
    ("atonal_percussion", "percussion"),
    ("pitched_percussion", "percussion"),
    ("grand_piano", "piano"),
    ("electric_piano", "piano"),
    ("organ_electric_organ", "other_keys"),
    ("synth_pad", "other_keys"),
    ("synth_lead", "other_keys"),
    ("other_keys_sounds", "other_keys"),
    ("violin", "bowed_strings"),
    ("viola", "bowed_strings"),
    ("cello", "bowed_strings"),
    ("violin_section", "bowed_strings"),
    ("viola_section", "bowed_strings"),
    ("cello_section", "bowed_strings"),
    ("string_section", "bowed_strings"),
    ("other_strings", "bowed_strings"),
    ("brass", "wind"),
    ("flutes", "wind"),
    ("reeds", "wind"),
    ("other_wind", "wind"),
    ("fx", "other"),
    ("click_track", "other"),
];

pub const COARSE_CLASSES: [&str; 11] = [
    "vocals",
    "bass",
    "drums",
    "guitar",
    "piano",
    "other_keys",
    "percussion",
    "bowed_strings",
    "wind",
    "other_plucked",
    "other",
];

pub fn fine_labels() -> impl Iterator<Item = &'static str> {
    TAXONOMY.iter().map(|(f, _)| *f)
}

pub fn coarse_of(fine: &str) -> Result<&'static str> {
    TAXONOMY
        .iter()
        .find(|(f, _)| *f == fine)
        .map(|(_, c)| *c)
        .ok_or_else(|| Error::UnknownLabel(fine.to_string()))
}

pub fn is_coarse(label: &str) -> bool {
    COARSE_CLASSES.contains(&label)
}

/// Whether a stem with `fine` label contributes to the target `label`,
/// which may name either a fine label or a coarse class.
pub fn matches(label: &str, fine: &str) -> bool {
    label == fine || coarse_of(fine).is_ok_and(|c| c == label)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StemRoster {
    pub name: String,
    /// Fine labels or coarse classes; a coarse entry targets the sum of its fine stems.
    pub labels: Vec<String>,
}

impl StemRoster {
    pub fn named(name: &str) -> Result<Self> {
        let vdb = ["lead_female_singer", "lead_male_singer", "drums", "bass"];
        let gp = [
            "acoustic_guitar",
            "clean_electric_guitar",
            "distorted_electric_guitar",
            "grand_piano",
            "electric_piano",
        ];
        let all_extra = [
            "fx",
            "pitched_percussion",
            "organ_electric_organ",
            "synth_pad",
            "synth_lead",
            "string_section",
            "brass",
            "reeds",
        ];
        let labels: Vec<&str> = match name {
            "q:vdb" => vdb.to_vec(),
            "q:vdbgp" => vdb.iter().chain(&gp).copied().collect(),
            "q:all" => vdb[..3]
                .iter()
                .chain(&["bass_guitar", "bass_synthesizer"])
                .chain(&gp)
                .chain(&all_extra)
                .copied()
                .collect(),
            "vdbo" => vec!["vocals", "drums", "bass", "other"],
            other => return Err(Error::Config(format!("unknown roster `{other}`"))),
        };
        Ok(Self {
            name: name.to_string(),
            labels: labels.into_iter().map(String::from).collect(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        for label in &self.labels {
            if !is_coarse(label) && coarse_of(label).is_err() {
                return Err(Error::UnknownLabel(label.clone()));
            }
        }
        Ok(())
    }
}

/// Coarse target for the four-stem pretraining setup: everything outside
/// vocals, drums and bass falls into `other`.
pub fn vdbo_class(fine: &str) -> Result<&'static str> {
    Ok(match coarse_of(fine)? {
        "vocals" => "vocals",
        "drums" => "drums",
        "bass" => "bass",
        _ => "other",
    })
}
