use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::infer::StemLevel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollapseConfig {
    pub threshold_dbfs: f64,
    /// Fraction of silent items above which a stem is flagged.
    pub fraction: f64,
    /// Stop training when any stem is flagged.
    pub abort: bool,
}

impl Default for CollapseConfig {
    fn default() -> Self {
        Self {
            threshold_dbfs: -60.0,
            fraction: 0.9,
            abort: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseVerdict {
    pub stem: String,
    pub items: usize,
    pub silent: usize,
    pub collapsed: bool,
}

/// Flag stems whose estimates are quieter than the threshold on more than
/// the configured fraction of validation items.
pub fn detect_collapse(levels: &[StemLevel], cfg: &CollapseConfig) -> Vec<CollapseVerdict> {
    let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for l in levels {
        let entry = counts.entry(&l.stem).or_default();
        entry.0 += 1;
        if l.dbfs.is_none_or(|v| v < cfg.threshold_dbfs) {
            entry.1 += 1;
        }
    }
    counts
        .into_iter()
        .map(|(stem, (items, silent))| CollapseVerdict {
            stem: stem.to_string(),
            items,
            silent,
            collapsed: silent as f64 > cfg.fraction * items as f64,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn levels(stem: &str, silent: usize, loud: usize) -> Vec<StemLevel> {
        let mk = |dbfs| StemLevel {
            song: "s".into(),
            stem: stem.into(),
            dbfs,
        };
        (0..silent)
            .map(|_| mk(None))
            .chain((0..loud).map(|_| mk(Some(-20.0))))
            .collect()
    }

    #[test]
    fn only_the_mostly_silent_stem_is_flagged() {
        let mut all = levels("a", 19, 1);
        all.extend(levels("b", 1, 19));
        let v = detect_collapse(&all, &CollapseConfig::default());
        assert!(v[0].collapsed && !v[1].collapsed);
    }

    #[test]
    fn healthy_estimates_pass() {
        let v = detect_collapse(&levels("a", 0, 10), &CollapseConfig::default());
        assert!(!v[0].collapsed);
    }
}
