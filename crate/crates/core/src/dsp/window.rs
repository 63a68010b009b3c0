use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    #[default]
    Hann,
    Rectangular,
}

impl WindowKind {
    /// Periodic analysis window for the STFT.
    pub fn periodic(self, len: usize) -> Vec<f64> {
        match self {
            WindowKind::Hann => (0..len)
                .map(|m| {
                    let x = std::f64::consts::PI * m as f64 / len as f64;
                    x.sin().powi(2)
                })
                .collect(),
            WindowKind::Rectangular => vec![1.0; len],
        }
    }

    /// Strictly positive taper sampled at sample midpoints, used to weight
    /// overlapping chunks. Never zero, so a lone chunk still normalizes to itself.
    pub fn taper(self, len: usize) -> Vec<f64> {
        match self {
            WindowKind::Hann => (0..len)
                .map(|m| {
                    let x = std::f64::consts::PI * (m as f64 + 0.5) / len as f64;
                    x.sin().powi(2)
                })
                .collect(),
            WindowKind::Rectangular => vec![1.0; len],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hann_periodic_shape() {
        let w = WindowKind::Hann.periodic(8);
        assert_eq!(w[0], 0.0);
        assert!((w[4] - 1.0).abs() < 1e-15);
        assert!((w[2] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn taper_is_positive_and_symmetric() {
        let w = WindowKind::Hann.taper(7);
        assert!(w.iter().all(|&v| v > 0.0));
        for i in 0..7 {
            assert!((w[i] - w[6 - i]).abs() < 1e-15);
        }
    }
}
