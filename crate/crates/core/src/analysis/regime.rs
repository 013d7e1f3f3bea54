use std::fmt;

use serde::{Deserialize, Serialize};

/// Ordered the way the labels appear along increasing decay.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Regime {
    /// Weak decay: the norm never contracts enough to generalise.
    I,
    /// Memorise, contract, generalise.
    II,
    /// Over-regularised: the norm collapses before a generalising solution forms.
    III,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::I => "I",
            Regime::II => "II",
            Regime::III => "III",
        })
    }
}

impl std::str::FromStr for Regime {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> crate::error::Result<Self> {
        match s {
            "I" => Ok(Regime::I),
            "II" => Ok(Regime::II),
            "III" => Ok(Regime::III),
            _ => Err(crate::error::Error::invalid("regime", format!("unknown label `{s}`"))),
        }
    }
}

/// Seed-aggregated evidence at one hyperparameter point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeEvidence {
    pub grok_fraction: f64,
    /// Mean `ln(V_mem / V_post)` over seeds.
    pub log_norm_ratio: f64,
    /// Mean `V_final / V_init` over seeds.
    pub norm_retention: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeThresholds {
    pub grok_fraction: f64,
    pub log_norm_ratio: f64,
    pub norm_retention: f64,
}

impl Default for RegimeThresholds {
    fn default() -> Self {
        Self {
            grok_fraction: 0.8,
            log_norm_ratio: 0.5,
            norm_retention: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeLabel {
    pub label: Regime,
    pub evidence: RegimeEvidence,
}

/// Reliable grokking with real contraction is II; otherwise a retained norm
/// means I and a collapsed one means III.
pub fn classify_regime(evidence: RegimeEvidence, th: &RegimeThresholds) -> RegimeLabel {
    let label = if evidence.grok_fraction >= th.grok_fraction && evidence.log_norm_ratio >= th.log_norm_ratio {
        Regime::II
    } else if evidence.norm_retention > th.norm_retention {
        Regime::I
    } else {
        Regime::III
    };
    RegimeLabel { label, evidence }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label(g: f64, lr: f64, ret: f64) -> Regime {
        classify_regime(
            RegimeEvidence {
                grok_fraction: g,
                log_norm_ratio: lr,
                norm_retention: ret,
            },
            &RegimeThresholds::default(),
        )
        .label
    }

    #[test]
    fn weight_decay_table_rows() {
        // no grokking, norm held near 14000
        assert_eq!(label(0.0, (14000f64 / 13900.0).ln(), 3.0), Regime::I);
        assert_eq!(label(1.0, 2.40, 1.5), Regime::II);
        // no grokking, norm collapsed to a few hundred
        assert_eq!(label(0.0, 0.0, 0.05), Regime::III);
    }

    #[test]
    fn total_on_edges() {
        assert_eq!(label(0.8, 0.5, 0.0), Regime::II);
        assert_eq!(label(0.79, 3.0, 0.6), Regime::I);
        assert_eq!(label(0.6, 0.1, 0.1), Regime::III);
    }
}
