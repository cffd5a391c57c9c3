use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::equilibrium::{population_variance, shannon_entropy, specific_heat};
use crate::error::{Error, Result};

/// One query row of one attention head: the scaled scores `q·k/√d_k` over the
/// visible keys and the resulting softmax weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub batch_index: usize,
    pub query_index: usize,
    pub scaled_logits: Vec<f64>,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionProbe {
    pub layer_index: usize,
    pub head_index: usize,
    pub rows: Vec<ProbeRow>,
}

/// How the per-row energy spread is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvWeighting {
    /// `(1/T²)·Var_ρ(E)` with `E = −scaled logit` and `ρ` the attention row.
    RhoWeighted,
    /// Plain population variance of the scaled logits across keys.
    Unweighted,
}

impl FromStr for CvWeighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rho_weighted" | "weighted" => Ok(Self::RhoWeighted),
            "unweighted" => Ok(Self::Unweighted),
            other => Err(Error::invalid(format!("unknown cv weighting `{other}`"))),
        }
    }
}

/// Mean over every probed row (all layers, heads, batch entries, queries).
pub fn attention_cv(probes: &[AttentionProbe], t: f64, weighting: CvWeighting) -> Result<f64> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::invalid(format!("temperature must be positive, got {t}")));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    let mut energies = Vec::new();
    for row in probes.iter().flat_map(|p| &p.rows) {
        let value = match weighting {
            CvWeighting::RhoWeighted => {
                energies.clear();
                energies.extend(row.scaled_logits.iter().map(|l| -l));
                specific_heat(&energies, &row.probs, t)
            }
            CvWeighting::Unweighted => {
                if row.scaled_logits.len() < 2 {
                    return Err(Error::invalid(format!(
                        "unweighted variance needs at least 2 keys (query {} has {})",
                        row.query_index,
                        row.scaled_logits.len()
                    )));
                }
                population_variance(&row.scaled_logits)
            }
        };
        total += value;
        count += 1;
    }
    if count == 0 {
        return Err(Error::invalid("no probe rows"));
    }
    Ok(total / count as f64)
}

/// Mean Shannon entropy of the probed attention rows.
pub fn attention_entropy(probes: &[AttentionProbe]) -> Result<f64> {
    let rows: Vec<&ProbeRow> = probes.iter().flat_map(|p| &p.rows).collect();
    if rows.is_empty() {
        return Err(Error::invalid("no probe rows"));
    }
    Ok(rows.iter().map(|r| shannon_entropy(&r.probs)).sum::<f64>() / rows.len() as f64)
}
