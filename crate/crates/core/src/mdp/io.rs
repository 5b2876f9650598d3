use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EpisodicMdp, RewardNoise};
use crate::error::{Error, Result};

/// On-disk form of an [`EpisodicMdp`]. Floats are written in shortest
/// round-trip form, so reading a document back reproduces every bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdpDocument {
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub b: f64,
    pub s1: usize,
    #[serde(rename = "P")]
    pub p: Vec<Vec<Vec<Vec<f64>>>>,
    pub r: Vec<Vec<Vec<f64>>>,
    pub noise: NoiseDocument,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseDocument {
    pub kind: String,
    pub half_width: f64,
}

impl MdpDocument {
    pub fn from_mdp(mdp: &EpisodicMdp) -> Self {
        let (n_s, n_a, n_h) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
        let p = (0..n_h)
            .map(|h| {
                (0..n_s)
                    .map(|s| (0..n_a).map(|a| mdp.next_dist(h, s, a).to_vec()).collect())
                    .collect()
            })
            .collect();
        let r = (0..n_h)
            .map(|h| {
                (0..n_s)
                    .map(|s| (0..n_a).map(|a| mdp.reward(h, s, a)).collect())
                    .collect()
            })
            .collect();
        let noise = match mdp.noise() {
            RewardNoise::None => NoiseDocument {
                kind: "none".into(),
                half_width: 0.0,
            },
            RewardNoise::Uniform { half_width } => NoiseDocument {
                kind: "uniform".into(),
                half_width,
            },
        };
        MdpDocument {
            num_states: n_s,
            num_actions: n_a,
            horizon: n_h,
            b: mdp.bound(),
            s1: mdp.initial_state(),
            p,
            r,
            noise,
        }
    }

    pub fn into_mdp(self) -> Result<EpisodicMdp> {
        let noise = match self.noise.kind.as_str() {
            "none" => RewardNoise::None,
            "uniform" => RewardNoise::Uniform {
                half_width: self.noise.half_width,
            },
            other => {
                return Err(Error::Invalid {
                    what: "mdp document",
                    reason: format!("unknown noise kind {other:?}"),
                })
            }
        };
        let mdp = EpisodicMdp::new(self.p, self.r, noise, self.s1, self.b)?;
        if mdp.num_states() != self.num_states
            || mdp.num_actions() != self.num_actions
            || mdp.horizon() != self.horizon
        {
            return Err(Error::Invalid {
                what: "mdp document",
                reason: "declared sizes disagree with the arrays".into(),
            });
        }
        Ok(mdp)
    }
}

impl EpisodicMdp {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&MdpDocument::from_mdp(self)).expect("mdp document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MdpDocument = serde_json::from_str(text)?;
        doc.into_mdp()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// SHA-256 of the compact JSON document, hex encoded.
    pub fn fingerprint(&self) -> String {
        let compact =
            serde_json::to_vec(&MdpDocument::from_mdp(self)).expect("mdp document serializes");
        hex::encode(Sha256::digest(&compact))
    }
}
