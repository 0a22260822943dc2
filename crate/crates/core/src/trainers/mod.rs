//! Warm embedding spaces: implicit-feedback ALS over user-track affinities and
//! truncated SVD over shifted positive PMI track co-occurrences, plus derived
//! entity and user vectors.

mod affinity;
mod als;
mod entities;
mod sppmi;
mod svd;

pub use affinity::{build_affinity_matrix, AffinityMatrix, AffinityWeights};
pub use als::{als_objective, train_als, AlsConfig, AlsFit};
pub use entities::{
    derive_entity_embedding, warm_user_embedding_from_history, warm_user_table, EntityEmbeddings,
    HistoryWeighting,
};
pub use sppmi::{build_sppmi, sppmi_entry, CooccurrenceCounts};
pub use svd::{randomized_svd, train_svd_embeddings, SvdConfig, SvdScaling, TruncatedSvd};

use serde::{Deserialize, Serialize};

/// Which warm embedding space a stage operates in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Space {
    #[serde(rename = "ut-als")]
    UtAls,
    #[serde(rename = "tt-svd")]
    TtSvd,
    /// Ground-truth vectors shipped with a synthetic bundle.
    #[serde(rename = "planted")]
    Planted,
}

impl Space {
    pub fn as_str(self) -> &'static str {
        match self {
            Space::UtAls => "ut-als",
            Space::TtSvd => "tt-svd",
            Space::Planted => "planted",
        }
    }

    /// Default embedding dimension in production configuration.
    pub fn default_dim(self) -> usize {
        match self {
            Space::UtAls => 256,
            Space::TtSvd => 128,
            Space::Planted => 32,
        }
    }
}

impl std::str::FromStr for Space {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "ut-als" => Ok(Space::UtAls),
            "tt-svd" => Ok(Space::TtSvd),
            "planted" => Ok(Space::Planted),
            other => Err(crate::Error::InvalidConfig(format!(
                "unknown embedding space `{other}` (expected ut-als, tt-svd or planted)"
            ))),
        }
    }
}

impl std::fmt::Display for Space {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}
