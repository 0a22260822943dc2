//! An immutable set of trained artifacts loaded from a pipeline workspace.

use std::path::{Path, PathBuf};

use coldstart_core::embedding::round_to_f32;
use coldstart_core::features::assemble_features;
use coldstart_core::lineage::fingerprint_json;
use coldstart_core::pipeline::FeatureModel;
use coldstart_core::recommend::{
    recommend_full_personalized, recommend_semi_personalized, PopularityList, Recommendation, Strategy,
};
use coldstart_core::regressor::RegressorModel;
use coldstart_core::segmentation::Segmentation;
use coldstart_core::stages::{
    load_feature_model, load_popular, load_regressor, load_segmentation, load_space, Expect, Workspace,
};
use coldstart_core::{EmbeddingTable, Error, Result};
use serde::{Deserialize, Serialize};

use crate::api::{ApiError, UserInput};

/// Short lineage identities of the components a response was computed from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stamps {
    pub embeddings: String,
    pub features: String,
    pub segments: String,
    pub regressor: String,
}

fn short(id: &str) -> String {
    id[..16].to_string()
}

pub struct Snapshot {
    pub dir: PathBuf,
    /// Fingerprint prefix over all component identities.
    pub version: String,
    pub stamps: Stamps,
    pub space: String,
    pub features: FeatureModel,
    pub regressor: RegressorModel,
    pub segmentation: Segmentation,
    pub popular: PopularityList,
}

impl Snapshot {
    /// Loads and cross-checks the embeddings, features, segments and regressor artifacts
    /// below `dir`. All four must come from one configuration and one lineage chain.
    pub fn load(dir: &Path) -> Result<Snapshot> {
        let ws = Workspace::new(dir, None);
        let (regressor, reg_m) = load_regressor(&ws, Expect::default())?;
        let expect = Expect {
            config: Some(&reg_m.config),
            data: None,
        };
        let (space, emb_m) = load_space(&ws, expect)?;
        let (features, feat_m) = load_feature_model(&ws, space.tracks, expect)?;
        let (segmentation, seg_m) = load_segmentation(&ws, expect)?;
        let popular = load_popular(&ws)?;

        if !regressor.trained {
            return Err(Error::UntrainedModel);
        }
        if regressor.channel_spec_version != features.spec.version {
            return Err(Error::Lineage(format!(
                "regressor expects channel spec version {}, features use {}",
                regressor.channel_spec_version, features.spec.version
            )));
        }
        let dim = features.entities.dim();
        for (expected, got) in [
            (features.spec.total_dim(), regressor.input_dim()),
            (dim, regressor.output_dim()),
            (dim, segmentation.dim()),
        ] {
            if expected != got {
                return Err(Error::DimensionMismatch { expected, got });
            }
        }
        if popular.tracks().is_empty() {
            return Err(Error::Format("popularity list is empty".into()));
        }
        let ids = [emb_m.identity(), feat_m.identity(), seg_m.identity(), reg_m.identity()];
        let version = short(&fingerprint_json(&ids));
        Ok(Snapshot {
            dir: dir.to_path_buf(),
            version,
            stamps: Stamps {
                embeddings: short(&ids[0]),
                features: short(&ids[1]),
                segments: short(&ids[2]),
                regressor: short(&ids[3]),
            },
            space: space.name,
            features,
            regressor,
            segmentation,
            popular,
        })
    }

    pub fn tracks(&self) -> &EmbeddingTable {
        &self.features.entities.tracks
    }

    /// Predicted embedding. Features and output pass through single precision exactly
    /// as they do between offline stages, so both paths agree bit for bit.
    pub fn embed(&self, input: &UserInput) -> std::result::Result<Vec<f64>, ApiError> {
        if let Some(v) = input.channel_spec_version {
            if v != self.features.spec.version {
                return Err(ApiError::unprocessable(format!(
                    "channel spec version {v} does not match the loaded version {}",
                    self.features.spec.version
                )));
            }
        }
        let f = &self.features;
        let mut x = assemble_features(input.user, &input.profile, &input.events, &f.entities, &f.groups, &f.spec)?
            .values;
        round_to_f32(&mut x);
        let mut y = self.regressor.predict_one(&x)?;
        round_to_f32(&mut y);
        Ok(y)
    }

    pub fn recommend(
        &self,
        input: &UserInput,
        strategy: Strategy,
        k: usize,
    ) -> std::result::Result<Recommendation, ApiError> {
        let y = self.embed(input)?;
        match strategy {
            Strategy::SemiPersonalized => Ok(recommend_semi_personalized(
                input.user,
                &y,
                &self.segmentation,
                &self.popular,
                k,
            )),
            Strategy::FullPersonalized => Ok(recommend_full_personalized(
                input.user,
                &y,
                self.tracks(),
                &self.popular,
                k,
            )?),
            other => Err(ApiError::bad_request(format!("strategy {other} is not served"))),
        }
    }
}
