//! Stage functions composing the full cold-start pipeline over a dataset bundle, and
//! the multi-seed offline experiment built from them.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::Split;
use crate::dataset::DatasetBundle;
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::eval::{
    breakdown_by_interaction, default_bins, popularity_distribution, run_experiment, BreakdownRow,
    EvalReport, HistogramBucket,
};
use crate::features::{build_feature_table, ChannelSpec, GroupEmbeddings, DEFAULT_MIN_GROUP_SIZE};
use crate::ids::{TrackId, UserId};
use crate::interactions::InteractionLog;
use crate::lineage::fingerprint_json;
use crate::par;
use crate::recommend::{
    baseline_popularity, baseline_registration_streams, recommend_full_personalized,
    recommend_semi_personalized, FeatureClustering, PopularityList, Recommendation, Strategy,
    DEFAULT_TOP_K,
};
use crate::regressor::{predict_embeddings, train, BnPlacement, RegressorModel, RegressorSpec, Samples, TrainConfig, TrainOutcome};
use crate::segmentation::{AssignMetric, KMeansConfig, PopularityMeasure, Segmentation};
use crate::trainers::{
    build_affinity_matrix, build_sppmi, train_als, train_svd_embeddings, warm_user_table,
    AffinityWeights, AlsConfig, CooccurrenceCounts, EntityEmbeddings, HistoryWeighting, SvdConfig,
};

/// Collections whose co-occurrences feed the PMI matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CooccurrenceSource {
    #[default]
    Playlists,
    /// Playlists plus each warm user's set of streamed tracks.
    PlaylistsAndHistories,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// `ut-als`, `tt-svd`, or the name of a space shipped with the bundle.
    pub space: String,
    /// Train the space even when the bundle ships vectors for it.
    pub retrain_space: bool,
    pub seed: u64,
    pub top_k: usize,
    pub als: AlsConfig,
    pub affinity: AffinityWeights,
    pub svd: SvdConfig,
    pub sppmi_shift: f64,
    pub cooccurrence: CooccurrenceSource,
    pub history_weighting: HistoryWeighting,
    pub min_group_size: usize,
    pub segments: usize,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
    pub assign_metric: AssignMetric,
    pub popularity_measure: PopularityMeasure,
    /// Clusters of the input-feature baseline.
    pub feature_segments: usize,
    pub hidden: Vec<usize>,
    pub batch_norm: bool,
    pub batch_norm_placement: BnPlacement,
    pub train: TrainConfig,
    /// Share of warm users held out to report validation loss.
    pub warm_holdout: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            space: "tt-svd".into(),
            retrain_space: false,
            seed: 0,
            top_k: DEFAULT_TOP_K,
            als: AlsConfig::default(),
            affinity: AffinityWeights::default(),
            svd: SvdConfig::default(),
            sppmi_shift: 1.0,
            cooccurrence: CooccurrenceSource::default(),
            history_weighting: HistoryWeighting::default(),
            min_group_size: DEFAULT_MIN_GROUP_SIZE,
            segments: 1000,
            kmeans_max_iter: 100,
            kmeans_tol: 1e-4,
            assign_metric: AssignMetric::default(),
            popularity_measure: PopularityMeasure::default(),
            feature_segments: 1000,
            hidden: vec![400, 300, 200],
            batch_norm: true,
            batch_norm_placement: BnPlacement::default(),
            train: TrainConfig::default(),
            warm_holdout: 0.1,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::InvalidConfig("top_k must be >= 1".into()));
        }
        if self.segments == 0 || self.feature_segments == 0 {
            return Err(Error::InvalidConfig("segment counts must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.warm_holdout) {
            return Err(Error::InvalidConfig("warm_holdout must lie in [0, 1)".into()));
        }
        self.train.validate()
    }

    pub fn fingerprint(&self) -> String {
        fingerprint_json(self)
    }

    pub fn kmeans(&self, k: usize, seed: u64) -> KMeansConfig {
        KMeansConfig {
            k,
            seed,
            max_iter: self.kmeans_max_iter,
            tol: self.kmeans_tol,
        }
    }

    pub fn regressor_spec(&self, input_dim: usize, output_dim: usize) -> RegressorSpec {
        let mut spec = RegressorSpec::new(input_dim, self.hidden.clone(), output_dim);
        spec.batch_norm = vec![self.batch_norm; self.hidden.len()];
        spec.placement = self.batch_norm_placement;
        spec
    }
}

/// Track and warm-user vectors of the working space.
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceModel {
    pub name: String,
    pub tracks: EmbeddingTable,
    /// Warm users with a usable vector.
    pub users: EmbeddingTable,
    /// Warm users left without a vector (no resolvable history).
    pub null_users: Vec<UserId>,
}

fn warm_log(bundle: &DatasetBundle) -> InteractionLog {
    bundle.log.restrict(|u| bundle.universe.is_warm(u))
}

/// Uses the bundle's vectors for `cfg.space` when present, otherwise trains the space
/// from warm interactions.
pub fn train_space(bundle: &DatasetBundle, cfg: &PipelineConfig) -> Result<SpaceModel> {
    let warm = bundle.warm_users();
    let log = warm_log(bundle);
    let from_history = |tracks: EmbeddingTable| -> Result<SpaceModel> {
        let (users, null_users) = warm_user_table(&warm, &log, &tracks, cfg.history_weighting)?;
        let users = drop_rows(&users, &null_users)?.rounded_to_f32();
        Ok(SpaceModel {
            name: cfg.space.clone(),
            tracks,
            users,
            null_users,
        })
    };
    if let (Some(shipped), false) = (bundle.spaces.get(&cfg.space), cfg.retrain_space) {
        log::info!("using shipped vectors for space {}", cfg.space);
        return match &shipped.users {
            Some(users) => Ok(SpaceModel {
                name: cfg.space.clone(),
                tracks: shipped.tracks.clone(),
                users: users.clone(),
                null_users: warm.iter().copied().filter(|u| !users.contains(u.0)).collect(),
            }),
            None => from_history(shipped.tracks.clone()),
        };
    }
    match cfg.space.as_str() {
        "ut-als" => {
            let m = build_affinity_matrix(&log, &bundle.catalog, cfg.affinity);
            let fit = train_als(&m, &cfg.als)?;
            log::info!(
                "ALS objective {:.6e} -> {:.6e}",
                fit.objective.first().copied().unwrap_or(f64::NAN),
                fit.objective.last().copied().unwrap_or(f64::NAN)
            );
            let null_users = warm.iter().copied().filter(|u| !fit.users.contains(u.0)).collect();
            Ok(SpaceModel {
                name: cfg.space.clone(),
                tracks: fit.tracks.rounded_to_f32(),
                users: fit.users.rounded_to_f32(),
                null_users,
            })
        }
        "tt-svd" => {
            let counts = match cfg.cooccurrence {
                CooccurrenceSource::Playlists => CooccurrenceCounts::from_playlists(&bundle.catalog),
                CooccurrenceSource::PlaylistsAndHistories => {
                    let mut lists: Vec<Vec<TrackId>> = bundle
                        .catalog
                        .playlists()
                        .map(|(_, l)| l.to_vec())
                        .collect();
                    lists.extend(warm.iter().map(|u| log.stream_counts(*u).into_keys().collect()));
                    CooccurrenceCounts::from_collections(&bundle.catalog, lists.iter().map(Vec::as_slice))
                }
            };
            let s = build_sppmi(&counts, cfg.sppmi_shift)?;
            let tracks = train_svd_embeddings(&s, &counts.tracks, &cfg.svd)?.rounded_to_f32();
            from_history(tracks)
        }
        other => Err(Error::InvalidConfig(format!(
            "space {other:?} is neither shipped with bundle {:?} nor trainable (ut-als, tt-svd)",
            bundle.name
        ))),
    }
}

fn drop_rows(table: &EmbeddingTable, drop: &[UserId]) -> Result<EmbeddingTable> {
    if drop.is_empty() {
        return Ok(table.clone());
    }
    let drop: std::collections::HashSet<u64> = drop.iter().map(|u| u.0).collect();
    EmbeddingTable::from_rows(
        table.dim(),
        table.iter().filter(|(id, _)| !drop.contains(id)).map(|(id, v)| (id, v.to_vec())),
    )
}

/// Everything needed to turn registration-day activity into input vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureModel {
    pub spec: ChannelSpec,
    pub entities: EntityEmbeddings,
    pub groups: GroupEmbeddings,
}

pub fn fit_features(bundle: &DatasetBundle, space: &SpaceModel, cfg: &PipelineConfig) -> Result<FeatureModel> {
    let mut entities = EntityEmbeddings::derive(space.tracks.clone(), &bundle.catalog)?;
    // stored as f32, so round now for in-memory runs to agree with reloaded artifacts
    for t in [&mut entities.artists, &mut entities.albums, &mut entities.playlists] {
        *t = t.rounded_to_f32();
    }
    let warm: Vec<UserId> = space.users.ids().iter().map(|&u| UserId(u)).collect();
    let groups = GroupEmbeddings::fit(&warm, &space.users, &bundle.universe, cfg.min_group_size)?;
    Ok(FeatureModel {
        spec: ChannelSpec::standard(space.tracks.dim()),
        entities,
        groups,
    })
}

/// Input vectors of warm users (their registration day sliced out of longer histories)
/// and of every cold user (all logged events, which must lie on registration day).
/// Values are rounded to single precision so that in-memory runs match file handoffs.
pub fn feature_tables(
    bundle: &DatasetBundle,
    space: &SpaceModel,
    model: &FeatureModel,
) -> Result<(EmbeddingTable, EmbeddingTable)> {
    let warm: Vec<UserId> = space.users.ids().iter().map(|&u| UserId(u)).collect();
    let cold: Vec<UserId> = bundle.universe.cold.keys().copied().collect();
    let build = |users: &[UserId], strict: bool| {
        build_feature_table(
            users,
            &bundle.universe,
            &bundle.log,
            &model.entities,
            &model.groups,
            &model.spec,
            strict,
        )
    };
    Ok((build(&warm, false)?.rounded_to_f32(), build(&cold, true)?.rounded_to_f32()))
}

pub fn segment(bundle: &DatasetBundle, space: &SpaceModel, cfg: &PipelineConfig, seed: u64) -> Result<Segmentation> {
    let k = cfg.segments.min(space.users.len());
    if k < cfg.segments {
        log::warn!("only {} warm users; using {k} segments", space.users.len());
    }
    let log = warm_log(bundle);
    Ok(Segmentation::cluster(&space.users, cfg.assign_metric, &cfg.kmeans(k, seed))?
        .with_top_items(&log, &bundle.catalog, cfg.top_k, cfg.popularity_measure)
        .with_profiles(&bundle.universe, &log, &bundle.catalog))
}

/// Trains the regressor from warm features onto warm vectors, holding out a seeded
/// share of warm users for validation loss.
pub fn fit_regressor(
    warm_features: &EmbeddingTable,
    space: &SpaceModel,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    let mut ids: Vec<u64> = warm_features.ids().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f00d);
    ids.shuffle(&mut rng);
    let n_val = (cfg.warm_holdout * ids.len() as f64).round() as usize;
    let (val_ids, train_ids) = ids.split_at(n_val);
    let subset = |keep: &[u64]| -> Result<EmbeddingTable> {
        let mut keep = keep.to_vec();
        keep.sort_unstable();
        EmbeddingTable::from_rows(
            warm_features.dim(),
            keep.iter()
                .map(|&id| (id, warm_features.get(id).expect("id from table").to_vec())),
        )
    };
    let train_set = Samples::align(&subset(train_ids)?, &space.users)?;
    let val_set = if val_ids.is_empty() {
        None
    } else {
        Some(Samples::align(&subset(val_ids)?, &space.users)?)
    };
    let spec = cfg.regressor_spec(warm_features.dim(), space.users.dim());
    let model = RegressorModel::init(spec, seed)?;
    let tc = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    train(model, &train_set, val_set.as_ref(), &tc)
}

/// Inputs shared by every strategy for one seed.
pub struct RecommendContext<'a> {
    pub bundle: &'a DatasetBundle,
    pub space: &'a SpaceModel,
    pub popular: &'a PopularityList,
    pub cold_features: &'a EmbeddingTable,
    pub segmentation: Option<&'a Segmentation>,
    pub cold_embeddings: Option<&'a EmbeddingTable>,
    pub feature_clustering: Option<&'a FeatureClustering>,
}

fn missing(what: &str, strategy: Strategy) -> Error {
    Error::InvalidConfig(format!("strategy {strategy} needs {what}"))
}

/// One recommendation per user, in the order given.
pub fn recommend_users(
    strategy: Strategy,
    users: &[UserId],
    ctx: &RecommendContext<'_>,
    k: usize,
) -> Result<Vec<Recommendation>> {
    let embedding = |u: UserId| -> Result<&[f64]> {
        ctx.cold_embeddings
            .ok_or_else(|| missing("predicted embeddings", strategy))?
            .get(u.0)
            .ok_or_else(|| Error::Validation(vec![format!("no predicted embedding for user {u}")]))
    };
    let recs = par::map_slice(users, |&u| -> Result<Recommendation> {
        match strategy {
            Strategy::Popularity => Ok(baseline_popularity(u, ctx.popular, k)),
            Strategy::SemiPersonalized => {
                let seg = ctx.segmentation.ok_or_else(|| missing("a segmentation", strategy))?;
                Ok(recommend_semi_personalized(u, embedding(u)?, seg, ctx.popular, k))
            }
            Strategy::FullPersonalized => {
                recommend_full_personalized(u, embedding(u)?, &ctx.space.tracks, ctx.popular, k)
            }
            Strategy::RegistrationStreams => {
                let profile = ctx
                    .bundle
                    .universe
                    .profile(u)
                    .ok_or_else(|| Error::Validation(vec![format!("user {u} has no profile")]))?;
                let events = ctx.bundle.log.on_day(u, profile.registration_day);
                Ok(baseline_registration_streams(u, events, &ctx.space.tracks, ctx.popular, k))
            }
            Strategy::FeatureClustering => {
                let fc = ctx
                    .feature_clustering
                    .ok_or_else(|| missing("input-feature clusters", strategy))?;
                let x = ctx
                    .cold_features
                    .get(u.0)
                    .ok_or_else(|| Error::Validation(vec![format!("no features for user {u}")]))?;
                Ok(fc.recommend(u, x, ctx.popular, k))
            }
        }
    });
    recs.into_iter().collect()
}

/// Seed-independent artifacts of an experiment.
pub struct Prepared {
    pub space: SpaceModel,
    pub features: FeatureModel,
    pub warm_features: EmbeddingTable,
    pub cold_features: EmbeddingTable,
    pub popular: PopularityList,
}

pub fn prepare(bundle: &DatasetBundle, cfg: &PipelineConfig) -> Result<Prepared> {
    cfg.validate()?;
    let space = train_space(bundle, cfg)?;
    let features = fit_features(bundle, &space, cfg)?;
    let (warm_features, cold_features) = feature_tables(bundle, &space, &features)?;
    let popular = PopularityList::from_log(&bundle.log, &bundle.catalog, &bundle.universe.warm);
    Ok(Prepared {
        space,
        features,
        warm_features,
        cold_features,
        popular,
    })
}

/// Artifacts that depend on the seed.
pub struct SeedArtifacts {
    pub segmentation: Option<Segmentation>,
    pub regressor: Option<TrainOutcome>,
    pub cold_embeddings: Option<EmbeddingTable>,
    pub feature_clustering: Option<FeatureClustering>,
}

pub fn seed_artifacts(
    bundle: &DatasetBundle,
    prepared: &Prepared,
    cfg: &PipelineConfig,
    strategies: &[Strategy],
    seed: u64,
) -> Result<SeedArtifacts> {
    let needs = |s: Strategy| strategies.contains(&s);
    let needs_embeddings = needs(Strategy::SemiPersonalized) || needs(Strategy::FullPersonalized);
    let segmentation = if needs(Strategy::SemiPersonalized) {
        Some(segment(bundle, &prepared.space, cfg, seed)?)
    } else {
        None
    };
    let (regressor, cold_embeddings) = if needs_embeddings {
        let outcome = fit_regressor(&prepared.warm_features, &prepared.space, cfg, seed)?;
        let cold = predict_embeddings(&outcome.model, &prepared.cold_features)?.rounded_to_f32();
        (Some(outcome), Some(cold))
    } else {
        (None, None)
    };
    let feature_clustering = if needs(Strategy::FeatureClustering) {
        let k = cfg.feature_segments.min(prepared.warm_features.len());
        Some(FeatureClustering::fit(
            &prepared.warm_features,
            &warm_log(bundle),
            &bundle.catalog,
            &cfg.kmeans(k, seed),
            cfg.top_k,
        )?)
    } else {
        None
    };
    Ok(SeedArtifacts {
        segmentation,
        regressor,
        cold_embeddings,
        feature_clustering,
    })
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub reports: Vec<EvalReport>,
    /// Per strategy, mean per-user precision by registration-day activity.
    pub breakdowns: BTreeMap<Strategy, Vec<BreakdownRow>>,
    /// Per strategy, recommended slots by popularity rank (first seed).
    pub histograms: BTreeMap<Strategy, Vec<HistogramBucket>>,
    /// Per strategy, recommendations of the first seed.
    pub first_seed_recommendations: BTreeMap<Strategy, Vec<Recommendation>>,
}

pub const HISTOGRAM_BUCKET: u32 = 50;

/// Runs every strategy once per seed on the cold users of `split` and scores them
/// against ground truth. Seed-dependent stages (k-means initialization, regressor
/// initialization and shuffling) are redone for every seed.
pub fn run_offline_experiment(
    bundle: &DatasetBundle,
    cfg: &PipelineConfig,
    strategies: &[Strategy],
    seeds: &[u64],
    split: Split,
) -> Result<ExperimentOutput> {
    let prepared = prepare(bundle, cfg)?;
    let users: Vec<UserId> = bundle.cold_users(split);
    let truth = bundle.evaluation_truth(&users);
    let users: Vec<UserId> = users.into_iter().filter(|u| truth.get(*u).is_some()).collect();
    log::info!("evaluating {} {} users", users.len(), split.as_str());

    let mut per_seed: BTreeMap<(Strategy, u64), Vec<Recommendation>> = BTreeMap::new();
    for &seed in seeds {
        let art = seed_artifacts(bundle, &prepared, cfg, strategies, seed)?;
        let ctx = RecommendContext {
            bundle,
            space: &prepared.space,
            popular: &prepared.popular,
            cold_features: &prepared.cold_features,
            segmentation: art.segmentation.as_ref(),
            cold_embeddings: art.cold_embeddings.as_ref(),
            feature_clustering: art.feature_clustering.as_ref(),
        };
        for &s in strategies {
            per_seed.insert((s, seed), recommend_users(s, &users, &ctx, cfg.top_k)?);
        }
    }

    let fingerprint = cfg.fingerprint();
    let mut out = ExperimentOutput {
        reports: Vec::new(),
        breakdowns: BTreeMap::new(),
        histograms: BTreeMap::new(),
        first_seed_recommendations: BTreeMap::new(),
    };
    for &s in strategies {
        let report = run_experiment(s, &prepared.space.name, seeds, cfg.top_k, &truth, &fingerprint, |seed| {
            Ok(per_seed.get(&(s, seed)).cloned().unwrap_or_default())
        })?;
        out.breakdowns.insert(
            s,
            breakdown_by_interaction(&report.per_user, &bundle.log, &bundle.universe, &default_bins()),
        );
        if let Some(first) = seeds.first().and_then(|seed| per_seed.get(&(s, *seed))) {
            out.histograms
                .insert(s, popularity_distribution(first, &bundle.catalog, HISTOGRAM_BUCKET)?);
            out.first_seed_recommendations.insert(s, first.clone());
        }
        out.reports.push(report);
    }
    Ok(out)
}
