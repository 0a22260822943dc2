//! File-based pipeline stages. Each stage reads the artifact directories of earlier
//! stages below a workspace root, writes its own directory and records a lineage
//! manifest in it. Loading an artifact re-hashes its files and checks that the
//! configuration and the upstream artifacts it was built from are still current.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::catalog::Split;
use crate::dataset::{generate_synthetic, load_bundle, save_bundle, DatasetBundle, SyntheticConfig, MANIFEST_FILE};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::eval::{
    breakdown_by_interaction, default_bins, popularity_distribution, run_experiment, write_breakdown_csv,
    write_histogram_csv, write_report_csv, write_report_table, BreakdownRow, EvalReport, HistogramBucket,
};
use crate::features::{ChannelSpec, GroupEmbeddings};
use crate::ids::{TrackId, UserId};
use crate::lineage::{fingerprint_dir, fingerprint_file, fingerprint_files, fingerprint_json, ArtifactManifest};
use crate::pipeline::{
    feature_tables, fit_features, fit_regressor, recommend_users, run_offline_experiment, segment, train_space,
    FeatureModel, PipelineConfig, RecommendContext, SpaceModel, HISTOGRAM_BUCKET,
};
use crate::recommend::{FeatureClustering, PopularityList, Recommendation, Strategy};
use crate::regressor::{predict_embeddings, write_loss_csv, RegressorModel};
use crate::segmentation::Segmentation;
use crate::trainers::EntityEmbeddings;

pub const DATA: &str = "data";
pub const EMBEDDINGS: &str = "embeddings";
pub const FEATURES: &str = "features";
pub const SEGMENTS: &str = "segments";
pub const REGRESSOR: &str = "regressor";
pub const RECOMMENDATIONS: &str = "recommendations";
pub const EVALUATION: &str = "evaluation";
pub const REPORT: &str = "report";

const RECOMMENDATIONS_FILE: &str = "recommendations.tsv";
const SUMMARY_FILE: &str = "summary.json";

/// Artifact directories below one root. The dataset bundle defaults to `<root>/data`.
#[derive(Clone, Debug)]
pub struct Workspace {
    pub root: PathBuf,
    pub data: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>, data: Option<PathBuf>) -> Self {
        let root = root.into();
        let data = data.unwrap_or_else(|| root.join(DATA));
        Workspace { root, data }
    }

    pub fn dir(&self, artifact: &str) -> PathBuf {
        if artifact == DATA {
            self.data.clone()
        } else {
            self.root.join(artifact)
        }
    }

    pub fn recommendations(&self, strategy: Strategy) -> PathBuf {
        self.root.join(recommendation_artifact(strategy))
    }
}

fn recommendation_artifact(strategy: Strategy) -> String {
    format!("{RECOMMENDATIONS}/{strategy}")
}

/// Subcommand that produces an artifact.
pub fn producer(artifact: &str) -> &'static str {
    match artifact {
        DATA => "gen-data",
        EMBEDDINGS => "train-embeddings",
        FEATURES => "build-features",
        SEGMENTS => "segment",
        REGRESSOR => "train-regressor",
        EVALUATION => "evaluate",
        REPORT => "report",
        _ => "recommend",
    }
}

/// What an upstream artifact must agree with. `None` skips that comparison.
#[derive(Clone, Copy, Debug, Default)]
pub struct Expect<'a> {
    /// Fingerprint of the pipeline configuration.
    pub config: Option<&'a str>,
    /// Fingerprint of the dataset bundle directory.
    pub data: Option<&'a str>,
}

/// Loads an artifact's manifest, re-hashes its files and walks its inputs, failing on
/// anything rebuilt since.
pub fn open_artifact(ws: &Workspace, artifact: &str, expect: Expect<'_>) -> Result<ArtifactManifest> {
    let dir = ws.dir(artifact);
    if !dir.join(ArtifactManifest::FILE).is_file() {
        return Err(Error::MissingArtifact {
            what: format!("{artifact} artifact"),
            path: dir,
            producer: producer(artifact),
        });
    }
    let m = ArtifactManifest::load(&dir)?;
    m.verify(&dir)?;
    if let Some(config) = expect.config {
        if m.config != config {
            return Err(Error::Lineage(format!(
                "{artifact} was built with a different configuration; rerun `coldstart {}` with the current settings",
                producer(artifact)
            )));
        }
    }
    for (input, recorded) in &m.inputs {
        let current = if input == DATA {
            match expect.data {
                Some(fp) => fp.to_string(),
                None => continue,
            }
        } else {
            open_artifact(ws, input, expect)?.identity()
        };
        if &current != recorded {
            return Err(Error::Lineage(format!(
                "{artifact} was built from an older {input}; rerun `coldstart {}`",
                producer(artifact)
            )));
        }
    }
    Ok(m)
}

pub fn data_fingerprint(ws: &Workspace) -> Result<String> {
    if !ws.data.join(MANIFEST_FILE).is_file() {
        return Err(Error::MissingArtifact {
            what: "dataset bundle".into(),
            path: ws.data.clone(),
            producer: producer(DATA),
        });
    }
    fingerprint_dir(&ws.data)
}

pub fn load_data(ws: &Workspace) -> Result<(DatasetBundle, String)> {
    let fp = data_fingerprint(ws)?;
    Ok((load_bundle(&ws.data)?, fp))
}

/// Collects the files a stage writes, then records them in its manifest.
struct Output {
    dir: PathBuf,
    files: Vec<String>,
}

impl Output {
    fn create(dir: PathBuf) -> Result<Self> {
        // a half-written directory must not look complete
        let manifest = dir.join(ArtifactManifest::FILE);
        if manifest.exists() {
            fs::remove_file(&manifest).map_err(|e| Error::io(&manifest, e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Output { dir, files: Vec::new() })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn write(&mut self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
        let path = self.path(name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(&path, e))
    }

    fn table(&mut self, name: &str, table: &EmbeddingTable) -> Result<()> {
        let path = self.path(name);
        table.save(path)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value).map_err(std::io::Error::other)?;
            writeln!(w)
        })
    }

    fn finish(self, stage: &str, seed: u64, config: String, inputs: BTreeMap<String, String>) -> Result<ArtifactManifest> {
        let mut outputs = BTreeMap::new();
        for name in &self.files {
            outputs.insert(name.clone(), fingerprint_file(&self.dir.join(name))?);
        }
        let m = ArtifactManifest {
            stage: stage.to_string(),
            seed,
            config,
            inputs,
            outputs,
        };
        m.save(&self.dir)?;
        Ok(m)
    }
}

fn inputs<'a>(pairs: impl IntoIterator<Item = (&'a str, String)>) -> BTreeMap<String, String> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn open_text(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?))
}

/// Generates a synthetic bundle into the workspace's data directory.
pub fn gen_data(ws: &Workspace, cfg: &SyntheticConfig) -> Result<ArtifactManifest> {
    let data = generate_synthetic(cfg)?;
    let out = Output::create(ws.data.clone())?;
    save_bundle(&data.bundle, &ws.data)?;
    let mut outputs = fingerprint_files(&ws.data)?;
    outputs.remove(ArtifactManifest::FILE);
    let m = ArtifactManifest {
        stage: DATA.to_string(),
        seed: cfg.seed,
        config: fingerprint_json(cfg),
        inputs: BTreeMap::new(),
        outputs,
    };
    m.save(&out.dir)?;
    Ok(m)
}

#[derive(Serialize, Deserialize)]
struct SpaceInfo {
    name: String,
    dim: usize,
    null_users: Vec<UserId>,
}

pub fn train_embeddings(ws: &Workspace, cfg: &PipelineConfig) -> Result<ArtifactManifest> {
    cfg.validate()?;
    let (bundle, data) = load_data(ws)?;
    let space = train_space(&bundle, cfg)?;
    let mut out = Output::create(ws.dir(EMBEDDINGS))?;
    out.table("tracks.emb", &space.tracks)?;
    out.table("users.emb", &space.users)?;
    out.json(
        "space.json",
        &SpaceInfo {
            name: space.name.clone(),
            dim: space.tracks.dim(),
            null_users: space.null_users.clone(),
        },
    )?;
    out.finish(EMBEDDINGS, cfg.seed, cfg.fingerprint(), inputs([(DATA, data)]))
}

pub fn load_space(ws: &Workspace, expect: Expect<'_>) -> Result<(SpaceModel, ArtifactManifest)> {
    let m = open_artifact(ws, EMBEDDINGS, expect)?;
    let dir = ws.dir(EMBEDDINGS);
    let info: SpaceInfo = read_json(&dir.join("space.json"))?;
    let space = SpaceModel {
        name: info.name,
        tracks: EmbeddingTable::load(dir.join("tracks.emb"))?,
        users: EmbeddingTable::load(dir.join("users.emb"))?,
        null_users: info.null_users,
    };
    for (what, t) in [("track", &space.tracks), ("user", &space.users)] {
        if t.dim() != info.dim {
            return Err(Error::Format(format!(
                "{what} vectors have dimension {}, space.json says {}",
                t.dim(),
                info.dim
            )));
        }
    }
    Ok((space, m))
}

pub fn build_features(ws: &Workspace, cfg: &PipelineConfig) -> Result<ArtifactManifest> {
    cfg.validate()?;
    let (bundle, data) = load_data(ws)?;
    let expect = Expect {
        config: Some(&cfg.fingerprint()),
        data: Some(&data),
    };
    let (space, space_m) = load_space(ws, expect)?;
    let model = fit_features(&bundle, &space, cfg)?;
    let (warm, cold) = feature_tables(&bundle, &space, &model)?;
    let popular = PopularityList::from_log(&bundle.log, &bundle.catalog, &bundle.universe.warm);

    let mut out = Output::create(ws.dir(FEATURES))?;
    out.write("channels.txt", |w| model.spec.write_manifest(w))?;
    out.write("groups.txt", |w| model.groups.write_text(w))?;
    out.table("artists.emb", &model.entities.artists)?;
    out.table("albums.emb", &model.entities.albums)?;
    out.table("playlists.emb", &model.entities.playlists)?;
    out.table("warm.emb", &warm)?;
    out.table("cold.emb", &cold)?;
    out.write("popular.txt", |w| {
        for t in popular.tracks() {
            writeln!(w, "{t}")?;
        }
        Ok(())
    })?;
    out.finish(
        FEATURES,
        cfg.seed,
        cfg.fingerprint(),
        inputs([(DATA, data), (EMBEDDINGS, space_m.identity())]),
    )
}

/// Channel layout, entity vectors and demographic groups. Track vectors come from the
/// embeddings artifact.
pub fn load_feature_model(ws: &Workspace, tracks: EmbeddingTable, expect: Expect<'_>) -> Result<(FeatureModel, ArtifactManifest)> {
    let m = open_artifact(ws, FEATURES, expect)?;
    let dir = ws.dir(FEATURES);
    let spec = ChannelSpec::parse_manifest(open_text(&dir.join("channels.txt"))?)?;
    let groups = GroupEmbeddings::read_text(open_text(&dir.join("groups.txt"))?)?;
    let entities = EntityEmbeddings {
        tracks,
        artists: EmbeddingTable::load(dir.join("artists.emb"))?,
        albums: EmbeddingTable::load(dir.join("albums.emb"))?,
        playlists: EmbeddingTable::load(dir.join("playlists.emb"))?,
    };
    let dim = entities.tracks.dim();
    for t in [&entities.artists, &entities.albums, &entities.playlists] {
        if !t.is_empty() && t.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: t.dim() });
        }
    }
    if spec.dim != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: spec.dim });
    }
    if groups.dim != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: groups.dim });
    }
    Ok((FeatureModel { spec, entities, groups }, m))
}

/// Warm and cold input vectors as built by `build-features`.
pub fn load_feature_tables(ws: &Workspace, expect: Expect<'_>) -> Result<(EmbeddingTable, EmbeddingTable, ArtifactManifest)> {
    let m = open_artifact(ws, FEATURES, expect)?;
    let dir = ws.dir(FEATURES);
    Ok((
        EmbeddingTable::load(dir.join("warm.emb"))?,
        EmbeddingTable::load(dir.join("cold.emb"))?,
        m,
    ))
}

pub fn load_popular(ws: &Workspace) -> Result<PopularityList> {
    let path = ws.dir(FEATURES).join("popular.txt");
    let mut tracks = Vec::new();
    for (i, line) in open_text(&path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        let id = line
            .trim()
            .parse::<u64>()
            .map_err(|e| Error::parse(path.display().to_string(), i + 1, e.to_string()))?;
        tracks.push(TrackId(id));
    }
    Ok(PopularityList::from_tracks(tracks))
}

pub fn run_segment(ws: &Workspace, cfg: &PipelineConfig) -> Result<ArtifactManifest> {
    cfg.validate()?;
    let (bundle, data) = load_data(ws)?;
    let expect = Expect {
        config: Some(&cfg.fingerprint()),
        data: Some(&data),
    };
    let (space, space_m) = load_space(ws, expect)?;
    let seg = segment(&bundle, &space, cfg, cfg.seed)?;
    let mut out = Output::create(ws.dir(SEGMENTS))?;
    let path = out.path("segmentation.bin");
    seg.save(path)?;
    out.write("segments.txt", |w| seg.write_text(w))?;
    out.finish(
        SEGMENTS,
        cfg.seed,
        cfg.fingerprint(),
        inputs([(DATA, data), (EMBEDDINGS, space_m.identity())]),
    )
}

pub fn load_segmentation(ws: &Workspace, expect: Expect<'_>) -> Result<(Segmentation, ArtifactManifest)> {
    let m = open_artifact(ws, SEGMENTS, expect)?;
    Ok((Segmentation::load(ws.dir(SEGMENTS).join("segmentation.bin"))?, m))
}

pub fn train_regressor(ws: &Workspace, cfg: &PipelineConfig) -> Result<ArtifactManifest> {
    cfg.validate()?;
    let data = data_fingerprint(ws)?;
    let config = cfg.fingerprint();
    let expect = Expect {
        config: Some(&config),
        data: Some(&data),
    };
    let (space, space_m) = load_space(ws, expect)?;
    let (warm, cold, features_m) = load_feature_tables(ws, expect)?;
    let outcome = fit_regressor(&warm, &space, cfg, cfg.seed)?;
    let predicted = predict_embeddings(&outcome.model, &cold)?;
    let mut out = Output::create(ws.dir(REGRESSOR))?;
    let path = out.path("model.bin");
    outcome.model.save(path)?;
    out.write("loss.csv", |w| write_loss_csv(&outcome.history, w))?;
    out.table("cold.emb", &predicted)?;
    out.finish(
        REGRESSOR,
        cfg.seed,
        config,
        inputs([(EMBEDDINGS, space_m.identity()), (FEATURES, features_m.identity())]),
    )
}

pub fn load_regressor(ws: &Workspace, expect: Expect<'_>) -> Result<(RegressorModel, ArtifactManifest)> {
    let m = open_artifact(ws, REGRESSOR, expect)?;
    Ok((RegressorModel::load(ws.dir(REGRESSOR).join("model.bin"))?, m))
}

pub fn load_predicted(ws: &Workspace, expect: Expect<'_>) -> Result<EmbeddingTable> {
    open_artifact(ws, REGRESSOR, expect)?;
    EmbeddingTable::load(ws.dir(REGRESSOR).join("cold.emb"))
}

/// Writes one recommendation file per strategy for the cold users of `split`.
pub fn recommend(
    ws: &Workspace,
    cfg: &PipelineConfig,
    strategies: &[Strategy],
    split: Split,
) -> Result<Vec<ArtifactManifest>> {
    cfg.validate()?;
    let (bundle, data) = load_data(ws)?;
    let config = cfg.fingerprint();
    let expect = Expect {
        config: Some(&config),
        data: Some(&data),
    };
    let (space, space_m) = load_space(ws, expect)?;
    let (warm_features, cold_features, features_m) = load_feature_tables(ws, expect)?;
    let popular = load_popular(ws)?;
    let users = bundle.cold_users(split);
    let mut manifests = Vec::new();
    for &strategy in strategies {
        let mut used = vec![
            (DATA, data.clone()),
            (EMBEDDINGS, space_m.identity()),
            (FEATURES, features_m.identity()),
        ];
        let segmentation = if strategy == Strategy::SemiPersonalized {
            let (seg, m) = load_segmentation(ws, expect)?;
            used.push((SEGMENTS, m.identity()));
            Some(seg)
        } else {
            None
        };
        let cold_embeddings = if matches!(strategy, Strategy::SemiPersonalized | Strategy::FullPersonalized) {
            let m = open_artifact(ws, REGRESSOR, expect)?;
            used.push((REGRESSOR, m.identity()));
            Some(load_predicted(ws, expect)?)
        } else {
            None
        };
        let feature_clustering = if strategy == Strategy::FeatureClustering {
            let k = cfg.feature_segments.min(warm_features.len());
            let log = bundle.log.restrict(|u| bundle.universe.is_warm(u));
            Some(FeatureClustering::fit(
                &warm_features,
                &log,
                &bundle.catalog,
                &cfg.kmeans(k, cfg.seed),
                cfg.top_k,
            )?)
        } else {
            None
        };
        let ctx = RecommendContext {
            bundle: &bundle,
            space: &space,
            popular: &popular,
            cold_features: &cold_features,
            segmentation: segmentation.as_ref(),
            cold_embeddings: cold_embeddings.as_ref(),
            feature_clustering: feature_clustering.as_ref(),
        };
        let recs = recommend_users(strategy, &users, &ctx, cfg.top_k)?;
        let artifact = recommendation_artifact(strategy);
        let mut out = Output::create(ws.dir(&artifact))?;
        out.write(RECOMMENDATIONS_FILE, |w| {
            for r in &recs {
                r.write_record(&mut *w)?;
            }
            Ok(())
        })?;
        log::info!("{strategy}: {} recommendations for {} users", recs.len(), split.as_str());
        manifests.push(out.finish(&artifact, cfg.seed, config.clone(), inputs(used))?);
    }
    Ok(manifests)
}

pub fn load_recommendations(ws: &Workspace, strategy: Strategy, expect: Expect<'_>) -> Result<(Vec<Recommendation>, ArtifactManifest)> {
    let artifact = recommendation_artifact(strategy);
    let m = open_artifact(ws, &artifact, expect)?;
    let path = ws.dir(&artifact).join(RECOMMENDATIONS_FILE);
    let mut recs = Vec::new();
    for (i, line) in open_text(&path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        let r = Recommendation::parse_record(&line).map_err(|reason| Error::parse(path.display().to_string(), i + 1, reason))?;
        if r.strategy != strategy {
            return Err(Error::parse(
                path.display().to_string(),
                i + 1,
                format!("strategy {} in the {strategy} file", r.strategy),
            ));
        }
        recs.push(r);
    }
    Ok((recs, m))
}

/// Reports, activity breakdowns and popularity histograms of one evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub split: Split,
    pub seeds: Vec<u64>,
    pub reports: Vec<EvalReport>,
    pub breakdowns: BTreeMap<Strategy, Vec<BreakdownRow>>,
    pub histograms: BTreeMap<Strategy, Vec<HistogramBucket>>,
}

#[derive(Serialize)]
struct EvaluationSettings<'a> {
    pipeline: &'a str,
    k: usize,
    split: Split,
    seeds: &'a [u64],
    from_artifacts: bool,
}

/// Scores recommendations at cutoff `k`.
///
/// With `seeds = None` the recommendation artifacts are scored as written; their lists
/// must hold at least `k` tracks. With `Some(n)` every seed-dependent stage is rerun in
/// memory for seeds `cfg.seed..cfg.seed + n` with lists of length `k`, and only the
/// dataset is read from disk.
pub fn evaluate(
    ws: &Workspace,
    cfg: &PipelineConfig,
    strategies: &[Strategy],
    k: usize,
    split: Split,
    seeds: Option<usize>,
) -> Result<EvaluationSummary> {
    cfg.validate()?;
    if k == 0 {
        return Err(Error::InvalidConfig("k must be >= 1".into()));
    }
    let (bundle, data) = load_data(ws)?;
    let config = cfg.fingerprint();
    let mut used = vec![(DATA.to_string(), data.clone())];
    let summary = match seeds {
        Some(n) => {
            if n == 0 {
                return Err(Error::InvalidConfig("need at least one seed".into()));
            }
            let seeds: Vec<u64> = (cfg.seed..cfg.seed + n as u64).collect();
            let run_cfg = PipelineConfig {
                top_k: k,
                ..cfg.clone()
            };
            let out = run_offline_experiment(&bundle, &run_cfg, strategies, &seeds, split)?;
            EvaluationSummary {
                split,
                seeds,
                reports: out.reports,
                breakdowns: out.breakdowns.into_iter().collect(),
                histograms: out.histograms.into_iter().collect(),
            }
        }
        None => {
            let expect = Expect {
                config: Some(&config),
                data: Some(&data),
            };
            let (space, _) = load_space(ws, expect)?;
            let eligible: BTreeSet<UserId> = bundle.cold_users(split).into_iter().collect();
            let mut summary = EvaluationSummary {
                split,
                seeds: vec![cfg.seed],
                reports: Vec::new(),
                breakdowns: BTreeMap::new(),
                histograms: BTreeMap::new(),
            };
            for &strategy in strategies {
                let (recs, m) = load_recommendations(ws, strategy, expect)?;
                used.push((recommendation_artifact(strategy), m.identity()));
                let need = k.min(bundle.catalog.len());
                if let Some(short) = recs.iter().find(|r| r.len() < need) {
                    return Err(Error::InvalidConfig(format!(
                        "{strategy} lists hold {} tracks, fewer than k = {k}; rerun `coldstart recommend --top-k {k}`",
                        short.len()
                    )));
                }
                if let Some(r) = recs.iter().find(|r| !eligible.contains(&r.user)) {
                    return Err(Error::Lineage(format!(
                        "{strategy} recommendations include user {}, not a {} user",
                        r.user,
                        split.as_str()
                    )));
                }
                let users: Vec<UserId> = recs.iter().map(|r| r.user).collect();
                let truth = bundle.evaluation_truth(&users);
                let report = run_experiment(strategy, &space.name, &[cfg.seed], k, &truth, &config, |_| Ok(recs.clone()))?;
                let cut: Vec<Recommendation> = recs
                    .iter()
                    .filter(|r| truth.get(r.user).is_some())
                    .map(|r| Recommendation {
                        items: r.items[..need.min(r.len())].to_vec(),
                        ..r.clone()
                    })
                    .collect();
                summary.breakdowns.insert(
                    strategy,
                    breakdown_by_interaction(&report.per_user, &bundle.log, &bundle.universe, &default_bins()),
                );
                summary
                    .histograms
                    .insert(strategy, popularity_distribution(&cut, &bundle.catalog, HISTOGRAM_BUCKET)?);
                summary.reports.push(report);
            }
            summary
        }
    };
    let settings = fingerprint_json(&EvaluationSettings {
        pipeline: &config,
        k,
        split,
        seeds: &summary.seeds,
        from_artifacts: seeds.is_none(),
    });
    let mut out = Output::create(ws.dir(EVALUATION))?;
    out.json(SUMMARY_FILE, &summary)?;
    out.write("metrics.csv", |w| write_report_csv(&summary.reports, w))?;
    out.finish(
        EVALUATION,
        cfg.seed,
        settings,
        used.into_iter().collect(),
    )?;
    Ok(summary)
}

/// Renders the latest evaluation as a table plus per-strategy CSVs and returns the
/// table text.
pub fn report(ws: &Workspace) -> Result<String> {
    let m = open_artifact(ws, EVALUATION, Expect::default())?;
    let summary: EvaluationSummary = read_json(&ws.dir(EVALUATION).join(SUMMARY_FILE))?;
    let mut table = Vec::new();
    write_report_table(&summary.reports, &mut table).expect("in-memory write");
    let mut out = Output::create(ws.dir(REPORT))?;
    out.write("table.txt", |w| w.write_all(&table))?;
    out.write("metrics.csv", |w| write_report_csv(&summary.reports, w))?;
    for (strategy, rows) in &summary.breakdowns {
        out.write(&format!("breakdown-{strategy}.csv"), |w| write_breakdown_csv(rows, w))?;
    }
    for (strategy, buckets) in &summary.histograms {
        out.write(&format!("popularity-{strategy}.csv"), |w| write_histogram_csv(buckets, w))?;
    }
    out.finish(REPORT, m.seed, m.config.clone(), inputs([(EVALUATION, m.identity())]))?;
    Ok(String::from_utf8(table).expect("utf-8 table"))
}
