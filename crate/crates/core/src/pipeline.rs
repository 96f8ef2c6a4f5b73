//! Stage orchestration with content-hashed caching.
//!
//! Every stage reads its inputs from and writes its outputs to the output
//! directory. A stage's cache key hashes its name, the configuration it
//! depends on and the bytes of every input file; it reruns only when that
//! key changes, an output is missing or altered, or `force` is set.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baseline::{check_dense, leader_cluster, Cluster, LeaderParams};
use crate::corpus::{
    create_dir, load_corpus, load_gold, read_json, read_segments, write_corpus, write_gold, write_json,
    write_segments, Corpus, Segment, GOLD_FILE, MANIFEST_FILE,
};
use crate::embednet::{
    embed_all, load_params, read_embeddings, save_params, train, training_set, write_embeddings, write_loss_curve,
    NetArch, NetworkParams, TrainConfig, TrainMode,
};
use crate::error::{Error, Result};
use crate::eval::{render_table, report, EvalConfig, EvalReport};
use crate::mining::{sample_manifest, select_contrasting_pairs, select_pure_clusters, MiningConfig, PairManifest};
use crate::recluster::{hdbscan, HdbscanParams};
use crate::rng::derive_seed;
use crate::seqmatch::{discover_segments, DiscoveryConfig};
use crate::synthgen::{generate, SynthConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum System {
    Baseline,
    Siamese,
    Triplet,
}

impl System {
    fn train_mode(self) -> Option<TrainMode> {
        match self {
            System::Baseline => None,
            System::Siamese => Some(TrainMode::Siamese),
            System::Triplet => Some(TrainMode::Triplet),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extraction {
    Eom,
    Hybrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub out: PathBuf,
    /// Existing corpus directory; when unset the synth stage writes one.
    pub corpus: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            out: PathBuf::from("out"),
            corpus: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Root seed; every stage derives its own seed from it, overriding the
    /// `seed` fields of `synth` and `train`.
    pub seed: u64,
    pub system: System,
    /// Ignored for the baseline system.
    pub extraction: Extraction,
    pub synth: SynthConfig,
    pub discovery: DiscoveryConfig,
    pub leader: LeaderParams,
    pub mining: MiningConfig,
    pub train: TrainConfig,
    pub hdbscan: HdbscanParams,
    pub eval: EvalConfig,
    pub paths: Paths,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            system: System::Triplet,
            extraction: Extraction::Hybrid,
            synth: SynthConfig::default(),
            discovery: DiscoveryConfig::default(),
            leader: LeaderParams::default(),
            mining: MiningConfig::default(),
            train: TrainConfig::default(),
            hdbscan: HdbscanParams::default(),
            eval: EvalConfig::default(),
            paths: Paths::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    /// Name of the configured system variant, e.g. `triplet-hybrid`.
    pub fn variant(&self) -> String {
        match self.system {
            System::Baseline => "baseline".into(),
            s => format!("{}-{}", s.train_mode().unwrap().name(), extraction_name(self.extraction)),
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            seed: derive_seed(self.seed, "synth"),
            ..self.synth.clone()
        }
    }

    fn train_config(&self, mode: TrainMode) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, &format!("train-{}", mode.name())),
            ..self.train.clone()
        }
    }

    fn hdbscan_params(&self) -> HdbscanParams {
        let mut p = self.hdbscan.clone();
        if self.extraction == Extraction::Eom {
            p.cluster_selection_epsilon = 0.0;
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        self.discovery.scoring.validate()?;
        self.leader.validate()?;
        self.mining.thresholds.validate()?;
        if self.system != System::Baseline {
            self.train.validate()?;
            self.hdbscan.validate()?;
        }
        if self.paths.corpus.is_none() {
            self.synth.validate()?;
        }
        Ok(())
    }
}

fn extraction_name(e: Extraction) -> &'static str {
    match e {
        Extraction::Eom => "eom",
        Extraction::Hybrid => "hybrid",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Synth,
    Discover,
    Baseline,
    Mine,
    Train,
    Embed,
    Recluster,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Synth,
        Stage::Discover,
        Stage::Baseline,
        Stage::Mine,
        Stage::Train,
        Stage::Embed,
        Stage::Recluster,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Discover => "discover",
            Stage::Baseline => "baseline",
            Stage::Mine => "mine",
            Stage::Train => "train",
            Stage::Embed => "embed",
            Stage::Recluster => "recluster",
            Stage::Evaluate => "evaluate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage '{s}'")))
    }
}

/// Where every artifact lives.
#[derive(Debug, Clone)]
pub struct Layout {
    pub out: PathBuf,
    pub corpus: PathBuf,
}

impl Layout {
    pub fn new(config: &PipelineConfig) -> Self {
        let out = config.paths.out.clone();
        let corpus = config.paths.corpus.clone().unwrap_or_else(|| out.join("corpus"));
        Layout { out, corpus }
    }

    pub fn segments(&self) -> PathBuf {
        self.out.join("segments.jsonl")
    }

    pub fn baseline_clusters(&self) -> PathBuf {
        self.out.join("clusters_baseline.json")
    }

    pub fn mining_dir(&self) -> PathBuf {
        self.out.join("mining")
    }

    pub fn manifest(&self) -> PathBuf {
        self.mining_dir().join("manifest.json")
    }

    pub fn selection(&self) -> PathBuf {
        self.mining_dir().join("selection.json")
    }

    pub fn model_dir(&self, mode: TrainMode) -> PathBuf {
        self.out.join("models").join(mode.name())
    }

    pub fn params(&self, mode: TrainMode) -> PathBuf {
        self.model_dir(mode).join("params.bin")
    }

    pub fn loss_curve(&self, mode: TrainMode) -> PathBuf {
        self.model_dir(mode).join("loss.csv")
    }

    pub fn embeddings(&self, mode: TrainMode) -> PathBuf {
        self.model_dir(mode).join("embeddings.bin")
    }

    pub fn system_dir(&self, variant: &str) -> PathBuf {
        self.out.join("systems").join(variant)
    }

    pub fn final_clusters(&self, variant: &str) -> PathBuf {
        self.system_dir(variant).join("clusters_final.json")
    }

    pub fn report_json(&self, variant: &str) -> PathBuf {
        self.system_dir(variant).join("report.json")
    }

    pub fn report_txt(&self, variant: &str) -> PathBuf {
        self.system_dir(variant).join("report.txt")
    }

    fn stamp(&self, key: &str) -> PathBuf {
        self.out.join(".stamps").join(format!("{key}.json"))
    }
}

/// A reclustered cluster with its condensed-tree stability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalClusterRecord {
    #[serde(flatten)]
    pub cluster: Cluster,
    pub stability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalClusters {
    pub clusters: Vec<FinalClusterRecord>,
    pub noise: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningSelection {
    pub retained: Vec<crate::mining::RetainedCluster>,
    pub contrasting: Vec<crate::mining::ContrastingPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Stamp {
    key: String,
    outputs: BTreeMap<String, String>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

/// Corpus files: the manifest, gold (when present) and every utterance file.
fn corpus_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let manifest = dir.join(MANIFEST_FILE);
    if !manifest.is_file() {
        return Err(Error::MissingArtifact(format!("missing corpus: {} not found", manifest.display())));
    }
    #[derive(Deserialize)]
    struct Ids {
        utterances: Vec<String>,
    }
    let ids: Ids = read_json(&manifest)?;
    let mut files = vec![manifest];
    let gold = dir.join(GOLD_FILE);
    if gold.is_file() {
        files.push(gold);
    }
    for id in ids.utterances {
        files.push(dir.join(format!("{id}.feat")));
        files.push(dir.join(format!("{id}.sym")));
    }
    Ok(files)
}

fn require(path: &Path, what: &str, producer: Stage) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::MissingArtifact(format!(
            "missing {what}: {} not found (run the {producer} stage first)",
            path.display()
        )))
    }
}

/// Cache bookkeeping for one stage run.
struct Job {
    key: String,
    stamp_path: PathBuf,
}

impl Job {
    fn new(layout: &Layout, name: &str, config: &impl Serialize, inputs: &[PathBuf]) -> Result<Self> {
        let mut h = Sha256::new();
        h.update(name.as_bytes());
        h.update([0]);
        h.update(serde_json::to_vec(config).expect("config serializes"));
        for p in inputs {
            h.update([0]);
            h.update(p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
            h.update(hash_file(p)?);
        }
        Ok(Job {
            key: hex(&h.finalize()),
            stamp_path: layout.stamp(name),
        })
    }

    fn is_fresh(&self) -> bool {
        let Ok(stamp) = read_json::<Stamp>(&self.stamp_path) else {
            return false;
        };
        stamp.key == self.key
            && stamp
                .outputs
                .iter()
                .all(|(p, h)| hash_file(Path::new(p)).is_ok_and(|actual| &actual == h))
    }

    fn finish(self, outputs: &[PathBuf]) -> Result<()> {
        let mut map = BTreeMap::new();
        for p in outputs {
            map.insert(p.to_string_lossy().into_owned(), hash_file(p)?);
        }
        if let Some(parent) = self.stamp_path.parent() {
            create_dir(parent)?;
        }
        write_json(
            &self.stamp_path,
            &Stamp {
                key: self.key,
                outputs: map,
            },
        )
    }
}

/// Whether a stage ran or was already up to date.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageStatus {
    Ran,
    UpToDate,
}

fn load_segments(layout: &Layout) -> Result<Vec<Segment>> {
    let path = layout.segments();
    require(&path, "segments", Stage::Discover)?;
    let segments = read_segments(&path)?;
    check_dense(&segments)?;
    Ok(segments)
}

fn require_mode(config: &PipelineConfig, stage: Stage) -> Result<TrainMode> {
    config.system.train_mode().ok_or_else(|| {
        Error::Config(format!("the {stage} stage does not apply to the baseline system"))
    })
}

/// Runs one stage of the configured system. Upstream artifacts must exist.
/// Deferred stage body returning the files it wrote.
type StageWork<'a> = Box<dyn FnOnce() -> Result<Vec<PathBuf>> + 'a>;

pub fn run_stage(stage: Stage, config: &PipelineConfig, force: bool) -> Result<StageStatus> {
    config.validate()?;
    let layout = Layout::new(config);
    create_dir(&layout.out)?;
    let variant = config.variant();
    let (job, run): (Job, StageWork) = match stage {
        Stage::Synth => {
            if config.paths.corpus.is_some() {
                // external corpus: nothing to produce, just confirm it is readable
                let files = corpus_files(&layout.corpus)?;
                load_corpus(&layout.corpus)?;
                log::info!("using corpus at {} ({} files)", layout.corpus.display(), files.len());
                return Ok(StageStatus::UpToDate);
            }
            let synth = config.synth_config();
            let job = Job::new(&layout, "synth", &synth, &[])?;
            let dir = layout.corpus.clone();
            (
                job,
                Box::new(move || {
                    let (corpus, gold) = generate(&synth)?;
                    write_corpus(&corpus, &dir)?;
                    write_gold(&gold, &dir)?;
                    corpus_files(&dir)
                }),
            )
        }
        Stage::Discover => {
            let inputs = corpus_files(&layout.corpus)?;
            let job = Job::new(&layout, "discover", &config.discovery, &inputs)?;
            let (dir, out, cfg) = (layout.corpus.clone(), layout.segments(), config.discovery.clone());
            (
                job,
                Box::new(move || {
                    let corpus = load_corpus(&dir)?;
                    let segments = discover_segments(&corpus, &cfg)?;
                    write_segments(&segments, &out)?;
                    Ok(vec![out])
                }),
            )
        }
        Stage::Baseline => {
            require(&layout.segments(), "segments", Stage::Discover)?;
            let job = Job::new(&layout, "baseline", &config.leader, &[layout.segments()])?;
            let (l, params) = (layout.clone(), config.leader.clone());
            (
                job,
                Box::new(move || {
                    let segments = load_segments(&l)?;
                    let out = leader_cluster(&segments, &params)?;
                    log::info!(
                        "leader clustering: {} clusters, {} ambiguous dropped",
                        out.clusters.len(),
                        out.dropped.len()
                    );
                    write_json(&l.baseline_clusters(), &out.clusters)?;
                    Ok(vec![l.baseline_clusters()])
                }),
            )
        }
        Stage::Mine => {
            require(&layout.segments(), "segments", Stage::Discover)?;
            require(&layout.baseline_clusters(), "baseline clusters", Stage::Baseline)?;
            #[derive(Serialize)]
            struct Key<'a> {
                mining: &'a MiningConfig,
                seed: u64,
            }
            let seed = derive_seed(config.seed, "mine");
            let job = Job::new(
                &layout,
                "mine",
                &Key {
                    mining: &config.mining,
                    seed,
                },
                &[layout.segments(), layout.baseline_clusters()],
            )?;
            let (l, cfg) = (layout.clone(), config.mining.clone());
            (job, Box::new(move || mine(&l, &cfg, seed)))
        }
        Stage::Train => {
            let mode = require_mode(config, stage)?;
            require(&layout.manifest(), "training manifest", Stage::Mine)?;
            let mut inputs = vec![layout.manifest(), layout.segments()];
            inputs.extend(corpus_files(&layout.corpus)?);
            let cfg = config.train_config(mode);
            let init_seed = derive_seed(config.seed, &format!("init-{}", mode.name()));
            #[derive(Serialize)]
            struct Key<'a> {
                mode: TrainMode,
                train: &'a TrainConfig,
                init_seed: u64,
            }
            let job = Job::new(
                &layout,
                &format!("train-{}", mode.name()),
                &Key {
                    mode,
                    train: &cfg,
                    init_seed,
                },
                &inputs,
            )?;
            let l = layout.clone();
            (job, Box::new(move || train_stage(&l, mode, &cfg, init_seed)))
        }
        Stage::Embed => {
            let mode = require_mode(config, stage)?;
            require(&layout.params(mode), "trained parameters", Stage::Train)?;
            let mut inputs = vec![layout.params(mode), layout.segments()];
            inputs.extend(corpus_files(&layout.corpus)?);
            let job = Job::new(&layout, &format!("embed-{}", mode.name()), &mode, &inputs)?;
            let l = layout.clone();
            (
                job,
                Box::new(move || {
                    let params = load_params(&l.params(mode))?;
                    let segments = load_segments(&l)?;
                    let corpus = load_corpus(&l.corpus)?;
                    let rows = embed_all(&params, &segments, &corpus)?;
                    write_embeddings(&rows, &l.embeddings(mode))?;
                    Ok(vec![l.embeddings(mode)])
                }),
            )
        }
        Stage::Recluster => {
            let mode = require_mode(config, stage)?;
            require(&layout.embeddings(mode), "embeddings", Stage::Embed)?;
            require(&layout.segments(), "segments", Stage::Discover)?;
            let params = config.hdbscan_params();
            let job = Job::new(
                &layout,
                &format!("recluster-{variant}"),
                &params,
                &[layout.embeddings(mode), layout.segments()],
            )?;
            let (l, v) = (layout.clone(), variant.clone());
            (job, Box::new(move || recluster_stage(&l, mode, &v, &params)))
        }
        Stage::Evaluate => {
            let clusters = match config.system {
                System::Baseline => {
                    require(&layout.baseline_clusters(), "baseline clusters", Stage::Baseline)?;
                    layout.baseline_clusters()
                }
                _ => {
                    require(&layout.final_clusters(&variant), "final clusters", Stage::Recluster)?;
                    layout.final_clusters(&variant)
                }
            };
            require(&layout.segments(), "segments", Stage::Discover)?;
            let mut inputs = vec![clusters.clone(), layout.segments()];
            inputs.extend(corpus_files(&layout.corpus)?);
            let job = Job::new(&layout, &format!("evaluate-{variant}"), &config.eval, &inputs)?;
            let (l, v, cfg, system) = (layout.clone(), variant.clone(), config.eval.clone(), config.system);
            (
                job,
                Box::new(move || {
                    let clusters = match system {
                        System::Baseline => read_json::<Vec<Cluster>>(&clusters)?,
                        _ => read_json::<FinalClusters>(&clusters)?
                            .clusters
                            .into_iter()
                            .map(|r| r.cluster)
                            .collect(),
                    };
                    evaluate(&l, &v, &clusters, &cfg).map(|_| vec![l.report_json(&v), l.report_txt(&v)])
                }),
            )
        }
    };
    if !force && job.is_fresh() {
        log::info!("{stage}: up to date");
        return Ok(StageStatus::UpToDate);
    }
    log::info!("{stage}: running");
    let outputs = run()?;
    job.finish(&outputs)?;
    Ok(StageStatus::Ran)
}

fn mine(layout: &Layout, cfg: &MiningConfig, seed: u64) -> Result<Vec<PathBuf>> {
    let segments = load_segments(layout)?;
    let clusters: Vec<Cluster> = read_json(&layout.baseline_clusters())?;
    if clusters.iter().enumerate().any(|(i, c)| c.id != i) {
        return Err(Error::Config("baseline cluster ids must be dense".into()));
    }
    let retained = select_pure_clusters(&clusters, &segments, &cfg.thresholds, cfg.exclude_self);
    let contrasting = select_contrasting_pairs(&retained, &clusters, &segments, &cfg.thresholds);
    log::info!(
        "mining: {} of {} clusters retained, {} contrasting pairs",
        retained.len(),
        clusters.len(),
        contrasting.len()
    );
    let manifest: PairManifest =
        sample_manifest(&retained, &contrasting, &clusters, cfg.n_siamese, cfg.n_triplet, seed)?;
    create_dir(&layout.mining_dir())?;
    write_json(&layout.manifest(), &manifest)?;
    write_json(&layout.selection(), &MiningSelection { retained, contrasting })?;
    Ok(vec![layout.manifest(), layout.selection()])
}

fn train_stage(layout: &Layout, mode: TrainMode, cfg: &TrainConfig, init_seed: u64) -> Result<Vec<PathBuf>> {
    let manifest: PairManifest = read_json(&layout.manifest())?;
    let segments = load_segments(layout)?;
    let corpus = load_corpus(&layout.corpus)?;
    let (inputs, examples) = training_set(&manifest, mode, &segments, &corpus, cfg.l_max)?;
    log::info!("training {} net on {} examples", mode.name(), examples.len());
    let params = NetworkParams::init(NetArch::standard(cfg.l_max, corpus.feature_dim()), init_seed)?;
    let outcome = train(params, &inputs, &examples, cfg)?;
    create_dir(&layout.model_dir(mode))?;
    save_params(&outcome.params, &layout.params(mode))?;
    write_loss_curve(&outcome.loss_curve, &layout.loss_curve(mode))?;
    Ok(vec![layout.params(mode), layout.loss_curve(mode)])
}

fn recluster_stage(layout: &Layout, mode: TrainMode, variant: &str, params: &HdbscanParams) -> Result<Vec<PathBuf>> {
    let rows = read_embeddings(&layout.embeddings(mode))?;
    let segments = load_segments(layout)?;
    if rows.len() != segments.len() {
        return Err(Error::Shape(format!(
            "{} embeddings for {} segments; rerun the embed stage",
            rows.len(),
            segments.len()
        )));
    }
    let result = hdbscan(&rows, params)?;
    let clusters = result
        .clusters
        .into_iter()
        .enumerate()
        .map(|(id, c)| FinalClusterRecord {
            cluster: Cluster::new(id, c.members[0], c.members, &segments),
            stability: c.stability,
        })
        .collect();
    let out = FinalClusters {
        clusters,
        noise: result.noise,
    };
    create_dir(&layout.system_dir(variant))?;
    write_json(&layout.final_clusters(variant), &out)?;
    Ok(vec![layout.final_clusters(variant)])
}

fn evaluate(layout: &Layout, variant: &str, clusters: &[Cluster], cfg: &EvalConfig) -> Result<EvalReport> {
    let segments = load_segments(layout)?;
    let corpus: Corpus = load_corpus(&layout.corpus)?;
    let gold = load_gold(&layout.corpus)?.ok_or_else(|| {
        Error::MissingArtifact(format!(
            "missing gold annotation: {} not found",
            layout.corpus.join(GOLD_FILE).display()
        ))
    })?;
    let rep = report(variant, clusters, &segments, &corpus, &gold, cfg)?;
    create_dir(&layout.system_dir(variant))?;
    write_json(&layout.report_json(variant), &rep)?;
    fs::write(layout.report_txt(variant), render_table(std::slice::from_ref(&rep)))
        .map_err(|e| Error::io(layout.report_txt(variant), e))?;
    Ok(rep)
}

/// Stages the configured system needs, in order.
pub fn stages_for(system: System) -> Vec<Stage> {
    match system {
        System::Baseline => vec![Stage::Synth, Stage::Discover, Stage::Baseline, Stage::Evaluate],
        _ => Stage::ALL.to_vec(),
    }
}

/// Runs every stage of the configured system and returns its report.
pub fn run_all(config: &PipelineConfig, force: bool) -> Result<EvalReport> {
    for stage in stages_for(config.system) {
        run_stage(stage, config, force)?;
    }
    read_report(config)
}

pub fn read_report(config: &PipelineConfig) -> Result<EvalReport> {
    read_json(&Layout::new(config).report_json(&config.variant()))
}

/// Sizes the global worker pool; call before any parallel work.
pub fn configure_threads(n: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot size worker pool: {e}")))
}
