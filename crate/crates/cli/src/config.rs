//! Run configuration: defaults, then the JSON config file, then flags.

use std::path::{Path, PathBuf};

use clap::Args;
use imu_align::alignment::VisionConfig;
use imu_align::data::{PairedSample, SplitPart, SplitPolicy, VisionRef};
use imu_align::encoders::VisionStubConfig;
use imu_align::evaluation::{CombinationWeights, ProbeConfig, ReportConfig, TsneConfig};
use imu_align::{LossConfig, ModelConfig, SynthConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// File name of the resolved configuration written next to every output.
pub const CONFIG_FILE: &str = "config.json";

/// Seed of the frozen resampler and vision stub. Kept apart from the run
/// seed so that every run aligns to the same fixed target space.
pub const FROZEN_SEED: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    #[default]
    Synth,
    Cache,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub source: DataSource,
    pub synth: SynthConfig,
    /// Directory written by `preprocess` or `synth`.
    pub cache_dir: Option<PathBuf>,
    /// Class count for cached data (synthetic data uses `synth.n_classes`).
    pub n_classes: Option<usize>,
    pub split_ratios: [f64; 3],
    pub split_policy: SplitPolicy,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synth,
            synth: SynthConfig::default(),
            cache_dir: None,
            n_classes: None,
            split_ratios: [0.7, 0.15, 0.15],
            split_policy: SplitPolicy::BySubject,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub retrieval_batch: usize,
    pub weights: Vec<f64>,
    /// Weights used by the `combine` command.
    pub combine: CombinationWeights,
    pub probe: ProbeConfig,
    /// Probe on encoder outputs instead of resampled embeddings.
    pub raw_encoder: bool,
    pub tsne: TsneConfig,
    /// Fit one t-SNE map over both modalities.
    pub joint: bool,
    pub part: SplitPart,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let report = ReportConfig::default();
        Self {
            retrieval_batch: report.retrieval_batch,
            weights: report.weights,
            combine: CombinationWeights {
                w_vision: 0.8,
                w_imu: 0.2,
            },
            probe: report.probe,
            raw_encoder: false,
            tsne: TsneConfig::default(),
            joint: true,
            part: SplitPart::Test,
        }
    }
}

impl EvalConfig {
    pub fn report(&self) -> ReportConfig {
        ReportConfig {
            retrieval_batch: self.retrieval_batch,
            weights: self.weights.clone(),
            probe: self.probe.clone(),
        }
    }
}

/// Fully resolved configuration of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataConfig,
    /// Filled from the data when absent.
    pub model: Option<ModelConfig>,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            model: None,
            loss: LossConfig::default(),
            train: TrainConfig {
                batch_size: 64,
                lr: 3e-3,
                max_epochs: 50,
                ..TrainConfig::default()
            },
            eval: EvalConfig::default(),
        }
    }
}

/// Flags shared by all commands.
#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// JSON config file (any subset of the run configuration).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed for every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output (run) directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker thread cap (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

/// Per-command overrides applied after the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Training batch size (also the retrieval batch).
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Contrastive temperature.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Weight of the supervised classification term.
    #[arg(long)]
    pub lambda_sup: Option<f64>,
    /// Use only the IMU-to-vision direction of the contrastive loss.
    #[arg(long)]
    pub single_direction: bool,
    /// Peak learning rate of the cosine schedule.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Validation rounds without improvement before stopping.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Maximum number of epochs.
    #[arg(long, alias = "max-epochs")]
    pub epochs: Option<usize>,
    /// Combination weights as `w_vision,w_imu`.
    #[arg(long)]
    pub weights: Option<CombinationWeights>,
    /// t-SNE perplexity.
    #[arg(long)]
    pub perplexity: Option<f64>,
    /// One t-SNE map over both modalities.
    #[arg(long, conflicts_with = "separate")]
    pub joint: bool,
    /// One t-SNE map per modality.
    #[arg(long)]
    pub separate: bool,
    /// Use mean-pooled encoder outputs instead of resampled embeddings.
    #[arg(long)]
    pub raw_encoder: bool,
    /// Train on synthetic data.
    #[arg(long, conflicts_with = "cache")]
    pub synth: bool,
    /// Train on a preprocessed cache directory.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Number of action classes.
    #[arg(long)]
    pub classes: Option<usize>,
    /// Number of synthetic pairs.
    #[arg(long)]
    pub pairs: Option<usize>,
    /// IMU-side synthetic noise.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Vision-side synthetic noise.
    #[arg(long)]
    pub vision_noise: Option<f64>,
    /// Dataset part for embed, combine and tsne.
    #[arg(long)]
    pub part: Option<SplitPart>,
}

fn read_json(path: &Path) -> CliResult<serde_json::Value> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Recursively overlays `top` onto `base`.
fn merge(base: &mut serde_json::Value, top: serde_json::Value) {
    match (base, top) {
        (serde_json::Value::Object(b), serde_json::Value::Object(t)) => {
            for (k, v) in t {
                merge(b.entry(k).or_insert(serde_json::Value::Null), v);
            }
        }
        (b, t) => *b = t,
    }
}

/// Reads `path` on top of `base`; unknown sections are rejected by serde
/// only where the structs deny them, so typos surface as parse errors.
pub fn load_over(base: &RunConfig, path: &Path) -> CliResult<RunConfig> {
    let mut v = serde_json::to_value(base).expect("config serializes");
    merge(&mut v, read_json(path)?);
    serde_json::from_value(v).map_err(|e| CliError::Config {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

impl RunConfig {
    /// Defaults, then `base_file` (a saved run config), then `--config`,
    /// then flags.
    pub fn resolve(
        base_file: Option<&Path>,
        global: &GlobalArgs,
        o: &Overrides,
    ) -> CliResult<Self> {
        let mut cfg = RunConfig::default();
        if let Some(p) = base_file {
            cfg = load_over(&cfg, p)?;
        }
        if let Some(p) = &global.config {
            cfg = load_over(&cfg, p)?;
        }
        if let Some(s) = global.seed {
            cfg.seed = s;
        }
        if let Some(out) = &global.out {
            cfg.out = out.clone();
        }
        cfg.apply(o);
        cfg.propagate_seed();
        Ok(cfg)
    }

    fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.batch_size {
            self.train.batch_size = v;
            self.eval.retrieval_batch = v;
        }
        if let Some(v) = o.tau {
            self.loss.tau = v;
        }
        if let Some(v) = o.lambda_sup {
            self.loss.lambda_sup = v;
        }
        if o.single_direction {
            self.loss.symmetric = false;
        }
        if let Some(v) = o.lr {
            self.train.lr = v;
        }
        if let Some(v) = o.patience {
            self.train.patience = v;
        }
        if let Some(v) = o.epochs {
            self.train.max_epochs = v;
        }
        if let Some(w) = o.weights {
            self.eval.combine = w;
        }
        if let Some(v) = o.perplexity {
            self.eval.tsne.perplexity = v;
        }
        if o.joint {
            self.eval.joint = true;
        }
        if o.separate {
            self.eval.joint = false;
        }
        if o.raw_encoder {
            self.eval.raw_encoder = true;
        }
        if o.synth {
            self.data.source = DataSource::Synth;
        }
        if let Some(dir) = &o.cache {
            self.data.source = DataSource::Cache;
            self.data.cache_dir = Some(dir.clone());
        }
        if let Some(v) = o.classes {
            self.data.synth.n_classes = v;
            self.data.n_classes = Some(v);
        }
        if let Some(v) = o.pairs {
            self.data.synth.n_pairs = v;
        }
        if let Some(v) = o.noise {
            self.data.synth.noise_sigma = v;
        }
        if let Some(v) = o.vision_noise {
            self.data.synth.vision_noise_sigma = v;
        }
        if let Some(p) = o.part {
            self.eval.part = p;
        }
    }

    /// Every stochastic component draws from the root seed.
    fn propagate_seed(&mut self) {
        self.data.synth.seed = self.seed;
        self.train.seed = self.seed;
        self.eval.probe.seed = self.seed;
        self.eval.tsne.seed = self.seed;
    }

    pub fn n_classes(&self) -> usize {
        match self.data.source {
            DataSource::Synth => self.data.synth.n_classes,
            DataSource::Cache => self
                .data
                .n_classes
                .unwrap_or(imu_align::data::N_ACTION_CLASSES),
        }
    }

    /// Fills the model section from the data when it was not configured.
    pub fn resolve_model(&mut self, samples: &[PairedSample]) -> CliResult<ModelConfig> {
        if let Some(m) = &self.model {
            return Ok(m.clone());
        }
        let n_classes = self.n_classes();
        let mut m = ModelConfig::desk(n_classes, self.data.synth.vision_feature_dim, FROZEN_SEED);
        match samples.first().map(|s| &s.vision) {
            Some(VisionRef::Features(f)) => {
                m.vision = VisionConfig::Stub(VisionStubConfig {
                    feature_dim: f.dim(),
                    d_model: m.encoder.d_model,
                    seed: FROZEN_SEED,
                });
            }
            Some(VisionRef::Tokens(_) | VisionRef::EmbeddingFile(_)) => {
                m.vision = VisionConfig::Precomputed {
                    d_model: m.encoder.d_model,
                };
            }
            Some(VisionRef::Frame { .. }) => {
                return Err(imu_align::Error::InvalidArgument(
                    "frame references need precomputed vision embeddings before training".into(),
                )
                .into())
            }
            None => return Err(imu_align::Error::InvalidArgument("dataset is empty".into()).into()),
        }
        self.model = Some(m.clone());
        Ok(m)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.loss.validate()?;
        self.train.validate()?;
        self.data.synth.validate()?;
        self.eval.combine.validate()?;
        if self.eval.retrieval_batch < 2 {
            return Err(
                imu_align::Error::InvalidArgument("retrieval batch must be >= 2".into()).into(),
            );
        }
        for &w in &self.eval.weights {
            CombinationWeights::vision_share(w)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn save(&self, dir: &Path) -> CliResult<()> {
        let path = dir.join(CONFIG_FILE);
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))
    }
}
