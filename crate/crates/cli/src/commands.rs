//! Command implementations. Each returns a JSON-serializable summary and
//! writes its artifacts under the run directory.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use imu_align::alignment::{gradcheck, train, TrainState};
use imu_align::data::{
    load_cache, preprocess_manifest, split_dataset, synth_generate, write_cache, CacheSummary,
    DatasetSplit, PairedSample, SplitPart,
};
use imu_align::evaluation::{
    batched_retrieval, combine_latents, combine_rows, evaluate, export_embeddings, probe_all,
    tsne_project, CombinationWeights, EmbeddingSet, EvalReport, Modality, ProbeReport,
    RetrievalReport, TsneConfig,
};
use imu_align::io::cmeb::{self, Sidecar};
use imu_align::resampler::pool;
use imu_align::{AlignmentModel, Checkpoint, EmbeddingStage};
use ndarray::{concatenate, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, RunConfig};
use crate::error::{CliError, CliResult};
use crate::log::note;

pub const CHECKPOINT_FILE: &str = "checkpoint.cmar";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const SPLITS_FILE: &str = "splits.json";
pub const REPORT_FILE: &str = "report.json";
pub const EMBEDDINGS_DIR: &str = "embeddings";

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("summary serializes");
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

/// `embeddings/{part}.{modality}[.raw].cmeb`
pub fn embedding_path(run: &Path, part: SplitPart, modality: Modality, raw: bool) -> PathBuf {
    let suffix = if raw { ".raw" } else { "" };
    run.join(EMBEDDINGS_DIR)
        .join(format!("{}.{}{suffix}.cmeb", part.name(), modality.name()))
}

pub fn load_samples(cfg: &RunConfig) -> CliResult<Vec<PairedSample>> {
    match cfg.data.source {
        DataSource::Synth => Ok(synth_generate(&cfg.data.synth)?),
        DataSource::Cache => {
            let dir = cfg.data.cache_dir.as_ref().ok_or_else(|| {
                imu_align::Error::InvalidArgument(
                    "cache source selected but no cache_dir given".into(),
                )
            })?;
            Ok(load_cache(dir, cfg.seed)?)
        }
    }
}

pub fn load_split(cfg: &RunConfig) -> CliResult<DatasetSplit> {
    Ok(split_dataset(
        load_samples(cfg)?,
        cfg.data.split_ratios,
        cfg.data.split_policy,
        cfg.seed,
    )?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitIds {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitIds {
    fn of(split: &DatasetSplit) -> Self {
        let ids = |p: SplitPart| split.part(p).iter().map(|s| s.id.clone()).collect();
        Self {
            train: ids(SplitPart::Train),
            val: ids(SplitPart::Val),
            test: ids(SplitPart::Test),
        }
    }
}

/// Preprocesses a manifest into a window cache.
pub fn cmd_preprocess(manifest: &Path, out: &Path, n_classes: usize) -> CliResult<CacheSummary> {
    let summary = preprocess_manifest(manifest, out, n_classes)?;
    note(&format!(
        "cached {} samples in {}",
        summary.n_samples,
        out.display()
    ));
    Ok(summary)
}

/// Writes a synthetic dataset in the cache layout.
pub fn cmd_synth(cfg: &RunConfig) -> CliResult<CacheSummary> {
    cfg.data.synth.validate()?;
    let samples = synth_generate(&cfg.data.synth)?;
    let summary = write_cache(&samples, &cfg.out)?;
    write_json(&cfg.out.join("synth_config.json"), &cfg.data.synth)?;
    note(&format!(
        "wrote {} synthetic pairs to {}",
        summary.n_samples,
        cfg.out.display()
    ));
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub out: PathBuf,
    pub state: TrainState,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub trainable_digest: String,
    pub frozen_digest: String,
}

/// Trains, then writes the checkpoint, the epoch log, the resolved config,
/// the split ids and normalized embeddings of every part.
pub fn cmd_train(mut cfg: RunConfig) -> CliResult<TrainSummary> {
    cfg.validate()?;
    let split = load_split(&cfg)?;
    let model_cfg = cfg.resolve_model(&split.train)?;
    let run = cfg.out.clone();
    create_dir(&run)?;
    cfg.save(&run)?;
    write_json(&run.join(SPLITS_FILE), &SplitIds::of(&split))?;

    let model = model_cfg.build(cfg.seed)?;
    let log_path = run.join(LOG_FILE);
    let mut log = fs::File::create(&log_path).map_err(|e| CliError::io(&log_path, e))?;
    let mut log_err = None;
    note(&format!(
        "training on {} pairs ({} val, {} test)",
        split.train.len(),
        split.val.len(),
        split.test.len()
    ));
    let outcome = train(
        &split.train,
        &split.val,
        model,
        &cfg.train,
        &cfg.loss,
        |r| {
            let line = serde_json::to_string(r).expect("record serializes");
            if let Err(e) = writeln!(log, "{line}") {
                log_err.get_or_insert(e);
            }
            note(&format!(
                "epoch {} train {:.4} val {:.4}",
                r.epoch,
                r.train_info_nce + cfg.loss.lambda_sup * r.train_sup,
                r.val_total
            ));
        },
    )?;
    if let Some(e) = log_err {
        return Err(CliError::io(&log_path, e));
    }

    let ckpt = Checkpoint {
        model_config: model_cfg,
        run_config: cfg.to_json(),
        model: outcome.model,
        state: outcome.state,
    };
    ckpt.save(&run.join(CHECKPOINT_FILE))?;
    export_all(&ckpt.model, &split, &run)?;
    note(&format!(
        "best epoch {} (val {:.4}), wrote {}",
        ckpt.state.best_epoch,
        ckpt.state.best_val_loss,
        run.display()
    ));
    Ok(TrainSummary {
        out: run,
        state: ckpt.state.clone(),
        n_train: split.train.len(),
        n_val: split.val.len(),
        n_test: split.test.len(),
        trainable_digest: ckpt.model.trainable_digest(),
        frozen_digest: ckpt.model.frozen_digest(),
    })
}

fn export_all(model: &AlignmentModel, split: &DatasetSplit, run: &Path) -> CliResult<()> {
    create_dir(&run.join(EMBEDDINGS_DIR))?;
    for part in SplitPart::ALL {
        for modality in [Modality::Video, Modality::Imu] {
            for (stage, raw) in [(model.stage, false), (EmbeddingStage::Encoder, true)] {
                let path = embedding_path(run, part, modality, raw);
                export_embeddings(model, split.part(part), modality, stage, true, &path)?;
            }
        }
    }
    Ok(())
}

/// Loads the checkpoint and the resolved config of a run.
fn open_checkpoint(run: &Path) -> CliResult<Checkpoint> {
    Ok(Checkpoint::load(&run.join(CHECKPOINT_FILE))?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedSummary {
    pub path: PathBuf,
    pub rows: usize,
    pub dim: usize,
}

/// Recomputes embeddings of one part from the checkpoint.
pub fn cmd_embed(cfg: &RunConfig, modality: Modality) -> CliResult<EmbedSummary> {
    let run = &cfg.out;
    let ckpt = open_checkpoint(run)?;
    let split = load_split(cfg)?;
    let raw = cfg.eval.raw_encoder;
    let stage = if raw {
        EmbeddingStage::Encoder
    } else {
        ckpt.model.stage
    };
    let path = embedding_path(run, cfg.eval.part, modality, raw);
    create_dir(&run.join(EMBEDDINGS_DIR))?;
    let m = export_embeddings(
        &ckpt.model,
        split.part(cfg.eval.part),
        modality,
        stage,
        true,
        &path,
    )?;
    note(&format!(
        "wrote {} x {} embeddings to {}",
        m.nrows(),
        m.ncols(),
        path.display()
    ));
    Ok(EmbedSummary {
        path,
        rows: m.nrows(),
        dim: m.ncols(),
    })
}

/// Reads the exported video and IMU embeddings of one part.
pub fn load_set(run: &Path, part: SplitPart, raw: bool) -> CliResult<EmbeddingSet> {
    let (video, vs) = cmeb::read_with_sidecar(&embedding_path(run, part, Modality::Video, raw))?;
    let (imu, is) = cmeb::read_with_sidecar(&embedding_path(run, part, Modality::Imu, raw))?;
    if vs.ids != is.ids {
        return Err(imu_align::Error::Shape(format!(
            "{} video and imu rows are not aligned",
            part.name()
        ))
        .into());
    }
    let set = EmbeddingSet {
        ids: vs.ids,
        labels: vs.labels,
        video,
        imu,
    };
    set.validate()?;
    Ok(set)
}

/// Artifacts `report` needs, relative to the run directory.
pub fn required_artifacts() -> Vec<PathBuf> {
    let mut out = vec![
        PathBuf::from(CHECKPOINT_FILE),
        PathBuf::from(crate::config::CONFIG_FILE),
    ];
    for part in [SplitPart::Train, SplitPart::Test] {
        for modality in [Modality::Video, Modality::Imu] {
            for raw in [false, true] {
                let p = embedding_path(Path::new(""), part, modality, raw);
                let sidecar = cmeb::sidecar_path(&p);
                out.push(p);
                out.push(sidecar);
            }
        }
    }
    out
}

fn check_artifacts(run: &Path) -> CliResult<()> {
    let missing: Vec<String> = required_artifacts()
        .into_iter()
        .filter(|p| !run.join(p).is_file())
        .map(|p| p.display().to_string())
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(CliError::MissingArtifacts {
            dir: run.to_path_buf(),
            missing,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSummary {
    pub raw_encoder: bool,
    pub probes: Vec<ProbeReport>,
}

pub fn cmd_probe(cfg: &RunConfig) -> CliResult<ProbeSummary> {
    let run = &cfg.out;
    let raw = cfg.eval.raw_encoder;
    let train = load_set(run, SplitPart::Train, raw)?;
    let test = load_set(run, SplitPart::Test, raw)?;
    let probes = probe_all(&train, &test, cfg.n_classes(), &cfg.eval.probe)?;
    let out = ProbeSummary {
        raw_encoder: raw,
        probes,
    };
    let name = if raw { "probe.raw.json" } else { "probe.json" };
    write_json(&run.join(name), &out)?;
    Ok(out)
}

pub fn cmd_retrieve(cfg: &RunConfig) -> CliResult<Vec<RetrievalReport>> {
    let set = load_set(&cfg.out, cfg.eval.part, false)?;
    let batch = cfg.eval.retrieval_batch.min(set.ids.len());
    let out = batched_retrieval(set.imu.view(), set.video.view(), batch)?.to_vec();
    write_json(&cfg.out.join("retrieval.json"), &out)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombineSummary {
    pub weights: CombinationWeights,
    pub latent: bool,
    pub path: PathBuf,
    pub to_vision_top1: f64,
    pub to_imu_top1: f64,
}

/// Combines the vision and IMU embeddings of one part. The latent mode
/// mixes the 64 resampled slots before pooling.
pub fn cmd_combine(cfg: &RunConfig, latent: bool) -> CliResult<CombineSummary> {
    let run = &cfg.out;
    let w = cfg.eval.combine;
    let set = load_set(run, cfg.eval.part, false)?;
    let combined = if latent {
        let ckpt = open_checkpoint(run)?;
        let split = load_split(cfg)?;
        latent_combination(&ckpt.model, split.part(cfg.eval.part), w)?
    } else {
        combine_rows(set.video.view(), set.imu.view(), w, true)?
    };
    let path = run.join(EMBEDDINGS_DIR).join(format!(
        "{}.combined.{}.cmeb",
        cfg.eval.part.name(),
        if latent { "latent" } else { "pooled" }
    ));
    cmeb::write_with_sidecar(
        &path,
        combined.view(),
        &Sidecar {
            ids: set.ids.clone(),
            labels: set.labels.clone(),
        },
    )?;
    let batch = cfg.eval.retrieval_batch.min(set.ids.len());
    let top1 = |c: &Array2<f32>| -> CliResult<f64> {
        Ok(batched_retrieval(combined.view(), c.view(), batch)?[0].top1)
    };
    Ok(CombineSummary {
        weights: w,
        latent,
        to_vision_top1: top1(&set.video)?,
        to_imu_top1: top1(&set.imu)?,
        path,
    })
}

fn latent_combination(
    model: &AlignmentModel,
    samples: &[PairedSample],
    w: CombinationWeights,
) -> CliResult<Array2<f32>> {
    let rows: Vec<_> = samples
        .par_iter()
        .map(|s| {
            let v = model.vision_latents(s)?;
            let i = model.imu_latents(&s.imu)?;
            pool(&combine_latents(&v, &i, w)?, true)
        })
        .collect::<Result<_, imu_align::Error>>()?;
    let d = rows.first().map_or(model.d_model(), |e| e.dim());
    let mut out = Array2::zeros((rows.len(), d));
    for (mut o, e) in out.rows_mut().into_iter().zip(&rows) {
        o.assign(&e.vector);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneSummary {
    pub name: String,
    pub csv: PathBuf,
    pub final_kl: f64,
    pub iterations: usize,
    pub perplexity: f64,
    pub seed: u64,
}

fn write_tsne(
    run: &Path,
    name: &str,
    x: &Array2<f32>,
    ids: &[String],
    labels: &[usize],
    cfg: &TsneConfig,
) -> CliResult<TsneSummary> {
    let res = tsne_project(x.view(), cfg)?;
    let csv_path = run.join(format!("{name}.csv"));
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(["id", "label", "x", "y"])?;
    for ((id, label), row) in ids.iter().zip(labels).zip(res.coords.rows()) {
        w.write_record([
            id.clone(),
            label.to_string(),
            row[0].to_string(),
            row[1].to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(&csv_path, e))?;
    let summary = TsneSummary {
        name: name.to_string(),
        csv: csv_path,
        final_kl: res.final_kl,
        iterations: res.iterations,
        perplexity: cfg.perplexity,
        seed: cfg.seed,
    };
    write_json(&run.join(format!("{name}.json")), &summary)?;
    Ok(summary)
}

/// t-SNE of one part. Joint mode maps video and IMU points together with
/// ids suffixed by modality.
pub fn cmd_tsne(cfg: &RunConfig) -> CliResult<Vec<TsneSummary>> {
    let run = &cfg.out;
    let set = load_set(run, cfg.eval.part, cfg.eval.raw_encoder)?;
    let tcfg = &cfg.eval.tsne;
    if cfg.eval.joint {
        let x = concatenate(Axis(0), &[set.video.view(), set.imu.view()])
            .map_err(|e| imu_align::Error::Shape(e.to_string()))?;
        let ids: Vec<String> = ["video", "imu"]
            .iter()
            .flat_map(|m| set.ids.iter().map(move |id| format!("{id}/{m}")))
            .collect();
        let labels: Vec<usize> = set.labels.iter().chain(&set.labels).copied().collect();
        Ok(vec![write_tsne(run, "tsne", &x, &ids, &labels, tcfg)?])
    } else {
        [("tsne.video", &set.video), ("tsne.imu", &set.imu)]
            .into_iter()
            .map(|(name, x)| write_tsne(run, name, x, &set.ids, &set.labels, tcfg))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckSummary {
    pub results: Vec<gradcheck::GradCheckResult>,
}

pub fn cmd_gradcheck(seed: u64) -> CliResult<GradCheckSummary> {
    let results = gradcheck::run_suite(seed)?;
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.name.clone())
        .collect();
    if failed.is_empty() {
        Ok(GradCheckSummary { results })
    } else {
        Err(CliError::GradCheck { failed })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    #[serde(flatten)]
    pub eval: EvalReport,
    /// Probes on mean-pooled encoder outputs.
    pub raw_encoder_probes: Vec<ProbeReport>,
    pub train_state: TrainState,
    pub n_train: usize,
    pub n_test: usize,
}

/// Consolidated metrics from a run directory's artifacts.
pub fn cmd_report(cfg: &RunConfig) -> CliResult<RunReport> {
    let run = &cfg.out;
    check_artifacts(run)?;
    let ckpt = open_checkpoint(run)?;
    let n_classes = ckpt.model.n_classes();
    let train = load_set(run, SplitPart::Train, false)?;
    let test = load_set(run, SplitPart::Test, false)?;
    let eval = evaluate(&train, &test, n_classes, &cfg.eval.report())?;
    let raw_train = load_set(run, SplitPart::Train, true)?;
    let raw_test = load_set(run, SplitPart::Test, true)?;
    let raw_encoder_probes = probe_all(&raw_train, &raw_test, n_classes, &cfg.eval.probe)?;
    let report = RunReport {
        eval,
        raw_encoder_probes,
        train_state: ckpt.state,
        n_train: train.ids.len(),
        n_test: test.ids.len(),
    };
    write_json(&run.join(REPORT_FILE), &report)?;
    Ok(report)
}
