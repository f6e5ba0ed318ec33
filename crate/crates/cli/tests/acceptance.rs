//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use imu_align::alignment::gradcheck::run_suite;
use imu_align::alignment::{
    imu_matrix, info_nce_loss, l2_normalize_rows, train, train_with_validator, vision_matrix,
    ScriptedValidator,
};
use imu_align::data::{split_dataset, synth_generate, SplitPolicy};
use imu_align::evaluation::{
    affinities, batched_retrieval, combine_embeddings, embedding_matrix, knn_purity, probe_all,
    tsne_project, CombinationWeights, EmbeddingSet, Modality, ProbeConfig, TsneConfig,
};
use imu_align::{
    Embedding, EmbeddingStage, LossConfig, ModelConfig, PairedSample, Resampler, ResamplerConfig,
    SynthConfig, TokenSequence, TrainConfig,
};
use imu_align_cli::commands::{cmd_report, cmd_train};
use imu_align_cli::{GlobalArgs, Overrides, RunConfig};
use ndarray::{array, Array2};

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn gradients() -> Check {
    let t = Instant::now();
    let results = run_suite(0).map_err(err)?;
    let secs = t.elapsed().as_secs_f64();
    let worst = results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let names: Vec<_> = results.iter().map(|r| r.name.as_str()).collect();
    ensure(
        worst < 1e-4 && secs < 60.0 && results.iter().all(|r| r.passed),
        format!(
            "{} checks {names:?}, max rel error {worst:.2e}, {secs:.1} s",
            results.len()
        ),
    )
}

fn loss_closed_forms() -> Check {
    let one =
        info_nce_loss(Array2::<f64>::from_elem((1, 1), 0.5).view(), 0.07, true).map_err(err)?;
    let mut worst: f64 = 0.0;
    for n in [2usize, 4, 35] {
        let l =
            info_nce_loss(Array2::<f64>::from_elem((n, n), 0.3).view(), 0.07, true).map_err(err)?;
        worst = worst.max((l - (n as f64).ln()).abs());
    }
    let eye = info_nce_loss(Array2::<f64>::eye(2).view(), 1.0, true).map_err(err)?;
    ensure(
        one == 0.0 && worst < 1e-9 && (eye - 0.313262).abs() < 1e-6,
        format!("N=1 {one}, max |l - ln N| {worst:.1e}, identity {eye:.6}"),
    )
}

fn desk_data(cfg: &SynthConfig, seed: u64) -> Result<imu_align::DatasetSplit, String> {
    let data = synth_generate(cfg).map_err(err)?;
    split_dataset(data, [0.7, 0.15, 0.15], SplitPolicy::BySubject, seed).map_err(err)
}

/// Criteria 3 and 5 share one training run.
fn end_to_end() -> (Check, Check) {
    let run = || -> Result<(Check, Check), String> {
        let scfg = SynthConfig {
            n_classes: 8,
            n_pairs: 512,
            ..SynthConfig::default()
        };
        let split = desk_data(&scfg, 0)?;
        let model = ModelConfig::desk(8, scfg.vision_feature_dim, 0)
            .build(0)
            .map_err(err)?;
        let frozen_before = model.frozen_digest();
        let tcfg = TrainConfig {
            batch_size: 64,
            max_epochs: 50,
            lr: 3e-3,
            ..TrainConfig::default()
        };
        let t = Instant::now();
        let out = train(
            &split.train,
            &split.val,
            model,
            &tcfg,
            &LossConfig::default(),
            |_| {},
        )
        .map_err(err)?;
        let imu = l2_normalize_rows(imu_matrix(&out.model, &split.test).map_err(err)?.view())
            .map_err(err)?;
        let vis = vision_matrix(&out.model, &split.test).map_err(err)?;
        let [a, b] = batched_retrieval(imu.view(), vis.view(), 64).map_err(err)?;
        let secs = t.elapsed().as_secs_f64();
        let c3 = ensure(
            a.top1 >= 80.0 && b.top1 >= 80.0 && secs < 300.0,
            format!(
                "test top-1 imu->vision {:.1}%, vision->imu {:.1}% ({} epochs, {secs:.0} s)",
                a.top1, b.top1, out.state.epochs_run
            ),
        );
        let frozen_after = out.model.frozen_digest();
        let c5 = ensure(
            frozen_before == frozen_after,
            format!("frozen digest {}", &frozen_after[..16]),
        );
        Ok((c3, c5))
    };
    run().unwrap_or_else(|e| (Err(e.clone()), Err(e)))
}

fn probe_ordering() -> Check {
    let mut sums = [0.0f64; 3];
    for seed in 0..3u64 {
        let scfg = SynthConfig {
            noise_sigma: 1.0,
            vision_noise_sigma: 1.5,
            seed,
            ..SynthConfig::default()
        };
        let split = desk_data(&scfg, seed)?;
        let model = ModelConfig::desk(scfg.n_classes, scfg.vision_feature_dim, 0)
            .build(seed)
            .map_err(err)?;
        let tcfg = TrainConfig {
            batch_size: 64,
            max_epochs: 10,
            lr: 3e-3,
            seed,
            ..TrainConfig::default()
        };
        let out = train(
            &split.train,
            &split.val,
            model,
            &tcfg,
            &LossConfig::default(),
            |_| {},
        )
        .map_err(err)?;
        let set = |part: &[PairedSample]| -> Result<EmbeddingSet, String> {
            let m = |modality| {
                embedding_matrix(&out.model, part, modality, EmbeddingStage::Resampled, true)
            };
            Ok(EmbeddingSet {
                ids: part.iter().map(|s| s.id.clone()).collect(),
                labels: part.iter().map(|s| s.label).collect(),
                video: m(Modality::Video).map_err(err)?,
                imu: m(Modality::Imu).map_err(err)?,
            })
        };
        let pcfg = ProbeConfig {
            seed,
            ..ProbeConfig::default()
        };
        let probes = probe_all(
            &set(&split.train)?,
            &set(&split.test)?,
            scfg.n_classes,
            &pcfg,
        )
        .map_err(err)?;
        for (s, p) in sums.iter_mut().zip(&probes) {
            *s += p.test_acc / 3.0;
        }
    }
    let [video, imu, combined] = sums;
    ensure(
        combined >= imu && imu >= video && combined - imu.max(video) >= 2.0,
        format!("mean test accuracy video {video:.1}, imu {imu:.1}, combined {combined:.1}"),
    )
}

fn shape_contract() -> Check {
    let r = Resampler::<f32>::init(ResamplerConfig::desk()).map_err(err)?;
    let mut worst: f64 = 0.0;
    for len in [1usize, 16, 50, 256, 300] {
        let seq = TokenSequence::new(Array2::from_shape_fn((len, 64), |(i, j)| {
            ((i * 7 + j * 3) % 11) as f32 - 5.0
        }));
        let rows = r.resample_tokens(&seq).map_err(err)?.values.nrows();
        if rows != 64 {
            return Err(format!("length {len} gave {rows} rows"));
        }
        worst = worst.max((r.embed(&seq, true).map_err(err)?.norm() - 1.0).abs());
    }
    ensure(
        worst < 1e-6,
        format!("64 rows for all lengths, max |norm - 1| {worst:.1e}"),
    )
}

fn early_stopping() -> Check {
    let scfg = SynthConfig {
        n_pairs: 32,
        n_classes: 4,
        ..SynthConfig::default()
    };
    let data = synth_generate(&scfg).map_err(err)?;
    let mut mcfg = ModelConfig::desk(4, scfg.vision_feature_dim, 0);
    mcfg.encoder.n_layers = 1;
    let script = vec![3.0, 2.5, 2.0, 2.2, 2.1, 2.3, 1.0];
    let patience = 3;
    let mut v = ScriptedValidator::new(script);
    let tcfg = TrainConfig {
        batch_size: 16,
        max_epochs: 20,
        patience,
        ..TrainConfig::default()
    };
    let model = mcfg.build(0).map_err(err)?;
    let out = train_with_validator(&data, model, &tcfg, &LossConfig::default(), &mut v, |_| {})
        .map_err(err)?;
    ensure(
        out.state.best_epoch == 3 && out.state.epochs_run == 3 + patience,
        format!(
            "best epoch {}, stopped after {}",
            out.state.best_epoch, out.state.epochs_run
        ),
    )
}

fn tsne() -> Check {
    let x = Array2::from_shape_fn((60, 5), |(r, c)| {
        let jitter = (((r * 13 + c * 7) % 17) as f32 - 8.0) / 8.0;
        jitter + if c == r / 20 { 10.0 } else { 0.0 }
    });
    let labels: Vec<usize> = (0..60).map(|r| r / 20).collect();
    let cfg = TsneConfig {
        perplexity: 10.0,
        ..TsneConfig::default()
    };
    let p_sum = affinities(x.mapv(f64::from).view(), cfg.perplexity).p.sum();
    let a = tsne_project(x.view(), &cfg).map_err(err)?;
    let b = tsne_project(x.view(), &cfg).map_err(err)?;
    let purity = knn_purity(a.coords.view(), &labels, 5);
    ensure(
        purity >= 0.9 && (p_sum - 1.0).abs() < 1e-6 && a.coords == b.coords,
        format!(
            "5-NN purity {purity:.2}, sum P {p_sum:.9}, repeat identical {}",
            a.coords == b.coords
        ),
    )
}

fn combination() -> Check {
    let v = Embedding::new(array![0.6f32, 0.0, 0.8], true);
    let i = Embedding::new(array![0.0f32, 1.0, 0.0], true);
    let w10 = combine_embeddings(
        &v,
        &i,
        CombinationWeights::new(1.0, 0.0).map_err(err)?,
        true,
    )
    .map_err(err)?;
    let bitwise = w10
        .vector
        .iter()
        .zip(&v.vector)
        .all(|(a, b)| a.to_bits() == b.to_bits());
    let e1 = Embedding::new(array![1.0f32, 0.0], true);
    let e2 = Embedding::new(array![0.0f32, 1.0], true);
    let c = combine_embeddings(
        &e1,
        &e2,
        CombinationWeights::new(0.8, 0.2).map_err(err)?,
        true,
    )
    .map_err(err)?;
    let dev = (f64::from(c.vector[0]) - 0.97014)
        .abs()
        .max((f64::from(c.vector[1]) - 0.24254).abs());
    ensure(
        bitwise && dev < 1e-5,
        format!(
            "(1, 0) bitwise {bitwise}, (0.8, 0.2) gives ({:.5}, {:.5})",
            c.vector[0], c.vector[1]
        ),
    )
}

fn determinism(root: &Path) -> Check {
    let run = |name: &str| -> Result<(String, String, Vec<u8>), String> {
        let global = GlobalArgs {
            seed: Some(7),
            out: Some(root.join(name)),
            ..GlobalArgs::default()
        };
        let overrides = Overrides {
            synth: true,
            classes: Some(4),
            pairs: Some(128),
            epochs: Some(3),
            batch_size: Some(32),
            ..Overrides::default()
        };
        let cfg = RunConfig::resolve(None, &global, &overrides).map_err(err)?;
        let s = cmd_train(cfg.clone()).map_err(err)?;
        cmd_report(&cfg).map_err(err)?;
        let report = std::fs::read(cfg.out.join("report.json")).map_err(err)?;
        Ok((s.trainable_digest, s.frozen_digest, report))
    };
    let a = run("a")?;
    let b = run("b")?;
    ensure(
        a == b,
        format!(
            "digests equal {}, report JSON equal {}",
            a.0 == b.0 && a.1 == b.1,
            a.2 == b.2
        ),
    )
}

fn main() -> ExitCode {
    let root = tempfile::tempdir().expect("temp dir");
    let (c3, c5) = end_to_end();
    let results: Vec<(&str, Check)> = vec![
        ("1 gradient suite", gradients()),
        ("2 loss closed forms", loss_closed_forms()),
        ("3 synthetic end-to-end retrieval", c3),
        ("4 probe ordering on noisy vision", probe_ordering()),
        ("5 frozen component integrity", c5),
        ("6 resampler shape contract", shape_contract()),
        ("7 early stopping", early_stopping()),
        ("8 t-SNE", tsne()),
        ("9 embedding combination", combination()),
        ("10 determinism", determinism(root.path())),
    ];
    let mut failed = 0;
    for (name, r) in &results {
        match r {
            Ok(d) => println!("PASS criterion {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL criterion {name}: {d}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
