use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use imu_align::data::{
    extract_window, load_cache, make_batches, preprocess_manifest, resample_signal, split_dataset,
    synth_generate, RawSignal, SensorKind, SplitPolicy, SynthConfig, INDEX_FILE, WINDOW_LEN,
};
use imu_align::io::cmeb;
use imu_align::{Error, PairedSample};
use ndarray::Array2;
use proptest::prelude::*;

fn synth(n_pairs: usize, n_subjects: u32) -> Vec<PairedSample> {
    synth_generate(&SynthConfig {
        n_pairs,
        n_subjects,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn ids(samples: &[PairedSample]) -> Vec<String> {
    samples.iter().map(|s| s.id.clone()).collect()
}

#[test]
fn random_split_sizes_follow_ratios() {
    let s = split_dataset(synth(100, 10), [0.7, 0.15, 0.15], SplitPolicy::Random, 1).unwrap();
    assert_eq!((s.train.len(), s.val.len(), s.test.len()), (70, 15, 15));
}

#[test]
fn by_subject_keeps_subjects_whole() {
    let s = split_dataset(synth(200, 10), [0.7, 0.15, 0.15], SplitPolicy::BySubject, 4).unwrap();
    let subjects = |p: &[PairedSample]| p.iter().map(|x| x.subject_id).collect::<BTreeSet<_>>();
    let (a, b, c) = (subjects(&s.train), subjects(&s.val), subjects(&s.test));
    assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
    assert_eq!(a.len() + b.len() + c.len(), 10);
}

#[test]
fn split_is_deterministic_per_seed() {
    let a = split_dataset(synth(120, 10), [0.7, 0.15, 0.15], SplitPolicy::BySubject, 9).unwrap();
    let b = split_dataset(synth(120, 10), [0.7, 0.15, 0.15], SplitPolicy::BySubject, 9).unwrap();
    assert_eq!(ids(&a.train), ids(&b.train));
    assert_eq!(ids(&a.val), ids(&b.val));
    assert_eq!(ids(&a.test), ids(&b.test));
}

#[test]
fn split_rejects_too_few_subjects_and_bad_ratios() {
    let err =
        split_dataset(synth(20, 2), [0.7, 0.15, 0.15], SplitPolicy::BySubject, 0).unwrap_err();
    assert!(matches!(err, Error::InvalidArgument(_)));
    assert!(split_dataset(synth(20, 10), [0.7, 0.2, 0.2], SplitPolicy::Random, 0).is_err());
    assert!(split_dataset(synth(20, 10), [1.0, 0.0, 0.0], SplitPolicy::Random, 0).is_err());
}

#[test]
fn noise_free_synth_separates_classes_in_window_space() {
    let s = synth_generate(&SynthConfig {
        n_pairs: 96,
        noise_sigma: 0.0,
        vision_noise_sigma: 0.0,
        ..SynthConfig::default()
    })
    .unwrap();
    let dist = |a: &Array2<f32>, b: &Array2<f32>| {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let mut max_within: f64 = 0.0;
    let mut min_across = f64::INFINITY;
    for i in 0..s.len() {
        for j in i + 1..s.len() {
            let d = dist(&s[i].imu.values, &s[j].imu.values);
            if s[i].label == s[j].label {
                max_within = max_within.max(d);
            } else {
                min_across = min_across.min(d);
            }
        }
    }
    assert!(max_within < min_across, "{max_within} vs {min_across}");
}

#[test]
fn drop_last_batching_of_train_size() {
    let b = make_batches(6093, 512, 0, 0, true, true).unwrap();
    assert_eq!(b.len(), 11);
    assert!(b.iter().all(|x| x.len() == 512));
}

fn write_csv(path: &Path, n: usize, rate: f64, offset: f64) {
    let mut s = String::from("t,x,y,z\n");
    for i in 0..n {
        let t = i as f64 / rate;
        s.push_str(&format!(
            "{t},{},{},{}\n",
            offset + t,
            offset - t,
            offset * t
        ));
    }
    fs::write(path, s).unwrap();
}

/// Ten records with 6 s of 100 Hz data per sensor and precomputed vision
/// embeddings.
fn fixture(dir: &Path, drop_gyro_of: Option<usize>) -> std::path::PathBuf {
    let mut lines = Vec::new();
    for r in 0..10 {
        let mut imu = serde_json::Map::new();
        for (k, kind) in ["acc_body", "acc_wrist", "gyro", "magnetometer"]
            .iter()
            .enumerate()
        {
            if *kind == "gyro" && drop_gyro_of == Some(r) {
                continue;
            }
            let p = dir.join(format!("r{r}_{kind}.csv"));
            write_csv(&p, 600, 100.0, (r * 4 + k) as f64);
            imu.insert(
                kind.to_string(),
                serde_json::json!(p.file_name().unwrap().to_str()),
            );
        }
        let emb = dir.join(format!("r{r}_vision.cmeb"));
        cmeb::write(&emb, Array2::from_elem((16, 8), r as f32).view()).unwrap();
        lines.push(
            serde_json::json!({
                "id": format!("rec{r}"),
                "subject_id": r % 5,
                "scene_id": 0,
                "session_id": r,
                "label": r % 3,
                "label_name": format!("action{}", r % 3),
                "imu": imu,
                "vision": {"embedding_path": emb.file_name().unwrap().to_str()},
                "t0_s": 0.0
            })
            .to_string(),
        );
    }
    let m = dir.join("manifest.jsonl");
    fs::write(&m, lines.join("\n") + "\n").unwrap();
    m
}

#[test]
fn preprocess_caches_every_record() {
    let dir = tempfile::tempdir().unwrap();
    let m = fixture(dir.path(), None);
    let out = dir.path().join("cache");
    let summary = preprocess_manifest(&m, &out, 35).unwrap();
    assert_eq!(summary.n_samples, 10);
    assert_eq!(summary.per_class.values().sum::<usize>(), 10);
    let samples = load_cache(&out, 0).unwrap();
    assert_eq!(samples.len(), 10);
    // 6 s at 100 Hz resampled to 50 Hz: 300 rows, window keeps 256
    assert!(samples.iter().all(|s| s.imu.valid_len == WINDOW_LEN));
    assert_eq!(samples[0].signal.as_ref().unwrap().nrows(), 300);
}

#[test]
fn preprocess_names_record_missing_gyro() {
    let dir = tempfile::tempdir().unwrap();
    let m = fixture(dir.path(), Some(4));
    let err = preprocess_manifest(&m, &dir.path().join("cache"), 35).unwrap_err();
    match err {
        Error::Manifest(lines) => {
            assert_eq!(lines.len(), 1);
            assert!(
                lines[0].contains("rec4")
                    && lines[0].contains("gyro")
                    && lines[0].contains("line 5")
            );
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn preprocess_rerun_gives_identical_digests() {
    let dir = tempfile::tempdir().unwrap();
    let m = fixture(dir.path(), None);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    preprocess_manifest(&m, &a, 35).unwrap();
    preprocess_manifest(&m, &b, 35).unwrap();
    let index = |d: &Path| fs::read_to_string(d.join(INDEX_FILE)).unwrap();
    assert_eq!(index(&a), index(&b));
}

proptest! {
    #[test]
    fn resampling_stays_within_input_range(values in prop::collection::vec(-100.0f64..100.0, 6..120), ratio in 1usize..4) {
        let n = values.len() / 3;
        let channels = Array2::from_shape_fn((n, 3), |(i, c)| values[i * 3 + c]);
        let (lo, hi) = channels.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let sig = RawSignal::new(channels, 50.0 * ratio as f64, SensorKind::Gyro).unwrap();
        let out = resample_signal(&sig, 50.0).unwrap();
        prop_assert_eq!(out.len(), n / ratio);
        for &v in out.channels.iter() {
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }

    #[test]
    fn padded_rows_sum_to_zero(t in 1usize..600, start_frac in 0.0f64..1.0) {
        let start = ((t as f64 * start_frac) as usize).min(t - 1);
        let m = Array2::from_shape_fn((t, 12), |(i, c)| (i * 12 + c) as f32 + 1.0);
        let w = extract_window(m.view(), start, 0.0).unwrap();
        prop_assert_eq!(w.valid_len, (t - start).min(WINDOW_LEN));
        let pad: f32 = w.values.slice(ndarray::s![w.valid_len.., ..]).iter().map(|v| v.abs()).sum();
        prop_assert_eq!(pad, 0.0);
    }

    #[test]
    fn splits_partition_the_input(n in 30usize..150, seed in any::<u64>(), policy in prop::sample::select(vec![SplitPolicy::Random, SplitPolicy::BySubject, SplitPolicy::BySession])) {
        let samples = synth(n, 10);
        let s = split_dataset(samples, [0.7, 0.15, 0.15], policy, seed).unwrap();
        let all: Vec<String> = ids(&s.train).into_iter().chain(ids(&s.val)).chain(ids(&s.test)).collect();
        let unique: BTreeSet<&String> = all.iter().collect();
        prop_assert_eq!(all.len(), n);
        prop_assert_eq!(unique.len(), n);
    }
}
