use imu_align::resampler::pool;
use imu_align::{Latents, Resampler, ResamplerConfig, TokenSequence};
use ndarray::Array2;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn tokens(len: usize, d: usize, seed: u64) -> TokenSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TokenSequence::new(Array2::from_shape_fn((len, d), |_| {
        StandardNormal.sample(&mut rng)
    }))
}

#[test]
fn output_rows_fixed_for_any_input_length() {
    let r = Resampler::<f32>::init(ResamplerConfig::desk()).unwrap();
    for len in [1, 16, 50, 256, 300] {
        let e = r.embed(&tokens(len, 64, len as u64), true).unwrap();
        assert_eq!(
            r.resample_tokens(&tokens(len, 64, 0))
                .unwrap()
                .values
                .nrows(),
            64
        );
        assert!((e.norm() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn input_order_does_not_matter() {
    let r = Resampler::<f64>::init(ResamplerConfig::desk()).unwrap();
    let seq = tokens(40, 64, 1);
    let mut order: Vec<usize> = (0..40).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(2));
    let shuffled = TokenSequence::new(seq.tokens.select(ndarray::Axis(0), &order));
    let a = r.resample_tokens(&seq).unwrap();
    let b = r.resample_tokens(&shuffled).unwrap();
    let max = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f32, f32::max);
    assert!(max < 1e-6, "max deviation {max}");
}

#[test]
fn latent_init_is_seeded_and_frozen() {
    let a = Resampler::<f32>::init(ResamplerConfig::desk()).unwrap();
    let b = Resampler::<f32>::init(ResamplerConfig::desk()).unwrap();
    let c = Resampler::<f32>::init(ResamplerConfig {
        seed: 1,
        ..ResamplerConfig::desk()
    })
    .unwrap();
    assert_eq!(a.params.digest(), b.params.digest());
    assert_ne!(a.params.digest(), c.params.digest());
    assert_eq!(a.params.count_trainable(), 0);
}

proptest! {
    #[test]
    fn pooling_equal_rows_returns_the_row(row in prop::collection::vec(-10.0f32..10.0, 1..16), n in 1usize..80) {
        prop_assume!(row.iter().any(|v| v.abs() > 1e-3));
        let lat = Latents { values: Array2::from_shape_fn((n, row.len()), |(_, j)| row[j]) };
        let raw = pool(&lat, false).unwrap();
        for (p, r) in raw.vector.iter().zip(&row) {
            prop_assert!((p - r).abs() <= 1e-5 * r.abs().max(1.0));
        }
        let unit = pool(&lat, true).unwrap();
        prop_assert!((unit.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn normalized_embeddings_have_unit_norm(len in 1usize..320, seed in any::<u64>()) {
        let r = Resampler::<f32>::init(ResamplerConfig { n_layers: 1, ..ResamplerConfig::desk() }).unwrap();
        let e = r.embed(&tokens(len, 64, seed), true).unwrap();
        prop_assert_eq!(e.dim(), 64);
        prop_assert!((e.norm() - 1.0).abs() < 1e-6);
    }
}
