#![allow(dead_code)]

use ovfl::environment::RoundDataset;
use ovfl::nn::{Architecture, DenseMatrix, SplitModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn small_arch(parties: usize) -> Architecture {
    Architecture {
        extractor: vec![10, 8, 4],
        head_hidden: vec![6],
        num_outputs: 2,
        num_parties: parties,
    }
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix<f64> {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Random rounds with `rows` samples, the first `train` of them for training.
pub fn synthetic_rounds(arch: &Architecture, count: usize, rows: usize, train: usize, seed: u64) -> Vec<RoundDataset<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (1..=count)
        .map(|round| {
            let features = (0..arch.num_parties)
                .map(|_| random_matrix(rows, arch.extractor[0], &mut rng))
                .collect();
            let labels = DenseMatrix::from_fn(rows, arch.num_outputs, |_, _| rng.random_range(1.0..4.0));
            RoundDataset::new(round, features, labels, train).unwrap()
        })
        .collect()
}

pub fn model(arch: &Architecture, seed: u64) -> SplitModel<f64> {
    SplitModel::init(arch, seed).unwrap()
}
