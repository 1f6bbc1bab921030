//! Fixtures shared by the criterion benchmarks.

use nalgebra::DMatrix;
use p300_core::scheduler::{build_scenario_schedule, TimingConfig};
use p300_core::synth::{simulate_subject, SubjectParams};
use p300_core::{ChannelSet, EegRecord, DEFAULT_RATE};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Default training scenario from the simulated subject.
pub fn training_record(seed: u64) -> EegRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let targets: Vec<u8> = (0..12).collect();
    let schedule = build_scenario_schedule(&TimingConfig::default(), DEFAULT_RATE, &targets, &mut rng).unwrap();
    simulate_subject(&schedule, &ChannelSet::default(), &SubjectParams::default(), &mut rng).unwrap()
}

/// `n × d` Gaussian rows with the first `n / 12` rows shifted, plus labels.
pub fn gaussian_dataset(n: usize, d: usize, seed: u64) -> (DMatrix<f64>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<bool> = (0..n).map(|i| i < n / 12).collect();
    let x = DMatrix::from_fn(n, d, |i, _| {
        let v: f64 = StandardNormal.sample(&mut rng);
        if labels[i] {
            v + 0.3
        } else {
            v
        }
    });
    (x, labels)
}

/// Channels × samples matrix of independent Laplacian sources mixed randomly.
pub fn mixed_sources(channels: usize, samples: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = DMatrix::from_fn(channels, samples, |_, _| {
        let u: f64 = StandardNormal.sample(&mut rng);
        u * u * u
    });
    let a: DMatrix<f64> = DMatrix::from_fn(channels, channels, |_, _| StandardNormal.sample(&mut rng));
    a * s
}
