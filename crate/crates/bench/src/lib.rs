//! Shared inputs for the benchmarks.

use drsl::data::{hstack, partition_by_label};
use drsl::scenarios::mediation;
use drsl::{LabeledDataset, SeedSpec, TruncationPolicy};
use nalgebra::DMatrix;

pub fn policy() -> TruncationPolicy {
    TruncationPolicy::new(1e-3).expect("valid epsilon")
}

pub fn mediation_sample(n: usize) -> LabeledDataset {
    mediation::sample_mediation(n, &SeedSpec::new(n as u64)).expect("sampler succeeds")
}

/// `[m | w]` rows split into the labelled-one and labelled-zero populations.
pub fn split_joint(d: &LabeledDataset) -> (DMatrix<f64>, DMatrix<f64>) {
    let (num, den) = partition_by_label(d).expect("both labels present");
    (hstack(num.x1(), num.x2()), hstack(den.x1(), den.x2()))
}

/// Out-of-fold prediction matrix with `k` columns, spread over two decades.
pub fn prediction_matrix(n: usize, k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, k, |i, j| (((i * 31 + j * 17) % 97) as f64 / 48.0 - 1.0).exp())
}
