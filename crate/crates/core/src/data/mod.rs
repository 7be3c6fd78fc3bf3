//! Labelled datasets: IDX parsing, synthetic Gaussian blobs and seeded splits.

mod idx;

pub use idx::{
    parse_idx, parse_idx_images, parse_idx_labels, read_idx_pair, write_idx_images,
    write_idx_labels, IdxImages,
};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::exec::stream_rng;

/// Feature rows with integer labels in `0..classes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    /// Row-major `len × dim` feature matrix.
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    classes: usize,
}

impl LabeledDataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, dim: usize, classes: usize) -> Result<Self> {
        if dim == 0 && !labels.is_empty() {
            return domain("feature dimension must be positive");
        }
        if features.len() != labels.len() * dim {
            return domain(format!(
                "{} feature values do not form {} rows of width {dim}",
                features.len(),
                labels.len()
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return domain(format!("label {bad} outside 0..{classes}"));
        }
        Ok(LabeledDataset {
            features,
            labels,
            dim,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> LabeledDataset {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        LabeledDataset {
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            dim: self.dim,
            classes: self.classes,
        }
    }

    /// Concatenation of `parts`, which must share dimension and class count.
    pub fn concat(parts: &[&LabeledDataset]) -> Result<LabeledDataset> {
        let Some(first) = parts.first() else {
            return domain("nothing to concatenate");
        };
        let mut out = LabeledDataset {
            features: Vec::new(),
            labels: Vec::new(),
            dim: first.dim,
            classes: first.classes,
        };
        for p in parts {
            if p.dim != out.dim || p.classes != out.classes {
                return domain("datasets differ in dimension or class count");
            }
            out.features.extend_from_slice(&p.features);
            out.labels.extend_from_slice(&p.labels);
        }
        Ok(out)
    }
}

/// Centre of blob `class`: `separation · (e_class − 1/k)`, zero-padded to `dim`.
pub fn blob_center(class: usize, classes: usize, dim: usize, separation: f64) -> Vec<f64> {
    let mut c = vec![0.0; dim];
    for (j, v) in c.iter_mut().enumerate().take(classes) {
        let e = if j == class { 1.0 } else { 0.0 };
        *v = separation * (e - 1.0 / classes as f64);
    }
    c
}

/// Equal-sized unit-variance Gaussian clusters around scaled simplex vertices.
///
/// Point `i` has label `i mod classes`, so class sizes differ by at most one.
pub fn make_blobs(n: usize, classes: usize, dim: usize, separation: f64, seed: u64) -> Result<LabeledDataset> {
    if classes < 2 {
        return domain("need at least two classes");
    }
    if dim < classes {
        return domain(format!("dimension {dim} cannot hold {classes} simplex vertices"));
    }
    if !separation.is_finite() || separation < 0.0 {
        return domain("separation must be finite and nonnegative");
    }
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|c| blob_center(c, classes, dim, separation))
        .collect();
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % classes;
        let mut rng = stream_rng(seed, i as u64);
        features.extend(
            centers[y]
                .iter()
                .map(|&c| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    c + z
                }),
        );
        labels.push(y);
    }
    LabeledDataset::new(features, labels, dim, classes)
}

/// One seeded permutation of `ds`, sliced into consecutive chunks of `sizes`.
pub fn split_dataset(ds: &LabeledDataset, sizes: &[usize], seed: u64) -> Result<Vec<LabeledDataset>> {
    if sizes.iter().sum::<usize>() != ds.len() {
        return domain(format!(
            "chunk sizes sum to {}, dataset has {} rows",
            sizes.iter().sum::<usize>(),
            ds.len()
        ));
    }
    let perm = permutation(ds.len(), seed);
    let mut start = 0;
    Ok(sizes
        .iter()
        .map(|&s| {
            let chunk = ds.select(&perm[start..start + s]);
            start += s;
            chunk
        })
        .collect())
}

/// Seeded permutation of `0..n`.
pub fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn blobs_are_deterministic_and_balanced() {
        let a = make_blobs(101, 3, 4, 2.0, 9).unwrap();
        let b = make_blobs(101, 3, 4, 2.0, 9).unwrap();
        assert_eq!(a, b);
        let counts: Vec<usize> = (0..3).map(|c| a.labels().iter().filter(|&&y| y == c).count()).collect();
        assert_eq!(counts, vec![34, 34, 33]);
        assert_ne!(a, make_blobs(101, 3, 4, 2.0, 10).unwrap());
    }

    #[test]
    fn blob_centers_form_scaled_simplex() {
        let c0 = blob_center(0, 2, 2, 3.0);
        let c1 = blob_center(1, 2, 2, 3.0);
        assert_eq!(c0, vec![1.5, -1.5]);
        assert_eq!(c1, vec![-1.5, 1.5]);
        assert!(make_blobs(10, 3, 2, 1.0, 0).is_err());
    }

    #[test]
    fn zero_separation_is_unlearnable() {
        // nearest-centre rule with coincident centres cannot beat chance, and
        // the labels of overlapping clusters are independent of features
        let ds = make_blobs(100_000, 4, 4, 0.0, 3).unwrap();
        let mut wrong = 0usize;
        for i in 0..ds.len() {
            let row = ds.row(i);
            let guess = (0..4)
                .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
                .unwrap();
            wrong += usize::from(guess != ds.label(i));
        }
        let risk = wrong as f64 / ds.len() as f64;
        assert!((risk - 0.75).abs() < 0.02, "risk {risk}");
    }

    #[test]
    fn split_partitions() {
        let ds = make_blobs(60_000, 2, 2, 1.0, 1).unwrap();
        let sizes = [468, 469, 938, 1875, 3750, 7500, 15000, 30000];
        let chunks = split_dataset(&ds, &sizes, 5).unwrap();
        assert_eq!(chunks.iter().map(|c| c.len()).collect::<Vec<_>>(), sizes);
        assert!(split_dataset(&ds, &[10], 5).is_err());
        let again = split_dataset(&ds, &sizes, 5).unwrap();
        assert_eq!(chunks, again);
    }

    #[test]
    fn single_chunk_is_permuted_dataset() {
        let ds = make_blobs(50, 2, 2, 1.0, 1).unwrap();
        let chunks = split_dataset(&ds, &[50], 4).unwrap();
        assert_eq!(chunks[0], ds.select(&permutation(50, 4)));
    }

    proptest! {
        #[test]
        fn permutation_partitions_index_set(sizes in proptest::collection::vec(0usize..40, 1..6), seed in any::<u64>()) {
            let n: usize = sizes.iter().sum();
            let perm = permutation(n, seed);
            let mut seen = vec![false; n];
            let mut start = 0;
            for s in &sizes {
                for &i in &perm[start..start + s] {
                    prop_assert!(!seen[i]);
                    seen[i] = true;
                }
                start += s;
            }
            prop_assert!(seen.iter().all(|&s| s));
        }
    }
}
