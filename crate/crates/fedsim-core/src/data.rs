//! Synthetic classification data and non-IID client partitioning.
//!
//! Classes are isotropic Gaussian blobs placed at `class_separation * u_c`
//! for pseudo-orthogonal unit directions `u_c` (Gram–Schmidt over seeded
//! Gaussian draws). Client shards are drawn per class from a symmetric
//! Dirichlet(beta) over clients, with largest-remainder rounding so every
//! sample is assigned exactly once; smaller beta means more skewed
//! per-client class mixtures.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Parameters of the synthetic Gaussian-blob task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub input_dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Distance of every class mean from the origin.
    pub class_separation: f64,
    /// Isotropic standard deviation around each class mean.
    pub noise_std: f64,
}

impl Default for SyntheticSpec {
    /// The frozen desk-scale task: 5 Gaussian blobs in 20 dimensions, 200
    /// train / 40 test samples per class. `noise_std` was tuned once so
    /// that in-batch nearest-neighbor label sampling lands in a moderate
    /// (roughly 5-20%) disagreement band on non-IID shards, and is frozen
    /// here; retuning it invalidates the calibrated fixture tests.
    fn default() -> Self {
        SyntheticSpec {
            num_classes: 5,
            input_dim: 20,
            train_per_class: 200,
            test_per_class: 40,
            class_separation: 3.0,
            noise_std: 0.6,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("need at least 2 classes"));
        }
        if self.input_dim == 0 {
            return Err(Error::config("input_dim must be positive"));
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(Error::config("per-class sample counts must be positive"));
        }
        if !(self.class_separation >= 0.0) {
            return Err(Error::config("class_separation must be nonnegative"));
        }
        if !(self.noise_std > 0.0) {
            return Err(Error::config("noise_std must be positive"));
        }
        Ok(())
    }
}

/// A labelled dataset, inputs row-major `len x input_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub num_classes: usize,
    pub input_dim: usize,
    pub inputs: Vec<f64>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    fn with_capacity(num_classes: usize, input_dim: usize, n: usize) -> Self {
        Dataset {
            num_classes,
            input_dim,
            inputs: Vec::with_capacity(n * input_dim),
            labels: Vec::with_capacity(n),
        }
    }

    fn push(&mut self, x: &[f64], y: usize) {
        self.inputs.extend_from_slice(x);
        self.labels.push(y);
    }
}

/// One client's shard plus its simulator-ground-truth role.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub client_id: u32,
    pub malicious: bool,
    pub data: Dataset,
}

/// Dirichlet partition parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionConfig {
    pub num_clients: usize,
    /// Dirichlet concentration; smaller = more skewed class mixtures.
    pub beta: f64,
}

impl PartitionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::config("num_clients must be positive"));
        }
        if !(self.beta > 0.0) {
            return Err(Error::config("beta must be positive"));
        }
        Ok(())
    }
}

/// Draws `count` pseudo-orthogonal unit directions via Gram–Schmidt over
/// Gaussian draws. When `dim < count` orthogonality is impossible, so the
/// remaining directions fall back to independent random unit vectors.
fn class_directions(count: usize, dim: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(count);
    for c in 0..count {
        loop {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            if c < dim {
                for prev in &dirs {
                    let dot: f64 = v.iter().zip(prev).map(|(a, b)| a * b).sum();
                    for (vi, pi) in v.iter_mut().zip(prev) {
                        *vi -= dot * pi;
                    }
                }
            }
            let norm = libm::sqrt(v.iter().map(|x| x * x).sum());
            if norm > 1e-9 {
                for vi in &mut v {
                    *vi /= norm;
                }
                dirs.push(v);
                break;
            }
            // Degenerate draw (numerically inside the span); redraw.
        }
    }
    dirs
}

/// Generates `(train, test)` datasets, each grouped by class in order
/// (all class-0 samples first, then class 1, ...). Fully determined by the
/// provided stream.
pub fn generate_synthetic(spec: &SyntheticSpec, rng: &mut Rng) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let dirs = class_directions(spec.num_classes, spec.input_dim, rng);
    let sample_split = |per_class: usize, rng: &mut Rng| {
        let mut ds = Dataset::with_capacity(spec.num_classes, spec.input_dim, per_class * spec.num_classes);
        let mut x = vec![0.0; spec.input_dim];
        for (c, dir) in dirs.iter().enumerate() {
            for _ in 0..per_class {
                for (xi, di) in x.iter_mut().zip(dir) {
                    *xi = spec.class_separation * di + spec.noise_std * rng.normal();
                }
                ds.push(&x, c);
            }
        }
        ds
    };
    let train = sample_split(spec.train_per_class, rng);
    let test = sample_split(spec.test_per_class, rng);
    Ok((train, test))
}

/// Largest-remainder rounding of `proportions * total` to integer counts
/// that sum exactly to `total`; remainder ties break toward lower index.
fn largest_remainder_counts(proportions: &[f64], total: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = Vec::with_capacity(proportions.len());
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(proportions.len());
    let mut assigned = 0usize;
    for (i, &p) in proportions.iter().enumerate() {
        let quota = p * total as f64;
        let floor = libm::floor(quota) as usize;
        counts.push(floor);
        assigned += floor;
        remainders.push((i, quota - floor as f64));
    }
    // Sort by remainder descending, ties by lower index.
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut missing = total - assigned;
    let mut k = 0;
    while missing > 0 {
        counts[remainders[k % remainders.len()].0] += 1;
        missing -= 1;
        k += 1;
    }
    counts
}

/// Splits `dataset` into `num_clients` shards: one Dirichlet(beta) draw per
/// class decides how that class's samples spread over clients (dealt in
/// dataset order). If any client ends up with zero samples overall, the
/// proportions are redrawn (up to 100 attempts); if emptiness persists, one
/// sample is moved from the currently largest shard (ties: lower client id)
/// to each empty client. Roles are initialized benign.
pub fn dirichlet_partition(
    dataset: &Dataset,
    cfg: &PartitionConfig,
    rng: &mut Rng,
) -> Result<Vec<ClientDataset>> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("dataset to partition"));
    }
    let n_clients = cfg.num_clients;

    // Indices of every sample per class, in dataset order.
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes];
    for (i, &y) in dataset.labels.iter().enumerate() {
        by_class[y].push(i);
    }

    // counts[class][client], redrawn whole if some client stays empty.
    let mut counts: Vec<Vec<usize>> = Vec::new();
    for attempt in 0..100 {
        counts.clear();
        for class_samples in &by_class {
            let props = rng.dirichlet(cfg.beta, n_clients);
            counts.push(largest_remainder_counts(&props, class_samples.len()));
        }
        let some_empty = (0..n_clients).any(|k| counts.iter().map(|c| c[k]).sum::<usize>() == 0);
        if !some_empty || attempt == 99 {
            break;
        }
    }

    let mut shards: Vec<ClientDataset> = (0..n_clients)
        .map(|k| ClientDataset {
            client_id: k as u32,
            malicious: false,
            data: Dataset::with_capacity(dataset.num_classes, dataset.input_dim, 0),
        })
        .collect();
    for (class_samples, class_counts) in by_class.iter().zip(&counts) {
        let mut cursor = 0usize;
        for (k, &take) in class_counts.iter().enumerate() {
            for &sample in &class_samples[cursor..cursor + take] {
                shards[k].data.push(dataset.input(sample), dataset.labels[sample]);
            }
            cursor += take;
        }
        debug_assert_eq!(cursor, class_samples.len());
    }

    // Final fallback: donate one sample (the donor's last) from the largest
    // shard to each still-empty client.
    loop {
        let Some(empty) = shards.iter().position(|s| s.data.is_empty()) else {
            break;
        };
        let donor = shards
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.data.len().cmp(&b.1.data.len()).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .expect("at least one shard");
        if shards[donor].data.len() <= 1 {
            return Err(Error::config(
                "cannot partition: fewer samples than clients",
            ));
        }
        let y = shards[donor].data.labels.pop().expect("donor nonempty");
        let d = dataset.input_dim;
        let cut = shards[donor].data.labels.len() * d;
        let x: Vec<f64> = shards[donor].data.inputs.drain(cut..).collect();
        shards[empty].data.push(&x, y);
    }

    debug_assert_eq!(
        shards.iter().map(|s| s.data.len()).sum::<usize>(),
        dataset.len()
    );
    Ok(shards)
}

/// Replaces every label with a uniformly random *different* class.
pub fn flip_labels(labels: &[usize], num_classes: usize, rng: &mut Rng) -> Vec<usize> {
    assert!(num_classes >= 2, "flipping needs at least 2 classes");
    labels
        .iter()
        .map(|&y| {
            debug_assert!(y < num_classes);
            (y + 1 + rng.below(num_classes as u64 - 1) as usize) % num_classes
        })
        .collect()
}
