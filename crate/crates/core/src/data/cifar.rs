//! CIFAR-10 binary batches: 3073-byte records of one label byte followed by
//! 1024 red, 1024 green and 1024 blue pixel bytes (row-major 32×32).

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::infoflow::LabelBatch;
use crate::rng::{keyed, Stream};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CIFAR_RECORD: usize = 3073;
pub const CIFAR_CLASSES: usize = 10;
const SIDE: usize = 32;
const PIXELS: usize = 3 * SIDE * SIDE;
const TRAIN_FILES: [&str; 5] = ["data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"];
const TEST_FILE: &str = "test_batch.bin";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CifarRecord {
    pub label: u8,
    pub pixels: Vec<u8>,
}

impl CifarRecord {
    /// Pixels scaled to `[0, 1]`, channel-major.
    pub fn scaled<T: Scalar>(&self) -> Vec<T> {
        self.pixels.iter().map(|&p| T::c(f64::from(p) / 255.0)).collect()
    }
}

pub fn read_cifar_file(path: &Path) -> Result<Vec<CifarRecord>> {
    let bytes = fs::read(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::Data(format!(
            "{}: size {} is not a positive multiple of {CIFAR_RECORD}",
            path.display(),
            bytes.len()
        )));
    }
    bytes
        .chunks_exact(CIFAR_RECORD)
        .enumerate()
        .map(|(i, rec)| {
            if usize::from(rec[0]) >= CIFAR_CLASSES {
                return Err(Error::Data(format!("{}: record {i} has label byte {}", path.display(), rec[0])));
            }
            Ok(CifarRecord { label: rec[0], pixels: rec[1..].to_vec() })
        })
        .collect()
}

/// Stratified subset: `per_class` records of each class chosen by a seeded
/// shuffle, returned in file order. `None` keeps everything.
fn stratify(records: &[CifarRecord], per_class: Option<usize>, seed: u64, split: Split) -> Result<Vec<usize>> {
    let Some(k) = per_class else {
        return Ok((0..records.len()).collect());
    };
    let mut chosen = Vec::with_capacity(k * CIFAR_CLASSES);
    for class in 0..CIFAR_CLASSES {
        let mut idx: Vec<usize> = (0..records.len()).filter(|&i| usize::from(records[i].label) == class).collect();
        if idx.len() < k {
            return Err(Error::Data(format!("{split:?} split has {} records of class {class}, {k} requested", idx.len())));
        }
        idx.shuffle(&mut keyed(seed, Stream::Subset, &[split as u64, class as u64]));
        chosen.extend_from_slice(&idx[..k]);
    }
    chosen.sort_unstable();
    Ok(chosen)
}

fn to_dataset<T: Scalar>(records: &[CifarRecord], idx: &[usize], stats: &[(f64, f64); 3], split: Split) -> Result<Dataset<T>> {
    let mut data = Vec::with_capacity(idx.len() * PIXELS);
    for &i in idx {
        for (p, &byte) in records[i].pixels.iter().enumerate() {
            let (mean, std) = stats[p / (SIDE * SIDE)];
            data.push(T::c((f64::from(byte) / 255.0 - mean) / std));
        }
    }
    let labels = idx.iter().map(|&i| usize::from(records[i].label)).collect();
    Dataset::new(Tensor::new(&[idx.len(), 3, SIDE, SIDE], data)?, Some(LabelBatch::new(labels, CIFAR_CLASSES)?), split)
}

/// Per-channel mean and standard deviation of the scaled pixels.
fn channel_stats(records: &[CifarRecord], idx: &[usize]) -> [(f64, f64); 3] {
    let mut out = [(0.0, 1.0); 3];
    let count = (idx.len() * SIDE * SIDE) as f64;
    for (c, slot) in out.iter_mut().enumerate() {
        let channel = |i: usize| records[i].pixels[c * SIDE * SIDE..(c + 1) * SIDE * SIDE].iter().map(|&b| f64::from(b) / 255.0);
        let mean = idx.iter().flat_map(|&i| channel(i)).sum::<f64>() / count;
        let var = idx.iter().flat_map(|&i| channel(i)).map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
        // A constant channel is only centred.
        *slot = (mean, if var > 0.0 { var.sqrt() } else { 1.0 });
    }
    out
}

/// Loads `dir/data_batch_{1..5}.bin` (those present, at least one) and
/// `dir/test_batch.bin`. Pixels are scaled to `[0, 1]` and standardized per
/// channel with statistics of the selected training subset.
pub fn load_cifar10<T: Scalar>(
    dir: &Path,
    train_per_class: Option<usize>,
    test_per_class: Option<usize>,
    seed: u64,
) -> Result<(Dataset<T>, Dataset<T>)> {
    let mut train = Vec::new();
    let mut found = 0;
    for name in TRAIN_FILES {
        let path = dir.join(name);
        if path.exists() {
            train.extend(read_cifar_file(&path)?);
            found += 1;
        }
    }
    if found == 0 {
        return Err(Error::Data(format!("no data_batch_*.bin files in {}", dir.display())));
    }
    let test = read_cifar_file(&dir.join(TEST_FILE))?;
    let train_idx = stratify(&train, train_per_class, seed, Split::Train)?;
    let test_idx = stratify(&test, test_per_class, seed, Split::Test)?;
    let stats = channel_stats(&train, &train_idx);
    Ok((to_dataset(&train, &train_idx, &stats, Split::Train)?, to_dataset(&test, &test_idx, &stats, Split::Test)?))
}
