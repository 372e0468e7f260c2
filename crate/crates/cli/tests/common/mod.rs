//! Shared fixtures for integration tests.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct IdxFixture {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    pub classes: usize,
}

/// Writes a deterministic 10-class IDX image dataset. Each class has a
/// distinct bright-pixel signature plus noise, so a small MLP separates the
/// classes easily.
pub fn make_idx_fixture(dir: &Path, seed: u64, per_class_train: usize, per_class_test: usize) -> IdxFixture {
    let classes = 10usize;
    let (rows, cols) = (6u32, 6u32);
    let dim = (rows * cols) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let sample = |class: usize, rng: &mut ChaCha8Rng| -> Vec<u8> {
        (0..dim)
            .map(|p| {
                let base: i32 = if p % classes == class { 200 } else { 30 };
                let noise = rng.random_range(-25i32..=25);
                (base + noise).clamp(0, 255) as u8
            })
            .collect()
    };

    let write_split = |name: &str, per_class: usize, rng: &mut ChaCha8Rng| {
        let n = classes * per_class;
        let mut images = Vec::with_capacity(16 + n * dim);
        images.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        images.extend_from_slice(&(n as u32).to_be_bytes());
        images.extend_from_slice(&rows.to_be_bytes());
        images.extend_from_slice(&cols.to_be_bytes());
        let mut labels = Vec::with_capacity(8 + n);
        labels.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        labels.extend_from_slice(&(n as u32).to_be_bytes());
        for c in 0..classes {
            for _ in 0..per_class {
                images.extend(sample(c, rng));
                labels.push(c as u8);
            }
        }
        let img_path = dir.join(format!("{name}-images.idx"));
        let lbl_path = dir.join(format!("{name}-labels.idx"));
        fs::write(&img_path, images).unwrap();
        fs::write(&lbl_path, labels).unwrap();
        (img_path, lbl_path)
    };

    let (train_images, train_labels) = write_split("train", per_class_train, &mut rng);
    let (test_images, test_labels) = write_split("test", per_class_test, &mut rng);
    IdxFixture {
        train_images,
        train_labels,
        test_images,
        test_labels,
        classes,
    }
}
