//! Fixtures and process helpers shared by the CLI test targets.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use afie_core::{KernelShape, TensorArchive, TopologyDescriptor, WeightTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Conv widths of the CIFAR-10 VGG-16 feature extractor.
pub const VGG16_WIDTHS: [usize; 13] = [
    64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512,
];

/// Published per-layer AFIE values for VGG-16 (one training epoch).
pub const VGG16_AFIE: [f64; 13] = [
    0.016, 0.064, 0.032, 0.038, 0.019, 0.022, 0.011, 0.012, 0.012, 0.012, 0.012, 0.012, 0.012,
];

pub fn afie(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_afie"))
        .args(args)
        .output()
        .expect("spawn afie")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf-8 stdout")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("utf-8 stderr")
}

pub fn random_tensor(name: &str, shape: KernelShape, rng: &mut impl Rng) -> WeightTensor {
    let data = (0..shape.len())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    WeightTensor::new(name, shape, data).unwrap()
}

/// Two-layer chain: conv0 (3 → 8, 3×3) feeding conv1 (8 → 6, 3×3).
pub fn chain_fixture(seed: u64) -> TensorArchive {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = random_tensor("conv0", KernelShape::new(3, 8, 3, 3), &mut rng);
    let b = random_tensor("conv1", KernelShape::new(8, 6, 3, 3), &mut rng);
    TensorArchive::new(
        vec![a, b],
        Some(TopologyDescriptor::chain(vec![
            "conv0".into(),
            "conv1".into(),
        ])),
    )
    .unwrap()
}

/// Same layers as [`chain_fixture`] but without topology metadata.
pub fn loose_fixture(seed: u64) -> TensorArchive {
    let chained = chain_fixture(seed);
    TensorArchive::new(chained.tensors().to_vec(), None).unwrap()
}

/// Thirteen layers with VGG-16 filter counts; only `O` matters for planning.
pub fn vgg16_stub() -> TensorArchive {
    let tensors = VGG16_WIDTHS
        .iter()
        .enumerate()
        .map(|(l, o)| {
            WeightTensor::new(
                format!("conv{}", l + 1),
                KernelShape::new(1, *o, 1, 1),
                vec![1.0; *o],
            )
            .unwrap()
        })
        .collect();
    TensorArchive::new(tensors, None).unwrap()
}

pub fn save(dir: &Path, name: &str, archive: &TensorArchive) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, archive.to_bytes().unwrap()).unwrap();
    path
}

pub fn save_json(dir: &Path, name: &str, value: &serde_json::Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_vec(value).unwrap()).unwrap();
    path
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
