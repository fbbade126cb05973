//! Deterministic fixtures for the criterion benchmarks.

use stablespike::data::{SynthDataset, SynthParams};
use stablespike::{build_architecture, Arch, FrameDataset, SnnModel, Tensor};

/// Cheap deterministic fill in `[-1, 1)`.
pub fn pattern(shape: &[usize], salt: u64) -> Tensor {
    Tensor::from_fn(shape, |i| {
        let x = (i as u64).wrapping_add(salt).wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 40;
        x as f64 / (1u64 << 23) as f64 - 1.0
    })
}

/// First conv layer of the mini network on a batch of 32 frames of 24x24.
pub fn conv_inputs() -> (Tensor, Tensor) {
    (pattern(&[32, 2, 24, 24], 1), pattern(&[16, 2, 3, 3], 2))
}

/// Default synthetic training split binned at `T = 4`, and the mini conv model.
pub fn training_fixture() -> (FrameDataset, SnnModel) {
    let p = SynthParams {
        train_count: 64,
        test_count: 0,
        ..SynthParams::default()
    };
    let ds = SynthDataset::generate(0, &p).expect("synthetic data");
    let frames = FrameDataset::from_streams(&ds.train, 4, 24, 24, 4).expect("binning");
    let model = build_architecture(Arch::ConvSnnMini, [2, 24, 24], 4, 0).expect("model");
    (frames, model)
}
