//! From-scratch 3D U-Net: architecture descriptor, parameter inventory,
//! weight files and an inference-only forward pass.

mod descriptor;
pub mod ops;
mod weights;

pub use descriptor::{ArchDescriptor, LayerSpec};
pub use ops::FeatureMap;
pub use weights::{
    load_weights, load_weights_file, save_weights, save_weights_file, Tensor, WeightStore, WeightsError,
    WEIGHTS_MAGIC, WEIGHTS_VERSION,
};

use crate::error::{Error, Result};
use crate::volume::{MultiChannelVolume, ScalarVolume, Spacing};

/// Parameter count of a descriptor (weights + biases + norm affines).
pub fn param_count(desc: &ArchDescriptor) -> Result<usize> {
    desc.param_count()
}

/// Fails unless `store` was built for `desc`.
pub fn check_fingerprint(desc: &ArchDescriptor, store: &WeightStore) -> Result<()> {
    let expected = desc.fingerprint();
    if store.fingerprint() != expected {
        return Err(Error::Fingerprint {
            expected,
            found: store.fingerprint().to_string(),
        });
    }
    Ok(())
}

fn conv_block(weights: &WeightStore, prefix: &str, mut x: FeatureMap, c: usize) -> FeatureMap {
    let desc = weights.descriptor();
    for j in 0..desc.convs_per_stage {
        x = ops::conv3d(
            &x,
            weights.expect(&format!("{prefix}.conv{j}.weight")),
            weights.expect(&format!("{prefix}.conv{j}.bias")),
            c,
            desc.kernel,
        );
        if desc.instance_norm {
            ops::instance_norm(
                &mut x,
                weights.expect(&format!("{prefix}.norm{j}.weight")),
                weights.expect(&format!("{prefix}.norm{j}.bias")),
            );
        }
        ops::leaky_relu(&mut x, desc.negative_slope as f32);
    }
    x
}

/// Runs the network on a channel-major patch and returns per-class logits
/// with the same spatial shape.
pub fn forward_features(weights: &WeightStore, input: &FeatureMap) -> Result<FeatureMap> {
    let desc = weights.descriptor();
    if input.channels() != desc.in_channels {
        return Err(Error::Shape(format!(
            "network expects {} input channels, got {}",
            desc.in_channels,
            input.channels()
        )));
    }
    let div = desc.required_divisor();
    if input.shape().iter().any(|n| n % div != 0) {
        return Err(Error::Shape(format!(
            "patch shape {:?} must be divisible by {div} (2^(stages-1)) along every axis",
            input.shape()
        )));
    }

    let n = desc.num_stages();
    let mut skips = Vec::with_capacity(n - 1);
    let mut x = conv_block(weights, "encoder.0", input.clone(), desc.channels[0]);
    for s in 1..n {
        let pooled = ops::max_pool2(&x);
        skips.push(x);
        x = conv_block(weights, &format!("encoder.{s}"), pooled, desc.channels[s]);
    }
    for s in (0..n - 1).rev() {
        let c = desc.channels[s];
        let up = ops::conv_transpose2(
            &x,
            weights.expect(&format!("decoder.{s}.up.weight")),
            weights.expect(&format!("decoder.{s}.up.bias")),
            c,
        );
        let skip = skips.pop().expect("one skip per decoder stage");
        x = conv_block(weights, &format!("decoder.{s}"), up.concat(&skip), c);
    }
    Ok(ops::conv3d(
        &x,
        weights.expect("head.weight"),
        weights.expect("head.bias"),
        desc.out_channels,
        1,
    ))
}

/// Stacks volume channels into a feature map.
pub fn to_feature_map(patch: &MultiChannelVolume) -> FeatureMap {
    let mut data = Vec::with_capacity(patch.num_channels() * patch.channel(0).len());
    for ch in patch.channels() {
        data.extend_from_slice(ch.data());
    }
    FeatureMap::new(patch.num_channels(), patch.shape(), data)
}

pub fn forward(weights: &WeightStore, patch: &MultiChannelVolume) -> Result<FeatureMap> {
    forward_features(weights, &to_feature_map(patch))
}

/// In-place per-voxel softmax across channels.
pub fn softmax_in_place(logits: &mut FeatureMap) -> Result<()> {
    let c = logits.channels();
    if c == 0 {
        return Err(Error::Numeric("softmax over zero channels".into()));
    }
    let n = logits.spatial_len();
    let data = logits.data_mut();
    if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite logit {bad}")));
    }
    let mut buf = vec![0f64; c];
    for i in 0..n {
        let max = (0..c).map(|k| data[k * n + i]).fold(f32::NEG_INFINITY, f32::max) as f64;
        let mut sum = 0.0;
        for (k, e) in buf.iter_mut().enumerate() {
            *e = (data[k * n + i] as f64 - max).exp();
            sum += *e;
        }
        for (k, e) in buf.iter().enumerate() {
            data[k * n + i] = (e / sum) as f32;
        }
    }
    Ok(())
}

/// Per-class probability volumes from logits.
pub fn softmax_channels(logits: &FeatureMap, spacing: Spacing) -> Result<Vec<ScalarVolume>> {
    let mut probs = logits.clone();
    softmax_in_place(&mut probs)?;
    (0..probs.channels())
        .map(|k| ScalarVolume::probability(probs.shape(), spacing, probs.channel(k).to_vec()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Shape;
    use proptest::prelude::*;

    fn toy(channels: Vec<usize>) -> ArchDescriptor {
        ArchDescriptor {
            channels,
            in_channels: 2,
            out_channels: 2,
            kernel: 3,
            convs_per_stage: 2,
            instance_norm: true,
            negative_slope: 0.01,
        }
    }

    fn ramp(c: usize, shape: Shape) -> FeatureMap {
        let n = c * shape.iter().product::<usize>();
        FeatureMap::new(c, shape, (0..n).map(|i| ((i * 37) % 101) as f32 / 50.0 - 1.0).collect())
    }

    #[test]
    fn zero_network_gives_zero_logits() {
        let store = WeightStore::zeros(toy(vec![4, 8, 16])).unwrap();
        let out = forward_features(&store, &ramp(2, [8, 8, 8])).unwrap();
        assert_eq!(out.shape(), [8, 8, 8]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_and_channel_errors() {
        let store = WeightStore::random(toy(vec![2, 4, 8]), 0).unwrap();
        let err = forward_features(&store, &ramp(2, [8, 6, 8])).unwrap_err();
        assert!(err.to_string().contains("divisible by 4"), "{err}");
        assert!(forward_features(&store, &ramp(3, [8, 8, 8])).is_err());
    }

    #[test]
    fn fingerprint_mismatch_detected() {
        let store = WeightStore::random(toy(vec![2, 4]), 0).unwrap();
        assert!(check_fingerprint(&toy(vec![2, 4]), &store).is_ok());
        assert!(matches!(check_fingerprint(&toy(vec![4, 8]), &store), Err(Error::Fingerprint { .. })));
    }

    #[test]
    fn forward_is_deterministic() {
        let store = WeightStore::random(toy(vec![2, 4, 8]), 3).unwrap();
        let x = ramp(2, [8, 4, 12]);
        let a = forward_features(&store, &x).unwrap();
        let b = forward_features(&store, &x).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn vanilla_shape_contract_small_patch() {
        let store = WeightStore::random(ArchDescriptor::vanilla(), 11).unwrap();
        let out = forward_features(&store, &ramp(2, [16, 16, 16])).unwrap();
        assert_eq!((out.channels(), out.shape()), (2, [16, 16, 16]));
    }

    #[test]
    #[ignore = "Vanilla at 64^3 takes tens of seconds on one core"]
    fn vanilla_shape_contract_64() {
        let store = WeightStore::random(ArchDescriptor::vanilla(), 11).unwrap();
        let out = forward_features(&store, &ramp(2, [64, 64, 64])).unwrap();
        assert_eq!((out.channels(), out.shape()), (2, [64, 64, 64]));
    }

    #[test]
    fn softmax_examples() {
        let sp = Spacing::isotropic(1.0).unwrap();
        let equal = FeatureMap::new(2, [1, 1, 1], vec![0.7, 0.7]);
        let p = softmax_channels(&equal, sp).unwrap();
        assert_eq!((p[0].data()[0], p[1].data()[0]), (0.5, 0.5));

        let l = FeatureMap::new(2, [1, 1, 1], vec![0.0, 3f32.ln()]);
        let p = softmax_channels(&l, sp).unwrap();
        assert!((p[0].data()[0] - 0.25).abs() < 1e-6);
        assert!((p[1].data()[0] - 0.75).abs() < 1e-6);

        let bad = FeatureMap::new(2, [1, 1, 1], vec![f32::NAN, 0.0]);
        assert!(matches!(softmax_channels(&bad, sp), Err(Error::Numeric(_))));
    }

    proptest! {
        #[test]
        fn output_shape_matches_input(mult in prop::array::uniform3(1usize..4), seed in any::<u64>()) {
            let store = WeightStore::random(toy(vec![1, 2, 4]), seed).unwrap();
            let shape = mult.map(|m| m * 4);
            let out = forward_features(&store, &ramp(2, shape)).unwrap();
            prop_assert_eq!(out.shape(), shape);
            prop_assert_eq!(out.channels(), 2);
        }

        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            steps in prop::collection::vec(-1280i32..1280, 3 * 4),
            shift in -50i32..50,
        ) {
            // multiples of 1/64 plus integer shifts stay exact in f32
            let sp = Spacing::isotropic(1.0).unwrap();
            let logits: Vec<f32> = steps.iter().map(|&s| s as f32 / 64.0).collect();
            let shift = shift as f32;
            let a = softmax_channels(&FeatureMap::new(3, [1, 2, 2], logits.clone()), sp).unwrap();
            let shifted: Vec<f32> = logits.iter().map(|v| v + shift).collect();
            let b = softmax_channels(&FeatureMap::new(3, [1, 2, 2], shifted), sp).unwrap();
            for i in 0..4 {
                let s: f32 = a.iter().map(|p| p.data()[i]).sum();
                prop_assert!((s - 1.0).abs() < 1e-6);
                for k in 0..3 {
                    prop_assert!((a[k].data()[i] - b[k].data()[i]).abs() < 1e-6);
                }
            }
        }
    }
}
