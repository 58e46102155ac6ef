#[path = "support/oracles.rs"]
mod oracles;

use edgeclass_core::graph::OpKind;
use edgeclass_core::run_outputs;
use oracles::{random_case, rel_err, KERNEL_OPS};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn check(op: OpKind, seed: u64) -> Result<(), TestCaseError> {
    let case = random_case(op, &mut ChaCha8Rng::seed_from_u64(seed));
    let out = run_outputs(&case.bundle, &case.input).map_err(|e| TestCaseError::fail(format!("{}: {e}", case.label)))?;
    prop_assert_eq!(out[0].shape(), case.shape.as_slice(), "{}", case.label);
    let err = rel_err(&out[0].to_f32_vec(), &case.expected);
    prop_assert!(err <= 1e-5, "{:?} {}: rel err {}", op, case.label, err);
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv2d_matches_oracle(seed in any::<u64>()) { check(OpKind::Conv2D, seed)?; }

    #[test]
    fn depthwise_matches_oracle(seed in any::<u64>()) { check(OpKind::DepthwiseConv2D, seed)?; }

    #[test]
    fn matmul_matches_oracle(seed in any::<u64>()) { check(OpKind::MatMul, seed)?; }

    #[test]
    fn mean_matches_oracle(seed in any::<u64>()) { check(OpKind::Mean, seed)?; }

    #[test]
    fn pad_matches_oracle(seed in any::<u64>()) { check(OpKind::Pad, seed)?; }

    #[test]
    fn add_matches_oracle(seed in any::<u64>()) { check(OpKind::AddV2, seed)?; }

    #[test]
    fn mul_matches_oracle(seed in any::<u64>()) { check(OpKind::Mul, seed)?; }

    #[test]
    fn relu6_matches_oracle(seed in any::<u64>()) { check(OpKind::Relu6, seed)?; }
}

#[test]
fn every_op_has_a_case() {
    for (i, op) in KERNEL_OPS.into_iter().enumerate() {
        check(op, i as u64).unwrap();
    }
}

#[test]
fn same_padding_keeps_spatial_size_at_stride_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let case = random_case(OpKind::Conv2D, &mut rng);
        let x = case.input.shape();
        if case.label.contains("s[1, 1] same=true") {
            assert_eq!(&case.shape[1..3], &x[1..3]);
        }
    }
}

#[test]
fn wider_broadcasts_are_rejected() {
    use edgeclass_core::bundle::GraphBuilder;
    use edgeclass_core::graph::Attrs;
    use edgeclass_core::{Metadata, PreprocessSpec, Tensor, ValueRange, Variant};

    let mut g = GraphBuilder::new();
    g.input("x", vec![3, 4]);
    let c = g.constant("c", Tensor::from_f32(vec![3, 1], vec![1.0; 3]).unwrap());
    g.op("y", OpKind::AddV2, &["x", &c], Attrs::default());
    g.output("y");
    let meta = Metadata::new("t", Variant::Fp32, PreprocessSpec::new(1, 1, ValueRange::ZeroOne));
    assert!(g.build(meta).is_err());
}
