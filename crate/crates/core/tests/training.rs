use edgeclass_core::data::{augment, synth_dataset};
use edgeclass_core::engine::{image_to_tensor, run_outputs};
use edgeclass_core::fixture::{micro_mobilenet, FEATURE_WIDTH};
use edgeclass_core::train::{
    attach_head, features_of, train_head, FeatureExtractor, Head, Loss, Samples, TrainConfig, TrainError,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn numeric_grad(head: &Head, x: &[Vec<f64>], y: &[usize]) -> Vec<f64> {
    let eps = 1e-6;
    (0..head.params.len())
        .map(|i| {
            let mut h = head.clone();
            h.params[i] += eps;
            let up = h.loss_and_grad(x, y).0;
            h.params[i] -= 2.0 * eps;
            let down = h.loss_and_grad(x, y).0;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`.
fn grad_rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff = norm(a.iter().zip(n).map(|(p, q)| p - q));
    let scale = norm(a.iter().copied()).max(norm(n.iter().copied()));
    if scale == 0.0 { 0.0 } else { diff / scale }
}

fn blobs(n: usize, dim: usize, classes: usize, seed: u64) -> (Vec<Vec<f32>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f32>> = (0..classes).map(|_| (0..dim).map(|_| rng.random_range(-4.0..4.0)).collect()).collect();
    (0..n)
        .map(|i| {
            let c = i % classes;
            let row = centers[c]
                .iter()
                .map(|m| m + Distribution::<f32>::sample(&StandardNormal, &mut rng) * 0.5 + 10.0)
                .collect();
            (row, c)
        })
        .unzip()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn analytic_gradient_matches_finite_differences(
        seed in any::<u64>(),
        inputs in 1usize..10,
        outputs in prop::sample::select(vec![1usize, 3, 4]),
        batch in 1usize..12,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut head = Head::new(inputs, outputs, seed);
        head.params.iter_mut().for_each(|p| *p = StandardNormal.sample(&mut rng));
        let classes = outputs.max(2);
        let x: Vec<Vec<f64>> = (0..batch).map(|_| (0..inputs).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
        let y: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes)).collect();
        let (_, analytic) = head.loss_and_grad(&x, &y);
        let numeric = numeric_grad(&head, &x, &y);
        let err = grad_rel_err(&analytic, &numeric);
        prop_assert!(err <= 1e-4, "rel err {err}");
    }
}

#[test]
fn learns_separable_binary_and_multiclass() {
    for (classes, loss) in [(2, Loss::BinaryCrossEntropy), (3, Loss::CategoricalCrossEntropy)] {
        let (x, y) = blobs(300, 6, classes, classes as u64);
        let (vx, vy) = blobs(60, 6, classes, classes as u64);
        let cfg = TrainConfig { epochs: 20, loss, ..Default::default() };
        let (head, log) = train_head(Samples::new(&x, &y).unwrap(), Some(Samples::new(&vx, &vy).unwrap()), classes, &cfg).unwrap();
        let acc = vx.iter().zip(&vy).filter(|(r, &l)| head.predict(r) == l).count() as f64 / vy.len() as f64;
        assert!(acc >= 0.95, "{classes} classes: {acc}");
        assert_eq!(log.series("train").len(), 20);
        assert_eq!(log.series("val").len(), 20);
        let best = log.series("val")[log.best_epoch - 1].accuracy;
        assert!(log.series("val").iter().all(|r| r.accuracy <= best));
        assert!(log.series("val")[..log.best_epoch - 1].iter().all(|r| r.accuracy < best));
    }
}

#[test]
fn training_is_seeded() {
    let (x, y) = blobs(64, 4, 2, 1);
    let cfg = TrainConfig { epochs: 3, ..Default::default() };
    let run = || train_head(Samples::new(&x, &y).unwrap(), None, 2, &cfg).unwrap();
    assert_eq!(run().0, run().0);
}

#[test]
fn training_input_errors() {
    let x = vec![vec![0.0f32; 2]; 4];
    let cfg = TrainConfig::default();
    assert!(matches!(train_head(Samples::new(&x, &[0; 4]).unwrap(), None, 2, &cfg), Err(TrainError::SingleClass)));
    assert!(matches!(Samples::new(&x, &[0; 3]), Err(TrainError::LengthMismatch(4, 3))));
    assert!(matches!(
        train_head(Samples::new(&x, &[0, 1, 2, 0]).unwrap(), None, 2, &cfg),
        Err(TrainError::LabelOutOfRange { label: 2, .. })
    ));
    assert!(train_head(Samples::new(&x, &[0, 1, 2, 0]).unwrap(), None, 3, &cfg).is_err());
}

#[test]
fn attached_head_matches_host_logits() {
    let backbone = micro_mobilenet(4);
    let dir = tempfile::tempdir().unwrap();
    let m = synth_dataset(dir.path(), 6, 32, 2).unwrap();
    let feats = FeatureExtractor::new(&backbone).extract(&m).unwrap();
    assert!(feats.iter().all(|r| r.len() == FEATURE_WIDTH));
    let labels = m.labels();
    let cfg = TrainConfig { epochs: 5, ..Default::default() };
    let (head, _) = train_head(Samples::new(&feats, &labels).unwrap(), None, 2, &cfg).unwrap();
    let full = attach_head(&backbone, &head, &m.classes).unwrap();
    assert_eq!(full.metadata.classes, m.classes);
    assert_eq!(full.metadata.positive_class, Some(head.positive_class));
    for (i, row) in feats.iter().enumerate() {
        let img = m.load_image(i, &Default::default()).unwrap();
        let out = run_outputs(&full, &image_to_tensor(&img, &full.metadata.preprocess)).unwrap();
        let got = out[0].to_f32_vec()[0];
        let want = head.logits(row)[0] as f32;
        assert!((got - want).abs() <= 1e-4 * want.abs().max(1.0), "{got} vs {want}");
    }
    assert!(matches!(attach_head(&full, &head, &m.classes), Err(TrainError::FeatureNodeConsumed(_))));
}

#[test]
fn feature_cache_skips_recomputation() {
    let backbone = micro_mobilenet(1);
    let data = tempfile::tempdir().unwrap();
    let cache = tempfile::tempdir().unwrap();
    let m = augment(&synth_dataset(data.path(), 3, 32, 1).unwrap(), 2, 4).unwrap();

    let first = FeatureExtractor::new(&backbone).with_cache(cache.path());
    let a = first.extract(&m).unwrap();
    assert_eq!(first.forwards(), m.items.len());

    let second = FeatureExtractor::new(&backbone).with_cache(cache.path());
    let b = second.extract(&m).unwrap();
    assert_eq!(second.forwards(), 0);
    assert_eq!(a, b);

    let other = micro_mobilenet(2);
    let third = FeatureExtractor::new(&other).with_cache(cache.path());
    third.extract(&m).unwrap();
    assert_eq!(third.forwards(), m.items.len());
}

#[test]
fn batched_features_match_single_rows() {
    let backbone = micro_mobilenet(1);
    let dir = tempfile::tempdir().unwrap();
    let m = synth_dataset(dir.path(), 2, 32, 1).unwrap();
    let spec = &backbone.metadata.preprocess;
    let tensors: Vec<_> = (0..4).map(|i| image_to_tensor(&m.load_image(i, &Default::default()).unwrap(), spec)).collect();
    let batch = edgeclass_core::engine::stack_batch(&tensors).unwrap();
    let rows = features_of(&backbone, &batch).unwrap();
    for (t, row) in tensors.iter().zip(&rows) {
        assert_eq!(&features_of(&backbone, t).unwrap()[0], row);
    }
}
