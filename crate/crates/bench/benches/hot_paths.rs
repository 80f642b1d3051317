use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::Rng;
use rpn3d::detector::{forward_features, HeadParams, REFERENCE_FEATURE_DIM};
use rpn3d::phantom::{generate, ConstellationTemplate};
use rpn3d::seed::rng_for;
use rpn3d::{generate_anchors, nms3d, pairwise_iou, AnchorSpec, Box3, Detection, FeatureExtractor, Landmark, ReferenceExtractor, NUM_CLASSES};

fn iou(c: &mut Criterion) {
    let grid = generate_anchors(&AnchorSpec::default(), [64, 64, 64]).unwrap();
    let mut rng = rng_for(0, "bench/iou");
    let gts: Vec<Box3> = (0..5).map(|_| Box3::cube(std::array::from_fn(|_| rng.random_range(16.0..48.0)), 14.0).unwrap()).collect();
    c.bench_function("pairwise_iou 262k x 5", |b| b.iter(|| pairwise_iou(black_box(&grid), black_box(&gts)).unwrap()));
}

fn nms(c: &mut Criterion) {
    let grid = generate_anchors(&AnchorSpec::default(), [64, 64, 64]).unwrap();
    let mut rng = rng_for(0, "bench/nms");
    let dets: Vec<Detection> = (0..grid.len())
        .map(|a| {
            let class = Landmark::ALL[rng.random_range(0..5)];
            let score = rng.random_range(0.0..1.0);
            let mut class_scores = [0.0; NUM_CLASSES];
            class_scores[class.class_id()] = score;
            Detection { bbox: grid.box_at(a), class, score, class_scores, anchor_index: a }
        })
        .collect();
    c.bench_function("nms3d 262k", |b| b.iter(|| nms3d(black_box(dets.clone()), 0.1)));
}

fn features_and_heads(c: &mut Criterion) {
    let phantom = generate(&ConstellationTemplate::default(), [96, 96, 96], 0).unwrap();
    let extractor = ReferenceExtractor::default();
    c.bench_function("reference features 96^3", |b| b.iter(|| extractor.extract(black_box(&phantom.volume)).unwrap()));

    let features = extractor.extract(&phantom.volume).unwrap();
    let mut rng = rng_for(0, "bench/heads");
    let mut params = HeadParams::zeros(AnchorSpec::default(), REFERENCE_FEATURE_DIM);
    for v in &mut params.values {
        *v = rng.random_range(-0.1..0.1);
    }
    c.bench_function("head forward 96^3", |b| b.iter(|| forward_features(black_box(&features), &params).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = iou, nms, features_and_heads
}
criterion_main!(benches);
