use co2stream::ingest::{BoundingBox, PolygonMask};
use co2stream::metrics::{f1_confidence_curve_with, map_50_95_with, GroundTruthObject, GroundTruthSample, IouKind, Prediction};
use co2stream::par::Execution;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CLASSES: [&str; 4] = ["car", "truck", "bus", "motorcycle"];

fn random_box(rng: &mut ChaCha8Rng) -> BoundingBox {
    BoundingBox::new(rng.gen_range(0.0..560.0), rng.gen_range(0.0..560.0), rng.gen_range(20.0..80.0), rng.gen_range(20.0..80.0))
}

fn dataset(images: usize, per_image: usize, masks: bool) -> (Vec<Prediction>, Vec<GroundTruthSample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mask = |b: &BoundingBox| masks.then(|| PolygonMask::from_box(b));
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for i in 0..images {
        let id = i.to_string();
        let objects: Vec<GroundTruthObject> = (0..per_image)
            .map(|_| {
                let bbox = random_box(&mut rng);
                GroundTruthObject { class: CLASSES[rng.gen_range(0..4)].into(), bbox, mask: mask(&bbox) }
            })
            .collect();
        for o in &objects {
            let b = &o.bbox;
            let bbox = BoundingBox::new(b.x + rng.gen_range(-8.0..8.0), b.y + rng.gen_range(-8.0..8.0), b.w, b.h);
            preds.push(Prediction { image_id: id.clone(), class: o.class.clone(), confidence: rng.gen(), bbox, mask: mask(&bbox) });
        }
        for _ in 0..per_image / 2 {
            let bbox = random_box(&mut rng);
            preds.push(Prediction {
                image_id: id.clone(),
                class: CLASSES[rng.gen_range(0..4)].into(),
                confidence: rng.gen(),
                bbox,
                mask: mask(&bbox),
            });
        }
        gts.push(GroundTruthSample { image_id: id, objects, image_size: Some((640.0, 640.0)) });
    }
    (preds, gts)
}

fn bench(c: &mut Criterion) {
    let modes = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];
    for (kind, masks, images) in [(IouKind::Box, false, 2000), (IouKind::Mask, true, 200)] {
        let (preds, gts) = dataset(images, 20, masks);
        let mut group = c.benchmark_group(format!("{kind:?}"));
        group.sample_size(10);
        for (name, exec) in modes {
            group.bench_with_input(BenchmarkId::new("map_50_95", name), &exec, |b, &e| b.iter(|| map_50_95_with(&preds, &gts, kind, e)));
            group.bench_with_input(BenchmarkId::new("f1_curve", name), &exec, |b, &e| {
                b.iter(|| f1_confidence_curve_with(&preds, &gts, 0.5, kind, e))
            });
        }
        group.finish();
    }
}

criterion_group!(benches, bench);
criterion_main!(benches);
