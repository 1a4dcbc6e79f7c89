use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use groundkit::grounding::{build_examples, iou, mil_loss, GroundingConfig, MilItem, MilModel};
use groundkit::synth::{gen_grounding_corpus, SynthSpec};
use groundkit::{BBox, LinearLayer, Rng};

fn linear(c: &mut Criterion) {
    let mut rng = Rng::new(1);
    let layer = LinearLayer::new(4096, 256, &mut rng);
    let x: Vec<f64> = (0..4096).map(|_| rng.normal()).collect();
    c.bench_function("linear_forward_4096x256", |b| {
        b.iter(|| layer.forward(black_box(&x)).unwrap())
    });
}

fn mil_step(c: &mut Criterion) {
    let spec = SynthSpec {
        n_entities: 8,
        frames_per_entity: 8,
        ..SynthSpec::default()
    };
    let corpus = gen_grounding_corpus(&spec).unwrap();
    let examples = build_examples(&corpus.pairs, &corpus.frames, &corpus.embeddings).unwrap();
    let items: Vec<MilItem> = examples.iter().map(MilItem::from).collect();
    let cfg = GroundingConfig {
        embed_dim: spec.embed_dim,
        ..GroundingConfig::mil()
    };
    let mut rng = Rng::new(2);
    let model = MilModel::new(spec.visual_dim, spec.embed_dim, &cfg, &mut rng);
    c.bench_function("mil_loss_batch64", |b| {
        b.iter(|| mil_loss(&model, black_box(&items), 0.01, &mut rng).unwrap())
    });
}

fn boxes(c: &mut Criterion) {
    let a = BBox::new(10.0, 20.0, 200.0, 180.0).unwrap();
    let b = BBox::new(50.0, 40.0, 260.0, 300.0).unwrap();
    c.bench_function("iou", |bench| {
        bench.iter(|| iou(black_box(&a), black_box(&b)))
    });
}

criterion_group!(kernels, linear, mil_step, boxes);
criterion_main!(kernels);
