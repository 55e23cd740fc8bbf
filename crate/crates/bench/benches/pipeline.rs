use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stilltrack::autolabel::autolabel_recording;
use stilltrack::eval::map_eval;
use stilltrack::events::{decode_event_file, encode_event_file, window_iter};
use stilltrack::repr::event_volume;
use stilltrack::synth::{generate, occlusion_scenario, OcclusionParams};
use stilltrack::{AutoLabelParams, Event, EventStream, LabelTable, LabeledBox};

fn stream(n: usize) -> EventStream {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut t = 0;
    let events = (0..n)
        .map(|_| {
            t += rng.random_range(0..2u64);
            Event::new(t, rng.random_range(0..640), rng.random_range(0..480), rng.random_range(0..2))
        })
        .collect();
    EventStream {
        width: 640,
        height: 480,
        events,
    }
}

fn codec(c: &mut Criterion) {
    let mut g = c.benchmark_group("codec");
    for n in [10_000usize, 1_000_000] {
        let s = stream(n);
        let bytes = encode_event_file(&s);
        g.throughput(Throughput::Elements(n as u64));
        g.bench_with_input(BenchmarkId::new("encode", n), &s, |b, s| b.iter(|| encode_event_file(black_box(s))));
        g.bench_with_input(BenchmarkId::new("decode", n), &bytes, |b, bytes| {
            b.iter(|| decode_event_file(black_box(bytes)).unwrap())
        });
    }
    g.finish();
}

fn volume(c: &mut Criterion) {
    let s = stream(200_000);
    let win = window_iter(&s, 50_000).unwrap().next().unwrap();
    let mut g = c.benchmark_group("event_volume");
    g.throughput(Throughput::Elements(win.events.len() as u64));
    for bins in [1usize, 5, 10] {
        g.bench_with_input(BenchmarkId::from_parameter(bins), &bins, |b, &bins| {
            b.iter(|| event_volume(black_box(&win), bins, 480, 640).unwrap())
        });
    }
    g.finish();
}

fn autolabel(c: &mut Criterion) {
    let scene = generate(&occlusion_scenario(&OcclusionParams::default())).unwrap();
    let params = AutoLabelParams::default();
    c.bench_function("autolabel/occlusion_200_frames", |b| {
        b.iter(|| autolabel_recording(black_box(&scene.stream), black_box(&scene.labels), &params).unwrap())
    });
}

fn average_precision(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut gts = LabelTable::default();
    let mut dets = LabelTable::default();
    for f in 1..=500 {
        for k in 0..10 {
            let b = LabeledBox::new(
                rng.random_range(0.0..600.0),
                rng.random_range(0.0..440.0),
                rng.random_range(8.0..40.0),
                rng.random_range(8.0..40.0),
                k % 3,
                k as u64,
            );
            let mut d = b.clone().with_confidence(rng.random_range(0.0..1.0));
            d.x += rng.random_range(-4.0..4.0);
            gts.frames.entry(f).or_default().push(b);
            dets.frames.entry(f).or_default().push(d);
        }
    }
    c.bench_function("map_eval/5000_boxes", |b| b.iter(|| map_eval(black_box(&dets), black_box(&gts))));
}

criterion_group!(benches, codec, volume, autolabel, average_precision);
criterion_main!(benches);
