use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use evio_bench::{random_events, simulated_frames};
use evio_core::event::LastEventMap;
use evio_core::tracking::Tracker;
use evio_core::PipelineConfig;

fn time_surface(c: &mut Criterion) {
    let events = random_events(640, 480, 100_000, 1);
    c.bench_function("ingest 100k events", |b| {
        b.iter_batched(
            || LastEventMap::new(640, 480),
            |mut m| m.ingest(&events).unwrap(),
            BatchSize::LargeInput,
        )
    });
    let mut map = LastEventMap::new(640, 480);
    map.ingest(&events).unwrap();
    c.bench_function("render 640x480 surface", |b| b.iter(|| map.render(1.0, 0.03).unwrap()));
}

fn tracking(c: &mut Criterion) {
    let cfg = PipelineConfig::default();
    let frames = simulated_frames(1.0, cfg.eta);
    let mut g = c.benchmark_group("tracking");
    g.sample_size(10);
    g.bench_function("track 30 stereo frames", |b| {
        b.iter_batched(
            || Tracker::new(cfg.tracker()).unwrap(),
            |mut t| {
                for f in &frames {
                    t.process(f);
                }
                t
            },
            BatchSize::LargeInput,
        )
    });
    g.finish();
}

criterion_group!(benches, time_surface, tracking);
criterion_main!(benches);
