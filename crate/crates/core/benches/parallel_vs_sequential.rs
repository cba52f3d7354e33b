use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use progressive_sfm::par::Execution;
use progressive_sfm::pipeline::run::{generate, run_events};
use progressive_sfm::pipeline::{Pipeline, Scenario};
use progressive_sfm::registration::collect_constraints;
use progressive_sfm::simulator::Ordering;

fn temple() -> Scenario {
    let mut s = Scenario::default();
    s.scene.fold = 6;
    s.stream.confusion_rate = 0.5;
    s.stream.ordering = Ordering::Shuffled { seed: 0 };
    s
}

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn whole_stream(c: &mut Criterion) {
    let s = temple();
    let (scene, doc) = generate(&s).unwrap();
    let mut g = c.benchmark_group("run_60_views");
    g.sample_size(10).measurement_time(Duration::from_secs(30));
    for (name, exec) in MODES {
        let mut cfg = s.resolved().3;
        cfg.execution = exec;
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_events(cfg, Some(scene.clone()), black_box(&doc.events), None, 1).unwrap())
        });
    }
    g.finish();
}

fn constraints(c: &mut Criterion) {
    let s = temple();
    let (scene, doc) = generate(&s).unwrap();
    let cfg = s.resolved().3;
    // stop where the stream has several clusters with edges between them
    let mut p = Pipeline::new(cfg, Some(scene));
    for ev in &doc.events[..38] {
        p.process_event(ev).unwrap();
    }
    let mut g = c.benchmark_group("collect_constraints");
    g.sample_size(20);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                collect_constraints(p.reconstructions(), p.partition(), p.graph(), p.features(), &cfg.constraints(), black_box(exec))
            })
        });
    }
    g.finish();
}

criterion_group!(benches, constraints, whole_stream);
criterion_main!(benches);
