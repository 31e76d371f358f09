use criterion::{criterion_group, criterion_main, Criterion};
use dentagent_core::clock::{IdGenerator, ManualClock};
use dentagent_core::registry::{ToolRegistry, SHIPPED_CATALOG};
use serde_json::json;
use std::hint::black_box;

fn registry(c: &mut Criterion) {
    c.bench_function("load_catalog", |b| {
        b.iter(|| ToolRegistry::new().load_catalog_str(black_box(SHIPPED_CATALOG), "http://127.0.0.1:9").unwrap())
    });

    let registry = ToolRegistry::new();
    registry.load_catalog_str(SHIPPED_CATALOG, "http://127.0.0.1:9").unwrap();
    let clock = ManualClock::fixed();
    let ids = IdGenerator::sequential("b");
    let args = json!({"image_id": "img-1", "confidence_threshold": "0.35"});
    c.bench_function("format_call", |b| {
        b.iter(|| registry.format_call("intraoral_caries_detector", black_box(&args), &clock, &ids).unwrap())
    });
}

criterion_group!(benches, registry);
criterion_main!(benches);
