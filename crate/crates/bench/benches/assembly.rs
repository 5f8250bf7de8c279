use capillary::Assembler;
use capillary_bench::Fixture;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn assembly(c: &mut Criterion) {
    let mut group = c.benchmark_group("assembly");
    for h in [0.1, 0.05] {
        let f = Fixture::warped_disk(h);
        let asm = Assembler::new(&f.mesh, &f.metric, &f.problem).unwrap();
        let n = f.mesh.num_vertices();
        group.bench_with_input(BenchmarkId::new("residual", n), &f, |b, f| {
            b.iter(|| asm.residual(&f.state, 1.0).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("residual_and_jacobian", n), &f, |b, f| {
            b.iter(|| asm.residual_and_jacobian(&f.state, 1.0).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("energy", n), &f, |b, f| {
            b.iter(|| asm.energy(&f.state, 1.0).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, assembly);
criterion_main!(benches);
