//! Assembly, matvec and resolvent solve: sequential vs data-parallel.
//!
//! With the default `parallel` feature each benchmark runs inside a
//! one-thread pool and inside the full pool. Built with
//! `--no-default-features` only the sequential variant exists.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use nlhomog::discrete::{assemble_form, AssemblyOptions, Grid, MeasureWeights, TestFunction};
use nlhomog::env::{Distribution, FieldSpec};
use nlhomog::kernel::{CoefficientForm, ConeSpec, KernelParams};
use nlhomog::solver::{solve_resolvent, ResolventProblem};

fn setup(n: usize) -> (Grid, nlhomog::kernel::Medium, KernelParams) {
    let grid = Grid::new(1, 8.0, n).unwrap();
    let form = CoefficientForm::Product {
        nu1: FieldSpec::iid(Distribution::Uniform { low: 0.5, high: 1.5 }),
        nu2: None,
    };
    (grid, form.realize(1, 1).unwrap(), KernelParams::new(1.0, 1).unwrap())
}

type Runner = Box<dyn Fn(&mut (dyn FnMut() + Send))>;

fn pools() -> Vec<(String, Runner)> {
    let mut out: Vec<(String, Runner)> = Vec::new();
    #[cfg(feature = "parallel")]
    {
        let mut counts = vec![1, rayon::current_num_threads()];
        counts.dedup();
        for threads in counts {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            out.push((format!("{threads}-threads"), Box::new(move |f: &mut (dyn FnMut() + Send)| pool.install(f))));
        }
    }
    #[cfg(not(feature = "parallel"))]
    out.push(("sequential".into(), Box::new(|f: &mut (dyn FnMut() + Send)| f())));
    out
}

fn bench(c: &mut Criterion) {
    let n = 2048;
    let (grid, medium, params) = setup(n);
    let opts = AssemblyOptions::default();
    let form = assemble_form(&grid, &medium, &ConeSpec::full(), &params, 0.125, &opts).unwrap();
    let m = MeasureWeights::lebesgue(&grid);
    let f = TestFunction::bump(vec![0.0], 1.0, 1.0).sample(&grid).unwrap();
    let mut group = c.benchmark_group("core");
    group.sample_size(10);
    for (name, run) in pools() {
        group.bench_function(BenchmarkId::new("assemble", &name), |b| {
            b.iter(|| {
                run(&mut || {
                    std::hint::black_box(assemble_form(&grid, &medium, &ConeSpec::full(), &params, 0.125, &opts).unwrap());
                })
            })
        });
        let mut y = vec![0.0; n];
        group.bench_function(BenchmarkId::new("matvec", &name), |b| {
            b.iter(|| run(&mut || form.apply_neg_generator(&f, &mut y)))
        });
        group.bench_function(BenchmarkId::new("solve", &name), |b| {
            b.iter(|| {
                run(&mut || {
                    let p = ResolventProblem {
                        form: &form,
                        measure: &m,
                        lambda: 1.0,
                        rhs: &f,
                    };
                    std::hint::black_box(solve_resolvent(&p, 1e-9, 10_000).unwrap());
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
