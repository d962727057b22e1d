use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use refcast::par::Exec;
use refcast::synthesis::SynthesisModel;
use refcast::trainer::{synth_data_gen, train, Experiment, ExperimentConfig, ModelPredictor, SynthSpec, Task};

const EXECS: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn config(exec: Exec) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk(Task::Impute, 0).with_exec(exec);
    cfg.train.max_epochs = 1;
    cfg
}

fn bench_retrieval(c: &mut Criterion) {
    let db = synth_data_gen(&SynthSpec::desk(0)).unwrap();
    let mut group = c.benchmark_group("prepare_samples");
    group.sample_size(10);
    for (name, exec) in EXECS {
        let cfg = config(exec);
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| Experiment::prepare(&db, &cfg).unwrap()));
    }
    group.finish();
}

fn bench_training(c: &mut Criterion) {
    let db = synth_data_gen(&SynthSpec::desk(0)).unwrap();
    let cfg = config(Exec::Sequential);
    let exp = Experiment::prepare(&db, &cfg).unwrap();
    let mut subset = exp.train.clone();
    subset.samples.truncate(64);
    let model = SynthesisModel::new(cfg.model_config(5, subset.v), 0).unwrap();

    let mut group = c.benchmark_group("train_epoch");
    group.sample_size(10);
    for (name, exec) in EXECS {
        let tcfg = config(exec).train;
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                let mut m = model.clone();
                train(&mut m, &subset, None, &tcfg).unwrap()
            })
        });
    }
    group.finish();

    let mut group = c.benchmark_group("evaluate");
    group.sample_size(10);
    for (name, exec) in EXECS {
        let spec_cfg = config(exec);
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| exp.evaluate_test(&spec_cfg, &ModelPredictor(&model)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_retrieval, bench_training);
criterion_main!(benches);
