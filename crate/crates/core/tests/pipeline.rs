use refcast::data::{load_dataset, write_dataset};
use refcast::par::Exec;
use refcast::trainer::{run_sweep, synth_data_gen, ExperimentConfig, SynthSpec, Task};

fn small(task: Task) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk(task, 5);
    cfg.window = 12;
    cfg.d = 8;
    cfg.ks = vec![0, 2];
    cfg.train.max_epochs = 3;
    cfg
}

#[test]
fn dataset_survives_disk_round_trip() {
    let db = synth_data_gen(&SynthSpec::new(10, 60, 12, 1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&db, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.dims(), db.dims());
    assert_eq!(back.values(), db.values());
    assert_eq!(back.series_ids(), db.series_ids());
    assert_eq!(back.graph().edges().collect::<Vec<_>>(), db.graph().edges().collect::<Vec<_>>());
}

#[test]
fn sweep_is_identical_under_both_executors() {
    let db = synth_data_gen(&SynthSpec::new(16, 96, 12, 2)).unwrap();
    for task in [Task::Forecast, Task::Impute] {
        let seq = run_sweep(&db, &small(task).with_exec(Exec::Sequential)).unwrap();
        let par = run_sweep(&db, &small(task).with_exec(Exec::Parallel)).unwrap();
        assert_eq!(seq.rows, par.rows, "{task:?}");
        assert_eq!(seq.rows.len(), 2 * 4);
        assert!(seq.rows.iter().all(|r| r.rmse.is_finite() && r.mae <= r.rmse + 1e-12));
    }
}
