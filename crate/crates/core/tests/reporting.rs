use drilmpc_core::iterate::{run_experiment, Checkpoint, ExperimentOptions, IterationSettings};
use drilmpc_core::report::{
    emit_report, parse_summary, parse_trajectories_csv, summary_json, trajectories_csv, verify_report, ReportPaths,
};
use drilmpc_core::Scenario;

#[test]
fn benchmark_tables_round_trip_and_verify() {
    let s = Scenario::benchmark();
    let report = run_experiment(&s, &IterationSettings::default(), 3, 4, Default::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = ReportPaths::in_dir(dir.path());
    emit_report(&report, &s, &paths).unwrap();

    let rows = parse_trajectories_csv(&std::fs::read_to_string(&paths.trajectories).unwrap()).unwrap();
    let expected_rows = report.seed_trajectory.states.len()
        + report
            .iterations
            .iter()
            .map(|r| r.trajectory.len() + 1)
            .sum::<usize>();
    assert_eq!(rows.len(), expected_rows);
    for rec in &report.iterations {
        let states: Vec<_> = rows
            .iter()
            .filter(|r| r.iter == rec.iteration)
            .map(|r| r.state.clone())
            .collect();
        assert_eq!(states, rec.trajectory.states);
    }

    let summary = parse_summary(&std::fs::read_to_string(&paths.summary).unwrap()).unwrap();
    assert_eq!(summary, report.summary());
    assert_eq!(verify_report(&s, &summary, &rows).unwrap(), Vec::<String>::new());
}

#[test]
fn tampered_report_fails_verification() {
    let s = Scenario::benchmark();
    let report = run_experiment(&s, &IterationSettings::default(), 5, 2, Default::default()).unwrap();
    let mut rows = parse_trajectories_csv(&trajectories_csv(&report, &s).unwrap()).unwrap();
    let summary = parse_summary(&summary_json(&report).unwrap()).unwrap();
    let k = rows.iter().position(|r| r.iter == 1 && r.t == 3).unwrap();
    rows[k].state[0] += 1e-3;
    assert!(!verify_report(&s, &summary, &rows).unwrap().is_empty());
}

#[test]
fn resuming_from_a_checkpoint_reproduces_the_run() {
    let s = Scenario::benchmark();
    let settings = IterationSettings::default();
    let dir = tempfile::tempdir().unwrap();
    let full = run_experiment(
        &s,
        &settings,
        21,
        4,
        ExperimentOptions {
            checkpoint_dir: Some(dir.path()),
            resume: None,
        },
    )
    .unwrap();
    let checkpoint = Checkpoint::load(&dir.path().join("checkpoint_2.json")).unwrap();
    assert_eq!(checkpoint.state.iteration, 2);
    let resumed = run_experiment(
        &s,
        &settings,
        21,
        4,
        ExperimentOptions {
            checkpoint_dir: None,
            resume: Some(checkpoint),
        },
    )
    .unwrap();
    assert_eq!(summary_json(&resumed).unwrap(), summary_json(&full).unwrap());
    assert_eq!(trajectories_csv(&resumed, &s).unwrap(), trajectories_csv(&full, &s).unwrap());
}
