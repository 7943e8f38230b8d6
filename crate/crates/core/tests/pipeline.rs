use dapdb_core::experiment::{generate, run_experiment};
use dapdb_core::metrics::{csv_export, csv_import};
use dapdb_core::oracle::attach_reference;
use dapdb_core::{ExperimentSpec, Family, Method, Params, ProblemInstance, RunOptions, SafeStep, Scheduler, Solver};
use nalgebra::DVector;

fn solved(family: Family, seed: u64) -> ProblemInstance {
    let mut inst = generate(family, 6, 5, 7, seed, seed).unwrap();
    attach_reference(&mut inst, 1e-9).unwrap();
    inst
}

fn same(a: &[DVector<f64>], b: &[DVector<f64>]) -> bool {
    a.iter()
        .zip(b)
        .all(|(p, q)| p.iter().zip(q.iter()).all(|(x, y)| x.to_bits() == y.to_bits()))
}

#[test]
fn dapdb0_at_certified_step_matches_baseline() {
    let inst = solved(Family::Qp, 4);
    let params = Params {
        kappa: 1.0,
        safe_step: SafeStep::Certified,
        ..Params::qp()
    };
    let mut a = Solver::new(&inst, Method::Dapdb0, params.resolve(&inst, Method::Dapdb0).unwrap()).unwrap();
    let mut b = Solver::new(&inst, Method::Dapd, params.resolve(&inst, Method::Dapd).unwrap()).unwrap();
    for _ in 0..300 {
        let ra = a.step().unwrap();
        b.step().unwrap();
        assert!(!ra.did_contract);
        assert!(same(&a.iterates(), &b.iterates()));
    }
    assert_eq!(a.total_backtracks(), 0);
}

#[test]
fn parallel_scheduler_matches_sequential() {
    let inst = solved(Family::Qcqp, 2);
    let seq = Params::qcqp();
    let par = Params {
        scheduler: Scheduler::Parallel,
        ..Params::qcqp()
    };
    let mut a = Solver::new(&inst, Method::Dapdb, seq.resolve(&inst, Method::Dapdb).unwrap()).unwrap();
    let mut b = Solver::new(&inst, Method::Dapdb, par.resolve(&inst, Method::Dapdb).unwrap()).unwrap();
    for _ in 0..200 {
        assert_eq!(a.step().unwrap(), b.step().unwrap());
    }
    assert!(same(&a.iterates(), &b.iterates()));
    assert_eq!(a.ledger(), b.ledger());
}

#[test]
fn backtracking_run_makes_progress() {
    let inst = solved(Family::Qcqp, 3);
    let config = Params::qcqp().resolve(&inst, Method::Dapdb).unwrap();
    let trace = dapdb_core::run::run(&inst, Method::Dapdb, config, RunOptions::new(1500)).unwrap();
    let first = &trace.records[0];
    let last = trace.last().unwrap();
    assert!(last.log_rel_subopt < first.log_rel_subopt);
    assert!(last.total_backtracks > 0);
    assert!(last.avg_grad_calls > 1500.0);
}

#[test]
fn instance_and_trace_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let inst = solved(Family::Qcqp, 5);
    let path = dir.path().join("inst.json");
    inst.save(&path).unwrap();
    assert_eq!(ProblemInstance::load(&path).unwrap(), inst);

    let config = Params::qcqp().resolve(&inst, Method::Dapd).unwrap();
    let trace = dapdb_core::run::run(&inst, Method::Dapd, config, RunOptions::new(40).with_stride(7)).unwrap();
    let csv = dir.path().join("trace.csv");
    csv_export(&trace, &csv).unwrap();
    let back = csv_import(&csv).unwrap();
    assert_eq!(back.records.len(), trace.records.len());
    assert_eq!(back.records.last().unwrap().iter, 40);
}

#[test]
fn experiment_writes_runs_and_aggregates() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ExperimentSpec {
        n: 5,
        nodes: 4,
        edges: 5,
        seeds: vec![1, 2],
        iters: 60,
        grid_points: 20,
        out_dir: Some(dir.path().to_path_buf()),
        ..ExperimentSpec::qcqp_default()
    };
    let outcome = run_experiment(&spec).unwrap();
    assert!(outcome.failures.is_empty());
    assert_eq!(outcome.runs.len(), 4);
    for seed in [1, 2] {
        assert!(dir.path().join(format!("instances/seed{seed}.json")).exists());
        for m in ["dapdb", "dapd"] {
            assert!(dir.path().join(format!("runs/{m}_seed{seed}.csv")).exists());
        }
    }
    let aggregates = std::fs::read_dir(dir.path().join("aggregate")).unwrap().count();
    assert_eq!(aggregates, 6);
}
