use std::fs;
use std::path::PathBuf;

use elastodyn::driver::{
    element_deformation_gradient, first_newton_system, linear_bench, run_benchmark, run_sweep, write_sweep_csv,
    BenchmarkConfig, BenchmarkId, SweepConfig, HISTORY_CSV_HEADER, ITERATION_CSV_HEADER, SWEEP_CSV_HEADER,
};
use elastodyn::precond::LinearSolverKind;
use elastodyn::tensor;

fn scratch_dir(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("elastodyn-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&d);
    d
}

fn tiny_block() -> BenchmarkConfig {
    let mut c = BenchmarkConfig::block_compression();
    c.mesh.divisions = 4;
    c.time.steps = 2;
    c.time.dt = 1e-3;
    c
}

fn tiny_slab() -> BenchmarkConfig {
    let mut c = BenchmarkConfig::tensile_test();
    c.mesh.nx = 10;
    c.mesh.ny = 3;
    c.mesh.nz = 1;
    c
}

#[test]
fn tiny_block_run_converges() {
    let rep = run_benchmark(&tiny_block()).unwrap();
    let s = rep.summary();
    assert!(s.all_linear_converged);
    assert_eq!(rep.history.len(), 2);
    assert!(rep.history.iter().all(|h| h.newton_iterations >= 1));
    assert!(rep.history[1].displacement > rep.history[0].displacement);
    assert!(rep.history[0].displacement > 0.0);
    assert_eq!(rep.load_displacement()[0], (0.0, 0.0));
}

#[test]
fn zero_load_leaves_both_benchmarks_at_rest() {
    let mut block = tiny_block();
    block.material.load_mpa = 0.0;
    let mut slab = tiny_slab();
    slab.time.steps = 2;
    slab.material.load_newton = 0.0;
    for cfg in [block, slab] {
        let rep = run_benchmark(&cfg).unwrap();
        let y = &rep.final_state;
        assert!(y.u.iter().chain(&y.v).chain(&y.p).all(|v| v.abs() < 1e-14), "{}", cfg.benchmark.name());
        let mesh = &rep.problem.mesh;
        for e in 0..mesh.num_elements() {
            let j = tensor::det(&element_deformation_gradient(mesh, e, &y.u));
            assert!((j - 1.0).abs() < 1e-14);
        }
    }
}

#[test]
fn tensile_run_recovers_from_oversized_steps() {
    let mut cfg = tiny_slab();
    cfg.time.steps = 2;
    cfg.time.dt = 50.0;
    let rep = run_benchmark(&cfg).unwrap();
    assert_eq!(rep.history.len(), 2);
    assert!((rep.history[1].time - 100.0).abs() < 1e-9);
    assert!((rep.history[1].load - 2.0).abs() < 1e-12);
    assert!(rep.history[1].displacement > rep.history[0].displacement);
    assert!(rep.history[1].fiber_alignment > 0.0);
}

#[test]
fn output_files_have_fixed_schemas() {
    let dir = scratch_dir("outputs");
    let mut cfg = tiny_block();
    cfg.output.dir = Some(dir.clone());
    cfg.output.vtk_every = 1;
    let rep = run_benchmark(&cfg).unwrap();

    let hist = fs::read_to_string(dir.join("history.csv")).unwrap();
    let lines: Vec<&str> = hist.lines().collect();
    assert_eq!(lines[0], HISTORY_CSV_HEADER);
    assert_eq!(lines.len(), 3);

    let iters = fs::read_to_string(dir.join("iterations.csv")).unwrap();
    let mut rows = iters.lines();
    assert_eq!(rows.next().unwrap(), ITERATION_CSV_HEADER);
    let col = ITERATION_CSV_HEADER.split(',').position(|c| c == "outer_n").unwrap();
    let outer: Vec<f64> = rows.map(|r| r.split(',').nth(col).unwrap().parse().unwrap()).collect();
    let s = rep.summary();
    assert_eq!(outer.len(), s.newton_iterations);
    let mean = outer.iter().sum::<f64>() / outer.len() as f64;
    assert!((mean - s.mean_outer).abs() < 1e-12);

    for step in 1..=2 {
        let vtk = fs::read_to_string(dir.join(format!("block-compression_{step:04}.vtk"))).unwrap();
        assert!(vtk.starts_with("# vtk DataFile Version 3.0\n"));
        assert!(vtk.contains(&format!("POINTS {} double", rep.problem.n_nodes())));
        assert!(vtk.contains("VECTORS displacement double"));
        assert!(vtk.contains("SCALARS pressure double 1"));
    }
    fs::remove_dir_all(dir).unwrap();
}

#[test]
fn iteration_counts_are_reproducible() {
    let counts = |cfg: &BenchmarkConfig| {
        let rep = run_benchmark(cfg).unwrap();
        rep.steps
            .iter()
            .flat_map(|s| s.iterations.iter().map(|i| (i.linear.outer_iterations, i.linear.sub.inner_iters)))
            .collect::<Vec<_>>()
    };
    let cfg = tiny_block();
    assert_eq!(counts(&cfg), counts(&cfg));
}

#[test]
fn toml_config_merges_over_the_preset() {
    let cfg = BenchmarkConfig::from_toml_str(
        "benchmark = \"block-compression\"\n[mesh]\ndivisions = 3\n[material]\nnu = 0.45\n",
    )
    .unwrap();
    assert_eq!(cfg.mesh.divisions, 3);
    assert_eq!(cfg.material.nu, Some(0.45));
    assert_eq!(cfg.time, BenchmarkConfig::block_compression().time);

    let back = BenchmarkConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
    assert_eq!(back, cfg);

    let o = cfg.with_overrides(&["time.steps=3".into(), "solver=\"simple\"".into(), "solver=scr".into()]).unwrap();
    assert_eq!(o.time.steps, 3);
    assert_eq!(o.solver, LinearSolverKind::Scr);

    assert!(BenchmarkConfig::from_toml_str("[mesh]\ndivisions = 3\n").is_err());
    assert!(BenchmarkConfig::from_toml_str("benchmark = \"block-compression\"\nbogus = 1\n").is_err());
    assert!(BenchmarkConfig::from_toml_str("benchmark = \"tensile-test\"\n[time]\ndt = -1.0\n").is_err());
    assert!(cfg.with_overrides(&["material.eta=0".into()]).is_err());
    assert_eq!(BenchmarkConfig::preset(BenchmarkId::TensileTest), BenchmarkConfig::tensile_test());
}

#[test]
fn empty_sweep_writes_only_the_header() {
    let (base, axes) = SweepConfig::from_toml_str("[base]\nbenchmark = \"block-compression\"\n").unwrap();
    assert!(axes.cells().is_empty());
    let rows = run_sweep(&base, &axes);
    let mut buf = Vec::new();
    write_sweep_csv(&mut buf, &rows).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), format!("{SWEEP_CSV_HEADER}\n"));
}

#[test]
fn failed_sweep_cells_are_recorded_and_the_sweep_continues() {
    let text = "[base]\nbenchmark = \"block-compression\"\n[base.mesh]\ndivisions = 2\n[base.time]\ndt = 1e-3\nsteps = 1\n\
                [sweep]\nnu = [0.5, 0.3]\nsolver = [\"nested\", \"simple\"]\n";
    let (base, axes) = SweepConfig::from_toml_str(text).unwrap();
    let rows = run_sweep(&base, &axes);
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[1].cell.nu, Some(0.5));
    assert_eq!(rows[1].cell.solver, Some(LinearSolverKind::Simple));
    assert!(rows[..2].iter().all(|r| r.is_nc() && r.error.is_some()));
    assert!(rows[2..].iter().all(|r| !r.is_nc()));
    let mut buf = Vec::new();
    write_sweep_csv(&mut buf, &rows).unwrap();
    let csv = String::from_utf8(buf).unwrap();
    let status = SWEEP_CSV_HEADER.split(',').position(|c| c == "status").unwrap();
    let st: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(status).unwrap()).collect();
    assert_eq!(st, ["NC", "NC", "ok", "ok"]);
}

#[test]
fn linear_bench_solves_the_first_newton_system() {
    let mut cfg = tiny_block();
    cfg.material.nu = Some(0.3);
    let (problem, sys) = first_newton_system(&cfg).unwrap();
    assert_eq!(sys.nv(), problem.dofs.n_free());
    assert_eq!(sys.np(), problem.n_nodes());
    let kinds = [LinearSolverKind::Nested, LinearSolverKind::Simple, LinearSolverKind::Ilu0Gmres];
    let rows = linear_bench(&sys, &kinds, &cfg.linear);
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.converged), "{rows:?}");
}
