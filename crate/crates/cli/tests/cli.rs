use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_magfem"))
}

fn repo(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn mesh_info_on_fixture() {
    let o = run(&["mesh-info", "--mesh", p(&repo("data/two_regions.msh"))]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.contains("triangles: 32"));
    assert!(out.contains("region 2: 16 triangles"));
}

#[test]
fn malformed_meshes_exit_with_one_located_line() {
    let dir = repo("crates/core/tests/fixtures/malformed");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let o = run(&["mesh-info", "--mesh", p(&path)]);
        assert_eq!(o.status.code(), Some(1), "{}", path.display());
        let err = stderr(&o);
        assert_eq!(err.lines().count(), 1, "{err}");
        assert!(err.starts_with("error: ") && err.contains(": line "), "{err}");
        n += 1;
    }
    assert!(n >= 5);
}

#[test]
fn usage_errors_exit_with_one() {
    let o = run(&["solve", "--mesh", "x.msh"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr(&o).lines().count(), 1);
    let o = run(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn bad_configuration_is_a_user_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("study.toml");
    std::fs::write(&cfg, "case = \"manufactured\"\norder = 3\n").unwrap();
    let o = run(&["study", "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("order must be 1 or 2"));
    std::fs::write(&cfg, "case = \"manufactured\"\nlevelz = 3\n").unwrap();
    let o = run(&["study", "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn solver_failure_exits_with_two_and_dumps_the_report() {
    let o = run(&[
        "solve",
        "--mesh",
        p(&repo("data/two_regions.msh")),
        "--materials",
        p(&repo("data/iron_air.toml")),
        "--max-iter",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.starts_with("solver failure: Newton did not converge"));
    assert!(err.contains("iteration,relative_residual,step"));
}

#[test]
fn outputs_are_byte_stable_without_timings() {
    let runs: Vec<_> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            let solve = run(&[
                "solve",
                "--mesh",
                p(&repo("data/two_regions.msh")),
                "--materials",
                p(&repo("data/iron_air.toml")),
                "--no-timings",
                "--out",
                p(dir.path()),
            ]);
            assert_eq!(solve.status.code(), Some(0), "{}", stderr(&solve));
            let study = run(&[
                "study",
                "--config",
                p(&repo("data/iron_air_study.toml")),
                "--levels",
                "2",
                "--no-timings",
                "--out",
                p(dir.path()),
            ]);
            assert_eq!(study.status.code(), Some(0), "{}", stderr(&study));
            let read = |name: &str| std::fs::read(dir.path().join(name)).unwrap();
            (solve.stdout, read("solution.vtk"), read("report.txt"), read("study.csv"))
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    let csv = String::from_utf8(runs[0].3.clone()).unwrap();
    assert!(csv.starts_with("formulation,order,level,h,ndofs,nnz,iter,time,error,eoc\n"));
    assert!(csv.lines().skip(1).all(|l| l.split(',').nth(7) == Some("-")));
}

#[test]
fn compare_and_material_check() {
    let o = run(&[
        "compare",
        "--mesh",
        p(&repo("data/two_regions.msh")),
        "--materials",
        p(&repo("data/iron_air.toml")),
        "--levels",
        "2",
        "--no-timings",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    assert_eq!(out.lines().count(), 3);
    let o = run(&["material-check", "--materials", p(&repo("data/iron_air.toml")), "--seed", "7"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.contains("region 1: spline") && out.contains("duality roundtrip"));
}

#[test]
fn mesh_info_on_two_triangles() {
    let o = run(&["mesh-info", "--mesh", p(&repo("crates/core/tests/fixtures/valid/two_triangles.msh"))]);
    assert_eq!(o.status.code(), Some(0));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.contains("nodes: 4\ntriangles: 2\nedges: 5 "), "{out}");
    assert!(out.contains("euler characteristic: 1"));
    assert!(o.stderr.is_empty());
}

#[test]
fn material_check_on_a_linear_law_reports_mu() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("linear.toml");
    std::fs::write(&file, "[[region]]\ntag = 0\nlaw = \"linear\"\nmu_r = 2.0\n").unwrap();
    let o = run(&["material-check", "--materials", p(&file)]);
    assert_eq!(o.status.code(), Some(0));
    let out = String::from_utf8(o.stdout).unwrap();
    let value = |key: &str| -> f64 {
        let rest = &out[out.find(key).unwrap() + key.len()..];
        rest.split(',').next().unwrap().trim().parse().unwrap()
    };
    let mu = 2.0 * 4.0e-7 * std::f64::consts::PI;
    assert!((value("alpha ") - mu).abs() <= 1e-10 * mu);
    assert!((value("C_a ") - mu).abs() <= 1e-10 * mu);
}

#[test]
fn manufactured_study_from_the_shipped_config() {
    let o = run(&["study", "--config", p(&repo("data/manufactured.toml")), "--no-timings"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert_eq!(rows.len(), 8);
    for r in rows.iter().filter(|r| !r.ends_with(',')) {
        let e: f64 = r.rsplit(',').next().unwrap().parse().unwrap();
        assert!((0.85..=1.15).contains(&e), "{r}");
    }
}
