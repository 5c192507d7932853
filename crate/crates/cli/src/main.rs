use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use magfem::assembly::{AssemblyError, Formulation};
use magfem::io::{read_material_file, read_mesh_file, write_file, write_vtk_legacy, IoError, StudyConfig, VtkData, VtkField};
use magfem::material::{certify_lemma1, duality_roundtrip_error, MaterialError, MaterialLaw, MaterialMap};
use magfem::mesh::Mesh;
use magfem::post::{compare_csv, compare_formulations, convergence_study, format_report, solve_case, study_csv, vtk_fields, StudySpec};
use magfem::solver::{NewtonOptions, SolveReport};

#[derive(Parser)]
#[command(name = "magfem", version, about = "2D nonlinear magnetostatics with primal and hybridized mixed finite elements")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one problem and write VTK output.
    Solve(SolveArgs),
    /// Run a convergence study described by a TOML file.
    Study(StudyArgs),
    /// Compare the size and cost of one Newton step for both formulations.
    Compare(CompareArgs),
    /// Certify the material laws of a material file.
    MaterialCheck(MaterialArgs),
    /// Print mesh statistics.
    MeshInfo(MeshArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormulationArg {
    Primal,
    Mixed,
}

impl From<FormulationArg> for Formulation {
    fn from(f: FormulationArg) -> Self {
        match f {
            FormulationArg::Primal => Formulation::Primal,
            FormulationArg::Mixed => Formulation::Mixed,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StudyFormulationArg {
    Primal,
    Mixed,
    Both,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long)]
    materials: PathBuf,
    #[arg(long, value_enum, default_value = "mixed")]
    formulation: FormulationArg,
    #[arg(long, default_value_t = 1)]
    order: usize,
    /// Relative Newton residual tolerance.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 50)]
    max_iter: usize,
    /// Output directory for `solution.vtk` and `report.txt`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for material certification sampling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    no_timings: bool,
}

#[derive(Args)]
struct StudyArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum)]
    formulation: Option<StudyFormulationArg>,
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Output directory for `study.csv`; overrides the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    no_timings: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long)]
    materials: PathBuf,
    /// Uniform refinements applied to the mesh first.
    #[arg(long, default_value_t = 0)]
    levels: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    no_timings: bool,
}

#[derive(Args)]
struct MaterialArgs {
    #[arg(long)]
    materials: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
}

#[derive(Args)]
struct MeshArgs {
    #[arg(long)]
    mesh: PathBuf,
}

enum Failure {
    /// Bad input: exit code 1.
    User(String),
    /// The solver ran but failed: exit code 2.
    Solver(String, Option<SolveReport>),
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Failure::User(e.to_string())
    }
}

impl From<MaterialError> for Failure {
    fn from(e: MaterialError) -> Self {
        Failure::User(e.to_string())
    }
}

impl From<AssemblyError> for Failure {
    fn from(e: AssemblyError) -> Self {
        match e.exit_code() {
            2 => Failure::Solver(e.to_string(), e.report().cloned()),
            _ => Failure::User(e.to_string()),
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::User(format!("{}: {e}", dir.display())))
}

/// Prefixes errors with the offending file.
fn at(path: &Path) -> impl Fn(IoError) -> Failure + '_ {
    move |e| match e {
        IoError::File { .. } => Failure::from(e),
        e => Failure::User(format!("{}: {e}", path.display())),
    }
}

fn load_mesh(path: &Path) -> Result<Mesh, Failure> {
    read_mesh_file(path).map_err(at(path))
}

fn load_materials(path: &Path, mesh: Option<&Mesh>, seed: u64) -> Result<MaterialMap, Failure> {
    let mut m = read_material_file(path).map_err(at(path))?;
    if let Some(mesh) = mesh {
        m.check_tags(mesh.region_tags())?;
    }
    m.certify(1000, seed)?;
    Ok(m)
}

fn check_order(order: usize) -> Result<(), Failure> {
    if (1..=2).contains(&order) {
        Ok(())
    } else {
        Err(Failure::User(format!("order must be 1 or 2, got {order}")))
    }
}

fn solve(a: SolveArgs) -> Result<(), Failure> {
    check_order(a.order)?;
    let mesh = load_mesh(&a.mesh)?;
    let mats = load_materials(&a.materials, Some(&mesh), a.seed)?;
    let opts = NewtonOptions {
        tol: a.tol,
        max_iter: a.max_iter,
        ..NewtonOptions::default()
    };
    let f = Formulation::from(a.formulation);
    let out = solve_case(&mesh, &mats, f, a.order, &opts)?;
    let r = &out.report;
    println!(
        "{} order {}: converged in {} iterations, relative residual {:e}, {} unknowns, {} nonzeros",
        f.name(),
        a.order,
        r.iterations,
        r.final_residual(),
        r.unknowns,
        r.nnz
    );
    if !a.no_timings {
        println!("time: {:.3} s", r.wall_time);
    }
    if let Some(dir) = a.out {
        ensure_dir(&dir)?;
        let mut fields = vtk_fields(out.a_cell, &out.flux);
        fields.push(VtkField::new("H_magnitude", VtkData::CellScalar(out.h_cell)));
        write_file(&dir.join("solution.vtk"), &write_vtk_legacy(&mesh, &fields)?)?;
        write_file(&dir.join("report.txt"), &format_report(r))?;
    }
    Ok(())
}

fn study(a: StudyArgs) -> Result<(), Failure> {
    let mut cfg = StudyConfig::read(&a.config).map_err(at(&a.config))?;
    if let Some(f) = a.formulation {
        cfg.formulation = match f {
            StudyFormulationArg::Primal => magfem::io::FormulationChoice::Primal,
            StudyFormulationArg::Mixed => magfem::io::FormulationChoice::Mixed,
            StudyFormulationArg::Both => magfem::io::FormulationChoice::Both,
        };
    }
    cfg.order = a.order.unwrap_or(cfg.order);
    cfg.levels = a.levels.unwrap_or(cfg.levels);
    cfg.tol = a.tol.unwrap_or(cfg.tol);
    if a.out.is_some() {
        cfg.output = a.out;
    }
    cfg.validate()?;
    let spec = StudySpec::from_config(&cfg, a.seed)?;
    let rows = match convergence_study(&spec) {
        Ok(rows) => rows,
        Err(e) => {
            if !e.rows.is_empty() {
                eprint!("{}", study_csv(&e.rows, !a.no_timings));
            }
            return Err(Failure::from(e.error));
        }
    };
    let csv = study_csv(&rows, !a.no_timings);
    print!("{csv}");
    if let Some(dir) = cfg.output {
        ensure_dir(&dir)?;
        write_file(&dir.join("study.csv"), &csv)?;
    }
    Ok(())
}

fn compare(a: CompareArgs) -> Result<(), Failure> {
    let mesh = load_mesh(&a.mesh)?.refined(a.levels);
    let mats = load_materials(&a.materials, Some(&mesh), a.seed)?;
    let rows = compare_formulations(&mesh, &mats)?;
    let csv = compare_csv(&rows, !a.no_timings);
    print!("{csv}");
    if let Some(dir) = a.out {
        ensure_dir(&dir)?;
        write_file(&dir.join("compare.csv"), &csv)?;
    }
    Ok(())
}

fn material_check(a: MaterialArgs) -> Result<(), Failure> {
    let m = read_material_file(&a.materials).map_err(at(&a.materials))?;
    for (tag, r) in m.regions() {
        let c = certify_lemma1(&r.law, r.law.natural_range(), a.samples, a.seed)?;
        let kind = match &r.law {
            MaterialLaw::Linear(_) => "linear",
            MaterialLaw::Magnet(_) => "magnet",
            MaterialLaw::Spline(_) => "spline",
        };
        print!(
            "region {tag}: {kind}, alpha {:e}, C_a {:e}, sigma {:e}, current {:e}",
            c.alpha, c.c_a, r.sigma, r.current
        );
        if let MaterialLaw::Spline(s) = &r.law {
            print!(", duality roundtrip {:e}", duality_roundtrip_error(&s.f_tilde, &s.g_tilde, 2000));
        }
        println!();
    }
    Ok(())
}

fn mesh_info(a: MeshArgs) -> Result<(), Failure> {
    let mesh = load_mesh(&a.mesh)?;
    let q = mesh.quality();
    println!("nodes: {}", mesh.n_nodes());
    println!("triangles: {}", mesh.n_triangles());
    println!(
        "edges: {} ({} interior, {} boundary)",
        mesh.n_edges(),
        mesh.n_interior_edges(),
        mesh.n_boundary_edges()
    );
    println!("area: {:e}", mesh.total_area());
    println!("h: {:e} (min {:e}), shape ratio {:.3}", q.h, q.h_min, q.shape_ratio);
    let mut regions = std::collections::BTreeMap::<u32, (usize, f64)>::new();
    for t in 0..mesh.n_triangles() {
        let e = regions.entry(mesh.region_tags()[t]).or_default();
        e.0 += 1;
        e.1 += mesh.area(t);
    }
    for (tag, (n, area)) in regions {
        println!("region {tag}: {n} triangles, area {area:e}");
    }
    let chi = mesh.euler_characteristic();
    println!("euler characteristic: {chi}");
    if chi < 1 {
        eprintln!(
            "warning: the domain has {} hole(s); the mixed formulation does not add cohomology constraints",
            1 - chi
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            if code == 0 {
                let _ = e.print();
            } else {
                let text = e.to_string();
                let head = text.split("Usage:").next().unwrap_or_default();
                eprintln!("error: {}", one_line(head.trim_start_matches("error: ")));
            }
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Solve(a) => solve(a),
        Command::Study(a) => study(a),
        Command::Compare(a) => compare(a),
        Command::MaterialCheck(a) => material_check(a),
        Command::MeshInfo(a) => mesh_info(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::User(msg)) => {
            eprintln!("error: {}", one_line(&msg));
            ExitCode::from(1)
        }
        Err(Failure::Solver(msg, report)) => {
            eprintln!("solver failure: {}", one_line(&msg));
            if let Some(r) = report {
                eprint!("{}", format_report(&r));
            }
            ExitCode::from(2)
        }
    }
}
