//! Mesh readers and writers, VTK export, and the TOML material and study
//! configuration files.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::assembly::Formulation;
use crate::material::{BrauerParams, IsotropicSplineLaw, MaterialError, MaterialLaw, MaterialMap, RegionMaterial, MU0};
use crate::mesh::{Mesh, MeshError};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("line {line}: unsupported mesh format version '{version}' (need ASCII 2.2)")]
    UnsupportedVersion { line: usize, version: String },
    #[error("line {line}: {message}")]
    MalformedSection { line: usize, message: String },
    #[error("line {line}: node is not planar (z = {z:e})")]
    NonPlanar { line: usize, z: f64 },
    #[error("field '{name}' has {got} values, expected {expected}")]
    FieldSizeMismatch { name: String, expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Material(#[from] MaterialError),
}

impl IoError {
    /// Command-line exit status; every I/O failure is a user error.
    pub fn exit_code(&self) -> u8 {
        1
    }
}

/// Locates a TOML error by the line of its span.
fn toml_error(text: &str, e: toml::de::Error) -> IoError {
    let message = e.message().trim().to_string();
    match e.span() {
        Some(span) => malformed(text[..span.start.min(text.len())].matches('\n').count() + 1, message),
        None => IoError::Config(message),
    }
}

fn malformed(line: usize, message: impl Into<String>) -> IoError {
    IoError::MalformedSection {
        line,
        message: message.into(),
    }
}

/// Reads a file into a string, attaching the path to errors.
pub fn read_file(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), IoError> {
    std::fs::write(path, contents).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

/// Contents of a Gmsh 2.2 ASCII file restricted to planar triangles.
#[derive(Debug, Clone, PartialEq)]
pub struct GmshMesh {
    pub nodes: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub region_tags: Vec<u32>,
    /// Line elements: node pair and physical tag.
    pub boundary: Vec<([usize; 2], u32)>,
    pub physical_names: BTreeMap<u32, String>,
    /// Source line of each triangle, for located mesh diagnostics.
    pub triangle_lines: Vec<usize>,
}

impl GmshMesh {
    /// Builds a [`Mesh`], dropping nodes no triangle references (the others
    /// keep their relative order).
    pub fn into_mesh(self) -> Result<Mesh, IoError> {
        let mut map = vec![usize::MAX; self.nodes.len()];
        for tri in &self.triangles {
            for &v in tri {
                map[v] = 0;
            }
        }
        let mut nodes = Vec::new();
        for (v, m) in map.iter_mut().enumerate() {
            if *m == 0 {
                *m = nodes.len();
                nodes.push(self.nodes[v]);
            }
        }
        let triangles = self.triangles.iter().map(|t| t.map(|v| map[v])).collect();
        let markers = self
            .boundary
            .iter()
            .filter(|(e, _)| e.iter().all(|&v| map[v] != usize::MAX))
            .map(|(e, tag)| (e.map(|v| map[v]), *tag))
            .collect();
        let lines = self.triangle_lines;
        let mesh = Mesh::new(nodes, triangles, self.region_tags).map_err(|e| match e {
            MeshError::DegenerateTriangle(t) if t < lines.len() => malformed(lines[t], "degenerate triangle"),
            e => e.into(),
        })?;
        Ok(mesh.with_boundary_markers(markers))
    }
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Lines {
            inner: text.lines().enumerate(),
            last: 0,
        }
    }

    /// Next line (trimmed) with its 1-based number.
    fn next(&mut self) -> Option<(usize, &'a str)> {
        let (i, l) = self.inner.next()?;
        self.last = i + 1;
        Some((i + 1, l.trim()))
    }

    fn expect(&mut self, what: &str) -> Result<(usize, &'a str), IoError> {
        self.next()
            .ok_or_else(|| malformed(self.last + 1, format!("unexpected end of file, expected {what}")))
    }
}

fn parse_num<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T, IoError> {
    let tok = tok.ok_or_else(|| malformed(line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| malformed(line, format!("invalid {what} '{tok}'")))
}

/// Parses Gmsh 2.2 ASCII text.
///
/// Line elements (type 1) become boundary markers, triangles (type 2)
/// elements tagged with their physical tag; point elements (type 15) are
/// ignored and any other element type is rejected.
pub fn read_gmsh_v2(text: &str) -> Result<GmshMesh, IoError> {
    let mut lines = Lines::new(text);
    let mut version_seen = false;
    let mut raw_nodes: Vec<[f64; 2]> = Vec::new();
    let mut node_index: HashMap<u64, usize> = HashMap::new();
    let mut out = GmshMesh {
        nodes: Vec::new(),
        triangles: Vec::new(),
        region_tags: Vec::new(),
        boundary: Vec::new(),
        physical_names: BTreeMap::new(),
        triangle_lines: Vec::new(),
    };
    let mut elements_seen = false;
    while let Some((ln, line)) = lines.next() {
        if line.is_empty() {
            continue;
        }
        match line {
            "$MeshFormat" => {
                let (vl, v) = lines.expect("format line")?;
                let mut it = v.split_whitespace();
                let version = it.next().unwrap_or("");
                let file_type = it.next().unwrap_or("");
                if !(version == "2.2" || version == "2.1" || version == "2") || file_type != "0" {
                    return Err(IoError::UnsupportedVersion {
                        line: vl,
                        version: v.to_string(),
                    });
                }
                version_seen = true;
                let (el, end) = lines.expect("$EndMeshFormat")?;
                if end != "$EndMeshFormat" {
                    return Err(malformed(el, "expected $EndMeshFormat"));
                }
            }
            "$PhysicalNames" => {
                let (cl, c) = lines.expect("physical name count")?;
                let n: usize = parse_num(Some(c), cl, "physical name count")?;
                for _ in 0..n {
                    let (l, s) = lines.expect("physical name")?;
                    let mut it = s.splitn(3, char::is_whitespace);
                    let _dim: u32 = parse_num(it.next(), l, "dimension")?;
                    let tag: u32 = parse_num(it.next(), l, "physical tag")?;
                    let name = it.next().unwrap_or("").trim().trim_matches('"').to_string();
                    out.physical_names.insert(tag, name);
                }
                let (el, end) = lines.expect("$EndPhysicalNames")?;
                if end != "$EndPhysicalNames" {
                    return Err(malformed(el, "expected $EndPhysicalNames"));
                }
            }
            "$Nodes" => {
                if !version_seen {
                    return Err(malformed(ln, "$Nodes before $MeshFormat"));
                }
                let (cl, c) = lines.expect("node count")?;
                let n: usize = parse_num(Some(c), cl, "node count")?;
                for _ in 0..n {
                    let (l, s) = lines.expect("node")?;
                    let mut it = s.split_whitespace();
                    let id: u64 = parse_num(it.next(), l, "node id")?;
                    let x: f64 = parse_num(it.next(), l, "x coordinate")?;
                    let y: f64 = parse_num(it.next(), l, "y coordinate")?;
                    let z: f64 = parse_num(it.next(), l, "z coordinate")?;
                    if z.abs() > 1e-12 {
                        return Err(IoError::NonPlanar { line: l, z });
                    }
                    if node_index.insert(id, raw_nodes.len()).is_some() {
                        return Err(malformed(l, format!("duplicate node id {id}")));
                    }
                    raw_nodes.push([x, y]);
                }
                let (el, end) = lines.expect("$EndNodes")?;
                if end != "$EndNodes" {
                    return Err(malformed(el, "expected $EndNodes (node count too small?)"));
                }
            }
            "$Elements" => {
                if node_index.is_empty() {
                    return Err(malformed(ln, "$Elements before $Nodes"));
                }
                let (cl, c) = lines.expect("element count")?;
                let n: usize = parse_num(Some(c), cl, "element count")?;
                for _ in 0..n {
                    let (l, s) = lines.expect("element")?;
                    let mut it = s.split_whitespace();
                    let _id: u64 = parse_num(it.next(), l, "element id")?;
                    let ty: u32 = parse_num(it.next(), l, "element type")?;
                    let ntags: usize = parse_num(it.next(), l, "tag count")?;
                    let mut tags = Vec::with_capacity(ntags);
                    for _ in 0..ntags {
                        tags.push(parse_num::<i64>(it.next(), l, "element tag")?);
                    }
                    let physical = tags.first().copied().unwrap_or(0);
                    let physical = u32::try_from(physical)
                        .map_err(|_| malformed(l, format!("negative physical tag {physical}")))?;
                    let nn = match ty {
                        1 => 2,
                        2 => 3,
                        15 => 1,
                        _ => return Err(malformed(l, format!("unsupported element type {ty}"))),
                    };
                    let mut vs = [0usize; 3];
                    for v in vs.iter_mut().take(nn) {
                        let id: u64 = parse_num(it.next(), l, "element node")?;
                        *v = *node_index
                            .get(&id)
                            .ok_or_else(|| malformed(l, format!("unknown node id {id}")))?;
                    }
                    if it.next().is_some() {
                        return Err(malformed(l, "too many fields for element type"));
                    }
                    match ty {
                        1 => out.boundary.push(([vs[0], vs[1]], physical)),
                        2 => {
                            out.triangles.push(vs);
                            out.region_tags.push(physical);
                            out.triangle_lines.push(l);
                        }
                        _ => {}
                    }
                }
                let (el, end) = lines.expect("$EndElements")?;
                if end != "$EndElements" {
                    return Err(malformed(el, "expected $EndElements (element count too small?)"));
                }
                elements_seen = true;
            }
            s if s.starts_with('$') && !s.starts_with("$End") => {
                // Unknown section: skip to its end marker.
                let end = format!("$End{}", &s[1..]);
                loop {
                    let (_, l) = lines.expect(&end)?;
                    if l == end {
                        break;
                    }
                }
            }
            _ => return Err(malformed(ln, format!("unexpected content '{line}'"))),
        }
    }
    if !version_seen {
        return Err(malformed(1, "missing $MeshFormat section"));
    }
    if !elements_seen {
        return Err(malformed(lines.last, "missing $Elements section"));
    }
    out.nodes = raw_nodes;
    Ok(out)
}

/// Writes the mesh as Gmsh 2.2 ASCII (1-based ids, triangles after
/// boundary lines).
pub fn write_gmsh_v2(mesh: &Mesh) -> String {
    let mut s = String::from("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n");
    let _ = writeln!(s, "{}", mesh.n_nodes());
    for (i, p) in mesh.nodes().iter().enumerate() {
        let _ = writeln!(s, "{} {} {} 0", i + 1, p[0], p[1]);
    }
    let markers = mesh.boundary_markers();
    let _ = writeln!(s, "$EndNodes\n$Elements\n{}", markers.len() + mesh.n_triangles());
    let mut id = 1;
    for ([a, b], tag) in markers {
        let _ = writeln!(s, "{id} 1 2 {tag} {tag} {} {}", a + 1, b + 1);
        id += 1;
    }
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let tag = mesh.region_tags()[t];
        let _ = writeln!(s, "{id} 2 2 {tag} {tag} {} {} {}", tri[0] + 1, tri[1] + 1, tri[2] + 1);
        id += 1;
    }
    s.push_str("$EndElements\n");
    s
}

/// Native text format: `V E_marked T`, then `V` lines `x y`, `T` lines
/// `i j k tag` and `E_marked` lines `i j tag` (0-based).
pub fn write_native(mesh: &Mesh) -> String {
    let markers = mesh.boundary_markers();
    let mut s = format!("{} {} {}\n", mesh.n_nodes(), markers.len(), mesh.n_triangles());
    for p in mesh.nodes() {
        let _ = writeln!(s, "{} {}", p[0], p[1]);
    }
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let _ = writeln!(s, "{} {} {} {}", tri[0], tri[1], tri[2], mesh.region_tags()[t]);
    }
    for ([a, b], tag) in markers {
        let _ = writeln!(s, "{a} {b} {tag}");
    }
    s
}

pub fn read_native(text: &str) -> Result<Mesh, IoError> {
    let mut lines = Lines::new(text);
    let (hl, header) = loop {
        let (l, s) = lines.expect("header")?;
        if !s.is_empty() && !s.starts_with('#') {
            break (l, s);
        }
    };
    let mut it = header.split_whitespace();
    let nv: usize = parse_num(it.next(), hl, "node count")?;
    let ne: usize = parse_num(it.next(), hl, "marked edge count")?;
    let nt: usize = parse_num(it.next(), hl, "triangle count")?;
    let mut nodes = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (l, s) = lines.expect("node")?;
        let mut it = s.split_whitespace();
        nodes.push([parse_num(it.next(), l, "x")?, parse_num(it.next(), l, "y")?]);
    }
    let mut tris = Vec::with_capacity(nt);
    let mut tags = Vec::with_capacity(nt);
    for _ in 0..nt {
        let (l, s) = lines.expect("triangle")?;
        let mut it = s.split_whitespace();
        let mut tri = [0usize; 3];
        for v in &mut tri {
            *v = parse_num(it.next(), l, "triangle node")?;
            if *v >= nv {
                return Err(malformed(l, format!("node index {v} out of range")));
            }
        }
        tris.push(tri);
        tags.push(parse_num(it.next(), l, "region tag")?);
    }
    let mut markers = Vec::with_capacity(ne);
    for _ in 0..ne {
        let (l, s) = lines.expect("marked edge")?;
        let mut it = s.split_whitespace();
        let a: usize = parse_num(it.next(), l, "edge node")?;
        let b: usize = parse_num(it.next(), l, "edge node")?;
        markers.push(([a, b], parse_num(it.next(), l, "edge tag")?));
    }
    Ok(Mesh::new(nodes, tris, tags)?.with_boundary_markers(markers))
}

/// Reads a mesh by extension: `.msh` is Gmsh, anything else native.
pub fn read_mesh_file(path: &Path) -> Result<Mesh, IoError> {
    let text = read_file(path)?;
    if path.extension().is_some_and(|e| e == "msh") {
        read_gmsh_v2(&text)?.into_mesh()
    } else {
        read_native(&text)
    }
}

/// Field data attached to a VTK file.
#[derive(Debug, Clone, PartialEq)]
pub enum VtkData {
    CellScalar(Vec<f64>),
    CellVector(Vec<[f64; 2]>),
    PointScalar(Vec<f64>),
    PointVector(Vec<[f64; 2]>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VtkField {
    pub name: String,
    pub data: VtkData,
}

impl VtkField {
    pub fn new(name: impl Into<String>, data: VtkData) -> Self {
        VtkField { name: name.into(), data }
    }
}

/// Legacy ASCII VTK unstructured grid of triangles (cell type 5).
pub fn write_vtk_legacy(mesh: &Mesh, fields: &[VtkField]) -> Result<String, IoError> {
    let (nv, nt) = (mesh.n_nodes(), mesh.n_triangles());
    for f in fields {
        let (expected, got) = match &f.data {
            VtkData::CellScalar(v) => (nt, v.len()),
            VtkData::CellVector(v) => (nt, v.len()),
            VtkData::PointScalar(v) => (nv, v.len()),
            VtkData::PointVector(v) => (nv, v.len()),
        };
        if expected != got {
            return Err(IoError::FieldSizeMismatch {
                name: f.name.clone(),
                expected,
                got,
            });
        }
    }
    let mut s = String::from("# vtk DataFile Version 3.0\nmagfem output\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(s, "POINTS {nv} double");
    for p in mesh.nodes() {
        let _ = writeln!(s, "{} {} 0", p[0], p[1]);
    }
    let _ = writeln!(s, "CELLS {nt} {}", 4 * nt);
    for t in mesh.triangles() {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    let _ = writeln!(s, "CELL_TYPES {nt}");
    for _ in 0..nt {
        s.push_str("5\n");
    }
    let sanitize = |n: &str| n.replace(char::is_whitespace, "_");
    let write_block = |s: &mut String, cell: bool| {
        for f in fields {
            match (&f.data, cell) {
                (VtkData::CellScalar(v), true) | (VtkData::PointScalar(v), false) => {
                    let _ = writeln!(s, "SCALARS {} double 1\nLOOKUP_TABLE default", sanitize(&f.name));
                    for x in v {
                        let _ = writeln!(s, "{x}");
                    }
                }
                (VtkData::CellVector(v), true) | (VtkData::PointVector(v), false) => {
                    let _ = writeln!(s, "VECTORS {} double", sanitize(&f.name));
                    for x in v {
                        let _ = writeln!(s, "{} {} 0", x[0], x[1]);
                    }
                }
                _ => {}
            }
        }
    };
    let has_cell = fields
        .iter()
        .any(|f| matches!(f.data, VtkData::CellScalar(_) | VtkData::CellVector(_)));
    let has_point = fields
        .iter()
        .any(|f| matches!(f.data, VtkData::PointScalar(_) | VtkData::PointVector(_)));
    if has_cell {
        let _ = writeln!(s, "CELL_DATA {nt}");
        write_block(&mut s, true);
    }
    if has_point {
        let _ = writeln!(s, "POINT_DATA {nv}");
        write_block(&mut s, false);
    }
    Ok(s)
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct BrauerSection {
    k1: f64,
    k2: f64,
    k3: f64,
    b_max: f64,
    #[serde(default = "default_intervals")]
    intervals: usize,
}

fn default_intervals() -> usize {
    200
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
enum LawKind {
    Linear,
    Magnet,
    Brauer,
    BhCurve,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct RegionSection {
    tag: u32,
    law: LawKind,
    name: Option<String>,
    mu: Option<f64>,
    mu_r: Option<f64>,
    #[serde(default)]
    sigma: f64,
    #[serde(default)]
    current: f64,
    magnetization: Option<[f64; 2]>,
    brauer: Option<BrauerSection>,
    bh: Option<Vec<[f64; 2]>>,
    bh_csv: Option<String>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct MaterialFile {
    region: Vec<RegionSection>,
}

fn permeability(r: &RegionSection) -> Result<f64, IoError> {
    match (r.mu, r.mu_r) {
        (Some(mu), None) => Ok(mu),
        (None, Some(mr)) => Ok(mr * MU0),
        (None, None) => Err(IoError::Config(format!("region {}: 'mu' or 'mu_r' required", r.tag))),
        (Some(_), Some(_)) => Err(IoError::Config(format!("region {}: give only one of 'mu', 'mu_r'", r.tag))),
    }
}

/// Parses `B,H` rows (header and `#` comments allowed).
pub fn read_bh_csv(text: &str) -> Result<Vec<(f64, f64)>, IoError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split([',', ';', '\t', ' ']).filter(|s| !s.is_empty());
        let (b, h) = (it.next(), it.next());
        match (b.and_then(|b| b.parse().ok()), h.and_then(|h| h.parse().ok())) {
            (Some(b), Some(h)) => out.push((b, h)),
            _ if out.is_empty() && i == 0 => continue,
            _ => return Err(malformed(i + 1, format!("expected 'B,H' pair, got '{line}'"))),
        }
    }
    Ok(out)
}

/// Parses a material file. Relative `bh_csv` paths are resolved against
/// `base_dir`. The returned map is not yet certified.
///
/// ```toml
/// [[region]]
/// tag = 1
/// law = "linear"      # linear | magnet | brauer | bh-curve
/// mu_r = 1.0          # or: mu = 1.2566e-6
/// sigma = 0.0
/// current = 0.0
/// ```
pub fn parse_material_file(text: &str, base_dir: &Path) -> Result<MaterialMap, IoError> {
    let file: MaterialFile = toml::from_str(text).map_err(|e| toml_error(text, e))?;
    let mut map = MaterialMap::new();
    for r in &file.region {
        let law = match r.law {
            LawKind::Linear => MaterialLaw::linear(permeability(r)?),
            LawKind::Magnet => {
                let m = r
                    .magnetization
                    .ok_or_else(|| IoError::Config(format!("region {}: magnet needs 'magnetization'", r.tag)))?;
                MaterialLaw::magnet(permeability(r)?, m)
            }
            LawKind::Brauer => {
                let b = r
                    .brauer
                    .as_ref()
                    .ok_or_else(|| IoError::Config(format!("region {}: missing [region.brauer]", r.tag)))?;
                let p = BrauerParams {
                    k1: b.k1,
                    k2: b.k2,
                    k3: b.k3,
                };
                MaterialLaw::spline(IsotropicSplineLaw::brauer(&p, b.b_max, b.intervals)?)
            }
            LawKind::BhCurve => {
                let pts = match (&r.bh, &r.bh_csv) {
                    (Some(v), None) => v.iter().map(|p| (p[0], p[1])).collect(),
                    (None, Some(path)) => read_bh_csv(&read_file(&base_dir.join(path))?)?,
                    _ => {
                        return Err(IoError::Config(format!(
                            "region {}: bh-curve needs exactly one of 'bh', 'bh_csv'",
                            r.tag
                        )))
                    }
                };
                MaterialLaw::spline(IsotropicSplineLaw::from_bh_curve(&pts)?)
            }
        };
        law.validate()?;
        if r.sigma < 0.0 {
            return Err(MaterialError::NegativeConductivity {
                region: r.tag,
                sigma: r.sigma,
            }
            .into());
        }
        log::debug!("region {} ({}): {:?}", r.tag, r.name.as_deref().unwrap_or("unnamed"), r.law);
        map.insert(r.tag, RegionMaterial::new(law).with_sigma(r.sigma).with_current(r.current));
    }
    Ok(map)
}

pub fn read_material_file(path: &Path) -> Result<MaterialMap, IoError> {
    let text = read_file(path)?;
    parse_material_file(&text, path.parent().unwrap_or(Path::new(".")))
}

/// Which problem a study runs.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub enum CaseKind {
    /// `a = sin(πx) sin(πy)` with `μ = 1`.
    Manufactured,
    /// The same potential with a nonlinear spline law.
    ManufacturedNonlinear,
    /// 2×2 checkerboard of two linear materials.
    Checkerboard,
    /// Mesh and material files.
    Mesh,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum FormulationChoice {
    Primal,
    Mixed,
    Both,
}

impl FormulationChoice {
    pub fn formulations(self) -> Vec<Formulation> {
        match self {
            FormulationChoice::Primal => vec![Formulation::Primal],
            FormulationChoice::Mixed => vec![Formulation::Mixed],
            FormulationChoice::Both => vec![Formulation::Primal, Formulation::Mixed],
        }
    }
}

/// Study configuration file.
///
/// ```toml
/// case = "manufactured"   # manufactured | manufactured-nonlinear | checkerboard | mesh
/// formulation = "both"    # primal | mixed | both
/// order = 1
/// levels = 4
/// ```
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub case: CaseKind,
    #[serde(default = "default_formulation")]
    pub formulation: FormulationChoice,
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default = "default_levels")]
    pub levels: usize,
    /// Cells per side of the coarsest structured mesh.
    #[serde(default = "default_base")]
    pub base_n: usize,
    #[serde(default)]
    pub sigma: f64,
    /// Permeability ratio of the checkerboard case.
    #[serde(default = "default_ratio")]
    pub ratio: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Mesh and material files for `case = "mesh"`, relative to the
    /// configuration file.
    pub mesh: Option<PathBuf>,
    pub materials: Option<PathBuf>,
    pub output: Option<PathBuf>,
    #[serde(default = "default_true")]
    pub warm_start: bool,
}

fn default_formulation() -> FormulationChoice {
    FormulationChoice::Both
}
fn default_order() -> usize {
    1
}
fn default_levels() -> usize {
    4
}
fn default_base() -> usize {
    4
}
fn default_ratio() -> f64 {
    1000.0
}
fn default_tol() -> f64 {
    1e-8
}
fn default_max_iter() -> usize {
    50
}
fn default_true() -> bool {
    true
}

impl StudyConfig {
    pub fn parse(text: &str) -> Result<Self, IoError> {
        let c: StudyConfig = toml::from_str(text).map_err(|e| toml_error(text, e))?;
        c.validate()?;
        Ok(c)
    }

    /// Reads a configuration file and resolves its relative paths.
    pub fn read(path: &Path) -> Result<Self, IoError> {
        let mut c = Self::parse(&read_file(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut c.mesh, &mut c.materials, &mut c.output].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), IoError> {
        if !(1..=2).contains(&self.order) {
            return Err(IoError::Config(format!("order must be 1 or 2, got {}", self.order)));
        }
        if self.levels == 0 {
            return Err(IoError::Config("levels must be at least 1".into()));
        }
        if self.base_n == 0 {
            return Err(IoError::Config("base_n must be positive".into()));
        }
        if !(self.tol > 0.0) {
            return Err(IoError::Config("tol must be positive".into()));
        }
        if self.case == CaseKind::Mesh && (self.mesh.is_none() || self.materials.is_none()) {
            return Err(IoError::Config("case 'mesh' needs 'mesh' and 'materials'".into()));
        }
        if !(self.ratio > 0.0) {
            return Err(IoError::Config("ratio must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n3\n1 0 0 0\n2 1 0 0\n3 0 1 0\n$EndNodes\n$Elements\n1\n1 2 2 7 1 1 2 3\n$EndElements\n";

    #[test]
    fn minimal_gmsh() {
        let g = read_gmsh_v2(MINIMAL).unwrap();
        assert_eq!(g.triangles, vec![[0, 1, 2]]);
        assert_eq!(g.region_tags, vec![7]);
        let m = g.into_mesh().unwrap();
        assert_eq!(m.n_triangles(), 1);
    }

    #[test]
    fn gmsh_errors_are_located() {
        let quad = MINIMAL.replace("1 2 2 7 1 1 2 3", "1 3 2 7 1 1 2 3 1");
        match read_gmsh_v2(&quad) {
            Err(IoError::MalformedSection { line: 12, message }) => assert!(message.contains("type 3")),
            other => panic!("{other:?}"),
        }
        let v4 = MINIMAL.replace("2.2 0 8", "4.1 0 8");
        assert!(matches!(read_gmsh_v2(&v4), Err(IoError::UnsupportedVersion { line: 2, .. })));
        let z = MINIMAL.replace("3 0 1 0", "3 0 1 0.5");
        assert!(matches!(read_gmsh_v2(&z), Err(IoError::NonPlanar { line: 8, .. })));
    }

    #[test]
    fn native_roundtrip() {
        let m = Mesh::unit_square(2, |c| u32::from(c[0] > 0.5)).with_boundary_markers(vec![([0, 1], 3)]);
        let text = write_native(&m);
        let back = read_native(&text).unwrap();
        assert_eq!(back.triangles(), m.triangles());
        assert_eq!(back.region_tags(), m.region_tags());
        assert_eq!(back.nodes(), m.nodes());
        assert_eq!(back.boundary_markers(), m.boundary_markers());
        let g = read_gmsh_v2(&write_gmsh_v2(&m)).unwrap().into_mesh().unwrap();
        assert_eq!(write_native(&g), text);
    }

    #[test]
    fn vtk_examples() {
        let m = Mesh::unit_square(1, |_| 0);
        let s = write_vtk_legacy(&m, &[VtkField::new("a", VtkData::CellScalar(vec![1.0, 1.0]))]).unwrap();
        assert!(s.starts_with("# vtk DataFile Version"));
        assert!(s.contains("CELL_DATA 2"));
        let g = write_vtk_legacy(&m, &[]).unwrap();
        assert!(!g.contains("CELL_DATA") && !g.contains("POINT_DATA"));
        assert!(matches!(
            write_vtk_legacy(&m, &[VtkField::new("b", VtkData::PointScalar(vec![0.0]))]),
            Err(IoError::FieldSizeMismatch { expected: 4, got: 1, .. })
        ));
    }

    #[test]
    fn material_file() {
        let text = r#"
[[region]]
tag = 1
law = "linear"
mu_r = 1.0
current = 2.0

[[region]]
tag = 2
law = "brauer"
sigma = 1.0
brauer = { k1 = 2e-4, k2 = 2.0, k3 = 8e-4, b_max = 3.0, intervals = 60 }

[[region]]
tag = 3
law = "bh-curve"
bh = [[0.5, 100.0], [1.0, 220.0], [1.5, 600.0]]
"#;
        let m = parse_material_file(text, Path::new(".")).unwrap();
        assert_eq!(m.region(1).unwrap().law, MaterialLaw::linear(MU0));
        assert!(!m.region(2).unwrap().law.is_linear());
        assert!(parse_material_file("[[region]]\ntag = 1\nlaw = \"linear\"\n", Path::new(".")).is_err());
        assert!(parse_material_file("[[region]]\ntag = 1\nlaw = \"steel\"\nmu = 1.0\n", Path::new(".")).is_err());
    }

    #[test]
    fn bh_csv() {
        let pts = read_bh_csv("B,H\n0.5,100\n1.0,220\n").unwrap();
        assert_eq!(pts, vec![(0.5, 100.0), (1.0, 220.0)]);
        assert!(matches!(read_bh_csv("0.5,100\nx,y\n"), Err(IoError::MalformedSection { line: 2, .. })));
    }

    #[test]
    fn study_config() {
        let c = StudyConfig::parse("case = \"checkerboard\"\nlevels = 3\n").unwrap();
        assert_eq!(c.levels, 3);
        assert_eq!(c.formulation, FormulationChoice::Both);
        assert!(StudyConfig::parse("case = \"mesh\"\n").is_err());
        assert!(StudyConfig::parse("case = \"manufactured\"\norder = 3\n").is_err());
        assert!(StudyConfig::parse("case = \"manufactured\"\nbogus = 1\n").is_err());
    }
}
