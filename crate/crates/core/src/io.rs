//! Geometry text files, CSV result tables, VTK stress export and the benchmark driver.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;

use crate::c1basis::{C1Space, Discretisation};
use crate::error::{Error, Result};
use crate::factory::{make_case, BenchmarkCase, CaseName};
use crate::shell::{ShellModel, ShellState};
use crate::solvers::{arc_length, newton, ArcLengthSettings, NewtonSettings};
use crate::sparse::{dot, solve};
use crate::spline::{TensorSplinePatch, TensorSplineSpace, UnivariateSplineSpace};
use crate::topology::MultiPatchSurface;

pub const GEOMETRY_HEADER: &str = "c1shell-geometry 1";
pub const CONVERGENCE_SCHEMA: &str = "# schema: c1shell-convergence/1";
pub const PATH_SCHEMA: &str = "# schema: c1shell-path/1";
/// Default number of stress samples per patch and direction.
pub const DEFAULT_VTK_SAMPLES: usize = 17;

/// Serialises a surface; every coefficient is written with 17 significant digits so that
/// parsing restores it bitwise.
pub fn write_geometry(surface: &MultiPatchSurface) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{GEOMETRY_HEADER}");
    let _ = writeln!(s, "patches {}", surface.patches.len());
    for (i, patch) in surface.patches.iter().enumerate() {
        let dir = &patch.space.dir;
        let _ = writeln!(s, "patch {i}");
        let _ = writeln!(s, "degree {} {}", dir.degree(), dir.degree());
        for name in ["knots_u", "knots_v"] {
            let knots: Vec<String> = dir.knots().iter().map(|t| format!("{t:.16e}")).collect();
            let _ = writeln!(s, "{name} {}", knots.join(" "));
        }
        let _ = writeln!(s, "points {} {}", dir.dim(), dir.dim());
        for p in &patch.points {
            let _ = writeln!(s, "{:.16e} {:.16e} {:.16e}", p.x, p.y, p.z);
        }
    }
    let _ = writeln!(s, "end");
    s
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    /// Next non-empty, non-comment line with its 1-based number.
    fn next(&mut self, section: &str) -> Result<(usize, &'a str)> {
        for (i, line) in self.inner.by_ref() {
            self.last = i + 1;
            let t = line.trim();
            if !t.is_empty() && !t.starts_with('#') {
                return Ok((i + 1, t));
            }
        }
        Err(Error::Parse { line: self.last + 1, message: format!("missing section '{section}'") })
    }

    /// Line of the form `keyword values...`.
    fn keyword(&mut self, key: &str) -> Result<(usize, Vec<&'a str>)> {
        let (n, line) = self.next(key)?;
        let mut it = line.split_whitespace();
        if it.next() != Some(key) {
            return Err(Error::Parse { line: n, message: format!("expected section '{key}', found '{line}'") });
        }
        Ok((n, it.collect()))
    }
}

fn parse_num<T: std::str::FromStr>(line: usize, s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Parse { line, message: format!("invalid number '{s}'") })
}

fn parse_float(line: usize, s: &str) -> Result<f64> {
    let v: f64 = parse_num(line, s)?;
    if !v.is_finite() {
        return Err(Error::Parse { line, message: format!("non-finite number '{s}'") });
    }
    Ok(v)
}

fn expect_count(line: usize, got: usize, want: usize, what: &str) -> Result<()> {
    if got != want {
        return Err(Error::Parse { line, message: format!("{what}: expected {want} values, found {got}") });
    }
    Ok(())
}

/// Parses the format written by [`write_geometry`].
pub fn parse_geometry(text: &str) -> Result<MultiPatchSurface> {
    let mut lines = Lines { inner: text.lines().enumerate(), last: 0 };
    let (n, header) = lines.next("header")?;
    if header != GEOMETRY_HEADER {
        return Err(Error::Parse { line: n, message: format!("unsupported header '{header}', expected '{GEOMETRY_HEADER}'") });
    }
    let (n, v) = lines.keyword("patches")?;
    expect_count(n, v.len(), 1, "patches")?;
    let count: usize = parse_num(n, v[0])?;
    let mut patches = Vec::with_capacity(count);
    for i in 0..count {
        let (n, v) = lines.keyword("patch").map_err(|e| rename_missing(e, &format!("patch {i}")))?;
        expect_count(n, v.len(), 1, "patch")?;
        if parse_num::<usize>(n, v[0])? != i {
            return Err(Error::Parse { line: n, message: format!("expected patch {i}") });
        }
        let (n, v) = lines.keyword("degree")?;
        expect_count(n, v.len(), 2, "degree")?;
        let (pu, pv): (usize, usize) = (parse_num(n, v[0])?, parse_num(n, v[1])?);
        let mut spaces = Vec::new();
        for (name, p) in [("knots_u", pu), ("knots_v", pv)] {
            let (n, v) = lines.keyword(name)?;
            let knots = v.iter().map(|s| parse_float(n, s)).collect::<Result<Vec<_>>>()?;
            let space = UnivariateSplineSpace::from_knots(p, &knots).map_err(|e| Error::Parse { line: n, message: e.to_string() })?;
            spaces.push((n, space));
        }
        if spaces[0].1 != spaces[1].1 {
            return Err(Error::Parse { line: spaces[1].0, message: "both directions must use the same spline space".into() });
        }
        let dir = spaces.swap_remove(0).1;
        let (n, v) = lines.keyword("points")?;
        expect_count(n, v.len(), 2, "points")?;
        let (n1, n2): (usize, usize) = (parse_num(n, v[0])?, parse_num(n, v[1])?);
        if n1 != dir.dim() || n2 != dir.dim() {
            return Err(Error::Parse { line: n, message: format!("control net {n1} x {n2} does not match space dimension {}", dir.dim()) });
        }
        let mut points = Vec::with_capacity(n1 * n2);
        for _ in 0..n1 * n2 {
            let (n, line) = lines.next(&format!("control points of patch {i}"))?;
            let v: Vec<&str> = line.split_whitespace().collect();
            expect_count(n, v.len(), 3, "control point")?;
            points.push(Vector3::new(parse_float(n, v[0])?, parse_float(n, v[1])?, parse_float(n, v[2])?));
        }
        let patch = TensorSplinePatch::new(TensorSplineSpace { dir }, points).map_err(|e| Error::Parse { line: n, message: e.to_string() })?;
        patches.push(patch);
    }
    let (n, end) = lines.next("end")?;
    if end != "end" {
        return Err(Error::Parse { line: n, message: format!("expected 'end', found '{end}'") });
    }
    MultiPatchSurface::new(patches)
}

fn rename_missing(e: Error, section: &str) -> Error {
    match e {
        Error::Parse { line, message } if message.starts_with("missing section") => Error::Parse { line, message: format!("missing section '{section}'") },
        other => other,
    }
}

pub fn read_geometry(path: &Path) -> Result<MultiPatchSurface> {
    parse_geometry(&fs::read_to_string(path)?)
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(format!("{what}, entry {i}"))),
        None => Ok(()),
    }
}

/// One row of a convergence table.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub level: usize,
    pub dofs: usize,
    /// Vertical displacement at the first monitor.
    pub w_a: f64,
    /// Strain energy norm `uᵀ K u`.
    pub b: f64,
}

pub fn convergence_csv(rows: &[ConvergenceRow]) -> Result<String> {
    let mut s = format!("{CONVERGENCE_SCHEMA}\nlevel,dofs,w_A,B\n");
    for r in rows {
        check_finite(&[r.w_a, r.b], "convergence row")?;
        let _ = writeln!(s, "{},{},{:.16e},{:.16e}", r.level, r.dofs, r.w_a, r.b);
    }
    Ok(s)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathRow {
    pub step: usize,
    pub lambda: f64,
    /// In-plane displacement component at the monitor along the load direction.
    pub u_monitor: f64,
    /// Out-of-plane displacement at the monitor.
    pub w_monitor: f64,
}

pub fn path_csv(rows: &[PathRow]) -> Result<String> {
    let mut s = format!("{PATH_SCHEMA}\nstep,lambda,u_monitor,w_monitor\n");
    for r in rows {
        check_finite(&[r.lambda, r.u_monitor, r.w_monitor], "path row")?;
        let _ = writeln!(s, "{},{:.16e},{:.16e},{:.16e}", r.step, r.lambda, r.u_monitor, r.w_monitor);
    }
    Ok(s)
}

/// Legacy ASCII VTK polydata of the undeformed surface sampled on `samples × samples`
/// points per patch, with the membrane von Mises stress in MPa as point scalars.
pub fn stress_vtk(model: &ShellModel, state: &ShellState, stress_to_mpa: f64, samples: usize) -> Result<String> {
    if samples < 2 {
        return Err(Error::Parameter(format!("visualisation grid needs at least 2 samples, got {samples}")));
    }
    let patches = model.space.surface.patches.len();
    let mut pts = Vec::with_capacity(patches * samples * samples);
    let mut vm = Vec::with_capacity(pts.capacity());
    for q in 0..patches {
        for j in 0..samples {
            for i in 0..samples {
                let xi = [i as f64 / (samples - 1) as f64, j as f64 / (samples - 1) as f64];
                pts.push(model.point(q, xi)?);
                vm.push(model.von_mises_membrane(state, q, xi)? * stress_to_mpa);
            }
        }
    }
    check_finite(&vm, "von Mises field")?;
    let cells = patches * (samples - 1) * (samples - 1);
    let mut s = String::new();
    let _ = writeln!(s, "# vtk DataFile Version 3.0\nc1shell membrane von Mises stress\nASCII\nDATASET POLYDATA");
    let _ = writeln!(s, "POINTS {} double", pts.len());
    for p in &pts {
        let _ = writeln!(s, "{:.9e} {:.9e} {:.9e}", p.x, p.y, p.z);
    }
    let _ = writeln!(s, "POLYGONS {cells} {}", 5 * cells);
    for q in 0..patches {
        let base = q * samples * samples;
        for j in 0..samples - 1 {
            for i in 0..samples - 1 {
                let a = base + j * samples + i;
                let _ = writeln!(s, "4 {} {} {} {}", a, a + 1, a + samples + 1, a + samples);
            }
        }
    }
    let _ = writeln!(s, "POINT_DATA {}\nSCALARS von_mises_membrane_MPa double 1\nLOOKUP_TABLE default", pts.len());
    for v in &vm {
        let _ = writeln!(s, "{v:.9e}");
    }
    Ok(s)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Analysis {
    Linear,
    Newton,
    ArcLength,
}

impl Analysis {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "newton" => Ok(Self::Newton),
            "arclength" => Ok(Self::ArcLength),
            _ => Err(Error::Parameter(format!("unknown analysis '{s}', expected linear, newton or arclength"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub case: CaseName,
    pub p: usize,
    pub r: usize,
    /// Analysis element counts per patch direction, one per refinement level.
    pub levels: Vec<usize>,
    pub analysis: Analysis,
    /// Load factor of Newton analyses.
    pub lambda: f64,
    pub newton: NewtonSettings,
    pub arc_length: ArcLengthSettings,
    pub output: PathBuf,
    pub vtk_samples: usize,
    pub parallel: bool,
}

impl RunConfig {
    pub fn new(case: CaseName, output: PathBuf) -> Self {
        Self {
            case,
            p: 4,
            r: 2,
            levels: vec![4],
            analysis: Analysis::Linear,
            lambda: 1.0,
            newton: NewtonSettings::default(),
            arc_length: ArcLengthSettings::default(),
            output,
            vtk_samples: DEFAULT_VTK_SAMPLES,
            parallel: true,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOutput {
    pub files: Vec<PathBuf>,
    pub convergence: Vec<ConvergenceRow>,
    pub path: Vec<PathRow>,
    pub limit_load: Option<f64>,
}

/// Shell model of a benchmark at `k` elements per patch direction.
pub fn build_model(case: &BenchmarkCase, p: usize, r: usize, k: usize) -> Result<ShellModel> {
    let space = C1Space::new(&case.surface, &case.topology, Discretisation::new(p, r, k))?;
    ShellModel::new(space, case.material, case.loads.clone(), case.bcs.clone())
}

fn monitor(case: &BenchmarkCase) -> Result<&crate::factory::Monitor> {
    case.monitors.first().ok_or_else(|| Error::Factory(format!("case {} has no monitor", case.name.as_str())))
}

fn write_file(out: &mut RunOutput, path: PathBuf, text: &str) -> Result<()> {
    fs::write(&path, text)?;
    out.files.push(path);
    Ok(())
}

/// Runs the configured analysis on every level. Completed results are written before an
/// error of a later level is returned.
pub fn run(config: &RunConfig) -> Result<RunOutput> {
    if config.levels.is_empty() {
        return Err(Error::Parameter("no refinement levels given".into()));
    }
    fs::create_dir_all(&config.output)?;
    let case = make_case(config.case)?;
    let mon = monitor(&case)?.clone();
    let mut out = RunOutput::default();
    let name = config.case.as_str();
    let mut last: Option<(ShellModel, Vec<f64>)> = None;
    let mut failure = None;
    for (level, &k) in config.levels.iter().enumerate() {
        let mut model = build_model(&case, config.p, config.r, k)?;
        model.parallel = config.parallel;
        let (k0, f) = model.linear_system()?;
        let result = match config.analysis {
            Analysis::Linear => solve(&k0, &f).map(|(u, _)| u),
            Analysis::Newton => newton(&model, &vec![0.0; model.num_dofs()], config.lambda, &config.newton).map(|r| r.u),
            Analysis::ArcLength => {
                let path = arc_length(&model, &config.arc_length, &|u| {
                    let st = model.state(u)?;
                    let d = model.displacement_at(&st, mon.patch, mon.xi)?;
                    Ok(vec![d.x, d.z])
                })?;
                let rows: Vec<PathRow> = path
                    .points
                    .iter()
                    .enumerate()
                    .map(|(step, p)| PathRow { step, lambda: p.lambda, u_monitor: p.monitors[0], w_monitor: p.monitors[1] })
                    .collect();
                write_file(&mut out, config.output.join(format!("{name}_path_k{k}.csv")), &path_csv(&rows)?)?;
                out.path = rows;
                out.limit_load = path.limit_load;
                let u = path.points.last().map(|p| p.u.clone()).unwrap_or_default();
                match path.terminated {
                    Some(reason) => Err(Error::ArcLength(reason)),
                    None => Ok(u),
                }
            }
        };
        let u = match result {
            Ok(u) => u,
            Err(e) => {
                failure = Some(e);
                break;
            }
        };
        check_finite(&u, "solution vector")?;
        let state = model.state(&u)?;
        let w_a = model.displacement_at(&state, mon.patch, mon.xi)?.z;
        out.convergence.push(ConvergenceRow { level, dofs: model.num_dofs(), w_a, b: dot(&u, &k0.mul_vec(&u)) });
        last = Some((model, u));
    }
    if !out.convergence.is_empty() && config.analysis != Analysis::ArcLength {
        let csv = convergence_csv(&out.convergence)?;
        write_file(&mut out, config.output.join(format!("{name}_convergence.csv")), &csv)?;
    }
    if let Some((model, u)) = &last {
        let state = model.state(u)?;
        let vtk = stress_vtk(model, &state, case.stress_to_mpa, config.vtk_samples)?;
        write_file(&mut out, config.output.join(format!("{name}_von_mises.vtk")), &vtk)?;
    }
    match failure {
        Some(e) => Err(e),
        None => Ok(out),
    }
}
