//! Benchmark geometries with their material, load and support data.
//!
//! Curved cases are exact compositions of a planar multi-patch layout with the hyperbolic
//! paraboloid `F(x, y) = (x, y, x² - y²)`. Composition with a polynomial map keeps the
//! gluing data of the planar layout, so AS-G1 planar layouts give AS-G1 surfaces.

use nalgebra::{Vector2, Vector3};

use crate::error::{Error, Result};
use crate::gluing::{as_g1_linearize, verify_as_g1};
use crate::shell::{invert_planar, BoundaryConditionSet, LoadCase, PointLoad, ShellMaterial, Support, DEFAULT_PENALTY};
use crate::spline::{Interpolator, TensorSplinePatch, UnivariateSplineSpace};
use crate::topology::{build_topology, default_tolerance, Edge, MultiPatchSurface, Side, Topology};

/// Admissible ASCOND residual of every factory surface.
pub const AS_G1_TOL: f64 = 1e-10;

/// Polynomial surface map of coordinate-wise total degree at most two.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolynomialMap {
    /// `(x, y) ↦ (x, y, 0)`.
    Embedding,
    /// `(x, y) ↦ (x, y, x² - y²)`.
    HyperbolicParaboloid,
}

impl PolynomialMap {
    pub fn degree(self) -> usize {
        match self {
            PolynomialMap::Embedding => 1,
            PolynomialMap::HyperbolicParaboloid => 2,
        }
    }

    pub fn eval(self, x: f64, y: f64) -> Vector3<f64> {
        match self {
            PolynomialMap::Embedding => Vector3::new(x, y, 0.0),
            PolynomialMap::HyperbolicParaboloid => Vector3::new(x, y, x * x - y * y),
        }
    }
}

/// Exact spline representation of `F ∘ q` for a planar patch `q` of degree `p` and
/// regularity `r`: degree `p · deg F`, regularity `r`, same mesh.
pub fn compose_surface(f: PolynomialMap, q: &TensorSplinePatch) -> Result<TensorSplinePatch> {
    if q.points.iter().any(|x| x.z != 0.0) {
        return Err(Error::Factory("composition expects a planar patch in the plane z = 0".into()));
    }
    let dir = &q.space.dir;
    let p = dir.degree() * f.degree();
    let r = if dir.elements() == 1 { p as i32 - 1 } else { dir.regularity() };
    let target = UnivariateSplineSpace::new(p, r, dir.elements())?;
    let interp = Interpolator::new(&target);
    let out = q.fit_from(&interp, |xi| {
        let x = q.eval(xi)?;
        Ok(f.eval(x.x, x.y))
    })?;
    let scale = q.bbox_diagonal().max(1.0);
    // Low-discrepancy samples in the parameter square.
    for i in 0..200 {
        let xi = [halton(i + 1, 2), halton(i + 1, 3)];
        let x = q.eval(xi)?;
        let err = (out.eval(xi)? - f.eval(x.x, x.y)).norm();
        if err > 1e-12 * scale * scale {
            return Err(Error::Factory(format!("composition error {err:e} at {xi:?}")));
        }
    }
    Ok(out)
}

fn halton(mut i: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CaseName {
    Hyperboloid6p1,
    Hyperboloid6p2,
    HyperboloidHole4p,
    Lshape2p,
    LshapeHoles25p,
    SinglePatchHyperboloid,
}

impl CaseName {
    pub const ALL: [CaseName; 6] = [
        CaseName::Hyperboloid6p1,
        CaseName::Hyperboloid6p2,
        CaseName::HyperboloidHole4p,
        CaseName::Lshape2p,
        CaseName::LshapeHoles25p,
        CaseName::SinglePatchHyperboloid,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CaseName::Hyperboloid6p1 => "hyperboloid_6p_1",
            CaseName::Hyperboloid6p2 => "hyperboloid_6p_2",
            CaseName::HyperboloidHole4p => "hyperboloid_hole_4p",
            CaseName::Lshape2p => "lshape_2p",
            CaseName::LshapeHoles25p => "lshape_holes_25p",
            CaseName::SinglePatchHyperboloid => "single_patch_hyperboloid",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown case '{s}'")))
    }
}

/// Named evaluation point on the undeformed surface.
#[derive(Clone, Debug, PartialEq)]
pub struct Monitor {
    pub name: String,
    pub patch: usize,
    pub xi: [f64; 2],
}

#[derive(Clone, Debug)]
pub struct BenchmarkCase {
    pub name: CaseName,
    pub surface: MultiPatchSurface,
    pub topology: Topology,
    pub material: ShellMaterial,
    pub loads: LoadCase,
    pub bcs: BoundaryConditionSet,
    pub monitors: Vec<Monitor>,
    /// Factor converting stresses in model units to MPa.
    pub stress_to_mpa: f64,
}

fn v2(x: f64, y: f64) -> Vector3<f64> {
    Vector3::new(x, y, 0.0)
}

fn quad(v: [(f64, f64); 4]) -> TensorSplinePatch {
    TensorSplinePatch::bilinear(v.map(|(x, y)| v2(x, y)))
}

/// Left half of layout 1. The right half is its point reflection through the origin.
fn layout_1() -> Vec<TensorSplinePatch> {
    let c = (-0.25, -0.05);
    let e = (0.0, 0.0);
    let cn = (0.0, 0.5);
    let d = (-0.5, 0.5);
    let a = (-0.5, -0.5);
    let b = (0.0, -0.5);
    let s3 = (-0.25, -0.5);
    let left = [[c, e, cn, d], [c, d, a, s3], [c, s3, b, e]];
    let neg = |(x, y): (f64, f64)| (-x, -y);
    left.iter().map(|q| quad(*q)).chain(left.iter().map(|q| quad(q.map(neg)))).collect()
}

/// Layout 2: five boundary patches around a central quadrilateral.
fn layout_2() -> Vec<TensorSplinePatch> {
    let sw = (-0.5, -0.5);
    let se = (0.5, -0.5);
    let ne = (0.5, 0.5);
    let nw = (-0.5, 0.5);
    let nm = (0.0, 0.5);
    let wm = (-0.5, 0.0);
    let x2 = (-0.2, -0.25);
    let x1 = (0.25, -0.2);
    let y = (0.2, 0.2);
    let z = (-0.15, 0.15);
    [[sw, se, x1, x2], [se, ne, y, x1], [ne, nm, z, y], [nm, nw, wm, z], [wm, sw, x2, z], [x2, x1, y, z]]
        .map(quad)
        .into_iter()
        .collect()
}

/// Hole radius of the perforated hyperboloid.
pub const HOLE_RADIUS: f64 = 0.15;

/// Planar ring between a degree-2 approximation of the circle of radius `R` and the
/// square `[-½, ½]²`, four patches of bidegree (2, 2), regularity 1 and four elements.
/// Patch `q` covers the angular sector `[-45° + 90° q, 45° + 90° q]`; its side `ξ1 = 0`
/// lies on the circle.
pub fn hole_ring() -> Result<MultiPatchSurface> {
    let space = UnivariateSplineSpace::new(2, 1, 4)?;
    let interp = Interpolator::new(&space);
    let g = interp.nodes().to_vec();
    let angle = |v: f64| std::f64::consts::FRAC_PI_2 * (v - 0.5);
    // Circle approximation: interpolation at the Greville points.
    let circle = interp.fit(&g.iter().map(|&v| HOLE_RADIUS * angle(v).cos()).collect::<Vec<_>>());
    let circle_y = interp.fit(&g.iter().map(|&v| HOLE_RADIUS * angle(v).sin()).collect::<Vec<_>>());
    let inner = |v: f64| -> Result<Vector2<f64>> {
        Ok(Vector2::new(space.eval_function(&circle, v, 0)?[0], space.eval_function(&circle_y, v, 0)?[0]))
    };
    let base = TensorSplinePatch::new(crate::spline::TensorSplineSpace { dir: space.clone() }, vec![Vector3::zeros(); space.dim().pow(2)])?;
    let mut patches = Vec::new();
    for q in 0..4 {
        let rot = nalgebra::Rotation2::new(std::f64::consts::FRAC_PI_2 * q as f64);
        let patch = base.fit_from(&interp, |[u, v]| {
            let a = inner(v)?;
            let b = Vector2::new(0.5, v - 0.5);
            let x = rot * (a * (1.0 - u) + b * u);
            Ok(Vector3::new(x.x, x.y, 0.0))
        })?;
        patches.push(patch);
    }
    MultiPatchSurface::new(patches)
}

/// Axis-aligned rectangles of the perforated L-shape: three bands across the width, holes
/// in the middle band of both legs.
fn lshape_holes_layout() -> Vec<TensorSplinePatch> {
    let bands = [225.0, 235.0, 245.0, 255.0];
    let legs = [0.0, 85.0, 140.0, 225.0];
    let rect = |x0: f64, x1: f64, y0: f64, y1: f64| quad([(x0, y0), (x1, y0), (x1, y1), (x0, y1)]);
    let mut out = Vec::new();
    for s in 0..3 {
        for b in 0..3 {
            if s == 1 && b == 1 {
                continue;
            }
            out.push(rect(legs[s], legs[s + 1], bands[b], bands[b + 1]));
        }
    }
    for s in 0..3 {
        for b in 0..3 {
            if s == 1 && b == 1 {
                continue;
            }
            out.push(rect(bands[b], bands[b + 1], legs[s], legs[s + 1]));
        }
    }
    for i in 0..3 {
        for j in 0..3 {
            out.push(rect(bands[i], bands[i + 1], bands[j], bands[j + 1]));
        }
    }
    out
}

/// Boundary edges whose control points all satisfy `pred`.
pub fn boundary_edges_where(surface: &MultiPatchSurface, topology: &Topology, pred: impl Fn(&Vector3<f64>) -> bool) -> Vec<usize> {
    topology
        .edges
        .iter()
        .enumerate()
        .filter_map(|(e, edge)| match *edge {
            Edge::Boundary { patch, side } => {
                let pts = side.table_indices(surface.patches[patch].n()).into_iter().map(|(a, b)| surface.patches[patch].point(a, b));
                pts.into_iter().collect::<Vec<_>>().iter().all(&pred).then_some(e)
            }
            Edge::Interface(_) => None,
        })
        .collect()
}

/// First patch and parameter whose planar projection hits `target`.
pub fn locate(surface: &MultiPatchSurface, target: Vector2<f64>) -> Result<(usize, [f64; 2])> {
    surface
        .patches
        .iter()
        .enumerate()
        .find_map(|(i, p)| invert_planar(p, target).map(|xi| (i, xi)))
        .ok_or_else(|| Error::Factory(format!("point {target:?} not found on the surface")))
}

fn finish(
    name: CaseName,
    surface: MultiPatchSurface,
    material: ShellMaterial,
    loads: LoadCase,
    clamp: impl Fn(&Vector3<f64>) -> bool,
    monitors: Vec<Monitor>,
    stress_to_mpa: f64,
) -> Result<BenchmarkCase> {
    let topology = build_topology(&surface, default_tolerance(&surface))?;
    let worst = verify_as_g1(&surface, &topology).into_iter().find(|r| !r.passes(AS_G1_TOL));
    if let Some(r) = worst {
        return Err(Error::Factory(format!("{}: edge {} fails AS-G1 with residual {:e}", name.as_str(), r.edge, r.residual)));
    }
    let clamped = boundary_edges_where(&surface, &topology, clamp);
    if clamped.is_empty() {
        return Err(Error::Factory(format!("{}: no clamped edges found", name.as_str())));
    }
    let bcs = BoundaryConditionSet { edges: clamped.into_iter().map(|e| (e, Support::ClampedWeak)).collect(), penalty: DEFAULT_PENALTY };
    Ok(BenchmarkCase { name, surface, topology, material, loads, bcs, monitors, stress_to_mpa })
}

/// Default out-of-plane perturbation ratio `P_s / P` of the L-shape cases.
pub const PERTURBATION_RATIO: f64 = 1e-3;

pub fn make_case(name: CaseName) -> Result<BenchmarkCase> {
    let hyperboloid = |patches: Vec<TensorSplinePatch>, monitor_target: Vector2<f64>, monitor_name: &str| -> Result<BenchmarkCase> {
        let planar = MultiPatchSurface::new(patches)?;
        let surface = MultiPatchSurface::new(
            planar.patches.iter().map(|q| compose_surface(PolynomialMap::HyperbolicParaboloid, q)).collect::<Result<_>>()?,
        )?;
        let t = 0.01;
        let material = ShellMaterial::new(2e11, 0.3, t)?;
        let loads = LoadCase { surface_load: Vector3::new(0.0, 0.0, -8000.0 * t), surface_follows_lambda: true, point_loads: Vec::new() };
        let (patch, xi) = locate(&surface, monitor_target)?;
        let monitors = vec![Monitor { name: monitor_name.into(), patch, xi }];
        finish(name, surface, material, loads, |x| (x.x + 0.5).abs() < 1e-12, monitors, 1e-6)
    };
    let a = Vector2::new(0.5, 0.0);
    match name {
        CaseName::Hyperboloid6p1 => hyperboloid(layout_1(), a, "A"),
        CaseName::Hyperboloid6p2 => hyperboloid(layout_2(), a, "A"),
        CaseName::SinglePatchHyperboloid => hyperboloid(vec![quad([(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)])], a, "A"),
        CaseName::HyperboloidHole4p => {
            let ring = hole_ring()?;
            let topo = build_topology(&ring, default_tolerance(&ring))?;
            let ring = as_g1_linearize(&ring, &topo)?;
            // Monitor on the hole boundary on the positive x axis.
            let hole = ring.patches[0].eval([0.0, 0.5])?;
            hyperboloid(ring.patches, Vector2::new(hole.x, hole.y), "A_hole")
        }
        CaseName::Lshape2p | CaseName::LshapeHoles25p => {
            let patches = if name == CaseName::Lshape2p {
                vec![
                    quad([(0.0, 225.0), (225.0, 225.0), (255.0, 255.0), (0.0, 255.0)]),
                    quad([(225.0, 0.0), (255.0, 0.0), (255.0, 255.0), (225.0, 225.0)]),
                ]
            } else {
                lshape_holes_layout()
            };
            let surface = MultiPatchSurface::new(patches)?;
            let material = ShellMaterial::new(71240.0, 0.31, 0.6)?;
            let (patch, xi) = locate(&surface, Vector2::new(255.0, 0.0))?;
            let p = 1.0;
            let loads = LoadCase {
                surface_load: Vector3::zeros(),
                surface_follows_lambda: true,
                point_loads: vec![
                    PointLoad { patch, xi, force: Vector3::new(p, 0.0, 0.0), follows_lambda: true },
                    PointLoad { patch, xi, force: Vector3::new(0.0, 0.0, PERTURBATION_RATIO * p), follows_lambda: true },
                ],
            };
            let monitors = vec![Monitor { name: "tip".into(), patch, xi }];
            finish(name, surface, material, loads, |x| x.x.abs() < 1e-9, monitors, 1.0)
        }
    }
}

/// Side of a patch as a convenience for tests and drivers.
pub fn boundary_side(topology: &Topology, edge: usize) -> Option<(usize, Side)> {
    match topology.edges.get(edge)? {
        Edge::Boundary { patch, side } => Some((*patch, *side)),
        Edge::Interface(_) => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_of_square() {
        let q = quad([(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)]);
        let p = compose_surface(PolynomialMap::Embedding, &q).unwrap();
        assert_eq!(p.space.dir.degree(), 1);
        assert!(p.points.iter().all(|x| x.z == 0.0));
    }

    #[test]
    fn composed_degrees() {
        let q = quad([(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)]);
        let p = compose_surface(PolynomialMap::HyperbolicParaboloid, &q).unwrap();
        assert_eq!(p.space.dir.degree(), 2);
        let ring = hole_ring().unwrap();
        let c = compose_surface(PolynomialMap::HyperbolicParaboloid, &ring.patches[0]).unwrap();
        assert_eq!(c.space.dir.degree(), 4);
        assert_eq!(c.space.dir.regularity(), 1);
        for i in 0..50 {
            let xi = [halton(i + 1, 2), halton(i + 1, 3)];
            let x = q.eval(xi).unwrap();
            assert!((p.eval(xi).unwrap().z - (x.x * x.x - x.y * x.y)).abs() < 1e-14);
        }
    }

    #[test]
    fn non_planar_input_rejected() {
        let q = TensorSplinePatch::bilinear([Vector3::new(0., 0., 1.), v2(1., 0.), v2(1., 1.), v2(0., 1.)]);
        assert!(compose_surface(PolynomialMap::HyperbolicParaboloid, &q).is_err());
    }

    #[test]
    fn patch_counts_and_vertices() {
        let l2 = make_case(CaseName::Lshape2p).unwrap();
        assert_eq!(l2.surface.patches.len(), 2);
        let l25 = make_case(CaseName::LshapeHoles25p).unwrap();
        assert_eq!(l25.surface.patches.len(), 25);
        for name in [CaseName::Hyperboloid6p1, CaseName::Hyperboloid6p2] {
            let c = make_case(name).unwrap();
            assert_eq!(c.surface.patches.len(), 6);
            let ev = c.topology.vertices.iter().filter(|v| !v.boundary && v.valence() != 4).count();
            assert!(ev >= 2, "{name:?} has {ev} interior extraordinary vertices");
        }
    }

    #[test]
    fn hyperboloid_monitor_on_surface() {
        let c = make_case(CaseName::Hyperboloid6p1).unwrap();
        let m = &c.monitors[0];
        let x = c.surface.patches[m.patch].eval(m.xi).unwrap();
        assert!((x - Vector3::new(0.5, 0.0, 0.25)).norm() < 1e-12);
    }

    #[test]
    fn planar_lshape() {
        for name in [CaseName::Lshape2p, CaseName::LshapeHoles25p] {
            let c = make_case(name).unwrap();
            assert!(c.surface.patches.iter().all(|p| p.space.dir.degree() == 1 && p.points.iter().all(|x| x.z == 0.0)));
        }
    }
}
