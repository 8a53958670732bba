//! Geometrically nonlinear Kirchhoff-Love shell discretised with a [`C1Space`].
//!
//! Unknowns are displacement coefficients `u[3 g + i]` (component `i` of basis function
//! `g`). Energies are integrated over the undeformed surface with Gauss-Legendre rules of
//! `p + 1` points per direction and analysis element. The element kernels work on the
//! tensor B-splines of the element and are mapped to the global basis with the local
//! extraction matrix.

use nalgebra::{DMatrix, Matrix2, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use crate::c1basis::C1Space;
use crate::error::{Error, Result};
use crate::sparse::CscMatrix;
use crate::spline::{gauss_legendre, BasisValues, TensorSplinePatch};
use crate::topology::{Edge, Side};

/// Default dimensionless weak-clamp penalty `α_bc`.
pub const DEFAULT_PENALTY: f64 = 1e4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShellMaterial {
    pub e: f64,
    pub nu: f64,
    pub t: f64,
}

impl ShellMaterial {
    pub fn new(e: f64, nu: f64, t: f64) -> Result<Self> {
        if !(e > 0.0 && t > 0.0 && nu > -1.0 && nu < 0.5) {
            return Err(Error::Parameter(format!("material needs E > 0, t > 0, -1 < nu < 0.5, got E={e}, nu={nu}, t={t}")));
        }
        Ok(Self { e, nu, t })
    }

    /// Plane-stress tensor in Voigt form `[11, 22, 12]` for the contravariant metric `ai`.
    pub fn voigt(&self, ai: &Matrix2<f64>) -> Matrix3<f64> {
        let lambda = self.e * self.nu / (1.0 - self.nu * self.nu);
        let mu = self.e / (2.0 * (1.0 + self.nu));
        let idx = [(0, 0), (1, 1), (0, 1)];
        Matrix3::from_fn(|i, j| {
            let (a, b) = idx[i];
            let (c, d) = idx[j];
            lambda * ai[(a, b)] * ai[(c, d)] + mu * (ai[(a, c)] * ai[(b, d)] + ai[(a, d)] * ai[(b, c)])
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointLoad {
    pub patch: usize,
    pub xi: [f64; 2],
    pub force: Vector3<f64>,
    /// Scaled by the load factor `λ` when set; constant otherwise.
    pub follows_lambda: bool,
}

/// Dead loads: a uniform surface load per undeformed area and point loads.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadCase {
    pub surface_load: Vector3<f64>,
    pub surface_follows_lambda: bool,
    pub point_loads: Vec<PointLoad>,
}

impl LoadCase {
    pub fn none() -> Self {
        Self { surface_load: Vector3::zeros(), surface_follows_lambda: true, point_loads: Vec::new() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Support {
    /// Displacements and the rotation about the edge are penalised.
    ClampedWeak,
    /// Displacements are penalised.
    Pinned,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryConditionSet {
    pub edges: Vec<(usize, Support)>,
    pub penalty: f64,
}

impl BoundaryConditionSet {
    pub fn free() -> Self {
        Self { edges: Vec::new(), penalty: DEFAULT_PENALTY }
    }
}

/// Jets of the local tensor basis at one quadrature point: `[N, N,1, N,2, N,11, N,12, N,22]`.
type BasisJet = [f64; 6];

struct VolumePoint {
    basis: Vec<BasisJet>,
    a: [Vector3<f64>; 2],
    /// Second derivatives `[11, 22, 12]`.
    aa: [Vector3<f64>; 3],
    b_ref: [f64; 3],
    d: Matrix3<f64>,
    weight: f64,
}

struct BoundaryPoint {
    basis: Vec<BasisJet>,
    a: [Vector3<f64>; 2],
    conormal: Vector3<f64>,
    w_disp: f64,
    w_rot: f64,
}

enum Points {
    Volume(Vec<VolumePoint>),
    Boundary(Vec<BoundaryPoint>),
}

struct Element {
    globals: Vec<usize>,
    /// `n_loc × globals.len()` local extraction.
    extraction: DMatrix<f64>,
    points: Points,
}

/// Per-element contributions in the global basis.
struct Contribution {
    energy: f64,
    grad: Vec<f64>,
    /// Blocks `(i, j)` of size `G × G`, row-major in `(i, j)`.
    hess: Option<Vec<DMatrix<f64>>>,
}

pub struct ShellModel {
    pub space: C1Space,
    pub material: ShellMaterial,
    pub loads: LoadCase,
    pub bcs: BoundaryConditionSet,
    /// Length scale of the penalty parameters (surface bounding-box diagonal).
    pub length_scale: f64,
    /// Runs element kernels on the rayon pool when set; results are identical either way.
    pub parallel: bool,
    elements: Vec<Element>,
    neighbours: Vec<Vec<usize>>,
    f_scaled: Vec<f64>,
    f_const: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FundamentalForms {
    pub a: Matrix2<f64>,
    pub b: Matrix2<f64>,
    pub a3: Vector3<f64>,
    pub basis: [Vector3<f64>; 2],
}

/// Displacement field of a coefficient vector, as per-patch vector-valued splines.
pub struct ShellState {
    pub u: Vec<f64>,
    pub displacement: Vec<TensorSplinePatch>,
}

fn local_jets(bu: &BasisValues, bv: &BasisValues, p: usize) -> Vec<BasisJet> {
    let mut out = Vec::with_capacity((p + 1) * (p + 1));
    for a in 0..=p {
        for b in 0..=p {
            let g = |du: usize, dv: usize| {
                if du <= bu.max_deriv && dv <= bv.max_deriv {
                    bu.get(du, a) * bv.get(dv, b)
                } else {
                    0.0
                }
            };
            out.push([g(0, 0), g(1, 0), g(0, 1), g(2, 0), g(1, 1), g(0, 2)]);
        }
    }
    out
}

fn unit(i: usize) -> Vector3<f64> {
    let mut e = Vector3::zeros();
    e[i] = 1.0;
    e
}

/// `w · (e_i × e_j)`.
fn triple(w: &Vector3<f64>, i: usize, j: usize) -> f64 {
    match (i, j) {
        (0, 1) => w[2],
        (1, 2) => w[0],
        (2, 0) => w[1],
        (1, 0) => -w[2],
        (2, 1) => -w[0],
        (0, 2) => -w[1],
        _ => 0.0,
    }
}

/// First variations of the unit normal with respect to the local dofs `3 a + i`.
struct NormalVariation {
    n: Vector3<f64>,
    j: f64,
    at_r: Vec<Vector3<f64>>,
    j_r: Vec<f64>,
    n_r: Vec<Vector3<f64>>,
}

impl NormalVariation {
    fn new(basis: &[BasisJet], a1: &Vector3<f64>, a2: &Vector3<f64>) -> Result<Self> {
        let at = a1.cross(a2);
        let j = at.norm();
        if !(j > 0.0) || !j.is_finite() {
            return Err(Error::SingularGeometry("degenerate tangent basis in the deformed configuration".into()));
        }
        let n = at / j;
        let m = 3 * basis.len();
        let mut at_r = Vec::with_capacity(m);
        let mut j_r = Vec::with_capacity(m);
        let mut n_r = Vec::with_capacity(m);
        for nb in basis {
            for i in 0..3 {
                let e = unit(i);
                let v = e.cross(a2) * nb[1] + a1.cross(&e) * nb[2];
                let jr = n.dot(&v);
                at_r.push(v);
                j_r.push(jr);
                n_r.push((v - n * jr) / j);
            }
        }
        Ok(Self { n, j, at_r, j_r, n_r })
    }

    /// `V · n,rs` for dofs `r = 3a + i`, `s = 3b + j`.
    fn second(&self, basis: &[BasisJet], v: &Vector3<f64>, v_r: &[f64], r: usize, s: usize) -> f64 {
        let (a, i) = (r / 3, r % 3);
        let (b, jj) = (s / 3, s % 3);
        let vn = v.dot(&self.n);
        let w = v - self.n * vn;
        let c = basis[a][1] * basis[b][2] - basis[a][2] * basis[b][1];
        (c * triple(&w, i, jj) - vn * self.n_r[s].dot(&self.at_r[r]) - v_r[s] * self.j_r[r] - v_r[r] * self.j_r[s]) / self.j
    }
}

impl ShellModel {
    pub fn new(space: C1Space, material: ShellMaterial, loads: LoadCase, bcs: BoundaryConditionSet) -> Result<Self> {
        let length_scale = space.surface.bbox_diagonal();
        let dir = space.space.dir.clone();
        let p = dir.degree();
        let k = dir.elements();
        let (gx, gw) = gauss_legendre(p + 1);
        let surface = &space.surface;
        let local_extraction = |patch: usize, e1: usize, e2: usize| -> (Vec<usize>, DMatrix<f64>) {
            let (f1, f2) = (dir.first_active(e1), dir.first_active(e2));
            let rows: Vec<&Vec<(usize, f64)>> = (0..=p)
                .flat_map(|a| (0..=p).map(move |b| (a, b)))
                .map(|(a, b)| &space.extraction.rows[patch][space.space.index(f1 + a, f2 + b)])
                .collect();
            let mut globals: Vec<usize> = rows.iter().flat_map(|r| r.iter().map(|&(g, _)| g)).collect();
            globals.sort_unstable();
            globals.dedup();
            let mut e = DMatrix::zeros(rows.len(), globals.len());
            for (a, row) in rows.iter().enumerate() {
                for &(g, c) in row.iter() {
                    let col = globals.binary_search(&g).expect("global in list");
                    e[(a, col)] += c;
                }
            }
            (globals, e)
        };

        let mut jobs: Vec<(usize, usize, usize, Option<(Side, Support)>)> = Vec::new();
        for patch in 0..surface.patches.len() {
            for e1 in 0..k {
                for e2 in 0..k {
                    jobs.push((patch, e1, e2, None));
                }
            }
        }
        for &(edge, support) in &bcs.edges {
            let Some(Edge::Boundary { patch, side }) = space.topology.edges.get(edge).copied() else {
                return Err(Error::Parameter(format!("edge {edge} is not a boundary edge")));
            };
            for e in 0..k {
                let (e1, e2) = match side {
                    Side::U0 => (0, e),
                    Side::U1 => (k - 1, e),
                    Side::V0 => (e, 0),
                    Side::V1 => (e, k - 1),
                };
                jobs.push((patch, e1, e2, Some((side, support))));
            }
        }
        let e = material.e;
        let t = material.t;
        let alpha = bcs.penalty;
        let build = |&(patch, e1, e2, bc): &(usize, usize, usize, Option<(Side, Support)>)| -> Result<Element> {
            let (globals, extraction) = local_extraction(patch, e1, e2);
            let geo = &surface.patches[patch];
            let (a1, b1) = dir.element_bounds(e1);
            let (a2, b2) = dir.element_bounds(e2);
            let points = match bc {
                None => {
                    let mut pts = Vec::with_capacity(gx.len() * gx.len());
                    for (q1, &s) in gx.iter().enumerate() {
                        for (q2, &r) in gx.iter().enumerate() {
                            let xi = [a1 + s * (b1 - a1), a2 + r * (b2 - a2)];
                            let bu = dir.eval_basis_in(xi[0], e1, 2);
                            let bv = dir.eval_basis_in(xi[1], e2, 2);
                            let jet = geo.eval_jet(xi, 2)?;
                            let metric = Matrix2::new(
                                jet.d[0].dot(&jet.d[0]),
                                jet.d[0].dot(&jet.d[1]),
                                jet.d[1].dot(&jet.d[0]),
                                jet.d[1].dot(&jet.d[1]),
                            );
                            let at = jet.d[0].cross(&jet.d[1]);
                            let area = at.norm();
                            let inv = metric.try_inverse().filter(|_| area > 0.0).ok_or_else(|| {
                                Error::SingularGeometry(format!("patch {patch} at {xi:?}"))
                            })?;
                            let n = at / area;
                            let aa = [jet.dd[0][0], jet.dd[1][1], jet.dd[0][1]];
                            pts.push(VolumePoint {
                                basis: local_jets(&bu, &bv, p),
                                a: jet.d,
                                aa,
                                b_ref: [aa[0].dot(&n), aa[1].dot(&n), aa[2].dot(&n)],
                                d: material.voigt(&inv),
                                weight: gw[q1] * gw[q2] * (b1 - a1) * (b2 - a2) * area,
                            });
                        }
                    }
                    Points::Volume(pts)
                }
                Some((side, support)) => {
                    let mut pts = Vec::with_capacity(gx.len());
                    for (q, &s) in gx.iter().enumerate() {
                        let (xi, len) = match side {
                            Side::U0 => ([0.0, a2 + s * (b2 - a2)], b2 - a2),
                            Side::U1 => ([1.0, a2 + s * (b2 - a2)], b2 - a2),
                            Side::V0 => ([a1 + s * (b1 - a1), 0.0], b1 - a1),
                            Side::V1 => ([a1 + s * (b1 - a1), 1.0], b1 - a1),
                        };
                        let bu = dir.eval_basis_in(xi[0], e1, 1);
                        let bv = dir.eval_basis_in(xi[1], e2, 1);
                        let jet = geo.eval_jet(xi, 1)?;
                        let (tangent, across) = match side {
                            Side::U0 | Side::U1 => (jet.d[1], jet.d[0]),
                            Side::V0 | Side::V1 => (jet.d[0], jet.d[1]),
                        };
                        let n = jet.d[0].cross(&jet.d[1]).normalize();
                        let conormal = tangent.normalize().cross(&n);
                        let conormal = if conormal.dot(&across) > 0.0 { conormal } else { -conormal };
                        let ds = tangent.norm() * len * gw[q];
                        let w_rot = match support {
                            Support::ClampedWeak => alpha * e * t.powi(3) / length_scale * ds,
                            Support::Pinned => 0.0,
                        };
                        pts.push(BoundaryPoint {
                            basis: local_jets(&bu, &bv, p),
                            a: jet.d,
                            conormal,
                            w_disp: alpha * e * t / length_scale * ds,
                            w_rot,
                        });
                    }
                    Points::Boundary(pts)
                }
            };
            Ok(Element { globals, extraction, points })
        };
        let elements: Vec<Element> = jobs.par_iter().map(build).collect::<Result<_>>()?;

        let dim = space.dim();
        let mut neighbours = vec![Vec::new(); dim];
        for el in &elements {
            for &g in &el.globals {
                neighbours[g].extend_from_slice(&el.globals);
            }
        }
        for nb in &mut neighbours {
            nb.sort_unstable();
            nb.dedup();
        }
        let mut model = Self {
            space,
            material,
            loads,
            bcs,
            length_scale,
            parallel: true,
            elements,
            neighbours,
            f_scaled: vec![0.0; 3 * dim],
            f_const: vec![0.0; 3 * dim],
        };
        model.assemble_loads()?;
        Ok(model)
    }

    pub fn num_dofs(&self) -> usize {
        3 * self.space.dim()
    }

    fn assemble_loads(&mut self) -> Result<()> {
        let f = self.loads.surface_load;
        let target = if self.loads.surface_follows_lambda { &mut self.f_scaled } else { &mut self.f_const };
        if f != Vector3::zeros() {
            for el in &self.elements {
                let Points::Volume(pts) = &el.points else { continue };
                for pt in pts {
                    for (a, nb) in pt.basis.iter().enumerate() {
                        for (gi, &g) in el.globals.iter().enumerate() {
                            let c = el.extraction[(a, gi)] * nb[0] * pt.weight;
                            if c != 0.0 {
                                for i in 0..3 {
                                    target[3 * g + i] += c * f[i];
                                }
                            }
                        }
                    }
                }
            }
        }
        let dir = &self.space.space.dir;
        for load in &self.loads.point_loads {
            if load.patch >= self.space.surface.patches.len() {
                return Err(Error::Parameter(format!("point load on missing patch {}", load.patch)));
            }
            let bu = dir.eval_basis(load.xi[0], 0)?;
            let bv = dir.eval_basis(load.xi[1], 0)?;
            let target = if load.follows_lambda { &mut self.f_scaled } else { &mut self.f_const };
            for a in 0..=dir.degree() {
                for b in 0..=dir.degree() {
                    let w = bu.get(0, a) * bv.get(0, b);
                    for &(g, c) in &self.space.extraction.rows[load.patch][self.space.space.index(bu.first + a, bv.first + b)] {
                        for i in 0..3 {
                            target[3 * g + i] += w * c * load.force[i];
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// External force vector `λ F_scaled + F_const`.
    pub fn external_force(&self, lambda: f64) -> Vec<f64> {
        self.f_scaled.iter().zip(&self.f_const).map(|(s, c)| lambda * s + c).collect()
    }

    /// Load-factor derivative of the external force.
    pub fn reference_force(&self) -> &[f64] {
        &self.f_scaled
    }

    fn kernel(&self, el: &Element, u: &[f64], want_hess: bool) -> Result<Contribution> {
        let n_loc = el.extraction.nrows();
        let ng = el.globals.len();
        let mut ug = DMatrix::<f64>::zeros(ng, 3);
        for (gi, &g) in el.globals.iter().enumerate() {
            for i in 0..3 {
                ug[(gi, i)] = u[3 * g + i];
            }
        }
        let ul = &el.extraction * ug;
        let coeff = |a: usize| Vector3::new(ul[(a, 0)], ul[(a, 1)], ul[(a, 2)]);
        let m = 3 * n_loc;
        let mut energy = 0.0;
        let mut grad = vec![0.0; m];
        let mut hess = if want_hess { Some(DMatrix::<f64>::zeros(m, m)) } else { None };
        let t = self.material.t;
        let bend = t.powi(3) / 12.0;
        match &el.points {
            Points::Volume(pts) => {
                for pt in pts {
                    let mut du = [Vector3::zeros(); 6];
                    for (a, nb) in pt.basis.iter().enumerate() {
                        let c = coeff(a);
                        for (d, v) in du.iter_mut().enumerate() {
                            *v += c * nb[d];
                        }
                    }
                    let a1 = pt.a[0] + du[1];
                    let a2 = pt.a[1] + du[2];
                    let aa = [pt.aa[0] + du[3], pt.aa[1] + du[5], pt.aa[2] + du[4]];
                    // Written in the displacement gradients to avoid cancelling a - å.
                    let (u1, u2) = (du[1], du[2]);
                    let eps = Vector3::new(
                        pt.a[0].dot(&u1) + 0.5 * u1.dot(&u1),
                        pt.a[1].dot(&u2) + 0.5 * u2.dot(&u2),
                        pt.a[0].dot(&u2) + pt.a[1].dot(&u1) + u1.dot(&u2),
                    );
                    let nv = NormalVariation::new(&pt.basis, &a1, &a2)?;
                    let b = [aa[0].dot(&nv.n), aa[1].dot(&nv.n), aa[2].dot(&nv.n)];
                    let kap = Vector3::new(pt.b_ref[0] - b[0], pt.b_ref[1] - b[1], 2.0 * (pt.b_ref[2] - b[2]));
                    let dm = pt.d * t;
                    let db = pt.d * bend;
                    let nres = dm * eps;
                    let mres = db * kap;
                    let w = pt.weight;
                    energy += 0.5 * w * (eps.dot(&nres) + kap.dot(&mres));
                    let mut eps_r = Vec::with_capacity(m);
                    let mut kap_r = Vec::with_capacity(m);
                    for r in 0..m {
                        let (a, i) = (r / 3, r % 3);
                        let nb = &pt.basis[a];
                        let er = Vector3::new(nb[1] * a1[i], nb[2] * a2[i], nb[1] * a2[i] + nb[2] * a1[i]);
                        let br = [
                            nb[3] * nv.n[i] + aa[0].dot(&nv.n_r[r]),
                            nb[5] * nv.n[i] + aa[1].dot(&nv.n_r[r]),
                            nb[4] * nv.n[i] + aa[2].dot(&nv.n_r[r]),
                        ];
                        let kr = Vector3::new(-br[0], -br[1], -2.0 * br[2]);
                        grad[r] += w * (nres.dot(&er) + mres.dot(&kr));
                        eps_r.push(er);
                        kap_r.push(kr);
                    }
                    if let Some(h) = hess.as_mut() {
                        // Bending stress couples second derivatives through M·κ,rs.
                        let vm = aa[0] * mres[0] + aa[1] * mres[1] + aa[2] * (2.0 * mres[2]);
                        let ntil: Vec<f64> =
                            pt.basis.iter().map(|nb| mres[0] * nb[3] + mres[1] * nb[5] + 2.0 * mres[2] * nb[4]).collect();
                        let vm_r: Vec<f64> = nv.n_r.iter().map(|x| vm.dot(x)).collect();
                        let dm_e: Vec<Vector3<f64>> = eps_r.iter().map(|x| dm * x).collect();
                        let db_k: Vec<Vector3<f64>> = kap_r.iter().map(|x| db * x).collect();
                        for r in 0..m {
                            let (a, i) = (r / 3, r % 3);
                            let na = &pt.basis[a];
                            for s in r..m {
                                let (bb, j) = (s / 3, s % 3);
                                let nbb = &pt.basis[bb];
                                let mut v = eps_r[r].dot(&dm_e[s]) + kap_r[r].dot(&db_k[s]);
                                if i == j {
                                    v += nres[0] * na[1] * nbb[1]
                                        + nres[1] * na[2] * nbb[2]
                                        + nres[2] * (na[1] * nbb[2] + na[2] * nbb[1]);
                                }
                                v -= ntil[a] * nv.n_r[s][i] + ntil[bb] * nv.n_r[r][j] + nv.second(&pt.basis, &vm, &vm_r, r, s);
                                h[(r, s)] += w * v;
                            }
                        }
                    }
                }
            }
            Points::Boundary(pts) => {
                for pt in pts {
                    let mut du = [Vector3::zeros(); 3];
                    for (a, nb) in pt.basis.iter().enumerate() {
                        let c = coeff(a);
                        for (d, v) in du.iter_mut().enumerate() {
                            *v += c * nb[d];
                        }
                    }
                    let disp = du[0];
                    energy += 0.5 * pt.w_disp * disp.norm_squared();
                    for r in 0..m {
                        grad[r] += pt.w_disp * disp[r % 3] * pt.basis[r / 3][0];
                    }
                    let nv = if pt.w_rot != 0.0 { Some(NormalVariation::new(&pt.basis, &(pt.a[0] + du[1]), &(pt.a[1] + du[2]))?) } else { None };
                    let mut g_r = Vec::new();
                    let mut g = 0.0;
                    if let Some(nv) = &nv {
                        g = nv.n.dot(&pt.conormal);
                        energy += 0.5 * pt.w_rot * g * g;
                        g_r = nv.n_r.iter().map(|x| pt.conormal.dot(x)).collect();
                        for r in 0..m {
                            grad[r] += pt.w_rot * g * g_r[r];
                        }
                    }
                    if let Some(h) = hess.as_mut() {
                        for r in 0..m {
                            for s in r..m {
                                let mut v = 0.0;
                                if r % 3 == s % 3 {
                                    v += pt.w_disp * pt.basis[r / 3][0] * pt.basis[s / 3][0];
                                }
                                if let Some(nv) = &nv {
                                    v += pt.w_rot * (g_r[r] * g_r[s] + g * nv.second(&pt.basis, &pt.conormal, &g_r, r, s));
                                }
                                h[(r, s)] += v;
                            }
                        }
                    }
                }
            }
        }
        // Map to the element's global list.
        let mut ggrad = vec![0.0; 3 * ng];
        for gi in 0..ng {
            for a in 0..n_loc {
                let c = el.extraction[(a, gi)];
                if c != 0.0 {
                    for i in 0..3 {
                        ggrad[3 * gi + i] += c * grad[3 * a + i];
                    }
                }
            }
        }
        let ghess = hess.map(|mut h| {
            for r in 0..m {
                for s in 0..r {
                    h[(r, s)] = h[(s, r)];
                }
            }
            let mut blocks = Vec::with_capacity(9);
            for i in 0..3 {
                for j in 0..3 {
                    let hij = DMatrix::from_fn(n_loc, n_loc, |a, b| h[(3 * a + i, 3 * b + j)]);
                    blocks.push(el.extraction.transpose() * hij * &el.extraction);
                }
            }
            blocks
        });
        Ok(Contribution { energy, grad: ggrad, hess: ghess })
    }

    fn check_len(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.num_dofs() {
            return Err(Error::Range { index: u.len(), range: format!("state vector of length {}", self.num_dofs()) });
        }
        Ok(())
    }

    /// Internal energy (including penalties), its gradient and optionally its Hessian.
    pub fn internal(&self, u: &[f64], want_tangent: bool) -> Result<(f64, Vec<f64>, Option<CscMatrix>)> {
        self.check_len(u)?;
        let mut energy = 0.0;
        let mut grad = vec![0.0; self.num_dofs()];
        let mut k = if want_tangent { Some(CscMatrix::from_block_pattern(&self.neighbours, 3)) } else { None };
        const CHUNK: usize = 64;
        for chunk in self.elements.chunks(CHUNK) {
            let results: Vec<Contribution> = if self.parallel {
                chunk.par_iter().map(|el| self.kernel(el, u, want_tangent)).collect::<Result<_>>()?
            } else {
                chunk.iter().map(|el| self.kernel(el, u, want_tangent)).collect::<Result<_>>()?
            };
            for (el, c) in chunk.iter().zip(results) {
                energy += c.energy;
                for (gi, &g) in el.globals.iter().enumerate() {
                    for i in 0..3 {
                        grad[3 * g + i] += c.grad[3 * gi + i];
                    }
                }
                if let (Some(k), Some(blocks)) = (k.as_mut(), c.hess) {
                    scatter(k, &self.neighbours, &el.globals, &blocks);
                }
            }
        }
        if !energy.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("internal forces".into()));
        }
        Ok((energy, grad, k))
    }

    /// Total potential energy `Π(u) = W_int(u) - F_ext(λ)·u`.
    pub fn energy(&self, u: &[f64], lambda: f64) -> Result<f64> {
        let (w, _, _) = self.internal(u, false)?;
        Ok(w - crate::sparse::dot(&self.external_force(lambda), u))
    }

    /// Residual `R = F_int(u) - F_ext(λ)`.
    pub fn residual(&self, u: &[f64], lambda: f64) -> Result<Vec<f64>> {
        let (_, g, _) = self.internal(u, false)?;
        Ok(g.iter().zip(self.external_force(lambda)).map(|(a, b)| a - b).collect())
    }

    /// Tangent stiffness and residual at `(u, λ)`.
    pub fn tangent(&self, u: &[f64], lambda: f64) -> Result<(CscMatrix, Vec<f64>)> {
        let (_, g, k) = self.internal(u, true)?;
        let r = g.iter().zip(self.external_force(lambda)).map(|(a, b)| a - b).collect();
        Ok((k.expect("tangent requested"), r))
    }

    /// Linear stiffness (tangent at `u = 0`) and the external force at `λ = 1`.
    pub fn linear_system(&self) -> Result<(CscMatrix, Vec<f64>)> {
        let zero = vec![0.0; self.num_dofs()];
        let (_, _, k) = self.internal(&zero, true)?;
        Ok((k.expect("tangent requested"), self.external_force(1.0)))
    }

    pub fn state(&self, u: &[f64]) -> Result<ShellState> {
        self.check_len(u)?;
        let displacement = self
            .space
            .extraction
            .apply_vector(u)
            .into_iter()
            .map(|pts| TensorSplinePatch::new(self.space.space.clone(), pts))
            .collect::<Result<_>>()?;
        Ok(ShellState { u: u.to_vec(), displacement })
    }

    /// Fundamental forms at `ξ` in the undeformed or deformed configuration.
    pub fn fundamental_forms(&self, state: &ShellState, patch: usize, xi: [f64; 2], deformed: bool) -> Result<FundamentalForms> {
        let mut jet = self.space.surface.patches[patch].eval_jet(xi, 2)?;
        if deformed {
            let du = state.displacement[patch].eval_jet(xi, 2)?;
            jet.d[0] += du.d[0];
            jet.d[1] += du.d[1];
            for a in 0..2 {
                for b in 0..2 {
                    jet.dd[a][b] += du.dd[a][b];
                }
            }
        }
        let at = jet.d[0].cross(&jet.d[1]);
        if !(at.norm() > 0.0) {
            return Err(Error::SingularGeometry(format!("patch {patch} at {xi:?}")));
        }
        let a3 = at.normalize();
        Ok(FundamentalForms {
            a: Matrix2::from_fn(|i, j| jet.d[i].dot(&jet.d[j])),
            b: Matrix2::from_fn(|i, j| jet.dd[i][j].dot(&a3)),
            a3,
            basis: jet.d,
        })
    }

    /// Membrane strain `ε` and bending strain `κ` tensors at `ξ`.
    pub fn strains(&self, state: &ShellState, patch: usize, xi: [f64; 2]) -> Result<(Matrix2<f64>, Matrix2<f64>)> {
        let f0 = self.fundamental_forms(state, patch, xi, false)?;
        let f1 = self.fundamental_forms(state, patch, xi, true)?;
        Ok(((f1.a - f0.a) * 0.5, f0.b - f1.b))
    }

    /// Von Mises stress of the membrane resultants divided by the thickness.
    pub fn von_mises_membrane(&self, state: &ShellState, patch: usize, xi: [f64; 2]) -> Result<f64> {
        let (eps, _) = self.strains(state, patch, xi)?;
        let f0 = self.fundamental_forms(state, patch, xi, false)?;
        let ai = f0.a.try_inverse().ok_or_else(|| Error::SingularGeometry(format!("patch {patch} at {xi:?}")))?;
        let d = self.material.voigt(&ai);
        let s = d * Vector3::new(eps[(0, 0)], eps[(1, 1)], 2.0 * eps[(0, 1)]);
        let sig = Matrix2::new(s[0], s[2], s[2], s[1]);
        let mut cart = Matrix3::zeros();
        for a in 0..2 {
            for b in 0..2 {
                cart += f0.basis[a] * f0.basis[b].transpose() * sig[(a, b)];
            }
        }
        let tr = cart.trace();
        let tr2 = (cart * cart).trace();
        Ok((0.5 * (3.0 * tr2 - tr * tr)).max(0.0).sqrt())
    }

    /// Strain energy `½ uᵀ K u`.
    pub fn strain_energy(k: &CscMatrix, u: &[f64]) -> f64 {
        0.5 * crate::sparse::dot(u, &k.mul_vec(u))
    }

    /// Displacement at a parametric point.
    pub fn displacement_at(&self, state: &ShellState, patch: usize, xi: [f64; 2]) -> Result<Vector3<f64>> {
        state.displacement[patch].eval(xi)
    }

    /// Surface point of the undeformed configuration.
    pub fn point(&self, patch: usize, xi: [f64; 2]) -> Result<Vector3<f64>> {
        self.space.surface.patches[patch].eval(xi)
    }
}

fn scatter(k: &mut CscMatrix, neighbours: &[Vec<usize>], globals: &[usize], blocks: &[DMatrix<f64>]) {
    for (hi, &h) in globals.iter().enumerate() {
        let nb = &neighbours[h];
        let mut pos = 0;
        for (gi, &g) in globals.iter().enumerate() {
            while nb[pos] != g {
                pos += 1;
            }
            for j in 0..3 {
                let base = k.col_ptr[3 * h + j] + 3 * pos;
                for i in 0..3 {
                    k.values[base + i] += blocks[3 * i + j][(gi, hi)];
                }
            }
        }
    }
}

/// Helper for planar point inversion used by monitors: `ξ` with `p(ξ)_{xy} = target`.
pub fn invert_planar(patch: &TensorSplinePatch, target: Vector2<f64>) -> Option<[f64; 2]> {
    let mut xi = [0.5, 0.5];
    for _ in 0..50 {
        let jet = patch.eval_jet(xi, 1).ok()?;
        let r = Vector2::new(jet.point.x, jet.point.y) - target;
        if r.norm() < 1e-14 * (1.0 + target.norm()) {
            break;
        }
        let j = Matrix2::new(jet.d[0].x, jet.d[1].x, jet.d[0].y, jet.d[1].y);
        let step = j.try_inverse()? * r;
        xi = [(xi[0] - step[0]).clamp(0.0, 1.0), (xi[1] - step[1]).clamp(0.0, 1.0)];
    }
    let p = patch.eval(xi).ok()?;
    ((Vector2::new(p.x, p.y) - target).norm() < 1e-10 * (1.0 + target.norm())).then_some(xi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::{dot, norm};
    use crate::topology::{build_topology, default_tolerance, MultiPatchSurface};

    const E: f64 = 2.0e5;
    const NU: f64 = 0.3;

    fn square_model(loads: LoadCase) -> ShellModel {
        let v = [
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(1.0, 1.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
        ];
        let surface = MultiPatchSurface::new(vec![TensorSplinePatch::bilinear(v)]).unwrap();
        let topo = build_topology(&surface, default_tolerance(&surface)).unwrap();
        let space = C1Space::full_tensor(&surface, &topo, 3, 1, 2).unwrap();
        ShellModel::new(space, ShellMaterial::new(E, NU, 0.01).unwrap(), loads, BoundaryConditionSet::free()).unwrap()
    }

    /// Coefficients of the displacement field `(fx, fy, fz)` of the parametric point.
    fn field(m: &ShellModel, f: impl Fn([f64; 2]) -> Vector3<f64>) -> Vec<f64> {
        let mut u = vec![0.0; m.num_dofs()];
        for i in 0..3 {
            let (c, res) = m.space.least_squares_fit(|_, xi| f(xi)[i]).unwrap();
            assert!(res < 1e-12);
            for (g, v) in c.iter().enumerate() {
                u[3 * g + i] = *v;
            }
        }
        u
    }

    fn sample_u(n: usize) -> Vec<f64> {
        (0..n).map(|i| 0.05 * ((i as f64 * 0.7).sin() + 0.3 * (i as f64 * 1.3).cos())).collect()
    }

    #[test]
    fn undeformed_state_is_strain_free_and_residual_is_minus_load() {
        let load = PointLoad { patch: 0, xi: [0.5, 0.5], force: Vector3::new(0.0, 0.0, 3.0), follows_lambda: true };
        let m = square_model(LoadCase { point_loads: vec![load], ..LoadCase::none() });
        let zero = vec![0.0; m.num_dofs()];
        let (w, grad, _) = m.internal(&zero, false).unwrap();
        assert_eq!(w, 0.0);
        assert!(grad.iter().all(|g| g.abs() < 1e-12));
        let r = m.residual(&zero, 2.0).unwrap();
        let f = m.external_force(2.0);
        assert!(r.iter().zip(&f).all(|(a, b)| (a + b).abs() < 1e-12));
        assert!((f.iter().sum::<f64>() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn translation_costs_no_energy() {
        let m = square_model(LoadCase::none());
        let u = field(&m, |_| Vector3::new(0.3, -0.2, 0.7));
        let (w, grad, _) = m.internal(&u, false).unwrap();
        assert!(w.abs() < 1e-14);
        assert!(grad.iter().map(|g| g.abs()).fold(0.0, f64::max) < 1e-9);
    }

    #[test]
    fn uniaxial_stretch_has_green_lagrange_strain() {
        let m = square_model(LoadCase::none());
        let e = 0.02;
        let u = field(&m, |xi| Vector3::new(e * xi[0], 0.0, 0.0));
        let st = m.state(&u).unwrap();
        let (eps, kappa) = m.strains(&st, 0, [0.3, 0.6]).unwrap();
        assert!((eps[(0, 0)] - (e + 0.5 * e * e)).abs() < 1e-13);
        assert!(eps[(1, 1)].abs() < 1e-13 && eps[(0, 1)].abs() < 1e-13);
        assert!(kappa.norm() < 1e-12);
        // Plane strain along y: σ22 = ν σ11.
        let s11 = E / (1.0 - NU * NU) * (e + 0.5 * e * e);
        let vm = m.von_mises_membrane(&st, 0, [0.3, 0.6]).unwrap();
        assert!((vm - s11 * (1.0 - NU + NU * NU).sqrt()).abs() < 1e-9 * s11);
    }

    #[test]
    fn tangent_is_symmetric() {
        let m = square_model(LoadCase::none());
        let n = m.num_dofs();
        let u = sample_u(n);
        let (k, _) = m.tangent(&u, 1.0).unwrap();
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).cos()).collect();
        let y: Vec<f64> = (0..n).map(|i| (i as f64 * 0.91).sin()).collect();
        let (a, b) = (dot(&x, &k.mul_vec(&y)), dot(&y, &k.mul_vec(&x)));
        let scale = norm(&x) * norm(&k.mul_vec(&y)).max(norm(&k.mul_vec(&x)));
        assert!((a - b).abs() < 1e-12 * scale);
    }

    #[test]
    fn parallel_and_serial_assembly_agree() {
        let mut m = square_model(LoadCase::none());
        let u = sample_u(m.num_dofs());
        let (w1, g1, k1) = m.internal(&u, true).unwrap();
        m.parallel = !m.parallel;
        let (w2, g2, k2) = m.internal(&u, true).unwrap();
        assert_eq!(w1, w2);
        assert_eq!(g1, g2);
        assert_eq!(k1.unwrap().values, k2.unwrap().values);
    }
}
