//! The C1-smooth spline space `𝒜` over an AS-G1 multi-patch surface.
//!
//! The basis consists of patch functions (interior tensor B-splines), edge functions
//! (prescribed trace or transversal derivative along one edge) and six vertex functions
//! per vertex (prescribed second-order jet in the tangent plane). Every function is stored
//! as sparse coefficient tables in the per-patch tensor space `S^{p,r}_k ⊗ S^{p,r}_k`.

use nalgebra::{DMatrix, Matrix2, Vector2, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gluing::{compute_gluing_local, EdgeGluingData, Linear};
use crate::spline::{c1_dimensions, Interpolator, MFamily, MFunctions, ScalarJet, TensorSplineSpace};
use crate::topology::{Edge, MultiPatchSurface, Symmetry, Topology};

/// Relative threshold below which interpolated coefficients are dropped.
const DROP_TOL: f64 = 1e-14;
/// Admissible relative interpolation residual of a closed-form factor.
const FIT_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BasisKind {
    Patch,
    Edge,
    Vertex,
}

/// Sparse coefficient table of one basis function on one patch: `(tensor index, value)`.
pub type SparseTable = Vec<(usize, f64)>;

#[derive(Clone, Debug, PartialEq)]
pub struct C1BasisFunction {
    pub kind: BasisKind,
    /// Patch, edge or vertex index.
    pub entity: usize,
    pub local: (usize, usize),
    /// Tables in original patch orientation for the patches of the support.
    pub tables: Vec<(usize, SparseTable)>,
}

/// Sparse map from global coefficients to per-patch tensor coefficients:
/// `rows[patch][tensor index]` lists `(global index, weight)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Extraction {
    pub rows: Vec<Vec<Vec<(usize, f64)>>>,
    pub dim: usize,
}

impl Extraction {
    fn from_basis(basis: &[C1BasisFunction], patches: usize, tensor_dim: usize) -> Self {
        let mut rows = vec![vec![Vec::new(); tensor_dim]; patches];
        for (g, f) in basis.iter().enumerate() {
            for (patch, table) in &f.tables {
                for &(idx, c) in table {
                    rows[*patch][idx].push((g, c));
                }
            }
        }
        Self { rows, dim: basis.len() }
    }

    /// Per-patch tensor coefficient tables of the function with global coefficients `x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        if x.len() != self.dim {
            return Err(Error::Range { index: x.len(), range: format!("coefficient vector of length {}", self.dim) });
        }
        Ok(self.rows.iter().map(|patch| patch.iter().map(|row| row.iter().map(|&(g, c)| c * x[g]).sum()).collect()).collect())
    }

    /// Vector-valued version with three interleaved components per global function.
    pub fn apply_vector(&self, u: &[f64]) -> Vec<Vec<Vector3<f64>>> {
        self.rows
            .iter()
            .map(|patch| {
                patch
                    .iter()
                    .map(|row| row.iter().fold(Vector3::zeros(), |acc, &(g, c)| acc + Vector3::new(u[3 * g], u[3 * g + 1], u[3 * g + 2]) * c))
                    .collect()
            })
            .collect()
    }
}

/// Discretisation parameters `(p, r, k)` of the analysis space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Discretisation {
    pub p: usize,
    pub r: usize,
    pub k: usize,
}

impl Discretisation {
    pub fn new(p: usize, r: usize, k: usize) -> Self {
        Self { p, r, k }
    }

    /// Smallest admissible element count `k ≥ (4 - r) / (p - r - 1)`.
    pub fn min_elements(p: usize, r: usize) -> usize {
        (4 - r).div_ceil(p - r - 1).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let Discretisation { p, r, k } = *self;
        if p < 3 || r < 1 || r + 2 > p {
            return Err(Error::Parameter(format!("need p >= 3 and 1 <= r <= p - 2, got p={p}, r={r}")));
        }
        if k < Self::min_elements(p, r) {
            return Err(Error::Parameter(format!("k={k} below the bound (4 - r)/(p - r - 1) for p={p}, r={r}")));
        }
        Ok(())
    }
}

/// Outcome of [`C1Space::check_c1`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct C1Report {
    pub max_value_error: f64,
    pub max_gradient_error: f64,
    /// Basis function and interface of the largest error.
    pub worst: Option<(usize, usize)>,
    /// Number of (function, interface) pairs compared.
    pub pairs_checked: usize,
}

impl C1Report {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_value_error <= tol && self.max_gradient_error <= tol
    }
}

#[derive(Clone, Debug)]
pub struct C1Space {
    pub surface: MultiPatchSurface,
    pub topology: Topology,
    pub disc: Discretisation,
    /// Per-patch analysis space `S^{p,r}_k` in both directions.
    pub space: TensorSplineSpace,
    pub basis: Vec<C1BasisFunction>,
    pub extraction: Extraction,
    /// Index ranges of patch, edge and vertex functions.
    pub kind_ranges: [std::ops::Range<usize>; 3],
}

/// Closed-form dimension of `𝒜`: `Σ (n - 4)² + Σ [(n0 - 6) + (n1 - 4)] + 6 |vertices|`.
pub fn dimension_formula(topology: &Topology, disc: Discretisation) -> usize {
    let (n, n0, n1) = c1_dimensions(disc.p, disc.r, disc.k);
    topology.side_edge.len() * (n - 4) * (n - 4) + topology.edges.len() * ((n0 - 6) + (n1 - 4)) + 6 * topology.vertices.len()
}

struct Builder<'a> {
    m: MFunctions,
    interp: Interpolator,
    n: usize,
    surface: &'a MultiPatchSurface,
    topology: &'a Topology,
    /// Check points for the interpolation residual.
    checks: Vec<f64>,
}

/// A univariate factor `(coefficients in S^{p,r})`.
type Factor = Vec<f64>;

impl<'a> Builder<'a> {
    fn fit(&self, f: &(dyn Fn(f64) -> f64 + Sync)) -> Result<Factor> {
        let vals: Vec<f64> = self.interp.nodes().iter().map(|&x| f(x)).collect();
        let c = self.interp.fit(&vals);
        let scale = vals.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
        for &x in &self.checks {
            let got = self.m.main.eval_function(&c, x, 0)?[0];
            if (got - f(x)).abs() > FIT_TOL * scale {
                return Err(Error::Parameter(format!(
                    "closed-form factor is not in the analysis space (residual {:e})",
                    (got - f(x)).abs() / scale
                )));
            }
        }
        Ok(c)
    }

    fn basis_value(&self, family: MFamily, j: usize, x: f64, deriv: usize) -> f64 {
        self.m.space(family).eval_basis(x, deriv).expect("parameter in [0, 1]").of(deriv, j)
    }

    fn m_value(&self, family: MFamily, w: usize, x: f64, deriv: usize) -> f64 {
        self.m.eval(family, w, x, deriv).expect("valid M index")[deriv]
    }

    /// Dense local table `Σ u ⊗ v` (u along ξ1, v along ξ2).
    fn table(&self, terms: &[(Factor, Factor)]) -> Vec<f64> {
        let n = self.n;
        let mut t = vec![0.0; n * n];
        for (u, v) in terms {
            for (i, &ui) in u.iter().enumerate() {
                if ui == 0.0 {
                    continue;
                }
                for (j, &vj) in v.iter().enumerate() {
                    t[i * n + j] += ui * vj;
                }
            }
        }
        t
    }

    /// Original-orientation sparse table of a local dense table.
    fn sparse(&self, local: &[f64], sym: Symmetry) -> SparseTable {
        let orig = sym.to_orig(local, self.n);
        let max = orig.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        orig.iter().enumerate().filter(|(_, v)| v.abs() > DROP_TOL * max).map(|(i, &v)| (i, v)).collect()
    }

    fn edge_functions(&self, edge: usize, gluing: &EdgeGluingData) -> Result<Vec<C1BasisFunction>> {
        let (_, n0, n1) = c1_dimensions(self.m.main.degree(), self.m.main.regularity() as usize, self.m.main.elements());
        let form = self.topology.edge_form(edge);
        let m0 = self.m.coefficients(MFamily::Main, 0)?;
        let m1 = self.m.coefficients(MFamily::Main, 1)?;
        let mut out = Vec::new();
        let g = *gluing;
        for j2 in 0..2usize {
            let range = if j2 == 0 { 3..=n0 - 4 } else { 2..=n1 - 3 };
            for j1 in range {
                let mut tables = Vec::new();
                let (t1, t2): (Vec<(Factor, Factor)>, Vec<(Factor, Factor)>) = if j2 == 0 {
                    let nj = self.fit(&|x| self.basis_value(MFamily::Trace, j1, x, 0))?;
                    let b1 = self.fit(&|x| -g.beta1.eval(x) * self.basis_value(MFamily::Trace, j1, x, 1))?;
                    let b2 = self.fit(&|x| -g.beta2.eval(x) * self.basis_value(MFamily::Trace, j1, x, 1))?;
                    (vec![(m0.clone(), nj.clone()), (m1.clone(), b1)], vec![(nj, m0.clone()), (b2, m1.clone())])
                } else {
                    let a1 = self.fit(&|x| g.alpha1.eval(x) * self.basis_value(MFamily::Transversal, j1, x, 0))?;
                    let a2 = self.fit(&|x| -g.alpha2.eval(x) * self.basis_value(MFamily::Transversal, j1, x, 0))?;
                    (vec![(m1.clone(), a1)], vec![(a2, m1.clone())])
                };
                tables.push((form.i1.0, self.sparse(&self.table(&t1), form.i1.1)));
                if let Some((pb, tb)) = form.i2 {
                    tables.push((pb, self.sparse(&self.table(&t2), tb)));
                }
                out.push(C1BasisFunction { kind: BasisKind::Edge, entity: edge, local: (j1, j2), tables });
            }
        }
        Ok(out)
    }

    fn vertex_functions(&self, v: usize) -> Result<Vec<C1BasisFunction>> {
        let form = self.topology.vertex_form(self.surface, v)?;
        let nu = form.fan.len();
        let local: Vec<_> = form.fan.iter().map(|&(p, s)| s.transform_patch(&self.surface.patches[p])).collect();
        // Planar jets of the rotated, projected fan patches at the vertex.
        let rot = form.rotation;
        let proj = |x: Vector3<f64>| {
            let y = rot * x;
            Vector2::new(y.x, y.y)
        };
        struct Jet2 {
            d1: Vector2<f64>,
            d2: Vector2<f64>,
            d11: Vector2<f64>,
            d12: Vector2<f64>,
            d22: Vector2<f64>,
        }
        let jets: Vec<Jet2> = local
            .iter()
            .map(|p| {
                let j = p.eval_jet([0.0, 0.0], 2)?;
                Ok(Jet2 { d1: proj(j.d[0]), d2: proj(j.d[1]), d11: proj(j.dd[0][0]), d12: proj(j.dd[0][1]), d22: proj(j.dd[1][1]) })
            })
            .collect::<Result<_>>()?;
        // Gluing of the edge following each fan patch (fan patch as i1).
        let next_gluing: Vec<EdgeGluingData> = (0..nu)
            .map(|q| match self.topology.edges[form.next_edge[q]] {
                Edge::Interface(_) => compute_gluing_local(&local[q], &local[(q + 1) % nu], form.next_edge[q]),
                Edge::Boundary { .. } => Ok(EdgeGluingData::BOUNDARY),
            })
            .collect::<Result<_>>()?;
        let prev_gluing: Vec<EdgeGluingData> = (0..nu)
            .map(|q| {
                if form.boundary && q == 0 {
                    EdgeGluingData::BOUNDARY
                } else {
                    next_gluing[(q + nu - 1) % nu]
                }
            })
            .collect();
        // Tangent t, t' and transversal d, d' of each fan edge at the vertex.
        #[derive(Clone, Copy)]
        struct EdgeJet {
            t: Vector2<f64>,
            tp: Vector2<f64>,
            d: Vector2<f64>,
            dp: Vector2<f64>,
        }
        let i1_jet = |q: usize| {
            let (j, g) = (&jets[q], &next_gluing[q]);
            let (a, ap, b, bp) = (g.alpha1.eval(0.0), g.alpha1.slope(), g.beta1.eval(0.0), g.beta1.slope());
            let num = j.d1 + j.d2 * b;
            EdgeJet { t: j.d2, tp: j.d22, d: num / a, dp: ((j.d12 + j.d2 * bp + j.d22 * b) * a - num * ap) / (a * a) }
        };
        let next_jet: Vec<EdgeJet> = (0..nu).map(i1_jet).collect();
        let prev_jet: Vec<EdgeJet> = (0..nu)
            .map(|q| {
                if form.boundary && q == 0 {
                    let j = &jets[0];
                    EdgeJet { t: j.d1, tp: j.d11, d: -j.d2, dp: -j.d12 }
                } else {
                    next_jet[(q + nu - 1) % nu]
                }
            })
            .collect();
        let h = self.m.main.h();
        let p = self.m.main.degree() as f64;
        let grad_sum: f64 = jets.iter().map(|j| Matrix2::from_columns(&[j.d1, j.d2]).norm()).sum();
        let sigma = 1.0 / (h / (p * nu as f64) * grad_sum);

        let mut out = Vec::new();
        for (j1, j2) in [(0usize, 0usize), (0, 1), (1, 0), (0, 2), (1, 1), (2, 0)] {
            let delta = |a: usize, b: usize| if (j1, j2) == (a, b) { 1.0 } else { 0.0 };
            let b = Vector2::new(delta(1, 0), delta(0, 1));
            let hm = Matrix2::new(2.0 * delta(2, 0) / 2.0, delta(1, 1), delta(1, 1), 2.0 * delta(0, 2) / 2.0);
            let edge_coeffs = |e: &EdgeJet| -> ([f64; 3], [f64; 2]) {
                (
                    [delta(0, 0), b.dot(&e.t), (e.t.transpose() * hm * e.t)[0] + b.dot(&e.tp)],
                    [b.dot(&e.d), (e.t.transpose() * hm * e.d)[0] + b.dot(&e.dp)],
                )
            };
            let scale = sigma.powi((j1 + j2) as i32);
            let mut tables = Vec::new();
            for q in 0..nu {
                let (dn0, dn1) = edge_coeffs(&next_jet[q]);
                let (dp0, dp1) = edge_coeffs(&prev_jet[q]);
                let j = &jets[q];
                let own = [[delta(0, 0), b.dot(&j.d2)], [b.dot(&j.d1), (j.d1.transpose() * hm * j.d2)[0] + b.dot(&j.d12)]];
                let (an, bn) = (next_gluing[q].alpha1, next_gluing[q].beta1);
                let (ap, bp) = (prev_gluing[q].alpha2, prev_gluing[q].beta2);
                let trace = |d0: [f64; 3], x: f64, deriv: usize| -> f64 {
                    (0..3).map(|w| d0[w] * self.m_value(MFamily::Trace, w, x, deriv)).sum()
                };
                let transversal = |d1: [f64; 2], x: f64| -> f64 {
                    (0..2).map(|w| d1[w] * self.m_value(MFamily::Transversal, w, x, 0)).sum()
                };
                let cross = |g_beta: Linear, g_alpha: Linear, d0: [f64; 3], d1: [f64; 2], sign: f64| {
                    move |x: f64| -g_beta.eval(x) * trace(d0, x, 1) + sign * g_alpha.eval(x) * transversal(d1, x)
                };
                let mfac = |w: usize| self.m.coefficients(MFamily::Main, w).expect("valid index");
                let mut terms = vec![
                    (mfac(0), self.fit(&|x| trace(dn0, x, 0))?),
                    (mfac(1), self.fit(&cross(bn, an, dn0, dn1, 1.0))?),
                    (self.fit(&|x| trace(dp0, x, 0))?, mfac(0)),
                    (self.fit(&cross(bp, ap, dp0, dp1, -1.0))?, mfac(1)),
                ];
                for w1 in 0..2 {
                    for w2 in 0..2 {
                        if own[w1][w2] != 0.0 {
                            terms.push((mfac(w1).iter().map(|c| -own[w1][w2] * c).collect(), mfac(w2)));
                        }
                    }
                }
                let mut table = self.table(&terms);
                table.iter_mut().for_each(|c| *c *= scale);
                tables.push((form.fan[q].0, self.sparse(&table, form.fan[q].1)));
            }
            out.push(C1BasisFunction { kind: BasisKind::Vertex, entity: v, local: (j1, j2), tables });
        }
        Ok(out)
    }
}

impl C1Space {
    /// Builds `𝒜` with the given gluing data per edge (standard form of each edge).
    pub fn build(surface: &MultiPatchSurface, topology: &Topology, gluing: &[EdgeGluingData], disc: Discretisation) -> Result<Self> {
        disc.validate()?;
        let geo = &surface.patches[0].space.dir;
        if disc.k % geo.elements() != 0 {
            return Err(Error::Parameter(format!(
                "analysis elements k={} must be a multiple of the geometry elements {}",
                disc.k,
                geo.elements()
            )));
        }
        if gluing.len() != topology.edges.len() {
            return Err(Error::Parameter("gluing data must cover every edge".into()));
        }
        let m = MFunctions::new(disc.p, disc.r as i32, disc.k)?;
        let interp = Interpolator::new(&m.main);
        let n = m.main.dim();
        let checks = (0..disc.k).flat_map(|e| [0.17, 0.5, 0.83].map(|t| (e as f64 + t) / disc.k as f64)).collect();
        let builder = Builder { m, interp, n, surface, topology, checks };
        let space = TensorSplineSpace::new(disc.p, disc.r as i32, disc.k)?;
        let mut basis = Vec::new();
        for patch in 0..surface.patches.len() {
            for j1 in 2..=n - 3 {
                for j2 in 2..=n - 3 {
                    basis.push(C1BasisFunction {
                        kind: BasisKind::Patch,
                        entity: patch,
                        local: (j1, j2),
                        tables: vec![(patch, vec![(space.index(j1, j2), 1.0)])],
                    });
                }
            }
        }
        let patch_end = basis.len();
        let edge_fns: Vec<Vec<C1BasisFunction>> =
            (0..topology.edges.len()).into_par_iter().map(|e| builder.edge_functions(e, &gluing[e])).collect::<Result<_>>()?;
        basis.extend(edge_fns.into_iter().flatten());
        let edge_end = basis.len();
        let vertex_fns: Vec<Vec<C1BasisFunction>> =
            (0..topology.vertices.len()).into_par_iter().map(|v| builder.vertex_functions(v)).collect::<Result<_>>()?;
        basis.extend(vertex_fns.into_iter().flatten());
        let extraction = Extraction::from_basis(&basis, surface.patches.len(), space.dim());
        let kind_ranges = [0..patch_end, patch_end..edge_end, edge_end..basis.len()];
        Ok(Self { surface: surface.clone(), topology: topology.clone(), disc, space, basis, extraction, kind_ranges })
    }

    /// Builds `𝒜` computing the gluing data of every edge.
    pub fn new(surface: &MultiPatchSurface, topology: &Topology, disc: Discretisation) -> Result<Self> {
        let gluing = crate::gluing::compute_all_gluing(surface, topology)?;
        Self::build(surface, topology, &gluing, disc)
    }

    /// Full tensor-product space on a single patch (identity extraction), used for
    /// single-patch reference solutions.
    pub fn full_tensor(surface: &MultiPatchSurface, topology: &Topology, p: usize, r: usize, k: usize) -> Result<Self> {
        if surface.patches.len() != 1 {
            return Err(Error::Parameter("the full tensor space is defined for single-patch surfaces".into()));
        }
        let space = TensorSplineSpace::new(p, r as i32, k)?;
        let n = space.n();
        let basis: Vec<C1BasisFunction> = (0..n * n)
            .map(|i| C1BasisFunction { kind: BasisKind::Patch, entity: 0, local: (i / n, i % n), tables: vec![(0, vec![(i, 1.0)])] })
            .collect();
        let extraction = Extraction::from_basis(&basis, 1, space.dim());
        let len = basis.len();
        Ok(Self {
            surface: surface.clone(),
            topology: topology.clone(),
            disc: Discretisation::new(p, r, k),
            space,
            basis,
            extraction,
            kind_ranges: [0..len, len..len, len..len],
        })
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// Value, parametric gradient and Hessian of basis function `g` on `patch`.
    pub fn eval_function(&self, g: usize, patch: usize, xi: [f64; 2], max_deriv: usize) -> Result<ScalarJet> {
        let Some((_, table)) = self.basis[g].tables.iter().find(|(p, _)| *p == patch) else {
            return Ok(ScalarJet::default());
        };
        let mut dense = vec![0.0; self.space.dim()];
        for &(i, c) in table {
            dense[i] = c;
        }
        self.space.eval_scalar(&dense, xi, max_deriv)
    }

    /// Same as [`eval_function`](Self::eval_function) for a global coefficient vector.
    pub fn eval_combination(&self, tables: &[Vec<f64>], patch: usize, xi: [f64; 2], max_deriv: usize) -> Result<ScalarJet> {
        self.space.eval_scalar(&tables[patch], xi, max_deriv)
    }

    /// Surface gradient `Σ ∂_α φ a^α` of a scalar with parametric gradient `grad` at `xi`.
    pub fn surface_gradient(&self, patch: usize, xi: [f64; 2], grad: [f64; 2]) -> Result<Vector3<f64>> {
        let jet = self.surface.patches[patch].eval_jet(xi, 1)?;
        let g = Matrix2::new(jet.d[0].dot(&jet.d[0]), jet.d[0].dot(&jet.d[1]), jet.d[1].dot(&jet.d[0]), jet.d[1].dot(&jet.d[1]));
        let gi = g.try_inverse().ok_or_else(|| Error::SingularGeometry(format!("patch {patch} at {xi:?}")))?;
        let c = gi * Vector2::new(grad[0], grad[1]);
        Ok(jet.d[0] * c[0] + jet.d[1] * c[1])
    }

    /// Least-squares coefficients of a scalar field sampled at the element Gauss points,
    /// and the maximum pointwise residual at those points.
    pub fn least_squares_fit(&self, f: impl Fn(usize, [f64; 2]) -> f64) -> Result<(Vec<f64>, f64)> {
        let dim = self.dim();
        let (gx, _) = crate::spline::gauss_legendre(self.disc.p + 1);
        let dir = &self.space.dir;
        let p = dir.degree();
        let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
        for patch in 0..self.surface.patches.len() {
            for e1 in 0..dir.elements() {
                for e2 in 0..dir.elements() {
                    let (a1, b1) = dir.element_bounds(e1);
                    let (a2, b2) = dir.element_bounds(e2);
                    for &s in &gx {
                        for &t in &gx {
                            let xi = [a1 + s * (b1 - a1), a2 + t * (b2 - a2)];
                            let bu = dir.eval_basis_in(xi[0], e1, 0);
                            let bv = dir.eval_basis_in(xi[1], e2, 0);
                            let mut row: Vec<(usize, f64)> = Vec::new();
                            for a in 0..=p {
                                for b in 0..=p {
                                    let w = bu.get(0, a) * bv.get(0, b);
                                    for &(g, c) in &self.extraction.rows[patch][self.space.index(bu.first + a, bv.first + b)] {
                                        row.push((g, w * c));
                                    }
                                }
                            }
                            row.sort_unstable_by_key(|e| e.0);
                            row.dedup_by(|x, y| {
                                if x.0 == y.0 {
                                    y.1 += x.1;
                                    true
                                } else {
                                    false
                                }
                            });
                            rows.push((row, f(patch, xi)));
                        }
                    }
                }
            }
        }
        let mut normal = DMatrix::<f64>::zeros(dim, dim);
        let mut rhs = nalgebra::DVector::<f64>::zeros(dim);
        for (row, v) in &rows {
            for &(g, c) in row {
                rhs[g] += c * v;
                for &(h, d) in row {
                    normal[(g, h)] += c * d;
                }
            }
        }
        let sol = normal
            .cholesky()
            .ok_or_else(|| Error::Solver("basis functions are linearly dependent at the quadrature points".into()))?
            .solve(&rhs);
        let res = rows
            .iter()
            .map(|(row, v)| (row.iter().map(|&(g, c)| c * sol[g]).sum::<f64>() - v).abs())
            .fold(0.0, f64::max);
        Ok((sol.as_slice().to_vec(), res))
    }

    /// Value and parametric gradient of a sparse table at a point with basis values `bu, bv`.
    fn eval_table(&self, table: &SparseTable, bu: &crate::spline::BasisValues, bv: &crate::spline::BasisValues) -> (f64, [f64; 2]) {
        let n = self.space.n();
        let p = self.space.dir.degree();
        let (mut v, mut g) = (0.0, [0.0; 2]);
        for &(idx, c) in table {
            let (i, j) = (idx / n, idx % n);
            if i < bu.first || i > bu.first + p || j < bv.first || j > bv.first + p {
                continue;
            }
            let (a, b) = (i - bu.first, j - bv.first);
            v += c * bu.get(0, a) * bv.get(0, b);
            g[0] += c * bu.get(1, a) * bv.get(0, b);
            g[1] += c * bu.get(0, a) * bv.get(1, b);
        }
        (v, g)
    }

    /// Contravariant tangent basis `(a^1, a^2)` of the geometry at `xi`.
    fn dual_basis(&self, patch: usize, xi: [f64; 2]) -> Result<[Vector3<f64>; 2]> {
        let e1 = self.surface_gradient(patch, xi, [1.0, 0.0])?;
        let e2 = self.surface_gradient(patch, xi, [0.0, 1.0])?;
        Ok([e1, e2])
    }

    /// Two-sided comparison of values and surface gradients of every basis function at
    /// `samples` points per interface. Errors are relative to the maximum value and
    /// gradient magnitude of each function over a grid on its support.
    pub fn check_c1(&self, samples: usize) -> Result<C1Report> {
        let dir = &self.space.dir;
        let eval_at = |patch: usize, xi: [f64; 2]| -> Result<(crate::spline::BasisValues, crate::spline::BasisValues, [Vector3<f64>; 2])> {
            Ok((dir.eval_basis(xi[0], 1)?, dir.eval_basis(xi[1], 1)?, self.dual_basis(patch, xi)?))
        };
        let grid: Vec<f64> = (0..=8).map(|i| i as f64 / 8.0).collect();
        let scales: Vec<(f64, f64)> = self
            .basis
            .par_iter()
            .map(|f| -> Result<(f64, f64)> {
                let (mut sv, mut sg) = (0.0f64, 0.0f64);
                for (patch, table) in &f.tables {
                    for &x in &grid {
                        for &y in &grid {
                            let (bu, bv, dual) = eval_at(*patch, [x, y])?;
                            let (v, g) = self.eval_table(table, &bu, &bv);
                            sv = sv.max(v.abs());
                            sg = sg.max((dual[0] * g[0] + dual[1] * g[1]).norm());
                        }
                    }
                }
                Ok((sv.max(f64::MIN_POSITIVE), sg.max(f64::MIN_POSITIVE)))
            })
            .collect::<Result<_>>()?;
        let mut report = C1Report { max_value_error: 0.0, max_gradient_error: 0.0, worst: None, pairs_checked: 0 };
        for e in 0..self.topology.num_interfaces {
            let form = self.topology.edge_form(e);
            let (pa, ta) = form.i1;
            let (pb, tb) = form.i2.expect("interface has two patches");
            let mut fns: Vec<usize> = self.extraction.rows[pa]
                .iter()
                .chain(&self.extraction.rows[pb])
                .flat_map(|r| r.iter().map(|&(g, _)| g))
                .collect();
            fns.sort_unstable();
            fns.dedup();
            let pts: Vec<_> = (0..samples)
                .map(|i| {
                    let x = (i as f64 + 0.5) / samples as f64;
                    Ok((eval_at(pa, ta.apply([0.0, x]))?, eval_at(pb, tb.apply([x, 0.0]))?))
                })
                .collect::<Result<_>>()?;
            let empty = Vec::new();
            for &g in &fns {
                let f = &self.basis[g];
                let table = |patch: usize| f.tables.iter().find(|(p, _)| *p == patch).map_or(&empty, |(_, t)| t);
                let (ta_, tb_) = (table(pa), table(pb));
                for ((bua, bva, da), (bub, bvb, db)) in &pts {
                    let (va, ga) = self.eval_table(ta_, bua, bva);
                    let (vb, gb) = self.eval_table(tb_, bub, bvb);
                    let sa = da[0] * ga[0] + da[1] * ga[1];
                    let sb = db[0] * gb[0] + db[1] * gb[1];
                    let ev = (va - vb).abs() / scales[g].0;
                    let eg = (sa - sb).norm() / scales[g].1;
                    if ev > report.max_value_error || eg > report.max_gradient_error {
                        report.worst = Some((g, e));
                    }
                    report.max_value_error = report.max_value_error.max(ev);
                    report.max_gradient_error = report.max_gradient_error.max(eg);
                }
                report.pairs_checked += 1;
            }
        }
        Ok(report)
    }

    /// Coefficients of the constant function 1 and the fit residual.
    pub fn constant_coefficients(&self) -> Result<(Vec<f64>, f64)> {
        self.least_squares_fit(|_, _| 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spline::TensorSplinePatch;
    use crate::topology::{build_topology, default_tolerance};

    fn p3(x: f64, y: f64) -> Vector3<f64> {
        Vector3::new(x, y, 0.0)
    }

    fn two_squares() -> (MultiPatchSurface, Topology) {
        let s = MultiPatchSurface::new(vec![
            TensorSplinePatch::bilinear([p3(0., 0.), p3(1., 0.), p3(1., 1.), p3(0., 1.)]),
            TensorSplinePatch::bilinear([p3(1., 0.), p3(2., 0.), p3(2., 1.), p3(1., 1.)]),
        ])
        .unwrap();
        let t = build_topology(&s, default_tolerance(&s)).unwrap();
        (s, t)
    }

    #[test]
    fn counts_two_squares() {
        let (s, t) = two_squares();
        let space = C1Space::new(&s, &t, Discretisation::new(3, 1, 4)).unwrap();
        assert_eq!(space.kind_ranges[0].len(), 72);
        assert_eq!(space.kind_ranges[1].len(), 21);
        assert_eq!(space.kind_ranges[2].len(), 36);
        assert_eq!(space.dim(), 129);
        assert_eq!(dimension_formula(&t, space.disc), 129);
    }

    #[test]
    fn parameter_bounds() {
        let (s, t) = two_squares();
        assert!(C1Space::new(&s, &t, Discretisation::new(3, 1, 2)).is_err());
        assert!(C1Space::new(&s, &t, Discretisation::new(3, 2, 4)).is_err());
        assert!(C1Space::new(&s, &t, Discretisation::new(4, 2, 2)).is_ok());
    }

    #[test]
    fn patch_function_single_entry() {
        let (s, t) = two_squares();
        let space = C1Space::new(&s, &t, Discretisation::new(3, 1, 4)).unwrap();
        let f = &space.basis[0];
        assert_eq!(f.tables.len(), 1);
        assert_eq!(f.tables[0].1, vec![(space.space.index(2, 2), 1.0)]);
        let mut x = vec![0.0; space.dim()];
        x[0] = 1.0;
        let tabs = space.extraction.apply(&x).unwrap();
        assert_eq!(tabs[0].iter().filter(|v| **v != 0.0).count(), 1);
        assert!(tabs[1].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn edge_trace_reproduces_bspline() {
        let (s, t) = two_squares();
        let disc = Discretisation::new(3, 1, 4);
        let space = C1Space::new(&s, &t, disc).unwrap();
        let m = MFunctions::new(3, 1, 4).unwrap();
        for g in space.kind_ranges[1].clone() {
            let f = &space.basis[g];
            if f.entity != 0 {
                continue;
            }
            let form = t.edge_form(0);
            for i in 0..50 {
                let x = (i as f64 + 0.5) / 50.0;
                let xi = form.i1.1.apply([0.0, x]);
                let v = space.eval_function(g, form.i1.0, xi, 1).unwrap();
                let expect = if f.local.1 == 0 { m.trace.eval_single(f.local.0, x, 0).unwrap() } else { 0.0 };
                assert!((v.value - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn vertex_value_one_at_vertex() {
        let (s, t) = two_squares();
        let space = C1Space::new(&s, &t, Discretisation::new(3, 1, 4)).unwrap();
        for g in space.kind_ranges[2].clone() {
            let f = &space.basis[g];
            let vert = &t.vertices[f.entity];
            for &(patch, corner) in &vert.fan {
                let v = space.eval_function(g, patch, corner.param(), 0).unwrap();
                let expect = if f.local == (0, 0) { 1.0 } else { 0.0 };
                assert!((v.value - expect).abs() < 1e-12, "{:?} {}", f.local, v.value);
            }
        }
    }

    #[test]
    fn two_sided_c1_on_two_squares() {
        let (s, t) = two_squares();
        let space = C1Space::new(&s, &t, Discretisation::new(3, 1, 4)).unwrap();
        let form = t.edge_form(0);
        let (pb, tb) = form.i2.unwrap();
        for g in 0..space.dim() {
            for i in 0..50 {
                let x = (i as f64 + 0.5) / 50.0;
                let xa = form.i1.1.apply([0.0, x]);
                let xb = tb.apply([x, 0.0]);
                let va = space.eval_function(g, form.i1.0, xa, 1).unwrap();
                let vb = space.eval_function(g, pb, xb, 1).unwrap();
                let ga = space.surface_gradient(form.i1.0, xa, va.grad).unwrap();
                let gb = space.surface_gradient(pb, xb, vb.grad).unwrap();
                assert!((va.value - vb.value).abs() < 1e-12);
                assert!((ga - gb).norm() < 1e-9 * (1.0 + ga.norm()), "basis {g} {:?}", space.basis[g].local);
            }
        }
    }
}
