//! Gluing data along interfaces in standard form and the AS-G1 property.
//!
//! For an interface with `p1(0, ξ) = p2(ξ, 0)` the gluing functions satisfy
//! `α1(ξ) ∂2p2(ξ, 0) + α2(ξ) ∂1p1(0, ξ) + β(ξ) ∂2p1(0, ξ) = 0`, with `α1, α2` linear and
//! `β = α1 β2 + α2 β1` for linear `β1, β2`. Here `α1` and `β1` belong to patch `i1`.

use nalgebra::{DMatrix, DVector, Matrix2, Vector3};

use crate::error::{Error, Result};
use crate::spline::TensorSplinePatch;
use crate::topology::{Edge, MultiPatchSurface, Topology};

/// Relative singular-value threshold for the null space of the collocated identity.
const NULL_TOL: f64 = 1e-9;

/// Linear polynomial `c0 + c1 ξ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Linear {
    pub c0: f64,
    pub c1: f64,
}

impl Linear {
    pub const ONE: Linear = Linear { c0: 1.0, c1: 0.0 };
    pub const ZERO: Linear = Linear { c0: 0.0, c1: 0.0 };

    pub fn eval(&self, x: f64) -> f64 {
        self.c0 + self.c1 * x
    }

    pub fn slope(&self) -> f64 {
        self.c1
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeGluingData {
    pub alpha1: Linear,
    pub alpha2: Linear,
    pub beta1: Linear,
    pub beta2: Linear,
}

impl EdgeGluingData {
    /// Boundary convention `α = 1`, `β = 0`.
    pub const BOUNDARY: EdgeGluingData =
        EdgeGluingData { alpha1: Linear::ONE, alpha2: Linear::ONE, beta1: Linear::ZERO, beta2: Linear::ZERO };

    /// Monomial coefficients of the quadratic `β = α1 β2 + α2 β1`.
    pub fn beta(&self) -> [f64; 3] {
        let (a1, a2, b1, b2) = (self.alpha1, self.alpha2, self.beta1, self.beta2);
        [
            a1.c0 * b2.c0 + a2.c0 * b1.c0,
            a1.c0 * b2.c1 + a1.c1 * b2.c0 + a2.c0 * b1.c1 + a2.c1 * b1.c0,
            a1.c1 * b2.c1 + a2.c1 * b1.c1,
        ]
    }

    pub fn beta_at(&self, x: f64) -> f64 {
        let b = self.beta();
        b[0] + x * (b[1] + x * b[2])
    }
}

/// Tangent data along an interface in standard form.
struct EdgeSamples {
    params: Vec<f64>,
    /// `∂2 p2(ξ, 0)`.
    d2: Vec<Vector3<f64>>,
    /// `∂1 p1(0, ξ)`.
    d1: Vec<Vector3<f64>>,
    /// `∂2 p1(0, ξ)`.
    t: Vec<Vector3<f64>>,
    scale: f64,
}

fn sample_edge(p1: &TensorSplinePatch, p2: &TensorSplinePatch, m: usize) -> Result<EdgeSamples> {
    let params: Vec<f64> = (0..m).map(|i| i as f64 / (m - 1) as f64).collect();
    let (mut d2, mut d1, mut t) = (Vec::new(), Vec::new(), Vec::new());
    let mut scale: f64 = 0.0;
    for &x in &params {
        let j1 = p1.eval_jet([0.0, x], 1)?;
        let j2 = p2.eval_jet([x, 0.0], 1)?;
        d2.push(j2.d[1]);
        d1.push(j1.d[0]);
        t.push(j1.d[1]);
        scale = scale.max(j2.d[1].norm()).max(j1.d[0].norm()).max(j1.d[1].norm());
    }
    Ok(EdgeSamples { params, d2, d1, t, scale })
}

fn collocation_count(p1: &TensorSplinePatch) -> usize {
    let s = &p1.space.dir;
    2 * s.elements() * (s.degree() + 3) + 1
}

/// Rows of the collocated identity in the unknowns `(α1₀, α1₁, α2₀, α2₁, β₀, β₁, β₂)`.
fn ascond_matrix(s: &EdgeSamples) -> DMatrix<f64> {
    let m = s.params.len();
    let mut a = DMatrix::<f64>::zeros(3 * m, 7);
    for (i, &x) in s.params.iter().enumerate() {
        for c in 0..3 {
            let row = 3 * i + c;
            let (d2, d1, t) = (s.d2[i][c] / s.scale, s.d1[i][c] / s.scale, s.t[i][c] / s.scale);
            a[(row, 0)] = d2;
            a[(row, 1)] = x * d2;
            a[(row, 2)] = d1;
            a[(row, 3)] = x * d1;
            a[(row, 4)] = t;
            a[(row, 5)] = x * t;
            a[(row, 6)] = x * x * t;
        }
    }
    a
}

/// Gluing data of a single interface given its standard-form patches.
pub fn compute_gluing_local(p1: &TensorSplinePatch, p2: &TensorSplinePatch, edge: usize) -> Result<EdgeGluingData> {
    let samples = sample_edge(p1, p2, collocation_count(p1))?;
    let a = ascond_matrix(&samples);
    let svd = a.clone().svd(false, true);
    let v_t = svd.v_t.as_ref().expect("right singular vectors requested");
    let sigma = &svd.singular_values;
    let smax = sigma.max();
    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&i, &j| sigma[i].total_cmp(&sigma[j]));
    let null: Vec<DVector<f64>> = order
        .iter()
        .take_while(|&&i| sigma[i] <= NULL_TOL * smax)
        .map(|&i| v_t.row(i).transpose())
        .collect();
    let x = match null.len() {
        0 => return Err(Error::NotAsG1 { edge, residual: sigma[order[0]] / smax }),
        1 => null[0].clone(),
        2 => {
            // Two-dimensional null space: the solutions are γ-multiples of a pair with
            // constant α; pick it as the combination with vanishing α slopes and β₂.
            let n = DMatrix::from_columns(&null);
            let sel = DMatrix::from_fn(3, 2, |r, c| n[([1, 3, 6][r], c)]);
            let s2 = sel.svd(false, true);
            let vt = s2.v_t.expect("requested");
            let k = if s2.singular_values[0] < s2.singular_values[1] { 0 } else { 1 };
            &n * vt.row(k).transpose()
        }
        _ => return Err(Error::Unsupported(format!("edge {edge}: gluing null space of dimension {}", null.len()))),
    };
    // Scale minimising ||α1 - 1||² + ||α2 - 1||² in L2(0, 1).
    let int = |c0: f64, c1: f64| c0 + 0.5 * c1;
    let int2 = |c0: f64, c1: f64| c0 * c0 + c0 * c1 + c1 * c1 / 3.0;
    let num = int(x[0], x[1]) + int(x[2], x[3]);
    let den = int2(x[0], x[1]) + int2(x[2], x[3]);
    if num.abs() < 1e-14 * den.sqrt() {
        return Err(Error::DegenerateGluing(edge));
    }
    let x = x * (num / den);
    let alpha1 = Linear { c0: x[0], c1: x[1] };
    let alpha2 = Linear { c0: x[2], c1: x[3] };
    let positive = |a: Linear| a.eval(0.0) > 0.0 && a.eval(1.0) > 0.0;
    if !(positive(alpha1) && positive(alpha2)) {
        return Err(Error::DegenerateGluing(edge));
    }
    let (beta1, beta2) = split_beta(alpha1, alpha2, [x[4], x[5], x[6]], edge)?;
    Ok(EdgeGluingData { alpha1: snap(alpha1), alpha2: snap(alpha2), beta1: snap(beta1), beta2: snap(beta2) })
}

/// Rounds coefficients within `SNAP_TOL` of an integer, so that geometrically trivial
/// interfaces get exactly `α = 1`, `β = 0`. The change is far below the AS-G1 tolerance.
const SNAP_TOL: f64 = 1e-12;

fn snap(l: Linear) -> Linear {
    let s = |c: f64| if (c - c.round()).abs() <= SNAP_TOL { c.round() + 0.0 } else { c };
    Linear { c0: s(l.c0), c1: s(l.c1) }
}

/// Minimum-norm linear `(β1, β2)` with `α1 β2 + α2 β1 = β` in the L2(0, 1) metric.
fn split_beta(a1: Linear, a2: Linear, beta: [f64; 3], edge: usize) -> Result<(Linear, Linear)> {
    // Unknowns y = (β1₀, β1₁, β2₀, β2₁).
    let a = DMatrix::from_row_slice(
        3,
        4,
        &[a2.c0, 0.0, a1.c0, 0.0, a2.c1, a2.c0, a1.c1, a1.c0, 0.0, a2.c1, 0.0, a1.c1],
    );
    let gram = Matrix2::new(1.0, 0.5, 0.5, 1.0 / 3.0);
    let l = gram.cholesky().expect("Gram matrix is SPD").l();
    let linv_t = l.try_inverse().expect("invertible").transpose();
    let mut w = DMatrix::<f64>::zeros(4, 4);
    w.view_mut((0, 0), (2, 2)).copy_from(&linv_t);
    w.view_mut((2, 2), (2, 2)).copy_from(&linv_t);
    let aw = &a * &w;
    let b = DVector::from_column_slice(&beta);
    let z = aw.clone().pseudo_inverse(1e-13).expect("pseudo-inverse exists") * &b;
    let y = &w * z;
    let res = (&a * &y - &b).norm();
    if res > 1e-10 * b.norm().max(1.0) {
        return Err(Error::NotAsG1 { edge, residual: res });
    }
    Ok((Linear { c0: y[0], c1: y[1] }, Linear { c0: y[2], c1: y[3] }))
}

/// Standard-form patches `(p1, p2)` of interface `edge`.
pub fn edge_patches(surface: &MultiPatchSurface, topology: &Topology, edge: usize) -> Option<(TensorSplinePatch, TensorSplinePatch)> {
    let form = topology.edge_form(edge);
    let (pb, tb) = form.i2?;
    let (pa, ta) = form.i1;
    Some((ta.transform_patch(&surface.patches[pa]), tb.transform_patch(&surface.patches[pb])))
}

/// Gluing data of edge `edge` in its standard form; boundary edges get `α = 1`, `β = 0`.
pub fn compute_gluing(surface: &MultiPatchSurface, topology: &Topology, edge: usize) -> Result<EdgeGluingData> {
    match edge_patches(surface, topology, edge) {
        Some((p1, p2)) => compute_gluing_local(&p1, &p2, edge),
        None => Ok(EdgeGluingData::BOUNDARY),
    }
}

/// Gluing data of every edge.
pub fn compute_all_gluing(surface: &MultiPatchSurface, topology: &Topology) -> Result<Vec<EdgeGluingData>> {
    (0..topology.edges.len()).map(|e| compute_gluing(surface, topology, e)).collect()
}

/// Largest ASCOND residual at `samples` parameters relative to the largest tangent.
pub fn ascond_residual(p1: &TensorSplinePatch, p2: &TensorSplinePatch, g: &EdgeGluingData, samples: usize) -> Result<f64> {
    let s = sample_edge(p1, p2, samples)?;
    let mut worst: f64 = 0.0;
    for (i, &x) in s.params.iter().enumerate() {
        let r = s.d2[i] * g.alpha1.eval(x) + s.d1[i] * g.alpha2.eval(x) + s.t[i] * g.beta_at(x);
        worst = worst.max(r.norm());
    }
    Ok(worst / s.scale)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeReport {
    pub edge: usize,
    pub residual: f64,
    pub alpha_positive: bool,
    pub linear: bool,
}

impl EdgeReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.linear && self.alpha_positive && self.residual <= tol
    }
}

/// Per-edge AS-G1 diagnostics; boundary edges pass by convention.
pub fn verify_as_g1(surface: &MultiPatchSurface, topology: &Topology) -> Vec<EdgeReport> {
    (0..topology.edges.len())
        .map(|edge| match edge_patches(surface, topology, edge) {
            None => EdgeReport { edge, residual: 0.0, alpha_positive: true, linear: true },
            Some((p1, p2)) => match compute_gluing_local(&p1, &p2, edge) {
                Ok(g) => EdgeReport {
                    edge,
                    residual: ascond_residual(&p1, &p2, &g, 100).unwrap_or(f64::INFINITY),
                    alpha_positive: true,
                    linear: true,
                },
                Err(Error::DegenerateGluing(_)) => {
                    EdgeReport { edge, residual: f64::INFINITY, alpha_positive: false, linear: true }
                }
                Err(Error::NotAsG1 { residual, .. }) => {
                    EdgeReport { edge, residual, alpha_positive: true, linear: false }
                }
                Err(_) => EdgeReport { edge, residual: f64::INFINITY, alpha_positive: false, linear: false },
            },
        })
        .collect()
}

/// True if every edge passes with relative residual `tol`.
pub fn is_as_g1(surface: &MultiPatchSurface, topology: &Topology, tol: f64) -> bool {
    verify_as_g1(surface, topology).iter().all(|r| r.passes(tol))
}

/// Null vector `(α1, α2, β)` of `[∂2p2, ∂1p1, ∂2p1]` at one interface point.
fn endpoint_gluing(d2: Vector3<f64>, d1: Vector3<f64>, t: Vector3<f64>, edge: usize) -> Result<[f64; 3]> {
    let scale = d2.norm().max(d1.norm()).max(t.norm());
    let m = nalgebra::Matrix3::from_columns(&[d2 / scale, d1 / scale, t / scale]);
    let svd = m.svd(false, true);
    let vt = svd.v_t.expect("requested");
    let (k, smin) = svd.singular_values.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|(k, s)| (k, *s)).unwrap();
    if smin > 1e-8 {
        return Err(Error::Topology(format!("edge {edge} is not G1 at an end point (tangent planes differ)")));
    }
    let mut v = [vt[(k, 0)], vt[(k, 1)], vt[(k, 2)]];
    if v[0] < 0.0 {
        v = v.map(|x| -x);
    }
    if !(v[0] > 0.0 && v[1] > 0.0) {
        return Err(Error::DegenerateGluing(edge));
    }
    Ok(v)
}

/// Row-1 correction of one interface for the end-point scale ratio `rho`.
struct RowCorrection {
    delta1: Vec<Vector3<f64>>,
    delta2: Vec<Vector3<f64>>,
    residual: f64,
}

fn row_correction(p1: &TensorSplinePatch, p2: &TensorSplinePatch, g0: [f64; 3], g1: [f64; 3], rho: f64) -> Result<RowCorrection> {
    let space = &p1.space.dir;
    let n = space.dim();
    let m = collocation_count(p1);
    let s = sample_edge(p1, p2, m)?;
    let lin = |i: usize, x: f64| (1.0 - x) * g0[i] + x * rho * g1[i];
    let unknowns = 2 * (n - 2);
    let mut a = DMatrix::<f64>::zeros(m, unknowns);
    let mut rhs = DMatrix::<f64>::zeros(m, 3);
    for (row, &x) in s.params.iter().enumerate() {
        let b = space.eval_basis(x, 0)?;
        for j in 1..n - 1 {
            let nj = b.of(0, j);
            a[(row, j - 1)] = lin(0, x) * nj;
            a[(row, n - 2 + j - 1)] = lin(1, x) * nj;
        }
        let r = s.d2[row] * lin(0, x) + s.d1[row] * lin(1, x) + s.t[row] * lin(2, x);
        for c in 0..3 {
            rhs[(row, c)] = -r[c];
        }
    }
    let pinv = a.clone().pseudo_inverse(1e-12).map_err(|e| Error::Solver(e.to_string()))?;
    let sol = &pinv * &rhs;
    let residual = (&a * &sol - &rhs).norm() / s.scale;
    let p = space.degree() as f64;
    let h = space.h();
    let delta = |k: usize| Vector3::new(sol[(k, 0)], sol[(k, 1)], sol[(k, 2)]) * (h / p);
    Ok(RowCorrection {
        delta2: (0..n - 2).map(delta).collect(),
        delta1: (0..n - 2).map(|j| delta(n - 2 + j)).collect(),
        residual,
    })
}

/// Moves the first interior control-point rows adjacent to each interface so that every
/// interface becomes AS-G1 with linear `β`; traces are unchanged.
///
/// The end values of the gluing data are fixed by the tangent planes at the interface end
/// points. Their relative scale is chosen to minimise the summed squared displacement.
pub fn as_g1_linearize(surface: &MultiPatchSurface, topology: &Topology) -> Result<MultiPatchSurface> {
    let mut out = surface.clone();
    let mut touched = std::collections::HashSet::new();
    for edge in 0..topology.num_interfaces {
        let Edge::Interface(_) = topology.edges[edge] else { continue };
        let (p1, p2) = edge_patches(&out, topology, edge).expect("interface");
        if let Ok(g) = compute_gluing_local(&p1, &p2, edge) {
            if ascond_residual(&p1, &p2, &g, 100)? <= 1e-13 {
                continue;
            }
        }
        let n = p1.n();
        let j0 = [p1.eval_jet([0.0, 0.0], 1)?, p2.eval_jet([0.0, 0.0], 1)?];
        let j1 = [p1.eval_jet([0.0, 1.0], 1)?, p2.eval_jet([1.0, 0.0], 1)?];
        let g0 = endpoint_gluing(j0[1].d[1], j0[0].d[0], j0[0].d[1], edge)?;
        let g1 = endpoint_gluing(j1[1].d[1], j1[0].d[0], j1[0].d[1], edge)?;
        let cost = |log_rho: f64| -> f64 {
            match row_correction(&p1, &p2, g0, g1, log_rho.exp()) {
                Ok(c) => c.delta1.iter().chain(&c.delta2).map(|d| d.norm_squared()).sum::<f64>() + 1e6 * c.residual,
                Err(_) => f64::INFINITY,
            }
        };
        let log_rho = golden_section(cost, -3.0, 3.0, 80);
        let corr = row_correction(&p1, &p2, g0, g1, log_rho.exp())?;
        let form = topology.edge_form(edge);
        let (pa, ta) = form.i1;
        let (pb, tb) = form.i2.expect("interface");
        for j in 1..n - 1 {
            let (a1, b1) = ta.index(1, j, n);
            let (a2, b2) = tb.index(j, 1, n);
            for key in [(pa, a1, b1), (pb, a2, b2)] {
                if !touched.insert(key) {
                    return Err(Error::Unsupported(format!(
                        "edge {edge}: interface rows overlap another interface's rows"
                    )));
                }
            }
            let ia = out.patches[pa].space.index(a1, b1);
            out.patches[pa].points[ia] += corr.delta1[j - 1];
            let ib = out.patches[pb].space.index(a2, b2);
            out.patches[pb].points[ib] += corr.delta2[j - 1];
        }
        let (q1, q2) = edge_patches(&out, topology, edge).expect("interface");
        let ok = compute_gluing_local(&q1, &q2, edge).and_then(|g| ascond_residual(&q1, &q2, &g, 100));
        match ok {
            Ok(r) if r <= 1e-10 => {}
            Ok(r) => return Err(Error::NotAsG1 { edge, residual: r }),
            Err(Error::NotAsG1 { residual, .. }) => {
                return Err(Error::Solver(format!("edge {edge}: singular configuration, residual {residual:e}")))
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}
