//! Open uniform B-spline spaces on [0, 1], tensor-product patches, interpolation at
//! Greville points, nested refinement and the boundary functions `M` used by the C1
//! construction.

use nalgebra::{DMatrix, DVector, Vector3};

use crate::error::{Error, Result};

/// Absolute tolerance for comparing knots and parameters against the domain bounds.
pub const KNOT_TOL: f64 = 1e-12;

/// Open uniform spline space of degree `p`, regularity `r` and `k` elements on [0, 1].
///
/// Interior knots `j/k` carry multiplicity `p - r`; end knots carry `p + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct UnivariateSplineSpace {
    degree: usize,
    regularity: i32,
    elements: usize,
    knots: Vec<f64>,
}

/// Active basis functions at one parameter: `values[d * (p + 1) + i]` holds the `d`-th
/// derivative of `N_{first + i}`.
#[derive(Clone, Debug)]
pub struct BasisValues {
    pub first: usize,
    pub degree: usize,
    pub max_deriv: usize,
    pub values: Vec<f64>,
}

impl BasisValues {
    pub fn get(&self, deriv: usize, i: usize) -> f64 {
        self.values[deriv * (self.degree + 1) + i]
    }

    /// Derivative `deriv` of global basis function `j`, zero outside the active range.
    pub fn of(&self, deriv: usize, j: usize) -> f64 {
        if j < self.first || j > self.first + self.degree {
            0.0
        } else {
            self.get(deriv, j - self.first)
        }
    }
}

impl UnivariateSplineSpace {
    pub fn new(degree: usize, regularity: i32, elements: usize) -> Result<Self> {
        if degree < 1 {
            return Err(Error::InvalidSpace(format!("degree {degree} < 1")));
        }
        if regularity < -1 || regularity > degree as i32 - 1 {
            return Err(Error::InvalidSpace(format!(
                "regularity {regularity} outside [-1, {}]",
                degree as i32 - 1
            )));
        }
        if elements < 1 {
            return Err(Error::InvalidSpace("element count must be at least 1".into()));
        }
        let mult = (degree as i32 - regularity) as usize;
        let mut knots = vec![0.0; degree + 1];
        for j in 1..elements {
            let x = j as f64 / elements as f64;
            knots.extend(std::iter::repeat(x).take(mult));
        }
        knots.extend(std::iter::repeat(1.0).take(degree + 1));
        Ok(Self { degree, regularity, elements, knots })
    }

    /// Builds a space from an explicit knot vector, accepting only open uniform knots.
    pub fn from_knots(degree: usize, knots: &[f64]) -> Result<Self> {
        let reject = |msg: &str| Err(Error::InvalidSpace(format!("knot vector rejected: {msg}")));
        if knots.len() < 2 * (degree + 1) {
            return reject("too short");
        }
        if knots.windows(2).any(|w| w[1] < w[0] - KNOT_TOL) {
            return reject("not nondecreasing");
        }
        let (mut distinct, mut mults) = (Vec::<f64>::new(), Vec::<usize>::new());
        for &t in knots {
            match distinct.last() {
                Some(&last) if (t - last).abs() <= KNOT_TOL => *mults.last_mut().unwrap() += 1,
                _ => {
                    distinct.push(t);
                    mults.push(1);
                }
            }
        }
        let k = distinct.len() - 1;
        if k < 1 || mults[0] != degree + 1 || mults[k] != degree + 1 {
            return reject("end knots must have multiplicity p + 1");
        }
        let interior = mults[1..k].first().copied().unwrap_or(1);
        if mults[1..k].iter().any(|&m| m != interior) || interior > degree + 1 {
            return reject("interior multiplicities differ");
        }
        for (j, &t) in distinct.iter().enumerate() {
            if (t - j as f64 / k as f64).abs() > KNOT_TOL {
                return reject("knots not uniform on [0, 1]");
            }
        }
        let regularity = degree as i32 - interior as i32;
        Self::new(degree, if k == 1 { degree as i32 - 1 } else { regularity }, k)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn regularity(&self) -> i32 {
        self.regularity
    }

    pub fn elements(&self) -> usize {
        self.elements
    }

    pub fn h(&self) -> f64 {
        1.0 / self.elements as f64
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn dim(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    fn multiplicity(&self) -> usize {
        (self.degree as i32 - self.regularity) as usize
    }

    /// Element index containing `x`; the right end point belongs to the last element.
    pub fn element_of(&self, x: f64) -> usize {
        let e = (x * self.elements as f64).floor();
        (e.max(0.0) as usize).min(self.elements - 1)
    }

    /// Index of the first basis function active on element `e`.
    pub fn first_active(&self, e: usize) -> usize {
        e * self.multiplicity()
    }

    /// Element bounds `[e h, (e + 1) h]`.
    pub fn element_bounds(&self, e: usize) -> (f64, f64) {
        let h = self.h();
        (e as f64 * h, if e + 1 == self.elements { 1.0 } else { (e + 1) as f64 * h })
    }

    fn check_domain(x: f64) -> Result<f64> {
        if !(x >= -KNOT_TOL && x <= 1.0 + KNOT_TOL) {
            return Err(Error::Domain(x));
        }
        Ok(x.clamp(0.0, 1.0))
    }

    /// Values and derivatives up to `max_deriv` of the `p + 1` active basis functions.
    pub fn eval_basis(&self, x: f64, max_deriv: usize) -> Result<BasisValues> {
        let x = Self::check_domain(x)?;
        Ok(self.eval_basis_in(x, self.element_of(x), max_deriv))
    }

    /// Evaluation on a given element, used when `x` lies on an element boundary and the
    /// one-sided limit from element `e` is wanted.
    pub fn eval_basis_in(&self, x: f64, e: usize, max_deriv: usize) -> BasisValues {
        let p = self.degree;
        let span = p + e * self.multiplicity();
        let u = &self.knots;
        let mut ndu = vec![vec![0.0; p + 1]; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = x - u[span + 1 - j];
            right[j] = u[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        let nd = max_deriv.min(p);
        let mut values = vec![0.0; (max_deriv + 1) * (p + 1)];
        for j in 0..=p {
            values[j] = ndu[j][p];
        }
        let mut a = vec![vec![0.0; p + 1]; 2];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=nd {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if r >= k {
                    let rk = rk as usize;
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
                    d = a[s2][0] * ndu[rk][pk];
                }
                let j1: usize = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2: usize = if r as isize - 1 <= pk as isize { k - 1 } else { p - r };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                values[k * (p + 1) + r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut fac = p as f64;
        for k in 1..=nd {
            for j in 0..=p {
                values[k * (p + 1) + j] *= fac;
            }
            fac *= (p - k) as f64;
        }
        BasisValues { first: span - p, degree: p, max_deriv, values }
    }

    /// Derivative `deriv` of the single basis function `N_j` at `x`.
    pub fn eval_single(&self, j: usize, x: f64, deriv: usize) -> Result<f64> {
        if j >= self.dim() {
            return Err(Error::Range { index: j, range: format!("0..{}", self.dim()) });
        }
        Ok(self.eval_basis(x, deriv)?.of(deriv, j))
    }

    /// Derivatives `0..=max_deriv` of the spline with coefficients `coeffs` at `x`.
    pub fn eval_function(&self, coeffs: &[f64], x: f64, max_deriv: usize) -> Result<Vec<f64>> {
        let b = self.eval_basis(x, max_deriv)?;
        Ok((0..=max_deriv)
            .map(|d| (0..=self.degree).map(|i| b.get(d, i) * coeffs[b.first + i]).sum())
            .collect())
    }

    /// Knot averages of `p` consecutive interior knots of each basis function.
    pub fn greville(&self) -> Vec<f64> {
        let p = self.degree;
        (0..self.dim())
            .map(|j| self.knots[j + 1..=j + p].iter().sum::<f64>() / p as f64)
            .collect()
    }

    /// True if every spline of `self` lies in `other`.
    pub fn is_nested_in(&self, other: &UnivariateSplineSpace) -> bool {
        let elevation = other.degree as i32 - self.degree as i32;
        elevation >= 0
            && other.elements % self.elements == 0
            && (self.elements == 1 || other.regularity <= self.regularity)
    }
}

/// Dense interpolation at the Greville points with a factored collocation matrix.
#[derive(Clone, Debug)]
pub struct Interpolator {
    space: UnivariateSplineSpace,
    nodes: Vec<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl Interpolator {
    pub fn new(space: &UnivariateSplineSpace) -> Self {
        let nodes = space.greville();
        let n = space.dim();
        let mut b = DMatrix::<f64>::zeros(n, n);
        for (a, &x) in nodes.iter().enumerate() {
            let bv = space.eval_basis(x, 0).expect("Greville points lie in [0, 1]");
            for i in 0..=space.degree() {
                b[(a, bv.first + i)] = bv.get(0, i);
            }
        }
        Self { space: space.clone(), nodes, lu: b.lu() }
    }

    pub fn space(&self) -> &UnivariateSplineSpace {
        &self.space
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Coefficients of the spline interpolating `values` given at the nodes.
    pub fn fit(&self, values: &[f64]) -> Vec<f64> {
        let rhs = DVector::from_column_slice(values);
        self.lu.solve(&rhs).expect("Greville collocation is unisolvent").as_slice().to_vec()
    }

    /// Tensor fit of `values[a * n + b]` given at node pairs `(g_a, g_b)`.
    pub fn fit_tensor(&self, values: &[f64]) -> Vec<f64> {
        let n = self.nodes.len();
        let g = DMatrix::from_row_slice(n, n, values);
        let t = self.lu.solve(&g).expect("unisolvent");
        let d = self.lu.solve(&t.transpose()).expect("unisolvent").transpose();
        let mut out = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                out[a * n + b] = d[(a, b)];
            }
        }
        out
    }
}

/// Tensor-product space sharing one univariate space in both directions.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorSplineSpace {
    pub dir: UnivariateSplineSpace,
}

/// Value, gradient and Hessian of a scalar tensor-product spline.
#[derive(Clone, Copy, Debug, Default)]
pub struct ScalarJet {
    pub value: f64,
    pub grad: [f64; 2],
    pub hess: [[f64; 2]; 2],
}

/// Point, covariant tangents `d[α] = ∂_α x` and second derivatives `dd[α][β]`.
#[derive(Clone, Copy, Debug)]
pub struct PatchJet {
    pub point: Vector3<f64>,
    pub d: [Vector3<f64>; 2],
    pub dd: [[Vector3<f64>; 2]; 2],
}

impl TensorSplineSpace {
    pub fn new(degree: usize, regularity: i32, elements: usize) -> Result<Self> {
        Ok(Self { dir: UnivariateSplineSpace::new(degree, regularity, elements)? })
    }

    /// Number of univariate functions per direction.
    pub fn n(&self) -> usize {
        self.dir.dim()
    }

    pub fn dim(&self) -> usize {
        self.n() * self.n()
    }

    /// Flat index of coefficient `(j1, j2)`.
    pub fn index(&self, j1: usize, j2: usize) -> usize {
        j1 * self.n() + j2
    }

    pub fn eval_scalar(&self, coeffs: &[f64], xi: [f64; 2], max_deriv: usize) -> Result<ScalarJet> {
        let bu = self.dir.eval_basis(xi[0], max_deriv)?;
        let bv = self.dir.eval_basis(xi[1], max_deriv)?;
        Ok(self.contract_scalar(coeffs, &bu, &bv))
    }

    pub fn contract_scalar(&self, coeffs: &[f64], bu: &BasisValues, bv: &BasisValues) -> ScalarJet {
        let p = self.dir.degree();
        let nd = bu.max_deriv.min(bv.max_deriv);
        let mut jet = ScalarJet::default();
        for a in 0..=p {
            for b in 0..=p {
                let c = coeffs[self.index(bu.first + a, bv.first + b)];
                if c == 0.0 {
                    continue;
                }
                jet.value += c * bu.get(0, a) * bv.get(0, b);
                if nd >= 1 {
                    jet.grad[0] += c * bu.get(1, a) * bv.get(0, b);
                    jet.grad[1] += c * bu.get(0, a) * bv.get(1, b);
                }
                if nd >= 2 {
                    jet.hess[0][0] += c * bu.get(2, a) * bv.get(0, b);
                    jet.hess[0][1] += c * bu.get(1, a) * bv.get(1, b);
                    jet.hess[1][1] += c * bu.get(0, a) * bv.get(2, b);
                }
            }
        }
        jet.hess[1][0] = jet.hess[0][1];
        jet
    }
}

/// Tensor-product patch with control points in R³; planar patches live at z = 0.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorSplinePatch {
    pub space: TensorSplineSpace,
    /// Control points indexed by `space.index(j1, j2)`.
    pub points: Vec<Vector3<f64>>,
}

impl TensorSplinePatch {
    pub fn new(space: TensorSplineSpace, points: Vec<Vector3<f64>>) -> Result<Self> {
        if points.len() != space.dim() {
            return Err(Error::InvalidSpace(format!(
                "{} control points for a space of dimension {}",
                points.len(),
                space.dim()
            )));
        }
        Ok(Self { space, points })
    }

    /// Bilinear patch through the counterclockwise corners `v[0..4]`:
    /// `(0,0) → v0, (1,0) → v1, (1,1) → v2, (0,1) → v3`.
    pub fn bilinear(v: [Vector3<f64>; 4]) -> Self {
        let space = TensorSplineSpace::new(1, 0, 1).expect("valid bilinear space");
        let mut points = vec![Vector3::zeros(); 4];
        points[space.index(0, 0)] = v[0];
        points[space.index(1, 0)] = v[1];
        points[space.index(1, 1)] = v[2];
        points[space.index(0, 1)] = v[3];
        Self { space, points }
    }

    pub fn n(&self) -> usize {
        self.space.n()
    }

    pub fn point(&self, j1: usize, j2: usize) -> Vector3<f64> {
        self.points[self.space.index(j1, j2)]
    }

    pub fn eval(&self, xi: [f64; 2]) -> Result<Vector3<f64>> {
        Ok(self.eval_jet(xi, 0)?.point)
    }

    pub fn eval_jet(&self, xi: [f64; 2], max_deriv: usize) -> Result<PatchJet> {
        let bu = self.space.dir.eval_basis(xi[0], max_deriv)?;
        let bv = self.space.dir.eval_basis(xi[1], max_deriv)?;
        Ok(self.contract(&bu, &bv))
    }

    pub fn contract(&self, bu: &BasisValues, bv: &BasisValues) -> PatchJet {
        let p = self.space.dir.degree();
        let nd = bu.max_deriv.min(bv.max_deriv);
        let z = Vector3::zeros();
        let mut jet = PatchJet { point: z, d: [z; 2], dd: [[z; 2]; 2] };
        for a in 0..=p {
            for b in 0..=p {
                let c = self.points[self.space.index(bu.first + a, bv.first + b)];
                jet.point += c * (bu.get(0, a) * bv.get(0, b));
                if nd >= 1 {
                    jet.d[0] += c * (bu.get(1, a) * bv.get(0, b));
                    jet.d[1] += c * (bu.get(0, a) * bv.get(1, b));
                }
                if nd >= 2 {
                    jet.dd[0][0] += c * (bu.get(2, a) * bv.get(0, b));
                    jet.dd[0][1] += c * (bu.get(1, a) * bv.get(1, b));
                    jet.dd[1][1] += c * (bu.get(0, a) * bv.get(2, b));
                }
            }
        }
        jet.dd[1][0] = jet.dd[0][1];
        jet
    }

    /// Exact representation in a nesting space, obtained by interpolation at its Greville
    /// points.
    pub fn refine_to(&self, target: &UnivariateSplineSpace) -> Result<Self> {
        if !self.space.dir.is_nested_in(target) {
            return Err(Error::NotNested(format!(
                "S(p={}, r={}, k={}) into S(p={}, r={}, k={})",
                self.space.dir.degree(),
                self.space.dir.regularity(),
                self.space.dir.elements(),
                target.degree(),
                target.regularity(),
                target.elements()
            )));
        }
        let interp = Interpolator::new(target);
        self.fit_from(&interp, |xi| self.eval(xi))
    }

    /// Interpolates a point map at the tensor Greville grid of `interp`'s space.
    pub fn fit_from(
        &self,
        interp: &Interpolator,
        map: impl Fn([f64; 2]) -> Result<Vector3<f64>>,
    ) -> Result<Self> {
        let g = interp.nodes();
        let n = g.len();
        let mut vals = [vec![0.0; n * n], vec![0.0; n * n], vec![0.0; n * n]];
        for a in 0..n {
            for b in 0..n {
                let x = map([g[a], g[b]])?;
                for c in 0..3 {
                    vals[c][a * n + b] = x[c];
                }
            }
        }
        let coeffs: Vec<Vec<f64>> = vals.iter().map(|v| interp.fit_tensor(v)).collect();
        let points = (0..n * n).map(|i| Vector3::new(coeffs[0][i], coeffs[1][i], coeffs[2][i])).collect();
        TensorSplinePatch::new(TensorSplineSpace { dir: interp.space().clone() }, points)
    }

    /// Control-point bounding-box diagonal.
    pub fn bbox_diagonal(&self) -> f64 {
        bbox_diagonal(self.points.iter())
    }
}

pub fn bbox_diagonal<'a>(points: impl Iterator<Item = &'a Vector3<f64>>) -> f64 {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (hi - lo).norm()
}

/// Scalar tensor-product spline function.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarSplineFunction {
    pub space: TensorSplineSpace,
    pub coeffs: Vec<f64>,
}

impl ScalarSplineFunction {
    pub fn eval(&self, xi: [f64; 2], max_deriv: usize) -> Result<ScalarJet> {
        self.space.eval_scalar(&self.coeffs, xi, max_deriv)
    }
}

/// The three univariate families entering the C1 construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MFamily {
    /// `M^{p,r}`, indices 0 and 1.
    Main,
    /// `M^{p-1,r}`, indices 0 and 1.
    Transversal,
    /// `M^{p,r+1}`, indices 0, 1 and 2.
    Trace,
}

/// The spaces `S^{p,r}`, `S^{p-1,r}` and `S^{p,r+1}` on a common mesh, with the boundary
/// combinations `M` satisfying `d^m/dξ^m M_ω (0) = δ_{ωm}` for `m` up to the index range.
#[derive(Clone, Debug)]
pub struct MFunctions {
    pub main: UnivariateSplineSpace,
    pub transversal: UnivariateSplineSpace,
    pub trace: UnivariateSplineSpace,
}

impl MFunctions {
    pub fn new(p: usize, r: i32, k: usize) -> Result<Self> {
        if p < 3 || r < 1 || r > p as i32 - 2 {
            return Err(Error::Parameter(format!("need p >= 3 and 1 <= r <= p - 2, got p={p}, r={r}")));
        }
        Ok(Self {
            main: UnivariateSplineSpace::new(p, r, k)?,
            transversal: UnivariateSplineSpace::new(p - 1, r, k)?,
            trace: UnivariateSplineSpace::new(p, r + 1, k)?,
        })
    }

    pub fn space(&self, family: MFamily) -> &UnivariateSplineSpace {
        match family {
            MFamily::Main => &self.main,
            MFamily::Transversal => &self.transversal,
            MFamily::Trace => &self.trace,
        }
    }

    /// Coefficients of `M_index` with respect to the first three basis functions of its space.
    pub fn combination(&self, family: MFamily, index: usize) -> Result<[f64; 3]> {
        let p = self.main.degree() as f64;
        let h = self.main.h();
        let r = self.main.regularity();
        let max_index = if family == MFamily::Trace { 2 } else { 1 };
        if index > max_index {
            return Err(Error::Range { index, range: format!("0..={max_index}") });
        }
        // The transversal space has degree p - 1, so its unit-slope scaling is h / (p - 1).
        // Single knots in the trace space (r = p - 2) change the second boundary B-spline.
        let simple_knots = r == self.main.degree() as i32 - 2 && self.main.elements() > 1;
        let (theta2, mu) = if simple_knots { (3.0, 2.0) } else { (2.0, 1.0) };
        Ok(match (family, index) {
            (MFamily::Main, 0) | (MFamily::Transversal, 0) => [1.0, 1.0, 0.0],
            (MFamily::Main, 1) => [0.0, h / p, 0.0],
            (MFamily::Transversal, 1) => [0.0, h / (p - 1.0), 0.0],
            (MFamily::Trace, 0) => [1.0, 1.0, 1.0],
            (MFamily::Trace, 1) => [0.0, h / p, theta2 * h / p],
            (MFamily::Trace, 2) => [0.0, 0.0, h * h * mu / (p * (p - 1.0))],
            _ => unreachable!(),
        })
    }

    /// Derivatives `0..=max_deriv` of `M_index` of the given family at `x`.
    pub fn eval(&self, family: MFamily, index: usize, x: f64, max_deriv: usize) -> Result<Vec<f64>> {
        let comb = self.combination(family, index)?;
        let b = self.space(family).eval_basis(x, max_deriv)?;
        Ok((0..=max_deriv).map(|d| (0..3).map(|j| comb[j] * b.of(d, j)).sum()).collect())
    }

    /// Coefficient vector of `M_index` in its own space.
    pub fn coefficients(&self, family: MFamily, index: usize) -> Result<Vec<f64>> {
        let comb = self.combination(family, index)?;
        let mut c = vec![0.0; self.space(family).dim()];
        c[..3].copy_from_slice(&comb);
        Ok(c)
    }
}

/// Dimensions `(n, n0, n1)` of `S^{p,r}`, `S^{p,r+1}` and `S^{p-1,r}` on `k` elements.
pub fn c1_dimensions(p: usize, r: usize, k: usize) -> (usize, usize, usize) {
    let n = p + (k - 1) * (p - r) + 1;
    let n0 = p + (k - 1) * (p - r - 1) + 1;
    (n, n0, n0 - 1)
}

/// Gauss-Legendre nodes and weights on [0, 1].
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=m {
                let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            let pm = if m == 1 { x } else { p1 };
            let pm1 = if m == 1 { 1.0 } else { p0 };
            dp = m as f64 * (x * pm - pm1) / (x * x - 1.0);
            let dx = pm / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[m - 1 - i] = 0.5 * (x + 1.0);
        weights[m - 1 - i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}
