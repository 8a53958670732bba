//! Nonlinear solvers for `R(u, λ) = F_int(u) - F_ext(λ) = 0`: Newton-Raphson at a fixed
//! load factor and cylindrical arc-length continuation through limit points.

use crate::error::{Error, Result};
use crate::shell::ShellModel;
use crate::sparse::{dot, norm, CscMatrix, Factor};

/// Discrete equilibrium problem with a load that is affine in `λ`.
pub trait Problem {
    fn num_dofs(&self) -> usize;
    /// `F_ext(λ)`.
    fn external_force(&self, lambda: f64) -> Vec<f64>;
    /// `dF_ext/dλ`, constant.
    fn reference_force(&self) -> Vec<f64>;
    fn residual(&self, u: &[f64], lambda: f64) -> Result<Vec<f64>>;
    /// Tangent `∂R/∂u` and residual at `(u, λ)`.
    fn tangent(&self, u: &[f64], lambda: f64) -> Result<(CscMatrix, Vec<f64>)>;
}

impl Problem for ShellModel {
    fn num_dofs(&self) -> usize {
        ShellModel::num_dofs(self)
    }
    fn external_force(&self, lambda: f64) -> Vec<f64> {
        ShellModel::external_force(self, lambda)
    }
    fn reference_force(&self) -> Vec<f64> {
        ShellModel::reference_force(self).to_vec()
    }
    fn residual(&self, u: &[f64], lambda: f64) -> Result<Vec<f64>> {
        ShellModel::residual(self, u, lambda)
    }
    fn tangent(&self, u: &[f64], lambda: f64) -> Result<(CscMatrix, Vec<f64>)> {
        ShellModel::tangent(self, u, lambda)
    }
}

#[derive(Clone, Debug)]
pub struct NewtonSettings {
    /// Convergence when `‖R‖ ≤ tol · ‖F_ext(λ)‖`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 25 }
    }
}

#[derive(Clone, Debug)]
pub struct NewtonResult {
    pub u: Vec<f64>,
    /// `‖R‖` before each update and at the converged state.
    pub history: Vec<f64>,
    pub iterations: usize,
}

/// Force scale for relative residual tests, never zero.
fn force_scale(problem: &dyn Problem, lambda: f64) -> f64 {
    let f = norm(&problem.external_force(lambda));
    if f > 0.0 {
        return f;
    }
    let r = norm(&problem.reference_force());
    if r > 0.0 {
        r
    } else {
        1.0
    }
}

/// Full Newton-Raphson at fixed `λ` starting from `u0`.
pub fn newton(problem: &dyn Problem, u0: &[f64], lambda: f64, settings: &NewtonSettings) -> Result<NewtonResult> {
    if u0.len() != problem.num_dofs() {
        return Err(Error::Range { index: u0.len(), range: format!("state vector of length {}", problem.num_dofs()) });
    }
    let scale = force_scale(problem, lambda);
    let mut u = u0.to_vec();
    let mut history = Vec::new();
    for it in 0..=settings.max_iter {
        let (k, r) = problem.tangent(&u, lambda)?;
        let rn = norm(&r);
        if !rn.is_finite() {
            return Err(Error::NonFinite(format!("residual in Newton iteration {it}")));
        }
        history.push(rn);
        if rn <= settings.tol * scale {
            return Ok(NewtonResult { u, history, iterations: it });
        }
        if it == settings.max_iter {
            break;
        }
        let neg: Vec<f64> = r.iter().map(|v| -v).collect();
        let du = Factor::new(&k)?.solve(&neg)?;
        for (ui, d) in u.iter_mut().zip(du) {
            *ui += d;
        }
    }
    Err(Error::NonConvergence { iterations: settings.max_iter, history })
}

/// Observed convergence order `log(r_{k+1}/r_k) / log(r_k/r_{k-1})` over consecutive
/// residual norms above `floor`; the last admissible triple is used.
pub fn convergence_order(history: &[f64], floor: f64) -> Option<f64> {
    let h: Vec<f64> = history.iter().copied().take_while(|&r| r > floor).collect();
    if h.len() < 3 {
        return None;
    }
    let n = h.len();
    let (a, b, c) = (h[n - 3], h[n - 2], h[n - 1]);
    let den = (b / a).ln();
    if den >= 0.0 {
        return None;
    }
    Some((c / b).ln() / den)
}

#[derive(Clone, Debug)]
pub struct ArcLengthSettings {
    /// Arc-length radius; defaults to `0.1 ‖K0⁻¹ F_ref‖`.
    pub delta_l: Option<f64>,
    /// Load-term weight of the constraint `‖Δu‖² + ψ² Δλ² ‖F_ref‖² = ΔL²`.
    pub psi: f64,
    pub max_steps: usize,
    pub newton: NewtonSettings,
    /// Smallest admissible radius relative to the initial one before giving up.
    pub min_delta_l_ratio: f64,
    /// Refine and report the first maximum of `λ`.
    pub detect_limit: bool,
    /// Number of radius reductions by 4 used to refine the limit point.
    pub limit_refinements: usize,
    pub stop_after_limit: bool,
    /// Stop once `λ` reaches this value.
    pub lambda_max: Option<f64>,
}

impl Default for ArcLengthSettings {
    fn default() -> Self {
        Self {
            delta_l: None,
            psi: 0.0,
            max_steps: 200,
            newton: NewtonSettings::default(),
            min_delta_l_ratio: 1e-4,
            detect_limit: true,
            limit_refinements: 3,
            stop_after_limit: false,
            lambda_max: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PathPoint {
    pub lambda: f64,
    pub u: Vec<f64>,
    pub monitors: Vec<f64>,
    /// Current stiffness parameter `(F·K0⁻¹F) / (F·K⁻¹F)`; changes sign at a limit point.
    pub stiffness: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug)]
pub struct ContinuationPath {
    /// Equilibrium points in path order, starting at the unloaded state.
    pub points: Vec<PathPoint>,
    /// Refined first maximum of `λ` along the path.
    pub limit_load: Option<f64>,
    /// Reason for early termination, if any.
    pub terminated: Option<String>,
}

struct Converged {
    u: Vec<f64>,
    lambda: f64,
    iterations: usize,
    /// Increment of this step.
    du: Vec<f64>,
    dlambda: f64,
}

/// Path state from which the next step starts.
struct Anchor {
    u: Vec<f64>,
    lambda: f64,
    /// Tangent load response `K⁻¹ F_ref` at this state.
    du_f: Vec<f64>,
    /// Previous increment, fixes the predictor direction.
    prev_du: Vec<f64>,
    prev_dlambda: f64,
}

struct ArcLength<'a> {
    problem: &'a dyn Problem,
    f_ref: Vec<f64>,
    settings: &'a ArcLengthSettings,
}

impl ArcLength<'_> {
    /// One constrained step of radius `dl`; `None` when the corrector fails.
    fn step(&self, a: &Anchor, dl: f64) -> Result<Option<Converged>> {
        let psi2f = self.settings.psi.powi(2) * dot(&self.f_ref, &self.f_ref);
        let tf = dot(&a.du_f, &a.du_f) + psi2f;
        let mut dlambda = dl / tf.sqrt();
        let orient = dot(&a.prev_du, &a.du_f) + a.prev_dlambda * psi2f;
        if orient < 0.0 {
            dlambda = -dlambda;
        }
        let mut du: Vec<f64> = a.du_f.iter().map(|v| dlambda * v).collect();
        for it in 0..=self.settings.newton.max_iter {
            let u: Vec<f64> = a.u.iter().zip(&du).map(|(x, d)| x + d).collect();
            let lambda = a.lambda + dlambda;
            let (k, r) = match self.problem.tangent(&u, lambda) {
                Ok(kr) => kr,
                Err(Error::NonFinite(_)) => return Ok(None),
                Err(e) => return Err(e),
            };
            let rn = norm(&r);
            if !rn.is_finite() {
                return Ok(None);
            }
            if rn <= self.settings.newton.tol * force_scale(self.problem, lambda) {
                return Ok(Some(Converged { u, lambda, iterations: it, du, dlambda }));
            }
            if it == self.settings.newton.max_iter {
                return Ok(None);
            }
            let fac = match Factor::new(&k) {
                Ok(f) => f,
                Err(_) => return Ok(None),
            };
            let neg: Vec<f64> = r.iter().map(|v| -v).collect();
            let (Ok(dr), Ok(df)) = (fac.solve(&neg), fac.solve(&self.f_ref)) else {
                return Ok(None);
            };
            // ‖Δu + δu_R + δλ δu_F‖² + ψ²(Δλ + δλ)²‖F‖² = ΔL², quadratic in δλ.
            let w: Vec<f64> = du.iter().zip(&dr).map(|(x, y)| x + y).collect();
            let qa = dot(&df, &df) + psi2f;
            let qb = 2.0 * (dot(&df, &w) + dlambda * psi2f);
            let qc = dot(&w, &w) + dlambda * dlambda * psi2f - dl * dl;
            let disc = qb * qb - 4.0 * qa * qc;
            if disc < 0.0 {
                return Ok(None);
            }
            let sq = disc.sqrt();
            let q = -0.5 * (qb + qb.signum() * sq);
            let roots = if q == 0.0 { [0.0, 0.0] } else { [q / qa, qc / q] };
            // Root keeping the increment closest to its current direction.
            let cosine = |dl_new: f64| {
                let cand: Vec<f64> = w.iter().zip(&df).map(|(x, y)| x + dl_new * y).collect();
                dot(&cand, &du) + (dlambda + dl_new) * dlambda * psi2f
            };
            let root = if cosine(roots[0]) >= cosine(roots[1]) { roots[0] } else { roots[1] };
            if it > 0 && cosine(root) <= 0.0 {
                return Ok(None);
            }
            for ((x, y), z) in du.iter_mut().zip(&dr).zip(&df) {
                *x += y + root * z;
            }
            dlambda += root;
        }
        Ok(None)
    }

    /// Anchor at a converged state: factorises the tangent once for `K⁻¹ F_ref`.
    fn anchor(&self, u: Vec<f64>, lambda: f64, prev_du: Vec<f64>, prev_dlambda: f64) -> Result<Anchor> {
        let (k, _) = self.problem.tangent(&u, lambda)?;
        let du_f = Factor::new(&k)?.solve(&self.f_ref)?;
        Ok(Anchor { u, lambda, du_f, prev_du, prev_dlambda })
    }
}

/// Cylindrical arc-length continuation from the unloaded state `u = 0, λ = 0`.
/// `monitor` maps a state to the values recorded at each path point.
pub fn arc_length(problem: &dyn Problem, settings: &ArcLengthSettings, monitor: &dyn Fn(&[f64]) -> Result<Vec<f64>>) -> Result<ContinuationPath> {
    let n = problem.num_dofs();
    let f_ref = problem.reference_force();
    if norm(&f_ref) == 0.0 {
        return Err(Error::ArcLength("reference load is zero".into()));
    }
    let solver = ArcLength { problem, f_ref, settings };
    // Equilibrium at λ = 0 under the load part that does not scale with λ.
    let u0 = newton(problem, &vec![0.0; n], 0.0, &settings.newton)?.u;
    let prev_du = vec![0.0; n];
    let mut anchor = solver.anchor(u0, 0.0, prev_du, 1.0)?;
    let fk0 = dot(&solver.f_ref, &anchor.du_f);
    let nominal = settings.delta_l.unwrap_or(0.1 * norm(&anchor.du_f));
    if !(nominal > 0.0 && nominal.is_finite()) {
        return Err(Error::ArcLength(format!("invalid arc-length radius {nominal:e}")));
    }
    let min_dl = nominal * settings.min_delta_l_ratio;
    let mut points = vec![PathPoint { lambda: 0.0, u: anchor.u.clone(), monitors: monitor(&anchor.u)?, stiffness: 1.0, iterations: 0 }];
    let mut dl = nominal;
    let mut limit_load = None;
    let mut terminated = None;
    let mut steps = 0;
    while steps < settings.max_steps {
        // Leaving the unloaded state the load factor must grow.
        let step = solver.step(&anchor, dl)?.filter(|c| steps > 0 || c.dlambda > 0.0);
        let Some(c) = step else {
            dl *= 0.5;
            if dl < min_dl {
                terminated = Some(format!("arc-length radius fell below {min_dl:e} at λ = {}", anchor.lambda));
                break;
            }
            continue;
        };
        steps += 1;
        let next = solver.anchor(c.u, c.lambda, c.du, c.dlambda)?;
        let stiffness = fk0 / dot(&solver.f_ref, &next.du_f);
        let passed_max = steps > 1 && c.dlambda < 0.0 && anchor.prev_dlambda > 0.0;
        points.push(PathPoint { lambda: c.lambda, monitors: monitor(&next.u)?, u: next.u.clone(), stiffness, iterations: c.iterations });
        if settings.detect_limit && limit_load.is_none() && passed_max {
            limit_load = Some(refine_limit(&solver, &anchor, dl, settings.limit_refinements)?.max(anchor.lambda));
            if settings.stop_after_limit {
                break;
            }
        }
        if settings.lambda_max.is_some_and(|lm| c.lambda >= lm) {
            break;
        }
        if c.iterations <= 4 && dl < nominal {
            dl = (2.0 * dl).min(nominal);
        }
        anchor = next;
    }
    if steps == settings.max_steps && terminated.is_none() && settings.lambda_max.is_some_and(|lm| points.last().is_some_and(|p| p.lambda < lm)) {
        terminated = Some(format!("step limit {} reached", settings.max_steps));
    }
    Ok(ContinuationPath { points, limit_load, terminated })
}

/// Re-steps from `start`, the last point before `λ` decreased, with radii reduced by 4 per
/// level, and returns the largest `λ` seen, improved by a parabola through the three points
/// around the discrete maximum.
fn refine_limit(solver: &ArcLength, start: &Anchor, dl: f64, levels: usize) -> Result<f64> {
    let mut best = start.lambda;
    let mut from = Anchor { u: start.u.clone(), lambda: start.lambda, du_f: start.du_f.clone(), prev_du: start.prev_du.clone(), prev_dlambda: start.prev_dlambda };
    let mut h = dl;
    let mut parabola = None;
    for _ in 0..levels {
        h *= 0.25;
        // Walk forward until λ decreases; keep the last two states before that.
        let mut trail: Vec<(f64, Anchor)> = Vec::new();
        let mut cur = from;
        let mut decreased = false;
        for _ in 0..12 {
            let Some(c) = solver.step(&cur, h)? else { break };
            let dlambda = c.dlambda;
            let next = solver.anchor(c.u, c.lambda, c.du, c.dlambda)?;
            best = best.max(next.lambda);
            let lam_prev = cur.lambda;
            trail.push((lam_prev, cur));
            cur = next;
            if dlambda < 0.0 {
                decreased = true;
                if trail.len() >= 2 {
                    let l0 = trail[trail.len() - 2].0;
                    let l1 = trail[trail.len() - 1].0;
                    parabola = Some(parabola_max(l0, l1, cur.lambda));
                }
                break;
            }
        }
        if !decreased || trail.len() < 2 {
            break;
        }
        // Restart the next level from the point preceding the discrete maximum.
        let n = trail.len();
        from = trail.swap_remove(n - 2).1;
    }
    Ok(match parabola {
        Some(p) if p.is_finite() && p >= best && p <= best + (best.abs() + 1.0) * 1e-2 => p,
        _ => best,
    })
}

/// Maximum of the parabola through equally spaced samples `(−1, a), (0, b), (1, c)`.
fn parabola_max(a: f64, b: f64, c: f64) -> f64 {
    let curv = a - 2.0 * b + c;
    if curv >= 0.0 {
        return b.max(a).max(c);
    }
    let t = 0.5 * (a - c) / curv;
    b - 0.25 * (a - c) * t
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Uncoupled springs `f_i(u_i) = c_i (u³/3 - u² + ¾u) + s_i u` under `λ F`.
    struct Springs {
        c: Vec<f64>,
        s: Vec<f64>,
        f: Vec<f64>,
    }

    impl Problem for Springs {
        fn num_dofs(&self) -> usize {
            self.c.len()
        }
        fn external_force(&self, lambda: f64) -> Vec<f64> {
            self.f.iter().map(|f| lambda * f).collect()
        }
        fn reference_force(&self) -> Vec<f64> {
            self.f.clone()
        }
        fn residual(&self, u: &[f64], lambda: f64) -> Result<Vec<f64>> {
            Ok((0..u.len()).map(|i| self.c[i] * (u[i].powi(3) / 3.0 - u[i] * u[i] + 0.75 * u[i]) + self.s[i] * u[i] - lambda * self.f[i]).collect())
        }
        fn tangent(&self, u: &[f64], lambda: f64) -> Result<(CscMatrix, Vec<f64>)> {
            let d = nalgebra::DMatrix::from_fn(u.len(), u.len(), |i, j| {
                if i == j {
                    self.c[i] * (u[i] * u[i] - 2.0 * u[i] + 0.75) + self.s[i]
                } else {
                    0.0
                }
            });
            Ok((CscMatrix::from_dense(&d), self.residual(u, lambda)?))
        }
    }

    #[test]
    fn linear_problem_converges_in_one_iteration() {
        let p = Springs { c: vec![0.0, 0.0], s: vec![2.0, 4.0], f: vec![1.0, 1.0] };
        let r = newton(&p, &[0.0, 0.0], 1.0, &NewtonSettings::default()).unwrap();
        assert_eq!(r.iterations, 1);
        assert!((r.u[0] - 0.5).abs() < 1e-14 && (r.u[1] - 0.25).abs() < 1e-14);
    }

    #[test]
    fn zero_load_returns_immediately() {
        let p = Springs { c: vec![1.0], s: vec![0.0], f: vec![1.0] };
        let r = newton(&p, &[0.0], 0.0, &NewtonSettings::default()).unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.u, vec![0.0]);
    }

    #[test]
    fn newton_is_quadratic() {
        let p = Springs { c: vec![1.0], s: vec![0.0], f: vec![1.0] };
        let r = newton(&p, &[0.0], 0.1, &NewtonSettings { tol: 1e-14, max_iter: 25 }).unwrap();
        let order = convergence_order(&r.history, 1e-13).unwrap();
        assert!(order > 1.8, "order {order}, history {:?}", r.history);
    }

    #[test]
    fn newton_reports_nonconvergence() {
        let p = Springs { c: vec![1.0], s: vec![0.0], f: vec![1.0] };
        // Beyond the limit load 1/6 the branch through the origin ends.
        let e = newton(&p, &[0.0], 0.3, &NewtonSettings { tol: 1e-12, max_iter: 3 }).unwrap_err();
        assert!(matches!(e, Error::NonConvergence { iterations: 3, .. }));
    }

    #[test]
    fn arc_length_finds_snap_through_limit() {
        let p = Springs { c: vec![1.0, 0.0], s: vec![0.0, 1.0], f: vec![1.0, 0.0] };
        let settings = ArcLengthSettings { delta_l: Some(0.07), stop_after_limit: true, ..Default::default() };
        let path = arc_length(&p, &settings, &|u| Ok(vec![u[0]])).unwrap();
        let limit = path.limit_load.expect("limit point");
        assert!((limit - 1.0 / 6.0).abs() < 1e-4, "limit {limit}");
        for pt in &path.points {
            let r = p.residual(&pt.u, pt.lambda).unwrap();
            assert!(norm(&r) < 1e-8 * pt.lambda.abs().max(1e-300) + 1e-14);
        }
        assert!(path.points.last().unwrap().stiffness < 0.0);
    }

    #[test]
    fn arc_length_traces_past_the_limit() {
        let p = Springs { c: vec![1.0], s: vec![0.0], f: vec![1.0] };
        let settings = ArcLengthSettings { delta_l: Some(0.1), max_steps: 60, lambda_max: Some(0.5), ..Default::default() };
        let path = arc_length(&p, &settings, &|u| Ok(vec![u[0]])).unwrap();
        assert!(path.terminated.is_none(), "{:?}", path.terminated);
        let last = path.points.last().unwrap();
        assert!(last.lambda >= 0.5 && last.u[0] > 1.5);
        // λ decreases between the two limit points u = ½ and u = 3/2.
        assert!(path.points.iter().any(|p| p.lambda < 0.0 + 0.05 && p.u[0] > 1.0 && p.u[0] < 1.5));
    }

    #[test]
    fn parabola_vertex() {
        // y = 1 - t² sampled at -1, 0, 1 → maximum 1; shifted samples.
        assert!((parabola_max(0.0, 1.0, 0.0) - 1.0).abs() < 1e-15);
        let f = |t: f64| 2.0 - (t - 0.3) * (t - 0.3);
        assert!((parabola_max(f(-1.0), f(0.0), f(1.0)) - 2.0).abs() < 1e-14);
    }
}
