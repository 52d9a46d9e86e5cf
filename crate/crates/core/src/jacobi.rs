//! Jacobi fields, conjugate points, parallel transport and the constant
//! eigenvalue predictor `J(t) = sin(√λ t) V(t)`.

use crate::error::{Error, Result};
use crate::finsler::Curve;
use crate::flow::{check_start, geodesic_rhs, GeodesicRecord};
use crate::linalg::{self, Mat};
use crate::ode::{self, OdeOptions, Solution, Stop, Tolerance};
use crate::spray::{
    branch_flow_derivative, connection_and_phi, flow_of_phi, require_separated, sode_apply_all, spectrum_of,
    ConnectionField, PhasePoint, SprayModel,
};

/// Matrix Jacobi fields along a geodesic: `J' = K − ΓJ`, `K' = −ΓK − ΦJ`,
/// so that `K = ∇J` and `∇∇J + ΦJ = 0`. The geodesic is integrated jointly.
#[derive(Clone, Debug)]
pub struct JacobiMatrixSolution {
    model: SprayModel,
    n: usize,
    cols: usize,
    sol: Solution,
}

impl JacobiMatrixSolution {
    pub fn t_end(&self) -> f64 {
        self.sol.t_end()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.sol.t
    }

    pub fn stop(&self) -> &Stop {
        &self.sol.stop
    }

    fn raw(&self, t: f64) -> Result<Vec<f64>> {
        self.sol
            .eval(t)
            .ok_or_else(|| Error::Domain(format!("t = {t} lies outside the Jacobi solution [0, {}]", self.t_end())))
    }

    pub fn state(&self, t: f64) -> Result<PhasePoint> {
        let y = self.raw(t)?;
        Ok(PhasePoint { x: y[..self.n].to_vec(), v: y[self.n..2 * self.n].to_vec() })
    }

    /// `J(t)` as an `n × m` matrix.
    pub fn j(&self, t: f64) -> Result<Mat<f64>> {
        let y = self.raw(t)?;
        let off = 2 * self.n;
        Ok(Mat::from_row_major(self.n, self.cols, y[off..off + self.n * self.cols].to_vec()))
    }

    /// `K(t) = ∇J(t)`.
    pub fn k(&self, t: f64) -> Result<Mat<f64>> {
        let y = self.raw(t)?;
        let off = 2 * self.n + self.n * self.cols;
        Ok(Mat::from_row_major(self.n, self.cols, y[off..off + self.n * self.cols].to_vec()))
    }

    pub fn det(&self, t: f64) -> Result<f64> {
        let j = self.j(t)?;
        if j.rows() != j.cols() {
            return Err(Error::InvalidArgument("determinant of a non-square Jacobi matrix".into()));
        }
        Ok(j.to_nalgebra().determinant())
    }

    /// Singular values of `J(t)`, descending.
    pub fn singular_values(&self, t: f64) -> Result<Vec<f64>> {
        Ok(linalg::singular_values(&self.j(t)?))
    }

    /// `max ‖∇∇J + ΦJ‖_F` at step midpoints, using the dense-output
    /// derivatives of `J` and `K`.
    pub fn midpoint_residual(&self) -> Result<f64> {
        let (n, m) = (self.n, self.cols);
        let mut worst: f64 = 0.0;
        for w in self.sol.t.windows(2) {
            let t = 0.5 * (w[0] + w[1]);
            let y = self.raw(t)?;
            let d = self.sol.derivative(t).expect("midpoint inside");
            let (gamma, phi) = connection_and_phi(&self.model, &y[..n], &y[n..2 * n])?;
            let off = 2 * n;
            let j = Mat::from_row_major(n, m, y[off..off + n * m].to_vec());
            let k = Mat::from_row_major(n, m, y[off + n * m..].to_vec());
            let dj = Mat::from_row_major(n, m, d[off..off + n * m].to_vec());
            let dk = Mat::from_row_major(n, m, d[off + n * m..].to_vec());
            let r1 = &(&dj - &k) + &(&gamma * &j);
            let r2 = &(&dk + &(&gamma * &k)) + &(&phi * &j);
            worst = worst.max(r1.norm()).max(r2.norm());
        }
        Ok(worst)
    }
}

/// Integrates matrix Jacobi fields with initial data `J(0) = j0`,
/// `∇J(0) = k0` (both `n × m`) along the geodesic starting at `c`'s initial
/// point, over `c`'s span.
pub fn integrate_jacobi(
    s: &SprayModel,
    c: &GeodesicRecord,
    j0: &Mat<f64>,
    k0: &Mat<f64>,
    tol: Tolerance,
) -> Result<JacobiMatrixSolution> {
    integrate_jacobi_to(s, c.initial(), j0, k0, c.t_end(), tol)
}

/// As [`integrate_jacobi`] but from an initial point and span.
pub fn integrate_jacobi_to(
    s: &SprayModel,
    p0: &PhasePoint,
    j0: &Mat<f64>,
    k0: &Mat<f64>,
    t_end: f64,
    tol: Tolerance,
) -> Result<JacobiMatrixSolution> {
    check_start(s, p0)?;
    let n = s.dim();
    if j0.rows() != n || k0.rows() != n || j0.cols() != k0.cols() {
        return Err(Error::InvalidArgument("Jacobi initial data must be n × m matrices of equal shape".into()));
    }
    let m = j0.cols();
    let y0 = [p0.x.as_slice(), &p0.v, j0.as_slice(), k0.as_slice()].concat();
    let sol = ode::integrate(
        |_, y| {
            let (dx, dv) = geodesic_rhs(s, &y[..2 * n])?;
            let (gamma, phi) = connection_and_phi(s, &y[..n], &y[n..2 * n])?;
            let off = 2 * n;
            let j = Mat::from_row_major(n, m, y[off..off + n * m].to_vec());
            let k = Mat::from_row_major(n, m, y[off + n * m..].to_vec());
            let dj = &k - &(&gamma * &j);
            let dk = &(&gamma * &k).scale(-1.0) - &(&phi * &j);
            Ok([dx, dv, dj.into_vec(), dk.into_vec()].concat())
        },
        0.0,
        &y0,
        t_end,
        &OdeOptions::from(tol),
    )?;
    Ok(JacobiMatrixSolution { model: s.clone(), n, cols: m, sol })
}

/// How a conjugate point was located.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DetectionMethod {
    /// Sign change of `det J`, refined by bisection.
    Determinant,
    /// Local minimum of `σ_min/σ_max` below threshold without a sign change
    /// (even nullity).
    SingularValue,
    /// Predicted by the constant eigenvalue construction.
    Proposition1,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConjugatePoint {
    pub t: f64,
    /// Base point `c(t)`.
    pub x: Vec<f64>,
    pub nullity: usize,
    /// Unit `w` with `J(t) w ≈ 0`: the initial covariant derivative of a
    /// Jacobi field vanishing at `0` and `t`.
    pub null_direction: Vec<f64>,
    pub sigma_ratio: f64,
    pub method: DetectionMethod,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConjugateReport {
    pub t_max: f64,
    /// End of the searched span (shorter than `t_max` when the geodesic was
    /// truncated).
    pub t_searched: f64,
    pub points: Vec<ConjugatePoint>,
    pub warnings: Vec<String>,
}

impl ConjugateReport {
    pub fn times(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.t).collect()
    }

    pub fn first(&self) -> Option<&ConjugatePoint> {
        self.points.first()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConjugateOptions {
    /// Mesh points per unit time for the sign scan.
    pub density: f64,
    pub bisection_tol: f64,
    /// Relative singular-value threshold for accepting a point and counting
    /// its nullity.
    pub null_threshold: f64,
    pub tol: Tolerance,
}

impl Default for ConjugateOptions {
    fn default() -> Self {
        ConjugateOptions { density: 400.0, bisection_tol: 1e-9, null_threshold: 1e-5, tol: Tolerance::default() }
    }
}

/// Conjugate points of `c(0)` along the geodesic with initial point
/// `p0`, on `(0, t_max]`, from the fundamental solution `J(0) = 0`,
/// `∇J(0) = I`.
pub fn find_conjugate_points(
    s: &SprayModel,
    p0: &PhasePoint,
    t_max: f64,
    opts: &ConjugateOptions,
) -> Result<ConjugateReport> {
    let n = s.dim();
    let sol = integrate_jacobi_to(s, p0, &Mat::zeros(n, n), &Mat::identity(n), t_max, opts.tol)?;
    conjugate_points_of(&sol, t_max, opts)
}

/// Conjugate point search on an existing fundamental solution.
pub fn conjugate_points_of(sol: &JacobiMatrixSolution, t_max: f64, opts: &ConjugateOptions) -> Result<ConjugateReport> {
    let end = sol.t_end().min(t_max);
    let mut warnings = Vec::new();
    if let Stop::DomainLimit { t, reason } = sol.stop() {
        if *t < t_max {
            warnings.push(format!("geodesic truncated at t = {t}: {reason}"));
        }
    }
    let step = 1.0 / opts.density;
    let mut mesh: Vec<f64> = (1..).map(|k| k as f64 * step).take_while(|&t| t < end).collect();
    mesh.extend(sol.nodes().iter().copied().filter(|&t| t > 0.0 && t <= end));
    mesh.push(end);
    mesh.sort_by(f64::total_cmp);
    mesh.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * b.abs().max(1.0));

    let dets: Vec<f64> = mesh.iter().map(|&t| sol.det(t)).collect::<Result<_>>()?;
    let ratios: Vec<f64> = mesh.iter().map(|&t| sigma_ratio(sol, t)).collect::<Result<_>>()?;

    let mut points = Vec::new();
    for k in 1..mesh.len() {
        if dets[k - 1].signum() * dets[k].signum() < 0.0 {
            let t = bisect(|t| sol.det(t), mesh[k - 1], mesh[k], dets[k - 1], opts.bisection_tol)?;
            points.push(make_point(sol, t, DetectionMethod::Determinant, opts)?);
        } else if dets[k] == 0.0 {
            points.push(make_point(sol, mesh[k], DetectionMethod::Determinant, opts)?);
        }
    }

    for k in 1..mesh.len().saturating_sub(1) {
        let is_min = ratios[k] < ratios[k - 1] && ratios[k] <= ratios[k + 1] && ratios[k] < 1e-2;
        if !is_min {
            continue;
        }
        let (lo, hi) = (mesh[k - 1], mesh[k + 1]);
        if points.iter().any(|p: &ConjugatePoint| p.t >= lo - step && p.t <= hi + step) {
            continue;
        }
        let t = golden_min(|t| sigma_ratio(sol, t), lo, hi, opts.bisection_tol * 1e-1)?;
        if sigma_ratio(sol, t)? >= opts.null_threshold {
            continue;
        }
        let fine = refine_cell(sol, lo, hi, opts)?;
        if fine.is_empty() {
            points.push(make_point(sol, t, DetectionMethod::SingularValue, opts)?);
        } else {
            warnings.push(format!(
                "{} sign changes of det J share the mesh cell [{lo}, {hi}]; resolved at 4x density",
                fine.len()
            ));
            points.extend(fine);
        }
    }
    points.sort_by(|a, b| a.t.total_cmp(&b.t));
    Ok(ConjugateReport { t_max, t_searched: end, points, warnings })
}

fn sigma_ratio(sol: &JacobiMatrixSolution, t: f64) -> Result<f64> {
    let sv = sol.singular_values(t)?;
    let max = sv[0];
    Ok(if max > 0.0 { sv[sv.len() - 1] / max } else { 0.0 })
}

fn refine_cell(sol: &JacobiMatrixSolution, lo: f64, hi: f64, opts: &ConjugateOptions) -> Result<Vec<ConjugatePoint>> {
    let m = 8;
    let grid: Vec<f64> = (0..=m).map(|k| lo + (hi - lo) * k as f64 / m as f64).collect();
    let dets: Vec<f64> = grid.iter().map(|&t| sol.det(t)).collect::<Result<_>>()?;
    let mut out = Vec::new();
    for k in 1..grid.len() {
        if dets[k - 1].signum() * dets[k].signum() < 0.0 {
            let t = bisect(|t| sol.det(t), grid[k - 1], grid[k], dets[k - 1], opts.bisection_tol)?;
            out.push(make_point(sol, t, DetectionMethod::Determinant, opts)?);
        }
    }
    Ok(out)
}

fn make_point(sol: &JacobiMatrixSolution, t: f64, method: DetectionMethod, opts: &ConjugateOptions) -> Result<ConjugatePoint> {
    let j = sol.j(t)?;
    let svd = j.to_nalgebra().svd(false, true);
    let values = svd.singular_values.as_slice();
    let vt = svd.v_t.expect("requested right singular vectors");
    let (mut imin, mut smax) = (0, 0.0f64);
    for (i, &sv) in values.iter().enumerate() {
        smax = smax.max(sv);
        if sv < values[imin] {
            imin = i;
        }
    }
    let nullity = values.iter().filter(|&&sv| sv <= opts.null_threshold * smax).count().max(1);
    let null_direction: Vec<f64> = vt.row(imin).iter().copied().collect();
    Ok(ConjugatePoint {
        t,
        x: sol.state(t)?.x,
        nullity,
        null_direction,
        sigma_ratio: if smax > 0.0 { values[imin] / smax } else { 0.0 },
        method,
    })
}

pub(crate) fn bisect(mut g: impl FnMut(f64) -> Result<f64>, mut lo: f64, mut hi: f64, g_lo: f64, tol: f64) -> Result<f64> {
    let sign_lo = g_lo.signum();
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let gm = g(mid)?;
        if gm == 0.0 {
            return Ok(mid);
        }
        if gm.signum() == sign_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn golden_min(mut g: impl FnMut(f64) -> Result<f64>, mut a: f64, mut b: f64, tol: f64) -> Result<f64> {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut gc, mut gd) = (g(c)?, g(d)?);
    while b - a > tol {
        if gc < gd {
            b = d;
            d = c;
            gd = gc;
            c = b - r * (b - a);
            gc = g(c)?;
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + r * (b - a);
            gd = g(d)?;
        }
    }
    Ok(0.5 * (a + b))
}

/// A vector field `V(t)` along a geodesic with `∇V = 0`.
#[derive(Clone, Debug)]
pub struct Transport {
    model: SprayModel,
    n: usize,
    v0: Vec<f64>,
    sol: Solution,
}

impl Transport {
    pub fn t_end(&self) -> f64 {
        self.sol.t_end()
    }

    pub fn stop(&self) -> &Stop {
        &self.sol.stop
    }

    pub fn initial(&self) -> &[f64] {
        &self.v0
    }

    fn raw(&self, t: f64) -> Result<Vec<f64>> {
        self.sol
            .eval(t)
            .ok_or_else(|| Error::Domain(format!("t = {t} lies outside the transport [0, {}]", self.t_end())))
    }

    pub fn state(&self, t: f64) -> Result<PhasePoint> {
        let y = self.raw(t)?;
        Ok(PhasePoint { x: y[..self.n].to_vec(), v: y[self.n..2 * self.n].to_vec() })
    }

    pub fn vector(&self, t: f64) -> Result<Vec<f64>> {
        Ok(self.raw(t)?[2 * self.n..].to_vec())
    }

    /// `‖ΦV − λV‖/‖V‖` at `t`, with `λ` the Rayleigh-type value
    /// `⟨ΦV, V⟩/⟨V, V⟩`.
    pub fn eigen_residual(&self, t: f64) -> Result<(f64, f64)> {
        let p = self.state(t)?;
        let v = self.vector(t)?;
        let (_, phi) = connection_and_phi(&self.model, &p.x, &p.v)?;
        let pv = phi.mul_vec(&v);
        let vv = linalg::dot(&v, &v);
        let lambda = linalg::dot(&pv, &v) / vv;
        let r: Vec<f64> = pv.iter().zip(&v).map(|(a, b)| a - lambda * b).collect();
        Ok((linalg::norm(&r) / vv.sqrt(), lambda))
    }
}

/// Solves `V' = −Γ(ċ)V` jointly with the geodesic from `p0` on `[0, t_end]`.
pub fn parallel_transport(s: &SprayModel, p0: &PhasePoint, v0: &[f64], t_end: f64, tol: Tolerance) -> Result<Transport> {
    check_start(s, p0)?;
    let n = s.dim();
    if v0.len() != n {
        return Err(Error::InvalidArgument(format!("vector has {} components, expected {n}", v0.len())));
    }
    let y0 = [p0.x.as_slice(), &p0.v, v0].concat();
    let sol = ode::integrate(
        |_, y| {
            let (dx, dv) = geodesic_rhs(s, &y[..2 * n])?;
            let gamma = crate::spray::connection_at(s, &y[..n], &y[n..2 * n])?;
            let dw: Vec<f64> = gamma.mul_vec(&y[2 * n..]).into_iter().map(|c| -c).collect();
            Ok([dx, dv, dw].concat())
        },
        0.0,
        &y0,
        t_end,
        &OdeOptions::from(tol),
    )?;
    Ok(Transport { model: s.clone(), n, v0: v0.to_vec(), sol })
}

/// Whether the constant eigenvalue construction applies.
#[derive(Clone, Debug, PartialEq)]
pub enum Applicability {
    Applicable,
    /// Conditions hold on `[0, t_fail)` only.
    Partial { t_fail: f64, reason: String },
    NotApplicable { reasons: Vec<String> },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prop1Options {
    /// Bound on `|S(λ)|` along the geodesic.
    pub flow_tol: f64,
    /// Bound on `‖ΦV − λV‖/‖V‖` for the transported eigenvector.
    pub residual_tol: f64,
    /// `‖V(t)‖` must stay above this fraction of `‖V(0)‖`.
    pub vanishing: f64,
    pub density: f64,
    pub tol: Tolerance,
}

impl Default for Prop1Options {
    fn default() -> Self {
        Prop1Options { flow_tol: 1e-7, residual_tol: 1e-6, vanishing: 1e-6, density: 100.0, tol: Tolerance::default() }
    }
}

#[derive(Clone, Debug)]
pub struct Prop1Report {
    pub status: Applicability,
    /// The branch value at `t = 0` (largest non-canonical eigenvalue).
    pub lambda0: f64,
    pub max_flow_derivative: f64,
    pub max_eigen_residual: f64,
    /// `kπ/√λ0` up to `t_max`.
    pub times: Vec<f64>,
    pub transport: Option<Transport>,
}

impl Prop1Report {
    pub fn applicable(&self) -> bool {
        self.status == Applicability::Applicable
    }

    /// `J(t) = sin(√λ0 t) V(t)`.
    pub fn jacobi_field(&self, t: f64) -> Result<Vec<f64>> {
        let tr = self
            .transport
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("no transported eigenvector".into()))?;
        let k = (self.lambda0.sqrt() * t).sin();
        Ok(tr.vector(t)?.into_iter().map(|c| k * c).collect())
    }
}

/// Checks whether the nonzero eigenvalue `λ` of `Φ` is constant along the
/// geodesic from `p0` and its eigenvector can be transported in parallel;
/// if so, `c(kπ/√λ)` are conjugate to `c(0)`.
pub fn proposition1_predict(s: &SprayModel, p0: &PhasePoint, t_max: f64, opts: &Prop1Options) -> Result<Prop1Report> {
    let (_, phi0) = connection_and_phi(s, &p0.x, &p0.v)?;
    let spectrum = spectrum_of(&phi0, &p0.v);
    let mut report = Prop1Report {
        status: Applicability::Applicable,
        lambda0: 0.0,
        max_flow_derivative: 0.0,
        max_eigen_residual: 0.0,
        times: Vec::new(),
        transport: None,
    };
    let Some(branch) = spectrum.leading().cloned() else {
        report.status = Applicability::NotApplicable { reasons: vec!["Φ has no nonzero real eigenvalue".into()] };
        return Ok(report);
    };
    require_separated(&branch, &phi0)?;
    report.lambda0 = branch.value;
    let mut reasons = Vec::new();
    if branch.value <= 0.0 {
        reasons.push(format!("λ0 = {} is not positive", branch.value));
    }

    let tr = parallel_transport(s, p0, &branch.right, t_max, opts.tol)?;
    let end = tr.t_end().min(t_max);
    let count = ((end * opts.density).ceil() as usize).max(2);
    let v0_norm = linalg::norm(&branch.right);
    let mut tracked = branch.clone();
    let mut fail: Option<(f64, String)> = None;
    for i in 0..=count {
        let t = end * i as f64 / count as f64;
        let p = tr.state(t)?;
        let (_, phi) = connection_and_phi(s, &p.x, &p.v)?;
        let spec = spectrum_of(&phi, &p.v);
        let Some(b) = spec.nearest(tracked.value).cloned() else {
            fail.get_or_insert((t, "eigenvalue branch lost".into()));
            break;
        };
        tracked = b;
        let s_phi = flow_of_phi(s, &p)?;
        let s_lambda = branch_flow_derivative(&tracked, &s_phi)?;
        report.max_flow_derivative = report.max_flow_derivative.max(s_lambda.abs());
        if s_lambda.abs() >= opts.flow_tol && reasons.iter().all(|r| !r.starts_with("S(λ)")) {
            reasons.push(format!("S(λ) = {s_lambda:e} at t = {t}"));
        }
        let v = tr.vector(t)?;
        let vn = linalg::norm(&v);
        let pv = phi.mul_vec(&v);
        let r: Vec<f64> = pv.iter().zip(&v).map(|(a, b)| a - tracked.value * b).collect();
        let res = linalg::norm(&r) / vn.max(f64::MIN_POSITIVE);
        if fail.is_none() {
            report.max_eigen_residual = report.max_eigen_residual.max(res);
            if vn <= opts.vanishing * v0_norm {
                fail = Some((t, format!("transported eigenvector vanishes (‖V‖ = {vn:e})")));
            } else if res >= opts.residual_tol {
                fail = Some((t, format!("transported vector leaves the eigenspace (residual {res:e})")));
            }
        }
    }
    if fail.is_none() && end < t_max {
        let why = match tr.stop() {
            Stop::DomainLimit { reason, .. } => reason.clone(),
            Stop::Completed => "transport ended early".into(),
        };
        fail = Some((end, why));
    }

    if !reasons.is_empty() {
        report.status = Applicability::NotApplicable { reasons };
    } else if let Some((t_fail, reason)) = fail {
        report.status = Applicability::Partial { t_fail, reason };
    }
    if report.lambda0 > 0.0 {
        let spacing = std::f64::consts::PI / report.lambda0.sqrt();
        report.times = (1..).map(|k| k as f64 * spacing).take_while(|&t| t <= t_max).collect();
    }
    report.transport = Some(tr);
    Ok(report)
}

/// `max ‖∇∇J + ΦJ‖` over `count` interior points of `[a, b]`, with
/// `∇∇J = J'' + S(Γ)J + 2ΓJ' + Γ²J` and `J', J''` by 5-point central
/// differences with step `1e-3`.
pub fn jacobi_residual<C, J>(s: &SprayModel, c: &C, j: J, a: f64, b: f64, count: usize) -> Result<f64>
where
    C: Curve + ?Sized,
    J: Fn(f64) -> Result<Vec<f64>>,
{
    const H: f64 = 1e-3;
    let count = count.max(1);
    let mut worst: f64 = 0.0;
    for i in 1..=count {
        let t = a + (b - a) * i as f64 / (count + 1) as f64;
        let samples: Vec<Vec<f64>> = [-2.0, -1.0, 0.0, 1.0, 2.0].iter().map(|k| j(t + k * H)).collect::<Result<_>>()?;
        let n = samples[0].len();
        let d1: Vec<f64> =
            (0..n).map(|r| (samples[0][r] - 8.0 * samples[1][r] + 8.0 * samples[3][r] - samples[4][r]) / (12.0 * H)).collect();
        let d2: Vec<f64> = (0..n)
            .map(|r| {
                (-samples[0][r] + 16.0 * samples[1][r] - 30.0 * samples[2][r] + 16.0 * samples[3][r] - samples[4][r])
                    / (12.0 * H * H)
            })
            .collect();
        let jt = &samples[2];
        let p = c.at(t)?;
        let (gamma, phi) = connection_and_phi(s, &p.x, &p.v)?;
        let s_gamma = Mat::square(sode_apply_all(s, &ConnectionField(s), &p)?);
        let gj = gamma.mul_vec(jt);
        let terms = [s_gamma.mul_vec(jt), gamma.mul_vec(&d1), gamma.mul_vec(&gj), phi.mul_vec(jt)];
        let r: Vec<f64> = (0..n)
            .map(|k| d2[k] + terms[0][k] + 2.0 * terms[1][k] + terms[2][k] + terms[3][k])
            .collect();
        worst = worst.max(linalg::norm(&r));
    }
    Ok(worst)
}

/// `∇J` at `t` for a sampled field, by 5-point differences.
pub fn covariant_derivative<C, J>(s: &SprayModel, c: &C, j: J, t: f64) -> Result<Vec<f64>>
where
    C: Curve + ?Sized,
    J: Fn(f64) -> Result<Vec<f64>>,
{
    const H: f64 = 1e-3;
    let samples: Vec<Vec<f64>> = [-2.0, -1.0, 1.0, 2.0].iter().map(|k| j(t + k * H)).collect::<Result<_>>()?;
    let jt = j(t)?;
    let p = c.at(t)?;
    let gamma = crate::spray::connection(s, &p)?;
    let gj = gamma.mul_vec(&jt);
    Ok((0..jt.len())
        .map(|r| (samples[0][r] - 8.0 * samples[1][r] + 8.0 * samples[2][r] - samples[3][r]) / (12.0 * H) + gj[r])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_jacobi_is_linear() {
        let s = SprayModel::flat(2);
        let p0 = PhasePoint::new(vec![0.0, 0.0], vec![1.0, 0.5]).unwrap();
        let sol = integrate_jacobi_to(&s, &p0, &Mat::zeros(2, 2), &Mat::identity(2), 3.0, Tolerance::default()).unwrap();
        let j = sol.j(2.5).unwrap();
        assert!((&j - &Mat::identity(2).scale(2.5)).max_abs() < 1e-12);
        let rep = find_conjugate_points(&s, &p0, 10.0, &ConjugateOptions::default()).unwrap();
        assert!(rep.points.is_empty());
    }

    #[test]
    fn bisect_and_golden() {
        let r = bisect(|t| Ok(t * t - 2.0), 0.0, 2.0, -2.0, 1e-12).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-11);
        let m = golden_min(|t| Ok((t - 0.3).abs()), 0.0, 1.0, 1e-12).unwrap();
        assert!((m - 0.3).abs() < 1e-10);
    }
}
