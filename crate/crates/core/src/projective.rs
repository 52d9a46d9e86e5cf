//! Projective changes `S̃ = S − 2PΔ`: the data `a = P² − S(P)` and `b`, the
//! transformation laws of `Φ` and `∇`, the bracket residual conditions, and
//! the end-to-end check that conjugate points are preserved.

use std::fmt;

use crate::error::{Error, Result};
use crate::expr::Expression;
use crate::flow::{integrate_geodesic, reparametrize};
use crate::jacobi::{find_conjugate_points, ConjugateOptions, DetectionMethod};
use crate::jets::{derivative_along, jacobian_v, jacobian_x, PhaseField};
use crate::linalg::{self, Mat};
use crate::ode::Tolerance;
use crate::scalar::Scalar;
use crate::spray::{
    branch_flow_derivative, connection_and_phi, connection_at, eigen_analysis, flow_of_phi,
    isotropy_from_phi, jacobi_endomorphism, nabla_tensor, random_points, require_separated, restricted_bracket_vectors,
    sode_apply, spectrum_of, EigenBranch, Flow, IsotropyFormField, PhasePoint, SprayModel, TensorKind,
};

/// A positively 1-homogeneous function `P(x, v)`.
#[derive(Clone, Debug)]
pub struct ProjectiveFactor {
    label: String,
    expr: Expression,
}

impl ProjectiveFactor {
    pub fn new(label: impl Into<String>, expr: Expression) -> Result<Self> {
        if let Some(p) = expr.free_params().into_iter().next() {
            return Err(Error::UnboundParameter(p));
        }
        Ok(ProjectiveFactor { label: label.into(), expr })
    }

    pub fn zero(dim: usize) -> Self {
        ProjectiveFactor { label: "0".into(), expr: Expression::zero(dim) }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn expr(&self) -> &Expression {
        &self.expr
    }

    pub fn dim(&self) -> usize {
        self.expr.dim()
    }

    pub fn is_zero(&self) -> bool {
        self.expr.is_zero()
    }

    pub fn value<T: Scalar>(&self, x: &[T], v: &[T]) -> Result<T> {
        self.expr.eval(x, v)
    }

    /// `max |P(x, kv) − kP(x, v)| / (k|P(x, v)|)` over `k ∈ {½, 2, 3}`,
    /// absolute where `P` vanishes. Points where a scaling leaves the domain
    /// are skipped.
    pub fn homogeneity_residual(&self, samples: &[PhasePoint]) -> f64 {
        let mut worst: f64 = 0.0;
        for p in samples {
            let Ok(base) = self.value(&p.x, &p.v) else { continue };
            for k in [0.5, 2.0, 3.0] {
                let q = p.scaled(k);
                let Ok(scaled) = self.value(&q.x, &q.v) else { continue };
                let denom = if base != 0.0 { k * base.abs() } else { 1.0 };
                worst = worst.max((scaled - k * base).abs() / denom);
            }
        }
        worst
    }
}

impl fmt::Display for ProjectiveFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}

impl PhaseField for ProjectiveFactor {
    fn eval<T: Scalar>(&self, x: &[T], v: &[T]) -> Result<Vec<T>> {
        Ok(vec![self.value(x, v)?])
    }
}

const HOMOGENEITY_TOL: f64 = 1e-9;

/// `S̃ = S − 2PΔ`, that is `f̃^i = f^i − 2P v^i`, after a sampled check that
/// `P` is 1-homogeneous.
pub fn apply_change(s: &SprayModel, factor: &ProjectiveFactor) -> Result<SprayModel> {
    if factor.dim() != s.dim() {
        return Err(Error::InvalidArgument(format!(
            "factor `{}` has dimension {}, spray {} has {}",
            factor.label(),
            factor.dim(),
            s.label(),
            s.dim()
        )));
    }
    let samples = random_points(s, 24, 0.9, 0x5eed);
    let residual = factor.homogeneity_residual(&samples);
    if residual > HOMOGENEITY_TOL {
        return Err(Error::HomogeneityViolation { residual });
    }
    Ok(SprayModel::changed(s, factor.clone()))
}

/// `a = P² − S(P)` as a field.
pub struct AField<'a> {
    pub spray: &'a SprayModel,
    pub factor: &'a ProjectiveFactor,
}

impl PhaseField for AField<'_> {
    fn eval<T: Scalar>(&self, x: &[T], v: &[T]) -> Result<Vec<T>> {
        let p = self.factor.value(x, v)?;
        let sp = Flow { spray: self.spray, field: self.factor }.eval(x, v)?[0];
        Ok(vec![p * p - sp])
    }
}

/// The one-form `b_j = 3(∂P/∂x^j − Γ^i_j ∂P/∂v^i) − P ∂P/∂v^j − ∂S(P)/∂v^j`.
pub struct BField<'a> {
    pub spray: &'a SprayModel,
    pub factor: &'a ProjectiveFactor,
}

impl PhaseField for BField<'_> {
    fn eval<T: Scalar>(&self, x: &[T], v: &[T]) -> Result<Vec<T>> {
        let p = self.factor.value(x, v)?;
        let px = jacobian_x(self.factor, x, v)?;
        let pv = jacobian_v(self.factor, x, v)?;
        let gamma = connection_at(self.spray, x, v)?;
        let spv = jacobian_v(&Flow { spray: self.spray, field: self.factor }, x, v)?;
        let horizontal = gamma.vec_mul(&pv);
        let three = T::from_f64(3.0);
        Ok((0..x.len()).map(|j| three * (px[j] - horizontal[j]) - p * pv[j] - spv[j]).collect())
    }
}

/// `c + b`, the isotropy form of the changed spray.
struct ChangedFormField<'a> {
    spray: &'a SprayModel,
    factor: &'a ProjectiveFactor,
}

impl PhaseField for ChangedFormField<'_> {
    fn eval<T: Scalar>(&self, x: &[T], v: &[T]) -> Result<Vec<T>> {
        let c = IsotropyFormField(self.spray).eval(x, v)?;
        let b = BField { spray: self.spray, factor: self.factor }.eval(x, v)?;
        Ok(c.into_iter().zip(b).map(|(c, b)| c + b).collect())
    }
}

/// The projective data at one phase point.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectiveData {
    pub p: f64,
    /// `S(P)`.
    pub s_p: f64,
    pub a: f64,
    pub b: Vec<f64>,
    /// `∂P/∂v`.
    pub dv_p: Vec<f64>,
    /// `(λ, λ + a)` for every real eigenvalue cluster of `Φ`.
    pub shifts: Vec<(f64, f64)>,
}

impl ProjectiveData {
    /// `b(v) + a`, which vanishes identically.
    pub fn b_of_t_residual(&self, v: &[f64]) -> f64 {
        linalg::dot(&self.b, v) + self.a
    }
}

pub fn projective_data(s: &SprayModel, factor: &ProjectiveFactor, p: &PhasePoint) -> Result<ProjectiveData> {
    let value = factor.value(&p.x, &p.v)?;
    let s_p = sode_apply(s, factor, p)?;
    let b = BField { spray: s, factor }.eval(&p.x, &p.v)?;
    let dv_p = jacobian_v(factor, &p.x, &p.v)?;
    let a = value * value - s_p;
    let spectrum = eigen_analysis(s, p)?;
    let shifts = spectrum.branches.iter().map(|br| (br.value, br.value + a)).collect();
    Ok(ProjectiveData { p: value, s_p, a, b, dv_p, shifts })
}

/// `max |Φ̃ − (Φ + aI + v⊗b)|`, with `Φ̃` computed directly from `S̃`.
pub fn phi_tilde_crosscheck(s: &SprayModel, factor: &ProjectiveFactor, p: &PhasePoint) -> Result<f64> {
    let changed = SprayModel::changed(s, factor.clone());
    let direct = jacobi_endomorphism(&changed, p)?;
    let phi = jacobi_endomorphism(s, p)?;
    let data = projective_data(s, factor, p)?;
    let n = s.dim();
    let predicted = &(&phi + &Mat::identity(n).scale(data.a)) + &Mat::outer(&p.v, &data.b);
    Ok((&direct - &predicted).max_abs())
}

/// `max |∇̃X − (∇X − 2P(Δ(X) − X) + (d^V P·X) v − P X)|` for a smooth
/// vector field `X`, with `∇̃X` computed directly from `S̃`.
pub fn nabla_tilde_crosscheck<F: PhaseField>(
    s: &SprayModel,
    factor: &ProjectiveFactor,
    p: &PhasePoint,
    field: &F,
) -> Result<f64> {
    let changed = SprayModel::changed(s, factor.clone());
    let direct = nabla_tensor(&changed, p, field, TensorKind::Vector)?;
    let base = nabla_tensor(s, p, field, TensorKind::Vector)?;
    let x = field.eval(&p.x, &p.v)?;
    let zero = vec![0.0; s.dim()];
    let dilation = derivative_along(field, &p.x, &p.v, &zero, &p.v)?;
    let pv = factor.value(&p.x, &p.v)?;
    let dvp = jacobian_v(factor, &p.x, &p.v)?;
    let dvp_x = linalg::dot(&dvp, &x);
    let predicted: Vec<f64> = (0..s.dim())
        .map(|i| base[i] - 2.0 * pv * (dilation[i] - x[i]) + dvp_x * p.v[i] - pv * x[i])
        .collect();
    Ok(linalg::max_abs_diff(&direct, &predicted))
}

/// Which alternative of the diagonalizability criterion holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiagCase {
    /// `a ≠ −λ` for every nonzero eigenvalue.
    Shifted,
    /// `a = −λ_j` for some branch, on which `b` vanishes.
    Annihilated,
    Fail,
}

impl DiagCase {
    pub fn number(self) -> Option<u8> {
        match self {
            DiagCase::Shifted => Some(1),
            DiagCase::Annihilated => Some(2),
            DiagCase::Fail => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BranchShift {
    pub lambda: f64,
    pub lambda_tilde: f64,
    pub multiplicity: usize,
    pub canonical: bool,
    /// `max ‖Φ̃X̃ − λ̃X̃‖ / (1 + ‖Φ̃‖)` over `X̃ = (λ + a)X + b(X)v`, `X` an
    /// orthonormal basis of the branch (complementary to `v` on the
    /// canonical cluster).
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalizabilityReport {
    pub case: DiagCase,
    pub a: f64,
    pub weak_funk: bool,
    pub shifts: Vec<BranchShift>,
    /// `‖Φ̃v‖`.
    pub canonical_residual: f64,
    pub max_residual: f64,
    pub notes: Vec<String>,
}

pub fn diagonalizability_report(
    s: &SprayModel,
    factor: &ProjectiveFactor,
    p: &PhasePoint,
) -> Result<DiagonalizabilityReport> {
    let n = s.dim();
    let phi = jacobi_endomorphism(s, p)?;
    let spectrum = spectrum_of(&phi, &p.v);
    let data = projective_data(s, factor, p)?;
    let changed = SprayModel::changed(s, factor.clone());
    let phi_t = jacobi_endomorphism(&changed, p)?;
    let scale = 1.0 + phi.norm().max(phi_t.norm());
    let a = data.a;
    let mut notes = Vec::new();
    let mut case = DiagCase::Shifted;
    if !spectrum.complex.is_empty() || !spectrum.defective.is_empty() {
        notes.push(format!(
            "Φ is not diagonalizable: complex {:?}, defective {:?}",
            spectrum.complex, spectrum.defective
        ));
        case = DiagCase::Fail;
    }

    let vn = linalg::norm(&p.v);
    let unit_v: Vec<f64> = p.v.iter().map(|c| c / vn).collect();
    let mut shifts = Vec::new();
    let mut max_residual: f64 = 0.0;
    for br in &spectrum.branches {
        let basis = if br.canonical { complement(&br.right_basis, &unit_v) } else { br.right_basis.clone() };
        let lt = br.value + a;
        if !br.canonical && case != DiagCase::Fail && lt.abs() <= 1e-9 * scale {
            let annihilated = basis.iter().all(|x| linalg::dot(&data.b, x).abs() <= 1e-9 * scale);
            if annihilated {
                case = DiagCase::Annihilated;
            } else {
                notes.push(format!("a = −λ = {} and b does not vanish on the branch", -br.value));
                case = DiagCase::Fail;
            }
        }
        let mut residual: f64 = 0.0;
        for x in &basis {
            let bx = linalg::dot(&data.b, x);
            let xt: Vec<f64> = (0..n).map(|i| lt * x[i] + bx * p.v[i]).collect();
            let img = phi_t.mul_vec(&xt);
            let r: Vec<f64> = img.iter().zip(&xt).map(|(u, w)| u - lt * w).collect();
            residual = residual.max(linalg::norm(&r) / scale);
        }
        max_residual = max_residual.max(residual);
        shifts.push(BranchShift {
            lambda: br.value,
            lambda_tilde: if br.canonical && basis.is_empty() { br.value } else { lt },
            multiplicity: br.multiplicity,
            canonical: br.canonical,
            residual,
        });
    }
    let canonical_residual = linalg::norm(&phi_t.mul_vec(&p.v)) / scale;
    Ok(DiagonalizabilityReport {
        case,
        a,
        weak_funk: a.abs() <= 1e-9 * scale,
        shifts,
        canonical_residual,
        max_residual: max_residual.max(canonical_residual),
        notes,
    })
}

/// Orthonormal basis of `span(basis)` orthogonal to the unit vector `u`.
fn complement(basis: &[Vec<f64>], u: &[f64]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    let mut frame = vec![u.to_vec()];
    for b in basis {
        let mut w = b.clone();
        for f in &frame {
            let d = linalg::dot(&w, f);
            w.iter_mut().zip(f).for_each(|(wi, fi)| *wi -= d * fi);
        }
        let nw = linalg::norm(&w);
        if nw > 1e-8 {
            w.iter_mut().for_each(|c| *c /= nw);
            frame.push(w.clone());
            out.push(w);
        }
    }
    out
}

/// `S(S(P)) − 6P·S(P) + 4P(λ + P²) − S(λ)`; vanishes exactly when
/// `λ̃ = λ + a` is a first integral of `S̃`.
pub fn residual_t1(s: &SprayModel, factor: &ProjectiveFactor, p: &PhasePoint, branch: &EigenBranch) -> Result<f64> {
    let phi = jacobi_endomorphism(s, p)?;
    require_separated(branch, &phi)?;
    let pv = factor.value(&p.x, &p.v)?;
    let sp = sode_apply(s, factor, p)?;
    let ssp = sode_apply(s, &Flow { spray: s, field: factor }, p)?;
    let s_lambda = branch_flow_derivative(branch, &flow_of_phi(s, p)?)?;
    Ok(ssp - 6.0 * pv * sp + 4.0 * pv * (branch.value + pv * pv) - s_lambda)
}

/// `S̃(λ̃)` computed directly on the changed spray from the branch of `Φ̃`
/// nearest to `λ + a`.
pub fn changed_flow_derivative(
    s: &SprayModel,
    factor: &ProjectiveFactor,
    p: &PhasePoint,
    branch: &EigenBranch,
) -> Result<f64> {
    let changed = SprayModel::changed(s, factor.clone());
    let a = projective_data(s, factor, p)?.a;
    let spec = eigen_analysis(&changed, p)?;
    let target = spec
        .nearest(branch.value + a)
        .ok_or_else(|| Error::DegenerateBranch("no branch of Φ̃ near λ + a".into()))?;
    require_separated(target, &spec.phi)?;
    branch_flow_derivative(target, &flow_of_phi(&changed, p)?)
}

struct Common {
    a: f64,
    s_a: f64,
    p: f64,
    s_lambda: f64,
    b: Vec<f64>,
    dv_p: Vec<f64>,
    nabla_b: Vec<f64>,
}

fn common(s: &SprayModel, factor: &ProjectiveFactor, p: &PhasePoint, branch: &EigenBranch) -> Result<Common> {
    let data = projective_data(s, factor, p)?;
    let s_a = sode_apply(s, &AField { spray: s, factor }, p)?;
    let s_lambda = branch_flow_derivative(branch, &flow_of_phi(s, p)?)?;
    let nabla_b = nabla_tensor(s, p, &BField { spray: s, factor }, TensorKind::OneForm)?;
    let lt = branch.value + data.a;
    let scale = 1.0 + branch.value.abs() + data.a.abs();
    if lt.abs() <= 1e-9 * scale {
        return Err(Error::DegenerateBranch(format!("λ + a = {lt:e} vanishes")));
    }
    Ok(Common { a: data.a, s_a, p: data.p, s_lambda, b: data.b, dv_p: data.dv_p, nabla_b })
}

/// Residual of the equivalent form of `[∇̃Φ̃, Φ̃] = 0` on `D̃_{λ+a}`:
/// `Φ(∇X) − λ∇X − ((∇b)(X) + (P − S(λ+a)/(λ+a)) b(X) + (λ+a) d^V P(X)) v`,
/// maximised over an orthonormal basis `X` of the branch.
///
/// The `∇b` term enters with a plus sign, from
/// `S(b(X)) − b(∇X) = (∇b)(X)`; this is the form that vanishes exactly when
/// the restricted bracket of `S̃` does.
pub fn residual_t0(s: &SprayModel, factor: &ProjectiveFactor, p: &PhasePoint, branch: &EigenBranch) -> Result<f64> {
    let (gamma, phi) = connection_and_phi(s, &p.x, &p.v)?;
    let s_phi = flow_of_phi(s, p)?;
    let lhs = restricted_bracket_vectors(branch, &phi, &s_phi, &gamma)?;
    let c = common(s, factor, p, branch)?;
    let lt = branch.value + c.a;
    let coeff = c.p - (c.s_lambda + c.s_a) / lt;
    let mut worst: f64 = 0.0;
    for (x, l) in branch.right_basis.iter().zip(&lhs) {
        let scalar = linalg::dot(&c.nabla_b, x) + coeff * linalg::dot(&c.b, x) + lt * linalg::dot(&c.dv_p, x);
        let r: Vec<f64> = l.iter().zip(&p.v).map(|(li, vi)| li - scalar * vi).collect();
        worst = worst.max(linalg::norm(&r));
    }
    Ok(worst)
}

/// Outcome of the simplified condition on `D_λ`, valid when `S` has the
/// bracket property on `D_λ` and `S̃(λ̃) = 0` (so `S(λ+a) = 4P(λ+a)`).
#[derive(Clone, Debug, PartialEq)]
pub struct T2Report {
    /// `(∇b) − 3Pb + (λ+a) d^V P`, the reduction of [`residual_t0`].
    pub residual: f64,
    /// `(∇b) + 3Pb − (λ+a) d^V P`, the form with the opposite sign on the
    /// `∇b` term. Reported for comparison; it agrees with `residual` only
    /// where `∇b` vanishes on the branch.
    pub stated: f64,
    /// `‖Φ(∇X) − λ∇X‖` on the branch for `S` itself.
    pub bracket: f64,
    pub t1: f64,
    pub hypotheses_hold: bool,
}

pub fn residual_t2(s: &SprayModel, factor: &ProjectiveFactor, p: &PhasePoint, branch: &EigenBranch) -> Result<T2Report> {
    let (gamma, phi) = connection_and_phi(s, &p.x, &p.v)?;
    let s_phi = flow_of_phi(s, p)?;
    let rows = restricted_bracket_vectors(branch, &phi, &s_phi, &gamma)?;
    let bracket = rows.iter().flatten().map(|c| c * c).sum::<f64>().sqrt();
    let t1 = residual_t1(s, factor, p, branch)?;
    let c = common(s, factor, p, branch)?;
    let lt = branch.value + c.a;
    let worst = |sign: f64| {
        branch
            .right_basis
            .iter()
            .map(|x| {
                let rest = 3.0 * c.p * linalg::dot(&c.b, x) - lt * linalg::dot(&c.dv_p, x);
                (linalg::dot(&c.nabla_b, x) + sign * rest).abs()
            })
            .fold(0.0, f64::max)
    };
    let scale = 1.0 + phi.norm();
    Ok(T2Report { residual: worst(-1.0), stated: worst(1.0), bracket, t1, hypotheses_hold: bracket <= 1e-7 * scale && t1.abs() <= 1e-7 * scale })
}

/// `∇(c + b) + (P − S(λ+a)/(λ+a)) b + (λ+a) d^V P` on `D_λ = ker c` of an
/// isotropic spray, maximised over an orthonormal basis of `ker c`.
pub fn residual_t2i(s: &SprayModel, factor: &ProjectiveFactor, p: &PhasePoint) -> Result<f64> {
    let phi = jacobi_endomorphism(s, p)?;
    let fit = isotropy_from_phi(&phi, &p.v);
    if fit.residual > 1e-8 * (1.0 + phi.norm()) {
        return Err(Error::NotIsotropic { residual: fit.residual });
    }
    let data = projective_data(s, factor, p)?;
    let lt = fit.lambda + data.a;
    if lt.abs() <= 1e-9 * (1.0 + fit.lambda.abs() + data.a.abs()) {
        return Err(Error::DegenerateBranch(format!("λ + a = {lt:e} vanishes")));
    }
    let s_lambda = sode_apply(s, &IsotropyLambda(s), p)?;
    let s_a = sode_apply(s, &AField { spray: s, factor }, p)?;
    let nabla_cb = nabla_tensor(s, p, &ChangedFormField { spray: s, factor }, TensorKind::OneForm)?;
    let coeff = data.p - (s_lambda + s_a) / lt;
    let form: Vec<f64> = (0..s.dim()).map(|j| nabla_cb[j] + coeff * data.b[j] + lt * data.dv_p[j]).collect();
    Ok(kernel_basis(&fit.c).iter().map(|x| linalg::dot(&form, x).abs()).fold(0.0, f64::max))
}

/// `λ = tr Φ / (n − 1)` as a field.
struct IsotropyLambda<'a>(&'a SprayModel);

impl PhaseField for IsotropyLambda<'_> {
    fn eval<T: Scalar>(&self, x: &[T], v: &[T]) -> Result<Vec<T>> {
        let phi = crate::spray::phi_at(self.0, x, v)?;
        Ok(vec![phi.trace() / T::from_f64(x.len() as f64 - 1.0)])
    }
}

/// Orthonormal basis of `ker c`.
fn kernel_basis(c: &[f64]) -> Vec<Vec<f64>> {
    let n = c.len();
    let cn = linalg::norm(c);
    let units: Vec<Vec<f64>> = (0..n).map(|k| (0..n).map(|i| if i == k { 1.0 } else { 0.0 }).collect()).collect();
    if cn == 0.0 {
        return units;
    }
    let u: Vec<f64> = c.iter().map(|x| x / cn).collect();
    complement(&units, &u)
}

/// End-to-end comparison of the first conjugate point of `S` and of `S̃`
/// along the geodesics from the same initial phase point.
#[derive(Clone, Debug, PartialEq)]
pub struct PreservationReport {
    pub t1: f64,
    pub t1_method: DetectionMethod,
    pub s1: f64,
    pub s1_method: DetectionMethod,
    /// `θ(s1)`.
    pub theta_s1: f64,
    pub x_t1: Vec<f64>,
    pub x_s1: Vec<f64>,
    /// `|θ(s1) − t1|`.
    pub parameter_error: f64,
    /// `|c(t1) − c̃(s1)|`.
    pub base_point_error: f64,
    /// `max |θ'' + 2P θ'²|` at the reparametrization nodes.
    pub theta_residual: f64,
    pub s_span: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PreservationOptions {
    pub conjugate: ConjugateOptions,
    pub tol: Tolerance,
    /// Longest `s`-span tried for the reparametrization.
    pub s_limit: f64,
}

impl Default for PreservationOptions {
    fn default() -> Self {
        PreservationOptions { conjugate: ConjugateOptions::default(), tol: Tolerance::default(), s_limit: 1e3 }
    }
}

pub fn verify_conjugate_preservation(
    s: &SprayModel,
    factor: &ProjectiveFactor,
    p0: &PhasePoint,
    t_window: f64,
    opts: &PreservationOptions,
) -> Result<PreservationReport> {
    let c = integrate_geodesic(s, p0, t_window, opts.tol)?;
    let rep = find_conjugate_points(s, p0, t_window, &opts.conjugate)?;
    let first = rep.first().ok_or(Error::NoConjugatePoint { t_max: t_window })?.clone();

    let changed = apply_change(s, factor)?;
    let mut s_end = t_window;
    let theta = loop {
        let th = reparametrize(factor, &c, s_end, opts.tol)?;
        let reached = th.theta(th.s_end())?;
        if th.s_end() < s_end || reached > first.t || s_end >= opts.s_limit {
            break th;
        }
        s_end *= 2.0;
    };
    let s_span = theta.s_end();
    if theta.theta(s_span)? <= first.t {
        return Err(Error::NoConjugatePoint { t_max: s_span });
    }
    let rep_t = find_conjugate_points(&changed, p0, s_span, &opts.conjugate)?;
    let second = rep_t.first().ok_or(Error::NoConjugatePoint { t_max: s_span })?.clone();
    let theta_s1 = theta.theta(second.t)?;
    let theta_residual = theta
        .nodes()
        .windows(2)
        .map(|w| theta.ode_residual(&c, 0.5 * (w[0] + w[1])))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(PreservationReport {
        t1: first.t,
        t1_method: first.method,
        s1: second.t,
        s1_method: second.method,
        theta_s1,
        parameter_error: (theta_s1 - first.t).abs(),
        base_point_error: linalg::norm(&linalg::sub(&first.x, &second.x)),
        x_t1: first.x,
        x_s1: second.x,
        theta_residual,
        s_span,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r3() -> SprayModel {
        let f = ["v2*v3+v1*v3", "-v1*v3+v2*v3", "v3^2"]
            .iter()
            .map(|s| Expression::parse(s, 3, &[]).unwrap())
            .collect();
        SprayModel::from_formulas("r3", f, vec![]).unwrap()
    }

    fn factor(src: &str, dim: usize) -> ProjectiveFactor {
        ProjectiveFactor::new(src, Expression::parse(src, dim, &[]).unwrap()).unwrap()
    }

    fn pt(x: &[f64], v: &[f64]) -> PhasePoint {
        PhasePoint::new(x.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn r3_change_data() {
        let s = r3();
        let p = pt(&[0.1, -0.2, 0.3], &[0.4, 0.5, 2.0]);
        let f = factor("0.5*v3", 3);
        let d = projective_data(&s, &f, &p).unwrap();
        assert!((d.a + 1.0).abs() < 1e-12, "a = {}", d.a);
        assert!(d.b_of_t_residual(&p.v).abs() < 1e-12);
        let changed = apply_change(&s, &f).unwrap();
        let ft = changed.eval_at(&pt(&[0.0; 3], &[0.0, 0.0, 1.0])).unwrap();
        assert_eq!(ft[2], 0.0);
        assert!(phi_tilde_crosscheck(&s, &f, &p).unwrap() < 1e-10);
    }

    #[test]
    fn t1_polynomial_in_a() {
        let s = r3();
        let p = pt(&[0.0; 3], &[0.3, -0.1, 2.0]);
        let spec = eigen_analysis(&s, &p).unwrap();
        let br = spec.leading().unwrap().clone();
        for a in [0.0, 0.25, 0.5, 1.0] {
            let f = factor(&format!("{a}*v3"), 3);
            let expect = 8.0 * (4.0 * a * a * a - 6.0 * a * a + 4.0 * a - 1.0);
            let got = residual_t1(&s, &f, &p, &br).unwrap();
            assert!((got - expect).abs() < 1e-9, "A = {a}: {got} vs {expect}");
        }
    }

    #[test]
    fn non_homogeneous_factor_is_rejected() {
        let s = r3();
        let f = factor("v3^2", 3);
        assert!(matches!(apply_change(&s, &f), Err(Error::HomogeneityViolation { .. })));
    }

    #[test]
    fn zero_factor_is_transparent() {
        let s = r3();
        let z = ProjectiveFactor::zero(3);
        let p = pt(&[0.2, 0.1, 0.0], &[1.0, 0.5, 0.7]);
        let d = projective_data(&s, &z, &p).unwrap();
        assert_eq!(d.a, 0.0);
        assert!(d.b.iter().all(|&c| c == 0.0));
        let rep = diagonalizability_report(&s, &z, &p).unwrap();
        assert_eq!(rep.case, DiagCase::Shifted);
        assert!(rep.weak_funk);
    }
}
