//! Sprays and the tensors attached to them: the connection `Γ`, the Jacobi
//! endomorphism `Φ`, the dynamical covariant derivative `∇`, spectra of `Φ`
//! and the bracket condition.
//!
//! All derivatives come from jet evaluation of the spray coefficients. Matrix
//! valued fields are row-major `n×n` with entry `(i, j)` holding the
//! component `A^i_j`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::expr::Expression;
use crate::finsler::FinslerModel;
use crate::jets::{derivative_along, jacobian_v, jacobian_x, PhaseField};
use crate::linalg::{self, Mat};
use crate::projective::ProjectiveFactor;
use crate::scalar::{lift_slice, Scalar};

/// A point of the slit tangent bundle.
#[derive(Clone, Debug, PartialEq)]
pub struct PhasePoint {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

impl PhasePoint {
    pub fn new(x: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if x.len() != v.len() || x.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "phase point needs matching nonempty coordinates, got x:{} v:{}",
                x.len(),
                v.len()
            )));
        }
        if v.iter().all(|&c| c == 0.0) {
            return Err(Error::Domain("zero velocity".into()));
        }
        Ok(PhasePoint { x, v })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// The same base point with velocity scaled by `k`.
    pub fn scaled(&self, k: f64) -> PhasePoint {
        PhasePoint { x: self.x.clone(), v: self.v.iter().map(|c| c * k).collect() }
    }
}

#[derive(Clone, Debug)]
enum Kind {
    Flat,
    Formula(Arc<Vec<Expression>>),
    Finsler(Arc<FinslerModel>),
    Changed { base: Arc<SprayModel>, factor: ProjectiveFactor },
}

/// A second-order field `ẍ = f(x, ẋ)` with an admissible domain.
#[derive(Clone, Debug)]
pub struct SprayModel {
    dim: usize,
    label: String,
    kind: Kind,
    guards: Arc<Vec<Expression>>,
}

impl SprayModel {
    /// `f ≡ 0` on `ℝⁿ`.
    pub fn flat(dim: usize) -> Self {
        SprayModel { dim, label: format!("euclidean({dim})"), kind: Kind::Flat, guards: Arc::default() }
    }

    /// Coefficients given as formulas with all parameters bound. Each guard
    /// must stay strictly positive on the domain.
    pub fn from_formulas(label: impl Into<String>, coeffs: Vec<Expression>, guards: Vec<Expression>) -> Result<Self> {
        let dim = coeffs.len();
        if dim == 0 {
            return Err(Error::InvalidArgument("a spray needs at least one coefficient".into()));
        }
        for e in coeffs.iter().chain(&guards) {
            if e.dim() != dim {
                return Err(Error::InvalidArgument(format!(
                    "formula `{}` declared for dimension {}, model has {dim}",
                    e.source(),
                    e.dim()
                )));
            }
            if let Some(p) = e.free_params().into_iter().next() {
                return Err(Error::UnboundParameter(p));
            }
        }
        Ok(SprayModel { dim, label: label.into(), kind: Kind::Formula(Arc::new(coeffs)), guards: Arc::new(guards) })
    }

    pub(crate) fn finsler(model: Arc<FinslerModel>) -> Self {
        SprayModel {
            dim: model.dim(),
            label: format!("spray of {}", model.label()),
            kind: Kind::Finsler(model),
            guards: Arc::default(),
        }
    }

    pub(crate) fn changed(base: &SprayModel, factor: ProjectiveFactor) -> Self {
        SprayModel {
            dim: base.dim,
            label: format!("{} changed by {}", base.label, factor.label()),
            kind: Kind::Changed { base: Arc::new(base.clone()), factor },
            guards: Arc::default(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// The Finsler function this spray was derived from, if any.
    pub fn finsler_model(&self) -> Option<&FinslerModel> {
        match &self.kind {
            Kind::Finsler(m) => Some(m),
            _ => None,
        }
    }

    /// Checks the guards and the nonvanishing of `v`.
    pub fn check_domain<T: Scalar>(&self, x: &[T], v: &[T]) -> Result<()> {
        if x.len() != self.dim || v.len() != self.dim {
            return Err(Error::InvalidArgument(format!(
                "{} is {}-dimensional, got x:{} v:{}",
                self.label,
                self.dim,
                x.len(),
                v.len()
            )));
        }
        if v.iter().all(|c| c.re() == 0.0) {
            return Err(Error::Domain("zero velocity".into()));
        }
        for g in self.guards.iter() {
            let value = g.eval(x, v)?.re();
            if value.is_nan() || value <= 0.0 {
                return Err(Error::Domain(format!("guard `{}` is {value:e}", g.source())));
            }
        }
        Ok(())
    }

    /// `f^i(x, v)`.
    pub fn coeffs<T: Scalar>(&self, x: &[T], v: &[T]) -> Result<Vec<T>> {
        self.check_domain(x, v)?;
        match &self.kind {
            Kind::Flat => Ok(vec![T::zero(); self.dim]),
            Kind::Formula(exprs) => exprs.iter().map(|e| e.eval(x, v)).collect(),
            Kind::Finsler(m) => m.spray_coeffs(x, v),
            Kind::Changed { base, factor } => {
                let f = base.coeffs(x, v)?;
                let p = factor.value(x, v)?;
                let two_p = p + p;
                Ok(f.iter().zip(v).map(|(&fi, &vi)| fi - two_p * vi).collect())
            }
        }
    }

    /// Real coefficients at a phase point.
    pub fn eval_at(&self, p: &PhasePoint) -> Result<Vec<f64>> {
        self.coeffs(&p.x, &p.v)
    }

    /// Whether the point lies in the domain and the coefficients evaluate.
    pub fn admits(&self, p: &PhasePoint) -> bool {
        self.coeffs(&p.x, &p.v).map(|f| f.iter().all(|c| c.is_finite())).unwrap_or(false)
    }
}

impl fmt::Display for SprayModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}

impl PhaseField for SprayModel {
    fn eval<T: Scalar>(&self, x: &[T], v: &[T]) -> Result<Vec<T>> {
        self.coeffs(x, v)
    }
}

/// Vector field whose components are formulas in `(x, v)`.
#[derive(Clone, Debug)]
pub struct FormulaField(pub Vec<Expression>);

impl PhaseField for FormulaField {
    fn eval<T: Scalar>(&self, x: &[T], v: &[T]) -> Result<Vec<T>> {
        self.0.iter().map(|e| e.eval(x, v)).collect()
    }
}

/// `S(g)`: the derivative of a field along the flow direction `(v, f(x,v))`.
pub struct Flow<'a, F> {
    pub spray: &'a SprayModel,
    pub field: F,
}

impl<F: PhaseField> PhaseField for Flow<'_, F> {
    fn eval<T: Scalar>(&self, x: &[T], v: &[T]) -> Result<Vec<T>> {
        let f = self.spray.coeffs(x, v)?;
        derivative_along(&self.field, x, v, v, &f)
    }
}

/// The connection `Γ^i_j = −½ ∂f^i/∂v^j` as a field.
pub struct ConnectionField<'a>(pub &'a SprayModel);

impl PhaseField for ConnectionField<'_> {
    fn eval<T: Scalar>(&self, x: &[T], v: &[T]) -> Result<Vec<T>> {
        Ok(connection_at(self.0, x, v)?.into_vec())
    }
}

/// The Jacobi endomorphism as a field.
pub struct PhiField<'a>(pub &'a SprayModel);

impl PhaseField for PhiField<'_> {
    fn eval<T: Scalar>(&self, x: &[T], v: &[T]) -> Result<Vec<T>> {
        Ok(phi_at(self.0, x, v)?.into_vec())
    }
}

pub fn connection_at<T: Scalar>(s: &SprayModel, x: &[T], v: &[T]) -> Result<Mat<T>> {
    Ok(Mat::square(jacobian_v(s, x, v)?).scale(T::from_f64(-0.5)))
}

/// `Φ = −∂f/∂x − ΓΓ − S(Γ)` at any scalar type.
pub fn phi_at<T: Scalar>(s: &SprayModel, x: &[T], v: &[T]) -> Result<Mat<T>> {
    let dfdx = Mat::square(jacobian_x(s, x, v)?);
    let gamma = connection_at(s, x, v)?;
    let s_gamma = Mat::square(Flow { spray: s, field: ConnectionField(s) }.eval(x, v)?);
    Ok(&(&dfdx.scale(-T::one()) - &(&gamma * &gamma)) - &s_gamma)
}

pub fn connection(s: &SprayModel, p: &PhasePoint) -> Result<Mat<f64>> {
    connection_at(s, &p.x, &p.v)
}

pub fn jacobi_endomorphism(s: &SprayModel, p: &PhasePoint) -> Result<Mat<f64>> {
    phi_at(s, &p.x, &p.v)
}

/// `Γ` and `Φ` together.
pub fn connection_and_phi(s: &SprayModel, x: &[f64], v: &[f64]) -> Result<(Mat<f64>, Mat<f64>)> {
    Ok((connection_at(s, x, v)?, phi_at(s, x, v)?))
}

/// `S(g)` for every component of `g`.
pub fn sode_apply_all<F: PhaseField>(s: &SprayModel, g: &F, p: &PhasePoint) -> Result<Vec<f64>> {
    Flow { spray: s, field: g }.eval(&p.x, &p.v)
}

/// `S(g) = v^k ∂g/∂x^k + f^k ∂g/∂v^k` for a scalar field.
pub fn sode_apply<F: PhaseField>(s: &SprayModel, g: &F, p: &PhasePoint) -> Result<f64> {
    Ok(sode_apply_all(s, g, p)?[0])
}

/// How the components of a field transform under `∇`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorKind {
    Vector,
    OneForm,
    Endomorphism,
}

/// Dynamical covariant derivative of a smooth field at `p`.
///
/// Vector: `S(X) + ΓX`. One-form: `S(b_j) − Γ^k_j b_k`. Endomorphism:
/// `S(A) + ΓA − AΓ`.
pub fn nabla_tensor<F: PhaseField>(s: &SprayModel, p: &PhasePoint, field: &F, kind: TensorKind) -> Result<Vec<f64>> {
    let n = s.dim();
    let value = field.eval(&p.x, &p.v)?;
    let expected = if kind == TensorKind::Endomorphism { n * n } else { n };
    if value.len() != expected {
        return Err(Error::InvalidArgument(format!(
            "field has {} components, expected {expected} for {kind:?}",
            value.len()
        )));
    }
    let flow = sode_apply_all(s, field, p)?;
    let gamma = connection(s, p)?;
    Ok(match kind {
        TensorKind::Vector => {
            let gx = gamma.mul_vec(&value);
            flow.iter().zip(gx).map(|(a, b)| a + b).collect()
        }
        TensorKind::OneForm => {
            let gb = gamma.vec_mul(&value);
            flow.iter().zip(gb).map(|(a, b)| a - b).collect()
        }
        TensorKind::Endomorphism => {
            let a = Mat::square(value);
            let out = &(&Mat::square(flow) + &(&gamma * &a)) - &(&a * &gamma);
            out.into_vec()
        }
    })
}

/// `S(Φ)`, the flow derivative of the Jacobi endomorphism.
pub fn flow_of_phi(s: &SprayModel, p: &PhasePoint) -> Result<Mat<f64>> {
    Ok(Mat::square(sode_apply_all(s, &PhiField(s), p)?))
}

/// `∇Φ`.
pub fn nabla_phi(s: &SprayModel, p: &PhasePoint) -> Result<Mat<f64>> {
    Ok(Mat::square(nabla_tensor(s, p, &PhiField(s), TensorKind::Endomorphism)?))
}

/// `‖(∇Φ)Φ − Φ(∇Φ)‖_F`.
pub fn bracket_residual(s: &SprayModel, p: &PhasePoint) -> Result<f64> {
    let phi = jacobi_endomorphism(s, p)?;
    let nphi = nabla_phi(s, p)?;
    Ok((&(&nphi * &phi) - &(&phi * &nphi)).norm())
}

/// One eigenvalue cluster of `Φ` at a phase point.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenBranch {
    pub value: f64,
    /// Representative right eigenvector, largest component scaled to 1.
    pub right: Vec<f64>,
    /// Left eigenvector paired with `right` (`left·right = 1` when simple).
    pub left: Vec<f64>,
    /// Orthonormal basis of the right eigenspace.
    pub right_basis: Vec<Vec<f64>>,
    /// Orthonormal basis of the left eigenspace.
    pub left_basis: Vec<Vec<f64>>,
    pub multiplicity: usize,
    /// Distance to the nearest other eigenvalue (`∞` if none).
    pub gap: f64,
    /// Whether the eigenspace contains the canonical section `v`.
    pub canonical: bool,
}

impl EigenBranch {
    pub fn is_simple(&self) -> bool {
        self.multiplicity == 1
    }
}

/// Real spectrum of `Φ` at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub phi: Mat<f64>,
    pub branches: Vec<EigenBranch>,
    /// Complex eigenvalues `(re, im)` with `im > 0`, reported only.
    pub complex: Vec<(f64, f64)>,
    /// Clusters whose geometric multiplicity falls short of the algebraic one.
    pub defective: Vec<f64>,
}

impl Spectrum {
    /// Branches other than the one carrying `v`.
    pub fn nonzero_branches(&self) -> impl Iterator<Item = &EigenBranch> {
        self.branches.iter().filter(|b| !b.canonical)
    }

    /// The non-canonical branch with the largest value.
    pub fn leading(&self) -> Option<&EigenBranch> {
        self.nonzero_branches().max_by(|a, b| a.value.total_cmp(&b.value))
    }

    pub fn canonical(&self) -> Option<&EigenBranch> {
        self.branches.iter().find(|b| b.canonical)
    }

    /// The branch whose value is nearest to `value`.
    pub fn nearest(&self, value: f64) -> Option<&EigenBranch> {
        self.branches.iter().min_by(|a, b| (a.value - value).abs().total_cmp(&(b.value - value).abs()))
    }
}

/// Relative threshold for clustering eigenvalues, also the minimal gap.
pub const GAP_THRESHOLD: f64 = 1e-6;

/// Eigen-decomposition of an arbitrary real matrix into real clusters.
///
/// `v` identifies the canonical branch.
pub fn spectrum_of(phi: &Mat<f64>, v: &[f64]) -> Spectrum {
    let n = phi.rows();
    let scale = phi.norm().max(1e-12);
    let tol = GAP_THRESHOLD * scale;
    let eig = phi.to_nalgebra().complex_eigenvalues();
    let mut reals = Vec::new();
    let mut complex = Vec::new();
    let mut all = Vec::new();
    for z in eig.iter() {
        all.push((z.re, z.im));
        if z.im.abs() <= 1e-9 * scale {
            reals.push(z.re);
        } else if z.im > 0.0 {
            complex.push((z.re, z.im));
        }
    }
    reals.sort_by(f64::total_cmp);
    let mut clusters: Vec<Vec<f64>> = Vec::new();
    for r in reals {
        match clusters.last_mut() {
            Some(c) if r - c[c.len() - 1] <= tol => c.push(r),
            _ => clusters.push(vec![r]),
        }
    }
    let v_norm = linalg::norm(v);
    let mut branches = Vec::new();
    let mut defective = Vec::new();
    for cluster in &clusters {
        let m = cluster.len();
        let value = cluster.iter().sum::<f64>() / m as f64;
        let shifted = phi - &Mat::identity(n).scale(value);
        let (right_basis, sr) = null_space(&shifted, m);
        let (left_basis, sl) = null_space(&shifted.transpose(), m);
        if sr > 1e-4 * scale || sl > 1e-4 * scale {
            defective.push(value);
            continue;
        }
        let radius = cluster.iter().map(|c| (c - value).abs()).fold(0.0, f64::max);
        let gap = all
            .iter()
            .map(|(re, im)| ((re - value).powi(2) + im * im).sqrt())
            .filter(|&d| d > radius + 1e-3 * tol)
            .fold(f64::INFINITY, f64::min);
        let canonical = v_norm > 0.0 && {
            let proj: Vec<f64> = right_basis.iter().map(|b| linalg::dot(b, v)).collect();
            let inside = proj.iter().map(|c| c * c).sum::<f64>().sqrt();
            inside > (1.0 - 1e-6) * v_norm
        };
        let right = if canonical { gauge(v) } else { gauge(&right_basis[0]) };
        let left = paired_left(&left_basis, &right);
        branches.push(EigenBranch {
            value,
            right,
            left,
            right_basis,
            left_basis,
            multiplicity: m,
            gap,
            canonical,
        });
    }
    Spectrum { phi: phi.clone(), branches, complex, defective }
}

/// Orthonormal basis for the `m` smallest right singular directions, plus
/// the largest of the corresponding singular values.
fn null_space(a: &Mat<f64>, m: usize) -> (Vec<Vec<f64>>, f64) {
    let n = a.cols();
    let svd = a.to_nalgebra().svd(false, true);
    let vt = svd.v_t.expect("requested v_t");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let picked = &order[..m.min(order.len())];
    let worst = picked.iter().map(|&i| svd.singular_values[i]).fold(0.0, f64::max);
    let basis = picked.iter().map(|&i| (0..n).map(|k| vt[(i, k)]).collect()).collect();
    (basis, worst)
}

/// Scales a vector so its largest-magnitude component equals 1.
pub fn gauge(u: &[f64]) -> Vec<f64> {
    let k = (0..u.len()).max_by(|&i, &j| u[i].abs().total_cmp(&u[j].abs())).unwrap_or(0);
    let pivot = u[k];
    if pivot == 0.0 {
        return u.to_vec();
    }
    u.iter().map(|c| c / pivot).collect()
}

fn paired_left(left_basis: &[Vec<f64>], right: &[f64]) -> Vec<f64> {
    // Component of the left eigenspace with the strongest pairing against `right`.
    let coeffs: Vec<f64> = left_basis.iter().map(|l| linalg::dot(l, right)).collect();
    let mut left = vec![0.0; right.len()];
    for (l, c) in left_basis.iter().zip(&coeffs) {
        for (acc, li) in left.iter_mut().zip(l) {
            *acc += c * li;
        }
    }
    let pairing = linalg::dot(&left, right);
    if pairing.abs() > 1e-300 {
        left.iter_mut().for_each(|c| *c /= pairing);
    }
    left
}

pub fn eigen_analysis(s: &SprayModel, p: &PhasePoint) -> Result<Spectrum> {
    Ok(spectrum_of(&jacobi_endomorphism(s, p)?, &p.v))
}

fn basis_matrix(vectors: &[Vec<f64>]) -> Mat<f64> {
    let n = vectors[0].len();
    Mat::from_fn(n, vectors.len(), |i, j| vectors[j][i])
}

/// `S(λ)` for a branch, by first-order perturbation of the eigenvalue
/// under the flow derivative of `Φ`. Averaged over the cluster.
pub fn branch_flow_derivative(branch: &EigenBranch, s_phi: &Mat<f64>) -> Result<f64> {
    let r = basis_matrix(&branch.right_basis);
    let l = basis_matrix(&branch.left_basis);
    let lt = l.transpose();
    let pairing = &lt * &r;
    let projected = &(&lt * s_phi) * &r;
    let m = branch.multiplicity;
    let mut trace = 0.0;
    for k in 0..m {
        let col = projected.column(k);
        let solved = linalg::solve(&pairing, &col)
            .map_err(|_| Error::DegenerateBranch(format!("left/right pairing vanishes at λ = {}", branch.value)))?;
        trace += solved[k];
    }
    Ok(trace / m as f64)
}

/// Checks that a branch can be followed smoothly.
pub fn require_separated(branch: &EigenBranch, phi: &Mat<f64>) -> Result<()> {
    let threshold = GAP_THRESHOLD * phi.norm().max(1e-12);
    if branch.gap < threshold {
        return Err(Error::DegenerateBranch(format!(
            "gap {:.3e} below threshold {threshold:.3e} at λ = {}",
            branch.gap, branch.value
        )));
    }
    Ok(())
}

/// `S(λ)` for the branch of `Φ(p)` nearest to `value`.
pub fn eigen_flow_derivative(s: &SprayModel, p: &PhasePoint, branch: &EigenBranch) -> Result<f64> {
    let s_phi = flow_of_phi(s, p)?;
    branch_flow_derivative(branch, &s_phi)
}

/// Per-vector residuals `Φ(∇X) − λ∇X` for `X` running over an orthonormal
/// basis of the branch, computed from
/// `Φ(∇X) − λ∇X = −(S(Φ) − S(λ))X + (Φ − λ)ΓX`.
pub fn restricted_bracket_vectors(
    branch: &EigenBranch,
    phi: &Mat<f64>,
    s_phi: &Mat<f64>,
    gamma: &Mat<f64>,
) -> Result<Vec<Vec<f64>>> {
    require_separated(branch, phi)?;
    let n = phi.rows();
    let s_lambda = branch_flow_derivative(branch, s_phi)?;
    let shifted = phi - &Mat::identity(n).scale(branch.value);
    let s_shift = s_phi - &Mat::identity(n).scale(s_lambda);
    Ok(branch
        .right_basis
        .iter()
        .map(|x| {
            let a = s_shift.mul_vec(x);
            let b = shifted.mul_vec(&gamma.mul_vec(x));
            a.iter().zip(b).map(|(a, b)| b - a).collect()
        })
        .collect())
}

/// `‖Φ(∇X) − λ∇X‖` over the branch eigenspace (Frobenius norm over an
/// orthonormal basis).
pub fn bracket_residual_on(s: &SprayModel, p: &PhasePoint, branch: &EigenBranch) -> Result<f64> {
    let (gamma, phi) = connection_and_phi(s, &p.x, &p.v)?;
    let s_phi = flow_of_phi(s, p)?;
    let rows = restricted_bracket_vectors(branch, &phi, &s_phi, &gamma)?;
    Ok(rows.iter().flatten().map(|c| c * c).sum::<f64>().sqrt())
}

/// Best fit of `Φ = λI + v⊗c` with `c(v) = −λ`.
#[derive(Clone, Debug, PartialEq)]
pub struct IsotropyFit {
    pub lambda: f64,
    pub c: Vec<f64>,
    pub residual: f64,
}

pub fn isotropy_from_phi(phi: &Mat<f64>, v: &[f64]) -> IsotropyFit {
    let n = phi.rows();
    if n == 1 {
        return IsotropyFit { lambda: 0.0, c: vec![phi[(0, 0)] / v[0]], residual: 0.0 };
    }
    let lambda = phi.trace() / (n as f64 - 1.0);
    let shifted = phi - &Mat::identity(n).scale(lambda);
    let vv = linalg::dot(v, v);
    let c: Vec<f64> = shifted.vec_mul(v).iter().map(|c| c / vv).collect();
    let residual = (&shifted - &Mat::outer(v, &c)).norm();
    IsotropyFit { lambda, c, residual }
}

pub fn isotropy_fit(s: &SprayModel, p: &PhasePoint) -> Result<IsotropyFit> {
    Ok(isotropy_from_phi(&jacobi_endomorphism(s, p)?, &p.v))
}

/// The one-form `c` of the isotropy fit, as a field.
pub struct IsotropyFormField<'a>(pub &'a SprayModel);

impl PhaseField for IsotropyFormField<'_> {
    fn eval<T: Scalar>(&self, x: &[T], v: &[T]) -> Result<Vec<T>> {
        let n = x.len();
        let phi = phi_at(self.0, x, v)?;
        let lambda = phi.trace() / T::from_f64(n as f64 - 1.0);
        let shifted = &phi - &Mat::identity(n).scale(lambda);
        let vv = linalg::dot(v, v);
        Ok(shifted.vec_mul(v).into_iter().map(|c| c / vv).collect())
    }
}

/// Maxima of the spray identities over a sample set.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SprayReport {
    /// `max |f(x,λv) − λ²f(x,v)|` over `λ ∈ {½, 2}`.
    pub homogeneity: f64,
    /// The same, relative to `λ²|f(x,v)|` (absolute where `f` vanishes).
    pub homogeneity_rel: f64,
    /// `max |Φ v|`.
    pub phi_t: f64,
    /// `max |Γ v + f|`, the components of `∇T`.
    pub nabla_t: f64,
    pub samples: usize,
}

pub fn verify_spray(s: &SprayModel, samples: &[PhasePoint]) -> Result<SprayReport> {
    let mut rep = SprayReport { samples: samples.len(), ..Default::default() };
    for p in samples {
        let f = s.eval_at(p)?;
        let fnorm = linalg::norm(&f);
        for k in [0.5, 2.0] {
            let fk = s.eval_at(&p.scaled(k))?;
            let expect: Vec<f64> = f.iter().map(|c| k * k * c).collect();
            let diff = linalg::norm(&linalg::sub(&fk, &expect));
            rep.homogeneity = rep.homogeneity.max(diff);
            let denom = if fnorm > 0.0 { k * k * fnorm } else { 1.0 };
            rep.homogeneity_rel = rep.homogeneity_rel.max(diff / denom);
        }
        let (gamma, phi) = connection_and_phi(s, &p.x, &p.v)?;
        rep.phi_t = rep.phi_t.max(linalg::norm(&phi.mul_vec(&p.v)));
        let gv = gamma.mul_vec(&p.v);
        let res: Vec<f64> = gv.iter().zip(&f).map(|(a, b)| a + b).collect();
        rep.nabla_t = rep.nabla_t.max(linalg::norm(&res));
    }
    Ok(rep)
}

/// Seeded random points of the model's domain: base points uniform in
/// `[-radius, radius]ⁿ`, velocities uniform in the unit ball shell.
pub fn random_points(s: &SprayModel, count: usize, radius: f64, seed: u64) -> Vec<PhasePoint> {
    random_points_where(s.dim(), count, radius, seed, |p| s.admits(p))
}

/// As [`random_points`], accepting points by an arbitrary predicate.
pub fn random_points_where(
    dim: usize,
    count: usize,
    radius: f64,
    seed: u64,
    mut accept: impl FnMut(&PhasePoint) -> bool,
) -> Vec<PhasePoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut tries = 0usize;
    while out.len() < count && tries < 10_000 * count.max(1) {
        tries += 1;
        let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-radius..radius)).collect();
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = linalg::norm(&v);
        if !(0.2..=1.0).contains(&r) {
            continue;
        }
        let p = PhasePoint { x, v };
        if accept(&p) {
            out.push(p);
        }
    }
    out
}

/// Lifts a real phase point into any scalar type.
pub fn lift_point<T: Scalar>(p: &PhasePoint) -> (Vec<T>, Vec<T>) {
    (lift_slice(&p.x), lift_slice(&p.v))
}
