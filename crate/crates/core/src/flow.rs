//! Geodesics of a spray, the exponential map, geodesic variations and the
//! reparametrization that turns geodesics into geodesics of a projectively
//! changed spray.

use crate::error::{Error, Result};
use crate::linalg;
use crate::ode::{self, OdeOptions, Solution, Stop, Tolerance};
use crate::projective::ProjectiveFactor;
use crate::spray::{PhasePoint, SprayModel};

/// Dense solution `t ↦ (x(t), ẋ(t))` of `ẍ = f(x, ẋ)` from `t = 0`.
#[derive(Clone, Debug)]
pub struct GeodesicRecord {
    model: SprayModel,
    initial: PhasePoint,
    requested: f64,
    sol: Solution,
}

impl GeodesicRecord {
    pub fn model(&self) -> &SprayModel {
        &self.model
    }

    pub fn initial(&self) -> &PhasePoint {
        &self.initial
    }

    /// End of the integrated span (earlier than requested when truncated).
    pub fn t_end(&self) -> f64 {
        self.sol.t_end()
    }

    pub fn requested_end(&self) -> f64 {
        self.requested
    }

    /// Why the record stopped early, if it did.
    pub fn truncation(&self) -> Option<(f64, &str)> {
        match &self.sol.stop {
            Stop::Completed => None,
            Stop::DomainLimit { t, reason } => Some((*t, reason)),
        }
    }

    /// Solver nodes.
    pub fn nodes(&self) -> &[f64] {
        &self.sol.t
    }

    pub fn solution(&self) -> &Solution {
        &self.sol
    }

    pub fn state(&self, t: f64) -> Result<PhasePoint> {
        let y = self.sol.eval(t).ok_or_else(|| {
            Error::Domain(format!("t = {t} lies outside the geodesic record [0, {}]", self.t_end()))
        })?;
        let n = self.initial.dim();
        Ok(PhasePoint { x: y[..n].to_vec(), v: y[n..].to_vec() })
    }

    /// `(t, x, v)` rows sampled uniformly, endpoints included.
    pub fn sample(&self, count: usize) -> Vec<(f64, PhasePoint)> {
        let count = count.max(2);
        let end = self.t_end();
        (0..count)
            .map(|k| {
                let t = end * k as f64 / (count - 1) as f64;
                (t, self.state(t).expect("sample inside the record"))
            })
            .collect()
    }

    /// `max |ẍ − f(x, ẋ)|` at the midpoints of the solver steps, with `ẍ`
    /// read from the dense output.
    pub fn midpoint_residual(&self) -> Result<f64> {
        let n = self.initial.dim();
        let mut worst: f64 = 0.0;
        for w in self.sol.t.windows(2) {
            let t = 0.5 * (w[0] + w[1]);
            let d = self.sol.derivative(t).expect("midpoint inside record");
            let p = self.state(t)?;
            let f = self.model.eval_at(&p)?;
            worst = worst.max(linalg::max_abs_diff(&d[n..], &f));
        }
        Ok(worst)
    }
}

/// Right-hand side `(ẋ, f(x, ẋ))` of the geodesic equation.
pub(crate) fn geodesic_rhs(s: &SprayModel, y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = s.dim();
    let (x, v) = y.split_at(n);
    let f = s.coeffs(x, &v[..n])?;
    Ok((v[..n].to_vec(), f))
}

pub fn integrate_geodesic(s: &SprayModel, p0: &PhasePoint, t_end: f64, tol: Tolerance) -> Result<GeodesicRecord> {
    check_start(s, p0)?;
    let y0 = [p0.x.clone(), p0.v.clone()].concat();
    let sol = ode::integrate(
        |_, y| {
            let (v, f) = geodesic_rhs(s, y)?;
            Ok([v, f].concat())
        },
        0.0,
        &y0,
        t_end,
        &OdeOptions::from(tol),
    )?;
    Ok(GeodesicRecord { model: s.clone(), initial: p0.clone(), requested: t_end, sol })
}

pub(crate) fn check_start(s: &SprayModel, p0: &PhasePoint) -> Result<()> {
    if p0.dim() != s.dim() {
        return Err(Error::InvalidArgument(format!(
            "initial point has dimension {}, model {} has {}",
            p0.dim(),
            s.label(),
            s.dim()
        )));
    }
    s.eval_at(p0).map(|_| ())
}

/// The point at parameter `s_param` of the geodesic from `(x0, w)`.
pub fn exponential_map(s: &SprayModel, x0: &[f64], w: &[f64], s_param: f64, tol: Tolerance) -> Result<PhasePoint> {
    let p0 = PhasePoint::new(x0.to_vec(), w.to_vec())?;
    if s_param == 0.0 {
        check_start(s, &p0)?;
        return Ok(p0);
    }
    let rec = integrate_geodesic(s, &p0, s_param, tol)?;
    if let Some((t, reason)) = rec.truncation() {
        return Err(Error::Domain(format!("geodesic stops at t = {t}: {reason}")));
    }
    rec.state(s_param)
}

/// Transversal curves `u ↦ γ(u, s)` of the variation `γ(u, s) = exp s(v + u w)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Transversals {
    pub s_values: Vec<f64>,
    pub u_values: Vec<f64>,
    /// `points[i][j]` is the base point `γ(u_j, s_i)`.
    pub points: Vec<Vec<Vec<f64>>>,
    /// Central difference `(γ(δ, s) − γ(−δ, s)) / 2δ` at each `s`.
    pub variational_field: Vec<Vec<f64>>,
    pub delta: f64,
}

pub fn variation_transversals(
    s: &SprayModel,
    x0: &[f64],
    v: &[f64],
    w: &[f64],
    u_values: &[f64],
    s_values: &[f64],
    delta: f64,
    tol: Tolerance,
) -> Result<Transversals> {
    let s_max = s_values.iter().copied().fold(0.0, f64::max);
    let curve = |u: f64| -> Result<Vec<Vec<f64>>> {
        let dir: Vec<f64> = v.iter().zip(w).map(|(a, b)| a + u * b).collect();
        let p0 = PhasePoint::new(x0.to_vec(), dir)?;
        let rec = integrate_geodesic(s, &p0, s_max, tol)?;
        s_values.iter().map(|&t| rec.state(t).map(|p| p.x)).collect()
    };
    let by_u: Vec<Vec<Vec<f64>>> = u_values.iter().map(|&u| curve(u)).collect::<Result<_>>()?;
    let points = (0..s_values.len()).map(|i| by_u.iter().map(|c| c[i].clone()).collect()).collect();
    let plus = curve(delta)?;
    let minus = curve(-delta)?;
    let variational_field = plus
        .iter()
        .zip(&minus)
        .map(|(a, b)| a.iter().zip(b).map(|(p, m)| (p - m) / (2.0 * delta)).collect())
        .collect();
    Ok(Transversals {
        s_values: s_values.to_vec(),
        u_values: u_values.to_vec(),
        points,
        variational_field,
        delta,
    })
}

/// `θ(s)` with `θ'' + 2P(ċ(θ))θ'² = 0`, `θ(0) = 0`, `θ'(0) = 1`, so that
/// `s ↦ c(θ(s))` is a geodesic of the changed spray.
#[derive(Clone, Debug)]
pub struct Reparametrization {
    sol: Solution,
    factor: ProjectiveFactor,
}

impl Reparametrization {
    pub fn s_end(&self) -> f64 {
        self.sol.t_end()
    }

    pub fn stop(&self) -> &Stop {
        &self.sol.stop
    }

    pub fn nodes(&self) -> &[f64] {
        &self.sol.t
    }

    pub fn theta(&self, s: f64) -> Result<f64> {
        Ok(self.state(s)?.0)
    }

    pub fn theta_prime(&self, s: f64) -> Result<f64> {
        Ok(self.state(s)?.1)
    }

    fn state(&self, s: f64) -> Result<(f64, f64)> {
        let y = self
            .sol
            .eval(s)
            .ok_or_else(|| Error::Domain(format!("s = {s} lies outside the reparametrization [0, {}]", self.s_end())))?;
        Ok((y[0], y[1]))
    }

    /// `θ⁻¹(t)` by bisection on the monotone dense output.
    pub fn inverse(&self, t: f64) -> Result<f64> {
        let (mut lo, mut hi) = (0.0, self.s_end());
        if t < 0.0 || t > self.theta(hi)? {
            return Err(Error::Domain(format!("θ does not reach {t} on [0, {hi}]")));
        }
        while hi - lo > 1e-13 * hi.max(1.0) {
            let mid = 0.5 * (lo + hi);
            if self.theta(mid)? < t {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// `|θ'' + 2P(ċ(θ))θ'²|` at `s`, with `θ''` from the dense output of `θ'`.
    pub fn ode_residual(&self, c: &GeodesicRecord, s: f64) -> Result<f64> {
        let (theta, omega) = self.state(s)?;
        let d = self.sol.derivative(s).ok_or_else(|| Error::Domain(format!("s = {s} outside")))?;
        let p = c.state(theta)?;
        let big_p = self.factor.value(&p.x, &p.v)?;
        Ok((d[1] + 2.0 * big_p * omega * omega).abs())
    }
}

/// Solves the reparametrization equation along `c` for `s ∈ [0, s_end]`.
///
/// Integration stops early (without error) when `θ` leaves the span of `c`;
/// it fails if `θ'` stops being positive.
pub fn reparametrize(factor: &ProjectiveFactor, c: &GeodesicRecord, s_end: f64, tol: Tolerance) -> Result<Reparametrization> {
    let t_limit = c.t_end();
    let sol = ode::integrate(
        |_, y| {
            let (theta, omega) = (y[0], y[1]);
            if theta > t_limit || theta < 0.0 {
                return Err(Error::Domain(format!("θ = {theta} leaves the geodesic record")));
            }
            if omega <= 0.0 {
                return Err(Error::InvalidArgument("θ' is no longer positive".into()));
            }
            let p = c.state(theta)?;
            let big_p = factor.value(&p.x, &p.v)?;
            Ok(vec![omega, -2.0 * big_p * omega * omega])
        },
        0.0,
        &[0.0, 1.0],
        s_end,
        &OdeOptions::from(tol),
    )
    .map_err(|e| match e {
        Error::InvalidArgument(msg) => Error::Singular(msg),
        other => other,
    })?;
    Ok(Reparametrization { sol, factor: factor.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expression;

    fn shen() -> SprayModel {
        let f = ["-2*v2*sqrt(v1^2+v2^2)", "2*v1*sqrt(v1^2+v2^2)"]
            .iter()
            .map(|s| Expression::parse(s, 2, &[]).unwrap())
            .collect();
        SprayModel::from_formulas("shen", f, vec![]).unwrap()
    }

    #[test]
    fn euclidean_line() {
        let s = SprayModel::flat(2);
        let p0 = PhasePoint::new(vec![0.0, 0.0], vec![1.0, 0.0]).unwrap();
        let rec = integrate_geodesic(&s, &p0, 1.0, Tolerance::default()).unwrap();
        let end = rec.state(1.0).unwrap();
        assert!(linalg::max_abs_diff(&end.x, &[1.0, 0.0]) < 1e-14);
        let p = exponential_map(&s, &[1.0, 2.0], &[0.5, -1.0], 3.0, Tolerance::default()).unwrap();
        assert!(linalg::max_abs_diff(&p.x, &[2.5, -1.0]) < 1e-12);
        let p = exponential_map(&s, &[1.0, 2.0], &[0.5, -1.0], 0.0, Tolerance::default()).unwrap();
        assert_eq!(p.x, vec![1.0, 2.0]);
    }

    #[test]
    fn shen_circle_closes_after_pi() {
        let p0 = PhasePoint::new(vec![0.5, 0.0], vec![0.0, 1.0]).unwrap();
        let rec = integrate_geodesic(&shen(), &p0, std::f64::consts::PI, Tolerance::default()).unwrap();
        let dev = rec
            .sample(400)
            .iter()
            .map(|(_, p)| (linalg::norm(&p.x) - 0.5).abs())
            .fold(0.0, f64::max);
        assert!(dev < 1e-7, "{dev}");
        let end = rec.state(std::f64::consts::PI).unwrap();
        assert!(linalg::max_abs_diff(&end.x, &[0.5, 0.0]) < 1e-7);
        assert!(rec.midpoint_residual().unwrap() < 1e-6);
    }

    #[test]
    fn zero_factor_gives_identity() {
        let p0 = PhasePoint::new(vec![0.5, 0.0], vec![0.0, 1.0]).unwrap();
        let rec = integrate_geodesic(&shen(), &p0, 2.0, Tolerance::default()).unwrap();
        let zero = ProjectiveFactor::zero(2);
        let th = reparametrize(&zero, &rec, 1.5, Tolerance::default()).unwrap();
        for s in [0.0, 0.3, 1.1, 1.5] {
            assert!((th.theta(s).unwrap() - s).abs() < 1e-13);
        }
        assert!((th.inverse(0.7).unwrap() - 0.7).abs() < 1e-12);
    }
}
