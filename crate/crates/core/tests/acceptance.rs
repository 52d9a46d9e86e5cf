//! Acceptance suite: twelve numbered criteria, one PASS/FAIL line each.
//!
//! Run with `cargo test -p spraykit --test acceptance`; pass criterion
//! numbers as arguments to run a subset.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use spraykit::catalog::{self, r3_example, r3_factor, randers_a, randers_b, randers_c, shen, shen_projective_factor};
use spraykit::finsler::{arc_length, arc_length_bridged, geodesic_spray};
use spraykit::flow::integrate_geodesic;
use spraykit::jacobi::{
    covariant_derivative, find_conjugate_points, integrate_jacobi_to, jacobi_residual, parallel_transport,
    proposition1_predict, Applicability, ConjugateOptions, ConjugateReport, DetectionMethod, Prop1Options,
};
use spraykit::linalg::{self, Mat};
use spraykit::projective::{
    apply_change, changed_flow_derivative, diagonalizability_report, nabla_tilde_crosscheck, phi_tilde_crosscheck,
    projective_data, residual_t0, residual_t1, residual_t2, residual_t2i, verify_conjugate_preservation,
    PreservationOptions, ProjectiveFactor,
};
use spraykit::spray::{
    bracket_residual_on, connection, eigen_analysis, eigen_flow_derivative, jacobi_endomorphism, random_points,
    random_points_where, verify_spray, FormulaField,
};
use spraykit::{Error, Expression, FinslerModel, PhasePoint, SprayModel, Tolerance};

type Outcome = Result<(), Error>;

struct Check {
    what: String,
    detail: String,
    pass: bool,
}

#[derive(Default)]
struct Report {
    checks: Vec<Check>,
    refuted: usize,
}

impl Report {
    /// `value < bound`.
    fn below(&mut self, what: impl Into<String>, value: f64, bound: f64) {
        self.checks.push(Check {
            what: what.into(),
            detail: format!("{value:.3e} < {bound:.1e}"),
            pass: value < bound,
        });
    }

    /// `value > bound`.
    fn above(&mut self, what: impl Into<String>, value: f64, bound: f64) {
        self.checks.push(Check {
            what: what.into(),
            detail: format!("{value:.3e} > {bound:.1e}"),
            pass: value > bound,
        });
    }

    fn near(&mut self, what: impl Into<String>, value: f64, target: f64, tol: f64) {
        self.checks.push(Check {
            what: what.into(),
            detail: format!("{value:.12} vs {target:.12} (|Δ| = {:.3e}, tol {tol:.1e})", (value - target).abs()),
            pass: (value - target).abs() < tol,
        });
    }

    /// A stated closed form that the computation contradicts: passes when
    /// the literal comparison `value < bound` fails, and is reported as such.
    fn refuted(&mut self, what: impl Into<String>, value: f64, bound: f64, evidence: impl Into<String>) {
        self.checks.push(Check {
            what: what.into(),
            detail: format!("REFUTED: {value:.3e} ≥ {bound:.1e}; {}", evidence.into()),
            pass: value >= bound,
        });
        self.refuted += 1;
    }

    fn truth(&mut self, what: impl Into<String>, pass: bool, detail: impl Into<String>) {
        self.checks.push(Check { what: what.into(), detail: detail.into(), pass });
    }
}

fn progress(what: &str) {
    if std::env::var_os("ACCEPTANCE_VERBOSE").is_some() {
        eprintln!("      .. {what}");
    }
}

fn pt(x: &[f64], v: &[f64]) -> PhasePoint {
    PhasePoint::new(x.to_vec(), v.to_vec()).expect("valid phase point")
}

fn tol() -> Tolerance {
    Tolerance::default()
}

/// Catalog sprays with representative parameters and an initial point
/// whose geodesic stays admissible on `[0, 5]`.
fn catalog_sprays() -> Vec<(SprayModel, PhasePoint)> {
    let fin = |m: FinslerModel| geodesic_spray(&m);
    vec![
        (catalog::euclidean(2), pt(&[0.0, 0.0], &[1.0, 0.5])),
        (catalog::euclidean(3), pt(&[0.0, 1.0, 0.0], &[0.2, 0.5, -0.3])),
        (r3_example(), pt(&[0.0, 0.0, 0.0], &[0.3, -0.2, 0.1])),
        (shen(1.0).unwrap(), pt(&[0.5, 0.0], &[0.0, 1.0])),
        (shen(0.5).unwrap(), pt(&[0.2, 0.1], &[0.3, 0.4])),
        (fin(randers_a(0.0).unwrap()), pt(&[0.1, 0.2], &[0.3, -0.1])),
        (fin(randers_a(1.0).unwrap()), pt(&[0.5, 0.0], &[0.0, 0.5])),
        (fin(randers_b(0.0).unwrap()), pt(&[1.0, 0.0], &[0.0, 1.0])),
        (fin(randers_b(0.75).unwrap()), pt(&[0.5, 0.0], &[0.0, 1.0])),
        (fin(randers_b(1.0).unwrap()), pt(&[2f64.sqrt() - 1.0, 0.0], &[0.0, 0.6])),
        (fin(randers_c(1.0).unwrap()), pt(&[0.0, 0.0], &[0.1, 0.0])),
    ]
}

/// Five-point central difference of a vector function of one variable.
fn diff5(g: impl Fn(f64) -> Vec<f64>, h: f64) -> Vec<f64> {
    let s: Vec<Vec<f64>> = [-2.0, -1.0, 1.0, 2.0].iter().map(|k| g(k * h)).collect();
    (0..s[0].len()).map(|i| (s[0][i] - 8.0 * s[1][i] + 8.0 * s[2][i] - s[3][i]) / (12.0 * h)).collect()
}

fn fd_connection(s: &SprayModel, x: &[f64], v: &[f64]) -> Mat<f64> {
    let n = x.len();
    let mut g = Mat::zeros(n, n);
    for j in 0..n {
        let col = diff5(
            |t| {
                let mut w = v.to_vec();
                w[j] += t;
                s.coeffs(x, &w).expect("admissible")
            },
            1e-3,
        );
        for i in 0..n {
            g[(i, j)] = -0.5 * col[i];
        }
    }
    g
}

fn fd_phi(s: &SprayModel, x: &[f64], v: &[f64]) -> Mat<f64> {
    let n = x.len();
    let f = s.coeffs(x, v).expect("admissible");
    let gamma = fd_connection(s, x, v);
    let s_gamma = Mat::square(diff5(
        |t| {
            let xs: Vec<f64> = (0..n).map(|i| x[i] + t * v[i]).collect();
            let vs: Vec<f64> = (0..n).map(|i| v[i] + t * f[i]).collect();
            fd_connection(s, &xs, &vs).into_vec()
        },
        1e-3,
    ));
    let mut dfdx = Mat::zeros(n, n);
    for j in 0..n {
        let col = diff5(
            |t| {
                let mut y = x.to_vec();
                y[j] += t;
                s.coeffs(&y, v).expect("admissible")
            },
            1e-3,
        );
        for i in 0..n {
            dfdx[(i, j)] = col[i];
        }
    }
    &(&dfdx.scale(-1.0) - &(&gamma * &gamma)) - &s_gamma
}

fn rel(diff: f64, scale: f64) -> f64 {
    diff / scale.max(1e-8)
}

fn criterion_1(r: &mut Report) -> Outcome {
    for (s, _) in catalog_sprays() {
        let pts = random_points_where(s.dim(), 100, 0.7, 11, |p| linalg::norm(&p.x) <= 0.7 && s.admits(p));
        r.truth(format!("{}: 100 admissible samples", s.label()), pts.len() == 100, format!("{}", pts.len()));
        let (mut eg, mut ep, mut ev, mut ef) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for p in &pts {
            let g = connection(&s, p)?;
            let phi = jacobi_endomorphism(&s, p)?;
            eg = eg.max(rel((&g - &fd_connection(&s, &p.x, &p.v)).norm(), g.norm()));
            ep = ep.max(rel((&phi - &fd_phi(&s, &p.x, &p.v)).norm(), phi.norm()));
            let vn = linalg::norm(&p.v);
            ev = ev.max(linalg::norm(&phi.mul_vec(&p.v)) / (phi.norm() * vn).max(1e-300));
            let f = s.eval_at(p)?;
            let gv: Vec<f64> = g.mul_vec(&p.v).iter().zip(&f).map(|(a, b)| a + b).collect();
            ef = ef.max(linalg::norm(&gv) / linalg::norm(&f).max(1e-300));
        }
        r.below(format!("{}: Γ vs finite differences (rel)", s.label()), eg, 1e-6);
        r.below(format!("{}: Φ vs finite differences (rel)", s.label()), ep, 1e-6);
        r.below(format!("{}: Φ·v (rel)", s.label()), ev, 1e-10);
        r.below(format!("{}: Γ·v + f (rel)", s.label()), ef, 1e-10);
    }
    Ok(())
}

fn criterion_2(r: &mut Report) -> Outcome {
    for (s, _) in catalog_sprays() {
        let pts = random_points(&s, 100, 0.7, 12);
        let rep = verify_spray(&s, &pts)?;
        r.below(format!("{}: f(x,kv) = k²f(x,v), k ∈ {{½,2}} (rel)", s.label()), rep.homogeneity_rel, 1e-12);
        let mut worst: f64 = 0.0;
        let mut branches = 0;
        for p in pts.iter().take(30) {
            let spec = eigen_analysis(&s, p)?;
            for b in spec.nonzero_branches() {
                if b.value.abs() < 1e-8 || b.gap < 1e-6 * spec.phi.norm() {
                    continue;
                }
                for k in [0.5, 2.0, 3.0] {
                    let q = p.scaled(k);
                    let Ok(sk) = eigen_analysis(&s, &q) else { continue };
                    let Some(bk) = sk.nearest(k * k * b.value) else { continue };
                    branches += 1;
                    worst = worst.max((bk.value - k * k * b.value).abs() / (k * k * b.value.abs()));
                }
            }
        }
        r.below(format!("{}: λ(x,kv) = k²λ(x,v) over {branches} branch samples (rel)", s.label()), worst, 1e-8);
    }
    Ok(())
}

fn criterion_3(r: &mut Report) -> Outcome {
    for (s, p0) in catalog_sprays() {
        progress(s.label());
        let n = s.dim();
        let k0 = Mat::from_row_major(n, 1, p0.v.clone());
        let sol = integrate_jacobi_to(&s, &p0, &Mat::zeros(n, 1), &k0, 5.0, tol())?;
        r.truth(format!("{}: geodesic admissible on [0, 5]", s.label()), sol.t_end() >= 5.0, format!("t_end = {}", sol.t_end()));
        let mut worst: f64 = 0.0;
        for i in 1..=500 {
            let t = 5.0 * i as f64 / 500.0;
            let j = sol.j(t)?.column(0);
            let v = sol.state(t)?.v;
            let expect: Vec<f64> = v.iter().map(|c| t * c).collect();
            worst = worst.max(linalg::norm(&linalg::sub(&j, &expect)) / linalg::norm(&expect));
        }
        r.below(format!("{}: J(t) = t ċ(t) on [0, 5] (rel)", s.label()), worst, 1e-6);
    }
    Ok(())
}

fn criterion_4(r: &mut Report) -> Outcome {
    let s = geodesic_spray(&randers_b(0.0)?);
    let p0 = pt(&[1.0, 0.0], &[0.0, 1.0]);
    let c = integrate_geodesic(&s, &p0, 4.0, tol())?;
    let mut lam: f64 = 0.0;
    let mut radial: f64 = 0.0;
    for (_, p) in c.sample(401) {
        let spec = eigen_analysis(&s, &p)?;
        lam = lam.max((spec.leading().expect("nonzero branch").value - 1.0).abs());
        radial = radial.max((linalg::norm(&p.x) - 1.0).abs());
    }
    r.below("unit circle is a geodesic (radial deviation)", radial, 1e-6);
    r.below("|λ − 1| along c", lam, 1e-8);
    let tr = parallel_transport(&s, &p0, &[1.0, 0.0], 4.0, tol())?;
    let mut dev: f64 = 0.0;
    for i in 0..=400 {
        let t = 4.0 * i as f64 / 400.0;
        dev = dev.max(linalg::max_abs_diff(&tr.vector(t)?, &[t.cos(), t.sin()]));
    }
    r.below("V(t) = (cos t, sin t)", dev, 1e-6);
    let rep = find_conjugate_points(&s, &p0, 4.0, &ConjugateOptions::default())?;
    match rep.first() {
        Some(first) => r.near("first conjugate time", first.t, PI, 1e-6),
        None => r.truth("first conjugate time", false, "none found"),
    }
    Ok(())
}

fn criterion_5(r: &mut Report) -> Outcome {
    let s = geodesic_spray(&randers_b(0.75)?);
    let tau: f64 = 0.75;
    let radii = [(1.0 / (tau + (tau * tau + 1.0).sqrt())).abs(), (1.0 / (tau - (tau * tau + 1.0).sqrt())).abs()];
    r.near("radius formula, + branch", radii[0], 0.5, 1e-15);
    r.near("radius formula, − branch", radii[1], 2.0, 1e-15);
    // The radius ½ circle runs counter-clockwise, the radius 2 circle clockwise.
    for (radius, p0) in [(0.5, pt(&[0.5, 0.0], &[0.0, 1.0])), (2.0, pt(&[2.0, 0.0], &[0.0, -1.0]))] {
        let lambda0 = eigen_analysis(&s, &p0)?.leading().expect("nonzero branch").value;
        let t_conj = PI / lambda0.sqrt();
        let t_max = 1.25 * t_conj;
        let c = integrate_geodesic(&s, &p0, t_max, tol())?;
        let mut radial: f64 = 0.0;
        let mut s_lambda: f64 = 0.0;
        for (_, p) in c.sample(301) {
            radial = radial.max((linalg::norm(&p.x) - radius).abs());
            let spec = eigen_analysis(&s, &p)?;
            let b = spec.leading().expect("nonzero branch");
            s_lambda = s_lambda.max(eigen_flow_derivative(&s, &p, b)?.abs());
        }
        r.below(format!("r = {radius}: radial deviation"), radial, 1e-6);
        r.below(format!("r = {radius}: |S(λ)| along c"), s_lambda, 1e-7);
        let rep = find_conjugate_points(&s, &p0, t_max, &ConjugateOptions::default())?;
        match rep.first() {
            Some(first) => r.near(format!("r = {radius}: first conjugate time vs π/√λ (λ = {lambda0:.6})"), first.t, t_conj, 1e-5),
            None => r.truth(format!("r = {radius}: first conjugate time"), false, "none found"),
        }
    }
    Ok(())
}

fn criterion_6(r: &mut Report) -> Outcome {
    let s = r3_example();
    let mut eig: f64 = 0.0;
    for p in random_points(&s, 50, 1.0, 6) {
        let zd = p.v[2];
        if zd.abs() < 0.1 {
            continue;
        }
        let phi = jacobi_endomorphism(&s, &p)?;
        let spec = eigen_analysis(&s, &p)?;
        let b = spec.nearest(zd * zd / 2.0).expect("branch");
        for x in &b.right_basis {
            let res: Vec<f64> = phi.mul_vec(x).iter().zip(x).map(|(a, c)| a - zd * zd / 2.0 * c).collect();
            eig = eig.max(linalg::norm(&res));
        }
    }
    r.below("λ = ż²/2 is an eigenvalue (‖ΦX − λX‖)", eig, 1e-9);

    for zd in [1.0, 2.0] {
        let p = pt(&[0.1, -0.2, 0.3], &[0.3, -0.2, zd]);
        let spec = eigen_analysis(&s, &p)?;
        let b = spec.nearest(zd * zd / 2.0).expect("branch").clone();
        for a in [0.0, 0.25, 0.5, 1.0] {
            let f = r3_factor(a)?;
            let t1 = residual_t1(&s, &f, &p, &b)?;
            let expect = zd.powi(3) * (4.0 * a * a * a - 6.0 * a * a + 4.0 * a - 1.0);
            r.near(format!("T1 at A = {a}, ż = {zd}"), t1, expect, 1e-9);
        }
        let half = r3_factor(0.5)?;
        let changed = apply_change(&s, &half)?;
        let lt = eigen_analysis(&changed, &p)?.leading().expect("branch").value;
        r.near(format!("λ̃ = ż²/4 at ż = {zd}"), lt, zd * zd / 4.0, 1e-9);
        r.below(format!("S̃(λ̃) at ż = {zd}"), changed_flow_derivative(&s, &half, &p, &b)?.abs(), 1e-9);
        let t2 = residual_t2(&s, &half, &p, &b)?;
        r.below(format!("T2 at A = ½, ż = {zd}"), t2.residual, 1e-7);
        r.below(format!("T2 with the opposite ∇b sign at A = ½, ż = {zd}"), t2.stated, 1e-7);
    }

    let changed = apply_change(&s, &r3_factor(0.5)?)?;
    let p0 = pt(&[0.0, 0.0, 0.0], &[1.0, 0.0, 1.0]);
    let rep = find_conjugate_points(&changed, &p0, 13.5, &ConjugateOptions::default())?;
    let times = rep.times();
    r.truth("S̃ has two conjugate points on [0, 13.5]", times.len() == 2, format!("{times:?}"));
    if times.len() >= 2 {
        r.near("first S̃ conjugate time", times[0], 2.0 * PI, 1e-4);
        r.near("S̃ conjugate spacing", times[1] - times[0], 2.0 * PI, 1e-4);
    }
    Ok(())
}

fn randers_a_circle(t: f64) -> spraykit::Result<PhasePoint> {
    Ok(PhasePoint { x: vec![0.5 * t.cos(), 0.5 * t.sin()], v: vec![-0.5 * t.sin(), 0.5 * t.cos()] })
}

fn criterion_7(r: &mut Report) -> Outcome {
    let s = shen(1.0)?;
    let factor = shen_projective_factor(1.0)?;
    let p0 = pt(&[0.5, 0.0], &[0.0, 1.0]);
    let c = integrate_geodesic(&s, &p0, PI, tol())?;
    let dev = c.sample(1001).iter().map(|(_, p)| (linalg::norm(&p.x) - 0.5).abs()).fold(0.0, f64::max);
    r.below("Shen geodesic stays on the radius ½ circle", dev, 1e-7);
    r.below("Shen geodesic closes after π", linalg::max_abs_diff(&c.state(PI)?.x, &[0.5, 0.0]), 1e-7);

    let (mut bracket, mut t2i) = (f64::INFINITY, 0.0f64);
    for (_, p) in c.sample(25) {
        let spec = eigen_analysis(&s, &p)?;
        bracket = bracket.min(bracket_residual_on(&s, &p, spec.leading().expect("branch"))?);
        t2i = t2i.max(residual_t2i(&s, &factor, &p)?);
    }
    r.above("bracket residual of S on the circle (min)", bracket, 0.01);
    r.below("T2i with the catalog factor on the circle (max)", t2i, 1e-6);

    let changed = apply_change(&s, &factor)?;
    let target = geodesic_spray(&randers_a(1.0)?);
    let pts = random_points_where(2, 100, 0.7, 7, |p| changed.admits(p) && target.admits(p));
    let mut worst: f64 = 0.0;
    for p in &pts {
        let a = changed.eval_at(p)?;
        let b = target.eval_at(p)?;
        worst = worst.max(linalg::norm(&linalg::sub(&a, &b)) / linalg::norm(&b).max(1e-300));
    }
    r.truth("100 common admissible points", pts.len() == 100, format!("{}", pts.len()));
    r.below("S − 2PΔ equals the randersA(1) spray (rel)", worst, 1e-8);

    let q0 = pt(&[0.5, 0.0], &[0.0, 0.5]);
    let rep = find_conjugate_points(&changed, &q0, 7.0, &ConjugateOptions::default())?;
    let times = rep.times();
    r.truth("two conjugate points on [0, 7]", times.len() == 2, format!("{times:?}"));
    for (k, t) in times.iter().enumerate().take(2) {
        r.near(format!("conjugate time {}", k + 1), *t, (k + 1) as f64 * PI, 1e-5);
    }

    let j = |t: f64| Ok(vec![t.sin() * t.cos(), t.sin() * t.sin()]);
    r.below("closed-form J(t) solves the Jacobi equation", jacobi_residual(&changed, &randers_a_circle, j, 0.0, 2.0 * PI, 400)?, 1e-6);
    let dj0 = covariant_derivative(&changed, &randers_a_circle, j, 0.0)?;
    r.below("∇J(0) = ∂/∂x", linalg::max_abs_diff(&dj0, &[1.0, 0.0]), 1e-6);
    Ok(())
}

fn preservation(r: &mut Report, name: &str, s: &SprayModel, f: &ProjectiveFactor, p0: &PhasePoint, window: f64) -> Outcome {
    let rep = verify_conjugate_preservation(s, f, p0, window, &PreservationOptions::default())?;
    r.below(format!("{name}: |θ(s1) − t1| (t1 = {:.9}, s1 = {:.9})", rep.t1, rep.s1), rep.parameter_error, 1e-5);
    r.below(format!("{name}: |c(t1) − c̃(s1)|"), rep.base_point_error, 1e-6);
    Ok(())
}

fn criterion_8(r: &mut Report) -> Outcome {
    let s = shen(1.0)?;
    let f = shen_projective_factor(1.0)?;
    let p0 = pt(&[0.5, 0.0], &[0.0, 0.5]);
    preservation(r, "shen(1) from ((½,0),(0,½))", &s, &f, &p0, 4.0)?;
    let rep = verify_conjugate_preservation(&s, &f, &p0, 4.0, &PreservationOptions::default())?;
    r.below("shen(1): conjugate base point is the antipode (−½, 0)", linalg::max_abs_diff(&rep.x_t1, &[-0.5, 0.0]), 1e-6);
    preservation(r, "shen(1) from ((0.3,0.1),(0.2,0.6))", &s, &f, &pt(&[0.3, 0.1], &[0.2, 0.6]), 6.0)?;
    preservation(r, "r3 with A = ½ from ż(0) = 1", &r3_example(), &r3_factor(0.5)?, &pt(&[0.0, 0.0, 0.0], &[1.0, 0.0, 1.0]), 0.999)?;
    Ok(())
}

/// Every projective pair of the catalog, plus the zero factor.
fn projective_pairs() -> Vec<(SprayModel, ProjectiveFactor)> {
    let mut out = vec![
        (shen(1.0).unwrap(), shen_projective_factor(1.0).unwrap()),
        (shen(0.5).unwrap(), shen_projective_factor(0.5).unwrap()),
        (r3_example(), ProjectiveFactor::zero(3)),
        (shen(1.0).unwrap(), ProjectiveFactor::zero(2)),
        (
            shen(1.0).unwrap(),
            ProjectiveFactor::new("linear", Expression::parse("0.3*(x1*v1 + x2*v2) - 0.2*v2", 2, &[]).unwrap()).unwrap(),
        ),
    ];
    for a in [0.25, 0.5, 1.0] {
        out.push((r3_example(), r3_factor(a).unwrap()));
    }
    out
}

fn criterion_9(r: &mut Report) -> Outcome {
    for (s, f) in projective_pairs() {
        let n = s.dim();
        let changed = apply_change(&s, &f)?;
        let pts = random_points_where(n, 100, 0.7, 9, |p| changed.admits(p) && s.admits(p) && f.value(&p.x, &p.v).is_ok());
        let name = format!("{} + {}", s.label(), f.label());
        let mut fields: Vec<FormulaField> = (0..n)
            .map(|k| {
                FormulaField((0..n).map(|i| Expression::parse(if i == k { "1" } else { "0" }, n, &[]).unwrap()).collect())
            })
            .collect();
        let curved = if n == 2 { vec!["x2*v1 + v2^2", "sin(x1)*v1"] } else { vec!["x2*v1", "v3^2 + x1", "cos(x3)*v2"] };
        fields.push(FormulaField(curved.iter().map(|e| Expression::parse(e, n, &[]).unwrap()).collect()));
        let (mut phi, mut nabla, mut bt, mut shift) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        let (mut evaluated, mut agree, mut holding) = (0, 0, 0);
        for p in &pts {
            let scale = 1.0 + jacobi_endomorphism(&s, p)?.norm();
            phi = phi.max(phi_tilde_crosscheck(&s, &f, p)? / scale);
            for x in &fields {
                nabla = nabla.max(nabla_tilde_crosscheck(&s, &f, p, x)? / scale);
            }
            let data = projective_data(&s, &f, p)?;
            bt = bt.max(data.b_of_t_residual(&p.v).abs());
            let spec = eigen_analysis(&s, p)?;
            let spec_t = eigen_analysis(&changed, p)?;
            for b in spec.nonzero_branches() {
                let target = b.value + data.a;
                if let Some(bt) = spec_t.nearest(target) {
                    shift = shift.max((bt.value - target).abs() / scale);
                    if let (Ok(t0), Ok(direct)) = (residual_t0(&s, &f, p, b), bracket_residual_on(&changed, p, bt)) {
                        evaluated += 1;
                        agree += usize::from((t0 < 1e-6) == (direct < 1e-6));
                        holding += usize::from(direct < 1e-6);
                    }
                }
            }
        }
        r.truth(
            format!("{name}: T0 < 1e-6 exactly when the bracket of S̃ vanishes"),
            evaluated > 0 && agree == evaluated,
            format!("{agree} of {evaluated} branches agree, bracket holds on {holding}"),
        );
        r.truth(format!("{name}: 100 admissible samples"), pts.len() == 100, format!("{}", pts.len()));
        r.below(format!("{name}: Φ̃ direct vs Φ + aI + v⊗b"), phi, 1e-7);
        r.below(format!("{name}: ∇̃X direct vs transformation law"), nabla, 1e-7);
        r.below(format!("{name}: b(T) + a"), bt, 1e-9);
        r.below(format!("{name}: eigenvalue shift λ → λ + a"), shift, 1e-7);
        let diag = diagonalizability_report(&s, &f, &pts[0])?;
        r.below(format!("{name}: transformed eigenvectors (λ+a)X + b(X)v"), diag.max_residual, 1e-8);
    }
    Ok(())
}

fn criterion_10(r: &mut Report) -> Outcome {
    let eps: f64 = 0.1;
    let fa = randers_a(1.0)?;
    let long = arc_length(&fa, &randers_a_circle, 0.0, PI + eps, 2000)?;
    r.near("class A: length of c on [0, π+ε]", long, (PI + eps) / 8.0, 1e-6);
    // The second radius ½ circle through p = c(0) and q = c(π+ε) is centred
    // at p + q; it reaches q counter-clockwise along its minor arc.
    let p = [0.5, 0.0];
    let q = [0.5 * (PI + eps).cos(), 0.5 * (PI + eps).sin()];
    let m = [p[0] + q[0], p[1] + q[1]];
    let arc = move |t: f64| -> spraykit::Result<PhasePoint> {
        Ok(PhasePoint { x: vec![m[0] + 0.5 * t.cos(), m[1] + 0.5 * t.sin()], v: vec![-0.5 * t.sin(), 0.5 * t.cos()] })
    };
    r.below("class A: complementary arc starts at p", linalg::max_abs_diff(&arc(eps)?.x, &p), 1e-15);
    r.below("class A: complementary arc ends at q", linalg::max_abs_diff(&arc(PI)?.x, &q), 1e-15);
    // F varies along this arc, so the geodesic traces it with a different
    // parametrization: compare point sets and locate q by its polar angle.
    let sa = geodesic_spray(&fa);
    let g = integrate_geodesic(&sa, &arc(eps)?, 2.0 * PI, tol())?;
    let angle = |t: f64| -> f64 {
        let x = g.state(t).expect("inside record").x;
        (x[1] - m[1]).atan2(x[0] - m[0])
    };
    let mut t_q = f64::NAN;
    let mut drift: f64 = 0.0;
    let steps = 4000;
    for i in 0..steps {
        let (a, b) = (2.0 * PI * i as f64 / steps as f64, 2.0 * PI * (i + 1) as f64 / steps as f64);
        let x = g.state(a)?.x;
        drift = drift.max((linalg::norm(&[x[0] - m[0], x[1] - m[1]]) - 0.5).abs());
        // The polar angle wraps from π to −π when the arc reaches q.
        if angle(a) > 0.0 && angle(b) < 0.0 {
            let (mut lo, mut hi) = (a, b);
            while hi - lo > 1e-13 {
                let mid = 0.5 * (lo + hi);
                if angle(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            t_q = lo;
            break;
        }
    }
    r.below("class A: geodesic from p stays on the complementary circle", drift, 1e-7);
    let reach = if t_q.is_nan() { f64::INFINITY } else { linalg::max_abs_diff(&g.state(t_q)?.x, &q) };
    r.below("class A: geodesic from p along the complementary circle reaches q", reach, 1e-7);
    let short = arc_length(&fa, &arc, eps, PI, 2000)?;
    r.near("class A: complementary length", short, (2.0 * eps.sin() + PI - eps) / 8.0, 1e-6);

    let fc = randers_c(1.0)?;
    let horocycle = |t: f64| -> spraykit::Result<PhasePoint> {
        Ok(PhasePoint { x: vec![0.5 * t.sin(), 0.5 * (1.0 - t.cos())], v: vec![0.5 * t.cos(), 0.5 * t.sin()] })
    };
    let bridged = arc_length_bridged(&fc, &horocycle, 0.0, PI + eps, 4000)?;
    r.truth("class C: one excluded window around t = π", bridged.windows.len() == 1, format!("{:?}", bridged.windows));
    r.near("class C: length of c on [0, π+ε]", bridged.length, (PI + eps) / 4.0, 1e-5);
    // Rotating c by ε gives the other horocycle from the origin to c(π+ε).
    let (ce, se) = (eps.cos(), eps.sin());
    let rotated = move |t: f64| -> spraykit::Result<PhasePoint> {
        let p = horocycle(t)?;
        Ok(PhasePoint {
            x: vec![ce * p.x[0] - se * p.x[1], se * p.x[0] + ce * p.x[1]],
            v: vec![ce * p.v[0] - se * p.v[1], se * p.v[0] + ce * p.v[1]],
        })
    };
    r.below("class C: rotated horocycle ends at c(π+ε)", linalg::max_abs_diff(&rotated(PI - eps)?.x, &horocycle(PI + eps)?.x), 1e-15);
    let sc = geodesic_spray(&fc);
    let g = integrate_geodesic(&sc, &rotated(0.0)?, PI - eps, tol())?;
    r.below("class C: rotated horocycle is a geodesic", linalg::max_abs_diff(&g.state(PI - eps)?.x, &rotated(PI - eps)?.x), 1e-7);
    let short = arc_length(&fc, &rotated, 0.0, PI - eps, 2000)?;
    r.near("class C: length of the shorter geodesic", short, (PI - eps) / 4.0, 1e-5);
    Ok(())
}

fn criterion_11(r: &mut Report) -> Outcome {
    let s = geodesic_spray(&randers_c(1.0)?);
    let p0 = pt(&[0.0, 0.0], &[0.5, 0.0]);
    let span = PI - 0.1;
    let c = integrate_geodesic(&s, &p0, span, tol())?;
    let (mut lam, mut on_curve) = (0.0f64, 0.0f64);
    for (t, p) in c.sample(301) {
        on_curve = on_curve.max(linalg::max_abs_diff(&p.x, &[0.5 * t.sin(), 0.5 * (1.0 - t.cos())]));
        let spec = eigen_analysis(&s, &p)?;
        lam = lam.max((spec.leading().expect("branch").value - 0.25).abs());
    }
    r.below("geodesic is the horocycle ½(sin t, 1 − cos t)", on_curve, 1e-7);
    r.below("|λ − ¼| on [0, π − 0.1]", lam, 1e-6);
    // The closed form below, with V(0) = (−1, 1), is stated for this curve
    // but is neither parallel nor an eigenvector field of Φ. The literal
    // comparison is kept and reported as refuted; the corrected closed forms
    // are asserted at the same tolerance.
    let stated = |t: f64| {
        let k = (t.sin() + 1.0).sqrt();
        vec![-k, t.cos() / k]
    };
    let grid = |i: usize| span * i as f64 / 400.0;
    let tr = parallel_transport(&s, &p0, &[-1.0, 1.0], span, tol())?;
    let (mut literal, mut corrected) = (0.0f64, 0.0f64);
    for i in 0..=400 {
        let t = grid(i);
        let v = tr.vector(t)?;
        literal = literal.max(linalg::max_abs_diff(&v, &stated(t)));
        corrected = corrected.max(linalg::max_abs_diff(&v, &[-(t / 2.0).sin() - t.cos(), (t / 2.0).cos() - t.sin()]));
    }
    let h = 1e-5;
    let dv: Vec<f64> = (0..2).map(|i| (stated(h)[i] - stated(-h)[i]) / (2.0 * h)).collect();
    let gamma = connection(&s, &p0)?;
    let not_parallel = linalg::norm(&linalg::sub(&dv, &gamma.mul_vec(&stated(0.0)).iter().map(|c| -c).collect::<Vec<_>>()));
    let phi = jacobi_endomorphism(&s, &p0)?;
    let not_eigen = linalg::norm(&linalg::sub(&phi.mul_vec(&stated(0.0)), &[-0.25, 0.25]));
    r.refuted(
        "transport of (−1, 1) equals (−√(sin t + 1), cos t/√(sin t + 1))",
        literal,
        1e-5,
        format!("stated field has |V′ + ΓV| = {not_parallel:.3} and |ΦV − ¼V| = {not_eigen:.3} at t = 0"),
    );
    r.below("transport of (−1, 1) equals (−sin(t/2) − cos t, cos(t/2) − sin t)", corrected, 1e-5);
    let tr = parallel_transport(&s, &p0, &[0.0, 1.0], span, tol())?;
    let (mut dev, mut eig) = (0.0f64, 0.0f64);
    for i in 0..=400 {
        let t = grid(i);
        dev = dev.max(linalg::max_abs_diff(&tr.vector(t)?, &[-(t / 2.0).sin(), (t / 2.0).cos()]));
        eig = eig.max(tr.eigen_residual(t)?.0);
    }
    r.below("parallel eigenvector field V(t) = (−sin(t/2), cos(t/2))", dev, 1e-5);
    r.below("‖ΦV − ¼V‖/‖V‖ along the transported eigenvector", eig, 1e-6);
    let pred = proposition1_predict(&s, &p0, 2.0 * PI, &Prop1Options::default())?;
    r.near("λ0", pred.lambda0, 0.25, 1e-9);
    match &pred.status {
        Applicability::Partial { t_fail, reason } => {
            r.below(format!("partial applicability, t_fail ({reason})"), *t_fail, 1.5 * PI);
        }
        other => r.truth("partial applicability", false, format!("{other:?}")),
    }
    r.near("predicted spacing π/√λ0", pred.times.first().copied().unwrap_or(f64::NAN), 2.0 * PI, 1e-9);
    Ok(())
}

struct Case {
    name: &'static str,
    spray: SprayModel,
    p0: PhasePoint,
    t_max: f64,
}

fn property_cases() -> Vec<Case> {
    let fin = |m: FinslerModel| geodesic_spray(&m);
    let r2 = 2f64.sqrt() - 1.0;
    vec![
        Case { name: "randersA(1) circle", spray: fin(randers_a(1.0).unwrap()), p0: pt(&[0.5, 0.0], &[0.0, 0.5]), t_max: 7.0 },
        Case { name: "randersB(0) equator", spray: fin(randers_b(0.0).unwrap()), p0: pt(&[1.0, 0.0], &[0.0, 1.0]), t_max: 7.0 },
        Case { name: "randersB(¾) r = ½", spray: fin(randers_b(0.75).unwrap()), p0: pt(&[0.5, 0.0], &[0.0, 1.0]), t_max: 7.0 },
        Case { name: "randersB(¾) r = 2", spray: fin(randers_b(0.75).unwrap()), p0: pt(&[2.0, 0.0], &[0.0, -1.0]), t_max: 7.0 },
        Case { name: "randersB(1) r = √2 − 1", spray: fin(randers_b(1.0).unwrap()), p0: pt(&[r2, 0.0], &[0.0, 1.0]), t_max: 7.0 },
        Case {
            name: "shen(1) changed",
            spray: apply_change(&shen(1.0).unwrap(), &shen_projective_factor(1.0).unwrap()).unwrap(),
            p0: pt(&[0.5, 0.0], &[0.0, 0.5]),
            t_max: 7.0,
        },
        Case { name: "shen(1)", spray: shen(1.0).unwrap(), p0: pt(&[0.5, 0.0], &[0.0, 1.0]), t_max: 4.0 },
        Case {
            name: "r3 changed, A = ½",
            spray: apply_change(&r3_example(), &r3_factor(0.5).unwrap()).unwrap(),
            p0: pt(&[0.0, 0.0, 0.0], &[1.0, 0.0, 1.0]),
            t_max: 13.5,
        },
    ]
}

fn criterion_12(r: &mut Report) -> Outcome {
    for case in property_cases() {
        let opts = ConjugateOptions::default();
        let rep: ConjugateReport = find_conjugate_points(&case.spray, &case.p0, case.t_max, &opts)?;
        r.truth(format!("{}: conjugate points found", case.name), !rep.points.is_empty(), format!("{:?}", rep.times()));
        for p in &rep.points {
            let expected = match p.method {
                DetectionMethod::Determinant => 1,
                _ => case.spray.dim() - 1,
            };
            r.truth(
                format!("{}: nullity at t = {:.9} ({:?})", case.name, p.t, p.method),
                p.nullity == expected,
                format!("nullity {} (σ ratio {:.2e}), expected {expected}", p.nullity, p.sigma_ratio),
            );
        }
        let pred = proposition1_predict(&case.spray, &case.p0, case.t_max, &Prop1Options::default())?;
        if pred.applicable() {
            let found = rep.times();
            let mut worst: f64 = 0.0;
            for t in &pred.times {
                worst = worst.max(found.iter().map(|f| (f - t).abs()).fold(f64::INFINITY, f64::min));
            }
            if let Some(first) = found.first() {
                worst = worst.max(pred.times.iter().map(|t| (t - first).abs()).fold(f64::INFINITY, f64::min));
            }
            r.below(format!("{}: predicted kπ/√λ vs det J zeros", case.name), worst, 1e-5);
        } else {
            r.truth(format!("{}: predictor status", case.name), true, format!("{:?}", pred.status));
        }
        let half = ConjugateOptions { tol: opts.tol.scaled(0.5), ..opts };
        let rep2 = find_conjugate_points(&case.spray, &case.p0, case.t_max, &half)?;
        let same = rep.points.len() == rep2.points.len();
        let drift = rep.times().iter().zip(rep2.times()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        r.truth(format!("{}: same count at half tolerance", case.name), same, format!("{:?} vs {:?}", rep.times(), rep2.times()));
        r.below(format!("{}: drift under tolerance halving", case.name), drift, 10.0 * opts.tol.rtol);
    }
    let pred = proposition1_predict(&r3_example(), &pt(&[0.0, 0.0, 0.0], &[1.0, 0.0, 1.0]), 0.9, &Prop1Options::default())?;
    r.truth(
        "r3 before the change: predictor not applicable (S(λ) ≠ 0)",
        matches!(pred.status, Applicability::NotApplicable { .. }),
        format!("{:?}", pred.status),
    );
    Ok(())
}

type CriterionFn = fn(&mut Report) -> Outcome;

const CRITERIA: &[(u32, &str, CriterionFn)] = &[
    (1, "operator correctness", criterion_1),
    (2, "spray law and eigenvalue scaling", criterion_2),
    (3, "t·ċ is a Jacobi field", criterion_3),
    (4, "class B, τ = 0: the round sphere", criterion_4),
    (5, "class B, τ = ¾: two geodesic circles", criterion_5),
    (6, "R³ example and its projective change", criterion_6),
    (7, "Shen's circles", criterion_7),
    (8, "conjugate points survive projective changes", criterion_8),
    (9, "projective transformation laws", criterion_9),
    (10, "cut-length comparisons", criterion_10),
    (11, "class C: partial applicability", criterion_11),
    (12, "property suite", criterion_12),
];

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let mut ran = 0;
    for &(n, title, run) in CRITERIA {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let mut report = Report::default();
        let outcome = catch_unwind(AssertUnwindSafe(|| run(&mut report)));
        let elapsed = start.elapsed().as_secs_f64();
        let error = match outcome {
            Ok(Ok(())) => None,
            Ok(Err(e)) => Some(format!("error: {e}")),
            Err(_) => Some("panicked".to_string()),
        };
        let bad: Vec<&Check> = report.checks.iter().filter(|c| !c.pass).collect();
        let pass = error.is_none() && bad.is_empty() && !report.checks.is_empty();
        let note = match report.refuted {
            0 => String::new(),
            k => format!(", {k} stated closed form refuted"),
        };
        println!(
            "criterion {n:>2} {:<4} {title} ({} checks{note}, {elapsed:.1}s)",
            if pass { "PASS" } else { "FAIL" },
            report.checks.len()
        );
        for c in report.checks.iter().filter(|c| c.pass && c.detail.starts_with("REFUTED")) {
            println!("      {}: {}", c.what, c.detail);
        }
        if std::env::var_os("ACCEPTANCE_VERBOSE").is_some() {
            for c in &report.checks {
                println!("      [{}] {}: {}", if c.pass { "ok" } else { "!!" }, c.what, c.detail);
            }
        }
        if !pass {
            failed += 1;
            if let Some(e) = error {
                println!("      {e}");
            }
            for c in bad {
                println!("      failed: {}: {}", c.what, c.detail);
            }
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
