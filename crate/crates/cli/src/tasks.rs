//! Execution of resolved scenario tasks.

use serde_json::{json, Value};
use spraykit::finsler::{arc_length, arc_length_bridged, fundamental_tensor};
use spraykit::flow::{integrate_geodesic, variation_transversals};
use spraykit::jacobi::{
    conjugate_points_of, covariant_derivative, find_conjugate_points, integrate_jacobi_to, jacobi_residual, parallel_transport,
    proposition1_predict, Applicability, ConjugateOptions, ConjugateReport, DetectionMethod, Prop1Options,
};
use spraykit::linalg::{self, max_abs_diff, norm, Mat};
use spraykit::projective::{
    apply_change, changed_flow_derivative, diagonalizability_report, nabla_tilde_crosscheck, phi_tilde_crosscheck, projective_data,
    residual_t0, residual_t1, residual_t2, residual_t2i, verify_conjugate_preservation, PreservationOptions,
};
use spraykit::spray::{
    bracket_residual, bracket_residual_on, connection, eigen_analysis, eigen_flow_derivative, isotropy_fit, jacobi_endomorphism,
    random_points_where, verify_spray, FormulaField, Spectrum,
};
use spraykit::{Error, Expression, PhasePoint, ProjectiveFactor, Result, SprayModel, Tolerance};

use crate::report::{num, nums, Outcome, Table};
use crate::scenario::{ClosedCurve, Job, Residual, Sampling, Task, TimeFormula};

pub fn run(task: &Task, tol: Tolerance) -> Result<Outcome> {
    let s = &task.spray;
    let p0 = task.p0.as_ref();
    let start = || p0.expect("initial point checked when loading");
    match &task.job {
        Job::Verify { count, seed, radius } => verify(s, *count, *seed, *radius),
        Job::Geodesic { t_end, samples, circle, curve, target } => {
            geodesic(task, start(), *t_end, *samples, circle.as_ref(), curve.as_ref(), target.as_deref(), tol)
        }
        Job::Eigen { sampling, lambda } => eigen(s, p0, sampling, lambda.as_ref(), tol),
        Job::Bracket { sampling } => bracket(s, p0, sampling, tol),
        Job::Conjugate { t_max, density, halving, samples } => conjugate(s, start(), *t_max, *density, *halving, *samples, tol),
        Job::Prop1 { t_max, field, compare, samples } => prop1(s, start(), *t_max, field.as_ref(), *compare, *samples, tol),
        Job::Transport { v0, t_end, samples, field } => transport(task, start(), v0, *t_end, *samples, field.as_ref(), tol),
        Job::JacobiTangent { t_end, samples } => jacobi_tangent(s, start(), *t_end, *samples, tol),
        Job::JacobiField { field, curve, t_end, samples } => jacobi_field(s, start(), field, curve.as_ref(), *t_end, *samples, tol),
        Job::Projective { factor, residuals, sampling, compare_to } => {
            projective(s, p0, factor, residuals, sampling, compare_to.as_ref(), tol)
        }
        Job::Preserve { factor, t_window } => preserve(s, start(), factor, *t_window, tol),
        Job::Variation { w, u, s: s_values, delta } => variation(s, start(), w, u, s_values, *delta, tol),
        Job::Length { curve, a, b, intervals, bridged } => length(task, start(), curve.as_ref(), *a, *b, *intervals, *bridged, tol),
    }
}

fn header(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

fn columns(first: &[&str], groups: &[(&str, usize)]) -> Vec<String> {
    let mut h: Vec<String> = first.iter().map(|s| s.to_string()).collect();
    for (p, n) in groups {
        h.extend(header(p, *n));
    }
    h
}

fn grid(end: f64, count: usize) -> impl Iterator<Item = f64> {
    let count = count.max(2);
    (0..count).map(move |k| end * k as f64 / (count - 1) as f64)
}

fn no_points() -> Error {
    Error::Domain("no admissible sample points".into())
}

/// Sample points with their curve parameter when taken along a geodesic.
fn points(s: &SprayModel, p0: Option<&PhasePoint>, sampling: &Sampling, tol: Tolerance, accept: impl Fn(&PhasePoint) -> bool) -> Result<Vec<(Option<f64>, PhasePoint)>> {
    let pts: Vec<(Option<f64>, PhasePoint)> = match sampling {
        Sampling::Initial => vec![(None, p0.expect("initial point checked when loading").clone())],
        Sampling::Along { t_end, count } => {
            let rec = integrate_geodesic(s, p0.expect("initial point checked when loading"), *t_end, tol)?;
            if let Some((t, reason)) = rec.truncation() {
                return Err(Error::Domain(format!("geodesic stops at t = {t}: {reason}")));
            }
            rec.sample(*count).into_iter().map(|(t, p)| (Some(t), p)).collect()
        }
        Sampling::Random { count, seed, radius } => {
            random_points_where(s.dim(), *count, *radius, *seed, |p| norm(&p.x) <= *radius && s.admits(p) && accept(p))
                .into_iter()
                .map(|p| (None, p))
                .collect()
        }
    };
    if pts.is_empty() {
        return Err(no_points());
    }
    Ok(pts)
}

// Finite-difference oracle for Γ and Φ, independent of the jets.

fn diff5(g: impl Fn(f64) -> Result<Vec<f64>>, h: f64) -> Result<Vec<f64>> {
    let s = [-2.0, -1.0, 1.0, 2.0].iter().map(|k| g(k * h)).collect::<Result<Vec<_>>>()?;
    Ok((0..s[0].len()).map(|i| (s[0][i] - 8.0 * s[1][i] + 8.0 * s[2][i] - s[3][i]) / (12.0 * h)).collect())
}

const FD_STEP: f64 = 1e-3;

fn fd_connection(s: &SprayModel, x: &[f64], v: &[f64]) -> Result<Mat<f64>> {
    let n = x.len();
    let mut g = Mat::zeros(n, n);
    for j in 0..n {
        let col = diff5(
            |t| {
                let mut w = v.to_vec();
                w[j] += t;
                s.coeffs(x, &w)
            },
            FD_STEP,
        )?;
        for i in 0..n {
            g[(i, j)] = -0.5 * col[i];
        }
    }
    Ok(g)
}

fn fd_phi(s: &SprayModel, x: &[f64], v: &[f64]) -> Result<Mat<f64>> {
    let n = x.len();
    let f = s.coeffs(x, v)?;
    let gamma = fd_connection(s, x, v)?;
    let s_gamma = Mat::square(diff5(
        |t| {
            let xs: Vec<f64> = (0..n).map(|i| x[i] + t * v[i]).collect();
            let vs: Vec<f64> = (0..n).map(|i| v[i] + t * f[i]).collect();
            Ok(fd_connection(s, &xs, &vs)?.into_vec())
        },
        FD_STEP,
    )?);
    let mut dfdx = Mat::zeros(n, n);
    for j in 0..n {
        let col = diff5(
            |t| {
                let mut y = x.to_vec();
                y[j] += t;
                s.coeffs(&y, v)
            },
            FD_STEP,
        )?;
        for i in 0..n {
            dfdx[(i, j)] = col[i];
        }
    }
    Ok(&(&dfdx.scale(-1.0) - &(&gamma * &gamma)) - &s_gamma)
}

fn rel(diff: f64, scale: f64) -> f64 {
    diff / scale.max(1e-8)
}

fn verify(s: &SprayModel, count: usize, seed: u64, radius: f64) -> Result<Outcome> {
    let pts = random_points_where(s.dim(), count, radius, seed, |p| norm(&p.x) <= radius && s.admits(p));
    if pts.is_empty() {
        return Err(no_points());
    }
    let rep = verify_spray(s, &pts)?;
    let (mut eg, mut ep, mut ev, mut ef) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for p in &pts {
        let g = connection(s, p)?;
        let phi = jacobi_endomorphism(s, p)?;
        eg = eg.max(rel((&g - &fd_connection(s, &p.x, &p.v)?).norm(), g.norm()));
        ep = ep.max(rel((&phi - &fd_phi(s, &p.x, &p.v)?).norm(), phi.norm()));
        ev = ev.max(norm(&phi.mul_vec(&p.v)) / (phi.norm() * norm(&p.v)).max(1e-300));
        let f = s.eval_at(p)?;
        let gv: Vec<f64> = g.mul_vec(&p.v).iter().zip(&f).map(|(a, b)| a + b).collect();
        ef = ef.max(norm(&gv) / norm(&f).max(1e-300));
    }
    let (mut scaling, mut branches) = (0.0f64, 0usize);
    for p in pts.iter().take(30) {
        let spec = eigen_analysis(s, p)?;
        for b in spec.nonzero_branches() {
            if b.value.abs() < 1e-8 || b.gap < 1e-6 * spec.phi.norm() {
                continue;
            }
            for k in [0.5, 2.0, 3.0] {
                let Ok(sk) = eigen_analysis(s, &p.scaled(k)) else { continue };
                let Some(bk) = sk.nearest(k * k * b.value) else { continue };
                branches += 1;
                scaling = scaling.max((bk.value - k * k * b.value).abs() / (k * k * b.value.abs()));
            }
        }
    }
    let mut o = Outcome::default();
    o.metric("samples", pts.len() as f64);
    o.metric("homogeneity", rep.homogeneity);
    o.metric("homogeneity_rel", rep.homogeneity_rel);
    o.metric("phi_t", rep.phi_t);
    o.metric("nabla_t", rep.nabla_t);
    o.metric("phi_v_rel", ev);
    o.metric("gamma_v_rel", ef);
    o.metric("gamma_fd_rel", eg);
    o.metric("phi_fd_rel", ep);
    o.metric("eigen_scaling_rel", scaling);
    o.metric("eigen_scaling_samples", branches as f64);
    Ok(o)
}

/// Minimum of `|x(t) − q|` over `[0, end]`: a scan followed by
/// golden-section refinement around the best cell.
fn closest_approach(at: impl Fn(f64) -> Result<Vec<f64>>, q: &[f64], end: f64) -> Result<(f64, f64)> {
    let cells = 4000;
    let dist = |t: f64| -> Result<f64> { Ok(norm(&linalg::sub(&at(t)?, q))) };
    let mut best = (0.0, dist(0.0)?);
    for k in 1..=cells {
        let t = end * k as f64 / cells as f64;
        let d = dist(t)?;
        if d < best.1 {
            best = (t, d);
        }
    }
    let h = end / cells as f64;
    let (mut lo, mut hi) = ((best.0 - h).max(0.0), (best.0 + h).min(end));
    let r = 0.5 * (5f64.sqrt() - 1.0);
    while hi - lo > 1e-12 * end.max(1.0) {
        let (a, b) = (hi - r * (hi - lo), lo + r * (hi - lo));
        if dist(a)? < dist(b)? {
            hi = b;
        } else {
            lo = a;
        }
    }
    let t = 0.5 * (lo + hi);
    let d = dist(t)?;
    Ok(if d < best.1 { (t, d) } else { best })
}

fn geodesic(
    task: &Task,
    p0: &PhasePoint,
    t_end: f64,
    samples: usize,
    circle: Option<&(Vec<f64>, f64)>,
    curve: Option<&ClosedCurve>,
    target: Option<&[f64]>,
    tol: Tolerance,
) -> Result<Outcome> {
    let n = task.spray.dim();
    let rec = integrate_geodesic(&task.spray, &p0, t_end, tol)?;
    let mut o = Outcome::default();
    let mut table = Table::new("geodesic", &columns(&["t"], &[("x", n), ("v", n)]));
    let (mut radial, mut off_curve, mut speed) = (0.0f64, 0.0f64, 0.0f64);
    let f0 = task.finsler.as_ref().map(|f| f.value(&p0.x, &p0.v)).transpose()?;
    for (t, p) in rec.sample(samples) {
        table.rows.push([vec![t], p.x.clone(), p.v.clone()].concat());
        if let Some((c, r)) = circle {
            radial = radial.max((norm(&linalg::sub(&p.x, c)) - r).abs());
        }
        if let Some(curve) = curve {
            off_curve = off_curve.max(max_abs_diff(&p.x, &curve.x.at(t)?));
        }
        if let (Some(f), Some(f0)) = (&task.finsler, f0) {
            speed = speed.max((f.value(&p.x, &p.v)? - f0).abs());
        }
    }
    let end = rec.t_end();
    o.metric("t_end", end);
    o.flag("truncated", rec.truncation().is_some());
    o.metric("midpoint_residual", rec.midpoint_residual()?);
    if circle.is_some() {
        o.metric("radial_deviation", radial);
    }
    if curve.is_some() {
        o.metric("curve_deviation", off_curve);
    }
    if f0.is_some() {
        o.metric("speed_drift", speed);
    }
    if let Some(q) = target {
        let (t, d) = closest_approach(|t| Ok(rec.state(t)?.x), q, end)?;
        o.metric("target_distance", d);
        o.metric("target_time", t);
    }
    let last = rec.state(end)?;
    o.components("x_end", &last.x);
    o.components("v_end", &last.v);
    if let Some((t, reason)) = rec.truncation() {
        o.detail("truncation", json!({ "t": num(t), "reason": reason }));
    }
    o.tables.push(table);
    Ok(o)
}

fn leading_or_canonical(spec: &Spectrum) -> Result<&spraykit::EigenBranch> {
    spec.leading()
        .or_else(|| spec.canonical())
        .ok_or_else(|| Error::DegenerateBranch("Φ has no real eigenvalue".into()))
}

fn eigen(s: &SprayModel, p0: Option<&PhasePoint>, sampling: &Sampling, lambda: Option<&Expression>, tol: Tolerance) -> Result<Outcome> {
    let pts = points(s, p0, sampling, tol, |_| true)?;
    let mut o = Outcome::default();
    let mut table = Table::new("eigen", &["t".into(), "lambda".into(), "flow_derivative".into()]);
    let (mut lo, mut hi, mut flow, mut formula) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64, 0.0f64);
    let mut first = None;
    let mut all = Vec::new();
    for (t, p) in &pts {
        let spec = eigen_analysis(s, p)?;
        let b = leading_or_canonical(&spec)?;
        let sl = eigen_flow_derivative(s, p, b)?;
        lo = lo.min(b.value);
        hi = hi.max(b.value);
        flow = flow.max(sl.abs());
        if first.is_none() {
            first = Some((b.value, b.multiplicity, b.gap));
            all = spec.branches.iter().map(|b| json!({ "value": num(b.value), "multiplicity": b.multiplicity, "canonical": b.canonical, "right": nums(&b.right) })).collect();
        }
        if let Some(e) = lambda {
            let target = e.eval(&p.x, &p.v)?;
            let phi = &spec.phi;
            let near = spec.nearest(target).expect("spectrum is nonempty");
            for x in &near.right_basis {
                let r: Vec<f64> = phi.mul_vec(x).iter().zip(x).map(|(a, c)| a - target * c).collect();
                formula = formula.max(norm(&r));
            }
        }
        if let Some(t) = t {
            table.rows.push(vec![*t, b.value, sl]);
        }
    }
    let (l0, mult, gap) = first.expect("at least one point");
    o.metric("points", pts.len() as f64);
    o.metric("lambda", l0);
    o.metric("lambda_min", lo);
    o.metric("lambda_max", hi);
    o.metric("lambda_dev", (hi - l0).abs().max((lo - l0).abs()));
    o.metric("multiplicity", mult as f64);
    o.metric("gap", gap);
    o.metric("flow_derivative", flow);
    if lambda.is_some() {
        o.metric("formula_residual", formula);
    }
    o.detail("branches", Value::Array(all));
    if !table.rows.is_empty() {
        o.tables.push(table);
    }
    Ok(o)
}

fn bracket(s: &SprayModel, p0: Option<&PhasePoint>, sampling: &Sampling, tol: Tolerance) -> Result<Outcome> {
    let pts = points(s, p0, sampling, tol, |_| true)?;
    let (mut bmin, mut bmax, mut rmin, mut rmax, mut iso) = (f64::INFINITY, 0.0f64, f64::INFINITY, 0.0f64, 0.0f64);
    let mut iso_lambda = f64::NAN;
    for (k, (_, p)) in pts.iter().enumerate() {
        let b = bracket_residual(s, p)?;
        bmin = bmin.min(b);
        bmax = bmax.max(b);
        let spec = eigen_analysis(s, p)?;
        if let Some(br) = spec.leading() {
            let r = bracket_residual_on(s, p, br)?;
            rmin = rmin.min(r);
            rmax = rmax.max(r);
        }
        let fit = isotropy_fit(s, p)?;
        iso = iso.max(fit.residual);
        if k == 0 {
            iso_lambda = fit.lambda;
        }
    }
    let mut o = Outcome::default();
    o.metric("points", pts.len() as f64);
    o.metric("bracket_min", bmin);
    o.metric("bracket_max", bmax);
    if rmin.is_finite() {
        o.metric("restricted_min", rmin);
        o.metric("restricted_max", rmax);
    }
    o.metric("isotropy_residual_max", iso);
    o.metric("isotropy_lambda", iso_lambda);
    Ok(o)
}

fn method_name(m: DetectionMethod) -> &'static str {
    match m {
        DetectionMethod::Determinant => "determinant",
        DetectionMethod::SingularValue => "singular_value",
        DetectionMethod::Proposition1 => "constant_eigenvalue",
    }
}

fn conjugate_json(rep: &ConjugateReport) -> Value {
    Value::Array(
        rep.points
            .iter()
            .map(|p| {
                json!({
                    "t": num(p.t),
                    "x": nums(&p.x),
                    "nullity": p.nullity,
                    "method": method_name(p.method),
                    "sigma_ratio": num(p.sigma_ratio),
                    "null_direction": nums(&p.null_direction),
                })
            })
            .collect(),
    )
}

fn conjugate(s: &SprayModel, p0: &PhasePoint, t_max: f64, density: Option<f64>, halving: bool, samples: usize, tol: Tolerance) -> Result<Outcome> {
    let n = s.dim();
    let mut opts = ConjugateOptions { tol, ..ConjugateOptions::default() };
    if let Some(d) = density {
        opts.density = d;
    }
    let sol = integrate_jacobi_to(s, p0, &Mat::zeros(n, n), &Mat::identity(n), t_max, tol)?;
    let rep = conjugate_points_of(&sol, t_max, &opts)?;
    let mut o = Outcome::default();
    let mut table = Table::new("detj", &["t".into(), "det".into()]);
    let span = sol.t_end().min(t_max);
    for t in grid(span, samples) {
        table.rows.push(vec![t, sol.det(t)?]);
    }
    o.tables.push(table);
    o.metric("count", rep.points.len() as f64);
    o.metric("t_searched", rep.t_searched);
    o.flag("truncated", sol.t_end() < t_max);
    let consistent = rep.points.iter().all(|p| p.nullity == if p.method == DetectionMethod::Determinant { 1 } else { n - 1 });
    o.flag("nullity_consistent", consistent);
    for (k, p) in rep.points.iter().enumerate() {
        o.metric(format!("time.{}", k + 1), p.t);
        o.metric(format!("nullity.{}", k + 1), p.nullity as f64);
        o.components(&format!("x.{}", k + 1), &p.x);
    }
    for (k, w) in rep.points.windows(2).enumerate() {
        o.metric(format!("spacing.{}", k + 1), w[1].t - w[0].t);
    }
    if halving {
        let half = ConjugateOptions { tol: tol.scaled(0.5), ..opts };
        let rep2 = find_conjugate_points(s, p0, t_max, &half)?;
        let same = rep2.points.len() == rep.points.len();
        let drift = if same {
            rep.times().iter().zip(rep2.times()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        } else {
            f64::INFINITY
        };
        o.flag("halving_same_count", same);
        o.metric("halving_drift", drift);
        o.detail("halved_points", conjugate_json(&rep2));
    }
    o.detail("points", conjugate_json(&rep));
    o.detail("warnings", json!(rep.warnings));
    Ok(o)
}

fn field_deviation(actual: impl Fn(f64) -> Result<Vec<f64>>, field: &TimeFormula, end: f64, samples: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for t in grid(end, samples) {
        worst = worst.max(max_abs_diff(&actual(t)?, &field.at(t)?));
    }
    Ok(worst)
}

fn prop1(s: &SprayModel, p0: &PhasePoint, t_max: f64, field: Option<&TimeFormula>, compare: bool, samples: usize, tol: Tolerance) -> Result<Outcome> {
    let n = s.dim();
    let rep = proposition1_predict(s, p0, t_max, &Prop1Options { tol, ..Prop1Options::default() })?;
    let mut o = Outcome::default();
    o.flag("applicable", rep.applicable());
    o.metric("lambda0", rep.lambda0);
    o.metric("max_flow_derivative", rep.max_flow_derivative);
    o.metric("max_eigen_residual", rep.max_eigen_residual);
    let status = match &rep.status {
        Applicability::Applicable => json!({ "status": "applicable" }),
        Applicability::Partial { t_fail, reason } => {
            o.flag("partial", true);
            o.metric("t_fail", *t_fail);
            json!({ "status": "partial", "t_fail": num(*t_fail), "reason": reason })
        }
        Applicability::NotApplicable { reasons } => json!({ "status": "not_applicable", "reasons": reasons }),
    };
    if !matches!(rep.status, Applicability::Partial { .. }) {
        o.flag("partial", false);
    }
    for (k, t) in rep.times.iter().enumerate() {
        o.metric(format!("time.{}", k + 1), *t);
    }
    if let Some(tr) = &rep.transport {
        let end = tr.t_end().min(t_max);
        let mut table = Table::new("field", &columns(&["t"], &[("V", n)]));
        for t in grid(end, samples) {
            table.rows.push([vec![t], tr.vector(t)?].concat());
        }
        o.tables.push(table);
        if let Some(f) = field {
            o.metric("field_deviation", field_deviation(|t| tr.vector(t), f, end, samples)?);
        }
    }
    if compare && rep.applicable() {
        let found = find_conjugate_points(s, p0, t_max, &ConjugateOptions { tol, ..ConjugateOptions::default() })?.times();
        let mut worst: f64 = 0.0;
        for t in &rep.times {
            worst = worst.max(found.iter().map(|f| (f - t).abs()).fold(f64::INFINITY, f64::min));
        }
        if let Some(first) = found.first() {
            worst = worst.max(rep.times.iter().map(|t| (t - first).abs()).fold(f64::INFINITY, f64::min));
        }
        o.metric("agreement", worst);
        o.detail("detected", nums(&found));
    }
    o.detail("status", status);
    o.detail("predicted", nums(&rep.times));
    Ok(o)
}

fn transport(task: &Task, p0: &PhasePoint, v0: &[f64], t_end: f64, samples: usize, field: Option<&TimeFormula>, tol: Tolerance) -> Result<Outcome> {
    let n = task.spray.dim();
    let tr = parallel_transport(&task.spray, &p0, v0, t_end, tol)?;
    let end = tr.t_end();
    let mut o = Outcome::default();
    let mut table = Table::new("transport", &columns(&["t"], &[("x", n), ("V", n)]));
    let (mut eig, mut euclid, mut gdrift) = (0.0f64, 0.0f64, 0.0f64);
    let g_norm = |t: f64| -> Result<Option<f64>> {
        let Some(f) = &task.finsler else { return Ok(None) };
        let (g, _) = fundamental_tensor(f, &tr.state(t)?)?;
        let v = tr.vector(t)?;
        Ok(Some(linalg::dot(&g.mul_vec(&v), &v)))
    };
    let g0 = g_norm(0.0)?;
    let e0 = norm(v0);
    for t in grid(end, samples) {
        let v = tr.vector(t)?;
        table.rows.push([vec![t], tr.state(t)?.x, v.clone()].concat());
        eig = eig.max(tr.eigen_residual(t)?.0);
        euclid = euclid.max((norm(&v) - e0).abs());
        if let (Some(g0), Some(g)) = (g0, g_norm(t)?) {
            gdrift = gdrift.max((g - g0).abs() / g0.abs().max(1e-300));
        }
    }
    o.metric("t_end", end);
    o.metric("eigen_residual_max", eig);
    o.metric("euclidean_norm_drift", euclid);
    if g0.is_some() {
        o.metric("g_norm_drift", gdrift);
    }
    if let Some(f) = field {
        o.metric("field_deviation", field_deviation(|t| tr.vector(t), f, end, samples)?);
    }
    o.components("end", &tr.vector(end)?);
    o.tables.push(table);
    Ok(o)
}

fn jacobi_tangent(s: &SprayModel, p0: &PhasePoint, t_end: f64, samples: usize, tol: Tolerance) -> Result<Outcome> {
    let n = s.dim();
    let k0 = Mat::from_row_major(n, 1, p0.v.clone());
    let sol = integrate_jacobi_to(s, p0, &Mat::zeros(n, 1), &k0, t_end, tol)?;
    let end = sol.t_end().min(t_end);
    let mut worst: f64 = 0.0;
    let mut table = Table::new("jacobi", &columns(&["t"], &[("J", n), ("tv", n)]));
    for t in grid(end, samples).skip(1) {
        let j = sol.j(t)?.column(0);
        let expect: Vec<f64> = sol.state(t)?.v.iter().map(|c| t * c).collect();
        worst = worst.max(norm(&linalg::sub(&j, &expect)) / norm(&expect));
        table.rows.push([vec![t], j, expect].concat());
    }
    let mut o = Outcome::default();
    o.metric("t_end", end);
    o.metric("tangent_deviation_rel", worst);
    o.tables.push(table);
    Ok(o)
}

fn jacobi_field(s: &SprayModel, p0: &PhasePoint, field: &TimeFormula, curve: Option<&ClosedCurve>, t_end: f64, samples: usize, tol: Tolerance) -> Result<Outcome> {
    let j = |t: f64| field.at(t);
    let (residual, dj0) = match curve {
        Some(c) => {
            let c = |t: f64| c.at(t);
            (jacobi_residual(s, &c, j, 0.0, t_end, samples)?, covariant_derivative(s, &c, j, 0.0)?)
        }
        None => {
            // The stencil reaches 2e-3 past both ends of the span.
            let rec = integrate_geodesic(s, p0, t_end + 0.01, tol)?;
            let back = integrate_geodesic(s, &PhasePoint::new(p0.x.clone(), p0.v.iter().map(|c| -c).collect())?, 0.01, tol)?;
            let c = |t: f64| -> Result<PhasePoint> {
                if t >= 0.0 {
                    rec.state(t)
                } else {
                    let p = back.state(-t)?;
                    PhasePoint::new(p.x, p.v.iter().map(|c| -c).collect())
                }
            };
            (jacobi_residual(s, &c, j, 0.0, t_end, samples)?, covariant_derivative(s, &c, j, 0.0)?)
        }
    };
    let mut o = Outcome::default();
    o.metric("t_end", t_end);
    o.metric("residual", residual);
    o.components("initial_derivative", &dj0);
    Ok(o)
}

/// Unit coordinate fields plus one field depending on both `x` and `v`.
fn test_fields(n: usize) -> Result<Vec<FormulaField>> {
    let mut fields: Vec<FormulaField> = (0..n)
        .map(|k| (0..n).map(|i| Expression::parse(if i == k { "1" } else { "0" }, n, &[])).collect::<Result<_>>().map(FormulaField))
        .collect::<Result<_>>()?;
    let curved: Vec<String> = (0..n)
        .map(|i| match i % 3 {
            0 => format!("x{}*v1 + v{}^2", (i + 1) % n + 1, n),
            1 => format!("sin(x1)*v{}", i + 1),
            _ => format!("cos(x{})*v{}", n, (i + 1) % n + 1),
        })
        .collect();
    fields.push(FormulaField(curved.iter().map(|e| Expression::parse(e, n, &[])).collect::<Result<_>>()?));
    Ok(fields)
}

fn projective(
    s: &SprayModel,
    p0: Option<&PhasePoint>,
    factor: &ProjectiveFactor,
    residuals: &[Residual],
    sampling: &Sampling,
    compare_to: Option<&SprayModel>,
    tol: Tolerance,
) -> Result<Outcome> {
    let n = s.dim();
    let changed = apply_change(s, factor)?;
    let pts = points(s, p0, sampling, tol, |p| changed.admits(p) && factor.value(&p.x, &p.v).is_ok() && compare_to.is_none_or(|c| c.admits(p)))?;
    let wants = |r: Residual| residuals.contains(&r);
    let fields = if wants(Residual::NablaTilde) { test_fields(n)? } else { Vec::new() };
    let mut max = std::collections::BTreeMap::<&str, f64>::new();
    let mut bump = |k: &'static str, v: f64| {
        let e = max.entry(k).or_insert(0.0);
        *e = e.max(v);
    };
    let (mut t0_eval, mut t0_agree, mut t0_holds) = (0usize, 0usize, 0usize);
    let mut first_t1 = None;
    let mut diag_case = None;
    let mut lambda_tilde = None;
    for (_, p) in &pts {
        let spec = eigen_analysis(s, p)?;
        let spec_t = eigen_analysis(&changed, p)?;
        let scale = 1.0 + spec.phi.norm();
        if lambda_tilde.is_none() {
            lambda_tilde = Some(leading_or_canonical(&spec_t)?.value);
        }
        if wants(Residual::PhiTilde) {
            bump("phi_tilde", phi_tilde_crosscheck(s, factor, p)? / scale);
        }
        for x in &fields {
            bump("nabla_tilde", nabla_tilde_crosscheck(s, factor, p, x)? / scale);
        }
        let data = projective_data(s, factor, p)?;
        if wants(Residual::BOfT) {
            bump("b_of_t", data.b_of_t_residual(&p.v).abs());
        }
        if wants(Residual::Shift) {
            for b in spec.nonzero_branches() {
                let target = b.value + data.a;
                if let Some(bt) = spec_t.nearest(target) {
                    bump("shift", (bt.value - target).abs() / scale);
                }
            }
        }
        if wants(Residual::Diag) {
            let d = diagonalizability_report(s, factor, p)?;
            bump("diag", d.max_residual);
            diag_case.get_or_insert(d.case.number().unwrap_or(0));
        }
        if wants(Residual::T0) {
            for b in spec.nonzero_branches() {
                let Some(bt) = spec_t.nearest(b.value + data.a) else { continue };
                if let (Ok(t0), Ok(direct)) = (residual_t0(s, factor, p, b), bracket_residual_on(&changed, p, bt)) {
                    bump("t0", t0);
                    t0_eval += 1;
                    t0_agree += usize::from((t0 < 1e-6) == (direct < 1e-6));
                    t0_holds += usize::from(direct < 1e-6);
                }
            }
        }
        if wants(Residual::T1) || wants(Residual::T2) {
            if let Some(b) = spec.leading() {
                if wants(Residual::T1) {
                    let t1 = residual_t1(s, factor, p, b)?;
                    first_t1.get_or_insert(t1);
                    bump("t1_max", t1.abs());
                }
                if wants(Residual::T2) {
                    let t2 = residual_t2(s, factor, p, b)?;
                    bump("t2", t2.residual);
                    bump("t2_stated", t2.stated);
                    bump("tilde_flow", changed_flow_derivative(s, factor, p, b)?.abs());
                }
            }
        }
        if wants(Residual::T2i) {
            bump("t2i", residual_t2i(s, factor, p)?);
        }
        if let Some(target) = compare_to {
            let a = changed.eval_at(p)?;
            let b = target.eval_at(p)?;
            bump("compare_rel", norm(&linalg::sub(&a, &b)) / norm(&b).max(1e-300));
        }
    }
    let mut o = Outcome::default();
    o.metric("points", pts.len() as f64);
    for (k, v) in &max {
        if *k != "tilde_flow" {
            o.metric(*k, *v);
        }
    }
    if let Some(t1) = first_t1 {
        o.metric("t1", t1);
    }
    if let Some(c) = diag_case {
        o.metric("diag_case", c as f64);
    }
    if wants(Residual::T0) && t0_eval > 0 {
        o.metric("t0_agreement", t0_agree as f64 / t0_eval as f64);
        o.metric("t0_bracket_holds", t0_holds as f64 / t0_eval as f64);
    }
    if let Some(l) = lambda_tilde {
        o.metric("lambda_tilde", l);
    }
    if let Some(f) = max.get("tilde_flow") {
        o.detail("changed_flow_derivative_max", num(*f));
    }
    o.detail("factor", json!(factor.label()));
    o.detail("changed_model", json!(changed.label()));
    Ok(o)
}

fn preserve(s: &SprayModel, p0: &PhasePoint, factor: &ProjectiveFactor, t_window: f64, tol: Tolerance) -> Result<Outcome> {
    let opts = PreservationOptions { conjugate: ConjugateOptions { tol, ..ConjugateOptions::default() }, tol, ..PreservationOptions::default() };
    let rep = verify_conjugate_preservation(s, factor, p0, t_window, &opts)?;
    let mut o = Outcome::default();
    o.metric("t1", rep.t1);
    o.metric("s1", rep.s1);
    o.metric("theta_s1", rep.theta_s1);
    o.metric("parameter_error", rep.parameter_error);
    o.metric("base_point_error", rep.base_point_error);
    o.metric("theta_residual", rep.theta_residual);
    o.components("x_t1", &rep.x_t1);
    o.components("x_s1", &rep.x_s1);
    o.detail("t1_method", json!(method_name(rep.t1_method)));
    o.detail("s1_method", json!(method_name(rep.s1_method)));
    o.detail("s_span", num(rep.s_span));
    Ok(o)
}

fn variation(s: &SprayModel, p0: &PhasePoint, w: &[f64], u: &[f64], s_values: &[f64], delta: f64, tol: Tolerance) -> Result<Outcome> {
    let n = s.dim();
    let tr = variation_transversals(s, &p0.x, &p0.v, w, u, s_values, delta, tol)?;
    let s_max = s_values.iter().copied().fold(0.0, f64::max);
    let sol = integrate_jacobi_to(s, p0, &Mat::zeros(n, 1), &Mat::from_row_major(n, 1, w.to_vec()), s_max, tol)?;
    let mut o = Outcome::default();
    let mut field = Table::new("field", &columns(&["s"], &[("dgamma", n), ("J", n)]));
    let mut worst: f64 = 0.0;
    for (k, (sv, pts)) in tr.s_values.iter().zip(&tr.points).enumerate() {
        let mut t = Table::new(format!("transversal{:02}", k + 1), &columns(&["u"], &[("x", n)]));
        for (u, x) in tr.u_values.iter().zip(pts) {
            t.rows.push([vec![*u], x.clone()].concat());
        }
        o.tables.push(t);
        let j = sol.j(*sv)?.column(0);
        worst = worst.max(max_abs_diff(&tr.variational_field[k], &j));
        o.components(&format!("field.{}", k + 1), &tr.variational_field[k]);
        field.rows.push([vec![*sv], tr.variational_field[k].clone(), j].concat());
    }
    o.tables.push(field);
    o.metric("jacobi_deviation", worst);
    o.detail("s_values", nums(s_values));
    o.detail("delta", num(delta));
    Ok(o)
}

fn length(task: &Task, p0: &PhasePoint, curve: Option<&ClosedCurve>, a: f64, b: f64, intervals: usize, bridged: bool, tol: Tolerance) -> Result<Outcome> {
    let model = task.finsler.as_ref().expect("checked when loading");
    let run = |c: &dyn Fn(f64) -> Result<PhasePoint>| -> Result<(f64, Vec<(f64, f64)>)> {
        if bridged {
            let r = arc_length_bridged(model, &c, a, b, intervals)?;
            Ok((r.length, r.windows))
        } else {
            Ok((arc_length(model, &c, a, b, intervals)?, Vec::new()))
        }
    };
    let (len, windows) = match curve {
        Some(c) => run(&|t| c.at(t))?,
        None => {
            if a < 0.0 {
                return Err(Error::InvalidArgument("a geodesic is integrated forward from t = 0".into()));
            }
            let rec = integrate_geodesic(&task.spray, &p0, b, tol)?;
            if let Some((t, reason)) = rec.truncation() {
                return Err(Error::Domain(format!("geodesic stops at t = {t}: {reason}")));
            }
            run(&|t| rec.state(t))?
        }
    };
    let mut o = Outcome::default();
    o.metric("length", len);
    o.metric("windows", windows.len() as f64);
    o.detail("windows", Value::Array(windows.iter().map(|(lo, hi)| json!([num(*lo), num(*hi)])).collect()));
    Ok(o)
}
