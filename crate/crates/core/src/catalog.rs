//! Builtin models: the Euclidean spray, the R³ example, Shen's circles,
//! the three Randers families with circular geodesics, and the projective
//! factors that go with them.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::expr::{Expression, Params};
use crate::finsler::{geodesic_spray, FinslerModel};
use crate::projective::ProjectiveFactor;
use crate::spray::SprayModel;

const NORM: &str = "sqrt(v1^2+v2^2)";

/// Default distance kept from the unit circle by the class (C) guard.
pub const RANDERS_C_MARGIN: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EntryKind {
    Spray,
    Finsler,
    Factor,
}

/// One builtin with its parameters.
#[derive(Clone, Copy, Debug)]
pub struct CatalogEntry {
    pub key: &'static str,
    pub kind: EntryKind,
    /// `(name, default, admissible range)`.
    pub params: &'static [(&'static str, f64, &'static str)],
    pub dim: &'static str,
    pub summary: &'static str,
}

/// Sorted by key.
pub const ENTRIES: &[CatalogEntry] = &[
    CatalogEntry {
        key: "euclidean",
        kind: EntryKind::Spray,
        params: &[("n", 2.0, "integer >= 1")],
        dim: "n",
        summary: "f = 0; straight lines",
    },
    CatalogEntry {
        key: "r3_example",
        kind: EntryKind::Spray,
        params: &[],
        dim: "3",
        summary: "f = (v2 v3 + v1 v3, -v1 v3 + v2 v3, v3^2); eigenvalue v3^2/2",
    },
    CatalogEntry {
        key: "r3_factor",
        kind: EntryKind::Factor,
        params: &[("A", 0.5, "real")],
        dim: "3",
        summary: "P = A v3",
    },
    CatalogEntry {
        key: "randersA",
        kind: EntryKind::Finsler,
        params: &[("tau", 1.0, "real")],
        dim: "2",
        summary: "F = (|v| + tau (x2 v1 - x1 v2)) / 2; circles of radius 1/(2 tau)",
    },
    CatalogEntry {
        key: "randersB",
        kind: EntryKind::Finsler,
        params: &[("tau", 0.0, "real")],
        dim: "2",
        summary: "F = (|v| + tau (x2 v1 - x1 v2)) / (2 (1 + |x|^2)); tau = 0 is the round sphere",
    },
    CatalogEntry {
        key: "randersC",
        kind: EntryKind::Finsler,
        params: &[("tau", 1.0, "real"), ("margin", RANDERS_C_MARGIN, "0 <= margin < 1")],
        dim: "2",
        summary: "F = (|v| + tau (x2 v1 - x1 v2)) / (2 (1 - |x|^2)) on |x|^2 < 1 - margin",
    },
    CatalogEntry {
        key: "shen",
        kind: EntryKind::Spray,
        params: &[("tau", 1.0, "tau > 0")],
        dim: "2",
        summary: "f = 2 tau |v| (-v2, v1); circles of radius 1/(2 tau)",
    },
    CatalogEntry {
        key: "shen_projective_factor",
        kind: EntryKind::Factor,
        params: &[("tau", 1.0, "tau > 0")],
        dim: "2",
        summary: "P = tau^2 |v| <x, v> / (tau (x1 v2 - x2 v1) - |v|); turns shen(tau) into randersA(tau)",
    },
];

/// A resolved builtin.
#[derive(Clone, Debug)]
pub enum CatalogItem {
    Spray(SprayModel),
    Finsler(FinslerModel),
    Factor(ProjectiveFactor),
}

impl CatalogItem {
    /// The spray of the item (the geodesic spray for Finsler functions).
    pub fn spray(&self) -> Option<SprayModel> {
        match self {
            CatalogItem::Spray(s) => Some(s.clone()),
            CatalogItem::Finsler(f) => Some(geodesic_spray(f)),
            CatalogItem::Factor(_) => None,
        }
    }

    pub fn finsler(&self) -> Option<&FinslerModel> {
        match self {
            CatalogItem::Finsler(f) => Some(f),
            _ => None,
        }
    }

    pub fn factor(&self) -> Option<&ProjectiveFactor> {
        match self {
            CatalogItem::Factor(p) => Some(p),
            _ => None,
        }
    }
}

pub fn entry(key: &str) -> Result<&'static CatalogEntry> {
    ENTRIES.iter().find(|e| e.key == key).ok_or_else(|| Error::UnknownCatalogKey(key.to_string()))
}

/// Resolves a key with positional parameters; missing trailing parameters
/// take their defaults.
pub fn catalog(key: &str, params: &[f64]) -> Result<CatalogItem> {
    let e = entry(key)?;
    if params.len() > e.params.len() {
        return Err(Error::InvalidArgument(format!(
            "`{key}` takes {} parameter(s), got {}",
            e.params.len(),
            params.len()
        )));
    }
    let arg = |i: usize| params.get(i).copied().unwrap_or(e.params[i].1);
    Ok(match key {
        "euclidean" => {
            let n = arg(0);
            if n < 1.0 || n.fract() != 0.0 {
                return Err(Error::InvalidArgument(format!("euclidean dimension must be a positive integer, got {n}")));
            }
            CatalogItem::Spray(euclidean(n as usize))
        }
        "r3_example" => CatalogItem::Spray(r3_example()),
        "r3_factor" => CatalogItem::Factor(r3_factor(arg(0))?),
        "randersA" => CatalogItem::Finsler(randers_a(arg(0))?),
        "randersB" => CatalogItem::Finsler(randers_b(arg(0))?),
        "randersC" => CatalogItem::Finsler(randers_c_with_margin(arg(0), arg(1))?),
        "shen" => CatalogItem::Spray(shen(arg(0))?),
        "shen_projective_factor" => CatalogItem::Factor(shen_projective_factor(arg(0))?),
        _ => unreachable!("every entry is handled"),
    })
}

/// Parses `key` or `key(p1, p2, ...)`.
pub fn parse_reference(text: &str) -> Result<(String, Vec<f64>)> {
    let text = text.trim();
    let Some(open) = text.find('(') else {
        return Ok((text.to_string(), Vec::new()));
    };
    let inner = text[open + 1..]
        .strip_suffix(')')
        .ok_or_else(|| Error::InvalidArgument(format!("unbalanced parentheses in `{text}`")))?;
    let params = if inner.trim().is_empty() {
        Vec::new()
    } else {
        inner
            .split(',')
            .map(|p| {
                let p = p.trim();
                parse_number(p).ok_or_else(|| Error::InvalidArgument(format!("parameter `{p}` is not a number")))
            })
            .collect::<Result<_>>()?
    };
    Ok((text[..open].trim().to_string(), params))
}

/// Numbers, optionally written as fractions such as `3/4`.
fn parse_number(text: &str) -> Option<f64> {
    if let Some((a, b)) = text.split_once('/') {
        return Some(a.trim().parse::<f64>().ok()? / b.trim().parse::<f64>().ok()?);
    }
    text.parse().ok()
}

/// Resolves a textual reference such as `shen(1)` or `randersB(3/4)`.
pub fn resolve(text: &str) -> Result<CatalogItem> {
    let (key, params) = parse_reference(text)?;
    catalog(&key, &params)
}

/// Human readable table of the builtins.
pub fn list_catalog() -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<24} {:<8} {:<4} {:<46} summary", "key", "kind", "dim", "parameters");
    for e in ENTRIES {
        let params = e
            .params
            .iter()
            .map(|(n, d, r)| format!("{n}={d} ({r})"))
            .collect::<Vec<_>>()
            .join(", ");
        let kind = match e.kind {
            EntryKind::Spray => "spray",
            EntryKind::Finsler => "finsler",
            EntryKind::Factor => "factor",
        };
        let _ = writeln!(out, "{:<24} {:<8} {:<4} {:<46} {}", e.key, kind, e.dim, params, e.summary);
    }
    out
}

fn bound(src: &str, dim: usize, params: &[(&str, f64)]) -> Result<Expression> {
    let names: Vec<&str> = params.iter().map(|(n, _)| *n).collect();
    let values: Params = params.iter().map(|(n, v)| (n.to_string(), *v)).collect();
    Expression::parse(src, dim, &names)?.bind(&values)
}

fn label(key: &str, params: &[f64]) -> String {
    let inner: Vec<String> = params.iter().map(|p| p.to_string()).collect();
    format!("{key}({})", inner.join(","))
}

pub fn euclidean(n: usize) -> SprayModel {
    SprayModel::flat(n)
}

pub fn r3_example() -> SprayModel {
    let f = ["v2*v3+v1*v3", "-v1*v3+v2*v3", "v3^2"]
        .iter()
        .map(|s| Expression::parse(s, 3, &[]))
        .collect::<Result<_>>()
        .expect("builtin formulas parse");
    SprayModel::from_formulas("r3_example", f, vec![]).expect("builtin formulas are consistent")
}

pub fn shen(tau: f64) -> Result<SprayModel> {
    let p = [("tau", tau)];
    let f = vec![bound(&format!("-2*tau*v2*{NORM}"), 2, &p)?, bound(&format!("2*tau*v1*{NORM}"), 2, &p)?];
    SprayModel::from_formulas(label("shen", &[tau]), f, vec![])
}

fn randers(name: String, denominator: &str, tau: f64, guards: &[&str], extra: &[(&str, f64)]) -> Result<FinslerModel> {
    let mut p = vec![("tau", tau)];
    p.extend_from_slice(extra);
    let f = bound(&format!("({NORM}+tau*(x2*v1-x1*v2))/({denominator})"), 2, &p)?;
    let guards = guards.iter().map(|g| bound(g, 2, &p)).collect::<Result<_>>()?;
    FinslerModel::new(name, f, guards)
}

/// Class (A), normalized by `1/2`.
pub fn randers_a(tau: f64) -> Result<FinslerModel> {
    randers(label("randersA", &[tau]), "2", tau, &[], &[])
}

/// Class (B): conformal to the round sphere.
pub fn randers_b(tau: f64) -> Result<FinslerModel> {
    randers(label("randersB", &[tau]), "2*(1+x1^2+x2^2)", tau, &[], &[])
}

/// Class (C) with the default margin.
pub fn randers_c(tau: f64) -> Result<FinslerModel> {
    randers_c_with_margin(tau, RANDERS_C_MARGIN)
}

/// Class (C): conformal to the hyperbolic disk, restricted to
/// `1 − |x|² > margin`.
pub fn randers_c_with_margin(tau: f64, margin: f64) -> Result<FinslerModel> {
    if !(0.0..1.0).contains(&margin) {
        return Err(Error::InvalidArgument(format!("margin must lie in [0, 1), got {margin}")));
    }
    let name = if margin == RANDERS_C_MARGIN { label("randersC", &[tau]) } else { label("randersC", &[tau, margin]) };
    randers(name, "2*(1-x1^2-x2^2)", tau, &["1-x1^2-x2^2-margin"], &[("margin", margin)])
}

pub fn shen_projective_factor(tau: f64) -> Result<ProjectiveFactor> {
    let e = bound(&format!("tau^2*{NORM}*(x1*v1+x2*v2)/(tau*(x1*v2-x2*v1)-{NORM})"), 2, &[("tau", tau)])?;
    ProjectiveFactor::new(label("shen_projective_factor", &[tau]), e)
}

pub fn r3_factor(a: f64) -> Result<ProjectiveFactor> {
    ProjectiveFactor::new(label("r3_factor", &[a]), bound("A*v3", 3, &[("A", a)])?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spray::PhasePoint;

    #[test]
    fn references_parse() {
        assert_eq!(parse_reference("shen(1)").unwrap(), ("shen".to_string(), vec![1.0]));
        assert_eq!(parse_reference(" randersB( 3/4 ) ").unwrap(), ("randersB".to_string(), vec![0.75]));
        assert_eq!(parse_reference("r3_example").unwrap(), ("r3_example".to_string(), vec![]));
        assert!(parse_reference("shen(1").is_err());
        assert!(matches!(resolve("nope(1)"), Err(Error::UnknownCatalogKey(_))));
    }

    #[test]
    fn listing_is_sorted_and_complete() {
        let keys: Vec<&str> = ENTRIES.iter().map(|e| e.key).collect();
        let mut sorted = keys.clone();
        sorted.sort_unstable();
        assert_eq!(keys, sorted);
        let text = list_catalog();
        for k in ["randersA", "randersB", "randersC", "shen", "shen_projective_factor", "r3_example", "r3_factor"] {
            assert!(text.contains(k));
        }
    }

    #[test]
    fn shen_coefficient() {
        let s = shen(1.0).unwrap();
        let p = PhasePoint::new(vec![0.5, 0.0], vec![0.0, 1.0]).unwrap();
        assert_eq!(s.eval_at(&p).unwrap(), vec![-2.0, 0.0]);
    }

    #[test]
    fn class_c_is_singular_on_the_unit_circle() {
        let f = randers_c_with_margin(1.0, 0.0).unwrap();
        assert!(f.value(&[0.0, 1.0], &[1.0, 0.0]).unwrap_err().is_domain());
        assert_eq!(randers_c(1.0).unwrap().label(), "randersC(1)");
    }
}
