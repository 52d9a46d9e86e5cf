//! Numerical toolkit for sprays: second-order ODE fields `ẍ = f(x, ẋ)` whose
//! coefficients are 2-homogeneous in the velocity.
//!
//! Coefficients are evaluated over any [`Scalar`], so the same formula yields
//! values and, over nested [`Dual`] jets, exact derivatives. From them the
//! crate builds the connection `Γ`, the Jacobi endomorphism `Φ` and the
//! dynamical covariant derivative `∇`, integrates geodesics and Jacobi
//! fields, locates conjugate points, and carries out projective changes
//! `S̃ = S − 2PΔ`.
//!
//! ```
//! use spraykit::{catalog, spray, PhasePoint};
//!
//! let s = catalog::shen(1.0).unwrap();
//! let p = PhasePoint::new(vec![0.5, 0.0], vec![0.0, 1.0]).unwrap();
//! let fit = spray::isotropy_fit(&s, &p).unwrap();
//! assert!(fit.residual < 1e-9);
//! ```

pub mod catalog;
pub mod error;
pub mod expr;
pub mod finsler;
pub mod flow;
pub mod jacobi;
pub mod jets;
pub mod linalg;
pub mod ode;
pub mod projective;
pub mod scalar;
pub mod spray;

pub use error::{Error, Result};
pub use expr::Expression;
pub use finsler::FinslerModel;
pub use flow::GeodesicRecord;
pub use jets::{Dual, PhaseField};
pub use ode::Tolerance;
pub use projective::ProjectiveFactor;
pub use scalar::Scalar;
pub use spray::{EigenBranch, PhasePoint, SprayModel};

/// First-order jet over `f64`.
pub type Jet64 = jets::Dual<f64>;
/// First-order jet over `f32`.
pub type Jet32 = jets::Dual<f32>;
pub type Mat64 = linalg::Mat<f64>;
pub type Mat32 = linalg::Mat<f32>;
