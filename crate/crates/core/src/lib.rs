//! Stochastic Stokes-Darcy flow by mortar domain decomposition.
//!
//! The pipeline, module by module:
//!
//! * [`geometry`]: blocks, subdomain meshes and interfaces.
//! * [`random_field`]: multi-region Karhunen-Loeve log-permeability.
//! * [`collocation`]: Gauss-Hermite tensor and sparse grids with local
//!   realization maps.
//! * [`darcy`], [`stokes`]: factorized subdomain operators with star and bar
//!   solves.
//! * [`mortar`]: mortar spaces and trace couplings.
//! * [`interface`]: the interface operator, CG, and methods `S1`/`S2`/`S3`.
//! * [`moments`]: weighted mean and variance.
//! * [`driver`]: JSON configs, runs and output files.
//!
//! The guide in `book/` walks through the same steps; its code listings are
//! compiled and run as doc-tests of this crate.

pub mod collocation;
pub mod darcy;
pub mod driver;
pub mod error;
pub mod geometry;
pub mod interface;
pub mod linalg;
pub mod moments;
pub mod mortar;
pub mod problem;
pub mod quadrature;
pub mod random_field;
pub mod stokes;

pub use error::{Error, Result};

// One module per chapter so a failing listing names its chapter.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/random-fields.md")]
    mod random_fields {}
    #[doc = include_str!("../../../book/src/collocation.md")]
    mod collocation {}
    #[doc = include_str!("../../../book/src/discretization.md")]
    mod discretization {}
    #[doc = include_str!("../../../book/src/mortar.md")]
    mod mortar {}
    #[doc = include_str!("../../../book/src/methods.md")]
    mod methods {}
    #[doc = include_str!("../../../book/src/statistics.md")]
    mod statistics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
