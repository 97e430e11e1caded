//! Numerical laboratory for G2 structures on flat periodic lattices.

pub mod diagnostics;
pub mod error;
pub mod exterior;
pub mod flows;
pub mod g2;
pub mod lattice;
pub mod snapshot;
pub mod structure;
pub mod validate;

pub use error::{Error, Result};

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
mod book_introduction {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/exterior.md")]
mod book_exterior {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/g2.md")]
mod book_g2 {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/lattice.md")]
mod book_lattice {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/flows.md")]
mod book_flows {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/diagnostics.md")]
mod book_diagnostics {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book_cli {}
