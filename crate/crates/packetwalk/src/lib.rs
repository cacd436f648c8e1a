//! Monte Carlo measurement of non-intersection exponents for packets of
//! planar random walks.
//!
//! A sample releases `p` packets of independent simple random walks on
//! Z^2 from the origin and drives them outward through a geometric
//! schedule of nested boxes. The sample survives a box as long as no
//! lattice cell has been stepped on by walkers of every packet; the
//! probability of surviving to radius `L` decays like `L^-s`, and `s` is
//! the non-intersection exponent of the packet layout.
//!
//! The crate provides two measurement schemes and the estimators that go
//! with them:
//!
//! - [`multilevel`] runs samples through the full schedule and records
//!   survivor counts per level; [`estimators`] fits the exponent to those
//!   counts by maximum likelihood (with a cutoff scan and a regression
//!   cross-check).
//! - [`twolevel`] freezes surviving configurations at an inner radius and
//!   measures conditional survival fractions to an outer radius, the
//!   efficient choice when survival past the inner radius is already
//!   rare.
//!
//! [`reference`] carries the known exact values, rigorous brackets, and
//! the conjectured packet-reduction rule that measured exponents are
//! compared against. [`cli`] wraps everything in a reproducible
//! command-line tool with checkpointing and table replay.
//!
//! Every random decision derives from one base seed through splittable
//! generator streams ([`rng`]), so campaigns are bit-reproducible for any
//! worker count.

pub mod cli;
pub mod estimators;
pub mod lattice;
pub mod multilevel;
pub mod reference;
pub mod rng;
pub mod twolevel;
pub mod walkers;
