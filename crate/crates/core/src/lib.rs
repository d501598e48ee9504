//! Iris presentation-attack detection from two-illuminant NIR image pairs.
//!
//! Two detectors are combined in a cascade:
//!
//! * a photometric-stereo detector ([`photometric`]) that recovers per-pixel
//!   surface normals from the pair and scores how far they scatter around
//!   their mean (a textured contact lens is bumpier than an iris);
//! * a texture detector ([`classifier`]) built on binarized filter-bank
//!   codes ([`bsif`]) and one linear model per bank.
//!
//! [`fusion`] applies the cascade, [`evaluation`] computes APCER/BPCER
//! reports and runs train/test protocols, and [`synthetic`] renders
//! Lambertian corpora with known normals for verification.

pub mod bsif;
pub mod classifier;
pub mod cli;
pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod image;
pub mod manifest;
pub mod photometric;
pub mod segmentation;
pub mod synthetic;
pub mod threshold;
pub mod types;

pub use error::{Error, Result};
pub use image::{Mask, NirImage};
pub use types::{CapturePair, Class, Decision, Label, LightingGeometry, Pattern, Source, Vec3};
