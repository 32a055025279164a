//! Reconstruction of 3D ball trajectories, velocity and spin from monocular
//! 2D detections.
//!
//! The pipeline: calibrate the camera from table keypoints ([`calib`]),
//! split the rally into parabolic image arcs and locate bounces with
//! sub-frame timing ([`rallyseg`]), anchor each bounce in 3D by a ray-plane
//! intersection and fit the pre-bounce velocity and spin of a drag + Magnus
//! flight model to the observations ([`recon`], [`physics`]).
//! [`synthbench`] validates the whole chain on simulated rallies.

// NaN-rejecting guards are written as negated comparisons
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calib;
pub mod commands;
pub mod camgeom;
pub mod io;
pub mod lsq;
pub mod physics;
pub mod plot;
pub mod pipeline;
pub mod rallyseg;
pub mod recon;
pub mod synthbench;
