//! Representative model selection for reservoir realization ensembles.
//!
//! The pipeline runs grid → ensemble variance → VOI-restricted
//! mutual-information similarity → classical MDS and kernel k-means →
//! center nodes and outlier-driven refinement. [`session::AnalysisSession`]
//! ties the steps together; [`spatialquery`] and [`interaction`] hold the
//! geometric and gesture kernels used by interactive front ends.

pub mod api;
pub mod clustering;
pub mod embedding;
pub mod ensemble;
pub mod geometry;
pub mod grid;
pub mod interaction;
pub mod representative;
pub mod session;
pub mod similarity;
pub mod spatialquery;
