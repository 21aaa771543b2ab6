//! Palpation test-bench core.
//!
//! A deterministic virtual rig (two linear stages, a lead-screw indenter with
//! a force sensor, two contact microphones and a down-looking RGB-D camera)
//! together with everything needed to turn its output into tissue maps:
//!
//! - [`sim`]: phantom specimens, stage kinematics and sensor models.
//! - [`protocol`]: the line-based serial contract, device emulator and host driver.
//! - [`calibration`]: laser-spot segmentation, deprojection and the scaled
//!   rigid camera-to-stage fit.
//! - [`dsp`]: force-curve features, MFCCs, spectrograms and feature fusion.
//! - [`learn`]: PCA, SVM (SMO + Platt), MLP and confusion matrices.
//! - [`scan`]: raster / spoke / polyline probe plans and probability maps.

pub mod calibration;
pub mod dsp;
pub mod learn;
pub mod protocol;
pub mod scan;
pub mod sim;

mod rng;

pub use calibration::{Intrinsics, SimilarityTransform};
pub use sim::{CameraFrame, PalpationRecord, Phantom, RigSim, SimConfig, StagePose};
