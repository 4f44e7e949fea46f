//! Risk stratification and decision support for acute gastrointestinal
//! bleeding: cohort handling, LASSO feature selection, honest random forests,
//! sensitivity calibration, model explanations, guideline retrieval and query
//! routing.

pub mod calibrate;
pub mod cohort;
pub mod error;
pub mod explain;
pub mod forest;
pub mod guidelines;
pub mod lasso;
pub mod model;
pub mod parallel;
pub mod router;
pub mod studylab;

pub use error::{Error, Result};
