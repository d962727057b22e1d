//! Retrieval-based time series forecasting and imputation.
//!
//! Pipeline: [`graph`] ranks database series by Random Walk with Restart
//! proximity to a target, [`synthesis`] completes the target from it and the
//! retrieved references, and [`trainer`] fits, evaluates and compares models.

pub mod autodiff;
pub mod data;
pub mod graph;
pub mod par;
pub mod synthesis;
pub mod trainer;
