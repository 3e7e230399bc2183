//! Sound explanations for machine-learning systems.
//!
//! * [`compgraph`]: systems as computational graphs, cuts, explanations and replay.
//! * [`attribution`]: path-method attribution and checkers for the four
//!   attribution axioms, including the instance showing they cannot all hold.
//! * [`neural`]: a from-scratch MLP with L0 weight gates and a BinMask input gate.
//! * [`synthehr`]: synthetic EHR cohorts and fixed-length feature derivation.
//! * [`metrics`]: AUC, bootstrap intervals and univariate-model-AUC rankings.
//! * [`pipeline`]: BinMask selection, iterative removal and final retraining.

pub mod attribution;
pub mod compgraph;
pub mod matrix;
pub mod metrics;
pub mod neural;
pub mod pipeline;
pub mod seed;
pub mod synthehr;
