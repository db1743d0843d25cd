//! Simulator and planner for time-sensitive federated learning over
//! heterogeneous edge servers.
//!
//! * [`profiles`]: per-server timing model and load-forwarding costs.
//! * [`learner`]: multinomial logistic regression and SGD.
//! * [`datagen`]: datasets, IDX archives and non-i.i.d. partitions.
//! * [`fedsim`]: synchronous and staleness-bounded asynchronous training
//!   under the timing model.
//! * [`estimate`]: probe runs and least-squares fits of the convergence-bound
//!   and timing constants.
//! * [`plan`]: training-time objectives, alternate convex search over
//!   `(e, n)`, server dropping and pairing.

// Negated float comparisons are how input checks reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datagen;
pub mod estimate;
pub mod fedsim;
pub mod learner;
pub mod plan;
pub mod profiles;
