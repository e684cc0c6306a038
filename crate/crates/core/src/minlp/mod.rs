//! Mixed-integer optimal control of the race: polynomial reformulation of the
//! pit logic, the smooth problem over energy inputs and relaxed pit codes, and
//! branch-and-bound over the pit codes.

mod bnb;
mod nlp;
mod ocp;
mod oracle;
pub mod reform;
mod solution;
mod warm;

pub use bnb::{branch_and_bound, branch_and_bound_observed, BnBNode, BnbOptions, BnbProgress};
pub use nlp::{solve_al, ConstrainedProblem, InnerMethod, NlpOptions, NlpResult};
pub use ocp::{build_ocp, solve_nlp, LapLinearization, OcpProblem, PsDomain, Relaxation, RelaxedSolution, SearchSpace, NS};
pub use oracle::{enumerate_schedules, exhaustive_oracle, exhaustive_oracle_with, schedule_count, ORACLE_LIMIT};
pub use reform::{aux_bps, aux_z, selector_weights, smooth_bcomp_update, smooth_dt, smooth_tc_update, smooth_tnom, smooth_tw_update};
pub use solution::{solve_schedule, LeafSolution, NodeRecord, OcpSolution, SolveStatus, SolverStats};
pub use warm::{neighbors, nominal_schedules};
