//! Penalized weighted least-squares reconstruction:
//! minimize ‖y − Ax‖²_W + βR(x) + μ‖x − a‖² with relaxed linearized
//! augmented-Lagrangian iterations under a diagonal majorizer, guarded by a
//! monotone majorize-minimize fallback.

mod config;
mod lalm;
#[cfg(test)]
mod tests;

pub use config::{SolveConfig, SolveTrace};
pub use lalm::{
    pwls_ep_baseline, pwls_ultra_baseline, solve_ep, solve_quadratic_anchor, solve_ultra,
    PwlsProblem, UltraSolveSpec,
};
