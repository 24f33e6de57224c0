//! Classic (feature-free) appointment scheduling solvers.

mod compare;
mod dro;
mod newsvendor;
mod saa;
mod scenarios;

pub use compare::{dro_vs_saa_report, ambiguity_from_scenarios, DroVsSaa};
pub use dro::{solve_dro, AmbiguitySet, Cut, DroConfig, DroResult};
pub use newsvendor::newsvendor_allowance;
pub use saa::{saa_objective, solve_saa, solve_saa_lp, SaaConfig, SaaResult, StepRule, SAA_LP_MAX_SIZE};
pub use scenarios::{ScenarioSet, ScenarioSource};
