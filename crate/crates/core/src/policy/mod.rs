//! Planners. Every planner implements [`crate::sim::Policy`].
//!
//! * [`GreedyPolicy`]: each available taxi heads for its nearest outstanding request.
//! * [`InstantAssignPolicy`]: iterative global-minimum matching of taxis to current requests.
//! * [`RolloutPolicy`]: one-agent-at-a-time rollout over a base heuristic, with Monte-Carlo
//!   demand scenarios drawn from the agent's sector neighbourhood (or the full map).
//! * [`OraclePolicy`]: repeated optimal assignment with full knowledge of future requests.

mod auction;
mod base;
mod oracle;
mod rollout;

pub use auction::{auction_square, exhaustive_assignment, solve_assignment, Assignment};
pub use base::{instant_matching, BasePolicy, GreedyPolicy, InstantAssignPolicy};
pub use oracle::{oracle_decide_episode, OraclePolicy};
pub use rollout::{AgentOrder, RolloutConfig, RolloutPolicy};
