//! Collaborative multi-agent tuning loop.
//!
//! A User role issues tasks, an Assistant role (any [`backend::Backend`])
//! proposes reasoning plus one action per turn, and a Checker role verifies
//! each action before it reaches a simulated environment. Rejections feed a
//! reflective memory and the toy actor-critic learner.
//!
//! Modules:
//! - [`trajectory`]: steps, trajectories, result taxonomy and JSONL logs
//! - [`memory`]: short-term window, long-term reflections, context rendering
//! - [`learner`]: softmax-linear actor, linear critic, update rules, gradient checks
//! - [`orchestrator`]: the episode loop, checker and learner hooks
//! - [`envs`]: SQL database and shell sandbox environments
//! - [`backend`]: scripted, toy-policy and remote chat backends
//! - [`metrics`]: BLEU-4, ROUGE and distribution reports
//! - [`cli`]: the `cmat` command line

pub mod backend;
pub mod cli;
pub mod envs;
pub mod learner;
pub mod memory;
pub mod metrics;
pub mod orchestrator;
pub mod trajectory;
