//! Adaptive fast/slow reasoning policy optimization.
//!
//! The crate covers the full stack needed to train a reasoning policy that
//! decides how much deliberate thinking each query deserves:
//!
//! - [`trace`]: parsing and rendering responses with `<fast_think>` and
//!   `<slow_think>` segments inside a `<think>` span.
//! - [`budget`]: per-group success rate and the online token length budget.
//! - [`reward`]: the accuracy, length, and thinking-pattern rewards and their
//!   clipped combination.
//! - [`grpo`]: group-normalized advantages and the clipped surrogate with a
//!   KL penalty, with exact gradients.
//! - [`policy`], [`env`], [`trainer`]: a small log-linear policy, a synthetic
//!   graded-difficulty environment, and the cold-start plus RL pipeline.
//! - [`wire`] and [`cli`]: JSONL formats and the `acpo` command line.

pub mod budget;
pub mod cli;
pub mod env;
pub mod grpo;
pub mod policy;
pub mod reward;
pub mod seeding;
pub mod trace;
pub mod trainer;
pub mod wire;
