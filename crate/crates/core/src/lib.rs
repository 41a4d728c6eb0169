pub mod analysis;
pub mod bandit;
pub mod cli;
pub mod corpus;
pub mod eval;
pub mod llm;
mod parallel;
pub mod prompt;
pub mod search;
pub mod seed;
