pub mod envs;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod seeding;
pub mod trainer;
