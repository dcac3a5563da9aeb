//! Preference elicitation from food images, combined with nutrient-goal
//! ranking, for meal recommendation.

pub mod catalog;
pub mod elicitation;
pub mod nutrition;
pub mod recommender;
pub mod rng;
pub mod simulation;
pub mod synthetic;
