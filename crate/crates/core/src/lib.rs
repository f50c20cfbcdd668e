pub mod adherence;
pub mod coi_planner;
pub mod corpus;
pub mod openai;
pub mod prompting;
pub mod provider;
pub mod question_bank;
pub mod scripted;
pub mod stats;
pub mod vector_index;
