//! valstab measures how stable a conversational language model's expressed
//! personal values and downstream behaviors are across conversation contexts.
//!
//! The pipeline simulates conversations on different topics between a tested
//! model and an interlocutor instance of the same model, administers the
//! PVQ-40 questionnaire (or a behavioral task bank) after each conversation,
//! scores the answers into value profiles, and estimates two kinds of
//! stability across contexts:
//!
//! * rank-order stability — does the ordering of simulated participants on a
//!   value survive a change of conversation topic?
//! * ipsative stability — does one participant's ordering of the ten values
//!   survive a change of conversation topic?
//!
//! Modules follow the pipeline: [`domain`] holds the embedded populations and
//! item banks, [`prompting`] renders prompts for the three model families,
//! [`backend`] talks to inference endpoints (or a deterministic scripted
//! stand-in), [`simulation`] orchestrates the administration procedure with
//! durable caching, [`scoring`] turns answers into profiles, [`stability`]
//! and [`stats`] implement the estimators and model comparisons, and
//! [`experiments`] packages everything into runnable recipes.

pub mod backend;
pub mod domain;
pub mod exec;
pub mod experiments;
pub mod prompting;
pub mod scoring;
pub mod seeding;
pub mod simulation;
pub mod stability;
pub mod stats;
