//! Target-guided open-domain conversation grounded on a commonsense
//! knowledge graph.
//!
//! The pipeline runs bottom-up: [`text`] builds vocabularies and extracts
//! keywords, [`ckg`] filters triplets and answers weighted shortest-path
//! queries, [`corpus`] turns raw conversations into prediction and retrieval
//! examples, [`numerics`] provides the trainable layers, and the
//! [`predictor`], [`strategy`] and [`matcher`] modules combine into the agent
//! that [`sim`] runs in self-play and [`session`] serves to people.

pub mod agent;
pub mod ckg;
pub mod concepts;
pub mod corpus;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod grounding;
pub mod hash;
pub mod ids;
pub mod matcher;
pub mod numerics;
pub mod pmi;
pub mod predictor;
mod serde_inf;
pub mod session;
pub mod sim;
pub mod strategy;
pub mod synthetic;
pub mod text;
pub mod train;

pub use ckg::{CkgGraph, CkgTriplet, DistanceMap};
pub use error::{Error, Result};
pub use grounding::Grounding;
pub use ids::{KeywordId, NodeId, RelationId, TokenId, UtteranceId};
