//! Two-stage structural reading comprehension over web pages.
//!
//! Pages are tokenized and parsed into DOM trees ([`html_dom`]), turned into
//! a densified DOM relation graph plus four spatial position-relation graphs
//! ([`graph`]), scored node-by-node by a relation-masked graph attention
//! model ([`encoder`]), and finally answered by picking the best token span
//! inside the predicted node ([`span_qa`]). [`metrics`] implements EM, F1
//! and path overlap; [`pipeline`] ties everything to datasets, files and the
//! `tie` command line.

pub mod cli;
pub mod encoder;
pub mod graph;
pub mod html_dom;
pub mod metrics;
pub mod pipeline;
pub mod span_qa;
