//! Training-free calibration of generative listwise rerankers.
//!
//! A listwise reranker reads a query and a numbered list of passages and
//! emits a ranking such as `[2] > [3] > [1]`. Its choices lean on slot
//! position and label identity regardless of content. This crate measures
//! that lean by scoring the same prompt with the passages blanked out and
//! subtracts it at each decoding step, scaled by how uncertain the model is.
//!
//! ```
//! use capcal::backend::SimulatedLm;
//! use capcal::calibration::{decode_base, decode_capcal, CalibrationConfig};
//! use capcal::prompting::{PlaceholderPolicy, PromptTemplate};
//! use capcal::{IdentifierScheme, Query, RerankTask};
//!
//! let task = RerankTask::new(
//!     Query::new("q1", "what is calibration").unwrap(),
//!     vec![
//!         ("a".into(), "unrelated text".into()),
//!         ("b".into(), "calibration adjusts model confidence".into()),
//!     ],
//!     IdentifierScheme::Numeric,
//!     PlaceholderPolicy::default(),
//! )
//! .unwrap();
//! // A model that prefers slot 1 by a wide margin and `b` by a small one.
//! let lm = SimulatedLm::new(vec![1.5, 0.0], 1.0)
//!     .with_relevance("q1", "b", 1.0)
//!     .with_task(&task);
//! let tpl = PromptTemplate::default();
//!
//! let base = decode_base(&lm, &task, &tpl).unwrap();
//! let cal = decode_capcal(&lm, &task, &tpl, &CalibrationConfig::default()).unwrap();
//! assert_eq!(base.permutation.order, vec![1, 2]);
//! assert_eq!(cal.permutation.order, vec![2, 1]);
//! ```

pub mod backend;
pub mod baselines;
pub mod calibration;
pub mod domain;
pub mod evaluation;
pub mod prompting;
pub mod synthetic;

pub use domain::*;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/prompts.md")]
    mod prompts {}
    #[doc = include_str!("../../../book/src/prior.md")]
    mod prior {}
    #[doc = include_str!("../../../book/src/calibration.md")]
    mod calibration {}
    #[doc = include_str!("../../../book/src/decoding.md")]
    mod decoding {}
    #[doc = include_str!("../../../book/src/baselines.md")]
    mod baselines {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/backends.md")]
    mod backends {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
