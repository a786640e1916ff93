//! Multi-domain collaborative filtering.
//!
//! Several sparse rating matrices that share a user pool are factorized
//! jointly. Each domain has its own user and item factors; a learned `K × K`
//! domain covariance couples the user factors so that domains with related
//! tastes borrow strength from each other. An optional monotone link function
//! `g(x) = a ln(bx + c) + shift` is fitted alongside and corrects for the
//! discrete, bounded rating scale.
//!
//! All parameters are fitted by alternating closed-form block updates (plus a
//! backtracking gradient step for the link), each of which never increases
//! the negative log-posterior.

pub mod baselines;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod link;
pub mod model;
pub mod model_io;
pub mod prepare;
pub mod synthetic;
pub mod trainer;

pub use dataset::{build_views, parse_ratings, split_train_test, DomainViews, FormatSpec, RatingDataset, RatingScale};
pub use error::{Error, Result};
pub use link::LinkParams;
pub use model::{init_model, negative_log_posterior, ModelState, TrainConfig};
pub use model_io::TrainedModel;
pub use trainer::{predict, train, TrainReport};
