//! Human review of flagged labels: a persistent queue and its HTTP API.
pub mod api;
pub mod store;

pub use api::{router, AppState};
pub use store::{
    Choice, Presentation, Progress, ReviewDecision, ReviewError, ReviewItem, ReviewStore, Status,
};
