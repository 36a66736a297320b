//! One participant's journey through a protocol.

mod engine;
mod render;
mod state;
mod submission;

pub use engine::{
    format_number, linearize, session_id_for, Engine, EngineConfig, EngineError, FeedbackResult, ScoreResult,
    SubmitOutcome,
};
pub use render::{
    Progress, RenderedMedia, RenderedPrediction, RenderedQuestion, RenderedView, ViewContent, ViewResponse,
    ASSET_PREFIX,
};
pub use state::{ReplayError, ResultRecord, SessionState, SessionStatus, Verdict, ViewInstance, ViewKind};
pub use submission::{Submission, SubmissionPayload};
