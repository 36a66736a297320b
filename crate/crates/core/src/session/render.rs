//! The display payload for the current view, as sent to participants.

use serde::{Deserialize, Serialize};

use crate::config::markup::{self, Block};
use crate::config::{MediaRef, Placement, QuestionKind, QuestionSpec};

/// URL prefix under which image assets are served.
pub const ASSET_PREFIX: &str = "/assets/";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RenderedMedia {
    Image {
        src: String,
        url: String,
        alt: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
    Text {
        value: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
}

impl From<&MediaRef> for RenderedMedia {
    fn from(m: &MediaRef) -> Self {
        match m {
            MediaRef::Image { src, alt, label } => RenderedMedia::Image {
                src: src.clone(),
                url: format!("{ASSET_PREFIX}{src}"),
                alt: alt.clone(),
                label: label.clone(),
            },
            MediaRef::Text { value, label } => RenderedMedia::Text {
                value: value.clone(),
                label: label.clone(),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderedPrediction {
    pub media: RenderedMedia,
    pub position: Placement,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RenderedQuestion {
    Choice {
        id: String,
        prompt: String,
        required: bool,
        options: Vec<String>,
        exclusive: bool,
    },
    Text {
        id: String,
        prompt: String,
        required: bool,
        max_len: u32,
    },
    Slider {
        id: String,
        prompt: String,
        required: bool,
        min: f64,
        max: f64,
        step: f64,
        min_label: String,
        max_label: String,
    },
}

impl From<&QuestionSpec> for RenderedQuestion {
    fn from(q: &QuestionSpec) -> Self {
        let (id, prompt, required) = (q.id.clone(), q.prompt.clone(), q.required);
        match &q.kind {
            QuestionKind::Choice { options, exclusive } => RenderedQuestion::Choice {
                id,
                prompt,
                required,
                options: options.clone(),
                exclusive: *exclusive,
            },
            QuestionKind::Text { max_len } => RenderedQuestion::Text {
                id,
                prompt,
                required,
                max_len: *max_len,
            },
            QuestionKind::Slider {
                min,
                max,
                step,
                min_label,
                max_label,
            } => RenderedQuestion::Slider {
                id,
                prompt,
                required,
                min: *min,
                max: *max,
                step: *step,
                min_label: min_label.clone(),
                max_label: max_label.clone(),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    /// 1-based position within the task's presented order.
    pub index: usize,
    pub total: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ViewContent {
    Instruction {
        title: String,
        body: String,
        blocks: Vec<Block>,
        #[serde(default)]
        image: Option<RenderedMedia>,
        ack_label: String,
    },
    Questionnaire {
        title: String,
        questions: Vec<RenderedQuestion>,
    },
    InstanceDecision {
        task_id: String,
        title: String,
        #[serde(default)]
        instance: Option<RenderedMedia>,
        #[serde(default)]
        prediction: Option<RenderedPrediction>,
        explanations: Vec<RenderedMedia>,
        prompt: String,
        options: Vec<String>,
        exclusive: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        remaining_time_s: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        time_limit_s: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        progress: Option<Progress>,
    },
    ScoreFeedback {
        task_id: String,
        text: String,
        score: f64,
        max: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderedView {
    pub view_id: String,
    /// 0-based position of this view in the participant's sequence.
    pub position: usize,
    pub total_views: usize,
    #[serde(flatten)]
    pub content: ViewContent,
}

impl RenderedView {
    pub fn remaining_time_s(&self) -> Option<f64> {
        match &self.content {
            ViewContent::InstanceDecision { remaining_time_s, .. } => *remaining_time_s,
            _ => None,
        }
    }
}

/// What `GET /api/session/view` returns: the current view or the completion
/// marker.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ViewResponse {
    InProgress(Box<RenderedView>),
    Completed {
        message: String,
        redirect_url: Option<String>,
    },
}

pub(crate) fn instruction_content(v: &crate::config::InstructionView) -> ViewContent {
    ViewContent::Instruction {
        title: v.title.clone(),
        body: v.body.clone(),
        blocks: markup::parse(&v.body),
        image: v.image.as_ref().map(RenderedMedia::from),
        ack_label: v.ack_label.clone(),
    }
}
