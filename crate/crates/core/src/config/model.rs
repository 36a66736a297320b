//! Protocol data model.
//!
//! Serialization emits keys in the order fields are declared here, with the
//! `kind` discriminator first for every tagged node. That order is the
//! documented on-disk order and is stable across runs.

use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};

pub const DEFAULT_ACK_LABEL: &str = "Continue";
pub const DEFAULT_SCORE_TEMPLATE: &str = "Your score: {score} / {max}";
pub const DEFAULT_TEXT_MAX_LEN: u32 = 2000;
pub const DEFAULT_POINTS_PER_CORRECT: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProtocolSpec {
    pub id: String,
    pub title: String,
    pub completion: CompletionSpec,
    pub elements: Vec<ProtocolElement>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompletionSpec {
    pub message: String,
    pub redirect_url: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProtocolElement {
    Instruction(InstructionView),
    Questionnaire(QuestionnaireView),
    Experiment(ExperimentSpec),
}

impl ProtocolElement {
    pub fn id(&self) -> &str {
        match self {
            ProtocolElement::Instruction(v) => &v.id,
            ProtocolElement::Questionnaire(v) => &v.id,
            ProtocolElement::Experiment(e) => &e.id,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentSpec {
    pub id: String,
    pub title: String,
    pub elements: Vec<ExperimentElement>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExperimentElement {
    Instruction(InstructionView),
    Questionnaire(QuestionnaireView),
    Task(TaskSpec),
    ScoreFeedback(ScoreFeedbackView),
}

impl ExperimentElement {
    pub fn id(&self) -> &str {
        match self {
            ExperimentElement::Instruction(v) => &v.id,
            ExperimentElement::Questionnaire(v) => &v.id,
            ExperimentElement::Task(t) => &t.id,
            ExperimentElement::ScoreFeedback(v) => &v.id,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TaskSpec {
    pub id: String,
    pub title: String,
    pub decision: DecisionSpec,
    pub randomize_instances: bool,
    pub instance_feedback: FeedbackPolicy,
    pub time_limit_s: Option<f64>,
    pub show_progress: bool,
    pub scoring: ScoringSpec,
    pub instances: Vec<InstanceSpec>,
}

impl TaskSpec {
    pub fn time_limit_ms(&self) -> Option<i64> {
        self.time_limit_s.map(|s| (s * 1000.0).round() as i64)
    }

    pub fn instance(&self, id: &str) -> Option<&InstanceSpec> {
        self.instances.iter().find(|i| i.id == id)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackPolicy {
    None,
    CorrectnessOnly,
    CorrectnessAndExpected,
}

impl FeedbackPolicy {
    pub const NAMES: [&'static str; 3] = ["none", "correctness_only", "correctness_and_expected"];

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "none" => Some(Self::None),
            "correctness_only" => Some(Self::CorrectnessOnly),
            "correctness_and_expected" => Some(Self::CorrectnessAndExpected),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoringSpec {
    pub points_per_correct: f64,
    pub template: String,
}

impl Default for ScoringSpec {
    fn default() -> Self {
        Self {
            points_per_correct: DEFAULT_POINTS_PER_CORRECT,
            template: DEFAULT_SCORE_TEMPLATE.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecisionSpec {
    pub prompt: String,
    pub options: Vec<String>,
    pub exclusive: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InstanceSpec {
    pub id: String,
    pub instance: Option<MediaRef>,
    pub prediction: Option<PredictionRef>,
    pub explanations: Vec<MediaRef>,
    pub expected: Option<Vec<String>>,
    pub prompt_override: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MediaRef {
    Image {
        src: String,
        alt: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
    Text {
        value: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
}

impl MediaRef {
    pub fn image_src(&self) -> Option<&str> {
        match self {
            MediaRef::Image { src, .. } => Some(src),
            MediaRef::Text { .. } => None,
        }
    }
}

/// Model prediction media plus where the client should place it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PredictionRef {
    #[serde(flatten)]
    pub media: MediaRef,
    pub position: Placement,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    Top,
    BelowInstance,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InstructionView {
    pub id: String,
    pub title: String,
    pub body: String,
    pub image: Option<MediaRef>,
    pub ack_label: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuestionnaireView {
    pub id: String,
    pub title: String,
    pub questions: Vec<QuestionSpec>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuestionSpec {
    pub id: String,
    pub prompt: String,
    pub required: bool,
    pub kind: QuestionKind,
}

#[derive(Clone, Debug, PartialEq)]
pub enum QuestionKind {
    Choice {
        options: Vec<String>,
        exclusive: bool,
    },
    Text {
        max_len: u32,
    },
    Slider {
        min: f64,
        max: f64,
        step: f64,
        min_label: String,
        max_label: String,
    },
}

impl QuestionKind {
    pub fn name(&self) -> &'static str {
        match self {
            QuestionKind::Choice { .. } => "choice",
            QuestionKind::Text { .. } => "text",
            QuestionKind::Slider { .. } => "slider",
        }
    }
}

// Key order: kind, id, prompt, required, then the kind-specific payload.
impl Serialize for QuestionSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(None)?;
        m.serialize_entry("kind", self.kind.name())?;
        m.serialize_entry("id", &self.id)?;
        m.serialize_entry("prompt", &self.prompt)?;
        m.serialize_entry("required", &self.required)?;
        match &self.kind {
            QuestionKind::Choice { options, exclusive } => {
                m.serialize_entry("options", options)?;
                m.serialize_entry("exclusive", exclusive)?;
            }
            QuestionKind::Text { max_len } => m.serialize_entry("max_len", max_len)?,
            QuestionKind::Slider {
                min,
                max,
                step,
                min_label,
                max_label,
            } => {
                m.serialize_entry("min", min)?;
                m.serialize_entry("max", max)?;
                m.serialize_entry("step", step)?;
                m.serialize_entry("min_label", min_label)?;
                m.serialize_entry("max_label", max_label)?;
            }
        }
        m.end()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoreFeedbackView {
    pub id: String,
    pub task_ref: String,
}

impl ProtocolSpec {
    pub fn experiments(&self) -> impl Iterator<Item = &ExperimentSpec> {
        self.elements.iter().filter_map(|e| match e {
            ProtocolElement::Experiment(x) => Some(x),
            _ => None,
        })
    }

    pub fn tasks(&self) -> impl Iterator<Item = (&ExperimentSpec, &TaskSpec)> {
        self.experiments().flat_map(|x| {
            x.elements.iter().filter_map(move |e| match e {
                ExperimentElement::Task(t) => Some((x, t)),
                _ => None,
            })
        })
    }

    pub fn task(&self, id: &str) -> Option<&TaskSpec> {
        self.tasks().map(|(_, t)| t).find(|t| t.id == id)
    }

    pub fn experiment(&self, id: &str) -> Option<&ExperimentSpec> {
        self.experiments().find(|x| x.id == id)
    }

    pub fn instruction(&self, id: &str) -> Option<&InstructionView> {
        self.elements
            .iter()
            .filter_map(|e| match e {
                ProtocolElement::Instruction(v) => Some(v),
                _ => None,
            })
            .chain(self.experiments().flat_map(|x| {
                x.elements.iter().filter_map(|e| match e {
                    ExperimentElement::Instruction(v) => Some(v),
                    _ => None,
                })
            }))
            .find(|v| v.id == id)
    }

    pub fn questionnaire(&self, id: &str) -> Option<&QuestionnaireView> {
        self.elements
            .iter()
            .filter_map(|e| match e {
                ProtocolElement::Questionnaire(v) => Some(v),
                _ => None,
            })
            .chain(self.experiments().flat_map(|x| {
                x.elements.iter().filter_map(|e| match e {
                    ExperimentElement::Questionnaire(v) => Some(v),
                    _ => None,
                })
            }))
            .find(|v| v.id == id)
    }

    pub fn score_feedback(&self, id: &str) -> Option<&ScoreFeedbackView> {
        self.experiments()
            .flat_map(|x| x.elements.iter())
            .filter_map(|e| match e {
                ExperimentElement::ScoreFeedback(v) => Some(v),
                _ => None,
            })
            .find(|v| v.id == id)
    }
}
