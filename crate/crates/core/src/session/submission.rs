use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{on_grid, DecisionSpec, QuestionKind, QuestionnaireView};

/// A participant's answer to the current view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub view_id: String,
    pub payload: SubmissionPayload,
    #[serde(default)]
    pub client_elapsed_ms: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SubmissionPayload {
    /// Acknowledges an instruction or score feedback view.
    Ack,
    Answers { answers: BTreeMap<String, Value> },
    Decision { selected: Vec<String> },
}

impl SubmissionPayload {
    pub fn kind_name(&self) -> &'static str {
        match self {
            SubmissionPayload::Ack => "ack",
            SubmissionPayload::Answers { .. } => "answers",
            SubmissionPayload::Decision { .. } => "decision",
        }
    }
}

pub(crate) fn check_decision(decision: &DecisionSpec, selected: &[String]) -> Result<(), String> {
    let mut seen = BTreeSet::new();
    for label in selected {
        if !decision.options.contains(label) {
            return Err(format!("\"{label}\" is not an option"));
        }
        if !seen.insert(label) {
            return Err(format!("\"{label}\" selected twice"));
        }
    }
    if decision.exclusive && selected.len() != 1 {
        return Err(format!(
            "exclusive decision needs exactly one selected option, got {}",
            selected.len()
        ));
    }
    Ok(())
}

pub(crate) fn check_answers(q: &QuestionnaireView, answers: &BTreeMap<String, Value>) -> Result<(), String> {
    if let Some(unknown) = answers.keys().find(|id| !q.questions.iter().any(|qs| &qs.id == *id)) {
        return Err(format!("unknown question \"{unknown}\""));
    }
    for qs in &q.questions {
        let value = answers.get(&qs.id).filter(|v| !v.is_null());
        let Some(value) = value else {
            if qs.required {
                return Err(format!("question \"{}\" is required", qs.id));
            }
            continue;
        };
        let bad = |why: &str| Err(format!("question \"{}\": {why}", qs.id));
        match &qs.kind {
            QuestionKind::Choice { options, exclusive: true } => match value.as_str() {
                Some(s) if options.iter().any(|o| o == s) => {}
                Some(s) => return bad(&format!("\"{s}\" is not an option")),
                None => return bad("expected one option label"),
            },
            QuestionKind::Choice { options, exclusive: false } => {
                let Some(items) = value.as_array() else {
                    return bad("expected a list of option labels");
                };
                let mut seen = BTreeSet::new();
                for item in items {
                    match item.as_str() {
                        Some(s) if options.iter().any(|o| o == s) => {
                            if !seen.insert(s) {
                                return bad(&format!("\"{s}\" selected twice"));
                            }
                        }
                        _ => return bad(&format!("{item} is not an option")),
                    }
                }
                if qs.required && items.is_empty() {
                    return bad("at least one option is required");
                }
            }
            QuestionKind::Text { max_len } => {
                let Some(s) = value.as_str() else {
                    return bad("expected text");
                };
                let len = s.chars().count();
                if len > *max_len as usize {
                    return bad(&format!("text is {len} characters, limit is {max_len}"));
                }
                if qs.required && s.trim().is_empty() {
                    return bad("an answer is required");
                }
            }
            QuestionKind::Slider { min, max, step, .. } => {
                let Some(x) = value.as_f64() else {
                    return bad("expected a number");
                };
                if x < *min || x > *max || !on_grid(x, *min, *step) {
                    return bad(&format!("{x} is not on the slider grid {min}..={max} step {step}"));
                }
            }
        }
    }
    Ok(())
}
