//! Protocol JSON → [`ProtocolSpec`].
//!
//! Decoding is hand-rolled over `serde_json::Value` so every problem is
//! reported with the path of the node it concerns, and so that decoding keeps
//! going after the first problem to report as many as possible.

use serde_json::{Map, Value};

use super::diagnostic::{has_errors, join, Diagnostic};
use super::model::*;
use super::validate::validate_protocol;

/// A successfully decoded and validated protocol plus any warnings.
#[derive(Clone, Debug, PartialEq)]
pub struct Parsed {
    pub spec: ProtocolSpec,
    pub warnings: Vec<Diagnostic>,
}

/// Decodes and validates a protocol document. On failure the returned list
/// holds every diagnostic found (at least one error), warnings included.
pub fn parse_protocol(text: &[u8]) -> Result<Parsed, Vec<Diagnostic>> {
    let value: Value = match serde_json::from_slice(text) {
        Ok(v) => v,
        Err(e) => return Err(vec![Diagnostic::error("", format!("malformed JSON: {e}"))]),
    };
    let mut cx = Cx::default();
    let spec = cx.protocol(&value);
    let mut diags = cx.diags;
    let Some(spec) = spec.filter(|_| !has_errors(&diags)) else {
        return Err(diags);
    };
    diags.extend(validate_protocol(&spec, None));
    if has_errors(&diags) {
        Err(diags)
    } else {
        Ok(Parsed { spec, warnings: diags })
    }
}

#[derive(Default)]
struct Cx {
    diags: Vec<Diagnostic>,
}

/// A JSON object being decoded; tracks which keys were consumed so leftovers
/// can be reported as unknown.
struct Obj<'a> {
    map: &'a Map<String, Value>,
    path: String,
    seen: Vec<&'static str>,
    /// Diagnostic count when the object was opened; unknown-key warnings
    /// are inserted there so they precede those of nested objects.
    mark: usize,
}

impl<'a> Obj<'a> {
    fn raw(&mut self, key: &'static str) -> Option<&'a Value> {
        self.seen.push(key);
        self.map.get(key).filter(|v| !v.is_null())
    }

    fn at(&self, key: &str) -> String {
        join(&self.path, key)
    }
}

impl Cx {
    fn err(&mut self, path: impl Into<String>, msg: impl Into<String>) {
        self.diags.push(Diagnostic::error(path, msg));
    }

    fn object<'a>(&mut self, v: &'a Value, path: &str) -> Option<Obj<'a>> {
        match v.as_object() {
            Some(map) => Some(Obj {
                map,
                path: path.to_string(),
                seen: Vec::new(),
                mark: self.diags.len(),
            }),
            None => {
                self.err(path, "must be an object");
                None
            }
        }
    }

    fn finish(&mut self, o: Obj<'_>) {
        let unknown = o
            .map
            .keys()
            .filter(|key| !o.seen.contains(&key.as_str()))
            .map(|key| Diagnostic::warning(join(&o.path, key), format!("unknown key \"{key}\" ignored")));
        let mark = o.mark.min(self.diags.len());
        self.diags.splice(mark..mark, unknown);
    }

    fn req_str(&mut self, o: &mut Obj<'_>, key: &'static str) -> Option<String> {
        match o.raw(key) {
            None => {
                self.err(o.path.clone(), format!("missing required field \"{key}\""));
                None
            }
            Some(v) => self.string(v, &o.at(key)),
        }
    }

    fn opt_str(&mut self, o: &mut Obj<'_>, key: &'static str) -> Option<Option<String>> {
        match o.raw(key) {
            None => Some(None),
            Some(v) => self.string(v, &o.at(key)).map(Some),
        }
    }

    fn string(&mut self, v: &Value, path: &str) -> Option<String> {
        match v.as_str() {
            Some(s) => Some(s.to_string()),
            None => {
                self.err(path, "must be a string");
                None
            }
        }
    }

    fn req_bool(&mut self, o: &mut Obj<'_>, key: &'static str) -> Option<bool> {
        match o.raw(key) {
            None => {
                self.err(o.path.clone(), format!("missing required field \"{key}\""));
                None
            }
            Some(v) => self.boolean(v, &o.at(key)),
        }
    }

    fn opt_bool(&mut self, o: &mut Obj<'_>, key: &'static str, default: bool) -> Option<bool> {
        match o.raw(key) {
            None => Some(default),
            Some(v) => self.boolean(v, &o.at(key)),
        }
    }

    fn boolean(&mut self, v: &Value, path: &str) -> Option<bool> {
        match v.as_bool() {
            Some(b) => Some(b),
            None => {
                self.err(path, "must be a boolean");
                None
            }
        }
    }

    fn req_num(&mut self, o: &mut Obj<'_>, key: &'static str) -> Option<f64> {
        match o.raw(key) {
            None => {
                self.err(o.path.clone(), format!("missing required field \"{key}\""));
                None
            }
            Some(v) => self.number(v, &o.at(key)),
        }
    }

    fn opt_num(&mut self, o: &mut Obj<'_>, key: &'static str) -> Option<Option<f64>> {
        match o.raw(key) {
            None => Some(None),
            Some(v) => self.number(v, &o.at(key)).map(Some),
        }
    }

    fn number(&mut self, v: &Value, path: &str) -> Option<f64> {
        match v.as_f64() {
            Some(n) => Some(n),
            None => {
                self.err(path, "must be a number");
                None
            }
        }
    }

    fn req_array<'a>(&mut self, o: &mut Obj<'a>, key: &'static str) -> Option<&'a Vec<Value>> {
        match o.raw(key) {
            None => {
                self.err(o.path.clone(), format!("missing required field \"{key}\""));
                None
            }
            Some(v) => self.array(v, &o.at(key)),
        }
    }

    fn array<'a>(&mut self, v: &'a Value, path: &str) -> Option<&'a Vec<Value>> {
        match v.as_array() {
            Some(a) => Some(a),
            None => {
                self.err(path, "must be an array");
                None
            }
        }
    }

    fn strings(&mut self, v: &Value, path: &str) -> Option<Vec<String>> {
        let items = self.array(v, path)?;
        collect_all(
            items
                .iter()
                .enumerate()
                .map(|(i, item)| self.string(item, &join(path, i)))
                .collect(),
        )
    }

    fn kind<'a>(&mut self, o: &mut Obj<'a>) -> Option<&'a str> {
        match o.raw("kind") {
            None => {
                self.err(o.path.clone(), "missing required field \"kind\"");
                None
            }
            Some(Value::String(s)) => Some(s.as_str()),
            Some(_) => {
                self.err(o.at("kind"), "must be a string");
                None
            }
        }
    }

    fn unknown_kind(&mut self, o: &Obj<'_>, kind: &str, allowed: &[&str]) {
        self.err(
            o.at("kind"),
            format!("unknown kind \"{kind}\" (expected one of: {})", allowed.join(", ")),
        );
    }

    fn protocol(&mut self, v: &Value) -> Option<ProtocolSpec> {
        let mut o = self.object(v, "")?;
        let id = self.req_str(&mut o, "id");
        let title = self.req_str(&mut o, "title");
        let completion = match o.raw("completion") {
            None => {
                self.err("", "missing required field \"completion\"");
                None
            }
            Some(c) => self.completion(c, &o.at("completion")),
        };
        let elements = self.req_array(&mut o, "elements").and_then(|items| {
            let path = o.at("elements");
            collect_all(
                items
                    .iter()
                    .enumerate()
                    .map(|(i, e)| self.protocol_element(e, &join(&path, i)))
                    .collect(),
            )
        });
        self.finish(o);
        Some(ProtocolSpec {
            id: id?,
            title: title?,
            completion: completion?,
            elements: elements?,
        })
    }

    fn completion(&mut self, v: &Value, path: &str) -> Option<CompletionSpec> {
        let mut o = self.object(v, path)?;
        let message = self.req_str(&mut o, "message");
        let redirect_url = self.opt_str(&mut o, "redirect_url");
        self.finish(o);
        Some(CompletionSpec {
            message: message?,
            redirect_url: redirect_url?,
        })
    }

    fn protocol_element(&mut self, v: &Value, path: &str) -> Option<ProtocolElement> {
        let mut o = self.object(v, path)?;
        let kind = self.kind(&mut o)?;
        match kind {
            "instruction" => self.instruction(o).map(ProtocolElement::Instruction),
            "questionnaire" => self.questionnaire(o).map(ProtocolElement::Questionnaire),
            "experiment" => self.experiment(o).map(ProtocolElement::Experiment),
            other => {
                self.unknown_kind(&o, other, &["instruction", "questionnaire", "experiment"]);
                None
            }
        }
    }

    fn experiment(&mut self, mut o: Obj<'_>) -> Option<ExperimentSpec> {
        let id = self.req_str(&mut o, "id");
        let title = self.req_str(&mut o, "title");
        let elements = self.req_array(&mut o, "elements").and_then(|items| {
            let path = o.at("elements");
            collect_all(
                items
                    .iter()
                    .enumerate()
                    .map(|(i, e)| self.experiment_element(e, &join(&path, i)))
                    .collect(),
            )
        });
        self.finish(o);
        Some(ExperimentSpec {
            id: id?,
            title: title?,
            elements: elements?,
        })
    }

    fn experiment_element(&mut self, v: &Value, path: &str) -> Option<ExperimentElement> {
        let mut o = self.object(v, path)?;
        let kind = self.kind(&mut o)?;
        match kind {
            "instruction" => self.instruction(o).map(ExperimentElement::Instruction),
            "questionnaire" => self.questionnaire(o).map(ExperimentElement::Questionnaire),
            "task" => self.task(o).map(ExperimentElement::Task),
            "score_feedback" => {
                let id = self.req_str(&mut o, "id");
                let task_ref = self.req_str(&mut o, "task_ref");
                self.finish(o);
                Some(ExperimentElement::ScoreFeedback(ScoreFeedbackView {
                    id: id?,
                    task_ref: task_ref?,
                }))
            }
            other => {
                self.unknown_kind(&o, other, &["instruction", "questionnaire", "task", "score_feedback"]);
                None
            }
        }
    }

    fn instruction(&mut self, mut o: Obj<'_>) -> Option<InstructionView> {
        let id = self.req_str(&mut o, "id");
        let title = self.req_str(&mut o, "title");
        let body = self.req_str(&mut o, "body");
        let image = match o.raw("image") {
            None => Some(None),
            Some(v) => self.media(v, &o.at("image")).map(Some),
        };
        let ack_label = self.opt_str(&mut o, "ack_label");
        self.finish(o);
        Some(InstructionView {
            id: id?,
            title: title?,
            body: body?,
            image: image?,
            ack_label: ack_label?.unwrap_or_else(|| DEFAULT_ACK_LABEL.to_string()),
        })
    }

    fn questionnaire(&mut self, mut o: Obj<'_>) -> Option<QuestionnaireView> {
        let id = self.req_str(&mut o, "id");
        let title = self.req_str(&mut o, "title");
        let questions = self.req_array(&mut o, "questions").and_then(|items| {
            let path = o.at("questions");
            collect_all(
                items
                    .iter()
                    .enumerate()
                    .map(|(i, q)| self.question(q, &join(&path, i)))
                    .collect(),
            )
        });
        self.finish(o);
        Some(QuestionnaireView {
            id: id?,
            title: title?,
            questions: questions?,
        })
    }

    fn question(&mut self, v: &Value, path: &str) -> Option<QuestionSpec> {
        let mut o = self.object(v, path)?;
        let kind = self.kind(&mut o)?;
        let id = self.req_str(&mut o, "id");
        let prompt = self.req_str(&mut o, "prompt");
        let required = self.opt_bool(&mut o, "required", true);
        let kind = match kind {
            "choice" => {
                let options = match o.raw("options") {
                    None => {
                        self.err(path, "missing required field \"options\"");
                        None
                    }
                    Some(v) => self.strings(v, &o.at("options")),
                };
                let exclusive = self.req_bool(&mut o, "exclusive");
                Some(QuestionKind::Choice {
                    options: options?,
                    exclusive: exclusive?,
                })
            }
            "text" => match o.raw("max_len") {
                None => Some(QuestionKind::Text {
                    max_len: DEFAULT_TEXT_MAX_LEN,
                }),
                Some(v) => match v.as_u64() {
                    Some(n) if n > 0 && n <= u64::from(u32::MAX) => Some(QuestionKind::Text { max_len: n as u32 }),
                    _ => {
                        self.err(o.at("max_len"), "must be a positive integer");
                        None
                    }
                },
            },
            "slider" => {
                let min = self.req_num(&mut o, "min");
                let max = self.req_num(&mut o, "max");
                let step = self.req_num(&mut o, "step");
                let min_label = self.opt_str(&mut o, "min_label");
                let max_label = self.opt_str(&mut o, "max_label");
                Some(QuestionKind::Slider {
                    min: min?,
                    max: max?,
                    step: step?,
                    min_label: min_label?.unwrap_or_default(),
                    max_label: max_label?.unwrap_or_default(),
                })
            }
            other => {
                self.unknown_kind(&o, other, &["choice", "text", "slider"]);
                None
            }
        };
        self.finish(o);
        Some(QuestionSpec {
            id: id?,
            prompt: prompt?,
            required: required?,
            kind: kind?,
        })
    }

    fn task(&mut self, mut o: Obj<'_>) -> Option<TaskSpec> {
        let id = self.req_str(&mut o, "id");
        let title = self.req_str(&mut o, "title");
        let decision = match o.raw("decision") {
            None => {
                self.err(o.path.clone(), "missing required field \"decision\"");
                None
            }
            Some(v) => self.decision(v, &o.at("decision")),
        };
        let randomize_instances = self.opt_bool(&mut o, "randomize_instances", false);
        let instance_feedback = match o.raw("instance_feedback") {
            None => Some(FeedbackPolicy::None),
            Some(v) => {
                let path = o.at("instance_feedback");
                self.string(v, &path).and_then(|s| match FeedbackPolicy::from_name(&s) {
                    Some(p) => Some(p),
                    None => {
                        self.err(
                            path,
                            format!(
                                "unknown feedback policy \"{s}\" (expected one of: {})",
                                FeedbackPolicy::NAMES.join(", ")
                            ),
                        );
                        None
                    }
                })
            }
        };
        let time_limit_s = self.opt_num(&mut o, "time_limit_s");
        let show_progress = self.opt_bool(&mut o, "show_progress", false);
        let scoring = match o.raw("scoring") {
            None => Some(ScoringSpec::default()),
            Some(v) => self.scoring(v, &o.at("scoring")),
        };
        let instances = self.req_array(&mut o, "instances").and_then(|items| {
            let path = o.at("instances");
            collect_all(
                items
                    .iter()
                    .enumerate()
                    .map(|(i, x)| self.instance(x, &join(&path, i)))
                    .collect(),
            )
        });
        self.finish(o);
        Some(TaskSpec {
            id: id?,
            title: title?,
            decision: decision?,
            randomize_instances: randomize_instances?,
            instance_feedback: instance_feedback?,
            time_limit_s: time_limit_s?,
            show_progress: show_progress?,
            scoring: scoring?,
            instances: instances?,
        })
    }

    fn decision(&mut self, v: &Value, path: &str) -> Option<DecisionSpec> {
        let mut o = self.object(v, path)?;
        let prompt = self.req_str(&mut o, "prompt");
        let options = match o.raw("options") {
            None => {
                self.err(path, "missing required field \"options\"");
                None
            }
            Some(v) => self.strings(v, &o.at("options")),
        };
        let exclusive = self.req_bool(&mut o, "exclusive");
        self.finish(o);
        Some(DecisionSpec {
            prompt: prompt?,
            options: options?,
            exclusive: exclusive?,
        })
    }

    fn scoring(&mut self, v: &Value, path: &str) -> Option<ScoringSpec> {
        let mut o = self.object(v, path)?;
        let points = match o.raw("points_per_correct") {
            None => Some(DEFAULT_POINTS_PER_CORRECT),
            Some(v) => self.number(v, &o.at("points_per_correct")),
        };
        let template = self.opt_str(&mut o, "template");
        self.finish(o);
        Some(ScoringSpec {
            points_per_correct: points?,
            template: template?.unwrap_or_else(|| DEFAULT_SCORE_TEMPLATE.to_string()),
        })
    }

    fn instance(&mut self, v: &Value, path: &str) -> Option<InstanceSpec> {
        let mut o = self.object(v, path)?;
        let id = self.req_str(&mut o, "id");
        let instance = match o.raw("instance") {
            None => Some(None),
            Some(v) => self.media(v, &o.at("instance")).map(Some),
        };
        let prediction = match o.raw("prediction") {
            None => Some(None),
            Some(v) => self.prediction(v, &o.at("prediction")).map(Some),
        };
        let explanations = match o.raw("explanations") {
            None => Some(Vec::new()),
            Some(v) => {
                let path = o.at("explanations");
                self.array(v, &path).and_then(|items| {
                    collect_all(
                        items
                            .iter()
                            .enumerate()
                            .map(|(i, m)| self.media(m, &join(&path, i)))
                            .collect(),
                    )
                })
            }
        };
        let expected = match o.raw("expected") {
            None => Some(None),
            Some(v) => self.strings(v, &o.at("expected")).map(Some),
        };
        let prompt_override = self.opt_str(&mut o, "prompt_override");
        self.finish(o);
        Some(InstanceSpec {
            id: id?,
            instance: instance?,
            prediction: prediction?,
            explanations: explanations?,
            expected: expected?,
            prompt_override: prompt_override?,
        })
    }

    fn prediction(&mut self, v: &Value, path: &str) -> Option<PredictionRef> {
        let mut o = self.object(v, path)?;
        let position = match o.raw("position") {
            None => Some(Placement::Top),
            Some(v) => {
                let p = o.at("position");
                match v.as_str() {
                    Some("top") => Some(Placement::Top),
                    Some("below_instance") => Some(Placement::BelowInstance),
                    _ => {
                        self.err(p, "must be \"top\" or \"below_instance\"");
                        None
                    }
                }
            }
        };
        let media = self.media_fields(o);
        Some(PredictionRef {
            media: media?,
            position: position?,
        })
    }

    fn media(&mut self, v: &Value, path: &str) -> Option<MediaRef> {
        let o = self.object(v, path)?;
        self.media_fields(o)
    }

    fn media_fields(&mut self, mut o: Obj<'_>) -> Option<MediaRef> {
        let kind = self.kind(&mut o)?;
        let media = match kind {
            "image" => {
                let src = self.req_str(&mut o, "src");
                let alt = self.req_str(&mut o, "alt");
                let label = self.opt_str(&mut o, "label");
                Some(MediaRef::Image {
                    src: src?,
                    alt: alt?,
                    label: label?,
                })
            }
            "text" => {
                let value = self.req_str(&mut o, "value");
                let label = self.opt_str(&mut o, "label");
                Some(MediaRef::Text {
                    value: value?,
                    label: label?,
                })
            }
            other => {
                self.unknown_kind(&o, other, &["image", "text"]);
                None
            }
        };
        self.finish(o);
        media
    }
}

fn collect_all<T>(items: Vec<Option<T>>) -> Option<Vec<T>> {
    items.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::diagnostic::Severity;

    const MINIMAL: &str = r#"{
        "id": "p", "title": "P",
        "completion": {"message": "Thanks"},
        "elements": [{"kind": "instruction", "id": "intro", "title": "Hi", "body": "Welcome"}]
    }"#;

    #[test]
    fn minimal_document_gets_defaults() {
        let parsed = parse_protocol(MINIMAL.as_bytes()).unwrap();
        assert_eq!(parsed.spec.elements.len(), 1);
        assert!(parsed.warnings.is_empty());
        let ProtocolElement::Instruction(iv) = &parsed.spec.elements[0] else { panic!() };
        assert_eq!(iv.ack_label, "Continue");
        assert_eq!(parsed.spec.completion.redirect_url, None);
    }

    #[test]
    fn malformed_json_is_one_root_error() {
        let diags = parse_protocol(b"{\"id\": ").unwrap_err();
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].path, "/");
        assert!(diags[0].is_error());
    }

    #[test]
    fn non_utf8_bytes_do_not_panic() {
        let diags = parse_protocol(&[0xff, 0xfe, 0x00]).unwrap_err();
        assert_eq!(diags[0].path, "/");
    }

    #[test]
    fn empty_elements() {
        let diags = parse_protocol(br#"{"id":"p","title":"P","completion":{"message":"m"},"elements":[]}"#).unwrap_err();
        assert_eq!(diags, vec![Diagnostic::error("/elements", "must be non-empty")]);
    }

    #[test]
    fn unknown_kind_reported_at_its_path() {
        let doc = br#"{"id":"p","title":"P","completion":{"message":"m"},
            "elements":[{"kind":"video","id":"x"}]}"#;
        let diags = parse_protocol(doc).unwrap_err();
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].path, "/elements/0/kind");
        assert!(diags[0].message.contains("video"));
    }

    #[test]
    fn missing_field_is_named() {
        let doc = br#"{"id":"p","completion":{"message":"m"},"elements":[]}"#;
        let diags = parse_protocol(doc).unwrap_err();
        assert!(diags.iter().any(|d| d.path == "/" && d.message.contains("\"title\"")));
    }

    #[test]
    fn unknown_keys_warn_but_parse() {
        let doc = br#"{"id":"p","title":"P","completion":{"message":"m"},"theme":"dark",
            "elements":[{"kind":"instruction","id":"i","title":"t","body":"b","colour":1}]}"#;
        let parsed = parse_protocol(doc).unwrap();
        let paths: Vec<_> = parsed.warnings.iter().map(|d| (d.severity, d.path.as_str())).collect();
        assert_eq!(
            paths,
            vec![(Severity::Warning, "/theme"), (Severity::Warning, "/elements/0/colour")]
        );
    }

    #[test]
    fn type_errors_keep_collecting() {
        let doc = br#"{"id":1,"title":"P","completion":{"message":"m"},
            "elements":[{"kind":"questionnaire","id":"q","title":"t","questions":[
                {"kind":"slider","id":"s","prompt":"p","min":"0","max":1,"step":1},
                {"kind":"text","id":"t","prompt":"p","max_len":0}]}]}"#;
        let diags = parse_protocol(doc).unwrap_err();
        let paths: Vec<_> = diags.iter().map(|d| d.path.as_str()).collect();
        assert_eq!(
            paths,
            vec!["/id", "/elements/0/questions/0/min", "/elements/0/questions/1/max_len"]
        );
    }
}
