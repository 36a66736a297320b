//! Structural rules for a decoded protocol.
//!
//! Paths use the same key names as the serialized document, so a diagnostic
//! produced here resolves against the file the experimenter wrote.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use super::diagnostic::{join, Diagnostic};
use super::markup;
use super::model::*;

/// Every invariant violation as an error; missing asset files as warnings
/// when `asset_root` is given. An empty result means deployable.
pub fn validate_protocol(spec: &ProtocolSpec, asset_root: Option<&Path>) -> Vec<Diagnostic> {
    let mut v = Validator {
        diags: Vec::new(),
        ids: HashMap::new(),
        asset_root,
        structural: true,
    };
    v.protocol(spec);
    v.diags
}

/// Only the missing-asset warnings for `spec` under `asset_root`.
pub fn missing_assets(spec: &ProtocolSpec, asset_root: &Path) -> Vec<Diagnostic> {
    let mut v = Validator {
        diags: Vec::new(),
        ids: HashMap::new(),
        asset_root: Some(asset_root),
        structural: false,
    };
    v.protocol(spec);
    v.diags
}

struct Validator<'a> {
    diags: Vec<Diagnostic>,
    ids: HashMap<String, String>,
    asset_root: Option<&'a Path>,
    structural: bool,
}

impl Validator<'_> {
    fn err(&mut self, path: impl Into<String>, msg: impl Into<String>) {
        if self.structural {
            self.diags.push(Diagnostic::error(path, msg));
        }
    }

    fn warn(&mut self, path: impl Into<String>, msg: impl Into<String>) {
        if self.structural {
            self.diags.push(Diagnostic::warning(path, msg));
        }
    }

    /// Registers a node id in the protocol-wide namespace.
    fn id(&mut self, id: &str, path: &str) {
        if id.trim().is_empty() {
            self.err(join(path, "id"), "must be non-empty");
            return;
        }
        if let Some(first) = self.ids.get(id) {
            let first = if first.is_empty() { "/".to_string() } else { first.clone() };
            self.err(path, format!("duplicate id \"{id}\" (also used at {first})"));
        } else {
            self.ids.insert(id.to_string(), path.to_string());
        }
    }

    fn protocol(&mut self, spec: &ProtocolSpec) {
        self.id(&spec.id, "");
        if let Some(url) = &spec.completion.redirect_url {
            if !(url.starts_with("https://") || url.starts_with("http://")) {
                self.err("/completion/redirect_url", "must be an http(s) URL");
            }
        }
        if spec.elements.is_empty() {
            self.err("/elements", "must be non-empty");
        }
        for (i, el) in spec.elements.iter().enumerate() {
            let path = format!("/elements/{i}");
            match el {
                ProtocolElement::Instruction(v) => self.instruction(v, &path),
                ProtocolElement::Questionnaire(v) => self.questionnaire(v, &path),
                ProtocolElement::Experiment(x) => self.experiment(x, &path),
            }
        }
    }

    fn experiment(&mut self, x: &ExperimentSpec, path: &str) {
        self.id(&x.id, path);
        if x.elements.is_empty() {
            self.err(join(path, "elements"), "must be non-empty");
        }
        let all_tasks: HashSet<&str> = x
            .elements
            .iter()
            .filter_map(|e| match e {
                ExperimentElement::Task(t) => Some(t.id.as_str()),
                _ => None,
            })
            .collect();
        let mut seen_tasks: HashSet<&str> = HashSet::new();
        for (i, el) in x.elements.iter().enumerate() {
            let p = format!("{path}/elements/{i}");
            match el {
                ExperimentElement::Instruction(v) => self.instruction(v, &p),
                ExperimentElement::Questionnaire(v) => self.questionnaire(v, &p),
                ExperimentElement::Task(t) => {
                    self.task(t, &p);
                    seen_tasks.insert(&t.id);
                }
                ExperimentElement::ScoreFeedback(s) => {
                    self.id(&s.id, &p);
                    let r = s.task_ref.as_str();
                    if seen_tasks.contains(r) {
                        continue;
                    }
                    if all_tasks.contains(r) {
                        self.err(
                            join(&p, "task_ref"),
                            format!("references a task not yet completed at this position (\"{r}\")"),
                        );
                    } else {
                        self.err(
                            join(&p, "task_ref"),
                            format!("references unknown task \"{r}\" (must be an earlier task in this experiment)"),
                        );
                    }
                }
            }
        }
    }

    fn instruction(&mut self, v: &InstructionView, path: &str) {
        self.id(&v.id, path);
        if let Err(msg) = markup::check(&v.body) {
            self.err(join(path, "body"), msg);
        }
        if v.ack_label.trim().is_empty() {
            self.err(join(path, "ack_label"), "must be non-empty");
        }
        if let Some(img) = &v.image {
            self.media(img, &join(path, "image"));
        }
    }

    fn questionnaire(&mut self, v: &QuestionnaireView, path: &str) {
        self.id(&v.id, path);
        if v.questions.is_empty() {
            self.err(join(path, "questions"), "must be non-empty");
        }
        let mut local: HashMap<&str, usize> = HashMap::new();
        for (i, q) in v.questions.iter().enumerate() {
            let p = format!("{path}/questions/{i}");
            if q.id.trim().is_empty() {
                self.err(join(&p, "id"), "must be non-empty");
            } else if let Some(first) = local.insert(&q.id, i) {
                self.err(
                    &p,
                    format!("duplicate question id \"{}\" (also used at {path}/questions/{first})", q.id),
                );
            }
            match &q.kind {
                QuestionKind::Choice { options, .. } => self.options(options, &join(&p, "options")),
                QuestionKind::Text { max_len } => {
                    if *max_len == 0 {
                        self.err(join(&p, "max_len"), "must be a positive integer");
                    }
                }
                QuestionKind::Slider { min, max, step, .. } => {
                    if !(min.is_finite() && max.is_finite() && step.is_finite()) {
                        self.err(&p, "min, max and step must be finite numbers");
                    } else if min >= max {
                        self.err(join(&p, "max"), "must be greater than min");
                    } else if *step <= 0.0 {
                        self.err(join(&p, "step"), "must be strictly positive");
                    } else if !on_grid(*max, *min, *step) {
                        self.err(join(&p, "step"), "max - min must be an exact multiple of step");
                    }
                }
            }
        }
    }

    fn options(&mut self, options: &[String], path: &str) {
        if options.len() < 2 {
            self.err(path, "must list at least 2 options");
        }
        let mut seen = HashSet::new();
        for (i, o) in options.iter().enumerate() {
            if o.trim().is_empty() {
                self.err(join(path, i), "option label must be non-empty");
            } else if !seen.insert(o.as_str()) {
                self.err(join(path, i), format!("duplicate option label \"{o}\""));
            }
        }
    }

    fn task(&mut self, t: &TaskSpec, path: &str) {
        self.id(&t.id, path);
        self.options(&t.decision.options, &format!("{path}/decision/options"));
        if let Some(limit) = t.time_limit_s {
            if !(limit.is_finite() && limit > 0.0) {
                self.err(join(path, "time_limit_s"), "must be strictly positive");
            }
        }
        let pts = t.scoring.points_per_correct;
        if !(pts.is_finite() && pts >= 0.0) {
            self.err(format!("{path}/scoring/points_per_correct"), "must be a non-negative number");
        }
        if !t.scoring.template.contains("{score}") {
            self.warn(format!("{path}/scoring/template"), "template has no {score} placeholder");
        }
        if t.instances.is_empty() {
            self.err(join(path, "instances"), "must be non-empty");
        }
        let options: HashSet<&str> = t.decision.options.iter().map(String::as_str).collect();
        for (i, inst) in t.instances.iter().enumerate() {
            let p = format!("{path}/instances/{i}");
            self.id(&inst.id, &p);
            if let Some(m) = &inst.instance {
                self.media(m, &join(&p, "instance"));
            }
            if let Some(pred) = &inst.prediction {
                self.media(&pred.media, &join(&p, "prediction"));
            }
            for (k, m) in inst.explanations.iter().enumerate() {
                self.media(m, &format!("{p}/explanations/{k}"));
            }
            if let Some(expected) = &inst.expected {
                let ep = join(&p, "expected");
                let mut seen = HashSet::new();
                for (k, label) in expected.iter().enumerate() {
                    if !options.contains(label.as_str()) {
                        self.err(join(&ep, k), format!("expected label not among options: \"{label}\""));
                    } else if !seen.insert(label.as_str()) {
                        self.err(join(&ep, k), format!("duplicate expected label \"{label}\""));
                    }
                }
                if t.decision.exclusive && expected.len() != 1 {
                    self.err(ep, "exclusive decision requires exactly one expected label");
                }
            }
        }
    }

    fn media(&mut self, m: &MediaRef, path: &str) {
        let MediaRef::Image { src, alt, .. } = m else { return };
        match check_asset_path(src) {
            Err(msg) => self.err(join(path, "src"), msg),
            Ok(()) => {
                if let Some(root) = self.asset_root {
                    if !root.join(src).is_file() {
                        self.diags
                            .push(Diagnostic::warning(join(path, "src"), format!("asset file not found: {src}")));
                    }
                }
            }
        }
        if alt.trim().is_empty() {
            self.warn(join(path, "alt"), "image has no alt text");
        }
    }
}

/// Relative, forward-slash path with no traversal or absolute components.
pub fn check_asset_path(src: &str) -> Result<(), String> {
    if src.is_empty() {
        return Err("must be non-empty".into());
    }
    if src.starts_with('/') || src.contains('\\') || src.contains(':') {
        return Err(format!("must be a relative path: \"{src}\""));
    }
    if src.split('/').any(|seg| seg == "..") {
        return Err(format!("must not contain \"..\" segments: \"{src}\""));
    }
    Ok(())
}

/// Whether `value` lies on the grid `base + k * step` for integer `k >= 0`.
pub fn on_grid(value: f64, base: f64, step: f64) -> bool {
    let k = (value - base) / step;
    k >= -1e-9 && (k - k.round()).abs() <= 1e-9 * k.abs().max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn instruction(id: &str) -> InstructionView {
        InstructionView {
            id: id.into(),
            title: "t".into(),
            body: "b".into(),
            image: None,
            ack_label: DEFAULT_ACK_LABEL.into(),
        }
    }

    fn task(id: &str, options: &[&str], expected: Option<Vec<&str>>) -> TaskSpec {
        TaskSpec {
            id: id.into(),
            title: "task".into(),
            decision: DecisionSpec {
                prompt: "Which exit?".into(),
                options: options.iter().map(|s| s.to_string()).collect(),
                exclusive: true,
            },
            randomize_instances: false,
            instance_feedback: FeedbackPolicy::None,
            time_limit_s: None,
            show_progress: false,
            scoring: ScoringSpec::default(),
            instances: vec![InstanceSpec {
                id: format!("{id}-i1"),
                instance: None,
                prediction: None,
                explanations: vec![],
                expected: expected.map(|e| e.iter().map(|s| s.to_string()).collect()),
                prompt_override: None,
            }],
        }
    }

    fn protocol(elements: Vec<ExperimentElement>) -> ProtocolSpec {
        ProtocolSpec {
            id: "p".into(),
            title: "P".into(),
            completion: CompletionSpec {
                message: "done".into(),
                redirect_url: None,
            },
            elements: vec![ProtocolElement::Experiment(ExperimentSpec {
                id: "x".into(),
                title: "X".into(),
                elements,
            })],
        }
    }

    #[test]
    fn valid_spec_has_no_diagnostics() {
        let spec = protocol(vec![
            ExperimentElement::Instruction(instruction("i1")),
            ExperimentElement::Task(task("task1", &["A", "B", "C", "D"], Some(vec!["C"]))),
        ]);
        assert!(validate_protocol(&spec, None).is_empty());
    }

    #[test]
    fn duplicate_id_names_both_paths() {
        let spec = protocol(vec![
            ExperimentElement::Task(task("task1", &["A", "B"], None)),
            ExperimentElement::Instruction(instruction("task1")),
        ]);
        let d = validate_protocol(&spec, None);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].path, "/elements/0/elements/1");
        assert!(d[0].message.contains("/elements/0/elements/0"), "{}", d[0].message);
    }

    #[test]
    fn expected_label_outside_options() {
        let spec = protocol(vec![ExperimentElement::Task(task("t", &["A", "B", "C", "D"], Some(vec!["E"])))]);
        let d = validate_protocol(&spec, None);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].path, "/elements/0/elements/0/instances/0/expected/0");
        assert!(d[0].message.starts_with("expected label not among options"));
    }

    #[test]
    fn exclusive_expected_must_be_single() {
        let spec = protocol(vec![ExperimentElement::Task(task("t", &["A", "B"], Some(vec!["A", "B"])))]);
        let d = validate_protocol(&spec, None);
        assert!(d.iter().any(|d| d.message.contains("exactly one")));
    }

    #[test]
    fn score_feedback_before_its_task() {
        let spec = protocol(vec![
            ExperimentElement::ScoreFeedback(ScoreFeedbackView {
                id: "s".into(),
                task_ref: "t".into(),
            }),
            ExperimentElement::Task(task("t", &["A", "B"], None)),
        ]);
        let d = validate_protocol(&spec, None);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].path, "/elements/0/elements/0/task_ref");
        assert!(d[0].message.starts_with("references a task not yet completed at this position"));
    }

    #[test]
    fn score_feedback_to_other_experiment_is_unknown() {
        let mut spec = protocol(vec![ExperimentElement::Task(task("t", &["A", "B"], None))]);
        spec.elements.push(ProtocolElement::Experiment(ExperimentSpec {
            id: "y".into(),
            title: "Y".into(),
            elements: vec![ExperimentElement::ScoreFeedback(ScoreFeedbackView {
                id: "s".into(),
                task_ref: "t".into(),
            })],
        }));
        let d = validate_protocol(&spec, None);
        assert_eq!(d.len(), 1);
        assert!(d[0].message.contains("unknown task"));
    }

    #[test]
    fn traversal_and_absolute_sources_rejected() {
        assert!(check_asset_path("mazes/m1.png").is_ok());
        assert!(check_asset_path("../users.json").is_err());
        assert!(check_asset_path("a/../../b.png").is_err());
        assert!(check_asset_path("/etc/passwd").is_err());
        assert!(check_asset_path("C:\\x.png").is_err());
        assert!(check_asset_path("https://example.org/x.png").is_err());
    }

    #[test]
    fn missing_assets_are_warnings_only_with_root() {
        let mut t = task("t", &["A", "B"], None);
        t.instances[0].instance = Some(MediaRef::Image {
            src: "nope.png".into(),
            alt: "maze".into(),
            label: None,
        });
        let spec = protocol(vec![ExperimentElement::Task(t)]);
        assert!(validate_protocol(&spec, None).is_empty());
        let dir = tempfile::tempdir().unwrap();
        let d = validate_protocol(&spec, Some(dir.path()));
        assert_eq!(d.len(), 1);
        assert!(!d[0].is_error());
        std::fs::write(dir.path().join("nope.png"), b"x").unwrap();
        assert!(validate_protocol(&spec, Some(dir.path())).is_empty());
    }

    #[test]
    fn slider_grid() {
        assert!(on_grid(10.0, 0.0, 0.5));
        assert!(on_grid(1.0, 0.0, 0.1));
        assert!(!on_grid(1.0, 0.0, 0.3));
        assert!(!on_grid(-1.0, 0.0, 1.0));
    }
}
