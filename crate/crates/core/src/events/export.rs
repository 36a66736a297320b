//! Per-response result export (CSV or JSON).

use serde::Serialize;
use serde_json::Value;

use super::{Event, EventFilter, EventKind, EventStore};

pub const CSV_HEADER: &str = "session_id,user,protocol,experiment_id,task_id,view_id,instance_id,view_kind,event_kind,presented_order_index,payload,correct,server_ts,client_elapsed_ms";

const EXPORTED: [EventKind; 4] = [
    EventKind::InstructionAck,
    EventKind::QuestionnaireResponse,
    EventKind::Decision,
    EventKind::Timeout,
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

impl ExportFormat {
    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "csv" => Some(Self::Csv),
            "json" => Some(Self::Json),
            _ => None,
        }
    }

    pub fn content_type(self) -> &'static str {
        match self {
            ExportFormat::Csv => "text/csv; charset=utf-8",
            ExportFormat::Json => "application/json",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExportRow {
    pub session_id: String,
    pub user: String,
    pub protocol: String,
    pub experiment_id: Option<String>,
    pub task_id: Option<String>,
    pub view_id: Option<String>,
    pub instance_id: Option<String>,
    pub view_kind: &'static str,
    pub event_kind: EventKind,
    pub presented_order_index: Option<usize>,
    pub payload: Value,
    pub correct: Option<bool>,
    pub server_ts: String,
    pub client_elapsed_ms: Option<u64>,
}

fn view_kind(kind: EventKind) -> &'static str {
    match kind {
        EventKind::InstructionAck => "instruction",
        EventKind::QuestionnaireResponse => "questionnaire",
        _ => "instance_decision",
    }
}

impl ExportRow {
    fn from_event(e: Event) -> Self {
        let correct = match (e.kind, e.payload.get("verdict").and_then(Value::as_str)) {
            (EventKind::Decision, Some("correct")) => Some(true),
            (EventKind::Decision, Some("incorrect")) => Some(false),
            _ => None,
        };
        Self {
            view_kind: view_kind(e.kind),
            event_kind: e.kind,
            session_id: e.session_id,
            user: e.user_login,
            protocol: e.protocol_id,
            experiment_id: e.refs.experiment_id,
            task_id: e.refs.task_id,
            view_id: e.refs.view_id,
            instance_id: e.refs.instance_id,
            presented_order_index: e.refs.presented_order_index,
            payload: e.payload,
            correct,
            server_ts: e.server_ts.to_string(),
            client_elapsed_ms: e.client_elapsed_ms,
        }
    }

    fn csv_record(&self) -> [String; 14] {
        let opt = |s: &Option<String>| s.clone().unwrap_or_default();
        [
            self.session_id.clone(),
            self.user.clone(),
            self.protocol.clone(),
            opt(&self.experiment_id),
            opt(&self.task_id),
            opt(&self.view_id),
            opt(&self.instance_id),
            self.view_kind.to_string(),
            self.event_kind.to_string(),
            self.presented_order_index.map(|i| i.to_string()).unwrap_or_default(),
            self.payload.to_string(),
            self.correct.map(|c| c.to_string()).unwrap_or_default(),
            self.server_ts.clone(),
            self.client_elapsed_ms.map(|m| m.to_string()).unwrap_or_default(),
        ]
    }
}

/// One row per instruction_ack, questionnaire_response, decision and timeout
/// event of the protocol, ordered by (session_id, seq).
pub fn export_rows(store: &dyn EventStore, protocol_id: &str) -> Vec<ExportRow> {
    store
        .list(&EventFilter::protocol(protocol_id))
        .into_iter()
        .filter(|e| EXPORTED.contains(&e.kind))
        .map(ExportRow::from_event)
        .collect()
}

/// CSV follows RFC 4180: CRLF line endings, fields quoted when they contain
/// a comma, quote or line break, embedded quotes doubled. JSON is an array of
/// the same records with `payload` embedded as a JSON value.
pub fn export_results(store: &dyn EventStore, protocol_id: &str, format: ExportFormat) -> String {
    let rows = export_rows(store, protocol_id);
    match format {
        ExportFormat::Json => {
            let mut out = serde_json::to_string_pretty(&rows).expect("rows serialize");
            out.push('\n');
            out
        }
        ExportFormat::Csv => {
            let mut w = csv::WriterBuilder::new()
                .terminator(csv::Terminator::CRLF)
                .quote_style(csv::QuoteStyle::Necessary)
                .from_writer(Vec::new());
            w.write_record(CSV_HEADER.split(',')).expect("in-memory write");
            for row in &rows {
                w.write_record(row.csv_record()).expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
        }
    }
}
