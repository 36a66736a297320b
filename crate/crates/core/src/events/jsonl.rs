//! One JSON-Lines file per session under `<data_dir>/sessions/`, plus
//! `<data_dir>/audit.jsonl` for the audit stream.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use super::{check_next, collect_matching, Event, EventFilter, EventStore, StoreError, AUDIT_STREAM};

struct Stream {
    file: File,
    events: Vec<Event>,
}

pub struct JsonlStore {
    root: PathBuf,
    streams: Mutex<BTreeMap<String, Arc<Mutex<Stream>>>>,
}

impl std::fmt::Debug for JsonlStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JsonlStore").field("root", &self.root).finish_non_exhaustive()
    }
}

fn valid_stream_name(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.'))
}

impl JsonlStore {
    /// Opens (creating if needed) the store under `data_dir` and loads every
    /// existing stream. A torn final line left by a crash mid-write is cut
    /// off; anything else malformed is an error.
    pub fn open(data_dir: &Path) -> Result<Self, StoreError> {
        let sessions = data_dir.join("sessions");
        fs::create_dir_all(&sessions)?;
        let mut streams = BTreeMap::new();
        let audit = data_dir.join("audit.jsonl");
        if audit.exists() {
            streams.insert(AUDIT_STREAM.to_string(), Arc::new(Mutex::new(load_stream(&audit)?)));
        }
        for entry in fs::read_dir(&sessions)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("jsonl") {
                continue;
            }
            let Some(id) = path.file_stem().and_then(|s| s.to_str()).map(str::to_string) else {
                continue;
            };
            let stream = load_stream(&path)?;
            if let Some(bad) = stream.events.iter().find(|e| e.session_id != id) {
                return Err(StoreError::Storage(format!(
                    "{}: event seq {} belongs to session {:?}",
                    path.display(),
                    bad.seq,
                    bad.session_id
                )));
            }
            streams.insert(id, Arc::new(Mutex::new(stream)));
        }
        Ok(Self {
            root: data_dir.to_path_buf(),
            streams: Mutex::new(streams),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path_for(&self, session_id: &str) -> Result<PathBuf, StoreError> {
        if session_id == AUDIT_STREAM {
            return Ok(self.root.join("audit.jsonl"));
        }
        if !valid_stream_name(session_id) {
            return Err(StoreError::Storage(format!("unsafe session id {session_id:?}")));
        }
        Ok(self.root.join("sessions").join(format!("{session_id}.jsonl")))
    }

    fn stream(&self, session_id: &str) -> Result<Arc<Mutex<Stream>>, StoreError> {
        let mut streams = self.streams.lock().expect("stream map poisoned");
        if let Some(s) = streams.get(session_id) {
            return Ok(Arc::clone(s));
        }
        let path = self.path_for(session_id)?;
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        let s = Arc::new(Mutex::new(Stream {
            file,
            events: Vec::new(),
        }));
        streams.insert(session_id.to_string(), Arc::clone(&s));
        Ok(s)
    }
}

fn load_stream(path: &Path) -> Result<Stream, StoreError> {
    let file = File::open(path)?;
    let mut reader = BufReader::new(file);
    let mut events: Vec<Event> = Vec::new();
    let mut good_len: u64 = 0;
    let mut line = String::new();
    let mut torn = false;
    loop {
        line.clear();
        let n = reader.read_line(&mut line)?;
        if n == 0 {
            break;
        }
        let complete = line.ends_with('\n');
        match serde_json::from_str::<Event>(line.trim_end()) {
            Ok(e) if complete => {
                check_next(&events, &e).map_err(|err| StoreError::Storage(format!("{}: {err}", path.display())))?;
                events.push(e);
                good_len += n as u64;
            }
            _ => {
                // Only the final line may be damaged.
                let mut rest = String::new();
                reader.read_line(&mut rest)?;
                if !rest.is_empty() {
                    return Err(StoreError::Storage(format!(
                        "{}: malformed event after seq {}",
                        path.display(),
                        events.last().map_or(0, |e| e.seq)
                    )));
                }
                torn = true;
                break;
            }
        }
    }
    let file = OpenOptions::new().append(true).open(path)?;
    if torn {
        file.set_len(good_len)?;
        file.sync_data()?;
    }
    Ok(Stream { file, events })
}

impl EventStore for JsonlStore {
    fn append(&self, event: &Event) -> Result<u64, StoreError> {
        let stream = self.stream(&event.session_id)?;
        let mut s = stream.lock().expect("stream poisoned");
        check_next(&s.events, event)?;
        let mut line = serde_json::to_string(event).map_err(|e| StoreError::Storage(e.to_string()))?;
        line.push('\n');
        s.file.write_all(line.as_bytes())?;
        s.file.flush()?;
        s.file.sync_data()?;
        s.events.push(event.clone());
        Ok(event.seq)
    }

    fn list(&self, filter: &EventFilter) -> Vec<Event> {
        let snapshot: BTreeMap<String, Vec<Event>> = {
            let streams = self.streams.lock().expect("stream map poisoned");
            streams
                .iter()
                .filter(|(id, _)| filter.session_id.as_ref().is_none_or(|want| want == *id))
                .map(|(id, s)| (id.clone(), s.lock().expect("stream poisoned").events.clone()))
                .collect()
        };
        collect_matching(&snapshot, filter)
    }

    fn session_ids(&self) -> Vec<String> {
        let streams = self.streams.lock().expect("stream map poisoned");
        streams.keys().filter(|k| k.as_str() != AUDIT_STREAM).cloned().collect()
    }

    fn last_seq(&self, session_id: &str) -> u64 {
        let streams = self.streams.lock().expect("stream map poisoned");
        streams
            .get(session_id)
            .and_then(|s| s.lock().expect("stream poisoned").events.last().map(|e| e.seq))
            .unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::tests::event;
    use crate::events::EventKind;

    #[test]
    fn survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        {
            let store = JsonlStore::open(dir.path()).unwrap();
            store.append(&event("s1", 1, EventKind::SessionStarted)).unwrap();
            store.append(&event("s1", 2, EventKind::Login)).unwrap();
            store.append(&event(AUDIT_STREAM, 1, EventKind::FailedLogin)).unwrap();
        }
        let store = JsonlStore::open(dir.path()).unwrap();
        assert_eq!(store.last_seq("s1"), 2);
        assert_eq!(store.session_ids(), vec!["s1".to_string()]);
        assert_eq!(store.list(&EventFilter::default()).len(), 3);
        assert!(dir.path().join("sessions/s1.jsonl").is_file());
        store.append(&event("s1", 3, EventKind::ViewShown)).unwrap();
        assert!(store.append(&event("s1", 3, EventKind::ViewShown)).is_err());
    }

    #[test]
    fn torn_tail_is_dropped_without_gaps() {
        let dir = tempfile::tempdir().unwrap();
        {
            let store = JsonlStore::open(dir.path()).unwrap();
            for seq in 1..=3 {
                store.append(&event("s1", seq, EventKind::ViewShown)).unwrap();
            }
        }
        let path = dir.path().join("sessions/s1.jsonl");
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"seq\":4,\"session_id\":\"s1\",\"us").unwrap();
        drop(f);

        let store = JsonlStore::open(dir.path()).unwrap();
        let seqs: Vec<u64> = store.list(&EventFilter::session("s1")).iter().map(|e| e.seq).collect();
        assert_eq!(seqs, vec![1, 2, 3]);
        store.append(&event("s1", 4, EventKind::ViewShown)).unwrap();
        drop(store);
        let store = JsonlStore::open(dir.path()).unwrap();
        assert_eq!(store.last_seq("s1"), 4);
    }

    #[test]
    fn corruption_in_the_middle_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("sessions")).unwrap();
        let good = serde_json::to_string(&event("s1", 1, EventKind::SessionStarted)).unwrap();
        fs::write(dir.path().join("sessions/s1.jsonl"), format!("garbage\n{good}\n")).unwrap();
        assert!(JsonlStore::open(dir.path()).is_err());
    }

    #[test]
    fn rejects_unsafe_session_ids() {
        let dir = tempfile::tempdir().unwrap();
        let store = JsonlStore::open(dir.path()).unwrap();
        assert!(matches!(
            store.append(&event("../escape", 1, EventKind::SessionStarted)),
            Err(StoreError::Storage(_))
        ));
    }
}
