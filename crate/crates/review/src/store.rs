//! Append-only review state.
//!
//! Every state change is one JSON line in `events.jsonl`. `snapshot.json`
//! caches the state after some prefix of the log; opening a store loads the
//! snapshot and replays the rest, so state never depends on the snapshot
//! being current.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use liahr::corpus::{Corpus, CorpusError, LabelSet, LabelSpace, SeededSampler};
use liahr::engine::Verdict;
use liahr::pipeline::{Action, ChangeEntry, ChangeManifest};
use liahr::prompt::PromptMode;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const REVIEW_FORMAT: &str = "liahr-review/1";
const EVENTS: &str = "events.jsonl";
const SNAPSHOT: &str = "snapshot.json";
/// Events between automatic snapshots.
const SNAPSHOT_EVERY: usize = 100;

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("unknown review item `{0}`")]
    UnknownItem(String),
    #[error("verdict for `{0}` refers to an example missing from the corpus")]
    UnknownExample(String),
    #[error("invalid labels: {0}")]
    InvalidLabels(#[from] CorpusError),
    #[error("{0} items are still pending; export with `partial` to include them unchanged")]
    PendingItems(usize),
    #[error("review log line {line} is corrupt: {message}")]
    CorruptLog { line: usize, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReviewError + '_ {
    move |source| ReviewError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Presentation {
    GoldFirst,
    AlternativeFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pending,
    Decided,
}

/// A reviewer's resolved choice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Choice {
    AcceptGold,
    AcceptAlternative,
    Edited(LabelSet),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReviewItem {
    pub id: String,
    pub example_id: String,
    pub text: String,
    pub gold: LabelSet,
    pub alternative: LabelSet,
    pub presentation: Presentation,
    pub status: Status,
}

impl ReviewItem {
    /// Candidates in display order.
    pub fn ordered(&self) -> (&LabelSet, &LabelSet) {
        match self.presentation {
            Presentation::GoldFirst => (&self.gold, &self.alternative),
            Presentation::AlternativeFirst => (&self.alternative, &self.gold),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReviewDecision {
    pub item_id: String,
    pub choice: Choice,
    pub reviewer: String,
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub pending: usize,
    pub decided: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct StoredItem {
    id: String,
    example_id: String,
    text: String,
    gold: Vec<String>,
    alternative: Vec<String>,
    presentation: Presentation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum StoredChoice {
    AcceptGold,
    AcceptAlternative,
    Edited { labels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct StoredDecision {
    item_id: String,
    choice: StoredChoice,
    reviewer: String,
    timestamp_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    Enqueue { item: StoredItem },
    Decision { decision: StoredDecision },
}

/// Queue contents; equal states mean equal observable behavior.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewState {
    events: usize,
    items: Vec<StoredItem>,
    /// Decision history per item, oldest first.
    history: BTreeMap<String, Vec<StoredDecision>>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl ReviewState {
    fn apply(&mut self, event: Event) -> Result<(), String> {
        match event {
            Event::Enqueue { item } => {
                if self.index.contains_key(&item.id) {
                    return Err(format!("item `{}` enqueued twice", item.id));
                }
                self.index.insert(item.id.clone(), self.items.len());
                self.items.push(item);
            }
            Event::Decision { decision } => {
                if !self.index.contains_key(&decision.item_id) {
                    return Err(format!("decision for unknown item `{}`", decision.item_id));
                }
                self.history
                    .entry(decision.item_id.clone())
                    .or_default()
                    .push(decision);
            }
        }
        self.events += 1;
        Ok(())
    }

    fn reindex(&mut self) {
        self.index = self
            .items
            .iter()
            .enumerate()
            .map(|(i, it)| (it.id.clone(), i))
            .collect();
    }

    /// Number of log events folded into this state.
    pub fn events(&self) -> usize {
        self.events
    }
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    format: String,
    state: ReviewState,
}

pub struct ReviewStore {
    dir: PathBuf,
    space: LabelSpace,
    presentation_seed: u64,
    state: RwLock<ReviewState>,
    appender: Mutex<File>,
}

fn to_names(space: &LabelSpace, set: &LabelSet) -> Vec<String> {
    space.names(set).into_iter().map(str::to_string).collect()
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl ReviewStore {
    /// Opens or creates the store in `dir`. `presentation_seed` decides the
    /// candidate order of newly enqueued items; existing items keep theirs.
    pub fn open(
        dir: impl AsRef<Path>,
        space: LabelSpace,
        presentation_seed: u64,
    ) -> Result<Self, ReviewError> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let snapshot_path = dir.join(SNAPSHOT);
        let mut state = match std::fs::read_to_string(&snapshot_path) {
            Ok(text) => {
                let snap: Snapshot =
                    serde_json::from_str(&text).map_err(|e| ReviewError::CorruptLog {
                        line: 0,
                        message: format!("snapshot: {e}"),
                    })?;
                let mut state = snap.state;
                state.reindex();
                state
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => ReviewState::default(),
            Err(e) => return Err(io_err(&snapshot_path)(e)),
        };
        let events_path = dir.join(EVENTS);
        let text = match std::fs::read_to_string(&events_path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(io_err(&events_path)(e)),
        };
        // A write cut short leaves a line without its newline; that event
        // was never acknowledged, so drop it.
        let complete = match text.rfind('\n') {
            Some(end) => &text[..=end],
            None => "",
        };
        if complete.len() < text.len() {
            ::log::warn!("dropping incomplete trailing review event");
            let f = OpenOptions::new()
                .write(true)
                .open(&events_path)
                .map_err(io_err(&events_path))?;
            f.set_len(complete.len() as u64)
                .map_err(io_err(&events_path))?;
        }
        let lines: Vec<&str> = complete.lines().collect();
        if state.events > lines.len() {
            ::log::warn!("snapshot is ahead of the event log; rebuilding from the log");
            state = ReviewState::default();
        }
        for (i, line) in lines.iter().enumerate().skip(state.events) {
            let corrupt = |message: String| ReviewError::CorruptLog {
                line: i + 1,
                message,
            };
            let event: Event = serde_json::from_str(line).map_err(|e| corrupt(e.to_string()))?;
            state.apply(event).map_err(corrupt)?;
        }
        let appender = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&events_path)
            .map_err(io_err(&events_path))?;
        Ok(ReviewStore {
            dir,
            space,
            presentation_seed,
            state: RwLock::new(state),
            appender: Mutex::new(appender),
        })
    }

    pub fn space(&self) -> &LabelSpace {
        &self.space
    }

    /// A copy of the current state.
    pub fn state(&self) -> ReviewState {
        self.state.read().expect("review state lock").clone()
    }

    fn append(&self, state: &mut ReviewState, events: Vec<Event>) -> Result<(), ReviewError> {
        if events.is_empty() {
            return Ok(());
        }
        let mut buf = String::new();
        for e in &events {
            buf.push_str(&serde_json::to_string(e).expect("events serialize"));
            buf.push('\n');
        }
        let path = self.dir.join(EVENTS);
        {
            let mut file = self.appender.lock().expect("appender lock");
            file.write_all(buf.as_bytes()).map_err(io_err(&path))?;
            file.sync_data().map_err(io_err(&path))?;
        }
        let before = state.events;
        for e in events {
            state.apply(e).expect("events validated before writing");
        }
        if state.events / SNAPSHOT_EVERY > before / SNAPSHOT_EVERY {
            self.write_snapshot(state)?;
        }
        Ok(())
    }

    fn write_snapshot(&self, state: &ReviewState) -> Result<(), ReviewError> {
        let path = self.dir.join(SNAPSHOT);
        let tmp = self.dir.join(format!("{SNAPSHOT}.tmp"));
        let snap = Snapshot {
            format: REVIEW_FORMAT.to_string(),
            state: state.clone(),
        };
        std::fs::write(
            &tmp,
            serde_json::to_string(&snap).expect("snapshot serializes"),
        )
        .map_err(io_err(&tmp))?;
        std::fs::rename(&tmp, &path).map_err(io_err(&path))
    }

    /// Writes a snapshot of the current state.
    pub fn snapshot(&self) -> Result<(), ReviewError> {
        let state = self.state.read().expect("review state lock");
        self.write_snapshot(&state)
    }

    /// Queues every flagged, parsed LiaHR verdict whose example is not queued
    /// yet. Returns the number of new items.
    pub fn enqueue(&self, verdicts: &[Verdict], corpus: &Corpus) -> Result<usize, ReviewError> {
        let mut state = self.state.write().expect("review state lock");
        let mut seen: BTreeSet<&str> = state.items.iter().map(|i| i.example_id.as_str()).collect();
        let mut events = Vec::new();
        for v in verdicts {
            let Some(alternative) = v.alternative.as_ref() else {
                continue;
            };
            if v.mode != PromptMode::Liahr
                || !v.flagged
                || v.unparsed
                || !seen.insert(&v.example_id)
            {
                continue;
            }
            let example = corpus
                .get(&v.example_id)
                .ok_or_else(|| ReviewError::UnknownExample(v.example_id.clone()))?;
            let id = v.example_id.clone();
            let mut rng = SeededSampler::new(self.presentation_seed, format!("presentation:{id}"));
            let presentation = if rng.coin() {
                Presentation::GoldFirst
            } else {
                Presentation::AlternativeFirst
            };
            events.push(Event::Enqueue {
                item: StoredItem {
                    id,
                    example_id: example.id.clone(),
                    text: example.text.clone(),
                    gold: to_names(&self.space, &example.gold),
                    alternative: to_names(&self.space, alternative),
                    presentation,
                },
            });
        }
        let added = events.len();
        self.append(&mut state, events)?;
        Ok(added)
    }

    fn resolve(&self, state: &ReviewState, stored: &StoredItem) -> ReviewItem {
        let set = |names: &[String]| {
            self.space
                .set_of(names)
                .expect("stored labels belong to the space")
        };
        ReviewItem {
            id: stored.id.clone(),
            example_id: stored.example_id.clone(),
            text: stored.text.clone(),
            gold: set(&stored.gold),
            alternative: set(&stored.alternative),
            presentation: stored.presentation,
            status: if state.history.contains_key(&stored.id) {
                Status::Decided
            } else {
                Status::Pending
            },
        }
    }

    fn resolve_decision(&self, d: &StoredDecision) -> ReviewDecision {
        ReviewDecision {
            item_id: d.item_id.clone(),
            choice: match &d.choice {
                StoredChoice::AcceptGold => Choice::AcceptGold,
                StoredChoice::AcceptAlternative => Choice::AcceptAlternative,
                StoredChoice::Edited { labels } => Choice::Edited(
                    self.space
                        .set_of(labels)
                        .expect("stored labels belong to the space"),
                ),
            },
            reviewer: d.reviewer.clone(),
            timestamp_ms: d.timestamp_ms,
        }
    }

    pub fn item(&self, id: &str) -> Option<ReviewItem> {
        let state = self.state.read().expect("review state lock");
        state
            .index
            .get(id)
            .map(|&i| self.resolve(&state, &state.items[i]))
    }

    /// Items in enqueue order, optionally filtered by status.
    pub fn items(&self, status: Option<Status>) -> Vec<ReviewItem> {
        let state = self.state.read().expect("review state lock");
        state
            .items
            .iter()
            .map(|s| self.resolve(&state, s))
            .filter(|i| status.is_none_or(|s| i.status == s))
            .collect()
    }

    /// Decision history of an item, oldest first.
    pub fn history(&self, id: &str) -> Vec<ReviewDecision> {
        let state = self.state.read().expect("review state lock");
        state
            .history
            .get(id)
            .map(|h| h.iter().map(|d| self.resolve_decision(d)).collect())
            .unwrap_or_default()
    }

    /// The decision in force for an item.
    pub fn decision(&self, id: &str) -> Option<ReviewDecision> {
        self.history(id).pop()
    }

    /// Records a decision; a later decision supersedes earlier ones.
    pub fn decide(
        &self,
        id: &str,
        choice: Choice,
        reviewer: &str,
    ) -> Result<ReviewDecision, ReviewError> {
        let mut state = self.state.write().expect("review state lock");
        if !state.index.contains_key(id) {
            return Err(ReviewError::UnknownItem(id.to_string()));
        }
        let stored_choice = match &choice {
            Choice::AcceptGold => StoredChoice::AcceptGold,
            Choice::AcceptAlternative => StoredChoice::AcceptAlternative,
            Choice::Edited(set) => {
                self.space.check(set)?;
                StoredChoice::Edited {
                    labels: to_names(&self.space, set),
                }
            }
        };
        let decision = StoredDecision {
            item_id: id.to_string(),
            choice: stored_choice,
            reviewer: reviewer.to_string(),
            timestamp_ms: now_ms(),
        };
        let resolved = self.resolve_decision(&decision);
        self.append(&mut state, vec![Event::Decision { decision }])?;
        Ok(resolved)
    }

    pub fn progress(&self) -> Progress {
        let state = self.state.read().expect("review state lock");
        let decided = state
            .items
            .iter()
            .filter(|i| state.history.contains_key(&i.id))
            .count();
        Progress {
            pending: state.items.len() - decided,
            decided,
            total: state.items.len(),
        }
    }

    /// Applies the decisions to `corpus`. Pending items are an error unless
    /// `partial`, in which case they stay unchanged with a warning. Also
    /// returns the presentation order of every item.
    pub fn export(
        &self,
        corpus: &Corpus,
        partial: bool,
    ) -> Result<(Corpus, ChangeManifest, BTreeMap<String, Presentation>), ReviewError> {
        let progress = self.progress();
        if progress.pending > 0 && !partial {
            return Err(ReviewError::PendingItems(progress.pending));
        }
        let items: HashMap<String, ReviewItem> = self
            .items(None)
            .into_iter()
            .map(|i| (i.example_id.clone(), i))
            .collect();
        let mut examples = Vec::with_capacity(corpus.len());
        let mut entries = Vec::with_capacity(corpus.len());
        let mut splits = BTreeSet::new();
        for ex in corpus.examples() {
            let mut entry = ChangeEntry {
                id: ex.id.clone(),
                split: ex.split,
                action: Action::Kept,
                warning: None,
            };
            let mut out = ex.clone();
            if let Some(item) = items.get(&ex.id) {
                splits.insert(ex.split);
                let new = match self.decision(&item.id).map(|d| d.choice) {
                    None => {
                        entry.warning = Some("pending review, labels unchanged".into());
                        None
                    }
                    Some(Choice::AcceptGold) => None,
                    Some(Choice::AcceptAlternative) => Some(item.alternative.clone()),
                    Some(Choice::Edited(set)) => Some(set),
                };
                if let Some(new) = new {
                    entry.action = Action::Replaced {
                        old: to_names(&self.space, &ex.gold),
                        new: to_names(&self.space, &new),
                    };
                    out.gold = new;
                }
            }
            examples.push(out);
            entries.push(entry);
        }
        let manifest = ChangeManifest::from_entries(
            "reviewed",
            vec!["review".into()],
            splits.into_iter().collect(),
            entries,
        );
        let mapping = items
            .into_values()
            .map(|i| (i.id, i.presentation))
            .collect();
        self.snapshot()?;
        Ok((corpus.with_examples(examples)?, manifest, mapping))
    }
}
