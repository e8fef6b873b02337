//! Phase-versioned label store, proposal queue and reviewer decisions.
//!
//! Every mutation is an [`Event`] appended to `journal.jsonl` under the store
//! root; the in-memory [`State`] is the fold of the journal, so replaying the
//! file rebuilds the store exactly. Writes serialize through one lock and are
//! validated against the current state before they reach the journal;
//! readers work on immutable [`Arc`] snapshots.

pub mod http;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use parking_lot::{Mutex, RwLock};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::geo::io::{self, LabelLayer};
use crate::geo::{rasterize, GeoError, GeoTransform, Maturity, ParcelLabel, Polygon, Provenance};
use crate::metrics::seg_score;
use crate::preprocess::store::{list_clips, read_clip, write_clip, ClipSidecar};
use crate::preprocess::PreprocessError;
use crate::preprocess::{cell_of_clip, Split, SplitCounts, SplitEntry, SplitManifest};
use crate::segmenter::Segmenter;
use crate::synth::SynthManifest;

/// Reviewer name recorded on proposals rejected by an abandoning promotion.
pub const ABANDONED_BY: &str = "system:abandoned";

/// Proposals overlapping an existing label above this IoU are not enqueued.
pub const SUPPRESS_IOU: f64 = 0.5;

/// Share of new clips routed to validation when no split is given.
const DEFAULT_VAL_PERCENT: u64 = 25;

const JOURNAL: &str = "journal.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum CuratorError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("journal {path} line {line}: {message}")]
    Journal { path: String, line: usize, message: String },
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProposalStatus {
    Pending,
    Approved,
    Edited,
    Rejected,
}

impl std::str::FromStr for ProposalStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pending" => Ok(ProposalStatus::Pending),
            "approved" => Ok(ProposalStatus::Approved),
            "edited" => Ok(ProposalStatus::Edited),
            "rejected" => Ok(ProposalStatus::Rejected),
            _ => Err(format!("unknown status {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub proposal_id: String,
    pub session_id: String,
    pub clip_id: String,
    /// Map coordinates in the clip's CRS.
    pub polygon: Polygon,
    /// Mean model probability under the polygon.
    pub score: u8,
    pub status: ProposalStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edited_polygon: Option<Polygon>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decided_by: Option<String>,
    /// Unix milliseconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decided_at: Option<u64>,
    /// Split requested by the reviewer for the clip, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    /// Dedup key over clip id and geometry.
    pub hash: String,
}

impl Proposal {
    /// The polygon that becomes a label, if the proposal was accepted.
    pub fn accepted_polygon(&self) -> Option<&Polygon> {
        match self.status {
            ProposalStatus::Approved => Some(&self.polygon),
            ProposalStatus::Edited => self.edited_polygon.as_ref(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "lowercase")]
pub enum Decision {
    Approve,
    Reject,
    Edit { polygon: Polygon },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    /// Phase whose working set the session extends.
    pub phase: u8,
    pub cell_ids: Vec<u32>,
    pub opened_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Progress {
    pub pending: u64,
    pub decided: u64,
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseDataset {
    pub phase: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_phase: Option<u8>,
    pub manifest: SplitManifest,
    pub labels: Vec<ParcelLabel>,
    pub created_at: u64,
}

/// A synthetic clip entering the dataset at promotion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticClip {
    pub clip_id: String,
    pub split: Split,
    pub labels: Vec<ParcelLabel>,
}

impl SyntheticClip {
    pub fn from_manifest(m: &SynthManifest) -> Vec<SyntheticClip> {
        m.clips
            .iter()
            .map(|e| SyntheticClip {
                clip_id: e.clip_id.clone(),
                split: e.split,
                labels: e.recipe.labels(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    PhaseCreated {
        at: u64,
        dataset: PhaseDataset,
    },
    SessionOpened {
        at: u64,
        session: Session,
    },
    ProposalEnqueued {
        at: u64,
        proposal: Proposal,
    },
    Decided {
        at: u64,
        proposal_id: String,
        decision: Decision,
        reviewer: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        split: Option<Split>,
    },
    PhasePromoted {
        at: u64,
        from: u8,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        synthetic: Vec<SyntheticClip>,
    },
}

/// Store contents: the fold of the journal.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub phases: BTreeMap<u8, PhaseDataset>,
    pub sessions: BTreeMap<String, Session>,
    pub proposals: BTreeMap<String, Proposal>,
    /// Dedup key → proposal id.
    pub hashes: BTreeMap<String, String>,
}

fn not_found(what: &str, id: impl std::fmt::Display) -> CuratorError {
    CuratorError::NotFound(format!("{what} {id}"))
}

impl State {
    pub fn latest_phase(&self) -> Option<u8> {
        self.phases.keys().next_back().copied()
    }

    pub fn phase(&self, phase: u8) -> Result<&PhaseDataset, CuratorError> {
        self.phases.get(&phase).ok_or_else(|| not_found("phase", phase))
    }

    pub fn session(&self, id: &str) -> Result<&Session, CuratorError> {
        self.sessions.get(id).ok_or_else(|| not_found("session", id))
    }

    /// Canonical serialization, used to compare stores.
    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("state serializes")
    }

    pub fn session_proposals<'a>(&'a self, session_id: &'a str) -> impl Iterator<Item = &'a Proposal> + 'a {
        self.proposals.values().filter(move |p| p.session_id == session_id)
    }

    pub fn progress(&self, session_id: &str) -> Progress {
        let mut p = Progress::default();
        for prop in self.session_proposals(session_id) {
            p.total += 1;
            if prop.status == ProposalStatus::Pending {
                p.pending += 1;
            } else {
                p.decided += 1;
            }
        }
        p
    }

    /// Proposals from sessions that extend `phase`.
    fn phase_proposals(&self, phase: u8) -> impl Iterator<Item = &Proposal> + '_ {
        self.proposals
            .values()
            .filter(move |p| self.sessions.get(&p.session_id).is_some_and(|s| s.phase == phase))
    }

    pub fn pending_in_phase(&self, phase: u8) -> Vec<&str> {
        self.phase_proposals(phase)
            .filter(|p| p.status == ProposalStatus::Pending)
            .map(|p| p.proposal_id.as_str())
            .collect()
    }

    fn test_cells(&self, phase: u8) -> BTreeSet<u32> {
        self.phases
            .get(&phase)
            .map(|d| d.manifest.clip_ids(Split::Test).filter_map(cell_of_clip).collect())
            .unwrap_or_default()
    }

    /// Validate and apply one event.
    pub fn apply(&mut self, ev: &Event) -> Result<(), CuratorError> {
        match ev {
            Event::PhaseCreated { dataset, .. } => {
                if !self.phases.is_empty() {
                    return Err(CuratorError::Conflict("store already initialised".into()));
                }
                dataset.manifest.validate()?;
                if dataset.manifest.phase != dataset.phase {
                    return Err(CuratorError::Invalid(format!(
                        "manifest phase {} for dataset phase {}",
                        dataset.manifest.phase, dataset.phase
                    )));
                }
                self.phases.insert(dataset.phase, dataset.clone());
            }
            Event::SessionOpened { session, .. } => {
                let latest = self.latest_phase();
                if latest != Some(session.phase) {
                    return Err(CuratorError::Conflict(format!(
                        "phase {} is not the open phase ({latest:?})",
                        session.phase
                    )));
                }
                if session.phase >= 3 {
                    return Err(CuratorError::Invalid("phase 3 is final".into()));
                }
                if self.sessions.contains_key(&session.session_id) {
                    return Err(CuratorError::Conflict(format!("session {} exists", session.session_id)));
                }
                if let Some(s) = self.sessions.values().find(|s| s.phase == session.phase) {
                    return Err(CuratorError::Conflict(format!(
                        "phase {} already has session {}",
                        session.phase, s.session_id
                    )));
                }
                if session.cell_ids.is_empty() {
                    return Err(CuratorError::Invalid("session needs at least one cell".into()));
                }
                let test = self.test_cells(session.phase);
                if let Some(c) = session.cell_ids.iter().find(|c| test.contains(c)) {
                    return Err(CuratorError::Invalid(format!("cell {c} belongs to the test split")));
                }
                self.sessions.insert(session.session_id.clone(), session.clone());
            }
            Event::ProposalEnqueued { proposal, .. } => {
                let session = self.session(&proposal.session_id)?;
                if self.phases.contains_key(&(session.phase + 1)) {
                    return Err(CuratorError::Conflict(format!(
                        "phase {} already promoted",
                        session.phase
                    )));
                }
                match cell_of_clip(&proposal.clip_id) {
                    Some(c) if session.cell_ids.contains(&c) => {}
                    _ => {
                        return Err(CuratorError::Invalid(format!(
                            "clip {} is outside session {}",
                            proposal.clip_id, session.session_id
                        )))
                    }
                }
                if proposal.status != ProposalStatus::Pending {
                    return Err(CuratorError::Invalid("new proposals must be pending".into()));
                }
                if self.proposals.contains_key(&proposal.proposal_id) {
                    return Err(CuratorError::Conflict(format!(
                        "proposal {} exists",
                        proposal.proposal_id
                    )));
                }
                if let Some(prev) = self.hashes.get(&proposal.hash) {
                    return Err(CuratorError::Conflict(format!("duplicate of proposal {prev}")));
                }
                self.hashes.insert(proposal.hash.clone(), proposal.proposal_id.clone());
                self.proposals.insert(proposal.proposal_id.clone(), proposal.clone());
            }
            Event::Decided {
                at,
                proposal_id,
                decision,
                reviewer,
                split,
            } => {
                if reviewer.trim().is_empty() {
                    return Err(CuratorError::Invalid("reviewer is required".into()));
                }
                if *split == Some(Split::Test) {
                    return Err(CuratorError::Invalid("new clips cannot enter the test split".into()));
                }
                let p = self
                    .proposals
                    .get_mut(proposal_id)
                    .ok_or_else(|| not_found("proposal", proposal_id))?;
                if p.status != ProposalStatus::Pending {
                    return Err(CuratorError::Conflict(format!(
                        "proposal {proposal_id} already {}",
                        serde_json::to_value(p.status).expect("status")
                    )));
                }
                p.status = match decision {
                    Decision::Approve => ProposalStatus::Approved,
                    Decision::Reject => ProposalStatus::Rejected,
                    Decision::Edit { polygon } => {
                        p.edited_polygon = Some(polygon.clone());
                        ProposalStatus::Edited
                    }
                };
                p.decided_by = Some(reviewer.clone());
                p.decided_at = Some(*at);
                p.split = *split;
            }
            Event::PhasePromoted { at, from, synthetic } => {
                let next = self.promoted(*from, synthetic, *at)?;
                self.phases.insert(next.phase, next);
            }
        }
        Ok(())
    }

    /// The dataset that promoting `from` yields. Deterministic in the state.
    fn promoted(&self, from: u8, synthetic: &[SyntheticClip], at: u64) -> Result<PhaseDataset, CuratorError> {
        if !(1..=2).contains(&from) {
            return Err(CuratorError::Invalid(format!("cannot promote phase {from}")));
        }
        let base = self.phase(from)?;
        if self.phases.contains_key(&(from + 1)) {
            return Err(CuratorError::Conflict(format!("phase {from} already promoted")));
        }
        let pending = self.pending_in_phase(from);
        if !pending.is_empty() {
            return Err(CuratorError::Conflict(format!(
                "{} pending proposals in phase {from}",
                pending.len()
            )));
        }
        if !synthetic.is_empty() && from != 2 {
            return Err(CuratorError::Invalid("synthetic clips enter at phase 3".into()));
        }
        let to = from + 1;
        let mut entries = base.manifest.entries.clone();
        let mut known: BTreeSet<String> = entries.iter().map(|e| e.clip_id.clone()).collect();
        let mut labels = base.labels.clone();
        // BTreeMap order: by proposal id, which is enqueue order.
        for p in self.phase_proposals(from) {
            let Some(polygon) = p.accepted_polygon() else { continue };
            labels.push(ParcelLabel {
                id: p.proposal_id.clone(),
                polygon: polygon.clone(),
                maturity: Maturity::Unknown,
                provenance: Provenance::ModelApproved,
                phase: to,
            });
            if known.insert(p.clip_id.clone()) {
                entries.push(SplitEntry {
                    clip_id: p.clip_id.clone(),
                    split: p.split.unwrap_or_else(|| default_split(&p.clip_id)),
                    augmented: false,
                    provenance: Some(Provenance::ModelApproved),
                });
            }
        }
        for s in synthetic {
            if s.split == Split::Test {
                return Err(CuratorError::Invalid(format!("synthetic clip {} in test", s.clip_id)));
            }
            if !known.insert(s.clip_id.clone()) {
                return Err(CuratorError::Invalid(format!(
                    "clip {} already in the dataset",
                    s.clip_id
                )));
            }
            entries.push(SplitEntry {
                clip_id: s.clip_id.clone(),
                split: s.split,
                augmented: false,
                provenance: Some(Provenance::Synthetic),
            });
            labels.extend(s.labels.iter().map(|l| ParcelLabel {
                provenance: Provenance::Synthetic,
                phase: to,
                ..l.clone()
            }));
        }
        let manifest = SplitManifest::from_entries(to, entries)?;
        let old_test: Vec<&str> = base.manifest.clip_ids(Split::Test).collect();
        let new_test: Vec<&str> = manifest.clip_ids(Split::Test).collect();
        if old_test != new_test {
            return Err(CuratorError::Invalid("promotion would change the test split".into()));
        }
        Ok(PhaseDataset {
            phase: to,
            parent_phase: Some(from),
            manifest,
            labels,
            created_at: at,
        })
    }
}

/// Split for a newly labeled clip without an explicit choice: a stable
/// hash of the id sends about a quarter to validation.
pub fn default_split(clip_id: &str) -> Split {
    let d = Sha256::digest(clip_id.as_bytes());
    let v = u64::from_be_bytes(d[..8].try_into().expect("8 bytes"));
    if v % 100 < DEFAULT_VAL_PERCENT {
        Split::Val
    } else {
        Split::Train
    }
}

fn proposal_hash(clip_id: &str, polygon: &Polygon) -> String {
    let mut h = Sha256::new();
    h.update(clip_id.as_bytes());
    h.update([0]);
    h.update(serde_json::to_vec(polygon).expect("polygon serializes"));
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Read a journal and fold it into a state.
pub fn replay(path: &Path) -> Result<State, CuratorError> {
    let file = File::open(path).map_err(|source| GeoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut state = State::default();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let jerr = |message: String| CuratorError::Journal {
            path: path.display().to_string(),
            line: i + 1,
            message,
        };
        let line = line.map_err(|e| jerr(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let ev: Event = serde_json::from_str(&line).map_err(|e| jerr(e.to_string()))?;
        state.apply(&ev).map_err(|e| jerr(e.to_string()))?;
    }
    Ok(state)
}

/// A candidate before it gets an id.
#[derive(Debug, Clone)]
pub struct NewProposal {
    pub clip_id: String,
    pub polygon: Polygon,
    pub score: u8,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClipFailure {
    pub clip_id: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerateOutcome {
    pub enqueued: usize,
    pub duplicates: usize,
    pub suppressed: usize,
    pub clips_scanned: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<ClipFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub phase: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_phase: Option<u8>,
    pub counts: SplitCounts,
    pub total: u64,
    /// Clip counts per split, keyed by provenance.
    pub by_provenance: BTreeMap<String, SplitCounts>,
    /// Label counts keyed by provenance.
    pub labels: BTreeMap<String, u64>,
}

pub fn dataset_report(d: &PhaseDataset) -> DatasetReport {
    let mut by_provenance: BTreeMap<String, SplitCounts> = BTreeMap::new();
    for e in &d.manifest.entries {
        let key = e.provenance.map_or("unspecified", Provenance::as_str);
        let c = by_provenance.entry(key.to_string()).or_default();
        match e.split {
            Split::Train => c.train += 1,
            Split::Val => c.val += 1,
            Split::Test => c.test += 1,
        }
    }
    let mut labels: BTreeMap<String, u64> = BTreeMap::new();
    for l in &d.labels {
        *labels.entry(l.provenance.as_str().to_string()).or_default() += 1;
    }
    let counts = d.manifest.count_entries();
    DatasetReport {
        phase: d.phase,
        parent_phase: d.parent_phase,
        counts,
        total: counts.total(),
        by_provenance,
        labels,
    }
}

/// The store. Cheap to share behind an [`Arc`].
pub struct Curator {
    root: PathBuf,
    journal: Mutex<File>,
    state: RwLock<Arc<State>>,
}

impl Curator {
    /// Create a store at `root` with `dataset` as phase 1. Fails if a journal
    /// already exists there.
    pub fn init(root: &Path, manifest: SplitManifest, labels: Vec<ParcelLabel>) -> Result<Self, CuratorError> {
        let path = root.join(JOURNAL);
        if path.exists() {
            return Err(CuratorError::Conflict(format!("{} already exists", path.display())));
        }
        std::fs::create_dir_all(root.join("clips")).map_err(|source| GeoError::Io {
            path: root.display().to_string(),
            source,
        })?;
        let c = Self::with_state(root, State::default())?;
        let dataset = PhaseDataset {
            phase: manifest.phase,
            parent_phase: None,
            manifest,
            labels,
            created_at: now_ms(),
        };
        if dataset.phase != 1 {
            return Err(CuratorError::Invalid("the first phase must be 1".into()));
        }
        c.commit(|_| {
            Ok(vec![Event::PhaseCreated {
                at: dataset.created_at,
                dataset,
            }])
        })?;
        c.write_snapshot(1)?;
        Ok(c)
    }

    /// Open an existing store by replaying its journal.
    pub fn open(root: &Path) -> Result<Self, CuratorError> {
        let journal = root.join(JOURNAL);
        if !journal.exists() {
            return Err(CuratorError::NotFound(format!("label store in {}", root.display())));
        }
        let state = replay(&journal)?;
        Self::with_state(root, state)
    }

    fn with_state(root: &Path, state: State) -> Result<Self, CuratorError> {
        let path = root.join(JOURNAL);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|source| GeoError::Io {
                path: path.display().to_string(),
                source,
            })?;
        Ok(Self {
            root: root.to_path_buf(),
            journal: Mutex::new(file),
            state: RwLock::new(Arc::new(state)),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn journal_path(&self) -> PathBuf {
        self.root.join(JOURNAL)
    }

    pub fn clip_dir(&self) -> PathBuf {
        self.root.join("clips")
    }

    pub fn snapshot(&self) -> Arc<State> {
        self.state.read().clone()
    }

    /// Build events from the current state, apply them to a copy, append
    /// them to the journal and publish the copy. The journal lock is held
    /// throughout, so `build` sees every earlier commit.
    fn commit<T>(&self, build: impl FnOnce(&State) -> Result<T, CuratorError>) -> Result<(Arc<State>, T), CuratorError>
    where
        T: AsRef<[Event]>,
    {
        let mut journal = self.journal.lock();
        let current = self.snapshot();
        let events = build(&current)?;
        let mut next = (*current).clone();
        let mut buf = Vec::new();
        for ev in events.as_ref() {
            next.apply(ev)?;
            serde_json::to_writer(&mut buf, ev).expect("event serializes");
            buf.push(b'\n');
        }
        if !buf.is_empty() {
            let path = self.journal_path();
            let io_err = |source| GeoError::Io {
                path: path.display().to_string(),
                source,
            };
            journal.write_all(&buf).map_err(io_err)?;
            journal.sync_data().map_err(io_err)?;
        }
        let next = Arc::new(next);
        *self.state.write() = next.clone();
        Ok((next, events))
    }

    pub fn open_session(&self, phase: u8, mut cell_ids: Vec<u32>) -> Result<Session, CuratorError> {
        cell_ids.sort_unstable();
        cell_ids.dedup();
        let (_, events) = self.commit(|s| {
            let session = Session {
                session_id: format!("s{:04}", s.sessions.len() + 1),
                phase,
                cell_ids,
                opened_at: now_ms(),
            };
            Ok(vec![Event::SessionOpened {
                at: session.opened_at,
                session,
            }])
        })?;
        match &events[0] {
            Event::SessionOpened { session, .. } => Ok(session.clone()),
            _ => unreachable!("open_session commits a SessionOpened event"),
        }
    }

    /// Enqueue candidates as pending proposals; ones whose clip and geometry
    /// are already queued are skipped. Returns the new ids and the number
    /// of duplicates.
    pub fn enqueue(
        &self,
        session_id: &str,
        candidates: Vec<NewProposal>,
    ) -> Result<(Vec<String>, usize), CuratorError> {
        let (_, (events, dups)) = self
            .commit(|s| {
                s.session(session_id)?;
                let mut seen = BTreeSet::new();
                let mut dups = 0;
                let mut events = Vec::new();
                let at = now_ms();
                for c in candidates {
                    let hash = proposal_hash(&c.clip_id, &c.polygon);
                    if s.hashes.contains_key(&hash) || !seen.insert(hash.clone()) {
                        dups += 1;
                        continue;
                    }
                    events.push(Event::ProposalEnqueued {
                        at,
                        proposal: Proposal {
                            proposal_id: format!("p{:06}", s.proposals.len() + events.len() + 1),
                            session_id: session_id.to_string(),
                            clip_id: c.clip_id,
                            polygon: c.polygon,
                            score: c.score,
                            status: ProposalStatus::Pending,
                            edited_polygon: None,
                            decided_by: None,
                            decided_at: None,
                            split: None,
                            hash,
                        },
                    });
                }
                Ok(EventsWith(events, dups))
            })
            .map(|(st, EventsWith(ev, d))| (st, (ev, d)))?;
        let ids = events
            .iter()
            .filter_map(|e| match e {
                Event::ProposalEnqueued { proposal, .. } => Some(proposal.proposal_id.clone()),
                _ => None,
            })
            .collect();
        Ok((ids, dups))
    }

    /// Run the segmenter over the session's unlabeled clips and enqueue its
    /// proposals, minus those matching an existing label. A clip that fails
    /// is logged in the outcome and does not stop the others.
    pub fn generate_proposals(&self, session_id: &str, segmenter: &Segmenter) -> Result<GenerateOutcome, CuratorError> {
        let snap = self.snapshot();
        let session = snap.session(session_id)?.clone();
        let dataset = snap.phase(session.phase)?;
        let dir = self.clip_dir();
        let clip_ids: Vec<String> = if dir.exists() { list_clips(&dir)? } else { Vec::new() }
            .into_iter()
            .filter(|id| !id.contains('~'))
            .filter(|id| cell_of_clip(id).is_some_and(|c| session.cell_ids.contains(&c)))
            .filter(|id| dataset.manifest.split_of(id).is_none())
            .collect();
        let results: Vec<Result<(Vec<NewProposal>, usize), ClipFailure>> = clip_ids
            .par_iter()
            .map(|id| {
                propose_for_clip(&dir, id, segmenter, &dataset.labels, session.phase).map_err(|message| ClipFailure {
                    clip_id: id.clone(),
                    message,
                })
            })
            .collect();
        let mut outcome = GenerateOutcome {
            clips_scanned: clip_ids.len(),
            ..Default::default()
        };
        let mut candidates = Vec::new();
        for r in results {
            match r {
                Ok((c, suppressed)) => {
                    outcome.suppressed += suppressed;
                    candidates.extend(c);
                }
                Err(f) => outcome.errors.push(f),
            }
        }
        let (ids, dups) = self.enqueue(session_id, candidates)?;
        outcome.enqueued = ids.len();
        outcome.duplicates = dups;
        Ok(outcome)
    }

    /// Decide a pending proposal. Exactly one of several concurrent
    /// decisions on the same proposal succeeds; the rest get a conflict.
    pub fn decide(
        &self,
        proposal_id: &str,
        decision: Decision,
        reviewer: &str,
        split: Option<Split>,
    ) -> Result<Proposal, CuratorError> {
        let (state, _) = self.commit(|_| {
            Ok(vec![Event::Decided {
                at: now_ms(),
                proposal_id: proposal_id.to_string(),
                decision,
                reviewer: reviewer.to_string(),
                split,
            }])
        })?;
        Ok(state.proposals[proposal_id].clone())
    }

    /// Promote `from` to `from + 1`. With `abandon`, pending proposals are
    /// rejected first on behalf of [`ABANDONED_BY`]; otherwise any pending
    /// proposal is an error.
    pub fn promote(
        &self,
        from: u8,
        abandon: bool,
        synthetic: Vec<SyntheticClip>,
    ) -> Result<PhaseDataset, CuratorError> {
        let (state, _) = self.commit(|s| {
            let at = now_ms();
            let mut events: Vec<Event> = Vec::new();
            if abandon {
                for id in s.pending_in_phase(from) {
                    events.push(Event::Decided {
                        at,
                        proposal_id: id.to_string(),
                        decision: Decision::Reject,
                        reviewer: ABANDONED_BY.into(),
                        split: None,
                    });
                }
            }
            events.push(Event::PhasePromoted { at, from, synthetic });
            Ok(events)
        })?;
        self.write_snapshot(from + 1)?;
        Ok(state.phases[&(from + 1)].clone())
    }

    /// Copy a synthetic batch into the store's clip directory and promote
    /// with it.
    pub fn promote_with_synth(&self, from: u8, abandon: bool, synth_dir: &Path) -> Result<PhaseDataset, CuratorError> {
        let manifest =
            SynthManifest::load(&synth_dir.join("manifest.json")).map_err(|e| CuratorError::Invalid(e.to_string()))?;
        let dir = self.clip_dir();
        manifest
            .clips
            .par_iter()
            .try_for_each(|e| -> Result<(), CuratorError> {
                let clip = read_clip(synth_dir, &e.clip_id)?;
                write_clip(&dir, &clip, Some(Provenance::Synthetic))?;
                Ok(())
            })?;
        self.promote(from, abandon, SyntheticClip::from_manifest(&manifest))
    }

    pub fn report(&self, phase: u8) -> Result<DatasetReport, CuratorError> {
        Ok(dataset_report(self.snapshot().phase(phase)?))
    }

    /// Write the phase manifest and its labels as GeoJSON under `phases/`.
    fn write_snapshot(&self, phase: u8) -> Result<(), CuratorError> {
        let snap = self.snapshot();
        let d = snap.phase(phase)?;
        let dir = self.root.join("phases");
        d.manifest.save(&dir.join(format!("phase{phase}.json")))?;
        let crs = d
            .manifest
            .entries
            .first()
            .and_then(|e| read_sidecar_crs(&self.clip_dir(), &e.clip_id))
            .unwrap_or_default();
        let layer = LabelLayer {
            crs,
            labels: d.labels.clone(),
        };
        io::write_labels(&dir.join(format!("phase{phase}.geojson")), &layer)?;
        Ok(())
    }

    /// Clip sidecar, for clients that map pixels to map coordinates.
    pub fn sidecar(&self, clip_id: &str) -> Result<ClipSidecar, CuratorError> {
        valid_clip_id(clip_id)?;
        crate::preprocess::store::read_sidecar(&self.clip_dir(), clip_id).map_err(|_| not_found("clip", clip_id))
    }
}

struct EventsWith(Vec<Event>, usize);

impl AsRef<[Event]> for EventsWith {
    fn as_ref(&self) -> &[Event] {
        &self.0
    }
}

fn read_sidecar_crs(dir: &Path, clip_id: &str) -> Option<String> {
    crate::preprocess::store::read_sidecar(dir, clip_id)
        .ok()
        .map(|s| s.transform.crs_id)
}

/// Clip ids travel in URLs; keep them to plain file names.
pub fn valid_clip_id(clip_id: &str) -> Result<(), CuratorError> {
    let ok = !clip_id.is_empty()
        && clip_id != "."
        && clip_id != ".."
        && clip_id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '~' | '.' | '#'));
    if ok {
        Ok(())
    } else {
        Err(CuratorError::Invalid(format!("bad clip id {clip_id:?}")))
    }
}

/// Proposals for one clip and how many were suppressed.
fn propose_for_clip(
    dir: &Path,
    clip_id: &str,
    segmenter: &Segmenter,
    labels: &[ParcelLabel],
    phase: u8,
) -> Result<(Vec<NewProposal>, usize), String> {
    let clip = read_clip(dir, clip_id).map_err(|e| e.to_string())?;
    let map = segmenter.infer(clip_id, &clip.image).map_err(|e| e.to_string())?;
    let t: &GeoTransform = clip.image.transform();
    let (w, h) = (clip.image.width(), clip.image.height());
    let bounds = t.bounds(w, h);
    let nearby: Vec<&ParcelLabel> = labels.iter().filter(|l| l.polygon.bbox().intersects(&bounds)).collect();
    let mut out = Vec::new();
    let mut suppressed = 0;
    for p in segmenter.extract_proposals(clip_id, &map, t, phase) {
        let mask = rasterize(std::slice::from_ref(&p.polygon), &t.crs_id, t, w, h).map_err(|e| e.to_string())?;
        let mut overlaps = false;
        for l in &nearby {
            let lm = rasterize(std::slice::from_ref(&l.polygon), &t.crs_id, t, w, h).map_err(|e| e.to_string())?;
            if seg_score(&mask, &lm, None).map_err(|e| e.to_string())?.iou > SUPPRESS_IOU {
                overlaps = true;
                break;
            }
        }
        if overlaps {
            suppressed += 1;
            continue;
        }
        out.push(NewProposal {
            clip_id: clip_id.to_string(),
            score: map.mean_under(&mask),
            polygon: p.polygon,
        });
    }
    Ok((out, suppressed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest() -> SplitManifest {
        let e = |id: &str, split| SplitEntry {
            clip_id: id.into(),
            split,
            augmented: false,
            provenance: Some(Provenance::Expert),
        };
        SplitManifest::from_entries(
            1,
            vec![
                e("1_0_0", Split::Train),
                e("1_0_1", Split::Val),
                e("9_0_0", Split::Test),
            ],
        )
        .unwrap()
    }

    fn square(x: f64, y: f64, s: f64) -> Polygon {
        Polygon::rect(x, y - s, x + s, y).unwrap()
    }

    fn cand(clip: &str, x: f64) -> NewProposal {
        NewProposal {
            clip_id: clip.into(),
            polygon: square(x, 100.0, 10.0),
            score: 200,
        }
    }

    #[test]
    fn approve_reject_and_conflict() {
        let dir = tempfile::tempdir().unwrap();
        let c = Curator::init(dir.path(), manifest(), vec![]).unwrap();
        let s = c.open_session(1, vec![1]).unwrap();
        let (ids, dups) = c
            .enqueue(
                &s.session_id,
                vec![cand("1_1_0", 0.0), cand("1_1_0", 20.0), cand("1_1_0", 0.0)],
            )
            .unwrap();
        assert_eq!((ids.len(), dups), (2, 1));
        let p = c.decide(&ids[0], Decision::Approve, "ana", None).unwrap();
        assert_eq!(p.status, ProposalStatus::Approved);
        assert!(matches!(
            c.decide(&ids[0], Decision::Reject, "bo", None),
            Err(CuratorError::Conflict(_))
        ));
        assert!(matches!(
            c.decide("p999999", Decision::Reject, "bo", None),
            Err(CuratorError::NotFound(_))
        ));
        c.decide(&ids[1], Decision::Reject, "bo", None).unwrap();
        assert_eq!(
            c.snapshot().progress(&s.session_id),
            Progress {
                pending: 0,
                decided: 2,
                total: 2
            }
        );
        // Re-enqueueing the same geometry adds nothing.
        let (again, dups) = c.enqueue(&s.session_id, vec![cand("1_1_0", 0.0)]).unwrap();
        assert_eq!((again.len(), dups), (0, 1));
    }

    #[test]
    fn sessions_exclude_test_cells_and_are_unique_per_phase() {
        let dir = tempfile::tempdir().unwrap();
        let c = Curator::init(dir.path(), manifest(), vec![]).unwrap();
        assert!(matches!(c.open_session(1, vec![9]), Err(CuratorError::Invalid(_))));
        assert!(matches!(c.open_session(2, vec![1]), Err(CuratorError::Conflict(_))));
        c.open_session(1, vec![1, 2]).unwrap();
        assert!(matches!(c.open_session(1, vec![3]), Err(CuratorError::Conflict(_))));
    }

    #[test]
    fn promotion_adds_approved_clips_and_keeps_test() {
        let dir = tempfile::tempdir().unwrap();
        let c = Curator::init(dir.path(), manifest(), vec![]).unwrap();
        let s = c.open_session(1, vec![1, 2]).unwrap();
        let (ids, _) = c
            .enqueue(
                &s.session_id,
                vec![cand("1_1_0", 0.0), cand("2_0_0", 0.0), cand("2_0_1", 0.0)],
            )
            .unwrap();
        c.decide(&ids[0], Decision::Approve, "ana", Some(Split::Train)).unwrap();
        c.decide(
            &ids[1],
            Decision::Edit {
                polygon: square(1.0, 99.0, 5.0),
            },
            "ana",
            Some(Split::Val),
        )
        .unwrap();
        assert!(matches!(c.promote(1, false, vec![]), Err(CuratorError::Conflict(_))));
        let d = c.promote(1, true, vec![]).unwrap();
        assert_eq!(
            d.manifest.counts,
            SplitCounts {
                train: 2,
                val: 2,
                test: 1
            }
        );
        assert_eq!(d.labels.len(), 2);
        assert_eq!(d.labels[1].polygon, square(1.0, 99.0, 5.0));
        let st = c.snapshot();
        assert_eq!(st.proposals[&ids[2]].decided_by.as_deref(), Some(ABANDONED_BY));
        assert_eq!(d.manifest.clip_ids(Split::Test).collect::<Vec<_>>(), vec!["9_0_0"]);
        assert!(matches!(c.promote(1, false, vec![]), Err(CuratorError::Conflict(_))));
        assert!(dir.path().join("phases/phase2.json").exists());
    }

    #[test]
    fn promotion_without_approvals_only_bumps_phase() {
        let dir = tempfile::tempdir().unwrap();
        let c = Curator::init(dir.path(), manifest(), vec![]).unwrap();
        let d = c.promote(1, false, vec![]).unwrap();
        assert_eq!(d.phase, 2);
        assert_eq!(d.manifest.entries, manifest().entries);
        assert_eq!(c.report(2).unwrap().total, 3);
        assert!(matches!(c.report(3), Err(CuratorError::NotFound(_))));
    }

    #[test]
    fn replay_matches_live_state() {
        let dir = tempfile::tempdir().unwrap();
        let c = Curator::init(dir.path(), manifest(), vec![]).unwrap();
        let s = c.open_session(1, vec![1]).unwrap();
        let (ids, _) = c
            .enqueue(&s.session_id, vec![cand("1_2_0", 0.0), cand("1_2_0", 30.0)])
            .unwrap();
        c.decide(&ids[0], Decision::Approve, "ana", None).unwrap();
        c.promote(1, true, vec![]).unwrap();
        let live = c.snapshot().to_bytes();
        drop(c);
        assert_eq!(replay(&dir.path().join(JOURNAL)).unwrap().to_bytes(), live);
        assert_eq!(Curator::open(dir.path()).unwrap().snapshot().to_bytes(), live);
    }

    #[test]
    fn default_split_is_stable_and_about_a_quarter_val() {
        assert_eq!(default_split("5_3_4"), default_split("5_3_4"));
        let val = (0..2000)
            .filter(|i| default_split(&format!("7_{i}_0")) == Split::Val)
            .count();
        assert!((400..600).contains(&val), "{val}");
    }

    #[test]
    fn generation_suppresses_known_parcels_and_is_idempotent() {
        use crate::segmenter::SegmenterConfig;
        use crate::synth::{composite, random_recipe, synth_transform, Profile};
        let recipe = random_recipe(3, "1_3_0", synth_transform(0), Profile::Agave);
        let clip = composite(&recipe).unwrap();
        let known: Vec<ParcelLabel> = recipe
            .labels()
            .into_iter()
            .map(|l| ParcelLabel {
                provenance: Provenance::Expert,
                phase: 1,
                ..l
            })
            .collect();
        let seg = Segmenter::with_workers(SegmenterConfig::default(), 1).unwrap();
        let run = |labels: Vec<ParcelLabel>| {
            let dir = tempfile::tempdir().unwrap();
            let c = Curator::init(dir.path(), manifest(), labels).unwrap();
            write_clip(&c.clip_dir(), &clip, None).unwrap();
            let s = c.open_session(1, vec![1]).unwrap();
            let first = c.generate_proposals(&s.session_id, &seg).unwrap();
            let again = c.generate_proposals(&s.session_id, &seg).unwrap();
            (first, again)
        };
        let (fresh, again) = run(Vec::new());
        assert_eq!(fresh.clips_scanned, 1);
        assert!(fresh.enqueued >= 1 && fresh.suppressed == 0, "{fresh:?}");
        assert_eq!((again.enqueued, again.duplicates), (0, fresh.enqueued));
        let (known_run, _) = run(known);
        assert!(known_run.suppressed >= 1, "{known_run:?}");
        assert_eq!(known_run.enqueued + known_run.suppressed, fresh.enqueued);
    }
}
