use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geo::{GeoError, Provenance};

use super::{ClipPair, PreprocessError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split {s:?}")),
        }
    }
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub clip_id: String,
    pub split: Split,
    #[serde(default, skip_serializing_if = "is_false")]
    pub augmented: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: u64,
    pub val: u64,
    pub test: u64,
}

impl SplitCounts {
    pub fn total(&self) -> u64 {
        self.train + self.val + self.test
    }

    pub fn get(&self, s: Split) -> u64 {
        match s {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    fn bump(&mut self, s: Split) {
        match s {
            Split::Train => self.train += 1,
            Split::Val => self.val += 1,
            Split::Test => self.test += 1,
        }
    }
}

/// Per-phase assignment of clips to train/val/test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub phase: u8,
    pub entries: Vec<SplitEntry>,
    pub counts: SplitCounts,
}

/// Grid cell of a `{cell}_{row}_{col}` clip id; `None` for other ids
/// (synthetic clips). Augmentation suffixes after `~` are ignored.
pub fn cell_of_clip(clip_id: &str) -> Option<u32> {
    let base = clip_id.split('~').next().unwrap_or(clip_id);
    let mut parts = base.split('_');
    let cell = parts.next()?.parse().ok()?;
    let _row: u32 = parts.next()?.parse().ok()?;
    let _col: u32 = parts.next()?.parse().ok()?;
    parts.next().is_none().then_some(cell)
}

impl SplitManifest {
    pub fn from_entries(phase: u8, mut entries: Vec<SplitEntry>) -> Result<Self, PreprocessError> {
        entries.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
        let mut counts = SplitCounts::default();
        for e in &entries {
            counts.bump(e.split);
        }
        let m = Self { phase, entries, counts };
        m.validate()?;
        Ok(m)
    }

    pub fn count_entries(&self) -> SplitCounts {
        let mut c = SplitCounts::default();
        for e in &self.entries {
            c.bump(e.split);
        }
        c
    }

    /// Checks disjoint clip ids, recorded counts, grid-level test isolation
    /// and that augmented clips only appear in train.
    pub fn validate(&self) -> Result<(), PreprocessError> {
        if !(1..=3).contains(&self.phase) {
            return Err(PreprocessError::InvalidManifest(format!("phase {}", self.phase)));
        }
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.clip_id.as_str()) {
                return Err(PreprocessError::InvalidManifest(format!(
                    "clip {} listed twice",
                    e.clip_id
                )));
            }
            if e.augmented && e.split != Split::Train {
                return Err(PreprocessError::InvalidManifest(format!(
                    "augmented clip {} in {}",
                    e.clip_id, e.split
                )));
            }
        }
        let counted = self.count_entries();
        if counted != self.counts {
            return Err(PreprocessError::InvalidManifest(format!(
                "recorded counts {:?} but entries give {:?}",
                self.counts, counted
            )));
        }
        let mut test_cells = BTreeSet::new();
        let mut fit_cells = BTreeSet::new();
        for e in &self.entries {
            if let Some(cell) = cell_of_clip(&e.clip_id) {
                if e.split == Split::Test {
                    test_cells.insert(cell);
                } else {
                    fit_cells.insert(cell);
                }
            }
        }
        if let Some(cell) = test_cells.intersection(&fit_cells).next() {
            return Err(PreprocessError::SplitConflict(format!(
                "cell {cell} has both test and train/val clips"
            )));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PreprocessError> {
        let bytes = std::fs::read(path).map_err(|source| GeoError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let m: SplitManifest = serde_json::from_slice(&bytes).map_err(|e| GeoError::Decode {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), PreprocessError> {
        crate::geo::io::write_json(path, self)?;
        Ok(())
    }

    pub fn split_of(&self, clip_id: &str) -> Option<Split> {
        self.entries
            .binary_search_by(|e| e.clip_id.as_str().cmp(clip_id))
            .ok()
            .map(|i| self.entries[i].split)
    }

    pub fn clip_ids(&self, split: Split) -> impl Iterator<Item = &str> {
        self.entries
            .iter()
            .filter(move |e| e.split == split)
            .map(|e| e.clip_id.as_str())
    }
}

/// How clips map to splits.
///
/// `cells` lists the splits each grid cell may feed; a cell may feed test or
/// train/val, never both. `clips` pins individual clips. Clips of a cell that
/// feeds both train and val (and are not pinned) go to val at an even
/// `val_fraction` spacing over their sorted ids. Clips without a cell
/// (synthetic) must be pinned or fall back to `uncelled`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    #[serde(default)]
    pub cells: BTreeMap<u32, Vec<Split>>,
    #[serde(default)]
    pub clips: BTreeMap<String, Split>,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    #[serde(default)]
    pub uncelled: Option<Split>,
}

fn default_val_fraction() -> f64 {
    0.25
}

impl Default for SplitAssignment {
    fn default() -> Self {
        Self {
            cells: BTreeMap::new(),
            clips: BTreeMap::new(),
            val_fraction: default_val_fraction(),
            uncelled: None,
        }
    }
}

/// The parts of a clip that splitting needs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClipRef {
    pub clip_id: String,
    pub source_cell: Option<u32>,
}

impl ClipRef {
    pub fn new(clip_id: impl Into<String>) -> Self {
        let clip_id = clip_id.into();
        let source_cell = cell_of_clip(&clip_id);
        Self { clip_id, source_cell }
    }
}

impl From<&ClipPair> for ClipRef {
    fn from(c: &ClipPair) -> Self {
        Self {
            clip_id: c.clip_id.clone(),
            source_cell: c.source_cell,
        }
    }
}

fn even_spread_is_val(index: usize, fraction: f64) -> bool {
    ((index + 1) as f64 * fraction).floor() > (index as f64 * fraction).floor()
}

/// Assign every clip to a split and build the phase manifest.
pub fn build_split(
    clips: &[ClipRef],
    assignment: &SplitAssignment,
    phase: u8,
) -> Result<SplitManifest, PreprocessError> {
    for (cell, splits) in &assignment.cells {
        if splits.contains(&Split::Test) && splits.iter().any(|&s| s != Split::Test) {
            return Err(PreprocessError::SplitConflict(format!(
                "cell {cell} assigned to both test and train/val"
            )));
        }
        if splits.is_empty() {
            return Err(PreprocessError::SplitConflict(format!("cell {cell} has no split")));
        }
    }

    // Base clips first; augmented variants inherit their parent's split.
    let (augmented, base): (Vec<&ClipRef>, Vec<&ClipRef>) = clips.iter().partition(|c| c.clip_id.contains('~'));

    let mut resolved: BTreeMap<&str, Split> = BTreeMap::new();
    let mut spread: BTreeMap<u32, Vec<&str>> = BTreeMap::new();
    for c in &base {
        let pinned = assignment.clips.get(&c.clip_id).copied();
        let split = match c.source_cell {
            None => pinned
                .or(assignment.uncelled)
                .ok_or_else(|| PreprocessError::Unassigned(c.clip_id.clone()))?,
            Some(cell) => {
                let allowed = assignment
                    .cells
                    .get(&cell)
                    .ok_or_else(|| PreprocessError::Unassigned(c.clip_id.clone()))?;
                match pinned {
                    Some(p) if !allowed.contains(&p) => {
                        return Err(PreprocessError::SplitConflict(format!(
                            "clip {} pinned to {p} but cell {cell} allows {allowed:?}",
                            c.clip_id
                        )))
                    }
                    Some(p) => p,
                    None if allowed.len() == 1 => allowed[0],
                    None if allowed.contains(&Split::Train) && allowed.contains(&Split::Val) => {
                        spread.entry(cell).or_default().push(&c.clip_id);
                        continue;
                    }
                    None => allowed[0],
                }
            }
        };
        resolved.insert(&c.clip_id, split);
    }
    for ids in spread.values_mut() {
        ids.sort_unstable();
        for (i, id) in ids.iter().enumerate() {
            let s = if even_spread_is_val(i, assignment.val_fraction) {
                Split::Val
            } else {
                Split::Train
            };
            resolved.insert(id, s);
        }
    }

    let mut entries: Vec<SplitEntry> = resolved
        .iter()
        .map(|(&id, &split)| SplitEntry {
            clip_id: id.to_string(),
            split,
            augmented: false,
            provenance: None,
        })
        .collect();
    for c in augmented {
        let parent = c.clip_id.split('~').next().unwrap_or(&c.clip_id);
        let split = resolved
            .get(parent)
            .copied()
            .ok_or_else(|| PreprocessError::Unassigned(c.clip_id.clone()))?;
        if split != Split::Train {
            return Err(PreprocessError::SplitConflict(format!(
                "augmented clip {} would land in {split}",
                c.clip_id
            )));
        }
        entries.push(SplitEntry {
            clip_id: c.clip_id.clone(),
            split,
            augmented: true,
            provenance: None,
        });
    }
    SplitManifest::from_entries(phase, entries)
}
