//! Fixture builders and the scene pipeline, shared by the test targets.

#![allow(dead_code)]

pub mod oracles;

use std::path::{Path, PathBuf};

use agavescan::curator::{Curator, Decision, NewProposal, SyntheticClip};
use agavescan::geo::io;
use agavescan::geo::{Maturity, Polygon, Provenance};
use agavescan::maturity::{balance_split, TileEntry, TileManifest};
use agavescan::metrics::{evaluate, EvalItem, EvaluationReport};
use agavescan::preprocess::store::{list_clips, preprocess_scene, read_clip, SceneOptions};
use agavescan::preprocess::ClipPair;
use agavescan::preprocess::{build_split, ClipRef, Split, SplitAssignment, SplitManifest};
use agavescan::segmenter::{proposal_mask, Segmenter, SegmenterConfig};
use agavescan::synth::{generate_batch, generate_scene, Profile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TRAIN_VAL_CELLS: [u32; 3] = [32, 48, 71];
pub const TEST_CELLS: [u32; 8] = [7, 9, 34, 45, 47, 57, 58, 60];

/// Clips per cell in the phase-1 fixture.
const TRAIN_VAL_CLIPS: [usize; 3] = [59, 58, 58];
const TEST_CLIPS_PER_CELL: usize = 26;
/// With per-cell even spreading, floor(59·f) + 2·floor(58·f) = 48 val clips.
const VAL_FRACTION: f64 = 0.28;

/// Clips per row of a 2.5 km cell cut into 256 px clips at 0.5 m.
const CLIPS_PER_ROW: usize = 20;

pub const PHASE2_TRAIN_ADDED: usize = 55;
pub const PHASE2_VAL_ADDED: usize = 26;
pub const PHASE3_TRAIN_ADDED: usize = 346;
pub const PHASE3_VAL_ADDED: usize = 148;
pub const SYNTH_SEED: u64 = 7;

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/reference")
}

fn clip_id(cell: u32, index: usize) -> String {
    format!("{cell}_{}_{}", index / CLIPS_PER_ROW, index % CLIPS_PER_ROW)
}

pub fn phase1_manifest() -> SplitManifest {
    let mut refs = Vec::new();
    let mut assignment = SplitAssignment {
        val_fraction: VAL_FRACTION,
        ..Default::default()
    };
    for (cell, n) in TRAIN_VAL_CELLS.iter().zip(TRAIN_VAL_CLIPS) {
        assignment.cells.insert(*cell, vec![Split::Train, Split::Val]);
        refs.extend((0..n).map(|i| ClipRef::new(clip_id(*cell, i))));
    }
    for cell in TEST_CELLS {
        assignment.cells.insert(cell, vec![Split::Test]);
        refs.extend((0..TEST_CLIPS_PER_CELL).map(|i| ClipRef::new(clip_id(cell, i))));
    }
    let mut m = build_split(&refs, &assignment, 1).expect("phase-1 split");
    for e in &mut m.entries {
        e.provenance = Some(Provenance::Expert);
    }
    m
}

/// Run the label store through both promotions: reviewers approve new
/// clips in the train/val cells for phase 2, and a synthetic batch joins
/// at phase 3. Returns the three phase manifests.
pub fn build_phases(root: &Path) -> [SplitManifest; 3] {
    let curator = Curator::init(root, phase1_manifest(), Vec::new()).expect("init");
    let session = curator.open_session(1, TRAIN_VAL_CELLS.to_vec()).expect("session");
    let n = PHASE2_TRAIN_ADDED + PHASE2_VAL_ADDED;
    let candidates: Vec<NewProposal> = (0..n)
        .map(|i| {
            let cell = TRAIN_VAL_CELLS[i % 3];
            // Positions past the phase-1 clips of every cell.
            let clip = clip_id(cell, 100 + i / 3);
            let x = 500_000.0 + i as f64 * 10.0;
            NewProposal {
                clip_id: clip,
                polygon: Polygon::rect(x, 2_000_000.0, x + 40.0, 2_000_030.0).expect("rect"),
                score: 200,
            }
        })
        .collect();
    let (ids, _) = curator.enqueue(&session.session_id, candidates).expect("enqueue");
    for (i, id) in ids.iter().enumerate() {
        let split = if i < PHASE2_TRAIN_ADDED {
            Split::Train
        } else {
            Split::Val
        };
        curator
            .decide(id, Decision::Approve, "expert", Some(split))
            .expect("decide");
    }
    let p2 = curator.promote(1, false, Vec::new()).expect("promote 1");
    let (_, synth) = generate_batch(
        PHASE3_TRAIN_ADDED + PHASE3_VAL_ADDED,
        PHASE3_VAL_ADDED,
        SYNTH_SEED,
        Profile::Mixed,
    )
    .expect("synth batch");
    let p3 = curator
        .promote(2, false, SyntheticClip::from_manifest(&synth))
        .expect("promote 2");
    let snap = curator.snapshot();
    [snap.phases[&1].manifest.clone(), p2.manifest, p3.manifest]
}

/// Tile counts per class of the balanced tile dataset.
pub const TILES_PER_CLASS: [u64; 3] = [3904, 1735, 1301];
pub const TILE_RATIOS: [f64; 3] = [0.5625, 0.25, 0.1875];

/// Parcel-grouped tiles: young parcels summing to exactly 6,940 tiles and a
/// larger mature pool.
pub fn tile_pool() -> Vec<TileEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(2022);
    let mut out = Vec::new();
    for (class, total) in [(Maturity::Young, 6940u64), (Maturity::Mature, 9000)] {
        let mut left = total;
        let mut p = 0;
        while left > 0 {
            // Mostly small parcels, some large, a tail of single-tile ones.
            let size = if rng.random_bool(0.5) {
                1
            } else {
                rng.random_range(2..=40)
            }
            .min(left);
            let parcel = format!("{}{p:05}", &class.as_str()[..1]);
            for k in 0..size {
                out.push(TileEntry {
                    tile_id: format!("{parcel}_{k:03}"),
                    parcel_id: parcel.clone(),
                    split: Split::Train,
                    class,
                });
            }
            left -= size;
            p += 1;
        }
    }
    out
}

/// The first balancing seed whose output has exactly the target counts.
pub fn tile_manifest() -> TileManifest {
    let pool = tile_pool();
    for seed in 0..10_000 {
        let split = balance_split(pool.clone(), TILE_RATIOS, seed).expect("balance");
        let c = split.counts();
        if [c.train.young, c.val.young, c.test.young] == TILES_PER_CLASS
            && [c.train.mature, c.val.mature, c.test.mature] == TILES_PER_CLASS
        {
            return TileManifest::from_split(&split, 32, seed, TILE_RATIOS);
        }
    }
    panic!("no balancing seed reproduces the target counts");
}

/// Synthetic 5×4-cell scene written as GeoTIFF and GeoJSON, cut into 20
/// clips, segmented with the builtin model and scored.
pub fn run_scene_pipeline(seed: u64, dir: &Path) -> (EvaluationReport, usize) {
    let scene = generate_scene(5, 4, seed, Profile::Agave).unwrap();
    let tif = dir.join("scene.tif");
    let labels = dir.join("labels.geojson");
    io::write_geotiff(&tif, &scene.raster, None).unwrap();
    io::write_labels(&labels, &scene.labels).unwrap();

    // 256 px clips at 0.5 m: one clip per 128 m cell.
    let opts = SceneOptions {
        cell_size_m: 128.0,
        clip_size: 256,
    };
    let out = dir.join("work");
    let summary = preprocess_scene(&tif, &labels, &opts, &out).unwrap();
    assert_eq!(summary.clips, 20);

    let seg = Segmenter::with_workers(SegmenterConfig::default(), 1).unwrap();
    let clip_dir = out.join("clips");
    let clips: Vec<ClipPair> = list_clips(&clip_dir)
        .unwrap()
        .iter()
        .map(|id| read_clip(&clip_dir, id).unwrap())
        .collect();
    let preds: Vec<_> = clips
        .iter()
        .map(|c| proposal_mask(&seg.infer(&c.clip_id, &c.image).unwrap(), seg.config()))
        .collect();
    let items: Vec<EvalItem> = clips
        .iter()
        .zip(&preds)
        .map(|(c, p)| EvalItem {
            clip_id: &c.clip_id,
            pred: p,
            truth: &c.mask,
            valid: Some(&c.validity),
        })
        .collect();
    (evaluate(&items, 0.5).unwrap(), clips.len())
}
