//! Acceptance checks: one PASS/FAIL line per criterion, non-zero exit if any
//! fails. Run with `cargo test --test acceptance`.

mod common;

use std::process::ExitCode;
use std::sync::{Arc, Barrier};
use std::time::Instant;

use agavescan::curator::{replay, Curator, CuratorError, Decision, NewProposal};
use agavescan::geo::{polygonize, rasterize, BitMask, GeoTransform, Maturity, Polygon, Provenance, Raster};
use agavescan::maturity::{parcel_maturity, TileManifest};
use agavescan::metrics::{components, object_match, seg_score};
use agavescan::preprocess::{augment, AugmentMode, ClipPair, Dihedral, SplitCounts, SplitEntry, SplitManifest};
use agavescan::segmenter::protocol::{Frame, ImageFrame, ProtocolError};
use agavescan::segmenter::{AdapterError, SubprocessAdapter};
use common::oracles::{brute_force_tiles, naive_iou, random_mask, tiles_in_rect, CRS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type CheckFn = fn() -> Check;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn seg_score_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let (w, h) = (rng.random_range(1..=64), rng.random_range(1..=64));
        let (da, db) = (rng.random::<f64>(), rng.random::<f64>());
        let pred = random_mask(w, h, da, rng.random());
        let truth = random_mask(w, h, db, rng.random());
        let s = seg_score(&pred, &truth, None).map_err(|e| e.to_string())?;
        let (iou, dsi) = naive_iou(&pred, &truth);
        let err = [
            (s.iou - iou).abs(),
            (s.dsi - dsi).abs(),
            (s.dsi - 2.0 * s.iou / (1.0 + s.iou)).abs(),
        ]
        .into_iter()
        .fold(0.0, f64::max);
        ensure(err <= 1e-12, || format!("pair {i} ({w}x{h}) off by {err:e}"))?;
        worst = worst.max(err);
    }
    let t = start.elapsed().as_secs_f64();
    ensure(t < 5.0, || format!("took {t:.2} s"))?;
    Ok(format!("1000 pairs, max error {worst:e}, {t:.2} s"))
}

fn polygon_round_trip() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let t = GeoTransform::new(500_000.0, 2_100_000.0, 0.5, -0.5, CRS).unwrap();
    for i in 0..500 {
        let (w, h) = (rng.random_range(1..=64), rng.random_range(1..=64));
        let m = random_mask(w, h, rng.random(), rng.random());
        let back = rasterize(&polygonize(&m, &t), CRS, &t, w, h).map_err(|e| e.to_string())?;
        ensure(back == m, || format!("mask {i} ({w}x{h}) differs after the round trip"))?;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 10.0, || format!("took {secs:.2} s"))?;
    Ok(format!("500 masks, {secs:.2} s"))
}

fn shipped_manifests() -> Check {
    let dir = common::fixture_dir();
    let load = |n: u8| SplitManifest::load(&dir.join(format!("phase{n}.json"))).map_err(|e| e.to_string());
    let phases = [load(1)?, load(2)?, load(3)?];
    let want = [(127, 48, 208), (182, 74, 208), (528, 222, 208)];
    for (m, (train, val, test)) in phases.iter().zip(want) {
        let c = SplitCounts { train, val, test };
        ensure(m.counts == c && m.count_entries() == c, || {
            format!("phase {}: {:?}", m.phase, m.counts)
        })?;
    }
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let built = common::build_phases(tmp.path());
    ensure(built == phases, || "phase manifests differ from the builder".into())?;
    let tiles = TileManifest::load(&dir.join("tiles_manifest.json")).map_err(|e| e.to_string())?;
    let c = tiles.count_entries();
    for (split, n) in [(c.train, 3904), (c.val, 1735), (c.test, 1301)] {
        ensure(split.young == n && split.mature == n, || format!("tile counts {c:?}"))?;
    }
    ensure(c.total() == 13_880, || format!("{} tiles", c.total()))?;
    ensure(tiles == common::tile_manifest(), || {
        "tile manifest differs from the builder".into()
    })?;
    Ok("383/464/958 clips; 7808/3470/2602 tiles".into())
}

fn rect(x0: u32, y0: u32, x1: u32, y1: u32) -> BitMask {
    BitMask::from_fn(32, 32, |x, y| (x0..x1).contains(&x) && (y0..y1).contains(&y))
}

fn object_matching() -> Check {
    let counts = |p: &BitMask, t: &BitMask| {
        object_match(&components(p), &components(t), 0.5)
            .map(|c| (c.tp, c.fp, c.fn_))
            .map_err(|e| e.to_string())
    };
    // Overlap 40 of union 100, then 40 of union 80.
    let low = counts(&rect(0, 3, 10, 10), &rect(0, 0, 10, 7))?;
    ensure(low == (0, 1, 1), || format!("IoU 0.4 gave {low:?}"))?;
    let half = counts(&rect(0, 2, 10, 8), &rect(0, 0, 10, 6))?;
    ensure(half == (1, 0, 0), || format!("IoU 0.5 gave {half:?}"))?;
    let high = counts(&rect(0, 1, 10, 8), &rect(0, 0, 10, 7))?;
    ensure(high == (1, 0, 0), || format!("IoU 0.75 gave {high:?}"))?;
    Ok("IoU 0.4 -> 0/1/1, IoU 0.5 and 0.75 -> 1/0/0".into())
}

fn dihedral_invariance() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..200 {
        let n = rng.random_range(1..=64);
        let pred = random_mask(n, n, rng.random(), rng.random());
        let truth = random_mask(n, n, rng.random(), rng.random());
        let base = seg_score(&pred, &truth, None).map_err(|e| e.to_string())?;
        for d in Dihedral::ALL {
            let s = seg_score(&d.apply_mask(&pred), &d.apply_mask(&truth), None).map_err(|e| e.to_string())?;
            ensure(s == base, || format!("pair {i} changes under {d:?}"))?;
        }
    }
    let n = 16;
    let image = Raster::rgb8(
        n,
        n,
        (0..n * n * 3).map(|i| i as u8).collect(),
        GeoTransform::pixel_grid(n, CRS),
    )
    .map_err(|e| e.to_string())?;
    let mask = BitMask::from_fn(n, n, |x, y| x < 5 && y < 2);
    let pair = ClipPair::new("1_0_0", image, mask, BitMask::filled(n, n), Some(1)).map_err(|e| e.to_string())?;
    let variants = augment(&pair, AugmentMode::Exhaustive).map_err(|e| e.to_string())?;
    ensure(variants.len() == 8, || format!("{} variants", variants.len()))?;
    Ok("200 pairs x 8 transforms exact; 8 variants".into())
}

fn lattice_tiles() -> Check {
    let mut rects = 0;
    let mut tiles = 0;
    for ty0 in 0..8u32 {
        for ty1 in ty0 + 1..=8 {
            for tx0 in (0..8u32).step_by(3) {
                for tx1 in (tx0 + 1..=8).step_by(2) {
                    let (x0, y0, x1, y1) = (tx0 * 32, ty0 * 32, tx1 * 32, ty1 * 32);
                    let found = tiles_in_rect(x0, y0, x1, y1);
                    let oracle = brute_force_tiles(x0, y0, x1, y1);
                    ensure(found == oracle, || {
                        format!("rect ({x0},{y0})-({x1},{y1}): {found:?} vs {oracle:?}")
                    })?;
                    let expect = ((tx1 - tx0) * (ty1 - ty0)) as usize;
                    ensure(found.len() == expect, || {
                        format!("rect ({x0},{y0})-({x1},{y1}): {} tiles", found.len())
                    })?;
                    rects += 1;
                    tiles += found.len();
                }
            }
        }
    }
    Ok(format!("{rects} parcels, {tiles} tiles, all 1024 centers inside"))
}

fn parcel_votes() -> Check {
    let mut cases = 0;
    for n in 1..=7u32 {
        for bits in 0u32..(1 << n) {
            let votes: Vec<Maturity> = (0..n)
                .map(|i| {
                    if bits >> i & 1 == 1 {
                        Maturity::Mature
                    } else {
                        Maturity::Young
                    }
                })
                .collect();
            let v = parcel_maturity("p", &votes).map_err(|e| e.to_string())?;
            let mature = bits.count_ones();
            let young = n - mature;
            let want = if mature > young {
                Maturity::Mature
            } else {
                Maturity::Young
            };
            ensure(v.maturity == want && v.tie_broken == (young == mature), || {
                format!("{votes:?} -> {v:?}")
            })?;
            cases += 1;
        }
    }
    Ok(format!("{cases} orderings of every multiset up to 7 votes"))
}

fn end_to_end() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| e.to_string())?;
    let start = Instant::now();
    let (report, n) = pool.install(|| common::run_scene_pipeline(7, tmp.path()));
    let secs = start.elapsed().as_secs_f64();
    let iou = report.aggregate.mean_iou;
    ensure(n == 20, || format!("{n} clips"))?;
    ensure(iou >= 0.8, || format!("mean IoU {iou:.4}"))?;
    ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!("20 clips, mean IoU {iou:.4}, {secs:.1} s on one thread"))
}

fn concurrent_review() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let e = |id: &str, split| SplitEntry {
        clip_id: id.into(),
        split,
        augmented: false,
        provenance: Some(Provenance::Expert),
    };
    use agavescan::preprocess::Split;
    let m = SplitManifest::from_entries(
        1,
        vec![
            e("1_0_0", Split::Train),
            e("1_0_1", Split::Val),
            e("9_0_0", Split::Test),
        ],
    )
    .map_err(|e| e.to_string())?;
    let c = Arc::new(Curator::init(tmp.path(), m, vec![]).map_err(|e| e.to_string())?);
    let s = c.open_session(1, vec![1]).map_err(|e| e.to_string())?;
    let poly = Polygon::rect(0.0, 0.0, 10.0, 10.0).unwrap();
    let (ids, _) = c
        .enqueue(
            &s.session_id,
            vec![NewProposal {
                clip_id: "1_1_0".into(),
                polygon: poly,
                score: 200,
            }],
        )
        .map_err(|e| e.to_string())?;
    let barrier = Arc::new(Barrier::new(16));
    let handles: Vec<_> = (0..16)
        .map(|t| {
            let (c, id, barrier) = (c.clone(), ids[0].clone(), barrier.clone());
            std::thread::spawn(move || {
                barrier.wait();
                c.decide(
                    &id,
                    if t % 2 == 0 {
                        Decision::Approve
                    } else {
                        Decision::Reject
                    },
                    &format!("r{t}"),
                    None,
                )
            })
        })
        .collect();
    let results: Vec<_> = handles.into_iter().map(|h| h.join().expect("decider thread")).collect();
    let applied = results.iter().filter(|r| r.is_ok()).count();
    let conflicts = results
        .iter()
        .filter(|r| matches!(r, Err(CuratorError::Conflict(_))))
        .count();
    ensure((applied, conflicts) == (1, 15), || {
        format!("{applied} applied, {conflicts} conflicts")
    })?;
    let live = c.snapshot().to_bytes();
    let replayed = replay(&c.journal_path()).map_err(|e| e.to_string())?.to_bytes();
    ensure(replayed == live, || "replayed state differs".into())?;
    Ok("1 applied, 15 conflicts; replay byte-identical".into())
}

fn echo_adapter() -> Check {
    let echo = env!("CARGO_BIN_EXE_agv-echo").to_string();
    let adapter = SubprocessAdapter::new(vec![echo.clone()], 10_000, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for i in 0..100 {
        let n = 256;
        // Gray clips: the echoed channel 0 is the whole image.
        let gray: Vec<u8> = (0..n * n).map(|_| rng.random()).collect();
        let rgb: Vec<u8> = gray.iter().flat_map(|&g| [g, g, g]).collect();
        let reply = adapter
            .exchange(&Frame::SegmentRequest(ImageFrame::new(n, n, 3, rgb)))
            .map_err(|e| format!("clip {i}: {e}"))?;
        let want = Frame::SegmentResponse(ImageFrame::new(n, n, 1, gray));
        ensure(reply.encode() == want.encode(), || {
            format!("clip {i} came back different")
        })?;
    }
    let bad = SubprocessAdapter::new(vec![echo, "--corrupt-magic".into()], 10_000, 1);
    match bad.exchange(&Frame::TileRequest(ImageFrame::new(1, 1, 3, vec![0; 3]))) {
        Err(AdapterError::Protocol(ProtocolError::BadMagic(_))) => {}
        other => return Err(format!("corrupt magic gave {other:?}")),
    }
    Ok("100 clips byte-identical; bad magic rejected".into())
}

fn main() -> ExitCode {
    let checks: [(&str, CheckFn); 10] = [
        ("seg_score agrees with pixel counting", seg_score_oracle),
        ("polygonize then rasterize is lossless", polygon_round_trip),
        ("shipped manifests have the expected counts", shipped_manifests),
        ("object matching at the IoU threshold", object_matching),
        ("scores invariant under the 8 dihedral maps", dihedral_invariance),
        ("lattice tiles match the brute-force count", lattice_tiles),
        ("parcel votes: order-free, ties to young", parcel_votes),
        ("synthetic scene end to end, mean IoU >= 0.8", end_to_end),
        ("16 concurrent reviewers, journal replay", concurrent_review),
        ("echo adapter round trip and bad magic", echo_adapter),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} passed", checks.len() - failed, checks.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
