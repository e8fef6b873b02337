//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 model adapter error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::config::{ConfigError, PipelineConfig};
use crate::curator::http::{self, AppState};
use crate::curator::{dataset_report, Curator, CuratorError, PhaseDataset};
use crate::geo::io::{self, LabelLayer};
use crate::geo::{Maturity, ParcelLabel, Provenance};
use crate::maturity::{
    balance_split, extract_tiles, maturity_report, parcel_maturity, write_tile_dataset, TileClassifier, TileSample,
};
use crate::metrics::{evaluate, EvalItem};
use crate::preprocess::store::{list_clips, mask_path, preprocess_scene, read_clip, SceneOptions};
use crate::preprocess::{build_split, ClipRef, SplitAssignment, SplitManifest};
use crate::segmenter::adapter::AdapterError;
use crate::segmenter::{proposal_mask, Segmenter};
use crate::synth::{generate_batch, generate_scene, write_batch, Profile};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_ADAPTER: i32 = 3;

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Parser, Debug)]
#[command(
    name = "agavescan",
    version,
    about = "Agave crop segmentation pipeline and labeling workbench"
)]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Working directory; overrides paths.workdir.
    #[arg(long, global = true, env = "AGAVESCAN_WORKDIR")]
    workdir: Option<PathBuf>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Cut a scene into labeled clips; with --assignment also create the
    /// phase-1 dataset and label store.
    Preprocess(PreprocessArgs),
    /// Run the segmenter over clips, writing probability maps, masks and proposals.
    Segment(SegmentArgs),
    /// Score predicted masks against reference masks.
    Evaluate(EvaluateArgs),
    /// Extract a balanced maturity tile dataset from labeled parcels.
    Tiles(TilesArgs),
    /// Classify parcel maturity by tile vote.
    Maturity(MaturityArgs),
    /// Synthetic training data.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Serve the label store over HTTP.
    Serve(ServeArgs),
    /// Dataset counts for one phase.
    Report(ReportArgs),
    /// Promote a phase to the next one.
    Promote(PromoteArgs),
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    cell_km: Option<f64>,
    #[arg(long)]
    clip: Option<u32>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Split assignment JSON (cells, pinned clips, val fraction).
    #[arg(long)]
    assignment: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SegmentArgs {
    #[arg(long)]
    clips: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Phase recorded on the proposals.
    #[arg(long, default_value_t = 2)]
    phase: u8,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Directory with `{clip}.mask.png` predictions.
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Directory with `{clip}.mask.png` references (and optional validity masks).
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Report JSON path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    object_iou: Option<f64>,
}

#[derive(Args, Debug)]
struct TilesArgs {
    #[arg(long)]
    clips: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Train, val and test fractions, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    ratios: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
struct MaturityArgs {
    #[arg(long)]
    clips: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Output GeoJSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum SynthCommand {
    /// A batch of synthetic clips with a manifest.
    Generate {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "mixed")]
        profile: Profile,
        /// How many of the clips (the last ones) go to validation.
        #[arg(long, default_value_t = 0)]
        val: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// A mosaic scene (16-bit GeoTIFF plus GeoJSON labels).
    Scene {
        #[arg(long, default_value_t = 4)]
        cols: u32,
        #[arg(long, default_value_t = 4)]
        rows: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "agave")]
        profile: Profile,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long)]
    bind: Option<String>,
    #[arg(long)]
    port: Option<u16>,
    #[arg(long)]
    static_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    phase: u8,
    /// Report on a manifest file instead of the label store.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PromoteArgs {
    #[arg(long)]
    from: u8,
    /// Reject pending proposals instead of failing on them.
    #[arg(long)]
    abandon: bool,
    /// Synthetic batch directory to ingest (phase 2 to 3).
    #[arg(long)]
    synth: Option<PathBuf>,
}

/// Parse `argv` (including the program name), run the command and return
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", error_message(&e));
            exit_code(&e)
        }
    }
}

/// The error chain joined with ": ", skipping causes a parent message
/// already spells out.
fn error_message(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !msg.contains(&text) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&text);
        }
    }
    msg
}

fn exit_code(e: &anyhow::Error) -> i32 {
    if e.chain().any(|c| c.is::<AdapterError>()) {
        EXIT_ADAPTER
    } else if e.chain().any(|c| c.is::<UsageError>() || c.is::<ConfigError>()) {
        EXIT_USAGE
    } else {
        EXIT_DATA
    }
}

struct Ctx {
    cfg: PipelineConfig,
}

impl Ctx {
    fn workdir(&self) -> &Path {
        &self.cfg.paths.workdir
    }

    fn clips_dir(&self, arg: Option<PathBuf>) -> PathBuf {
        arg.unwrap_or_else(|| self.workdir().join("clips"))
    }

    fn labels(&self, arg: Option<PathBuf>) -> Result<PathBuf> {
        arg.or_else(|| self.cfg.paths.labels.clone())
            .ok_or_else(|| usage("no labels given (--labels or paths.labels)"))
    }
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(w) = cli.workdir {
        cfg.paths.workdir = w;
    }
    if cli.jobs == Some(0) {
        return Err(usage("--jobs must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.unwrap_or(0))
        .build()
        .context("building the worker pool")?;
    let ctx = Ctx { cfg };
    pool.install(|| match cli.command {
        Command::Preprocess(a) => cmd_preprocess(&ctx, a),
        Command::Segment(a) => cmd_segment(&ctx, a),
        Command::Evaluate(a) => cmd_evaluate(&ctx, a),
        Command::Tiles(a) => cmd_tiles(&ctx, a),
        Command::Maturity(a) => cmd_maturity(&ctx, a),
        Command::Synth(s) => cmd_synth(s),
        Command::Serve(a) => cmd_serve(&ctx, a),
        Command::Report(a) => cmd_report(&ctx, a),
        Command::Promote(a) => cmd_promote(&ctx, a),
    })
}

fn print_json(v: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn cmd_preprocess(ctx: &Ctx, a: PreprocessArgs) -> Result<()> {
    let cfg = &ctx.cfg;
    let scene = a
        .scene
        .or_else(|| cfg.paths.scene.clone())
        .ok_or_else(|| usage("no scene given (--scene or paths.scene)"))?;
    let labels = ctx.labels(a.labels)?;
    let cell_km = a.cell_km.unwrap_or(cfg.grid.cell_km);
    let clip_size = a.clip.unwrap_or(cfg.clip_size);
    if !(cell_km.is_finite() && cell_km > 0.0) || clip_size == 0 {
        return Err(usage("--cell-km and --clip must be positive"));
    }
    let out = a.out.unwrap_or_else(|| ctx.workdir().to_path_buf());
    let opts = SceneOptions {
        cell_size_m: cell_km * 1000.0,
        clip_size,
    };
    let summary = preprocess_scene(&scene, &labels, &opts, &out)?;
    println!(
        "{} clips from {} of {} cells, {} labels",
        summary.clips,
        summary.cells_with_data.len(),
        summary.cells.len(),
        summary.labels
    );
    if let Some(path) = a.assignment {
        let text = std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        let assignment: SplitAssignment =
            serde_json::from_slice(&text).with_context(|| format!("parsing {}", path.display()))?;
        let refs: Vec<ClipRef> = list_clips(&out.join("clips"))?.into_iter().map(ClipRef::new).collect();
        let mut manifest = build_split(&refs, &assignment, 1)?;
        for e in &mut manifest.entries {
            e.provenance.get_or_insert(Provenance::Expert);
        }
        let layer = io::read_labels(&labels)?;
        init_store(&out, manifest, layer.labels)?;
    }
    Ok(())
}

/// Create the label store, or accept an existing one holding the same
/// phase-1 dataset.
fn init_store(root: &Path, manifest: SplitManifest, labels: Vec<ParcelLabel>) -> Result<()> {
    let counts = manifest.counts;
    if root.join("journal.jsonl").exists() {
        let existing = Curator::open(root)?;
        let snap = existing.snapshot();
        let p1 = snap.phase(1)?;
        if p1.manifest != manifest || p1.labels != labels {
            return Err(CuratorError::Conflict(format!(
                "{} already holds a different phase-1 dataset",
                root.display()
            ))
            .into());
        }
    } else {
        Curator::init(root, manifest, labels)?;
    }
    println!(
        "phase 1: train {} val {} test {}",
        counts.train, counts.val, counts.test
    );
    Ok(())
}

fn cmd_segment(ctx: &Ctx, a: SegmentArgs) -> Result<()> {
    let clips = ctx.clips_dir(a.clips);
    let out = a.out.unwrap_or_else(|| ctx.workdir().join("segment"));
    let seg = Segmenter::new(ctx.cfg.segmenter.clone())?;
    let ids = list_clips(&clips)?;
    let results: Vec<Result<(Vec<ParcelLabel>, String)>> = ids
        .par_iter()
        .map(|id| {
            let clip = read_clip(&clips, id)?;
            let map = seg.infer(id, &clip.image)?;
            io::write_gray_png(&out.join(format!("{id}.prob.png")), map.width, map.height, &map.values)?;
            io::write_mask_png(&mask_path(&out, id), &proposal_mask(&map, seg.config()))?;
            let t = clip.image.transform();
            Ok((seg.extract_proposals(id, &map, t, a.phase), t.crs_id.clone()))
        })
        .collect();
    let mut layer = LabelLayer {
        crs: String::new(),
        labels: Vec::new(),
    };
    for r in results {
        let (labels, crs) = r?;
        layer.crs = crs;
        layer.labels.extend(labels);
    }
    io::write_labels(&out.join("proposals.geojson"), &layer)?;
    println!("{} clips, {} proposals", ids.len(), layer.labels.len());
    Ok(())
}

fn mask_ids(dir: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_suffix(".mask.png") {
            ids.push(id.to_string());
        }
    }
    ids.sort();
    Ok(ids)
}

fn cmd_evaluate(ctx: &Ctx, a: EvaluateArgs) -> Result<()> {
    let truth = ctx.clips_dir(a.truth);
    let pred = a.pred.unwrap_or_else(|| ctx.workdir().join("segment"));
    let out = a.out.unwrap_or_else(|| ctx.workdir().join("evaluation.json"));
    let thresh = a.object_iou.unwrap_or(ctx.cfg.metrics.object_iou);
    let ids = mask_ids(&truth)?;
    let loaded: Vec<_> = ids
        .par_iter()
        .map(|id| -> Result<_> {
            let t = io::read_mask_png(&mask_path(&truth, id))?;
            let p = io::read_mask_png(&mask_path(&pred, id)).with_context(|| format!("prediction for {id}"))?;
            let vp = truth.join(format!("{id}.valid.png"));
            let v = if vp.exists() {
                Some(io::read_mask_png(&vp)?)
            } else {
                None
            };
            Ok((p, t, v))
        })
        .collect::<Result<_>>()?;
    let items: Vec<EvalItem> = ids
        .iter()
        .zip(&loaded)
        .map(|(id, (p, t, v))| EvalItem {
            clip_id: id,
            pred: p,
            truth: t,
            valid: v.as_ref(),
        })
        .collect();
    let report = evaluate(&items, thresh)?;
    io::write_json(&out, &report)?;
    print!("{}", report.to_table());
    Ok(())
}

/// Labels whose bounding box meets the clip.
fn parcels_on<'a>(layer: &'a LabelLayer, clip: &crate::geo::Raster) -> impl Iterator<Item = &'a ParcelLabel> + 'a {
    let b = clip.transform().bounds(clip.width(), clip.height());
    layer.labels.iter().filter(move |l| l.polygon.bbox().intersects(&b))
}

fn cmd_tiles(ctx: &Ctx, a: TilesArgs) -> Result<()> {
    let cfg = &ctx.cfg;
    let clips = ctx.clips_dir(a.clips);
    let layer = io::read_labels(&ctx.labels(a.labels)?)?;
    let out = a.out.unwrap_or_else(|| ctx.workdir().join("tiles"));
    let seed = a.seed.unwrap_or(cfg.maturity.seed);
    let ratios = match a.ratios {
        Some(r) => [r[0], r[1], r[2]],
        None => cfg.maturity.split_ratios,
    };
    let size = cfg.tile_size;
    let ids = list_clips(&clips)?;
    let samples: Vec<Vec<TileSample>> = ids
        .par_iter()
        .map(|id| -> Result<_> {
            let clip = read_clip(&clips, id)?;
            Ok(parcels_on(&layer, &clip.image)
                .filter(|l| l.maturity != Maturity::Unknown)
                .flat_map(|l| extract_tiles(id, &clip.image, Some(&clip.validity), l, size))
                .collect())
        })
        .collect::<Result<_>>()?;
    let split = balance_split(samples.into_iter().flatten().collect(), ratios, seed)?;
    let m = write_tile_dataset(&out, &split, size, seed, ratios)?;
    print_json(&m.counts);
    Ok(())
}

fn cmd_maturity(ctx: &Ctx, a: MaturityArgs) -> Result<()> {
    let cfg = &ctx.cfg;
    let clips = ctx.clips_dir(a.clips);
    let layer = io::read_labels(&ctx.labels(a.labels)?)?;
    let out = a.out.unwrap_or_else(|| ctx.workdir().join("maturity.geojson"));
    let classifier = TileClassifier::new(cfg.maturity.clone())?;
    let ids = list_clips(&clips)?;
    let votes: Vec<Vec<(String, Maturity)>> = ids
        .par_iter()
        .map(|id| -> Result<_> {
            let clip = read_clip(&clips, id)?;
            let mut v = Vec::new();
            for l in parcels_on(&layer, &clip.image) {
                for t in extract_tiles(id, &clip.image, Some(&clip.validity), l, cfg.tile_size) {
                    v.push((t.parcel_id, classifier.classify(&t.tile_id, &t.image)?.class));
                }
            }
            Ok(v)
        })
        .collect::<Result<_>>()?;
    let mut by_parcel: BTreeMap<String, Vec<Maturity>> = BTreeMap::new();
    for (parcel, class) in votes.into_iter().flatten() {
        by_parcel.entry(parcel).or_default().push(class);
    }
    let verdicts = by_parcel
        .iter()
        .map(|(p, v)| Ok((p.clone(), parcel_maturity(p, v)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    io::write_json(&out, &maturity_report(&layer, &verdicts))?;
    let young = verdicts.values().filter(|v| v.maturity == Maturity::Young).count();
    println!(
        "{} parcels classified ({young} young, {} mature), {} without tiles",
        verdicts.len(),
        verdicts.len() - young,
        layer.labels.len().saturating_sub(verdicts.len())
    );
    Ok(())
}

fn cmd_synth(cmd: SynthCommand) -> Result<()> {
    match cmd {
        SynthCommand::Generate {
            n,
            seed,
            profile,
            val,
            out,
        } => {
            if n == 0 {
                return Err(usage("--n must be at least 1"));
            }
            let (clips, manifest) = generate_batch(n, val, seed, profile)?;
            write_batch(&out, &clips, &manifest)?;
            println!("{n} clips ({} train, {val} val) in {}", n - val, out.display());
        }
        SynthCommand::Scene {
            cols,
            rows,
            seed,
            profile,
            out,
        } => {
            if cols == 0 || rows == 0 {
                return Err(usage("--cols and --rows must be at least 1"));
            }
            let scene = generate_scene(cols, rows, seed, profile)?;
            io::write_geotiff(&out.join("scene.tif"), &scene.raster, None)?;
            io::write_labels(&out.join("labels.geojson"), &scene.labels)?;
            println!(
                "{}×{} px scene with {} labels in {}",
                scene.raster.width(),
                scene.raster.height(),
                scene.labels.labels.len(),
                out.display()
            );
        }
    }
    Ok(())
}

fn cmd_serve(ctx: &Ctx, a: ServeArgs) -> Result<()> {
    let svc = &ctx.cfg.service;
    let bind = a.bind.unwrap_or_else(|| svc.bind.clone());
    let port = a.port.unwrap_or(svc.port);
    let addr: SocketAddr = format!("{bind}:{port}")
        .parse()
        .map_err(|e| usage(format!("bad bind address {bind}:{port}: {e}")))?;
    let curator = Arc::new(Curator::open(ctx.workdir())?);
    let segmenter = Arc::new(Segmenter::new(ctx.cfg.segmenter.clone())?);
    let static_dir = a.static_dir.or_else(|| svc.static_dir.clone());
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting the async runtime")?;
    eprintln!("serving {} on http://{addr}", ctx.workdir().display());
    rt.block_on(http::serve(AppState { curator, segmenter }, addr, static_dir))
        .with_context(|| format!("serving on {addr}"))
}

fn cmd_report(ctx: &Ctx, a: ReportArgs) -> Result<()> {
    let report = match a.manifest {
        Some(path) => {
            let manifest = SplitManifest::load(&path)?;
            if manifest.phase != a.phase {
                return Err(usage(format!(
                    "{} is a phase {} manifest, not phase {}",
                    path.display(),
                    manifest.phase,
                    a.phase
                )));
            }
            dataset_report(&PhaseDataset {
                phase: manifest.phase,
                parent_phase: None,
                manifest,
                labels: Vec::new(),
                created_at: 0,
            })
        }
        None => Curator::open(ctx.workdir())?.report(a.phase)?,
    };
    print_json(&report);
    Ok(())
}

fn cmd_promote(ctx: &Ctx, a: PromoteArgs) -> Result<()> {
    let curator = Curator::open(ctx.workdir())?;
    let d = match &a.synth {
        Some(dir) => curator.promote_with_synth(a.from, a.abandon, dir)?,
        None => curator.promote(a.from, a.abandon, Vec::new())?,
    };
    print_json(&dataset_report(&d));
    Ok(())
}
