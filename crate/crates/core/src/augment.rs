//! Dataset-level augmentation: who donates textures to whom, how paired clips
//! are batched, and the job that writes the re-rendered frames.
//!
//! Every random choice goes through [`SplitMix64`](crate::rng::SplitMix64),
//! so plans and outputs are pure functions of the manifest and the seed.
//!
//! Manifest lines (JSON):
//! `{"id": "...", "class": "...", "frame_dir": "...", "iuv_dir": "...", "excluded": false}`.
//! Directories are resolved against the manifest's own directory; frames are
//! the sorted `*.png` files, IUV maps the sorted `*.iuv` files.
//!
//! Output layout: `<out>/<target>/v<k>/<frame:06>.png`, `k` being the 0-based
//! position of the source in the target's plan entry.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::atlas::TextureAtlasAccumulator;
use crate::iuv::{DenseCorrespondenceMap, Frame};
use crate::render::rerender;
use crate::rng::SplitMix64;

pub const DEFAULT_SOURCES_PER_TARGET: usize = 9;
pub const DEFAULT_PAIRS_PER_BATCH: usize = 2;

/// Classes whose clips hinge on facial detail that textures cannot carry.
pub const FACE_CENTRIC_CLASSES: [&str; 10] = [
    "brush_hair",
    "chew",
    "eat",
    "drink",
    "dribble",
    "kiss",
    "laugh",
    "smile",
    "smoke",
    "talk",
];

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Json { line: usize, msg: String },
    #[error("duplicate video id {0:?}")]
    DuplicateId(String),
    #[error("invalid video id {0:?}")]
    InvalidId(String),
    #[error("video {id:?} has {frames} frames but {iuvs} IUV maps")]
    FrameCountMismatch {
        id: String,
        frames: usize,
        iuvs: usize,
    },
    #[error("video {0:?} has no frames")]
    EmptyVideo(String),
    #[error("need {needed} eligible videos to draw sources, found {available}")]
    NotEnoughSources { needed: usize, available: usize },
    #[error("need at least {needed} pairs to form a batch, found {available}")]
    NotEnoughPairs { needed: usize, available: usize },
    #[error("plan does not match manifest: {0}")]
    InvalidPlan(String),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> AugmentError + '_ {
    move |source| AugmentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoRecord {
    pub id: String,
    pub class_label: String,
    pub frame_paths: Vec<PathBuf>,
    pub iuv_paths: Vec<PathBuf>,
    pub excluded: bool,
}

impl VideoRecord {
    pub fn new(
        id: impl Into<String>,
        class_label: impl Into<String>,
        frame_paths: Vec<PathBuf>,
        iuv_paths: Vec<PathBuf>,
        excluded: bool,
    ) -> Result<Self, AugmentError> {
        let id = id.into();
        validate_id(&id)?;
        if frame_paths.len() != iuv_paths.len() {
            return Err(AugmentError::FrameCountMismatch {
                id,
                frames: frame_paths.len(),
                iuvs: iuv_paths.len(),
            });
        }
        if frame_paths.is_empty() {
            return Err(AugmentError::EmptyVideo(id));
        }
        Ok(Self {
            id,
            class_label: class_label.into(),
            frame_paths,
            iuv_paths,
            excluded,
        })
    }

    /// Pairs the sorted `*.png` files of `frame_dir` with the sorted `*.iuv`
    /// files of `iuv_dir`.
    pub fn from_dirs(
        id: impl Into<String>,
        class_label: impl Into<String>,
        frame_dir: &Path,
        iuv_dir: &Path,
        excluded: bool,
    ) -> Result<Self, AugmentError> {
        let frames = sorted_files(frame_dir, "png")?;
        let iuvs = sorted_files(iuv_dir, "iuv")?;
        Self::new(id, class_label, frames, iuvs, excluded)
    }
}

/// Ids become directory names, so they must be a single path component.
fn validate_id(id: &str) -> Result<(), AugmentError> {
    if id.is_empty() || id == "." || id == ".." || id.contains(['/', '\\']) {
        return Err(AugmentError::InvalidId(id.to_string()));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestLine {
    id: String,
    class: String,
    frame_dir: PathBuf,
    iuv_dir: PathBuf,
    #[serde(default)]
    excluded: bool,
}

fn sorted_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>, AugmentError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == ext) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Parses JSON-lines manifest text, resolving directories against `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<VideoRecord>, AugmentError> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let m: ManifestLine = serde_json::from_str(line).map_err(|e| AugmentError::Json {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if !seen.insert(m.id.clone()) {
            return Err(AugmentError::DuplicateId(m.id));
        }
        records.push(VideoRecord::from_dirs(
            m.id,
            m.class,
            &base.join(&m.frame_dir),
            &base.join(&m.iuv_dir),
            m.excluded,
        )?);
    }
    Ok(records)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<VideoRecord>, AugmentError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")))
}

/// One class name per line; blank lines and `#` comments are ignored.
pub fn parse_exclude_list(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

/// Flags every record whose class is listed. Existing flags are kept.
pub fn apply_exclusions<S: AsRef<str>>(records: &mut [VideoRecord], classes: &[S]) {
    for r in records.iter_mut() {
        if classes.iter().any(|c| c.as_ref() == r.class_label) {
            r.excluded = true;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub target: String,
    pub sources: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct PlanHeader {
    seed: u64,
    k: usize,
}

/// Texture sources for every target, in manifest order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairingPlan {
    pub seed: u64,
    pub k: usize,
    pub entries: Vec<PlanEntry>,
}

impl PairingPlan {
    /// Header line `{"seed":..,"k":..}` followed by one entry per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&PlanHeader {
            seed: self.seed,
            k: self.k,
        })
        .expect("plain struct");
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("plain struct"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, AugmentError> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let json_err = |line: usize| {
            move |e: serde_json::Error| AugmentError::Json {
                line: line + 1,
                msg: e.to_string(),
            }
        };
        let (i, first) = lines.next().ok_or(AugmentError::Json {
            line: 1,
            msg: "missing plan header".into(),
        })?;
        let header: PlanHeader = serde_json::from_str(first).map_err(json_err(i))?;
        let entries = lines
            .map(|(i, l)| serde_json::from_str(l).map_err(json_err(i)))
            .collect::<Result<Vec<PlanEntry>, _>>()?;
        Ok(Self {
            seed: header.seed,
            k: header.k,
            entries,
        })
    }

    pub fn sources_of(&self, target: &str) -> Option<&[String]> {
        self.entries
            .iter()
            .find(|e| e.target == target)
            .map(|e| e.sources.as_slice())
    }
}

/// Draws `k` distinct texture sources for every non-excluded video.
///
/// One generator seeded with `seed` is consumed target by target in manifest
/// order. For each target the candidates are the other non-excluded videos in
/// manifest order, and the first `k` slots of a front-to-back Fisher-Yates pass
/// become its sources. Excluded videos get an empty entry.
pub fn build_pairing(
    manifest: &[VideoRecord],
    seed: u64,
    k: usize,
) -> Result<PairingPlan, AugmentError> {
    let eligible: Vec<&str> = manifest
        .iter()
        .filter(|r| !r.excluded)
        .map(|r| r.id.as_str())
        .collect();
    if !eligible.is_empty() && eligible.len() < k + 1 {
        return Err(AugmentError::NotEnoughSources {
            needed: k + 1,
            available: eligible.len(),
        });
    }
    let mut rng = SplitMix64::new(seed);
    let entries = manifest
        .iter()
        .map(|r| {
            let sources = if r.excluded {
                Vec::new()
            } else {
                let mut cands: Vec<&str> =
                    eligible.iter().copied().filter(|&id| id != r.id).collect();
                for i in 0..k {
                    let j = i + rng.below((cands.len() - i) as u64) as usize;
                    cands.swap(i, j);
                }
                cands[..k].iter().map(|s| s.to_string()).collect()
            };
            PlanEntry {
                target: r.id.clone(),
                sources,
            }
        })
        .collect();
    Ok(PairingPlan { seed, k, entries })
}

/// Checks a plan against its manifest: known ids, distinct non-excluded
/// sources, no self-pairing, empty entries for excluded targets.
pub fn validate_plan(manifest: &[VideoRecord], plan: &PairingPlan) -> Result<(), AugmentError> {
    let by_id: BTreeMap<&str, &VideoRecord> = manifest.iter().map(|r| (r.id.as_str(), r)).collect();
    let bad = |m: String| Err(AugmentError::InvalidPlan(m));
    for e in &plan.entries {
        let Some(t) = by_id.get(e.target.as_str()) else {
            return bad(format!("unknown target {:?}", e.target));
        };
        if t.excluded && !e.sources.is_empty() {
            return bad(format!("excluded target {:?} has sources", e.target));
        }
        let mut seen = HashSet::new();
        for s in &e.sources {
            match by_id.get(s.as_str()) {
                None => return bad(format!("unknown source {s:?}")),
                Some(r) if r.excluded => return bad(format!("excluded source {s:?}")),
                _ => {}
            }
            if *s == e.target {
                return bad(format!("{s:?} is its own source"));
            }
            if !seen.insert(s) {
                return bad(format!("duplicate source {s:?} for {:?}", e.target));
            }
        }
    }
    Ok(())
}

/// Originals plus one clip per (target, source) assignment.
pub fn expanded_count(manifest: &[VideoRecord], plan: &PairingPlan) -> usize {
    manifest.len() + plan.entries.iter().map(|e| e.sources.len()).sum::<usize>()
}

/// An original clip and one of its re-rendered variants.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipPair {
    pub original: String,
    pub variant: String,
    pub source: String,
}

pub fn variant_id(target: &str, index: usize) -> String {
    format!("{target}/v{index}")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub seed: u64,
    pub batches: Vec<Vec<ClipPair>>,
    /// Trailing pairs that did not fill a batch.
    pub dropped: Vec<ClipPair>,
}

impl BatchPlan {
    /// One `{"batch": i, "pairs": [...]}` line per batch, then a
    /// `{"dropped": [...]}` line when pairs were left over.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (i, b) in self.batches.iter().enumerate() {
            out.push_str(&serde_json::json!({ "batch": i, "pairs": b }).to_string());
            out.push('\n');
        }
        if !self.dropped.is_empty() {
            out.push_str(&serde_json::json!({ "dropped": self.dropped }).to_string());
            out.push('\n');
        }
        out
    }

    pub fn clips_per_batch(&self) -> usize {
        self.batches.first().map_or(0, |b| b.len() * 2)
    }
}

/// Shuffles all (original, variant) pairs with `seed` and groups consecutive
/// pairs into batches of `pairs_per_batch`.
pub fn make_batches(
    plan: &PairingPlan,
    seed: u64,
    pairs_per_batch: usize,
) -> Result<BatchPlan, AugmentError> {
    let pairs_per_batch = pairs_per_batch.max(1);
    let mut pairs: Vec<ClipPair> = plan
        .entries
        .iter()
        .flat_map(|e| {
            e.sources.iter().enumerate().map(|(i, s)| ClipPair {
                original: e.target.clone(),
                variant: variant_id(&e.target, i),
                source: s.clone(),
            })
        })
        .collect();
    if pairs.len() < pairs_per_batch {
        return Err(AugmentError::NotEnoughPairs {
            needed: pairs_per_batch,
            available: pairs.len(),
        });
    }
    SplitMix64::new(seed).shuffle(&mut pairs);
    let full = pairs.len() / pairs_per_batch * pairs_per_batch;
    let dropped = pairs.split_off(full);
    let batches = pairs
        .chunks_exact(pairs_per_batch)
        .map(<[ClipPair]>::to_vec)
        .collect();
    Ok(BatchPlan {
        seed,
        batches,
        dropped,
    })
}

#[derive(Debug, Clone)]
pub struct JobConfig {
    pub out_root: PathBuf,
    /// Worker threads; 0 lets rayon decide.
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemReport {
    pub target: String,
    pub variant: String,
    pub source: String,
    pub frames_written: usize,
    pub frames_skipped: usize,
    /// Per-part texel coverage of the source atlas before inpainting; absent
    /// when the item was already complete and no atlas was built.
    pub coverage: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureKind {
    MissingInput,
    WriteFailure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobFailure {
    pub target: String,
    pub variant: String,
    pub source: String,
    pub kind: FailureKind,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JobReport {
    pub items: Vec<ItemReport>,
    pub failures: Vec<JobFailure>,
}

impl JobReport {
    pub fn frames_written(&self) -> usize {
        self.items.iter().map(|i| i.frames_written).sum()
    }
}

pub fn output_path(out_root: &Path, target: &str, variant_index: usize, frame: usize) -> PathBuf {
    out_root
        .join(target)
        .join(format!("v{variant_index}"))
        .join(format!("{frame:06}.png"))
}

#[derive(Debug, Clone)]
struct WorkItem<'a> {
    target: &'a VideoRecord,
    variant_index: usize,
}

/// Outputs are written to a temporary name and renamed, so an existing file
/// with a readable PNG header of the right size is complete.
fn output_complete(out: &Path, frame_path: &Path) -> bool {
    match (
        image::image_dimensions(out),
        image::image_dimensions(frame_path),
    ) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    }
}

fn build_source_atlas(
    source: &VideoRecord,
) -> Result<(crate::atlas::TextureAtlas, Vec<f64>), String> {
    let mut acc = TextureAtlasAccumulator::new();
    for (fp, ip) in source.frame_paths.iter().zip(&source.iuv_paths) {
        let frame = Frame::read_png(fp).map_err(|e| format!("{}: {e}", fp.display()))?;
        let map =
            DenseCorrespondenceMap::read_file(ip).map_err(|e| format!("{}: {e}", ip.display()))?;
        acc.accumulate(&frame, &map)
            .map_err(|e| format!("{}: {e}", fp.display()))?;
    }
    let coverage = acc.coverage().to_vec();
    Ok((acc.finalize().inpaint(), coverage))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("png.tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

/// Re-renders every target with every planned source.
///
/// Work is grouped by source so each source atlas is built once (accumulate all
/// source frames, finalise, inpaint). Groups run in parallel on a pool of
/// `config.jobs` threads. Complete outputs are skipped, so re-running a
/// finished job writes nothing. Per-item problems are collected in the report.
pub fn run_rerender_job(
    manifest: &[VideoRecord],
    plan: &PairingPlan,
    config: &JobConfig,
) -> Result<JobReport, AugmentError> {
    validate_plan(manifest, plan)?;
    let by_id: BTreeMap<&str, &VideoRecord> = manifest.iter().map(|r| (r.id.as_str(), r)).collect();

    let mut groups: BTreeMap<&str, Vec<WorkItem>> = BTreeMap::new();
    for e in &plan.entries {
        for (k, s) in e.sources.iter().enumerate() {
            groups.entry(s.as_str()).or_default().push(WorkItem {
                target: by_id[e.target.as_str()],
                variant_index: k,
            });
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| AugmentError::ThreadPool(e.to_string()))?;
    let out_root = config.out_root.as_path();
    let results: Vec<(Vec<ItemReport>, Vec<JobFailure>)> = pool.install(|| {
        groups
            .par_iter()
            .map(|(src, items)| process_source_group(by_id[src], items, out_root))
            .collect()
    });

    let mut report = JobReport::default();
    for (items, failures) in results {
        report.items.extend(items);
        report.failures.extend(failures);
    }
    report
        .items
        .sort_by(|a, b| (&a.target, &a.variant).cmp(&(&b.target, &b.variant)));
    report
        .failures
        .sort_by(|a, b| (&a.target, &a.variant).cmp(&(&b.target, &b.variant)));
    Ok(report)
}

fn process_source_group(
    source: &VideoRecord,
    items: &[WorkItem],
    out_root: &Path,
) -> (Vec<ItemReport>, Vec<JobFailure>) {
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    let pending = |it: &WorkItem| {
        it.target.frame_paths.iter().enumerate().any(|(i, fp)| {
            !output_complete(
                &output_path(out_root, &it.target.id, it.variant_index, i),
                fp,
            )
        })
    };

    let needs_atlas = items.iter().any(pending);
    let atlas = if needs_atlas {
        Some(build_source_atlas(source))
    } else {
        None
    };

    for it in items {
        let variant = variant_id(&it.target.id, it.variant_index);
        let fail = |kind, message: String| JobFailure {
            target: it.target.id.clone(),
            variant: variant.clone(),
            source: source.id.clone(),
            kind,
            message,
        };
        let mut report = ItemReport {
            target: it.target.id.clone(),
            variant: variant.clone(),
            source: source.id.clone(),
            frames_written: 0,
            frames_skipped: 0,
            coverage: None,
        };
        let built = match &atlas {
            Some(Ok((a, cov))) => {
                report.coverage = Some(cov.clone());
                Some(a)
            }
            Some(Err(msg)) if pending(it) => {
                failures.push(fail(FailureKind::MissingInput, msg.clone()));
                continue;
            }
            _ => None,
        };
        let mut failed = false;
        for (i, (fp, ip)) in it
            .target
            .frame_paths
            .iter()
            .zip(&it.target.iuv_paths)
            .enumerate()
        {
            let out = output_path(out_root, &it.target.id, it.variant_index, i);
            if output_complete(&out, fp) {
                report.frames_skipped += 1;
                continue;
            }
            let atlas = built.expect("atlas is built whenever a frame is pending");
            let rendered = Frame::read_png(fp)
                .map_err(|e| format!("{}: {e}", fp.display()))
                .and_then(|f| {
                    let m = DenseCorrespondenceMap::read_file(ip)
                        .map_err(|e| format!("{}: {e}", ip.display()))?;
                    rerender(&f, &m, atlas).map_err(|e| format!("{}: {e}", fp.display()))
                });
            let bytes = match rendered.and_then(|f| f.encode_png().map_err(|e| e.to_string())) {
                Ok(b) => b,
                Err(msg) => {
                    failures.push(fail(FailureKind::MissingInput, msg));
                    failed = true;
                    break;
                }
            };
            if let Err(e) = write_atomic(&out, &bytes) {
                failures.push(fail(
                    FailureKind::WriteFailure,
                    format!("{}: {e}", out.display()),
                ));
                failed = true;
                break;
            }
            report.frames_written += 1;
        }
        if !failed {
            reports.push(report);
        }
    }
    (reports, failures)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, class: &str) -> VideoRecord {
        VideoRecord::new(
            id,
            class,
            vec![PathBuf::from(format!("{id}/0.png"))],
            vec![PathBuf::from(format!("{id}/0.iuv"))],
            false,
        )
        .unwrap()
    }

    fn manifest(n: usize) -> Vec<VideoRecord> {
        (0..n)
            .map(|i| rec(&format!("vid{i:02}"), &format!("c{}", i % 3)))
            .collect()
    }

    /// Independent re-implementation of the pinned sampler, written from the
    /// documented constants rather than through `SplitMix64`.
    fn reference_plan(ids: &[&str], seed: u64, k: usize) -> Vec<Vec<String>> {
        let mut state = seed;
        let mut next = move || {
            state = state.wrapping_add(0x9E3779B97F4A7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
            z ^ (z >> 31)
        };
        let mut out = Vec::new();
        for t in ids {
            let mut pool: Vec<String> = ids
                .iter()
                .filter(|x| *x != t)
                .map(|s| s.to_string())
                .collect();
            let mut picked = Vec::new();
            for _ in 0..k {
                let n = pool.len() as u64;
                let reject_below = ((u128::from(u64::MAX) + 1) % n as u128) as u64;
                let r = loop {
                    let x = next();
                    if x >= reject_below {
                        break x % n;
                    }
                };
                // take slot r, move the head into its place, drop the head
                let r = r as usize;
                picked.push(pool[r].clone());
                pool[r] = pool[0].clone();
                pool.remove(0);
            }
            out.push(picked);
        }
        out
    }

    #[test]
    fn pairing_is_deterministic() {
        let m = manifest(15);
        assert_eq!(
            build_pairing(&m, 9, 9).unwrap(),
            build_pairing(&m, 9, 9).unwrap()
        );
        assert_ne!(
            build_pairing(&m, 9, 9).unwrap(),
            build_pairing(&m, 10, 9).unwrap()
        );
    }

    #[test]
    fn ten_videos_use_all_others() {
        let m = manifest(10);
        let plan = build_pairing(&m, 3, 9).unwrap();
        for e in &plan.entries {
            let mut got = e.sources.clone();
            got.sort();
            let want: Vec<String> = m
                .iter()
                .map(|r| r.id.clone())
                .filter(|id| *id != e.target)
                .collect();
            assert_eq!(got, want);
        }
        validate_plan(&m, &plan).unwrap();
    }

    #[test]
    fn twelve_videos_match_reference_sampler() {
        let m = manifest(12);
        let plan = build_pairing(&m, 42, 9).unwrap();
        let ids: Vec<&str> = m.iter().map(|r| r.id.as_str()).collect();
        let reference = reference_plan(&ids, 42, 9);
        for (e, want) in plan.entries.iter().zip(&reference) {
            assert_eq!(&e.sources, want, "target {}", e.target);
        }
    }

    #[test]
    fn not_enough_sources() {
        let m = manifest(5);
        assert!(matches!(
            build_pairing(&m, 0, 9),
            Err(AugmentError::NotEnoughSources {
                needed: 10,
                available: 5
            })
        ));
    }

    #[test]
    fn excluded_classes_never_paired() {
        let mut m = manifest(30);
        apply_exclusions(&mut m, &["c1"]);
        let plan = build_pairing(&m, 5, 9).unwrap();
        validate_plan(&m, &plan).unwrap();
        for (r, e) in m.iter().zip(&plan.entries) {
            if r.excluded {
                assert!(e.sources.is_empty());
            }
            for s in &e.sources {
                assert!(!m.iter().find(|x| &x.id == s).unwrap().excluded);
            }
        }
        assert_eq!(expanded_count(&m, &plan), 30 + 20 * 9);
    }

    #[test]
    fn expansion_counts() {
        let m = manifest(10);
        assert_eq!(expanded_count(&m, &build_pairing(&m, 1, 9).unwrap()), 100);
        let mut all = manifest(10);
        for r in &mut all {
            r.excluded = true;
        }
        assert_eq!(
            expanded_count(&all, &build_pairing(&all, 1, 9).unwrap()),
            10
        );
    }

    #[test]
    fn plan_jsonl_roundtrip() {
        let m = manifest(12);
        let plan = build_pairing(&m, 77, 4).unwrap();
        let text = plan.to_jsonl();
        assert!(text.starts_with("{\"seed\":77,\"k\":4}\n"));
        assert_eq!(PairingPlan::from_jsonl(&text).unwrap(), plan);
        assert!(matches!(
            PairingPlan::from_jsonl(""),
            Err(AugmentError::Json { .. })
        ));
    }

    #[test]
    fn validate_plan_catches_violations() {
        let m = manifest(4);
        let mk = |t: &str, s: &[&str]| PairingPlan {
            seed: 0,
            k: s.len(),
            entries: vec![PlanEntry {
                target: t.into(),
                sources: s.iter().map(|x| x.to_string()).collect(),
            }],
        };
        assert!(validate_plan(&m, &mk("vid00", &["vid01", "vid02"])).is_ok());
        assert!(validate_plan(&m, &mk("vid00", &["vid00"])).is_err());
        assert!(validate_plan(&m, &mk("vid00", &["vid01", "vid01"])).is_err());
        assert!(validate_plan(&m, &mk("nope", &["vid01"])).is_err());
        assert!(validate_plan(&m, &mk("vid00", &["nope"])).is_err());
    }

    fn plan_with_pairs(n: usize) -> PairingPlan {
        PairingPlan {
            seed: 0,
            k: 1,
            entries: (0..n)
                .map(|i| PlanEntry {
                    target: format!("t{i}"),
                    sources: vec![format!("s{i}")],
                })
                .collect(),
        }
    }

    #[test]
    fn batch_grouping() {
        let b = make_batches(&plan_with_pairs(2), 1, 2).unwrap();
        assert_eq!(b.batches.len(), 1);
        assert_eq!(b.clips_per_batch(), 4);
        assert!(b.dropped.is_empty());

        let b = make_batches(&plan_with_pairs(5), 1, 2).unwrap();
        assert_eq!(b.batches.len(), 2);
        assert_eq!(b.dropped.len(), 1);
        let mut all: Vec<_> = b.batches.concat();
        all.extend(b.dropped.clone());
        let mut originals: Vec<_> = all.iter().map(|p| p.original.clone()).collect();
        originals.sort();
        assert_eq!(
            originals,
            (0..5).map(|i| format!("t{i}")).collect::<Vec<_>>()
        );
        for p in &all {
            assert_eq!(p.variant, format!("{}/v0", p.original));
        }

        assert!(matches!(
            make_batches(&plan_with_pairs(1), 1, 2),
            Err(AugmentError::NotEnoughPairs {
                needed: 2,
                available: 1
            })
        ));
        assert_eq!(
            make_batches(&plan_with_pairs(9), 4, 2).unwrap(),
            make_batches(&plan_with_pairs(9), 4, 2).unwrap()
        );
    }

    #[test]
    fn batch_jsonl_shape() {
        let b = make_batches(&plan_with_pairs(3), 8, 2).unwrap();
        let lines: Vec<serde_json::Value> = b
            .to_jsonl()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0]["batch"], 0);
        assert_eq!(lines[0]["pairs"].as_array().unwrap().len(), 2);
        assert_eq!(lines[1]["dropped"].as_array().unwrap().len(), 1);
    }

    #[test]
    fn ids_must_be_single_components() {
        assert!(matches!(
            VideoRecord::new("a/b", "c", vec!["x".into()], vec!["y".into()], false),
            Err(AugmentError::InvalidId(_))
        ));
        assert!(matches!(
            VideoRecord::new("a", "c", vec![], vec![], false),
            Err(AugmentError::EmptyVideo(_))
        ));
        assert!(matches!(
            VideoRecord::new("a", "c", vec!["x".into()], vec![], false),
            Err(AugmentError::FrameCountMismatch { .. })
        ));
    }

    #[test]
    fn exclude_list_parsing() {
        assert_eq!(
            parse_exclude_list("kiss\n# c\n\n smile \n"),
            vec!["kiss", "smile"]
        );
    }
}
