//! `texsel` command line: thin adapters over `texsel-core`.
//!
//! Exit codes: 0 on success, 1 for usage problems (bad flags, bad config
//! file), 2 when a library call rejects the data.

pub mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use texsel_core::atlas::{TextureAtlas, TextureAtlasAccumulator};
use texsel_core::augment::{
    apply_exclusions, build_pairing, expanded_count, load_manifest, make_batches,
    parse_exclude_list, run_rerender_job, JobConfig, PairingPlan, VideoRecord,
    FACE_CENTRIC_CLASSES,
};
use texsel_core::iuv::{mask_from_iuv, part_mask, DenseCorrespondenceMap, Frame, NUM_PARTS};
use texsel_core::metrics::{self, ErrorSet, GpsParams, MeshGeodesic, DEFAULT_AUC_THRESHOLDS};
use texsel_core::probe::{parse_labels, train_probe, FeatureMatrix, TrainConfig};
use texsel_core::relevance::{information_gain, mutual_information, CategoricalJoint};
use texsel_core::render::{
    assemble_six_channel, atlas_feature_stack, render_iuv_rgb, replace_human_regions, rerender,
};

pub use config::{ConfigError, Overrides, Settings};

#[derive(Debug, Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Parser)]
#[command(
    name = "texsel",
    version,
    about = "Texture atlas, augmentation and evaluation tools"
)]
#[command(arg_required_else_help = true)]
pub struct Cli {
    /// key=value settings file; flags take precedence
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Print the resolved settings to stderr
    #[arg(long, short, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct AtlasSource {
    /// Accumulated atlas (ATL1)
    #[arg(long)]
    pub atlas: Option<PathBuf>,
    /// Grid PNG, used together with --occ
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Occupancy bitmap (OCC1)
    #[arg(long)]
    pub occ: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Exclusions {
    /// File listing excluded class names, one per line
    #[arg(long, value_name = "FILE")]
    pub exclude_file: Option<PathBuf>,
    /// Exclude the built-in face-centric classes
    #[arg(long)]
    pub exclude_face_classes: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Accumulate one video's frames into an ATL1 atlas
    AtlasExtract {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        iuv: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fill unoccupied texels and write the grid PNG and occupancy bitmap
    AtlasInpaint {
        #[command(flatten)]
        source: AtlasSource,
        #[arg(long)]
        out_grid: PathBuf,
        #[arg(long)]
        out_occ: PathBuf,
    },
    /// Write the 1200x800 grid PNG of an atlas
    AtlasShow {
        #[command(flatten)]
        source: AtlasSource,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        inpaint: bool,
        /// Write the grayscale luminance stack instead of colors
        #[arg(long)]
        luminance: bool,
    },
    /// Re-render a frame's human pixels from an atlas
    Rerender {
        #[arg(long)]
        frame: PathBuf,
        #[arg(long)]
        iuv: PathBuf,
        #[command(flatten)]
        source: AtlasSource,
        #[arg(long)]
        inpaint: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render an IUV map as RGB, optionally over a frame's background
    IuvRender {
        #[arg(long)]
        iuv: PathBuf,
        #[arg(long)]
        frame: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the RGB and IUV halves of a six-channel frame
    SixChannel {
        #[arg(long)]
        frame: PathBuf,
        #[arg(long)]
        iuv: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value = "frame")]
        stem: String,
    },
    /// Draw texture sources for every video in a manifest
    AugmentPlan {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write paired batches to this file
        #[arg(long)]
        batches: Option<PathBuf>,
        #[command(flatten)]
        exclusions: Exclusions,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        batch_pairs: Option<usize>,
    },
    /// Render every planned variant
    AugmentRun {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        exclusions: Exclusions,
        #[arg(long)]
        jobs: Option<usize>,
        /// Write the JSON job report here
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// AUC and mean GPS of geodesic point errors
    EvalGps {
        /// One error per line
        #[arg(long)]
        errors: Option<PathBuf>,
        /// Mesh graph, used with --points
        #[arg(long)]
        mesh: Option<PathBuf>,
        /// "predicted truth" vertex pairs, one per line
        #[arg(long)]
        points: Option<PathBuf>,
        /// AUC threshold; repeatable
        #[arg(long = "a")]
        thresholds: Vec<f64>,
        #[arg(long)]
        kappa: Option<f64>,
    },
    /// Foreground IoU, AP^r and PCP between predicted and true IUV maps
    EvalIou {
        /// Repeatable; paired with --gt in order
        #[arg(long, required = true)]
        pred: Vec<PathBuf>,
        #[arg(long, required = true)]
        gt: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        pcp_threshold: f64,
    },
    /// Entropy, information gain and mutual information of a count table
    Relevance {
        #[arg(long)]
        joint: PathBuf,
    },
    /// Train a softmax probe on a feature matrix
    Probe {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Defaults to the largest label + 1
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        holdout: Option<f64>,
    },
}

impl Command {
    fn overrides(&self) -> Overrides {
        match *self {
            Command::AugmentPlan {
                k,
                seed,
                batch_pairs,
                ..
            } => Overrides {
                k,
                seed,
                batch_pairs,
                ..Default::default()
            },
            Command::AugmentRun { jobs, .. } => Overrides {
                jobs,
                ..Default::default()
            },
            Command::EvalGps { kappa, .. } => Overrides {
                kappa,
                ..Default::default()
            },
            Command::Probe {
                steps,
                batch_size,
                lr,
                seed,
                holdout,
                ..
            } => Overrides {
                steps,
                batch_size,
                lr,
                seed,
                holdout,
                ..Default::default()
            },
            _ => Overrides::default(),
        }
    }
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    0
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    1
                }
            };
        }
    };
    match execute(&cli, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() || e.downcast_ref::<ConfigError>().is_some()
            {
                1
            } else {
                2
            }
        }
    }
}

pub fn resolve_settings(cli: &Cli) -> anyhow::Result<Settings> {
    let text = match &cli.config {
        Some(p) => Some(
            fs::read_to_string(p)
                .map_err(|e| usage(format!("cannot read config {}: {e}", p.display())))?,
        ),
        None => None,
    };
    Ok(Settings::resolve(
        text.as_deref(),
        &cli.command.overrides(),
    )?)
}

fn execute(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> anyhow::Result<()> {
    let settings = resolve_settings(cli)?;
    if cli.verbose {
        writeln!(err, "{settings}")?;
    }
    if let Command::AugmentRun { .. } = cli.command {
        return dispatch(&cli.command, &settings, out);
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build()?;
    let mut buf = Vec::new();
    let result = pool.install(|| dispatch(&cli.command, &settings, &mut buf));
    out.write_all(&buf)?;
    result
}

fn read_text(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_atlas(src: &AtlasSource) -> anyhow::Result<TextureAtlas> {
    match (&src.atlas, &src.grid, &src.occ) {
        (Some(a), None, None) => Ok(TextureAtlasAccumulator::read_file(a)
            .with_context(|| format!("reading {}", a.display()))?
            .finalize()),
        (None, Some(g), Some(o)) => Ok(TextureAtlas::read_files(g, o)
            .with_context(|| format!("reading {} and {}", g.display(), o.display()))?),
        _ => Err(usage("give either --atlas, or both --grid and --occ")),
    }
}

fn load_manifest_with(path: &Path, ex: &Exclusions) -> anyhow::Result<Vec<VideoRecord>> {
    let mut manifest = load_manifest(path)?;
    if ex.exclude_face_classes {
        apply_exclusions(&mut manifest, &FACE_CENTRIC_CLASSES);
    }
    if let Some(f) = &ex.exclude_file {
        apply_exclusions(&mut manifest, &parse_exclude_list(&read_text(f)?));
    }
    Ok(manifest)
}

/// Fixed-point text for results; avoids printing `-0.000000`.
fn fixed(x: f64, digits: usize) -> String {
    let s = format!("{x:.digits$}");
    match s.strip_prefix('-') {
        Some(rest) if rest.bytes().all(|b| b == b'0' || b == b'.') => rest.to_string(),
        _ => s,
    }
}

fn dispatch(cmd: &Command, s: &Settings, out: &mut dyn Write) -> anyhow::Result<()> {
    match cmd {
        Command::AtlasExtract {
            frames,
            iuv,
            out: dst,
        } => {
            let video = VideoRecord::from_dirs("video", "", frames, iuv, false)?;
            let mut acc = TextureAtlasAccumulator::new();
            for (fp, ip) in video.frame_paths.iter().zip(&video.iuv_paths) {
                let frame =
                    Frame::read_png(fp).with_context(|| format!("reading {}", fp.display()))?;
                let map = DenseCorrespondenceMap::read_file(ip)
                    .with_context(|| format!("reading {}", ip.display()))?;
                acc.accumulate(&frame, &map)
                    .with_context(|| format!("accumulating {}", fp.display()))?;
            }
            acc.write_file(dst)?;
            for (k, c) in acc.coverage().iter().enumerate() {
                writeln!(out, "part {} coverage {}", k + 1, fixed(*c, 6))?;
            }
        }
        Command::AtlasInpaint {
            source,
            out_grid,
            out_occ,
        } => {
            load_atlas(source)?
                .inpaint()
                .write_files(out_grid, out_occ)?;
        }
        Command::AtlasShow {
            source,
            out: dst,
            inpaint,
            luminance,
        } => {
            let mut atlas = load_atlas(source)?;
            if *inpaint {
                atlas = atlas.inpaint();
            }
            if *luminance {
                fs::write(dst, atlas_feature_stack(&atlas).to_grid_png()?)?;
            } else {
                atlas.to_grid_image().write_png(dst)?;
            }
        }
        Command::Rerender {
            frame,
            iuv,
            source,
            inpaint,
            out: dst,
        } => {
            let mut atlas = load_atlas(source)?;
            if *inpaint {
                atlas = atlas.inpaint();
            }
            let f = Frame::read_png(frame)?;
            let m = DenseCorrespondenceMap::read_file(iuv)?;
            rerender(&f, &m, &atlas)?.write_png(dst)?;
        }
        Command::IuvRender {
            iuv,
            frame,
            out: dst,
        } => {
            let m = DenseCorrespondenceMap::read_file(iuv)?;
            let img = match frame {
                Some(f) => replace_human_regions(&Frame::read_png(f)?, &m)?,
                None => render_iuv_rgb(&m),
            };
            img.write_png(dst)?;
        }
        Command::SixChannel {
            frame,
            iuv,
            out_dir,
            stem,
        } => {
            let f = Frame::read_png(frame)?;
            let m = DenseCorrespondenceMap::read_file(iuv)?;
            fs::create_dir_all(out_dir)?;
            let record = assemble_six_channel(&f, &m)?.write_pngs(out_dir, stem)?;
            writeln!(out, "{}", serde_json::to_string(&record)?)?;
        }
        Command::AugmentPlan {
            manifest,
            out: dst,
            batches,
            exclusions,
            ..
        } => {
            let manifest = load_manifest_with(manifest, exclusions)?;
            let plan = build_pairing(&manifest, s.seed, s.k)?;
            fs::write(dst, plan.to_jsonl())?;
            if let Some(b) = batches {
                fs::write(b, make_batches(&plan, s.seed, s.batch_pairs)?.to_jsonl())?;
            }
            let eligible = manifest.iter().filter(|r| !r.excluded).count();
            writeln!(out, "videos {}", manifest.len())?;
            writeln!(out, "eligible {eligible}")?;
            writeln!(out, "clips {}", expanded_count(&manifest, &plan))?;
        }
        Command::AugmentRun {
            manifest,
            plan,
            out: dst,
            exclusions,
            report,
            ..
        } => {
            let manifest = load_manifest_with(manifest, exclusions)?;
            let plan = PairingPlan::from_jsonl(&read_text(plan)?)?;
            let config = JobConfig {
                out_root: dst.clone(),
                jobs: s.jobs,
            };
            let r = run_rerender_job(&manifest, &plan, &config)?;
            if let Some(p) = report {
                fs::write(p, serde_json::to_string_pretty(&r)?)?;
            }
            let skipped: usize = r.items.iter().map(|i| i.frames_skipped).sum();
            writeln!(out, "items {}", r.items.len())?;
            writeln!(out, "frames_written {}", r.frames_written())?;
            writeln!(out, "frames_skipped {skipped}")?;
            writeln!(out, "failures {}", r.failures.len())?;
            if let Some(f) = r.failures.first() {
                return Err(anyhow!(
                    "{} item(s) failed; first: {} ({:?}): {}",
                    r.failures.len(),
                    f.variant,
                    f.kind,
                    f.message
                ));
            }
        }
        Command::EvalGps {
            errors,
            mesh,
            points,
            thresholds,
            ..
        } => {
            let set = match (errors, mesh, points) {
                (Some(e), None, None) => ErrorSet::parse(&read_text(e)?)?,
                (None, Some(m), Some(p)) => geodesic_errors(&read_text(m)?, &read_text(p)?)?,
                _ => return Err(usage("give either --errors, or both --mesh and --points")),
            };
            let params = GpsParams::new(s.kappa)?;
            let thresholds = if thresholds.is_empty() {
                DEFAULT_AUC_THRESHOLDS.to_vec()
            } else {
                thresholds.clone()
            };
            for a in thresholds {
                writeln!(out, "AUC_{a:.2} {}", fixed(metrics::auc(&set, a)?, 4))?;
            }
            writeln!(out, "GPS {}", fixed(set.mean_gps(params), 4))?;
        }
        Command::EvalIou {
            pred,
            gt,
            pcp_threshold,
        } => {
            if pred.len() != gt.len() {
                return Err(usage(format!(
                    "{} --pred but {} --gt",
                    pred.len(),
                    gt.len()
                )));
            }
            let mut instance = Vec::new();
            let mut parts = Vec::new();
            for (p, g) in pred.iter().zip(gt) {
                let p = DenseCorrespondenceMap::read_file(p)?;
                let g = DenseCorrespondenceMap::read_file(g)?;
                instance.push(metrics::iou(&mask_from_iuv(&p), &mask_from_iuv(&g))?);
                for part in 1..=NUM_PARTS as u8 {
                    let (pm, gm) = (part_mask(&p, part), part_mask(&g, part));
                    if pm.popcount() + gm.popcount() > 0 {
                        parts.push(metrics::iou(&pm, &gm)?);
                    }
                }
            }
            for (i, v) in instance.iter().enumerate() {
                writeln!(out, "IOU_{i} {}", fixed(*v, 4))?;
            }
            writeln!(out, "AP_R {}", fixed(metrics::ap_r(&instance)?, 4))?;
            if !parts.is_empty() {
                writeln!(
                    out,
                    "PCP_{pcp_threshold:.2} {}",
                    fixed(metrics::pcp(&parts, *pcp_threshold)?, 4)
                )?;
            }
        }
        Command::Relevance { joint } => {
            let j = CategoricalJoint::from_csv(&read_text(joint)?)?;
            writeln!(out, "H_Y {} bits", fixed(j.label_entropy(), 6))?;
            writeln!(out, "IG {} bits", fixed(information_gain(&j), 6))?;
            writeln!(out, "MI {} bits", fixed(mutual_information(&j), 6))?;
        }
        Command::Probe {
            features,
            labels,
            classes,
            trace,
            ..
        } => {
            let x = FeatureMatrix::read_file(features)?.row_vectors();
            let y = parse_labels(&read_text(labels)?)?;
            let k = classes.unwrap_or_else(|| y.iter().max().map_or(0, |m| m + 1));
            let cfg = TrainConfig {
                steps: s.steps,
                batch_size: s.batch_size,
                learning_rate: s.lr,
                seed: s.seed,
                holdout_fraction: s.holdout,
                ..TrainConfig::default()
            };
            let outcome = train_probe(&x, &y, k, &cfg)?;
            if let Some(t) = trace {
                fs::write(t, outcome.trace_csv())?;
            }
            writeln!(out, "accuracy {}", fixed(outcome.eval_accuracy, 6))?;
            writeln!(out, "loss {}", fixed(outcome.eval_loss, 6))?;
            writeln!(out, "MI {} bits", fixed(outcome.eval_mi_bits, 6))?;
        }
    }
    Ok(())
}

/// Geodesic distances between "predicted truth" vertex pairs.
pub fn geodesic_errors(mesh: &str, points: &str) -> anyhow::Result<ErrorSet> {
    let mesh = MeshGeodesic::parse(mesh)?;
    let mut errors = Vec::new();
    for (i, raw) in points.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let ids: Vec<usize> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| anyhow!("points line {}: {e}", i + 1))?;
        let [p, g] = ids[..] else {
            return Err(anyhow!("points line {}: expected two vertex ids", i + 1));
        };
        errors.push(mesh.geodesic_distance(p, g)?);
    }
    Ok(ErrorSet::new(errors)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(
            std::iter::once("texsel").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn no_arguments_is_usage() {
        let (code, _, err) = run_args(&[]);
        assert_eq!(code, 1);
        assert!(err.contains("Usage"));
    }

    #[test]
    fn unknown_subcommand_and_flag() {
        assert_eq!(run_args(&["bogus"]).0, 1);
        assert_eq!(run_args(&["relevance", "--joint", "x", "--bogus"]).0, 1);
        assert_eq!(run_args(&["eval-gps", "--k", "3"]).0, 1);
    }

    #[test]
    fn help_is_success() {
        let (code, out, _) = run_args(&["--help"]);
        assert_eq!(code, 0);
        assert!(out.contains("atlas-extract"));
    }

    #[test]
    fn missing_input_is_data_error() {
        let (code, _, err) = run_args(&["relevance", "--joint", "/nonexistent/j.csv"]);
        assert_eq!(code, 2);
        assert!(err.starts_with("error:"));
    }

    #[test]
    fn conflicting_sources_are_usage() {
        assert_eq!(run_args(&["eval-gps"]).0, 1);
        assert_eq!(run_args(&["atlas-show", "--out", "x.png"]).0, 1);
    }

    #[test]
    fn fixed_never_prints_negative_zero() {
        assert_eq!(fixed(-1e-12, 6), "0.000000");
        assert_eq!(fixed(-0.0, 4), "0.0000");
        assert_eq!(fixed(-0.25, 2), "-0.25");
        assert_eq!(fixed(5.0 / 9.0, 4), "0.5556");
    }

    #[test]
    fn geodesic_points() {
        let set = geodesic_errors("v 3\ne 0 1 0.1\ne 1 2 0.3\n", "0 0\n0 2\n# x\n2 1\n").unwrap();
        let v = set.values();
        assert_eq!(v.len(), 3);
        assert_eq!(v[0], 0.0);
        assert!((v[1] - 0.4).abs() < 1e-12 && (v[2] - 0.3).abs() < 1e-12);
        assert!(geodesic_errors("v 2\ne 0 1 1\n", "0\n").is_err());
    }
}
