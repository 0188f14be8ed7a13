use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use semstyle::features::{analyze_image, AnalysisParams, FeatureConfig, PoolingConfig};
use semstyle::io::{load_lab_image, save_lab_image};
use semstyle::network::Prediction;
use semstyle::pipeline::{
    check_category_table, default_categories_path, enhance, evaluate, load_model, segmentation_overlay,
    synthesize_manifest, train_style, write_features_csv, write_scene_dataset, EnhanceMode, EnhanceOptions,
    SceneParams, StyleConfig, SyntheticStyleSpec,
};
use semstyle::sampling::{load_examples, DatasetManifest};
use semstyle::segmentation::{segment_image, SegmentationParams};
use semstyle::selection::{select_representative, SelectionParams};
use semstyle::semantics::{CategoryTable, ConfidenceMap, SemanticLabelMap, DEFAULT_DETECTION_THRESHOLD};

#[derive(Parser)]
#[command(name = "semstyle", version, about = "Learn and apply semantics-aware photo adjustment styles")]
struct Cli {
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a style model from a JSON config
    Train { config: PathBuf },
    /// Apply a trained model to one image
    Enhance(EnhanceArgs),
    /// Evaluate a model on a manifest with target images
    Eval {
        model: PathBuf,
        manifest: PathBuf,
        /// Write the full report as JSON
        #[arg(long)]
        report: Option<PathBuf>,
        /// Category table (default: categories.txt next to the manifest, else the model's)
        #[arg(long)]
        categories: Option<PathBuf>,
    },
    /// Pick a representative subset of a manifest's images
    Select(SelectArgs),
    /// Segment an image into superpixels
    Segment {
        image: PathBuf,
        /// Write the boundaries over the image
        #[arg(long)]
        vis: Option<PathBuf>,
        #[command(flatten)]
        seg: SegArgs,
    },
    /// Dump per-superpixel feature vectors
    Features {
        image: PathBuf,
        labels: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Category table; by default the label map's largest label sets the count
        #[arg(long)]
        categories: Option<PathBuf>,
        /// Leave out the contextual block
        #[arg(long)]
        no_context: bool,
        #[command(flatten)]
        seg: SegArgs,
    },
    /// Render targets for a manifest with a synthetic style
    Synth {
        spec: PathBuf,
        manifest: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Write input/target pixel pairs for scatter plots
        #[arg(long)]
        scatter: Option<PathBuf>,
        #[arg(long, default_value_t = 37)]
        scatter_stride: usize,
        #[arg(long)]
        categories: Option<PathBuf>,
    },
    /// Generate synthetic scenes with label maps and a manifest
    Scenes {
        dir: PathBuf,
        #[arg(long, default_value_t = 40)]
        count: usize,
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long, default_value_t = 3)]
        categories: usize,
        #[arg(long, default_value_t = 24)]
        cells: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Style spec used to render targets
        #[arg(long, conflicts_with = "demo_style")]
        style: Option<PathBuf>,
        /// Render targets with the built-in three-category style (written to style.json)
        #[arg(long)]
        demo_style: bool,
    },
}

#[derive(Args)]
struct EnhanceArgs {
    model: PathBuf,
    image: PathBuf,
    labels: PathBuf,
    /// Fill each superpixel with its mean adjusted color
    #[arg(long)]
    watercolor: bool,
    /// Predict at every pixel (diagnostic, slow)
    #[arg(long)]
    per_pixel: bool,
    /// Detection confidence map, as CATEGORY=PATH (name or index)
    #[arg(long = "detection", value_name = "CATEGORY=PATH")]
    detections: Vec<String>,
    /// Category table that the label map uses; must match the model's
    #[arg(long)]
    categories: Option<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SelectArgs {
    manifest: PathBuf,
    /// Number of images to select
    #[arg(short = 'm', long)]
    count: usize,
    /// Codebook size
    #[arg(short = 'k', long, default_value_t = semstyle::selection::DEFAULT_CODEWORDS)]
    codewords: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    categories: Option<PathBuf>,
    /// Output manifest (default: <manifest>_selected.csv)
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SegArgs {
    #[arg(long, default_value_t = SegmentationParams::default().k)]
    k: f64,
    #[arg(long, default_value_t = SegmentationParams::default().sigma)]
    sigma: f64,
    #[arg(long, default_value_t = SegmentationParams::default().min_size)]
    min_size: usize,
}

impl SegArgs {
    fn params(&self) -> SegmentationParams {
        SegmentationParams {
            k: self.k,
            sigma: self.sigma,
            min_size: self.min_size,
            ..Default::default()
        }
    }
}

fn with_suffix(path: &Path, suffix: &str, ext: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}.{ext}"))
}

fn parse_detection(spec: &str, table: &CategoryTable) -> anyhow::Result<(usize, PathBuf)> {
    let (cat, path) = spec
        .split_once('=')
        .ok_or_else(|| anyhow!("detection '{spec}' is not CATEGORY=PATH"))?;
    let idx = table
        .index_of(cat)
        .or_else(|| cat.parse().ok().filter(|&i: &usize| i < table.len()))
        .ok_or_else(|| anyhow!("detection category '{cat}' is not in the model's table"))?;
    Ok((idx, PathBuf::from(path)))
}

fn cmd_train(config: &Path) -> anyhow::Result<()> {
    let cfg = StyleConfig::load(config)?;
    let model = train_style(&cfg)?;
    let m = &model.meta;
    println!(
        "trained on {} superpixels / {} samples; best epoch {} with validation loss {:.6}",
        m.train_superpixels,
        m.train_samples,
        m.best_epoch,
        m.validation_loss.get(m.best_epoch).copied().unwrap_or(f64::NAN)
    );
    println!("model written to {}", cfg.output.display());
    Ok(())
}

fn cmd_enhance(a: &EnhanceArgs) -> anyhow::Result<()> {
    let model = load_model(&a.model)?;
    if let Some(p) = &a.categories {
        check_category_table(&model, &CategoryTable::load(p)?)?;
    }
    let img = load_lab_image(&a.image)?;
    let labels = SemanticLabelMap::load(&a.labels)?;
    let detections = a
        .detections
        .iter()
        .map(|d| {
            let (c, p) = parse_detection(d, &model.categories)?;
            Ok(ConfidenceMap::load(c, &p)?)
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let opts = EnhanceOptions {
        mode: if a.watercolor { EnhanceMode::Watercolor } else { EnhanceMode::Standard },
        per_pixel: a.per_pixel,
    };
    let start = std::time::Instant::now();
    let out = enhance(&model, &img, &labels, &detections, opts)?;
    let secs = start.elapsed().as_secs_f64();
    let path = a.output.clone().unwrap_or_else(|| with_suffix(&a.image, "_enhanced", "png"));
    save_lab_image(&path, &out.output)?;
    let transforms = out
        .predictions
        .iter()
        .filter(|p| matches!(p, Prediction::Transform(_)))
        .count();
    println!(
        "{} superpixels ({transforms} transforms) in {secs:.2}s -> {}",
        out.analysis.segmentation.len(),
        path.display()
    );
    Ok(())
}

fn cmd_eval(model: &Path, manifest: &Path, report: Option<&Path>, categories: Option<&Path>) -> anyhow::Result<()> {
    let model = load_model(model)?;
    let table = match categories {
        Some(p) => CategoryTable::load(p)?,
        None => {
            let p = default_categories_path(manifest);
            if p.exists() {
                CategoryTable::load(&p)?
            } else {
                model.categories.clone()
            }
        }
    };
    check_category_table(&model, &table)?;
    let examples = load_examples(&DatasetManifest::load(manifest, &table)?)?;
    let r = evaluate(&model, &examples, EnhanceOptions::default())?;
    for img in &r.images {
        println!("{:>8.3}  {:>8.3}  {}", img.error, img.input_distance, img.name);
    }
    println!(
        "mean error {:.3} (input vs target {:.3}) over {} images",
        r.mean_error,
        r.mean_input_distance,
        r.images.len()
    );
    if let Some(p) = report {
        let text = serde_json::to_string_pretty(&r)?;
        std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn cmd_select(a: &SelectArgs) -> anyhow::Result<()> {
    let cat_path = a.categories.clone().unwrap_or_else(|| default_categories_path(&a.manifest));
    let table = CategoryTable::load(&cat_path)?;
    let manifest = DatasetManifest::load(&a.manifest, &table)?;
    if a.count == 0 || a.count > manifest.rows.len() {
        return Err(semstyle::Error::Contract(format!(
            "cannot select {} of {} images",
            a.count,
            manifest.rows.len()
        ))
        .into());
    }
    let examples = load_examples(&manifest)?;
    let params = AnalysisParams {
        segmentation: SegmentationParams::default(),
        detection_threshold: DEFAULT_DETECTION_THRESHOLD,
        features: FeatureConfig {
            pooling: PoolingConfig::default(),
            categories: table.len(),
            context: true,
        },
    };
    let descriptors = examples
        .par_iter()
        .map(|ex| analyze_image(&ex.input, &ex.parsing, &ex.detections, &params).map(|a| a.features))
        .collect::<semstyle::Result<Vec<_>>>()?;
    let sel = SelectionParams {
        codewords: a.codewords,
        seed: a.seed,
        ..Default::default()
    };
    let outcome = select_representative(&descriptors, a.count, &sel)?;
    for (i, s) in outcome.steps.iter().enumerate() {
        println!("{:>4}  {:.6}  {}", i + 1, s.entropy, manifest.rows[s.image].input.display());
    }
    let out = a.output.clone().unwrap_or_else(|| with_suffix(&a.manifest, "_selected", "csv"));
    let selected = DatasetManifest {
        style: manifest.style.clone(),
        rows: outcome.steps.iter().map(|s| manifest.rows[s.image].clone()).collect(),
    };
    selected.save(&out, &table)?;
    println!("selection written to {}", out.display());
    Ok(())
}

fn cmd_segment(image: &Path, vis: Option<&Path>, seg: &SegArgs) -> anyhow::Result<()> {
    let img = load_lab_image(image)?;
    let start = std::time::Instant::now();
    let s = segment_image(&img, &seg.params())?;
    println!("{} segments in {:.3}s", s.len(), start.elapsed().as_secs_f64());
    if let Some(p) = vis {
        save_lab_image(p, &segmentation_overlay(&img, &s))?;
    }
    Ok(())
}

fn cmd_features(
    image: &Path,
    labels: &Path,
    csv: Option<&Path>,
    categories: Option<&Path>,
    no_context: bool,
    seg: &SegArgs,
) -> anyhow::Result<()> {
    let img = load_lab_image(image)?;
    let map = SemanticLabelMap::load(labels)?;
    let n = match categories {
        Some(p) => CategoryTable::load(p)?.len(),
        None => map.category_bound(),
    };
    let params = AnalysisParams {
        segmentation: seg.params(),
        detection_threshold: DEFAULT_DETECTION_THRESHOLD,
        features: FeatureConfig {
            pooling: PoolingConfig::default(),
            categories: n,
            context: !no_context,
        },
    };
    let analysis = analyze_image(&img, &map, &[], &params)?;
    println!(
        "{} superpixels, feature dimension {}",
        analysis.features.len(),
        params.features.dim()
    );
    if let Some(p) = csv {
        write_features_csv(p, &analysis)?;
    }
    Ok(())
}

fn cmd_synth(
    spec: &Path,
    manifest: &Path,
    out: &Path,
    scatter: Option<&Path>,
    stride: usize,
    categories: Option<&Path>,
) -> anyhow::Result<()> {
    let spec = SyntheticStyleSpec::load(spec)?;
    let cat_path = categories.map(Path::to_path_buf).unwrap_or_else(|| default_categories_path(manifest));
    let table = CategoryTable::load(&cat_path)?;
    let m = DatasetManifest::load(manifest, &table)?;
    let result = synthesize_manifest(&spec, &m, out, stride)?;
    let out_manifest = out.join("manifest.csv");
    result.manifest.save(&out_manifest, &table)?;
    std::fs::copy(&cat_path, out.join("categories.txt")).with_context(|| format!("copying {}", cat_path.display()))?;
    if let Some(p) = scatter {
        let mut w = csv::Writer::from_path(p).with_context(|| format!("writing {}", p.display()))?;
        for pt in &result.scatter {
            w.serialize(pt)?;
        }
        w.flush()?;
    }
    println!("{} targets, manifest at {}", result.manifest.rows.len(), out_manifest.display());
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Train { config } => cmd_train(config),
        Command::Enhance(a) => cmd_enhance(a),
        Command::Eval {
            model,
            manifest,
            report,
            categories,
        } => cmd_eval(model, manifest, report.as_deref(), categories.as_deref()),
        Command::Select(a) => cmd_select(a),
        Command::Segment { image, vis, seg } => cmd_segment(image, vis.as_deref(), seg),
        Command::Features {
            image,
            labels,
            csv,
            categories,
            no_context,
            seg,
        } => cmd_features(image, labels, csv.as_deref(), categories.as_deref(), *no_context, seg),
        Command::Synth {
            spec,
            manifest,
            output,
            scatter,
            scatter_stride,
            categories,
        } => cmd_synth(spec, manifest, output, scatter.as_deref(), *scatter_stride, categories.as_deref()),
        Command::Scenes {
            dir,
            count,
            size,
            categories,
            cells,
            seed,
            style,
            demo_style,
        } => {
            let params = SceneParams {
                width: *size,
                height: *size,
                categories: *categories,
                cells: *cells,
                seed: *seed,
            };
            let spec = match (style, demo_style) {
                (Some(p), _) => Some(SyntheticStyleSpec::load(p)?),
                (None, true) => {
                    let spec = SyntheticStyleSpec::three_category_demo();
                    if *categories != spec.transforms.len() {
                        bail!("the demo style needs --categories {}", spec.transforms.len());
                    }
                    std::fs::create_dir_all(dir)?;
                    std::fs::write(dir.join("style.json"), serde_json::to_string_pretty(&spec)? + "\n")?;
                    Some(spec)
                }
                (None, false) => None,
            };
            let m = write_scene_dataset(dir, &params, *count, spec.as_ref())?;
            println!("{} scenes written to {}", m.rows.len(), dir.display());
            Ok(())
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<semstyle::Error>() {
        Some(semstyle::Error::Divergence { .. }) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
