//! Command-line front end. Exit codes: 0 success, 1 verification failure,
//! 2 usage or input error, 3 infeasible scene spec.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::{coco_thresholds, load_dataset, ApMethod, Evaluator};
use crate::fusion::{assign_classes, score_instances, write_instance_set};
use crate::gradcheck::{run_suite, SuiteOptions};
use crate::mep::{extract_masks_with_image, Connectivity, MepConfig};
use crate::raster::{read_float_raster, read_semantic_png, write_atomic};
use crate::synth::{generate_dataset, write_dataset, SceneSpec, ShapeKind};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "instaseg",
    version,
    about = "Instance masks from boundary maps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extract instance masks from boundary and semantic maps.
    Extract(ExtractArgs),
    /// Evaluate predicted instances against ground truth.
    Eval(EvalArgs),
    /// Generate synthetic scenes.
    Synth(SynthArgs),
    /// Run the loss gradient and invariant checks.
    Losscheck(LosscheckArgs),
}

#[derive(Args, Debug)]
struct ExtractArgs {
    /// Boundary raster (.bfr) or a directory of them.
    #[arg(long)]
    boundary: PathBuf,
    /// Semantic PNG, or a directory holding `<id>.png` per boundary file.
    #[arg(long)]
    semantic: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    threshold: Option<f32>,
    #[arg(long)]
    min_area: Option<usize>,
    #[arg(long)]
    closing_radius: Option<usize>,
    /// Marker connectivity, 4 or 8.
    #[arg(long)]
    connectivity: Option<u32>,
    #[arg(long)]
    no_refine: bool,
    /// Grayscale intensity raster (.bfr) or directory, used only with a
    /// positive --image-weight.
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long)]
    image_weight: Option<f32>,
    /// File of `key = value` lines; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Comma-separated IoU thresholds.
    #[arg(long, default_value = "0.25,0.5,0.7,0.75")]
    thresholds: String,
    /// Also report AP averaged over IoU 0.50:0.05:0.95.
    #[arg(long)]
    coco_ap: bool,
    /// 11-point interpolated AP instead of all points.
    #[arg(long)]
    eleven_point: bool,
    /// Metrics CSV path; defaults to `<pred>/metrics.csv`.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    n: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 416)]
    height: usize,
    #[arg(long, default_value_t = 416)]
    width: usize,
    #[arg(long, default_value_t = 3)]
    min_instances: usize,
    #[arg(long, default_value_t = 6)]
    max_instances: usize,
    /// Comma-separated subset of rect, ellipse, blob.
    #[arg(long, default_value = "rect,ellipse,blob")]
    shapes: String,
    #[arg(long, default_value_t = 3)]
    classes: u16,
    #[arg(long, default_value_t = 4)]
    min_separation: usize,
    #[arg(long, default_value_t = 20)]
    min_size: usize,
    #[arg(long, default_value_t = 60)]
    max_size: usize,
    #[arg(long, default_value_t = 1.0)]
    blur: f64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args, Debug)]
struct LosscheckArgs {
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Negate every analytic gradient; the run must then fail.
    #[arg(long)]
    self_test_negate_grad: bool,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Extract(a) => with_jobs(a.jobs, || cmd_extract(&a)),
        Command::Eval(a) => with_jobs(a.jobs, || cmd_eval(&a)),
        Command::Synth(a) => with_jobs(a.jobs, || cmd_synth(&a)),
        Command::Losscheck(a) => Ok(cmd_losscheck(&a)),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Infeasible(_) => EXIT_INFEASIBLE,
                _ => EXIT_INPUT,
            }
        }
    }
}

fn with_jobs(jobs: Option<usize>, f: impl FnOnce() -> Result<i32> + Send) -> Result<i32> {
    match jobs {
        None => f(),
        Some(0) => Err(Error::Validation("--jobs must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Validation(format!("thread pool: {e}")))?
            .install(f),
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Validation(format!(
            "{key}: expected a boolean, got {value:?}"
        ))),
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Validation(format!("{key}: cannot parse {value:?}")))
}

fn parse_connectivity(n: u32) -> Result<Connectivity> {
    Connectivity::from_number(n)
        .ok_or_else(|| Error::Validation(format!("connectivity must be 4 or 8, got {n}")))
}

/// Applies `key = value` lines to `config`. Blank lines and `#` comments are
/// skipped; unknown keys are errors.
pub fn apply_config_text(config: &mut MepConfig, text: &str) -> Result<()> {
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Validation(format!("config line {}: expected key = value", n + 1))
        })?;
        let (key, value) = (key.trim().replace('-', "_"), value.trim());
        match key.as_str() {
            "threshold" | "boundary_threshold" => {
                config.boundary_threshold = parse_value(&key, value)?
            }
            "min_area" | "min_component_area" => {
                config.min_component_area = parse_value(&key, value)?
            }
            "closing_radius" => config.closing_radius = parse_value(&key, value)?,
            "connectivity" => config.connectivity = parse_connectivity(parse_value(&key, value)?)?,
            "refine" => config.refine = parse_bool(&key, value)?,
            "image_weight" => config.image_weight = parse_value(&key, value)?,
            _ => {
                return Err(Error::Validation(format!(
                    "config line {}: unknown key {key:?}",
                    n + 1
                )))
            }
        }
    }
    Ok(())
}

fn extract_config(a: &ExtractArgs) -> Result<MepConfig> {
    let mut config = MepConfig::default();
    if let Some(path) = &a.config {
        apply_config_text(&mut config, &fs::read_to_string(path)?)?;
    }
    if let Some(t) = a.threshold {
        config.boundary_threshold = t;
    }
    if let Some(m) = a.min_area {
        config.min_component_area = m;
    }
    if let Some(r) = a.closing_radius {
        config.closing_radius = r;
    }
    if let Some(c) = a.connectivity {
        config.connectivity = parse_connectivity(c)?;
    }
    if a.no_refine {
        config.refine = false;
    }
    if let Some(w) = a.image_weight {
        config.image_weight = w;
    }
    config.validate()?;
    Ok(config)
}

struct ExtractJob {
    id: String,
    boundary: PathBuf,
    semantic: PathBuf,
    image: Option<PathBuf>,
}

fn stem(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .ok_or_else(|| Error::Validation(format!("{}: no file name", path.display())))
}

fn require_file(path: PathBuf) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::Validation(format!(
            "{}: no such file",
            path.display()
        )))
    }
}

fn extract_jobs(a: &ExtractArgs) -> Result<Vec<ExtractJob>> {
    if !a.boundary.is_dir() {
        let boundary = require_file(a.boundary.clone())?;
        return Ok(vec![ExtractJob {
            id: stem(&boundary)?,
            semantic: require_file(a.semantic.clone())?,
            image: a.image.clone().map(require_file).transpose()?,
            boundary,
        }]);
    }
    if !a.semantic.is_dir() {
        return Err(Error::Validation(
            "--semantic must be a directory when --boundary is".into(),
        ));
    }
    let mut jobs = Vec::new();
    for entry in fs::read_dir(&a.boundary)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("bfr") {
            continue;
        }
        let id = stem(&path)?;
        jobs.push(ExtractJob {
            semantic: require_file(a.semantic.join(format!("{id}.png")))?,
            image: a
                .image
                .as_ref()
                .map(|d| require_file(d.join(format!("{id}.bfr"))))
                .transpose()?,
            boundary: path,
            id,
        });
    }
    jobs.sort_by(|x, y| x.id.cmp(&y.id));
    Ok(jobs)
}

fn cmd_extract(a: &ExtractArgs) -> Result<i32> {
    let config = extract_config(a)?;
    let jobs = extract_jobs(a)?;
    fs::create_dir_all(&a.out)?;
    let counts = jobs
        .par_iter()
        .map(|job| -> Result<usize> {
            let boundary = read_float_raster(&job.boundary)?;
            let semantic = read_semantic_png(&job.semantic)?;
            let image = job.image.as_ref().map(read_float_raster).transpose()?;
            let labels = extract_masks_with_image(&boundary, &semantic, image.as_ref(), &config)?;
            let set = score_instances(assign_classes(&job.id, &labels, &semantic)?, &boundary)?;
            write_instance_set(&set, &a.out)?;
            Ok(set.len())
        })
        .collect::<Vec<_>>();
    let mut stdout = std::io::stdout().lock();
    for (job, count) in jobs.iter().zip(counts) {
        let count = count.map_err(|e| Error::Validation(format!("{}: {e}", job.id)))?;
        writeln!(stdout, "{}: {count} instances", job.id)?;
    }
    Ok(EXIT_OK)
}

pub fn parse_thresholds(text: &str) -> Result<Vec<f64>> {
    let list = text
        .split(',')
        .map(|t| {
            let v: f64 = parse_value("threshold", t.trim())?;
            if (0.0..=1.0).contains(&v) {
                Ok(v)
            } else {
                Err(Error::Validation(format!(
                    "IoU threshold {v} is outside [0, 1]"
                )))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(list)
}

fn cmd_eval(a: &EvalArgs) -> Result<i32> {
    let thresholds = parse_thresholds(&a.thresholds)?;
    let method = if a.eleven_point {
        ApMethod::ElevenPoint
    } else {
        ApMethod::AllPoints
    };
    let data = load_dataset(&a.pred, &a.gt)?;
    if !data.unmatched_predictions.is_empty() {
        return Err(Error::Validation(format!(
            "predictions without ground truth: {}",
            data.unmatched_predictions.join(", ")
        )));
    }
    if !data.missing_predictions.is_empty() {
        log::warn!(
            "{} ground-truth images have no predictions and count as empty: {}",
            data.missing_predictions.len(),
            data.missing_predictions.join(", ")
        );
    }
    let evaluator = Evaluator::new(&data.images);
    let table = evaluator.map_at(&thresholds, method);
    let mut text = table.to_text();
    let mut csv = table.to_csv()?;
    if a.coco_ap {
        let coco = evaluator.map_at(&coco_thresholds(), method);
        let n = coco.thresholds.len() as f64;
        let mean = coco.map.iter().sum::<f64>() / n;
        text.push_str(&format!("AP[0.50:0.95] {mean:.4}\n"));
        let per_class: Vec<f64> = (0..coco.classes.len())
            .map(|k| coco.per_class.iter().map(|row| row[k]).sum::<f64>() / n)
            .collect();
        let mut row = vec!["0.50:0.95".to_string(), format!("{mean:.6}")];
        row.extend(per_class.iter().map(|v| format!("{v:.6}")));
        csv.extend_from_slice(format!("{}\n", row.join(",")).as_bytes());
    }
    print!("{text}");
    let path = a.csv.clone().unwrap_or_else(|| a.pred.join("metrics.csv"));
    write_atomic(&path, &csv)?;
    Ok(EXIT_OK)
}

fn cmd_synth(a: &SynthArgs) -> Result<i32> {
    let shapes = a
        .shapes
        .split(',')
        .map(str::parse::<ShapeKind>)
        .collect::<Result<Vec<_>>>()?;
    let spec = SceneSpec {
        height: a.height,
        width: a.width,
        min_instances: a.min_instances,
        max_instances: a.max_instances,
        shapes,
        num_classes: a.classes,
        min_separation: a.min_separation,
        min_size: a.min_size,
        max_size: a.max_size,
        contour_blur: a.blur,
        noise: a.noise,
    };
    spec.validate()?;
    let scenes = generate_dataset(a.seed, a.n, &spec)?;
    write_dataset(&a.out, &scenes)?;
    println!("wrote {} scenes to {}", scenes.len(), a.out.display());
    Ok(EXIT_OK)
}

fn cmd_losscheck(a: &LosscheckArgs) -> i32 {
    if a.trials == 0 {
        log::warn!("--trials 0: no randomized checks run");
    }
    let reports = run_suite(SuiteOptions {
        trials: a.trials,
        seed: a.seed,
        negate_gradients: a.self_test_negate_grad,
    });
    println!(
        "{:<36} {:>6} {:>12} {:>10} {:>8} status",
        "check", "trials", "worst", "seed", "tol"
    );
    for r in &reports {
        println!(
            "{:<36} {:>6} {:>12.3e} {:>10} {:>8.0e} {}",
            r.name,
            r.trials,
            r.worst_error,
            r.worst_seed,
            r.tolerance,
            if r.passed { "ok" } else { "FAIL" }
        );
    }
    let mut code = EXIT_OK;
    for r in reports.iter().filter(|r| !r.passed) {
        eprintln!(
            "{} failed: seed {} error {:e}",
            r.name, r.worst_seed, r.worst_error
        );
        code = EXIT_VERIFY;
    }
    code
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_precedence() {
        let mut c = MepConfig::default();
        apply_config_text(&mut c, "# c\nthreshold = 0.3\nmin-area=4\nrefine = false\n").unwrap();
        assert_eq!(c.boundary_threshold, 0.3);
        assert_eq!(c.min_component_area, 4);
        assert!(!c.refine);
        assert!(apply_config_text(&mut c, "bogus = 1").is_err());
        assert!(apply_config_text(&mut c, "threshold").is_err());
        assert!(apply_config_text(&mut c, "connectivity = 6").is_err());
    }

    #[test]
    fn thresholds_parse() {
        assert_eq!(
            parse_thresholds("0.25,0.5,0.7,0.75").unwrap(),
            vec![0.25, 0.5, 0.7, 0.75]
        );
        assert!(parse_thresholds("0.5,1.5").is_err());
        assert!(parse_thresholds("x").is_err());
    }
}
