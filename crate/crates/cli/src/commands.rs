use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use recon_eval::earlystop::{
    average_series, early_stop_report, interpolate_series, MetricSeries,
};
use recon_eval::metrics2d::{
    load_png, lpips, lpips_distance, psnr, pseudo_features, read_fstk, ssim,
};
use recon_eval::metrics3d::{classify, default_thresholds, fidelity, pr_curve, INDOOR_THRESHOLD, OUTDOOR_THRESHOLD};
use recon_eval::pointcloud::{crop, load_ply, save_ply, PlyError};
use recon_eval::registration::{apply_transform, icp_register, IcpStages, Landmarks};
use recon_eval::report::{format_float, pearson, EvalReport, COLUMNS};
use recon_eval::scalecal::{
    estimate_scale, fit_configured_sphere, measure_height, CalibrationConfig, SphereFit, SphereMethod,
};
use recon_eval::{Aabb, PointCloud, SimilarityTransform};

use crate::config::{existing, PipelineConfig};
use crate::{
    CalibrateArgs, CliError, EarlyStopArgs, Eval2dArgs, Eval3dArgs, RegisterArgs, ReportArgs, RunArgs, Scene,
};

pub struct Context {
    pub config: PipelineConfig,
    pub out_dir: Option<PathBuf>,
    pub seed: u64,
}

impl Context {
    fn out(&self, name: &str) -> Option<PathBuf> {
        self.out_dir.as_ref().map(|d| d.join(name))
    }
}

fn load_cloud(path: &Path) -> Result<PointCloud, CliError> {
    load_ply(path).map_err(|e| match e {
        PlyError::Io(io) => CliError::io(path, io),
        other => CliError::Format(format!("{}: {other}", path.display())),
    })
}

fn save_cloud(cloud: &PointCloud, path: &Path) -> Result<(), CliError> {
    save_ply(cloud, path, true).map_err(|e| match e {
        PlyError::Io(io) => CliError::io(path, io),
        other => CliError::Format(other.to_string()),
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    serde_json::to_writer_pretty(&mut out, value).expect("serializable");
    writeln!(out).map_err(|e| CliError::io(Path::new("<stdout>"), e))
}

fn load_truth(path: &Path, dedup: bool) -> Result<PointCloud, CliError> {
    let cloud = load_cloud(path)?;
    if !dedup {
        return Ok(cloud);
    }
    let out = cloud.dedup_exact();
    info!("dropped {} duplicate ground-truth points", cloud.len() - out.len());
    Ok(out)
}

fn checked_box(b: &Aabb) -> Result<Aabb, CliError> {
    Aabb::new(b.min, b.max).map_err(|e| CliError::Config(format!("crop box: {e}")))
}

pub fn register(ctx: &Context, a: RegisterArgs) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let recon = existing(a.recon, &cfg.paths.recon, "reconstruction cloud")?;
    let truth = existing(a.truth, &cfg.paths.truth, "ground-truth cloud")?;
    let lm_path = existing(a.landmarks, &cfg.paths.landmarks, "landmarks file")?;

    let mut icp = cfg.registration.icp;
    if let Some(v) = a.voxel {
        icp.voxel = v;
        icp.max_correspondence_dist = 3.0 * v;
    }
    if let Some(d) = a.max_correspondence {
        icp.max_correspondence_dist = d;
    }
    if let Some(n) = a.max_iterations {
        icp.max_iterations = n;
    }
    match a.stages.as_deref() {
        Some("3") => icp.stages = IcpStages::Three,
        Some(_) => icp.stages = IcpStages::Single,
        None => {}
    }
    icp.validate().map_err(|e| CliError::Config(e.to_string()))?;

    let landmarks = Landmarks::load(&lm_path).map_err(|e| match e.kind() {
        io::ErrorKind::InvalidData => CliError::Format(format!("{}: {e}", lm_path.display())),
        _ => CliError::io(&lm_path, e),
    })?;
    let fit = landmarks.estimate(cfg.registration.with_scale && !a.rigid)?;
    info!("landmark fit: scale {:.6}, rms {:.3e}", fit.transform.scale(), fit.rms_residual);

    let source = load_cloud(&recon)?;
    let target = load_truth(&truth, a.dedup_truth || cfg.dedup_truth)?;
    let moved = apply_transform(&source, &fit.transform);
    let (src, tgt) = match &cfg.paths.crop_box {
        Some(b) => {
            let b = checked_box(b)?;
            (crop(&moved, &b)?, crop(&target, &b)?)
        }
        None => (moved, target),
    };
    let result = icp_register(&src, &tgt, &SimilarityTransform::identity(), &icp)?;
    let total = result.transform.compose(&fit.transform);
    info!(
        "icp: fitness {:.4}, inlier rmse {:.3e}, {} iterations",
        result.fitness, result.inlier_rmse, result.iterations_run
    );

    let summary = json!({
        "transform": total.to_json(),
        "landmark_rms": fit.rms_residual,
        "icp": result,
    });
    if let Some(dir) = &ctx.out_dir {
        write_json(&dir.join("transform.json"), &total.to_json())?;
        write_json(
            &dir.join("icp_result.json"),
            &json!({ "landmark_rms": fit.rms_residual, "icp": result }),
        )?;
        save_cloud(&apply_transform(&source, &total), &dir.join("aligned.ply"))?;
    }
    print_json(&summary)
}

/// Loads `report.json` from the output directory if present, applies the run
/// labels, and lets `update` fill in the metric fields.
fn merge_report(
    ctx: &Context,
    run: &RunArgs,
    update: impl FnOnce(&mut EvalReport),
) -> Result<EvalReport, CliError> {
    let mut report = match ctx.out("report.json") {
        Some(path) if path.exists() => read_json(&path)?,
        _ => EvalReport::default(),
    };
    let info = &ctx.config.run;
    if let Some(s) = run.scenario.clone().or_else(|| info.scenario.clone()) {
        report.scenario = s;
    }
    if let Some(m) = run.model.clone().or_else(|| info.model.clone()) {
        report.model = m;
    }
    if let Some(i) = run.iterations.or(info.iterations) {
        report.iterations = i;
    }
    if let Some(t) = run.wall_time.or(info.wall_time_s) {
        report.wall_time_s = Some(t);
    }
    update(&mut report);
    if let Some(path) = ctx.out("report.json") {
        write_json(&path, &report)?;
    }
    Ok(report)
}

pub fn eval3d(ctx: &Context, a: Eval3dArgs) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let recon_path = existing(a.recon, &cfg.paths.recon, "reconstruction cloud")?;
    let truth_path = existing(a.truth, &cfg.paths.truth, "ground-truth cloud")?;
    let d = match (a.threshold, a.scene) {
        (Some(d), _) => d,
        (None, Some(Scene::Indoor)) => INDOOR_THRESHOLD,
        (None, Some(Scene::Outdoor)) => OUTDOOR_THRESHOLD,
        (None, None) => cfg.metrics.threshold,
    };
    if !(d > 0.0) {
        return Err(CliError::Config(format!("threshold must be positive, got {d}")));
    }
    let thresholds = cfg.metrics.pr_thresholds.clone().unwrap_or_else(default_thresholds);

    let mut recon = load_cloud(&recon_path)?;
    let mut truth = load_truth(&truth_path, a.dedup_truth || cfg.dedup_truth)?;
    if let Some(b) = &cfg.paths.crop_box {
        let b = checked_box(b)?;
        recon = crop(&recon, &b)?;
        truth = crop(&truth, &b)?;
    }

    let scores = fidelity(&recon, &truth, d)?;
    let curve = pr_curve(&recon, &truth, &thresholds)?;
    let by_precision = classify(&recon, &truth, d)?;
    let by_recall = classify(&truth, &recon, d)?;
    info!(
        "d = {d}: precision {:.2}, recall {:.2}, F {:.2}",
        scores.precision, scores.recall, scores.f_score
    );

    let report = merge_report(ctx, &a.run, |r| {
        r.precision = Some(scores.precision);
        r.recall = Some(scores.recall);
        r.f_score = Some(scores.f_score);
    })?;
    if let Some(dir) = &ctx.out_dir {
        let path = dir.join("pr_curve.csv");
        let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        curve
            .write_csv(BufWriter::new(file))
            .map_err(|e| CliError::io(&path, e))?;
        save_cloud(&by_precision.cloud, &dir.join("precision.ply"))?;
        save_cloud(&by_recall.cloud, &dir.join("recall.ply"))?;
    }
    print_json(&json!({
        "fidelity": scores,
        "precision_classes": by_precision.counts,
        "recall_classes": by_recall.counts,
        "report": report,
    }))
}

fn png_names(dir: &Path) -> Result<BTreeSet<String>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut names = BTreeSet::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        let is_png = path
            .extension()
            .is_some_and(|x| x.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                names.insert(name.to_string());
            }
        }
    }
    Ok(names)
}

struct ImageRow {
    name: String,
    psnr: f64,
    ssim: f64,
    lpips: Option<f64>,
}

enum LpipsSource {
    None,
    Files(PathBuf, PathBuf),
    Pseudo(usize),
}

fn load_fstk(path: &Path) -> Result<recon_eval::metrics2d::FeatureStack, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    read_fstk(BufReader::new(file)).map_err(|e| match CliError::from(e) {
        CliError::Format(m) => CliError::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn csv_error(e: csv::Error) -> CliError {
    CliError::Format(e.to_string())
}

pub fn eval2d(ctx: &Context, a: Eval2dArgs) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let rendered = existing(a.rendered, &cfg.paths.rendered_dir, "rendered image directory")?;
    let reference = existing(a.reference, &cfg.paths.reference_dir, "reference image directory")?;
    cfg.metrics.ssim.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let features = (
        a.rendered_features.or_else(|| cfg.paths.rendered_features.clone()),
        a.reference_features.or_else(|| cfg.paths.reference_features.clone()),
    );
    let source = match features {
        (Some(r), Some(g)) => {
            for dir in [&r, &g] {
                if !dir.is_dir() {
                    return Err(CliError::Config(format!("feature directory {} does not exist", dir.display())));
                }
            }
            LpipsSource::Files(r, g)
        }
        (None, None) => match a.pseudo_lpips.or(cfg.metrics.pseudo_lpips_levels) {
            Some(levels) => LpipsSource::Pseudo(levels),
            None => LpipsSource::None,
        },
        _ => return Err(CliError::Config("both feature directories are required".into())),
    };

    let names_r = png_names(&rendered)?;
    let names_g = png_names(&reference)?;
    if let Some(odd) = names_r.symmetric_difference(&names_g).next() {
        return Err(CliError::UnpairedImage(odd.clone()));
    }
    if names_r.is_empty() {
        return Err(CliError::Config(format!("no PNG images in {}", rendered.display())));
    }

    let names: Vec<&String> = names_r.iter().collect();
    let rows = names
        .par_iter()
        .map(|name| -> Result<ImageRow, CliError> {
            let load = |dir: &Path| {
                let path = dir.join(name.as_str());
                load_png(&path).map_err(|e| match CliError::from(e) {
                    CliError::Format(m) => CliError::Format(format!("{}: {m}", path.display())),
                    CliError::Io { source, .. } => CliError::io(&path, source),
                    other => other,
                })
            };
            let (img, gt) = (load(&rendered)?, load(&reference)?);
            let lp = match &source {
                LpipsSource::None => None,
                LpipsSource::Files(fr, fg) => {
                    let stem = Path::new(name.as_str()).file_stem().unwrap_or_default();
                    let file = Path::new(stem).with_extension("fstk");
                    Some(lpips(&load_fstk(&fr.join(&file))?, &load_fstk(&fg.join(&file))?)?)
                }
                LpipsSource::Pseudo(levels) => Some(lpips_distance(
                    &pseudo_features(&img, *levels)?,
                    &pseudo_features(&gt, *levels)?,
                )?),
            };
            Ok(ImageRow {
                name: name.to_string(),
                psnr: psnr(&img, &gt, cfg.metrics.max_intensity)?,
                ssim: ssim(&img, &gt, &cfg.metrics.ssim)?,
                lpips: lp,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let n = rows.len() as f64;
    let mean_psnr = rows.iter().map(|r| r.psnr).sum::<f64>() / n;
    let mean_ssim = rows.iter().map(|r| r.ssim).sum::<f64>() / n;
    let mean_lpips = rows
        .iter()
        .map(|r| r.lpips)
        .sum::<Option<f64>>()
        .map(|s| s / n);

    let write_table = |w: &mut dyn Write| -> Result<(), CliError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["image", "psnr", "ssim", "lpips"]).map_err(csv_error)?;
        let fmt_opt = |v: Option<f64>| v.map(format_float).unwrap_or_default();
        for r in &rows {
            out.write_record([r.name.clone(), format_float(r.psnr), format_float(r.ssim), fmt_opt(r.lpips)])
                .map_err(csv_error)?;
        }
        out.write_record([
            "mean".to_string(),
            format_float(mean_psnr),
            format_float(mean_ssim),
            fmt_opt(mean_lpips),
        ])
        .map_err(csv_error)?;
        out.flush().map_err(|e| CliError::io(Path::new("<csv>"), e))
    };
    if let Some(path) = ctx.out("images.csv") {
        let mut file = BufWriter::new(File::create(&path).map_err(|e| CliError::io(&path, e))?);
        write_table(&mut file)?;
    }
    merge_report(ctx, &a.run, |r| {
        r.psnr = Some(mean_psnr);
        r.ssim = Some(mean_ssim);
        r.lpips = mean_lpips;
    })?;
    write_table(&mut io::stdout().lock())
}

/// Reads `iteration,value` or `iteration,image_id,value`; the latter is
/// averaged per iteration.
fn read_series(path: &Path) -> Result<MetricSeries, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let columns = reader.headers().map_err(csv_error)?.len();
    let bad = |line: usize, what: &str| CliError::Format(format!("{}: line {line}: {what}", path.display()));
    let mut pairs = Vec::new();
    let mut groups: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(csv_error)?;
        let line = i + 2;
        let iteration: u64 = record[0].parse().map_err(|_| bad(line, "iteration is not an integer"))?;
        let value: f64 = record[columns - 1]
            .parse()
            .map_err(|_| bad(line, "value is not a number"))?;
        match columns {
            2 => pairs.push((iteration, value)),
            3 => groups.entry(iteration).or_default().push(value),
            _ => return Err(bad(1, "expected 2 or 3 columns")),
        }
    }
    if columns == 3 {
        Ok(average_series(&groups.into_iter().collect::<Vec<_>>())?)
    } else if columns == 2 {
        Ok(MetricSeries::from_pairs(pairs)?)
    } else {
        Err(bad(1, "expected 2 or 3 columns"))
    }
}

pub fn earlystop(ctx: &Context, a: EarlyStopArgs) -> Result<(), CliError> {
    let section = &ctx.config.earlystop;
    let path = existing(a.series, &ctx.config.paths.series, "metric series CSV")?;
    let mut plateau = section.plateau;
    plateau.theta = a.theta.unwrap_or(plateau.theta);
    plateau.consistency_len = a.consistency.unwrap_or(plateau.consistency_len);
    plateau.grid_step = a.grid_step.unwrap_or(plateau.grid_step);
    plateau.grid_end = a.grid_end.unwrap_or(plateau.grid_end);
    plateau.validate().map_err(|e| CliError::Config(e.to_string()))?;

    let raw = read_series(&path)?;
    let series = if section.interpolate && !a.raw {
        interpolate_series(&raw, plateau.grid_step, plateau.grid_end)?
    } else {
        raw
    };
    let full = a.full_iters.or(section.full_iters).unwrap_or(plateau.grid_end);
    let report = early_stop_report(&series, &plateau, full)?;
    info!("{:?} at iteration {}", report.status, report.stop_iteration);
    if let Some(out) = ctx.out("earlystop.json") {
        write_json(&out, &report)?;
    }
    print_json(&report)
}

#[derive(Serialize)]
struct SphereRecord {
    #[serde(flatten)]
    fit: SphereFit,
    known_radius: f64,
    factor: f64,
}

pub fn calibrate(ctx: &Context, a: CalibrateArgs) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let recon = existing(a.recon, &cfg.paths.recon, "reconstruction cloud")?;
    let cal: CalibrationConfig = match (a.spheres.or_else(|| cfg.paths.calibration.clone()), &cfg.calibration) {
        (Some(path), _) => {
            if !path.exists() {
                return Err(CliError::Config(format!("calibration file {} does not exist", path.display())));
            }
            let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        (None, Some(inline)) => inline.clone(),
        (None, None) => return Err(CliError::Config("missing calibration spheres".into())),
    };
    if cal.spheres.is_empty() {
        return Err(CliError::Config("calibration lists no spheres".into()));
    }
    if !(cal.max_spread >= 1.0) {
        return Err(CliError::Config(format!("max_spread must be >= 1, got {}", cal.max_spread)));
    }
    let method = if a.ransac { SphereMethod::Ransac } else { cal.method };

    let cloud = load_cloud(&recon)?;
    let fits = cal
        .spheres
        .iter()
        .map(|s| fit_configured_sphere(&cloud, s, method, ctx.seed))
        .collect::<Result<Vec<_>, _>>()?;
    let known: Vec<f64> = cal.spheres.iter().map(|s| s.known_radius).collect();
    let estimate = estimate_scale(&fits, &known)?;
    let status = if estimate.spread > cal.max_spread {
        warn!("sphere factor spread {:.4} exceeds {}", estimate.spread, cal.max_spread);
        "warning"
    } else {
        "ok"
    };

    let scaled = apply_transform(&cloud, &SimilarityTransform::from_scale(estimate.factor)?);
    let plant = match &cal.height_region {
        Some(b) => crop(&scaled, &checked_box(b)?)?,
        None => scaled.clone(),
    };
    let height = measure_height(&plant, cal.up_axis, cal.base_percentile)?;

    let spheres: Vec<SphereRecord> = fits
        .iter()
        .zip(&estimate.per_sphere_factors)
        .zip(&known)
        .map(|((fit, factor), known_radius)| SphereRecord {
            fit: *fit,
            known_radius: *known_radius,
            factor: *factor,
        })
        .collect();
    let summary = json!({
        "factor": estimate.factor,
        "per_sphere_factors": estimate.per_sphere_factors,
        "spread": estimate.spread,
        "max_spread": cal.max_spread,
        "status": status,
        "spheres": spheres,
        "height": height,
    });
    if let Some(dir) = &ctx.out_dir {
        write_json(&dir.join("calibration.json"), &summary)?;
        save_cloud(&scaled, &dir.join("scaled.ply"))?;
    }
    print_json(&summary)
}

pub fn report(ctx: &Context, a: ReportArgs) -> Result<(), CliError> {
    let runs = if a.runs.is_empty() { ctx.config.paths.runs.clone() } else { a.runs };
    let mut reports = Vec::with_capacity(runs.len());
    for dir in &runs {
        let path = dir.join("report.json");
        if !path.exists() {
            return Err(CliError::Config(format!("{} not found", path.display())));
        }
        reports.push(read_json::<EvalReport>(&path)?);
    }

    let write_table = |w: &mut dyn Write| -> Result<(), CliError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(COLUMNS).map_err(csv_error)?;
        for r in &reports {
            out.write_record(r.cells()).map_err(csv_error)?;
        }
        out.flush().map_err(|e| CliError::io(Path::new("<csv>"), e))
    };
    if let Some(path) = ctx.out("report.csv") {
        let mut file = BufWriter::new(File::create(&path).map_err(|e| CliError::io(&path, e))?);
        write_table(&mut file)?;
    }
    write_table(&mut io::stdout().lock())?;

    if reports.len() < 2 {
        return Err(CliError::TooFewRuns(reports.len()));
    }
    let correlate = |metric: fn(&EvalReport) -> Option<f64>| {
        let (xs, ys): (Vec<f64>, Vec<f64>) = reports
            .iter()
            .filter_map(|r| Some((metric(r)?, r.f_score?)))
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .unzip();
        pearson(&xs, &ys)
    };
    let correlations = json!({
        "runs": reports.len(),
        "pearson_vs_f1": {
            "psnr": correlate(|r| r.psnr),
            "ssim": correlate(|r| r.ssim),
            "lpips": correlate(|r| r.lpips),
        },
    });
    info!("correlations: {correlations}");
    if let Some(path) = ctx.out("correlations.json") {
        write_json(&path, &correlations)?;
    }
    Ok(())
}
