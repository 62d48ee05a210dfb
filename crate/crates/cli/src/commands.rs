use std::path::{Path, PathBuf};

use egoflow::analysis::{
    evaluate, infer_groups, kernel_affinity, render_kernel_flowfields, sequences,
    write_kernel_images, RenderOptions,
};
use egoflow::flow::{interpolate_failures, lk_cell_flow, resample_to_15fps, CELLS};
use egoflow::formats::{self, read_frames, read_labels, write_labels, VolumeWriter};
use egoflow::net::train_with_history;
use egoflow::segment::segment_series;
use egoflow::synthetic::{standard_classes, transfer_classes, SyntheticCorpus};
use egoflow::volume::{build_volumes, fit_norm_stats, normalize_volume};
use egoflow::{
    FlowField, FlowVolume, GridGeometry, LkConfig, NetworkModel, NormStats, ScoreSeries,
    TrainConfig, TrainMode,
};
use log::{info, warn};

use crate::config::PipelineConfig;
use crate::error::{CliError, Context};
use crate::{ClassSet, Command, Hyper, TransferMode};

/// Default iteration count of `transfer`.
pub const TRANSFER_ITERATIONS: usize = 800;
/// Volumes normalized and scored at a time.
const SCORE_CHUNK: usize = 256;
/// Frames between extraction progress messages.
const PROGRESS_EVERY: usize = 1000;

type Outcome = Result<String, CliError>;

pub fn dispatch(command: Command, cfg: PipelineConfig) -> Outcome {
    match command {
        Command::ExtractFlow { frames, out, fps } => extract_flow(&frames, &out, fps),
        Command::BuildVolumes {
            flow,
            out,
            label,
            append,
        } => build(&flow, &out, label, append),
        Command::FitNorm { volumes, out } => fit_norm(&volumes, &out),
        Command::Train {
            volumes,
            labels,
            out,
            norm,
            hyper,
        } => train(&volumes, &labels, &out, norm.as_deref(), &hyper, &cfg),
        Command::Classify {
            model,
            volumes,
            out,
            labels,
        } => classify(&model, &volumes, &out, labels.as_deref()),
        Command::Segment {
            model,
            volumes,
            out,
            csv,
            eta,
        } => segment(
            &model,
            &volumes,
            &out,
            csv.as_deref(),
            eta.unwrap_or(cfg.eta),
        ),
        Command::Evaluate {
            model,
            volumes,
            out,
            eta,
        } => evaluate_cmd(&model, &volumes, &out, eta.unwrap_or(cfg.eta)),
        Command::Affinity {
            model,
            volumes,
            out,
            vote_depth,
        } => affinity(&model, &volumes, &out, vote_depth),
        Command::VisualizeKernels {
            model,
            kernel,
            out_dir,
            sparsity,
            ppm,
        } => visualize(&model, kernel, &out_dir, sparsity, ppm),
        Command::Synth {
            classes,
            per_class,
            out,
            labels_out,
            set,
            blocks_per_sequence,
            amplitude,
            noise_ratio,
        } => synth(
            &SynthArgs {
                classes,
                per_class,
                set,
                blocks_per_sequence,
                amplitude,
                noise_ratio,
            },
            &out,
            labels_out,
            cfg.seed,
        ),
        Command::Transfer {
            init,
            volumes,
            labels,
            out,
            mode,
            hyper,
        } => transfer(&init, &volumes, &labels, &out, mode, &hyper, &cfg),
        Command::Config => Ok(cfg
            .to_text()
            .trim_end()
            .replace('\n', " ")
            .replace(" = ", "=")),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::missing(path, e))
}

fn load_model(path: &Path) -> Result<NetworkModel, CliError> {
    NetworkModel::load(path).at(path)
}

fn load_volumes(path: &Path) -> Result<Vec<FlowVolume>, CliError> {
    FlowVolume::load_all(path).at(path)
}

fn load_labels(path: &Path) -> Result<Vec<String>, CliError> {
    let labels = read_labels(path).at(path)?;
    if labels.is_empty() {
        return Err(CliError::format(format!(
            "{}: no class names",
            path.display()
        )));
    }
    Ok(labels)
}

/// Normalizes raw volumes with the model's stats; normalized ones must
/// already use them.
fn prepare(model: &NetworkModel, chunk: &[FlowVolume]) -> Result<Vec<FlowVolume>, CliError> {
    chunk
        .iter()
        .map(|v| match v.norm {
            None => Ok(normalize_volume(v, &model.norm_stats)),
            Some(_) => model
                .check_volume(v)
                .map(|_| v.clone())
                .map_err(CliError::from),
        })
        .collect()
}

fn score_all(model: &NetworkModel, volumes: &[FlowVolume]) -> Result<Vec<Vec<f64>>, CliError> {
    let mut scores = Vec::with_capacity(volumes.len());
    for chunk in volumes.chunks(SCORE_CHUNK) {
        scores.extend(model.scores(&prepare(model, chunk)?)?);
    }
    Ok(scores)
}

fn extract_flow(frames_path: &Path, out: &Path, fps: Option<f64>) -> Outcome {
    let (frames, native) = read_frames(frames_path, fps).at(frames_path)?;
    info!("read {} frames at {native} fps", frames.len());
    let frames = resample_to_15fps(&frames, native)?;
    let first = frames
        .first()
        .ok_or(egoflow::Error::EmptyInput("frame sequence"))?;
    let geom = GridGeometry::for_frame(first.width(), first.height())?;
    let cfg = LkConfig::default();
    let mut fields: Vec<FlowField> = Vec::with_capacity(frames.len().saturating_sub(1));
    for (k, pair) in frames.windows(2).enumerate() {
        let mut field = lk_cell_flow(&pair[0], &pair[1], &geom, &cfg)?;
        field.frame_index = k as u32;
        fields.push(field);
        if (k + 2) % PROGRESS_EVERY == 0 {
            info!("tracked {} of {} frames", k + 2, frames.len());
        }
    }
    let failed: usize = fields.iter().map(FlowField::failure_count).sum();
    let rate = if fields.is_empty() {
        0.0
    } else {
        failed as f64 / (fields.len() * CELLS) as f64
    };
    info!("non-convergence rate {:.4} ({failed} cells)", rate);
    let fields = interpolate_failures(&fields);
    FlowField::save_all(out, &fields).at(out)?;
    Ok(format!(
        "command=extract-flow frames={} fields={} nonconverged_rate={rate:.6} out={}",
        frames.len(),
        fields.len(),
        out.display()
    ))
}

fn build(flows: &[PathBuf], out: &Path, label: Option<u32>, append: bool) -> Outcome {
    let mut volumes = if append && out.exists() {
        load_volumes(out)?
    } else {
        Vec::new()
    };
    let kept = volumes.len();
    for path in flows {
        let fields = FlowField::load_all(path).at(path)?;
        let built = build_volumes(&fields, label).at(path)?;
        info!(
            "{}: {} fields, {} volumes",
            path.display(),
            fields.len(),
            built.len()
        );
        volumes.extend(built);
    }
    FlowVolume::save_all(out, &volumes).at(out)?;
    Ok(format!(
        "command=build-volumes sequences={} volumes={} appended_to={kept} out={}",
        flows.len(),
        volumes.len(),
        out.display()
    ))
}

fn fit_norm(volumes: &Path, out: &Path) -> Outcome {
    let vols = load_volumes(volumes)?;
    if vols.iter().any(|v| v.norm.is_some()) {
        return Err(CliError::format(
            "stats must be fitted on raw, unnormalized volumes",
        ));
    }
    let stats = fit_norm_stats(&vols)?;
    let json = serde_json::to_string_pretty(&stats).map_err(|e| CliError::format(e.to_string()))?;
    write_text(out, &json)?;
    Ok(format!(
        "command=fit-norm volumes={} p95_u={} p95_v={} out={}",
        vols.len(),
        stats.p95_u,
        stats.p95_v,
        out.display()
    ))
}

fn read_stats(path: &Path) -> Result<NormStats, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::missing(path, e))?;
    let raw: NormStats = serde_json::from_str(&text)
        .map_err(|e| CliError::format(format!("{}: {e}", path.display())))?;
    Ok(NormStats::new(raw.p95_u, raw.p95_v)?)
}

fn train_config(
    cfg: &PipelineConfig,
    hyper: &Hyper,
    mode: TrainMode,
    iterations: usize,
) -> TrainConfig {
    let mut tc = cfg.train_config(mode);
    tc.iterations = hyper.iterations.unwrap_or(iterations);
    tc.learning_rate = hyper.learning_rate.unwrap_or(tc.learning_rate);
    tc.batch_size = hyper.batch_size.unwrap_or(tc.batch_size);
    tc
}

/// Normalizes every raw volume in place with `stats`.
fn normalize_all(vols: &mut [FlowVolume], stats: &NormStats) {
    for v in vols.iter_mut().filter(|v| v.norm.is_none()) {
        *v = normalize_volume(v, stats);
    }
}

fn log_losses(losses: &[f64]) {
    let every = (losses.len() / 10).max(1);
    for (i, l) in losses.iter().enumerate() {
        if i % every == 0 || i + 1 == losses.len() {
            info!("iteration {}: loss {l:.5}", i + 1);
        }
    }
}

fn train(
    volumes: &Path,
    labels: &Path,
    out: &Path,
    norm: Option<&Path>,
    hyper: &Hyper,
    cfg: &PipelineConfig,
) -> Outcome {
    let names = load_labels(labels)?;
    let mut vols = load_volumes(volumes)?;
    let stats = match (norm, vols.iter().find_map(|v| v.norm)) {
        (Some(p), _) => read_stats(p)?,
        (None, Some(s)) => s,
        (None, None) => fit_norm_stats(&vols)?,
    };
    normalize_all(&mut vols, &stats);
    let tc = train_config(cfg, hyper, TrainMode::Full, cfg.iterations);
    info!(
        "training on {} volumes, {} classes, {} iterations",
        vols.len(),
        names.len(),
        tc.iterations
    );
    let outcome = train_with_history(&vols, &names, &tc, None)?;
    log_losses(&outcome.losses);
    outcome.model.save(out).at(out)?;
    Ok(format!(
        "command=train volumes={} classes={} iterations={} final_loss={:.6} out={}",
        vols.len(),
        names.len(),
        tc.iterations,
        outcome.losses.last().copied().unwrap_or(f64::NAN),
        out.display()
    ))
}

fn transfer(
    init: &Path,
    volumes: &Path,
    labels: &Path,
    out: &Path,
    mode: TransferMode,
    hyper: &Hyper,
    cfg: &PipelineConfig,
) -> Outcome {
    let base = load_model(init)?;
    let names = load_labels(labels)?;
    let mut vols = load_volumes(volumes)?;
    normalize_all(&mut vols, &base.norm_stats);
    let mode = match mode {
        TransferMode::LastLayer => TrainMode::LastLayerOnly,
        TransferMode::WarmStart => TrainMode::WarmStart,
    };
    let tc = train_config(cfg, hyper, mode, TRANSFER_ITERATIONS);
    info!(
        "{mode:?} transfer from {} classes to {} on {} volumes",
        base.classes(),
        names.len(),
        vols.len()
    );
    let outcome = train_with_history(&vols, &names, &tc, Some(&base))?;
    log_losses(&outcome.losses);
    outcome.model.save(out).at(out)?;
    Ok(format!(
        "command=transfer mode={} volumes={} classes={} iterations={} final_loss={:.6} out={}",
        match mode {
            TrainMode::WarmStart => "warm-start",
            _ => "last-layer",
        },
        vols.len(),
        names.len(),
        tc.iterations,
        outcome.losses.last().copied().unwrap_or(f64::NAN),
        out.display()
    ))
}

fn classify(model_path: &Path, volumes: &Path, out: &Path, labels: Option<&Path>) -> Outcome {
    let model = load_model(model_path)?;
    let names = match labels {
        Some(p) => {
            let names = load_labels(p)?;
            if names.len() != model.classes() {
                return Err(CliError::format(format!(
                    "{}: {} class names, model has {} classes",
                    p.display(),
                    names.len(),
                    model.classes()
                )));
            }
            names
        }
        None => model.labels.clone(),
    };
    let vols = load_volumes(volumes)?;
    let scores = score_all(&model, &vols)?;
    let rows: Vec<serde_json::Value> = vols
        .iter()
        .zip(&scores)
        .map(|(v, s)| {
            let best = egoflow::segment::argmax(s);
            serde_json::json!({
                "start_frame": v.start_frame,
                "label": names[best],
                "scores": s,
            })
        })
        .collect();
    let doc = serde_json::json!({ "labels": names, "volumes": rows });
    let json = serde_json::to_string_pretty(&doc).map_err(|e| CliError::format(e.to_string()))?;
    write_text(out, &json)?;
    Ok(format!(
        "command=classify volumes={} classes={} out={}",
        vols.len(),
        names.len(),
        out.display()
    ))
}

fn segment(
    model_path: &Path,
    volumes: &Path,
    out: &Path,
    csv: Option<&Path>,
    eta: usize,
) -> Outcome {
    let model = load_model(model_path)?;
    let vols = load_volumes(volumes)?;
    if vols.is_empty() {
        return Err(egoflow::Error::EmptyInput("volume file").into());
    }
    let starts: Vec<u32> = vols.iter().map(|v| v.start_frame).collect();
    let runs = sequences(&infer_groups(&vols), &starts);
    if runs.len() != 1 {
        return Err(CliError::format(format!(
            "{}: holds {} sequences; segment one sequence at a time",
            volumes.display(),
            runs.len()
        )));
    }
    let scores = score_all(&model, &vols)?;
    let series = ScoreSeries::new(starts.into_iter().zip(scores).collect())?;
    let timeline = segment_series(&series, eta)?;
    write_text(out, &timeline.to_json(&model.labels)?)?;
    if let Some(p) = csv {
        write_text(p, &timeline.to_csv(&model.labels)?)?;
    }
    Ok(format!(
        "command=segment blocks={} segments={} duration_s={} eta={eta} out={}",
        series.len(),
        timeline.segments.len(),
        timeline.duration(),
        out.display()
    ))
}

fn evaluate_cmd(model_path: &Path, volumes: &Path, out: &Path, eta: usize) -> Outcome {
    let model = load_model(model_path)?;
    let vols = load_volumes(volumes)?;
    let result = evaluate(&model, &vols, None, eta)?;
    write_text(out, &result.report.to_json()?)?;
    let r = &result.report;
    Ok(format!(
        "command=evaluate samples={} eta={eta} accuracy={:.6} macro_recall={:.6} macro_f1={:.6} out={}",
        r.samples,
        r.accuracy,
        r.macro_recall,
        r.macro_f1,
        out.display()
    ))
}

fn affinity(model_path: &Path, volumes: &Path, out: &Path, vote_depth: usize) -> Outcome {
    let model = load_model(model_path)?;
    let vols = load_volumes(volumes)?;
    let matrix = kernel_affinity(&model, &vols, vote_depth)?;
    write_text(out, &matrix.to_csv(&model.labels))?;
    Ok(format!(
        "command=affinity samples={} vote_depth={vote_depth} votes={} out={}",
        vols.len(),
        matrix.total(),
        out.display()
    ))
}

fn visualize(model_path: &Path, kernel: usize, dir: &Path, sparsity: usize, ppm: bool) -> Outcome {
    if sparsity == 0 {
        return Err(CliError::usage("--sparsity must be at least 1"));
    }
    let model = load_model(model_path)?;
    let images = render_kernel_flowfields(&model, kernel, &RenderOptions { sparsity, ppm })?;
    let written = write_kernel_images(dir, kernel, &images).at(dir)?;
    Ok(format!(
        "command=visualize-kernels kernel={kernel} pairs={} files={} out_dir={}",
        images.len(),
        written.len(),
        dir.display()
    ))
}

struct SynthArgs {
    classes: usize,
    per_class: u32,
    set: ClassSet,
    blocks_per_sequence: u32,
    amplitude: f64,
    noise_ratio: f64,
}

fn synth(args: &SynthArgs, out: &Path, labels_out: Option<PathBuf>, seed: u64) -> Outcome {
    if args.per_class == 0 || args.blocks_per_sequence == 0 {
        return Err(CliError::usage(
            "--per-class and --blocks-per-sequence must be positive",
        ));
    }
    let pool = match args.set {
        ClassSet::Standard => standard_classes(args.amplitude, args.noise_ratio, seed),
        ClassSet::Transfer => transfer_classes(args.amplitude, args.noise_ratio, seed),
    };
    if args.classes == 0 || args.classes > pool.len() {
        return Err(CliError::usage(format!(
            "--classes must be between 1 and {} for this set",
            pool.len()
        )));
    }
    let classes: Vec<_> = pool.into_iter().take(args.classes).collect();
    let sequences = args.per_class.div_ceil(args.blocks_per_sequence);
    let corpus = SyntheticCorpus::new(classes, sequences, args.blocks_per_sequence);
    let refs: Vec<_> = corpus
        .refs()
        .into_iter()
        .filter(|r| r.sequence * args.blocks_per_sequence + r.block < args.per_class)
        .collect();
    let mut writer = VolumeWriter::new(formats::create(out).at(out)?, refs.len()).at(out)?;
    for r in &refs {
        writer.push(&corpus.generate(*r)).at(out)?;
    }
    writer.finish().at(out)?;
    let labels_path = labels_out.unwrap_or_else(|| out.with_extension("labels"));
    write_labels(&labels_path, &corpus.labels()).at(&labels_path)?;
    if sequences > 1 && !args.per_class.is_multiple_of(args.blocks_per_sequence) {
        warn!("last sequence of each class is shorter than --blocks-per-sequence");
    }
    Ok(format!(
        "command=synth classes={} volumes={} sequences_per_class={sequences} seed={seed} out={} labels={}",
        args.classes,
        refs.len(),
        out.display(),
        labels_path.display()
    ))
}
