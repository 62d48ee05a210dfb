use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::arch::Architecture;
use super::engine::Engine;
use super::model::NetworkModel;
use super::params::Params;
use crate::nn::{cross_entropy, sgd_step, softmax, Tensor3};
use crate::volume::{FlowVolume, NormStats};
use crate::{Error, Result};

/// RNG stream for minibatch sampling.
const SAMPLER_STREAM: u64 = 2;
/// Samples whose gradients are summed sequentially before the ordered
/// reduction; fixed so results do not depend on the thread count.
const GRAD_CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    /// Train every layer from a fresh initialization.
    Full,
    /// Keep every layer but the classifier, which is re-initialized.
    LastLayerOnly,
    /// Start from an existing model and train every layer.
    WarmStart,
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(TrainMode::Full),
            "last-layer" | "last-layer-only" | "last_layer_only" => Ok(TrainMode::LastLayerOnly),
            "warm-start" | "warm_start" => Ok(TrainMode::WarmStart),
            _ => Err(Error::InvalidArgument(format!(
                "unknown training mode {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    pub mode: TrainMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            batch_size: 64,
            iterations: 3000,
            seed: 0,
            mode: TrainMode::Full,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0)
            || self.batch_size == 0
            || self.iterations == 0
        {
            return Err(Error::InvalidArgument(
                "learning rate, batch size and iterations must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One training input in storage precision.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub input: &'a [f32],
    pub label: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: NetworkModel,
    /// Mean minibatch loss of every iteration, before its update.
    pub losses: Vec<f64>,
}

/// Trains on normalized, labeled volumes. `labels` names the classes; with
/// no `init` the standard architecture is used.
pub fn train(
    data: &[FlowVolume],
    labels: &[String],
    cfg: &TrainConfig,
    init: Option<&NetworkModel>,
) -> Result<NetworkModel> {
    Ok(train_with_history(data, labels, cfg, init)?.model)
}

pub fn train_with_history(
    data: &[FlowVolume],
    labels: &[String],
    cfg: &TrainConfig,
    init: Option<&NetworkModel>,
) -> Result<TrainOutcome> {
    let first = data
        .first()
        .ok_or_else(|| Error::Dataset("no training volumes".into()))?;
    let stats = first
        .norm
        .ok_or_else(|| Error::Normalization("training volumes are not normalized".into()))?;
    let mut examples = Vec::with_capacity(data.len());
    for v in data {
        if v.norm != Some(stats) {
            return Err(Error::Normalization(
                "training volumes use different normalization stats".into(),
            ));
        }
        let label = v.label.ok_or_else(|| {
            Error::Dataset(format!("volume at frame {} has no label", v.start_frame))
        })?;
        examples.push(Example {
            input: &v.data,
            label: label as usize,
        });
    }
    let arch = match init {
        Some(m) => m.arch.with_classes(labels.len()),
        None => Architecture::standard(labels.len()),
    };
    train_examples(arch, &examples, stats, labels.to_vec(), cfg, init)
}

/// Minibatch SGD on mean cross-entropy. Minibatches are drawn uniformly
/// with replacement from a generator seeded by `cfg.seed`.
pub fn train_examples(
    arch: Architecture,
    examples: &[Example],
    norm_stats: NormStats,
    labels: Vec<String>,
    cfg: &TrainConfig,
    init: Option<&NetworkModel>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let classes = labels.len();
    if classes == 0 || arch.classes != classes {
        return Err(Error::Dataset(format!(
            "{classes} labels for a {}-class network",
            arch.classes
        )));
    }
    let mut counts = vec![0usize; classes];
    for e in examples {
        if e.label >= classes {
            return Err(Error::Label {
                label: e.label,
                classes,
            });
        }
        if e.input.len() != arch.input.len() {
            return Err(Error::shape(format!(
                "input has {} values, network expects {}",
                e.input.len(),
                arch.input.len()
            )));
        }
        counts[e.label] += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Dataset(format!(
            "class {c} ({}) has no training samples",
            labels[c]
        )));
    }
    let norm_stats = NormStats::new(
        norm_stats.p95_u as f32 as f64,
        norm_stats.p95_v as f32 as f64,
    )?;

    let mut params = match (cfg.mode, init) {
        (TrainMode::Full, None) => Params::xavier(&arch, cfg.seed)?,
        (TrainMode::Full, Some(_)) => {
            return Err(Error::InvalidArgument(
                "full training starts from scratch; use warm-start to reuse a model".into(),
            ))
        }
        (_, None) => {
            return Err(Error::InvalidArgument(
                "transfer modes need an initial model".into(),
            ))
        }
        (mode, Some(m)) => {
            if m.norm_stats != norm_stats {
                return Err(Error::Normalization(
                    "data stats differ from the initial model's".into(),
                ));
            }
            if m.arch.with_classes(classes) != arch {
                return Err(Error::shape("initial model has a different architecture"));
            }
            let mut p = m.params.clone();
            if mode == TrainMode::LastLayerOnly || m.classes() != classes {
                p.reinit_classifier(classes, cfg.seed)?;
            }
            p
        }
    };
    if cfg.mode != TrainMode::LastLayerOnly {
        params.round_to_f32();
    }

    let mut sampler = ChaCha8Rng::seed_from_u64(cfg.seed);
    sampler.set_stream(SAMPLER_STREAM);
    let mut losses = Vec::with_capacity(cfg.iterations);
    if cfg.mode == TrainMode::LastLayerOnly {
        train_classifier(&arch, &mut params, examples, cfg, &mut sampler, &mut losses)?;
        params
            .classifier
            .weights
            .iter_mut()
            .for_each(|w| *w = *w as f32 as f64);
        params
            .classifier
            .biases
            .iter_mut()
            .for_each(|w| *w = *w as f32 as f64);
    } else {
        train_all(&arch, &mut params, examples, cfg, &mut sampler, &mut losses)?;
        params.round_to_f32();
    }
    let model = NetworkModel::new(arch, params, norm_stats, labels, cfg.seed)?;
    Ok(TrainOutcome { model, losses })
}

fn draw_batch(sampler: &mut ChaCha8Rng, n: usize, size: usize) -> Vec<usize> {
    (0..size).map(|_| sampler.gen_range(0..n)).collect()
}

fn check_loss(loss: f64, iteration: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "loss became non-finite at iteration {iteration}"
        )))
    }
}

fn train_all(
    arch: &Architecture,
    params: &mut Params,
    examples: &[Example],
    cfg: &TrainConfig,
    sampler: &mut ChaCha8Rng,
    losses: &mut Vec<f64>,
) -> Result<()> {
    let plan = Engine::plan_for(arch)?;
    let mut spectra = plan.kernel_spectra(&params.c1)?;
    // Buffers persist across iterations; fresh multi-megabyte allocations
    // every step cost more than the arithmetic on some hosts.
    let mut inputs: Vec<Tensor3> = (0..cfg.batch_size)
        .map(|_| Tensor3::zeros(arch.input))
        .collect();
    let mut partials: Vec<Params> = (0..cfg.batch_size.div_ceil(GRAD_CHUNK))
        .map(|_| params.zeros_like())
        .collect();
    let mut grad = params.zeros_like();
    let mut maps: Vec<Vec<Tensor3>> = Vec::new();
    for it in 0..cfg.iterations {
        let batch = draw_batch(sampler, examples.len(), cfg.batch_size);
        for (x, &i) in inputs.iter_mut().zip(&batch) {
            x.data_mut()
                .iter_mut()
                .zip(examples[i].input)
                .for_each(|(d, &v)| *d = v as f64);
        }
        plan.update_kernel_spectra(&mut spectra, &params.c1)?;
        let refs: Vec<&[f64]> = inputs.iter().map(|x| x.data()).collect();
        plan.forward_maps_into(&spectra, &refs, &mut maps)?;
        let labels: Vec<usize> = batch.iter().map(|&i| examples[i].label).collect();
        let p: &Params = params;
        let losses_per_chunk: Vec<f64> = partials
            .par_iter_mut()
            .zip(maps.par_chunks_mut(GRAD_CHUNK))
            .zip(
                inputs
                    .par_chunks(GRAD_CHUNK)
                    .zip(labels.par_chunks(GRAD_CHUNK)),
            )
            .map(|((acc, maps), (xs, labels))| {
                acc.fill(0.0);
                let mut loss = 0.0;
                for ((m, x), &label) in maps.iter_mut().zip(xs).zip(labels) {
                    let trace = p.forward_from_c1(arch, std::mem::take(m))?;
                    loss += p.backward_into(x, &trace, label, acc)?;
                    // Hand the maps back for reuse by the next batch.
                    *m = trace.c1_pre;
                }
                Ok(loss)
            })
            .collect::<Result<_>>()?;
        grad.fill(0.0);
        for part in &partials {
            grad.add_assign(part);
        }
        let mean_loss = losses_per_chunk.iter().sum::<f64>() / cfg.batch_size as f64;
        check_loss(mean_loss, it)?;
        losses.push(mean_loss);
        grad.scale(1.0 / cfg.batch_size as f64);
        for (t, g) in params.tensors_mut().into_iter().zip(grad.tensors()) {
            sgd_step(t, g, cfg.learning_rate)?;
        }
        if it % 100 == 0 {
            log::debug!("iteration {it}: loss {mean_loss:.5}");
        }
    }
    Ok(())
}

/// Classifier-only SGD on features computed once by the frozen layers.
fn train_classifier(
    arch: &Architecture,
    params: &mut Params,
    examples: &[Example],
    cfg: &TrainConfig,
    sampler: &mut ChaCha8Rng,
    losses: &mut Vec<f64>,
) -> Result<()> {
    let inputs: Vec<&[f32]> = examples.iter().map(|e| e.input).collect();
    let features = Engine::new(arch, params)?.features(&inputs)?;
    let cls = &mut params.classifier;
    for it in 0..cfg.iterations {
        let batch = draw_batch(sampler, examples.len(), cfg.batch_size);
        let mut gw = vec![0.0; cls.weights.len()];
        let mut gb = vec![0.0; cls.biases.len()];
        let mut loss = 0.0;
        for &i in &batch {
            let probs = softmax(&cls.forward(&features[i])?);
            let (l, d) = cross_entropy(&probs, examples[i].label)?;
            let g = cls.backward(&features[i], &d)?;
            loss += l;
            gw.iter_mut().zip(&g.weights).for_each(|(a, b)| *a += b);
            gb.iter_mut().zip(&g.biases).for_each(|(a, b)| *a += b);
        }
        let n = cfg.batch_size as f64;
        check_loss(loss / n, it)?;
        losses.push(loss / n);
        gw.iter_mut().chain(gb.iter_mut()).for_each(|g| *g /= n);
        sgd_step(&mut cls.weights, &gw, cfg.learning_rate)?;
        sgd_step(&mut cls.biases, &gb, cfg.learning_rate)?;
    }
    Ok(())
}
