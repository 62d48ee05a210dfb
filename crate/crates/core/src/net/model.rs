use super::arch::Architecture;
use super::engine::Engine;
use super::params::Params;
use crate::nn::Tensor3;
use crate::volume::{FlowVolume, NormStats};
use crate::{Error, Result};

/// A trained (or initialized) network with everything inference needs.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    pub arch: Architecture,
    pub params: Params,
    pub norm_stats: NormStats,
    pub labels: Vec<String>,
    pub seed: u64,
}

/// Weight counts of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParameterCount {
    /// Weights of C1, C2, FC1 and FC2; no biases, no classifier.
    pub weights_excl_classifier: usize,
    /// Every trainable value.
    pub total_with_biases: usize,
}

pub fn count_parameters(model: &NetworkModel) -> ParameterCount {
    let p = &model.params;
    let weights_excl_classifier =
        p.c1.weights.len() + p.c2.weights.len() + p.fc1.weights.len() + p.fc2.weights.len();
    let total_with_biases = p.tensors().iter().map(|t| t.len()).sum();
    ParameterCount {
        weights_excl_classifier,
        total_with_biases,
    }
}

fn round_stats(s: NormStats) -> Result<NormStats> {
    NormStats::new(s.p95_u as f32 as f64, s.p95_v as f32 as f64)
}

impl NetworkModel {
    /// Assembles a model after checking that all parts agree. Normalization
    /// stats are rounded to `f32`, the precision they are stored with.
    pub fn new(
        arch: Architecture,
        params: Params,
        norm_stats: NormStats,
        labels: Vec<String>,
        seed: u64,
    ) -> Result<Self> {
        arch.shape_chain()?;
        params.check(&arch)?;
        if labels.len() != arch.classes {
            return Err(Error::shape(format!(
                "{} labels for {} classes",
                labels.len(),
                arch.classes
            )));
        }
        let norm_stats = round_stats(norm_stats)?;
        Ok(NetworkModel {
            arch,
            params,
            norm_stats,
            labels,
            seed,
        })
    }

    /// Xavier-initialized model, rounded to `f32` so that saving is lossless.
    pub fn initialized(
        arch: Architecture,
        norm_stats: NormStats,
        labels: Vec<String>,
        seed: u64,
    ) -> Result<Self> {
        let mut params = Params::xavier(&arch, seed)?;
        params.round_to_f32();
        Self::new(arch, params, norm_stats, labels, seed)
    }

    pub fn classes(&self) -> usize {
        self.arch.classes
    }

    pub fn engine(&self) -> Result<Engine<'_>> {
        Engine::new(&self.arch, &self.params)
    }

    /// Rejects volumes not normalized with this model's stats.
    pub fn check_volume(&self, volume: &FlowVolume) -> Result<()> {
        match volume.norm {
            Some(s) if s == self.norm_stats => Ok(()),
            Some(s) => Err(Error::Normalization(format!(
                "volume normalized with ({}, {}), model expects ({}, {})",
                s.p95_u, s.p95_v, self.norm_stats.p95_u, self.norm_stats.p95_v
            ))),
            None => Err(Error::Normalization("volume is not normalized".into())),
        }
    }

    /// Softmax scores of one volume. For many volumes use [`Self::scores`].
    pub fn forward(&self, volume: &FlowVolume) -> Result<Vec<f64>> {
        Ok(self
            .scores(std::slice::from_ref(volume))?
            .pop()
            .expect("one score vector"))
    }

    /// Softmax scores of each volume.
    pub fn scores(&self, volumes: &[FlowVolume]) -> Result<Vec<Vec<f64>>> {
        for v in volumes {
            self.check_volume(v)?;
        }
        let inputs: Vec<&[f32]> = volumes.iter().map(|v| v.data.as_slice()).collect();
        self.engine()?.scores(&inputs)
    }

    /// Scores via direct convolution; slow, used as a reference.
    pub fn forward_reference(&self, input: &Tensor3) -> Result<Vec<f64>> {
        Ok(self.params.forward(&self.arch, input)?.probs)
    }

    pub fn count_parameters(&self) -> ParameterCount {
        count_parameters(self)
    }
}
