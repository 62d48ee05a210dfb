use std::sync::Arc;

use rayon::prelude::*;

use super::arch::Architecture;
use super::params::{Params, Trace};
use crate::nn::{KernelSpectra, SpectralConv3d, Tensor3};
use crate::{Error, Result};

/// Samples converted to double precision at a time.
const CHUNK: usize = 64;

/// Batched inference for one set of parameters. C1 runs through the FFT
/// path; everything downstream is shared with the reference forward pass.
pub struct Engine<'a> {
    arch: Architecture,
    params: &'a Params,
    plan: Arc<SpectralConv3d>,
    spectra: KernelSpectra,
}

impl<'a> Engine<'a> {
    pub fn new(arch: &Architecture, params: &'a Params) -> Result<Self> {
        Self::with_plan(arch, params, Self::plan_for(arch)?)
    }

    /// FFT plan for an architecture's C1 layer, reusable across parameter
    /// updates.
    pub fn plan_for(arch: &Architecture) -> Result<Arc<SpectralConv3d>> {
        Ok(Arc::new(SpectralConv3d::new(
            arch.input,
            arch.c1_kernel,
            arch.c1_stride,
        )?))
    }

    pub fn with_plan(
        arch: &Architecture,
        params: &'a Params,
        plan: Arc<SpectralConv3d>,
    ) -> Result<Self> {
        params.check(arch)?;
        let spectra = plan.kernel_spectra(&params.c1)?;
        Ok(Engine {
            arch: *arch,
            params,
            plan,
            spectra,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    fn check_inputs<T>(&self, inputs: &[&[T]]) -> Result<()> {
        match inputs.iter().find(|x| x.len() != self.arch.input.len()) {
            Some(x) => Err(Error::shape(format!(
                "network expects {} input values, got {}",
                self.arch.input.len(),
                x.len()
            ))),
            None => Ok(()),
        }
    }

    /// C1 pre-activations, one map per kernel, for each input.
    pub fn c1_maps(&self, inputs: &[&[f64]]) -> Result<Vec<Vec<Tensor3>>> {
        self.check_inputs(inputs)?;
        self.plan.forward_maps(&self.spectra, inputs)
    }

    /// Forward traces for double-precision inputs.
    pub fn traces(&self, inputs: &[&[f64]]) -> Result<Vec<Trace>> {
        let maps = self.c1_maps(inputs)?;
        maps.into_par_iter()
            .map(|m| self.params.forward_from_c1(&self.arch, m))
            .collect()
    }

    /// Applies `f` to the trace of every input, converting from `f32` in
    /// bounded chunks.
    fn map_traces<R: Send>(
        &self,
        inputs: &[&[f32]],
        f: impl Fn(Trace) -> R + Sync,
    ) -> Result<Vec<R>> {
        self.check_inputs(inputs)?;
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(CHUNK) {
            let wide: Vec<Vec<f64>> = chunk
                .iter()
                .map(|x| x.iter().map(|&v| v as f64).collect())
                .collect();
            let refs: Vec<&[f64]> = wide.iter().map(|x| x.as_slice()).collect();
            let maps = self.c1_maps(&refs)?;
            let part: Vec<R> = maps
                .into_par_iter()
                .map(|m| self.params.forward_from_c1(&self.arch, m).map(&f))
                .collect::<Result<_>>()?;
            out.extend(part);
        }
        Ok(out)
    }

    /// Softmax scores for each input.
    pub fn scores(&self, inputs: &[&[f32]]) -> Result<Vec<Vec<f64>>> {
        self.map_traces(inputs, |t| t.probs)
    }

    /// Post-ReLU FC2 outputs, the classifier's inputs.
    pub fn features(&self, inputs: &[&[f32]]) -> Result<Vec<Vec<f64>>> {
        self.map_traces(inputs, |t| t.features)
    }

    /// Per-kernel C1 response: the largest post-ReLU activation in each map.
    pub fn c1_responses(&self, inputs: &[&[f32]]) -> Result<Vec<Vec<f64>>> {
        self.check_inputs(inputs)?;
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(CHUNK) {
            let wide: Vec<Vec<f64>> = chunk
                .iter()
                .map(|x| x.iter().map(|&v| v as f64).collect())
                .collect();
            let refs: Vec<&[f64]> = wide.iter().map(|x| x.as_slice()).collect();
            for maps in self.c1_maps(&refs)? {
                out.push(
                    maps.iter()
                        .map(|m| m.data().iter().fold(0.0f64, |a, &b| a.max(b)))
                        .collect(),
                );
            }
        }
        Ok(out)
    }
}
