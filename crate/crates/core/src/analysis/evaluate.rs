use rayon::prelude::*;

use super::metrics::{ConfusionMatrix, MetricsReport};
use crate::net::NetworkModel;
use crate::segment::aggregate_scores;
use crate::volume::{normalize_volume, FlowVolume};
use crate::{Error, Result, BLOCK_STRIDE};

/// Metrics plus the per-volume predicted class, in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub confusion: ConfusionMatrix,
    pub predictions: Vec<usize>,
}

/// Sequence ids for volumes stored back to back: a new sequence starts
/// wherever `start_frame` does not follow the previous block's by one stride.
pub fn infer_groups(volumes: &[FlowVolume]) -> Vec<u64> {
    let mut group = 0;
    volumes
        .iter()
        .enumerate()
        .map(|(i, v)| {
            if i > 0 && v.start_frame != volumes[i - 1].start_frame + BLOCK_STRIDE as u32 {
                group += 1;
            }
            group
        })
        .collect()
}

/// Indices of each sequence, sequences in order of first appearance and
/// blocks sorted by start frame.
pub fn sequences(groups: &[u64], starts: &[u32]) -> Vec<Vec<usize>> {
    let mut order: Vec<u64> = Vec::new();
    let mut members: std::collections::HashMap<u64, Vec<usize>> = Default::default();
    for (i, &g) in groups.iter().enumerate() {
        members
            .entry(g)
            .or_insert_with(|| {
                order.push(g);
                Vec::new()
            })
            .push(i);
    }
    order
        .into_iter()
        .map(|g| {
            let mut idx = members.remove(&g).expect("group seen");
            idx.sort_by_key(|&i| (starts[i], i));
            idx
        })
        .collect()
}

/// Aggregates scores over `eta` blocks within each sequence and returns the
/// label of every block, in input order.
pub fn predict_sequences(
    scores: &[Vec<f64>],
    groups: &[u64],
    starts: &[u32],
    eta: usize,
) -> Result<Vec<usize>> {
    if scores.len() != groups.len() || scores.len() != starts.len() {
        return Err(Error::DimensionMismatch(
            "scores, groups and start frames differ in length".into(),
        ));
    }
    let seqs = sequences(groups, starts);
    let labeled: Vec<Vec<(usize, usize)>> = seqs
        .par_iter()
        .map(|idx| {
            let s: Vec<Vec<f64>> = idx.iter().map(|&i| scores[i].clone()).collect();
            let agg = aggregate_scores(&s, eta)?;
            Ok(idx.iter().zip(agg).map(|(&i, (l, _))| (i, l)).collect())
        })
        .collect::<Result<_>>()?;
    let mut out = vec![0; scores.len()];
    for (i, l) in labeled.into_iter().flatten() {
        out[i] = l;
    }
    Ok(out)
}

/// Scores every volume (normalizing raw ones with the model's stats),
/// aggregates within sequences and tallies against the true labels.
/// `groups` defaults to [`infer_groups`].
pub fn evaluate(
    model: &NetworkModel,
    test: &[FlowVolume],
    groups: Option<&[u64]>,
    eta: usize,
) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::EmptyInput("test set"));
    }
    let k = model.classes();
    let truth: Vec<usize> = test
        .iter()
        .map(|v| match v.label {
            Some(l) if (l as usize) < k => Ok(l as usize),
            Some(l) => Err(Error::Label {
                label: l as usize,
                classes: k,
            }),
            None => Err(Error::Dataset("test volume has no label".into())),
        })
        .collect::<Result<_>>()?;
    let inferred;
    let groups = match groups {
        Some(g) => g,
        None => {
            inferred = infer_groups(test);
            &inferred
        }
    };
    let mut scores = Vec::with_capacity(test.len());
    for chunk in test.chunks(256) {
        let ready: Vec<FlowVolume> = chunk
            .iter()
            .map(|v| match v.norm {
                None => normalize_volume(v, &model.norm_stats),
                Some(_) => v.clone(),
            })
            .collect();
        scores.extend(model.scores(&ready)?);
    }
    let starts: Vec<u32> = test.iter().map(|v| v.start_frame).collect();
    let predictions = predict_sequences(&scores, groups, &starts, eta)?;
    let confusion =
        ConfusionMatrix::from_pairs(k, truth.iter().copied().zip(predictions.iter().copied()))?;
    let report = MetricsReport::new(&confusion, &model.labels, eta)?;
    Ok(Evaluation {
        report,
        confusion,
        predictions,
    })
}
