use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    /// Seeded half/half split over whole groups.
    RandomHalf,
    /// The named group is the test set; everything else trains.
    GroupHoldout(u64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub mode: SplitMode,
    /// Source sequence of each sample. Without it every sample is its own
    /// group.
    pub groups: Option<Vec<u64>>,
    pub seed: u64,
}

/// Splits sample indices into (train, test), both ascending.
///
/// `RandomHalf` shuffles the groups of each label (a group's label is that
/// of its first sample) and deals them alternately to train and test,
/// continuing the alternation across labels, so every label is split as
/// evenly as its group count allows and train gets the odd group overall.
pub fn split(labels: &[Option<u32>], spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("samples to split"));
    }
    let groups: Vec<u64> = match &spec.groups {
        Some(g) if g.len() != labels.len() => {
            return Err(Error::Split(format!(
                "{} group ids for {} samples",
                g.len(),
                labels.len()
            )))
        }
        Some(g) => g.clone(),
        None => match spec.mode {
            SplitMode::GroupHoldout(_) => {
                return Err(Error::Split("group holdout needs group ids".into()))
            }
            SplitMode::RandomHalf => (0..labels.len() as u64).collect(),
        },
    };
    let mut first_label: BTreeMap<u64, Option<u32>> = BTreeMap::new();
    for (&g, &l) in groups.iter().zip(labels) {
        first_label.entry(g).or_insert(l);
    }
    let test_groups: Vec<u64> = match spec.mode {
        SplitMode::GroupHoldout(g) => {
            if first_label.len() < 2 {
                return Err(Error::Split(format!(
                    "group holdout needs at least 2 groups, found {}",
                    first_label.len()
                )));
            }
            if !first_label.contains_key(&g) {
                return Err(Error::Split(format!("group {g} has no samples")));
            }
            vec![g]
        }
        SplitMode::RandomHalf => {
            let mut strata: BTreeMap<Option<u32>, Vec<u64>> = BTreeMap::new();
            for (&g, &l) in &first_label {
                strata.entry(l).or_default().push(g);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let mut dealt = 0usize;
            let mut test = Vec::new();
            for members in strata.values_mut() {
                members.shuffle(&mut rng);
                for &g in members.iter() {
                    if dealt % 2 == 1 {
                        test.push(g);
                    }
                    dealt += 1;
                }
            }
            test
        }
    };
    let test_set: std::collections::HashSet<u64> = test_groups.into_iter().collect();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, g) in groups.iter().enumerate() {
        if test_set.contains(g) {
            test.push(i);
        } else {
            train.push(i);
        }
    }
    Ok((train, test))
}
