use crate::net::NetworkModel;
use crate::volume::{normalize_volume, FlowVolume};
use crate::{Error, Result};

/// Kernels voted for per sample.
pub const DEFAULT_VOTE_DEPTH: usize = 3;

/// Vote counts indexed `[class][C1 kernel]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AffinityMatrix {
    pub votes: Vec<Vec<u64>>,
}

impl AffinityMatrix {
    pub fn total(&self) -> u64 {
        self.votes.iter().flatten().sum()
    }

    /// Rows are classes, columns kernels.
    pub fn to_csv(&self, labels: &[String]) -> String {
        let kernels = self.votes.first().map_or(0, |r| r.len());
        let mut out = String::from("class");
        for k in 0..kernels {
            out.push_str(&format!(",k{k}"));
        }
        out.push('\n');
        for (c, row) in self.votes.iter().enumerate() {
            out.push_str(labels.get(c).map_or("", |s| s.as_str()));
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Ids of the `depth` largest responses, ties to the lower id.
pub fn top_kernels(responses: &[f64], depth: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..responses.len()).collect();
    let depth = depth.min(ids.len());
    if depth == 0 {
        return Vec::new();
    }
    let order = |&a: &usize, &b: &usize| responses[b].total_cmp(&responses[a]).then(a.cmp(&b));
    ids.select_nth_unstable_by(depth - 1, order);
    ids.truncate(depth);
    ids.sort_by(order);
    ids
}

/// For each labeled sample, its `vote_depth` strongest C1 kernels (largest
/// post-ReLU activation) each get one vote in the sample's class row.
pub fn kernel_affinity(
    model: &NetworkModel,
    test: &[FlowVolume],
    vote_depth: usize,
) -> Result<AffinityMatrix> {
    let k = model.classes();
    let mut votes = vec![vec![0u64; model.arch.c1_kernels]; k];
    let engine = model.engine()?;
    for chunk in test.chunks(256) {
        let ready: Vec<FlowVolume> = chunk
            .iter()
            .map(|v| match v.norm {
                None => Ok(normalize_volume(v, &model.norm_stats)),
                Some(_) => model.check_volume(v).map(|_| v.clone()),
            })
            .collect::<Result<_>>()?;
        let inputs: Vec<&[f32]> = ready.iter().map(|v| v.data.as_slice()).collect();
        for (v, r) in ready.iter().zip(engine.c1_responses(&inputs)?) {
            let class = match v.label {
                Some(l) if (l as usize) < k => l as usize,
                Some(l) => {
                    return Err(Error::Label {
                        label: l as usize,
                        classes: k,
                    })
                }
                None => return Err(Error::Dataset("affinity needs labeled volumes".into())),
            };
            for kernel in top_kernels(&r, vote_depth) {
                votes[class][kernel] += 1;
            }
        }
    }
    Ok(AffinityMatrix { votes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Architecture;
    use crate::volume::NormStats;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sort_oracle(r: &[f64], depth: usize) -> Vec<usize> {
        let mut ids: Vec<usize> = (0..r.len()).collect();
        ids.sort_by(|&a, &b| r[b].partial_cmp(&r[a]).unwrap().then(a.cmp(&b)));
        ids.truncate(depth);
        ids
    }

    #[test]
    fn ties_go_to_lower_id() {
        assert_eq!(top_kernels(&[1.0, 2.0, 2.0, 0.0, 2.0], 2), vec![1, 2]);
        assert_eq!(top_kernels(&[0.0; 4], 3), vec![0, 1, 2]);
        assert_eq!(top_kernels(&[5.0], 3), vec![0]);
    }

    proptest! {
        #[test]
        fn selection_matches_full_sort(r in proptest::collection::vec(0u8..6, 1..40), d in 0usize..8) {
            let r: Vec<f64> = r.into_iter().map(f64::from).collect();
            prop_assert_eq!(top_kernels(&r, d), sort_oracle(&r, d));
        }
    }

    #[test]
    fn small_model_matches_brute_force() {
        let arch = Architecture::standard(2);
        let labels = vec!["a".to_string(), "b".to_string()];
        let model = NetworkModel::initialized(arch, NormStats::unit(), labels, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let vols: Vec<FlowVolume> = (0..3)
            .map(|i| {
                let data = (0..arch.input.len())
                    .map(|_| rng.gen_range(-1.0f32..1.0))
                    .collect();
                FlowVolume::from_data(data, 0, Some(i % 2)).unwrap()
            })
            .collect();
        let m = kernel_affinity(&model, &vols, DEFAULT_VOTE_DEPTH).unwrap();
        assert_eq!(m.total(), 9);
        let mut want = vec![vec![0u64; 30]; 2];
        for v in &vols {
            let x = crate::nn::Tensor3::from_vec(
                arch.input,
                v.data.iter().map(|&f| f as f64).collect(),
            )
            .unwrap();
            let maps = model.params.c1_direct(&x).unwrap();
            let resp: Vec<f64> = maps
                .iter()
                .map(|m| m.data().iter().fold(0.0f64, |a, &b| a.max(b)))
                .collect();
            for k in sort_oracle(&resp, 3) {
                want[v.label.unwrap() as usize][k] += 1;
            }
        }
        assert_eq!(m.votes, want);
        assert!(m.to_csv(&model.labels).starts_with("class,k0,k1"));
    }
}
