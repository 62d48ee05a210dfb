use super::{FlowField, CELLS};

/// Fills every non-converged cell by linear interpolation (in frame index)
/// between the nearest converged values of the same cell before and after
/// it. A one-sided neighbor is copied; a cell that never converges becomes
/// (0, 0). All returned cells are marked converged.
pub fn interpolate_failures(fields: &[FlowField]) -> Vec<FlowField> {
    let mut out: Vec<FlowField> = fields.to_vec();
    for cell in 0..CELLS {
        let good: Vec<usize> = (0..fields.len())
            .filter(|&k| fields[k].converged[cell])
            .collect();
        // `next` indexes into `good`: the first converged field after k.
        let mut next: usize = 0;
        for k in 0..fields.len() {
            if fields[k].converged[cell] {
                next += 1;
                continue;
            }
            let before = next.checked_sub(1).map(|i| good[i]);
            let after = good.get(next).copied();
            let (u, v) = match (before, after) {
                (Some(a), Some(b)) => {
                    let (fa, fb) = (&fields[a], &fields[b]);
                    let span = fb.frame_index as f64 - fa.frame_index as f64;
                    let t = if span > 0.0 {
                        (fields[k].frame_index as f64 - fa.frame_index as f64) / span
                    } else {
                        0.5
                    };
                    let lerp = |x: f32, y: f32| (x as f64 + (y as f64 - x as f64) * t) as f32;
                    (lerp(fa.u[cell], fb.u[cell]), lerp(fa.v[cell], fb.v[cell]))
                }
                (Some(a), None) => (fields[a].u[cell], fields[a].v[cell]),
                (None, Some(b)) => (fields[b].u[cell], fields[b].v[cell]),
                (None, None) => (0.0, 0.0),
            };
            out[k].u[cell] = u;
            out[k].v[cell] = v;
        }
    }
    for f in &mut out {
        for (i, c) in f.converged.iter_mut().enumerate() {
            if !f.u[i].is_finite() || !f.v[i].is_finite() {
                f.u[i] = 0.0;
                f.v[i] = 0.0;
            }
            *c = true;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn field(k: u32, u: f32, ok: bool) -> FlowField {
        let mut f = FlowField::zeros(k);
        f.u.fill(u);
        f.v.fill(-u);
        f.converged.fill(ok);
        f
    }

    const CELL: usize = 5 * 32 + 5;

    #[test]
    fn midpoint() {
        let mut mid = field(1, 100.0, true);
        mid.converged[CELL] = false;
        let out = interpolate_failures(&[field(0, 2.0, true), mid, field(2, 4.0, true)]);
        assert_eq!(out[1].u[CELL], 3.0);
        assert_eq!(out[1].v[CELL], -3.0);
        assert_eq!(out[1].u[0], 100.0);
        assert!(out.iter().all(|f| f.converged.iter().all(|&c| c)));
    }

    #[test]
    fn one_sided_copy() {
        let out = interpolate_failures(&[
            field(0, 9.0, false),
            field(1, 1.5, true),
            field(2, 1.5, true),
        ]);
        assert!(out[0].u.iter().all(|&u| u == 1.5));
    }

    #[test]
    fn never_converged_becomes_zero() {
        let out = interpolate_failures(&[field(0, 9.0, false), field(1, 3.0, false)]);
        assert!(out
            .iter()
            .all(|f| f.u.iter().chain(&f.v).all(|&x| x == 0.0)));
    }

    #[test]
    fn uneven_gaps_interpolate_by_frame_index() {
        let out = interpolate_failures(&[
            field(0, 0.0, true),
            field(1, 7.0, false),
            field(2, 7.0, false),
            field(3, 3.0, true),
        ]);
        assert_eq!(out[1].u[0], 1.0);
        assert_eq!(out[2].u[0], 2.0);
    }

    proptest! {
        #[test]
        fn output_is_total(
            vals in proptest::collection::vec((any::<bool>(), -10.0f32..10.0, proptest::bool::weighted(0.1)), 1..12)
        ) {
            let fields: Vec<FlowField> = vals
                .iter()
                .enumerate()
                .map(|(k, &(ok, u, poison))| {
                    let mut f = field(k as u32, u, ok);
                    if poison && !ok {
                        f.u.fill(f32::NAN);
                    }
                    f
                })
                .collect();
            let out = interpolate_failures(&fields);
            prop_assert_eq!(out.len(), fields.len());
            for f in &out {
                prop_assert!(f.is_finite());
                prop_assert!(f.converged.iter().all(|&c| c));
            }
        }
    }
}
