//! Segment shuffling: cut a trial into contiguous time segments and
//! concatenate them in random order, identically for every channel.

use rand::seq::SliceRandom;

use crate::{seed, Error, Result};

/// Segment boundaries: `n_segments` near-equal pieces, the remainder spread
/// one sample each over the leading segments.
pub fn segment_bounds(t: usize, n_segments: usize) -> Result<Vec<(usize, usize)>> {
    if n_segments == 0 || n_segments > t {
        return Err(Error::invalid(
            "n_segments",
            format!("need 1 <= n_segments <= {t}, got {n_segments}"),
        ));
    }
    let (base, rem) = (t / n_segments, t % n_segments);
    let mut start = 0;
    Ok((0..n_segments)
        .map(|i| {
            let len = base + usize::from(i < rem);
            let seg = (start, start + len);
            start += len;
            seg
        })
        .collect())
}

/// Output-to-input sample map for a given segment order (0-based).
fn time_map_for_order(bounds: &[(usize, usize)], order: &[usize]) -> Vec<usize> {
    order
        .iter()
        .flat_map(|&s| bounds[s].0..bounds[s].1)
        .collect()
}

/// Sample map `out[j] = in[map[j]]` for a uniformly random segment order.
pub fn segment_time_map(t: usize, n_segments: usize, seed: u64) -> Result<Vec<usize>> {
    let bounds = segment_bounds(t, n_segments)?;
    let mut order: Vec<usize> = (0..n_segments).collect();
    order.shuffle(&mut seed::rng(seed));
    Ok(time_map_for_order(&bounds, &order))
}

pub(crate) fn remap<T: Copy>(trial: &[T], t: usize, map: &[usize]) -> Vec<T> {
    trial
        .chunks_exact(t)
        .flat_map(|row| map.iter().map(move |&j| row[j]))
        .collect()
}

/// Shuffle a row-major `[C, T]` trial's segments with a seeded permutation.
pub fn trans_shuffle<T: Copy>(
    trial: &[T],
    t: usize,
    n_segments: usize,
    seed: u64,
) -> Result<Vec<T>> {
    check_len(trial.len(), t)?;
    Ok(remap(trial, t, &segment_time_map(t, n_segments, seed)?))
}

/// Reassemble segments in the given 1-based order, e.g. `[3, 1, 2]`.
pub fn trans_with_order<T: Copy>(trial: &[T], t: usize, order: &[usize]) -> Result<Vec<T>> {
    check_len(trial.len(), t)?;
    let bounds = segment_bounds(t, order.len())?;
    let mut sorted: Vec<usize> = order.to_vec();
    sorted.sort_unstable();
    if sorted != (1..=order.len()).collect::<Vec<_>>() {
        return Err(Error::invalid("order", "must be a permutation of 1..=n"));
    }
    let zero_based: Vec<usize> = order.iter().map(|s| s - 1).collect();
    Ok(remap(trial, t, &time_map_for_order(&bounds, &zero_based)))
}

fn check_len(len: usize, t: usize) -> Result<()> {
    if t == 0 || !len.is_multiple_of(t) {
        return Err(Error::Shape {
            field: "trial".into(),
            expected: t,
            found: len,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_applied_permutation() {
        let x = [1, 2, 3, 4, 5, 6];
        assert_eq!(
            trans_with_order(&x, 6, &[3, 1, 2]).unwrap(),
            vec![5, 6, 1, 2, 3, 4]
        );
        let two = [1, 2, 3, 4, 5, 6, 10, 20, 30, 40, 50, 60];
        assert_eq!(
            trans_with_order(&two, 6, &[3, 1, 2]).unwrap(),
            vec![5, 6, 1, 2, 3, 4, 50, 60, 10, 20, 30, 40]
        );
    }

    #[test]
    fn remainder_goes_to_leading_segments() {
        assert_eq!(segment_bounds(7, 3).unwrap(), vec![(0, 3), (3, 5), (5, 7)]);
        assert!(segment_bounds(4, 5).is_err());
        assert!(segment_bounds(4, 0).is_err());
    }

    #[test]
    fn single_segment_is_identity() {
        let x: Vec<f32> = (0..30).map(|v| v as f32).collect();
        assert_eq!(trans_shuffle(&x, 10, 1, 99).unwrap(), x);
    }

    proptest! {
        #[test]
        fn per_channel_multiset_preserved(t in 1usize..40, c in 1usize..4, seed in any::<u64>(), frac in 0.0f64..1.0) {
            let n = 1 + ((t - 1) as f64 * frac) as usize;
            let x: Vec<i64> = (0..c * t).map(|v| (v as i64 * 7919) % 101).collect();
            let y = trans_shuffle(&x, t, n, seed).unwrap();
            prop_assert_eq!(y.clone(), trans_shuffle(&x, t, n, seed).unwrap());
            for (a, b) in x.chunks(t).zip(y.chunks(t)) {
                let mut a = a.to_vec();
                let mut b = b.to_vec();
                a.sort_unstable();
                b.sort_unstable();
                prop_assert_eq!(a, b);
            }
        }
    }
}
