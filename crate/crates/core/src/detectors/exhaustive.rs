//! Brute-force maximum-likelihood search for tiny instances.

use super::likelihood::{FrameStats, Likelihood};
use crate::error::{Error, Result};

/// Largest number of candidate vectors the search will visit.
pub const MAX_CANDIDATES: u64 = 1 << 20;

/// Maximum of the likelihood over `{0..max_count}^K` and its arg-max.
///
/// Ties keep the first maximizer in lexicographic order.
pub fn exhaustive_mle(
    likelihood: &Likelihood<'_>,
    stats: &FrameStats,
    max_count: u32,
) -> Result<(Vec<u32>, f64)> {
    let k = likelihood.pool().count();
    let base = u64::from(max_count) + 1;
    let total = base
        .checked_pow(k as u32)
        .filter(|&t| t <= MAX_CANDIDATES)
        .ok_or_else(|| {
            Error::Config(format!(
                "{base}^{k} candidates is too many for exhaustive search"
            ))
        })?;
    let mut x = vec![0u32; k];
    let mut xf = vec![0.0; k];
    let mut best: Option<(Vec<u32>, f64)> = None;
    for _ in 0..total {
        for (f, &v) in xf.iter_mut().zip(&x) {
            *f = f64::from(v);
        }
        let v = likelihood.value(&xf, stats)?;
        if best.as_ref().is_none_or(|(_, b)| v > *b) {
            best = Some((x.clone(), v));
        }
        for d in x.iter_mut().rev() {
            if *d < max_count {
                *d += 1;
                break;
            }
            *d = 0;
        }
    }
    Ok(best.expect("at least one candidate"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ra_model::{draw_activity, generate_preamble_pool, synthesize_frame};
    use crate::rng::seeded;

    #[test]
    fn finds_truth_at_high_snr_many_antennas() {
        let mut rng = seeded(11);
        let pool = generate_preamble_pool(4, 3, &mut rng).unwrap();
        let act = draw_activity(3, 4, &mut rng).unwrap();
        let frame = synthesize_frame(&pool, &act, 1.0, 400, 1e-3, &mut rng).unwrap();
        let lk = Likelihood::aware(&pool, 1.0, 1e-3).unwrap();
        let (arg, _) = exhaustive_mle(&lk, &FrameStats::new(&frame).unwrap(), 3).unwrap();
        assert_eq!(arg, act.counts);
    }

    #[test]
    fn refuses_large_searches() {
        let mut rng = seeded(1);
        let pool = generate_preamble_pool(12, 4, &mut rng).unwrap();
        let act = draw_activity(3, 12, &mut rng).unwrap();
        let frame = synthesize_frame(&pool, &act, 1.0, 2, 0.1, &mut rng).unwrap();
        let lk = Likelihood::aware(&pool, 1.0, 0.1).unwrap();
        assert!(exhaustive_mle(&lk, &FrameStats::new(&frame).unwrap(), 5).is_err());
    }
}
