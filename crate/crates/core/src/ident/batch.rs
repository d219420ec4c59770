use rand::Rng;

use crate::error::{Error, Result};

/// Number of subsection starts that leave room for the encoder history and
/// the horizon in `n_samples` samples.
pub fn valid_starts(n_samples: usize, horizon: usize, n_lag: usize) -> usize {
    (n_samples + 1).saturating_sub(horizon + n_lag)
}

/// Draws `batch_size` distinct subsection starts uniformly from
/// `n_lag ..= n_samples − horizon`, returned in ascending order.
pub fn sample_batch<R: Rng + ?Sized>(
    n_samples: usize,
    horizon: usize,
    n_lag: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let count = valid_starts(n_samples, horizon, n_lag);
    if count == 0 {
        return Err(Error::InsufficientData(format!(
            "{n_samples} samples cannot hold lag {n_lag} plus horizon {horizon}"
        )));
    }
    if batch_size == 0 || batch_size > count {
        return Err(Error::InsufficientData(format!(
            "batch of {batch_size} from {count} valid subsections"
        )));
    }
    let mut idx: Vec<usize> = rand::seq::index::sample(rng, count, batch_size)
        .into_iter()
        .map(|i| i + n_lag)
        .collect();
    idx.sort_unstable();
    Ok(idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn boundary_has_one_start() {
        let mut rng = stream(0, Stream::Batches);
        assert_eq!(valid_starts(12, 7, 5), 1);
        assert_eq!(sample_batch(12, 7, 5, 1, &mut rng).unwrap(), vec![5]);
        assert!(sample_batch(11, 7, 5, 1, &mut rng).is_err());
    }

    #[test]
    fn oversized_batch_rejected() {
        let mut rng = stream(0, Stream::Batches);
        assert!(matches!(
            sample_batch(20, 5, 2, 15, &mut rng),
            Err(Error::InsufficientData(_))
        ));
        assert_eq!(sample_batch(20, 5, 2, 14, &mut rng).unwrap(), (2..16).collect::<Vec<_>>());
    }

    #[test]
    fn deterministic_and_in_range() {
        let a = sample_batch(1000, 40, 5, 64, &mut stream(9, Stream::Batches)).unwrap();
        let b = sample_batch(1000, 40, 5, 64, &mut stream(9, Stream::Batches)).unwrap();
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert!(a.iter().all(|&i| (5..=960).contains(&i)));
    }
}
