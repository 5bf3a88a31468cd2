//! Scale-invariant signal-to-distortion ratio and its improvement over the
//! unprocessed mixture.

use thiserror::Error;

use crate::perm::permutations;

/// Upper/lower bound of reported SI-SDR values in dB.
pub const SI_SDR_CAP_DB: f64 = 60.0;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("target signal is all zeros")]
    ZeroTarget,
    #[error("{estimates} estimates for {targets} targets")]
    Count { estimates: usize, targets: usize },
    #[error("no sources to score")]
    Empty,
}

/// SI-SDR in dB, clamped to ±60 dB.
pub fn si_sdr(estimate: &[f64], target: &[f64]) -> Result<f64, MetricError> {
    if estimate.len() != target.len() {
        return Err(MetricError::Length(estimate.len(), target.len()));
    }
    let energy: f64 = target.iter().map(|s| s * s).sum();
    if energy == 0.0 {
        return Err(MetricError::ZeroTarget);
    }
    let alpha = estimate.iter().zip(target).map(|(e, s)| e * s).sum::<f64>() / energy;
    let signal = alpha * alpha * energy;
    let noise: f64 = estimate
        .iter()
        .zip(target)
        .map(|(e, s)| (e - alpha * s).powi(2))
        .sum();
    if noise <= 1e-12 * signal {
        return Ok(SI_SDR_CAP_DB);
    }
    let db = 10.0 * (signal / noise).log10();
    Ok(db.clamp(-SI_SDR_CAP_DB, SI_SDR_CAP_DB))
}

/// Score of one target after alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparationScore {
    pub target: usize,
    /// Index of the estimate aligned to this target.
    pub estimate: usize,
    pub si_sdr_db: f64,
    pub si_sdri_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparationReport {
    pub scores: Vec<SeparationScore>,
    /// `permutation[target] = estimate`.
    pub permutation: Vec<usize>,
}

impl SeparationReport {
    pub fn mean_si_sdri(&self) -> f64 {
        self.scores.iter().map(|s| s.si_sdri_db).sum::<f64>() / self.scores.len() as f64
    }

    pub fn mean_si_sdr(&self) -> f64 {
        self.scores.iter().map(|s| s.si_sdr_db).sum::<f64>() / self.scores.len() as f64
    }
}

/// Aligns estimates to targets by the permutation with the best mean SI-SDR,
/// then reports each target's improvement over the mixture.
pub fn si_sdri(estimates: &[&[f64]], targets: &[&[f64]], mixture: &[f64]) -> Result<SeparationReport, MetricError> {
    if estimates.len() != targets.len() {
        return Err(MetricError::Count {
            estimates: estimates.len(),
            targets: targets.len(),
        });
    }
    let k = targets.len();
    if k == 0 {
        return Err(MetricError::Empty);
    }
    // table[target][estimate]
    let mut table = vec![vec![0.0; k]; k];
    for (t, target) in targets.iter().enumerate() {
        for (e, est) in estimates.iter().enumerate() {
            table[t][e] = si_sdr(est, target)?;
        }
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for p in permutations(k) {
        let total: f64 = p.iter().enumerate().map(|(t, &e)| table[t][e]).sum();
        if best.as_ref().is_none_or(|(b, _)| total > *b) {
            best = Some((total, p));
        }
    }
    let (_, permutation) = best.expect("k >= 1");
    let scores = permutation
        .iter()
        .enumerate()
        .map(|(t, &e)| {
            let base = si_sdr(mixture, targets[t])?;
            Ok(SeparationScore {
                target: t,
                estimate: e,
                si_sdr_db: table[t][e],
                si_sdri_db: table[t][e] - base,
            })
        })
        .collect::<Result<_, MetricError>>()?;
    Ok(SeparationReport { scores, permutation })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn si_sdr_examples() {
        let s = [0.3, -1.0, 0.5, 2.0];
        let twice: Vec<f64> = s.iter().map(|v| 2.0 * v).collect();
        assert_eq!(si_sdr(&twice, &s).unwrap(), SI_SDR_CAP_DB);
        assert!(si_sdr(&[1.0, 1.0], &[1.0, 0.0]).unwrap().abs() < 1e-12);
        assert_eq!(si_sdr(&[0.0, 1.0], &[1.0, 0.0]).unwrap(), -SI_SDR_CAP_DB);
        assert_eq!(si_sdr(&[1.0], &[0.0]), Err(MetricError::ZeroTarget));
        assert!(si_sdr(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn improvement_examples() {
        let a = [1.0, 0.0, 0.5, -0.2];
        let b = [0.0, 1.0, -0.3, 0.4];
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let copies = si_sdri(&[&mix, &mix], &[&a, &b], &mix).unwrap();
        assert!(copies.mean_si_sdri().abs() < 1e-12);

        let exact = si_sdri(&[&a, &b], &[&a, &b], &mix).unwrap();
        assert_eq!(exact.mean_si_sdr(), SI_SDR_CAP_DB);
        let swapped = si_sdri(&[&b, &a], &[&a, &b], &mix).unwrap();
        assert_eq!(swapped.permutation, vec![1, 0]);
        assert_eq!(swapped.mean_si_sdri(), exact.mean_si_sdri());
        assert!(si_sdri(&[&a], &[&a, &b], &mix).is_err());
    }
}
