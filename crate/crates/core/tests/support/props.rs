//! Property checks shared by the proptest suite and the acceptance runner.
//!
//! Each check derives its inputs from a seed plus a few sizes so both
//! drivers can feed it from their own strategies.

use danet::clustering::{kmeans, ClusterConfig, Init, Metric, Weighting};
use danet::diffcore::{Tape, Tensor};
use danet::dsp::{apply_mask, energy_topfrac_indicator, istft, stft, topfrac_count, MaskSet, Waveform};
use danet::metrics::si_sdr;
use danet::model::{danet_masks, dominance, kmeans_masks, pit_loss, DominanceIndicators};
use danet::perm::permutations;
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type PropResult = Result<(), TestCaseError>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn tensor(r: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| r.gen_range(-scale..scale)).collect()).unwrap()
}

fn spectrum(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(0.0..2.0f64).powi(2)).collect()
}

fn check_rows_sum_to_one(m: &Tensor, tol: f64) -> PropResult {
    for i in 0..m.rows() {
        let row = m.row_slice(i);
        let s: f64 = row.iter().sum();
        prop_assert!((s - 1.0).abs() <= tol, "row {i} sums to {s}");
        prop_assert!(row.iter().all(|x| *x >= 0.0));
    }
    Ok(())
}

/// Masks from every head and metric sum to one per bin within 1e-6.
pub fn mask_sum_to_one(seed: u64, n: usize, d: usize, k: usize, scale: f64) -> PropResult {
    let mut r = rng(seed);
    let mut tape = Tape::new();
    let v = tape.constant(tensor(&mut r, n, d, scale));
    let a = tape.constant(tensor(&mut r, k, d, scale));
    let m = danet_masks(&mut tape, v, a).unwrap();
    check_rows_sum_to_one(tape.value(m), 1e-6)?;
    for metric in [Metric::Euclidean, Metric::Spherical] {
        for temperature in [0.1, 1.0, 10.0] {
            let m = kmeans_masks(&mut tape, v, a, metric, temperature).unwrap();
            check_rows_sum_to_one(tape.value(m), 1e-6)?;
        }
    }
    Ok(())
}

/// Masked estimates add back to the mixture magnitude within 1e-9.
pub fn mask_conservation(seed: u64, samples: usize, k: usize) -> PropResult {
    let mut r = rng(seed);
    let w = Waveform::new((0..samples).map(|_| r.gen_range(-1.0..1.0)).collect(), 8000).unwrap();
    let spec = stft(&w, 8.0, 0.5).unwrap();
    let n = spec.num_bins();
    let logits = tensor(&mut r, n, k, 5.0);
    let mut tape = Tape::new();
    let z = tape.constant(logits);
    let m = tape.softmax_rows(z);
    let masks = MaskSet::from_bin_major(spec.frames, spec.bins, k, tape.value(m).data()).unwrap();
    let est = apply_mask(&spec, &masks).unwrap();
    for i in 0..n {
        let s: f64 = est.iter().map(|e| e.magnitude[i]).sum();
        prop_assert!((s - spec.magnitude[i]).abs() <= 1e-9, "bin {i}: {s} vs {}", spec.magnitude[i]);
    }
    Ok(())
}

/// Analysis followed by synthesis reproduces the waveform within 1e-6.
pub fn cola_round_trip(seed: u64, samples: usize, frame_ms: f64, overlap: f64) -> PropResult {
    let mut r = rng(seed);
    let w = Waveform::new((0..samples).map(|_| r.gen_range(-1.0..1.0)).collect(), 8000).unwrap();
    let back = istft(&stft(&w, frame_ms, overlap).unwrap());
    prop_assert_eq!(back.len(), w.len());
    let err = back
        .samples
        .iter()
        .zip(&w.samples)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    prop_assert!(err <= 1e-6, "max error {err}");
    Ok(())
}

/// The k-means objective never worsens from one iteration to the next.
pub fn kmeans_monotone(seed: u64, n: usize, d: usize, k: usize) -> PropResult {
    let mut r = rng(seed);
    let pts = tensor(&mut r, n, d, 3.0);
    let w: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..1.0f64).powi(2) + 1e-3).collect();
    for metric in [Metric::Euclidean, Metric::Spherical] {
        for init in [Init::Random, Init::PlusPlus] {
            let cfg = ClusterConfig {
                k,
                metric,
                iterations: 30,
                weighting: Weighting::Energy,
                seed,
                early_stop: false,
                init,
                ..Default::default()
            };
            let state = kmeans(&pts, &w, &cfg).unwrap();
            for pair in state.objective.windows(2) {
                let slack = 1e-9 * pair[0].abs().max(1.0);
                match metric {
                    Metric::Euclidean => prop_assert!(pair[1] <= pair[0] + slack, "{:?}", state.objective),
                    Metric::Spherical => prop_assert!(pair[1] >= pair[0] - slack, "{:?}", state.objective),
                }
            }
        }
    }
    Ok(())
}

/// SI-SDR ignores positive rescaling of the estimate and of the target.
pub fn si_sdr_scale_invariant(seed: u64, n: usize, a: f64, b: f64) -> PropResult {
    let mut r = rng(seed);
    let target: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
    let est: Vec<f64> = target.iter().map(|t| t + r.gen_range(-0.5..0.5)).collect();
    let base = si_sdr(&est, &target).unwrap();
    let est_a: Vec<f64> = est.iter().map(|x| a * x).collect();
    let target_b: Vec<f64> = target.iter().map(|x| b * x).collect();
    let scaled = si_sdr(&est_a, &target_b).unwrap();
    prop_assert!((scaled - base).abs() <= 1e-9, "{scaled} vs {base}");
    Ok(())
}

/// The permutation-invariant loss value does not depend on source order.
pub fn pit_permutation_invariant(seed: u64, n: usize, k: usize) -> PropResult {
    let mut r = rng(seed);
    let mix = spectrum(&mut r, n);
    let sources: Vec<Vec<f64>> = (0..k).map(|_| spectrum(&mut r, n)).collect();
    let logits = tensor(&mut r, n, k, 3.0);
    let value = |order: &[usize]| -> f64 {
        let mut tape = Tape::new();
        let z = tape.constant(logits.clone());
        let m = tape.softmax_rows(z);
        let srcs: Vec<&[f64]> = order.iter().map(|&i| sources[i].as_slice()).collect();
        let (loss, _) = pit_loss(&mut tape, m, &mix, &srcs).unwrap();
        tape.value(loss).data()[0]
    };
    let base = value(&(0..k).collect::<Vec<_>>());
    for p in permutations(k) {
        let v = value(&p);
        prop_assert!((v - base).abs() <= 1e-12 * base.abs().max(1.0), "{v} vs {base}");
    }
    Ok(())
}

/// Exactly one dominant source per bin, and exactly ⌈0.9·TF⌉ energy bins.
pub fn popcount_exact(seed: u64, samples: usize, k: usize, fraction: f64) -> PropResult {
    let mut r = rng(seed);
    let w = Waveform::new((0..samples).map(|_| r.gen_range(-1.0..1.0)).collect(), 8000).unwrap();
    let spec = stft(&w, 8.0, 0.75).unwrap();
    let n = spec.num_bins();
    // quantized magnitudes force ties between sources
    let sources: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..n).map(|_| f64::from(r.gen_range(0u8..4))).collect())
        .collect();
    let refs: Vec<&[f64]> = sources.iter().map(Vec::as_slice).collect();
    let u = dominance(&refs).unwrap();
    for i in 0..n {
        prop_assert_eq!(u.iter().filter(|row| row[i]).count(), 1);
    }
    let e = energy_topfrac_indicator(&spec, fraction).unwrap();
    let kept = e.iter().filter(|&&b| b).count();
    prop_assert_eq!(kept, topfrac_count(n, fraction));
    prop_assert_eq!(kept, ((fraction * n as f64) - 1e-9).ceil() as usize);
    let ind = DominanceIndicators::new(u, e).unwrap();
    prop_assert_eq!(ind.counts().iter().sum::<usize>(), kept);
    Ok(())
}

/// Strategies matching each property's input domain.
pub mod strategies {
    use proptest::prelude::*;

    pub fn masks() -> impl Strategy<Value = (u64, usize, usize, usize, f64)> {
        (any::<u64>(), 1usize..40, 1usize..8, 1usize..5, prop_oneof![Just(0.1), Just(1.0), Just(30.0)])
    }

    pub fn conservation() -> impl Strategy<Value = (u64, usize, usize)> {
        (any::<u64>(), 64usize..400, 1usize..5)
    }

    pub fn cola() -> impl Strategy<Value = (u64, usize, f64, f64)> {
        (
            any::<u64>(),
            256usize..1200,
            prop_oneof![Just(8.0), Just(16.0), Just(32.0)],
            prop_oneof![Just(0.5), Just(0.75)],
        )
    }

    pub fn kmeans() -> impl Strategy<Value = (u64, usize, usize, usize)> {
        (any::<u64>(), 6usize..60, 1usize..6, 1usize..5)
    }

    pub fn si_sdr() -> impl Strategy<Value = (u64, usize, f64, f64)> {
        (any::<u64>(), 16usize..400, 1e-3f64..1e3, 1e-3f64..1e3)
    }

    pub fn pit() -> impl Strategy<Value = (u64, usize, usize)> {
        (any::<u64>(), 1usize..30, 1usize..5)
    }

    pub fn popcount() -> impl Strategy<Value = (u64, usize, usize, f64)> {
        (
            any::<u64>(),
            64usize..500,
            1usize..4,
            prop_oneof![Just(0.9), Just(0.5), Just(1.0), 0.01f64..1.0],
        )
    }
}
