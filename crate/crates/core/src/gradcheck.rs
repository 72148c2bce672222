//! Finite-difference verification of the analytic loss gradients, plus the
//! scalar invariants of the loss functions. Everything runs in 64-bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::losses::{
    boundary_loss_values, contrast_loss, cross_entropy_pixelwise, l2_normalize, mau_forward,
    overall_loss, ContrastBatch, LossWeights, MauWeights, Tensor3,
};
use crate::raster::SemanticMap;

pub const FD_STEP: f64 = 1e-3;
pub const MAX_REL_ERR: f64 = 1e-4;
/// Gradient components smaller than this are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let plus = f(&probe);
            probe[i] = orig - h;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Largest `|a - n| / max(|a|, |n|, REL_FLOOR)` over components.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: &'static str,
    pub trials: usize,
    pub worst_error: f64,
    /// Seed of the worst trial; for a failing check, the first failing one.
    pub worst_seed: u64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SuiteOptions {
    pub trials: usize,
    pub seed: u64,
    /// Flip the sign of every analytic gradient; the suite must then fail.
    pub negate_gradients: bool,
}

fn trial_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn random_unit(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    l2_normalize(&(0..dim).map(|_| normal(rng)).collect::<Vec<_>>())
}

/// 8x8 boundary map in [0.1, 0.9] with ~30% boundary labels.
pub fn random_boundary_case(rng: &mut impl Rng) -> (Vec<f64>, Vec<bool>) {
    let b = (0..64).map(|_| rng.random_range(0.1..0.9)).collect();
    let y = (0..64).map(|_| rng.random_bool(0.3)).collect();
    (b, y)
}

/// D = 8 unit embeddings, 3 positives, 5 negatives.
pub fn random_contrast_case(rng: &mut impl Rng) -> ContrastBatch {
    ContrastBatch {
        anchor: random_unit(rng, 8),
        positives: (0..3).map(|_| random_unit(rng, 8)).collect(),
        negatives: (0..5).map(|_| random_unit(rng, 8)).collect(),
        temperature: rng.random_range(0.2..1.0),
        alpha: rng.random_range(0.05..0.95),
    }
}

/// 3x4x4 logits and targets.
pub fn random_cross_entropy_case(rng: &mut impl Rng) -> (Tensor3, SemanticMap) {
    let logits = Tensor3::new(3, 4, 4, (0..48).map(|_| 2.0 * normal(rng)).collect()).unwrap();
    let target =
        SemanticMap::new(4, 4, (0..16).map(|_| rng.random_range(0..3u16)).collect()).unwrap();
    (logits, target)
}

fn flatten_batch(b: &ContrastBatch) -> Vec<f64> {
    let mut x = b.anchor.clone();
    b.positives
        .iter()
        .chain(&b.negatives)
        .for_each(|v| x.extend_from_slice(v));
    x
}

fn unflatten_batch(template: &ContrastBatch, x: &[f64]) -> ContrastBatch {
    let d = template.dim();
    let mut chunks = x.chunks(d).map(<[f64]>::to_vec);
    let anchor = chunks.next().unwrap();
    let positives = chunks.by_ref().take(template.positives.len()).collect();
    let negatives = chunks.collect();
    ContrastBatch {
        anchor,
        positives,
        negatives,
        temperature: template.temperature,
        alpha: template.alpha,
    }
}

pub fn boundary_gradient_error(b: &[f64], y: &[bool], negate: bool) -> f64 {
    let analytic = boundary_loss_values(b, y).unwrap().grad;
    let analytic: Vec<f64> = analytic
        .iter()
        .map(|g| if negate { -g } else { *g })
        .collect();
    let numeric = central_difference(|x| boundary_loss_values(x, y).unwrap().loss, b, FD_STEP);
    max_relative_error(&analytic, &numeric)
}

pub fn contrast_gradient_error(batch: &ContrastBatch, negate: bool) -> f64 {
    let out = contrast_loss(batch).unwrap();
    let mut analytic = out.grad_anchor.clone();
    out.grad_positives
        .iter()
        .chain(&out.grad_negatives)
        .for_each(|g| analytic.extend_from_slice(g));
    if negate {
        analytic.iter_mut().for_each(|g| *g = -*g);
    }
    let x = flatten_batch(batch);
    let numeric = central_difference(
        |x| contrast_loss(&unflatten_batch(batch, x)).unwrap().loss,
        &x,
        FD_STEP,
    );
    max_relative_error(&analytic, &numeric)
}

pub fn cross_entropy_gradient_error(logits: &Tensor3, target: &SemanticMap, negate: bool) -> f64 {
    let (c, h, w) = logits.shape();
    let mut analytic = cross_entropy_pixelwise(logits, target)
        .unwrap()
        .grad
        .data()
        .to_vec();
    if negate {
        analytic.iter_mut().for_each(|g| *g = -*g);
    }
    let numeric = central_difference(
        |x| {
            let t = Tensor3::new(c, h, w, x.to_vec()).unwrap();
            cross_entropy_pixelwise(&t, target).unwrap().loss
        },
        logits.data(),
        FD_STEP,
    );
    max_relative_error(&analytic, &numeric)
}

fn run_check(
    name: &'static str,
    stream: u64,
    opts: SuiteOptions,
    tolerance: f64,
    mut trial: impl FnMut(&mut ChaCha8Rng) -> f64,
) -> CheckReport {
    let mut worst_error = 0.0f64;
    let mut worst_seed = opts.seed;
    let mut first_fail = None;
    for t in 0..opts.trials {
        let seed = opts.seed.wrapping_add(t as u64);
        let err = trial(&mut trial_rng(seed, stream));
        // NaN counts as a failure
        let ok = err <= tolerance;
        if !ok && first_fail.is_none() {
            first_fail = Some(seed);
        }
        if err > worst_error || err.is_nan() {
            worst_error = if err.is_nan() { f64::INFINITY } else { err };
            worst_seed = seed;
        }
    }
    CheckReport {
        name,
        trials: opts.trials,
        worst_error,
        worst_seed: first_fail.unwrap_or(worst_seed),
        tolerance,
        passed: first_fail.is_none(),
    }
}

/// Runs the three gradient checks and the scalar invariant checks.
pub fn run_suite(opts: SuiteOptions) -> Vec<CheckReport> {
    let neg = opts.negate_gradients;
    let mut reports = vec![
        run_check("boundary_loss gradient", 1, opts, MAX_REL_ERR, |rng| {
            let (b, y) = random_boundary_case(rng);
            boundary_gradient_error(&b, &y, neg)
        }),
        run_check("contrast_loss gradient", 2, opts, MAX_REL_ERR, |rng| {
            contrast_gradient_error(&random_contrast_case(rng), neg)
        }),
        run_check("cross_entropy gradient", 3, opts, MAX_REL_ERR, |rng| {
            let (l, t) = random_cross_entropy_case(rng);
            cross_entropy_gradient_error(&l, &t, neg)
        }),
    ];

    // invariants report a violation magnitude; 0 means satisfied
    reports.push(run_check("non-negativity", 4, opts, 0.0, |rng| {
        let (b, y) = random_boundary_case(rng);
        let (l, t) = random_cross_entropy_case(rng);
        let values = [
            boundary_loss_values(&b, &y).unwrap().loss,
            contrast_loss(&random_contrast_case(rng)).unwrap().loss,
            cross_entropy_pixelwise(&l, &t).unwrap().loss,
        ];
        values.iter().map(|v| (-v).max(0.0)).fold(0.0, f64::max)
    }));
    reports.push(run_check(
        "boundary label-flip symmetry",
        5,
        opts,
        1e-9,
        |rng| {
            let (b, y) = random_boundary_case(rng);
            let flipped_b: Vec<f64> = b.iter().map(|v| 1.0 - v).collect();
            let flipped_y: Vec<bool> = y.iter().map(|v| !v).collect();
            let a = boundary_loss_values(&b, &y).unwrap();
            let f = boundary_loss_values(&flipped_b, &flipped_y).unwrap();
            let alpha_gap = (a.alpha - (1.0 - f.alpha)).abs();
            ((a.loss - f.loss).abs() / a.loss.abs().max(1.0)).max(alpha_gap)
        },
    ));
    reports.push(run_check(
        "contrast temperature monotonicity",
        6,
        opts,
        0.0,
        |rng| {
            let anchor = random_unit(rng, 8);
            let positive = random_unit(rng, 8);
            let mut negative = random_unit(rng, 8);
            let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
            if dot(&anchor, &negative) >= dot(&anchor, &positive) {
                negative = negative.iter().map(|v| -v).collect();
            }
            if dot(&anchor, &negative) >= dot(&anchor, &positive) {
                return 0.0;
            }
            let alpha = rng.random_range(0.05..0.95);
            let loss_at = |tau: f64| {
                contrast_loss(&ContrastBatch {
                    anchor: anchor.clone(),
                    positives: vec![positive.clone()],
                    negatives: vec![negative.clone()],
                    temperature: tau,
                    alpha,
                })
                .unwrap()
                .loss
            };
            let (l5, l2, l1) = (loss_at(0.5), loss_at(0.2), loss_at(0.1));
            (l2 - l5).max(l1 - l2).max(0.0)
        },
    ));
    reports.push(run_check(
        "attention beta=0 identity",
        7,
        opts,
        0.0,
        |rng| {
            let (c, h, w) = (4, 5, 6);
            let features =
                Tensor3::new(c, h, w, (0..c * h * w).map(|_| normal(rng)).collect()).unwrap();
            let mut weights = MauWeights::identity(c);
            weights.mlp_w1.iter_mut().for_each(|v| *v = normal(rng));
            weights.mlp_w2.iter_mut().for_each(|v| *v = normal(rng));
            weights.conv7.iter_mut().for_each(|v| *v = normal(rng));
            let out = mau_forward(&features, &weights).unwrap();
            let identical = out
                .output
                .data()
                .iter()
                .zip(features.data())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            if identical {
                0.0
            } else {
                1.0
            }
        },
    ));
    if opts.trials > 0 {
        let got = overall_loss(1.0, 1.0, 1.0, LossWeights::default());
        reports.push(CheckReport {
            name: "overall loss weights",
            trials: 1,
            worst_error: (got - 51.3).abs(),
            worst_seed: opts.seed,
            tolerance: 0.0,
            passed: got == 51.3,
        });
    }
    reports
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_difference_of_cubic() {
        let g = central_difference(|x| x[0].powi(3) + 2.0 * x[1], &[2.0, 5.0], 1e-3);
        assert!((g[0] - 12.0).abs() < 1e-5);
        assert!((g[1] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(max_relative_error(&[0.0], &[0.0]), 0.0);
        assert!((max_relative_error(&[2.0], &[1.0]) - 0.5).abs() < 1e-15);
        assert!(max_relative_error(&[1e-9], &[2e-9]) < 1e-2);
    }

    #[test]
    fn batch_flatten_round_trip() {
        let mut rng = trial_rng(3, 0);
        let b = random_contrast_case(&mut rng);
        assert_eq!(unflatten_batch(&b, &flatten_batch(&b)), b);
    }

    #[test]
    fn negated_gradients_fail() {
        let reports = run_suite(SuiteOptions {
            trials: 3,
            seed: 11,
            negate_gradients: true,
        });
        assert!(reports[..3].iter().all(|r| !r.passed));
    }

    #[test]
    fn zero_trials_runs_nothing() {
        let reports = run_suite(SuiteOptions {
            trials: 0,
            seed: 0,
            negate_gradients: false,
        });
        assert!(reports.iter().all(|r| r.trials == 0 && r.passed));
    }
}
