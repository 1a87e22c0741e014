//! Batch normalization over the (B × F) sequence summary.
//!
//! Variance is the biased/population form. Train mode standardizes with the
//! current batch; infer mode is a fixed affine map built from running stats.

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::net::Mode;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams<F: Scalar> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
    pub running_mean: Array1<F>,
    pub running_var: Array1<F>,
    pub epsilon: F,
    pub momentum: F,
}

impl<F: Scalar> BatchNormParams<F> {
    /// Identity transform to start: gamma 1, beta 0, running stats (0, 1).
    pub fn new(features: usize, epsilon: f64, momentum: f64) -> BatchNormParams<F> {
        BatchNormParams {
            gamma: Array1::ones(features),
            beta: Array1::zeros(features),
            running_mean: Array1::zeros(features),
            running_var: Array1::ones(features),
            epsilon: F::from_f(epsilon),
            momentum: F::from_f(momentum),
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }
}

/// Activations kept for backward (train mode only).
#[derive(Debug, Clone)]
pub struct BnCache<F: Scalar> {
    pub xhat: Array2<F>,
    pub inv_std: Array1<F>,
}

/// Batch statistics produced by a train-mode pass; the training loop folds
/// them into the running stats.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats<F: Scalar> {
    pub mean: Array1<F>,
    pub var: Array1<F>,
}

fn check_features<F: Scalar>(z: &Array2<F>, p: &BatchNormParams<F>) -> Result<()> {
    if z.ncols() != p.features() {
        return Err(Error::ShapeMismatch {
            op: "batchnorm_forward",
            detail: format!("{} features, params expect {}", z.ncols(), p.features()),
        });
    }
    Ok(())
}

/// Standardize with batch statistics, then scale and shift. Requires B ≥ 2:
/// a single row has zero variance in every feature and trains nothing.
pub fn batchnorm_train<F: Scalar>(
    z: &Array2<F>,
    p: &BatchNormParams<F>,
) -> Result<(Array2<F>, BnCache<F>, BnStats<F>)> {
    check_features(z, p)?;
    let bsz = z.nrows();
    if bsz < 2 {
        return Err(Error::DegenerateBatch(bsz));
    }
    let mean = z.mean_axis(Axis(0)).expect("nonempty batch");
    let centered = z - &mean;
    let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).expect("nonempty batch");
    let inv_std = var.mapv(|v| F::one() / (v + p.epsilon).sqrt());
    let xhat = &centered * &inv_std;
    let out = &xhat * &p.gamma + &p.beta;
    Ok((out, BnCache { xhat, inv_std }, BnStats { mean, var }))
}

/// Standardize with running statistics: a fixed per-example affine map,
/// independent of batch composition.
pub fn batchnorm_infer<F: Scalar>(z: &Array2<F>, p: &BatchNormParams<F>) -> Result<Array2<F>> {
    check_features(z, p)?;
    let inv_std = p.running_var.mapv(|v| F::one() / (v + p.epsilon).sqrt());
    Ok((z - &p.running_mean) * &inv_std * &p.gamma + &p.beta)
}

/// running ← momentum·running + (1 − momentum)·batch.
pub fn update_running<F: Scalar>(p: &mut BatchNormParams<F>, stats: &BnStats<F>) {
    let m = p.momentum;
    let k = F::one() - m;
    p.running_mean = &p.running_mean * m + &stats.mean.mapv(|v| v * k);
    p.running_var = &p.running_var * m + &stats.var.mapv(|v| v * k);
}

/// Mode-dispatching entry point. Train mode folds the batch statistics into
/// the running stats before returning; infer mode leaves params untouched
/// and returns no cache.
pub fn batchnorm_forward<F: Scalar>(
    z: &Array2<F>,
    p: &mut BatchNormParams<F>,
    mode: Mode,
) -> Result<(Array2<F>, Option<BnCache<F>>)> {
    match mode {
        Mode::Train => {
            let (out, cache, stats) = batchnorm_train(z, p)?;
            update_running(p, &stats);
            Ok((out, Some(cache)))
        }
        Mode::Infer => Ok((batchnorm_infer(z, p)?, None)),
    }
}

/// Reverse through a train-mode pass: gradients for gamma, beta, and the
/// input. Uses the standard biased-variance form.
pub fn batchnorm_backward<F: Scalar>(
    dy: &Array2<F>,
    cache: &BnCache<F>,
    p: &BatchNormParams<F>,
) -> (Array2<F>, Array1<F>, Array1<F>) {
    let bsz = F::from_f(dy.nrows() as f64);
    let dgamma = (dy * &cache.xhat).sum_axis(Axis(0));
    let dbeta = dy.sum_axis(Axis(0));
    let dxhat = dy * &p.gamma;
    let sum_dxhat = dxhat.sum_axis(Axis(0));
    let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(0));
    let dz = (dxhat.mapv(|v| v * bsz) - &sum_dxhat - &cache.xhat * &sum_dxhat_xhat)
        * &cache.inv_std.mapv(|v| v / bsz);
    (dz, dgamma, dbeta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::tests::assert_grad_close;
    use ndarray::arr2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_batch_maps_to_zero() {
        let p = BatchNormParams::<f64>::new(3, 1e-3, 0.99);
        let z = arr2(&[[2.0, -1.0, 0.5], [2.0, -1.0, 0.5], [2.0, -1.0, 0.5]]);
        let (out, _, stats) = batchnorm_train(&z, &p).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
        assert!(stats.var.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_gamma_broadcasts_beta() {
        let mut p = BatchNormParams::<f64>::new(2, 1e-3, 0.99);
        p.gamma.fill(0.0);
        p.beta.assign(&ndarray::arr1(&[3.5, -1.25]));
        let z = arr2(&[[1.0, 2.0], [0.0, -4.0], [5.0, 9.0]]);
        let (out, _, _) = batchnorm_train(&z, &p).unwrap();
        for row in out.rows() {
            assert_eq!(row[0], 3.5);
            assert_eq!(row[1], -1.25);
        }
    }

    #[test]
    fn train_output_is_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let p = BatchNormParams::<f64>::new(6, 1e-3, 0.99);
        let z = Array2::from_shape_fn((64, 6), |_| rng.random_range(-3.0..3.0));
        let (out, _, stats) = batchnorm_train(&z, &p).unwrap();
        let mean = out.mean_axis(Axis(0)).unwrap();
        let var = out
            .map_axis(Axis(0), |col| {
                let m = col.mean().unwrap();
                col.mapv(|v| (v - m) * (v - m)).mean().unwrap()
            });
        for f in 0..6 {
            assert!(mean[f].abs() < 1e-5, "feature {f} mean {}", mean[f]);
            // With epsilon the exact variance is v/(v+eps).
            let expected = stats.var[f] / (stats.var[f] + 1e-3);
            assert!((var[f] - expected).abs() < 1e-5, "feature {f} var {}", var[f]);
        }
    }

    #[test]
    fn degenerate_batch_rejected_in_train_mode() {
        let p = BatchNormParams::<f64>::new(2, 1e-3, 0.99);
        let z = arr2(&[[1.0, 2.0]]);
        assert!(matches!(
            batchnorm_train(&z, &p),
            Err(Error::DegenerateBatch(1))
        ));
        // Same row passes in infer mode.
        assert!(batchnorm_infer(&z, &p).is_ok());
    }

    #[test]
    fn running_stats_blend_toward_batch() {
        let mut p = BatchNormParams::<f64>::new(1, 1e-3, 0.9);
        let z = arr2(&[[1.0], [3.0]]);
        let (_, cache) = batchnorm_forward(&z, &mut p, Mode::Train).unwrap();
        assert!(cache.is_some());
        // batch mean 2, batch var 1: running = 0.9*old + 0.1*batch.
        assert!((p.running_mean[0] - 0.2).abs() < 1e-12);
        assert!((p.running_var[0] - (0.9 + 0.1)).abs() < 1e-12);
    }

    #[test]
    fn infer_is_independent_of_batch_composition() {
        let mut p = BatchNormParams::<f64>::new(2, 1e-3, 0.99);
        p.running_mean.assign(&ndarray::arr1(&[0.5, -1.0]));
        p.running_var.assign(&ndarray::arr1(&[2.0, 0.25]));
        p.gamma.assign(&ndarray::arr1(&[1.5, 0.5]));
        let row = [0.7, 0.9];
        let a = arr2(&[row, [9.0, -9.0]]);
        let b = arr2(&[[-2.0, 4.0], row, [1.0, 1.0]]);
        let out_a = batchnorm_infer(&a, &p).unwrap();
        let out_b = batchnorm_infer(&b, &p).unwrap();
        assert_eq!(out_a.row(0), out_b.row(1));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut p = BatchNormParams::<f64>::new(3, 1e-3, 0.99);
        for v in p.gamma.iter_mut() {
            *v = rng.random_range(0.5..1.5);
        }
        for v in p.beta.iter_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
        let z = Array2::from_shape_fn((5, 3), |_| rng.random_range(-2.0..2.0));
        let proj = Array2::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0));

        let loss = |z: &Array2<f64>, p: &BatchNormParams<f64>| {
            let (out, _, _) = batchnorm_train(z, p).unwrap();
            (&out * &proj).sum()
        };

        let (_, cache, _) = batchnorm_train(&z, &p).unwrap();
        let (dz, dgamma, dbeta) = batchnorm_backward(&proj, &cache, &p);

        let eps = 1e-5;
        let mut z2 = z.clone();
        for idx in 0..z2.len() {
            let orig = z2.as_slice().unwrap()[idx];
            z2.as_slice_mut().unwrap()[idx] = orig + eps;
            let up = loss(&z2, &p);
            z2.as_slice_mut().unwrap()[idx] = orig - eps;
            let down = loss(&z2, &p);
            z2.as_slice_mut().unwrap()[idx] = orig;
            assert_grad_close(dz.as_slice().unwrap()[idx], (up - down) / (2.0 * eps), 1e-4);
        }
        let mut p2 = p.clone();
        for idx in 0..p2.gamma.len() {
            let orig = p2.gamma[idx];
            p2.gamma[idx] = orig + eps;
            let up = loss(&z, &p2);
            p2.gamma[idx] = orig - eps;
            let down = loss(&z, &p2);
            p2.gamma[idx] = orig;
            assert_grad_close(dgamma[idx], (up - down) / (2.0 * eps), 1e-4);
        }
        for idx in 0..p2.beta.len() {
            let orig = p2.beta[idx];
            p2.beta[idx] = orig + eps;
            let up = loss(&z, &p2);
            p2.beta[idx] = orig - eps;
            let down = loss(&z, &p2);
            p2.beta[idx] = orig;
            assert_grad_close(dbeta[idx], (up - down) / (2.0 * eps), 1e-4);
        }
    }

    #[test]
    fn feature_mismatch_rejected() {
        let p = BatchNormParams::<f64>::new(3, 1e-3, 0.99);
        let z = arr2(&[[1.0, 2.0], [3.0, 4.0]]);
        assert!(matches!(
            batchnorm_train(&z, &p),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
