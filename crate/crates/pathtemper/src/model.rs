//! Log-density interface on unconstrained space.
//!
//! Every model exposes one evaluator contract: given an unconstrained point
//! and an inverse temperature, return the log density (nats) and its gradient
//! with respect to the point. Constrained fixtures carry their own bijection
//! plus log-Jacobian so the sampler never sees a boundary.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

type Evaluator = dyn Fn(&[f64], f64) -> (f64, Vec<f64>) + Send + Sync;

/// An unnormalized log density q(theta, lambda) with gradient, evaluated on
/// unconstrained coordinates.
#[derive(Clone)]
pub struct ModelSpec {
    dim: usize,
    lambda_dependent: bool,
    evaluator: Arc<Evaluator>,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("dim", &self.dim)
            .field("lambda_dependent", &self.lambda_dependent)
            .finish()
    }
}

impl ModelSpec {
    pub fn new<F>(dim: usize, lambda_dependent: bool, evaluator: F) -> Self
    where
        F: Fn(&[f64], f64) -> (f64, Vec<f64>) + Send + Sync + 'static,
    {
        ModelSpec {
            dim,
            lambda_dependent,
            evaluator: Arc::new(evaluator),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda_dependent(&self) -> bool {
        self.lambda_dependent
    }

    /// Raw evaluation without argument checks. `lambda` is ignored by models
    /// that do not depend on it.
    pub fn eval_unchecked(&self, xi: &[f64], lambda: f64) -> (f64, Vec<f64>) {
        (self.evaluator)(xi, lambda)
    }

    /// Builds the geometric bridge between two fixed models as a single
    /// lambda-indexed model: log q(xi, lambda) = lambda*log target + (1-lambda)*log base.
    pub fn geometric_bridge(target: &ModelSpec, base: &ModelSpec) -> Result<ModelSpec> {
        if target.dim() != base.dim() {
            return Err(Error::DimensionMismatch {
                expected: target.dim(),
                got: base.dim(),
            });
        }
        let t = target.clone();
        let b = base.clone();
        Ok(ModelSpec::new(target.dim(), true, move |xi, lambda| {
            let (lt, gt) = t.eval_unchecked(xi, 1.0);
            let (lb, gb) = b.eval_unchecked(xi, 0.0);
            let value = lambda * lt + (1.0 - lambda) * lb;
            let grad = gt
                .iter()
                .zip(gb.iter())
                .map(|(a, c)| lambda * a + (1.0 - lambda) * c)
                .collect();
            (value, grad)
        }))
    }

    /// Wraps the model's own gradient away and replaces it with central finite
    /// differences. Slow; intended for user models without a gradient callback.
    pub fn with_finite_difference_gradient(dim: usize, lambda_dependent: bool, logp: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static) -> ModelSpec {
        ModelSpec::new(dim, lambda_dependent, move |xi, lambda| {
            let value = logp(xi, lambda);
            let mut grad = vec![0.0; xi.len()];
            let mut point = xi.to_vec();
            for i in 0..xi.len() {
                let h = 1e-6 * (1.0 + xi[i].abs());
                point[i] = xi[i] + h;
                let up = logp(&point, lambda);
                point[i] = xi[i] - h;
                let dn = logp(&point, lambda);
                point[i] = xi[i];
                grad[i] = (up - dn) / (2.0 * h);
            }
            (value, grad)
        })
    }
}

/// Checked evaluation entry point shared by samplers and estimators.
pub fn eval_model(model: &ModelSpec, xi: &[f64], lambda: f64) -> Result<(f64, Vec<f64>)> {
    if xi.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: xi.len(),
        });
    }
    if xi.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("xi".into()));
    }
    if model.lambda_dependent() && !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Domain(format!("lambda {lambda} outside [0,1]")));
    }
    Ok(model.eval_unchecked(xi, lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::make_builtin_model;
    use crate::testutil::check_gradient;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn std_normal_at_origin() {
        let m = make_builtin_model("std_normal", &[("dim", 1.0)]).unwrap();
        let (lp, g) = eval_model(&m, &[0.0], 0.0).unwrap();
        assert!((lp - (-0.5 * (2.0 * std::f64::consts::PI).ln())).abs() < 1e-12);
        assert_eq!(g, vec![0.0]);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let m = make_builtin_model("std_normal", &[("dim", 2.0)]).unwrap();
        assert!(matches!(
            eval_model(&m, &[0.0], 0.0),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            eval_model(&m, &[f64::NAN, 0.0], 0.0),
            Err(Error::NonFiniteInput(_))
        ));
    }

    #[test]
    fn mixture_gradient_vanishes_at_symmetry_point() {
        let m = make_builtin_model("gaussian_mixture", &[]).unwrap();
        let (_, g) = eval_model(&m, &[0.0], 0.0).unwrap();
        assert!(g[0].abs() < 1e-12);
    }

    #[test]
    fn beta_binomial_gradient_matches_finite_differences() {
        let m = make_builtin_model(
            "beta_binomial",
            &[("alpha", 2.0), ("beta", 1.0), ("y", 60.0), ("n", 80.0)],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let xi = [rng.gen_range(-3.0..3.0)];
            check_gradient(&m, &xi, 0.5);
        }
    }

    #[test]
    fn geometric_bridge_interpolates() {
        let t = make_builtin_model("std_normal", &[("dim", 1.0)]).unwrap();
        let b = ModelSpec::new(1, false, |xi, _| {
            (-0.5 * (xi[0] - 2.0).powi(2), vec![-(xi[0] - 2.0)])
        });
        let bridge = ModelSpec::geometric_bridge(&t, &b).unwrap();
        assert!(bridge.lambda_dependent());
        let (v, _) = bridge.eval_unchecked(&[1.0], 0.25);
        let (vt, _) = t.eval_unchecked(&[1.0], 1.0);
        let (vb, _) = b.eval_unchecked(&[1.0], 0.0);
        assert!((v - (0.25 * vt + 0.75 * vb)).abs() < 1e-14);
    }

    #[test]
    fn finite_difference_wrapper_close_to_analytic() {
        let m = ModelSpec::with_finite_difference_gradient(2, false, |xi, _| {
            -0.5 * (xi[0] * xi[0] + 2.0 * xi[1] * xi[1])
        });
        let (_, g) = m.eval_unchecked(&[0.7, -0.3], 0.0);
        assert!((g[0] - (-0.7)).abs() < 1e-6);
        assert!((g[1] - 0.6).abs() < 1e-6);
    }
}
