//! Joint tempered density on (a, theta).
//!
//! The sampled coordinate for the temperature is unconstrained: a = 2*sigmoid(u),
//! with the corresponding log-Jacobian added to the joint log density. The
//! theta-slice at fixed a is f(a)*log q + (1-f(a))*log psi, so conditionals are
//! invariant under any pseudo-prior.

use crate::error::{Error, Result};
use crate::hmc::HmcTarget;
use crate::link::LinkFunction;
use crate::model::ModelSpec;
use crate::pseudo_prior::PseudoPrior;

#[derive(Debug, Clone)]
pub struct JointPathModel {
    target: ModelSpec,
    base: ModelSpec,
    link: LinkFunction,
    pseudo_prior: PseudoPrior,
}

#[inline]
fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// log sigmoid(u) + log(1 - sigmoid(u)), computed stably.
#[inline]
fn log_sig_both(u: f64) -> f64 {
    // = -log(1+e^-u) - log(1+e^u) = u - 2*log(1+e^u) for u<0 side
    if u >= 0.0 {
        -u - 2.0 * (-u).exp().ln_1p()
    } else {
        u - 2.0 * u.exp().ln_1p()
    }
}

impl JointPathModel {
    /// Geometric path between two fixed models: lambda = 1 is `target`,
    /// lambda = 0 is `base`. The base slot may hold a second full model.
    pub fn new(
        target: ModelSpec,
        base: ModelSpec,
        link: LinkFunction,
        pseudo_prior: PseudoPrior,
    ) -> Result<Self> {
        if target.dim() != base.dim() {
            return Err(Error::DimensionMismatch {
                expected: target.dim(),
                got: base.dim(),
            });
        }
        Ok(JointPathModel {
            target,
            base,
            link,
            pseudo_prior,
        })
    }

    /// Wraps a lambda-indexed model: the endpoints are its lambda = 1 and
    /// lambda = 0 slices.
    pub fn from_lambda_model(
        model: &ModelSpec,
        link: LinkFunction,
        pseudo_prior: PseudoPrior,
    ) -> Result<Self> {
        let m1 = model.clone();
        let m0 = model.clone();
        let target = ModelSpec::new(model.dim(), false, move |xi, _| m1.eval_unchecked(xi, 1.0));
        let base = ModelSpec::new(model.dim(), false, move |xi, _| m0.eval_unchecked(xi, 0.0));
        JointPathModel::new(target, base, link, pseudo_prior)
    }

    pub fn theta_dim(&self) -> usize {
        self.target.dim()
    }

    pub fn link(&self) -> &LinkFunction {
        &self.link
    }

    pub fn pseudo_prior(&self) -> &PseudoPrior {
        &self.pseudo_prior
    }

    pub fn target(&self) -> &ModelSpec {
        &self.target
    }

    pub fn base(&self) -> &ModelSpec {
        &self.base
    }

    /// Pseudo-prior updates create a new instance between adaptations.
    pub fn with_pseudo_prior(&self, pseudo_prior: PseudoPrior) -> Self {
        JointPathModel {
            target: self.target.clone(),
            base: self.base.clone(),
            link: self.link,
            pseudo_prior,
        }
    }

    pub fn a_of_u(&self, u: f64) -> f64 {
        2.0 * sigmoid(u)
    }

    pub fn u_of_a(&self, a: f64) -> f64 {
        let p = (a / 2.0).clamp(1e-12, 1.0 - 1e-12);
        (p / (1.0 - p)).ln()
    }

    /// Log densities of the two endpoints at theta.
    pub fn endpoint_logs(&self, theta: &[f64]) -> (f64, f64) {
        let (lq, _) = self.target.eval_unchecked(theta, 1.0);
        let (lb, _) = self.base.eval_unchecked(theta, 0.0);
        (lq, lb)
    }

    /// Joint log density and gradient at the unconstrained point (u, theta).
    pub fn joint_logdensity(&self, u: f64, theta: &[f64]) -> Result<(f64, f64, Vec<f64>)> {
        if !u.is_finite() || theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("joint point".into()));
        }
        Ok(self.joint_logdensity_unchecked(u, theta))
    }

    pub fn joint_logdensity_unchecked(&self, u: f64, theta: &[f64]) -> (f64, f64, Vec<f64>) {
        let s = sigmoid(u);
        let a = 2.0 * s;
        let (f, df) = self.link.eval_unchecked(a);
        let (lq, gq) = self.target.eval_unchecked(theta, 1.0);
        let (lb, gb) = self.base.eval_unchecked(theta, 0.0);
        let log_c = self.pseudo_prior.log_c(f);
        let dlog_c = self.pseudo_prior.dlog_c(f);
        let log_jac = (2.0f64).ln() + log_sig_both(u);
        let value = f * lq + (1.0 - f) * lb - log_c + log_jac;
        let da_du = 2.0 * s * (1.0 - s);
        let grad_u = (df * (lq - lb) - dlog_c * df) * da_du + (1.0 - 2.0 * s);
        let grad_theta = gq
            .iter()
            .zip(gb.iter())
            .map(|(q, b)| f * q + (1.0 - f) * b)
            .collect();
        (value, grad_u, grad_theta)
    }
}

/// The sampler sees the joint model as one unconstrained vector [u, theta..].
impl HmcTarget for JointPathModel {
    fn dim(&self) -> usize {
        1 + self.theta_dim()
    }

    fn log_density_gradient(&self, pos: &[f64]) -> (f64, Vec<f64>) {
        let (value, grad_u, grad_theta) = self.joint_logdensity_unchecked(pos[0], &pos[1..]);
        let mut grad = Vec::with_capacity(pos.len());
        grad.push(grad_u);
        grad.extend(grad_theta);
        (value, grad)
    }
}

pub use crate::link::link_eval;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{make_builtin_model, std_normal};
    use crate::model::ModelSpec;
    use crate::pseudo_prior::{KernelBasis, PseudoPrior};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn flat_prior() -> PseudoPrior {
        PseudoPrior::constant(KernelBasis::default_mixed())
    }

    fn fd_joint(jpm: &JointPathModel, u: f64, theta: &[f64]) -> (f64, Vec<f64>) {
        let h = 1e-6 * (1.0 + u.abs());
        let (vp, _, _) = jpm.joint_logdensity_unchecked(u + h, theta);
        let (vm, _, _) = jpm.joint_logdensity_unchecked(u - h, theta);
        let du = (vp - vm) / (2.0 * h);
        let mut point = theta.to_vec();
        let mut dtheta = vec![0.0; theta.len()];
        for i in 0..theta.len() {
            let h = 1e-6 * (1.0 + theta[i].abs());
            point[i] = theta[i] + h;
            let (vp, _, _) = jpm.joint_logdensity_unchecked(u, &point);
            point[i] = theta[i] - h;
            let (vm, _, _) = jpm.joint_logdensity_unchecked(u, &point);
            point[i] = theta[i];
            dtheta[i] = (vp - vm) / (2.0 * h);
        }
        (du, dtheta)
    }

    #[test]
    fn base_plateau_reduces_to_base_plus_jacobian() {
        let target = std_normal(1);
        let base = ModelSpec::new(1, false, |xi, _| {
            (-0.5 * (xi[0] - 1.0).powi(2), vec![-(xi[0] - 1.0)])
        });
        let jpm =
            JointPathModel::new(target, base.clone(), LinkFunction::default(), flat_prior())
                .unwrap();
        let u = jpm.u_of_a(0.05);
        let theta = [0.4];
        let (v, grad_u, _) = jpm.joint_logdensity(u, &theta).unwrap();
        let (lb, _) = base.eval_unchecked(&theta, 0.0);
        let log_jac = (2.0f64).ln() + log_sig_both(u);
        assert!((v - (lb + log_jac)).abs() < 1e-12);
        // in the plateau the only u-dependence is the Jacobian term
        assert!((grad_u - (1.0 - 2.0 * sigmoid(u))).abs() < 1e-12);
    }

    #[test]
    fn target_plateau_slice_is_target_plus_constant() {
        let target = std_normal(1);
        let base = ModelSpec::new(1, false, |xi, _| {
            (-0.5 * (xi[0] - 1.0).powi(2), vec![-(xi[0] - 1.0)])
        });
        let jpm = JointPathModel::new(target.clone(), base, LinkFunction::default(), flat_prior())
            .unwrap();
        let u = jpm.u_of_a(1.0);
        let (v1, _, _) = jpm.joint_logdensity(u, &[0.3]).unwrap();
        let (v2, _, _) = jpm.joint_logdensity(u, &[-0.9]).unwrap();
        let (t1, _) = target.eval_unchecked(&[0.3], 1.0);
        let (t2, _) = target.eval_unchecked(&[-0.9], 1.0);
        assert!(((v1 - v2) - (t1 - t2)).abs() < 1e-12);
    }

    #[test]
    fn joint_gradient_matches_finite_differences_on_beta_binomial_path() {
        let model = make_builtin_model(
            "beta_binomial",
            &[("alpha", 2.0), ("beta", 1.0), ("y", 60.0), ("n", 80.0)],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let coeffs: Vec<f64> = (0..=10).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let prior = PseudoPrior::from_coefficients(KernelBasis::default_mixed(), coeffs);
        let jpm =
            JointPathModel::from_lambda_model(&model, LinkFunction::default(), prior).unwrap();
        for _ in 0..50 {
            let u = rng.gen_range(-4.0..4.0);
            let theta = [rng.gen_range(-3.0..3.0)];
            let (_, grad_u, grad_theta) = jpm.joint_logdensity(u, &theta).unwrap();
            let (fd_u, fd_theta) = fd_joint(&jpm, u, &theta);
            let denom = 1.0f64.max(grad_u.abs()).max(fd_u.abs());
            assert!(
                (grad_u - fd_u).abs() / denom < 1e-5,
                "u-grad mismatch at u={u}: {grad_u} vs {fd_u}"
            );
            for i in 0..theta.len() {
                let denom = 1.0f64.max(grad_theta[i].abs()).max(fd_theta[i].abs());
                assert!((grad_theta[i] - fd_theta[i]).abs() / denom < 1e-5);
            }
        }
    }

    #[test]
    fn symmetric_in_a_about_one() {
        let model = make_builtin_model(
            "beta_binomial",
            &[("alpha", 2.0), ("beta", 1.0), ("y", 60.0), ("n", 80.0)],
        )
        .unwrap();
        let jpm =
            JointPathModel::from_lambda_model(&model, LinkFunction::default(), flat_prior())
                .unwrap();
        for a in [0.3, 0.55, 0.9, 1.0] {
            let (v1, _, _) = jpm.joint_logdensity(jpm.u_of_a(a), &[0.7]).unwrap();
            let (v2, _, _) = jpm.joint_logdensity(jpm.u_of_a(2.0 - a), &[0.7]).unwrap();
            assert!((v1 - v2).abs() < 1e-9, "a={a}: {v1} vs {v2}");
        }
    }

    #[test]
    fn non_finite_inputs_rejected() {
        let jpm = JointPathModel::new(
            std_normal(1),
            std_normal(1),
            LinkFunction::default(),
            flat_prior(),
        )
        .unwrap();
        assert!(jpm.joint_logdensity(f64::NAN, &[0.0]).is_err());
        assert!(jpm.joint_logdensity(0.0, &[f64::INFINITY]).is_err());
    }
}
