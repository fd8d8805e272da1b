//! Adaptive continuous tempering loop: sample the joint path, flip, estimate
//! the log normalizing constant from all adaptations pooled, estimate the
//! temperature marginal from the current adaptation, update the pseudo-prior,
//! and stop once the Pareto-k of the inverse-marginal ratios clears the
//! threshold.

use std::sync::Arc;

use crate::diagnostics::{pareto_khat, KHAT_THRESHOLD};
use crate::error::{Error, Result};
use crate::estimator::{
    compute_pointwise_gradients, estimate_marginal, fit_log_z, grid_log_z, is_init_slope,
    lambda_grid, update_pseudo_prior, GradientMode, MarginalEstimate, PathEstimate,
    DEFAULT_GRID_LEN,
};
use crate::hmc::{run_chains, SamplerConfig};
use crate::joint::JointPathModel;
use crate::link::LinkFunction;
use crate::model::ModelSpec;
use crate::pseudo_prior::{KernelBasis, PseudoPrior};
use crate::store::{Draw, DrawBatch, DrawStore};

pub type PriorTargetFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct TemperConfig {
    pub max_adaptations: usize,
    /// Total joint draws per adaptation; the first half is warmup.
    pub draws_per_adaptation: usize,
    pub khat_threshold: f64,
    /// Optional non-uniform target marginal over a.
    pub prior_target: Option<PriorTargetFn>,
    pub sampler: SamplerConfig,
    pub link: LinkFunction,
    pub basis: KernelBasis,
    pub grid_len: usize,
    pub marginal_grid_len: usize,
    /// When false, keep adapting and pooling for the full budget (error-
    /// trajectory experiments); convergence is still recorded in the history.
    pub stop_on_convergence: bool,
}

impl Default for TemperConfig {
    fn default() -> Self {
        TemperConfig {
            max_adaptations: 20,
            draws_per_adaptation: 3000,
            khat_threshold: KHAT_THRESHOLD,
            prior_target: None,
            sampler: SamplerConfig::default(),
            link: LinkFunction::default(),
            basis: KernelBasis::default_mixed(),
            grid_len: DEFAULT_GRID_LEN,
            marginal_grid_len: 201,
            stop_on_convergence: true,
        }
    }
}

impl TemperConfig {
    fn validate(&self) -> Result<()> {
        if self.max_adaptations == 0 {
            return Err(Error::InvalidConfig("max_adaptations must be positive".into()));
        }
        if self.draws_per_adaptation < 100 {
            return Err(Error::InvalidConfig(
                "draws_per_adaptation must be at least 100".into(),
            ));
        }
        if !(0.0 < self.khat_threshold && self.khat_threshold <= 1.0) {
            return Err(Error::InvalidConfig("khat_threshold must be in (0,1]".into()));
        }
        Ok(())
    }

    /// Sampler settings for one adaptation: half warmup, half kept, split
    /// across chains, with an adaptation-specific RNG stream offset.
    fn adaptation_sampler(&self, adaptation: usize) -> SamplerConfig {
        let per_chain = (self.draws_per_adaptation / 2 / self.sampler.chains).max(1);
        let mut cfg = self.sampler.clone();
        cfg.warmup_draws = per_chain;
        cfg.kept_draws = per_chain;
        cfg.seed = self
            .sampler
            .seed
            .wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(adaptation as u64 + 1));
        cfg
    }
}

#[derive(Debug, Clone)]
pub struct TemperResult {
    /// Theta draws with f(a) = 1 from the final adaptation.
    pub target_draws: Vec<Vec<f64>>,
    /// Theta draws with f(a) = 0 from the final adaptation.
    pub base_draws: Vec<Vec<f64>>,
    pub path_estimate: PathEstimate,
    pub marginal: Option<MarginalEstimate>,
    pub adaptations_used: usize,
    pub converged: bool,
    pub khat_history: Vec<f64>,
    /// One entry per adaptation (slope-rescued adaptations record the flat
    /// initial guess).
    pub estimate_history: Vec<PathEstimate>,
    pub empty_target_warning: bool,
    pub final_pseudo_prior: PseudoPrior,
    pub store: DrawStore,
}

/// Flip a > 1 draws onto the rising half; the link is symmetric so the
/// normalizing-constant estimate is invariant.
pub fn flipped_draws(draws: &[&Draw]) -> Vec<Draw> {
    draws
        .iter()
        .map(|d| {
            let mut c = (*d).clone();
            if c.a > 1.0 {
                c.a = 2.0 - c.a;
            }
            c
        })
        .collect()
}

/// Theta draws at an exact-temperature plateau, final adaptation only.
/// Returns the draws and a warning flag for an empty selection.
pub fn extract_conditional_draws(
    store: &DrawStore,
    link: &LinkFunction,
    lambda_value: u8,
) -> (Vec<Vec<f64>>, bool) {
    let Some(last) = store.last_adaptation() else {
        return (Vec::new(), true);
    };
    let selected: Vec<Vec<f64>> = store
        .of_adaptation(last)
        .iter()
        .filter(|d| match lambda_value {
            1 => link.in_target_plateau(d.a),
            _ => link.in_base_plateau(d.a),
        })
        .map(|d| d.theta.clone())
        .collect();
    let empty = selected.is_empty();
    (selected, empty)
}

/// Runs Algorithm "continuous tempering with path sampling" between `target`
/// (lambda = 1) and `base` (lambda = 0).
pub fn run_continuous_tempering(
    target: &ModelSpec,
    base: &ModelSpec,
    cfg: &TemperConfig,
) -> Result<TemperResult> {
    cfg.validate()?;
    let mut store = DrawStore::new();
    let mut prior = PseudoPrior::constant(cfg.basis.clone());
    let mut khat_history: Vec<f64> = Vec::new();
    let mut estimate_history: Vec<PathEstimate> = Vec::new();
    let mut converged = false;
    let mut last_estimate: Option<PathEstimate> = None;
    let mut last_marginal: Option<MarginalEstimate> = None;
    let mut jpm = JointPathModel::new(target.clone(), base.clone(), cfg.link, prior.clone())?;
    let mut adaptations_used = 0;

    for adaptation in 0..cfg.max_adaptations {
        jpm = jpm.with_pseudo_prior(prior.clone());
        let raw = run_chains(&jpm, &cfg.adaptation_sampler(adaptation))?;
        let batch = DrawBatch::from_joint_run(&jpm, &raw, adaptation);
        store.append(batch);
        adaptations_used = adaptation + 1;

        let current = store.of_adaptation(adaptation);
        let link = cfg.link;
        let non_base = current
            .iter()
            .filter(|d| link.eval_unchecked(d.a).0 > 0.0)
            .count();

        if (non_base as f64) < 0.01 * current.len() as f64 {
            // the sampler never left the base plateau: the path gradients are
            // all zero, so rescue the slope by importance sampling
            let base_thetas: Vec<Vec<f64>> = current
                .iter()
                .filter(|d| link.in_base_plateau(d.a))
                .map(|d| d.theta.clone())
                .collect();
            let b0 = is_init_slope(target, base, &base_thetas)?;
            prior = PseudoPrior::with_slope(cfg.basis.clone(), b0);
            converged = false;
            khat_history.push(f64::INFINITY);
            estimate_history.push(PathEstimate {
                grid_lambda: lambda_grid(cfg.grid_len),
                grid_logz_raw: vec![0.0; cfg.grid_len],
                coefficients: vec![0.0; cfg.basis.j() + 1],
                grid_logz_fitted: vec![0.0; cfg.grid_len],
                khat: f64::INFINITY,
            });
            continue;
        }

        // log z from all adaptations pooled
        let all = store.all().iter().collect::<Vec<_>>();
        let flipped = flipped_draws(&all);
        let flipped_refs: Vec<&Draw> = flipped.iter().collect();
        let og = compute_pointwise_gradients(&flipped_refs, &jpm, GradientMode::LogZ)?;
        let grid_vals = grid_log_z(&og, &jpm, cfg.grid_len)?;
        let beta_z = fit_log_z(&grid_vals, &cfg.basis)?;
        let fitted_prior = PseudoPrior::from_coefficients(cfg.basis.clone(), beta_z.clone());
        let grid = lambda_grid(cfg.grid_len);
        let fitted: Vec<f64> = grid.iter().map(|&l| fitted_prior.log_c(l)).collect();

        // marginal and stopping rule from the current adaptation only
        let khat = match estimate_marginal(&current, &jpm, cfg.marginal_grid_len) {
            Ok(marg) => {
                let ratios: Vec<f64> =
                    marg.log_p_at_draws.iter().map(|lp| (-lp).exp()).collect();
                let k = match pareto_khat(&ratios, cfg.khat_threshold) {
                    Ok(res) => res.khat,
                    Err(Error::SampleTooSmall { .. }) => f64::INFINITY,
                    Err(e) => return Err(e),
                };
                last_marginal = Some(marg);
                k
            }
            Err(Error::InsufficientCoverage(_)) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        khat_history.push(khat);

        let estimate = PathEstimate {
            grid_lambda: grid,
            grid_logz_raw: grid_vals,
            coefficients: beta_z.clone(),
            grid_logz_fitted: fitted,
            khat,
        };
        estimate_history.push(estimate.clone());
        last_estimate = Some(estimate);

        // a khat pass only counts once the current adaptation actually tours
        // the whole path: with every draw parked on the base plateaus the
        // sampled ratios are flat and the tail diagnostic cannot see the
        // unexplored middle
        let n = current.len() as f64;
        let in_target = current
            .iter()
            .filter(|d| link.in_target_plateau(d.a))
            .count() as f64;
        let in_base = current.iter().filter(|d| link.in_base_plateau(d.a)).count() as f64;
        let tour_complete = in_target >= 0.01 * n && in_base >= 0.01 * n;

        converged = khat < cfg.khat_threshold && tour_complete;
        if converged && cfg.stop_on_convergence {
            break;
        }
        prior = update_pseudo_prior(
            &beta_z,
            &cfg.basis,
            &cfg.link,
            cfg.prior_target.as_ref().map(|f| {
                let f: &dyn Fn(f64) -> f64 = f.as_ref();
                f
            }),
        )?;
    }

    let path_estimate = last_estimate.unwrap_or(PathEstimate {
        grid_lambda: lambda_grid(cfg.grid_len),
        grid_logz_raw: vec![0.0; cfg.grid_len],
        coefficients: vec![0.0; cfg.basis.j() + 1],
        grid_logz_fitted: vec![0.0; cfg.grid_len],
        khat: f64::INFINITY,
    });
    let (target_draws, empty_target) = extract_conditional_draws(&store, &cfg.link, 1);
    let (base_draws, _) = extract_conditional_draws(&store, &cfg.link, 0);

    Ok(TemperResult {
        target_draws,
        base_draws,
        path_estimate,
        marginal: last_marginal,
        adaptations_used,
        converged,
        khat_history,
        estimate_history,
        empty_target_warning: empty_target,
        final_pseudo_prior: prior,
        store,
    })
}

/// Convenience entry for a lambda-indexed model (tempered likelihood): the
/// path endpoints are its lambda = 1 and lambda = 0 slices.
pub fn run_continuous_tempering_lambda(
    model: &ModelSpec,
    cfg: &TemperConfig,
) -> Result<TemperResult> {
    let m1 = model.clone();
    let m0 = model.clone();
    let target = ModelSpec::new(model.dim(), false, move |xi, _| m1.eval_unchecked(xi, 1.0));
    let base = ModelSpec::new(model.dim(), false, move |xi, _| m0.eval_unchecked(xi, 0.0));
    run_continuous_tempering(&target, &base, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::std_normal;
    use crate::store::Draw;

    fn quick_cfg(seed: u64) -> TemperConfig {
        TemperConfig {
            draws_per_adaptation: 1200,
            sampler: SamplerConfig {
                chains: 2,
                seed,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn config_invariants_enforced() {
        let mut cfg = quick_cfg(1);
        cfg.draws_per_adaptation = 50;
        assert!(run_continuous_tempering(&std_normal(1), &std_normal(1), &cfg).is_err());
        let mut cfg = quick_cfg(1);
        cfg.khat_threshold = 0.0;
        assert!(run_continuous_tempering(&std_normal(1), &std_normal(1), &cfg).is_err());
    }

    #[test]
    fn degenerate_path_converges_immediately() {
        let m = std_normal(1);
        let cfg = quick_cfg(5);
        let res = run_continuous_tempering(&m, &m, &cfg).unwrap();
        assert!(res.converged);
        assert_eq!(res.adaptations_used, 1);
        for v in &res.path_estimate.grid_logz_fitted {
            assert!(v.abs() < 0.1, "log z {v} should be ~0");
        }
        assert!(!res.target_draws.is_empty());
        assert!(!res.base_draws.is_empty());
    }

    #[test]
    fn plateau_membership_selection() {
        let link = LinkFunction::default();
        let mut store = DrawStore::new();
        let mk = |a: f64, v: f64| Draw {
            adaptation: 0,
            chain: 0,
            a,
            theta: vec![v],
            log_q: 0.0,
            log_psi: 0.0,
            divergent: false,
        };
        store.append(crate::store::DrawBatch {
            adaptation: 0,
            draws: vec![mk(0.05, 1.0), mk(0.9, 2.0), mk(1.1, 3.0), mk(1.95, 4.0)],
            n_grad_evals: 0,
        });
        let (target, warn) = extract_conditional_draws(&store, &link, 1);
        assert!(!warn);
        assert_eq!(target, vec![vec![2.0], vec![3.0]]);
        let (base, _) = extract_conditional_draws(&store, &link, 0);
        assert_eq!(base, vec![vec![1.0], vec![4.0]]);
    }

    #[test]
    fn empty_store_gives_warning() {
        let store = DrawStore::new();
        let (draws, warn) = extract_conditional_draws(&store, &LinkFunction::default(), 1);
        assert!(draws.is_empty());
        assert!(warn);
    }

    #[test]
    fn flip_helper_mirrors_upper_half() {
        let d = Draw {
            adaptation: 0,
            chain: 0,
            a: 1.4,
            theta: vec![],
            log_q: 0.0,
            log_psi: 0.0,
            divergent: false,
        };
        let out = flipped_draws(&[&d]);
        assert!((out[0].a - 0.6).abs() < 1e-15);
    }
}
