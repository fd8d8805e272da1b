//! Comparator estimators (discrete simulated tempering with empirical-IS and
//! Rao-Blackwellized mass updates, plain importance sampling) and exact
//! references: the closed-form beta-binomial normalizing constant, 1-D
//! quadrature, and the conjugate eight-schools marginal.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::estimator::log_mean_exp;
use crate::hmc::DualAverage;
use crate::model::ModelSpec;

/// Discrete temperature ladder with pseudo-prior masses.
#[derive(Debug, Clone)]
pub struct DiscreteLadder {
    lambdas: Vec<f64>,
    log_c: Vec<f64>,
}

impl DiscreteLadder {
    pub fn new(lambdas: Vec<f64>) -> Result<Self> {
        if lambdas.len() < 2 {
            return Err(Error::InvalidConfig("ladder needs at least 2 rungs".into()));
        }
        if lambdas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("ladder must be strictly increasing".into()));
        }
        if *lambdas.first().unwrap() != 0.0 || *lambdas.last().unwrap() != 1.0 {
            return Err(Error::InvalidConfig("ladder must run from 0 to 1".into()));
        }
        let n = lambdas.len();
        Ok(DiscreteLadder {
            lambdas,
            log_c: vec![0.0; n],
        })
    }

    /// Evenly spaced rungs i/k for i = 0..=k.
    pub fn even(k: usize) -> Self {
        let lambdas = (0..=k).map(|i| i as f64 / k as f64).collect();
        DiscreteLadder::new(lambdas).unwrap()
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn log_masses(&self) -> &[f64] {
        &self.log_c
    }

    pub fn set_log_masses(&mut self, log_c: Vec<f64>) {
        assert_eq!(log_c.len(), self.lambdas.len());
        self.log_c = log_c;
    }
}

/// Log-sum-exp stabilized importance-sampling estimate of
/// log( z(lambda_to) / z(lambda_from) ) from conditional draws at lambda_from.
pub fn importance_z_ratio(
    draws: &[Vec<f64>],
    model: &ModelSpec,
    lambda_from: f64,
    lambda_to: f64,
) -> Result<f64> {
    if draws.is_empty() {
        return Err(Error::EmptyStore);
    }
    if lambda_to == lambda_from {
        return Ok(0.0);
    }
    let log_ratios: Vec<f64> = draws
        .iter()
        .map(|theta| {
            let (num, _) = model.eval_unchecked(theta, lambda_to);
            let (den, _) = model.eval_unchecked(theta, lambda_from);
            num - den
        })
        .collect();
    log_mean_exp(&log_ratios)
}

/// Rao-Blackwellized rung occupancy: Pr(lambda = lambda_k) averaged over the
/// conditional membership probabilities of each draw. Masses sum to one;
/// normalizing-constant estimates are recovered as z_k proportional to
/// mass_k * c_k.
pub fn rao_blackwell_mass(
    draws: &[Vec<f64>],
    ladder: &DiscreteLadder,
    model: &ModelSpec,
) -> Result<Vec<f64>> {
    if draws.is_empty() {
        return Err(Error::EmptyStore);
    }
    let k = ladder.len();
    let mut mass = vec![0.0; k];
    for theta in draws {
        let logits: Vec<f64> = (0..k)
            .map(|j| {
                let (lq, _) = model.eval_unchecked(theta, ladder.lambdas[j]);
                lq - ladder.log_c[j]
            })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        for j in 0..k {
            mass[j] += (logits[j] - max).exp() / sum;
        }
    }
    let total: f64 = mass.iter().sum();
    for m in &mut mass {
        *m /= total;
    }
    Ok(mass)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MassEstimator {
    /// Empirical rung occupancy frequencies.
    EmpiricalIs,
    /// Conditional-probability averages over all draws.
    RaoBlackwell,
}

/// Sampling effort for the discrete Gibbs runner.
#[derive(Debug, Clone, Copy)]
pub struct DiscreteBudget {
    pub lambda_draws_per_adaptation: usize,
    pub hmc_updates_per_lambda_draw: usize,
    pub adaptations: usize,
    pub leapfrog_steps: usize,
}

impl Default for DiscreteBudget {
    fn default() -> Self {
        DiscreteBudget {
            lambda_draws_per_adaptation: 150,
            hmc_updates_per_lambda_draw: 100,
            adaptations: 20,
            leapfrog_steps: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DiscreteRunResult {
    /// Per adaptation: log z-hat over the ladder, referenced to rung 0.
    pub per_adaptation_logz: Vec<Vec<f64>>,
    pub n_grad_evals: u64,
    pub starvation_warnings: usize,
}

/// Discrete simulated tempering: a Gibbs alternation of symmetric
/// nearest-neighbor Metropolis moves on the rung and fixed-length HMC updates
/// of theta at the current rung, with pseudo-prior masses re-estimated from
/// the chosen estimator after each adaptation.
pub fn discrete_tempering_run(
    model: &ModelSpec,
    ladder: &DiscreteLadder,
    estimator: MassEstimator,
    budget: DiscreteBudget,
    seed: u64,
) -> Result<DiscreteRunResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x00d1_5c7e);
    let dim = model.dim();
    let k = ladder.len();
    let mut ladder = ladder.clone();

    // per-rung step sizes via dual averaging on warmup sweeps
    let mut step_adapters: Vec<DualAverage> = (0..k).map(|_| DualAverage::new(0.1, 0.8)).collect();
    let mut theta: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let mut rung = 0usize;
    let mut n_evals: u64 = 0;
    let mut starvation_warnings = 0usize;
    let mut per_adaptation_logz = Vec::with_capacity(budget.adaptations);

    let normal = |rng: &mut ChaCha8Rng| -> f64 {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };

    for _adaptation in 0..budget.adaptations {
        let warmup = budget.lambda_draws_per_adaptation / 2;
        let mut kept: Vec<(usize, Vec<f64>)> = Vec::new();

        for sweep in 0..budget.lambda_draws_per_adaptation {
            // symmetric nearest-neighbor rung proposal
            let proposal = if rng.gen::<bool>() {
                rung + 1
            } else {
                rung.wrapping_sub(1)
            };
            if proposal < k {
                let (cur, _) = model.eval_unchecked(&theta, ladder.lambdas[rung]);
                let (prop, _) = model.eval_unchecked(&theta, ladder.lambdas[proposal]);
                let log_alpha =
                    (prop - ladder.log_c[proposal]) - (cur - ladder.log_c[rung]);
                if log_alpha >= 0.0 || rng.gen::<f64>().ln() < log_alpha {
                    rung = proposal;
                }
            }

            // theta | lambda_rung updates by plain HMC
            let lambda = ladder.lambdas[rung];
            let eps = if sweep < warmup {
                step_adapters[rung].current()
            } else {
                step_adapters[rung].averaged()
            };
            for _ in 0..budget.hmc_updates_per_lambda_draw {
                let mom0: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
                let (lp0, mut grad) = model.eval_unchecked(&theta, lambda);
                n_evals += 1;
                let h0 = -lp0 + 0.5 * mom0.iter().map(|p| p * p).sum::<f64>();
                let mut pos = theta.clone();
                let mut mom = mom0;
                let mut lp = lp0;
                let steps = rng.gen_range(1..=budget.leapfrog_steps.max(1));
                let mut diverged = false;
                for _ in 0..steps {
                    for (p, g) in mom.iter_mut().zip(&grad) {
                        *p += 0.5 * eps * g;
                    }
                    for (x, p) in pos.iter_mut().zip(&mom) {
                        *x += eps * p;
                    }
                    let (lp2, grad2) = model.eval_unchecked(&pos, lambda);
                    n_evals += 1;
                    if !lp2.is_finite() || grad2.iter().any(|g| !g.is_finite()) {
                        diverged = true;
                        break;
                    }
                    for (p, g) in mom.iter_mut().zip(&grad2) {
                        *p += 0.5 * eps * g;
                    }
                    lp = lp2;
                    grad = grad2;
                }
                let accept_stat = if diverged {
                    0.0
                } else {
                    let h1 = -lp + 0.5 * mom.iter().map(|p| p * p).sum::<f64>();
                    ((h0 - h1).exp()).min(1.0)
                };
                if !diverged && rng.gen::<f64>() < accept_stat {
                    theta = pos;
                }
                if sweep < warmup {
                    step_adapters[rung].advance(accept_stat);
                }
            }
            if sweep >= warmup {
                kept.push((rung, theta.clone()));
            }
        }

        // mass update from the kept half; starved rungs are floored at
        // 1/(2 * total draws) so the log stays defined
        let total = kept.len();
        let mass: Vec<f64> = match estimator {
            MassEstimator::EmpiricalIs => {
                let mut counts = vec![0usize; k];
                for (r, _) in &kept {
                    counts[*r] += 1;
                }
                (0..k).map(|j| counts[j] as f64 / total as f64).collect()
            }
            MassEstimator::RaoBlackwell => {
                let thetas: Vec<Vec<f64>> = kept.iter().map(|(_, t)| t.clone()).collect();
                rao_blackwell_mass(&thetas, &ladder, model)?
            }
        };
        let floor = 1.0 / (2.0 * total as f64);
        let log_z: Vec<f64> = mass
            .iter()
            .map(|m| {
                if *m < floor {
                    starvation_warnings += 1;
                    floor.ln()
                } else {
                    m.ln()
                }
            })
            .zip(&ladder.log_c)
            .map(|(lm, lc)| lm + lc)
            .collect();
        let reference = log_z[0];
        let log_z: Vec<f64> = log_z.iter().map(|v| v - reference).collect();
        ladder.set_log_masses(log_z.clone());
        per_adaptation_logz.push(log_z);
    }

    Ok(DiscreteRunResult {
        per_adaptation_logz,
        n_grad_evals: n_evals,
        starvation_warnings,
    })
}

/// Closed-form log normalizing constant of the tempered beta-binomial model,
/// evaluated with log-Gamma throughout.
pub fn beta_binomial_logz(alpha: f64, beta: f64, y: f64, n: f64, lambda: f64) -> Result<f64> {
    if n < y || y < 0.0 || alpha <= 0.0 || beta <= 0.0 {
        return Err(Error::InvalidParam {
            field: "n".into(),
            reason: "need 0 <= y <= n and positive shape parameters".into(),
        });
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Domain(format!("lambda = {lambda} outside [0,1]")));
    }
    let log_choose = ln_gamma(n + 1.0) - ln_gamma(y + 1.0) - ln_gamma(n - y + 1.0);
    Ok(lambda * log_choose
        + (ln_gamma(alpha + beta) - ln_gamma(alpha) - ln_gamma(beta))
        + ln_gamma(lambda * y + alpha)
        + ln_gamma(lambda * (n - y) + beta)
        - ln_gamma(lambda * n + alpha + beta))
}

/// log integral of exp(log q(xi, lambda)) over the line by composite Simpson
/// on a widening window, in the log domain. Converges when both grid
/// refinement and window doubling change the value by less than 1e-10.
pub fn quadrature_logz(model: &ModelSpec, lambda: f64) -> Result<f64> {
    if model.dim() != 1 {
        return Err(Error::InvalidConfig(
            "quadrature oracle handles 1-D models only".into(),
        ));
    }
    let simpson = |window: f64, panels: usize| -> f64 {
        let n = panels * 2; // nodes at even count
        let h = 2.0 * window / n as f64;
        let mut terms: Vec<f64> = Vec::with_capacity(n + 1);
        for i in 0..=n {
            let x = -window + i as f64 * h;
            let (lp, _) = model.eval_unchecked(&[x], lambda);
            let w: f64 = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            terms.push(lp + w.ln());
        }
        let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
        max + sum.ln() + (h / 3.0).ln()
    };

    let mut window = 8.0f64;
    let mut prev_window_value: Option<f64> = None;
    for _ in 0..60 {
        let mut panels = 2048usize;
        let mut value = simpson(window, panels);
        for _ in 0..16 {
            panels *= 2;
            let refined = simpson(window, panels);
            let close = (refined - value).abs() < 1e-11 * (1.0 + refined.abs());
            value = refined;
            if close {
                break;
            }
        }
        if let Some(prev) = prev_window_value {
            if (value - prev).abs() < 1e-10 * (1.0 + value.abs()) {
                return Ok(value);
            }
        }
        prev_window_value = Some(value);
        window *= 2.0;
    }
    Err(Error::QuadratureDivergent(60))
}

/// Exact conjugate reference for the centered eight-schools posterior with a
/// flat prior on mu and half-Cauchy(0, 5) on tau: the tau-marginal has a
/// closed form up to 1-D normalization, and (mu, theta) are conditionally
/// normal, so iid posterior draws are available by direct simulation.
#[derive(Debug, Clone)]
pub struct EightSchoolsReference {
    ys: Vec<f64>,
    ss: Vec<f64>,
    /// log tau grid (natural scale values exp(eta))
    eta_grid: Vec<f64>,
    /// normalized density over eta
    dens: Vec<f64>,
    cdf: Vec<f64>,
}

impl EightSchoolsReference {
    pub fn new(ys: Vec<f64>, ss: Vec<f64>) -> Self {
        let n_grid = 32_768;
        let (lo, hi) = (-9.0f64, 4.0f64);
        let eta_grid: Vec<f64> = (0..n_grid)
            .map(|i| lo + (hi - lo) * i as f64 / (n_grid - 1) as f64)
            .collect();
        let mut logdens: Vec<f64> = eta_grid
            .iter()
            .map(|&eta| Self::log_post_tau(&ys, &ss, eta.exp()) + eta)
            .collect();
        let max = logdens.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for v in &mut logdens {
            *v -= max;
        }
        let dens: Vec<f64> = logdens.iter().map(|v| v.exp()).collect();
        let h = (hi - lo) / (n_grid - 1) as f64;
        let mut cdf = vec![0.0; n_grid];
        for i in 1..n_grid {
            cdf[i] = cdf[i - 1] + 0.5 * h * (dens[i - 1] + dens[i]);
        }
        let total = cdf[n_grid - 1];
        let dens = dens.iter().map(|d| d / total).collect();
        let cdf = cdf.iter().map(|c| c / total).collect();
        EightSchoolsReference {
            ys,
            ss,
            eta_grid,
            dens,
            cdf,
        }
    }

    /// Unnormalized log marginal posterior of tau (mu integrated out).
    fn log_post_tau(ys: &[f64], ss: &[f64], tau: f64) -> f64 {
        let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        let mut prec_sum = 0.0;
        let mut wmean_num = 0.0;
        for (y, s) in ys.iter().zip(ss) {
            let v = s * s + tau * tau;
            prec_sum += 1.0 / v;
            wmean_num += y / v;
        }
        let mu_hat = wmean_num / prec_sum;
        let mut ll = half_log_2pi - 0.5 * prec_sum.ln();
        for (y, s) in ys.iter().zip(ss) {
            let v = s * s + tau * tau;
            ll += -half_log_2pi - 0.5 * v.ln() - 0.5 * (y - mu_hat) * (y - mu_hat) / v;
        }
        // half-Cauchy(0,5)
        ll += (2.0 / (std::f64::consts::PI * 5.0)).ln() - (1.0 + (tau / 5.0).powi(2)).ln();
        ll
    }

    /// E[tau^m] by quadrature on the reference grid.
    pub fn moment(&self, m: u32) -> f64 {
        let n = self.eta_grid.len();
        let h = self.eta_grid[1] - self.eta_grid[0];
        let mut acc = 0.0;
        for i in 1..n {
            let fa = (self.eta_grid[i - 1].exp()).powi(m as i32) * self.dens[i - 1];
            let fb = (self.eta_grid[i].exp()).powi(m as i32) * self.dens[i];
            acc += 0.5 * h * (fa + fb);
        }
        acc
    }

    /// Left-tail quantile of tau.
    pub fn quantile(&self, prob: f64) -> f64 {
        let idx = self.cdf.partition_point(|c| *c < prob);
        let idx = idx.clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[idx - 1], self.cdf[idx]);
        let t = if c1 > c0 { (prob - c0) / (c1 - c0) } else { 0.5 };
        let eta = self.eta_grid[idx - 1] + t * (self.eta_grid[idx] - self.eta_grid[idx - 1]);
        eta.exp()
    }

    /// iid posterior draws (theta_1..theta_J, mu, tau) by direct simulation.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<(Vec<f64>, f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0xe5_5c00);
        let normal = |rng: &mut ChaCha8Rng| -> f64 {
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };
        (0..n)
            .map(|_| {
                let u: f64 = rng.gen();
                let tau = self.quantile(u.clamp(1e-12, 1.0 - 1e-12));
                let mut prec_sum = 0.0;
                let mut wmean_num = 0.0;
                for (y, s) in self.ys.iter().zip(&self.ss) {
                    let v = s * s + tau * tau;
                    prec_sum += 1.0 / v;
                    wmean_num += y / v;
                }
                let mu = wmean_num / prec_sum + normal(&mut rng) / prec_sum.sqrt();
                let thetas: Vec<f64> = self
                    .ys
                    .iter()
                    .zip(&self.ss)
                    .map(|(y, s)| {
                        let prec = 1.0 / (s * s) + 1.0 / (tau * tau);
                        let mean = (y / (s * s) + mu / (tau * tau)) / prec;
                        mean + normal(&mut rng) / prec.sqrt()
                    })
                    .collect();
                (thetas, mu, tau)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{eight_schools_data, make_builtin_model};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn beta_binomial_logz_zero_at_prior() {
        assert_eq!(beta_binomial_logz(2.0, 1.0, 60.0, 80.0, 0.0).unwrap(), 0.0);
        assert_eq!(beta_binomial_logz(9.0, 0.75, 115.0, 550.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn beta_binomial_logz_rejects_bad_params() {
        assert!(beta_binomial_logz(2.0, 1.0, 90.0, 80.0, 0.5).is_err());
    }

    #[test]
    fn quadrature_matches_closed_form_on_both_fixtures() {
        for (a, b, y, n) in [(2.0, 1.0, 60.0, 80.0), (9.0, 0.75, 115.0, 550.0)] {
            let model = make_builtin_model(
                "beta_binomial",
                &[("alpha", a), ("beta", b), ("y", y), ("n", n)],
            )
            .unwrap();
            for lambda in [0.0, 0.1, 0.5, 1.0] {
                let q = quadrature_logz(&model, lambda).unwrap();
                let truth = beta_binomial_logz(a, b, y, n, lambda).unwrap();
                assert!(
                    (q - truth).abs() < 1e-6,
                    "({a},{b},{y},{n}) lambda {lambda}: quad {q} vs analytic {truth}"
                );
            }
        }
    }

    #[test]
    fn quadrature_of_normalized_density_is_zero() {
        let m = make_builtin_model("std_normal", &[("dim", 1.0)]).unwrap();
        let q = quadrature_logz(&m, 0.0).unwrap();
        assert!(q.abs() < 1e-8, "got {q}");
    }

    #[test]
    fn quadrature_of_proper_prior_transform_is_zero() {
        // the lambda = 0 slice of the beta-binomial is the Beta prior mapped to
        // the line; a correct Jacobian integrates to one
        let model = make_builtin_model(
            "beta_binomial",
            &[("alpha", 2.0), ("beta", 1.0), ("y", 60.0), ("n", 80.0)],
        )
        .unwrap();
        let q = quadrature_logz(&model, 0.0).unwrap();
        assert!(q.abs() < 1e-6, "got {q}");
    }

    #[test]
    fn importance_ratio_identity_and_single_draw() {
        let model = make_builtin_model(
            "beta_binomial",
            &[("alpha", 2.0), ("beta", 1.0), ("y", 60.0), ("n", 80.0)],
        )
        .unwrap();
        assert_eq!(
            importance_z_ratio(&[vec![0.3]], &model, 0.4, 0.4).unwrap(),
            0.0
        );
        let theta = vec![0.3];
        let (num, _) = model.eval_unchecked(&theta, 0.6);
        let (den, _) = model.eval_unchecked(&theta, 0.4);
        let r = importance_z_ratio(&[theta], &model, 0.4, 0.6).unwrap();
        assert!((r - (num - den)).abs() < 1e-14);
    }

    #[test]
    fn importance_ratio_close_to_analytic_on_easy_fixture() {
        // draws from the prior slice (lambda = 0) via inverse cdf of Beta(2,1)
        let model = make_builtin_model(
            "beta_binomial",
            &[("alpha", 2.0), ("beta", 1.0), ("y", 60.0), ("n", 80.0)],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws: Vec<Vec<f64>> = (0..10_000)
            .map(|_| {
                let t: f64 = rng.gen::<f64>().sqrt();
                let t = t.clamp(1e-9, 1.0 - 1e-9);
                vec![(t / (1.0 - t)).ln()]
            })
            .collect();
        let est = importance_z_ratio(&draws, &model, 0.0, 0.1).unwrap();
        let truth = beta_binomial_logz(2.0, 1.0, 60.0, 80.0, 0.1).unwrap();
        assert!((est - truth).abs() < 0.05, "est {est} truth {truth}");
    }

    #[test]
    fn rao_blackwell_single_state_and_symmetry() {
        let model = make_builtin_model("std_normal", &[("dim", 1.0)]).unwrap();
        // two rungs with identical conditionals (model ignores lambda) and equal c
        let ladder = DiscreteLadder::even(1);
        let draws: Vec<Vec<f64>> = (0..500).map(|i| vec![(i as f64) * 0.01 - 2.5]).collect();
        let mass = rao_blackwell_mass(&draws, &ladder, &model).unwrap();
        assert!((mass[0] - 0.5).abs() < 1e-12);
        assert!((mass[1] - 0.5).abs() < 1e-12);
        assert!((mass.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn discrete_run_flat_when_target_equals_base() {
        let model = make_builtin_model("std_normal", &[("dim", 1.0)]).unwrap();
        // lambda-independent model: all rungs share one conditional
        let bridged = ModelSpec::geometric_bridge(&model, &model).unwrap();
        let budget = DiscreteBudget {
            lambda_draws_per_adaptation: 100,
            hmc_updates_per_lambda_draw: 10,
            adaptations: 3,
            leapfrog_steps: 8,
        };
        let out =
            discrete_tempering_run(&bridged, &DiscreteLadder::even(10), MassEstimator::RaoBlackwell, budget, 3)
                .unwrap();
        let last = out.per_adaptation_logz.last().unwrap();
        for v in last {
            assert!(v.abs() < 0.1, "log z {v} not near 0: {last:?}");
        }
    }

    #[test]
    fn eight_schools_reference_matches_independent_quadrature() {
        let (ys, ss) = eight_schools_data().unwrap();
        let r = EightSchoolsReference::new(ys, ss);
        let e1 = r.moment(1);
        let e2 = r.moment(2);
        // independently computed from the same closed-form marginal at a
        // different discretization (400k-point linear tau grid)
        assert!((e1 - 3.6338).abs() < 0.01, "E[tau] {e1}");
        assert!((e2 - 23.843).abs() < 0.15, "E[tau^2] {e2}");
        let q = r.quantile(0.01);
        assert!((q - 0.0497).abs() < 0.01, "q01 {q}");
    }

    #[test]
    fn eight_schools_sampler_consistent_with_moments() {
        let (ys, ss) = eight_schools_data().unwrap();
        let r = EightSchoolsReference::new(ys, ss);
        let draws = r.sample(200_000, 5);
        let mean_tau: f64 =
            draws.iter().map(|(_, _, t)| *t).sum::<f64>() / draws.len() as f64;
        assert!((mean_tau - r.moment(1)).abs() < 0.05, "{mean_tau}");
    }
}
