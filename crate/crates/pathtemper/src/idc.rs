//! Implicit divide-and-conquer over one problematic scalar margin: iterate
//! between sampling the reweighted joint, estimating the original marginal by
//! path sampling over the margin from all pooled draws, and biasing the next
//! round toward a target marginal. Stops when the density-ratio sequence
//! between consecutive adaptations has a tame Pareto tail.

use std::sync::Arc;

use crate::diagnostics::pareto_khat;
use crate::error::{Error, Result};
use crate::estimator::{fit_basis, CumulativeIntegral, OrderedGradients};
use crate::hmc::{run_chains, HmcTarget, SamplerConfig};
use crate::link::LinkFunction;
use crate::model::ModelSpec;
use crate::pseudo_prior::{KernelBasis, PseudoPrior};

pub type LogDensityFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// How the margin's coordinate maps to the natural scale when reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordTransform {
    Identity,
    /// The sampled coordinate is log of the natural parameter.
    Log,
}

impl CoordTransform {
    pub fn to_natural(&self, x: f64) -> f64 {
        match self {
            CoordTransform::Identity => x,
            CoordTransform::Log => x.exp(),
        }
    }
}

#[derive(Clone)]
pub enum TargetMarginal {
    /// Fixed unnormalized log density over the transformed margin.
    Fixed(LogDensityFn),
    /// Re-estimated each adaptation from the windowed second moment of the
    /// pointwise gradients.
    AdaptiveOptimal,
}

#[derive(Clone)]
pub struct IdcConfig {
    pub margin_index: usize,
    pub target_marginal: TargetMarginal,
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub grid_len: usize,
    pub max_adaptations: usize,
    /// Total draws per adaptation; half warmup, half kept.
    pub draws_per_adaptation: usize,
    pub khat_threshold: f64,
    pub sampler: SamplerConfig,
    pub basis: KernelBasis,
    pub transform: CoordTransform,
}

impl IdcConfig {
    fn validate(&self, model: &ModelSpec) -> Result<()> {
        if self.margin_index >= model.dim() {
            return Err(Error::InvalidConfig(format!(
                "margin_index {} out of range for dim {}",
                self.margin_index,
                model.dim()
            )));
        }
        if !(self.grid_lo.is_finite() && self.grid_hi.is_finite() && self.grid_lo < self.grid_hi) {
            return Err(Error::InvalidConfig("grid bounds must be finite and ordered".into()));
        }
        if self.grid_len < 50 {
            return Err(Error::InvalidConfig("grid needs at least 50 points".into()));
        }
        if self.max_adaptations == 0 || self.draws_per_adaptation < 100 {
            return Err(Error::InvalidConfig("adaptation budget too small".into()));
        }
        Ok(())
    }

    fn grid(&self) -> Vec<f64> {
        let n = self.grid_len;
        (0..n)
            .map(|i| self.grid_lo + (self.grid_hi - self.grid_lo) * i as f64 / (n - 1) as f64)
            .collect()
    }

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

/// A smooth additive bias over the margin, represented on the shared kernel
/// basis mapped to the grid range and clamped flat outside it.
#[derive(Debug, Clone)]
pub struct BiasCurve {
    prior: PseudoPrior,
    lo: f64,
    hi: f64,
}

impl BiasCurve {
    /// Fits `values` on `grid` with the kernel basis.
    pub fn fit(basis: &KernelBasis, grid: &[f64], values: &[f64]) -> Result<Self> {
        let lo = grid[0];
        let hi = *grid.last().unwrap();
        let unit: Vec<f64> = grid.iter().map(|t| (t - lo) / (hi - lo)).collect();
        let coeffs = fit_basis(basis, &unit, values)?;
        Ok(BiasCurve {
            prior: PseudoPrior::from_coefficients(basis.clone(), coeffs),
            lo,
            hi,
        })
    }

    /// Value and derivative at tau, constant outside [lo, hi].
    pub fn eval(&self, tau: f64) -> (f64, f64) {
        let width = self.hi - self.lo;
        if tau <= self.lo {
            (self.prior.log_c(0.0), 0.0)
        } else if tau >= self.hi {
            (self.prior.log_c(1.0), 0.0)
        } else {
            let t = (tau - self.lo) / width;
            (self.prior.log_c(t), self.prior.dlog_c(t) / width)
        }
    }
}

/// The joint model with the margin bias added.
struct BiasedTarget<'a> {
    model: &'a ModelSpec,
    margin: usize,
    bias: Option<&'a BiasCurve>,
}

impl HmcTarget for BiasedTarget<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn log_density_gradient(&self, pos: &[f64]) -> (f64, Vec<f64>) {
        let (mut lp, mut grad) = self.model.eval_unchecked(pos, 0.0);
        if let Some(bias) = self.bias {
            let (b, db) = bias.eval(pos[self.margin]);
            lp += b;
            grad[self.margin] += db;
        }
        (lp, grad)
    }
}

/// One kept draw of the IDC loop.
#[derive(Debug, Clone)]
pub struct IdcDraw {
    pub adaptation: usize,
    pub chain: usize,
    /// The margin coordinate (transformed scale).
    pub tau: f64,
    pub theta: Vec<f64>,
    /// d/d tau of the original joint log density at this draw.
    pub grad_tau: f64,
    pub divergent: bool,
}

/// Estimated marginal density on the grid (transformed scale), normalized to
/// integrate to one by the trapezoid rule.
#[derive(Debug, Clone)]
pub struct MarginalDensity {
    pub grid: Vec<f64>,
    pub log_density: Vec<f64>,
    pub transform: CoordTransform,
}

impl MarginalDensity {
    fn from_log_values(grid: Vec<f64>, mut log_density: Vec<f64>, transform: CoordTransform) -> Self {
        let log_norm = log_trapezoid(&grid, &log_density);
        for v in &mut log_density {
            *v -= log_norm;
        }
        MarginalDensity {
            grid,
            log_density,
            transform,
        }
    }

    /// Linear interpolation of log density at tau (clamped to the grid).
    pub fn log_at(&self, tau: f64) -> f64 {
        let n = self.grid.len();
        if tau <= self.grid[0] {
            return self.log_density[0];
        }
        if tau >= self.grid[n - 1] {
            return self.log_density[n - 1];
        }
        let idx = self.grid.partition_point(|g| *g <= tau).min(n - 1);
        let (g0, g1) = (self.grid[idx - 1], self.grid[idx]);
        let t = (tau - g0) / (g1 - g0);
        self.log_density[idx - 1] * (1.0 - t) + self.log_density[idx] * t
    }

    /// Mass integrates to one on the grid.
    pub fn total_mass(&self) -> f64 {
        log_trapezoid(&self.grid, &self.log_density).exp()
    }
}

fn log_trapezoid(grid: &[f64], log_vals: &[f64]) -> f64 {
    let max = log_vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut mass = 0.0;
    for i in 1..grid.len() {
        let fa = (log_vals[i - 1] - max).exp();
        let fb = (log_vals[i] - max).exp();
        mass += 0.5 * (grid[i] - grid[i - 1]) * (fa + fb);
    }
    max + mass.ln()
}

#[derive(Debug, Clone)]
pub struct IdcResult {
    pub marginal: MarginalDensity,
    pub draws: Vec<IdcDraw>,
    pub converged: bool,
    pub adaptations_used: usize,
    pub khat_history: Vec<f64>,
    /// Smoothed log p_j on the grid after each adaptation.
    pub adaptation_densities: Vec<Vec<f64>>,
    /// Bias curve used while sampling the final adaptation (None: unbiased).
    pub final_bias: Option<BiasCurve>,
    pub n_grad_evals: u64,
}

/// Path-sampling estimate of the margin's log density on the grid from
/// binned draws: gradients are tie-averaged within bins of one grid spacing,
/// trapezoid-integrated, then smoothed on the kernel basis.
fn estimate_log_marginal(
    draws: &[&IdcDraw],
    grid: &[f64],
    basis: &KernelBasis,
) -> Result<Vec<f64>> {
    let lo = grid[0];
    let hi = *grid.last().unwrap();
    let h = grid[1] - grid[0];
    let n = grid.len();
    let mut bin_sum = vec![0.0; n];
    let mut bin_count = vec![0usize; n];
    for d in draws {
        let k = (((d.tau - lo) / h).round() as i64).clamp(0, n as i64 - 1) as usize;
        bin_sum[k] += d.grad_tau;
        bin_count[k] += 1;
    }
    let pairs: Vec<(f64, f64)> = (0..n)
        .filter(|k| bin_count[*k] > 0)
        .map(|k| (grid[k], bin_sum[k] / bin_count[k] as f64))
        .collect();
    if pairs.len() < 5 {
        return Err(Error::InsufficientCoverage(format!(
            "only {} occupied margin bins",
            pairs.len()
        )));
    }
    let og = OrderedGradients::from_pairs(pairs)?;
    let cum = CumulativeIntegral::new(&og, lo);

    // Fit the smoothing basis over the occupied span only, then continue
    // linearly outside it with the boundary slopes. Fitting across the
    // unexplored padding would chase the fabricated constant-slope ramp and
    // can fold spurious mass onto the grid edges.
    let support_lo = og.support()[0];
    let support_hi = *og.support().last().unwrap();
    let in_span: Vec<usize> = (0..n)
        .filter(|&k| grid[k] >= support_lo && grid[k] <= support_hi)
        .collect();
    let unit = |t: f64| (t - lo) / (hi - lo);
    if in_span.len() <= basis.j() + 1 {
        // too narrow to identify the basis; smooth over the whole grid
        let raw: Vec<f64> = grid.iter().map(|&t| cum.eval(t)).collect();
        let xs: Vec<f64> = grid.iter().map(|&t| unit(t)).collect();
        let coeffs = fit_basis(basis, &xs, &raw)?;
        let fitted = PseudoPrior::from_coefficients(basis.clone(), coeffs);
        return Ok(xs.iter().map(|&t| fitted.log_c(t)).collect());
    }
    let xs: Vec<f64> = in_span.iter().map(|&k| unit(grid[k])).collect();
    let raw: Vec<f64> = in_span.iter().map(|&k| cum.eval(grid[k])).collect();
    let coeffs = fit_basis(basis, &xs, &raw)?;
    let fitted = PseudoPrior::from_coefficients(basis.clone(), coeffs);
    let (x_first, x_last) = (xs[0], *xs.last().unwrap());
    Ok((0..n)
        .map(|k| {
            let x = unit(grid[k]);
            if x < x_first {
                fitted.log_c(x_first) + fitted.dlog_c(x_first) * (x - x_first)
            } else if x > x_last {
                fitted.log_c(x_last) + fitted.dlog_c(x_last) * (x - x_last)
            } else {
                fitted.log_c(x)
            }
        })
        .collect())
}

/// Windowed generalized-Jeffreys target: sqrt of the locally averaged squared
/// gradient, floored and normalized on the grid.
pub fn estimate_optimal_target(
    taus: &[f64],
    grads: &[f64],
    grid: &[f64],
) -> Result<Vec<f64>> {
    if taus.len() < 500 {
        return Err(Error::SampleTooSmall {
            need: 500,
            got: taus.len(),
        });
    }
    let lo = grid[0];
    let h = grid[1] - grid[0];
    let n = grid.len();
    let mut bin_sum = vec![0.0; n];
    let mut bin_count = vec![0usize; n];
    for (t, g) in taus.iter().zip(grads) {
        let k = (((t - lo) / h).round() as i64).clamp(0, n as i64 - 1) as usize;
        bin_sum[k] += g * g;
        bin_count[k] += 1;
    }
    // window of five bins centered on each node
    let mut windowed = vec![f64::NAN; n];
    let mut empty = 0usize;
    for k in 0..n {
        let lo_k = k.saturating_sub(2);
        let hi_k = (k + 2).min(n - 1);
        let count: usize = bin_count[lo_k..=hi_k].iter().sum();
        if count == 0 {
            empty += 1;
        } else {
            let sum: f64 = bin_sum[lo_k..=hi_k].iter().sum();
            windowed[k] = (sum / count as f64).sqrt();
        }
    }
    if empty * 2 > n {
        return Err(Error::InsufficientCoverage(format!(
            "{empty} of {n} optimal-target windows are empty"
        )));
    }
    // nearest-filled fill for the gaps
    let filled: Vec<usize> = (0..n).filter(|k| windowed[*k].is_finite()).collect();
    for k in 0..n {
        if !windowed[k].is_finite() {
            let nearest = filled
                .iter()
                .min_by_key(|j| (**j as i64 - k as i64).unsigned_abs())
                .unwrap();
            windowed[k] = windowed[*nearest];
        }
    }
    let max = windowed.iter().cloned().fold(0.0f64, f64::max);
    let floor = 1e-6 * max;
    let log_vals: Vec<f64> = windowed.iter().map(|v| v.max(floor).ln()).collect();
    let norm = log_trapezoid(grid, &log_vals);
    Ok(log_vals.iter().map(|v| v - norm).collect())
}

/// Constant-KL variant for tempering paths: (1/f') sqrt(Var U) over the
/// rising range, with plateau values continued from the nearest interior node.
pub fn constant_kl_target(
    a_values: &[f64],
    u_values: &[f64],
    link: &LinkFunction,
    grid: &[f64],
) -> Result<Vec<f64>> {
    if a_values.len() < 500 {
        return Err(Error::SampleTooSmall {
            need: 500,
            got: a_values.len(),
        });
    }
    let lo = grid[0];
    let h = grid[1] - grid[0];
    let n = grid.len();
    let mut sums = vec![0.0; n];
    let mut sqsums = vec![0.0; n];
    let mut counts = vec![0usize; n];
    for (a, u) in a_values.iter().zip(u_values) {
        let k = (((a - lo) / h).round() as i64).clamp(0, n as i64 - 1) as usize;
        sums[k] += u;
        sqsums[k] += u * u;
        counts[k] += 1;
    }
    let mut vals = vec![f64::NAN; n];
    for k in 0..n {
        let (f, df) = link.eval_unchecked(grid[k].clamp(0.0, 2.0));
        let _ = f;
        if counts[k] >= 2 && df.abs() > 1e-12 {
            let mean = sums[k] / counts[k] as f64;
            let var = (sqsums[k] / counts[k] as f64 - mean * mean).max(0.0);
            vals[k] = var.sqrt() / df.abs();
        }
    }
    let filled: Vec<usize> = (0..n).filter(|k| vals[*k].is_finite()).collect();
    if filled.len() * 2 < n {
        return Err(Error::InsufficientCoverage(
            "constant-KL target has sparse coverage".into(),
        ));
    }
    for k in 0..n {
        if !vals[k].is_finite() {
            let nearest = filled
                .iter()
                .min_by_key(|j| (**j as i64 - k as i64).unsigned_abs())
                .unwrap();
            vals[k] = vals[*nearest];
        }
    }
    let max = vals.iter().cloned().fold(0.0f64, f64::max);
    let floor = 1e-6 * max.max(f64::MIN_POSITIVE);
    let log_vals: Vec<f64> = vals.iter().map(|v| v.max(floor).ln()).collect();
    let norm = log_trapezoid(grid, &log_vals);
    Ok(log_vals.iter().map(|v| v - norm).collect())
}

/// Runs the divide-and-conquer loop on `joint`.
pub fn run_idc(joint: &ModelSpec, cfg: &IdcConfig) -> Result<IdcResult> {
    cfg.validate(joint)?;
    let grid = cfg.grid();
    let mut draws: Vec<IdcDraw> = Vec::new();
    let mut bias: Option<BiasCurve> = None;
    let mut final_bias: Option<BiasCurve> = None;
    let mut adaptation_densities: Vec<Vec<f64>> = Vec::new();
    let mut khat_history: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut n_grad_evals = 0u64;
    let mut adaptations_used = 0;

    // fixed target evaluated once on the grid (normalized); the adaptive
    // optimal target is refreshed after every adaptation
    let fixed_target: Option<Vec<f64>> = match &cfg.target_marginal {
        TargetMarginal::Fixed(f) => {
            let raw: Vec<f64> = grid.iter().map(|&t| f(t)).collect();
            if raw.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteInput("target marginal".into()));
            }
            let norm = log_trapezoid(&grid, &raw);
            Some(raw.iter().map(|v| v - norm).collect())
        }
        TargetMarginal::AdaptiveOptimal => None,
    };

    for adaptation in 0..cfg.max_adaptations {
        let target = BiasedTarget {
            model: joint,
            margin: cfg.margin_index,
            bias: bias.as_ref(),
        };
        let raw = run_chains(&target, &cfg.adaptation_sampler(adaptation))?;
        n_grad_evals += raw.total_grad_evals();
        adaptations_used = adaptation + 1;
        final_bias = bias.clone();

        for (chain, out) in raw.chains.iter().enumerate() {
            for (pos, divergent) in out.positions.iter().zip(&out.divergent) {
                let (_, grad) = joint.eval_unchecked(pos, 0.0);
                draws.push(IdcDraw {
                    adaptation,
                    chain,
                    tau: pos[cfg.margin_index],
                    theta: pos.clone(),
                    grad_tau: grad[cfg.margin_index],
                    divergent: *divergent,
                });
            }
        }

        // p-hat from all pooled draws
        let all: Vec<&IdcDraw> = draws.iter().collect();
        let log_p = estimate_log_marginal(&all, &grid, &cfg.basis)?;
        let density = MarginalDensity::from_log_values(grid.clone(), log_p, cfg.transform);

        // underflow guard over the sampled range
        let current: Vec<&IdcDraw> = draws
            .iter()
            .filter(|d| d.adaptation == adaptation)
            .collect();
        for d in &current {
            if density.log_at(d.tau) < -700.0 {
                return Err(Error::RangeMisconfigured(format!(
                    "log p-hat underflows at sampled tau = {}",
                    d.tau
                )));
            }
        }

        // stopping rule: ratios of consecutive smoothed densities at the
        // current adaptation's margin draws (defined from the second
        // adaptation onward)
        if let Some(prev) = adaptation_densities.last() {
            let prev_density =
                MarginalDensity::from_log_values(grid.clone(), prev.clone(), cfg.transform);
            let ratios: Vec<f64> = current
                .iter()
                .map(|d| (density.log_at(d.tau) - prev_density.log_at(d.tau)).exp())
                .collect();
            let khat = match pareto_khat(&ratios, cfg.khat_threshold) {
                Ok(res) => res.khat,
                Err(Error::SampleTooSmall { .. }) => f64::INFINITY,
                Err(e) => return Err(e),
            };
            khat_history.push(khat);
            if khat < cfg.khat_threshold {
                adaptation_densities.push(density.log_density.clone());
                return Ok(IdcResult {
                    marginal: density,
                    draws,
                    converged: true,
                    adaptations_used,
                    khat_history,
                    adaptation_densities,
                    final_bias,
                    n_grad_evals,
                });
            }
        }
        adaptation_densities.push(density.log_density.clone());

        // bias update toward the target marginal; while coverage is too thin
        // for the windowed optimal-target estimate, fall back to a uniform
        // target (the divide-and-conquer push itself does not need it yet)
        let log_target: Vec<f64> = match &fixed_target {
            Some(t) => t.clone(),
            None => {
                let taus: Vec<f64> = draws.iter().map(|d| d.tau).collect();
                let grads: Vec<f64> = draws.iter().map(|d| d.grad_tau).collect();
                match estimate_optimal_target(&taus, &grads, &grid) {
                    Ok(t) => t,
                    Err(Error::InsufficientCoverage(_)) | Err(Error::SampleTooSmall { .. }) => {
                        let log_unif = -(grid[grid.len() - 1] - grid[0]).ln();
                        vec![log_unif; grid.len()]
                    }
                    Err(e) => return Err(e),
                }
            }
        };
        let bias_vals: Vec<f64> = log_target
            .iter()
            .zip(&density.log_density)
            .map(|(t, p)| t - p)
            .collect();
        bias = Some(BiasCurve::fit(&cfg.basis, &grid, &bias_vals)?);
        converged = false;
    }

    let all: Vec<&IdcDraw> = draws.iter().collect();
    let log_p = estimate_log_marginal(&all, &grid, &cfg.basis)?;
    let marginal = MarginalDensity::from_log_values(grid.clone(), log_p, cfg.transform);
    Ok(IdcResult {
        marginal,
        draws,
        converged,
        adaptations_used,
        khat_history,
        adaptation_densities,
        final_bias,
        n_grad_evals,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentMethod {
    Quadrature,
    Importance,
}

/// Posterior expectation of the m-th power of the natural-scale margin.
pub fn moment_estimate(
    md: &MarginalDensity,
    m: u32,
    method: MomentMethod,
    result: Option<&IdcResult>,
) -> Result<f64> {
    match method {
        MomentMethod::Quadrature => {
            let log_h_p: Vec<f64> = md
                .grid
                .iter()
                .zip(&md.log_density)
                .map(|(&t, &lp)| {
                    let nat = md.transform.to_natural(t);
                    // h(tau) = tau^m; keep signs outside the log
                    (nat.abs().max(f64::MIN_POSITIVE).ln() * m as f64 + lp, nat.signum())
                })
                .map(|(l, s)| if m % 2 == 1 && s < 0.0 { f64::NAN } else { l })
                .collect();
            if log_h_p.iter().any(|v| v.is_nan()) {
                // signed integrand: fall back to direct trapezoid
                let mut acc = 0.0;
                for i in 1..md.grid.len() {
                    let f = |j: usize| {
                        md.transform.to_natural(md.grid[j]).powi(m as i32)
                            * md.log_density[j].exp()
                    };
                    acc += 0.5 * (md.grid[i] - md.grid[i - 1]) * (f(i - 1) + f(i));
                }
                return Ok(acc);
            }
            Ok(log_trapezoid(&md.grid, &log_h_p).exp())
        }
        MomentMethod::Importance => {
            let result = result.ok_or_else(|| {
                Error::InvalidConfig("importance method needs the run's draw store".into())
            })?;
            let last = result.adaptations_used - 1;
            let mut num = 0.0;
            let mut den = 0.0;
            for d in result.draws.iter().filter(|d| d.adaptation == last) {
                let w = match &result.final_bias {
                    Some(b) => (-b.eval(d.tau).0).exp(),
                    None => 1.0,
                };
                num += md.transform.to_natural(d.tau).powi(m as i32) * w;
                den += w;
            }
            if den == 0.0 {
                return Err(Error::Domain("all importance weights are zero".into()));
            }
            Ok(num / den)
        }
    }
}

/// Inverse of the trapezoid-accumulated CDF with linear interpolation,
/// reported on the natural scale.
pub fn quantile_estimate(md: &MarginalDensity, prob: f64) -> Result<f64> {
    if !(0.0 < prob && prob < 1.0) {
        return Err(Error::Domain(format!("prob = {prob} outside (0,1)")));
    }
    let n = md.grid.len();
    let dens: Vec<f64> = md.log_density.iter().map(|l| l.exp()).collect();
    let mut cdf = vec![0.0; n];
    for i in 1..n {
        cdf[i] = cdf[i - 1] + 0.5 * (md.grid[i] - md.grid[i - 1]) * (dens[i - 1] + dens[i]);
    }
    let total = cdf[n - 1];
    let target = prob * total;
    let idx = cdf.partition_point(|c| *c < target).clamp(1, n - 1);
    let (c0, c1) = (cdf[idx - 1], cdf[idx]);
    let t = if c1 > c0 { (target - c0) / (c1 - c0) } else { 0.5 };
    let x = md.grid[idx - 1] + t * (md.grid[idx] - md.grid[idx - 1]);
    Ok(md.transform.to_natural(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn std_normal_density(grid_lo: f64, grid_hi: f64, n: usize) -> MarginalDensity {
        let grid: Vec<f64> = (0..n)
            .map(|i| grid_lo + (grid_hi - grid_lo) * i as f64 / (n - 1) as f64)
            .collect();
        let log_density: Vec<f64> = grid.iter().map(|x| -0.5 * x * x).collect();
        MarginalDensity::from_log_values(grid, log_density, CoordTransform::Identity)
    }

    #[test]
    fn marginal_density_normalizes() {
        let md = std_normal_density(-8.0, 8.0, 801);
        assert!((md.total_mass() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn quadrature_moments_of_standard_normal() {
        let md = std_normal_density(-8.0, 8.0, 1601);
        let m1 = moment_estimate(&md, 1, MomentMethod::Quadrature, None).unwrap();
        let m2 = moment_estimate(&md, 2, MomentMethod::Quadrature, None).unwrap();
        assert!(m1.abs() < 1e-3, "mean {m1}");
        assert!((m2 - 1.0).abs() < 1e-2, "second moment {m2}");
    }

    #[test]
    fn quantiles_of_standard_normal() {
        let md = std_normal_density(-8.0, 8.0, 3201);
        let q50 = quantile_estimate(&md, 0.5).unwrap();
        assert!(q50.abs() < 1e-3, "median {q50}");
        let q001 = quantile_estimate(&md, 0.001).unwrap();
        assert!((q001 + 3.0902).abs() < 0.01, "q(0.001) = {q001}");
        assert!(quantile_estimate(&md, 1.5).is_err());
        assert!(quantile_estimate(&md, 0.0).is_err());
    }

    #[test]
    fn optimal_target_constant_gradient_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let taus: Vec<f64> = (0..1000).map(|_| rng.gen_range(0.0..1.0)).collect();
        let grads = vec![2.5; 1000];
        let grid: Vec<f64> = (0..101).map(|i| i as f64 / 100.0).collect();
        let log_p = estimate_optimal_target(&taus, &grads, &grid).unwrap();
        for v in &log_p {
            assert!((v - log_p[0]).abs() < 1e-10);
        }
    }

    #[test]
    fn optimal_target_linear_gradient_recovers_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let taus: Vec<f64> = (0..200_000).map(|_| rng.gen_range(1.0..2.0)).collect();
        let grads: Vec<f64> = taus.clone();
        let grid: Vec<f64> = (0..101).map(|i| 1.0 + i as f64 / 100.0).collect();
        let log_p = estimate_optimal_target(&taus, &grads, &grid).unwrap();
        // p_opt(tau) proportional to tau; compare ratios mid-grid
        let r_est = (log_p[80] - log_p[20]).exp();
        let r_true = grid[80] / grid[20];
        assert!(
            (r_est / r_true - 1.0).abs() < 0.1,
            "ratio {r_est} vs {r_true}"
        );
    }

    #[test]
    fn optimal_target_needs_enough_draws() {
        let grid: Vec<f64> = (0..60).map(|i| i as f64).collect();
        assert!(matches!(
            estimate_optimal_target(&[0.0; 100], &[1.0; 100], &grid),
            Err(Error::SampleTooSmall { .. })
        ));
    }

    #[test]
    fn constant_kl_target_flat_for_constant_variance() {
        let link = LinkFunction::default();
        // identical +-1 gradient pairs deposited in every bin: Var U is
        // exactly 1 per bin, and on a narrow band f' is constant to 5e-4
        let grid: Vec<f64> = (0..60).map(|i| 0.44 + 0.02 * i as f64 / 59.0).collect();
        let mut a_values = Vec::new();
        let mut u_values = Vec::new();
        for &g in &grid {
            for (off, u) in [(0.0, 1.0), (0.0, -1.0), (1e-5, 1.0), (1e-5, -1.0)] {
                a_values.push(g + off);
                u_values.push(u);
            }
        }
        // pad to clear the minimum draw count
        while a_values.len() < 500 {
            a_values.push(grid[30]);
            u_values.push(if a_values.len() % 2 == 0 { 1.0 } else { -1.0 });
        }
        let log_p = constant_kl_target(&a_values, &u_values, &link, &grid).unwrap();
        let spread = log_p
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
            - log_p.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spread < 0.01, "spread {spread}");
    }

    #[test]
    fn bias_curve_clamps_outside_grid() {
        let basis = KernelBasis::default_mixed();
        let grid: Vec<f64> = (0..100).map(|i| i as f64 / 99.0).collect();
        let values: Vec<f64> = grid.iter().map(|t| 2.0 * t).collect();
        let curve = BiasCurve::fit(&basis, &grid, &values).unwrap();
        let (v_lo, d_lo) = curve.eval(-5.0);
        assert_eq!(d_lo, 0.0);
        assert!((v_lo - curve.eval(0.0).0).abs() < 1e-12);
        let (v, d) = curve.eval(0.5);
        assert!((v - 1.0).abs() < 1e-3);
        assert!((d - 2.0).abs() < 0.05);
    }
}
