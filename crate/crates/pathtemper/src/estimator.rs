//! Path-sampling estimators: pointwise thermodynamic gradients with tie
//! averaging, trapezoidal integration to the log normalizing constant,
//! kernel-basis least-squares smoothing, marginal-density estimation and the
//! importance-sampling slope initialization.

use crate::error::{Error, Result};
use crate::joint::JointPathModel;
use crate::model::ModelSpec;
use crate::pseudo_prior::{KernelBasis, PseudoPrior};
use crate::store::Draw;

/// Ridge added to the normal equations; the kernel basis is near-collinear.
pub const LS_RIDGE: f64 = 1e-8;

/// Default length of the lambda approximation grid.
pub const DEFAULT_GRID_LEN: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientMode {
    /// d/da log z(f(a)): U = f'(a) (log q - log psi).
    LogZ,
    /// d/da log p(a): additionally subtracts f'(a) * dlog c/dlambda at f(a).
    Marginal,
}

/// Sorted unique support points with tie-averaged gradients.
#[derive(Debug, Clone)]
pub struct OrderedGradients {
    a: Vec<f64>,
    u: Vec<f64>,
    multiplicity: Vec<usize>,
}

impl OrderedGradients {
    /// Builds from raw (a, gradient) pairs, averaging exact ties.
    pub fn from_pairs(mut pairs: Vec<(f64, f64)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyStore);
        }
        pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut a = Vec::new();
        let mut u = Vec::new();
        let mut multiplicity = Vec::new();
        let mut i = 0;
        while i < pairs.len() {
            let mut j = i + 1;
            let mut sum = pairs[i].1;
            while j < pairs.len() && pairs[j].0 == pairs[i].0 {
                sum += pairs[j].1;
                j += 1;
            }
            a.push(pairs[i].0);
            u.push(sum / (j - i) as f64);
            multiplicity.push(j - i);
            i = j;
        }
        Ok(OrderedGradients {
            a,
            u,
            multiplicity,
        })
    }

    pub fn support(&self) -> &[f64] {
        &self.a
    }

    pub fn gradients(&self) -> &[f64] {
        &self.u
    }

    pub fn multiplicities(&self) -> &[usize] {
        &self.multiplicity
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }
}

/// Pointwise gradients from joint draws on the tempering path.
///
/// Draws must already be flipped (a <= 1) in LogZ mode; the marginal mode
/// accepts the full range and flips internally since p(a) = p(2-a).
pub fn compute_pointwise_gradients(
    draws: &[&Draw],
    jpm: &JointPathModel,
    mode: GradientMode,
) -> Result<OrderedGradients> {
    if draws.is_empty() {
        return Err(Error::EmptyStore);
    }
    let link = jpm.link();
    let mut pairs = Vec::with_capacity(draws.len());
    for d in draws {
        if !(0.0..=2.0).contains(&d.a) {
            return Err(Error::Domain(format!("draw a = {} outside [0,2]", d.a)));
        }
        let a = match mode {
            GradientMode::LogZ => {
                if d.a > 1.0 {
                    return Err(Error::UnflippedDraws);
                }
                d.a
            }
            GradientMode::Marginal => d.a.min(2.0 - d.a),
        };
        let (f, df) = link.eval_unchecked(a);
        let mut u = df * (d.log_q - d.log_psi);
        if mode == GradientMode::Marginal {
            u -= df * jpm.pseudo_prior().dlog_c(f);
        }
        pairs.push((a, u));
    }
    OrderedGradients::from_pairs(pairs)
}

/// Prefix-sum form of the trapezoid integral over an ordered support,
/// starting from `x0` with constant (nearest-neighbor) end extrapolation.
#[derive(Debug, Clone)]
pub struct CumulativeIntegral {
    x0: f64,
    a: Vec<f64>,
    u: Vec<f64>,
    prefix: Vec<f64>,
}

impl CumulativeIntegral {
    pub fn new(og: &OrderedGradients, x0: f64) -> Self {
        let a = og.support().to_vec();
        let u = og.gradients().to_vec();
        let mut prefix = Vec::with_capacity(a.len());
        // leading panel [x0, a_1] uses the extrapolated U_0 = U_1
        prefix.push((a[0] - x0) * u[0]);
        for i in 1..a.len() {
            let panel = 0.5 * (a[i] - a[i - 1]) * (u[i] + u[i - 1]);
            prefix.push(prefix[i - 1] + panel);
        }
        CumulativeIntegral { x0, a, u, prefix }
    }

    /// Integral from x0 to x.
    pub fn eval(&self, x: f64) -> f64 {
        if x <= self.x0 {
            return 0.0;
        }
        if x < self.a[0] {
            return (x - self.x0) * self.u[0];
        }
        // last support index with a[i] <= x
        let idx = match self.a.binary_search_by(|v| v.total_cmp(&x)) {
            Ok(i) => i,
            Err(ins) => ins - 1,
        };
        let mut total = self.prefix[idx];
        if x > self.a[idx] {
            let u_end = if idx + 1 < self.a.len() {
                // nearest neighbor of x among the two bracketing points
                if x - self.a[idx] <= self.a[idx + 1] - x {
                    self.u[idx]
                } else {
                    self.u[idx + 1]
                }
            } else {
                self.u[idx]
            };
            total += 0.5 * (x - self.a[idx]) * (self.u[idx] + u_end);
        }
        total
    }
}

/// log z(f(a_star)) - log z(f(0)) by the trapezoidal rule over [0, a_star].
pub fn path_integrate(og: &OrderedGradients, a_star: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&a_star) {
        return Err(Error::Domain(format!("a_star = {a_star} outside [0,1]")));
    }
    if og.is_empty() {
        return Err(Error::EmptyStore);
    }
    Ok(CumulativeIntegral::new(og, 0.0).eval(a_star))
}

/// Solves the symmetric positive definite system A x = b by Cholesky.
fn solve_spd(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    // in-place lower Cholesky
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i][j];
            for k in 0..j {
                sum -= a[i][k] * a[j][k];
            }
            if i == j {
                a[i][j] = sum.max(1e-300).sqrt();
            } else {
                a[i][j] = sum / a[j][j];
            }
        }
    }
    // forward solve L y = b
    for i in 0..n {
        for k in 0..i {
            b[i] -= a[i][k] * b[k];
        }
        b[i] /= a[i][i];
    }
    // back solve L^T x = y
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            b[i] -= a[k][i] * b[k];
        }
        b[i] /= a[i][i];
    }
    b
}

/// Ridge least squares of `values` on the basis rows at `lambdas`, with a few
/// Tikhonov refinement passes so the ridge guards rank without biasing
/// in-span fits.
pub fn fit_basis(basis: &KernelBasis, lambdas: &[f64], values: &[f64]) -> Result<Vec<f64>> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("grid values".into()));
    }
    let p = basis.j() + 1;
    if lambdas.len() < p {
        return Err(Error::InsufficientCoverage(format!(
            "grid of {} points cannot identify {} coefficients",
            lambdas.len(),
            p
        )));
    }
    let rows: Vec<Vec<f64>> = lambdas.iter().map(|l| basis.row(*l)).collect();
    let mut ata = vec![vec![0.0; p]; p];
    for row in &rows {
        for i in 0..p {
            for j in 0..=i {
                ata[i][j] += row[i] * row[j];
            }
        }
    }
    for i in 0..p {
        for j in (i + 1)..p {
            ata[i][j] = ata[j][i];
        }
        ata[i][i] += LS_RIDGE;
    }
    let mut coeffs = vec![0.0; p];
    let mut residual: Vec<f64> = values.to_vec();
    for _ in 0..4 {
        let mut atr = vec![0.0; p];
        for (row, r) in rows.iter().zip(&residual) {
            for i in 0..p {
                atr[i] += row[i] * r;
            }
        }
        let delta = solve_spd(ata.clone(), atr);
        for i in 0..p {
            coeffs[i] += delta[i];
        }
        for (k, row) in rows.iter().enumerate() {
            let pred: f64 = row.iter().zip(&coeffs).map(|(x, c)| x * c).sum();
            residual[k] = values[k] - pred;
        }
    }
    Ok(coeffs)
}

/// The uniform lambda grid {i/I, i = 1..I}.
pub fn lambda_grid(len: usize) -> Vec<f64> {
    (1..=len).map(|i| i as f64 / len as f64).collect()
}

/// Least-squares coefficients for log z over the lambda grid.
pub fn fit_log_z(grid_values: &[f64], basis: &KernelBasis) -> Result<Vec<f64>> {
    let grid = lambda_grid(grid_values.len());
    fit_basis(basis, &grid, grid_values)
}

/// Grid log z values by path integration at a* = f^{-1}(lambda*).
pub fn grid_log_z(
    og: &OrderedGradients,
    jpm: &JointPathModel,
    grid_len: usize,
) -> Result<Vec<f64>> {
    let cum = CumulativeIntegral::new(og, 0.0);
    lambda_grid(grid_len)
        .into_iter()
        .map(|lam| {
            let a_star = jpm.link().inverse_rising(lam)?;
            Ok(cum.eval(a_star))
        })
        .collect()
}

/// Pseudo-prior update: copy the fitted coefficients, or divide out a
/// non-uniform target marginal (in a-space) and refit.
pub fn update_pseudo_prior(
    beta_z: &[f64],
    basis: &KernelBasis,
    link: &crate::link::LinkFunction,
    prior_target: Option<&dyn Fn(f64) -> f64>,
) -> Result<PseudoPrior> {
    match prior_target {
        None => Ok(PseudoPrior::from_coefficients(
            basis.clone(),
            beta_z.to_vec(),
        )),
        Some(target) => {
            let z = PseudoPrior::from_coefficients(basis.clone(), beta_z.to_vec());
            let grid = lambda_grid(DEFAULT_GRID_LEN);
            let mut values = Vec::with_capacity(grid.len());
            for &lam in &grid {
                let a = link.inverse_rising(lam)?;
                let p = target(a);
                if !(p > 0.0) {
                    return Err(Error::Domain(format!(
                        "prior target nonpositive at a = {a}"
                    )));
                }
                values.push(z.log_c(lam) - p.ln());
            }
            let coeffs = fit_basis(basis, &grid, &values)?;
            Ok(PseudoPrior::from_coefficients(basis.clone(), coeffs))
        }
    }
}

/// Assembled log normalizing constant estimate over the lambda grid.
#[derive(Debug, Clone)]
pub struct PathEstimate {
    /// Grid lambda_i = i/I, i = 1..I.
    pub grid_lambda: Vec<f64>,
    /// Path-integrated values at the grid (reference log z(f(0)) = 0).
    pub grid_logz_raw: Vec<f64>,
    /// Fitted coefficients over the kernel basis.
    pub coefficients: Vec<f64>,
    /// Smoothed curve on the grid.
    pub grid_logz_fitted: Vec<f64>,
    /// Pareto tail shape of the inverse-marginal ratios at this adaptation.
    pub khat: f64,
}

/// Marginal density estimate over a in [0, 2].
#[derive(Debug, Clone)]
pub struct MarginalEstimate {
    /// Uniform grid over [0, 2].
    pub a_grid: Vec<f64>,
    /// log p-hat, normalized to integrate to one over the grid.
    pub log_p: Vec<f64>,
    /// log p-hat at each input draw's a (same order as the input slice).
    pub log_p_at_draws: Vec<f64>,
}

/// Estimates the sampled marginal density of a from the current adaptation's
/// draws via path sampling with the marginal-mode gradients. The marginal is
/// symmetric about a = 1, so integration happens on the flipped half.
pub fn estimate_marginal(
    draws: &[&Draw],
    jpm: &JointPathModel,
    grid_len: usize,
) -> Result<MarginalEstimate> {
    let og = compute_pointwise_gradients(draws, jpm, GradientMode::Marginal)?;
    if og.len() < 10 {
        return Err(Error::InsufficientCoverage(format!(
            "only {} unique a values",
            og.len()
        )));
    }
    let cum = CumulativeIntegral::new(&og, 0.0);
    let n = grid_len.max(3);
    let a_grid: Vec<f64> = (0..n).map(|i| 2.0 * i as f64 / (n - 1) as f64).collect();
    let mut log_p: Vec<f64> = a_grid
        .iter()
        .map(|&a| cum.eval(a.min(2.0 - a)))
        .collect();
    // normalize by trapezoid over [0, 2], max-shifted
    let max = log_p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut mass = 0.0;
    for i in 1..n {
        let pa = (log_p[i - 1] - max).exp();
        let pb = (log_p[i] - max).exp();
        mass += 0.5 * (a_grid[i] - a_grid[i - 1]) * (pa + pb);
    }
    let log_norm = max + mass.ln();
    for v in &mut log_p {
        *v -= log_norm;
    }
    let log_p_at_draws = draws
        .iter()
        .map(|d| cum.eval(d.a.min(2.0 - d.a)) - log_norm)
        .collect();
    Ok(MarginalEstimate {
        a_grid,
        log_p,
        log_p_at_draws,
    })
}

/// Importance-sampling slope initialization: the log of the average density
/// ratio between the two endpoints over base draws, log-sum-exp stabilized.
pub fn is_init_slope(target: &ModelSpec, base: &ModelSpec, base_draws: &[Vec<f64>]) -> Result<f64> {
    if base_draws.is_empty() {
        return Err(Error::EmptyStore);
    }
    let mut log_ratios = Vec::with_capacity(base_draws.len());
    for theta in base_draws {
        let (lq, _) = target.eval_unchecked(theta, 1.0);
        let (lp, _) = base.eval_unchecked(theta, 0.0);
        log_ratios.push(lq - lp);
    }
    log_mean_exp(&log_ratios)
}

/// log( mean(exp(x)) ) with max-shift; errors when every element is -inf.
pub fn log_mean_exp(xs: &[f64]) -> Result<f64> {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::DisjointSupports);
    }
    let sum: f64 = xs.iter().map(|x| (x - max).exp()).sum();
    Ok(max + (sum / xs.len() as f64).ln())
}
