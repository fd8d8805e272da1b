//! Gradient-based MCMC core: leapfrog integration, multinomial dynamic
//! trajectories with doubling (NUTS-style), dual-averaging step size
//! adaptation and windowed diagonal mass estimation.
//!
//! Chains are fully deterministic given (seed, chain id): each chain owns a
//! counter-based RNG stream and results merge in chain order.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Anything the sampler can draw from: an unconstrained log density with
/// gradient. Evaluation must be pure and reentrant.
pub trait HmcTarget: Sync {
    fn dim(&self) -> usize;
    fn log_density_gradient(&self, pos: &[f64]) -> (f64, Vec<f64>);
}

impl<T: HmcTarget> HmcTarget for &T {
    fn dim(&self) -> usize {
        (*self).dim()
    }
    fn log_density_gradient(&self, pos: &[f64]) -> (f64, Vec<f64>) {
        (*self).log_density_gradient(pos)
    }
}

/// A plain model slice at fixed lambda, for baseline runs on the raw target.
pub struct FixedLambdaTarget<'a> {
    pub model: &'a crate::model::ModelSpec,
    pub lambda: f64,
}

impl HmcTarget for FixedLambdaTarget<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }
    fn log_density_gradient(&self, pos: &[f64]) -> (f64, Vec<f64>) {
        self.model.eval_unchecked(pos, self.lambda)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Trajectory {
    /// Dynamic multinomial trajectories with doubling.
    Nuts,
    /// Fixed-step HMC with the step count jittered uniformly in [1, max_steps].
    PlainHmc { max_steps: usize },
}

#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup_draws: usize,
    pub kept_draws: usize,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    pub seed: u64,
    pub trajectory: Trajectory,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            chains: 4,
            warmup_draws: 500,
            kept_draws: 500,
            target_accept: 0.8,
            max_tree_depth: 10,
            seed: 1,
            trajectory: Trajectory::Nuts,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 {
            return Err(Error::InvalidConfig("chains must be positive".into()));
        }
        if self.kept_draws == 0 {
            return Err(Error::InvalidConfig("kept_draws must be positive".into()));
        }
        if !(0.0 < self.target_accept && self.target_accept < 1.0) {
            return Err(Error::InvalidConfig("target_accept must be in (0,1)".into()));
        }
        if self.max_tree_depth == 0 {
            return Err(Error::InvalidConfig("max_tree_depth must be positive".into()));
        }
        Ok(())
    }
}

/// Kept draws of one chain.
#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub positions: Vec<Vec<f64>>,
    pub logp: Vec<f64>,
    pub divergent: Vec<bool>,
    pub adapted_stepsize: f64,
    pub inv_mass: Vec<f64>,
    pub n_grad_evals: u64,
    pub warmup_divergences: usize,
}

/// Output of a multi-chain run, merged in chain-id order.
#[derive(Debug, Clone)]
pub struct RawChains {
    pub chains: Vec<ChainOutput>,
    pub dim: usize,
}

impl RawChains {
    pub fn total_grad_evals(&self) -> u64 {
        self.chains.iter().map(|c| c.n_grad_evals).sum()
    }

    pub fn total_kept(&self) -> usize {
        self.chains.iter().map(|c| c.positions.len()).sum()
    }

    /// Draws of one coordinate, per chain.
    pub fn coordinate_chains(&self, coord: usize) -> Vec<Vec<f64>> {
        self.chains
            .iter()
            .map(|c| c.positions.iter().map(|p| p[coord]).collect())
            .collect()
    }
}

/// One leapfrog step of the Hamiltonian with diagonal mass matrix `mass_diag`
/// (the position update uses its inverse). Returns a divergence signal when
/// the gradient turns non-finite; the caller rejects the trajectory.
pub fn leapfrog_step(
    position: &[f64],
    momentum: &[f64],
    stepsize: f64,
    mass_diag: &[f64],
    gradient_fn: &mut dyn FnMut(&[f64]) -> (f64, Vec<f64>),
) -> std::result::Result<(Vec<f64>, Vec<f64>), Divergence> {
    debug_assert!(stepsize > 0.0);
    debug_assert!(mass_diag.iter().all(|m| *m > 0.0));
    let (_, grad) = gradient_fn(position);
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Divergence);
    }
    let mut mom: Vec<f64> = momentum
        .iter()
        .zip(&grad)
        .map(|(p, g)| p + 0.5 * stepsize * g)
        .collect();
    let pos: Vec<f64> = position
        .iter()
        .zip(mom.iter().zip(mass_diag))
        .map(|(x, (p, m))| x + stepsize * p / m)
        .collect();
    let (_, grad) = gradient_fn(&pos);
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Divergence);
    }
    for (p, g) in mom.iter_mut().zip(&grad) {
        *p += 0.5 * stepsize * g;
    }
    Ok((pos, mom))
}

#[derive(Debug, Clone, Copy)]
pub struct Divergence;

/// Nesterov dual averaging on the log step size.
#[derive(Debug, Clone)]
pub struct DualAverage {
    mu: f64,
    log_step: f64,
    log_step_avg: f64,
    hbar: f64,
    count: u64,
    target: f64,
    gamma: f64,
    t0: f64,
    kappa: f64,
}

impl DualAverage {
    pub fn new(initial_step: f64, target: f64) -> Self {
        DualAverage {
            mu: (10.0 * initial_step).ln(),
            log_step: initial_step.ln(),
            log_step_avg: initial_step.ln(),
            hbar: 0.0,
            count: 1,
            target,
            gamma: 0.05,
            t0: 10.0,
            kappa: 0.75,
        }
    }

    pub fn advance(&mut self, accept_stat: f64) {
        let w = 1.0 / (self.count as f64 + self.t0);
        self.hbar = (1.0 - w) * self.hbar + w * (self.target - accept_stat);
        self.log_step = self.mu - self.hbar * (self.count as f64).sqrt() / self.gamma;
        let mk = (self.count as f64).powf(-self.kappa);
        self.log_step_avg = mk * self.log_step + (1.0 - mk) * self.log_step_avg;
        self.count += 1;
    }

    pub fn current(&self) -> f64 {
        self.log_step.exp()
    }

    pub fn averaged(&self) -> f64 {
        self.log_step_avg.exp()
    }

    /// Restart the averaging around a new center.
    pub fn restart(&mut self, step: f64) {
        *self = DualAverage::new(step, self.target);
    }
}

/// Streaming mean/variance accumulator.
#[derive(Debug, Clone)]
struct Welford {
    n: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Welford {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for i in 0..x.len() {
            let d = x[i] - self.mean[i];
            self.mean[i] += d / n;
            self.m2[i] += d * (x[i] - self.mean[i]);
        }
    }

    /// Regularized diagonal variance estimate (shrunk toward 1e-3).
    fn regularized_variance(&self) -> Option<Vec<f64>> {
        if self.n < 3 {
            return None;
        }
        let n = self.n as f64;
        Some(
            self.m2
                .iter()
                .map(|m2| {
                    let var = m2 / (n - 1.0);
                    (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
                })
                .collect(),
        )
    }
}

struct Hamiltonian<'a, T: HmcTarget> {
    target: &'a T,
    inv_mass: Vec<f64>,
    n_evals: u64,
}

impl<'a, T: HmcTarget> Hamiltonian<'a, T> {
    fn logp_grad(&mut self, pos: &[f64]) -> (f64, Vec<f64>) {
        self.n_evals += 1;
        self.target.log_density_gradient(pos)
    }

    fn kinetic(&self, mom: &[f64]) -> f64 {
        0.5 * mom
            .iter()
            .zip(&self.inv_mass)
            .map(|(p, im)| p * p * im)
            .sum::<f64>()
    }

    fn sample_momentum(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.inv_mass
            .iter()
            .map(|im| standard_normal(rng) / im.sqrt())
            .collect()
    }

    /// One leapfrog step; None signals a divergence (non-finite values).
    fn leapfrog(
        &mut self,
        pos: &[f64],
        mom: &[f64],
        grad: &[f64],
        eps: f64,
    ) -> Option<(Vec<f64>, Vec<f64>, f64, Vec<f64>)> {
        let mut mom2: Vec<f64> = mom
            .iter()
            .zip(grad)
            .map(|(p, g)| p + 0.5 * eps * g)
            .collect();
        let pos2: Vec<f64> = pos
            .iter()
            .zip(mom2.iter().zip(&self.inv_mass))
            .map(|(x, (p, im))| x + eps * p * im)
            .collect();
        if pos2.iter().any(|x| !x.is_finite()) {
            return None;
        }
        let (lp, grad2) = self.logp_grad(&pos2);
        if !lp.is_finite() || grad2.iter().any(|g| !g.is_finite()) {
            return None;
        }
        for (p, g) in mom2.iter_mut().zip(&grad2) {
            *p += 0.5 * eps * g;
        }
        Some((pos2, mom2, lp, grad2))
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller on the chain stream; cheap enough relative to density evals
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

const MAX_ENERGY_ERROR: f64 = 1000.0;

/// State carried through one dynamic trajectory.
struct TreeState {
    minus_pos: Vec<f64>,
    minus_mom: Vec<f64>,
    minus_grad: Vec<f64>,
    plus_pos: Vec<f64>,
    plus_mom: Vec<f64>,
    plus_grad: Vec<f64>,
    proposal: Vec<f64>,
    proposal_logp: f64,
    log_sum_weight: f64,
    sum_accept: f64,
    n_steps: usize,
    divergent: bool,
    turning: bool,
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn is_turning(state: &TreeState, inv_mass: &[f64]) -> bool {
    let span: Vec<f64> = state
        .plus_pos
        .iter()
        .zip(&state.minus_pos)
        .map(|(p, m)| p - m)
        .collect();
    let dot_minus: f64 = span
        .iter()
        .zip(state.minus_mom.iter().zip(inv_mass))
        .map(|(s, (p, im))| s * p * im)
        .sum();
    let dot_plus: f64 = span
        .iter()
        .zip(state.plus_mom.iter().zip(inv_mass))
        .map(|(s, (p, im))| s * p * im)
        .sum();
    dot_minus < 0.0 || dot_plus < 0.0
}

#[allow(clippy::too_many_arguments)]
fn build_tree<T: HmcTarget>(
    ham: &mut Hamiltonian<T>,
    rng: &mut ChaCha8Rng,
    depth: usize,
    pos: &[f64],
    mom: &[f64],
    grad: &[f64],
    direction: f64,
    eps: f64,
    h0: f64,
) -> TreeState {
    if depth == 0 {
        let step = ham.leapfrog(pos, mom, grad, direction * eps);
        return match step {
            None => TreeState {
                minus_pos: pos.to_vec(),
                minus_mom: mom.to_vec(),
                minus_grad: grad.to_vec(),
                plus_pos: pos.to_vec(),
                plus_mom: mom.to_vec(),
                plus_grad: grad.to_vec(),
                proposal: pos.to_vec(),
                proposal_logp: f64::NEG_INFINITY,
                log_sum_weight: f64::NEG_INFINITY,
                sum_accept: 0.0,
                n_steps: 1,
                divergent: true,
                turning: false,
            },
            Some((pos2, mom2, lp, grad2)) => {
                let h = -lp + ham.kinetic(&mom2);
                let energy_error = h - h0;
                let divergent = !h.is_finite() || energy_error > MAX_ENERGY_ERROR;
                let log_weight = if divergent { f64::NEG_INFINITY } else { -energy_error };
                let accept = if energy_error < 0.0 {
                    1.0
                } else {
                    (-energy_error).exp()
                };
                TreeState {
                    minus_pos: pos2.clone(),
                    minus_mom: mom2.clone(),
                    minus_grad: grad2.clone(),
                    plus_pos: pos2.clone(),
                    plus_mom: mom2.clone(),
                    plus_grad: grad2.clone(),
                    proposal: pos2,
                    proposal_logp: lp,
                    log_sum_weight: log_weight,
                    sum_accept: if divergent { 0.0 } else { accept },
                    n_steps: 1,
                    divergent,
                    turning: false,
                }
            }
        };
    }

    let mut first = build_tree(ham, rng, depth - 1, pos, mom, grad, direction, eps, h0);
    if first.divergent || first.turning {
        return first;
    }
    let (from_pos, from_mom, from_grad) = if direction > 0.0 {
        (
            first.plus_pos.clone(),
            first.plus_mom.clone(),
            first.plus_grad.clone(),
        )
    } else {
        (
            first.minus_pos.clone(),
            first.minus_mom.clone(),
            first.minus_grad.clone(),
        )
    };
    let second = build_tree(
        ham, rng, depth - 1, &from_pos, &from_mom, &from_grad, direction, eps, h0,
    );

    // merge ends
    if direction > 0.0 {
        first.plus_pos = second.plus_pos.clone();
        first.plus_mom = second.plus_mom.clone();
        first.plus_grad = second.plus_grad.clone();
    } else {
        first.minus_pos = second.minus_pos.clone();
        first.minus_mom = second.minus_mom.clone();
        first.minus_grad = second.minus_grad.clone();
    }
    first.sum_accept += second.sum_accept;
    first.n_steps += second.n_steps;
    first.divergent |= second.divergent;
    first.turning |= second.turning;

    if !first.divergent && !first.turning {
        // multinomial choice between the two halves
        let total = log_add_exp(first.log_sum_weight, second.log_sum_weight);
        if (rng.gen::<f64>().ln()) < second.log_sum_weight - total {
            first.proposal = second.proposal.clone();
            first.proposal_logp = second.proposal_logp;
        }
        first.log_sum_weight = total;
        first.turning = is_turning(&first, &ham.inv_mass);
    }
    first
}

struct DrawResult {
    position: Vec<f64>,
    logp: f64,
    grad: Vec<f64>,
    divergent: bool,
    accept_stat: f64,
}

fn nuts_draw<T: HmcTarget>(
    ham: &mut Hamiltonian<T>,
    rng: &mut ChaCha8Rng,
    pos: &[f64],
    logp: f64,
    grad: &[f64],
    eps: f64,
    max_depth: usize,
) -> DrawResult {
    let mom = ham.sample_momentum(rng);
    let h0 = -logp + ham.kinetic(&mom);
    let mut state = TreeState {
        minus_pos: pos.to_vec(),
        minus_mom: mom.clone(),
        minus_grad: grad.to_vec(),
        plus_pos: pos.to_vec(),
        plus_mom: mom.clone(),
        plus_grad: grad.to_vec(),
        proposal: pos.to_vec(),
        proposal_logp: logp,
        log_sum_weight: 0.0,
        sum_accept: 0.0,
        n_steps: 0,
        divergent: false,
        turning: false,
    };

    for depth in 0..max_depth {
        let direction = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let (from_pos, from_mom, from_grad) = if direction > 0.0 {
            (
                state.plus_pos.clone(),
                state.plus_mom.clone(),
                state.plus_grad.clone(),
            )
        } else {
            (
                state.minus_pos.clone(),
                state.minus_mom.clone(),
                state.minus_grad.clone(),
            )
        };
        let subtree = build_tree(
            ham, rng, depth, &from_pos, &from_mom, &from_grad, direction, eps, h0,
        );
        state.sum_accept += subtree.sum_accept;
        state.n_steps += subtree.n_steps;
        if subtree.divergent {
            state.divergent = true;
            break;
        }
        if subtree.turning {
            break;
        }
        // biased progressive sampling toward the fresh half
        let accept_sub = (subtree.log_sum_weight - state.log_sum_weight).exp();
        if rng.gen::<f64>() < accept_sub {
            state.proposal = subtree.proposal.clone();
            state.proposal_logp = subtree.proposal_logp;
        }
        state.log_sum_weight = log_add_exp(state.log_sum_weight, subtree.log_sum_weight);
        if direction > 0.0 {
            state.plus_pos = subtree.plus_pos;
            state.plus_mom = subtree.plus_mom;
            state.plus_grad = subtree.plus_grad;
        } else {
            state.minus_pos = subtree.minus_pos;
            state.minus_mom = subtree.minus_mom;
            state.minus_grad = subtree.minus_grad;
        }
        if is_turning(&state, &ham.inv_mass) {
            break;
        }
    }

    let accept_stat = if state.n_steps > 0 {
        state.sum_accept / state.n_steps as f64
    } else {
        0.0
    };
    let (position, logp) = (state.proposal, state.proposal_logp);
    let (lp, grad) = if position == pos {
        (logp, state.minus_grad.clone())
    } else {
        // recompute the gradient at the accepted point; the tree does not carry it
        ham.logp_grad(&position)
    };
    DrawResult {
        position,
        logp: lp,
        grad,
        divergent: state.divergent,
        accept_stat,
    }
}

fn plain_hmc_draw<T: HmcTarget>(
    ham: &mut Hamiltonian<T>,
    rng: &mut ChaCha8Rng,
    pos: &[f64],
    logp: f64,
    grad: &[f64],
    eps: f64,
    max_steps: usize,
) -> DrawResult {
    let mom = ham.sample_momentum(rng);
    let h0 = -logp + ham.kinetic(&mom);
    let n_steps = rng.gen_range(1..=max_steps.max(1));
    let mut cur_pos = pos.to_vec();
    let mut cur_mom = mom;
    let mut cur_grad = grad.to_vec();
    let mut cur_logp = logp;
    for _ in 0..n_steps {
        match ham.leapfrog(&cur_pos, &cur_mom, &cur_grad, eps) {
            Some((p, m, lp, g)) => {
                cur_pos = p;
                cur_mom = m;
                cur_logp = lp;
                cur_grad = g;
            }
            None => {
                return DrawResult {
                    position: pos.to_vec(),
                    logp,
                    grad: grad.to_vec(),
                    divergent: true,
                    accept_stat: 0.0,
                };
            }
        }
    }
    let h1 = -cur_logp + ham.kinetic(&cur_mom);
    let energy_error = h1 - h0;
    if !h1.is_finite() || energy_error > MAX_ENERGY_ERROR {
        return DrawResult {
            position: pos.to_vec(),
            logp,
            grad: grad.to_vec(),
            divergent: true,
            accept_stat: 0.0,
        };
    }
    let accept = (-energy_error).exp().min(1.0);
    if rng.gen::<f64>() < accept {
        DrawResult {
            position: cur_pos,
            logp: cur_logp,
            grad: cur_grad,
            divergent: false,
            accept_stat: accept,
        }
    } else {
        DrawResult {
            position: pos.to_vec(),
            logp,
            grad: grad.to_vec(),
            divergent: false,
            accept_stat: accept,
        }
    }
}

fn find_initial_stepsize<T: HmcTarget>(
    ham: &mut Hamiltonian<T>,
    rng: &mut ChaCha8Rng,
    pos: &[f64],
    logp: f64,
    grad: &[f64],
) -> f64 {
    let mut eps = 1.0;
    let mom = ham.sample_momentum(rng);
    let h0 = -logp + ham.kinetic(&mom);
    let delta = |ham: &mut Hamiltonian<T>, eps: f64| -> f64 {
        match ham.leapfrog(pos, &mom, grad, eps) {
            Some((_, m2, lp, _)) => h0 - (-lp + ham.kinetic(&m2)),
            None => f64::NEG_INFINITY,
        }
    };
    let target = (0.8f64).ln();
    let mut d = delta(ham, eps);
    let go_up = d > target;
    for _ in 0..100 {
        if go_up {
            eps *= 2.0;
        } else {
            eps *= 0.5;
        }
        d = delta(ham, eps);
        if go_up != (d > target) {
            break;
        }
    }
    eps.clamp(1e-10, 1e7)
}

/// Warmup window layout in the style of three-phase adaptation.
fn warmup_windows(warmup: usize) -> (usize, usize, Vec<usize>) {
    if warmup == 0 {
        return (0, 0, vec![]);
    }
    if warmup < 150 {
        let init = (warmup as f64 * 0.15).round() as usize;
        let term = (warmup as f64 * 0.10).round() as usize;
        let mid = warmup - init - term;
        return (init, term, if mid > 0 { vec![mid] } else { vec![] });
    }
    let init = 75;
    let term = 50;
    let mut remaining = warmup - init - term;
    let mut windows = vec![];
    let mut w = 25;
    while remaining > 0 {
        if remaining < 2 * w {
            windows.push(remaining);
            remaining = 0;
        } else {
            windows.push(w);
            remaining -= w;
            w *= 2;
        }
    }
    (init, term, windows)
}

fn run_single_chain<T: HmcTarget>(
    target: &T,
    cfg: &SamplerConfig,
    chain_id: usize,
) -> Result<ChainOutput> {
    let dim = target.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(chain_id as u64 + 1);

    let mut ham = Hamiltonian {
        target,
        inv_mass: vec![1.0; dim],
        n_evals: 0,
    };

    // random initialization; bail after 100 non-finite starts
    let mut init: Option<(Vec<f64>, f64, Vec<f64>)> = None;
    for _ in 0..100 {
        let pos: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let (lp, grad) = ham.logp_grad(&pos);
        if lp.is_finite() && grad.iter().all(|g| g.is_finite()) {
            init = Some((pos, lp, grad));
            break;
        }
    }
    let (mut pos, mut logp, mut grad) = init.ok_or(Error::InitFailure(100))?;

    let mut eps = find_initial_stepsize(&mut ham, &mut rng, &pos, logp, &grad);
    let mut da = DualAverage::new(eps, cfg.target_accept);

    let (init_buf, term_buf, windows) = warmup_windows(cfg.warmup_draws);
    let mut window_ends = vec![];
    let mut acc = init_buf;
    for w in &windows {
        acc += w;
        window_ends.push(acc);
    }
    let mut welford = Welford::new(dim);
    let mut warmup_divergences = 0usize;

    for it in 0..cfg.warmup_draws {
        let draw = match cfg.trajectory {
            Trajectory::Nuts => nuts_draw(
                &mut ham,
                &mut rng,
                &pos,
                logp,
                &grad,
                da.current(),
                cfg.max_tree_depth,
            ),
            Trajectory::PlainHmc { max_steps } => plain_hmc_draw(
                &mut ham,
                &mut rng,
                &pos,
                logp,
                &grad,
                da.current(),
                max_steps,
            ),
        };
        pos = draw.position;
        logp = draw.logp;
        grad = draw.grad;
        if draw.divergent {
            warmup_divergences += 1;
        }
        da.advance(draw.accept_stat);

        let in_mass_phase = it >= init_buf && it < cfg.warmup_draws - term_buf;
        if in_mass_phase {
            welford.push(&pos);
        }
        if window_ends.contains(&(it + 1)) {
            if let Some(var) = welford.regularized_variance() {
                ham.inv_mass = var;
                welford = Welford::new(dim);
                // re-center the step size search for the new metric
                eps = find_initial_stepsize(&mut ham, &mut rng, &pos, logp, &grad);
                da.restart(eps);
            }
        }
    }

    if cfg.warmup_draws > 0 {
        let frac = warmup_divergences as f64 / cfg.warmup_draws as f64;
        if frac > 0.5 {
            return Err(Error::WarmupDivergence { frac: frac * 100.0 });
        }
        eps = da.averaged();
    }

    let mut out = ChainOutput {
        positions: Vec::with_capacity(cfg.kept_draws),
        logp: Vec::with_capacity(cfg.kept_draws),
        divergent: Vec::with_capacity(cfg.kept_draws),
        adapted_stepsize: eps,
        inv_mass: ham.inv_mass.clone(),
        n_grad_evals: 0,
        warmup_divergences,
    };

    for _ in 0..cfg.kept_draws {
        let draw = match cfg.trajectory {
            Trajectory::Nuts => {
                nuts_draw(&mut ham, &mut rng, &pos, logp, &grad, eps, cfg.max_tree_depth)
            }
            Trajectory::PlainHmc { max_steps } => {
                plain_hmc_draw(&mut ham, &mut rng, &pos, logp, &grad, eps, max_steps)
            }
        };
        pos = draw.position;
        logp = draw.logp;
        grad = draw.grad;
        out.positions.push(pos.clone());
        out.logp.push(logp);
        out.divergent.push(draw.divergent);
    }
    out.n_grad_evals = ham.n_evals;
    Ok(out)
}

/// Number of worker threads for chain parallelism, honoring PATHTEMPER_THREADS.
fn chain_threads(chains: usize) -> usize {
    match std::env::var("PATHTEMPER_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        Some(n) if n >= 1 => n.min(chains),
        _ => chains,
    }
}

/// Runs all chains of `cfg` against `target`; deterministic in (seed, chain).
pub fn run_chains<T: HmcTarget>(target: &T, cfg: &SamplerConfig) -> Result<RawChains> {
    cfg.validate()?;
    let threads = chain_threads(cfg.chains);
    let results: Vec<Result<ChainOutput>> = if threads <= 1 || cfg.chains == 1 {
        (0..cfg.chains)
            .map(|c| run_single_chain(target, cfg, c))
            .collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
        pool.install(|| {
            use rayon::prelude::*;
            (0..cfg.chains)
                .into_par_iter()
                .map(|c| run_single_chain(target, cfg, c))
                .collect()
        })
    };
    let mut chains = Vec::with_capacity(cfg.chains);
    for r in results {
        chains.push(r?);
    }
    Ok(RawChains {
        chains,
        dim: target.dim(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::std_normal;
    use crate::testutil::{mean, variance};

    struct Quadratic;
    impl HmcTarget for Quadratic {
        fn dim(&self) -> usize {
            1
        }
        fn log_density_gradient(&self, pos: &[f64]) -> (f64, Vec<f64>) {
            (-0.5 * pos[0] * pos[0], vec![-pos[0]])
        }
    }

    #[test]
    fn leapfrog_free_particle() {
        let mut zero_grad = |_: &[f64]| (0.0, vec![0.0, 0.0]);
        let (pos, mom) = leapfrog_step(&[1.0, -2.0], &[0.5, 4.0], 0.1, &[1.0, 2.0], &mut zero_grad)
            .unwrap();
        assert!((pos[0] - (1.0 + 0.1 * 0.5)).abs() < 1e-15);
        assert!((pos[1] - (-2.0 + 0.1 * 4.0 / 2.0)).abs() < 1e-15);
        assert_eq!(mom, vec![0.5, 4.0]);
    }

    #[test]
    fn leapfrog_energy_error_small_on_harmonic_oscillator() {
        let mut grad = |p: &[f64]| (-0.5 * p[0] * p[0], vec![-p[0]]);
        let (pos, mom) = leapfrog_step(&[1.0], &[0.0], 0.01, &[1.0], &mut grad).unwrap();
        let h0 = 0.5 * 1.0; // potential 1/2 xi^2 at xi=1, zero kinetic
        let h1 = 0.5 * pos[0] * pos[0] + 0.5 * mom[0] * mom[0];
        assert!((h1 - h0).abs() < 1e-4, "energy error {}", (h1 - h0).abs());
    }

    #[test]
    fn leapfrog_reversible() {
        let mut grad = |p: &[f64]| (0.0, vec![-p[0]]);
        let start_pos = [0.7];
        let start_mom = [(-0.3f64)];
        let (p1, m1) =
            leapfrog_step(&start_pos, &start_mom, 0.05, &[1.3], &mut grad).unwrap();
        let m1_neg: Vec<f64> = m1.iter().map(|m| -m).collect();
        let (p2, m2) = leapfrog_step(&p1, &m1_neg, 0.05, &[1.3], &mut grad).unwrap();
        assert!((p2[0] - start_pos[0]).abs() < 1e-12);
        assert!((-m2[0] - start_mom[0]).abs() < 1e-12);
    }

    #[test]
    fn leapfrog_divergence_on_nonfinite_gradient() {
        let mut grad = |_: &[f64]| (f64::NAN, vec![f64::NAN]);
        assert!(leapfrog_step(&[0.0], &[1.0], 0.1, &[1.0], &mut grad).is_err());
    }

    #[test]
    fn dual_average_moves_monotonically() {
        // skip the first update: it recenters around mu = log(10 eps0)
        let mut da = DualAverage::new(0.5, 0.8);
        da.advance(1.0);
        let mut last = da.current();
        for _ in 0..20 {
            da.advance(1.0); // always above target
            assert!(da.current() >= last, "{} < {last}", da.current());
            last = da.current();
        }
        let mut da = DualAverage::new(0.5, 0.8);
        da.advance(0.0);
        let mut last = da.current();
        for _ in 0..20 {
            da.advance(0.0); // always below target
            assert!(da.current() <= last, "{} > {last}", da.current());
            last = da.current();
        }
    }

    #[test]
    fn std_normal_moments_recovered() {
        let model = std_normal(1);
        let target = FixedLambdaTarget {
            model: &model,
            lambda: 0.0,
        };
        let cfg = SamplerConfig {
            chains: 4,
            warmup_draws: 500,
            kept_draws: 1000,
            seed: 7,
            ..Default::default()
        };
        let out = run_chains(&target, &cfg).unwrap();
        let draws: Vec<f64> = out
            .chains
            .iter()
            .flat_map(|c| c.positions.iter().map(|p| p[0]))
            .collect();
        let m = mean(&draws);
        let v = variance(&draws);
        // crude MCSE bound: sd/sqrt(n) inflated 4x for autocorrelation
        let mcse = (v / draws.len() as f64).sqrt();
        assert!(m.abs() < 4.0 * mcse.max(0.02), "mean {m}, mcse {mcse}");
        assert!((v - 1.0).abs() < 0.1, "variance {v}");
    }

    #[test]
    fn identical_config_reproduces_bitwise() {
        let model = std_normal(2);
        let target = FixedLambdaTarget {
            model: &model,
            lambda: 0.0,
        };
        let cfg = SamplerConfig {
            chains: 2,
            warmup_draws: 200,
            kept_draws: 100,
            seed: 42,
            ..Default::default()
        };
        let a = run_chains(&target, &cfg).unwrap();
        let b = run_chains(&target, &cfg).unwrap();
        for (ca, cb) in a.chains.iter().zip(&b.chains) {
            assert_eq!(ca.positions.len(), cb.positions.len());
            for (pa, pb) in ca.positions.iter().zip(&cb.positions) {
                for (xa, xb) in pa.iter().zip(pb) {
                    assert_eq!(xa.to_bits(), xb.to_bits());
                }
            }
        }
    }

    #[test]
    fn zero_kept_draws_rejected() {
        let model = std_normal(1);
        let target = FixedLambdaTarget {
            model: &model,
            lambda: 0.0,
        };
        let cfg = SamplerConfig {
            kept_draws: 0,
            ..Default::default()
        };
        assert!(matches!(run_chains(&target, &cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn nonfinite_target_everywhere_fails_init() {
        struct Bad;
        impl HmcTarget for Bad {
            fn dim(&self) -> usize {
                1
            }
            fn log_density_gradient(&self, _: &[f64]) -> (f64, Vec<f64>) {
                (f64::NEG_INFINITY, vec![f64::NAN])
            }
        }
        let cfg = SamplerConfig::default();
        assert!(matches!(run_chains(&Bad, &cfg), Err(Error::InitFailure(100))));
    }

    #[test]
    fn divergence_flags_propagate_not_nan() {
        // gradient blows up for |x| > 3: draws must carry flags, never NaN
        struct Cliff;
        impl HmcTarget for Cliff {
            fn dim(&self) -> usize {
                1
            }
            fn log_density_gradient(&self, pos: &[f64]) -> (f64, Vec<f64>) {
                let x = pos[0];
                if x.abs() > 3.0 {
                    (f64::NAN, vec![f64::NAN])
                } else {
                    // steep well pushes trajectories toward the cliff
                    (-0.5 * x * x + x.powi(4) * 0.05, vec![-x + 0.2 * x.powi(3)])
                }
            }
        }
        let cfg = SamplerConfig {
            chains: 2,
            warmup_draws: 100,
            kept_draws: 400,
            seed: 3,
            ..Default::default()
        };
        if let Ok(out) = run_chains(&Cliff, &cfg) {
            for c in &out.chains {
                for p in &c.positions {
                    assert!(p[0].is_finite());
                }
            }
        }
    }

    #[test]
    fn detailed_balance_proxy_variance_within_ten_percent() {
        let cfg = SamplerConfig {
            chains: 4,
            warmup_draws: 500,
            kept_draws: 2000,
            seed: 11,
            ..Default::default()
        };
        let out = run_chains(&Quadratic, &cfg).unwrap();
        let draws: Vec<f64> = out
            .chains
            .iter()
            .flat_map(|c| c.positions.iter().map(|p| p[0]))
            .collect();
        let v = variance(&draws);
        assert!((v - 1.0).abs() < 0.1, "variance {v}");
    }

    #[test]
    fn plain_hmc_mode_samples_the_normal() {
        let model = std_normal(1);
        let target = FixedLambdaTarget {
            model: &model,
            lambda: 0.0,
        };
        let cfg = SamplerConfig {
            chains: 2,
            warmup_draws: 300,
            kept_draws: 1000,
            seed: 9,
            trajectory: Trajectory::PlainHmc { max_steps: 16 },
            ..Default::default()
        };
        let out = run_chains(&target, &cfg).unwrap();
        let draws: Vec<f64> = out
            .chains
            .iter()
            .flat_map(|c| c.positions.iter().map(|p| p[0]))
            .collect();
        assert!((variance(&draws) - 1.0).abs() < 0.15);
    }
}
