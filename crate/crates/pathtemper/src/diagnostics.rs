//! Sampling diagnostics: generalized Pareto tail fit with the Pareto-k
//! stopping rule, rank-normalized split R-hat, and bulk/tail effective
//! sample size.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub const KHAT_THRESHOLD: f64 = 0.7;

/// Result of the Pareto-k diagnostic on importance ratios.
#[derive(Debug, Clone, Copy)]
pub struct KhatResult {
    /// Tail shape estimate; -inf marks the degenerate (constant-ratio) case,
    /// which passes trivially.
    pub khat: f64,
    pub sigma: f64,
    pub tail_size: usize,
    pub pass: bool,
}

impl KhatResult {
    fn new(khat: f64, sigma: f64, tail_size: usize, threshold: f64) -> Self {
        KhatResult {
            khat,
            sigma,
            tail_size,
            pass: khat < threshold,
        }
    }
}

/// Generalized Pareto shape/scale fit (Zhang-Stephens profile posterior with
/// a weak shape prior). Positive k means a heavy tail.
///
/// A sample with coefficient of variation below 1e-10 is degenerate and
/// returns the (-inf, 0) sentinel.
pub fn gpd_fit(tail_sample: &[f64]) -> Result<(f64, f64)> {
    let n = tail_sample.len();
    if n < 5 {
        return Err(Error::SampleTooSmall { need: 5, got: n });
    }
    if tail_sample.iter().any(|x| !(*x > 0.0)) {
        return Err(Error::NonPositiveRatio);
    }
    let mean = tail_sample.iter().sum::<f64>() / n as f64;
    let var = tail_sample
        .iter()
        .map(|x| (x - mean) * (x - mean))
        .sum::<f64>()
        / (n as f64 - 1.0);
    if var.sqrt() / mean < 1e-10 {
        return Ok((f64::NEG_INFINITY, 0.0));
    }

    let mut xs = tail_sample.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let m = 30 + (n as f64).sqrt().floor() as usize;
    let x_quart = xs[((n as f64) / 4.0 + 0.5).floor() as usize - 1];
    let x_max = xs[n - 1];

    let theta: Vec<f64> = (1..=m)
        .map(|j| {
            1.0 / x_max + (1.0 - (m as f64 / (j as f64 - 0.5)).sqrt()) / (3.0 * x_quart)
        })
        .collect();
    // Zhang-Stephens profile log likelihood at each grid point
    let k_zs: Vec<f64> = theta
        .iter()
        .map(|t| -xs.iter().map(|x| (-t * x).ln_1p()).sum::<f64>() / n as f64)
        .collect();
    let loglik: Vec<f64> = theta
        .iter()
        .zip(&k_zs)
        .map(|(t, k)| n as f64 * ((t / k).ln() + k - 1.0))
        .collect();
    let max_l = loglik.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = loglik.iter().map(|l| (l - max_l).exp()).collect();
    let wsum: f64 = weights.iter().sum();
    let theta_hat: f64 = theta
        .iter()
        .zip(&weights)
        .map(|(t, w)| t * w / wsum)
        .sum();

    let khat = xs.iter().map(|x| (-theta_hat * x).ln_1p()).sum::<f64>() / n as f64;
    let sigma = -khat / theta_hat;
    // weak prior toward 0.5 stabilizes small tails
    let khat = (n as f64 * khat + 5.0) / (n as f64 + 10.0);
    Ok((khat, sigma))
}

/// Fits the top-M order statistics of the importance ratios and applies the
/// k < threshold stopping rule, M = min(ceil(0.2 S), ceil(3 sqrt(S))).
pub fn pareto_khat(ratios: &[f64], threshold: f64) -> Result<KhatResult> {
    let s = ratios.len();
    if s < 25 {
        return Err(Error::SampleTooSmall { need: 25, got: s });
    }
    if ratios.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::NonPositiveRatio);
    }
    let m = ((0.2 * s as f64).ceil() as usize).min((3.0 * (s as f64).sqrt()).ceil() as usize);
    let mut sorted = ratios.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let cutoff = sorted[s - m - 1];
    let tail: Vec<f64> = sorted[s - m..].iter().map(|r| r - cutoff).collect();
    if tail.iter().all(|x| *x <= 0.0) || {
        let mean = tail.iter().sum::<f64>() / m as f64;
        mean <= 0.0
    } {
        return Ok(KhatResult::new(f64::NEG_INFINITY, 0.0, m, threshold));
    }
    // exceedances of exactly zero can appear with tied ratios; nudge them off
    // the boundary rather than failing the positivity check of the fit
    let tiny = tail
        .iter()
        .filter(|x| **x > 0.0)
        .fold(f64::INFINITY, |acc, x| acc.min(*x));
    let tail: Vec<f64> = tail
        .iter()
        .map(|x| if *x > 0.0 { *x } else { tiny * 1e-3 })
        .collect();
    let (khat, sigma) = gpd_fit(&tail)?;
    Ok(KhatResult::new(khat, sigma, m, threshold))
}

fn split_in_halves(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        let mid = c.len() / 2;
        out.push(c[..mid].to_vec());
        out.push(c[mid..mid * 2].to_vec());
    }
    out
}

/// Pooled average ranks mapped through the normal quantile function,
/// preserving the chain layout.
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let total: usize = chains.iter().map(|c| c.len()).sum();
    let mut indexed: Vec<(f64, usize)> = Vec::with_capacity(total);
    let mut flat_index = 0usize;
    for c in chains {
        for &x in c {
            indexed.push((x, flat_index));
            flat_index += 1;
        }
    }
    indexed.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut ranks = vec![0.0; total];
    let mut i = 0;
    while i < total {
        let mut j = i + 1;
        while j < total && indexed[j].0 == indexed[i].0 {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0; // average of ranks i+1..=j
        for k in i..j {
            ranks[indexed[k].1] = avg_rank;
        }
        i = j;
    }
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut out = Vec::with_capacity(chains.len());
    let mut flat_index = 0usize;
    for c in chains {
        let z: Vec<f64> = c
            .iter()
            .map(|_| {
                let r = ranks[flat_index];
                flat_index += 1;
                normal.inverse_cdf((r - 0.375) / (total as f64 + 0.25))
            })
            .collect();
        out.push(z);
    }
    out
}

fn validate_chains(chains: &[Vec<f64>]) -> Result<()> {
    if chains.len() < 2 {
        return Err(Error::InvalidConfig("need at least 2 chains".into()));
    }
    if chains.iter().any(|c| c.len() < 4) {
        return Err(Error::InvalidConfig("need at least 4 draws per chain".into()));
    }
    let any_varies = chains.iter().any(|c| c.iter().any(|x| *x != c[0]));
    if !any_varies {
        return Err(Error::DegenerateChains);
    }
    Ok(())
}

/// Classic potential scale reduction factor on already-prepared chains.
fn rhat_basic(chains: &[Vec<f64>]) -> Result<f64> {
    let m = chains.len() as f64;
    let n = chains.iter().map(|c| c.len()).min().unwrap() as f64;
    let means: Vec<f64> = chains
        .iter()
        .map(|c| c.iter().take(n as usize).sum::<f64>() / n)
        .collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n / (m - 1.0) * means.iter().map(|x| (x - grand) * (x - grand)).sum::<f64>();
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| {
            c.iter()
                .take(n as usize)
                .map(|x| (x - mu) * (x - mu))
                .sum::<f64>()
                / (n - 1.0)
        })
        .sum::<f64>()
        / m;
    if w <= 0.0 {
        return Err(Error::DegenerateChains);
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    Ok((var_plus / w).sqrt())
}

/// Rank-normalized split R-hat.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<f64> {
    validate_chains(chains)?;
    let halves = split_in_halves(chains);
    let z = rank_normalize(&halves);
    rhat_basic(&z)
}

/// Multi-chain ESS with Geyer initial-monotone-sequence truncation of the
/// combined autocorrelation. Capped at 1.5x the total draw count.
fn ess_core(chains: &[Vec<f64>]) -> Result<f64> {
    let m = chains.len() as f64;
    let n = chains.iter().map(|c| c.len()).min().unwrap();
    if n < 4 {
        return Err(Error::InvalidConfig("need at least 4 draws per chain".into()));
    }
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| c[..n].iter().sum::<f64>() / nf).collect();
    // per-chain autocovariances (biased, 1/n normalization)
    let acov = |c: &[f64], mu: f64, t: usize| -> f64 {
        (0..n - t)
            .map(|i| (c[i] - mu) * (c[i + t] - mu))
            .sum::<f64>()
            / nf
    };
    let vars: Vec<f64> = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| acov(&c[..n], *mu, 0))
        .collect();
    let w_biased = vars.iter().sum::<f64>() / m;
    if w_biased <= 0.0 {
        return Err(Error::DegenerateChains);
    }
    let w = w_biased * nf / (nf - 1.0);
    let grand = means.iter().sum::<f64>() / m;
    let b_over_n = if chains.len() > 1 {
        means.iter().map(|x| (x - grand) * (x - grand)).sum::<f64>() / (m - 1.0)
    } else {
        0.0
    };
    let var_plus = (nf - 1.0) / nf * w + b_over_n;

    // Geyer initial positive monotone sequence over lag pairs
    // (rho_0 + rho_1), (rho_2 + rho_3), ...; tau = -1 + 2 * sum of pair sums
    let rho = |t: usize| -> f64 {
        if t == 0 {
            return 1.0;
        }
        let mean_acov: f64 = chains
            .iter()
            .zip(&means)
            .map(|(c, mu)| acov(&c[..n], *mu, t))
            .sum::<f64>()
            / m;
        1.0 - (w_biased - mean_acov) / var_plus
    };
    let mut pair_sums: Vec<f64> = Vec::new();
    let mut t = 0usize;
    while t + 1 < n {
        let p = rho(t) + rho(t + 1);
        if p <= 0.0 {
            break;
        }
        pair_sums.push(p);
        t += 2;
    }
    for k in 1..pair_sums.len() {
        pair_sums[k] = pair_sums[k].min(pair_sums[k - 1]);
    }
    let tau = (-1.0 + 2.0 * pair_sums.iter().sum::<f64>()).max(1e-12);

    let total = m * nf;
    Ok((total / tau).min(total * 1.5))
}

/// Bulk ESS: ESS of the rank-normalized split chains.
pub fn ess_bulk(chains: &[Vec<f64>]) -> Result<f64> {
    validate_chains(chains)?;
    let halves = split_in_halves(chains);
    let z = rank_normalize(&halves);
    ess_core(&z)
}

/// Tail ESS: minimum ESS of the 5% and 95% quantile indicator draws.
pub fn ess_tail(chains: &[Vec<f64>]) -> Result<f64> {
    validate_chains(chains)?;
    let mut pooled: Vec<f64> = chains.iter().flatten().cloned().collect();
    pooled.sort_by(|a, b| a.total_cmp(b));
    let q = |p: f64| -> f64 {
        let idx = ((pooled.len() as f64 - 1.0) * p).round() as usize;
        pooled[idx]
    };
    let (q05, q95) = (q(0.05), q(0.95));
    let mut min_ess = f64::INFINITY;
    for (quant, upper) in [(q05, false), (q95, true)] {
        let ind: Vec<Vec<f64>> = chains
            .iter()
            .map(|c| {
                c.iter()
                    .map(|x| {
                        let hit = if upper { *x >= quant } else { *x <= quant };
                        if hit {
                            1.0
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        let halves = split_in_halves(&ind);
        match ess_core(&halves) {
            Ok(e) => min_ess = min_ess.min(e),
            // an indicator with zero variance in every half-chain means the
            // quantile is never crossed; report the degenerate error upward
            Err(Error::DegenerateChains) => return Err(Error::DegenerateChains),
            Err(e) => return Err(e),
        }
    }
    Ok(min_ess)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn normal_draw(rng: &mut ChaCha8Rng) -> f64 {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    fn gpd_sample(rng: &mut ChaCha8Rng, k: f64, sigma: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|_| {
                let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                if k.abs() < 1e-12 {
                    -sigma * u.ln()
                } else {
                    sigma * ((u.powf(-k)) - 1.0) / k
                }
            })
            .collect()
    }

    #[test]
    fn gpd_recovers_half_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..5 {
            let xs = gpd_sample(&mut rng, 0.5, 1.0, 100_000);
            let (k, s) = gpd_fit(&xs).unwrap();
            assert!((0.45..=0.55).contains(&k), "khat {k}");
            assert!((0.9..=1.1).contains(&s), "sigma {s}");
        }
    }

    #[test]
    fn gpd_recovers_exponential_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..3 {
            let xs = gpd_sample(&mut rng, 0.0, 1.0, 100_000);
            let (k, _) = gpd_fit(&xs).unwrap();
            assert!((-0.05..=0.05).contains(&k), "khat {k}");
        }
    }

    #[test]
    fn gpd_degenerate_sentinel() {
        let xs = vec![2.0; 100];
        let (k, _) = gpd_fit(&xs).unwrap();
        assert_eq!(k, f64::NEG_INFINITY);
    }

    #[test]
    fn gpd_small_sample_rejected() {
        assert!(matches!(
            gpd_fit(&[1.0, 2.0, 3.0]),
            Err(Error::SampleTooSmall { .. })
        ));
    }

    #[test]
    fn khat_uniform_ratios_pass_with_sentinel() {
        let ratios = vec![1.0; 1000];
        let r = pareto_khat(&ratios, KHAT_THRESHOLD).unwrap();
        assert!(r.pass);
        assert_eq!(r.khat, f64::NEG_INFINITY);
    }

    #[test]
    fn khat_heavy_lognormal_fails() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for _ in 0..3 {
            let ratios: Vec<f64> = (0..4000).map(|_| (5.0 * normal_draw(&mut rng)).exp()).collect();
            let r = pareto_khat(&ratios, KHAT_THRESHOLD).unwrap();
            assert!(r.khat > 0.7, "khat {}", r.khat);
            assert!(!r.pass);
        }
    }

    #[test]
    fn khat_small_sample_rejected() {
        let ratios = vec![1.0; 10];
        assert!(matches!(
            pareto_khat(&ratios, KHAT_THRESHOLD),
            Err(Error::SampleTooSmall { .. })
        ));
    }

    #[test]
    fn khat_nonpositive_ratio_rejected() {
        let mut ratios = vec![1.0; 100];
        ratios[3] = 0.0;
        assert!(matches!(
            pareto_khat(&ratios, KHAT_THRESHOLD),
            Err(Error::NonPositiveRatio)
        ));
    }

    #[test]
    fn khat_strictly_increases_with_injected_extreme() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let base: Vec<f64> = (0..2000).map(|_| (0.5 * normal_draw(&mut rng)).exp()).collect();
        let k0 = pareto_khat(&base, KHAT_THRESHOLD).unwrap().khat;
        let mut sorted = base.clone();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let median = sorted[1000];
        let mut spiked = base;
        spiked.push(median * 1e6);
        let k1 = pareto_khat(&spiked, KHAT_THRESHOLD).unwrap().khat;
        assert!(k1 > k0, "k0 {k0} k1 {k1}");
    }

    #[test]
    fn rhat_iid_chains_near_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..1000).map(|_| normal_draw(&mut rng)).collect())
            .collect();
        let r = split_rhat(&chains).unwrap();
        assert!(r < 1.01, "rhat {r}");
    }

    #[test]
    fn rhat_separated_chains_large() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let c1: Vec<f64> = (0..1000).map(|_| normal_draw(&mut rng)).collect();
        let c2: Vec<f64> = (0..1000).map(|_| 5.0 + normal_draw(&mut rng)).collect();
        let r = split_rhat(&[c1, c2]).unwrap();
        assert!(r > 1.5, "rhat {r}");
    }

    #[test]
    fn rhat_constant_chains_error() {
        let chains = vec![vec![1.0; 100], vec![1.0; 100]];
        assert!(matches!(split_rhat(&chains), Err(Error::DegenerateChains)));
    }

    #[test]
    fn rhat_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(48);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|i| (0..500).map(|_| normal_draw(&mut rng) + i as f64 * 0.1).collect())
            .collect();
        let r1 = split_rhat(&chains).unwrap();
        let permuted = vec![
            chains[2].clone(),
            chains[0].clone(),
            chains[3].clone(),
            chains[1].clone(),
        ];
        let r2 = split_rhat(&permuted).unwrap();
        assert!((r1 - r2).abs() < 1e-12);
    }

    #[test]
    fn tail_ess_of_iid_normal_near_total() {
        let mut rng = ChaCha8Rng::seed_from_u64(49);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..1000).map(|_| normal_draw(&mut rng)).collect())
            .collect();
        let e = ess_tail(&chains).unwrap();
        assert!((2000.0..=6000.0).contains(&e), "tail ess {e}");
    }

    #[test]
    fn bulk_ess_matches_ar1_theory() {
        let rho: f64 = 0.9;
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let mut x = 0.0;
                (0..5000)
                    .map(|_| {
                        x = rho * x + (1.0 - rho * rho).sqrt() * normal_draw(&mut rng);
                        x
                    })
                    .collect()
            })
            .collect();
        let e = ess_bulk(&chains).unwrap();
        let expected = 20_000.0 * (1.0 - rho) / (1.0 + rho);
        assert!(
            (e - expected).abs() / expected < 0.3,
            "ess {e}, expected {expected}"
        );
    }

    #[test]
    fn ess_capped_at_anti_overshoot_guard() {
        // strongly antithetic chains would overshoot without the cap
        let n = 500;
        let chains: Vec<Vec<f64>> = (0..2)
            .map(|c| {
                (0..n)
                    .map(|i| if (i + c) % 2 == 0 { 1.0 } else { -1.0 } * (1.0 + i as f64 * 1e-6))
                    .collect()
            })
            .collect();
        if let Ok(e) = ess_bulk(&chains) {
            assert!(e <= 2.0 * n as f64 * 1.5 + 1e-9);
        }
    }

    #[test]
    fn ess_constant_chains_error() {
        let chains = vec![vec![0.5; 100], vec![0.5; 100]];
        assert!(matches!(ess_tail(&chains), Err(Error::DegenerateChains)));
    }
}
