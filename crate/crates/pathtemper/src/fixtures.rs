//! Built-in benchmark models with analytic gradients.
//!
//! All fixtures live on unconstrained space. Bounded parameters are mapped
//! through a bijection whose log-Jacobian is added to the density, so the
//! sampler core stays boundary-free.

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::model::ModelSpec;

/// Eight-schools data, two columns: effect estimate y_i and its standard
/// error s_i. Shipped as a repo fixture; also see `fixtures/eight_schools.csv`.
pub const EIGHT_SCHOOLS_CSV: &str = include_str!("../fixtures/eight_schools.csv");

/// Catalog entry describing one built-in fixture family.
#[derive(Debug, Clone)]
pub struct FixtureCatalogEntry {
    pub name: &'static str,
    /// Parameter names with their default values.
    pub parameters: Vec<(&'static str, f64)>,
    pub reference_logz_available: bool,
}

/// All built-in fixture families with their default parameters.
pub fn fixture_catalog() -> Vec<FixtureCatalogEntry> {
    vec![
        FixtureCatalogEntry {
            name: "beta_binomial",
            parameters: vec![("alpha", 2.0), ("beta", 1.0), ("y", 60.0), ("n", 80.0)],
            reference_logz_available: true,
        },
        FixtureCatalogEntry {
            name: "std_normal",
            parameters: vec![("dim", 1.0)],
            reference_logz_available: true,
        },
        FixtureCatalogEntry {
            name: "gaussian_mixture",
            parameters: vec![("dim", 1.0), ("components", 2.0)],
            reference_logz_available: false,
        },
        FixtureCatalogEntry {
            name: "flower",
            parameters: vec![("sigma", 1.0), ("r", 10.0), ("a", 6.0), ("omega", 6.0)],
            reference_logz_available: false,
        },
        FixtureCatalogEntry {
            name: "cauchy_mixture",
            parameters: vec![("gap", 10.0), ("scale", 0.2)],
            reference_logz_available: false,
        },
        FixtureCatalogEntry {
            name: "eight_schools_centered",
            parameters: vec![],
            reference_logz_available: false,
        },
    ]
}

fn get_param(params: &[(&str, f64)], key: &str, default: Option<f64>) -> Result<f64> {
    for (k, v) in params {
        if *k == key {
            if !v.is_finite() {
                return Err(Error::InvalidParam {
                    field: key.into(),
                    reason: "must be finite".into(),
                });
            }
            return Ok(*v);
        }
    }
    default.ok_or_else(|| Error::InvalidParam {
        field: key.into(),
        reason: "missing".into(),
    })
}

/// Constructs a built-in model by name.
pub fn make_builtin_model(name: &str, params: &[(&str, f64)]) -> Result<ModelSpec> {
    match name {
        "beta_binomial" => {
            let alpha = get_param(params, "alpha", None)?;
            let beta = get_param(params, "beta", None)?;
            let y = get_param(params, "y", None)?;
            let n = get_param(params, "n", None)?;
            beta_binomial(alpha, beta, y, n)
        }
        "std_normal" => {
            let dim = get_param(params, "dim", Some(1.0))?;
            if dim < 1.0 || dim.fract() != 0.0 {
                return Err(Error::InvalidParam {
                    field: "dim".into(),
                    reason: "must be a positive integer".into(),
                });
            }
            Ok(std_normal(dim as usize))
        }
        "gaussian_mixture" => {
            let dim = get_param(params, "dim", Some(1.0))? as usize;
            if dim == 1 {
                Ok(two_mode_mixture_1d(5.0, 1.0))
            } else {
                let k = get_param(params, "components", Some(10.0))? as usize;
                Ok(gaussian_mixture_nd(dim, k))
            }
        }
        "flower" => {
            let sigma = get_param(params, "sigma", Some(1.0))?;
            let r = get_param(params, "r", Some(10.0))?;
            let a = get_param(params, "a", Some(6.0))?;
            let omega = get_param(params, "omega", Some(6.0))?;
            if sigma <= 0.0 {
                return Err(Error::InvalidParam {
                    field: "sigma".into(),
                    reason: "must be positive".into(),
                });
            }
            Ok(flower(sigma, r, a, omega))
        }
        "cauchy_mixture" => {
            let gap = get_param(params, "gap", Some(10.0))?;
            let scale = get_param(params, "scale", Some(0.2))?;
            if scale <= 0.0 {
                return Err(Error::InvalidParam {
                    field: "scale".into(),
                    reason: "must be positive".into(),
                });
            }
            Ok(cauchy_mixture(gap, scale))
        }
        "eight_schools_centered" => eight_schools_centered(),
        other => Err(Error::UnknownFixture(other.into())),
    }
}

/// Tempered beta-binomial on the log-odds scale:
/// log q(theta, lambda) = lambda * log Binomial(y | theta, n) + log Beta(theta | alpha, beta)
/// with theta = sigmoid(xi) and the log-Jacobian of the transform added.
pub fn beta_binomial(alpha: f64, beta: f64, y: f64, n: f64) -> Result<ModelSpec> {
    if alpha <= 0.0 {
        return Err(Error::InvalidParam {
            field: "alpha".into(),
            reason: "must be positive".into(),
        });
    }
    if beta <= 0.0 {
        return Err(Error::InvalidParam {
            field: "beta".into(),
            reason: "must be positive".into(),
        });
    }
    if y < 0.0 || n < y {
        return Err(Error::InvalidParam {
            field: "n".into(),
            reason: "need 0 <= y <= n".into(),
        });
    }
    let log_choose = ln_gamma(n + 1.0) - ln_gamma(y + 1.0) - ln_gamma(n - y + 1.0);
    let log_beta_norm = ln_gamma(alpha + beta) - ln_gamma(alpha) - ln_gamma(beta);
    Ok(ModelSpec::new(1, true, move |xi, lambda| {
        let u = xi[0];
        // log sigmoid / log(1-sigmoid) computed stably from either side
        let (log_theta, log_one_minus) = if u >= 0.0 {
            (-(-u).exp().ln_1p(), -u - (-u).exp().ln_1p())
        } else {
            (u - u.exp().ln_1p(), -(u.exp().ln_1p()))
        };
        let theta = 1.0 / (1.0 + (-u).exp());
        let log_lik = log_choose + y * log_theta + (n - y) * log_one_minus;
        let log_prior = log_beta_norm + (alpha - 1.0) * log_theta + (beta - 1.0) * log_one_minus;
        let log_jac = log_theta + log_one_minus;
        let value = lambda * log_lik + log_prior + log_jac;
        // d log_theta/du = 1-theta, d log(1-theta)/du = -theta
        let grad = lambda * (y * (1.0 - theta) - (n - y) * theta)
            + (alpha - 1.0) * (1.0 - theta)
            - (beta - 1.0) * theta
            + (1.0 - 2.0 * theta);
        (value, vec![grad])
    }))
}

/// Standard normal in `dim` dimensions.
pub fn std_normal(dim: usize) -> ModelSpec {
    let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    ModelSpec::new(dim, false, move |xi, _| {
        let sq: f64 = xi.iter().map(|v| v * v).sum();
        let value = -(dim as f64) * half_log_2pi - 0.5 * sq;
        let grad = xi.iter().map(|v| -v).collect();
        (value, grad)
    })
}

/// Diagonal normal with one mean and scale shared across coordinates.
pub fn isotropic_normal(dim: usize, mean: f64, scale: f64) -> ModelSpec {
    let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    ModelSpec::new(dim, false, move |xi, _| {
        let mut sq = 0.0;
        let mut grad = Vec::with_capacity(dim);
        for v in xi {
            let z = (v - mean) / scale;
            sq += z * z;
            grad.push(-z / scale);
        }
        let value = -(dim as f64) * (half_log_2pi + scale.ln()) - 0.5 * sq;
        (value, grad)
    })
}

fn mixture_logpdf(
    xi: &[f64],
    centers: &[Vec<f64>],
    scales: &[f64],
    log_weights: &[f64],
) -> (f64, Vec<f64>) {
    let dim = xi.len();
    let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let mut comp_logs = Vec::with_capacity(centers.len());
    for (k, c) in centers.iter().enumerate() {
        let s = scales[k];
        let sq: f64 = xi.iter().zip(c).map(|(v, m)| ((v - m) / s).powi(2)).sum();
        comp_logs.push(log_weights[k] - (dim as f64) * (half_log_2pi + s.ln()) - 0.5 * sq);
    }
    let max = comp_logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum_exp: f64 = comp_logs.iter().map(|l| (l - max).exp()).sum();
    let value = max + sum_exp.ln();
    let mut grad = vec![0.0; dim];
    for (k, c) in centers.iter().enumerate() {
        let w = (comp_logs[k] - value).exp();
        let s2 = scales[k] * scales[k];
        for i in 0..dim {
            grad[i] += w * (-(xi[i] - c[i]) / s2);
        }
    }
    (value, grad)
}

/// Symmetric two-mode 1-D Gaussian mixture with modes at +-`mode` and unit weights.
pub fn two_mode_mixture_1d(mode: f64, scale: f64) -> ModelSpec {
    let centers = vec![vec![-mode], vec![mode]];
    let scales = vec![scale, scale];
    let log_w = vec![(0.5f64).ln(); 2];
    ModelSpec::new(1, false, move |xi, _| {
        mixture_logpdf(xi, &centers, &scales, &log_w)
    })
}

/// K-component mixture in `dim` dimensions. Centers come from a fixed seeded
/// generator (fixture data, not ground truth); the shared component scale is
/// one tenth of the minimum pairwise center distance.
pub fn gaussian_mixture_nd(dim: usize, k: usize) -> ModelSpec {
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(0x8a3d_71c2);
    let centers: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..dim).map(|_| rng.gen_range(-5.0..5.0)).collect())
        .collect();
    let mut min_dist = f64::INFINITY;
    for i in 0..k {
        for j in (i + 1)..k {
            let d: f64 = centers[i]
                .iter()
                .zip(&centers[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            min_dist = min_dist.min(d);
        }
    }
    let scale = min_dist / 10.0;
    let scales = vec![scale; k];
    let log_w = vec![-(k as f64).ln(); k];
    ModelSpec::new(dim, false, move |xi, _| {
        mixture_logpdf(xi, &centers, &scales, &log_w)
    })
}

/// Flower-shaped 2-D target: a ring of radius `r` whose boundary oscillates
/// with amplitude `a` over `omega` petals, with Gaussian cross-section `sigma`.
pub fn flower(sigma: f64, r: f64, a: f64, omega: f64) -> ModelSpec {
    ModelSpec::new(2, false, move |xi, _| {
        let (x, y) = (xi[0], xi[1]);
        let rad = (x * x + y * y).sqrt();
        if rad < 1e-12 {
            // non-smooth point at the origin; density is finite there
            let g = -r - a;
            return (-g * g / (2.0 * sigma * sigma), vec![0.0, 0.0]);
        }
        let phi = y.atan2(x);
        let g = rad - r - a * (omega * phi).cos();
        let value = -g * g / (2.0 * sigma * sigma);
        let dphi_dx = -y / (rad * rad);
        let dphi_dy = x / (rad * rad);
        let osc = a * omega * (omega * phi).sin();
        let dg_dx = x / rad + osc * dphi_dx;
        let dg_dy = y / rad + osc * dphi_dy;
        let scale = -g / (sigma * sigma);
        (value, vec![scale * dg_dx, scale * dg_dy])
    })
}

/// Two-spike Cauchy mixture posterior: observations at +-gap with a shared scale.
pub fn cauchy_mixture(gap: f64, scale: f64) -> ModelSpec {
    ModelSpec::new(1, false, move |xi, _| {
        let theta = xi[0];
        let mut value = 0.0;
        let mut grad = 0.0;
        for obs in [gap, -gap] {
            let d = obs - theta;
            value += -(std::f64::consts::PI * scale).ln() - (1.0 + (d / scale).powi(2)).ln();
            grad += 2.0 * d / (scale * scale + d * d);
        }
        (value, vec![grad])
    })
}

/// Centered eight-schools hierarchy on unconstrained coordinates
/// [theta_1..theta_8, mu, eta = log tau]: y_i ~ N(theta_i, s_i),
/// theta_i ~ N(mu, tau), mu flat, tau ~ half-Cauchy(0, 5).
pub fn eight_schools_centered() -> Result<ModelSpec> {
    let (ys, ss) = eight_schools_data()?;
    Ok(eight_schools_centered_with(ys, ss))
}

pub fn eight_schools_centered_with(ys: Vec<f64>, ss: Vec<f64>) -> ModelSpec {
    let j = ys.len();
    let dim = j + 2;
    let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let tau_prior_scale = 5.0f64;
    ModelSpec::new(dim, false, move |xi, _| {
        let thetas = &xi[0..j];
        let mu = xi[j];
        let eta = xi[j + 1];
        let tau = eta.exp();
        let mut value = 0.0;
        let mut grad = vec![0.0; j + 2];
        for i in 0..j {
            let z = (ys[i] - thetas[i]) / ss[i];
            value += -half_log_2pi - ss[i].ln() - 0.5 * z * z;
            grad[i] += z / ss[i];
            let w = (thetas[i] - mu) / tau;
            value += -half_log_2pi - eta - 0.5 * w * w;
            grad[i] += -w / tau;
            grad[j] += w / tau;
        }
        // half-Cauchy(0, 5) on tau plus the log-Jacobian of tau = exp(eta)
        let ratio2 = (tau / tau_prior_scale).powi(2);
        value += (2.0 / (std::f64::consts::PI * tau_prior_scale)).ln() - (1.0 + ratio2).ln();
        value += eta;
        let sum_w2: f64 = thetas.iter().map(|t| ((t - mu) / tau).powi(2)).sum();
        grad[j + 1] = -(j as f64) + sum_w2 - 2.0 * ratio2 / (1.0 + ratio2) + 1.0;
        (value, grad)
    })
}

/// Parses the bundled eight-schools CSV (columns: y, sigma).
pub fn eight_schools_data() -> Result<(Vec<f64>, Vec<f64>)> {
    let mut ys = Vec::new();
    let mut ss = Vec::new();
    for (i, line) in EIGHT_SCHOOLS_CSV.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 2 {
            return Err(Error::InvalidParam {
                field: "eight_schools.csv".into(),
                reason: format!("line {} does not have two columns", i + 1),
            });
        }
        let y: f64 = parts[0].trim().parse().map_err(|_| Error::InvalidParam {
            field: "eight_schools.csv".into(),
            reason: format!("bad y on line {}", i + 1),
        })?;
        let s: f64 = parts[1].trim().parse().map_err(|_| Error::InvalidParam {
            field: "eight_schools.csv".into(),
            reason: format!("bad sigma on line {}", i + 1),
        })?;
        if s <= 0.0 {
            return Err(Error::InvalidParam {
                field: "eight_schools.csv".into(),
                reason: format!("nonpositive sigma on line {}", i + 1),
            });
        }
        ys.push(y);
        ss.push(s);
    }
    Ok((ys, ss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::eval_model;
    use crate::testutil::check_gradient;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn catalog_defaults_construct() {
        for entry in fixture_catalog() {
            let params: Vec<(&str, f64)> =
                entry.parameters.iter().map(|(k, v)| (*k, *v)).collect();
            make_builtin_model(entry.name, &params).unwrap();
        }
    }

    #[test]
    fn unknown_fixture_is_reported() {
        let err = make_builtin_model("nope", &[]).unwrap_err();
        assert!(err.to_string().contains("nope"));
    }

    #[test]
    fn invalid_params_name_the_field() {
        let err =
            make_builtin_model("beta_binomial", &[("alpha", 2.0), ("beta", 1.0), ("y", 90.0), ("n", 80.0)])
                .unwrap_err();
        assert!(err.to_string().contains('n'));
        let err = make_builtin_model("flower", &[("sigma", -1.0)]).unwrap_err();
        assert!(err.to_string().contains("sigma"));
    }

    #[test]
    fn paper_parameter_sets_build() {
        let easy = make_builtin_model(
            "beta_binomial",
            &[("alpha", 2.0), ("beta", 1.0), ("y", 60.0), ("n", 80.0)],
        )
        .unwrap();
        assert!(easy.lambda_dependent());
        assert_eq!(easy.dim(), 1);
        make_builtin_model(
            "beta_binomial",
            &[("alpha", 9.0), ("beta", 0.75), ("y", 115.0), ("n", 550.0)],
        )
        .unwrap();
    }

    #[test]
    fn gradients_match_finite_differences_for_all_builtins() {
        let models: Vec<(ModelSpec, f64)> = vec![
            (
                make_builtin_model(
                    "beta_binomial",
                    &[("alpha", 9.0), ("beta", 0.75), ("y", 115.0), ("n", 550.0)],
                )
                .unwrap(),
                0.7,
            ),
            (make_builtin_model("std_normal", &[("dim", 3.0)]).unwrap(), 0.0),
            (make_builtin_model("gaussian_mixture", &[]).unwrap(), 0.0),
            (
                make_builtin_model("gaussian_mixture", &[("dim", 4.0), ("components", 10.0)])
                    .unwrap(),
                0.0,
            ),
            (make_builtin_model("flower", &[]).unwrap(), 0.0),
            (make_builtin_model("cauchy_mixture", &[]).unwrap(), 0.0),
            (make_builtin_model("eight_schools_centered", &[]).unwrap(), 0.0),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (model, lambda) in &models {
            for _ in 0..100 {
                let xi: Vec<f64> = (0..model.dim()).map(|_| rng.gen_range(-2.5..2.5)).collect();
                check_gradient(model, &xi, *lambda);
            }
        }
    }

    #[test]
    fn mixture_symmetric_to_machine_precision() {
        let m = make_builtin_model("gaussian_mixture", &[]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let x = rng.gen_range(-8.0..8.0);
            let (lp, _) = eval_model(&m, &[x], 0.0).unwrap();
            let (lm, _) = eval_model(&m, &[-x], 0.0).unwrap();
            assert!((lp - lm).abs() < 1e-12, "asymmetry at {x}: {lp} vs {lm}");
        }
    }

    #[test]
    fn eight_schools_data_loads() {
        let (ys, ss) = eight_schools_data().unwrap();
        assert_eq!(ys.len(), 8);
        assert_eq!(ss.len(), 8);
        assert!(ss.iter().all(|s| *s > 0.0));
    }

    #[test]
    fn flower_finite_at_origin() {
        let m = make_builtin_model("flower", &[]).unwrap();
        let (lp, g) = eval_model(&m, &[0.0, 0.0], 0.0).unwrap();
        assert!(lp.is_finite());
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn evaluator_is_deterministic() {
        let m = make_builtin_model("eight_schools_centered", &[]).unwrap();
        let xi: Vec<f64> = (0..10).map(|i| i as f64 * 0.3 - 1.0).collect();
        let (a1, g1) = eval_model(&m, &xi, 0.0).unwrap();
        let (a2, g2) = eval_model(&m, &xi, 0.0).unwrap();
        assert_eq!(a1.to_bits(), a2.to_bits());
        assert!(g1.iter().zip(&g2).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
