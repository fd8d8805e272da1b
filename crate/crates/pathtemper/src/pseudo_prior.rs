//! Parametric pseudo-prior over the inverse temperature.
//!
//! log c(lambda) = beta0 * lambda + sum_j beta_j * gamma_j(lambda), built from
//! a linear term plus a fixed kernel basis. The same basis is reused by the
//! least-squares smoothing of the estimated log normalizing constant, so the
//! pseudo-prior update is a plain coefficient copy.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Gaussian,
    Logit,
    Mixed,
}

/// One kernel: its type, center and scale.
#[derive(Debug, Clone, Copy)]
enum Kernel {
    Gauss { center: f64, scale: f64 },
    Logit { center: f64, scale: f64 },
}

impl Kernel {
    fn eval(&self, lambda: f64) -> f64 {
        match *self {
            Kernel::Gauss { center, scale } => {
                let z = (lambda - center) / scale;
                (-0.5 * z * z).exp()
            }
            Kernel::Logit { center, scale } => {
                let z = (lambda - center) / scale;
                1.0 / (1.0 + (-z).exp())
            }
        }
    }

    fn deriv(&self, lambda: f64) -> f64 {
        match *self {
            Kernel::Gauss { center, scale } => {
                let z = (lambda - center) / scale;
                -(z / scale) * (-0.5 * z * z).exp()
            }
            Kernel::Logit { scale, .. } => {
                let g = self.eval(lambda);
                g * (1.0 - g) / scale
            }
        }
    }
}

/// The shared basis {lambda, gamma_1(lambda), ..., gamma_J(lambda)}.
#[derive(Debug, Clone)]
pub struct KernelBasis {
    family: KernelFamily,
    kernels: Vec<Kernel>,
}

impl KernelBasis {
    pub fn new(family: KernelFamily, j: usize) -> Self {
        assert!(j >= 2, "need at least two kernels");
        let kernels = match family {
            KernelFamily::Gaussian => {
                let scale = 1.0 / j as f64;
                (1..=j)
                    .map(|i| Kernel::Gauss {
                        center: i as f64 / (j as f64 + 1.0),
                        scale,
                    })
                    .collect()
            }
            KernelFamily::Logit => {
                let scale = 1.0 / j as f64;
                (1..=j)
                    .map(|i| Kernel::Logit {
                        center: i as f64 / (j as f64 + 1.0),
                        scale,
                    })
                    .collect()
            }
            KernelFamily::Mixed => {
                // half Gaussian, half logit, sharing centers and scale
                let half = j / 2;
                let scale = 1.0 / half as f64;
                let centers: Vec<f64> =
                    (1..=half).map(|i| i as f64 / (half as f64 + 1.0)).collect();
                let mut ks: Vec<Kernel> = centers
                    .iter()
                    .map(|&center| Kernel::Gauss { center, scale })
                    .collect();
                ks.extend(centers.iter().map(|&center| Kernel::Logit { center, scale }));
                ks
            }
        };
        KernelBasis { family, kernels }
    }

    pub fn default_mixed() -> Self {
        KernelBasis::new(KernelFamily::Mixed, 10)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    /// Number of kernel functions J (the basis has J+1 columns counting the
    /// linear term).
    pub fn j(&self) -> usize {
        self.kernels.len()
    }

    /// Basis row [lambda, gamma_1(lambda), ..., gamma_J(lambda)].
    pub fn row(&self, lambda: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.kernels.len() + 1);
        out.push(lambda);
        out.extend(self.kernels.iter().map(|k| k.eval(lambda)));
        out
    }

    /// Derivative of the basis row with respect to lambda.
    pub fn row_deriv(&self, lambda: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.kernels.len() + 1);
        out.push(1.0);
        out.extend(self.kernels.iter().map(|k| k.deriv(lambda)));
        out
    }
}

/// Coefficients over the kernel basis representing log c(lambda).
#[derive(Debug, Clone)]
pub struct PseudoPrior {
    basis: KernelBasis,
    /// coeffs[0] is the linear slope beta0; coeffs[1..] the kernel weights.
    coeffs: Vec<f64>,
}

impl PseudoPrior {
    /// The flat initialization c(lambda) = 1.
    pub fn constant(basis: KernelBasis) -> Self {
        let n = basis.j() + 1;
        PseudoPrior {
            basis,
            coeffs: vec![0.0; n],
        }
    }

    /// A pure linear slope: log c(lambda) = b0 * lambda.
    pub fn with_slope(basis: KernelBasis, b0: f64) -> Self {
        let mut p = PseudoPrior::constant(basis);
        p.coeffs[0] = b0;
        p
    }

    pub fn from_coefficients(basis: KernelBasis, coeffs: Vec<f64>) -> Self {
        assert_eq!(coeffs.len(), basis.j() + 1);
        PseudoPrior { basis, coeffs }
    }

    pub fn basis(&self) -> &KernelBasis {
        &self.basis
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn beta0(&self) -> f64 {
        self.coeffs[0]
    }

    pub fn log_c(&self, lambda: f64) -> f64 {
        self.basis
            .row(lambda)
            .iter()
            .zip(&self.coeffs)
            .map(|(b, c)| b * c)
            .sum()
    }

    /// d log c / d lambda in closed form.
    pub fn dlog_c(&self, lambda: f64) -> f64 {
        self.basis
            .row_deriv(lambda)
            .iter()
            .zip(&self.coeffs)
            .map(|(b, c)| b * c)
            .sum()
    }

    pub fn max_abs_coefficient(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_prior_is_one() {
        let p = PseudoPrior::constant(KernelBasis::default_mixed());
        for i in 0..=20 {
            let lambda = i as f64 / 20.0;
            assert_eq!(p.log_c(lambda), 0.0);
            assert_eq!(p.dlog_c(lambda), 0.0);
        }
    }

    #[test]
    fn log_c_reproduces_the_linear_plus_kernel_form() {
        let basis = KernelBasis::default_mixed();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let coeffs: Vec<f64> = (0..=basis.j()).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let p = PseudoPrior::from_coefficients(basis.clone(), coeffs.clone());
        for i in 0..=50 {
            let lambda = i as f64 / 50.0;
            let row = basis.row(lambda);
            let manual: f64 = row.iter().zip(&coeffs).map(|(b, c)| b * c).sum();
            assert_eq!(p.log_c(lambda), manual);
        }
    }

    #[test]
    fn closed_form_derivative_matches_finite_differences() {
        for family in [KernelFamily::Gaussian, KernelFamily::Logit, KernelFamily::Mixed] {
            let basis = KernelBasis::new(family, 10);
            let mut rng = ChaCha8Rng::seed_from_u64(13);
            let coeffs: Vec<f64> = (0..=basis.j()).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let p = PseudoPrior::from_coefficients(basis, coeffs);
            for _ in 0..100 {
                let lambda: f64 = rng.gen_range(0.01..0.99);
                let h = 1e-6;
                let fd = (p.log_c(lambda + h) - p.log_c(lambda - h)) / (2.0 * h);
                assert!(
                    (p.dlog_c(lambda) - fd).abs() < 1e-8 * (1.0 + fd.abs()),
                    "family {family:?}, lambda {lambda}: {} vs {}",
                    p.dlog_c(lambda),
                    fd
                );
            }
        }
    }

    #[test]
    fn mixed_basis_has_full_size() {
        let basis = KernelBasis::default_mixed();
        assert_eq!(basis.j(), 10);
        assert_eq!(basis.row(0.3).len(), 11);
    }
}
