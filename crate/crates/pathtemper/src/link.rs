//! Piecewise-cubic link lambda = f(a) on a in [0, 2].
//!
//! f is 0 on [0, a_min] and [2-a_min, 2], 1 on [a_max, 2-a_max], symmetric
//! about a = 1, and C1 everywhere. The flat plateaus give the joint sampler
//! regions of exact base and exact target draws.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkFunction {
    a_min: f64,
    a_max: f64,
}

impl Default for LinkFunction {
    fn default() -> Self {
        LinkFunction {
            a_min: 0.1,
            a_max: 0.8,
        }
    }
}

impl LinkFunction {
    pub fn new(a_min: f64, a_max: f64) -> Result<Self> {
        if !(0.0 < a_min && a_min < a_max && a_max < 1.0) {
            return Err(Error::Domain(format!(
                "link knots need 0 < a_min < a_max < 1, got ({a_min}, {a_max})"
            )));
        }
        Ok(LinkFunction { a_min, a_max })
    }

    pub fn a_min(&self) -> f64 {
        self.a_min
    }

    pub fn a_max(&self) -> f64 {
        self.a_max
    }

    /// Evaluates (f(a), f'(a)). Both are exactly zero on the flat regions.
    pub fn eval(&self, a: f64) -> Result<(f64, f64)> {
        if !(0.0..=2.0).contains(&a) {
            return Err(Error::Domain(format!("a = {a} outside [0, 2]")));
        }
        Ok(self.eval_unchecked(a))
    }

    pub fn eval_unchecked(&self, a: f64) -> (f64, f64) {
        // reflect onto the rising half; f(a) = f(2 - a). The knot pad absorbs
        // the rounding of 2 - (2 - a_min) so reflected knots stay exact.
        const KNOT_PAD: f64 = 1e-12;
        let (x, sign) = if a > 1.0 { (2.0 - a, -1.0) } else { (a, 1.0) };
        let (lo, hi) = (self.a_min, self.a_max);
        if x <= lo + KNOT_PAD {
            (0.0, 0.0)
        } else if x >= hi - KNOT_PAD {
            (1.0, 0.0)
        } else {
            let width = hi - lo;
            let t = (x - lo) / width;
            let f = t * t * (3.0 - 2.0 * t);
            let df = sign * 6.0 * t * (1.0 - t) / width;
            (f, df)
        }
    }

    /// Inverts the rising branch: the a in [a_min, a_max] with f(a) = lambda.
    pub fn inverse_rising(&self, lambda: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Domain(format!("lambda = {lambda} outside [0, 1]")));
        }
        // closed-form inverse of the smoothstep 3t^2 - 2t^3
        let t = 0.5 - ((1.0 - 2.0 * lambda).asin() / 3.0).sin();
        Ok(self.a_min + t.clamp(0.0, 1.0) * (self.a_max - self.a_min))
    }

    /// True when f(a) = 1 exactly (target plateau).
    pub fn in_target_plateau(&self, a: f64) -> bool {
        let x = if a > 1.0 { 2.0 - a } else { a };
        x >= self.a_max - 1e-12
    }

    /// True when f(a) = 0 exactly (base plateau).
    pub fn in_base_plateau(&self, a: f64) -> bool {
        let x = if a > 1.0 { 2.0 - a } else { a };
        x <= self.a_min + 1e-12 && a >= 0.0 && a <= 2.0
    }
}

/// (lambda, dlambda/da) at `a`; errors outside [0, 2].
pub fn link_eval(link: &LinkFunction, a: f64) -> Result<(f64, f64)> {
    link.eval(a)
}
