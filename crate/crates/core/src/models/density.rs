use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Un-normalized density strictly decreasing on `(0, c)`, together with its
/// closed-form inverse. Superlevel sets are the intervals `(0, f⁻¹(u))`.
#[derive(Clone)]
pub struct DecreasingDensity {
    density: RealFn,
    inverse: RealFn,
    support: f64,
}

impl fmt::Debug for DecreasingDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DecreasingDensity")
            .field("support", &self.support)
            .finish_non_exhaustive()
    }
}

impl DecreasingDensity {
    pub fn new<F, G>(density: F, inverse: G, support: f64) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        G: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if !(support > 0.0 && support.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "support bound {support} must be positive"
            )));
        }
        let d = Self {
            density: Arc::new(density),
            inverse: Arc::new(inverse),
            support,
        };
        // spot-check strict decrease
        let mut prev = f64::INFINITY;
        for i in 1..64 {
            let y = d.support * i as f64 / 64.0;
            let fy = d.f(y);
            if !(fy < prev) || !(fy > 0.0) {
                return Err(Error::InvalidParameter(
                    "density must be positive and strictly decreasing".into(),
                ));
            }
            prev = fy;
        }
        Ok(d)
    }

    /// `e^{-y}` truncated to `(0, c)`.
    pub fn truncated_exponential(c: f64) -> Result<Self> {
        Self::new(|y: f64| (-y).exp(), |u: f64| -u.ln(), c)
    }

    pub fn f(&self, y: f64) -> f64 {
        (self.density)(y)
    }

    pub fn f_inv(&self, u: f64) -> f64 {
        (self.inverse)(u)
    }

    pub fn support(&self) -> f64 {
        self.support
    }

    /// Right end of `{y in (0, c) : f(y) ≥ u}`.
    pub fn superlevel_end(&self, u: f64) -> f64 {
        if u <= self.f(self.support) {
            self.support
        } else {
            self.f_inv(u).clamp(0.0, self.support)
        }
    }
}

impl Default for DecreasingDensity {
    fn default() -> Self {
        Self::truncated_exponential(3.0).expect("default density is valid")
    }
}

/// CDF of `e^{-y}` normalized on `(0, c)`.
pub fn truncated_exponential_cdf(c: f64, y: f64) -> f64 {
    if y <= 0.0 {
        0.0
    } else if y >= c {
        1.0
    } else {
        (1.0 - (-y).exp()) / (1.0 - (-c).exp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_round_trips() {
        let d = DecreasingDensity::default();
        for i in 1..300 {
            let y = 3.0 * i as f64 / 300.0;
            assert!((d.f_inv(d.f(y)) - y).abs() < 1e-12);
        }
    }

    #[test]
    fn superlevel_is_antitone() {
        let d = DecreasingDensity::default();
        let mut prev = f64::INFINITY;
        for i in 1..100 {
            let u = i as f64 / 100.0;
            let e = d.superlevel_end(u);
            assert!(e <= prev);
            prev = e;
        }
        assert_eq!(d.superlevel_end(0.01), 3.0);
    }

    #[test]
    fn increasing_density_rejected() {
        assert!(DecreasingDensity::new(|y| y + 1.0, |u| u - 1.0, 1.0).is_err());
        assert!(DecreasingDensity::truncated_exponential(-1.0).is_err());
    }
}
