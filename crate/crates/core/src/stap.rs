//! Step-and-turn with attractive point (STAP) emission kernel.
//!
//! Given the current location `s`, the previous bearing `phi` and
//! parameters `theta = (mu, eta, sigma, tau, rho)`, the next location is
//! bivariate normal with
//!
//! ```text
//! mean = s + (1 - rho) tau (mu - s) + rho R(phi) eta
//! cov  = R(rho phi) sigma R(rho phi)'
//! ```
//!
//! `rho = 0` is a biased random walk toward `mu`, `rho = 1` a correlated
//! random walk, anything in between a mixture of the two.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Vector2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::random;

pub type Location = Vector2<f64>;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Direction of travel, always stored in `[-pi, pi)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct BearingAngle(f64);

impl BearingAngle {
    pub fn new(x: f64) -> Self {
        BearingAngle(wrap_angle(x))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for BearingAngle {
    fn default() -> Self {
        BearingAngle(0.0)
    }
}

/// Reduce an angle into `[-pi, pi)`.
pub fn wrap_angle(x: f64) -> f64 {
    let mut y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y >= PI {
        y -= 2.0 * PI;
    }
    y
}

/// Bearing of the displacement `from -> to`. Fails when the two locations
/// coincide.
pub fn bearing_angle(from: &Location, to: &Location) -> Result<BearingAngle> {
    let d = to - from;
    if d.x == 0.0 && d.y == 0.0 {
        return Err(Error::ZeroDisplacement { x: to.x, y: to.y });
    }
    Ok(BearingAngle::new(d.y.atan2(d.x)))
}

/// Bearings for a sequence of locations, where a zero displacement reuses
/// the previous bearing (or `fallback` for the first pair).
pub fn bearings_with_fallback(points: &[Location], fallback: BearingAngle) -> Vec<BearingAngle> {
    let mut out = Vec::with_capacity(points.len().saturating_sub(1));
    let mut prev = fallback;
    for w in points.windows(2) {
        let b = bearing_angle(&w[0], &w[1]).unwrap_or(prev);
        out.push(b);
        prev = b;
    }
    out
}

/// Anticlockwise rotation by `x` radians.
pub fn rotation_matrix(x: f64) -> Matrix2<f64> {
    let (s, c) = x.sin_cos();
    Matrix2::new(c, -s, s, c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StapParams {
    pub mu: Location,
    pub eta: Vector2<f64>,
    pub sigma: Matrix2<f64>,
    pub tau: f64,
    pub rho: f64,
}

impl StapParams {
    pub fn new(mu: Location, eta: Vector2<f64>, sigma: Matrix2<f64>, tau: f64, rho: f64) -> Result<Self> {
        let p = StapParams { mu, eta, sigma, tau, rho };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidParameter(format!("tau = {} outside (0, 1)", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::InvalidParameter(format!("rho = {} outside [0, 1]", self.rho)));
        }
        if !is_spd(&self.sigma) {
            return Err(Error::NotPositiveDefinite(format!("{:?}", self.sigma)));
        }
        if !(self.mu.iter().chain(self.eta.iter()).all(|v| v.is_finite())) {
            return Err(Error::InvalidParameter("non-finite mu or eta".into()));
        }
        Ok(())
    }
}

pub fn is_spd(m: &Matrix2<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
        && (m[(0, 1)] - m[(1, 0)]).abs() <= 1e-12 * (1.0 + m[(0, 1)].abs())
        && m[(0, 0)] > 0.0
        && m.determinant() > 0.0
}

/// Conditional mean and covariance of the next location.
pub fn stap_conditional_moments(
    theta: &StapParams,
    s_curr: &Location,
    phi_prev: BearingAngle,
) -> (Location, Matrix2<f64>) {
    let phi = phi_prev.value();
    let attract = (1.0 - theta.rho) * theta.tau * (theta.mu - s_curr);
    let drift = theta.rho * (rotation_matrix(phi) * theta.eta);
    let r = rotation_matrix(theta.rho * phi);
    let cov = r * theta.sigma * r.transpose();
    (s_curr + attract + drift, symmetrize(cov))
}

fn symmetrize(m: Matrix2<f64>) -> Matrix2<f64> {
    let off = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    Matrix2::new(m[(0, 0)], off, off, m[(1, 1)])
}

/// Log-density of a bivariate normal via its lower Cholesky factor.
pub fn mvn2_logpdf(x: &Location, mean: &Location, cov: &Matrix2<f64>) -> Result<f64> {
    let (l11, l21, l22) = chol_entries(cov)?;
    let d = x - mean;
    // forward substitution L z = d
    let z1 = d.x / l11;
    let z2 = (d.y - l21 * z1) / l22;
    Ok(-LN_2PI - (l11 * l22).ln() - 0.5 * (z1 * z1 + z2 * z2))
}

fn chol_entries(cov: &Matrix2<f64>) -> Result<(f64, f64, f64)> {
    let a = cov[(0, 0)];
    if !(a > 0.0) {
        return Err(Error::NotPositiveDefinite(format!("{cov:?}")));
    }
    let l11 = a.sqrt();
    let l21 = cov[(1, 0)] / l11;
    let rem = cov[(1, 1)] - l21 * l21;
    if !(rem > 0.0) {
        return Err(Error::NotPositiveDefinite(format!("{cov:?}")));
    }
    Ok((l11, l21, rem.sqrt()))
}

pub fn stap_logpdf(theta: &StapParams, s_next: &Location, s_curr: &Location, phi_prev: BearingAngle) -> Result<f64> {
    let (mean, cov) = stap_conditional_moments(theta, s_curr, phi_prev);
    mvn2_logpdf(s_next, &mean, &cov)
}

pub fn stap_sample<R: Rng + ?Sized>(theta: &StapParams, s_curr: &Location, phi_prev: BearingAngle, rng: &mut R) -> Location {
    let (mean, cov) = stap_conditional_moments(theta, s_curr, phi_prev);
    random::mvn2(&mean, &cov, rng)
}
