//! Random variate helpers that stay usable at the extreme shape parameters a
//! weak-limit sampler produces (Dirichlet entries with shape ~1e-8, Beta
//! draws whose mass sits within 1e-300 of an endpoint).
//!
//! Gamma variates with small shape are generated in log space using
//! `G(a) = G(a + 1) * U^(1/a)`, so normalising a Dirichlet never divides
//! zero by zero.

use nalgebra::{Cholesky, Matrix2, Vector2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal as StatNormal};

/// The generator used for every stream in the sampler.
pub type ChainRng = ChaCha8Rng;

/// Derive an independent stream from a master seed and a tuple of tags.
///
/// Streams are keyed by content, never by scheduling order, which is what
/// makes a run bitwise reproducible for any thread count.
pub fn stream(seed: u64, tags: &[u64]) -> ChainRng {
    let mut h = splitmix(seed ^ 0x5851_F42D_4C95_7F2D);
    for &t in tags {
        h = splitmix(h ^ splitmix(t.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    }
    ChainRng::seed_from_u64(h)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform on the open interval (0, 1).
pub fn open01<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// log of a Gamma(shape, 1) variate. `shape == 0` yields `-inf`.
pub fn ln_gamma_variate<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    debug_assert!(shape >= 0.0, "gamma shape must be nonnegative, got {shape}");
    if shape <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if shape < 1.0 {
        let g = Gamma::new(shape + 1.0, 1.0).expect("valid gamma").sample(rng);
        g.ln() + open01(rng).ln() / shape
    } else {
        Gamma::new(shape, 1.0).expect("valid gamma").sample(rng).ln()
    }
}

/// Gamma(shape, rate) variate.
pub fn gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    debug_assert!(rate > 0.0);
    ln_gamma_variate(shape, rng).exp() / rate
}

/// Beta(a, b) variate; either parameter may be zero (point mass at the
/// opposite endpoint).
pub fn beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    if a <= 0.0 && b <= 0.0 {
        return 0.5;
    }
    let la = ln_gamma_variate(a, rng);
    let lb = ln_gamma_variate(b, rng);
    if la == f64::NEG_INFINITY {
        return 0.0;
    }
    if lb == f64::NEG_INFINITY {
        return 1.0;
    }
    // a / (a + b) computed as a logistic of the log ratio
    1.0 / (1.0 + (lb - la).exp())
}

/// Dirichlet variate; zero parameters give exact zeros. Parameters must not
/// all be zero.
pub fn dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    let logs: Vec<f64> = alpha.iter().map(|&a| ln_gamma_variate(a, rng)).collect();
    if logs.iter().any(|l| l.is_finite()) {
        return normalize_log(&logs);
    }
    // every variate underflowed: all mass on one coordinate, chosen in
    // proportion to the parameters (the small-parameter limit)
    let mut out = vec![0.0; alpha.len()];
    out[categorical(alpha, rng)] = 1.0;
    out
}

/// Turn log-weights into a probability vector.
pub fn normalize_log(logs: &[f64]) -> Vec<f64> {
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!(max.is_finite(), "cannot normalize: all weights are zero");
    let mut out: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
    let s: f64 = out.iter().sum();
    for v in &mut out {
        *v /= s;
    }
    out
}

pub fn bernoulli<R: Rng + ?Sized>(p: f64, rng: &mut R) -> bool {
    rng.random::<f64>() < p
}

pub fn binomial<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    rand_distr::Binomial::new(n, p).expect("valid binomial").sample(rng)
}

/// Index drawn proportionally to nonnegative weights (not necessarily
/// normalised).
pub fn categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    assert!(total > 0.0 && total.is_finite(), "categorical weights sum to {total}");
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last = i;
            if u < w {
                return i;
            }
            u -= w;
        }
    }
    last
}

/// Bivariate normal draw with the given mean and covariance.
pub fn mvn2<R: Rng + ?Sized>(mean: &Vector2<f64>, cov: &Matrix2<f64>, rng: &mut R) -> Vector2<f64> {
    let l = cholesky2(cov);
    let z = Vector2::new(std_normal(rng), std_normal(rng));
    mean + l * z
}

/// Lower Cholesky factor of a 2x2 SPD matrix, with a 1e-10 diagonal jitter
/// retry for matrices that are SPD analytically but not numerically.
pub fn cholesky2(m: &Matrix2<f64>) -> Matrix2<f64> {
    match Cholesky::new(*m) {
        Some(c) => c.l(),
        None => Cholesky::new(m + Matrix2::identity() * 1e-10)
            .expect("matrix is not positive definite")
            .l(),
    }
}

/// Inverse-Wishart draw, density proportional to
/// `|S|^{-(df + 3)/2} exp(-tr(scale S^{-1}) / 2)`.
pub fn inverse_wishart2<R: Rng + ?Sized>(df: f64, scale: &Matrix2<f64>, rng: &mut R) -> Matrix2<f64> {
    let scale_inv = scale.try_inverse().expect("IW scale must be invertible");
    loop {
        let l = cholesky2(&scale_inv);
        // Bartlett decomposition of a Wishart(df, scale^{-1}) draw
        let c1 = 2.0 * gamma(df / 2.0, 1.0, rng);
        let c2 = 2.0 * gamma((df - 1.0) / 2.0, 1.0, rng);
        let a = Matrix2::new(c1.sqrt(), 0.0, std_normal(rng), c2.sqrt());
        let la = l * a;
        let w = la * la.transpose();
        if let Some(s) = w.try_inverse() {
            let s = (s + s.transpose()) * 0.5;
            if s[(0, 0)] > 0.0 && s.determinant() > 0.0 && s.iter().all(|v| v.is_finite()) {
                return s;
            }
        }
    }
}

/// Normal(mean, sd^2) truncated to (lo, hi).
pub fn truncated_normal<R: Rng + ?Sized>(mean: f64, sd: f64, lo: f64, hi: f64, rng: &mut R) -> f64 {
    debug_assert!(lo < hi && sd > 0.0);
    let a = (lo - mean) / sd;
    let b = (hi - mean) / sd;
    let z = if a > 4.0 {
        tail_normal(a, b, rng)
    } else if b < -4.0 {
        -tail_normal(-b, -a, rng)
    } else {
        let n = StatNormal::new(0.0, 1.0).expect("standard normal");
        let (pa, pb) = (n.cdf(a), n.cdf(b));
        let u = pa + open01(rng) * (pb - pa);
        n.inverse_cdf(u).clamp(a, b)
    };
    let x = mean + sd * z;
    // keep strictly inside the open interval
    if x <= lo || x >= hi {
        let eps = (hi - lo) * 1e-12;
        x.clamp(lo + eps, hi - eps)
    } else {
        x
    }
}

/// Standard normal restricted to [a, b] with 0 < a, via exponential
/// rejection.
fn tail_normal<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let lambda = (a + (a * a + 4.0).sqrt()) / 2.0;
    loop {
        let z = a - open01(rng).ln() / lambda;
        if z > b {
            continue;
        }
        if open01(rng).ln() <= -(z - lambda) * (z - lambda) / 2.0 {
            return z;
        }
    }
}

/// Number of occupied tables when `customers` arrive at a Chinese
/// restaurant with concentration `conc`.
pub fn crp_tables<R: Rng + ?Sized>(customers: u64, conc: f64, rng: &mut R) -> u64 {
    if customers == 0 {
        return 0;
    }
    if conc <= 0.0 {
        return 1;
    }
    let mut t = 0;
    for h in 0..customers {
        if bernoulli(conc / (h as f64 + conc), rng) {
            t += 1;
        }
    }
    t
}
