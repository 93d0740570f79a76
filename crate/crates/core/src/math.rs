//! Small numerical helpers shared across modules.

use rand::Rng;
use rand_distr::{Distribution, Hypergeometric};
use statrs::distribution::{ContinuousCDF, Gamma};
use statrs::function::factorial::ln_binomial;
use statrs::function::gamma::{gamma_lr, ln_gamma};

/// `log(k!)` through the log-gamma function.
pub fn ln_factorial(k: u64) -> f64 {
    ln_gamma(k as f64 + 1.0)
}

/// Log of the binomial pmf, `-inf` outside the support.
pub fn ln_binomial_pmf(k: u64, n: u64, p: f64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    if p <= 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if p >= 1.0 {
        return if k == n { 0.0 } else { f64::NEG_INFINITY };
    }
    ln_binomial(n, k) + k as f64 * p.ln() + (n - k) as f64 * (-p).ln_1p()
}

/// Log of the Poisson pmf for a strictly positive rate.
pub fn ln_poisson_pmf(k: u64, rate: f64) -> f64 {
    k as f64 * rate.ln() - rate - ln_factorial(k)
}

/// `log P(X >= m)` for `X ~ Poisson(rate)`.
pub fn ln_poisson_sf(m: u64, rate: f64) -> f64 {
    if m == 0 {
        return 0.0;
    }
    let mf = m as f64;
    if rate >= mf - 10.0 * mf.sqrt() {
        return gamma_lr(mf, rate).ln();
    }
    // far tail: P(X >= m) = P(X = m) * sum_j rate^j / ((m + 1) ... (m + j))
    let mut term = 1.0;
    let mut sum = 1.0;
    for j in 1.. {
        term *= rate / (mf + j as f64);
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    ln_poisson_pmf(m, rate) + sum.ln()
}

/// Gamma distribution with the given mean and standard deviation, discretized
/// onto the integers `lo..=hi`. Day `k` receives the mass of `(k - 1, k]`; the
/// result is renormalized to sum to one.
pub fn discretized_gamma(mean: f64, sd: f64, lo: u32, hi: u32) -> Vec<f64> {
    assert!(mean > 0.0 && sd > 0.0 && lo <= hi);
    let shape = (mean / sd).powi(2);
    let rate = mean / (sd * sd);
    let gamma = Gamma::new(shape, rate).expect("valid gamma parameters");
    let mut pmf: Vec<f64> = (lo..=hi)
        .map(|k| gamma.cdf(k as f64) - gamma.cdf((k as f64 - 1.0).max(0.0)))
        .collect();
    let total: f64 = pmf.iter().sum();
    pmf.iter_mut().for_each(|p| *p /= total);
    pmf
}

/// Successes among `draws` taken without replacement from `population`
/// items of which `successes` are marked.
///
/// `rand_distr` rejects some large, lopsided parameter sets; those fall back
/// to drawing one item at a time.
pub fn sample_hypergeometric<G: Rng + ?Sized>(population: u64, successes: u64, draws: u64, rng: &mut G) -> u64 {
    assert!(successes <= population && draws <= population);
    if successes == 0 || draws == 0 {
        return 0;
    }
    if successes == population {
        return draws;
    }
    if draws == population {
        return successes;
    }
    if let Ok(h) = Hypergeometric::new(population, successes, draws) {
        return h.sample(rng);
    }
    // taking the complement keeps the loop short
    let (steps, complement) = if draws <= population - draws {
        (draws, false)
    } else {
        (population - draws, true)
    };
    let (mut left, mut marked, mut hits) = (population, successes, 0);
    for _ in 0..steps {
        if rng.random_range(0..left) < marked {
            marked -= 1;
            hits += 1;
        }
        left -= 1;
    }
    if complement {
        successes - hits
    } else {
        hits
    }
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    assert!(y > 0.0);
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// Derivative of [`softplus`], the logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
