//! Random variate helpers that stay well behaved for tiny shape parameters.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, StandardNormal};

use crate::data::Concentration;

/// The generator used for every chain. Seedable and with a resumable
/// stream position, so a stored chain can be continued bit-exactly.
pub type ChainRng = rand_chacha::ChaCha8Rng;

/// Natural log of a Gamma(shape, 1) variate.
///
/// For shape < 1 the draw uses `G = G' U^(1/shape)` with `G' ~ Gamma(shape
/// + 1)`, evaluated in log space so very small variates do not underflow.
pub fn ln_gamma_variate<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape >= 1.0 {
        let g: f64 = Gamma::new(shape, 1.0)
            .expect("valid gamma shape")
            .sample(rng);
        return g.ln();
    }
    let g: f64 = Gamma::new(shape + 1.0, 1.0)
        .expect("valid gamma shape")
        .sample(rng);
    // 1 - U lies in (0, 1]
    let u: f64 = 1.0 - rng.random::<f64>();
    g.ln() + u.ln() / shape
}

/// Gamma variate with the given shape and rate. Values below the smallest
/// normal double are clamped to it so the result is always positive.
pub fn gamma_variate<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    let ln = ln_gamma_variate(shape, rng) - rate.ln();
    ln.exp().max(f64::MIN_POSITIVE)
}

/// Dirichlet variate of dimension `dim`, normalised in log space. Every
/// component is strictly positive.
pub fn dirichlet_variate<R: Rng + ?Sized>(a: &Concentration, dim: usize, rng: &mut R) -> Vec<f64> {
    let logs: Vec<f64> = (0..dim).map(|i| ln_gamma_variate(a.get(i), rng)).collect();
    let lse = crate::stats::log_sum_exp(&logs);
    let mut w: Vec<f64> = logs
        .iter()
        .map(|l| (l - lse).exp().max(f64::MIN_POSITIVE))
        .collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn binomial_variate<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("valid binomial").sample(rng)
}

/// Multinomial variate by sequential conditional binomials.
pub fn multinomial_variate<R: Rng + ?Sized>(n: u64, p: &[f64], rng: &mut R) -> Vec<u64> {
    let mut out = vec![0u64; p.len()];
    let Some(last) = p.iter().rposition(|&v| v > 0.0) else {
        return out;
    };
    let mut remaining = n;
    let mut mass: f64 = p.iter().sum();
    for (idx, &pi) in p.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if idx == last {
            out[idx] = remaining;
            break;
        }
        let cond = if mass > 0.0 {
            (pi / mass).min(1.0)
        } else {
            0.0
        };
        let draw = binomial_variate(remaining, cond, rng);
        out[idx] = draw;
        remaining -= draw;
        mass -= pi;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn tiny_shape_gamma_stays_positive() {
        let mut rng = ChainRng::seed_from_u64(1);
        for _ in 0..10_000 {
            let g = gamma_variate(0.01, 1e-5, &mut rng);
            assert!(g > 0.0 && g.is_finite());
        }
    }

    #[test]
    fn gamma_moments() {
        let mut rng = ChainRng::seed_from_u64(2);
        let n = 200_000;
        for (shape, rate) in [(0.5, 2.0), (4.0, 3.0)] {
            let xs: Vec<f64> = (0..n)
                .map(|_| gamma_variate(shape, rate, &mut rng))
                .collect();
            let m = crate::stats::mean(&xs);
            let se = (shape / (rate * rate) / n as f64).sqrt();
            assert!((m - shape / rate).abs() < 4.0 * se, "{shape} {rate}: {m}");
        }
    }

    #[test]
    fn dirichlet_on_simplex() {
        let mut rng = ChainRng::seed_from_u64(3);
        for a in [0.01, 0.1, 1.0, 10.0] {
            let w = dirichlet_variate(&Concentration::Symmetric(a), 7, &mut rng);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(w.iter().all(|v| *v > 0.0));
        }
    }

    #[test]
    fn multinomial_conserves_total() {
        let mut rng = ChainRng::seed_from_u64(4);
        let x = multinomial_variate(137, &[0.2, 0.0, 0.5, 0.3], &mut rng);
        assert_eq!(x.iter().sum::<u64>(), 137);
        assert_eq!(x[1], 0);
    }
}
