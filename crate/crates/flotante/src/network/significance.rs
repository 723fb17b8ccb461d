//! Binomial tail probabilities for edge significance.

use statrs::distribution::{Binomial, DiscreteCDF};

/// P[X >= observed] for X ~ Binomial(trials, p).
///
/// `observed = 0` is certain (p-value 1), and a degenerate null (`p = 0`)
/// makes any positive observation impossible (p-value 0).
pub fn binomial_upper_tail(trials: u64, p: f64, observed: u64) -> f64 {
    if observed == 0 {
        return 1.0;
    }
    if trials == 0 || observed > trials {
        return 0.0;
    }
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let dist = Binomial::new(p, trials).expect("validated parameters");
    // sf(k) = P[X > k], so P[X >= observed] = sf(observed - 1).
    dist.sf(observed - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exhaustive tail sum via a log-factorial table; an independent route
    /// used to pin the fast path.
    fn exhaustive_tail(trials: u64, p: f64, observed: u64) -> f64 {
        if observed == 0 {
            return 1.0;
        }
        if p <= 0.0 {
            return 0.0;
        }
        let n = trials as usize;
        let mut ln_fact = vec![0.0f64; n + 1];
        for i in 1..=n {
            ln_fact[i] = ln_fact[i - 1] + (i as f64).ln();
        }
        let ln_p = p.ln();
        let ln_q = (1.0 - p).ln();
        let mut total = 0.0;
        for k in observed..=trials {
            let ln_pmf = ln_fact[n] - ln_fact[k as usize] - ln_fact[(trials - k) as usize]
                + k as f64 * ln_p
                + (trials - k) as f64 * ln_q;
            total += ln_pmf.exp();
        }
        total.min(1.0)
    }

    #[test]
    fn tail_matches_exhaustive_sum() {
        for (trials, p, observed) in [
            (120u64, 1.0 / 12.0, 10u64),
            (120, 1.0 / 12.0, 25),
            (500, 0.02, 30),
            (50, 0.5, 35),
            (1000, 0.001, 5),
        ] {
            let fast = binomial_upper_tail(trials, p, observed);
            let slow = exhaustive_tail(trials, p, observed);
            assert!(
                (fast - slow).abs() < 1e-12,
                "trials={trials} p={p} k={observed}: {fast} vs {slow}"
            );
        }
    }

    #[test]
    fn edge_cases() {
        assert_eq!(binomial_upper_tail(10, 0.3, 0), 1.0);
        assert_eq!(binomial_upper_tail(10, 0.0, 3), 0.0);
        assert_eq!(binomial_upper_tail(10, 0.3, 11), 0.0);
        assert_eq!(binomial_upper_tail(10, 1.0, 10), 1.0);
    }
}
