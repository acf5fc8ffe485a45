//! Small numeric helpers shared across the crate.

/// Numerically stable log(sum(exp(xs))). Returns -inf for an empty slice or
/// when every entry is -inf.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Stable softplus: log(1 + exp(x)).
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Stable logistic sigmoid, the derivative of softplus.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of softplus: the raw value whose softplus equals `y` (y > 0).
pub fn softplus_inv(y: f64) -> f64 {
    // ln(e^y - 1), computed stably for small and large y.
    if y > 30.0 {
        y
    } else {
        (y.exp_m1()).ln()
    }
}

/// ln((2n-5)!!), the log-count of unrooted leaf-labeled binary topologies.
pub fn ln_unrooted_count(n_taxa: usize) -> f64 {
    if n_taxa <= 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    let mut k = 3u64;
    while k <= (2 * n_taxa - 5) as u64 {
        acc += (k as f64).ln();
        k += 2;
    }
    acc
}

/// (2n-5)!! as an exact integer for small n.
pub fn unrooted_count(n_taxa: usize) -> u64 {
    if n_taxa <= 3 {
        return 1;
    }
    let mut acc = 1u64;
    let mut k = 3u64;
    while k <= (2 * n_taxa - 5) as u64 {
        acc *= k;
        k += 2;
    }
    acc
}

/// Format with a fixed number of significant digits (scientific notation).
/// 17 significant digits round-trip an f64 exactly.
pub fn fmt_sig(x: f64, digits: usize) -> String {
    format!("{:.*e}", digits.saturating_sub(1), x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lse_matches_direct_sum() {
        let xs = [-1.0f64, 0.5, 2.0];
        let direct: f64 = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&xs) - direct).abs() < 1e-14);
    }

    #[test]
    fn lse_single_element_is_identity() {
        let x = -1234.567_f64;
        assert_eq!(log_sum_exp(&[x]).to_bits(), x.to_bits());
    }

    #[test]
    fn lse_handles_neg_inf() {
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
        let v = log_sum_exp(&[f64::NEG_INFINITY, 0.0]);
        assert!((v - 0.0).abs() < 1e-15);
    }

    #[test]
    fn softplus_inverse_round_trip() {
        for &y in &[0.01, 0.25, 1.0, 40.0] {
            assert!((softplus(softplus_inv(y)) - y).abs() < 1e-12);
        }
    }

    #[test]
    fn sigmoid_is_softplus_derivative() {
        let x = 0.37;
        let h = 1e-6;
        let fd = (softplus(x + h) - softplus(x - h)) / (2.0 * h);
        assert!((sigmoid(x) - fd).abs() < 1e-8);
    }

    #[test]
    fn unrooted_counts() {
        assert_eq!(unrooted_count(3), 1);
        assert_eq!(unrooted_count(4), 3);
        assert_eq!(unrooted_count(5), 15);
        assert_eq!(unrooted_count(6), 105);
        assert_eq!(unrooted_count(8), 10395);
        assert!((ln_unrooted_count(6) - 105f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn fmt_sig_17_round_trips() {
        let x = 0.1 + 0.2;
        let s = fmt_sig(x, 17);
        let back: f64 = s.parse().unwrap();
        assert_eq!(back.to_bits(), x.to_bits());
    }
}
