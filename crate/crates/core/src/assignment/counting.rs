use num_bigint::BigUint;

use crate::error::{Error, Result};

/// Number of ways to place `n` neurons into blocks of sizes `counts`:
/// the multinomial coefficient `n! / (n_1! ... n_P!)`.
pub fn count_assignments(n: usize, counts: &[usize]) -> Result<BigUint> {
    let total: usize = counts.iter().sum();
    if total != n {
        return Err(Error::Partition(format!("counts sum to {total}, expected {n}")));
    }
    let mut acc = BigUint::from(1u32);
    let mut placed = 0usize;
    for &k in counts {
        // Multiply by C(placed + k, k) one factor at a time; every prefix is an
        // integer binomial so the division is exact.
        for i in 1..=k {
            acc *= placed + i;
            acc /= i;
        }
        placed += k;
    }
    Ok(acc)
}

/// Natural log of the balanced-split growth rate `P^(N + 1/2) N^(1 - P/2)`.
pub fn asymptotic_log_estimate(n: usize, workers: usize) -> f64 {
    let (n, p) = (n as f64, workers as f64);
    (n + 0.5) * p.ln() + (1.0 - p / 2.0) * n.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multinomials() {
        assert_eq!(count_assignments(4, &[2, 2]).unwrap(), BigUint::from(6u32));
        assert_eq!(count_assignments(6, &[2, 2, 2]).unwrap(), BigUint::from(90u32));
        assert_eq!(count_assignments(5, &[5]).unwrap(), BigUint::from(1u32));
        assert_eq!(count_assignments(3, &[0, 3, 0]).unwrap(), BigUint::from(1u32));
        assert!(count_assignments(3, &[1, 1]).is_err());
    }
}
