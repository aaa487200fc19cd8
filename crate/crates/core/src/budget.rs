//! Enumeration caps shared by every brute-force routine.

use crate::error::{Error, Result};

/// Default cap on enumerated points or function evaluations.
pub const DEFAULT_CAP: u128 = 10_000_000;

/// Active cap: `FC_BUDGET` if set to a positive integer, else [`DEFAULT_CAP`].
pub fn cap() -> u128 {
    std::env::var("FC_BUDGET")
        .ok()
        .and_then(|v| v.trim().parse::<u128>().ok())
        .filter(|&v| v > 0)
        .unwrap_or(DEFAULT_CAP)
}

pub fn check(needed: u128) -> Result<()> {
    let cap = cap();
    if needed > cap {
        return Err(Error::BudgetExceeded { needed, cap });
    }
    Ok(())
}

/// `p^e`, saturating instead of overflowing.
pub fn power(p: usize, e: usize) -> u128 {
    (0..e).fold(1u128, |acc, _| acc.saturating_mul(p as u128))
}

pub fn is_prime(n: usize) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= n {
        if n % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

pub fn check_modulus(p: usize) -> Result<()> {
    if p <= 2 || !is_prime(p) {
        return Err(Error::InvalidModulus(p));
    }
    Ok(())
}

pub fn check_arity(k: usize, min: usize, max: usize) -> Result<()> {
    if k < min || k > max {
        return Err(Error::InvalidArity { k, min, max });
    }
    Ok(())
}
