use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// A positive rational scale factor kept exact so that `floor(f * n)` has no
/// binary-fraction drift (`0.05 * 200` is exactly 10).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Factor {
    num: u128,
    den: u128,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FactorError {
    #[error("scale factor must be positive and finite, got {0}")]
    NotPositive(String),
    #[error("cannot parse scale factor `{0}`")]
    Syntax(String),
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Factor {
    pub fn new(num: u64, den: u64) -> Result<Self, FactorError> {
        if num == 0 || den == 0 {
            return Err(FactorError::NotPositive(format!("{num}/{den}")));
        }
        let g = gcd(num as u128, den as u128);
        Ok(Self { num: num as u128 / g, den: den as u128 / g })
    }

    /// Reads the shortest decimal that round-trips `f`, so `0.05` is 1/20.
    pub fn from_f64(f: f64) -> Result<Self, FactorError> {
        if !f.is_finite() || f <= 0.0 {
            return Err(FactorError::NotPositive(f.to_string()));
        }
        f.to_string().parse()
    }

    pub fn floor_mul(&self, n: usize) -> usize {
        (self.num * n as u128 / self.den) as usize
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl FromStr for Factor {
    type Err = FactorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let syntax = || FactorError::Syntax(s.to_string());
        let t = s.trim();
        if let Some((n, d)) = t.split_once('/') {
            let n: u64 = n.trim().parse().map_err(|_| syntax())?;
            let d: u64 = d.trim().parse().map_err(|_| syntax())?;
            return Factor::new(n, d);
        }
        let (int, frac) = t.split_once('.').unwrap_or((t, ""));
        if int.is_empty() && frac.is_empty() || !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) || frac.len() > 30 {
            return Err(syntax());
        }
        let digits = format!("{int}{frac}");
        let num: u128 = digits.parse().map_err(|_| syntax())?;
        let den = 10u128.pow(frac.len() as u32);
        if num == 0 {
            return Err(FactorError::NotPositive(s.to_string()));
        }
        let g = gcd(num, den);
        Ok(Self { num: num / g, den: den / g })
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_f64())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimal_factor_is_exact() {
        let f = Factor::from_f64(0.05).unwrap();
        assert_eq!(f, Factor::new(1, 20).unwrap());
        assert_eq!(f.floor_mul(200), 10);
        assert_eq!(f.floor_mul(10), 0);
        assert_eq!(Factor::from_f64(0.5).unwrap().floor_mul(100), 50);
        // 0.1 + 0.2 is not 0.3 in binary; the factor keeps what was written
        assert_eq!(Factor::from_f64(0.1 + 0.2).unwrap().floor_mul(10), 3);
    }

    #[test]
    fn rejects_non_positive() {
        assert!(Factor::from_f64(0.0).is_err());
        assert!(Factor::from_f64(-1.0).is_err());
        assert!(Factor::from_f64(f64::NAN).is_err());
        assert!("abc".parse::<Factor>().is_err());
        assert_eq!("3/4".parse::<Factor>().unwrap().floor_mul(7), 5);
    }
}
