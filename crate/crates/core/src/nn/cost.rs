//! Multiply-accumulate cost of a depthwise-separable convolution and its
//! ratio to the equivalent standard convolution.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvCostInput {
    pub h: u64,
    pub w: u64,
    pub d_in: u64,
    pub d_out: u64,
    pub k: u64,
}

impl ConvCostInput {
    pub fn new(h: u64, w: u64, d_in: u64, d_out: u64, k: u64) -> Result<Self> {
        let c = ConvCostInput { h, w, d_in, d_out, k };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if [self.h, self.w, self.d_in, self.d_out, self.k].contains(&0) {
            return Err(Error::InvalidArgument(format!("every cost field must be >= 1: {self:?}")));
        }
        Ok(())
    }

    fn plane(&self) -> Option<u64> {
        self.h.checked_mul(self.w)?.checked_mul(self.d_in)
    }
}

/// `h·w·d_in·k² + h·w·d_in·d_out`, exact or an overflow error.
pub fn conv_cost(c: &ConvCostInput) -> Result<u64> {
    c.validate()?;
    let overflow = || Error::Overflow("conv_cost");
    let plane = c.plane().ok_or_else(overflow)?;
    let depthwise = c.k.checked_mul(c.k).and_then(|k2| plane.checked_mul(k2)).ok_or_else(overflow)?;
    let pointwise = plane.checked_mul(c.d_out).ok_or_else(overflow)?;
    depthwise.checked_add(pointwise).ok_or_else(overflow)
}

/// Cost of the standard convolution with the same shape: `h·w·d_in·d_out·k²`.
pub fn standard_conv_cost(c: &ConvCostInput) -> Result<u64> {
    c.validate()?;
    c.plane()
        .and_then(|p| p.checked_mul(c.d_out))
        .and_then(|p| p.checked_mul(c.k))
        .and_then(|p| p.checked_mul(c.k))
        .ok_or(Error::Overflow("standard_conv_cost"))
}

/// Separable cost over standard cost. Evaluated in 128-bit integers so the
/// only rounding is the final division.
pub fn depletion_ratio(c: &ConvCostInput) -> Result<f64> {
    c.validate()?;
    let plane = c.h as u128 * c.w as u128 * c.d_in as u128;
    let k2 = c.k as u128 * c.k as u128;
    let num = plane
        .checked_mul(k2)
        .zip(plane.checked_mul(c.d_out as u128))
        .and_then(|(a, b)| a.checked_add(b));
    let den = plane.checked_mul(c.d_out as u128).and_then(|p| p.checked_mul(k2));
    match (num, den) {
        (Some(n), Some(d)) => Ok(ratio_u128(n, d)),
        _ => Ok(1.0 / c.d_out as f64 + 1.0 / k2 as f64),
    }
}

fn ratio_u128(n: u128, d: u128) -> f64 {
    let g = gcd(n, d);
    (n / g) as f64 / (d / g) as f64
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_input() {
        let c = ConvCostInput::new(224, 224, 3, 32, 3).unwrap();
        assert_eq!(conv_cost(&c).unwrap(), 6_171_648);
        let d = depletion_ratio(&c).unwrap();
        assert!((d - (1.0 / 9.0 + 1.0 / 32.0)).abs() < 1e-12);
        assert!((d - 0.142361).abs() < 1e-6);
    }

    #[test]
    fn degenerate_kernels() {
        let c = ConvCostInput::new(7, 5, 3, 1, 1).unwrap();
        assert_eq!(conv_cost(&c).unwrap(), 2 * 7 * 5 * 3);
        assert_eq!(depletion_ratio(&c).unwrap(), 2.0);
        let one = ConvCostInput::new(1, 1, 1, 1, 1).unwrap();
        assert_eq!(conv_cost(&one).unwrap(), 2);
    }

    #[test]
    fn invalid_and_overflow() {
        assert!(ConvCostInput::new(0, 1, 1, 1, 1).is_err());
        let big = ConvCostInput::new(u64::MAX / 2, 4, 1, 1, 1).unwrap();
        assert!(matches!(conv_cost(&big), Err(Error::Overflow(_))));
        assert!(depletion_ratio(&big).unwrap().is_finite());
    }

    proptest! {
        #[test]
        fn ratio_identity(h in 1u64..512, w in 1u64..512, di in 1u64..1024, dj in 1u64..1024, k in 1u64..8) {
            let c = ConvCostInput::new(h, w, di, dj, k).unwrap();
            let d = depletion_ratio(&c).unwrap();
            prop_assert!((d - (1.0 / dj as f64 + 1.0 / (k * k) as f64)).abs() < 1e-12);
            let cost = conv_cost(&c).unwrap();
            let standard = standard_conv_cost(&c).unwrap();
            prop_assert!((d * standard as f64 - cost as f64).abs() <= 1e-9 * cost as f64);
            if dj > 1 && k > 1 {
                prop_assert!(cost < standard);
            }
        }
    }
}
