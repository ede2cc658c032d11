use std::fmt;
use std::str::FromStr;

use derivpq::PqParams;

/// A quantizer configuration named like `8x8`, `4x16` (conventional
/// search) or `4x8,16` (derived bits, then full bits; two-pass search).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Method {
    pub m: usize,
    pub bits: u32,
    pub derived_bits: Option<u32>,
}

impl Method {
    pub fn is_derived(&self) -> bool {
        self.derived_bits.is_some()
    }

    /// Conventional methods still carry derived codebooks; they use half
    /// the bits, so `4x16` and `4x8,16` share one quantizer.
    pub fn pq_params(&self, seed: u64, max_iters: usize) -> PqParams {
        let bbar = self.derived_bits.unwrap_or(self.bits.div_ceil(2));
        PqParams::new(self.m, self.bits, bbar)
            .with_seed(seed)
            .with_max_iters(max_iters)
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("`{s}` is not a method like 8x8, 4x16 or 4x8,16");
        let (m, bits) = s.split_once('x').ok_or_else(bad)?;
        let m = m.trim().parse().map_err(|_| bad())?;
        let (bits, derived_bits) = match bits.split_once(',') {
            Some((d, b)) => (
                b.trim().parse().map_err(|_| bad())?,
                Some(d.trim().parse().map_err(|_| bad())?),
            ),
            None => (bits.trim().parse().map_err(|_| bad())?, None),
        };
        Ok(Method {
            m,
            bits,
            derived_bits,
        })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.derived_bits {
            Some(d) => write!(f, "{}x{},{}", self.m, d, self.bits),
            None => write!(f, "{}x{}", self.m, self.bits),
        }
    }
}
