//! Integer coding tables derived from the learned density.

use ndarray::ArrayView2;

use super::{EntropyError, EntropyModel, Result};
use crate::bytes::ByteReader;

/// Frequencies are scaled to `2^PRECISION`.
pub const PRECISION: u32 = 16;
pub const TOTAL: u32 = 1 << PRECISION;
/// Symbols added on each side of the observed latent range.
pub const MARGIN: i32 = 4;
/// Widest channel range accepted, in symbols.
pub const MAX_SYMBOLS: usize = 4096;

/// One channel: symbols `min .. min + cum.len()`. `cum[i]` is the upper
/// cumulative frequency of symbol `i`; the escape symbol owns
/// `[cum.last(), TOTAL)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelTable {
    pub min: i32,
    pub cum: Vec<u32>,
}

impl ChannelTable {
    /// Quantizes a PMF over `min..min + pmf.len()` to cumulative counts:
    /// `round(TOTAL * running sum)`, forced strictly increasing and leaving at
    /// least one count for the escape symbol.
    pub fn from_pmf(min: i32, pmf: &[f64]) -> Result<Self> {
        let n = pmf.len();
        if n == 0 {
            return Err(EntropyError::EmptyRange);
        }
        if n > MAX_SYMBOLS {
            return Err(EntropyError::RangeTooWide(n));
        }
        let mut cum = Vec::with_capacity(n);
        let mut running = 0.0;
        let mut prev = 0u32;
        for (i, &p) in pmf.iter().enumerate() {
            running += p.max(0.0);
            let target = (running * TOTAL as f64).round() as u32;
            let hi = TOTAL - 1 - (n - 1 - i) as u32;
            let v = target.clamp(prev + 1, hi);
            cum.push(v);
            prev = v;
        }
        Ok(Self { min, cum })
    }

    pub fn len(&self) -> usize {
        self.cum.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cum.is_empty()
    }

    pub fn max(&self) -> i32 {
        self.min + self.cum.len() as i32 - 1
    }

    /// Index into the table, or `None` for an escaped symbol.
    pub fn index(&self, symbol: i32) -> Option<usize> {
        let i = symbol as i64 - self.min as i64;
        (0..self.cum.len() as i64).contains(&i).then_some(i as usize)
    }

    /// `(low, freq)` of table slot `i`; `i == len()` is the escape slot.
    pub fn interval(&self, i: usize) -> (u32, u32) {
        let low = if i == 0 { 0 } else { self.cum[i - 1] };
        let high = self.cum.get(i).copied().unwrap_or(TOTAL);
        (low, high - low)
    }

    /// Slot whose interval contains `target`.
    pub fn lookup(&self, target: u32) -> usize {
        self.cum.partition_point(|&c| c <= target)
    }

    /// Ideal code length of a symbol under the quantized table, escape raw
    /// bits included.
    pub fn cost_bits(&self, symbol: i32) -> f64 {
        let (slot, extra) = match self.index(symbol) {
            Some(i) => (i, 0.0),
            None => (self.len(), 32.0),
        };
        let (_, freq) = self.interval(slot);
        PRECISION as f64 - (freq as f64).log2() + extra
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodingTables {
    pub channels: Vec<ChannelTable>,
}

impl CodingTables {
    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    /// Layout: `u32` channel count, then per channel `i32` min, `u32` symbol
    /// count and `u16` cumulative counts (all strictly below `2^16`).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.channels.len() as u32).to_le_bytes());
        for ch in &self.channels {
            out.extend_from_slice(&ch.min.to_le_bytes());
            out.extend_from_slice(&(ch.cum.len() as u32).to_le_bytes());
            for &c in &ch.cum {
                out.extend_from_slice(&(c as u16).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let bad = |m: &str| EntropyError::BadTables(m.to_string());
        let mut r = ByteReader::new(data);
        let count = r.u32().ok_or_else(|| bad("truncated"))? as usize;
        if count > 1 << 16 {
            return Err(bad("implausible channel count"));
        }
        let mut channels = Vec::with_capacity(count);
        for c in 0..count {
            let min = r.i32().ok_or_else(|| bad("truncated"))?;
            let n = r.u32().ok_or_else(|| bad("truncated"))? as usize;
            if n == 0 || n > MAX_SYMBOLS {
                return Err(EntropyError::BadTables(format!("channel {c}: {n} symbols")));
            }
            let mut cum = Vec::with_capacity(n);
            for _ in 0..n {
                cum.push(r.u16().ok_or_else(|| bad("truncated"))? as u32);
            }
            if cum[0] == 0 || cum.windows(2).any(|w| w[0] >= w[1]) {
                return Err(EntropyError::BadTables(format!(
                    "channel {c}: frequencies not strictly increasing"
                )));
            }
            if min.checked_add(n as i32 - 1).is_none() {
                return Err(EntropyError::BadTables(format!("channel {c}: range overflow")));
            }
            channels.push(ChannelTable { min, cum });
        }
        if r.remaining() != 0 {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { channels })
    }

    /// CRC-32 of the serialized tables; streams carry it to catch a
    /// mismatched model.
    pub fn digest(&self) -> u32 {
        crc32fast::hash(&self.to_bytes())
    }
}

/// Builds per-channel tables spanning the observed latents (`P x d`) plus
/// [`MARGIN`], with the model's PMF evaluated in `f64`.
pub fn build_coding_tables(
    model: &EntropyModel<f32>,
    latents: ArrayView2<i32>,
) -> Result<CodingTables> {
    let d = model.channels();
    if latents.ncols() != d {
        return Err(EntropyError::ChannelMismatch {
            expected: d,
            found: latents.ncols(),
        });
    }
    if latents.nrows() == 0 {
        return Err(EntropyError::EmptyRange);
    }
    let m64 = model.map(|v| v as f64);
    let mut channels = Vec::with_capacity(d);
    for (c, col) in latents.columns().into_iter().enumerate() {
        let lo = *col.iter().min().expect("non-empty") as i64 - MARGIN as i64;
        let hi = *col.iter().max().expect("non-empty") as i64 + MARGIN as i64;
        let n = (hi - lo + 1) as usize;
        if n > MAX_SYMBOLS || lo < i32::MIN as i64 || hi > i32::MAX as i64 {
            return Err(EntropyError::RangeTooWide(n));
        }
        let pmf: Vec<f64> = (lo..=hi).map(|s| m64.likelihood(c, s as f64)).collect();
        channels.push(ChannelTable::from_pmf(lo as i32, &pmf)?);
    }
    Ok(CodingTables { channels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn quarter_half_quarter() {
        let t = ChannelTable::from_pmf(-1, &[0.25, 0.5, 0.25]).unwrap();
        assert_eq!(t.cum, vec![16384, 49152, 65535]);
        assert_eq!(t.interval(3), (65535, 1));
        assert_eq!(t.lookup(0), 0);
        assert_eq!(t.lookup(16383), 0);
        assert_eq!(t.lookup(16384), 1);
        assert_eq!(t.lookup(65535), 3);
    }

    #[test]
    fn tiny_masses_still_get_a_count() {
        let t = ChannelTable::from_pmf(0, &[1e-12, 1.0 - 2e-12, 1e-12]).unwrap();
        assert_eq!(t.cum, vec![1, 65534, 65535]);
        for i in 0..=3 {
            assert!(t.interval(i).1 >= 1);
        }
    }

    #[test]
    fn bytes_roundtrip_and_validation() {
        let tables = CodingTables {
            channels: vec![
                ChannelTable::from_pmf(-3, &[0.1, 0.2, 0.4, 0.2, 0.1]).unwrap(),
                ChannelTable::from_pmf(7, &[1.0]).unwrap(),
            ],
        };
        let bytes = tables.to_bytes();
        assert_eq!(CodingTables::from_bytes(&bytes).unwrap(), tables);
        let mut bad = bytes.clone();
        // make channel 0 non-increasing
        bad[12..14].copy_from_slice(&0u16.to_le_bytes());
        assert!(CodingTables::from_bytes(&bad).is_err());
        assert!(CodingTables::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert_ne!(tables.digest(), CodingTables { channels: vec![] }.digest());
    }

    #[test]
    fn built_tables_cover_margin_and_are_deterministic() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let model = EntropyModel::<f32>::init(2, &mut rng);
        let z = ndarray::arr2(&[[0, 5], [-2, 5], [3, 6]]);
        let a = build_coding_tables(&model, z.view()).unwrap();
        let b = build_coding_tables(&model, z.view()).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.channels[0].min, a.channels[0].max()), (-6, 7));
        assert_eq!((a.channels[1].min, a.channels[1].max()), (1, 10));
        assert!(build_coding_tables(&model, ndarray::Array2::zeros((0, 2)).view()).is_err());
        assert!(build_coding_tables(&model, ndarray::Array2::zeros((1, 3)).view()).is_err());
    }
}
