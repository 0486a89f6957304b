//! Carry-less range coder (Subbotin style) over 16-bit frequencies.
//!
//! Every stream ends with a 16-bit checksum of the coded symbols, coded as
//! a raw value, followed by the shortest flush that pins the final interval.
//! The decoder pads missing tail bytes with zeros.

use super::tables::{CodingTables, PRECISION, TOTAL};
use super::{EntropyError, Result};

const TOP: u64 = 1 << 24;
const BOT: u32 = 1 << 16;
/// Upper bound on bytes a stream adds beyond the symbols' information
/// content: 2 for the checksum, at most 2 for the flush.
pub const STREAM_OVERHEAD_BYTES: usize = 4;

pub struct RangeEncoder {
    low: u32,
    range: u32,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            range: u32::MAX,
            out: Vec::new(),
        }
    }

    /// Codes the interval `[cum_low, cum_low + freq)` of `2^16`.
    pub fn encode(&mut self, cum_low: u32, freq: u32) {
        debug_assert!(freq > 0 && cum_low + freq <= TOTAL);
        self.range >>= PRECISION;
        self.low = self.low.wrapping_add(cum_low * self.range);
        self.range *= freq;
        self.normalize();
    }

    pub fn encode_raw16(&mut self, v: u16) {
        self.encode(v as u32, 1);
    }

    fn normalize(&mut self) {
        loop {
            let low = self.low as u64;
            if (low ^ (low + self.range as u64)) < TOP {
                // top byte settled
            } else if self.range < BOT {
                self.range = self.low.wrapping_neg() & (BOT - 1);
            } else {
                break;
            }
            self.out.push((self.low >> 24) as u8);
            self.low <<= 8;
            self.range <<= 8;
        }
    }

    /// Emits the fewest leading bytes of a value inside the final interval;
    /// the decoder fills the rest with zeros.
    pub fn finish(mut self) -> Vec<u8> {
        let low = self.low as u64;
        let high = low + self.range as u64;
        for emit in 0..=4u32 {
            let step = 1u64 << (32 - 8 * emit);
            let v = low.div_ceil(step) * step;
            if v < high && v < 1 << 32 {
                for b in 0..emit {
                    self.out.push((v >> (24 - 8 * b)) as u8);
                }
                return self.out;
            }
        }
        unreachable!("emitting all four bytes of low always works")
    }
}

pub struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    padding: usize,
    low: u32,
    range: u32,
    code: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Result<Self> {
        let mut d = Self {
            data,
            pos: 0,
            padding: 0,
            low: 0,
            range: u32::MAX,
            code: 0,
        };
        for _ in 0..4 {
            d.code = (d.code << 8) | d.next_byte()? as u32;
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> Result<u8> {
        if let Some(&b) = self.data.get(self.pos) {
            self.pos += 1;
            Ok(b)
        } else {
            self.padding += 1;
            if self.padding > STREAM_OVERHEAD_BYTES {
                Err(EntropyError::Truncated)
            } else {
                Ok(0)
            }
        }
    }

    /// Target frequency for the next symbol; follow with [`Self::consume`].
    pub fn target(&mut self) -> Result<u32> {
        self.range >>= PRECISION;
        if self.range == 0 {
            return Err(EntropyError::Corrupt("coder state collapsed".into()));
        }
        let t = self.code.wrapping_sub(self.low) / self.range;
        if t >= TOTAL {
            return Err(EntropyError::Corrupt("target outside the frequency range".into()));
        }
        Ok(t)
    }

    pub fn consume(&mut self, cum_low: u32, freq: u32) -> Result<()> {
        self.low = self.low.wrapping_add(cum_low * self.range);
        self.range *= freq;
        loop {
            let low = self.low as u64;
            if (low ^ (low + self.range as u64)) < TOP {
            } else if self.range < BOT {
                self.range = self.low.wrapping_neg() & (BOT - 1);
            } else {
                return Ok(());
            }
            self.code = (self.code << 8) | self.next_byte()? as u32;
            self.low <<= 8;
            self.range <<= 8;
        }
    }

    pub fn decode_raw16(&mut self) -> Result<u16> {
        let v = self.target()?;
        self.consume(v, 1)?;
        Ok(v as u16)
    }

    /// Fails if bytes remain beyond what the coder could have produced.
    pub fn finish(self) -> Result<()> {
        if self.pos < self.data.len() {
            return Err(EntropyError::TrailingBytes(self.data.len() - self.pos));
        }
        Ok(())
    }
}

fn checksum(symbols: &[i32]) -> u16 {
    let mut h = crc32fast::Hasher::new();
    for s in symbols {
        h.update(&s.to_le_bytes());
    }
    h.finalize() as u16
}

fn check_channels(tables: &CodingTables, channels: &[usize]) -> Result<()> {
    let n = tables.num_channels();
    match channels.iter().find(|&&c| c >= n) {
        Some(&c) => Err(EntropyError::ChannelMismatch {
            expected: n,
            found: c + 1,
        }),
        None => Ok(()),
    }
}

/// Codes `symbols[i]` with table `channels[i]`. Out-of-range symbols take
/// the escape slot followed by their raw 32-bit value.
pub fn range_encode(symbols: &[i32], channels: &[usize], tables: &CodingTables) -> Result<Vec<u8>> {
    if symbols.len() != channels.len() {
        return Err(EntropyError::LengthMismatch {
            symbols: symbols.len(),
            channels: channels.len(),
        });
    }
    check_channels(tables, channels)?;
    let mut enc = RangeEncoder::new();
    for (&s, &c) in symbols.iter().zip(channels) {
        let table = &tables.channels[c];
        match table.index(s) {
            Some(i) => {
                let (low, freq) = table.interval(i);
                enc.encode(low, freq);
            }
            None => {
                let (low, freq) = table.interval(table.len());
                enc.encode(low, freq);
                let raw = s as u32;
                enc.encode_raw16((raw >> 16) as u16);
                enc.encode_raw16(raw as u16);
            }
        }
    }
    enc.encode_raw16(checksum(symbols));
    Ok(enc.finish())
}

/// Inverse of [`range_encode`]; the symbol count is `channels.len()`.
pub fn range_decode(bytes: &[u8], channels: &[usize], tables: &CodingTables) -> Result<Vec<i32>> {
    check_channels(tables, channels)?;
    let mut dec = RangeDecoder::new(bytes)?;
    let mut out = Vec::with_capacity(channels.len());
    for &c in channels {
        let table = &tables.channels[c];
        let slot = table.lookup(dec.target()?);
        let (low, freq) = table.interval(slot);
        dec.consume(low, freq)?;
        if slot < table.len() {
            out.push(table.min + slot as i32);
        } else {
            let hi = dec.decode_raw16()? as u32;
            let lo = dec.decode_raw16()? as u32;
            out.push(((hi << 16) | lo) as i32);
        }
    }
    let expected = dec.decode_raw16()?;
    dec.finish()?;
    if expected != checksum(&out) {
        return Err(EntropyError::ChecksumMismatch);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::ChannelTable;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tables() -> CodingTables {
        CodingTables {
            channels: vec![
                ChannelTable::from_pmf(-2, &[0.05, 0.2, 0.5, 0.2, 0.05]).unwrap(),
                ChannelTable::from_pmf(0, &[0.5, 0.5]).unwrap(),
                ChannelTable::from_pmf(10, &[0.999, 0.001]).unwrap(),
            ],
        }
    }

    #[test]
    fn empty_roundtrip() {
        let t = tables();
        let bytes = range_encode(&[], &[], &t).unwrap();
        assert!(bytes.len() <= STREAM_OVERHEAD_BYTES);
        assert_eq!(range_decode(&bytes, &[], &t).unwrap(), Vec::<i32>::new());
    }

    #[test]
    fn fair_coin_costs_one_bit() {
        let t = tables();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s: Vec<i32> = (0..1000).map(|_| rng.random_range(0..2)).collect();
        let ch = vec![1; 1000];
        let bytes = range_encode(&s, &ch, &t).unwrap();
        // 1000 bits of information plus at most 4 bytes of tail
        assert!((121..=129).contains(&bytes.len()), "{}", bytes.len());
        assert_eq!(range_decode(&bytes, &ch, &t).unwrap(), s);
    }

    #[test]
    fn escapes_roundtrip() {
        let t = tables();
        let s = vec![-2, 2, 3, -3, i32::MIN, i32::MAX, 0, 11, 12, 9, 1_000_000];
        let ch = vec![0, 0, 0, 0, 0, 0, 1, 2, 2, 2, 1];
        let bytes = range_encode(&s, &ch, &t).unwrap();
        assert_eq!(range_decode(&bytes, &ch, &t).unwrap(), s);
    }

    #[test]
    fn fuzzed_roundtrips() {
        let t = tables();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..2000 {
            let n = rng.random_range(0..64);
            let ch: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
            let s: Vec<i32> = ch
                .iter()
                .map(|&c| {
                    if rng.random_bool(0.05) {
                        rng.random()
                    } else {
                        let tb = &t.channels[c];
                        rng.random_range(tb.min..=tb.max())
                    }
                })
                .collect();
            let bytes = range_encode(&s, &ch, &t).unwrap();
            assert_eq!(range_decode(&bytes, &ch, &t).unwrap(), s);
        }
    }

    #[test]
    fn size_within_ideal_plus_overhead() {
        let t = tables();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let ch: Vec<usize> = (0..200).map(|_| rng.random_range(0..3)).collect();
            let s: Vec<i32> = ch
                .iter()
                .map(|&c| {
                    let tb = &t.channels[c];
                    rng.random_range(tb.min..=tb.max())
                })
                .collect();
            let ideal: f64 = s.iter().zip(&ch).map(|(&v, &c)| t.channels[c].cost_bits(v)).sum();
            let bytes = range_encode(&s, &ch, &t).unwrap();
            // the 16-bit checksum is payload; the coder itself may add 32 bits
            let bound = ideal + 16.0 + 32.0;
            assert!((bytes.len() * 8) as f64 <= bound, "{} vs {ideal}", bytes.len());
        }
    }

    #[test]
    fn faults_are_detected() {
        let t = tables();
        let s: Vec<i32> = (0..50).map(|i| (i % 5) - 2).collect();
        let ch = vec![0; 50];
        let bytes = range_encode(&s, &ch, &t).unwrap();

        let mut longer = bytes.clone();
        longer.extend_from_slice(&[1, 2, 3, 4, 5]);
        assert!(range_decode(&longer, &ch, &t).is_err());

        assert!(matches!(
            range_decode(&bytes[..bytes.len() / 2], &ch, &t),
            Err(_)
        ));

        let mut other = t.clone();
        other.channels[0] = ChannelTable::from_pmf(-2, &[0.2, 0.2, 0.2, 0.2, 0.2]).unwrap();
        assert!(range_decode(&bytes, &ch, &other).is_err());

        assert!(range_encode(&[1], &[3], &t).is_err());
        assert!(range_encode(&[1, 2], &[0], &t).is_err());
    }
}
