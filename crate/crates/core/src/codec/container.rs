//! The `.ppc` container.
//!
//! Little-endian, in order: magic `PPC1`, `u8` version, `u32` N, S, K, k, d,
//! `f64` offset x/y/z and scale, `u8` centroid precision b, `u32` table
//! digest, S LEB128 segment lengths, the centroids bit-packed MSB-first at b
//! bits per axis (padded to a byte), then the S latent segments.

use super::{CodecError, Result};
use crate::bytes::{put_varint, ByteReader};
use crate::geometry::{ScaleParams, BOX_EXTENT};

pub const MAGIC: &[u8; 4] = b"PPC1";
pub const VERSION: u8 = 1;
pub const MIN_CENTROID_BITS: u8 = 8;
pub const MAX_CENTROID_BITS: u8 = 32;
pub const DEFAULT_CENTROID_BITS: u8 = 16;
/// Magic through digest.
pub const FIXED_HEADER_BYTES: usize = 4 + 1 + 5 * 4 + 4 * 8 + 1 + 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Bitstream {
    pub num_points: u32,
    pub patches: u32,
    pub patch_points: u32,
    pub decoded_points: u32,
    pub bottleneck: u32,
    pub scale: ScaleParams,
    pub centroid_bits: u8,
    pub table_digest: u32,
    /// Fixed-point centroids, `q = round(c / 64 * (2^b - 1))` per axis.
    pub centroids: Vec<[u32; 3]>,
    /// One range-coded latent segment per patch.
    pub segments: Vec<Vec<u8>>,
}

/// Sizes of the three parts of a serialized stream.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BppBreakdown {
    pub header_bits: u64,
    pub centroid_bits: u64,
    pub latent_bits: u64,
    pub points: u64,
}

impl BppBreakdown {
    pub fn total_bits(&self) -> u64 {
        self.header_bits + self.centroid_bits + self.latent_bits
    }

    pub fn bpp(&self) -> f64 {
        self.total_bits() as f64 / self.points as f64
    }

    pub fn centroid_bpp(&self) -> f64 {
        self.centroid_bits as f64 / self.points as f64
    }

    pub fn latent_bpp(&self) -> f64 {
        self.latent_bits as f64 / self.points as f64
    }
}

fn max_q(bits: u8) -> u64 {
    (1u64 << bits) - 1
}

pub fn quantize_centroid(c: &[f64; 3], bits: u8) -> [u32; 3] {
    let m = max_q(bits) as f64;
    c.map(|v| ((v / BOX_EXTENT).clamp(0.0, 1.0) * m).round() as u32)
}

pub fn dequantize_centroid(q: &[u32; 3], bits: u8) -> [f64; 3] {
    let m = max_q(bits) as f64;
    q.map(|v| v as f64 / m * BOX_EXTENT)
}

fn centroid_payload_bytes(count: usize, bits: u8) -> usize {
    (count * 3 * bits as usize).div_ceil(8)
}

fn pack(values: impl Iterator<Item = u32>, bits: u8, out: &mut Vec<u8>) {
    let mut acc = 0u64;
    let mut filled = 0u32;
    for v in values {
        acc = (acc << bits) | v as u64;
        filled += bits as u32;
        while filled >= 8 {
            filled -= 8;
            out.push((acc >> filled) as u8);
        }
        acc &= (1u64 << filled) - 1;
    }
    if filled > 0 {
        out.push((acc << (8 - filled)) as u8);
    }
}

fn unpack(data: &[u8], count: usize, bits: u8) -> Vec<u32> {
    let mut out = Vec::with_capacity(count);
    let mut acc = 0u64;
    let mut filled = 0u32;
    let mut bytes = data.iter();
    for _ in 0..count {
        while filled < bits as u32 {
            acc = (acc << 8) | *bytes.next().expect("payload length checked") as u64;
            filled += 8;
        }
        filled -= bits as u32;
        out.push(((acc >> filled) & max_q(bits)) as u32);
        acc &= (1u64 << filled) - 1;
    }
    out
}

impl Bitstream {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CodecError::Header(m));
        if !(MIN_CENTROID_BITS..=MAX_CENTROID_BITS).contains(&self.centroid_bits) {
            return bad(format!("centroid precision {} outside [8, 32]", self.centroid_bits));
        }
        if self.patches == 0 || self.decoded_points == 0 || self.bottleneck == 0 {
            return bad("S, k and d must be positive".into());
        }
        if self.patches as u64 * self.decoded_points as u64 != self.num_points as u64 {
            return bad(format!(
                "S*k = {}*{} does not equal N = {}",
                self.patches, self.decoded_points, self.num_points
            ));
        }
        if self.patch_points < self.decoded_points || self.patch_points % self.decoded_points != 0 {
            return bad(format!(
                "K = {} is not a multiple of k = {}",
                self.patch_points, self.decoded_points
            ));
        }
        if !(self.scale.scale.is_finite() && self.scale.scale > 0.0)
            || self.scale.offset.iter().any(|v| !v.is_finite())
        {
            return bad("invalid scale parameters".into());
        }
        let s = self.patches as usize;
        if self.centroids.len() != s || self.segments.len() != s {
            return bad(format!(
                "{} centroids and {} segments for S = {s}",
                self.centroids.len(),
                self.segments.len()
            ));
        }
        let m = max_q(self.centroid_bits);
        if self.centroids.iter().flatten().any(|&q| q as u64 > m) {
            return bad("centroid exceeds its precision".into());
        }
        Ok(())
    }

    pub fn serialize(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        for v in [
            self.num_points,
            self.patches,
            self.patch_points,
            self.decoded_points,
            self.bottleneck,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.scale.offset.iter().chain([&self.scale.scale]) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(self.centroid_bits);
        out.extend_from_slice(&self.table_digest.to_le_bytes());
        for seg in &self.segments {
            put_varint(&mut out, seg.len() as u32);
        }
        pack(
            self.centroids.iter().flatten().copied(),
            self.centroid_bits,
            &mut out,
        );
        for seg in &self.segments {
            out.extend_from_slice(seg);
        }
        Ok(out)
    }

    pub fn parse(data: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(data);
        let trunc = |what: &str| CodecError::Truncated(what.to_string());
        if r.take(4).ok_or_else(|| trunc("magic"))? != MAGIC {
            return Err(CodecError::Magic);
        }
        let version = r.u8().ok_or_else(|| trunc("header"))?;
        if version != VERSION {
            return Err(CodecError::Version(version));
        }
        let mut u = || r.u32().ok_or_else(|| trunc("header"));
        let (num_points, patches, patch_points, decoded_points, bottleneck) =
            (u()?, u()?, u()?, u()?, u()?);
        let mut f = || r.f64().ok_or_else(|| trunc("header"));
        let offset = [f()?, f()?, f()?];
        let scale = f()?;
        let centroid_bits = r.u8().ok_or_else(|| trunc("header"))?;
        let table_digest = r.u32().ok_or_else(|| trunc("header"))?;
        let mut bs = Bitstream {
            num_points,
            patches,
            patch_points,
            decoded_points,
            bottleneck,
            scale: ScaleParams { offset, scale },
            centroid_bits,
            table_digest,
            centroids: Vec::new(),
            segments: Vec::new(),
        };
        // header sanity before trusting S for allocation
        let s = patches as usize;
        if s > data.len() {
            return Err(CodecError::Header(format!("S = {s} exceeds the stream size")));
        }
        let mut lengths = Vec::with_capacity(s);
        for i in 0..s {
            let len = r
                .varint()
                .ok_or_else(|| CodecError::Truncated(format!("segment length of patch {i}")))?;
            lengths.push(len as usize);
        }
        if !(MIN_CENTROID_BITS..=MAX_CENTROID_BITS).contains(&centroid_bits) {
            return Err(CodecError::Header(format!(
                "centroid precision {centroid_bits} outside [8, 32]"
            )));
        }
        let packed = r
            .take(centroid_payload_bytes(s, centroid_bits))
            .ok_or_else(|| trunc("centroid payload"))?;
        let flat = unpack(packed, s * 3, centroid_bits);
        bs.centroids = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        for (i, &len) in lengths.iter().enumerate() {
            let seg = r.take(len).ok_or(CodecError::TruncatedPatch { index: i })?;
            bs.segments.push(seg.to_vec());
        }
        if r.remaining() != 0 {
            return Err(CodecError::TrailingBytes(r.remaining()));
        }
        bs.validate()?;
        Ok(bs)
    }

    pub fn breakdown(&self) -> BppBreakdown {
        let mut varints = Vec::new();
        for seg in &self.segments {
            put_varint(&mut varints, seg.len() as u32);
        }
        BppBreakdown {
            header_bits: 8 * (FIXED_HEADER_BYTES + varints.len()) as u64,
            centroid_bits: 8 * centroid_payload_bytes(self.centroids.len(), self.centroid_bits) as u64,
            latent_bits: 8 * self.segments.iter().map(Vec::len).sum::<usize>() as u64,
            points: self.num_points as u64,
        }
    }

    /// Total serialized bits per input point.
    pub fn bpp(&self) -> f64 {
        self.breakdown().bpp()
    }
}
