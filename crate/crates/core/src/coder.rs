//! Byte-renormalizing range coder plus quantization of model probabilities
//! into integer frequency tables.
//!
//! The coder keeps a 32-bit range and a 64-bit low register whose bit 32 is
//! the pending carry; carries are resolved by patching already-emitted bytes
//! (the +1 walks back through any 0xFF run), so the tail flush is always
//! exactly 4 bytes and no interval width is ever sacrificed to avoid
//! straddling. Interval subdivision uses full-width multiplies,
//! `(range * cum) >> 16`, which wastes at most one unit of range per coded
//! symbol; that keeps the whole-stream overhead within the 64-bit accounting
//! budget the codec asserts. One coder instance spans an entire file: all
//! scales, all stage passes, one 4-byte flush.

use crate::error::{Error, Result};
use crate::hash::Fnv64;

/// log2 of the frequency total: tables are quantized to 16-bit precision.
pub const PRECISION_BITS: u32 = 16;
/// All frequency tables sum to this.
pub const TOTAL: u32 = 1 << PRECISION_BITS;

const RENORM_LIMIT: u32 = 1 << 24;
const LOW_MASK: u64 = 0xFFFF_FFFF;

/// Cumulative integer frequencies for one symbol alphabet (2, 4 or 16
/// symbols here; anything in 2..=16 is accepted). Every symbol has
/// frequency >= 1 so any true symbol stays decodable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyTable {
    cum: [u32; 17],
    len: usize,
}

impl FrequencyTable {
    pub fn from_freqs(freqs: &[u32]) -> Self {
        assert!(
            (2..=16).contains(&freqs.len()),
            "alphabet size {} out of range",
            freqs.len()
        );
        let mut cum = [0u32; 17];
        let mut acc = 0u32;
        for (i, &f) in freqs.iter().enumerate() {
            assert!(f >= 1, "symbol {} has zero frequency", i);
            acc += f;
            cum[i + 1] = acc;
        }
        assert_eq!(acc, TOTAL, "frequencies must sum to 2^16");
        FrequencyTable { cum, len: freqs.len() }
    }

    pub fn alphabet(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn cum(&self, symbol: usize) -> u32 {
        self.cum[symbol]
    }

    #[inline]
    pub fn freq(&self, symbol: usize) -> u32 {
        self.cum[symbol + 1] - self.cum[symbol]
    }

    /// Largest symbol s with cum(s) <= target; target must be < TOTAL.
    #[inline]
    fn find(&self, target: u32) -> usize {
        debug_assert!(target < TOTAL);
        let mut s = 0;
        while s + 1 < self.len && self.cum[s + 1] <= target {
            s += 1;
        }
        s
    }

    /// Ideal coding cost of `symbol` under this table, in bits.
    pub fn cost_bits(&self, symbol: usize) -> f64 {
        -((self.freq(symbol) as f64) / TOTAL as f64).log2()
    }

    /// Feeds the table into a running digest (used to assert encoder and
    /// decoder computed identical tables).
    pub fn digest_into(&self, h: &mut Fnv64) {
        for s in 0..=self.len {
            h.write_u32(self.cum[s]);
        }
    }
}

/// Deterministic largest-remainder rounding of a probability row to integer
/// frequencies summing to 2^16 with a per-symbol floor of 1. Ties between
/// remainders break toward the lower index; the floor is enforced by
/// stealing from the currently largest entry, which can never create a new
/// zero because the largest entry is at least 2^16/16.
pub fn quantize_probs(row: &[f32]) -> FrequencyTable {
    let n = row.len();
    assert!((2..=16).contains(&n), "alphabet size {} out of range", n);
    let mut f = [0i64; 16];
    let mut rem = [0f64; 16];
    let mut sum: i64 = 0;
    for s in 0..n {
        // max(0.0) also maps NaN to 0; the floor-of-1 pass keeps it codable.
        let t = (row[s].max(0.0) as f64) * TOTAL as f64;
        let fl = t.floor();
        f[s] = fl as i64;
        rem[s] = t - fl;
        sum += f[s];
    }
    let mut deficit = TOTAL as i64 - sum;
    if deficit > 0 {
        let mut order = [0usize; 16];
        for (i, o) in order[..n].iter_mut().enumerate() {
            *o = i;
        }
        order[..n].sort_unstable_by(|&a, &b| {
            rem[b].partial_cmp(&rem[a]).unwrap().then(a.cmp(&b))
        });
        let mut i = 0;
        while deficit > 0 {
            f[order[i % n]] += 1;
            i += 1;
            deficit -= 1;
        }
    }
    while deficit < 0 {
        let j = argmax(&f[..n]);
        f[j] -= 1;
        deficit += 1;
    }
    for s in 0..n {
        if f[s] == 0 {
            f[s] = 1;
            let j = argmax(&f[..n]);
            debug_assert!(f[j] > 1);
            f[j] -= 1;
        }
    }
    let freqs: Vec<u32> = f[..n].iter().map(|&x| x as u32).collect();
    FrequencyTable::from_freqs(&freqs)
}

fn argmax(f: &[i64]) -> usize {
    let mut j = 0;
    for (i, &v) in f.iter().enumerate().skip(1) {
        if v > f[j] {
            j = i;
        }
    }
    j
}

#[inline]
fn bounds(range: u32, table: &FrequencyTable, symbol: usize) -> (u64, u64) {
    let r = range as u64;
    let lo = (r * table.cum(symbol) as u64) >> PRECISION_BITS;
    let hi = if table.cum(symbol + 1) == TOTAL {
        r
    } else {
        (r * table.cum(symbol + 1) as u64) >> PRECISION_BITS
    };
    (lo, hi)
}

pub struct RangeEncoder {
    low: u64,
    range: u32,
    buf: Vec<u8>,
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder { low: 0, range: u32::MAX, buf: Vec::new() }
    }

    pub fn encode(&mut self, table: &FrequencyTable, symbol: usize) {
        debug_assert!(symbol < table.alphabet());
        let (lo, hi) = bounds(self.range, table, symbol);
        self.low += lo;
        if self.low >> 32 != 0 {
            self.propagate_carry();
            self.low &= LOW_MASK;
        }
        self.range = (hi - lo) as u32;
        while self.range < RENORM_LIMIT {
            self.shift_out();
        }
    }

    fn propagate_carry(&mut self) {
        for b in self.buf.iter_mut().rev() {
            if *b == 0xFF {
                *b = 0;
            } else {
                *b += 1;
                return;
            }
        }
        // The interval is nested inside the initial [0, 2^32): a carry can
        // only straddle a boundary some byte was already emitted across.
        unreachable!("range coder carry before any emitted byte");
    }

    fn shift_out(&mut self) {
        self.buf.push((self.low >> 24) as u8);
        self.low = (self.low << 8) & LOW_MASK;
        self.range <<= 8;
    }

    /// Byte position the next emitted byte would take; with the 4 tail bytes
    /// of [`finish`] this tracks payload growth for rate accounting.
    pub fn bytes_emitted(&self) -> usize {
        self.buf.len()
    }

    /// Flushes the 4-byte tail and returns the payload.
    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..4 {
            self.shift_out();
        }
        self.buf
    }
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

pub struct RangeDecoder<'a> {
    code: u32,
    range: u32,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(buf: &'a [u8]) -> Result<Self> {
        if buf.len() < 4 {
            return Err(Error::CorruptStream(format!(
                "payload of {} bytes is shorter than the coder tail",
                buf.len()
            )));
        }
        let code = u32::from_be_bytes([buf[0], buf[1], buf[2], buf[3]]);
        Ok(RangeDecoder { code, range: u32::MAX, buf, pos: 4 })
    }

    pub fn decode(&mut self, table: &FrequencyTable) -> Result<usize> {
        let r = self.range as u64;
        // Largest cumulative value whose lower bound does not exceed code.
        let target = ((((self.code as u64) + 1) << PRECISION_BITS) - 1) / r;
        let symbol = table.find(target as u32);
        let (lo, hi) = bounds(self.range, table, symbol);
        self.code -= lo as u32;
        self.range = (hi - lo) as u32;
        while self.range < RENORM_LIMIT {
            let byte = *self
                .buf
                .get(self.pos)
                .ok_or_else(|| Error::CorruptStream("truncated payload".into()))?;
            self.pos += 1;
            self.code = (self.code << 8) | byte as u32;
            self.range <<= 8;
        }
        Ok(symbol)
    }

    /// Bytes consumed so far, including the 4-byte priming read.
    pub fn bytes_consumed(&self) -> usize {
        self.pos
    }
}
