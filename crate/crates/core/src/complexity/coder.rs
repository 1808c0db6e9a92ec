//! 32-bit carry-propagating range coder and an adaptive order-0 byte model
//! with an escape symbol.

const TOP: u32 = 1 << 24;

pub(crate) struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl RangeEncoder {
    pub(crate) fn new() -> Self {
        Self {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            out: Vec::new(),
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut temp = self.cache;
            loop {
                self.out.push(temp.wrapping_add(carry));
                temp = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = ((self.low >> 24) & 0xFF) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    /// Narrows to `[start, start+size)` out of `total`; `total ≤ 2^16`.
    pub(crate) fn encode(&mut self, start: u32, size: u32, total: u32) {
        debug_assert!(size > 0 && start + size <= total && total <= 1 << 16);
        let r = self.range / total;
        self.low += start as u64 * r as u64;
        self.range = size * r;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    /// Emits the shortest byte string that pins the final interval.
    ///
    /// The chosen code value is the one in `[low, low+range)` with the most
    /// trailing zero bytes; trailing zeros are then dropped because the
    /// decoder reads past the end as zeros. The leading byte of the
    /// carry-aware layout is always zero and is not stored.
    pub(crate) fn finish(mut self) -> Vec<u8> {
        let hi = self.low + self.range as u64;
        for k in (0..=4).rev() {
            let mask = (1u64 << (8 * k)) - 1;
            let v = (self.low + mask) & !mask;
            if v < hi {
                self.low = v;
                break;
            }
        }
        for _ in 0..5 {
            self.shift_low();
        }
        debug_assert_eq!(self.out[0], 0);
        let mut out = self.out.split_off(1);
        while out.last() == Some(&0) {
            out.pop();
        }
        out
    }
}

pub(crate) struct RangeDecoder<'a> {
    code: u32,
    range: u32,
    r: u32,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        let mut d = Self {
            code: 0,
            range: u32::MAX,
            r: 0,
            bytes,
            pos: 0,
        };
        for _ in 0..4 {
            d.code = (d.code << 8) | d.next_byte() as u32;
        }
        d
    }

    fn next_byte(&mut self) -> u8 {
        let b = self.bytes.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        b
    }

    /// Returns the cumulative frequency the current code falls in.
    pub(crate) fn peek(&mut self, total: u32) -> u32 {
        self.r = self.range / total;
        (self.code / self.r).min(total - 1)
    }

    /// Consumes `[start, start+size)` after a matching `peek`.
    pub(crate) fn consume(&mut self, start: u32, size: u32) {
        self.code -= start * self.r;
        self.range = size * self.r;
        while self.range < TOP {
            self.code = (self.code << 8) | self.next_byte() as u32;
            self.range <<= 8;
        }
    }
}

pub(crate) const INCREMENT: u32 = 32;
pub(crate) const RESCALE_AT: u32 = 1 << 16;

/// Adaptive frequency table over 256 byte symbols.
///
/// Unseen symbols have count zero and are reached through an escape symbol
/// followed by a uniform choice among the still-unseen symbols. The escape
/// count grows by the increment with every novel symbol and is dropped once
/// the alphabet is exhausted.
pub(crate) struct ByteModel {
    counts: [u32; 256],
    escape: u32,
    seen: u32,
    total: u32,
}

impl ByteModel {
    pub(crate) fn new() -> Self {
        Self {
            counts: [0; 256],
            escape: INCREMENT,
            seen: 0,
            total: 0,
        }
    }

    fn cum(&self, s: usize) -> u32 {
        self.counts[..s].iter().sum()
    }

    fn unseen_rank(&self, s: usize) -> u32 {
        self.counts[..s].iter().filter(|&&c| c == 0).count() as u32
    }

    fn update(&mut self, s: usize) {
        if self.counts[s] == 0 {
            self.seen += 1;
            self.escape = if self.seen == 256 { 0 } else { self.escape + INCREMENT };
        }
        self.counts[s] += INCREMENT;
        self.total += INCREMENT;
        if self.total + self.escape >= RESCALE_AT {
            // (c + 1) / 2 rounds up and keeps zero counts at zero.
            for c in self.counts.iter_mut() {
                *c = (*c + 1) / 2;
            }
            self.escape = (self.escape + 1) / 2;
            self.total = self.counts.iter().sum();
        }
    }

    pub(crate) fn encode(&mut self, enc: &mut RangeEncoder, s: u8) {
        let s = s as usize;
        let grand = self.total + self.escape;
        if self.counts[s] > 0 {
            enc.encode(self.cum(s), self.counts[s], grand);
        } else {
            enc.encode(self.total, self.escape, grand);
            enc.encode(self.unseen_rank(s), 1, 256 - self.seen);
        }
        self.update(s);
    }

    pub(crate) fn decode(&mut self, dec: &mut RangeDecoder) -> u8 {
        let grand = self.total + self.escape;
        let v = dec.peek(grand);
        let s = if v >= self.total {
            dec.consume(self.total, self.escape);
            let rank = dec.peek(256 - self.seen);
            dec.consume(rank, 1);
            let mut left = rank;
            let mut found = 0;
            for (i, &c) in self.counts.iter().enumerate() {
                if c == 0 {
                    if left == 0 {
                        found = i;
                        break;
                    }
                    left -= 1;
                }
            }
            found
        } else {
            let mut cum = 0;
            let mut found = 0;
            for (i, &c) in self.counts.iter().enumerate() {
                if v < cum + c {
                    found = i;
                    break;
                }
                cum += c;
            }
            dec.consume(cum, self.counts[found]);
            found
        };
        self.update(s);
        s as u8
    }
}
