//! Carry-less byte-oriented range coder over static frequency tables.

use crate::error::{Error, Result};

const TOP: u32 = 1 << 24;
const BOT: u32 = 1 << 16;
/// Largest admissible frequency total.
pub const MAX_TOTAL: u32 = BOT;

/// Cumulative frequency table of a finite alphabet `0..len`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FreqTable {
    cum: Vec<u32>,
}

impl FreqTable {
    /// Frequencies must be positive for every symbol that will be coded and
    /// sum to at most [`MAX_TOTAL`].
    pub fn new(freqs: &[u32]) -> Result<Self> {
        let mut cum = Vec::with_capacity(freqs.len() + 1);
        cum.push(0u32);
        let mut acc = 0u64;
        for &f in freqs {
            acc += f as u64;
            cum.push(acc.min(u32::MAX as u64) as u32);
        }
        if acc == 0 || acc > MAX_TOTAL as u64 {
            return Err(Error::Format(format!("frequency total {acc} outside 1..={MAX_TOTAL}")));
        }
        Ok(Self { cum })
    }

    /// Scales raw counts to a total of at most [`MAX_TOTAL`], keeping every
    /// nonzero count at least 1.
    pub fn rescale(counts: &[u64]) -> Vec<u32> {
        let total: u64 = counts.iter().sum();
        if total <= MAX_TOTAL as u64 {
            return counts.iter().map(|&c| c as u32).collect();
        }
        let nonzero = counts.iter().filter(|&&c| c > 0).count() as u64;
        let budget = (MAX_TOTAL as u64).saturating_sub(nonzero);
        counts
            .iter()
            .map(|&c| if c == 0 { 0 } else { 1 + (c * budget / total) as u32 })
            .collect()
    }

    pub fn total(&self) -> u32 {
        *self.cum.last().expect("nonempty")
    }

    pub fn len(&self) -> usize {
        self.cum.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn span(&self, s: usize) -> (u32, u32) {
        (self.cum[s], self.cum[s + 1] - self.cum[s])
    }

    fn find(&self, target: u32) -> usize {
        // last index with cum[i] <= target
        self.cum.partition_point(|&c| c <= target) - 1
    }
}

pub struct Encoder {
    low: u32,
    range: u32,
    out: Vec<u8>,
}

impl Default for Encoder {
    fn default() -> Self {
        Self::new()
    }
}

impl Encoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            range: u32::MAX,
            out: Vec::new(),
        }
    }

    pub fn encode(&mut self, table: &FreqTable, symbol: usize) -> Result<()> {
        let (cum, freq) = table.span(symbol);
        if freq == 0 {
            return Err(Error::Format(format!("symbol {symbol} has zero frequency")));
        }
        self.range /= table.total();
        self.low = self.low.wrapping_add(cum * self.range);
        self.range *= freq;
        self.normalize();
        Ok(())
    }

    fn normalize(&mut self) {
        loop {
            if (self.low ^ self.low.wrapping_add(self.range)) >= TOP {
                if self.range >= BOT {
                    break;
                }
                self.range = self.low.wrapping_neg() & (BOT - 1);
            }
            self.out.push((self.low >> 24) as u8);
            self.low <<= 8;
            self.range <<= 8;
        }
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..4 {
            self.out.push((self.low >> 24) as u8);
            self.low <<= 8;
        }
        self.out
    }
}

pub struct Decoder<'a> {
    low: u32,
    range: u32,
    code: u32,
    input: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(input: &'a [u8]) -> Self {
        let mut d = Self {
            low: 0,
            range: u32::MAX,
            code: 0,
            input,
            pos: 0,
        };
        for _ in 0..4 {
            d.code = (d.code << 8) | d.next_byte() as u32;
        }
        d
    }

    fn next_byte(&mut self) -> u8 {
        let b = self.input.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        b
    }

    pub fn decode(&mut self, table: &FreqTable) -> Result<usize> {
        self.range /= table.total();
        let target = self.code.wrapping_sub(self.low) / self.range;
        if target >= table.total() {
            return Err(Error::Integrity("range decoder left the valid interval".into()));
        }
        let s = table.find(target);
        let (cum, freq) = table.span(s);
        self.low = self.low.wrapping_add(cum * self.range);
        self.range *= freq;
        loop {
            if (self.low ^ self.low.wrapping_add(self.range)) >= TOP {
                if self.range >= BOT {
                    break;
                }
                self.range = self.low.wrapping_neg() & (BOT - 1);
            }
            self.code = (self.code << 8) | self.next_byte() as u32;
            self.low <<= 8;
            self.range <<= 8;
        }
        Ok(s)
    }

    /// Whether decoding stayed within the input plus the flush bytes.
    pub fn consumed_within_input(&self) -> bool {
        self.pos <= self.input.len()
    }
}
