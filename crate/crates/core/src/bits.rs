//! LSB-first bit packing for the checkpoint and filter encodings.

use num_bigint::BigUint;

#[derive(Debug, Default, Clone)]
pub struct BitWriter {
    bytes: Vec<u8>,
    len: u64,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bit_len(&self) -> u64 {
        self.len
    }

    pub fn push_bit(&mut self, bit: bool) {
        if self.len.is_multiple_of(8) {
            self.bytes.push(0);
        }
        if bit {
            *self.bytes.last_mut().unwrap() |= 1 << (self.len % 8);
        }
        self.len += 1;
    }

    /// Writes the low `width` bits of `value`.
    pub fn write(&mut self, value: u64, width: u32) {
        debug_assert!(width == 64 || value >> width == 0, "{value} does not fit in {width} bits");
        for i in 0..width {
            self.push_bit(value >> i & 1 == 1);
        }
    }

    pub fn write_big(&mut self, value: &BigUint, width: u64) {
        debug_assert!(value.bits() <= width);
        let digits = value.to_u64_digits();
        let mut left = width;
        let mut i = 0;
        while left > 0 {
            let take = left.min(64) as u32;
            self.write(digits.get(i).copied().unwrap_or(0), take);
            left -= take as u64;
            i += 1;
        }
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}

#[derive(Debug, Clone)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: u64,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn position(&self) -> u64 {
        self.pos
    }

    pub fn read_bit(&mut self) -> Option<bool> {
        let byte = *self.bytes.get((self.pos / 8) as usize)?;
        let bit = byte >> (self.pos % 8) & 1 == 1;
        self.pos += 1;
        Some(bit)
    }

    pub fn read(&mut self, width: u32) -> Option<u64> {
        let mut v = 0u64;
        for i in 0..width {
            if self.read_bit()? {
                v |= 1 << i;
            }
        }
        Some(v)
    }

    pub fn read_big(&mut self, width: u64) -> Option<BigUint> {
        let mut digits = Vec::with_capacity(width.div_ceil(64) as usize);
        let mut left = width;
        while left > 0 {
            let take = left.min(64) as u32;
            digits.push(self.read(take)?);
            left -= take as u64;
        }
        Some(BigUint::from_slice(
            &digits.iter().flat_map(|d| [*d as u32, (*d >> 32) as u32]).collect::<Vec<u32>>(),
        ))
    }
}
