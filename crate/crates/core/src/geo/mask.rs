use std::fmt;

use super::GeoError;

/// Packed binary mask, row-major, 64 pixels per word.
///
/// Rows are padded to a whole number of words so row operations stay aligned;
/// padding bits are always zero.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitMask {
    width: u32,
    height: u32,
    words_per_row: usize,
    bits: Vec<u64>,
}

impl BitMask {
    pub fn new(width: u32, height: u32) -> Self {
        let words_per_row = (width as usize).div_ceil(64);
        Self {
            width,
            height,
            words_per_row,
            bits: vec![0; words_per_row * height as usize],
        }
    }

    pub fn filled(width: u32, height: u32) -> Self {
        let mut m = Self::new(width, height);
        for row in 0..height {
            m.fill_span(row, 0, width);
        }
        m
    }

    /// Build from one byte per pixel; any nonzero value is a 1.
    pub fn from_bytes(width: u32, height: u32, bytes: &[u8]) -> Result<Self, GeoError> {
        if bytes.len() != width as usize * height as usize {
            return Err(GeoError::DimensionMismatch(format!(
                "{} bytes for a {width}×{height} mask",
                bytes.len()
            )));
        }
        let mut m = Self::new(width, height);
        for (i, &b) in bytes.iter().enumerate() {
            if b != 0 {
                m.set(i as u32 % width, i as u32 / width, true);
            }
        }
        Ok(m)
    }

    /// Build from a predicate over `(col, row)`.
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for row in 0..height {
            for col in 0..width {
                if f(col, row) {
                    m.set(col, row, true);
                }
            }
        }
        m
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, col: u32, row: u32) -> bool {
        debug_assert!(col < self.width && row < self.height);
        let w = self.bits[row as usize * self.words_per_row + (col as usize >> 6)];
        (w >> (col & 63)) & 1 == 1
    }

    /// Like [`get`](Self::get) but out-of-range coordinates read as 0.
    #[inline]
    pub fn get_or_zero(&self, col: i64, row: i64) -> bool {
        col >= 0
            && row >= 0
            && (col as u64) < self.width as u64
            && (row as u64) < self.height as u64
            && self.get(col as u32, row as u32)
    }

    #[inline]
    pub fn set(&mut self, col: u32, row: u32, value: bool) {
        debug_assert!(col < self.width && row < self.height);
        let w = &mut self.bits[row as usize * self.words_per_row + (col as usize >> 6)];
        let bit = 1u64 << (col & 63);
        if value {
            *w |= bit;
        } else {
            *w &= !bit;
        }
    }

    /// Set pixels `[start, end)` of `row` to 1.
    pub fn fill_span(&mut self, row: u32, start: u32, end: u32) {
        let end = end.min(self.width);
        if start >= end {
            return;
        }
        let base = row as usize * self.words_per_row;
        let (mut c, end) = (start as usize, end as usize);
        while c < end {
            let word = c >> 6;
            let lo = c & 63;
            let hi = (end - (word << 6)).min(64);
            let span = hi - lo;
            let bits = if span == 64 {
                u64::MAX
            } else {
                ((1u64 << span) - 1) << lo
            };
            self.bits[base + word] |= bits;
            c = (word << 6) + hi;
        }
    }

    pub fn row_words(&self, row: u32) -> &[u64] {
        let base = row as usize * self.words_per_row;
        &self.bits[base..base + self.words_per_row]
    }

    pub fn count_ones(&self) -> u64 {
        self.bits.iter().map(|w| w.count_ones() as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&w| w == 0)
    }

    fn check_dims(&self, other: &BitMask) -> Result<(), GeoError> {
        if self.dims() != other.dims() {
            return Err(GeoError::DimensionMismatch(format!(
                "{}×{} vs {}×{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    fn zip_with(&self, other: &BitMask, f: impl Fn(u64, u64) -> u64) -> Result<BitMask, GeoError> {
        self.check_dims(other)?;
        let bits = self.bits.iter().zip(&other.bits).map(|(&a, &b)| f(a, b)).collect();
        Ok(BitMask {
            bits,
            ..self.clone_shape()
        })
    }

    fn clone_shape(&self) -> BitMask {
        BitMask {
            width: self.width,
            height: self.height,
            words_per_row: self.words_per_row,
            bits: Vec::new(),
        }
    }

    pub fn and(&self, other: &BitMask) -> Result<BitMask, GeoError> {
        self.zip_with(other, |a, b| a & b)
    }

    pub fn or(&self, other: &BitMask) -> Result<BitMask, GeoError> {
        self.zip_with(other, |a, b| a | b)
    }

    pub fn and_not(&self, other: &BitMask) -> Result<BitMask, GeoError> {
        self.zip_with(other, |a, b| a & !b)
    }

    /// Popcount of `self ∧ other`.
    pub fn intersection_count(&self, other: &BitMask) -> Result<u64, GeoError> {
        self.check_dims(other)?;
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(a, b)| (a & b).count_ones() as u64)
            .sum())
    }

    /// Popcount of `self ∧ other ∧ valid`.
    pub fn intersection_count_within(&self, other: &BitMask, valid: &BitMask) -> Result<u64, GeoError> {
        self.check_dims(other)?;
        self.check_dims(valid)?;
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .zip(&valid.bits)
            .map(|((a, b), v)| (a & b & v).count_ones() as u64)
            .sum())
    }

    pub fn union_with(&mut self, other: &BitMask) -> Result<(), GeoError> {
        self.check_dims(other)?;
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
        Ok(())
    }

    /// Copy of the window `[col, col+w) × [row, row+h)`; outside pixels read as 0.
    pub fn window(&self, col: i64, row: i64, w: u32, h: u32) -> BitMask {
        BitMask::from_fn(w, h, |c, r| self.get_or_zero(col + c as i64, row + r as i64))
    }

    /// One byte per pixel, `one` for set pixels and 0 otherwise.
    pub fn to_bytes(&self, one: u8) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.width as usize * self.height as usize);
        for row in 0..self.height {
            for col in 0..self.width {
                out.push(if self.get(col, row) { one } else { 0 });
            }
        }
        out
    }

    /// Iterator over the coordinates of set pixels in row-major order.
    pub fn ones(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.height).flat_map(move |row| {
            self.row_words(row).iter().enumerate().flat_map(move |(wi, &word)| {
                let mut w = word;
                std::iter::from_fn(move || {
                    if w == 0 {
                        return None;
                    }
                    let tz = w.trailing_zeros();
                    w &= w - 1;
                    Some(((wi as u32) * 64 + tz, row))
                })
            })
        })
    }
}

impl fmt::Debug for BitMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "BitMask {}×{} ({} set)", self.width, self.height, self.count_ones())?;
        if self.width <= 64 && self.height <= 64 {
            for row in 0..self.height {
                let line: String = (0..self.width)
                    .map(|c| if self.get(c, row) { '#' } else { '.' })
                    .collect();
                writeln!(f, "{line}")?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_span_crosses_word_boundaries() {
        let mut m = BitMask::new(200, 1);
        m.fill_span(0, 60, 130);
        for c in 0..200 {
            assert_eq!(m.get(c, 0), (60..130).contains(&c), "col {c}");
        }
        assert_eq!(m.count_ones(), 70);
        let mut full = BitMask::new(128, 1);
        full.fill_span(0, 0, 128);
        assert_eq!(full.count_ones(), 128);
    }

    #[test]
    fn popcount_matches_naive_loop() {
        let m = BitMask::from_fn(70, 13, |c, r| (c * 7 + r * 3) % 5 == 0);
        let naive = (0..13)
            .flat_map(|r| (0..70).map(move |c| (c, r)))
            .filter(|&(c, r)| m.get(c, r))
            .count() as u64;
        assert_eq!(m.count_ones(), naive);
        assert_eq!(m.ones().count() as u64, naive);
    }

    #[test]
    fn area_of_trivial_masks() {
        assert_eq!(super::super::mask_area_px(&BitMask::new(4, 4)), 0);
        assert_eq!(super::super::mask_area_px(&BitMask::filled(4, 4)), 16);
    }

    #[test]
    fn byte_round_trip() {
        let m = BitMask::from_fn(9, 5, |c, r| (c + r) % 3 == 0);
        let bytes = m.to_bytes(255);
        assert_eq!(BitMask::from_bytes(9, 5, &bytes).unwrap(), m);
    }

    #[test]
    fn set_ops_require_equal_dims() {
        let a = BitMask::new(3, 3);
        let b = BitMask::new(3, 4);
        assert!(a.and(&b).is_err());
        assert!(a.intersection_count(&b).is_err());
    }
}
