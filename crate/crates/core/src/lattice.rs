//! Periodic lattice, occupation configurations and elementary operators.
//!
//! A configuration assigns 0 or 1 to each site of the discrete torus of
//! `N` sites; site indices are arbitrary integers reduced modulo `N`, so
//! constraint formulas may index negative offsets freely.

use std::fmt;
use std::str::FromStr;

use crate::{Error, Result};

const WORD_BITS: usize = 64;

/// Bit-packed occupation state on the periodic lattice of `n_sites` sites.
///
/// At most one particle per site; exchanges preserve the particle count.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Configuration {
    n_sites: usize,
    words: Vec<u64>,
}

impl Configuration {
    /// Empty lattice of `n_sites` sites.
    pub fn zeros(n_sites: usize) -> Self {
        assert!(n_sites >= 2, "lattice needs at least two sites");
        Self {
            n_sites,
            words: vec![0; (n_sites + WORD_BITS - 1) / WORD_BITS],
        }
    }

    /// Fully occupied lattice.
    pub fn ones(n_sites: usize) -> Self {
        let mut cfg = Self::zeros(n_sites);
        for w in &mut cfg.words {
            *w = u64::MAX;
        }
        cfg.clear_tail();
        cfg
    }

    /// Build from any iterator of occupation values (site 0 first).
    pub fn from_bits<I: IntoIterator<Item = u8>>(bits: I) -> Self {
        let bits: Vec<u8> = bits.into_iter().collect();
        let mut cfg = Self::zeros(bits.len());
        for (x, &b) in bits.iter().enumerate() {
            if b != 0 {
                cfg.words[x / WORD_BITS] |= 1 << (x % WORD_BITS);
            }
        }
        cfg
    }

    /// Decode the low `n_sites` bits of `code` (site 0 = least significant).
    /// Handy for exhaustive sweeps over small lattices.
    pub fn from_code(code: u64, n_sites: usize) -> Self {
        assert!(n_sites <= 64);
        let mut cfg = Self::zeros(n_sites);
        cfg.words[0] = code & mask_low(n_sites.min(WORD_BITS));
        cfg
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    fn clear_tail(&mut self) {
        let tail = self.n_sites % WORD_BITS;
        if tail != 0 {
            let last = self.words.len() - 1;
            self.words[last] &= mask_low(tail);
        }
    }

    /// Reduce an arbitrary integer site index to `0..n_sites`.
    #[inline]
    pub fn wrap(&self, x: i64) -> usize {
        x.rem_euclid(self.n_sites as i64) as usize
    }

    /// Occupation value at site `x` (reduced mod `N`).
    #[inline]
    pub fn occ(&self, x: i64) -> u8 {
        let i = self.wrap(x);
        ((self.words[i / WORD_BITS] >> (i % WORD_BITS)) & 1) as u8
    }

    /// Set the occupation at site `x`.
    #[inline]
    pub fn set(&mut self, x: i64, value: u8) {
        let i = self.wrap(x);
        let bit = 1u64 << (i % WORD_BITS);
        if value != 0 {
            self.words[i / WORD_BITS] |= bit;
        } else {
            self.words[i / WORD_BITS] &= !bit;
        }
    }

    /// Swap the occupations of sites `x` and `y` in place.
    #[inline]
    pub fn swap_sites(&mut self, x: i64, y: i64) {
        let (a, b) = (self.occ(x), self.occ(y));
        self.set(x, b);
        self.set(y, a);
    }

    /// The exchange operator: a copy with the occupations of `x`, `y` swapped.
    pub fn exchanged(&self, x: i64, y: i64) -> Self {
        let mut out = self.clone();
        out.swap_sites(x, y);
        out
    }

    /// Site-wise complement (particles become holes and vice versa).
    pub fn complement(&self) -> Self {
        let mut out = self.clone();
        for w in &mut out.words {
            *w = !*w;
        }
        out.clear_tail();
        out
    }

    /// Shift by `k`: the returned configuration reads `eta(x + k)` at `x`.
    pub fn shifted(&self, k: i64) -> Self {
        let mut out = Self::zeros(self.n_sites);
        for x in 0..self.n_sites as i64 {
            if self.occ(x + k) != 0 {
                out.set(x, 1);
            }
        }
        out
    }

    /// Total particle count.
    pub fn particles(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Number of occupied sites in `[start, start + len)`, reduced mod `N`,
    /// counted with masked popcounts on the packed words.
    pub fn range_count(&self, start: i64, len: usize) -> usize {
        assert!(len <= self.n_sites, "range longer than the lattice");
        if len == 0 {
            return 0;
        }
        let s = self.wrap(start);
        if s + len <= self.n_sites {
            self.count_span(s, s + len)
        } else {
            self.count_span(s, self.n_sites) + self.count_span(0, s + len - self.n_sites)
        }
    }

    /// Popcount of sites in `[a, b)` without wrap; `b <= n_sites`.
    fn count_span(&self, a: usize, b: usize) -> usize {
        if a >= b {
            return 0;
        }
        let (wa, wb) = (a / WORD_BITS, (b - 1) / WORD_BITS);
        if wa == wb {
            let m = mask_low(b - wa * WORD_BITS) & !mask_low(a - wa * WORD_BITS);
            return (self.words[wa] & m).count_ones() as usize;
        }
        let mut total = (self.words[wa] & !mask_low(a - wa * WORD_BITS)).count_ones() as usize;
        for w in wa + 1..wb {
            total += self.words[w].count_ones() as usize;
        }
        total += (self.words[wb] & mask_low(b - wb * WORD_BITS)).count_ones() as usize;
        total
    }

    /// Particles inside `window` placed relative to the reference site `x`.
    pub fn window_count(&self, x: i64, window: &Window) -> Result<usize> {
        if window.length > self.n_sites.saturating_sub(2) {
            return Err(Error::Size(format!(
                "window of {} sites does not fit a lattice of {} (needs N - 2 slack)",
                window.length, self.n_sites
            )));
        }
        let mut count = self.range_count(x + window.anchor, window.length);
        for &e in &window.excluded {
            if e >= window.anchor && e < window.anchor + window.length as i64 {
                count -= self.occ(x + e) as usize;
            }
        }
        Ok(count)
    }

    /// Density over the ball `[[x, x + ell - 1]]`.
    pub fn local_average(&self, x: i64, ell: usize) -> f64 {
        assert!(ell >= 1 && ell <= self.n_sites, "ball size out of range");
        self.range_count(x, ell) as f64 / ell as f64
    }
}

#[inline]
fn mask_low(bits: usize) -> u64 {
    if bits >= WORD_BITS {
        u64::MAX
    } else {
        (1u64 << bits) - 1
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for x in 0..self.n_sites as i64 {
            write!(f, "{}", self.occ(x))?;
        }
        Ok(())
    }
}

impl fmt::Debug for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for Configuration {
    type Err = Error;

    /// Parse a 0/1 string, site 0 first.
    fn from_str(s: &str) -> Result<Self> {
        if s.len() < 2 {
            return Err(Error::Parse("configuration needs at least 2 sites".into()));
        }
        let mut bits = Vec::with_capacity(s.len());
        for (i, ch) in s.chars().enumerate() {
            match ch {
                '0' => bits.push(0),
                '1' => bits.push(1),
                _ => {
                    return Err(Error::Parse(format!(
                        "invalid character {ch:?} at position {i} in configuration string"
                    )))
                }
            }
        }
        Ok(Self::from_bits(bits))
    }
}

/// A window of sites placed relative to a reference site, with optional
/// excluded offsets (typically the node `{0,1}` of a bond).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Window {
    /// Offset of the first window site relative to the reference.
    pub anchor: i64,
    /// Number of consecutive sites.
    pub length: usize,
    /// Relative offsets excluded from the count; offsets outside the window
    /// are ignored.
    pub excluded: Vec<i64>,
}

impl Window {
    pub fn new(anchor: i64, length: usize, excluded: Vec<i64>) -> Self {
        Self {
            anchor,
            length,
            excluded,
        }
    }

    /// The box `[[-j, -j + box_len + 1]] \ {0, 1}` used by all node
    /// constraints: `box_len + 2` consecutive sites minus the node.
    pub fn node_box(j: i64, box_len: usize) -> Self {
        Self::new(-j, box_len + 2, vec![0, 1])
    }

    /// Number of counted sites (window length minus excluded offsets that
    /// actually fall inside).
    pub fn effective_len(&self) -> usize {
        let inside = self
            .excluded
            .iter()
            .filter(|&&e| e >= self.anchor && e < self.anchor + self.length as i64)
            .count();
        self.length - inside
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(bits: &[u8]) -> Configuration {
        Configuration::from_bits(bits.iter().copied())
    }

    #[test]
    fn occupation_wraps_mod_n() {
        let c = cfg(&[1, 0, 1]);
        assert_eq!(c.occ(0), 1);
        assert_eq!(c.occ(3), 1); // 3 == 0
        assert_eq!(c.occ(-1), 1); // -1 == 2
        assert_eq!(c.occ(1), 0);
    }

    #[test]
    fn exchange_swaps_and_is_involutive() {
        let c = cfg(&[1, 0, 1]);
        assert_eq!(c.exchanged(0, 1).to_string(), "011");
        assert_eq!(c.exchanged(0, 0), c);
        assert_eq!(c.exchanged(0, 2).exchanged(0, 2), c);
    }

    #[test]
    fn window_count_examples() {
        let ones = Configuration::ones(9);
        let w = Window::node_box(1, 2); // [[-1, 2]] \ {0,1}: sites -1 and 2
        assert_eq!(ones.window_count(0, &w).unwrap(), w.effective_len());
        assert_eq!(w.effective_len(), 2);

        let zeros = Configuration::zeros(9);
        assert_eq!(zeros.window_count(4, &w).unwrap(), 0);

        // Hand enumeration: sites -1 == 7 and 2 are both empty.
        let c = cfg(&[1, 1, 0, 1, 0, 1, 0, 0]);
        assert_eq!(c.window_count(0, &w).unwrap(), 0);
    }

    #[test]
    fn window_too_large_is_an_error() {
        let c = cfg(&[1, 0, 1, 0]);
        let w = Window::new(0, 3, vec![]);
        assert!(c.window_count(0, &w).is_err());
    }

    #[test]
    fn local_average_examples() {
        assert_eq!(Configuration::ones(12).local_average(3, 5), 1.0);
        assert_eq!(cfg(&[1, 0, 1, 0]).local_average(0, 4), 0.5);
        let c = cfg(&[1, 1, 0, 1, 0, 1, 0, 0]);
        assert!((c.local_average(2, 3) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn complement_flips_every_site() {
        let c = cfg(&[1, 1, 0, 1, 0, 1, 0, 0]);
        let cc = c.complement();
        for x in 0..8 {
            assert_eq!(cc.occ(x), 1 - c.occ(x));
        }
    }

    #[test]
    fn string_round_trip() {
        let s = "110100101";
        let c: Configuration = s.parse().unwrap();
        assert_eq!(c.to_string(), s);
        assert!("10a1".parse::<Configuration>().is_err());
        assert!("1".parse::<Configuration>().is_err());
    }

    /// The packed-word popcount path must agree with a naive per-site loop.
    #[test]
    fn window_count_matches_naive_loop() {
        let mut state = 0x243f6a8885a308d3u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        for _ in 0..10_000 {
            let n = 3 + (next() % 140) as usize;
            let mut c = Configuration::zeros(n);
            for x in 0..n {
                if next() % 2 == 0 {
                    c.set(x as i64, 1);
                }
            }
            let anchor = (next() % 21) as i64 - 10;
            let length = (next() % (n as u64 - 2)) as usize;
            let mut excluded = vec![];
            if next() % 2 == 0 {
                excluded.push(0);
                excluded.push(1);
            }
            let w = Window::new(anchor, length, excluded.clone());
            let x = (next() % (2 * n as u64)) as i64 - n as i64;

            let mut naive = 0usize;
            for off in anchor..anchor + length as i64 {
                if !excluded.contains(&off) {
                    naive += c.occ(x + off) as usize;
                }
            }
            assert_eq!(c.window_count(x, &w).unwrap(), naive);
        }
    }

    proptest! {
        #[test]
        fn exchange_preserves_particles(bits in proptest::collection::vec(0u8..2, 2..80),
                                        x in -200i64..200, y in -200i64..200) {
            let c = Configuration::from_bits(bits);
            prop_assert_eq!(c.particles(), c.exchanged(x, y).particles());
        }

        #[test]
        fn shift_covariance(bits in proptest::collection::vec(0u8..2, 8..64), x in -64i64..64) {
            let c = Configuration::from_bits(bits);
            let w = Window::node_box(2, 3);
            prop_assert_eq!(
                c.shifted(1).window_count(x, &w).unwrap(),
                c.window_count(x + 1, &w).unwrap()
            );
        }

        #[test]
        fn range_count_total(bits in proptest::collection::vec(0u8..2, 2..130)) {
            let c = Configuration::from_bits(bits.clone());
            prop_assert_eq!(c.range_count(0, bits.len()), c.particles());
        }
    }
}
