//! Dense `num_pre x num_post` bit matrix, one padded run of words per row.

use crate::error::{Error, Result};
use crate::rng::CounterRng;

const WORD_BITS: usize = 64;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bitfield {
    num_pre: usize,
    num_post: usize,
    words_per_row: usize,
    words: Vec<u64>,
}

impl Bitfield {
    pub fn new(num_pre: usize, num_post: usize) -> Self {
        let words_per_row = num_post.div_ceil(WORD_BITS);
        Self { num_pre, num_post, words_per_row, words: vec![0; num_pre * words_per_row] }
    }

    pub fn num_pre(&self) -> usize {
        self.num_pre
    }

    pub fn num_post(&self) -> usize {
        self.num_post
    }

    pub fn set_bit(&mut self, pre: usize, post: usize) {
        self.row_mut(pre).set(post);
    }

    pub fn clear_bit(&mut self, pre: usize, post: usize) {
        self.row_mut(pre).clear(post);
    }

    pub fn test_bit(&self, pre: usize, post: usize) -> bool {
        self.row(pre).test(post)
    }

    pub fn clear_row(&mut self, pre: usize) {
        self.row_mut(pre).clear_all();
    }

    pub fn set_k_random_bits_in_row(&mut self, pre: usize, k: usize, rng: &mut CounterRng) -> Result<()> {
        self.row_mut(pre).set_k_random(k, rng)
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn row(&self, pre: usize) -> BitRow<'_> {
        let w = self.words_per_row;
        BitRow { words: &self.words[pre * w..(pre + 1) * w], num_post: self.num_post }
    }

    pub fn row_mut(&mut self, pre: usize) -> BitRowMut<'_> {
        let w = self.words_per_row;
        BitRowMut { words: &mut self.words[pre * w..(pre + 1) * w], num_post: self.num_post }
    }

    /// Disjoint mutable views of every row, in row order.
    pub fn rows_mut(&mut self) -> Vec<BitRowMut<'_>> {
        self.rows_mut_iter().collect()
    }

    /// Lazy form of [`rows_mut`](Self::rows_mut).
    pub fn rows_mut_iter(&mut self) -> impl Iterator<Item = BitRowMut<'_>> {
        let n = self.num_pre;
        self.rows_mut_select(0..n)
    }

    /// Views of the rows in `rows`, which must be strictly ascending.
    pub fn rows_mut_select<'a, I>(&'a mut self, rows: I) -> impl Iterator<Item = BitRowMut<'a>> + 'a
    where
        I: IntoIterator<Item = usize>,
        I::IntoIter: 'a,
    {
        let (num_pre, num_post, w) = (self.num_pre, self.num_post, self.words_per_row);
        let mut chunks = self.words.chunks_mut(w.max(1));
        let mut next = 0usize;
        rows.into_iter().map(move |i| {
            assert!(i >= next && i < num_pre, "rows must be strictly ascending and in range");
            let skip = i - next;
            next = i + 1;
            BitRowMut { words: if w == 0 { &mut [] } else { chunks.nth(skip).expect("bit row") }, num_post }
        })
    }

    /// Tail bits beyond `num_post` are zero in every row.
    pub fn tail_is_clean(&self) -> bool {
        let rem = self.num_post % WORD_BITS;
        if rem == 0 || self.words_per_row == 0 {
            return true;
        }
        let mask = !((1u64 << rem) - 1);
        self.words
            .chunks(self.words_per_row)
            .all(|row| row[self.words_per_row - 1] & mask == 0)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BitRow<'a> {
    words: &'a [u64],
    num_post: usize,
}

impl BitRow<'_> {
    #[inline]
    pub fn test(&self, post: usize) -> bool {
        debug_assert!(post < self.num_post);
        self.words[post / WORD_BITS] >> (post % WORD_BITS) & 1 == 1
    }

    pub fn is_clear(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        iter_ones(self.words)
    }
}

#[derive(Debug)]
pub struct BitRowMut<'a> {
    words: &'a mut [u64],
    num_post: usize,
}

impl BitRowMut<'_> {
    pub fn len(&self) -> usize {
        self.num_post
    }

    pub fn is_empty(&self) -> bool {
        self.num_post == 0
    }

    #[inline]
    pub fn test(&self, post: usize) -> bool {
        debug_assert!(post < self.num_post);
        self.words[post / WORD_BITS] >> (post % WORD_BITS) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, post: usize) {
        assert!(post < self.num_post, "bit {post} out of range {}", self.num_post);
        self.words[post / WORD_BITS] |= 1 << (post % WORD_BITS);
    }

    #[inline]
    pub fn clear(&mut self, post: usize) {
        assert!(post < self.num_post, "bit {post} out of range {}", self.num_post);
        self.words[post / WORD_BITS] &= !(1 << (post % WORD_BITS));
    }

    #[inline]
    pub fn assign(&mut self, post: usize, value: bool) {
        if value {
            self.set(post)
        } else {
            self.clear(post)
        }
    }

    pub fn clear_all(&mut self) {
        self.words.fill(0);
    }

    pub fn is_clear(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// Set `k` distinct bits chosen uniformly without replacement. Bits that
    /// were already set stay set.
    pub fn set_k_random(&mut self, k: usize, rng: &mut CounterRng) -> Result<()> {
        if k > self.num_post {
            return Err(Error::KTooLarge { k, n: self.num_post });
        }
        for j in rng.sample_k_distinct(k, self.num_post)? {
            self.set(j as usize);
        }
        Ok(())
    }

    /// Fill the row with independent fair coin flips.
    pub fn randomize(&mut self, rng: &mut CounterRng) {
        for w in self.words.iter_mut() {
            *w = rng.next_u64_word();
        }
        let rem = self.num_post % WORD_BITS;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        iter_ones(self.words)
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }
}

fn iter_ones(words: &[u64]) -> impl Iterator<Item = usize> + '_ {
    words.iter().enumerate().flat_map(|(wi, &w)| {
        let mut bits = w;
        std::iter::from_fn(move || {
            if bits == 0 {
                return None;
            }
            let tz = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            Some(wi * WORD_BITS + tz)
        })
    })
}
