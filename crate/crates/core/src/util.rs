//! Small shared utilities.

/// Fixed-domain bitset with a cached cardinality.
///
/// Used for type closures (domain = number of types) and for action sets
/// (domain = size of the action inventory). Membership tests are O(1) and
/// cardinality is maintained incrementally so `count()` never scans.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Bitset {
    words: Vec<u64>,
    domain: usize,
    count: usize,
}

impl Bitset {
    pub fn new(domain: usize) -> Self {
        Bitset {
            words: vec![0; domain.div_ceil(64)],
            domain,
            count: 0,
        }
    }

    pub fn full(domain: usize) -> Self {
        let mut b = Bitset::new(domain);
        for i in 0..domain {
            b.insert(i);
        }
        b
    }

    pub fn domain(&self) -> usize {
        self.domain
    }

    /// Number of members (cached, O(1)).
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Inserts `i`, returning true if it was not already present.
    pub fn insert(&mut self, i: usize) -> bool {
        assert!(i < self.domain, "bit {} out of domain {}", i, self.domain);
        let (w, m) = (i / 64, 1u64 << (i % 64));
        if self.words[w] & m == 0 {
            self.words[w] |= m;
            self.count += 1;
            true
        } else {
            false
        }
    }

    pub fn remove(&mut self, i: usize) -> bool {
        assert!(i < self.domain, "bit {} out of domain {}", i, self.domain);
        let (w, m) = (i / 64, 1u64 << (i % 64));
        if self.words[w] & m != 0 {
            self.words[w] &= !m;
            self.count -= 1;
            true
        } else {
            false
        }
    }

    pub fn contains(&self, i: usize) -> bool {
        if i >= self.domain {
            return false;
        }
        self.words[i / 64] & (1u64 << (i % 64)) != 0
    }

    pub fn is_subset(&self, other: &Bitset) -> bool {
        assert_eq!(self.domain, other.domain);
        self.words
            .iter()
            .zip(&other.words)
            .all(|(a, b)| a & !b == 0)
    }

    pub fn intersects(&self, other: &Bitset) -> bool {
        assert_eq!(self.domain, other.domain);
        self.words.iter().zip(&other.words).any(|(a, b)| a & b != 0)
    }

    pub fn union_with(&mut self, other: &Bitset) {
        assert_eq!(self.domain, other.domain);
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
        self.count = self.words.iter().map(|w| w.count_ones() as usize).sum();
    }

    /// Members not in the set, over the same domain.
    pub fn complement(&self) -> Bitset {
        let mut out = Bitset::new(self.domain);
        for i in 0..self.domain {
            if !self.contains(i) {
                out.insert(i);
            }
        }
        out
    }

    /// Ascending iterator over members; O(words + members), not O(domain).
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let base = wi * 64;
            std::iter::from_fn({
                let mut rest = w;
                move || {
                    if rest == 0 {
                        return None;
                    }
                    let b = rest.trailing_zeros() as usize;
                    rest &= rest - 1;
                    Some(base + b)
                }
            })
        })
    }
}
