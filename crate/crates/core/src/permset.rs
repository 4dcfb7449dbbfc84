//! Jigsaw permutation classes chosen for maximal pairwise Hamming distance.
//!
//! Selection is greedy max-min over the full enumeration of `n_tiles!`
//! orderings: start from the identity, then repeatedly add the candidate whose
//! minimum distance to everything already chosen is largest, breaking ties by
//! the lexicographically smallest mapping. No randomness is involved.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Largest tile count whose orderings are enumerated exhaustively.
pub const MAX_ENUMERABLE_TILES: usize = 9;

/// Tile reordering: destination cell `i` receives source tile `mapping[i]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Permutation {
    mapping: Vec<usize>,
}

impl Permutation {
    pub fn new(mapping: Vec<usize>) -> Result<Self> {
        if mapping.is_empty() {
            return Err(Error::invalid("permutation needs at least one tile"));
        }
        let mut seen = vec![false; mapping.len()];
        for &m in &mapping {
            if m >= mapping.len() || std::mem::replace(&mut seen[m], true) {
                return Err(Error::invalid(format!("{mapping:?} is not a bijection")));
            }
        }
        Ok(Self { mapping })
    }

    pub fn identity(n_tiles: usize) -> Self {
        assert!(n_tiles > 0);
        Self {
            mapping: (0..n_tiles).collect(),
        }
    }

    pub fn mapping(&self) -> &[usize] {
        &self.mapping
    }

    pub fn n_tiles(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_identity(&self) -> bool {
        self.mapping.iter().enumerate().all(|(i, &m)| i == m)
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.mapping.len()];
        for (i, &m) in self.mapping.iter().enumerate() {
            inv[m] = i;
        }
        Permutation { mapping: inv }
    }
}

impl fmt::Display for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for m in &self.mapping {
            if !first {
                f.write_str(" ")?;
            }
            write!(f, "{m}")?;
            first = false;
        }
        Ok(())
    }
}

/// Number of positions at which `p` and `q` differ.
pub fn hamming_distance(p: &Permutation, q: &Permutation) -> Result<usize> {
    if p.n_tiles() != q.n_tiles() {
        return Err(Error::invalid(format!(
            "permutation lengths differ ({} vs {})",
            p.n_tiles(),
            q.n_tiles()
        )));
    }
    Ok(p.mapping.iter().zip(&q.mapping).filter(|(a, b)| a != b).count())
}

/// Ordered set of `P` distinct permutations, identity first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PermutationSet {
    n_tiles: usize,
    entries: Vec<Permutation>,
}

impl PermutationSet {
    /// Validates the set invariants (identity first, bijective, distinct).
    pub fn new(n_tiles: usize, entries: Vec<Permutation>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::invalid("permutation set is empty"));
        }
        if let Some(p) = entries.iter().find(|p| p.n_tiles() != n_tiles) {
            return Err(Error::invalid(format!("{p} does not have {n_tiles} tiles")));
        }
        if !entries[0].is_identity() {
            return Err(Error::invalid("first permutation must be the identity"));
        }
        let mut sorted: Vec<&Permutation> = entries.iter().collect();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("permutation set contains duplicates"));
        }
        Ok(Self { n_tiles, entries })
    }

    pub fn n_tiles(&self) -> usize {
        self.n_tiles
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Permutation] {
        &self.entries
    }

    pub fn get(&self, index: usize) -> Option<&Permutation> {
        self.entries.get(index)
    }

    /// Smallest Hamming distance between any two entries (`None` for P = 1).
    pub fn min_pairwise_distance(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, p) in self.entries.iter().enumerate() {
            for q in &self.entries[i + 1..] {
                let d = hamming_distance(p, q).expect("equal lengths");
                best = Some(best.map_or(d, |b| b.min(d)));
            }
        }
        best
    }

    /// Writes the plain-text form: `n_tiles P` then one permutation per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.n_tiles, self.entries.len());
        for p in &self.entries {
            out.push_str(&p.to_string());
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let (_, header) = lines.next().ok_or_else(|| Error::parse(1, "missing header"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let [n_tiles, count] = fields.as_slice() else {
            return Err(Error::parse(1, "header must be `n_tiles P`"));
        };
        let n_tiles: usize = n_tiles
            .parse()
            .map_err(|_| Error::parse(1, format!("bad n_tiles `{n_tiles}`")))?;
        let count: usize = count
            .parse()
            .map_err(|_| Error::parse(1, format!("bad permutation count `{count}`")))?;
        if n_tiles == 0 || count == 0 {
            return Err(Error::parse(1, "n_tiles and P must be positive"));
        }

        let mut entries: Vec<Permutation> = Vec::with_capacity(count);
        let mut last_line = 1;
        for (line_no, line) in lines {
            if line.is_empty() {
                continue;
            }
            last_line = line_no;
            if entries.len() == count {
                return Err(Error::parse(line_no, format!("more than {count} permutation rows")));
            }
            let mapping = line
                .split_whitespace()
                .map(|t| t.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(line_no, format!("bad index: {e}")))?;
            if mapping.len() != n_tiles {
                return Err(Error::parse(
                    line_no,
                    format!("expected {n_tiles} indices, found {}", mapping.len()),
                ));
            }
            let perm = Permutation::new(mapping).map_err(|e| Error::parse(line_no, e.to_string()))?;
            if entries.is_empty() && !perm.is_identity() {
                return Err(Error::parse(line_no, "first permutation must be the identity"));
            }
            if entries.contains(&perm) {
                return Err(Error::parse(line_no, format!("duplicate permutation {perm}")));
            }
            entries.push(perm);
        }
        if entries.len() != count {
            return Err(Error::parse(
                last_line,
                format!("header declares {count} permutations, found {}", entries.len()),
            ));
        }
        Ok(Self { n_tiles, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

/// `n!`, or `None` on overflow.
pub fn factorial(n: usize) -> Option<usize> {
    (1..=n).try_fold(1usize, |acc, k| acc.checked_mul(k))
}

/// Rearranges `perm` into its lexicographic successor; false after the last.
fn next_permutation(perm: &mut [u8]) -> bool {
    let Some(i) = perm.windows(2).rposition(|w| w[0] < w[1]) else {
        return false;
    };
    let j = perm.iter().rposition(|&v| v > perm[i]).expect("successor exists");
    perm.swap(i, j);
    perm[i + 1..].reverse();
    true
}

/// Greedy max-min Hamming selection of `count` permutations of `n_tiles` tiles.
pub fn generate_permutation_set(n_tiles: usize, count: usize) -> Result<PermutationSet> {
    if n_tiles == 0 || n_tiles > MAX_ENUMERABLE_TILES {
        return Err(Error::invalid(format!(
            "n_tiles must be in 1..={MAX_ENUMERABLE_TILES}, got {n_tiles}"
        )));
    }
    let total = factorial(n_tiles).expect("small factorial");
    if count == 0 || count > total {
        return Err(Error::invalid(format!(
            "P must be in 1..={total} for {n_tiles} tiles, got {count}"
        )));
    }

    // All orderings in lexicographic order, flattened.
    let mut pool = Vec::with_capacity(total * n_tiles);
    let mut cur: Vec<u8> = (0..n_tiles as u8).collect();
    loop {
        pool.extend_from_slice(&cur);
        if !next_permutation(&mut cur) {
            break;
        }
    }
    debug_assert_eq!(pool.len(), total * n_tiles);

    let candidate = |i: usize| &pool[i * n_tiles..(i + 1) * n_tiles];
    let distance = |a: &[u8], b: &[u8]| a.iter().zip(b).filter(|(x, y)| x != y).count() as u8;

    let mut chosen = vec![0usize];
    let mut min_dist: Vec<u8> = (0..total).map(|i| distance(candidate(i), candidate(0))).collect();
    while chosen.len() < count {
        // First maximum in lexicographic order wins ties.
        let (best, _) = min_dist.iter().enumerate().fold(
            (0usize, 0u8),
            |(bi, bd), (i, &d)| if d > bd { (i, d) } else { (bi, bd) },
        );
        chosen.push(best);
        let picked = candidate(best).to_vec();
        for (i, d) in min_dist.iter_mut().enumerate() {
            let nd = distance(candidate(i), &picked);
            if nd < *d {
                *d = nd;
            }
        }
    }

    let entries = chosen
        .into_iter()
        .map(|i| Permutation {
            mapping: candidate(i).iter().map(|&v| v as usize).collect(),
        })
        .collect();
    PermutationSet::new(n_tiles, entries)
}
