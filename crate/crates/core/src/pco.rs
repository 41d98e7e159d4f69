//! Profile co-occurrence counting and count smoothing.
//!
//! With items as the basic entity, `P[i][j]` counts the users whose train
//! profiles contain both items i and j; with users as the basic entity the
//! roles are swapped. The matrix is symmetric, diagonal-free, and stored
//! sparsely as its upper triangle.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Which entity type is embedded directly from the co-occurrence matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    ItemBased,
    UserBased,
}

impl Basis {
    pub fn as_str(self) -> &'static str {
        match self {
            Basis::ItemBased => "item",
            Basis::UserBased => "user",
        }
    }
}

impl std::str::FromStr for Basis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "item" | "item-based" => Ok(Basis::ItemBased),
            "user" | "user-based" => Ok(Basis::UserBased),
            other => Err(Error::Config(format!(
                "unknown basis `{other}` (expected `item` or `user`)"
            ))),
        }
    }
}

/// Logarithm used by [`smooth_with_base`]. Natural log is the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LogBase {
    #[default]
    Natural,
    Base2,
}

/// Sparse symmetric co-occurrence counts over `n` basic entities.
/// Only pairs with count >= 1 are stored, upper triangle (i < j), sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PcoMatrix {
    n: usize,
    basis: Basis,
    entries: Vec<(u32, u32, u32)>,
}

impl PcoMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    /// Number of stored unordered pairs.
    pub fn num_pairs(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sorted upper-triangle entries `(i, j, count)` with i < j.
    pub fn entries(&self) -> &[(u32, u32, u32)] {
        &self.entries
    }

    /// Symmetric lookup; zero for absent pairs and for the diagonal.
    pub fn count(&self, i: usize, j: usize) -> u32 {
        if i == j {
            return 0;
        }
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        let key = (a as u32, b as u32);
        match self
            .entries
            .binary_search_by(|&(x, y, _)| (x, y).cmp(&key))
        {
            Ok(pos) => self.entries[pos].2,
            Err(_) => 0,
        }
    }

    /// Canonical dump: `i<TAB>j<TAB>count`, i < j, sorted.
    pub fn write_text(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(std::fs::File::create(path)?);
        for &(i, j, c) in &self.entries {
            writeln!(out, "{i}\t{j}\t{c}")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_text(path: &Path, n: usize, basis: Basis) -> Result<Self> {
        let malformed = |message: String| Error::MalformedFile {
            what: "pco matrix",
            message,
        };
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut entries = Vec::new();
        for (line_no, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let mut next = |name: &str| -> Result<u32> {
                fields
                    .next()
                    .and_then(|t| t.trim().parse().ok())
                    .ok_or_else(|| malformed(format!("line {}: bad {name}", line_no + 1)))
            };
            let i = next("i")?;
            let j = next("j")?;
            let c = next("count")?;
            if i >= j || c == 0 || j as usize >= n {
                return Err(malformed(format!("line {}: invalid entry", line_no + 1)));
            }
            entries.push((i, j, c));
        }
        if !entries.windows(2).all(|w| (w[0].0, w[0].1) < (w[1].0, w[1].1)) {
            return Err(malformed("entries out of order".to_string()));
        }
        Ok(PcoMatrix { n, basis, entries })
    }
}

/// Count pairwise profile co-occurrences of the basic entity.
pub fn build_pco(dataset: &Dataset, basis: Basis) -> PcoMatrix {
    let (n, profiles) = match basis {
        Basis::ItemBased => (dataset.num_items, &dataset.user_profiles),
        Basis::UserBased => (dataset.num_users, &dataset.item_profiles),
    };
    // Keys pack (i, j) with i < j into one u64.
    let mut counts: HashMap<u64, u32> = HashMap::new();
    for profile in profiles {
        for (k, &(a, _)) in profile.iter().enumerate() {
            for &(b, _) in &profile[k + 1..] {
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                *counts.entry(((lo as u64) << 32) | hi as u64).or_insert(0) += 1;
            }
        }
    }
    let mut entries: Vec<(u32, u32, u32)> = counts
        .into_iter()
        .map(|(key, c)| ((key >> 32) as u32, key as u32, c))
        .collect();
    entries.sort_unstable_by_key(|&(i, j, _)| (i, j));
    PcoMatrix { n, basis, entries }
}

/// Count smoothing: identity at or below 1, logarithm above.
pub fn smooth(x: f64) -> f64 {
    smooth_with_base(x, LogBase::Natural)
}

pub fn smooth_with_base(x: f64, base: LogBase) -> f64 {
    debug_assert!(x >= 0.0);
    if x > 1.0 {
        match base {
            LogBase::Natural => x.ln(),
            LogBase::Base2 => x.log2(),
        }
    } else {
        x
    }
}
