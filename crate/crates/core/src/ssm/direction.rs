//! The six traversal orders used to flatten a feature map into sequences.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScanDirection {
    RowForward,
    RowBackward,
    ColForward,
    ColBackward,
    /// Anti-diagonals `i + j = 0, 1, …`, increasing row within each diagonal.
    DiagForward,
    DiagBackward,
}

impl ScanDirection {
    pub const ALL: [ScanDirection; 6] = [
        ScanDirection::RowForward,
        ScanDirection::RowBackward,
        ScanDirection::ColForward,
        ScanDirection::ColBackward,
        ScanDirection::DiagForward,
        ScanDirection::DiagBackward,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            ScanDirection::RowForward => "row_fwd",
            ScanDirection::RowBackward => "row_bwd",
            ScanDirection::ColForward => "col_fwd",
            ScanDirection::ColBackward => "col_bwd",
            ScanDirection::DiagForward => "diag_fwd",
            ScanDirection::DiagBackward => "diag_bwd",
        }
    }

    pub fn is_backward(self) -> bool {
        matches!(
            self,
            ScanDirection::RowBackward | ScanDirection::ColBackward | ScanDirection::DiagBackward
        )
    }

    /// The forward direction this one reverses (itself if already forward).
    pub fn forward(self) -> ScanDirection {
        match self {
            ScanDirection::RowBackward => ScanDirection::RowForward,
            ScanDirection::ColBackward => ScanDirection::ColForward,
            ScanDirection::DiagBackward => ScanDirection::DiagForward,
            d => d,
        }
    }

    /// Visiting order: `perm[t]` is the row-major index of the `t`-th token.
    pub fn perm(self, h: usize, w: usize) -> Vec<usize> {
        let mut order = match self.forward() {
            ScanDirection::RowForward => (0..h * w).collect(),
            ScanDirection::ColForward => (0..w)
                .flat_map(|j| (0..h).map(move |i| i * w + j))
                .collect(),
            _ => {
                let mut v = Vec::with_capacity(h * w);
                for s in 0..(h + w).saturating_sub(1) {
                    let i_lo = s.saturating_sub(w - 1);
                    let i_hi = s.min(h - 1);
                    for i in i_lo..=i_hi {
                        v.push(i * w + (s - i));
                    }
                }
                v
            }
        };
        if self.is_backward() {
            order.reverse();
        }
        order
    }
}

/// Permutation of row-major indices for `dir` on an `h × w` grid.
pub fn direction_perm(dir: ScanDirection, h: usize, w: usize) -> Result<Vec<usize>> {
    if h == 0 || w == 0 {
        return Err(Error::config(format!("scan grid must be non-empty, got {h}x{w}")));
    }
    Ok(dir.perm(h, w))
}

pub fn invert_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (t, &p) in perm.iter().enumerate() {
        inv[p] = t;
    }
    inv
}

impl fmt::Display for ScanDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ScanDirection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScanDirection::ALL
            .into_iter()
            .find(|d| d.tag() == s.trim())
            .ok_or_else(|| Error::config(format!("unknown scan direction {s:?}")))
    }
}

/// Non-empty ordered set of scan directions.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DirectionSet(Vec<ScanDirection>);

impl DirectionSet {
    pub fn new(dirs: impl IntoIterator<Item = ScanDirection>) -> Result<Self> {
        let mut v: Vec<_> = dirs.into_iter().collect();
        v.sort();
        v.dedup();
        if v.is_empty() {
            return Err(Error::config("scan direction set is empty"));
        }
        Ok(Self(v))
    }

    /// All six directions.
    pub fn all() -> Self {
        Self(ScanDirection::ALL.to_vec())
    }

    /// Row and column directions only.
    pub fn four() -> Self {
        Self(ScanDirection::ALL[..4].to_vec())
    }

    /// The four axis-aligned directions plus one diagonal.
    pub fn four_plus(extra: ScanDirection) -> Self {
        let mut v = ScanDirection::ALL[..4].to_vec();
        v.push(extra);
        Self(v)
    }

    pub fn as_slice(&self) -> &[ScanDirection] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for DirectionSet {
    fn default() -> Self {
        Self::all()
    }
}

impl fmt::Display for DirectionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tags: Vec<_> = self.0.iter().map(|d| d.tag()).collect();
        f.write_str(&tags.join(","))
    }
}

impl FromStr for DirectionSet {
    type Err = Error;

    /// Accepts `all`, `four`, or a comma-separated list of direction tags.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "all" => Ok(Self::all()),
            "four" => Ok(Self::four()),
            list => DirectionSet::new(
                list.split(',')
                    .filter(|t| !t.trim().is_empty())
                    .map(str::parse)
                    .collect::<Result<Vec<_>>>()?,
            ),
        }
    }
}
