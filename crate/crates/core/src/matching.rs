//! Maximum-weight bipartite matching between a batch of donors (rows) and
//! waitlisted candidates (columns).
//!
//! Only edges with strictly positive weight may be used; everything else is
//! treated as forbidden, and rows are free to stay unmatched.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchingError {
    #[error("brute-force enumeration supports at most {max} rows, got {rows}")]
    TooLarge { rows: usize, max: usize },
    #[error("matrix needs at least one row")]
    NoRows,
    #[error("row {row} has {len} entries, expected {cols}")]
    Ragged { row: usize, len: usize, cols: usize },
}

pub const BRUTE_FORCE_MAX_ROWS: usize = 8;

/// Dense weight matrix; `None` marks a forbidden edge.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<Option<f64>>,
}

impl WeightMatrix {
    pub fn new(rows: usize, cols: usize) -> Result<Self, MatchingError> {
        if rows == 0 {
            return Err(MatchingError::NoRows);
        }
        Ok(WeightMatrix { rows, cols, entries: vec![None; rows * cols] })
    }

    pub fn from_rows(rows: Vec<Vec<Option<f64>>>) -> Result<Self, MatchingError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut m = WeightMatrix::new(rows.len(), cols)?;
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != cols {
                return Err(MatchingError::Ragged { row: i, len: row.len(), cols });
            }
            m.entries[i * cols..(i + 1) * cols].copy_from_slice(&row);
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.entries[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, weight: Option<f64>) {
        self.entries[row * self.cols + col] = weight;
    }

    /// Weight of an edge that may be used in a matching.
    fn admissible(&self, row: usize, col: usize) -> Option<f64> {
        self.get(row, col).filter(|w| *w > 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Matching {
    /// (row, col) pairs sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub total: f64,
}

impl Matching {
    fn from_pairs(w: &WeightMatrix, mut pairs: Vec<(usize, usize)>) -> Self {
        pairs.sort_unstable();
        let total = pairs.iter().map(|&(r, c)| w.get(r, c).unwrap_or(0.0)).sum();
        Matching { pairs, total }
    }
}

/// Exact optimum via the Hungarian method with potentials, in
/// O(min(r, c)^2 * max(r, c)) time.
///
/// Every vertex on the smaller side is assigned to a distinct vertex on the
/// larger side. Forbidden and non-positive edges cost zero, so an assignment
/// through them is the same as leaving the vertex unmatched and is dropped
/// from the result.
pub fn max_weight_matching(w: &WeightMatrix) -> Matching {
    if w.cols == 0 {
        return Matching::default();
    }
    let transposed = w.rows > w.cols;
    let (n, m) = if transposed { (w.cols, w.rows) } else { (w.rows, w.cols) };
    let cost = |i: usize, j: usize| -> f64 {
        let (r, c) = if transposed { (j, i) } else { (i, j) };
        w.admissible(r, c).map_or(0.0, |x| -x)
    };

    // 1-based arrays; p[j] is the (small-side) vertex assigned to column j
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut minv = vec![f64::INFINITY; m + 1];
    let mut used = vec![false; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        minv.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let pairs = (1..=m)
        .filter(|&j| p[j] != 0)
        .map(|j| if transposed { (j - 1, p[j] - 1) } else { (p[j] - 1, j - 1) })
        .filter(|&(r, c)| w.admissible(r, c).is_some())
        .collect();
    Matching::from_pairs(w, pairs)
}

/// Exhaustive search over all matchings; exact, exponential, small inputs only.
pub fn brute_force_matching(w: &WeightMatrix) -> Result<Matching, MatchingError> {
    if w.rows > BRUTE_FORCE_MAX_ROWS {
        return Err(MatchingError::TooLarge { rows: w.rows, max: BRUTE_FORCE_MAX_ROWS });
    }
    fn search(
        w: &WeightMatrix,
        row: usize,
        used: &mut Vec<bool>,
        current: &mut Vec<(usize, usize)>,
        value: f64,
        best: &mut (f64, Vec<(usize, usize)>),
    ) {
        if row == w.rows {
            if value > best.0 {
                *best = (value, current.clone());
            }
            return;
        }
        search(w, row + 1, used, current, value, best);
        for col in 0..w.cols {
            if used[col] {
                continue;
            }
            if let Some(x) = w.admissible(row, col) {
                used[col] = true;
                current.push((row, col));
                search(w, row + 1, used, current, value + x, best);
                current.pop();
                used[col] = false;
            }
        }
    }
    let mut best = (0.0, Vec::new());
    search(w, 0, &mut vec![false; w.cols], &mut Vec::new(), 0.0, &mut best);
    Ok(Matching::from_pairs(w, best.1))
}

/// Rows in order, each taking its best remaining admissible column. This is
/// what dispatching donors one at a time under the myopic rule achieves on a
/// frozen waitlist.
pub fn greedy_matching(w: &WeightMatrix) -> Matching {
    let mut used = vec![false; w.cols];
    let mut pairs = Vec::new();
    for r in 0..w.rows {
        let best = (0..w.cols)
            .filter(|&c| !used[c])
            .filter_map(|c| w.admissible(r, c).map(|x| (c, x)))
            .fold(None::<(usize, f64)>, |acc, (c, x)| match acc {
                Some((_, bx)) if bx >= x => acc,
                _ => Some((c, x)),
            });
        if let Some((c, _)) = best {
            used[c] = true;
            pairs.push((r, c));
        }
    }
    Matching::from_pairs(w, pairs)
}
