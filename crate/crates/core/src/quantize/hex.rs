//! Two-dimensional hexagonal lattice codebooks.
//!
//! Lattice points are `i * (1, 0) + j * (1/2, sqrt(3)/2)` for integers `i, j`;
//! their squared length is the integer `i^2 + i j + j^2`. A codebook of size
//! `2^(2b)` keeps the points closest to the origin, ordered by squared length
//! and then by polar angle in `[0, 2 pi)`. That order defines codeword indices.

use std::cmp::Ordering;
use std::sync::OnceLock;

const SQRT3_2: f64 = 0.866_025_403_784_438_6;

/// Largest supported bits per component.
pub const MAX_HEX_BITS: u32 = 16;

#[inline]
pub fn lattice_norm(i: i64, j: i64) -> u64 {
    (i * i + i * j + j * j) as u64
}

#[inline]
pub fn lattice_point(i: i64, j: i64) -> [f64; 2] {
    [i as f64 + 0.5 * j as f64, SQRT3_2 * j as f64]
}

fn angle(i: i64, j: i64) -> f64 {
    let [x, y] = lattice_point(i, j);
    let a = y.atan2(x);
    if a < 0.0 {
        a + std::f64::consts::TAU
    } else {
        a
    }
}

/// Codebook order of two lattice points.
pub fn index_order(a: (i64, i64), b: (i64, i64)) -> Ordering {
    lattice_norm(a.0, a.1)
        .cmp(&lattice_norm(b.0, b.1))
        .then_with(|| angle(a.0, a.1).total_cmp(&angle(b.0, b.1)))
}

/// Integer `i` range of row `j` with `i^2 + i j + j^2 <= n`.
fn row_range(j: i64, n: u64) -> Option<(i64, i64)> {
    let disc = 4 * n as i128 - 3 * (j as i128) * (j as i128);
    if disc < 0 {
        return None;
    }
    let root = (disc as f64).sqrt();
    let inside = |i: i64| (lattice_norm(i, j) as i128) <= n as i128;
    let mut lo = ((-(j as f64) - root) / 2.0).floor() as i64 - 1;
    let mut hi = ((-(j as f64) + root) / 2.0).ceil() as i64 + 1;
    while lo <= hi && !inside(lo) {
        lo += 1;
    }
    while hi >= lo && !inside(hi) {
        hi -= 1;
    }
    (lo <= hi).then_some((lo, hi))
}

fn max_row(n: u64) -> i64 {
    ((4.0 * n as f64 / 3.0).sqrt().floor() as i64) + 1
}

/// Number of lattice points with squared length `<= n`.
pub fn count_within(n: u64) -> u64 {
    let m = max_row(n);
    (-m..=m)
        .filter_map(|j| row_range(j, n))
        .map(|(lo, hi)| (hi - lo + 1) as u64)
        .sum()
}

/// Lattice points with squared length exactly `n`.
fn shell(n: u64) -> Vec<(i64, i64)> {
    let m = max_row(n);
    let mut pts = Vec::new();
    for j in -m..=m {
        if let Some((lo, hi)) = row_range(j, n) {
            for i in [lo, hi] {
                if lattice_norm(i, j) == n && !pts.contains(&(i, j)) {
                    pts.push((i, j));
                }
            }
        }
    }
    pts.sort_by(|a, b| index_order(*a, *b));
    pts
}

#[derive(Debug, Clone, PartialEq)]
pub struct HexCodebook {
    bits: u32,
    size: u64,
    /// Squared length of the outermost (possibly partial) shell.
    boundary_norm: u64,
    /// Points taken from that shell, in index order.
    boundary: Vec<(i64, i64)>,
    radius: f64,
}

impl HexCodebook {
    pub fn new(bits: u32) -> Self {
        assert!((1..=MAX_HEX_BITS).contains(&bits), "hex bits out of range: {bits}");
        let size = 1u64 << (2 * bits);
        let mut hi = 1u64;
        while count_within(hi) < size {
            hi *= 2;
        }
        let mut lo = 0u64;
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if count_within(mid) >= size {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        let boundary_norm = lo;
        let inner = if boundary_norm == 0 {
            0
        } else {
            count_within(boundary_norm - 1)
        };
        let mut boundary = shell(boundary_norm);
        boundary.truncate((size - inner) as usize);
        Self {
            bits,
            size,
            boundary_norm,
            boundary,
            radius: (boundary_norm as f64).sqrt(),
        }
    }

    /// Shared instance for `bits`.
    pub fn cached(bits: u32) -> &'static HexCodebook {
        static BOOKS: [OnceLock<HexCodebook>; MAX_HEX_BITS as usize + 1] =
            [const { OnceLock::new() }; MAX_HEX_BITS as usize + 1];
        BOOKS[bits as usize].get_or_init(|| HexCodebook::new(bits))
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn size(&self) -> u64 {
        self.size
    }

    /// Largest codeword length in lattice units.
    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn contains(&self, i: i64, j: i64) -> bool {
        match lattice_norm(i, j).cmp(&self.boundary_norm) {
            Ordering::Less => true,
            Ordering::Equal => self.boundary.contains(&(i, j)),
            Ordering::Greater => false,
        }
    }

    /// All codewords in index order. Only sensible for small codebooks.
    pub fn codewords(&self) -> Vec<(i64, i64)> {
        let m = max_row(self.boundary_norm);
        let mut pts = Vec::with_capacity(self.size as usize);
        for j in -m..=m {
            if let Some((lo, hi)) = row_range(j, self.boundary_norm) {
                pts.extend((lo..=hi).map(|i| (i, j)).filter(|&(i, j)| self.contains(i, j)));
            }
        }
        pts.sort_by(|a, b| index_order(*a, *b));
        pts
    }

    /// Codeword nearest to `q` (lattice units), ties to the lower index.
    ///
    /// Every lattice point of squared length below `boundary_norm` is a
    /// codeword, and one of them lies within `reach` of `q`, so only the lattice
    /// points in that neighbourhood are scanned.
    pub fn nearest(&self, q: [f64; 2]) -> (i64, i64) {
        let inner = ((self.boundary_norm.saturating_sub(1)) as f64).sqrt();
        let cover = 1.0 / 3f64.sqrt();
        let reach = (q[0].hypot(q[1]) - inner + cover).max(0.0) + cover + 1e-9;
        let m = max_row(self.boundary_norm);
        let j_lo = (((q[1] - reach) / SQRT3_2).ceil() as i64).max(-m);
        let j_hi = (((q[1] + reach) / SQRT3_2).floor() as i64).min(m);
        let mut best: Option<((i64, i64), f64)> = None;
        for j in j_lo..=j_hi {
            let Some((row_lo, row_hi)) = row_range(j, self.boundary_norm) else {
                continue;
            };
            let shift = 0.5 * j as f64;
            let i_lo = ((q[0] - reach - shift).ceil() as i64).max(row_lo);
            let i_hi = ((q[0] + reach - shift).floor() as i64).min(row_hi);
            for i in i_lo..=i_hi {
                if !self.contains(i, j) {
                    continue;
                }
                let [x, y] = lattice_point(i, j);
                let d = (q[0] - x).powi(2) + (q[1] - y).powi(2);
                let better = match best {
                    None => true,
                    Some((b, bd)) => d < bd || (d == bd && index_order((i, j), b).is_lt()),
                };
                if better {
                    best = Some(((i, j), d));
                }
            }
        }
        best.expect("a codeword lies within reach").0
    }
}
