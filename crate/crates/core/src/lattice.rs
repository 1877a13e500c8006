//! Lattice geometry, occupation configurations, threshold patterns and the
//! coordinatewise partial order.
//!
//! Sites of a [`LatticeBox`] are indexed lexicographically over their
//! coordinates (first axis most significant). A [`Config`] packs one bit per
//! site in that order, so the numeric order of packed codes is the canonical
//! state enumeration shared by every other module.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use smallvec::SmallVec;
use thiserror::Error;

/// Index of a site inside a [`LatticeBox`].
pub type Site = usize;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LatticeError {
    #[error("dimension must be positive")]
    ZeroDimension,
    #[error("axis range {lo}..={hi} is empty")]
    EmptyRange { lo: i32, hi: i32 },
    #[error("box has no sites")]
    EmptyBox,
    #[error("unknown site {0}")]
    UnknownSite(Site),
    #[error("coordinates {0:?} are not in the box")]
    UnknownCoordinates(Vec<i32>),
    #[error("configuration widths differ ({0} vs {1})")]
    WidthMismatch(usize, usize),
    #[error("{sites} sites exceed the limit of {limit}")]
    TooManySites { sites: usize, limit: usize },
    #[error("invalid configuration text: {0}")]
    Parse(String),
}

/// A finite box of `Z^d`, optionally with the origin removed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatticeBox {
    dim: usize,
    ranges: Vec<(i32, i32)>,
    origin_excluded: bool,
    coords: Vec<Vec<i32>>,
    index: HashMap<Vec<i32>, Site>,
    neighbors: Vec<Vec<Site>>,
    outside: Vec<u32>,
    bonds: Vec<(Site, Site)>,
}

impl LatticeBox {
    /// The cube `[-n, n]^d`.
    pub fn cube(dim: usize, n: u32) -> Result<Self, LatticeError> {
        let n = n as i32;
        Self::with_ranges(vec![(-n, n); dim], false)
    }

    /// The cube `[-n, n]^d` with the origin removed (birth-death state space).
    pub fn cube_without_origin(dim: usize, n: u32) -> Result<Self, LatticeError> {
        let n = n as i32;
        Self::with_ranges(vec![(-n, n); dim], true)
    }

    /// A rectangular box with per-axis inclusive coordinate ranges.
    pub fn with_ranges(ranges: Vec<(i32, i32)>, origin_excluded: bool) -> Result<Self, LatticeError> {
        if ranges.is_empty() {
            return Err(LatticeError::ZeroDimension);
        }
        for &(lo, hi) in &ranges {
            if lo > hi {
                return Err(LatticeError::EmptyRange { lo, hi });
            }
        }
        let dim = ranges.len();
        let mut coords: Vec<Vec<i32>> = vec![Vec::new()];
        for &(lo, hi) in &ranges {
            coords = coords
                .into_iter()
                .flat_map(|prefix| {
                    (lo..=hi).map(move |x| {
                        let mut c = prefix.clone();
                        c.push(x);
                        c
                    })
                })
                .collect();
        }
        if origin_excluded {
            coords.retain(|c| c.iter().any(|&x| x != 0));
        }
        if coords.is_empty() {
            return Err(LatticeError::EmptyBox);
        }
        let index: HashMap<Vec<i32>, Site> =
            coords.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect();
        let in_cube = |c: &[i32]| c.iter().zip(&ranges).all(|(&x, &(lo, hi))| lo <= x && x <= hi);

        let mut neighbors = Vec::with_capacity(coords.len());
        let mut outside = Vec::with_capacity(coords.len());
        let mut bonds = Vec::new();
        for (i, c) in coords.iter().enumerate() {
            let mut nb = Vec::with_capacity(2 * dim);
            let mut out = 0u32;
            for axis in 0..dim {
                for step in [-1, 1] {
                    let mut other = c.clone();
                    other[axis] += step;
                    if let Some(&j) = index.get(&other) {
                        nb.push(j);
                        if i < j {
                            bonds.push((i, j));
                        }
                    } else if !in_cube(&other) {
                        out += 1;
                    }
                }
            }
            neighbors.push(nb);
            outside.push(out);
        }
        Ok(Self { dim, ranges, origin_excluded, coords, index, neighbors, outside, bonds })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ranges(&self) -> &[(i32, i32)] {
        &self.ranges
    }

    /// Half-width `n` when the box is a symmetric cube `[-n, n]^d`.
    pub fn half_width(&self) -> Option<u32> {
        let (lo, hi) = self.ranges[0];
        (lo == -hi && self.ranges.iter().all(|&r| r == (lo, hi))).then_some(hi as u32)
    }

    pub fn origin_excluded(&self) -> bool {
        self.origin_excluded
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn sites(&self) -> std::ops::Range<Site> {
        0..self.coords.len()
    }

    pub fn coords(&self, i: Site) -> Result<&[i32], LatticeError> {
        self.coords.get(i).map(Vec::as_slice).ok_or(LatticeError::UnknownSite(i))
    }

    pub fn site(&self, coords: &[i32]) -> Result<Site, LatticeError> {
        self.index
            .get(coords)
            .copied()
            .ok_or_else(|| LatticeError::UnknownCoordinates(coords.to_vec()))
    }

    pub fn origin(&self) -> Option<Site> {
        self.index.get(&vec![0; self.dim]).copied()
    }

    /// The neighbour of the origin along the positive first axis.
    pub fn origin_prime(&self) -> Option<Site> {
        let mut c = vec![0; self.dim];
        c[0] = 1;
        self.index.get(&c).copied()
    }

    /// In-box nearest neighbours of `i`, ordered by axis then by step `-1, +1`.
    pub fn neighbors(&self, i: Site) -> Result<&[Site], LatticeError> {
        self.neighbors.get(i).map(Vec::as_slice).ok_or(LatticeError::UnknownSite(i))
    }

    /// Number of lattice neighbours of `i` lying outside the box (`n(i)`).
    /// The removed origin does not count as outside.
    pub fn outside_neighbors(&self, i: Site) -> u32 {
        self.outside[i]
    }

    pub fn is_boundary(&self, i: Site) -> bool {
        self.outside[i] > 0
    }

    pub fn boundary_sites(&self) -> impl Iterator<Item = Site> + '_ {
        self.sites().filter(|&i| self.outside[i] > 0)
    }

    /// Unordered in-box bonds `(i, j)` with `i < j`, in lexicographic order.
    pub fn bonds(&self) -> &[(Site, Site)] {
        &self.bonds
    }

    /// Sites adjacent (in `Z^d`) to the origin, whether or not the origin is in the box.
    pub fn origin_neighbors(&self) -> Vec<Site> {
        let mut out = Vec::new();
        for axis in 0..self.dim {
            for step in [-1, 1] {
                let mut c = vec![0; self.dim];
                c[axis] = step;
                if let Some(&j) = self.index.get(&c) {
                    out.push(j);
                }
            }
        }
        out
    }

    /// Lattice (l1) distance between two sites.
    pub fn distance(&self, i: Site, j: Site) -> u32 {
        self.coords[i].iter().zip(&self.coords[j]).map(|(a, b)| a.abs_diff(*b)).sum()
    }

    pub fn distance_to_origin(&self, i: Site) -> u32 {
        self.coords[i].iter().map(|x| x.unsigned_abs()).sum()
    }

    pub fn empty_config(&self) -> Config {
        Config::empty(self.len())
    }
}

/// Packed 0/1 occupation of the sites of a box; bit `r` is site `r`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Config {
    width: usize,
    words: SmallVec<[u64; 2]>,
}

impl Config {
    pub fn empty(width: usize) -> Self {
        Self { width, words: SmallVec::from_elem(0, width.div_ceil(64).max(1)) }
    }

    pub fn full(width: usize) -> Self {
        let mut c = Self::empty(width);
        for i in 0..width {
            c.set(i, true);
        }
        c
    }

    /// Unpacks a single-word code. Bits at or beyond `width` are dropped.
    pub fn from_code(code: u64, width: usize) -> Self {
        let mut c = Self::empty(width);
        let mask = if width >= 64 { u64::MAX } else { (1u64 << width) - 1 };
        c.words[0] = code & mask;
        c
    }

    pub fn from_sites(width: usize, occupied: &[Site]) -> Self {
        let mut c = Self::empty(width);
        for &i in occupied {
            c.set(i, true);
        }
        c
    }

    /// Single-word code, available when the width is at most 64.
    pub fn code(&self) -> Option<u64> {
        (self.width <= 64).then(|| self.words[0])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, i: Site) -> bool {
        debug_assert!(i < self.width);
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    #[inline]
    pub fn occ(&self, i: Site) -> u8 {
        self.get(i) as u8
    }

    #[inline]
    pub fn set(&mut self, i: Site, value: bool) {
        debug_assert!(i < self.width);
        let bit = 1u64 << (i % 64);
        if value {
            self.words[i / 64] |= bit;
        } else {
            self.words[i / 64] &= !bit;
        }
    }

    /// Spin flip `σ_k`.
    pub fn flip(&self, k: Site) -> Self {
        let mut c = self.clone();
        c.words[k / 64] ^= 1u64 << (k % 64);
        c
    }

    /// Exchange `T^{i,j}` of the contents of two sites.
    pub fn exchange(&self, i: Site, j: Site) -> Self {
        if self.get(i) == self.get(j) {
            return self.clone();
        }
        self.flip(i).flip(j)
    }

    pub fn count(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn count_in(&self, sites: &[Site]) -> u32 {
        sites.iter().filter(|&&i| self.get(i)).count() as u32
    }

    pub fn occupied(&self) -> impl Iterator<Item = Site> + '_ {
        (0..self.width).filter(|&i| self.get(i))
    }

    /// Coordinatewise order `self ≤ other`.
    pub fn leq(&self, other: &Config) -> Result<bool, LatticeError> {
        if self.width != other.width {
            return Err(LatticeError::WidthMismatch(self.width, other.width));
        }
        Ok(self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0))
    }
}

impl fmt::Display for Config {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.width {
            f.write_str(if self.get(i) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for Config {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Config({self})")
    }
}

impl FromStr for Config {
    type Err = LatticeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut c = Config::empty(s.len());
        for (i, ch) in s.chars().enumerate() {
            match ch {
                '0' => {}
                '1' => c.set(i, true),
                _ => return Err(LatticeError::Parse(s.to_string())),
            }
        }
        Ok(c)
    }
}

impl serde::Serialize for Config {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Increasing pattern `{η : Σ_{i∈sites} η(i) ≥ threshold}`.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct Pattern {
    sites: Vec<Site>,
    threshold: u32,
}

impl Pattern {
    pub fn new(lattice: &LatticeBox, mut sites: Vec<Site>, threshold: u32) -> Result<Self, LatticeError> {
        sites.sort_unstable();
        sites.dedup();
        if let Some(&bad) = sites.iter().find(|&&i| i >= lattice.len()) {
            return Err(LatticeError::UnknownSite(bad));
        }
        Ok(Self { sites, threshold })
    }

    /// `A_1 = {η : η(0) = 1}`.
    pub fn origin(lattice: &LatticeBox) -> Result<Self, LatticeError> {
        let o = lattice.origin().ok_or_else(|| LatticeError::UnknownCoordinates(vec![0; lattice.dim()]))?;
        Self::new(lattice, vec![o], 1)
    }

    /// `A_2 = {η : η(0) = η(0′) = 1}` with `0′ = e_1`.
    pub fn origin_pair(lattice: &LatticeBox) -> Result<Self, LatticeError> {
        let o = lattice.origin().ok_or_else(|| LatticeError::UnknownCoordinates(vec![0; lattice.dim()]))?;
        let mut e1 = vec![0; lattice.dim()];
        e1[0] = 1;
        let p = lattice.origin_prime().ok_or(LatticeError::UnknownCoordinates(e1))?;
        Self::new(lattice, vec![o, p], 2)
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn threshold(&self) -> u32 {
        self.threshold
    }

    pub fn contains(&self, c: &Config) -> bool {
        c.count_in(&self.sites) >= self.threshold
    }

    pub fn involves(&self, i: Site) -> bool {
        self.sites.binary_search(&i).is_ok()
    }
}

/// Largest cube dimension for which up-sets are enumerated.
pub const MAX_UPSET_SITES: usize = 6;

/// All up-sets of the Boolean lattice `{0,1}^sites`, each encoded as a
/// `2^sites`-bit mask over points (point `x` has bit `i` = coordinate `i`).
///
/// Uses the recursion that splits on the last coordinate: an up-set is a pair
/// `(U0, U1)` of up-sets of the smaller cube with `U0 ⊆ U1`.
pub fn enumerate_monotone_functions(sites: usize) -> Result<impl Iterator<Item = u64>, LatticeError> {
    if sites > MAX_UPSET_SITES {
        return Err(LatticeError::TooManySites { sites, limit: MAX_UPSET_SITES });
    }
    let lower = if sites == 0 { Vec::new() } else { upsets_materialized(sites - 1) };
    let half = if sites == 0 { 0 } else { 1u32 << (sites - 1) };
    let base: Box<dyn Iterator<Item = u64>> = if sites == 0 {
        Box::new([0u64, 1u64].into_iter())
    } else {
        let lower2 = lower.clone();
        Box::new(lower.into_iter().flat_map(move |u0| {
            let lower2 = lower2.clone();
            lower2.into_iter().filter(move |&u1| u0 & !u1 == 0).map(move |u1| u0 | (u1 << half))
        }))
    };
    Ok(base)
}

fn upsets_materialized(sites: usize) -> Vec<u64> {
    if sites == 0 {
        return vec![0, 1];
    }
    let lower = upsets_materialized(sites - 1);
    let half = 1u32 << (sites - 1);
    let mut out = Vec::new();
    for &u0 in &lower {
        for &u1 in &lower {
            if u0 & !u1 == 0 {
                out.push(u0 | (u1 << half));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neighbors_in_one_dimension() {
        let b = LatticeBox::cube(1, 2).unwrap();
        let o = b.origin().unwrap();
        let nb: Vec<_> = b.neighbors(o).unwrap().iter().map(|&j| b.coords(j).unwrap()[0]).collect();
        assert_eq!(nb, vec![-1, 1]);
    }

    #[test]
    fn corner_has_two_neighbors() {
        let b = LatticeBox::cube(2, 1).unwrap();
        let corner = b.site(&[1, 1]).unwrap();
        let mut nb: Vec<_> = b.neighbors(corner).unwrap().iter().map(|&j| b.coords(j).unwrap().to_vec()).collect();
        nb.sort();
        assert_eq!(nb, vec![vec![0, 1], vec![1, 0]]);
        assert_eq!(b.outside_neighbors(corner), 2);
    }

    #[test]
    fn origin_of_3d_box_has_six_neighbors() {
        let b = LatticeBox::cube(3, 2).unwrap();
        assert_eq!(b.neighbors(b.origin().unwrap()).unwrap().len(), 6);
        assert_eq!(b.len(), 125);
    }

    #[test]
    fn unknown_site_is_an_error() {
        let b = LatticeBox::cube(1, 1).unwrap();
        assert_eq!(b.neighbors(7), Err(LatticeError::UnknownSite(7)));
    }

    #[test]
    fn origin_removed_box() {
        let b = LatticeBox::cube_without_origin(2, 1).unwrap();
        assert_eq!(b.len(), 8);
        assert!(b.origin().is_none());
        // the missing origin is not an outside neighbour
        let k = b.site(&[1, 0]).unwrap();
        assert_eq!(b.outside_neighbors(k), 1);
        assert_eq!(b.neighbors(k).unwrap().len(), 2);
        assert_eq!(b.origin_neighbors().len(), 4);
    }

    #[test]
    fn boundary_multiplicities_count_crossing_bonds() {
        for (d, n) in [(1, 0), (1, 3), (2, 2), (3, 1)] {
            let b = LatticeBox::cube(d, n).unwrap();
            let total: u32 = b.sites().map(|i| b.outside_neighbors(i)).sum();
            // each face of the cube is crossed by (2n+1)^(d-1) bonds
            let side = 2 * n + 1;
            assert_eq!(total, 2 * d as u32 * side.pow(d as u32 - 1));
        }
    }

    #[test]
    fn exchange_swaps_and_fixes() {
        let c: Config = "0100".parse().unwrap();
        assert_eq!(c.exchange(1, 2).to_string(), "0010");
        assert_eq!(c.exchange(0, 3), c);
    }

    #[test]
    fn flip_toggles() {
        let c = Config::empty(5);
        let f = c.flip(3);
        assert_eq!(f.to_string(), "00010");
        assert_eq!(f.count(), 1);
        assert_eq!(f.flip(3), c);
    }

    #[test]
    fn patterns() {
        let b = LatticeBox::cube(1, 1).unwrap();
        let a1 = Pattern::origin(&b).unwrap();
        let a2 = Pattern::origin_pair(&b).unwrap();
        let o = b.origin().unwrap();
        let c = Config::from_sites(3, &[o]);
        assert!(a1.contains(&c));
        assert!(!a2.contains(&c));
        let zero = Pattern::new(&b, vec![o], 0).unwrap();
        assert!(zero.contains(&Config::empty(3)));
    }

    #[test]
    fn order_basics() {
        let a: Config = "10".parse().unwrap();
        let b: Config = "01".parse().unwrap();
        assert!(a.leq(&a).unwrap());
        assert!(Config::empty(2).leq(&a).unwrap());
        assert!(!a.leq(&b).unwrap());
        assert!(!b.leq(&a).unwrap());
        assert!(a.leq(&Config::empty(3)).is_err());
    }

    #[test]
    fn multiword_configs() {
        let mut c = Config::empty(130);
        c.set(129, true);
        c.set(3, true);
        assert_eq!(c.count(), 2);
        assert!(c.code().is_none());
        let d = c.exchange(129, 64);
        assert!(d.get(64) && !d.get(129));
        assert_eq!(d.to_string().parse::<Config>().unwrap(), d);
    }

    fn brute_force_upset_count(sites: usize) -> usize {
        let points = 1usize << sites;
        (0u64..(1u64 << points))
            .filter(|&mask| {
                (0..points).all(|x| {
                    if mask >> x & 1 == 0 {
                        return true;
                    }
                    (0..sites).all(|i| mask >> (x | (1 << i)) & 1 == 1)
                })
            })
            .count()
    }

    #[test]
    fn upset_counts_match_filtering() {
        for sites in 0..=4 {
            let n = enumerate_monotone_functions(sites).unwrap().count();
            assert_eq!(n, brute_force_upset_count(sites), "sites = {sites}");
        }
        assert_eq!(enumerate_monotone_functions(1).unwrap().count(), 3);
        assert_eq!(enumerate_monotone_functions(2).unwrap().count(), 6);
    }

    #[test]
    fn upset_count_for_five_sites() {
        let all: Vec<u64> = enumerate_monotone_functions(5).unwrap().collect();
        assert_eq!(all.len(), 7581);
        let mut dedup = all.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), all.len());
    }

    #[test]
    fn upset_limit() {
        assert!(enumerate_monotone_functions(7).is_err());
    }
}
