//! Dyadic grid arithmetic: cubes, cube sets, covering numbers, sumset covers
//! and a uniform-grid ball index.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use crate::curve::CurvedTube;
use crate::error::{check_budget, LabError, Result};
use crate::numeric::dyadic_side;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DyadicCube {
    pub level: u32,
    pub ix: i64,
    pub iy: i64,
}

impl DyadicCube {
    pub fn side(&self) -> f64 {
        dyadic_side(self.level)
    }

    /// Cube whose half-open cell contains `p`.
    pub fn containing(p: [f64; 2], level: u32) -> Self {
        let s = dyadic_side(level);
        DyadicCube { level, ix: (p[0] / s).floor() as i64, iy: (p[1] / s).floor() as i64 }
    }

    /// [x0, y0, x1, y1].
    pub fn bounds(&self) -> [f64; 4] {
        let s = self.side();
        [self.ix as f64 * s, self.iy as f64 * s, (self.ix + 1) as f64 * s, (self.iy + 1) as f64 * s]
    }

    pub fn midpoint(&self) -> [f64; 2] {
        let s = self.side();
        [(self.ix as f64 + 0.5) * s, (self.iy as f64 + 0.5) * s]
    }

    pub fn contains_point(&self, p: [f64; 2]) -> bool {
        DyadicCube::containing(p, self.level) == *self
    }

    pub fn ancestor(&self, level: u32) -> DyadicCube {
        assert!(level <= self.level);
        let sh = self.level - level;
        DyadicCube { level, ix: self.ix >> sh, iy: self.iy >> sh }
    }
}

/// Level k with δ = 2^-k.
pub fn level_of(delta: f64) -> Result<u32> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(LabError::NonDyadic(delta));
    }
    let k = (-delta.log2()).round();
    if k > 60.0 || dyadic_side(k as u32) != delta {
        return Err(LabError::NonDyadic(delta));
    }
    Ok(k as u32)
}

/// Sorted, duplicate-free set of cubes at one level.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct CubeSet {
    level: u32,
    members: Vec<(i64, i64)>,
}

impl CubeSet {
    pub fn new<I: IntoIterator<Item = (i64, i64)>>(level: u32, cells: I) -> Self {
        let mut members: Vec<(i64, i64)> = cells.into_iter().collect();
        members.sort_unstable();
        members.dedup();
        CubeSet { level, members }
    }

    pub fn empty(level: u32) -> Self {
        CubeSet { level, members: vec![] }
    }

    /// Cells containing the given points (half-open convention).
    pub fn from_points(points: &[[f64; 2]], level: u32) -> Self {
        Self::new(level, points.iter().map(|&p| {
            let c = DyadicCube::containing(p, level);
            (c.ix, c.iy)
        }))
    }

    /// All cells of [0,1]².
    pub fn full_unit_grid(level: u32) -> Self {
        let n = 1i64 << level;
        Self::new(level, (0..n).flat_map(|i| (0..n).map(move |j| (i, j))))
    }

    pub fn level(&self) -> u32 {
        self.level
    }
    pub fn delta(&self) -> f64 {
        dyadic_side(self.level)
    }
    pub fn len(&self) -> usize {
        self.members.len()
    }
    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
    pub fn members(&self) -> &[(i64, i64)] {
        &self.members
    }
    pub fn iter(&self) -> impl Iterator<Item = (i64, i64)> + '_ {
        self.members.iter().copied()
    }
    pub fn cubes(&self) -> impl Iterator<Item = DyadicCube> + '_ {
        let level = self.level;
        self.members.iter().map(move |&(ix, iy)| DyadicCube { level, ix, iy })
    }
    pub fn contains(&self, cell: (i64, i64)) -> bool {
        self.members.binary_search(&cell).is_ok()
    }
    pub fn position(&self, cell: (i64, i64)) -> Option<usize> {
        self.members.binary_search(&cell).ok()
    }

    /// Ancestors at a coarser level.
    pub fn coarsen(&self, level: u32) -> Result<CubeSet> {
        if level > self.level {
            return Err(LabError::Precondition(format!(
                "cannot coarsen level {} to finer level {level}",
                self.level
            )));
        }
        let sh = self.level - level;
        Ok(Self::new(level, self.iter().map(|(x, y)| (x >> sh, y >> sh))))
    }

    pub fn translate(&self, dx: i64, dy: i64) -> CubeSet {
        CubeSet { level: self.level, members: self.iter().map(|(x, y)| (x + dx, y + dy)).collect() }
    }

    pub fn union(&self, other: &CubeSet) -> Result<CubeSet> {
        if self.level != other.level {
            return Err(LabError::Precondition("union of cube sets at different levels".into()));
        }
        Ok(Self::new(self.level, self.iter().chain(other.iter())))
    }

    pub fn is_subset(&self, other: &CubeSet) -> bool {
        self.level == other.level && self.iter().all(|c| other.contains(c))
    }

    pub fn bbox(&self) -> Option<(i64, i64, i64, i64)> {
        let first = self.members.first()?;
        let (mut x0, mut x1, mut y0, mut y1) = (first.0, first.0, first.1, first.1);
        for &(x, y) in &self.members {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        Some((x0, x1, y0, y1))
    }
}

impl fmt::Display for CubeSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "level={}", self.level)?;
        for (x, y) in &self.members {
            writeln!(f, "{x} {y}")?;
        }
        Ok(())
    }
}

impl FromStr for CubeSet {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        let mut lines = s.lines().filter(|l| !l.trim().is_empty());
        let head = lines.next().ok_or_else(|| LabError::Parse("empty cube set file".into()))?;
        let level = head
            .trim()
            .strip_prefix("level=")
            .and_then(|v| v.parse::<u32>().ok())
            .ok_or_else(|| LabError::Parse(format!("bad header '{head}'")))?;
        let mut cells = vec![];
        for line in lines {
            let mut it = line.split_whitespace();
            let parse = |t: Option<&str>| -> Result<i64> {
                t.and_then(|v| v.parse().ok()).ok_or_else(|| LabError::Parse(format!("bad line '{line}'")))
            };
            let x = parse(it.next())?;
            let y = parse(it.next())?;
            if it.next().is_some() {
                return Err(LabError::Parse(format!("bad line '{line}'")));
            }
            cells.push((x, y));
        }
        Ok(CubeSet::new(level, cells))
    }
}

/// |E|_δ for a cube set: cubes at δ are coarsened, finer δ splits each cube.
pub fn covering_number(set: &CubeSet, delta: f64) -> Result<usize> {
    let k = level_of(delta)?;
    if k <= set.level {
        Ok(set.coarsen(k)?.len())
    } else {
        let f = 1usize << (2 * (k - set.level));
        Ok(set.len() * f)
    }
}

pub fn covering_number_points(points: &[[f64; 2]], delta: f64) -> Result<usize> {
    let k = level_of(delta)?;
    Ok(CubeSet::from_points(points, k).len())
}

/// Number of cells [iδ, (i+1)δ) meeting a union of intervals. An interval
/// (lo, hi) with hi > lo meets cell i iff iδ < hi and (i+1)δ > lo; a
/// degenerate interval lo = hi is the point lo.
pub fn covering_number_intervals(intervals: &[(f64, f64)], delta: f64) -> Result<usize> {
    let _ = level_of(delta)?;
    let mut ranges: Vec<(i64, i64)> = intervals
        .iter()
        .map(|&(lo, hi)| {
            if hi <= lo {
                let i = (lo / delta).floor() as i64;
                (i, i)
            } else {
                let first = (lo / delta).floor() as i64;
                let last = (hi / delta).ceil() as i64 - 1;
                (first, last)
            }
        })
        .collect();
    ranges.sort_unstable();
    let mut count = 0i64;
    let mut cur: Option<(i64, i64)> = None;
    for (a, b) in ranges {
        match cur {
            Some((ca, cb)) if a <= cb + 1 => cur = Some((ca, cb.max(b))),
            Some((ca, cb)) => {
                count += cb - ca + 1;
                cur = Some((a, b));
            }
            None => cur = Some((a, b)),
        }
    }
    if let Some((ca, cb)) = cur {
        count += cb - ca + 1;
    }
    Ok(count as usize)
}

/// Cells at δ = tube.delta meeting the closed tube, walked column by column.
pub fn cubes_on_tube(tube: &CurvedTube<'_>, delta: f64) -> Result<CubeSet> {
    let k = level_of(delta)?;
    if tube.delta != delta {
        return Err(LabError::Precondition(format!(
            "tube width {} differs from grid width {delta}",
            tube.delta
        )));
    }
    let (lo, hi) = tube.local_range();
    let e = tube.delta + tube.tol();
    let [qx, qy] = tube.q;
    let c0 = ((qx + lo - e) / delta).floor() as i64;
    let c1 = ((qx + hi + e) / delta).floor() as i64;
    let mut cells = vec![];
    for ix in c0..=c1 {
        let x0 = ix as f64 * delta - qx;
        let x1 = (ix + 1) as f64 * delta - qx;
        let (a, b) = ((x0 - e).max(lo), (x1 + e).min(hi));
        if a > b {
            continue;
        }
        let (pl, ph) = tube.spec.range_on(a, b);
        let ymin = pl - e + qy;
        let ymax = ph + e + qy;
        let r0 = (ymin / delta).ceil() as i64 - 1;
        let r1 = (ymax / delta).floor() as i64;
        for iy in r0..=r1 {
            let cube = DyadicCube { level: k, ix, iy };
            if crate::curve::tube_cube_intersects(tube, &cube) {
                cells.push((ix, iy));
            }
        }
    }
    Ok(CubeSet::new(k, cells))
}

/// Column bitsets of the cover of E + F at E's level.
pub struct SumCover {
    /// Row index of bit 0 in every column.
    pub y0: i64,
    pub columns: BTreeMap<i64, Vec<u64>>,
}

impl SumCover {
    pub fn count(&self) -> usize {
        self.columns.values().flat_map(|c| c.iter()).map(|w| w.count_ones() as usize).sum()
    }

    pub fn cells(&self) -> impl Iterator<Item = (i64, i64)> + '_ {
        self.columns.iter().flat_map(move |(&x, col)| {
            col.iter().enumerate().flat_map(move |(i, &w)| {
                let mut w = w;
                std::iter::from_fn(move || {
                    if w == 0 {
                        return None;
                    }
                    let b = w.trailing_zeros() as i64;
                    w &= w - 1;
                    Some((x, self.y0 + i as i64 * 64 + b))
                })
            })
        })
    }
}

/// Cover of E + F at E's level. The sum of half-open cells i and j is
/// [(i+j)δ, (i+j+2)δ), so it occupies cells i+j and i+j+1 on each axis.
pub fn minkowski_sum_cells(e: &CubeSet, f: &CubeSet, budget: u128) -> Result<SumCover> {
    if e.level != f.level {
        return Err(LabError::Precondition("minkowski cover needs equal levels".into()));
    }
    check_budget(e.len() as u128 * f.len() as u128, budget)?;
    let (Some((_, _, ey0, ey1)), Some((_, _, fy0, fy1))) = (e.bbox(), f.bbox()) else {
        return Ok(SumCover { y0: 0, columns: BTreeMap::new() });
    };
    let height = (ey1 - ey0 + fy1 - fy0 + 3) as usize;
    let words = height.div_ceil(64) + 1;
    let ewords = ((ey1 - ey0 + 1) as usize).div_ceil(64);
    let mut ecols: BTreeMap<i64, Vec<u64>> = BTreeMap::new();
    for (x, y) in e.iter() {
        let col = ecols.entry(x).or_insert_with(|| vec![0u64; ewords]);
        let b = (y - ey0) as usize;
        col[b / 64] |= 1u64 << (b % 64);
    }
    let mut sums: BTreeMap<i64, Vec<u64>> = BTreeMap::new();
    for (fx, fy) in f.iter() {
        let shift = (fy - fy0) as usize;
        let (ws, bs) = (shift / 64, shift % 64);
        for (&x, col) in &ecols {
            let target = sums.entry(x + fx).or_insert_with(|| vec![0u64; words]);
            for (i, &w) in col.iter().enumerate() {
                if w == 0 {
                    continue;
                }
                target[i + ws] |= w << bs;
                if bs != 0 {
                    target[i + ws + 1] |= w >> (64 - bs);
                }
            }
        }
    }
    let mut columns: BTreeMap<i64, Vec<u64>> = BTreeMap::new();
    for (x, col) in sums {
        let mut up = col.clone();
        let mut carry = 0u64;
        for (u, &v) in up.iter_mut().zip(&col) {
            *u = v | (v << 1) | carry;
            carry = v >> 63;
        }
        for tx in [x, x + 1] {
            let t = columns.entry(tx).or_insert_with(|| vec![0u64; words]);
            for (a, b) in t.iter_mut().zip(&up) {
                *a |= *b;
            }
        }
    }
    Ok(SumCover { y0: ey0 + fy0, columns })
}

/// |E + F|_δ.
pub fn minkowski_cover(e: &CubeSet, f: &CubeSet, delta: f64, budget: u128) -> Result<usize> {
    let k = level_of(delta)?;
    if k > e.level {
        return Err(LabError::Precondition("delta finer than the input resolution".into()));
    }
    let cover = minkowski_sum_cells(e, f, budget)?;
    if k == e.level {
        return Ok(cover.count());
    }
    let sh = e.level - k;
    Ok(CubeSet::new(k, cover.cells().map(|(x, y)| (x >> sh, y >> sh))).len())
}

/// Uniform-grid hash index over a cube set.
pub struct CubeIndex<'a> {
    set: &'a CubeSet,
    cells: HashSet<(i64, i64)>,
}

impl<'a> CubeIndex<'a> {
    pub fn new(set: &'a CubeSet) -> Self {
        CubeIndex { set, cells: set.iter().collect() }
    }

    /// Members meeting the closed ball B(center, r).
    pub fn ball_query(&self, center: [f64; 2], r: f64) -> CubeSet {
        let level = self.set.level();
        let d = self.set.delta();
        let meets = |(ix, iy): (i64, i64)| {
            let c = DyadicCube { level, ix, iy };
            let [x0, y0, x1, y1] = c.bounds();
            let dx = (x0 - center[0]).max(0.0).max(center[0] - x1);
            let dy = (y0 - center[1]).max(0.0).max(center[1] - y1);
            dx * dx + dy * dy <= r * r
        };
        let i0 = ((center[0] - r) / d).ceil() as i64 - 1;
        let i1 = ((center[0] + r) / d).floor() as i64;
        let j0 = ((center[1] - r) / d).ceil() as i64 - 1;
        let j1 = ((center[1] + r) / d).floor() as i64;
        let window = ((i1 - i0 + 1) as u128) * ((j1 - j0 + 1) as u128);
        let hits: Vec<(i64, i64)> = if window > self.set.len() as u128 {
            self.set.iter().filter(|&c| meets(c)).collect()
        } else {
            (i0..=i1)
                .flat_map(|i| (j0..=j1).map(move |j| (i, j)))
                .filter(|c| self.cells.contains(c) && meets(*c))
                .collect()
        };
        CubeSet::new(level, hits)
    }
}
