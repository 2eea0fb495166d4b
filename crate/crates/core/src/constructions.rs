//! Explicit extremal configurations and seeded random instances.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::curve::CurveSpec;
use crate::dyadic::{covering_number_intervals, minkowski_cover, CubeSet};
use crate::error::{LabError, Result};
use crate::measures::{frostman_constant, riesz_energy_cells, DeltaMeasure};
use crate::numeric::dyadic_side;
use crate::seed::SeedTree;
use crate::spectral::CurveMeasure;

/// Lattice sets and measures of the arithmetic-progression construction on
/// the parabola. Lattice points are rounded to the δ-grid, so every
/// δ-neighbourhood (p − δ, p + δ) is exactly two cells.
#[derive(Clone, Debug)]
pub struct Example13Instance {
    pub level: u32,
    pub delta: f64,
    pub tau: f64,
    pub s: f64,
    /// Grid indices p/δ of the points of A, B and D.
    pub a_set: Vec<i64>,
    pub b_set: Vec<i64>,
    pub d_set: Vec<i64>,
    /// Spacing multiplier j with δ^s = j·δ^{τ/3} + δ̄.
    pub j: u64,
    pub mu: DeltaMeasure,
    pub sigma: DeltaMeasure,
    pub diagnostics: Example13Diagnostics,
}

/// Measured covering numbers and their ratios to the predicted powers.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Example13Diagnostics {
    pub cover_a_plus_a: usize,
    pub cover_b_plus_b: usize,
    pub cover_a_times_b: usize,
    pub cover_psi_a_plus_b: usize,
    pub cover_sum: usize,
    pub cover_graph_d: usize,
    pub ratio_a_plus_a: f64,
    pub ratio_b_plus_b: f64,
    pub ratio_a_times_b: f64,
    pub ratio_psi_a_plus_b: f64,
    pub ratio_sum: f64,
}

impl Example13Diagnostics {
    pub fn ratios(&self) -> [(&'static str, f64); 5] {
        [
            ("A+A", self.ratio_a_plus_a),
            ("B+B", self.ratio_b_plus_b),
            ("AxB", self.ratio_a_times_b),
            ("psi(A)+B", self.ratio_psi_a_plus_b),
            ("AxB+G(D)", self.ratio_sum),
        ]
    }
}

/// Constants that make μ̄ = μ/√c₁ and σ̄ = σ/c admissible.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Example13Normalization {
    /// Energy exponent used for c₁, strictly between 3s and τ.
    pub t: f64,
    pub c: f64,
    pub c1: f64,
}

fn lattice(step: f64, delta: f64, stride: u64) -> Vec<i64> {
    let mut out = vec![];
    let mut k = 1u64;
    loop {
        let x = (k * stride) as f64 * step;
        if x > 1.0 + 1e-12 {
            break;
        }
        out.push((x / delta).round() as i64);
        k += 1;
    }
    out.dedup();
    out
}

/// Builds the instance at δ = 2^{−level}. Only ψ(x) = x² is supported.
pub fn build_example13(spec: &CurveSpec, level: u32, tau: f64, s: f64, budget: u128) -> Result<Example13Instance> {
    if !spec.is_parabola() {
        return Err(LabError::Precondition("the construction is defined for the parabola only".into()));
    }
    if !((0.0..=0.5).contains(&s) && tau > 3.0 * s && tau <= 1.5) {
        return Err(LabError::Domain(format!("(tau, s) = ({tau}, {s}) outside 3s < tau <= 3/2, 0 <= s <= 1/2")));
    }
    let delta = dyadic_side(level);
    let a_step = delta.powf(tau / 3.0);
    if !(a_step < delta.powf(s)) || a_step <= 2.0 * delta {
        return Err(LabError::Domain(format!("delta = {delta} too coarse for the spacing {a_step}")));
    }
    let j = (delta.powf(s) / a_step).floor() as u64;
    let a_set = lattice(a_step, delta, 1);
    let b_set = lattice(a_step * a_step, delta, 1);
    let d_set = lattice(a_step, delta, j);
    if b_set.windows(2).any(|w| w[1] - w[0] < 2) {
        return Err(LabError::Domain(format!("delta = {delta} does not separate the points of B")));
    }

    // open neighbourhoods (p−δ, p+δ) with p on the grid are cells p−1 and p
    let cells_1d = |set: &[i64]| -> Vec<i64> { set.iter().flat_map(|&p| [p - 1, p]).collect() };
    let (ac, bc) = (cells_1d(&a_set), cells_1d(&b_set));
    let rect = CubeSet::new(level, ac.iter().flat_map(|&x| bc.iter().map(move |&y| (x, y))));
    let graph = graph_cells(&d_set, level);

    let mu = DeltaMeasure::normalized(level, rect.iter().map(|c| (c, 1.0)))?;
    let sigma = graph_measure(&d_set, level)?;

    let iv = |set: &[i64], r: f64| -> Vec<(f64, f64)> { set.iter().map(|&p| (p as f64 * delta - r, p as f64 * delta + r)).collect() };
    let sums = |x: &[(f64, f64)], y: &[(f64, f64)]| -> Vec<(f64, f64)> {
        x.iter().flat_map(|a| y.iter().map(move |b| (a.0 + b.0, a.1 + b.1))).collect()
    };
    let a_iv = iv(&a_set, delta);
    let b_iv = iv(&b_set, delta);
    let psi_a: Vec<(f64, f64)> = a_iv.iter().map(|&(lo, hi)| (lo.max(0.0).powi(2), hi * hi)).collect();
    let cover_a_plus_a = covering_number_intervals(&sums(&a_iv, &a_iv), delta)?;
    let cover_b_plus_b = covering_number_intervals(&sums(&b_iv, &b_iv), delta)?;
    let cover_psi_a_plus_b = covering_number_intervals(&sums(&psi_a, &b_iv), delta)?;
    let cover_a_times_b = rect.len();
    let cover_sum = minkowski_cover(&rect, &graph, delta, budget)?;
    let p = |e: f64| delta.powf(-e);
    let diagnostics = Example13Diagnostics {
        cover_a_plus_a,
        cover_b_plus_b,
        cover_a_times_b,
        cover_psi_a_plus_b,
        cover_sum,
        cover_graph_d: graph.len(),
        ratio_a_plus_a: cover_a_plus_a as f64 / p(tau / 3.0),
        ratio_b_plus_b: cover_b_plus_b as f64 / p(2.0 * tau / 3.0),
        ratio_a_times_b: cover_a_times_b as f64 / p(tau),
        ratio_psi_a_plus_b: cover_psi_a_plus_b as f64 / p(2.0 * tau / 3.0),
        ratio_sum: cover_sum as f64 / p(tau),
    };
    Ok(Example13Instance { level, delta, tau, s, a_set, b_set, d_set, j, mu, sigma, diagnostics })
}

/// Cells met by the graph of x² over the neighbourhoods (d − δ, d + δ).
fn graph_cells(d_set: &[i64], level: u32) -> CubeSet {
    let delta = dyadic_side(level);
    let mut cells = vec![];
    for &d in d_set {
        for ix in [d - 1, d] {
            let (x0, x1) = (ix as f64 * delta, (ix + 1) as f64 * delta);
            let (y0, y1) = (x0.max(0.0).powi(2), x1 * x1);
            let (j0, j1) = ((y0 / delta).floor() as i64, (y1 / delta).ceil() as i64 - 1);
            cells.extend((j0..=j1.max(j0)).map(|iy| (ix, iy)));
        }
    }
    CubeSet::new(level, cells)
}

/// Pushforward of normalized length on D(δ): a cell receives the length of
/// the x-interval whose image lands in it, found by inverting x².
fn graph_measure(d_set: &[i64], level: u32) -> Result<DeltaMeasure> {
    let delta = dyadic_side(level);
    let mut items = vec![];
    for &d in d_set {
        for ix in [d - 1, d] {
            let (x0, x1) = ((ix as f64 * delta).max(0.0), (ix + 1) as f64 * delta);
            let (j0, j1) = ((x0 * x0 / delta).floor() as i64, (x1 * x1 / delta).ceil() as i64 - 1);
            for iy in j0..=j1.max(j0) {
                let lo = ((iy as f64 * delta).max(0.0)).sqrt().max(x0);
                let hi = (((iy + 1) as f64) * delta).sqrt().min(x1);
                if hi > lo {
                    items.push(((ix, iy), hi - lo));
                }
            }
        }
    }
    DeltaMeasure::normalized(level, items)
}

impl Example13Instance {
    /// c = Frostman constant of σ at s; c₁ = I_t(μ) for t = (3s + τ)/2,
    /// computed for the cell-uniform measure.
    pub fn normalization(&self, budget: u128) -> Result<Example13Normalization> {
        let t = 0.5 * (3.0 * self.s + self.tau);
        let c = frostman_constant(&self.sigma, self.s)?.max(1.0);
        let c1 = riesz_energy_cells(&self.mu, t, budget)?.max(1.0);
        Ok(Example13Normalization { t, c, c1 })
    }

    /// (μ̄, σ̄) = (μ/√c₁, σ/c).
    pub fn normalized_measures(&self, norm: &Example13Normalization) -> Result<(DeltaMeasure, DeltaMeasure)> {
        Ok((self.mu.scaled(1.0 / norm.c1.sqrt())?, self.sigma.scaled(1.0 / norm.c)?))
    }

    /// Cells of A(δ) × B(δ).
    pub fn rectangle_cells(&self) -> CubeSet {
        self.mu.support()
    }
}

/// Self-similar Cantor measure of dimension s on the graph over [0, 1].
#[derive(Clone, Debug)]
pub struct CantorInstance {
    pub s: f64,
    pub ratio: f64,
    pub depth: u32,
    pub curve: CurveMeasure,
    pub grid: DeltaMeasure,
    /// Frostman constant of the unnormalized grid measure at exponent s.
    pub frostman: f64,
}

/// Two branches of ratio 2^{−1/s} iterated to the largest depth whose
/// intervals are no shorter than δ = 2^{−level}; atoms sit at interval
/// midpoints. If the measured Frostman constant exceeds 1 the measure is
/// divided by it.
pub fn cantor_measure_on_curve(spec: &CurveSpec, s: f64, level: u32) -> Result<CantorInstance> {
    if !(s > 0.0 && s < 1.0) {
        return Err(LabError::Domain(format!("dimension {s} outside (0, 1)")));
    }
    let ratio = 2f64.powf(-1.0 / s);
    let depth = (level as f64 * s).floor() as u32;
    if depth > 24 {
        return Err(LabError::Budget { needed: 1u128 << depth, budget: 1 << 24 });
    }
    let mut lefts = vec![0.0f64];
    let mut len = 1.0;
    for _ in 0..depth {
        let next_len = len * ratio;
        lefts = lefts.iter().flat_map(|&a| [a, a + len - next_len]).collect();
        len = next_len;
    }
    let w = 0.5f64.powi(depth as i32);
    let atoms: Vec<(f64, f64)> = lefts.iter().map(|&a| (a + 0.5 * len, w)).collect();
    let raw = CurveMeasure::pushforward(spec.clone(), atoms.clone())?.discretize(level)?;
    let frostman = frostman_constant(&raw, s)?;
    let scale = if frostman > 1.0 { 1.0 / frostman } else { 1.0 };
    let curve = CurveMeasure::pushforward(spec.clone(), atoms.into_iter().map(|(x, w)| (x, w * scale)).collect())?;
    let grid = raw.scaled(scale)?;
    Ok(CantorInstance { s, ratio, depth, curve, grid, frostman })
}

/// Window occupancy per level for incremental Katz-Tao checks.
struct WindowCounts {
    level: u32,
    counts: Vec<HashMap<(i64, i64), u64>>,
    caps: Vec<f64>,
}

impl WindowCounts {
    fn new(level: u32, t: f64, a: f64) -> Self {
        let caps = (0..=level).map(|j| a * 2f64.powf(t * (level - j) as f64) + 1e-9).collect();
        WindowCounts { level, counts: vec![HashMap::new(); level as usize + 1], caps }
    }

    fn admits(&self, c: (i64, i64)) -> bool {
        (0..=self.level).all(|j| {
            let sh = self.level - j;
            let key = (c.0 >> sh, c.1 >> sh);
            (self.counts[j as usize].get(&key).copied().unwrap_or(0) + 1) as f64 <= self.caps[j as usize]
        })
    }

    fn insert(&mut self, c: (i64, i64)) {
        for j in 0..=self.level {
            let sh = self.level - j;
            *self.counts[j as usize].entry((c.0 >> sh, c.1 >> sh)).or_insert(0) += 1;
        }
    }
}

/// Greedy rejection sampling of up to `target` distinct cells of the unit
/// grid with Katz-Tao constant at most A. Proposals stop after
/// 64·target + 1024 draws.
pub fn random_katz_tao(level: u32, t: f64, a: f64, seed: SeedTree, target: usize) -> Result<CubeSet> {
    if !(0.0..=2.0).contains(&t) {
        return Err(LabError::Domain(format!("exponent {t} outside [0, 2]")));
    }
    if !(a >= 1.0) {
        return Err(LabError::Sampling(format!("constant {a} below 1 admits no cube")));
    }
    if level > 30 {
        return Err(LabError::Domain(format!("level {level} too fine")));
    }
    let side = 1i64 << level;
    let mut rng = seed.rng();
    let mut wc = WindowCounts::new(level, t, a);
    let mut chosen = std::collections::HashSet::new();
    let attempts = 64 * target + 1024;
    for _ in 0..attempts {
        if chosen.len() >= target {
            break;
        }
        let c = (rng.gen_range(0..side), rng.gen_range(0..side));
        if chosen.contains(&c) || !wc.admits(c) {
            continue;
        }
        wc.insert(c);
        chosen.insert(c);
    }
    if chosen.is_empty() {
        return Err(LabError::Sampling("no cube accepted".into()));
    }
    Ok(CubeSet::new(level, chosen))
}

/// Greedy Katz-Tao subset of `candidates`, visited in a seeded random order.
pub fn katz_tao_subset(level: u32, t: f64, a: f64, candidates: &[(i64, i64)], seed: SeedTree, target: usize) -> Result<CubeSet> {
    if !(0.0..=2.0).contains(&t) || !(a >= 1.0) {
        return Err(LabError::Domain(format!("invalid Katz-Tao parameters t = {t}, A = {a}")));
    }
    let mut order = candidates.to_vec();
    order.shuffle(&mut seed.rng());
    let mut wc = WindowCounts::new(level, t, a);
    let mut chosen = Vec::new();
    for c in order {
        if chosen.len() >= target {
            break;
        }
        if wc.admits(c) {
            wc.insert(c);
            chosen.push(c);
        }
    }
    Ok(CubeSet::new(level, chosen))
}

/// Like [`random_katz_tao`] but proposals are drawn near a few random centres,
/// which makes the coarse-scale constraints bind.
pub fn clustered_katz_tao(level: u32, t: f64, a: f64, seed: SeedTree, target: usize, clusters: usize, spread: i64) -> Result<CubeSet> {
    if !(0.0..=2.0).contains(&t) || !(a >= 1.0) || clusters == 0 {
        return Err(LabError::Domain("invalid clustered sampling parameters".into()));
    }
    let side = 1i64 << level;
    let mut rng = seed.rng();
    let centres: Vec<(i64, i64)> = (0..clusters).map(|_| (rng.gen_range(0..side), rng.gen_range(0..side))).collect();
    let mut wc = WindowCounts::new(level, t, a);
    let mut chosen = std::collections::HashSet::new();
    for _ in 0..64 * target + 1024 {
        if chosen.len() >= target {
            break;
        }
        let (cx, cy) = centres[rng.gen_range(0..clusters)];
        let c = ((cx + rng.gen_range(-spread..=spread)).clamp(0, side - 1), (cy + rng.gen_range(-spread..=spread)).clamp(0, side - 1));
        if chosen.contains(&c) || !wc.admits(c) {
            continue;
        }
        wc.insert(c);
        chosen.insert(c);
    }
    if chosen.is_empty() {
        return Err(LabError::Sampling("no cube accepted".into()));
    }
    Ok(CubeSet::new(level, chosen))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic::minkowski_sum_cells;
    use crate::measures::katz_tao_constant;

    #[test]
    fn example13_sets_and_supports() {
        let spec = CurveSpec::parabola();
        let inst = build_example13(&spec, 10, 1.2, 0.3, u128::MAX).unwrap();
        let d = inst.delta;
        let a = d.powf(0.4);
        assert_eq!(inst.a_set.len(), (1.0 / a).floor() as usize);
        for (k, &p) in inst.a_set.iter().enumerate() {
            assert!(((k + 1) as f64 * a - p as f64 * d).abs() <= 0.5 * d + 1e-15);
        }
        assert!(inst.d_set.iter().all(|p| inst.a_set.contains(p)));
        assert!((inst.mu.mass() - 1.0).abs() < 1e-12 && (inst.sigma.mass() - 1.0).abs() < 1e-12);
        let rect = inst.rectangle_cells();
        assert_eq!(rect.len(), 4 * inst.a_set.len() * inst.b_set.len());
        for &(x, y) in inst.sigma.cells() {
            let (x0, x1) = (x as f64 * d, (x + 1) as f64 * d);
            assert!(inst.d_set.iter().any(|&p| (p - 1..=p).contains(&x)));
            assert!((y as f64 * d) < x1 * x1 && ((y + 1) as f64 * d) > x0 * x0);
        }
        let sum = minkowski_sum_cells(&rect, &inst.sigma.support(), u128::MAX).unwrap();
        assert!(sum.count() <= inst.diagnostics.cover_sum);
    }

    #[test]
    fn example13_covers_match_enumeration() {
        let inst = build_example13(&CurveSpec::parabola(), 12, 1.2, 0.3, u128::MAX).unwrap();
        // (p + p' − 2δ, p + p' + 2δ) meets the cells c − 2 ..= c + 1 with c = (p + p')/δ
        let mut cells = std::collections::BTreeSet::new();
        for &p in &inst.a_set {
            for &q in &inst.a_set {
                cells.extend(p + q - 2..=p + q + 1);
            }
        }
        assert_eq!(inst.diagnostics.cover_a_plus_a, cells.len());
        // 27 points, 53 sums of four or five cells each
        assert_eq!(inst.a_set.len(), 27);
        let r = inst.diagnostics.ratio_a_plus_a;
        assert!(r > 7.0 && r < 9.0, "{r}");
        let mut bb = std::collections::BTreeSet::new();
        for &p in &inst.b_set {
            for &q in &inst.b_set {
                bb.extend(p + q - 2..=p + q + 1);
            }
        }
        assert_eq!(inst.diagnostics.cover_b_plus_b, bb.len());
        assert!(inst.diagnostics.cover_sum >= inst.diagnostics.cover_a_times_b);
    }

    #[test]
    fn example13_normalized_sigma_is_frostman() {
        let inst = build_example13(&CurveSpec::parabola(), 9, 1.2, 0.3, u128::MAX).unwrap();
        let norm = inst.normalization(u128::MAX).unwrap();
        let (mu_bar, sigma_bar) = inst.normalized_measures(&norm).unwrap();
        assert!(frostman_constant(&sigma_bar, 0.3).unwrap() <= 1.0 + 1e-12);
        assert!(norm.t > 0.9 && norm.t < 1.2);
        let e = riesz_energy_cells(&mu_bar, norm.t, u128::MAX).unwrap();
        assert!(e <= 1.0 + 1e-9);
        let cmu = frostman_constant(&inst.mu, 1.2).unwrap();
        for t in [0.5, 0.9, 1.1] {
            assert!(frostman_constant(&inst.mu, t).unwrap() <= cmu);
        }
    }

    #[test]
    fn example13_rejects_bad_parameters() {
        let p = CurveSpec::parabola();
        assert!(build_example13(&p, 10, 0.8, 0.3, u128::MAX).is_err());
        assert!(build_example13(&p, 10, 1.6, 0.3, u128::MAX).is_err());
        assert!(build_example13(&CurveSpec::exponential(), 10, 1.2, 0.3, u128::MAX).is_err());
    }

    #[test]
    fn cantor_examples() {
        let spec = CurveSpec::parabola();
        let c = cantor_measure_on_curve(&spec, 0.5, 12).unwrap();
        assert_eq!(c.ratio, 0.25);
        assert_eq!(c.depth, 6);
        assert!(c.frostman < 4.0);
        let c7 = cantor_measure_on_curve(&spec, 0.7, 14).unwrap();
        assert!(c7.frostman <= 4.0, "{}", c7.frostman);
        assert!(frostman_constant(&c7.grid, 0.7).unwrap() <= 1.0 + 1e-12);
        // near s = 1 the measure is close to length on [0, 1]
        let c1 = cantor_measure_on_curve(&spec, 0.99, 12).unwrap();
        let eighths = c1.grid.support().coarsen(3).unwrap();
        let mut mass = [0.0; 8];
        for ((x, _), w) in c1.grid.iter() {
            mass[(x >> 9) as usize] += w;
        }
        assert_eq!(eighths.iter().map(|c| c.0).collect::<std::collections::BTreeSet<_>>().len(), 8);
        for m in mass {
            assert!((m / c1.grid.mass() - 0.125).abs() < 0.01, "{m}");
        }
    }

    #[test]
    fn random_katz_tao_examples() {
        let full = random_katz_tao(3, 2.0, 1.0, SeedTree(1), 64).unwrap();
        assert_eq!(full.len(), 64);
        let one = random_katz_tao(6, 0.0, 1.0, SeedTree(2), 10).unwrap();
        assert_eq!(one.len(), 1);
        let p = random_katz_tao(10, 1.0, 4.0, SeedTree(7), 400).unwrap();
        assert!(katz_tao_constant(&p, 1.0).unwrap() <= 4.0);
        assert_eq!(p, random_katz_tao(10, 1.0, 4.0, SeedTree(7), 400).unwrap());
        assert!(random_katz_tao(5, 1.0, 0.5, SeedTree(1), 5).is_err());
        let c = clustered_katz_tao(9, 0.7, 2.0, SeedTree(3), 300, 3, 20).unwrap();
        assert!(katz_tao_constant(&c, 0.7).unwrap() <= 2.0);
    }
}
