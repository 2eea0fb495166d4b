//! Cube–tube incidences, the incidence-bound checkers and pocket
//! regularization of over-concentrated cube families.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::curve::{tube_cube_intersects, Branch, CurveSpec, CurvedTube, GEO_TOL};
use crate::dyadic::{cubes_on_tube, CubeSet, DyadicCube};
use crate::error::{check_budget, LabError, Result};
use crate::fft::Fft2;
use crate::measures::{gamma, riesz_energy_cells, weighted_katz_tao_constant, DeltaMeasure, WeightedCubeSet};
use crate::numeric::{dyadic_side, next_pow2, pairwise_sum};

/// Default acceptance constant for bound ratios.
pub const C_ACCEPT: f64 = 100.0;

/// Tubes Γ_q(δ) around the translates of Γ by the centres of the cells q ∈ P.
#[derive(Clone, Debug, PartialEq)]
pub struct TubeFamily {
    params: CubeSet,
    weights: Vec<u64>,
    spec: CurveSpec,
}

impl TubeFamily {
    pub fn new(params: CubeSet, spec: CurveSpec) -> Self {
        let weights = vec![1; params.len()];
        TubeFamily { params, weights, spec }
    }

    pub fn with_weights(params: CubeSet, weights: Vec<u64>, spec: CurveSpec) -> Result<Self> {
        if weights.len() != params.len() || weights.iter().any(|&w| w == 0) {
            return Err(LabError::Domain("tube weights must be positive, one per parameter cube".into()));
        }
        Ok(TubeFamily { params, weights, spec })
    }

    pub fn params(&self) -> &CubeSet {
        &self.params
    }
    pub fn weights(&self) -> &[u64] {
        &self.weights
    }
    pub fn spec(&self) -> &CurveSpec {
        &self.spec
    }
    pub fn level(&self) -> u32 {
        self.params.level()
    }
    pub fn delta(&self) -> f64 {
        self.params.delta()
    }
    pub fn len(&self) -> usize {
        self.params.len()
    }
    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }
    pub fn total_weight(&self) -> u64 {
        self.weights.iter().sum()
    }
    pub fn center(&self, cell: (i64, i64)) -> [f64; 2] {
        DyadicCube { level: self.level(), ix: cell.0, iy: cell.1 }.midpoint()
    }
    pub fn tube(&self, cell: (i64, i64), branch: Branch) -> Result<CurvedTube<'_>> {
        CurvedTube::with_branch(&self.spec, self.center(cell), self.delta(), branch)
    }
    pub fn translate(&self, dx: i64, dy: i64) -> Self {
        TubeFamily { params: self.params.translate(dx, dy), ..self.clone() }
    }
}

type Template = Arc<Vec<(i64, i64)>>;

/// Cells met by the tube around the centre of cell (0, 0); the tube around
/// cell (i, j) meets exactly the shifted cells, since the geometric tests
/// only use coordinate differences, which are exact on the dyadic grid.
pub fn tube_template(spec: &CurveSpec, level: u32, branch: Branch) -> Result<Template> {
    static CACHE: OnceLock<Mutex<Vec<(CurveSpec, u32, Branch, Template)>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(Vec::new()));
    if let Some(t) = cache
        .lock()
        .expect("template cache poisoned")
        .iter()
        .find(|e| e.0 == *spec && e.1 == level && e.2 == branch)
    {
        return Ok(t.3.clone());
    }
    let d = dyadic_side(level);
    let tube = CurvedTube::with_branch(spec, [0.5 * d, 0.5 * d], d, branch)?;
    let cells: Template = Arc::new(cubes_on_tube(&tube, d)?.members().to_vec());
    let mut guard = cache.lock().expect("template cache poisoned");
    if guard.len() >= 48 {
        guard.remove(0);
    }
    guard.push((spec.clone(), level, branch, cells.clone()));
    Ok(cells)
}

/// Cells of F met by the tube of q (one branch).
pub fn tube_hits(f: &CubeSet, template: &[(i64, i64)], q: (i64, i64)) -> Vec<(i64, i64)> {
    template.iter().map(|&(x, y)| (x + q.0, y + q.1)).filter(|c| f.contains(*c)).collect()
}

/// Σ_q Σ_p w₁(q) w₂(p) 1{p ∩ Γ_q(δ) ≠ ∅}.
pub fn weighted_incidences(f: &WeightedCubeSet, t: &TubeFamily, budget: u128) -> Result<u128> {
    weighted_incidences_branch(f, t, Branch::Full, budget)
}

pub fn weighted_incidences_branch(f: &WeightedCubeSet, t: &TubeFamily, branch: Branch, budget: u128) -> Result<u128> {
    if f.level() != t.level() {
        return Err(LabError::Precondition("cube family and tube family at different levels".into()));
    }
    if f.is_empty() || t.is_empty() {
        return Ok(0);
    }
    let template = tube_template(t.spec(), t.level(), branch)?;
    check_budget(template.len() as u128 * t.len() as u128, budget)?;
    let lookup: HashMap<(i64, i64), u64> = f.iter().collect();
    let per_tube: Vec<u128> = t
        .params()
        .members()
        .par_iter()
        .zip(t.weights().par_iter())
        .map(|(&q, &w1)| {
            let s: u128 = template.iter().filter_map(|&(x, y)| lookup.get(&(x + q.0, y + q.1))).map(|&w| w as u128).sum();
            w1 as u128 * s
        })
        .collect();
    Ok(per_tube.iter().sum())
}

/// Double loop over all pairs with the exact cube–tube predicate.
pub fn weighted_incidences_brute(f: &WeightedCubeSet, t: &TubeFamily) -> Result<u128> {
    let mut total = 0u128;
    for (&q, &w1) in t.params().members().iter().zip(t.weights()) {
        let tube = t.tube(q, Branch::Full)?;
        for ((x, y), w2) in f.iter() {
            if tube_cube_intersects(&tube, &DyadicCube { level: f.level(), ix: x, iy: y }) {
                total += w1 as u128 * w2 as u128;
            }
        }
    }
    Ok(total)
}

/// Offsets d (in cells) with the midpoint of q + d inside the closed tube of q.
pub fn midpoint_template(spec: &CurveSpec, level: u32) -> Vec<(i64, i64)> {
    let d = dyadic_side(level);
    let e = d * (1.0 + GEO_TOL);
    let reach = (1.0 / d).ceil() as i64 + 1;
    let mut out = vec![];
    for dx in -reach..=reach {
        let a = dx as f64 * d;
        let (lo, hi) = ((a - e).max(-1.0), (a + e).min(1.0));
        if lo > hi {
            continue;
        }
        let (pl, ph) = spec.range_on(lo, hi);
        let (r0, r1) = (((pl - e) / d).floor() as i64, ((ph + e) / d).ceil() as i64);
        for dy in r0..=r1 {
            if spec.local_distance(lo, hi, a, dy as f64 * d) <= e {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Σ_{q,p} ν(q) μ(p) 1{mid(p) ∈ Γ_{mid(q)}(δ)}; quadrature error O(δ·Lip)
/// relative to the product-measure integral.
pub fn delta_incidences(mu: &DeltaMeasure, nu: &DeltaMeasure, delta: f64, spec: &CurveSpec) -> Result<f64> {
    if mu.level() != nu.level() || dyadic_side(mu.level()) != delta {
        return Err(LabError::Precondition("measures must sit on the grid of width delta".into()));
    }
    if mu.is_empty() || nu.is_empty() {
        return Ok(0.0);
    }
    let template = midpoint_template(spec, mu.level());
    if (nu.len() as u128) * (template.len() as u128) <= 4_000_000 {
        let terms: Vec<f64> = nu
            .iter()
            .map(|((qx, qy), w)| w * template.iter().map(|&(dx, dy)| mu.get((qx + dx, qy + dy))).sum::<f64>())
            .collect();
        return Ok(pairwise_sum(&terms));
    }
    // correlation C(d) = Σ_q ν(q) μ(q + d) on a padded grid
    let (mx0, mx1, my0, my1) = mu.bbox().expect("non-empty");
    let (nx0, nx1, ny0, ny1) = nu.bbox().expect("non-empty");
    let (wm, hm) = ((mx1 - mx0 + 1) as usize, (my1 - my0 + 1) as usize);
    let (wn, hn) = ((nx1 - nx0 + 1) as usize, (ny1 - ny0 + 1) as usize);
    let (sw, sh) = (next_pow2(wm + wn), next_pow2(hm + hn));
    if (sw * sh) as u128 > 1 << 26 {
        return Err(LabError::Budget { needed: (sw * sh) as u128, budget: 1 << 26 });
    }
    let mut a = vec![Complex64::new(0.0, 0.0); sw * sh];
    let mut b = a.clone();
    for ((x, y), w) in mu.iter() {
        a[(y - my0) as usize * sw + (x - mx0) as usize].re = w;
    }
    for ((x, y), w) in nu.iter() {
        b[(y - ny0) as usize * sw + (x - nx0) as usize].re = w;
    }
    let fft = Fft2::new(sh, sw);
    fft.forward(&mut a);
    fft.forward(&mut b);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y.conj();
    }
    fft.inverse(&mut a);
    let scale = 1.0 / (sw * sh) as f64;
    let (ox, oy) = (mx0 - nx0, my0 - ny0);
    let mut acc = vec![];
    for &(dx, dy) in &template {
        // array index k = d − (m0 − n0), valid for −wn < k < wm
        let (kx, ky) = (dx - ox, dy - oy);
        if kx <= -(wn as i64) || kx >= wm as i64 || ky <= -(hn as i64) || ky >= hm as i64 {
            continue;
        }
        let (ix, iy) = (kx.rem_euclid(sw as i64) as usize, ky.rem_euclid(sh as i64) as usize);
        acc.push(a[iy * sw + ix].re * scale);
    }
    Ok(pairwise_sum(&acc))
}

/// Outcome of one envelope check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundReport {
    pub s: f64,
    pub t: f64,
    pub delta: f64,
    pub a: f64,
    pub b: f64,
    pub size_p: f64,
    pub size_f: f64,
    pub measured: f64,
    pub envelope: f64,
    pub ratio: f64,
    pub pass: bool,
}

impl BoundReport {
    pub const CSV_HEADER: &'static str = "s,t,delta,A,B,sizeP,sizeF,measured,envelope,ratio,verdict";

    #[allow(clippy::too_many_arguments)]
    fn new(s: f64, t: f64, delta: f64, a: f64, b: f64, size_p: f64, size_f: f64, measured: f64, envelope: f64, c_accept: f64) -> Self {
        let ratio = if envelope > 0.0 { measured / envelope } else if measured == 0.0 { 0.0 } else { f64::INFINITY };
        BoundReport { s, t, delta, a, b, size_p, size_f, measured, envelope, ratio, pass: ratio <= c_accept }
    }

    pub fn verdict(&self) -> &'static str {
        if self.pass {
            "PASS"
        } else {
            "FAIL"
        }
    }
}

impl fmt::Display for BoundReport {
    /// One CSV row in the order of [`BoundReport::CSV_HEADER`].
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{:e},{},{},{},{},{},{},{},{}",
            self.s, self.t, self.delta, self.a, self.b, self.size_p, self.size_f, self.measured, self.envelope, self.ratio,
            self.verdict()
        )
    }
}

/// Exponents and constants shared by the cube-family checkers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoundParams {
    pub s: f64,
    pub t: f64,
    pub a: f64,
    pub b: f64,
    pub c_accept: f64,
}

struct FamilyStats {
    delta: f64,
    size_p: usize,
    size_f: usize,
    incidences: usize,
}

fn family_stats(p: &CubeSet, fq: &[CubeSet], spec: &CurveSpec) -> Result<FamilyStats> {
    if fq.len() != p.len() {
        return Err(LabError::Precondition(format!("{} fibres for {} tubes", fq.len(), p.len())));
    }
    let level = p.level();
    let delta = p.delta();
    let mut union = HashSet::new();
    let mut incidences = 0;
    for (&q, f) in p.members().iter().zip(fq) {
        if f.is_empty() {
            continue;
        }
        if f.level() != level {
            return Err(LabError::Precondition("fibre at a different level".into()));
        }
        let tube = CurvedTube::new(spec, DyadicCube { level, ix: q.0, iy: q.1 }.midpoint(), delta)?;
        for c in f.cubes() {
            if !tube_cube_intersects(&tube, &c) {
                return Err(LabError::Precondition(format!("cube ({}, {}) is off the tube of ({}, {})", c.ix, c.iy, q.0, q.1)));
            }
        }
        incidences += f.len();
        union.extend(f.iter());
    }
    Ok(FamilyStats { delta, size_p: p.len(), size_f: union.len(), incidences })
}

/// Σ_q |F(q)| against √(δ⁻¹ A B |F| |P|).
pub fn check_bound_main(p: &CubeSet, fq: &[CubeSet], spec: &CurveSpec, bp: &BoundParams) -> Result<BoundReport> {
    if !(bp.s + bp.t < 2.0) {
        return Err(LabError::Precondition(format!("s + t = {} is not below 2", bp.s + bp.t)));
    }
    let st = family_stats(p, fq, spec)?;
    let env = (bp.a * bp.b * st.size_f as f64 * st.size_p as f64 / st.delta).sqrt();
    Ok(report(bp, &st, env))
}

/// Σ_q |F(q)| against √(δ^{−γ(s,t)−ε} A B |F| |P|).
pub fn check_bound_gamma(p: &CubeSet, fq: &[CubeSet], spec: &CurveSpec, bp: &BoundParams, epsilon: f64) -> Result<BoundReport> {
    let g = gamma(bp.s, bp.t)?;
    if !(0.0..1.0).contains(&epsilon) {
        return Err(LabError::Domain(format!("epsilon {epsilon} outside [0, 1)")));
    }
    let st = family_stats(p, fq, spec)?;
    let env = (st.delta.powf(-g - epsilon) * bp.a * bp.b * st.size_f as f64 * st.size_p as f64).sqrt();
    Ok(report(bp, &st, env))
}

/// Σ_q |F(q)| against log₂(1/δ) √(A B δ^{−s} |P| |F|), for t ≤ s.
pub fn check_bound_easy(p: &CubeSet, fq: &[CubeSet], spec: &CurveSpec, bp: &BoundParams) -> Result<BoundReport> {
    if bp.t > bp.s {
        return Err(LabError::Precondition(format!("t = {} exceeds s = {}", bp.t, bp.s)));
    }
    let st = family_stats(p, fq, spec)?;
    let env = (1.0 / st.delta).log2() * (bp.a * bp.b * st.delta.powf(-bp.s) * st.size_p as f64 * st.size_f as f64).sqrt();
    Ok(report(bp, &st, env))
}

fn report(bp: &BoundParams, st: &FamilyStats, env: f64) -> BoundReport {
    BoundReport::new(bp.s, bp.t, st.delta, bp.a, bp.b, st.size_p as f64, st.size_f as f64, st.incidences as f64, env, bp.c_accept)
}

/// I_w(F, T) against √(δ⁻¹ A B Σw₁ Σw₂).
pub fn check_bound_weighted(f: &WeightedCubeSet, t: &TubeFamily, bp: &BoundParams, budget: u128) -> Result<BoundReport> {
    if !(bp.s + bp.t < 3.0) {
        return Err(LabError::Precondition(format!("s + t = {} is not below 3", bp.s + bp.t)));
    }
    let measured = weighted_incidences(f, t, budget)? as f64;
    let (w1, w2) = (t.total_weight() as f64, f.total_weight() as f64);
    let env = (bp.a * bp.b * w1 * w2 / t.delta()).sqrt();
    Ok(BoundReport::new(bp.s, bp.t, t.delta(), bp.a, bp.b, w1, w2, measured, env, bp.c_accept))
}

/// I_δ(μ, ν) against δ √(I_{3−t}(μ) I_t(ν)), energies of the cell-uniform measures.
pub fn check_bound_measures(mu: &DeltaMeasure, nu: &DeltaMeasure, t: f64, delta: f64, spec: &CurveSpec, c_accept: f64, budget: u128) -> Result<BoundReport> {
    if !(t > 1.0 && t < 2.0) {
        return Err(LabError::Precondition(format!("t = {t} outside (1, 2)")));
    }
    let measured = delta_incidences(mu, nu, delta, spec)?;
    let e_mu = riesz_energy_cells(mu, 3.0 - t, budget)?;
    let e_nu = riesz_energy_cells(nu, t, budget)?;
    let env = delta * (e_mu * e_nu).sqrt();
    Ok(BoundReport::new(f64::NAN, t, delta, e_mu, e_nu, nu.len() as f64, mu.len() as f64, measured, env, c_accept))
}

/// Distance from x to the two-branch Cantor set of ratio r on [a, a + len].
fn cantor_distance(x: f64, a: f64, len: f64, r: f64, floor: f64) -> f64 {
    let b = a + len;
    let outside = if x < a { a - x } else if x > b { x - b } else { 0.0 };
    if len <= floor || r >= 0.5 {
        return outside;
    }
    let child = len * r;
    let left = cantor_distance(x, a, child, r, floor);
    if left == 0.0 {
        return 0.0;
    }
    left.min(cantor_distance(x, b - child, child, r, floor))
}

/// Pocket ℱ_ω ⊂ [0, ω]²: cells whose upper-right vertex (mδ, nδ),
/// 1 ≤ m, n ≤ ω/δ, has mδ or nδ within δ of the Cantor set of dimension s
/// on [0, ω]. Returned at level log₂(1/δ) with lower-left cell (0, 0).
pub fn cantor_pocket(omega: f64, delta: f64, s: f64) -> Result<CubeSet> {
    let level = crate::dyadic::level_of(delta)?;
    crate::dyadic::level_of(omega)?;
    if !(s > 0.0 && s <= 1.0) {
        return Err(LabError::Domain(format!("dimension {s} outside (0, 1]")));
    }
    if !(omega <= 1.0 && omega >= delta) {
        return Err(LabError::Domain(format!("width {omega} outside [delta, 1]")));
    }
    let n = (omega / delta).round() as i64;
    if n < 2 {
        return Err(LabError::Degenerate(format!("omega/delta = {n} is below 2")));
    }
    let marked = pocket_marks(n, delta, s);
    let mut cells = vec![];
    for m in 1..=n {
        for k in 1..=n {
            if marked[(m - 1) as usize] || marked[(k - 1) as usize] {
                cells.push((m - 1, k - 1));
            }
        }
    }
    Ok(CubeSet::new(level, cells))
}

/// marks[m − 1] = (mδ within δ of the Cantor set on [0, nδ]).
fn pocket_marks(n: i64, delta: f64, s: f64) -> Vec<bool> {
    let r = 2f64.powf(-1.0 / s);
    let omega = n as f64 * delta;
    (1..=n).map(|m| cantor_distance(m as f64 * delta, 0.0, omega, r, 1e-3 * delta) <= delta * (1.0 + 1e-12)).collect()
}

/// |{m : mδ ∈ 𝒞(δ) ∩ [0, d]}| for each d = δ·2^i up to ω.
pub fn pocket_column_counts(omega: f64, delta: f64, s: f64) -> Result<Vec<(f64, usize)>> {
    let n = (omega / delta).round() as i64;
    if n < 2 {
        return Err(LabError::Degenerate(format!("omega/delta = {n} is below 2")));
    }
    let marks = pocket_marks(n, delta, s);
    let mut out = vec![];
    let mut d = 1i64;
    while d <= n {
        out.push((d as f64 * delta, marks[..d as usize].iter().filter(|&&b| b).count()));
        d *= 2;
    }
    Ok(out)
}

/// Per-branch incidence dominance Σ_q |F_b(q)| ≤ c · I_w^b(F′, T).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BranchDominance {
    pub branch: String,
    pub fibres: u128,
    pub weighted_incidences: u128,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegularizeReport {
    pub size_f: usize,
    pub parity_class: (i64, i64),
    pub class_size: usize,
    pub shift: (i64, i64),
    /// Maximal over-concentrated cubes as (level, ix, iy).
    pub replaced: Vec<(u32, i64, i64)>,
    pub total_weight: u64,
    /// Σw / |F|.
    pub c_p1: f64,
    /// weighted Katz-Tao constant at s + 1, divided by B.
    pub c_p2: f64,
    pub dominance: Vec<BranchDominance>,
    /// A second pass over the output replaces nothing new.
    pub fixed_point: bool,
}

impl RegularizeReport {
    pub fn worst_dominance(&self) -> f64 {
        self.dominance.iter().map(|d| d.ratio).fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug)]
pub struct Regularized {
    pub cubes: WeightedCubeSet,
    /// The tube family in the shifted frame of `cubes`.
    pub tubes: TubeFamily,
    pub report: RegularizeReport,
}

/// Replace over-concentrated pockets of F by weighted Cantor pockets.
/// F keeps its most incident parity class (by upper-right vertex), shifted
/// down by at most one cell so the vertices are odd; cubes Q of side ω ≥ 2δ holding at least
/// B(ω/δ)^{1+s} cells are found coarse to fine, the maximal ones receive a
/// pocket at their lower-left corner with weight B, and the other cells
/// keep weight 1. Fibres default to F ∩ tube(q).
pub fn regularize_pockets(f: &CubeSet, t: &TubeFamily, s: f64, b: f64, budget: u128) -> Result<Regularized> {
    regularize_pockets_with_fibres(f, t, None, s, b, budget)
}

/// As [`regularize_pockets`], with explicit fibres F(q) ⊂ F ∩ tube(q), one per
/// tube in parameter order. Parity selection and dominance count fibre cells.
pub fn regularize_pockets_with_fibres(
    f: &CubeSet,
    t: &TubeFamily,
    fibres: Option<&[CubeSet]>,
    s: f64,
    b: f64,
    budget: u128,
) -> Result<Regularized> {
    if !(b >= 1.0) {
        return Err(LabError::Domain(format!("B = {b} below 1")));
    }
    if !(s > 0.0 && s <= 1.0) {
        return Err(LabError::Domain(format!("s = {s} outside (0, 1]")));
    }
    if f.level() != t.level() {
        return Err(LabError::Precondition("cube family and tube family at different levels".into()));
    }
    let level = f.level();
    let full = tube_template(t.spec(), level, Branch::Full)?;
    check_budget(full.len() as u128 * t.len() as u128, budget)?;
    if let Some(fs) = fibres {
        if fs.len() != t.len() {
            return Err(LabError::Precondition(format!("{} fibres for {} tubes", fs.len(), t.len())));
        }
        for (fq, &q) in fs.iter().zip(t.params().members()) {
            let on_tube = CubeSet::new(level, tube_hits(f, &full, q));
            if fq.level() != level || fq.iter().any(|c| !on_tube.contains(c)) {
                return Err(LabError::Precondition(format!("fibre of tube {q:?} leaves F ∩ tube")));
            }
        }
    }
    let hits = |i: usize, tmpl: &[(i64, i64)], q: (i64, i64)| match fibres {
        Some(fs) => tube_hits(&fs[i], tmpl, q),
        None => tube_hits(f, tmpl, q),
    };
    // incidences of each parity class
    let mut class_inc: BTreeMap<(i64, i64), (u128, usize)> = BTreeMap::new();
    for (i, &q) in t.params().members().iter().enumerate() {
        for c in hits(i, &full, q) {
            class_inc.entry(vertex_parity(c)).or_default().0 += 1;
        }
    }
    for c in f.iter() {
        class_inc.entry(vertex_parity(c)).or_default().1 += 1;
    }
    let best = class_inc.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|e| *e.0).unwrap_or((1, 1));
    let shift = (best.0 - 1, best.1 - 1);
    let class = CubeSet::new(level, f.iter().filter(|&c| vertex_parity(c) == best).map(|(x, y)| (x + shift.0, y + shift.1)));
    let tubes = t.translate(shift.0, shift.1);

    let (cubes, replaced) = replace_pockets(&class, s, b)?;
    // a second pass may only re-place pockets inside cubes replaced the first time
    let (_, again) = replace_pockets(cubes.base(), s, b)?;
    let fixed_point = again
        .iter()
        .all(|&(j, x, y)| replaced.iter().any(|&(i, px, py)| i <= j && (x >> (j - i), y >> (j - i)) == (px, py)));

    let total_weight = cubes.total_weight();
    let c_p1 = if f.is_empty() { 0.0 } else { total_weight as f64 / f.len() as f64 };
    let c_p2 = if cubes.is_empty() { 0.0 } else { weighted_katz_tao_constant(&cubes, s + 1.0)? / b };

    let mut dominance = vec![];
    for branch in [Branch::Decreasing, Branch::Increasing] {
        let tmpl = tube_template(t.spec(), level, branch)?;
        let fibres: u128 = t.params().members().iter().enumerate().map(|(i, &q)| hits(i, &tmpl, q).len() as u128).sum();
        let inc = weighted_incidences_branch(&cubes, &tubes, branch, budget)?;
        let ratio = if fibres == 0 { 0.0 } else if inc == 0 { f64::INFINITY } else { fibres as f64 / inc as f64 };
        dominance.push(BranchDominance { branch: format!("{branch:?}").to_lowercase(), fibres, weighted_incidences: inc, ratio });
    }
    let report = RegularizeReport {
        size_f: f.len(),
        parity_class: best,
        class_size: class.len(),
        shift,
        replaced,
        total_weight,
        c_p1,
        c_p2,
        dominance,
        fixed_point,
    };
    Ok(Regularized { cubes, tubes, report })
}

/// Parity of the upper-right vertex (ix + 1, iy + 1).
fn vertex_parity(c: (i64, i64)) -> (i64, i64) {
    ((c.0 + 1).rem_euclid(2), (c.1 + 1).rem_euclid(2))
}

fn replace_pockets(f: &CubeSet, s: f64, b: f64) -> Result<(WeightedCubeSet, Vec<(u32, i64, i64)>)> {
    let level = f.level();
    let mut accepted: Vec<(u32, i64, i64)> = vec![];
    let mut accepted_set: HashSet<(u32, i64, i64)> = HashSet::new();
    // levels j with ω = 2^{−j} ≥ 2δ; a single cell can never exceed B ≥ 1 cells strictly
    for j in 0..level {
        let shift = level - j;
        let omega_cells = (1i64 << shift) as f64;
        let threshold = b * omega_cells.powf(1.0 + s);
        let mut counts: BTreeMap<(i64, i64), usize> = BTreeMap::new();
        for (x, y) in f.iter() {
            *counts.entry((x >> shift, y >> shift)).or_default() += 1;
        }
        for (&(cx, cy), &n) in &counts {
            if (n as f64) < threshold {
                continue;
            }
            let has_ancestor = (0..j).any(|i| {
                let up = j - i;
                accepted_set.contains(&(i, cx >> up, cy >> up))
            });
            if !has_ancestor {
                accepted.push((j, cx, cy));
                accepted_set.insert((j, cx, cy));
            }
        }
    }
    let covered = |c: (i64, i64)| accepted.iter().any(|&(j, x, y)| (c.0 >> (level - j), c.1 >> (level - j)) == (x, y));
    let bw = b.round().max(1.0) as u64;
    let mut items: Vec<((i64, i64), u64)> = f.iter().filter(|&c| !covered(c)).map(|c| (c, 1)).collect();
    for &(j, x, y) in &accepted {
        let pocket = cantor_pocket(dyadic_side(j), dyadic_side(level), s)?;
        let side = 1i64 << (level - j);
        items.extend(pocket.iter().map(|(px, py)| ((x * side + px, y * side + py), bw)));
    }
    Ok((WeightedCubeSet::new(level, items)?, accepted))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constructions::random_katz_tao;
    use crate::measures::katz_tao_constant;
    use crate::seed::SeedTree;
    use rand::{Rng, SeedableRng};

    #[test]
    fn single_pair_weights() {
        let spec = CurveSpec::parabola();
        let t = TubeFamily::with_weights(CubeSet::new(6, vec![(10, 10)]), vec![2], spec.clone()).unwrap();
        let tmpl = tube_template(&spec, 6, Branch::Full).unwrap();
        let hit = (tmpl[0].0 + 10, tmpl[0].1 + 10);
        let f = WeightedCubeSet::new(6, vec![(hit, 3)]).unwrap();
        assert_eq!(weighted_incidences(&f, &t, u128::MAX).unwrap(), 6);
        let far = WeightedCubeSet::new(6, vec![((500, 500), 3)]).unwrap();
        assert_eq!(weighted_incidences(&far, &t, u128::MAX).unwrap(), 0);
    }

    #[test]
    fn template_shift_matches_direct_tubes() {
        let spec = CurveSpec::exponential();
        let level = 7;
        let tmpl = tube_template(&spec, level, Branch::Full).unwrap();
        for q in [(0, 0), (5, 77), (127, 3), (64, 64)] {
            let c = DyadicCube { level, ix: q.0, iy: q.1 }.midpoint();
            let d = dyadic_side(level);
            let direct = cubes_on_tube(&CurvedTube::new(&spec, c, d).unwrap(), d).unwrap();
            let shifted = CubeSet::new(level, tmpl.iter().map(|&(x, y)| (x + q.0, y + q.1)));
            assert_eq!(direct, shifted);
        }
    }

    #[test]
    fn weighted_incidences_match_brute_force() {
        let spec = CurveSpec::parabola();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let level = 6;
        let params = CubeSet::new(level, (0..100).map(|_| (rng.gen_range(0..64), rng.gen_range(0..64))));
        let weights: Vec<u64> = (0..params.len()).map(|_| rng.gen_range(1..4)).collect();
        let t = TubeFamily::with_weights(params, weights, spec).unwrap();
        let f = WeightedCubeSet::new(level, (0..3000).map(|_| ((rng.gen_range(-64..128), rng.gen_range(-16..128)), rng.gen_range(1..5)))).unwrap();
        assert_eq!(weighted_incidences(&f, &t, u128::MAX).unwrap(), weighted_incidences_brute(&f, &t).unwrap());
    }

    #[test]
    fn delta_incidences_examples() {
        let spec = CurveSpec::parabola();
        let level = 8;
        let d = dyadic_side(level);
        let nu = DeltaMeasure::new(level, vec![((0, 0), 1.0)]).unwrap();
        let on = DeltaMeasure::new(level, vec![((16, 0), 0.5)]).unwrap();
        // (16δ, 0) is 16δ right of the centre; x² = 0.0039 < δ away → mid(p) − mid(q) = (16δ, 0), ψ(16δ) = δ
        assert_eq!(delta_incidences(&on, &nu, d, &spec).unwrap(), 0.5);
        let off = DeltaMeasure::new(level, vec![((0, 40), 0.5)]).unwrap();
        assert_eq!(delta_incidences(&off, &nu, d, &spec).unwrap(), 0.0);
        // uniform on [0,1]²: the tube covers the right half of the arc
        let uni = DeltaMeasure::uniform(&CubeSet::full_unit_grid(level)).unwrap();
        let v = delta_incidences(&uni, &nu, d, &spec).unwrap();
        let half_arc = (5f64.sqrt() + 2f64.asinh() / 2.0) / 2.0;
        assert!((v - half_arc * 2.0 * d).abs() < 0.1 * half_arc * 2.0 * d, "{v}");
        // uniform on [−1,1]² holds the whole arc at a quarter of the density
        let big = DeltaMeasure::uniform(&CubeSet::new(level, (-256..256).flat_map(|x| (-256..256).map(move |y| (x, y))))).unwrap();
        let w = delta_incidences(&big, &nu, d, &spec).unwrap();
        assert!((w - 2.0 * half_arc * 2.0 * d / 4.0).abs() < 0.1 * w, "{w}");
    }

    #[test]
    fn delta_incidences_fft_route_and_bilinearity() {
        let spec = CurveSpec::parabola();
        let level = 7;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mu = DeltaMeasure::normalized(level, (0..6000).map(|_| ((rng.gen_range(0..128), rng.gen_range(0..128)), rng.gen::<f64>()))).unwrap();
        let nu = DeltaMeasure::normalized(level, (0..9000).map(|_| ((rng.gen_range(0..128), rng.gen_range(0..128)), rng.gen::<f64>()))).unwrap();
        let d = dyadic_side(level);
        let fast = delta_incidences(&mu, &nu, d, &spec).unwrap();
        let tmpl = midpoint_template(&spec, level);
        assert!(nu.len() * tmpl.len() > 4_000_000);
        let slow: f64 = nu.iter().map(|((x, y), w)| w * tmpl.iter().map(|&(a, b)| mu.get((x + a, y + b))).sum::<f64>()).sum();
        assert!((fast - slow).abs() < 1e-10 * slow);
        let half = mu.scaled(0.5).unwrap();
        let h = delta_incidences(&half, &nu, d, &spec).unwrap();
        assert!((2.0 * h - fast).abs() < 1e-12 * fast);
    }

    fn on_tube_fibres(p: &CubeSet, spec: &CurveSpec, keep: usize) -> Vec<CubeSet> {
        let tmpl = tube_template(spec, p.level(), Branch::Full).unwrap();
        p.iter().map(|q| CubeSet::new(p.level(), tmpl.iter().take(keep).map(|&(x, y)| (x + q.0, y + q.1)))).collect()
    }

    #[test]
    fn main_check_formula() {
        let spec = CurveSpec::parabola();
        let p = CubeSet::new(8, vec![(100, 100)]);
        let fq = on_tube_fibres(&p, &spec, 37);
        let bp = BoundParams { s: 0.5, t: 0.7, a: 1.0, b: 2.0, c_accept: C_ACCEPT };
        let r = check_bound_main(&p, &fq, &spec, &bp).unwrap();
        assert_eq!(r.measured, 37.0);
        assert!((r.envelope - (256.0 * 2.0 * 37.0f64).sqrt()).abs() < 1e-9);
        assert_eq!(r.ratio, r.measured / r.envelope);
        let empty = check_bound_main(&CubeSet::empty(8), &[], &spec, &bp).unwrap();
        assert!(empty.pass && empty.measured == 0.0);
        let bad = vec![CubeSet::new(8, vec![(0, 250)])];
        assert!(matches!(check_bound_main(&p, &bad, &spec, &bp), Err(LabError::Precondition(_))));
        assert!(r.to_string().split(',').count() == BoundReport::CSV_HEADER.split(',').count());
    }

    #[test]
    fn gamma_and_easy_checks() {
        let spec = CurveSpec::parabola();
        let p = CubeSet::new(8, vec![(10, 10), (200, 30)]);
        let fq = on_tube_fibres(&p, &spec, 20);
        let a = BoundParams { s: 0.8, t: 0.5, a: 1.0, b: 1.0, c_accept: C_ACCEPT };
        let r = check_bound_gamma(&p, &fq, &spec, &a, 0.0).unwrap();
        assert!((r.envelope - (256f64.powf(0.8) * r.size_f * 2.0).sqrt()).abs() < 1e-9);
        let b = BoundParams { s: 0.5, t: 1.4, ..a };
        let r = check_bound_gamma(&p, &fq, &spec, &b, 0.0).unwrap();
        assert!((r.envelope - (256.0 * r.size_f * 2.0).sqrt()).abs() < 1e-9);
        let eq = BoundParams { s: 0.5, t: 0.5, ..a };
        assert!(check_bound_easy(&p, &fq, &spec, &eq).is_ok());
        let bad = BoundParams { s: 0.5, t: 0.6, ..a };
        assert!(check_bound_easy(&p, &fq, &spec, &bad).is_err());
    }

    #[test]
    fn easy_check_diagonal_instance() {
        // tubes far apart, each with its own cubes: measured = |F|
        let spec = CurveSpec::parabola();
        let level = 8;
        let p = random_katz_tao(level, 0.5, 1.0, SeedTree(4), 12).unwrap();
        let fq: Vec<CubeSet> = on_tube_fibres(&p, &spec, 1);
        let b = fq.iter().map(|f| katz_tao_constant(f, 0.5).unwrap()).fold(1.0, f64::max);
        let a = katz_tao_constant(&p, 0.5).unwrap();
        let bp = BoundParams { s: 0.5, t: 0.5, a, b, c_accept: C_ACCEPT };
        let r = check_bound_easy(&p, &fq, &spec, &bp).unwrap();
        assert_eq!(r.measured, r.size_f);
        assert!(r.envelope >= r.size_f);
    }

    #[test]
    fn weighted_check_wiring() {
        let spec = CurveSpec::parabola();
        let level = 6;
        let p = CubeSet::new(level, vec![(3, 3), (30, 9), (50, 40)]);
        let t = TubeFamily::new(p, spec.clone());
        let tmpl = tube_template(&spec, level, Branch::Full).unwrap();
        let f1 = WeightedCubeSet::new(level, tmpl.iter().step_by(7).map(|&(x, y)| ((x + 3, y + 3), 1))).unwrap();
        let f2 = WeightedCubeSet::new(level, f1.iter().map(|(c, w)| (c, 2 * w))).unwrap();
        let bp = BoundParams { s: 1.5, t: 1.0, a: 1.0, b: 1.0, c_accept: C_ACCEPT };
        let r1 = check_bound_weighted(&f1, &t, &bp, u128::MAX).unwrap();
        let r2 = check_bound_weighted(&f2, &t, &bp, u128::MAX).unwrap();
        assert_eq!(r2.measured, 2.0 * r1.measured);
        assert!((r2.ratio / r1.ratio - 2f64.sqrt()).abs() < 1e-12);
        let fq: Vec<CubeSet> = t.params().iter().map(|q| CubeSet::new(level, tube_hits(f1.base(), &tmpl, q))).collect();
        let plain = check_bound_main(t.params(), &fq, &spec, &BoundParams { s: 0.5, t: 1.0, ..bp }).unwrap();
        assert_eq!(plain.measured, r1.measured);
        assert!(r1.envelope >= plain.envelope);
    }

    #[test]
    fn measures_check_examples() {
        let spec = CurveSpec::parabola();
        let level = 6;
        let d = dyadic_side(level);
        let far = DeltaMeasure::new(level, vec![((0, 60), 1.0)]).unwrap();
        let pt = DeltaMeasure::new(level, vec![((0, 0), 1.0)]).unwrap();
        let r = check_bound_measures(&far, &pt, 1.5, d, &spec, C_ACCEPT, u128::MAX).unwrap();
        assert!(r.pass && r.measured == 0.0);
        let uni = DeltaMeasure::uniform(&CubeSet::full_unit_grid(level)).unwrap();
        let r1 = check_bound_measures(&uni, &uni, 1.5, d, &spec, C_ACCEPT, u128::MAX).unwrap();
        let r2 = check_bound_measures(&uni.scaled(0.5).unwrap(), &uni, 1.5, d, &spec, C_ACCEPT, u128::MAX).unwrap();
        assert!((r2.measured - 0.5 * r1.measured).abs() < 1e-12);
        assert!((r2.ratio - r1.ratio).abs() < 1e-9 * r1.ratio);
        assert!(check_bound_measures(&uni, &uni, 0.9, d, &spec, C_ACCEPT, u128::MAX).is_err());
    }

    #[test]
    fn pocket_examples() {
        let full = cantor_pocket(1.0, dyadic_side(5), 1.0).unwrap();
        assert_eq!(full.len(), 32 * 32);
        let s = 2f64.ln() / 3f64.ln();
        // 3⁻⁵ ≈ 2^{−7.9}: level 8
        let cols = pocket_column_counts(1.0, dyadic_side(8), s).unwrap();
        let at_omega = cols.last().unwrap().1;
        // each of the 2⁵ level-5 intervals has about three grid points within δ
        assert!((32..=128).contains(&at_omega), "{at_omega}");
        for &(d, c) in &cols {
            assert!(c as f64 >= (d / dyadic_side(8)).powf(s) / 4.0, "{d} {c}");
        }
        let p = cantor_pocket(0.25, dyadic_side(8), 0.5).unwrap();
        assert!(p.len() as f64 <= 8.0 * 64f64.powf(1.5));
        assert!(p.iter().all(|(x, y)| (0..64).contains(&x) && (0..64).contains(&y)));
        assert!(matches!(cantor_pocket(dyadic_side(8), dyadic_side(8), 0.5), Err(LabError::Degenerate(_))));
    }

    #[test]
    fn regularize_sparse_family_is_untouched() {
        let spec = CurveSpec::parabola();
        let level = 7;
        let f = CubeSet::new(level, vec![(1, 1), (41, 97), (77, 13)]);
        let t = TubeFamily::new(CubeSet::new(level, vec![(5, 5)]), spec);
        let out = regularize_pockets(&f, &t, 0.5, 1.0, u128::MAX).unwrap();
        assert!(out.report.replaced.is_empty());
        assert!(out.cubes.weights().iter().all(|&w| w == 1));
        assert_eq!(out.cubes.len(), f.len());
    }

    #[test]
    fn regularize_dense_block() {
        let spec = CurveSpec::parabola();
        let level = 7;
        let f = CubeSet::new(level, (32..48).flat_map(|x| (64..80).map(move |y| (x, y))));
        let t = TubeFamily::new(CubeSet::new(level, (0..20).map(|i| (30 + i, 60 - 2 * i))), spec);
        let out = regularize_pockets(&f, &t, 0.5, 1.0, u128::MAX).unwrap();
        let r = &out.report;
        assert_eq!(r.class_size, 64);
        assert!(!r.replaced.is_empty());
        assert!(r.replaced.iter().all(|&(j, _, _)| j <= 3));
        assert!(r.c_p1 <= 20.0, "{}", r.c_p1);
        assert!(r.c_p2 <= 20.0, "{}", r.c_p2);
        assert!(r.worst_dominance() <= C_ACCEPT, "{:?}", r.dominance);
        let w = weighted_katz_tao_constant(&out.cubes, 1.5).unwrap();
        assert!((w - r.c_p2).abs() < 1e-12);
        // with B = 1 the pocket outgrows the threshold and its parent is caught next time
        assert!(!r.fixed_point);
    }

    #[test]
    fn regularize_is_idempotent_for_large_b() {
        let spec = CurveSpec::parabola();
        let level = 8;
        let f = CubeSet::new(level, (0..128).flat_map(|x| (0..128).map(move |y| (x, y))));
        let t = TubeFamily::new(CubeSet::new(level, (0..30).map(|i| (4 * i, 100 - 3 * i))), spec);
        let out = regularize_pockets(&f, &t, 0.25, 8.0, u128::MAX).unwrap();
        assert_eq!(out.report.replaced, vec![(1, 0, 0)]);
        assert!(out.report.fixed_point);
        assert!(out.cubes.weights().iter().all(|&w| w == 8));
    }
}
