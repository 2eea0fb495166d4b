//! Experiment harnesses behind the command-line runner and the acceptance
//! suite. Each takes a config record and returns a report with CSV tables,
//! a pass/fail verdict and one headline ratio.

use std::collections::HashMap;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constructions::{build_example13, cantor_measure_on_curve, clustered_katz_tao, katz_tao_subset, random_katz_tao};
use crate::curve::{Branch, CurveSpec};
use crate::dyadic::{CubeSet, DyadicCube};
use crate::error::{LabError, Result};
use crate::incidence::{
    check_bound_easy, check_bound_gamma, check_bound_main, check_bound_measures, regularize_pockets_with_fibres, tube_template, BoundParams,
    BoundReport, TubeFamily, C_ACCEPT,
};
use crate::measures::{conjectured_exponent, f_known, katz_tao_constant, mollified_l2, riesz_energy_fourier, riesz_energy_spatial, zeta, DeltaMeasure};
use crate::numeric::{dyadic_side, loglog_slope};
use crate::seed::SeedTree;
use crate::spectral::{decay_profile, l6_profile, l6_profile_with, sobolev_ratio_suite, CurveMeasure, L6Method, ProfilePoint, RVariant, SobolevReport};

/// One CSV table of a report.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: String,
    pub rows: Vec<String>,
}

impl Table {
    fn new(name: &str, header: &str) -> Self {
        Table { name: name.into(), header: header.into(), rows: vec![] }
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header.clone();
        s.push('\n');
        for r in &self.rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }
}

pub trait Report {
    fn command(&self) -> &'static str;
    fn tables(&self) -> Vec<Table>;
    fn pass(&self) -> bool;
    fn max_ratio(&self) -> f64;

    fn summary(&self) -> String {
        format!("{} {} max_ratio={}", if self.pass() { "PASS" } else { "FAIL" }, self.command(), self.max_ratio())
    }
}

pub fn curve_by_name(name: &str) -> Result<CurveSpec> {
    match name {
        "parabola" => Ok(CurveSpec::parabola()),
        "exp" | "exponential" => Ok(CurveSpec::exponential()),
        other => Err(LabError::Parse(format!("unknown curve '{other}'"))),
    }
}

fn parabola() -> String {
    "parabola".into()
}

/// Slope of log y against log(1/δ), skipping non-positive values.
fn delta_slope(levels: &[u32], values: &[f64]) -> f64 {
    let (x, y): (Vec<f64>, Vec<f64>) =
        levels.iter().zip(values).filter(|(_, v)| **v > 0.0).map(|(&l, &v)| (1.0 / dyadic_side(l), v)).unzip();
    if x.len() < 2 {
        0.0
    } else {
        loglog_slope(&x, &y)
    }
}

fn spread(values: impl Iterator<Item = f64>) -> f64 {
    let (lo, hi) = values.fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi == 0.0 {
        0.0
    } else {
        hi / lo
    }
}

// ---------------------------------------------------------------- energy

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyXcheckConfig {
    pub level: u32,
    pub sigma: f64,
    pub omegas: Vec<f64>,
    pub tolerance: f64,
    pub two_cube_level: u32,
    pub two_cube_gap: i64,
}

impl Default for EnergyXcheckConfig {
    fn default() -> Self {
        EnergyXcheckConfig { level: 10, sigma: 0.1, omegas: vec![0.5, 1.0, 1.5], tolerance: 0.1, two_cube_level: 3, two_cube_gap: 2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyRow {
    pub measure: String,
    pub omega: f64,
    pub spatial: f64,
    pub fourier: f64,
    pub rel_diff: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyXcheckReport {
    pub tolerance: f64,
    pub rows: Vec<EnergyRow>,
    /// Wall time of the Gaussian rows.
    pub gaussian_seconds: f64,
}

/// Gaussian profile of width σ centred in [0, 1]², normalized to mass 1.
pub fn gaussian_grid_measure(level: u32, sigma: f64) -> Result<DeltaMeasure> {
    let n = 1i64 << level;
    let d = dyadic_side(level);
    let items = (0..n).flat_map(|i| {
        (0..n).map(move |j| {
            let (x, y) = ((i as f64 + 0.5) * d - 0.5, (j as f64 + 0.5) * d - 0.5);
            ((i, j), (-(x * x + y * y) / (2.0 * sigma * sigma)).exp())
        })
    });
    DeltaMeasure::normalized(level, items)
}

/// Mass ½ on cell (0, 0) and on cell (gap, 0).
pub fn two_cube_measure(level: u32, gap: i64) -> Result<DeltaMeasure> {
    DeltaMeasure::new(level, vec![((0, 0), 0.5), ((gap, 0), 0.5)])
}

pub fn energy_xcheck(cfg: &EnergyXcheckConfig, budget: u128) -> Result<EnergyXcheckReport> {
    let mut rows = vec![];
    let start = Instant::now();
    let gauss = gaussian_grid_measure(cfg.level, cfg.sigma)?;
    let two = two_cube_measure(cfg.two_cube_level, cfg.two_cube_gap)?;
    let mut gaussian_seconds = 0.0;
    for (name, mu) in [("gaussian", &gauss), ("two-cube", &two)] {
        for &omega in &cfg.omegas {
            let t = Instant::now();
            let spatial = riesz_energy_spatial(mu, omega, budget)?;
            let fourier = riesz_energy_fourier(mu, omega)?;
            let rel_diff = (spatial - fourier).abs() / spatial;
            rows.push(EnergyRow { measure: name.into(), omega, spatial, fourier, rel_diff, seconds: t.elapsed().as_secs_f64() });
        }
        if name == "gaussian" {
            gaussian_seconds = start.elapsed().as_secs_f64();
        }
    }
    Ok(EnergyXcheckReport { tolerance: cfg.tolerance, rows, gaussian_seconds })
}

impl Report for EnergyXcheckReport {
    fn command(&self) -> &'static str {
        "energy-xcheck"
    }
    fn tables(&self) -> Vec<Table> {
        let mut t = Table::new("energy", "measure,omega,spatial,fourier,rel_diff,seconds");
        for r in &self.rows {
            t.rows.push(format!("{},{},{},{},{},{:.3}", r.measure, r.omega, r.spatial, r.fourier, r.rel_diff, r.seconds));
        }
        vec![t]
    }
    fn pass(&self) -> bool {
        self.rows.iter().all(|r| r.rel_diff <= self.tolerance)
    }
    /// Largest relative spatial/Fourier discrepancy.
    fn max_ratio(&self) -> f64 {
        self.rows.iter().map(|r| r.rel_diff).fold(0.0, f64::max)
    }
}

// ---------------------------------------------------------------- Fourier decay

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FourierDecayConfig {
    pub curve: String,
    pub r_min_exp: i32,
    pub r_max_exp: i32,
    pub max_spread: f64,
}

impl Default for FourierDecayConfig {
    fn default() -> Self {
        FourierDecayConfig { curve: parabola(), r_min_exp: 0, r_max_exp: 10, max_spread: 4.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FourierDecayReport {
    pub profile: Vec<ProfilePoint>,
    /// max/min of sup |μ̂| · R^{1/2}.
    pub spread: f64,
    pub max_spread: f64,
    pub seconds: f64,
}

pub fn fourier_decay(cfg: &FourierDecayConfig) -> Result<FourierDecayReport> {
    let spec = curve_by_name(&cfg.curve)?;
    let radii: Vec<f64> = (cfg.r_min_exp..=cfg.r_max_exp).map(|e| 2f64.powi(e)).collect();
    let t = Instant::now();
    let profile = decay_profile(&CurveMeasure::arclength(spec), &radii)?;
    let spread = spread(profile.iter().map(|p| p.normalized));
    Ok(FourierDecayReport { profile, spread, max_spread: cfg.max_spread, seconds: t.elapsed().as_secs_f64() })
}

fn profile_table(name: &str, profile: &[ProfilePoint]) -> Table {
    let mut t = Table::new(name, "R,value,normalized_value");
    for p in profile {
        t.rows.push(format!("{},{},{}", p.r, p.value, p.normalized));
    }
    t
}

impl Report for FourierDecayReport {
    fn command(&self) -> &'static str {
        "fourier-decay"
    }
    fn tables(&self) -> Vec<Table> {
        vec![profile_table("decay", &self.profile)]
    }
    fn pass(&self) -> bool {
        self.spread <= self.max_spread
    }
    fn max_ratio(&self) -> f64 {
        self.spread
    }
}

// ---------------------------------------------------------------- L⁶ decay

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct L6DecayConfig {
    pub curve: String,
    pub s: f64,
    pub level: u32,
    pub r_min_exp: i32,
    pub r_max_exp: i32,
    pub slope_tolerance: f64,
    pub crosscheck_level: u32,
    pub crosscheck_tolerance: f64,
}

impl Default for L6DecayConfig {
    fn default() -> Self {
        L6DecayConfig {
            curve: parabola(),
            s: 0.7,
            level: 12,
            r_min_exp: 1,
            r_max_exp: 8,
            slope_tolerance: 0.15,
            crosscheck_level: 5,
            crosscheck_tolerance: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CrossCheckRow {
    pub r: f64,
    pub triple: f64,
    pub direct: f64,
    pub rel_diff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct L6DecayReport {
    pub s: f64,
    pub profile: Vec<ProfilePoint>,
    pub slope: f64,
    pub slope_tolerance: f64,
    pub crosscheck: Vec<CrossCheckRow>,
    pub crosscheck_tolerance: f64,
    pub frostman: f64,
    pub seconds: f64,
}

impl L6DecayReport {
    pub fn slope_ok(&self) -> bool {
        (self.slope - (1.0 - self.s)).abs() <= self.slope_tolerance
    }
    pub fn crosscheck_max(&self) -> f64 {
        self.crosscheck.iter().map(|r| r.rel_diff).fold(0.0, f64::max)
    }
}

pub fn l6_decay(cfg: &L6DecayConfig) -> Result<L6DecayReport> {
    let spec = curve_by_name(&cfg.curve)?;
    let t = Instant::now();
    let inst = cantor_measure_on_curve(&spec, cfg.s, cfg.level)?;
    let radii: Vec<f64> = (cfg.r_min_exp..=cfg.r_max_exp).map(|e| 2f64.powi(e)).collect();
    let profile = l6_profile(&inst.curve, &radii, dyadic_side(cfg.level))?;
    let slope = loglog_slope(&radii, &profile.iter().map(|p| p.value).collect::<Vec<_>>());

    let coarse = cantor_measure_on_curve(&spec, cfg.s, cfg.crosscheck_level)?;
    let band = 0.25 / dyadic_side(cfg.crosscheck_level);
    let small: Vec<f64> = radii.iter().copied().filter(|&r| r <= band).collect();
    let a = l6_profile_with(&coarse.grid, &small, L6Method::TripleConvolution)?;
    let b = l6_profile_with(&coarse.grid, &small, L6Method::Direct)?;
    let crosscheck = a
        .iter()
        .zip(&b)
        .map(|(x, y)| CrossCheckRow { r: x.r, triple: x.value, direct: y.value, rel_diff: (x.value - y.value).abs() / y.value })
        .collect();
    Ok(L6DecayReport {
        s: cfg.s,
        profile,
        slope,
        slope_tolerance: cfg.slope_tolerance,
        crosscheck,
        crosscheck_tolerance: cfg.crosscheck_tolerance,
        frostman: inst.frostman,
        seconds: t.elapsed().as_secs_f64(),
    })
}

impl Report for L6DecayReport {
    fn command(&self) -> &'static str {
        "l6-decay"
    }
    fn tables(&self) -> Vec<Table> {
        let mut c = Table::new("l6_crosscheck", "R,triple_convolution,direct,rel_diff");
        for r in &self.crosscheck {
            c.rows.push(format!("{},{},{},{}", r.r, r.triple, r.direct, r.rel_diff));
        }
        let mut f = Table::new("l6_fit", "s,slope,target,tolerance");
        f.rows.push(format!("{},{},{},{}", self.s, self.slope, 1.0 - self.s, self.slope_tolerance));
        vec![profile_table("l6", &self.profile), c, f]
    }
    fn pass(&self) -> bool {
        self.slope_ok() && self.crosscheck_max() <= self.crosscheck_tolerance
    }
    /// max/min over R of ‖σ̂‖⁶_{L⁶(B(R))} / R^{1−s}.
    fn max_ratio(&self) -> f64 {
        spread(self.profile.iter().map(|p| p.value / p.r.powf(1.0 - self.s)))
    }
}

// ---------------------------------------------------------------- sharpness

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SharpnessConfig {
    pub tau: f64,
    pub s: f64,
    pub levels: Vec<u32>,
    pub factor: f64,
    pub slope_tolerance: f64,
}

impl Default for SharpnessConfig {
    fn default() -> Self {
        SharpnessConfig { tau: 1.2, s: 0.3, levels: (8..=14).collect(), factor: 8.0, slope_tolerance: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SharpnessRow {
    pub level: u32,
    pub delta: f64,
    pub cover_a_plus_a: usize,
    pub cover_psi_a_plus_b: usize,
    pub cover_sum: usize,
    pub ratio_a_plus_a: f64,
    pub ratio_psi_a_plus_b: f64,
    pub ratio_sum: f64,
}

impl SharpnessRow {
    /// Worst factor by which a covering number misses its predicted power.
    pub fn worst_factor(&self) -> f64 {
        [self.ratio_a_plus_a, self.ratio_psi_a_plus_b, self.ratio_sum].iter().map(|&r| r.max(1.0 / r)).fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SharpnessReport {
    pub tau: f64,
    pub rows: Vec<SharpnessRow>,
    /// Log-log slope of the sum cover against 1/δ.
    pub slope: f64,
    pub factor: f64,
    pub slope_tolerance: f64,
}

impl SharpnessReport {
    pub fn slope_ok(&self) -> bool {
        (self.slope - self.tau).abs() <= self.slope_tolerance
    }
    pub fn factors_ok(&self) -> bool {
        self.rows.iter().all(|r| r.worst_factor() <= self.factor)
    }
}

pub fn sharpness(cfg: &SharpnessConfig, budget: u128) -> Result<SharpnessReport> {
    let spec = CurveSpec::parabola();
    let rows = cfg
        .levels
        .iter()
        .map(|&level| {
            let d = build_example13(&spec, level, cfg.tau, cfg.s, budget)?.diagnostics;
            Ok(SharpnessRow {
                level,
                delta: dyadic_side(level),
                cover_a_plus_a: d.cover_a_plus_a,
                cover_psi_a_plus_b: d.cover_psi_a_plus_b,
                cover_sum: d.cover_sum,
                ratio_a_plus_a: d.ratio_a_plus_a,
                ratio_psi_a_plus_b: d.ratio_psi_a_plus_b,
                ratio_sum: d.ratio_sum,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let slope = delta_slope(&cfg.levels, &rows.iter().map(|r| r.cover_sum as f64).collect::<Vec<_>>());
    Ok(SharpnessReport { tau: cfg.tau, rows, slope, factor: cfg.factor, slope_tolerance: cfg.slope_tolerance })
}

impl Report for SharpnessReport {
    fn command(&self) -> &'static str {
        "sharpness"
    }
    fn tables(&self) -> Vec<Table> {
        let mut t = Table::new(
            "sharpness",
            "level,delta,cover_A+A,cover_psi(A)+B,cover_sum,ratio_A+A,ratio_psi(A)+B,ratio_sum",
        );
        for r in &self.rows {
            t.rows.push(format!(
                "{},{:e},{},{},{},{},{},{}",
                r.level, r.delta, r.cover_a_plus_a, r.cover_psi_a_plus_b, r.cover_sum, r.ratio_a_plus_a, r.ratio_psi_a_plus_b, r.ratio_sum
            ));
        }
        let mut f = Table::new("sharpness_fit", "tau,slope,tolerance");
        f.rows.push(format!("{},{},{}", self.tau, self.slope, self.slope_tolerance));
        vec![t, f]
    }
    fn pass(&self) -> bool {
        self.slope_ok() && self.factors_ok()
    }
    fn max_ratio(&self) -> f64 {
        self.rows.iter().map(|r| r.worst_factor()).fold(0.0, f64::max)
    }
}

// ---------------------------------------------------------------- incidence sweep

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Checker {
    Main,
    Easy,
    Gamma,
}

/// Shape of the tube parameter set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Uniform proposals over the unit grid.
    Random,
    /// Three clusters of spread 1/16.
    Clustered,
    /// One tight cluster: nearly coincident tubes.
    Bush,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IncidenceSweepConfig {
    pub curve: String,
    pub s: f64,
    pub t: f64,
    pub levels: Vec<u32>,
    pub instances: usize,
    pub checker: Checker,
    pub epsilon: f64,
    pub c_accept: f64,
    pub slope_max: f64,
    pub seed: u64,
    pub families: Vec<Family>,
    /// Katz-Tao constant the tube parameters are sampled under.
    pub p_constant: f64,
    pub p_target: usize,
    pub f_per_tube: usize,
}

impl Default for IncidenceSweepConfig {
    fn default() -> Self {
        IncidenceSweepConfig {
            curve: parabola(),
            s: 0.5,
            t: 0.7,
            levels: (8..=12).collect(),
            instances: 100,
            checker: Checker::Main,
            epsilon: 0.0,
            c_accept: C_ACCEPT,
            slope_max: 0.05,
            seed: 1,
            families: vec![Family::Random, Family::Clustered, Family::Bush],
            p_constant: 2.0,
            p_target: 32,
            f_per_tube: 48,
        }
    }
}

/// Tube parameters P and fibres F(q) ⊂ tube(q) with measured constants.
#[derive(Clone, Debug)]
pub struct IncidenceInstance {
    pub p: CubeSet,
    pub fibres: Vec<CubeSet>,
    /// Katz-Tao constant of P at exponent s.
    pub a: f64,
    /// Largest Katz-Tao constant of a fibre at exponent t.
    pub b: f64,
}

/// F is the union of a Katz-Tao subset of every tube and the cells met by
/// the most tubes; F(q) = F ∩ tube(q) inside the unit square.
pub fn incidence_instance(spec: &CurveSpec, level: u32, s: f64, t: f64, family: Family, cfg: &IncidenceSweepConfig, seed: SeedTree) -> Result<IncidenceInstance> {
    let side = 1i64 << level;
    let ps = seed.child("P", 0);
    let p = match family {
        Family::Random => random_katz_tao(level, s, cfg.p_constant, ps, cfg.p_target)?,
        Family::Clustered => clustered_katz_tao(level, s, cfg.p_constant, ps, cfg.p_target, 3, (side / 16).max(2))?,
        Family::Bush => clustered_katz_tao(level, s, cfg.p_constant, ps, cfg.p_target, 1, (side / 64).max(1))?,
    };
    let template = tube_template(spec, level, Branch::Full)?;
    let tubes: Vec<Vec<(i64, i64)>> = p
        .members()
        .iter()
        .map(|&(qx, qy)| {
            template
                .iter()
                .map(|&(x, y)| (x + qx, y + qy))
                .filter(|&(x, y)| (0..side).contains(&x) && (0..side).contains(&y))
                .collect()
        })
        .collect();
    let mut multiplicity: HashMap<(i64, i64), u32> = HashMap::new();
    for cells in &tubes {
        for &c in cells {
            *multiplicity.entry(c).or_default() += 1;
        }
    }
    let mut shared: Vec<((i64, i64), u32)> = multiplicity.into_iter().filter(|e| e.1 >= 2).collect();
    shared.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    shared.truncate(cfg.f_per_tube * p.len() / 4);
    let mut f_cells: Vec<(i64, i64)> = shared.into_iter().map(|e| e.0).collect();
    for (i, cells) in tubes.iter().enumerate() {
        f_cells.extend(katz_tao_subset(level, t, 1.0, cells, seed.child("F", i as u64), cfg.f_per_tube)?.iter());
    }
    let f = CubeSet::new(level, f_cells);
    let fibres: Vec<CubeSet> = tubes.iter().map(|cells| CubeSet::new(level, cells.iter().copied().filter(|&c| f.contains(c)))).collect();
    let a = katz_tao_constant(&p, s)?.max(1.0);
    let mut b = 1.0f64;
    for fq in &fibres {
        if !fq.is_empty() {
            b = b.max(katz_tao_constant(fq, t)?);
        }
    }
    Ok(IncidenceInstance { p, fibres, a, b })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub level: u32,
    pub instance: usize,
    pub family: Family,
    pub report: BoundReport,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepReport {
    pub checker: Checker,
    pub rows: Vec<SweepRow>,
    /// (level, max ratio) per level.
    pub per_level: Vec<(u32, f64)>,
    pub slope: f64,
    pub slope_max: f64,
    pub c_accept: f64,
    pub seconds: f64,
}

impl SweepReport {
    pub fn all_within(&self) -> bool {
        self.rows.iter().all(|r| r.report.pass)
    }
    pub fn instances_at(&self, level: u32) -> usize {
        self.rows.iter().filter(|r| r.level == level).count()
    }
}

pub fn incidence_sweep(cfg: &IncidenceSweepConfig) -> Result<SweepReport> {
    let spec = curve_by_name(&cfg.curve)?;
    let start = Instant::now();
    let bp0 = BoundParams { s: cfg.s, t: cfg.t, a: 1.0, b: 1.0, c_accept: cfg.c_accept };
    match cfg.checker {
        Checker::Main if !(cfg.s + cfg.t < 2.0) => return Err(LabError::Precondition("s + t must be below 2".into())),
        Checker::Easy if cfg.t > cfg.s => return Err(LabError::Precondition("easy case needs t <= s".into())),
        _ => {}
    }
    let n_fam = cfg.families.len();
    let jobs: Vec<(u32, usize)> = if n_fam == 0 {
        vec![]
    } else {
        cfg.levels.iter().flat_map(|&l| (0..cfg.instances).map(move |i| (l, i))).collect()
    };
    let root = SeedTree(cfg.seed);
    let rows = jobs
        .par_iter()
        .map(|&(level, i)| {
            let family = cfg.families[i % n_fam];
            let inst = incidence_instance(&spec, level, cfg.s, cfg.t, family, cfg, root.child("level", level as u64).child("instance", i as u64))?;
            let bp = BoundParams { a: inst.a, b: inst.b, ..bp0 };
            let report = match cfg.checker {
                Checker::Main => check_bound_main(&inst.p, &inst.fibres, &spec, &bp)?,
                Checker::Easy => check_bound_easy(&inst.p, &inst.fibres, &spec, &bp)?,
                Checker::Gamma => check_bound_gamma(&inst.p, &inst.fibres, &spec, &bp, cfg.epsilon)?,
            };
            Ok(SweepRow { level, instance: i, family, report })
        })
        .collect::<Result<Vec<_>>>()?;
    let per_level: Vec<(u32, f64)> = cfg
        .levels
        .iter()
        .map(|&l| (l, rows.iter().filter(|r| r.level == l).map(|r| r.report.ratio).fold(0.0, f64::max)))
        .collect();
    let slope = delta_slope(&cfg.levels, &per_level.iter().map(|p| p.1).collect::<Vec<_>>());
    Ok(SweepReport { checker: cfg.checker, rows, per_level, slope, slope_max: cfg.slope_max, c_accept: cfg.c_accept, seconds: start.elapsed().as_secs_f64() })
}

fn bound_table(name: &str, rows: impl Iterator<Item = (String, BoundReport)>, prefix: &str) -> Table {
    let mut t = Table::new(name, &format!("{prefix},{}", BoundReport::CSV_HEADER));
    for (p, r) in rows {
        t.rows.push(format!("{p},{r}"));
    }
    t
}

fn per_level_table(name: &str, per_level: &[(u32, f64)], slope: f64) -> Table {
    let mut t = Table::new(name, "level,delta,max_ratio,slope");
    for &(l, m) in per_level {
        t.rows.push(format!("{l},{:e},{m},{slope}", dyadic_side(l)));
    }
    t
}

impl Report for SweepReport {
    fn command(&self) -> &'static str {
        "incidence-sweep"
    }
    fn tables(&self) -> Vec<Table> {
        let rows = self.rows.iter().map(|r| (format!("{},{},{:?}", r.level, r.instance, r.family).to_lowercase(), r.report.clone()));
        vec![bound_table("incidence", rows, "level,instance,family"), per_level_table("incidence_levels", &self.per_level, self.slope)]
    }
    fn pass(&self) -> bool {
        self.all_within() && self.slope <= self.slope_max
    }
    fn max_ratio(&self) -> f64 {
        self.per_level.iter().map(|p| p.1).fold(0.0, f64::max)
    }
}

// ---------------------------------------------------------------- measure incidence

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasureIncidenceConfig {
    pub curve: String,
    pub t: f64,
    pub levels: Vec<u32>,
    pub measures: usize,
    pub c_accept: f64,
    pub slope_max: f64,
    pub seed: u64,
}

impl Default for MeasureIncidenceConfig {
    fn default() -> Self {
        MeasureIncidenceConfig { curve: parabola(), t: 1.5, levels: vec![6, 7, 8, 9], measures: 20, c_accept: C_ACCEPT, slope_max: 0.05, seed: 1 }
    }
}

/// Three Gaussian bumps with random centres and widths in [0.35, 0.65]²,
/// cut to [1/4, 3/4]² and sampled at cell midpoints, mass 1. The same seed
/// gives the same continuous density at every level.
pub fn random_bump_measure(level: u32, seed: SeedTree) -> Result<DeltaMeasure> {
    let mut rng = seed.rng();
    let bumps: Vec<(f64, f64, f64, f64)> =
        (0..3).map(|_| (rng.gen_range(0.35..0.65), rng.gen_range(0.35..0.65), rng.gen_range(0.04..0.12), rng.gen_range(0.5..1.0))).collect();
    let n = 1i64 << level;
    let d = dyadic_side(level);
    let (lo, hi) = (n / 4, 3 * n / 4);
    let items = (lo..hi).flat_map(|i| {
        let bumps = &bumps;
        (lo..hi).map(move |j| {
            let (x, y) = ((i as f64 + 0.5) * d, (j as f64 + 0.5) * d);
            let v: f64 = bumps.iter().map(|&(cx, cy, w, a)| a * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * w * w)).exp()).sum();
            ((i, j), v)
        })
    });
    DeltaMeasure::normalized(level, items)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeasureRow {
    pub level: u32,
    pub instance: usize,
    pub report: BoundReport,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeasureIncidenceReport {
    pub rows: Vec<MeasureRow>,
    pub per_level: Vec<(u32, f64)>,
    pub slope: f64,
    pub slope_max: f64,
    pub seconds: f64,
}

pub fn measure_incidence(cfg: &MeasureIncidenceConfig, budget: u128) -> Result<MeasureIncidenceReport> {
    let spec = curve_by_name(&cfg.curve)?;
    let start = Instant::now();
    let root = SeedTree(cfg.seed);
    let jobs: Vec<(u32, usize)> = cfg.levels.iter().flat_map(|&l| (0..cfg.measures).map(move |i| (l, i))).collect();
    let rows = jobs
        .par_iter()
        .map(|&(level, i)| {
            let mu = random_bump_measure(level, root.child("mu", i as u64))?;
            let nu = random_bump_measure(level, root.child("nu", i as u64))?;
            let report = check_bound_measures(&mu, &nu, cfg.t, dyadic_side(level), &spec, cfg.c_accept, budget)?;
            Ok(MeasureRow { level, instance: i, report })
        })
        .collect::<Result<Vec<_>>>()?;
    let per_level: Vec<(u32, f64)> = cfg
        .levels
        .iter()
        .map(|&l| (l, rows.iter().filter(|r| r.level == l).map(|r| r.report.ratio).fold(0.0, f64::max)))
        .collect();
    let slope = delta_slope(&cfg.levels, &per_level.iter().map(|p| p.1).collect::<Vec<_>>());
    Ok(MeasureIncidenceReport { rows, per_level, slope, slope_max: cfg.slope_max, seconds: start.elapsed().as_secs_f64() })
}

impl Report for MeasureIncidenceReport {
    fn command(&self) -> &'static str {
        "measure-incidence"
    }
    /// In the bound table A and B hold the two energies and sizeP, sizeF the support sizes of ν and μ.
    fn tables(&self) -> Vec<Table> {
        let rows = self.rows.iter().map(|r| (format!("{},{}", r.level, r.instance), r.report.clone()));
        vec![bound_table("measure_incidence", rows, "level,instance"), per_level_table("measure_incidence_levels", &self.per_level, self.slope)]
    }
    fn pass(&self) -> bool {
        self.rows.iter().all(|r| r.report.pass) && self.slope <= self.slope_max
    }
    fn max_ratio(&self) -> f64 {
        self.per_level.iter().map(|p| p.1).fold(0.0, f64::max)
    }
}

// ---------------------------------------------------------------- regularization

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegularizeConfig {
    pub curve: String,
    pub s: f64,
    pub level: u32,
    pub instances: usize,
    pub seed: u64,
    /// Gate on c_P1 and c_P2.
    pub c_bound: f64,
    /// Gate on incidence dominance.
    pub c_accept: f64,
    pub clusters: usize,
    pub f_target: usize,
    pub p_target: usize,
}

impl Default for RegularizeConfig {
    fn default() -> Self {
        RegularizeConfig { curve: parabola(), s: 0.5, level: 8, instances: 50, seed: 1, c_bound: 20.0, c_accept: C_ACCEPT, clusters: 3, f_target: 1500, p_target: 24 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegularizeRow {
    pub instance: usize,
    pub size_f: usize,
    pub size_p: usize,
    pub b: f64,
    pub class_size: usize,
    pub replaced: usize,
    pub total_weight: u64,
    pub c_p1: f64,
    pub c_p2: f64,
    pub dominance_decreasing: f64,
    pub dominance_increasing: f64,
    pub fixed_point: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegularizeSuiteReport {
    pub rows: Vec<RegularizeRow>,
    pub c_bound: f64,
    pub c_accept: f64,
}

impl RegularizeSuiteReport {
    pub fn max_c_p1(&self) -> f64 {
        self.rows.iter().map(|r| r.c_p1).fold(0.0, f64::max)
    }
    pub fn max_c_p2(&self) -> f64 {
        self.rows.iter().map(|r| r.c_p2).fold(0.0, f64::max)
    }
    pub fn max_dominance(&self) -> f64 {
        self.rows.iter().map(|r| r.dominance_decreasing.max(r.dominance_increasing)).fold(0.0, f64::max)
    }
}

/// Dense clusters of F and tubes aimed through random cells of F.
/// F, tubes aimed through F, fibres that are maximal s-dimensional Katz-Tao
/// subsets of F ∩ tube, and B = ⌈max KT_s(fibre)⌉.
pub fn regularize_instance(
    spec: &CurveSpec,
    cfg: &RegularizeConfig,
    i: usize,
    seed: SeedTree,
) -> Result<(CubeSet, TubeFamily, Vec<CubeSet>, f64)> {
    let level = cfg.level;
    let side = 1i64 << level;
    let d = dyadic_side(level);
    let spread = 4 * (1 + (i % 4) as i64);
    let f = clustered_katz_tao(level, 2.0, 1.0, seed.child("F", 0), cfg.f_target, cfg.clusters.max(1), spread)?;
    let mut rng = seed.child("P", 0).rng();
    let mut params = vec![];
    for _ in 0..64 * cfg.p_target {
        if params.len() >= cfg.p_target {
            break;
        }
        let anchor = DyadicCube { level, ix: 0, iy: 0 };
        let c = f.members()[rng.gen_range(0..f.len())];
        let mid = DyadicCube { ix: c.0, iy: c.1, ..anchor }.midpoint();
        let x: f64 = rng.gen_range(-0.5..0.5);
        let q = [mid[0] - x, mid[1] - spec.eval(x)?.0];
        let cell = ((q[0] / d).floor() as i64, (q[1] / d).floor() as i64);
        if (0..side).contains(&cell.0) && (0..side).contains(&cell.1) {
            params.push(cell);
        }
    }
    let tubes = TubeFamily::new(CubeSet::new(level, params), spec.clone());
    let template = tube_template(spec, level, Branch::Full)?;
    let mut b = 1.0f64;
    let mut fibres = Vec::with_capacity(tubes.len());
    for (j, &(qx, qy)) in tubes.params().members().iter().enumerate() {
        let on_tube: Vec<_> = template.iter().map(|&(x, y)| (x + qx, y + qy)).filter(|&c| f.contains(c)).collect();
        let fq = katz_tao_subset(level, cfg.s, 1.0, &on_tube, seed.child("fibre", j as u64), usize::MAX)?;
        if !fq.is_empty() {
            b = b.max(katz_tao_constant(&fq, cfg.s)?);
        }
        fibres.push(fq);
    }
    Ok((f, tubes, fibres, b.ceil()))
}

pub fn regularize_suite(cfg: &RegularizeConfig, budget: u128) -> Result<RegularizeSuiteReport> {
    let spec = curve_by_name(&cfg.curve)?;
    let root = SeedTree(cfg.seed);
    let rows = (0..cfg.instances)
        .into_par_iter()
        .map(|i| {
            let (f, tubes, fibres, b) = regularize_instance(&spec, cfg, i, root.child("instance", i as u64))?;
            let out = regularize_pockets_with_fibres(&f, &tubes, Some(&fibres), cfg.s, b, budget)?;
            let r = out.report;
            let dom = |name: &str| r.dominance.iter().find(|d| d.branch == name).map(|d| d.ratio).unwrap_or(0.0);
            Ok(RegularizeRow {
                instance: i,
                size_f: r.size_f,
                size_p: tubes.len(),
                b,
                class_size: r.class_size,
                replaced: r.replaced.len(),
                total_weight: r.total_weight,
                c_p1: r.c_p1,
                c_p2: r.c_p2,
                dominance_decreasing: dom("decreasing"),
                dominance_increasing: dom("increasing"),
                fixed_point: r.fixed_point,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RegularizeSuiteReport { rows, c_bound: cfg.c_bound, c_accept: cfg.c_accept })
}

impl Report for RegularizeSuiteReport {
    fn command(&self) -> &'static str {
        "regularize"
    }
    fn tables(&self) -> Vec<Table> {
        let mut t = Table::new(
            "regularize",
            "instance,sizeF,sizeP,B,class_size,replaced,total_weight,c_P1,c_P2,dominance_decreasing,dominance_increasing,fixed_point",
        );
        for r in &self.rows {
            t.rows.push(format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.instance, r.size_f, r.size_p, r.b, r.class_size, r.replaced, r.total_weight, r.c_p1, r.c_p2, r.dominance_decreasing,
                r.dominance_increasing, r.fixed_point
            ));
        }
        vec![t]
    }
    fn pass(&self) -> bool {
        self.max_c_p1() <= self.c_bound && self.max_c_p2() <= self.c_bound && self.max_dominance() <= self.c_accept
    }
    /// Largest of c_P1 and c_P2.
    fn max_ratio(&self) -> f64 {
        self.max_c_p1().max(self.max_c_p2())
    }
}

// ---------------------------------------------------------------- Sobolev suite

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SobolevConfig {
    pub curve: String,
    pub s_list: Vec<f64>,
    pub trials: usize,
    pub grids: Vec<usize>,
    pub seed: u64,
    pub drift_max: f64,
}

impl Default for SobolevConfig {
    fn default() -> Self {
        SobolevConfig { curve: parabola(), s_list: vec![-0.5, 0.0, 0.5], trials: 50, grids: vec![512, 1024, 2048], seed: 1, drift_max: 0.2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SobolevSuiteReport {
    pub suite: SobolevReport,
    pub s_list: Vec<f64>,
    pub drift_max: f64,
}

impl SobolevSuiteReport {
    pub fn worst_drift(&self, variant: RVariant) -> f64 {
        self.s_list.iter().map(|&s| self.suite.drift(variant, s)).fold(0.0, f64::max)
    }
}

pub fn sobolev_suite(cfg: &SobolevConfig) -> Result<SobolevSuiteReport> {
    let spec = curve_by_name(&cfg.curve)?;
    let suite = sobolev_ratio_suite(&spec, &cfg.s_list, cfg.trials, &cfg.grids, SeedTree(cfg.seed))?;
    Ok(SobolevSuiteReport { suite, s_list: cfg.s_list.clone(), drift_max: cfg.drift_max })
}

impl Report for SobolevSuiteReport {
    fn command(&self) -> &'static str {
        "sobolev-suite"
    }
    fn tables(&self) -> Vec<Table> {
        let mut t = Table::new("sobolev", "variant,s,n,max_ratio");
        for r in &self.suite.rows {
            t.rows.push(format!("{:?},{},{},{}", r.variant, r.s, r.n, r.max_ratio).to_lowercase());
        }
        vec![t]
    }
    /// Gates the variant with the reflected curve; the other is reported only.
    fn pass(&self) -> bool {
        self.worst_drift(RVariant::RTilde) <= self.drift_max
    }
    fn max_ratio(&self) -> f64 {
        self.suite.rows.iter().filter(|r| r.variant == RVariant::RTilde).map(|r| r.max_ratio).fold(0.0, f64::max)
    }
}

// ---------------------------------------------------------------- conjecture probe

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConjectureProbeConfig {
    pub curve: String,
    pub s: f64,
    pub t: f64,
    pub levels: Vec<u32>,
    pub seed: u64,
}

impl Default for ConjectureProbeConfig {
    fn default() -> Self {
        ConjectureProbeConfig { curve: parabola(), s: 0.5, t: 1.0, levels: vec![6, 7, 8, 9, 10], seed: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeFit {
    pub family: String,
    /// (level, ‖(μ∗σ)_δ‖²).
    pub l2: Vec<(u32, f64)>,
    /// 2 minus the slope of log L² against log(1/δ).
    pub dimension: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConjectureProbeReport {
    pub s: f64,
    pub t: f64,
    pub conjectured: f64,
    pub zeta: Option<f64>,
    pub known: Option<f64>,
    pub fits: Vec<ProbeFit>,
}

fn graph_cell(spec: &CurveSpec, level: u32, col: i64) -> Result<(i64, i64)> {
    let d = dyadic_side(level);
    let y = spec.eval((col as f64 + 0.5) * d)?.0;
    Ok((col, (y / d).floor() as i64))
}

/// μ uniform on the cells of the lattice δ^{t/3}ℤ × δ^{2t/3}ℤ in [0, 1]²,
/// σ uniform on the graph cells over δ^s ℤ ∩ [0, 1].
pub fn lattice_probe_measures(spec: &CurveSpec, level: u32, s: f64, t: f64) -> Result<(DeltaMeasure, DeltaMeasure)> {
    let d = dyadic_side(level);
    let n = 1i64 << level;
    let points = |e: f64| -> Vec<i64> {
        let step = d.powf(e).max(d);
        let mut v: Vec<i64> = (0..).map(|k| k as f64 * step).take_while(|&x| x < 1.0).map(|x| ((x / d).floor() as i64).min(n - 1)).collect();
        v.dedup();
        v
    };
    let (a, b, dd) = (points(t / 3.0), points(2.0 * t / 3.0), points(s));
    let mu = DeltaMeasure::uniform(&CubeSet::new(level, a.iter().flat_map(|&x| b.iter().map(move |&y| (x, y)))))?;
    let cells = dd.iter().map(|&c| graph_cell(spec, level, c)).collect::<Result<Vec<_>>>()?;
    let sigma = DeltaMeasure::uniform(&CubeSet::new(level, cells))?;
    Ok((mu, sigma))
}

/// μ uniform on a random Katz-Tao (δ, t) set, σ uniform on graph cells over
/// a random Katz-Tao (δ, s) set of columns.
pub fn random_probe_measures(spec: &CurveSpec, level: u32, s: f64, t: f64, seed: SeedTree) -> Result<(DeltaMeasure, DeltaMeasure)> {
    let n = 1i64 << level;
    let target = 2f64.powf(level as f64 * t).round() as usize;
    let mu = DeltaMeasure::uniform(&random_katz_tao(level, t, 1.0, seed.child("mu", 0), target)?)?;
    let columns: Vec<(i64, i64)> = (0..n).map(|x| (x, 0)).collect();
    let cols = katz_tao_subset(level, s, 1.0, &columns, seed.child("sigma", 0), usize::MAX)?;
    let cells = cols.iter().map(|(x, _)| graph_cell(spec, level, x)).collect::<Result<Vec<_>>>()?;
    Ok((mu, DeltaMeasure::uniform(&CubeSet::new(level, cells))?))
}

pub fn conjecture_probe(cfg: &ConjectureProbeConfig, budget: u128) -> Result<ConjectureProbeReport> {
    let spec = curve_by_name(&cfg.curve)?;
    let known = f_known(cfg.s, cfg.t)?;
    let zeta = zeta(cfg.s, cfg.t).ok();
    let mut fits = vec![];
    for family in ["lattice", "random"] {
        let l2 = cfg
            .levels
            .par_iter()
            .map(|&level| {
                let (mu, sigma) = if family == "lattice" {
                    lattice_probe_measures(&spec, level, cfg.s, cfg.t)?
                } else {
                    random_probe_measures(&spec, level, cfg.s, cfg.t, SeedTree(cfg.seed).child("level", level as u64))?
                };
                Ok((level, mollified_l2(&mu, &sigma, dyadic_side(level), budget)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let levels: Vec<u32> = l2.iter().map(|p| p.0).collect();
        let dimension = 2.0 - delta_slope(&levels, &l2.iter().map(|p| p.1).collect::<Vec<_>>());
        fits.push(ProbeFit { family: family.into(), l2, dimension });
    }
    Ok(ConjectureProbeReport { s: cfg.s, t: cfg.t, conjectured: conjectured_exponent(cfg.s, cfg.t), zeta, known, fits })
}

impl Report for ConjectureProbeReport {
    fn command(&self) -> &'static str {
        "conjecture-probe"
    }
    fn tables(&self) -> Vec<Table> {
        let mut l = Table::new("probe_l2", "family,level,delta,l2");
        for f in &self.fits {
            for &(lv, v) in &f.l2 {
                l.rows.push(format!("{},{lv},{:e},{v}", f.family, dyadic_side(lv)));
            }
        }
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut s = Table::new("probe_fit", "family,s,t,dimension,conjectured,zeta,known,gap_to_conjecture");
        for f in &self.fits {
            s.rows.push(format!(
                "{},{},{},{},{},{},{},{}",
                f.family,
                self.s,
                self.t,
                f.dimension,
                self.conjectured,
                opt(self.zeta),
                opt(self.known),
                f.dimension - self.conjectured
            ));
        }
        vec![l, s]
    }
    /// Informational only.
    fn pass(&self) -> bool {
        true
    }
    /// Largest fitted dimension over the conjectured value.
    fn max_ratio(&self) -> f64 {
        self.fits.iter().map(|f| f.dimension / self.conjectured).fold(0.0, f64::max)
    }
}
