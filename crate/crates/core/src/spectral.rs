//! Fourier side: transforms of grid fields and curve measures, decay and
//! L⁶ profiles, the convolution operator with arclength, Sobolev norms.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::curve::CurveSpec;
use crate::error::{LabError, Result};
use crate::fft::{signed_index, Fft2};
use crate::measures::DeltaMeasure;
use crate::numeric::{dyadic_side, gl20, next_pow2, pairwise_sum};
use crate::seed::SeedTree;

/// Largest admissible |ξ| for pointwise transforms.
pub const MAX_FREQUENCY: f64 = 65536.0;
/// Quadrature node budget per transform value.
pub const NODE_BUDGET: usize = 1 << 24;
/// Abscissa interval carrying the arclength measure.
pub const ARC_INTERVAL: (f64, f64) = (-1.0, 1.0);

/// Samples on the periodic box [−L/2, L/2)², node j at −L/2 + j·L/n.
#[derive(Clone, Debug)]
pub struct GridField {
    n: usize,
    extent: f64,
    values: Vec<Complex64>,
}

impl GridField {
    pub fn new(n: usize, extent: f64, values: Vec<Complex64>) -> Result<Self> {
        if !n.is_power_of_two() || n < 2 {
            return Err(LabError::Domain(format!("grid size {n} is not a power of two")));
        }
        if !(extent > 0.0 && extent.is_finite()) {
            return Err(LabError::Domain(format!("extent {extent} must be positive")));
        }
        if values.len() != n * n {
            return Err(LabError::Domain(format!("{} values for a {n}x{n} grid", values.len())));
        }
        Ok(GridField { n, extent, values })
    }

    pub fn from_fn<F: Fn(f64, f64) -> Complex64 + Sync>(n: usize, extent: f64, f: F) -> Result<Self> {
        let h = extent / n as f64;
        let values = (0..n * n)
            .into_par_iter()
            .map(|i| f(-0.5 * extent + (i % n) as f64 * h, -0.5 * extent + (i / n) as f64 * h))
            .collect();
        Self::new(n, extent, values)
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn extent(&self) -> f64 {
        self.extent
    }
    pub fn spacing(&self) -> f64 {
        self.extent / self.n as f64
    }
    pub fn values(&self) -> &[Complex64] {
        &self.values
    }
    pub fn position(&self, ix: usize, iy: usize) -> (f64, f64) {
        let h = self.spacing();
        (-0.5 * self.extent + ix as f64 * h, -0.5 * self.extent + iy as f64 * h)
    }

    /// h² Σ |f|².
    pub fn l2_norm_sq(&self) -> f64 {
        let h = self.spacing();
        h * h * pairwise_sum(&self.values.iter().map(|z| z.norm_sqr()).collect::<Vec<_>>())
    }

    /// F(ξ_k) ≈ ∫ f e^{−2πi x·ξ} at ξ_k = k/L, k signed, in FFT order.
    pub fn spectrum(&self) -> Spectrum {
        let n = self.n;
        let h = self.spacing();
        let mut data = self.values.clone();
        Fft2::new(n, n).forward(&mut data);
        for (i, z) in data.iter_mut().enumerate() {
            let parity = (i % n + i / n) % 2;
            *z *= if parity == 0 { h * h } else { -h * h };
        }
        Spectrum { n, extent: self.extent, data }
    }
}

/// Transform of a [`GridField`] on the lattice ξ = k/L.
#[derive(Clone, Debug)]
pub struct Spectrum {
    n: usize,
    extent: f64,
    data: Vec<Complex64>,
}

impl Spectrum {
    pub fn step(&self) -> f64 {
        1.0 / self.extent
    }
    pub fn frequency(&self, i: usize) -> (f64, f64) {
        let d = self.step();
        (signed_index(i % self.n, self.n) as f64 * d, signed_index(i / self.n, self.n) as f64 * d)
    }
    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    /// Σ |F_k|² m(ξ_k) Δ² with the zero cell weighted by `zero`.
    fn weighted_sum<M: Fn(f64) -> f64>(&self, multiplier: M, zero: f64) -> f64 {
        let d = self.step();
        let terms: Vec<f64> = self
            .data
            .iter()
            .enumerate()
            .map(|(i, z)| {
                if i == 0 {
                    return zero * z.norm_sqr();
                }
                let (a, b) = self.frequency(i);
                z.norm_sqr() * multiplier((a * a + b * b).sqrt())
            })
            .collect();
        pairwise_sum(&terms) * d * d
    }
}

fn check_sobolev(s: f64) -> Result<()> {
    if !(s > -1.0 && s <= 1.0) {
        return Err(LabError::Domain(format!("Sobolev exponent {s} outside (-1, 1]")));
    }
    Ok(())
}

/// Homogeneous norm with its zero-frequency truncation bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SobolevNorm {
    pub value: f64,
    /// Upper bound for the omitted ∫_{cell} |F(0)|²|ξ|^{2s}; zero when s ≥ 0.
    pub truncation: f64,
}

/// (Σ |F_k|² |ξ_k|^{2s} Δ²)^{1/2}. At s = 0 the zero cell counts and the
/// value is the grid L² norm; for s > 0 its weight vanishes; for s < 0 it is
/// left out and the cell integral is reported as `truncation`.
pub fn sobolev_norm(f: &GridField, s: f64) -> Result<SobolevNorm> {
    check_sobolev(s)?;
    Ok(sobolev_from_spectrum(&f.spectrum(), s))
}

fn sobolev_from_spectrum(sp: &Spectrum, s: f64) -> SobolevNorm {
    let zero = if s == 0.0 { 1.0 } else { 0.0 };
    let value = sp.weighted_sum(|r| r.powf(2.0 * s), zero).sqrt();
    let truncation = if s < 0.0 {
        sp.data[0].norm_sqr() * zero_cell_integral(2.0 * s, 0.5 * sp.step())
    } else {
        0.0
    };
    SobolevNorm { value, truncation }
}

/// ∫_{[−h,h]²} |ξ|^p dξ for p > −2.
fn zero_cell_integral(p: f64, h: f64) -> f64 {
    let angular = crate::numeric::integrate(|t| t.cos().powf(-(p + 2.0)), 0.0, PI / 4.0, 4);
    8.0 / (p + 2.0) * h.powf(p + 2.0) * angular
}

/// Measures whose transform can be evaluated pointwise.
pub trait FourierTransform: Sync {
    fn fourier_at(&self, xi: [f64; 2]) -> Result<Complex64>;
    fn total_mass(&self) -> f64;
}

fn check_frequency(xi: [f64; 2]) -> Result<()> {
    let r = xi[0].hypot(xi[1]);
    if !(r <= MAX_FREQUENCY) {
        return Err(LabError::Domain(format!("|xi| = {r} exceeds {MAX_FREQUENCY}")));
    }
    Ok(())
}

/// Exact sum over cell midpoints; differs from the cell-uniform measure by O(δ|ξ|).
impl FourierTransform for DeltaMeasure {
    fn fourier_at(&self, xi: [f64; 2]) -> Result<Complex64> {
        check_frequency(xi)?;
        let d = self.delta();
        let mut acc = Complex64::new(0.0, 0.0);
        for ((x, y), w) in self.iter() {
            let ph = -2.0 * PI * ((x as f64 + 0.5) * d * xi[0] + (y as f64 + 0.5) * d * xi[1]);
            acc += Complex64::from_polar(w, ph);
        }
        Ok(acc)
    }
    fn total_mass(&self) -> f64 {
        self.mass()
    }
}

#[derive(Clone, Debug)]
pub enum CurveBase {
    /// ℋ¹ restricted to the graph over [−1, 1].
    Arclength,
    /// Atoms (x, w) pushed forward by x ↦ (x, ψ(x)).
    Pushforward(Vec<(f64, f64)>),
}

#[derive(Clone, Debug)]
pub struct CurveMeasure {
    pub spec: CurveSpec,
    pub base: CurveBase,
}

impl CurveMeasure {
    pub fn arclength(spec: CurveSpec) -> Self {
        CurveMeasure { spec, base: CurveBase::Arclength }
    }

    pub fn pushforward(spec: CurveSpec, atoms: Vec<(f64, f64)>) -> Result<Self> {
        for &(x, w) in &atoms {
            if !(x.abs() <= crate::curve::DOMAIN) || !(w >= 0.0 && w.is_finite()) {
                return Err(LabError::Domain(format!("atom ({x}, {w}) is invalid")));
            }
        }
        Ok(CurveMeasure { spec, base: CurveBase::Pushforward(atoms) })
    }

    /// Aggregates the measure into level-k cells. Atoms keep their mass;
    /// arclength is rescaled to a probability measure.
    pub fn discretize(&self, level: u32) -> Result<DeltaMeasure> {
        let d = dyadic_side(level);
        let cell = |x: f64| {
            let y = self.spec.psi(x);
            ((x / d).floor() as i64, (y / d).floor() as i64)
        };
        match &self.base {
            CurveBase::Pushforward(atoms) => DeltaMeasure::new(level, atoms.iter().map(|&(x, w)| (cell(x), w))),
            CurveBase::Arclength => {
                let (a, b) = ARC_INTERVAL;
                let steps = (((b - a) / d) as usize * 16).max(64);
                let h = (b - a) / steps as f64;
                DeltaMeasure::normalized(
                    level,
                    (0..steps).map(|i| {
                        let x = a + (i as f64 + 0.5) * h;
                        (cell(x), h * (1.0 + self.spec.raw(x).1.powi(2)).sqrt())
                    }),
                )
            }
        }
    }

    fn arclength_panels(&self, xi: [f64; 2], panels: usize) -> Complex64 {
        let (a, b) = ARC_INTERVAL;
        let (nodes, weights) = gl20();
        let w = (b - a) / panels as f64;
        let mut parts = Vec::with_capacity(panels);
        for p in 0..panels {
            let c = a + (p as f64 + 0.5) * w;
            let mut acc = Complex64::new(0.0, 0.0);
            for (t, wt) in nodes.iter().zip(weights) {
                let x = c + 0.5 * w * t;
                let (psi, d1, _) = self.spec.raw(x);
                let amp = wt * (1.0 + d1 * d1).sqrt();
                acc += Complex64::from_polar(amp, -2.0 * PI * (x * xi[0] + psi * xi[1]));
            }
            parts.push(acc * (0.5 * w));
        }
        let re = pairwise_sum(&parts.iter().map(|z| z.re).collect::<Vec<_>>());
        let im = pairwise_sum(&parts.iter().map(|z| z.im).collect::<Vec<_>>());
        Complex64::new(re, im)
    }
}

impl FourierTransform for CurveMeasure {
    /// Composite 20-point Gauss rule with at least one panel per oscillation,
    /// doubled until two successive refinements agree to 10⁻⁶.
    fn fourier_at(&self, xi: [f64; 2]) -> Result<Complex64> {
        check_frequency(xi)?;
        match &self.base {
            CurveBase::Pushforward(atoms) => {
                let mut acc = Complex64::new(0.0, 0.0);
                for &(x, w) in atoms {
                    acc += Complex64::from_polar(w, -2.0 * PI * (x * xi[0] + self.spec.psi(x) * xi[1]));
                }
                Ok(acc)
            }
            CurveBase::Arclength => {
                let (a, b) = ARC_INTERVAL;
                let top = xi[0].abs() + self.spec.lip_unit() * xi[1].abs();
                let mut panels = ((b - a) * top).ceil().max(1.0) as usize;
                let mass = self.total_mass();
                let too_many = |panels: usize| {
                    LabError::FrequencyTooHigh(format!(
                        "transform at ({}, {}) needs more than {NODE_BUDGET} nodes ({} panels)",
                        xi[0], xi[1], panels
                    ))
                };
                if 2 * panels * 20 > NODE_BUDGET {
                    return Err(too_many(2 * panels));
                }
                let mut prev = self.arclength_panels(xi, panels);
                loop {
                    if 2 * panels * 20 > NODE_BUDGET {
                        return Err(too_many(2 * panels));
                    }
                    panels *= 2;
                    let next = self.arclength_panels(xi, panels);
                    if (next - prev).norm() <= 1e-6 * next.norm() + 1e-13 * mass {
                        return Ok(next);
                    }
                    prev = next;
                }
            }
        }
    }

    fn total_mass(&self) -> f64 {
        match &self.base {
            CurveBase::Pushforward(atoms) => atoms.iter().map(|a| a.1).sum(),
            CurveBase::Arclength => {
                let (a, b) = ARC_INTERVAL;
                crate::numeric::integrate(|x| (1.0 + self.spec.raw(x).1.powi(2)).sqrt(), a, b, 64)
            }
        }
    }
}

/// One row of a radial profile.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ProfilePoint {
    pub r: f64,
    pub value: f64,
    pub normalized: f64,
}

pub const DECAY_DIRECTIONS: usize = 720;

/// sup over 720 directions of |μ̂(Rθ)|, normalized by R^{1/2}. Conjugate
/// symmetry halves the directions that need evaluating.
pub fn decay_profile<M: FourierTransform>(m: &M, radii: &[f64]) -> Result<Vec<ProfilePoint>> {
    let mut out = Vec::with_capacity(radii.len());
    for &r in radii {
        if !(r >= 1.0) {
            return Err(LabError::Domain(format!("radius {r} below 1")));
        }
        let sups: Vec<f64> = (0..DECAY_DIRECTIONS / 2)
            .into_par_iter()
            .map(|j| {
                let th = 2.0 * PI * j as f64 / DECAY_DIRECTIONS as f64;
                m.fourier_at([r * th.cos(), r * th.sin()]).map(|z| z.norm())
            })
            .collect::<Result<_>>()?;
        let value = sups.into_iter().fold(0.0, f64::max);
        out.push(ProfilePoint { r, value, normalized: value * r.sqrt() });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum L6Method {
    /// Real-space σ∗σ∗σ on a padded grid, transformed once.
    TripleConvolution,
    /// σ̂ evaluated on the frequency lattice directly, cubed.
    Direct,
}

/// Largest grid for the triple-convolution route.
pub const TRIPLE_GRID_CAP: usize = 2048;

/// ‖σ̂‖⁶ over the open balls B(R), with σ discretized to level log₂(1/δ).
/// Frequencies are sampled at spacing 1/(Mδ) with M ≥ 4·(support width in
/// cells), which is alias-free for the triple convolution. The normalized
/// column is value/R.
pub fn l6_profile(sigma: &CurveMeasure, radii: &[f64], delta: f64) -> Result<Vec<ProfilePoint>> {
    let level = crate::dyadic::level_of(delta)?;
    let mu = sigma.discretize(level)?;
    let m = l6_grid(&mu)?;
    let method = if m <= TRIPLE_GRID_CAP { L6Method::TripleConvolution } else { L6Method::Direct };
    l6_profile_with(&mu, radii, method)
}

fn l6_grid(mu: &DeltaMeasure) -> Result<usize> {
    let (x0, x1, y0, y1) = mu.bbox().ok_or_else(|| LabError::Domain("empty measure".into()))?;
    let width = ((x1 - x0).max(y1 - y0) + 1) as usize;
    Ok(next_pow2(4 * width).max(16))
}

pub fn l6_profile_with(mu: &DeltaMeasure, radii: &[f64], method: L6Method) -> Result<Vec<ProfilePoint>> {
    let delta = mu.delta();
    let rmax = radii.iter().copied().fold(0.0, f64::max);
    if rmax > 0.25 / delta {
        return Err(LabError::Resolution(format!("radius {rmax} beyond the band 1/(4 delta) = {}", 0.25 / delta)));
    }
    if radii.iter().any(|r| !(*r >= 0.0)) {
        return Err(LabError::Domain("negative radius".into()));
    }
    let m = l6_grid(mu)?;
    let step = 1.0 / (m as f64 * delta);
    let kmax = (rmax / step).ceil() as usize + 1;
    // (|ξ|, |σ̂(ξ)|⁶ Δ²) for every lattice point in the closed ball of radius rmax
    let samples: Vec<(f64, f64)> = match method {
        L6Method::TripleConvolution => {
            if m > TRIPLE_GRID_CAP * 2 {
                return Err(LabError::Budget { needed: (m * m) as u128, budget: (4 * TRIPLE_GRID_CAP * TRIPLE_GRID_CAP) as u128 });
            }
            let (x0, _, y0, _) = mu.bbox().expect("non-empty");
            let mut a = vec![Complex64::new(0.0, 0.0); m * m];
            for ((x, y), w) in mu.iter() {
                a[(y - y0) as usize * m + (x - x0) as usize].re = w;
            }
            let fft = Fft2::new(m, m);
            fft.forward(&mut a);
            for z in a.iter_mut() {
                *z = *z * *z * *z;
            }
            fft.inverse(&mut a);
            let scale = 1.0 / (m * m) as f64;
            for z in a.iter_mut() {
                *z *= scale;
            }
            fft.forward(&mut a);
            let mut out = Vec::new();
            for r in 0..m {
                let ky = signed_index(r, m);
                for c in 0..m {
                    let kx = signed_index(c, m);
                    let rad = step * ((kx * kx + ky * ky) as f64).sqrt();
                    if rad <= rmax {
                        out.push((rad, a[r * m + c].norm_sqr() * step * step));
                    }
                }
            }
            out
        }
        L6Method::Direct => direct_l6_samples(mu, m, step, kmax, rmax),
    };
    let mut samples = samples;
    samples.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out = Vec::with_capacity(radii.len());
    for &r in radii {
        let cut = samples.partition_point(|s| s.0 < r);
        let value = pairwise_sum(&samples[..cut].iter().map(|s| s.1).collect::<Vec<_>>());
        out.push(ProfilePoint { r, value, normalized: if r > 0.0 { value / r } else { 0.0 } });
    }
    Ok(out)
}

/// Lattice values of |σ̂|⁶ Δ² on the upper half-plane, doubled for ky > 0.
/// Columns are summed in y directly, then an FFT along x does every kx at once.
fn direct_l6_samples(mu: &DeltaMeasure, m: usize, step: f64, kmax: usize, rmax: f64) -> Vec<(f64, f64)> {
    let delta = mu.delta();
    let (x0, _, _, _) = mu.bbox().expect("non-empty");
    let mut cols: Vec<(usize, Vec<(f64, f64)>)> = Vec::new();
    for ((x, y), w) in mu.iter() {
        let ix = (x - x0) as usize;
        match cols.last_mut() {
            Some(c) if c.0 == ix => c.1.push(((y as f64 + 0.5) * delta, w)),
            _ => cols.push((ix, vec![((y as f64 + 0.5) * delta, w)])),
        }
    }
    let plan = rustfft::FftPlanner::new().plan_fft_forward(m);
    (0..=kmax)
        .into_par_iter()
        .flat_map_iter(|ky| {
            let eta = ky as f64 * step;
            let mut row = vec![Complex64::new(0.0, 0.0); m];
            for (ix, pts) in &cols {
                let mut acc = Complex64::new(0.0, 0.0);
                for &(y, w) in pts {
                    acc += Complex64::from_polar(w, -2.0 * PI * y * eta);
                }
                row[*ix] = acc;
            }
            plan.process(&mut row);
            let weight = if ky == 0 { 1.0 } else { 2.0 };
            let mut out = Vec::new();
            for (c, z) in row.iter().enumerate() {
                let kx = signed_index(c, m);
                let rad = step * ((kx * kx) as f64 + (ky * ky) as f64).sqrt();
                if rad <= rmax {
                    out.push((rad, weight * z.norm_sqr().powi(3) * step * step));
                }
            }
            out
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RVariant {
    /// f ∗ μ.
    R,
    /// f ∗ μ̃ where μ̃ lives on the graph of −ψ(−x).
    RTilde,
}

/// Arclength measure deposited bilinearly on the nodes, origin at index 0.
fn arclength_kernel(spec: &CurveSpec, variant: RVariant, n: usize, extent: f64) -> Vec<Complex64> {
    let h = extent / n as f64;
    let (a, b) = ARC_INTERVAL;
    let steps = ((b - a) / h * 8.0).ceil() as usize;
    let dx = (b - a) / steps as f64;
    let mut k = vec![Complex64::new(0.0, 0.0); n * n];
    let wrap = |i: i64| i.rem_euclid(n as i64) as usize;
    for i in 0..steps {
        let x = a + (i as f64 + 0.5) * dx;
        let (px, py, slope) = match variant {
            RVariant::R => {
                let (p, d, _) = spec.raw(x);
                (x, p, d)
            }
            RVariant::RTilde => {
                let (p, d, _) = spec.raw(-x);
                (x, -p, d)
            }
        };
        let w = dx * (1.0 + slope * slope).sqrt();
        let (u, v) = (px / h, py / h);
        let (iu, iv) = (u.floor(), v.floor());
        let (fu, fv) = (u - iu, v - iv);
        let (iu, iv) = (iu as i64, iv as i64);
        for (du, dv, c) in [(0, 0, (1.0 - fu) * (1.0 - fv)), (1, 0, fu * (1.0 - fv)), (0, 1, (1.0 - fu) * fv), (1, 1, fu * fv)] {
            k[wrap(iv + dv) * n + wrap(iu + du)].re += w * c;
        }
    }
    k
}

fn curve_box(spec: &CurveSpec, variant: RVariant) -> (f64, f64, f64, f64) {
    let (lo, hi) = spec.range_on(-1.0, 1.0);
    match variant {
        RVariant::R => (-1.0, 1.0, lo, hi),
        RVariant::RTilde => (-1.0, 1.0, -hi, -lo),
    }
}

fn check_r_support(f: &GridField, spec: &CurveSpec, variant: RVariant) -> Result<()> {
    let n = f.n;
    let q = 0.25 * f.extent;
    let peak = f.values.iter().map(|z| z.norm()).fold(0.0, f64::max);
    for iy in 0..n {
        for ix in 0..n {
            let (x, y) = f.position(ix, iy);
            if (x.abs() > q || y.abs() > q) && f.values[iy * n + ix].norm() > 1e-12 * peak {
                return Err(LabError::Support(format!("field is not supported in the central quarter: value at ({x}, {y})")));
            }
        }
    }
    let (cx0, cx1, cy0, cy1) = curve_box(spec, variant);
    let half = 0.5 * f.extent;
    if cx0 - q < -half || cx1 + q >= half || cy0 - q < -half || cy1 + q >= half {
        return Err(LabError::Support("curve plus central quarter does not fit in the box".into()));
    }
    Ok(())
}

/// Grid convolution of f with arclength on Γ, or on the reflected curve.
pub fn r_operator(f: &GridField, spec: &CurveSpec, variant: RVariant) -> Result<GridField> {
    check_r_support(f, spec, variant)?;
    let n = f.n;
    let fft = Fft2::new(n, n);
    let mut k = arclength_kernel(spec, variant, n, f.extent);
    let mut g = f.values.clone();
    fft.forward(&mut k);
    fft.forward(&mut g);
    for (a, b) in g.iter_mut().zip(&k) {
        *a *= b;
    }
    fft.inverse(&mut g);
    let scale = 1.0 / (n * n) as f64;
    for z in g.iter_mut() {
        *z *= scale;
    }
    GridField::new(n, f.extent, g)
}

/// One row of the Sobolev suite.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SobolevRow {
    pub variant: RVariant,
    pub s: f64,
    pub n: usize,
    pub max_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SobolevReport {
    pub extent: f64,
    pub trials: usize,
    pub rows: Vec<SobolevRow>,
}

impl SobolevReport {
    /// max/min − 1 of the per-grid maxima for one (variant, s).
    pub fn drift(&self, variant: RVariant, s: f64) -> f64 {
        let v: Vec<f64> = self.rows.iter().filter(|r| r.variant == variant && r.s == s).map(|r| r.max_ratio).collect();
        let hi = v.iter().copied().fold(f64::MIN, f64::max);
        let lo = v.iter().copied().fold(f64::MAX, f64::min);
        hi / lo - 1.0
    }
}

const FIELD_WIDTH: f64 = 0.25;
const FIELD_MODES: usize = 8;
const FIELD_BAND: f64 = 4.0;

/// Gaussian envelope times random cosines with frequencies in the disc of radius 4.
pub fn random_band_limited(seed: SeedTree, n: usize, extent: f64) -> Result<GridField> {
    let mut rng = seed.rng();
    let modes: Vec<(f64, f64, f64, f64)> = (0..FIELD_MODES)
        .map(|_| {
            let r = FIELD_BAND * rng.gen::<f64>().sqrt();
            let th = rng.gen::<f64>() * 2.0 * PI;
            (r * th.cos(), r * th.sin(), rng.gen_range(-1.0..1.0), rng.gen::<f64>() * 2.0 * PI)
        })
        .collect();
    GridField::from_fn(n, extent, |x, y| {
        let env = (-(x * x + y * y) / (2.0 * FIELD_WIDTH * FIELD_WIDTH)).exp();
        let wave: f64 = modes.iter().map(|&(a, b, amp, ph)| amp * (2.0 * PI * (a * x + b * y) + ph).cos()).sum();
        Complex64::new(env * wave, 0.0)
    })
}

/// Smallest power-of-two box (at least 8) holding the fields and their images.
pub fn suite_extent(spec: &CurveSpec) -> f64 {
    let (_, _, lo, hi) = curve_box(spec, RVariant::R);
    let need = 2.0 * (2.0 + lo.abs().max(hi.abs()).max(1.0));
    let mut l = 8.0;
    while l < need {
        l *= 2.0;
    }
    l
}

/// max over random fields of ‖ℛf‖_{Ḣ^{s+1/2}} / ‖f‖_{Ḣ^s} for both variants,
/// per exponent and grid size. The image is formed on the Fourier side as
/// the product of the field and kernel spectra, which is what [`r_operator`]
/// computes in space.
pub fn sobolev_ratio_suite(spec: &CurveSpec, s_list: &[f64], trials: usize, grids: &[usize], seed: SeedTree) -> Result<SobolevReport> {
    for &s in s_list {
        if !(-0.5..=0.5).contains(&s) {
            return Err(LabError::Domain(format!("exponent {s} outside [-1/2, 1/2]")));
        }
    }
    let extent = suite_extent(spec);
    let mut rows = Vec::new();
    for &n in grids {
        let kernels: Vec<(RVariant, Vec<Complex64>)> = [RVariant::R, RVariant::RTilde]
            .into_iter()
            .map(|v| {
                let mut k = arclength_kernel(spec, v, n, extent);
                Fft2::new(n, n).forward(&mut k);
                (v, k)
            })
            .collect();
        let mut best = vec![0.0f64; 2 * s_list.len()];
        for t in 0..trials {
            let f = random_band_limited(seed.child("field", t as u64), n, extent)?;
            check_r_support(&f, spec, RVariant::R)?;
            check_r_support(&f, spec, RVariant::RTilde)?;
            let sp = f.spectrum();
            for (vi, (_, k)) in kernels.iter().enumerate() {
                let image = Spectrum {
                    n,
                    extent,
                    data: sp.data.iter().zip(k).map(|(a, b)| a * b).collect(),
                };
                for (si, &s) in s_list.iter().enumerate() {
                    let num = sobolev_from_spectrum(&image, s + 0.5).value;
                    let den = sobolev_from_spectrum(&sp, s).value;
                    let slot = &mut best[vi * s_list.len() + si];
                    *slot = slot.max(num / den);
                }
            }
        }
        for (vi, (v, _)) in kernels.iter().enumerate() {
            for (si, &s) in s_list.iter().enumerate() {
                rows.push(SobolevRow { variant: *v, s, n, max_ratio: best[vi * s_list.len() + si] });
            }
        }
    }
    Ok(SobolevReport { extent, trials, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::integrate;
    use rand::SeedableRng;

    fn parabola_arc() -> CurveMeasure {
        CurveMeasure::arclength(CurveSpec::parabola())
    }

    #[test]
    fn arclength_transform_at_zero() {
        let m = parabola_arc();
        let v = m.fourier_at([0.0, 0.0]).unwrap();
        let exact = 5f64.sqrt() + 2f64.asinh() / 2.0;
        assert!((v.re - exact).abs() < 1e-12 && v.im.abs() < 1e-15);
        assert!((m.total_mass() - exact).abs() < 1e-12);
        assert!((exact - 2.95789).abs() < 1e-5);
    }

    #[test]
    fn arclength_transform_against_dense_sum() {
        let m = parabola_arc();
        for xi in [[3.0, -7.5], [40.0, 25.0], [-0.5, 120.0]] {
            let q = m.fourier_at(xi).unwrap();
            let n = 400_000;
            let h = 2.0 / n as f64;
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..n {
                let x = -1.0 + (i as f64 + 0.5) * h;
                acc += Complex64::from_polar(h * (1.0 + 4.0 * x * x).sqrt(), -2.0 * PI * (x * xi[0] + x * x * xi[1]));
            }
            assert!((q - acc).norm() < 1e-6 * m.total_mass(), "{xi:?}: {q} vs {acc}");
        }
    }

    #[test]
    fn conjugate_symmetry() {
        let m = CurveMeasure::arclength(CurveSpec::exponential());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let xi = [rng.gen_range(-200.0..200.0), rng.gen_range(-200.0..200.0)];
            let a = m.fourier_at(xi).unwrap();
            let b = m.fourier_at([-xi[0], -xi[1]]).unwrap();
            assert!((a - b.conj()).norm() < 1e-6 * m.total_mass());
        }
    }

    #[test]
    fn frequency_limits() {
        let m = parabola_arc();
        assert!(matches!(m.fourier_at([70000.0, 0.0]), Err(LabError::Domain(_))));
        let steep = CurveSpec::polynomial("steep", &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 3000.0]).unwrap();
        let sm = CurveMeasure::arclength(steep);
        assert!(matches!(sm.fourier_at([0.0, 60000.0]), Err(LabError::FrequencyTooHigh(_))));
    }

    #[test]
    fn delta_measure_matches_padded_grid_transform() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let level = 5;
        let mu = DeltaMeasure::normalized(level, (0..40).map(|_| ((rng.gen_range(0..32), rng.gen_range(0..32)), rng.gen::<f64>()))).unwrap();
        let m = 128;
        let mut a = vec![Complex64::new(0.0, 0.0); m * m];
        for ((x, y), w) in mu.iter() {
            a[y as usize * m + x as usize].re = w;
        }
        Fft2::new(m, m).forward(&mut a);
        let d = mu.delta();
        let step = 1.0 / (m as f64 * d);
        for (r, c) in [(0usize, 0usize), (3, 5), (17, 100), (64, 64), (127, 1)] {
            let xi = [signed_index(c, m) as f64 * step, signed_index(r, m) as f64 * step];
            let direct = mu.fourier_at(xi).unwrap();
            // midpoint offset δ/2 in each coordinate
            let shift = Complex64::from_polar(1.0, -PI * d * (xi[0] + xi[1]));
            assert!((direct - a[r * m + c] * shift).norm() < 1e-8);
        }
    }

    #[test]
    fn plancherel_on_grid() {
        let f = random_band_limited(SeedTree(11), 128, 8.0).unwrap();
        let direct = f.l2_norm_sq();
        let fourier = sobolev_norm(&f, 0.0).unwrap().value.powi(2);
        assert!((direct - fourier).abs() < 1e-10 * direct);
    }

    #[test]
    fn sobolev_dilation_law() {
        let f = random_band_limited(SeedTree(12), 128, 8.0).unwrap();
        let g = GridField::new(128, 16.0, f.values().to_vec()).unwrap();
        for s in [-0.5, 0.25, 1.0] {
            let a = sobolev_norm(&f, s).unwrap().value;
            let b = sobolev_norm(&g, s).unwrap().value;
            assert!((b / a - 2f64.powf(1.0 - s)).abs() < 1e-10);
        }
    }

    #[test]
    fn sobolev_gaussian_radial_oracle() {
        // f = exp(−π|x|²) has f̂ = exp(−π|ξ|²)
        let f = GridField::from_fn(512, 64.0, |x, y| Complex64::new((-PI * (x * x + y * y)).exp(), 0.0)).unwrap();
        for s in [-0.5, -0.25, 0.0, 0.5, 1.0] {
            // ‖f‖² = 2π∫ρ^{2s+1}e^{−2πρ²}dρ; ρ = u^{1/(s+1)} makes the integrand smooth
            let e = 1.0 / (s + 1.0);
            let exact = (2.0 * PI * integrate(|u| e * u * (-2.0 * PI * u.powf(2.0 * e)).exp(), 0.0, 4f64.powf(s + 1.0), 400)).sqrt();
            let got = sobolev_norm(&f, s).unwrap();
            let full = (got.value.powi(2) + got.truncation).sqrt();
            if s < -0.4 {
                assert!(got.value < exact && (full - exact).abs() < 0.01 * exact, "s {s}: {} {full} {exact}", got.value);
            } else {
                assert!((got.value - exact).abs() < 0.01 * exact, "s {s}: {} vs {exact}", got.value);
            }
        }
    }

    #[test]
    fn r_operator_of_point_mass() {
        let n = 256;
        let mut v = vec![Complex64::new(0.0, 0.0); n * n];
        v[(n / 2) * n + n / 2] = Complex64::new(1.0, 0.0);
        let f = GridField::new(n, 8.0, v).unwrap();
        let spec = CurveSpec::parabola();
        let out = r_operator(&f, &spec, RVariant::R).unwrap();
        let total: f64 = out.values().iter().map(|z| z.re).sum();
        assert!((total - parabola_arc().total_mass()).abs() < 1e-5);
        let h = f.spacing();
        for iy in 0..n {
            for ix in 0..n {
                let z = out.values()[iy * n + ix];
                if z.norm() > 1e-12 {
                    let (x, y) = out.position(ix, iy);
                    let d = crate::curve::curve_distance(&spec, [0.0, 0.0], [x, y]).unwrap();
                    assert!(d <= 1.5 * h, "mass off the curve at ({x}, {y})");
                }
            }
        }
        let tilde = r_operator(&f, &spec, RVariant::RTilde).unwrap();
        let below: f64 = tilde.values().iter().enumerate().filter(|(i, _)| out.position(i % n, i / n).1 <= 1e-12).map(|(_, z)| z.re).sum();
        assert!((below - total).abs() < 1e-9 * total);
    }

    #[test]
    fn r_operator_is_linear_and_checks_support() {
        let spec = CurveSpec::parabola();
        let f = random_band_limited(SeedTree(1), 128, 8.0).unwrap();
        let g = random_band_limited(SeedTree(2), 128, 8.0).unwrap();
        let sum = GridField::new(128, 8.0, f.values().iter().zip(g.values()).map(|(a, b)| a + b).collect()).unwrap();
        let (rf, rg, rs) = (
            r_operator(&f, &spec, RVariant::R).unwrap(),
            r_operator(&g, &spec, RVariant::R).unwrap(),
            r_operator(&sum, &spec, RVariant::R).unwrap(),
        );
        for i in 0..128 * 128 {
            assert!((rf.values()[i] + rg.values()[i] - rs.values()[i]).norm() < 1e-12);
        }
        let wide = GridField::from_fn(128, 8.0, |x, _| Complex64::new((-x * x).exp(), 0.0)).unwrap();
        assert!(matches!(r_operator(&wide, &spec, RVariant::R), Err(LabError::Support(_))));
    }

    #[test]
    fn sobolev_suite_is_grid_stable() {
        let rep = sobolev_ratio_suite(&CurveSpec::parabola(), &[-0.5, 0.0, 0.5], 4, &[128, 256], SeedTree(5)).unwrap();
        assert_eq!(rep.rows.len(), 12);
        for v in [RVariant::R, RVariant::RTilde] {
            for s in [-0.5, 0.0, 0.5] {
                assert!(rep.drift(v, s) < 0.2, "{v:?} {s}: {}", rep.drift(v, s));
            }
        }
    }

    #[test]
    fn decay_profile_examples() {
        let m = parabola_arc();
        let p = decay_profile(&m, &[1.0, 4.0, 16.0]).unwrap();
        assert!(p[0].value <= m.total_mass());
        assert!(p.iter().all(|q| q.normalized < 4.0 * m.total_mass()));
        // horizontal direction decays like 1/R
        let rs = [64.0, 128.0, 256.0, 512.0];
        let v: Vec<f64> = rs.iter().map(|&r| m.fourier_at([r, 0.0]).unwrap().norm() * r).collect();
        assert!(v.iter().all(|x| *x < 2.0), "{v:?}");
    }

    #[test]
    fn decay_profile_translation_invariant() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let mu = DeltaMeasure::normalized(6, (0..30).map(|_| ((rng.gen_range(0..64), rng.gen_range(0..64)), rng.gen::<f64>()))).unwrap();
        let a = decay_profile(&mu, &[1.0, 5.0, 20.0]).unwrap();
        let b = decay_profile(&mu.translate(17, -9), &[1.0, 5.0, 20.0]).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p.value - q.value).abs() < 1e-12);
        }
    }

    fn small_cantor(level: u32) -> DeltaMeasure {
        let atoms: Vec<(f64, f64)> = (0..16).map(|i| (i as f64 / 16.0 + (i % 3) as f64 * 0.01, 1.0 / 16.0)).collect();

        CurveMeasure::pushforward(CurveSpec::parabola(), atoms).unwrap().discretize(level).unwrap()
    }

    #[test]
    fn l6_methods_agree() {
        let mu = small_cantor(7);
        let radii = [0.0, 2.0, 8.0, 16.0, 31.0];
        let a = l6_profile_with(&mu, &radii, L6Method::TripleConvolution).unwrap();
        let b = l6_profile_with(&mu, &radii, L6Method::Direct).unwrap();
        assert_eq!(a[0].value, 0.0);
        for (p, q) in a.iter().zip(&b).skip(1) {
            assert!((p.value - q.value).abs() < 1e-9 * q.value, "{} vs {}", p.value, q.value);
        }
        for w in a.windows(2) {
            assert!(w[1].value >= w[0].value);
        }
        assert!(matches!(l6_profile_with(&mu, &[40.0], L6Method::Direct), Err(LabError::Resolution(_))));
    }

    #[test]
    fn l6_lattice_sum_matches_fine_quadrature() {
        let mu = small_cantor(6);
        for r in [2.0, 8.0] {
            let coarse = l6_profile_with(&mu, &[r], L6Method::Direct).unwrap()[0].value;
            let h = 1.0 / 48.0;
            let k = (r / h).ceil() as i64;
            let mut acc = 0.0;
            for i in -k..=k {
                for j in -k..=k {
                    let xi = [i as f64 * h, j as f64 * h];
                    if xi[0].hypot(xi[1]) < r {
                        acc += mu.fourier_at(xi).unwrap().norm_sqr().powi(3) * h * h;
                    }
                }
            }
            assert!((coarse - acc).abs() < 0.05 * acc, "R {r}: {coarse} vs {acc}");
        }
    }
}
