//! Convex curves ψ, their translates Γ_q and curved δ-tubes.

use serde::{Deserialize, Serialize};

use crate::dyadic::DyadicCube;
use crate::error::{LabError, Result};

/// Half-width of the evaluation domain.
pub const DOMAIN: f64 = 3.0;

/// Relative geometric tolerance: tol_geo = δ · GEO_TOL.
pub const GEO_TOL: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveKind {
    Builtin,
    Polynomial,
}

/// Serializable form of a curve spec.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub name: String,
    pub kind: CurveKind,
    #[serde(default)]
    pub coefficients: Vec<f64>,
    #[serde(default)]
    pub kappa_min: Option<f64>,
    #[serde(default)]
    pub lip: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
enum Shape {
    Parabola,
    Exp,
    /// Ascending powers.
    Poly(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurveSpec {
    name: String,
    shape: Shape,
    kappa_min: f64,
    lip: f64,
    vertex: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Branch {
    Full,
    Increasing,
    Decreasing,
}

impl CurveSpec {
    /// ψ(x) = x².
    pub fn parabola() -> Self {
        Self::finish("parabola".into(), Shape::Parabola, 2.0, 2.0 * DOMAIN)
    }

    /// ψ(x) = eˣ.
    pub fn exponential() -> Self {
        Self::finish("exp".into(), Shape::Exp, (-DOMAIN).exp(), DOMAIN.exp())
    }

    /// Polynomial with ascending coefficients; ψ″ > 0 is certified by
    /// interval evaluation over [−3, 3].
    pub fn polynomial(name: &str, coefficients: &[f64]) -> Result<Self> {
        if coefficients.len() < 3 || coefficients.iter().any(|c| !c.is_finite()) {
            return Err(LabError::Domain(
                "a convex polynomial needs finite coefficients up to at least degree 2".into(),
            ));
        }
        let d1 = derivative(coefficients);
        let d2 = derivative(&d1);
        let (kappa, _) = interval_bounds(&d2);
        let (lo1, hi1) = interval_bounds(&d1);
        if kappa <= 0.0 {
            return Err(LabError::Domain(format!(
                "could not certify psi'' > 0 on [-3, 3] for '{name}' (lower bound {kappa})"
            )));
        }
        let lip = lo1.abs().max(hi1.abs());
        Ok(Self::finish(name.into(), Shape::Poly(coefficients.to_vec()), kappa, lip))
    }

    pub fn from_record(rec: &CurveRecord) -> Result<Self> {
        let spec = match rec.kind {
            CurveKind::Builtin => match rec.name.as_str() {
                "parabola" => Self::parabola(),
                "exp" => Self::exponential(),
                other => return Err(LabError::Parse(format!("unknown builtin curve '{other}'"))),
            },
            CurveKind::Polynomial => Self::polynomial(&rec.name, &rec.coefficients)?,
        };
        if let Some(k) = rec.kappa_min {
            if !(k > 0.0 && k <= spec.kappa_min * (1.0 + 1e-12)) {
                return Err(LabError::Domain(format!(
                    "declared kappa_min {k} is not a valid lower bound (certified {})",
                    spec.kappa_min
                )));
            }
        }
        if let Some(l) = rec.lip {
            if !(l >= spec.lip * (1.0 - 1e-12)) {
                return Err(LabError::Domain(format!(
                    "declared lip {l} is below the certified bound {}",
                    spec.lip
                )));
            }
        }
        let mut spec = spec;
        if let Some(k) = rec.kappa_min {
            spec.kappa_min = k;
        }
        if let Some(l) = rec.lip {
            spec.lip = l;
        }
        Ok(spec)
    }

    pub fn to_record(&self) -> CurveRecord {
        let (kind, coefficients) = match &self.shape {
            Shape::Poly(c) => (CurveKind::Polynomial, c.clone()),
            _ => (CurveKind::Builtin, vec![]),
        };
        CurveRecord {
            name: self.name.clone(),
            kind,
            coefficients,
            kappa_min: Some(self.kappa_min),
            lip: Some(self.lip),
        }
    }

    fn finish(name: String, shape: Shape, kappa_min: f64, lip: f64) -> Self {
        let mut spec = CurveSpec { name, shape, kappa_min, lip, vertex: 0.0 };
        spec.vertex = spec.argmin_on(-1.0, 1.0);
        spec
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn kappa_min(&self) -> f64 {
        self.kappa_min
    }
    pub fn lip(&self) -> f64 {
        self.lip
    }
    pub fn is_parabola(&self) -> bool {
        self.shape == Shape::Parabola
    }

    /// (ψ, ψ′, ψ″) at x ∈ [−3, 3].
    pub fn eval(&self, x: f64) -> Result<(f64, f64, f64)> {
        if !(x.abs() <= DOMAIN) {
            return Err(LabError::Domain(format!("abscissa {x} outside [-3, 3]")));
        }
        Ok(self.raw(x))
    }

    #[inline]
    pub(crate) fn raw(&self, x: f64) -> (f64, f64, f64) {
        match &self.shape {
            Shape::Parabola => (x * x, 2.0 * x, 2.0),
            Shape::Exp => {
                let e = x.exp();
                (e, e, e)
            }
            Shape::Poly(c) => {
                let (mut p, mut d1, mut d2) = (0.0, 0.0, 0.0);
                for &a in c.iter().rev() {
                    d2 = d2 * x + 2.0 * d1;
                    d1 = d1 * x + p;
                    p = p * x + a;
                }
                (p, d1, d2)
            }
        }
    }

    #[inline]
    pub(crate) fn psi(&self, x: f64) -> f64 {
        match &self.shape {
            Shape::Parabola => x * x,
            Shape::Exp => x.exp(),
            Shape::Poly(_) => self.raw(x).0,
        }
    }

    /// Minimum point of ψ on [−1, 1]; the split abscissa of a tube.
    pub fn split_point(&self) -> f64 {
        self.vertex
    }

    fn argmin_on(&self, a: f64, b: f64) -> f64 {
        if self.raw(a).1 >= 0.0 {
            return a;
        }
        if self.raw(b).1 <= 0.0 {
            return b;
        }
        let (mut lo, mut hi) = (a, b);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let d = self.raw(mid).1;
            if d == 0.0 {
                return mid;
            }
            if d < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= f64::EPSILON * hi.abs().max(1e-300) {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    /// Local abscissa range of a branch, inside [−1, 1].
    pub fn branch_range(&self, branch: Branch) -> (f64, f64) {
        match branch {
            Branch::Full => (-1.0, 1.0),
            Branch::Decreasing => (-1.0, self.vertex),
            Branch::Increasing => (self.vertex, 1.0),
        }
    }

    /// Range of ψ over [a, b] ⊂ [−1, 1].
    #[inline]
    pub(crate) fn range_on(&self, a: f64, b: f64) -> (f64, f64) {
        let hi = self.psi(a).max(self.psi(b));
        let lo = self.psi(self.vertex.clamp(a, b));
        (lo, hi)
    }

    /// Largest |ψ′| on [−1, 1].
    pub fn lip_unit(&self) -> f64 {
        self.raw(-1.0).1.abs().max(self.raw(1.0).1.abs())
    }

    /// Min over u ∈ [lo, hi] of |(u, ψ(u)) − (a, b)|.
    pub(crate) fn local_distance(&self, lo: f64, hi: f64, a: f64, b: f64) -> f64 {
        let f = |u: f64| {
            let dy = self.psi(u) - b;
            (u - a) * (u - a) + dy * dy
        };
        if hi <= lo {
            return f(lo).sqrt();
        }
        let g = |u: f64| {
            let (p, d, _) = self.raw(u);
            (u - a) + (p - b) * d
        };
        const N: usize = 33;
        let h = (hi - lo) / (N - 1) as f64;
        let us: Vec<f64> = (0..N).map(|i| if i == N - 1 { hi } else { lo + i as f64 * h }).collect();
        let fs: Vec<f64> = us.iter().map(|&u| f(u)).collect();
        let mut cands: Vec<usize> = (0..N)
            .filter(|&i| (i == 0 || fs[i] <= fs[i - 1]) && (i == N - 1 || fs[i] <= fs[i + 1]))
            .collect();
        cands.sort_by(|&i, &j| fs[i].total_cmp(&fs[j]));
        cands.truncate(3);
        let mut best = fs.iter().cloned().fold(f64::INFINITY, f64::min);
        for &i in &cands {
            let l = us[i.saturating_sub(1)];
            let r = us[(i + 1).min(N - 1)];
            let (gl, gr) = (g(l), g(r));
            let u = if gl < 0.0 && gr > 0.0 {
                // safeguarded bisection on the derivative
                let (mut x0, mut x1) = (l, r);
                for _ in 0..80 {
                    let m = 0.5 * (x0 + x1);
                    if g(m) < 0.0 {
                        x0 = m;
                    } else {
                        x1 = m;
                    }
                    if x1 - x0 < 1e-16 {
                        break;
                    }
                }
                0.5 * (x0 + x1)
            } else {
                golden_min(&f, l, r)
            };
            best = best.min(f(u));
        }
        best.max(0.0).sqrt()
    }
}

fn golden_min<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64) -> f64 {
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..90 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
        if b - a < 1e-15 {
            break;
        }
    }
    0.5 * (a + b)
}

fn derivative(c: &[f64]) -> Vec<f64> {
    c.iter().enumerate().skip(1).map(|(i, a)| i as f64 * a).collect()
}

/// Interval Horner enclosure of a polynomial over [−3, 3], split into small pieces.
fn interval_bounds(c: &[f64]) -> (f64, f64) {
    const PIECES: usize = 1200;
    let mut lo_all = f64::INFINITY;
    let mut hi_all = f64::NEG_INFINITY;
    for i in 0..PIECES {
        let a = -DOMAIN + 2.0 * DOMAIN * i as f64 / PIECES as f64;
        let b = -DOMAIN + 2.0 * DOMAIN * (i + 1) as f64 / PIECES as f64;
        let (mut lo, mut hi) = (0.0f64, 0.0f64);
        for &coef in c.iter().rev() {
            let prods = [lo * a, lo * b, hi * a, hi * b];
            let pl = prods.iter().cloned().fold(f64::INFINITY, f64::min);
            let ph = prods.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            // widen slightly for rounding
            lo = (pl + coef) - 1e-12 * (pl.abs() + coef.abs());
            hi = (ph + coef) + 1e-12 * (ph.abs() + coef.abs());
        }
        lo_all = lo_all.min(lo);
        hi_all = hi_all.max(hi);
    }
    (lo_all, hi_all)
}

/// Closed δ-neighbourhood of one branch of q + Γ.
#[derive(Clone, Copy, Debug)]
pub struct CurvedTube<'a> {
    pub q: [f64; 2],
    pub delta: f64,
    pub spec: &'a CurveSpec,
    pub branch: Branch,
}

impl<'a> CurvedTube<'a> {
    pub fn new(spec: &'a CurveSpec, q: [f64; 2], delta: f64) -> Result<Self> {
        Self::with_branch(spec, q, delta, Branch::Full)
    }

    pub fn with_branch(spec: &'a CurveSpec, q: [f64; 2], delta: f64, branch: Branch) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(LabError::Domain(format!("tube width {delta} must be positive")));
        }
        if !(q[0].abs() <= 1.0 && q[1].abs() <= 1.0) {
            return Err(LabError::Domain(format!("tube center {q:?} outside [-1,1]^2")));
        }
        Ok(CurvedTube { q, delta, spec, branch })
    }

    pub fn tol(&self) -> f64 {
        self.delta * GEO_TOL
    }

    pub fn local_range(&self) -> (f64, f64) {
        self.spec.branch_range(self.branch)
    }

    /// Does the closed tube meet the closed axis-aligned box [x0,x1]×[y0,y1]?
    pub fn meets_box(&self, x0: f64, x1: f64, y0: f64, y1: f64) -> bool {
        let (lo, hi) = self.local_range();
        let e = self.delta + self.tol();
        let (x0, x1) = (x0 - self.q[0], x1 - self.q[0]);
        let (y0, y1) = (y0 - self.q[1], y1 - self.q[1]);
        // box widened horizontally
        let (a, b) = ((x0 - e).max(lo), (x1 + e).min(hi));
        if a <= b {
            let (pl, ph) = self.spec.range_on(a, b);
            if pl <= y1 && ph >= y0 {
                return true;
            }
        } else {
            return false;
        }
        // box widened vertically
        let (a, b) = (x0.max(lo), x1.min(hi));
        if a <= b {
            let (pl, ph) = self.spec.range_on(a, b);
            if pl <= y1 + e && ph >= y0 - e {
                return true;
            }
        }
        // corner discs
        for &(cx, cy) in &[(x0, y0), (x0, y1), (x1, y0), (x1, y1)] {
            let (a, b) = ((cx - e).max(lo), (cx + e).min(hi));
            if a > b {
                continue;
            }
            let (pl, ph) = self.spec.range_on(a, b);
            if pl > cy + e || ph < cy - e {
                continue;
            }
            if self.spec.local_distance(a, b, cx, cy) <= e {
                return true;
            }
        }
        false
    }
}

/// dist(p, Γ_q) over the full graph x ∈ [x_q − 1, x_q + 1].
pub fn curve_distance(spec: &CurveSpec, q: [f64; 2], p: [f64; 2]) -> Result<f64> {
    if !(q[0].hypot(q[1]) <= 1.0 + 1e-12) {
        return Err(LabError::Domain(format!("center {q:?} outside the unit ball")));
    }
    if !(p[0].abs() <= 4.0 && p[1].abs() <= 4.0) {
        return Err(LabError::Domain(format!("point {p:?} outside [-4,4]^2")));
    }
    Ok(spec.local_distance(-1.0, 1.0, p[0] - q[0], p[1] - q[1]))
}

pub fn tube_cube_intersects(tube: &CurvedTube<'_>, cube: &DyadicCube) -> bool {
    let [x0, y0, x1, y1] = cube.bounds();
    tube.meets_box(x0, x1, y0, y1)
}

/// Split a full tube at the minimum of ψ on [−1, 1].
pub fn monotone_split<'a>(tube: &CurvedTube<'a>) -> Result<(CurvedTube<'a>, CurvedTube<'a>)> {
    if tube.branch != Branch::Full {
        return Err(LabError::Precondition("monotone_split needs a full tube".into()));
    }
    let dec = CurvedTube { branch: Branch::Decreasing, ..*tube };
    let inc = CurvedTube { branch: Branch::Increasing, ..*tube };
    Ok((dec, inc))
}

/// Form-3.1 style test for translates with the same abscissa.
pub fn vertical_pair_may_meet(spec: &CurveSpec, q1: [f64; 2], q2: [f64; 2], delta: f64) -> bool {
    (q1[1] - q2[1]).abs() <= (2.0 * spec.lip() + 1.0) * delta
}

/// Vertical cross-section [L(x), U(x)] of the δ-neighbourhood of q + Γ at abscissa x.
fn cross_section(spec: &CurveSpec, q: [f64; 2], delta: f64, x: f64) -> Option<(f64, f64)> {
    let lx = x - q[0];
    let (a, b) = ((lx - delta).max(-1.0), (lx + delta).min(1.0));
    if a > b {
        return None;
    }
    let r = |u: f64| (delta * delta - (lx - u) * (lx - u)).max(0.0).sqrt();
    let top = |u: f64| -(spec.psi(u) + r(u));
    let bot = |u: f64| spec.psi(u) - r(u);
    let opt = |f: &dyn Fn(f64) -> f64| -> f64 {
        const N: usize = 41;
        let h = (b - a) / (N - 1) as f64;
        let mut best = (f64::INFINITY, a);
        for i in 0..N {
            let u = if i == N - 1 { b } else { a + i as f64 * h };
            let v = f(u);
            if v < best.0 {
                best = (v, u);
            }
        }
        if h > 0.0 {
            let u = golden_min(&f, (best.1 - h).max(a), (best.1 + h).min(b));
            best.0.min(f(u))
        } else {
            best.0
        }
    };
    let hi = -opt(&top);
    let lo = opt(&bot);
    Some((lo + q[1], hi + q[1]))
}

fn pair_section(spec: &CurveSpec, q1: [f64; 2], q2: [f64; 2], delta: f64, x: f64) -> Option<(f64, f64)> {
    let (l1, u1) = cross_section(spec, q1, delta, x)?;
    let (l2, u2) = cross_section(spec, q2, delta, x)?;
    let (l, u) = (l1.max(l2), u1.min(u2));
    (l <= u).then_some((l, u))
}

/// Diameter of Γ_{q1}(δ) ∩ Γ_{q2}(δ), or 0 when empty.
pub fn tube_intersection_diameter(spec: &CurveSpec, q1: [f64; 2], q2: [f64; 2], delta: f64) -> Result<f64> {
    if q1[0] == q2[0] {
        return Err(LabError::Degenerate(format!(
            "equal abscissae x1 = x2 = {}; use vertical_pair_may_meet",
            q1[0]
        )));
    }
    if !(delta > 0.0) {
        return Err(LabError::Domain("delta must be positive".into()));
    }
    let lo = q1[0].max(q2[0]) - 1.0 - delta;
    let hi = q1[0].min(q2[0]) + 1.0 + delta;
    if lo > hi {
        return Ok(0.0);
    }
    // locate the crossing of the two graphs; G is monotone on the overlap
    let g = |x: f64| {
        let x = x.clamp(q1[0] - 1.0, q1[0] + 1.0);
        let y = x.clamp(q2[0] - 1.0, q2[0] + 1.0);
        spec.psi(x - q1[0]) + q1[1] - spec.psi(y - q2[0]) - q2[1]
    };
    let (ol, oh) = (q1[0].max(q2[0]) - 1.0, q1[0].min(q2[0]) + 1.0);
    let root = if ol >= oh {
        0.5 * (ol + oh)
    } else {
        let (gl, gh) = (g(ol), g(oh));
        if gl.signum() == gh.signum() {
            if gl.abs() < gh.abs() { ol } else { oh }
        } else {
            let (mut a, mut b) = (ol, oh);
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if g(m).signum() == gl.signum() {
                    a = m;
                } else {
                    b = m;
                }
            }
            0.5 * (a + b)
        }
    };
    let dx = (q1[0] - q2[0]).abs();
    let w = 4.0 * (2.0 * spec.lip() + 2.0) * delta / (spec.kappa_min() * dx) + 4.0 * delta;
    let (wa, wb) = ((root - w).max(lo), (root + w).min(hi));
    const COARSE: usize = 512;
    let h = (wb - wa) / COARSE as f64;
    let hits: Vec<usize> = (0..=COARSE)
        .filter(|&i| pair_section(spec, q1, q2, delta, wa + i as f64 * h).is_some())
        .collect();
    let (Some(&first), Some(&last)) = (hits.first(), hits.last()) else {
        return Ok(0.0);
    };
    let refine = |inside: f64, outside: f64| {
        let (mut a, mut b) = (inside, outside);
        for _ in 0..60 {
            let m = 0.5 * (a + b);
            if pair_section(spec, q1, q2, delta, m).is_some() {
                a = m;
            } else {
                b = m;
            }
        }
        a
    };
    let xa = if first == 0 { wa } else { refine(wa + first as f64 * h, wa + (first - 1) as f64 * h) };
    let xb = if last == COARSE { wb } else { refine(wa + last as f64 * h, wa + (last + 1) as f64 * h) };
    const FINE: usize = 512;
    let mut pts = Vec::with_capacity(2 * FINE + 2);
    for i in 0..=FINE {
        let x = xa + (xb - xa) * i as f64 / FINE as f64;
        if let Some((l, u)) = pair_section(spec, q1, q2, delta, x) {
            pts.push([x, l]);
            pts.push([x, u]);
        }
    }
    let mut diam2: f64 = 0.0;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let dx = pts[i][0] - pts[j][0];
            let dy = pts[i][1] - pts[j][1];
            diam2 = diam2.max(dx * dx + dy * dy);
        }
    }
    Ok(diam2.sqrt())
}
