//! Problem instances: background potential, single-site bump, coupling
//! density, energy window and the phase-winding bound.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad;

/// A real potential on (part of) the line together with its points of
/// non-smoothness.
pub trait Potential: Send + Sync {
    fn value(&self, x: f64) -> f64;

    /// Appends points in the open interval `(lo, hi)` where the potential may
    /// jump or kink.
    fn breakpoints(&self, lo: f64, hi: f64, out: &mut Vec<f64>);
}

/// Closure-backed potential with explicitly declared breakpoints.
pub struct FnPotential<F> {
    pub f: F,
    pub breaks: Vec<f64>,
}

impl<F: Fn(f64) -> f64 + Send + Sync> FnPotential<F> {
    pub fn new(f: F, breaks: Vec<f64>) -> Self {
        Self { f, breaks }
    }
}

impl<F: Fn(f64) -> f64 + Send + Sync> Potential for FnPotential<F> {
    fn value(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    fn breakpoints(&self, lo: f64, hi: f64, out: &mut Vec<f64>) {
        out.extend(self.breaks.iter().copied().filter(|&b| b > lo && b < hi));
    }
}

/// Piecewise-defined real functions used for `W₀`, `f` and perturbations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    Zero,
    Constant {
        value: f64,
    },
    /// `height` on `[a, b]`, zero elsewhere.
    Indicator {
        a: f64,
        b: f64,
        height: f64,
    },
    /// Piecewise constant: `values[i]` on `[edges[i], edges[i+1])`, zero outside.
    Steps {
        edges: Vec<f64>,
        values: Vec<f64>,
    },
    /// Piecewise linear interpolation of `(xs, ys)`, zero outside `[xs[0], xs[n-1]]`.
    Linear {
        xs: Vec<f64>,
        ys: Vec<f64>,
    },
    /// `offset + amplitude * cos(2π x / period + phase)`.
    Cosine {
        amplitude: f64,
        period: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        offset: f64,
    },
    /// `height * sin²(π (x - a) / (b - a))` on `[a, b]`: a C¹ bump.
    Bump {
        a: f64,
        b: f64,
        height: f64,
    },
    /// `x ↦ base(x + shift)`.
    Shifted {
        base: Box<Profile>,
        shift: f64,
    },
    Sum {
        terms: Vec<Profile>,
    },
}

impl Profile {
    pub fn indicator(a: f64, b: f64, height: f64) -> Self {
        Profile::Indicator { a, b, height }
    }

    pub fn shifted(&self, shift: f64) -> Self {
        match self {
            Profile::Zero | Profile::Constant { .. } => self.clone(),
            _ => Profile::Shifted { base: Box::new(self.clone()), shift },
        }
    }

    pub fn plus(&self, other: Profile) -> Self {
        match self {
            Profile::Zero => other,
            Profile::Sum { terms } => {
                let mut t = terms.clone();
                t.push(other);
                Profile::Sum { terms: t }
            }
            _ => Profile::Sum { terms: vec![self.clone(), other] },
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        match self {
            Profile::Zero => Profile::Zero,
            Profile::Constant { value } => Profile::Constant { value: value * factor },
            Profile::Indicator { a, b, height } => Profile::Indicator { a: *a, b: *b, height: height * factor },
            Profile::Steps { edges, values } => {
                Profile::Steps { edges: edges.clone(), values: values.iter().map(|v| v * factor).collect() }
            }
            Profile::Linear { xs, ys } => Profile::Linear { xs: xs.clone(), ys: ys.iter().map(|v| v * factor).collect() },
            Profile::Cosine { amplitude, period, phase, offset } => {
                Profile::Cosine { amplitude: amplitude * factor, period: *period, phase: *phase, offset: offset * factor }
            }
            Profile::Bump { a, b, height } => Profile::Bump { a: *a, b: *b, height: height * factor },
            Profile::Shifted { base, shift } => Profile::Shifted { base: Box::new(base.scaled(factor)), shift: *shift },
            Profile::Sum { terms } => Profile::Sum { terms: terms.iter().map(|t| t.scaled(factor)).collect() },
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Profile::Zero => 0.0,
            Profile::Constant { value } => *value,
            Profile::Indicator { a, b, height } => {
                if x >= *a && x <= *b {
                    *height
                } else {
                    0.0
                }
            }
            Profile::Steps { edges, values } => {
                let n = edges.len();
                if n < 2 || x < edges[0] || x > edges[n - 1] {
                    return 0.0;
                }
                let i = edges.partition_point(|&e| e <= x);
                values[i.saturating_sub(1).min(values.len() - 1)]
            }
            Profile::Linear { xs, ys } => {
                let n = xs.len();
                if n == 0 || x < xs[0] || x > xs[n - 1] {
                    return 0.0;
                }
                if n == 1 {
                    return ys[0];
                }
                let i = xs.partition_point(|&e| e <= x).clamp(1, n - 1);
                let (x0, x1) = (xs[i - 1], xs[i]);
                let t = if x1 > x0 { (x - x0) / (x1 - x0) } else { 0.0 };
                ys[i - 1] + t * (ys[i] - ys[i - 1])
            }
            Profile::Cosine { amplitude, period, phase, offset } => {
                offset + amplitude * (2.0 * PI * x / period + phase).cos()
            }
            Profile::Bump { a, b, height } => {
                if x < *a || x > *b {
                    0.0
                } else {
                    let s = (PI * (x - a) / (b - a)).sin();
                    height * s * s
                }
            }
            Profile::Shifted { base, shift } => base.eval(x + shift),
            Profile::Sum { terms } => terms.iter().map(|t| t.eval(x)).sum(),
        }
    }

    /// Upper bound on `sup |p|`; exact for every variant except sums.
    pub fn sup_bound(&self) -> f64 {
        match self {
            Profile::Zero => 0.0,
            Profile::Constant { value } => value.abs(),
            Profile::Indicator { height, .. } | Profile::Bump { height, .. } => height.abs(),
            Profile::Steps { values, .. } => values.iter().fold(0.0, |m, v| m.max(v.abs())),
            Profile::Linear { ys, .. } => ys.iter().fold(0.0, |m, v| m.max(v.abs())),
            Profile::Cosine { amplitude, offset, .. } => offset.abs() + amplitude.abs(),
            Profile::Shifted { base, .. } => base.sup_bound(),
            Profile::Sum { terms } => terms.iter().map(Profile::sup_bound).sum(),
        }
    }

    pub fn collect_breakpoints(&self, lo: f64, hi: f64, out: &mut Vec<f64>) {
        let mut push = |b: f64| {
            if b > lo && b < hi {
                out.push(b)
            }
        };
        match self {
            Profile::Zero | Profile::Constant { .. } | Profile::Cosine { .. } => {}
            Profile::Indicator { a, b, .. } | Profile::Bump { a, b, .. } => {
                push(*a);
                push(*b);
            }
            Profile::Steps { edges: pts, .. } | Profile::Linear { xs: pts, .. } => pts.iter().for_each(|&p| push(p)),
            Profile::Shifted { base, shift } => {
                let mut inner = Vec::new();
                base.collect_breakpoints(lo + shift, hi + shift, &mut inner);
                inner.into_iter().for_each(|b| push(b - shift));
            }
            Profile::Sum { terms } => {
                for t in terms {
                    t.collect_breakpoints(lo, hi, out);
                }
            }
        }
    }

    fn check_shape(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        match self {
            Profile::Steps { edges, values } => {
                if edges.len() != values.len() + 1 || edges.windows(2).any(|w| w[1] <= w[0]) {
                    return bad("steps profile needs strictly increasing edges and len(edges) = len(values) + 1");
                }
            }
            Profile::Linear { xs, ys } => {
                if xs.len() != ys.len() || xs.is_empty() || xs.windows(2).any(|w| w[1] <= w[0]) {
                    return bad("linear profile needs strictly increasing xs of the same length as ys");
                }
            }
            Profile::Indicator { a, b, .. } | Profile::Bump { a, b, .. } if b <= a => {
                return bad("profile interval must satisfy a < b");
            }
            Profile::Cosine { period, .. } if *period <= 0.0 => return bad("cosine period must be positive"),
            Profile::Shifted { base, .. } => base.check_shape()?,
            Profile::Sum { terms } => terms.iter().try_for_each(Profile::check_shape)?,
            _ => {}
        }
        Ok(())
    }
}

impl Potential for Profile {
    fn value(&self, x: f64) -> f64 {
        self.eval(x)
    }

    fn breakpoints(&self, lo: f64, hi: f64, out: &mut Vec<f64>) {
        self.collect_breakpoints(lo, hi, out)
    }
}

/// `W₀` with its declared sup-norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundPotential {
    pub profile: Profile,
    pub sup_norm: f64,
}

impl BackgroundPotential {
    pub fn new(profile: Profile) -> Self {
        let sup_norm = profile.sup_bound();
        Self { profile, sup_norm }
    }

    pub fn value(&self, x: f64) -> f64 {
        self.profile.eval(x)
    }

    /// Restriction of `W₀` to the cell `[i-1, i]`, re-centred on `[-1, 0]`.
    pub fn cell(&self, i: i64) -> Profile {
        self.profile.shifted(i as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerBar {
    pub c: f64,
    pub interval: (f64, f64),
}

/// The single-site bump `f` with the constants bounding it.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleSite {
    pub profile: Profile,
    pub lower_bar: LowerBar,
    pub upper_bar: f64,
    pub positivity_interval: (f64, f64),
    pub sup_norm: f64,
}

impl SingleSite {
    pub fn value(&self, x: f64) -> f64 {
        self.profile.eval(x)
    }

    /// Indicator of `[-1, 0]`: `c = C = 1`, `I = [a, b] = [-1, 0]`.
    pub fn unit_indicator() -> Self {
        Self {
            profile: Profile::indicator(-1.0, 0.0, 1.0),
            lower_bar: LowerBar { c: 1.0, interval: (-1.0, 0.0) },
            upper_bar: 1.0,
            positivity_interval: (-1.0, 0.0),
            sup_norm: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityConfig {
    Uniform { lo: f64, hi: f64 },
    /// `(1 + cos(π (λ - center) / half_width)) / (2 half_width)` on `|λ - center| ≤ half_width`.
    RaisedCosine { center: f64, half_width: f64 },
    /// Piecewise-linear density, normalised on construction.
    Tabulated { xs: Vec<f64>, ys: Vec<f64> },
}

const CDF_TABLE_BITS: u32 = 14;

/// Continuous, compactly supported coupling density with a tabulated
/// inverse-CDF sampler.
#[derive(Debug, Clone)]
pub struct CouplingDensity {
    pub config: DensityConfig,
    pub support_bound: f64,
    support: (f64, f64),
    norm: f64,
    cdf: Arc<Vec<f64>>,
}

impl CouplingDensity {
    pub fn new(config: DensityConfig, support_bound: Option<f64>) -> Result<Self> {
        let support = match &config {
            DensityConfig::Uniform { lo, hi } => {
                if !(hi > lo) {
                    return Err(Error::Config("uniform density needs lo < hi".into()));
                }
                (*lo, *hi)
            }
            DensityConfig::RaisedCosine { center, half_width } => {
                if !(*half_width > 0.0) {
                    return Err(Error::Config("raised cosine needs half_width > 0".into()));
                }
                (center - half_width, center + half_width)
            }
            DensityConfig::Tabulated { xs, ys } => {
                if xs.len() < 2 || xs.len() != ys.len() || xs.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::Config("tabulated density needs >= 2 increasing nodes".into()));
                }
                if ys.iter().any(|&y| y < 0.0 || !y.is_finite()) {
                    return Err(Error::Config("tabulated density must be nonnegative".into()));
                }
                (xs[0], xs[xs.len() - 1])
            }
        };
        let natural = support.0.abs().max(support.1.abs());
        let m = support_bound.unwrap_or(natural);
        if m < natural {
            return Err(Error::Config(format!("support_bound {m} does not cover the density support {support:?}")));
        }
        let mut d = Self { config, support_bound: m, support, norm: 1.0, cdf: Arc::new(Vec::new()) };
        if let DensityConfig::Tabulated { xs, ys } = &d.config {
            let raw: f64 = xs.windows(2).zip(ys.windows(2)).map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1])).sum();
            if !(raw > 0.0) {
                return Err(Error::Config("tabulated density has zero mass".into()));
            }
            d.norm = raw;
        }
        d.cdf = Arc::new(d.build_cdf());
        Ok(d)
    }

    pub fn uniform(lo: f64, hi: f64) -> Self {
        Self::new(DensityConfig::Uniform { lo, hi }, None).expect("valid uniform density")
    }

    pub fn raised_cosine(center: f64, half_width: f64) -> Self {
        Self::new(DensityConfig::RaisedCosine { center, half_width }, None).expect("valid raised cosine")
    }

    pub fn pdf(&self, lambda: f64) -> f64 {
        let (lo, hi) = self.support;
        if lambda < lo || lambda > hi {
            return 0.0;
        }
        match &self.config {
            DensityConfig::Uniform { .. } => 1.0 / (hi - lo),
            DensityConfig::RaisedCosine { center, half_width } => {
                (1.0 + (PI * (lambda - center) / half_width).cos()) / (2.0 * half_width)
            }
            DensityConfig::Tabulated { xs, ys } => {
                let i = xs.partition_point(|&e| e <= lambda).clamp(1, xs.len() - 1);
                let t = (lambda - xs[i - 1]) / (xs[i] - xs[i - 1]);
                (ys[i - 1] + t * (ys[i] - ys[i - 1])) / self.norm
            }
        }
    }

    /// Closed interval outside of which the density vanishes.
    pub fn support(&self) -> (f64, f64) {
        self.support
    }

    /// Support ends plus interior points where the density is not smooth.
    pub fn breakpoints(&self) -> Vec<f64> {
        match &self.config {
            DensityConfig::Tabulated { xs, .. } => xs.clone(),
            _ => vec![self.support.0, self.support.1],
        }
    }

    pub fn sup(&self) -> f64 {
        match &self.config {
            DensityConfig::Uniform { lo, hi } => 1.0 / (hi - lo),
            DensityConfig::RaisedCosine { half_width, .. } => 1.0 / half_width,
            DensityConfig::Tabulated { ys, .. } => ys.iter().fold(0.0f64, |m, &y| m.max(y)) / self.norm,
        }
    }

    /// `∫ g(λ) r(λ) dλ` by Gauss–Legendre on the smooth pieces of `r`.
    pub fn expectation(&self, g: impl Fn(f64) -> f64) -> f64 {
        let bps = self.breakpoints();
        bps.windows(2).map(|w| quad::gauss_legendre(|x| g(x) * self.pdf(x), w[0], w[1], 64)).sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.expectation(|_| 1.0)
    }

    pub fn mean(&self) -> f64 {
        self.expectation(|x| x)
    }

    fn build_cdf(&self) -> Vec<f64> {
        let n = 1usize << CDF_TABLE_BITS;
        let (lo, hi) = self.support;
        let h = (hi - lo) / n as f64;
        let mut cdf = Vec::with_capacity(n + 1);
        cdf.push(0.0);
        let mut acc = 0.0;
        for i in 0..n {
            let a = lo + i as f64 * h;
            acc += quad::gauss_legendre(|x| self.pdf(x), a, a + h, 5);
            cdf.push(acc);
        }
        let total = acc;
        cdf.iter_mut().for_each(|c| *c /= total);
        cdf
    }

    /// Inverse of the tabulated CDF with linear interpolation.
    pub fn quantile(&self, u: f64) -> f64 {
        let (lo, hi) = self.support;
        let n = self.cdf.len() - 1;
        let h = (hi - lo) / n as f64;
        let u = u.clamp(0.0, 1.0);
        let i = self.cdf.partition_point(|&c| c < u).clamp(1, n);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let t = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        lo + (i as f64 - 1.0 + t) * h
    }

    pub fn sample_with<R: Rng>(&self, rng: &mut R, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.quantile(rng.gen::<f64>());
        }
    }
}

impl PartialEq for CouplingDensity {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.support_bound == other.support_bound
    }
}

/// Serializable description of a model instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub background: Profile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background_sup_norm: Option<f64>,
    pub single_site: SingleSiteConfig,
    pub coupling: DensityConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support_bound: Option<f64>,
    pub e_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SingleSiteConfig {
    pub profile: Profile,
    pub lower_bar: LowerBar,
    pub upper_bar: f64,
    pub positivity_interval: (f64, f64),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sup_norm: Option<f64>,
}

impl ModelConfig {
    /// `W₀ = 0`, `f = χ_[-1,0]`, couplings uniform on `[0, 1]`, `E_max = 3`.
    pub fn reference() -> Self {
        Self {
            background: Profile::Zero,
            background_sup_norm: None,
            single_site: SingleSiteConfig {
                profile: Profile::indicator(-1.0, 0.0, 1.0),
                lower_bar: LowerBar { c: 1.0, interval: (-1.0, 0.0) },
                upper_bar: 1.0,
                positivity_interval: (-1.0, 0.0),
                sup_norm: None,
            },
            coupling: DensityConfig::Uniform { lo: 0.0, hi: 1.0 },
            support_bound: None,
            e_max: 3.0,
        }
    }

    pub fn build(&self) -> Result<ModelSpec> {
        self.background.check_shape()?;
        self.single_site.profile.check_shape()?;
        if !(self.e_max > 0.0 && self.e_max.is_finite()) {
            return Err(Error::Config(format!("e_max must be positive and finite, got {}", self.e_max)));
        }
        let background = BackgroundPotential {
            sup_norm: self.background_sup_norm.unwrap_or_else(|| self.background.sup_bound()),
            profile: self.background.clone(),
        };
        let ss = &self.single_site;
        let single_site = SingleSite {
            profile: ss.profile.clone(),
            lower_bar: ss.lower_bar,
            upper_bar: ss.upper_bar,
            positivity_interval: ss.positivity_interval,
            sup_norm: ss.sup_norm.unwrap_or_else(|| ss.profile.sup_bound()),
        };
        let coupling = CouplingDensity::new(self.coupling.clone(), self.support_bound)?;
        let n = compute_phase_bound(background.sup_norm, coupling.support_bound, single_site.sup_norm, self.e_max)?;
        Ok(ModelSpec { background, single_site, coupling, e_max: self.e_max, phase_bound_n: n, source: self.clone() })
    }
}

/// A complete problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub background: BackgroundPotential,
    pub single_site: SingleSite,
    pub coupling: CouplingDensity,
    pub e_max: f64,
    pub phase_bound_n: u32,
    source: ModelConfig,
}

impl ModelSpec {
    pub fn reference() -> Self {
        ModelConfig::reference().build().expect("reference model is valid")
    }

    pub fn config(&self) -> &ModelConfig {
        &self.source
    }

    pub fn with_e_max(&self, e_max: f64) -> Result<Self> {
        let mut c = self.source.clone();
        c.e_max = e_max;
        c.build()
    }

    /// Length `2πN` of the phase torus.
    pub fn torus_length(&self) -> f64 {
        2.0 * PI * self.phase_bound_n as f64
    }

    /// `2 + ‖W₀‖∞ + M‖f‖∞ + E_max`, the bound on the unit-cell phase growth.
    pub fn phase_growth_bound(&self) -> f64 {
        2.0 + self.background.sup_norm + self.coupling.support_bound * self.single_site.sup_norm + self.e_max
    }

    /// Potential of `H_ω` restricted to the cells covered by `omega`.
    pub fn full_potential<'a>(&'a self, omega: &'a [f64], first_cell: i64) -> FullPotential<'a> {
        FullPotential { background: &self.background.profile, single_site: &self.single_site.profile, omega, first_cell }
    }
}

/// Minimal `N ≥ 1` with `2 + sup_w0 + M·sup_f + e_max < Nπ`.
pub fn compute_phase_bound(sup_w0: f64, m: f64, sup_f: f64, e_max: f64) -> Result<u32> {
    let args = [sup_w0, m, sup_f, e_max];
    if args.iter().any(|a| !a.is_finite()) {
        return Err(Error::InvalidInput(format!("phase bound arguments must be finite: {args:?}")));
    }
    if args.iter().any(|&a| a < 0.0) {
        return Err(Error::InvalidInput(format!("phase bound arguments must be nonnegative: {args:?}")));
    }
    let a = 2.0 + sup_w0 + m * sup_f + e_max;
    let mut n = (a / PI).floor() as u32 + 1;
    while (n as f64) * PI <= a {
        n += 1;
    }
    while n > 1 && ((n - 1) as f64) * PI > a {
        n -= 1;
    }
    Ok(n)
}

/// `W₀(x) + Σ_n ω_n f(x - n)` over the cells `first_cell .. first_cell + omega.len()`.
pub struct FullPotential<'a> {
    pub background: &'a Profile,
    pub single_site: &'a Profile,
    pub omega: &'a [f64],
    pub first_cell: i64,
}

impl FullPotential<'_> {
    fn last_cell(&self) -> i64 {
        self.first_cell + self.omega.len() as i64 - 1
    }

    /// Left end of the first cell and right end of the last one.
    pub fn span(&self) -> (f64, f64) {
        ((self.first_cell - 1) as f64, self.last_cell() as f64)
    }

    pub fn try_value(&self, x: f64) -> Result<f64> {
        let (lo, hi) = self.span();
        if !(x >= lo && x <= hi) {
            return Err(Error::OutOfRange { x });
        }
        Ok(self.value(x))
    }
}

impl Potential for FullPotential<'_> {
    fn value(&self, x: f64) -> f64 {
        let mut v = self.background.eval(x);
        let n0 = x.ceil() as i64;
        for n in [n0, n0 + 1] {
            let t = x - n as f64;
            if (-1.0..=0.0).contains(&t) && n >= self.first_cell && n <= self.last_cell() {
                let w = self.omega[(n - self.first_cell) as usize];
                if w != 0.0 {
                    v += w * self.single_site.eval(t);
                }
            }
        }
        v
    }

    fn breakpoints(&self, lo: f64, hi: f64, out: &mut Vec<f64>) {
        self.background.collect_breakpoints(lo, hi, out);
        for n in self.first_cell - 1..=self.last_cell() {
            let b = n as f64;
            if b > lo && b < hi {
                out.push(b);
            }
        }
        for n in self.first_cell..=self.last_cell() {
            let shift = n as f64;
            let mut inner = Vec::new();
            self.single_site.collect_breakpoints(lo - shift, hi - shift, &mut inner);
            out.extend(inner.into_iter().map(|b| b + shift));
        }
    }
}

/// `W₀(x) + Σ ω_n f(x - n)` for couplings indexed from `first_cell`.
pub fn evaluate_full_potential(spec: &ModelSpec, omega: &[f64], first_cell: i64, x: f64) -> Result<f64> {
    spec.full_potential(omega, first_cell).try_value(x)
}

/// Stable per-task seed derived from a master seed (SplitMix64 finaliser).
pub fn derive_seed(master: u64, task: u64) -> u64 {
    let mut z = master ^ task.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_for(master: u64, task: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, task))
}

/// `count` i.i.d. couplings drawn from `coupling`, deterministic in `seed`.
pub fn sample_couplings(coupling: &CouplingDensity, count: usize, seed: u64) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(Error::InvalidInput("sample count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; count];
    coupling.sample_with(&mut rng, &mut out);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub witness: Option<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

const VALIDATION_GRID: usize = 10_000;

fn grid(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| lo + (hi - lo) * (i as f64 + 0.5) / n as f64)
}

fn check(name: &str, witness: Option<f64>, detail: String) -> CheckResult {
    CheckResult { name: name.to_string(), passed: witness.is_none(), witness, detail }
}

/// Spot-checks every model invariant on sample grids; failures carry a
/// witnessing sample point.
pub fn validate_model(spec: &ModelSpec) -> ValidationReport {
    let mut checks = Vec::new();
    let tol = 1e-12;

    let w0 = &spec.background;
    let w = grid(-32.0, 32.0, VALIDATION_GRID).find(|&x| w0.value(x).abs() > w0.sup_norm + tol);
    checks.push(check("background_sup_norm", w, format!("|W0| <= {} on [-32, 32]", w0.sup_norm)));

    let ss = &spec.single_site;
    let outside = grid(-3.0, 2.0, VALIDATION_GRID).filter(|x| !(-1.0..=0.0).contains(x)).find(|&x| ss.value(x) != 0.0);
    checks.push(check("single_site_support", outside, "f = 0 outside [-1, 0]".into()));

    let (a, b) = ss.positivity_interval;
    let off = grid(-1.0, 0.0, VALIDATION_GRID).filter(|&x| x < a || x > b).find(|&x| ss.value(x) != 0.0);
    checks.push(check("single_site_zero_off_ab", off, format!("f = 0 on [-1, 0] \\ [{a}, {b}]")));

    let (ia, ib) = ss.lower_bar.interval;
    let bars = grid(-1.0, 0.0, VALIDATION_GRID).find(|&x| {
        let fx = ss.value(x);
        let low = if x >= ia && x <= ib { ss.lower_bar.c } else { 0.0 };
        fx < low - tol || fx > ss.upper_bar + tol
    });
    let bars = if ss.lower_bar.c > 0.0 && ss.lower_bar.c <= ss.upper_bar && ib > ia { bars } else { Some(ia) };
    checks.push(check(
        "single_site_bars",
        bars,
        format!("{} chi_[{ia},{ib}] <= f <= {} chi_[-1,0]", ss.lower_bar.c, ss.upper_bar),
    ));

    let pos = grid(a, b, VALIDATION_GRID).find(|&x| ss.value(x) <= 0.0);
    let pos = if b > a { pos } else { Some(a) };
    checks.push(check("single_site_positive_on_ab", pos, format!("f > 0 on [{a}, {b}]")));

    let fsup = grid(-1.0, 0.0, VALIDATION_GRID).find(|&x| ss.value(x).abs() > ss.sup_norm + tol);
    checks.push(check("single_site_sup_norm", fsup, format!("|f| <= {}", ss.sup_norm)));

    let r = &spec.coupling;
    let mass = r.total_mass();
    checks.push(CheckResult {
        name: "density_normalized".into(),
        passed: (mass - 1.0).abs() <= 1e-8,
        witness: None,
        detail: format!("integral of r = {mass:.12}"),
    });
    let m = r.support_bound;
    let neg = grid(-m - 2.0, m + 2.0, VALIDATION_GRID).find(|&l| r.pdf(l) < 0.0 || (l.abs() > m && r.pdf(l) != 0.0));
    checks.push(check("density_support", neg, format!("r >= 0 and r = 0 for |lambda| > {m}")));

    let growth = spec.phase_growth_bound();
    let n = spec.phase_bound_n as f64;
    let minimal = growth < n * PI && (spec.phase_bound_n == 1 || growth >= (n - 1.0) * PI);
    checks.push(CheckResult {
        name: "phase_bound".into(),
        passed: minimal,
        witness: None,
        detail: format!("2 + |W0| + M|f| + E_max = {growth:.6} < N pi = {:.6}", n * PI),
    });

    ValidationReport { checks }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phase_bound_examples() {
        assert_eq!(compute_phase_bound(0.0, 1.0, 1.0, 1.0).unwrap(), 2);
        assert_eq!(compute_phase_bound(0.0, 0.0, 0.0, 0.0).unwrap(), 1);
        assert_eq!(compute_phase_bound(3.0, 2.0, 1.5, 2.0).unwrap(), 4);
        assert!(compute_phase_bound(f64::NAN, 1.0, 1.0, 1.0).is_err());
        assert!(compute_phase_bound(f64::INFINITY, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn phase_bound_is_strict_at_multiples_of_pi() {
        // 2 + (π - 2) = π exactly (up to rounding): N must exceed 1.
        let n = compute_phase_bound(PI - 2.0, 0.0, 0.0, 0.0).unwrap();
        assert!(n as f64 * PI > PI - 2.0 + 2.0);
    }

    #[test]
    fn reference_model_validates() {
        let spec = ModelSpec::reference();
        let report = validate_model(&spec);
        assert!(report.all_passed(), "{report:#?}");
        assert_eq!(spec.phase_bound_n, 2);
        assert_eq!(validate_model(&spec), report);
    }

    #[test]
    fn sign_violation_is_witnessed() {
        let mut cfg = ModelConfig::reference();
        cfg.single_site.profile = Profile::Steps { edges: vec![-1.0, -0.5, -0.4, 0.0], values: vec![1.0, -1.0, 1.0] };
        cfg.single_site.lower_bar = LowerBar { c: 1.0, interval: (-0.3, 0.0) };
        let report = validate_model(&cfg.build().unwrap());
        let pos = report.check("single_site_positive_on_ab").unwrap();
        assert!(!pos.passed);
        let w = pos.witness.unwrap();
        assert!((-0.5..=-0.4).contains(&w), "witness {w}");
    }

    #[test]
    fn uniform_density_is_normalized() {
        let r = CouplingDensity::uniform(0.0, 1.0);
        assert_eq!(r.support_bound, 1.0);
        assert!((r.total_mass() - 1.0).abs() < 1e-12);
        assert!((r.quantile(0.25) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn raised_cosine_moments() {
        let r = CouplingDensity::raised_cosine(0.0, 1.0);
        assert!((r.total_mass() - 1.0).abs() < 1e-12);
        assert!(r.mean().abs() < 1e-12);
        assert_eq!(r.pdf(1.5), 0.0);
    }

    #[test]
    fn sampling_is_deterministic_and_in_support() {
        let r = CouplingDensity::uniform(0.0, 1.0);
        let a = sample_couplings(&r, 4, 7).unwrap();
        let b = sample_couplings(&r, 4, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(sample_couplings(&r, 0, 7).is_err());
    }

    #[test]
    fn full_potential_examples() {
        let spec = ModelSpec::reference();
        assert_eq!(evaluate_full_potential(&spec, &[2.0], 0, -0.5).unwrap(), 2.0);
        assert!(matches!(evaluate_full_potential(&spec, &[2.0], 0, -1.5), Err(Error::OutOfRange { .. })));
        let mut cfg = ModelConfig::reference();
        cfg.background = Profile::Constant { value: 1.0 };
        let spec = cfg.build().unwrap();
        assert_eq!(evaluate_full_potential(&spec, &[2.0], 0, -0.5).unwrap(), 3.0);
    }

    #[test]
    fn cell_restriction_is_reindexing() {
        let w0 = BackgroundPotential::new(Profile::Cosine { amplitude: 0.5, period: 3.7, phase: 0.2, offset: 0.1 });
        for i in -3..4 {
            let g = w0.cell(i);
            for k in 0..11 {
                let y = -1.0 + k as f64 / 10.0;
                assert_eq!(g.eval(y), w0.value(y + i as f64));
            }
        }
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = ModelConfig::reference();
        let s = serde_json::to_string(&cfg).unwrap();
        let back: ModelConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(cfg, back);
        let missing = s.replace(",\"e_max\":3.0", "");
        let err = serde_json::from_str::<ModelConfig>(&missing).unwrap_err().to_string();
        assert!(err.contains("e_max"), "{err}");
    }
}
