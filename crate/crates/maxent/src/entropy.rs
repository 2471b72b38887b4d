//! Entropy-like objective functions and their calculus.
//!
//! An entropy-like `phi` is strictly convex and superlinear on `(0, inf)`
//! with `phi'(0+) = -inf`, so `phi'` is an increasing bijection onto the real
//! line. The dual machinery only ever touches `phi` through the quadruple
//! `(phi, phi', (phi')^{-1}, phi*)` plus `phi''`, which is what this module
//! packages.

use std::sync::Arc;

use crate::numeric;
use crate::{Error, Result};

type Scalar = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntropyKind {
    Shannon,
    InverseSquare,
    Tabulated,
}

/// An entropy-like objective with evaluators for `phi`, `phi'`, `(phi')^{-1}`,
/// the convex conjugate `phi*` and `phi''`.
#[derive(Clone)]
pub struct EntropyFunction {
    kind: EntropyKind,
    label: String,
    phi: Scalar,
    dphi: Scalar,
    inv_dphi: Scalar,
    conj: Scalar,
    d2phi: Scalar,
    /// Right limit of `phi` at zero; `f64::INFINITY` when the limit diverges.
    phi_at_zero: f64,
}

impl std::fmt::Debug for EntropyFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EntropyFunction").field("label", &self.label).finish()
    }
}

impl EntropyFunction {
    /// Shannon entropy `phi(x) = x ln x`; all pieces in closed form.
    pub fn shannon() -> Self {
        Self {
            kind: EntropyKind::Shannon,
            label: "shannon".into(),
            phi: Arc::new(|x| x * x.ln()),
            dphi: Arc::new(|x| x.ln() + 1.0),
            inv_dphi: Arc::new(|y| (y - 1.0).exp()),
            conj: Arc::new(|y| (y - 1.0).exp()),
            d2phi: Arc::new(|x| 1.0 / x),
            phi_at_zero: 0.0,
        }
    }

    /// `phi(x) = 1/x + x^2`, an entropy-like function with infinite limit at
    /// zero. `(phi')^{-1}` and `phi*` are obtained by safeguarded root
    /// finding on the strictly increasing `phi'(x) = -1/x^2 + 2x`.
    pub fn inverse_square() -> Self {
        let dphi = |x: f64| -1.0 / (x * x) + 2.0 * x;
        let d2phi = |x: f64| 2.0 / (x * x * x) + 2.0;
        let inv = move |y: f64| invert_dphi(&dphi, &d2phi, y);
        let phi = |x: f64| 1.0 / x + x * x;
        Self {
            kind: EntropyKind::InverseSquare,
            label: "inverse_square".into(),
            phi: Arc::new(phi),
            dphi: Arc::new(dphi),
            inv_dphi: Arc::new(inv),
            conj: Arc::new(move |y| {
                let z = inv(y);
                y * z - phi(z)
            }),
            d2phi: Arc::new(d2phi),
            phi_at_zero: f64::INFINITY,
        }
    }

    /// Entropy reconstructed from tabulated `(x, phi(x))` samples.
    ///
    /// Derivative values at the sample points are estimated with
    /// Fritsch-Carlson slopes and then interpolated by a monotone cubic, so
    /// `phi'` is increasing wherever the data is strictly convex. Outside the
    /// table `phi'` is extended with a logarithmic tail below (driving it to
    /// `-inf` at zero) and a linear tail above (keeping `phi` superlinear).
    pub fn from_table(xs: &[f64], phis: &[f64]) -> Result<Self> {
        let spline = TableEntropy::build(xs, phis)?;
        let spline = Arc::new(spline);
        let s1 = spline.clone();
        let s2 = spline.clone();
        let s3 = spline.clone();
        let s4 = spline.clone();
        let s5 = spline.clone();
        let f = Self {
            kind: EntropyKind::Tabulated,
            label: "tabulated".into(),
            phi: Arc::new(move |x| s1.phi(x)),
            dphi: Arc::new(move |x| s2.dphi(x)),
            inv_dphi: Arc::new(move |y| s3.inv_dphi(y)),
            conj: Arc::new(move |y| {
                let z = s4.inv_dphi(y);
                y * z - s4.phi(z)
            }),
            d2phi: Arc::new(move |x| s5.d2phi(x)),
            phi_at_zero: f64::INFINITY,
        };
        f.validate_on(spline.xs[0], spline.xs[spline.xs.len() - 1])?;
        Ok(f)
    }

    pub fn kind(&self) -> EntropyKind {
        self.kind
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn is_shannon(&self) -> bool {
        self.kind == EntropyKind::Shannon
    }

    /// `phi(x)` for `x >= 0`. At zero the continuous extension is used and
    /// may be the distinguished infinite value; negative arguments are a
    /// domain error.
    pub fn phi(&self, x: f64) -> Result<f64> {
        if x < 0.0 || x.is_nan() {
            return Err(Error::EntropyDomain(x));
        }
        if x == 0.0 {
            return Ok(self.phi_at_zero);
        }
        Ok((self.phi)(x))
    }

    /// Right limit of `phi` at zero (`INFINITY` when divergent).
    pub fn phi_at_zero(&self) -> f64 {
        self.phi_at_zero
    }

    /// `phi'(x)`, `x > 0`.
    pub fn dphi(&self, x: f64) -> f64 {
        debug_assert!(x > 0.0);
        (self.dphi)(x)
    }

    /// `(phi')^{-1}(y)`, defined for every real `y`, strictly positive.
    pub fn inv_dphi(&self, y: f64) -> f64 {
        (self.inv_dphi)(y)
    }

    /// Convex conjugate `phi*(y)`, finite for every real `y`.
    pub fn conjugate(&self, y: f64) -> f64 {
        (self.conj)(y)
    }

    /// `phi*(y)` together with its derivative `(phi*)'(y) = (phi')^{-1}(y)`;
    /// the hot path of the dual solver.
    pub fn conjugate_with_derivative(&self, y: f64) -> (f64, f64) {
        match self.kind {
            EntropyKind::Shannon => {
                let e = (y - 1.0).exp();
                (e, e)
            }
            _ => {
                let z = (self.inv_dphi)(y);
                (y * z - (self.phi)(z), z)
            }
        }
    }

    /// `phi''(x)`, `x > 0`.
    pub fn d2phi(&self, x: f64) -> f64 {
        debug_assert!(x > 0.0);
        (self.d2phi)(x)
    }

    /// Sampled checks of the defining identities on `[lo, hi]`:
    /// monotonicity of `phi'`, the inverse round trip, the Legendre identity
    /// and superlinear growth.
    pub fn validate_on(&self, lo: f64, hi: f64) -> Result<()> {
        if !(lo > 0.0 && hi > lo) {
            return Err(Error::InvalidArgument("validation range must satisfy 0 < lo < hi".into()));
        }
        let n = 40;
        let ratio = (hi / lo).powf(1.0 / (n as f64 - 1.0));
        let mut prev_d = f64::NEG_INFINITY;
        let mut x = lo;
        for _ in 0..n {
            let d = (self.dphi)(x);
            if d <= prev_d {
                return Err(Error::Numerical(format!("phi' fails strict monotonicity near x = {x:e}")));
            }
            prev_d = d;
            let back = (self.inv_dphi)(d);
            if (back - x).abs() > 1e-10 * x.abs().max(1e-10) {
                return Err(Error::Numerical(format!(
                    "(phi')^-1(phi'(x)) = {back:e} differs from x = {x:e}"
                )));
            }
            let conj = (self.conj)(d);
            let legendre = d * x - (self.phi)(x);
            if (conj - legendre).abs() > 1e-10 * (1.0 + conj.abs()) {
                return Err(Error::Numerical(format!(
                    "Legendre identity violated at y = {d:e}: phi* = {conj:e} vs yx - phi(x) = {legendre:e}"
                )));
            }
            x *= ratio;
        }
        // Superlinearity: phi(x)/x increases along a geometric ladder within
        // range.
        let mut prev = f64::NEG_INFINITY;
        let mut x = 10.0_f64.min(hi);
        while x <= hi {
            let r = (self.phi)(x) / x;
            if r <= prev {
                return Err(Error::Numerical(format!("phi(x)/x not increasing at x = {x:e}")));
            }
            prev = r;
            x *= 10.0;
        }
        Ok(())
    }
}

/// Invert a strictly increasing `phi'` by bracketing from `x = 1` and
/// Newton-bisection.
fn invert_dphi(dphi: &impl Fn(f64) -> f64, d2phi: &impl Fn(f64) -> f64, y: f64) -> f64 {
    let f = |x: f64| dphi(x);
    let (lo, hi) = match numeric::bracket_increasing_mul(&f, y, 1.0) {
        Ok(b) => b,
        Err(_) => return f64::NAN,
    };
    numeric::newton_bisect(f, Some(|x: f64| d2phi(x)), y, lo, hi, 1e-14).unwrap_or(f64::NAN)
}

/// Monotone cubic (Fritsch-Carlson) pieces backing a tabulated entropy.
struct TableEntropy {
    xs: Vec<f64>,
    phis: Vec<f64>,
    /// phi' values at the sample points.
    ds: Vec<f64>,
    /// Hermite slopes for the phi' spline (derivative of phi', i.e. phi'').
    dds: Vec<f64>,
    /// Log-tail coefficient below the table: phi'(x) = ds[0] + kappa ln(x/x0).
    kappa: f64,
    /// Linear-tail slope above the table.
    upper_slope: f64,
}

impl TableEntropy {
    fn build(xs: &[f64], phis: &[f64]) -> Result<Self> {
        if xs.len() != phis.len() || xs.len() < 4 {
            return Err(Error::Config("entropy table needs at least 4 (x, phi) rows".into()));
        }
        if xs[0] <= 0.0 {
            return Err(Error::Config("entropy table abscissae must be positive".into()));
        }
        for w in xs.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Config("entropy table abscissae must be strictly increasing".into()));
            }
        }
        let secants: Vec<f64> = xs.windows(2).zip(phis.windows(2)).map(|(x, p)| (p[1] - p[0]) / (x[1] - x[0])).collect();
        for w in secants.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Config(
                    "entropy table is not strictly convex (secant slopes must increase)".into(),
                ));
            }
        }
        let ds = fritsch_carlson_slopes(xs, &secants);
        // Slopes for the phi' spline come from the same construction applied
        // to the (x, phi') data.
        let d_secants: Vec<f64> = xs.windows(2).zip(ds.windows(2)).map(|(x, d)| (d[1] - d[0]) / (x[1] - x[0])).collect();
        let dds = fritsch_carlson_slopes(xs, &d_secants);
        let kappa = (dds[0] * xs[0]).max(1e-8);
        let upper_slope = dds[xs.len() - 1].max(1e-8);
        Ok(Self { xs: xs.to_vec(), phis: phis.to_vec(), ds, dds, kappa, upper_slope })
    }

    fn segment(&self, x: f64) -> usize {
        match self.xs.binary_search_by(|v| v.total_cmp(&x)) {
            Ok(i) => i.min(self.xs.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.xs.len() - 2),
        }
    }

    fn phi(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x < self.xs[0] {
            // Integrate the log tail backwards from (x0, phi0).
            let x0 = self.xs[0];
            let d0 = self.ds[0];
            // \int (d0 + kappa ln(t/x0)) dt from x to x0.
            let prim = |t: f64| d0 * t + self.kappa * (t * (t / x0).ln() - t);
            return self.phis[0] - (prim(x0) - prim(x.max(f64::MIN_POSITIVE)));
        }
        if x > self.xs[n - 1] {
            let xn = self.xs[n - 1];
            let h = x - xn;
            return self.phis[n - 1] + self.ds[n - 1] * h + 0.5 * self.upper_slope * h * h;
        }
        let i = self.segment(x);
        hermite(self.xs[i], self.xs[i + 1], self.phis[i], self.phis[i + 1], self.ds[i], self.ds[i + 1], x).0
    }

    fn dphi(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x < self.xs[0] {
            return self.ds[0] + self.kappa * (x.max(f64::MIN_POSITIVE) / self.xs[0]).ln();
        }
        if x > self.xs[n - 1] {
            return self.ds[n - 1] + self.upper_slope * (x - self.xs[n - 1]);
        }
        let i = self.segment(x);
        hermite(self.xs[i], self.xs[i + 1], self.ds[i], self.ds[i + 1], self.dds[i], self.dds[i + 1], x).0
    }

    fn d2phi(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x < self.xs[0] {
            return self.kappa / x.max(f64::MIN_POSITIVE);
        }
        if x > self.xs[n - 1] {
            return self.upper_slope;
        }
        let i = self.segment(x);
        hermite(self.xs[i], self.xs[i + 1], self.ds[i], self.ds[i + 1], self.dds[i], self.dds[i + 1], x).1.max(1e-12)
    }

    fn inv_dphi(&self, y: f64) -> f64 {
        let n = self.xs.len();
        if y <= self.ds[0] {
            return self.xs[0] * ((y - self.ds[0]) / self.kappa).exp();
        }
        if y >= self.ds[n - 1] {
            return self.xs[n - 1] + (y - self.ds[n - 1]) / self.upper_slope;
        }
        let f = |x: f64| self.dphi(x);
        numeric::newton_bisect(f, Some(|x: f64| self.d2phi(x)), y, self.xs[0], self.xs[n - 1], 1e-14).unwrap_or(f64::NAN)
    }
}

/// Fritsch-Carlson derivative estimates for monotone data with the given
/// secant slopes; interior values are weighted harmonic means, which keeps
/// the Hermite interpolant monotone.
fn fritsch_carlson_slopes(xs: &[f64], secants: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut d = vec![0.0; n];
    d[0] = secants[0];
    d[n - 1] = secants[n - 2];
    for i in 1..n - 1 {
        let s0 = secants[i - 1];
        let s1 = secants[i];
        if s0 * s1 <= 0.0 {
            d[i] = 0.0;
        } else {
            let h0 = xs[i] - xs[i - 1];
            let h1 = xs[i + 1] - xs[i];
            let w1 = 2.0 * h1 + h0;
            let w2 = h1 + 2.0 * h0;
            d[i] = (w1 + w2) / (w1 / s0 + w2 / s1);
        }
    }
    d
}

/// Cubic Hermite value and first derivative on `[x0, x1]`.
fn hermite(x0: f64, x1: f64, y0: f64, y1: f64, d0: f64, d1: f64, x: f64) -> (f64, f64) {
    let h = x1 - x0;
    let t = (x - x0) / h;
    let t2 = t * t;
    let t3 = t2 * t;
    let v = y0 * (2.0 * t3 - 3.0 * t2 + 1.0)
        + y1 * (-2.0 * t3 + 3.0 * t2)
        + h * (d0 * (t3 - 2.0 * t2 + t) + d1 * (t3 - t2));
    let dv = (y0 * (6.0 * t2 - 6.0 * t) + y1 * (6.0 * t - 6.0 * t2)) / h
        + d0 * (3.0 * t2 - 4.0 * t + 1.0)
        + d1 * (3.0 * t2 - 2.0 * t);
    (v, dv)
}
