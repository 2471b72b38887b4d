//! Shared scalar machinery: Gauss-Legendre rules, safeguarded root finding,
//! bounded maximisation, and deterministic direction sets on the unit sphere.

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Gauss-Legendre nodes and weights on `[-1, 1]`, nodes ascending.
///
/// Exact for polynomials of degree `2n - 1`; nodes found by Newton iteration
/// on the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature order must be at least 1");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi-style initial guess for the i-th largest root.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() <= 1e-16 * (1.0 + x.abs()) {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        // Middle node is exactly zero for odd orders.
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Value and derivative of the Legendre polynomial `P_n` at `x`.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 1..n {
        let kf = k as f64;
        let p2 = ((2.0 * kf + 1.0) * x * p1 - kf * p0) / (kf + 1.0);
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Gauss-Legendre rule mapped affinely onto `[a, b]`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (t, w) = gauss_legendre(n);
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let nodes = t.iter().map(|&ti| mid + half * ti).collect();
    let weights = w.iter().map(|&wi| half * wi).collect();
    (nodes, weights)
}

/// Maximise `f` on `[a, b]` by a coarse scan followed by golden-section
/// refinement around the best sample. Returns `(argmax, max)`.
pub fn scan_golden_max<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n_scan: usize, tol: f64) -> (f64, f64) {
    debug_assert!(b >= a);
    if b - a <= tol {
        let m = 0.5 * (a + b);
        return (m, f(m));
    }
    let n = n_scan.max(3);
    let mut best_i = 0;
    let mut best_v = f64::NEG_INFINITY;
    let step = (b - a) / (n as f64 - 1.0);
    for i in 0..n {
        let x = a + step * i as f64;
        let v = f(x);
        if v > best_v {
            best_v = v;
            best_i = i;
        }
    }
    let lo = a + step * (best_i.saturating_sub(1)) as f64;
    let hi = (a + step * (best_i + 1) as f64).min(b);
    golden_max(f, lo, hi, tol)
}

/// Golden-section maximisation on `[a, b]`; assumes the bracket contains a
/// single local maximum. Returns `(argmax, max)`.
pub fn golden_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..200 {
        if b - a <= tol {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Solve `f(x) = target` for a continuous strictly increasing `f` given a
/// bracket `[lo, hi]` with `f(lo) <= target <= f(hi)`. Newton steps (when a
/// derivative is supplied) are safeguarded by bisection.
pub fn newton_bisect<F, D>(f: F, df: Option<D>, target: f64, mut lo: f64, mut hi: f64, tol: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    let mut flo = f(lo) - target;
    let fhi = f(hi) - target;
    if flo > 0.0 || fhi < 0.0 {
        return Err(Error::Numerical(format!(
            "root bracket invalid: f({lo:e}) - t = {flo:e}, f({hi:e}) - t = {:e}",
            fhi
        )));
    }
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let fx = f(x) - target;
        if fx.abs() <= tol || (hi - lo) <= tol * (1.0 + x.abs()) {
            return Ok(x);
        }
        if (fx > 0.0) == (flo > 0.0) {
            lo = x;
            flo = fx;
        } else {
            hi = x;
        }
        let mut next = f64::NAN;
        if let Some(ref d) = df {
            let dx = d(x);
            if dx > 0.0 {
                next = x - fx / dx;
            }
        }
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        x = next;
    }
    Ok(x)
}

/// Expand a bracket for `f(x) = target` multiplicatively from `x0 > 0`,
/// for increasing `f` on `(0, inf)`.
pub fn bracket_increasing_mul<F: Fn(f64) -> f64>(f: &F, target: f64, x0: f64) -> Result<(f64, f64)> {
    let mut lo = x0;
    let mut hi = x0;
    for _ in 0..2100 {
        if f(lo) <= target {
            break;
        }
        lo *= 0.5;
    }
    for _ in 0..2100 {
        if f(hi) >= target {
            break;
        }
        hi *= 2.0;
    }
    if f(lo) <= target && f(hi) >= target {
        Ok((lo, hi))
    } else {
        Err(Error::Numerical(format!(
            "failed to bracket target {target:e} from x0 = {x0:e}; reached [{lo:e}, {hi:e}]"
        )))
    }
}

/// Expand a bracket for `f(x) = target` additively from `x0`, for increasing
/// `f` on the whole real line.
pub fn bracket_increasing_add<F: Fn(f64) -> f64>(f: &F, target: f64, x0: f64, step0: f64) -> Result<(f64, f64)> {
    let mut step = step0.abs().max(1e-8);
    let mut lo = x0;
    let mut hi = x0;
    for _ in 0..200 {
        if f(lo) <= target {
            break;
        }
        lo -= step;
        step *= 2.0;
    }
    step = step0.abs().max(1e-8);
    for _ in 0..200 {
        if f(hi) >= target {
            break;
        }
        hi += step;
        step *= 2.0;
    }
    if f(lo) <= target && f(hi) >= target {
        Ok((lo, hi))
    } else {
        Err(Error::Numerical(format!(
            "failed to bracket target {target:e} from x0 = {x0:e}; reached [{lo:e}, {hi:e}]"
        )))
    }
}

/// Nelder-Mead minimisation, intended for low-dimensional refinements.
/// Returns `(argmin, min)`.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], scale: f64, max_iter: usize, tol: f64) -> (Vec<f64>, f64) {
    let d = x0.len();
    if d == 0 {
        return (Vec::new(), f(x0));
    }
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(d + 1);
    simplex.push(x0.to_vec());
    for i in 0..d {
        let mut v = x0.to_vec();
        v[i] += scale;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();

    for _ in 0..max_iter {
        let mut idx: Vec<usize> = (0..=d).collect();
        idx.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
        let best = idx[0];
        let worst = idx[d];
        let second_worst = idx[d - 1];
        if (values[worst] - values[best]).abs() <= tol * (1.0 + values[best].abs()) {
            break;
        }
        // Centroid of all but the worst vertex.
        let mut centroid = vec![0.0; d];
        for (i, v) in simplex.iter().enumerate() {
            if i != worst {
                for (c, x) in centroid.iter_mut().zip(v) {
                    *c += x / d as f64;
                }
            }
        }
        let lerp = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[worst])
                .map(|(&c, &w)| c + t * (c - w))
                .collect()
        };
        let reflected = lerp(1.0);
        let fr = f(&reflected);
        if fr < values[best] {
            let expanded = lerp(2.0);
            let fe = f(&expanded);
            if fe < fr {
                simplex[worst] = expanded;
                values[worst] = fe;
            } else {
                simplex[worst] = reflected;
                values[worst] = fr;
            }
        } else if fr < values[second_worst] {
            simplex[worst] = reflected;
            values[worst] = fr;
        } else {
            let contracted = lerp(-0.5);
            let fc = f(&contracted);
            if fc < values[worst] {
                simplex[worst] = contracted;
                values[worst] = fc;
            } else {
                // Shrink toward the best vertex.
                let best_v = simplex[best].clone();
                for (i, v) in simplex.iter_mut().enumerate() {
                    if i != best {
                        for (x, b) in v.iter_mut().zip(&best_v) {
                            *x = b + 0.5 * (*x - b);
                        }
                        values[i] = f(v);
                    }
                }
            }
        }
    }
    let mut best = 0;
    for i in 1..=d {
        if values[i] < values[best] {
            best = i;
        }
    }
    (simplex[best].clone(), values[best])
}

/// Deterministic, roughly uniform set of `n` unit directions in `R^k`.
///
/// `k = 1` returns the two signs, `k = 2` equispaced angles, `k = 3` a
/// Fibonacci sphere; higher dimensions fall back to a seeded Gaussian sample.
pub fn unit_directions(k: usize, n: usize) -> Vec<DVector<f64>> {
    assert!(k >= 1);
    match k {
        1 => vec![DVector::from_vec(vec![1.0]), DVector::from_vec(vec![-1.0])],
        2 => {
            let n = n.max(4);
            (0..n)
                .map(|i| {
                    let t = 2.0 * std::f64::consts::PI * (i as f64 + 0.5) / n as f64;
                    DVector::from_vec(vec![t.cos(), t.sin()])
                })
                .collect()
        }
        3 => {
            let n = n.max(8);
            let golden = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
            (0..n)
                .map(|i| {
                    let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                    let r = (1.0 - z * z).max(0.0).sqrt();
                    let t = golden * i as f64;
                    DVector::from_vec(vec![r * t.cos(), r * t.sin(), z])
                })
                .collect()
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_d1ce);
            (0..n.max(16))
                .map(|_| {
                    let mut v = DVector::zeros(k);
                    loop {
                        for x in v.iter_mut() {
                            *x = standard_normal(&mut rng);
                        }
                        let norm = v.norm();
                        if norm > 1e-8 {
                            v /= norm;
                            break;
                        }
                    }
                    v
                })
                .collect()
        }
    }
}

/// Box-Muller standard normal draw.
pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u1: f64 = rng.random();
        let u2: f64 = rng.random();
        if u1 > f64::MIN_POSITIVE {
            let r = (-2.0 * u1.ln()).sqrt();
            return r * (2.0 * std::f64::consts::PI * u2).cos();
        }
    }
}
