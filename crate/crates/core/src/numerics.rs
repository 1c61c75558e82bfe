//! Small numerical kernels shared across modules.

use num_complex::Complex64;

/// Kahan–Babuška (Neumaier) compensated sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = KahanSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ComplexKahan {
    re: KahanSum,
    im: KahanSum,
}

impl ComplexKahan {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, z: Complex64) {
        self.re.add(z.re);
        self.im.add(z.im);
    }

    pub fn value(&self) -> Complex64 {
        Complex64::new(self.re.value(), self.im.value())
    }
}

impl FromIterator<Complex64> for ComplexKahan {
    fn from_iter<I: IntoIterator<Item = Complex64>>(iter: I) -> Self {
        let mut s = ComplexKahan::new();
        for z in iter {
            s.add(z);
        }
        s
    }
}

pub fn kahan_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<KahanSum>().value()
}

pub fn kahan_sum_complex<I: IntoIterator<Item = Complex64>>(iter: I) -> Complex64 {
    iter.into_iter().collect::<ComplexKahan>().value()
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * z * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Composite Gauss–Legendre quadrature over the intervals between consecutive breakpoints.
pub fn integrate_piecewise(f: impl Fn(f64) -> f64, breakpoints: &[f64], panels: usize, order: usize) -> f64 {
    let (x, w) = gauss_legendre(order);
    let mut acc = KahanSum::new();
    for seg in breakpoints.windows(2) {
        let (lo, hi) = (seg[0], seg[1]);
        if hi <= lo {
            continue;
        }
        let h = (hi - lo) / panels as f64;
        for p in 0..panels {
            let a = lo + p as f64 * h;
            let mid = a + 0.5 * h;
            for (xi, wi) in x.iter().zip(&w) {
                acc.add(0.5 * h * wi * f(mid + 0.5 * h * xi));
            }
        }
    }
    acc.value()
}

/// One accepted step of [`rk4_adaptive`].
#[derive(Debug, Clone, Copy)]
pub struct OdePoint<const D: usize> {
    pub x: f64,
    pub y: [f64; D],
}

fn rk4_step<const D: usize>(rhs: &impl Fn(f64, &[f64; D]) -> [f64; D], x: f64, y: &[f64; D], h: f64) -> [f64; D] {
    let add = |a: &[f64; D], b: &[f64; D], s: f64| -> [f64; D] {
        let mut out = *a;
        for i in 0..D {
            out[i] += s * b[i];
        }
        out
    };
    let k1 = rhs(x, y);
    let k2 = rhs(x + 0.5 * h, &add(y, &k1, 0.5 * h));
    let k3 = rhs(x + 0.5 * h, &add(y, &k2, 0.5 * h));
    let k4 = rhs(x + h, &add(y, &k3, h));
    let mut out = *y;
    for i in 0..D {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Classical RK4 with step-doubling error control and local extrapolation.
///
/// Returns every accepted point including the start and the end. `None` when the
/// step size collapses.
pub fn rk4_adaptive<const D: usize>(
    rhs: impl Fn(f64, &[f64; D]) -> [f64; D],
    x0: f64,
    y0: [f64; D],
    x1: f64,
    tol: f64,
) -> Option<Vec<OdePoint<D>>> {
    let mut pts = vec![OdePoint { x: x0, y: y0 }];
    let span = x1 - x0;
    if span <= 0.0 {
        return Some(pts);
    }
    let mut x = x0;
    let mut y = y0;
    let mut h = span / 64.0;
    let h_min = span * 1e-14;
    while x < x1 {
        let last = x + h >= x1;
        if last {
            h = x1 - x;
        }
        let full = rk4_step(&rhs, x, &y, h);
        let half = rk4_step(&rhs, x, &y, 0.5 * h);
        let two = rk4_step(&rhs, x + 0.5 * h, &half, 0.5 * h);
        let mut err: f64 = 0.0;
        for i in 0..D {
            let scale = 1.0 + two[i].abs();
            err = err.max((two[i] - full[i]).abs() / 15.0 / scale);
        }
        if err <= tol || h <= h_min {
            if !err.is_finite() {
                return None;
            }
            x = if last { x1 } else { x + h };
            for i in 0..D {
                y[i] = two[i] + (two[i] - full[i]) / 15.0;
            }
            pts.push(OdePoint { x, y });
        }
        let factor = if err == 0.0 { 4.0 } else { (0.9 * (tol / err).powf(0.2)).clamp(0.2, 4.0) };
        h *= factor;
        if h < h_min {
            h = h_min;
        }
    }
    Some(pts)
}

pub fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// n (n-1) ... (n-k+1); zero when k > n.
pub fn falling_factorial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    ((n - k + 1)..=n).map(|i| i as f64).product()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(6);
        // exact up to degree 11
        let val: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(10)).sum();
        assert!((val - 2.0 / 11.0).abs() < 1e-14);
        let total: f64 = w.iter().sum();
        assert!((total - 2.0).abs() < 1e-14);
    }

    #[test]
    fn kahan_recovers_small_terms() {
        let mut s = KahanSum::new();
        s.add(1.0);
        for _ in 0..10 {
            s.add(1e-16);
        }
        s.add(-1.0);
        assert!((s.value() - 1e-15).abs() < 1e-28);
    }

    #[test]
    fn rk4_solves_exponential() {
        let pts = rk4_adaptive(|_, y: &[f64; 1]| [y[0]], 0.0, [1.0], 2.0, 1e-12).unwrap();
        let last = pts.last().unwrap();
        assert_eq!(last.x, 2.0);
        assert!((last.y[0] - 2f64.exp()).abs() < 1e-10);
    }

    #[test]
    fn piecewise_quadrature_handles_kinks() {
        let v = integrate_piecewise(|x: f64| x.abs(), &[-1.0, 0.0, 2.0], 4, 8);
        assert!((v - 2.5).abs() < 1e-14);
    }

    #[test]
    fn falling_factorials() {
        assert_eq!(falling_factorial(5, 2), 20.0);
        assert_eq!(falling_factorial(2, 3), 0.0);
        assert_eq!(falling_factorial(3, 0), 1.0);
        assert_eq!(factorial(4), 24.0);
    }
}
