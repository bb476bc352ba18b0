//! Log-gamma, digamma and Beta distribution helpers.
//!
//! `ln_gamma` and `digamma` come from `statrs`. The Beta distribution keeps
//! its log-normalizer so that repeated pdf/cdf evaluations with fixed shape
//! parameters (the inner loop of the Dirichlet cdf quadrature) avoid
//! recomputing three log-gamma values per call.

pub use statrs::function::gamma::{digamma, ln_gamma};

const CF_TOLERANCE: f64 = 1e-12;
const CF_MAX_ITER: usize = 100_000;
const TINY: f64 = 1e-300;

pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Log of the Dirichlet normalizer `prod Gamma(a_q) / Gamma(sum a_q)`.
pub fn ln_dirichlet_norm(a: &[f64]) -> f64 {
    let total: f64 = a.iter().sum();
    a.iter().map(|&x| ln_gamma(x)).sum::<f64>() - ln_gamma(total)
}

#[derive(Debug, Clone, Copy)]
pub struct BetaDist {
    a: f64,
    b: f64,
    ln_norm: f64,
}

impl BetaDist {
    /// Panics on nonpositive or non-finite shapes; callers validate first.
    pub fn new(a: f64, b: f64) -> Self {
        assert!(
            a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite(),
            "Beta shapes must be positive and finite, got ({a}, {b})"
        );
        BetaDist { a, b, ln_norm: ln_beta(a, b) }
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn mean(&self) -> f64 {
        self.a / (self.a + self.b)
    }

    pub fn second_moment(&self) -> f64 {
        let s = self.a + self.b;
        self.a * (self.a + 1.0) / (s * (s + 1.0))
    }

    pub fn variance(&self) -> f64 {
        let s = self.a + self.b;
        self.a * self.b / (s * s * (s + 1.0))
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x <= 0.0 || x >= 1.0 {
            return f64::NEG_INFINITY;
        }
        (self.a - 1.0) * x.ln() + (self.b - 1.0) * (-x).ln_1p() - self.ln_norm
    }

    /// Density on the open interval; 0 outside.
    pub fn pdf(&self, x: f64) -> f64 {
        if x <= 0.0 || x >= 1.0 {
            return 0.0;
        }
        self.ln_pdf(x).exp()
    }

    /// Regularized incomplete Beta function `I_x(a, b)`.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x >= 1.0 {
            return 1.0;
        }
        let y = 1.0 - x;
        let ln_front = self.a * x.ln() + self.b * y.ln() - self.ln_norm;
        if x < (self.a + 1.0) / (self.a + self.b + 2.0) {
            (ln_front.exp() * continued_fraction(self.a, self.b, x) / self.a).clamp(0.0, 1.0)
        } else {
            (1.0 - ln_front.exp() * continued_fraction(self.b, self.a, y) / self.b).clamp(0.0, 1.0)
        }
    }
}

/// Lentz evaluation of the incomplete Beta continued fraction.
fn continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < CF_TOLERANCE {
            return h;
        }
    }
    log::warn!("incomplete beta continued fraction hit the iteration cap (a={a}, b={b}, x={x})");
    h
}

/// `sum_{t < count} ln((base + t) / (base + extra + t))`, i.e.
/// `ln [Gamma(base + count) Gamma(base + extra) / (Gamma(base) Gamma(base + extra + count))]`
/// for a nonnegative integer `count`.
pub fn ln_rising_ratio(base: f64, extra: f64, count: usize) -> f64 {
    (0..count)
        .map(|t| {
            let t = t as f64;
            ((base + t) / (base + extra + t)).ln()
        })
        .sum()
}

/// Neumaier compensated accumulator.
#[derive(Debug, Default, Clone, Copy)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
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

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn beta_cdf_closed_forms() {
        // Beta(1, 1) is uniform; Beta(a, 1) has cdf x^a; Beta(2, 2) is symmetric.
        let u = BetaDist::new(1.0, 1.0);
        assert_relative_eq!(u.cdf(0.3), 0.3, epsilon = 1e-13);
        let p = BetaDist::new(3.5, 1.0);
        assert_relative_eq!(p.cdf(0.7), 0.7f64.powf(3.5), epsilon = 1e-13);
        let s = BetaDist::new(2.0, 2.0);
        assert_relative_eq!(s.cdf(0.5), 0.5, epsilon = 1e-13);
        // I_x(2, 3) = 1 - (1-x)^4 - 4x(1-x)^3
        let b = BetaDist::new(2.0, 3.0);
        let x: f64 = 0.37;
        let expected = 1.0 - (1.0 - x).powi(4) - 4.0 * x * (1.0 - x).powi(3);
        assert_relative_eq!(b.cdf(x), expected, epsilon = 1e-13);
    }

    #[test]
    fn beta_cdf_large_shapes_matches_symmetry() {
        let b = BetaDist::new(3000.0, 27000.0);
        let c = BetaDist::new(27000.0, 3000.0);
        for &x in &[0.095, 0.1, 0.103] {
            assert_relative_eq!(b.cdf(x), 1.0 - c.cdf(1.0 - x), epsilon = 1e-10);
        }
        assert!((b.cdf(0.1) - 0.5).abs() < 0.01);
    }

    #[test]
    fn beta_pdf_integrates_to_one() {
        let b = BetaDist::new(2.5, 4.0);
        let n = 20_000;
        let h = 1.0 / n as f64;
        let total: f64 = (0..n).map(|i| b.pdf((i as f64 + 0.5) * h) * h).sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn rising_ratio_matches_log_gamma() {
        let (base, extra, count) = (2.3, 5.1, 4);
        let direct = ln_gamma(base + count as f64) + ln_gamma(base + extra)
            - ln_gamma(base)
            - ln_gamma(base + extra + count as f64);
        assert_relative_eq!(ln_rising_ratio(base, extra, count), direct, epsilon = 1e-12);
        assert_eq!(ln_rising_ratio(base, extra, 0), 0.0);
    }

    #[test]
    fn kahan_recovers_small_terms() {
        let mut s = KahanSum::default();
        s.add(1.0);
        for _ in 0..1000 {
            s.add(1e-17);
        }
        s.add(-1.0);
        assert_relative_eq!(s.value(), 1e-14, epsilon = 1e-20);
    }
}
