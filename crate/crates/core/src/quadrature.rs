//! One-dimensional adaptive quadrature.
//!
//! Globally adaptive bisection driven by an embedded 10-point Gauss /
//! 21-point Kronrod pair. Inverse-square-root singularities at the lower
//! endpoint are removed by the substitution `v = a + z²`; semi-infinite
//! ranges are either truncated at a quantile of an envelope distribution
//! or mapped onto `[0, 1)` by `v = a + z / (1 - z)`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::distributions::DefaultDistribution;
use crate::error::{domain, Error, Result};

/// Tolerances and limits shared by every integral in a model run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_subdivisions: usize,
    /// Probability mass of the envelope distribution discarded beyond the
    /// truncation point of a semi-infinite integral.
    pub tail_cutoff_mass: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            max_subdivisions: 2000,
            tail_cutoff_mass: 1e-12,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) || !(self.abs_tol > 0.0) {
            return domain("quadrature tolerances must be positive");
        }
        if self.max_subdivisions < 1 {
            return domain("max_subdivisions must be at least 1");
        }
        if !(self.tail_cutoff_mass > 0.0 && self.tail_cutoff_mass < 1.0) {
            return domain("tail_cutoff_mass must lie in (0, 1)");
        }
        Ok(())
    }

    fn target(&self, value: f64) -> f64 {
        self.abs_tol.max(self.rel_tol * value.abs())
    }
}

/// Integral value with its error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub err: f64,
}

/// Behaviour of the integrand at the lower endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LowerEndpoint {
    #[default]
    Regular,
    /// Integrand behaves like `(v - a)^(-1/2)` times a smooth factor.
    InvSqrt,
}

/// How the tail of a semi-infinite integral is controlled.
#[derive(Debug, Clone, Copy)]
pub enum Envelope<'a> {
    /// Truncate where the law (conditioned on exceeding the lower limit)
    /// leaves `tail_cutoff_mass` beyond the cut.
    Distribution(&'a DefaultDistribution),
    /// Truncate at an explicit point known to bound the tail.
    Cutoff(f64),
    /// No truncation: map `[a, ∞)` onto `[0, 1)`.
    Unbounded,
}

// Kronrod abscissae on [0, 1]; odd indices are the Gauss nodes.
#[allow(clippy::excessive_precision)]
const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

#[allow(clippy::excessive_precision)]
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_208_980_402_678,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

#[allow(clippy::excessive_precision)]
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

fn gauss_kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = WGK[10] * fc;
    let mut gauss = 0.0;
    let mut abs_sum = kronrod.abs();
    let mut fv = [0.0; 20];
    for j in 0..10 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv[2 * j] = f1;
        fv[2 * j + 1] = f2;
        kronrod += WGK[j] * (f1 + f2);
        abs_sum += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * kronrod;
    let mut asc = WGK[10] * (fc - mean).abs();
    for j in 0..10 {
        asc += WGK[j] * ((fv[2 * j] - mean).abs() + (fv[2 * j + 1] - mean).abs());
    }
    let value = kronrod * half;
    let res_abs = abs_sum * half.abs();
    let res_asc = asc * half.abs();
    let mut err = ((kronrod - gauss) * half).abs();
    if res_asc != 0.0 && err != 0.0 {
        err = res_asc * (200.0 * err / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * res_abs);
    }
    (value, err)
}

#[derive(Debug)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

/// Adaptive integration over `[a, b]` starting from the given interior
/// breakpoints.
pub(crate) fn adaptive<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    breaks: &[f64],
    spec: &QuadratureSpec,
) -> Result<Estimate> {
    if b == a {
        return Ok(Estimate { value: 0.0, err: 0.0 });
    }
    let mut cuts = vec![a];
    cuts.extend(breaks.iter().copied().filter(|&x| x > a && x < b));
    cuts.push(b);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let mut heap = BinaryHeap::new();
    // Panels too narrow to bisect in floating point.
    let mut frozen_value = 0.0;
    let mut frozen_err = 0.0;
    let mut total = 0.0;
    let mut total_err = 0.0;
    for w in cuts.windows(2) {
        let (value, err) = gauss_kronrod(f, w[0], w[1]);
        total += value;
        total_err += err;
        heap.push(Panel { a: w[0], b: w[1], value, err });
    }
    let mut subdivisions = heap.len();
    loop {
        if !total.is_finite() || !total_err.is_finite() {
            return Err(Error::NonConvergence { subdivisions, value: total, err: total_err });
        }
        if total_err <= spec.target(total) {
            return Ok(Estimate { value: total, err: total_err });
        }
        let Some(worst) = heap.pop() else {
            // Only frozen panels remain.
            if frozen_err <= 10.0 * spec.target(total) {
                return Ok(Estimate { value: total, err: total_err });
            }
            return Err(Error::NonConvergence { subdivisions, value: total, err: total_err });
        };
        if subdivisions >= spec.max_subdivisions {
            return Err(Error::NonConvergence { subdivisions, value: total, err: total_err });
        }
        let mid = 0.5 * (worst.a + worst.b);
        if !(mid > worst.a && mid < worst.b)
            || (worst.b - worst.a) <= 1e3 * f64::EPSILON * mid.abs().max(f64::MIN_POSITIVE)
        {
            frozen_value += worst.value;
            frozen_err += worst.err;
            let _ = frozen_value;
            continue;
        }
        let (v1, e1) = gauss_kronrod(f, worst.a, mid);
        let (v2, e2) = gauss_kronrod(f, mid, worst.b);
        total += v1 + v2 - worst.value;
        total_err += e1 + e2 - worst.err;
        subdivisions += 1;
        heap.push(Panel { a: worst.a, b: mid, value: v1, err: e1 });
        heap.push(Panel { a: mid, b: worst.b, value: v2, err: e2 });
    }
}

/// `∫_a^b f(v) dv`.
pub fn integrate_finite<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    endpoint: LowerEndpoint,
    spec: &QuadratureSpec,
) -> Result<Estimate> {
    integrate_finite_with_breaks(f, a, b, endpoint, &[], spec)
}

/// As [`integrate_finite`], with interior breakpoints given in the original
/// variable `v`.
pub fn integrate_finite_with_breaks<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    endpoint: LowerEndpoint,
    breaks: &[f64],
    spec: &QuadratureSpec,
) -> Result<Estimate> {
    if !(a.is_finite() && b.is_finite()) {
        return domain(format!("finite integration limits required, got [{a}, {b}]"));
    }
    if b < a {
        return domain(format!("upper limit {b} below lower limit {a}"));
    }
    match endpoint {
        LowerEndpoint::Regular => adaptive(&f, a, b, breaks, spec),
        LowerEndpoint::InvSqrt => {
            let g = |z: f64| if z == 0.0 { 0.0 } else { 2.0 * z * f(a + z * z) };
            let zb: Vec<f64> = breaks.iter().filter(|&&v| v > a).map(|&v| (v - a).sqrt()).collect();
            adaptive(&g, 0.0, (b - a).sqrt(), &zb, spec)
        }
    }
}

/// `∫_a^∞ f(v) dv`.
pub fn integrate_semi_infinite<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    endpoint: LowerEndpoint,
    spec: &QuadratureSpec,
    envelope: Envelope<'_>,
) -> Result<Estimate> {
    integrate_semi_infinite_with_breaks(f, a, endpoint, &[], spec, envelope)
}

pub fn integrate_semi_infinite_with_breaks<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    endpoint: LowerEndpoint,
    breaks: &[f64],
    spec: &QuadratureSpec,
    envelope: Envelope<'_>,
) -> Result<Estimate> {
    if !a.is_finite() {
        return domain(format!("lower limit must be finite, got {a}"));
    }
    match envelope {
        Envelope::Cutoff(t) => {
            if !(t.is_finite() && t > a) {
                return Err(Error::Envelope(format!("cutoff {t} not above lower limit {a}")));
            }
            integrate_finite_with_breaks(f, a, t, endpoint, breaks, spec)
        }
        Envelope::Distribution(dist) => {
            let (cut, tail_mass) = dist.truncation_point(a, spec.tail_cutoff_mass)?;
            if !(cut.is_finite() && cut > a) {
                return Err(Error::Envelope(format!(
                    "no truncation point above {a} (t1 = {})",
                    dist.effective_horizon()
                )));
            }
            let mut est = integrate_finite_with_breaks(&f, a, cut, endpoint, breaks, spec)?;
            // Tail bound: |integrand / f| at the cut times the discarded mass.
            let dens = dist.density(cut);
            if tail_mass > 0.0 && dens > 0.0 {
                let ratio = (f(cut) / dens).abs();
                if ratio.is_finite() {
                    est.err += ratio * tail_mass;
                }
            }
            Ok(est)
        }
        Envelope::Unbounded => {
            let g = |w: f64| {
                if w >= 1.0 {
                    return 0.0;
                }
                let gap = w / (1.0 - w);
                let jac = 1.0 / ((1.0 - w) * (1.0 - w));
                let val = match endpoint {
                    LowerEndpoint::Regular => f(a + gap),
                    LowerEndpoint::InvSqrt => {
                        if gap == 0.0 {
                            0.0
                        } else {
                            2.0 * gap * f(a + gap * gap)
                        }
                    }
                };
                let out = val * jac;
                if out.is_finite() {
                    out
                } else {
                    0.0
                }
            };
            let wb: Vec<f64> = breaks
                .iter()
                .filter(|&&v| v > a)
                .map(|&v| {
                    let gap = match endpoint {
                        LowerEndpoint::Regular => v - a,
                        LowerEndpoint::InvSqrt => (v - a).sqrt(),
                    };
                    gap / (1.0 + gap)
                })
                .collect();
            adaptive(&g, 0.0, 1.0, &wb, spec)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> QuadratureSpec {
        QuadratureSpec::default()
    }

    // Composite Simpson with n panels.
    fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            s += if i % 2 == 1 { 4.0 * f(x) } else { 2.0 * f(x) };
        }
        s * h / 3.0
    }

    #[test]
    fn kronrod_rule_is_exact_for_high_degree_polynomials() {
        for deg in 0..=31 {
            let (v, _) = gauss_kronrod(&|x: f64| x.powi(deg), 0.0, 1.0);
            let exact = 1.0 / (deg as f64 + 1.0);
            assert!((v - exact).abs() < 1e-14, "degree {deg}: {v} vs {exact}");
        }
    }

    #[test]
    fn linear_integrand() {
        let e = integrate_finite(|x| x, 0.0, 1.0, LowerEndpoint::Regular, &spec()).unwrap();
        assert!((e.value - 0.5).abs() < 1e-15);
    }

    #[test]
    fn inverse_sqrt_with_flag() {
        let e = integrate_finite(|v: f64| v.powf(-0.5), 0.0, 1.0, LowerEndpoint::InvSqrt, &spec())
            .unwrap();
        assert!((e.value - 2.0).abs() < 1e-12, "{}", e.value);
    }

    #[test]
    fn sine_against_simpson_oracle() {
        let oracle = simpson(f64::sin, 0.0, std::f64::consts::PI, 1_000_000);
        let e = integrate_finite(f64::sin, 0.0, std::f64::consts::PI, LowerEndpoint::Regular, &spec())
            .unwrap();
        assert!((e.value - oracle).abs() < 1e-9);
        assert!((e.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn reversed_limits_rejected() {
        let r = integrate_finite(|x| x, 1.0, 0.0, LowerEndpoint::Regular, &spec());
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn subdivision_budget_exhaustion() {
        let tight = QuadratureSpec { max_subdivisions: 1, rel_tol: 1e-14, abs_tol: 1e-300, ..spec() };
        let r = integrate_finite(|x: f64| (50.0 * x).sin().abs(), 0.0, 10.0, LowerEndpoint::Regular, &tight);
        assert!(matches!(r, Err(Error::NonConvergence { .. })));
    }

    #[test]
    fn exponential_tail_unbounded() {
        let e = integrate_semi_infinite(|x: f64| (-x).exp(), 0.0, LowerEndpoint::Regular, &spec(), Envelope::Unbounded)
            .unwrap();
        assert!((e.value - 1.0).abs() < 1e-10, "{}", e.value);
    }

    #[test]
    fn singular_semi_infinite_gaussian_closed_form() {
        let exact = std::f64::consts::PI.sqrt() * (-1.0f64).exp();
        let e = integrate_semi_infinite(
            |v: f64| (v - 1.0).powf(-0.5) * (-v).exp(),
            1.0,
            LowerEndpoint::InvSqrt,
            &spec(),
            Envelope::Unbounded,
        )
        .unwrap();
        assert!((e.value - exact).abs() < 1e-9 * exact, "{} vs {exact}", e.value);
    }

    #[test]
    fn rayleigh_kernel_against_riemann_oracle() {
        // Midpoint sum with 10^7 points on [0, 50].
        let n = 10_000_000usize;
        let h = 50.0 / n as f64;
        let oracle: f64 = (0..n)
            .map(|i| {
                let x = (i as f64 + 0.5) * h;
                x * (-0.5 * x * x).exp()
            })
            .sum::<f64>()
            * h;
        let e = integrate_semi_infinite(
            |x: f64| x * (-0.5 * x * x).exp(),
            0.0,
            LowerEndpoint::Regular,
            &spec(),
            Envelope::Unbounded,
        )
        .unwrap();
        assert!((e.value - oracle).abs() < 1e-9);
        assert!((e.value - 1.0).abs() < 1e-10);
    }

    #[test]
    fn cutoff_envelope_below_limit_is_an_error() {
        let r = integrate_semi_infinite(|x: f64| (-x).exp(), 2.0, LowerEndpoint::Regular, &spec(), Envelope::Cutoff(1.0));
        assert!(matches!(r, Err(Error::Envelope(_))));
    }

    #[test]
    fn distribution_envelope_truncation_consistency() {
        let dist = DefaultDistribution::exponential(1.0).unwrap();
        let base = spec();
        let half = QuadratureSpec { tail_cutoff_mass: base.tail_cutoff_mass / 2.0, ..base };
        let h = |v: f64| (1.0 + v).sqrt() * (-v).exp();
        let a = integrate_semi_infinite(h, 0.3, LowerEndpoint::Regular, &base, Envelope::Distribution(&dist)).unwrap();
        let b = integrate_semi_infinite(h, 0.3, LowerEndpoint::Regular, &half, Envelope::Distribution(&dist)).unwrap();
        assert!((a.value - b.value).abs() <= a.err, "{} {} {}", a.value, b.value, a.err);
    }

    #[test]
    fn breakpoints_help_with_jumps() {
        let e = integrate_finite_with_breaks(
            |x: f64| if x > 0.3 { 1.0 } else { 0.0 },
            0.0,
            1.0,
            LowerEndpoint::Regular,
            &[0.3],
            &spec(),
        )
        .unwrap();
        assert!((e.value - 0.7).abs() < 1e-14);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn linearity(alpha in -3.0f64..3.0, beta in -3.0f64..3.0, k in 0.5f64..4.0, b in 0.5f64..5.0) {
                let s = QuadratureSpec::default();
                let f = move |x: f64| (k * x).cos();
                let g = move |x: f64| (-x * x / k).exp();
                let fa = integrate_finite(f, 0.0, b, LowerEndpoint::Regular, &s).unwrap();
                let ga = integrate_finite(g, 0.0, b, LowerEndpoint::Regular, &s).unwrap();
                let comb = integrate_finite(move |x| alpha * f(x) + beta * g(x), 0.0, b, LowerEndpoint::Regular, &s).unwrap();
                let expect = alpha * fa.value + beta * ga.value;
                let tol = 2.0 * (s.target(comb.value) + alpha.abs() * s.target(fa.value) + beta.abs() * s.target(ga.value)) + 1e-14;
                prop_assert!((comb.value - expect).abs() <= tol);
            }

            #[test]
            fn singular_substitution_matches_closed_form(c in 0.1f64..5.0, a in -2.0f64..2.0, lam in 0.2f64..3.0) {
                // ∫_a^∞ c (v-a)^(-1/2) e^{-lam (v-a)} dv = c sqrt(pi / lam)
                let s = QuadratureSpec::default();
                let e = integrate_semi_infinite(
                    move |v: f64| c * (v - a).powf(-0.5) * (-lam * (v - a)).exp(),
                    a, LowerEndpoint::InvSqrt, &s, Envelope::Unbounded).unwrap();
                let exact = c * (std::f64::consts::PI / lam).sqrt();
                prop_assert!((e.value - exact).abs() <= 10.0 * s.rel_tol * exact);
            }
        }
    }
}
