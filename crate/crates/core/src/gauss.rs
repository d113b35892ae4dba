//! Standard-normal interval and rectangle probabilities.
//!
//! The bivariate kernel follows Drezner and Wesolowsky's single-integral
//! reduction as refined by Genz: Gauss–Legendre quadrature over the
//! correlation (orders 6/12/20 by |ρ| band) for |ρ| < 0.925, and an
//! asymptotic expansion plus quadrature of the remainder above it. Absolute
//! accuracy is close to double precision across the whole range.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Result};

const TWO_PI: f64 = 2.0 * PI;
/// Above this |ρ| the pair is treated as perfectly (anti-)correlated.
pub const RHO_DEGENERATE: f64 = 1.0 - 1e-12;

/// Closed interval on the real line; either end may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    lo: f64,
    hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo > hi || lo == f64::INFINITY || hi == f64::NEG_INFINITY
        {
            return Err(invalid(format!("invalid interval [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn full() -> Self {
        Self {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_bounded(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    /// Half-open membership `lo <= x < hi` (an infinite upper end includes everything above).
    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && (x < self.hi || self.hi == f64::INFINITY)
    }

    /// Whether the interiors of the two intervals intersect.
    pub fn overlaps(&self, other: &Interval) -> bool {
        self.lo < other.hi && other.lo < self.hi
    }

    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then_some(Interval { lo, hi })
    }

    fn neg(&self) -> Interval {
        Interval {
            lo: -self.hi,
            hi: -self.lo,
        }
    }

    /// `(I - shift) / scale` for `scale > 0`.
    pub fn standardize(&self, shift: f64, scale: f64) -> Interval {
        Interval {
            lo: (self.lo - shift) / scale,
            hi: (self.hi - shift) / scale,
        }
    }

    fn midpoint_sign(&self) -> f64 {
        // ∞ + (−∞) is NaN only for the full line, which is symmetric anyway
        let m = self.lo + self.hi;
        if m.is_nan() {
            0.0
        } else {
            m
        }
    }
}

fn ser_bound<S: Serializer>(v: f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(v)
    } else if v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Bound {
    Num(f64),
    Text(String),
}

impl Bound {
    fn value<E: serde::de::Error>(self) -> std::result::Result<f64, E> {
        match self {
            Bound::Num(v) => Ok(v),
            Bound::Text(t) => t
                .parse::<f64>()
                .map_err(|_| E::custom(format!("invalid bound {t:?}"))),
        }
    }
}

impl Serialize for Interval {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeTuple;
        struct B(f64);
        impl Serialize for B {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                ser_bound(self.0, s)
            }
        }
        let mut t = s.serialize_tuple(2)?;
        t.serialize_element(&B(self.lo))?;
        t.serialize_element(&B(self.hi))?;
        t.end()
    }
}

impl<'de> Deserialize<'de> for Interval {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let (lo, hi) = <(Bound, Bound)>::deserialize(d)?;
        Interval::new(lo.value()?, hi.value()?).map_err(serde::de::Error::custom)
    }
}

/// Axis-aligned rectangle in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect2D {
    pub x: Interval,
    pub y: Interval,
}

impl Rect2D {
    pub fn new(x: Interval, y: Interval) -> Self {
        Self { x, y }
    }

    pub fn plane() -> Self {
        Self::new(Interval::full(), Interval::full())
    }

    /// Square of side `side` with lower-left corner `(x, y)`.
    pub fn square(x: f64, y: f64, side: f64) -> Result<Self> {
        Ok(Self::new(Interval::new(x, x + side)?, Interval::new(y, y + side)?))
    }

    pub fn axis(&self, j: usize) -> Interval {
        if j == 0 {
            self.x
        } else {
            self.y
        }
    }

    /// Half-open membership on both axes.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        self.x.contains(p[0]) && self.y.contains(p[1])
    }

    /// Interiors intersect.
    pub fn overlaps(&self, other: &Rect2D) -> bool {
        self.x.overlaps(&other.x) && self.y.overlaps(&other.y)
    }
}

/// Standard normal cdf `Φ(x)` via the complementary error function.
pub fn std_normal_cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        1.0
    } else if x == f64::NEG_INFINITY {
        0.0
    } else {
        0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
    }
}

/// `P(Z ∈ I)` for standard normal `Z`, evaluated on the tail side that avoids cancellation.
pub fn std_normal_interval(iv: Interval) -> f64 {
    let p = if iv.midpoint_sign() > 0.0 {
        std_normal_cdf(-iv.lo) - std_normal_cdf(-iv.hi)
    } else {
        std_normal_cdf(iv.hi) - std_normal_cdf(iv.lo)
    };
    p.max(0.0)
}

/// `P(X ∈ I)` for `X ~ N(mean, sd²)`; `sd = 0` gives the half-open indicator of `mean ∈ I`.
pub fn normal_interval(iv: Interval, mean: f64, sd: f64) -> f64 {
    if sd == 0.0 {
        return if iv.contains(mean) { 1.0 } else { 0.0 };
    }
    std_normal_interval(iv.standardize(mean, sd))
}

// Gauss–Legendre half-rules (positive nodes on [-1, 1]) for 6, 12 and 20 points.
const GL6: ([f64; 3], [f64; 3]) = (
    [0.932_469_514_203_152_2, 0.661_209_386_466_264_7, 0.238_619_186_083_197],
    [0.171_324_492_379_170_5, 0.360_761_573_048_138_4, 0.467_913_934_572_690_4],
);
const GL12: ([f64; 6], [f64; 6]) = (
    [
        0.981_560_634_246_719_1,
        0.904_117_256_370_475,
        0.769_902_674_194_305,
        0.587_317_954_286_617_1,
        0.367_831_498_998_180_2,
        0.125_233_408_511_469_2,
    ],
    [
        0.047_175_336_386_511_77,
        0.106_939_325_995_318_3,
        0.160_078_328_543_346_4,
        0.203_167_426_723_065_9,
        0.233_492_536_538_354_7,
        0.249_147_045_813_402_9,
    ],
);
const GL20: ([f64; 10], [f64; 10]) = (
    [
        0.993_128_599_185_094_9,
        0.963_971_927_277_913_8,
        0.912_234_428_251_325_9,
        0.839_116_971_822_218_8,
        0.746_331_906_460_150_8,
        0.636_053_680_726_515,
        0.510_867_001_950_827_1,
        0.373_706_088_715_419_6,
        0.227_785_851_141_645_1,
        0.076_526_521_133_497_33,
    ],
    [
        0.017_614_007_139_152_12,
        0.040_601_429_800_386_94,
        0.062_672_048_334_109_06,
        0.083_276_741_576_704_75,
        0.101_930_119_817_240_4,
        0.118_194_531_961_518_4,
        0.131_688_638_449_176_6,
        0.142_096_109_318_382_1,
        0.149_172_986_472_603_7,
        0.152_753_387_130_725_9,
    ],
);

fn rule(r: f64) -> (&'static [f64], &'static [f64]) {
    let a = r.abs();
    if a < 0.3 {
        (&GL6.0, &GL6.1)
    } else if a < 0.75 {
        (&GL12.0, &GL12.1)
    } else {
        (&GL20.0, &GL20.1)
    }
}

/// Upper orthant `P(Z1 > h, Z2 > k)` of a standard bivariate normal with correlation `r`.
pub fn bvn_upper(h: f64, k: f64, r: f64) -> f64 {
    if h == f64::INFINITY || k == f64::INFINITY {
        return 0.0;
    }
    if h == f64::NEG_INFINITY {
        return if k == f64::NEG_INFINITY {
            1.0
        } else {
            std_normal_cdf(-k)
        };
    }
    if k == f64::NEG_INFINITY {
        return std_normal_cdf(-h);
    }
    if r == 0.0 {
        return std_normal_cdf(-h) * std_normal_cdf(-k);
    }
    let (xs, ws) = rule(r);
    let mut hk = h * k;
    let mut bvn = 0.0;
    if r.abs() < 0.925 {
        let hs = (h * h + k * k) / 2.0;
        let asr = r.asin() / 2.0;
        for (&x, &w) in xs.iter().zip(ws) {
            for node in [1.0 - x, 1.0 + x] {
                let sn = (asr * node).sin();
                bvn += w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
            }
        }
        bvn = bvn * asr / TWO_PI + std_normal_cdf(-h) * std_normal_cdf(-k);
    } else {
        let mut k = k;
        if r < 0.0 {
            k = -k;
            hk = -hk;
        }
        if r.abs() < 1.0 {
            let as_ = (1.0 - r) * (1.0 + r);
            let mut a = as_.sqrt();
            let bs = (h - k) * (h - k);
            let c = (4.0 - hk) / 8.0;
            let d = (12.0 - hk) / 80.0;
            let asr = -(bs / as_ + hk) / 2.0;
            if asr > -100.0 {
                bvn = a * asr.exp() * (1.0 - c * (bs - as_) * (1.0 - d * bs) / 3.0 + c * d * as_ * as_);
            }
            if hk > -100.0 {
                let b = bs.sqrt();
                let sp = TWO_PI.sqrt() * std_normal_cdf(-b / a);
                bvn -= (-hk / 2.0).exp() * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0);
            }
            a /= 2.0;
            for (&x, &w) in xs.iter().zip(ws) {
                for node in [1.0 - x, 1.0 + x] {
                    let xs2 = (a * node) * (a * node);
                    let asr = -(bs / xs2 + hk) / 2.0;
                    if asr > -100.0 {
                        let sp = 1.0 + c * xs2 * (1.0 + 5.0 * d * xs2);
                        let rs = (1.0 - xs2).sqrt();
                        let ep = (-hk * xs2 / (2.0 * (1.0 + rs) * (1.0 + rs))).exp() / rs;
                        bvn += a * w * asr.exp() * (ep - sp);
                    }
                }
            }
            bvn = -bvn / TWO_PI;
        }
        if r > 0.0 {
            bvn += std_normal_cdf(-h.max(k));
        } else {
            bvn = -bvn;
            if k > h {
                bvn += if h < 0.0 {
                    std_normal_cdf(k) - std_normal_cdf(h)
                } else {
                    std_normal_cdf(-h) - std_normal_cdf(-k)
                };
            }
        }
    }
    bvn.clamp(0.0, 1.0)
}

/// Lower orthant `P(Z1 <= h, Z2 <= k)`.
pub fn bvn_cdf(h: f64, k: f64, r: f64) -> f64 {
    bvn_upper(-h, -k, r)
}

/// `P(Z1 ∈ a, Z2 ∈ b)` for a standard bivariate normal with correlation `rho`.
pub fn bvn_rect(a: Interval, b: Interval, rho: f64) -> Result<f64> {
    if !(rho.abs() <= 1.0) {
        return Err(invalid(format!("correlation {rho} outside [-1, 1]")));
    }
    Ok(bvn_rect_unchecked(a, b, rho))
}

/// Rectangles whose conditional separation exceeds this many conditional
/// sds have probability below `Φ(−10)·P(Z1 ∈ a) < 1e−23`, returned as 0.
pub(crate) const GAP_CUTOFF: f64 = 10.0;

/// Distance between `b` and `ρ·a`, and between `a` and `ρ·b`, in conditional sds; the larger.
pub(crate) fn conditional_gap(a: Interval, b: Interval, rho: f64) -> f64 {
    let s = ((1.0 - rho) * (1.0 + rho)).sqrt();
    let gap = |a: Interval, b: Interval| {
        let (lo, hi) = if rho > 0.0 {
            (rho * a.lo, rho * a.hi)
        } else {
            (rho * a.hi, rho * a.lo)
        };
        (b.lo - hi).max(lo - b.hi)
    };
    gap(a, b).max(gap(b, a)) / s
}

pub(crate) fn bvn_rect_unchecked(a: Interval, b: Interval, rho: f64) -> f64 {
    if rho.abs() > RHO_DEGENERATE {
        let b = if rho > 0.0 { b } else { b.neg() };
        return a.intersect(&b).map_or(0.0, std_normal_interval);
    }
    if rho == 0.0 {
        return std_normal_interval(a) * std_normal_interval(b);
    }
    if conditional_gap(a, b, rho) > GAP_CUTOFF {
        return 0.0;
    }
    // Reflect so both intervals sit on the positive side: the upper-orthant
    // corner terms are then small and the alternating sum keeps its precision.
    let mut r = rho;
    let a = if a.midpoint_sign() < 0.0 {
        r = -r;
        a.neg()
    } else {
        a
    };
    let b = if b.midpoint_sign() < 0.0 {
        r = -r;
        b.neg()
    } else {
        b
    };
    let p = bvn_upper(a.lo, b.lo, r) - bvn_upper(a.hi, b.lo, r) - bvn_upper(a.lo, b.hi, r)
        + bvn_upper(a.hi, b.hi, r);
    p.clamp(0.0, 1.0)
}

/// Probability that a bivariate Gaussian with the given means, standard
/// deviations and correlation falls in `rect`.
pub fn gaussian_rect_prob(mean: [f64; 2], sd: [f64; 2], rho: f64, rect: Rect2D) -> Result<f64> {
    if !(sd[0] > 0.0 && sd[1] > 0.0) {
        return Err(invalid(format!("standard deviations must be positive, got {sd:?}")));
    }
    bvn_rect(
        rect.x.standardize(mean[0], sd[0]),
        rect.y.standardize(mean[1], sd[1]),
        rho,
    )
}
