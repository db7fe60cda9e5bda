//! Link functions mapping probabilities onto the real line, and the
//! standard normal primitives the probit link needs.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Output clamp applied by [`LinkFunction::inverse`].
pub const INVERSE_CLAMP: f64 = 1e-15;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkFunction {
    Logit,
    Probit,
    Cloglog,
}

impl LinkFunction {
    pub const ALL: [LinkFunction; 3] = [Self::Logit, Self::Probit, Self::Cloglog];

    pub fn name(self) -> &'static str {
        match self {
            Self::Logit => "logit",
            Self::Probit => "probit",
            Self::Cloglog => "cloglog",
        }
    }

    /// g(p) for p in the open unit interval.
    pub fn apply(self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain {
                function: self.name(),
                value: p,
            });
        }
        Ok(match self {
            Self::Logit => (p / (1.0 - p)).ln(),
            Self::Probit => normal_quantile(p)?,
            Self::Cloglog => (-(-p).ln_1p()).ln(),
        })
    }

    /// g⁻¹(x), clamped to `[INVERSE_CLAMP, 1 - INVERSE_CLAMP]`.
    pub fn inverse(self, x: f64) -> Result<f64> {
        if !x.is_finite() {
            return Err(Error::Domain {
                function: "inverse link",
                value: x,
            });
        }
        Ok(self
            .inverse_unclamped(x)
            .clamp(INVERSE_CLAMP, 1.0 - INVERSE_CLAMP))
    }

    pub(crate) fn inverse_unclamped(self, x: f64) -> f64 {
        match self {
            Self::Logit => {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
            Self::Probit => normal_cdf(x),
            Self::Cloglog => -(-x.exp()).exp_m1(),
        }
    }

    /// `(log g⁻¹(x), log(1 - g⁻¹(x)))` without forming the probability.
    pub fn log_inverse_pair(self, x: f64) -> (f64, f64) {
        match self {
            Self::Logit => (-softplus(-x), -softplus(x)),
            Self::Probit => (log_normal_cdf(x), log_normal_cdf(-x)),
            Self::Cloglog => {
                let e = x.exp();
                ((-(-e).exp_m1()).ln(), -e)
            }
        }
    }

    /// g'(p).
    pub fn derivative(self, p: f64) -> Result<f64> {
        let x = self.apply(p)?;
        Ok(1.0 / self.inverse_derivative(x))
    }

    /// d g⁻¹(x) / dx.
    pub fn inverse_derivative(self, x: f64) -> f64 {
        match self {
            Self::Logit => {
                let p = self.inverse_unclamped(x);
                p * (1.0 - p)
            }
            Self::Probit => normal_pdf(x),
            Self::Cloglog => (x - x.exp()).exp(),
        }
    }
}

impl fmt::Display for LinkFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LinkFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "logit" => Ok(Self::Logit),
            "probit" => Ok(Self::Probit),
            "cloglog" => Ok(Self::Cloglog),
            other => Err(Error::Parameter(format!("unknown link function '{other}'"))),
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

/// Φ(x) through the complementary error function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// log Φ(x), finite far into the lower tail.
pub fn log_normal_cdf(x: f64) -> f64 {
    if x > -30.0 {
        normal_cdf(x).ln()
    } else {
        // Mills-ratio asymptotic series.
        let x2 = x * x;
        let series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
        -0.5 * x2 - (-x).ln() - LN_SQRT_2PI + series.ln()
    }
}

// Acklam's rational approximation coefficients.
const A: [f64; 6] = [
    -3.969_683_028_665_376e1,
    2.209_460_984_245_205e2,
    -2.759_285_104_469_687e2,
    1.383_577_518_672_69e2,
    -3.066_479_806_614_716e1,
    2.506_628_277_459_239,
];
const B: [f64; 5] = [
    -5.447_609_879_822_406e1,
    1.615_858_368_580_409e2,
    -1.556_989_798_598_866e2,
    6.680_131_188_771_972e1,
    -1.328_068_155_288_572e1,
];
const C: [f64; 6] = [
    -7.784_894_002_430_293e-3,
    -3.223_964_580_411_365e-1,
    -2.400_758_277_161_838,
    -2.549_732_539_343_734,
    4.374_664_141_464_968,
    2.938_163_982_698_783,
];
const D: [f64; 4] = [
    7.784_695_709_041_462e-3,
    3.224_671_290_700_398e-1,
    2.445_134_137_142_996,
    3.754_408_661_907_416,
];
const P_LOW: f64 = 0.02425;

/// Φ⁻¹(p): rational approximation followed by one Halley refinement on
/// [`normal_cdf`].
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain {
            function: "normal_quantile",
            value: p,
        });
    }
    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (-p).ln_1p()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    // Work on the smaller tail so the residual keeps its relative precision.
    let (e, sign) = if x > 0.0 {
        (0.5 * libm::erfc(x / SQRT_2) - (1.0 - p), -1.0)
    } else {
        (normal_cdf(x) - p, 1.0)
    };
    let u = sign * e * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
    Ok(x - u / (1.0 + 0.5 * x * u))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> impl Iterator<Item = f64> {
        (1..1000).map(|k| k as f64 / 1000.0)
    }

    #[test]
    fn apply_examples() {
        assert!((LinkFunction::Logit.apply(0.9).unwrap() - 9f64.ln()).abs() < 1e-14);
        assert!(LinkFunction::Probit.apply(0.5).unwrap().abs() < 1e-15);
        let p = 1.0 - (-1f64).exp();
        assert!(LinkFunction::Cloglog.apply(p).unwrap().abs() < 1e-15);
    }

    #[test]
    fn apply_rejects_boundary() {
        for link in LinkFunction::ALL {
            for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
                assert!(matches!(link.apply(p), Err(Error::Domain { .. })));
            }
        }
    }

    #[test]
    fn inverse_examples() {
        let se = LinkFunction::Logit.inverse(1.44).unwrap();
        assert!((se - 1.0 / (1.0 + (-1.44f64).exp())).abs() < 1e-15);
        assert!((se - 0.8085).abs() < 5e-4);
        assert!((LinkFunction::Logit.inverse(3.67).unwrap() - 0.975).abs() < 1e-3);
        let c = LinkFunction::Cloglog.inverse(0.0).unwrap();
        assert!((c - (1.0 - (-1f64).exp())).abs() < 1e-15);
        assert!(LinkFunction::Logit.inverse(f64::INFINITY).is_err());
        assert!(LinkFunction::Probit.inverse(f64::NEG_INFINITY).is_err());
    }

    #[test]
    fn inverse_is_clamped() {
        for link in LinkFunction::ALL {
            assert_eq!(link.inverse(-1e3).unwrap(), INVERSE_CLAMP);
            assert_eq!(link.inverse(1e3).unwrap(), 1.0 - INVERSE_CLAMP);
        }
    }

    #[test]
    fn round_trip_on_probability_grid() {
        for link in LinkFunction::ALL {
            for p in grid() {
                let back = link.inverse(link.apply(p).unwrap()).unwrap();
                assert!((back - p).abs() < 1e-10, "{link} p={p} back={back}");
            }
        }
    }

    #[test]
    fn round_trip_on_real_line() {
        // Upper limits keep 1 - g⁻¹(x) above 1e-6 so the probability still
        // carries enough digits to invert; the probit lower limit stays clear
        // of the output clamp.
        for (link, lo, hi) in [
            (LinkFunction::Logit, -10.0, 10.0),
            (LinkFunction::Probit, -7.5, 4.7),
            (LinkFunction::Cloglog, -10.0, 2.6),
        ] {
            let mut x = lo;
            while x <= hi {
                let back = link.apply(link.inverse(x).unwrap()).unwrap();
                assert!((back - x).abs() <= 1e-10, "{link} x={x} back={back}");
                x += 0.01;
            }
        }
    }

    #[test]
    fn monotone() {
        for link in LinkFunction::ALL {
            let mut prev = f64::NEG_INFINITY;
            for p in grid() {
                let x = link.apply(p).unwrap();
                assert!(x > prev);
                prev = x;
            }
            let mut prev = 0.0;
            for k in -300..=300 {
                let p = link.inverse(k as f64 / 100.0).unwrap();
                assert!(p > prev);
                prev = p;
            }
        }
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let h = 1e-6;
        for link in LinkFunction::ALL {
            for p in (1..100).map(|k| k as f64 / 100.0) {
                let fd = (link.apply(p + h).unwrap() - link.apply(p - h).unwrap()) / (2.0 * h);
                let d = link.derivative(p).unwrap();
                assert!(((d - fd) / d).abs() < 1e-6, "{link} p={p}: {d} vs {fd}");
            }
        }
    }

    #[test]
    fn log_inverse_pair_consistent() {
        for link in LinkFunction::ALL {
            for k in -80..=80 {
                let x = k as f64 / 10.0;
                let p = link.inverse_unclamped(x);
                let (lp, lq) = link.log_inverse_pair(x);
                if p > 1e-300 {
                    assert!((lp - p.ln()).abs() < 1e-12 * (1.0 + p.ln().abs()));
                }
                let total = lp.exp() + lq.exp();
                assert!((total - 1.0).abs() < 1e-12, "{link} x={x} total={total}");
            }
        }
        // deep tails stay finite
        let (lp, _) = LinkFunction::Probit.log_inverse_pair(-45.0);
        assert!(lp.is_finite() && lp < -1000.0);
    }

    #[test]
    fn normal_primitives() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert!((normal_quantile(0.975).unwrap() - 1.959_963_984_540_054).abs() < 1e-12);
        assert!((normal_cdf(1.959_96) - 0.975).abs() < 1e-6);
        assert!(normal_quantile(0.0).is_err());
        assert!(normal_quantile(1.0).is_err());
    }

    #[test]
    fn quantile_cdf_round_trip() {
        let mut p = 1e-8;
        while p < 1.0 - 1e-8 {
            for q in [p, 1.0 - p] {
                let back = normal_cdf(normal_quantile(q).unwrap());
                assert!((back - q).abs() <= 1e-12, "p={q} back={back}");
            }
            p *= 1.37;
        }
        for k in 1..1000 {
            let q = k as f64 / 1000.0;
            assert!((normal_cdf(normal_quantile(q).unwrap()) - q).abs() <= 1e-12);
        }
    }

    #[test]
    fn log_normal_cdf_tail_continuity() {
        let below = log_normal_cdf(-30.0 - 1e-9);
        let above = log_normal_cdf(-30.0 + 1e-9);
        assert!((below - above).abs() < 1e-6);
    }
}
