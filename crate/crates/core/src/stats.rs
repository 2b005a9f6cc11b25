//! Statistical utilities: Monte Carlo estimates, special functions, fits.
//!
//! The special functions are self-contained implementations of classical
//! published algorithms — Cody's rational-Chebyshev error function
//! (SPECFUN/CALERF layout) and Wichura's AS241 normal quantile — because the
//! toolkit pins quantile accuracy at 1e-12 and needs that guarantee in-tree.
//! Both are asserted against externally computed 50-digit reference values.

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Monte Carlo estimates
// ---------------------------------------------------------------------------

/// A point estimate with its standard error and trial count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateWithCI {
    pub value: f64,
    pub stderr: f64,
    pub trials: u64,
}

impl EstimateWithCI {
    /// Bernoulli estimate: p-hat with stderr sqrt(p(1-p)/n).
    pub fn bernoulli(successes: u64, trials: u64) -> Result<Self> {
        if trials == 0 {
            return Err(Error::EmptyEstimate("bernoulli estimate of 0 trials".into()));
        }
        let p = successes as f64 / trials as f64;
        Ok(EstimateWithCI {
            value: p,
            stderr: (p * (1.0 - p) / trials as f64).sqrt(),
            trials,
        })
    }

    /// Sample-mean estimate from raw observations.
    pub fn from_samples(xs: &[f64]) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::EmptyEstimate("mean of empty sample".into()));
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
        let var = if xs.len() > 1 { ss / (n - 1.0) } else { 0.0 };
        Ok(EstimateWithCI {
            value: mean,
            stderr: (var / n).sqrt(),
            trials: xs.len() as u64,
        })
    }

    /// Two-sample pooled z-score against another estimate.
    pub fn z_against(&self, other: &EstimateWithCI) -> f64 {
        let denom = (self.stderr * self.stderr + other.stderr * other.stderr).sqrt();
        if denom == 0.0 {
            if self.value == other.value {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.value - other.value) / denom
        }
    }
}

/// Sample variance (unbiased) of a slice; errors on fewer than two points.
pub fn sample_variance(xs: &[f64]) -> Result<f64> {
    if xs.len() < 2 {
        return Err(Error::EmptyEstimate("variance needs at least 2 samples".into()));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    Ok(xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0))
}

// ---------------------------------------------------------------------------
// Least squares
// ---------------------------------------------------------------------------

/// Ordinary least-squares line fit.
#[derive(Debug, Clone, Copy)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Coefficient of determination.
    pub r2: f64,
    /// Root-mean-square residual.
    pub residual_rms: f64,
}

/// Fit y = slope*x + intercept by least squares.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::EmptyEstimate(format!(
            "linear fit needs >= 2 matched points, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::DomainError("linear fit with constant x".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - (slope * x + intercept);
            e * e
        })
        .sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(LinearFit {
        slope,
        intercept,
        r2,
        residual_rms: (ss_res / n).sqrt(),
    })
}

// ---------------------------------------------------------------------------
// Kolmogorov–Smirnov
// ---------------------------------------------------------------------------

/// One-sample KS statistic of `samples` against a reference CDF.
/// Sorts a copy of the input.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyEstimate("KS of empty sample".into()));
    }
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in xs.iter().enumerate() {
        let f = cdf(*x);
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((f - lo).abs()).max((hi - f).abs());
    }
    Ok(d)
}

/// Asymptotic KS critical value at the given significance with the
/// Stephens small-sample correction: c(alpha) / (sqrt(n) + 0.12 + 0.11/sqrt(n)).
pub fn ks_critical(n: usize, alpha: f64) -> Result<f64> {
    // c(alpha) = sqrt(-ln(alpha/2) / 2)
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::DomainError(format!("KS significance {alpha} outside (0,1)")));
    }
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    let rn = (n as f64).sqrt();
    Ok(c / (rn + 0.12 + 0.11 / rn))
}

// ---------------------------------------------------------------------------
// Error function (Cody) and normal distribution
// ---------------------------------------------------------------------------

/// erf(x) by Cody's rational Chebyshev approximation (|error| < 1e-15).
pub fn erf(x: f64) -> f64 {
    let ax = x.abs();
    if ax <= 0.46875 {
        // Rational approximation on the center interval, argument x^2.
        const A: [f64; 5] = [
            3.16112374387056560e0,
            1.13864154151050156e2,
            3.77485237685302021e2,
            3.20937758913846947e3,
            1.85777706184603153e-1,
        ];
        const B: [f64; 4] = [
            2.36012909523441209e1,
            2.44024637934444173e2,
            1.28261652607737228e3,
            2.84423683343917062e3,
        ];
        let z = x * x;
        let mut num = A[4] * z;
        let mut den = z;
        for i in 0..3 {
            num = (num + A[i]) * z;
            den = (den + B[i]) * z;
        }
        x * (num + A[3]) / (den + B[3])
    } else if x > 0.0 {
        1.0 - erfc(x)
    } else {
        erfc(-x) - 1.0
    }
}

/// erfc(x) by Cody's rational Chebyshev approximation.
pub fn erfc(x: f64) -> f64 {
    let ax = x.abs();
    if ax <= 0.46875 {
        return 1.0 - erf(x);
    }
    // exp(-x^2) evaluated with the split-square trick to avoid cancellation.
    let exp_term = |y: f64| -> f64 {
        let ysq = (y * 16.0).trunc() / 16.0;
        let del = (y - ysq) * (y + ysq);
        (-ysq * ysq).exp() * (-del).exp()
    };
    let r = if ax <= 4.0 {
        const C: [f64; 9] = [
            5.64188496988670089e-1,
            8.88314979438837594e0,
            6.61191906371416295e1,
            2.98635138197400131e2,
            8.81952221241769090e2,
            1.71204761263407058e3,
            2.05107837782607147e3,
            1.23033935479799725e3,
            2.15311535474403846e-8,
        ];
        const D: [f64; 8] = [
            1.57449261107098347e1,
            1.17693950891312499e2,
            5.37181101862009858e2,
            1.62138957456669019e3,
            3.29079923573345963e3,
            4.36261909014324716e3,
            3.43936767414372164e3,
            1.23033935480374942e3,
        ];
        let mut num = C[8] * ax;
        let mut den = ax;
        for i in 0..7 {
            num = (num + C[i]) * ax;
            den = (den + D[i]) * ax;
        }
        exp_term(ax) * (num + C[7]) / (den + D[7])
    } else if ax < 26.543 {
        const P: [f64; 6] = [
            3.05326634961232344e-1,
            3.60344899949804439e-1,
            1.25781726111229246e-1,
            1.60837851487422766e-2,
            6.58749161529837803e-4,
            1.63153871373020978e-2,
        ];
        const Q: [f64; 5] = [
            2.56852019228982242e0,
            1.87295284992346047e0,
            5.27905102951428412e-1,
            6.05183413124413191e-2,
            2.33520497626869185e-3,
        ];
        const SQRPI: f64 = 5.6418958354775628695e-1;
        let z = 1.0 / (ax * ax);
        let mut num = P[5] * z;
        let mut den = z;
        for i in 0..4 {
            num = (num + P[i]) * z;
            den = (den + Q[i]) * z;
        }
        let poly = z * (num + P[4]) / (den + Q[4]);
        exp_term(ax) * (SQRPI - poly) / ax
    } else {
        0.0
    };
    if x < 0.0 {
        2.0 - r
    } else {
        r
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Standard normal quantile by Wichura's algorithm AS241 (PPND16),
/// |relative error| < 1e-15 over (0, 1).
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(0.0 < p && p < 1.0) {
        return Err(Error::DomainError(format!("normal quantile of p = {p}")));
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r
            + 6.7265770927008700853e4)
            * r
            + 4.5921953931549871457e4)
            * r
            + 1.3731693765509461125e4)
            * r
            + 1.9715909503065514427e3)
            * r
            + 1.3314166789178437745e2)
            * r
            + 3.3871328727963666080e0)
            * q;
        let den = ((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r
            + 3.9307895800092710610e4)
            * r
            + 2.1213794301586595867e4)
            * r
            + 5.3941960214247511077e3)
            * r
            + 6.8718700749205790830e2)
            * r
            + 4.2313330701600911252e1)
            * r
            + 1.0;
        return Ok(num / den);
    }
    let r0 = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-r0.ln()).sqrt();
    let x = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r
            + 2.41780725177450611770e-1)
            * r
            + 1.27045825245236838258e0)
            * r
            + 3.64784832476320460504e0)
            * r
            + 5.76949722146069140550e0)
            * r
            + 4.63033784615654529590e0)
            * r
            + 1.42343711074968357734e0;
        let den = ((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r
            + 1.51986665636164571966e-2)
            * r
            + 1.48103976427480074590e-1)
            * r
            + 6.89767334985100004550e-1)
            * r
            + 1.67638483018380384940e0)
            * r
            + 2.05319162663775882187e0)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
            + 1.24266094738807843860e-3)
            * r
            + 2.65321895265761230930e-2)
            * r
            + 2.96560571828504891230e-1)
            * r
            + 1.78482653991729133580e0)
            * r
            + 5.46378491116411436990e0)
            * r
            + 6.65790464350110377720e0;
        let den = ((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r
            + 1.84631831751005468180e-5)
            * r
            + 7.86869131145613259100e-4)
            * r
            + 1.48753612908506148525e-2)
            * r
            + 1.36929880922735805310e-1)
            * r
            + 5.99832206555887937690e-1)
            * r
            + 1.0;
        num / den
    };
    Ok(if q < 0.0 { -x } else { x })
}

// ---------------------------------------------------------------------------
// Brownian running-maximum distribution
// ---------------------------------------------------------------------------

/// P(sup_{s<=T} |W_s| <= m) for Brownian motion with total variance
/// `var_horizon` = sigma^2 * T, by the standard alternating reflection series.
pub fn brownian_sup_abs_cdf(m: f64, var_horizon: f64) -> Result<f64> {
    if m < 0.0 || var_horizon <= 0.0 {
        return Err(Error::DomainError(format!(
            "sup-CDF needs m >= 0 and variance > 0, got m = {m}, var = {var_horizon}"
        )));
    }
    if m == 0.0 {
        return Ok(0.0);
    }
    let a = m / var_horizon.sqrt();
    let mut total = 0.0;
    for k in -80i64..=80 {
        let sign = if k.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
        let term = normal_cdf((2 * k + 1) as f64 * a) - normal_cdf((2 * k - 1) as f64 * a);
        total += sign * term;
        // Terms vanish fast; the fixed window is far beyond double precision.
    }
    Ok(total.clamp(0.0, 1.0))
}

/// Quantile of sup_{s<=T} |W_s| at probability `p`, by bisection.
pub fn brownian_sup_abs_quantile(p: f64, var_horizon: f64) -> Result<f64> {
    if !(0.0 < p && p < 1.0) {
        return Err(Error::DomainError(format!("sup-quantile of p = {p}")));
    }
    let sigma = var_horizon.sqrt();
    let (mut lo, mut hi) = (0.0, 10.0 * sigma + 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if brownian_sup_abs_cdf(mid, var_horizon)? < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Reference values computed externally at 50-digit precision.
    const ERF_REF: [(f64, f64); 9] = [
        (0.1, 0.1124629160182848922),
        (0.5, 0.52049987781304653768),
        (1.0, 0.84270079294971486934),
        (1.5, 0.96610514647531072707),
        (2.0, 0.99532226501895273416),
        (3.0, 0.99997790950300141456),
        (4.5, 0.99999999980338395585),
        (-0.75, -0.7111556336535151316),
        (6.0, 0.99999999999999997848),
    ];

    const ERFC_REF: [(f64, f64); 7] = [
        (0.5, 0.47950012218695346232),
        (1.0, 0.15729920705028513066),
        (2.0, 0.0046777349810472658379),
        (3.0, 0.000022090496998585441373),
        (5.0, 1.5374597944280348502e-12),
        (8.0, 1.122429717298292708e-29),
        (-1.5, 1.9661051464753107271),
    ];

    const CDF_REF: [(f64, f64); 9] = [
        (-3.0, 0.0013498980316300945267),
        (-1.0, 0.15865525393145705141),
        (-0.1, 0.46017216272297101853),
        (0.0, 0.5),
        (0.5, 0.69146246127401310364),
        (1.0, 0.84134474606854294859),
        (1.96, 0.97500210485177956586),
        (2.5758293035489, 0.994999999999999989),
        (4.0, 0.99996832875816688008),
    ];

    const QUANTILE_REF: [(f64, f64); 15] = [
        (0.001, -3.0902323061678135415),
        (0.01, -2.3263478740408411009),
        (0.025, -1.9599639845400542355),
        (0.1, -1.281551565544600467),
        (0.25, -0.6744897501960817432),
        (0.5, 0.0),
        (0.6, 0.2533471031357997988),
        (0.75, 0.6744897501960817432),
        (0.9, 1.281551565544600467),
        (0.975, 1.9599639845400542355),
        (0.99, 2.3263478740408411009),
        (0.995, 2.575829303548900761),
        (0.999, 3.0902323061678135415),
        (1e-10, -6.3613409024040562047),
        (0.5000123, 0.000030831527782845961083),
    ];

    const SUP_CDF_REF: [(f64, f64); 5] = [
        (0.5, 0.0091569902897607557542),
        (1.0, 0.3707774297995239054),
        (1.5, 0.73278478561693902056),
        (2.0, 0.90899947615363375135),
        (2.5, 0.975161338697023095),
    ];

    #[test]
    fn erf_matches_reference() {
        for (x, want) in ERF_REF {
            let got = erf(x);
            assert!(
                (got - want).abs() <= 1e-15 + 1e-14 * want.abs(),
                "erf({x}) = {got}, want {want}"
            );
        }
    }

    #[test]
    fn erfc_matches_reference() {
        for (x, want) in ERFC_REF {
            let got = erfc(x);
            assert!(
                (got - want).abs() <= 1e-16 + 1e-12 * want.abs(),
                "erfc({x}) = {got}, want {want}"
            );
        }
    }

    #[test]
    fn normal_cdf_matches_reference() {
        for (x, want) in CDF_REF {
            let got = normal_cdf(x);
            assert!(
                (got - want).abs() <= 1e-14,
                "Phi({x}) = {got}, want {want}"
            );
        }
    }

    #[test]
    fn quantile_matches_reference_to_1e12() {
        for (p, want) in QUANTILE_REF {
            let got = normal_quantile(p).unwrap();
            assert!(
                (got - want).abs() <= 1e-12 * (1.0 + want.abs()),
                "quantile({p}) = {got}, want {want}"
            );
        }
    }

    #[test]
    fn quantile_inverts_cdf() {
        for p in [1e-8, 1e-4, 0.2, 0.5, 0.77, 1.0 - 1e-6] {
            let x = normal_quantile(p).unwrap();
            assert!((normal_cdf(x) - p).abs() < 1e-12, "roundtrip at {p}");
        }
        assert!(normal_quantile(0.0).is_err());
        assert!(normal_quantile(1.0).is_err());
    }

    #[test]
    fn sup_cdf_matches_reference() {
        for (m, want) in SUP_CDF_REF {
            let got = brownian_sup_abs_cdf(m, 1.0).unwrap();
            assert!(
                (got - want).abs() <= 1e-12,
                "sup-cdf({m}) = {got}, want {want}"
            );
        }
        let q = brownian_sup_abs_quantile(0.90899947615363375135, 1.0).unwrap();
        assert!((q - 2.0).abs() < 1e-9, "sup-quantile roundtrip, got {q}");
    }

    #[test]
    fn ks_critical_known_values() {
        // n = 10_000 at 1%: 1.6276236 / (100 + 0.12 + 0.0011)
        let crit = ks_critical(10_000, 0.01).unwrap();
        assert!((crit - 1.6276236115189504 / 100.1211).abs() < 1e-9);
        assert!(ks_critical(100, 0.0).is_err());
    }

    #[test]
    fn ks_statistic_detects_shift() {
        // Uniform samples against the uniform CDF: D should be small;
        // against a shifted CDF: D should be large.
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        let d0 = ks_statistic(&xs, |x| x.clamp(0.0, 1.0)).unwrap();
        assert!(d0 < 0.002, "uniform vs uniform D = {d0}");
        let d1 = ks_statistic(&xs, |x| (x * x).clamp(0.0, 1.0)).unwrap();
        assert!(d1 > 0.2, "uniform vs square D = {d1}");
    }

    #[test]
    fn estimates_and_fit() {
        let e = EstimateWithCI::bernoulli(300, 1000).unwrap();
        assert!((e.value - 0.3).abs() < 1e-15);
        assert!((e.stderr - (0.3 * 0.7 / 1000.0_f64).sqrt()).abs() < 1e-15);
        assert!(EstimateWithCI::bernoulli(0, 0).is_err());

        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [3.0, 5.0, 7.0, 9.0];
        let fit = linear_fit(&xs, &ys).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!((fit.intercept - 1.0).abs() < 1e-12);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
    }
}
