use super::GlmFit;
use crate::{Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0` (Lanczos approximation).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection keeps the approximation in its accurate range.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Upper regularized incomplete gamma `Q(a, x)`.
///
/// Uses the power series for `P` when `x < a + 1` and a Lentz continued
/// fraction for `Q` otherwise.
pub fn regularized_gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let log_prefix = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..1000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        (1.0 - sum * log_prefix.exp()).max(0.0)
    } else {
        const TINY: f64 = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..1000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        (log_prefix.exp() * h).min(1.0)
    }
}

/// Upper tail probability of a chi-square distribution with `df` degrees of freedom.
pub fn chisq_sf(stat: f64, df: usize) -> f64 {
    regularized_gamma_q(df as f64 / 2.0, stat / 2.0)
}

/// Likelihood-ratio test p-value for nested fits.
pub fn lr_pvalue(full: &GlmFit, reduced: &GlmFit, df: usize) -> Result<f64> {
    if df == 0 {
        return Err(Error::Config("likelihood-ratio test needs df >= 1".into()));
    }
    let (lf, lr) = (full.log_likelihood, reduced.log_likelihood);
    if lf < lr - 1e-8 {
        return Err(Error::LikelihoodOrder { full: lf, reduced: lr });
    }
    Ok(chisq_sf((2.0 * (lf - lr)).max(0.0), df))
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    use statrs::function::gamma::ln_gamma as statrs_ln_gamma;

    #[test]
    fn ln_gamma_matches_reference() {
        for &x in &[0.1, 0.5, 1.0, 1.5, 2.0, 3.7, 10.0, 55.5, 170.0] {
            assert!((ln_gamma(x) - statrs_ln_gamma(x)).abs() < 1e-10 * (1.0 + statrs_ln_gamma(x).abs()), "x={x}");
        }
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-13);
    }

    #[test]
    fn chisq_tail_matches_reference() {
        for df in 1..=12 {
            let dist = ChiSquared::new(df as f64).unwrap();
            for &x in &[1e-6, 0.01, 0.3, 1.0, 2.5, 3.841, 6.635, 10.0, 25.0, 60.0, 150.0] {
                let ours = chisq_sf(x, df);
                let reference = 1.0 - dist.cdf(x);
                assert!((ours - reference).abs() < 1e-10, "df={df} x={x} ours={ours} ref={reference}");
            }
        }
        assert_eq!(chisq_sf(0.0, 1), 1.0);
    }

    #[test]
    fn quantile_points() {
        assert!((chisq_sf(3.841, 1) - 0.05).abs() < 1e-3);
        assert!((chisq_sf(6.635, 1) - 0.01).abs() < 1e-3);
    }

    fn fit(ll: f64) -> GlmFit {
        GlmFit {
            coefficients: vec![0.0],
            std_errors: vec![1.0],
            log_likelihood: ll,
            converged: true,
            separation: false,
            iterations: 1,
            aliased: vec![],
        }
    }

    #[test]
    fn lr_test_contract() {
        assert_eq!(lr_pvalue(&fit(-10.0), &fit(-10.0), 1).unwrap(), 1.0);
        assert!((lr_pvalue(&fit(-10.0), &fit(-10.0 - 3.841 / 2.0), 1).unwrap() - 0.05).abs() < 1e-3);
        assert!(lr_pvalue(&fit(-10.0 - 1e-9), &fit(-10.0), 1).unwrap() == 1.0);
        assert!(matches!(lr_pvalue(&fit(-11.0), &fit(-10.0), 1), Err(Error::LikelihoodOrder { .. })));
        assert!(lr_pvalue(&fit(-1.0), &fit(-2.0), 0).is_err());
    }
}
