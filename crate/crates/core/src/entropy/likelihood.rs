//! Discretized Gaussian likelihoods for quantized latents.

use libm::{erfc, exp, log, log1p};

/// Floor applied to every bin probability in the rate surrogate.
pub const LIKELIHOOD_FLOOR: f64 = 1e-9;
/// Smallest scale a [`super::LatentCode`] may carry.
pub const SIGMA_MIN: f64 = 1e-6;
/// Offset added to the softplus scale parameterization of the networks.
pub const SCALE_FLOOR: f64 = 0.11;

const LN_2: f64 = core::f64::consts::LN_2;
const FRAC_1_SQRT_2: f64 = core::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

pub fn normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * exp(-0.5 * x * x)
}

/// `softplus(raw) + SCALE_FLOOR`; the scale every hyper-decoder channel and
/// hyper-prior parameter maps to.
pub fn scale_from_raw(raw: f64) -> f64 {
    let sp = if raw > 30.0 { raw } else { log1p(exp(raw)) };
    sp + SCALE_FLOOR
}

/// d scale / d raw.
pub fn scale_from_raw_grad(raw: f64) -> f64 {
    1.0 / (1.0 + exp(-raw))
}

/// Probability of the unit-width bin centred on `value` under `N(mean, sigma^2)`.
///
/// Evaluated on the tail nearest the bin so that far-out bins keep their
/// relative precision.
pub fn gaussian_bin_mass(value: f64, mean: f64, sigma: f64) -> f64 {
    let sigma = sigma.max(SIGMA_MIN);
    let v = value - mean;
    let upper = (v + 0.5) / sigma;
    let lower = (v - 0.5) / sigma;
    if v > 0.0 {
        normal_cdf(-lower) - normal_cdf(-upper)
    } else {
        normal_cdf(upper) - normal_cdf(lower)
    }
}

/// `-log2` of the floored bin mass together with its partial derivatives
/// with respect to the value and the scale (the mean derivative is the
/// negated value derivative).
pub fn gaussian_bin_bits(value: f64, mean: f64, sigma: f64) -> (f64, f64, f64) {
    let sigma = sigma.max(SIGMA_MIN);
    let p = gaussian_bin_mass(value, mean, sigma);
    if p <= LIKELIHOOD_FLOOR {
        return (-log(LIKELIHOOD_FLOOR) / LN_2, 0.0, 0.0);
    }
    let v = value - mean;
    let upper = (v + 0.5) / sigma;
    let lower = (v - 0.5) / sigma;
    let (pu, pl) = (normal_pdf(upper), normal_pdf(lower));
    let dp_dv = (pu - pl) / sigma;
    let dp_ds = -(pu * upper - pl * lower) / sigma;
    let scale = -1.0 / (p * LN_2);
    (-log(p) / LN_2, scale * dp_dv, scale * dp_ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_gaussian_zero_bin() {
        let (bits, _, _) = gaussian_bin_bits(0.0, 0.0, 1.0);
        // Simpson quadrature of the standard normal density over [-0.5, 0.5].
        let n = 1000;
        let h = 1.0 / n as f64;
        let mut mass = normal_pdf(-0.5) + normal_pdf(0.5);
        for i in 1..n {
            mass += if i % 2 == 1 { 4.0 } else { 2.0 } * normal_pdf(-0.5 + i as f64 * h);
        }
        mass *= h / 3.0;
        assert!((bits + libm::log2(mass)).abs() < 1e-10);
        assert!((bits - 1.384_866_534_291).abs() < 1e-9);
    }

    #[test]
    fn concentrated_mass_costs_nothing() {
        let (bits, _, _) = gaussian_bin_bits(3.0, 3.0, SIGMA_MIN);
        assert!((0.0..1e-9).contains(&bits));
    }

    #[test]
    fn tail_mass_is_symmetric() {
        for v in [0.0, 0.7, 3.0, 12.0] {
            let a = gaussian_bin_mass(v, 0.25, 1.3);
            let b = gaussian_bin_mass(-v + 0.5, 0.25, 1.3);
            assert!((a - b).abs() <= 1e-15 * a.max(1e-300), "{v}: {a} vs {b}");
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for &(y, m, s) in &[(1.0, 0.3, 0.8), (-2.0, 0.1, 1.7), (0.0, -0.4, 0.5)] {
            let (_, dv, ds) = gaussian_bin_bits(y, m, s);
            let h = 1e-6;
            let fv = (gaussian_bin_bits(y + h, m, s).0 - gaussian_bin_bits(y - h, m, s).0) / (2.0 * h);
            let fs = (gaussian_bin_bits(y, m, s + h).0 - gaussian_bin_bits(y, m, s - h).0) / (2.0 * h);
            assert!((dv - fv).abs() < 1e-6 * (1.0 + fv.abs()));
            assert!((ds - fs).abs() < 1e-6 * (1.0 + fs.abs()));
        }
    }
}
