//! Diffusion-theory coefficients and the Fresnel-mismatch boundary factor.

/// Speed of light in vacuum, mm/ps.
pub const SPEED_OF_LIGHT_MM_PER_PS: f64 = 0.299_792_458;

/// Diffusion coefficient `κ = 1 / (3 (μa + μs′))` in mm.
pub fn diffusion_coefficient(mua: f64, musp: f64) -> f64 {
    1.0 / (3.0 * (mua + musp))
}

/// Effective attenuation `sqrt(μa / κ)` in mm⁻¹.
pub fn effective_attenuation(mua: f64, musp: f64) -> f64 {
    (mua / diffusion_coefficient(mua, musp)).sqrt()
}

/// Speed of light in a medium of refractive index `n`, mm/ps.
pub fn light_speed(n: f64) -> f64 {
    SPEED_OF_LIGHT_MM_PER_PS / n
}

/// Unpolarized Fresnel reflectance for light inside a medium of index `n`
/// hitting an interface with air at incidence angle `theta`.
fn fresnel_reflectance(n: f64, theta: f64) -> f64 {
    let st = n * theta.sin();
    if st >= 1.0 {
        return 1.0;
    }
    let ci = theta.cos();
    let ct = (1.0 - st * st).sqrt();
    let rs = (n * ci - ct) / (n * ci + ct);
    let rp = (n * ct - ci) / (n * ct + ci);
    0.5 * (rs * rs + rp * rp)
}

/// Composite Gauss-Legendre quadrature (8 points per panel) on `[a, b]`.
fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    const X: [f64; 4] = [
        0.183_434_642_495_649_8,
        0.525_532_409_916_329,
        0.796_666_477_413_626_7,
        0.960_289_856_497_536_3,
    ];
    const W: [f64; 4] = [
        0.362_683_783_378_362,
        0.313_706_645_877_887_3,
        0.222_381_034_453_374_5,
        0.101_228_536_290_376_3,
    ];
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        let half = 0.5 * h;
        for k in 0..4 {
            total += W[k] * half * (f(mid - half * X[k]) + f(mid + half * X[k]));
        }
    }
    total
}

/// Effective reflection coefficient of a tissue/air boundary, from angular
/// moments of the Fresnel reflectance (fluence and flux weighting).
pub fn effective_reflection(n: f64) -> f64 {
    if n <= 1.0 {
        return 0.0;
    }
    let critical = (1.0 / n).asin();
    let half_pi = std::f64::consts::FRAC_PI_2;
    let moment = |weight: fn(f64) -> f64| {
        let g = |t: f64| weight(t) * fresnel_reflectance(n, t);
        // Below the critical angle the reflectance has a square-root
        // singularity at `critical`; `t = critical − s²` removes it.
        let below = integrate(|s| 2.0 * s * g(critical - s * s), 0.0, critical.sqrt(), 64);
        below + integrate(g, critical, half_pi, 64)
    };
    let r_phi = moment(|t| 2.0 * t.sin() * t.cos());
    let r_j = moment(|t| 3.0 * t.sin() * t.cos() * t.cos());
    (r_phi + r_j) / (2.0 - r_phi + r_j)
}

/// Robin boundary factor `A = (1 + R_eff) / (1 − R_eff)`.
pub fn boundary_factor(n: f64) -> f64 {
    let r = effective_reflection(n);
    (1.0 + r) / (1.0 - r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kappa_for_default_tissue() {
        assert!((diffusion_coefficient(0.02, 0.67) - 0.48309).abs() < 1e-5);
        let musp = 0.25;
        assert!((diffusion_coefficient(1.0 / 3.0 - musp, musp) - 1.0).abs() < 1e-12);
        assert!((effective_attenuation(0.02, 0.67) - 0.20347).abs() < 1e-5);
        assert!((effective_attenuation(0.02, 0.67) - (3.0f64 * 0.02 * 0.69).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn reflection_for_tissue_index() {
        let r = effective_reflection(1.4);
        assert!((r - 0.493).abs() < 1e-3, "R_eff = {r}");
        // Independent adaptive quadrature gives 0.4934775882.
        assert!((r - 0.493_477_588).abs() < 1e-6, "R_eff = {r}");
        assert!((boundary_factor(1.4) - 2.948_49).abs() < 1e-4);
    }

    #[test]
    fn matched_index_has_no_reflection() {
        assert_eq!(effective_reflection(1.0), 0.0);
        assert_eq!(boundary_factor(1.0), 1.0);
        assert!(effective_reflection(1.33) < effective_reflection(1.4));
    }
}
