//! Linear stability, integral gain bounds, Lyapunov values and collision
//! certificates.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::controllers::{self, ControlLaw, ControllerConfig};
use crate::error::{Error, ReasonCode, Result};
use crate::formation::{self, BearingLaplacian, RigidityReport, UniquenessReport};
use crate::linalg;
use crate::maneuver::{TargetDynamics, TargetTrajectory};
use crate::simulator::PreparedScenario;

/// Real-part threshold below which a mode counts as strictly stable.
pub const HURWITZ_TOL: f64 = 1e-10;
/// Leader accelerations below this count as zero.
pub const STATIC_ACCEL_TOL: f64 = 1e-9;

/// Error-state matrix of a law on the follower block.
///
/// States are `(δp, δv)` for the two-state laws and `(η, δp, δv)` with
/// `η = ∫δp` for the integral laws. Saturated laws are linearized at the
/// origin, where both saturation kinds have unit slope.
pub fn error_state_matrix(law: ControlLaw, laplacian: &BearingLaplacian, cfg: &ControllerConfig) -> DMatrix<f64> {
    let m = laplacian.ff.nrows();
    let eye = DMatrix::<f64>::identity(m, m);
    let gain = if law.uses_acceleration() { eye.clone() } else { laplacian.ff.clone() };
    if law.is_integral() {
        let mut a = DMatrix::zeros(3 * m, 3 * m);
        a.view_mut((0, m), (m, m)).copy_from(&eye);
        a.view_mut((m, 2 * m), (m, m)).copy_from(&eye);
        a.view_mut((2 * m, 0), (m, m)).copy_from(&(&gain * -cfg.k_i));
        a.view_mut((2 * m, m), (m, m)).copy_from(&(&gain * -cfg.k_p));
        a.view_mut((2 * m, 2 * m), (m, m)).copy_from(&(&gain * -cfg.k_v));
        a
    } else {
        let mut a = DMatrix::zeros(2 * m, 2 * m);
        a.view_mut((0, m), (m, m)).copy_from(&eye);
        a.view_mut((m, 0), (m, m)).copy_from(&(&gain * -cfg.k_p));
        a.view_mut((m, m), (m, m)).copy_from(&(&gain * -cfg.k_v));
        a
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralReport {
    pub law: ControlLaw,
    /// Eigenvalues of `L_ff`, ascending.
    pub mu: Vec<f64>,
    /// Closed-loop eigenvalues, sorted by real then imaginary part.
    pub lambda: Vec<Complex64>,
    pub hurwitz: bool,
    /// Largest real part.
    pub slowest_mode: f64,
}

pub fn spectral_report(law: ControlLaw, laplacian: &BearingLaplacian, cfg: &ControllerConfig) -> Result<SpectralReport> {
    let a = error_state_matrix(law, laplacian, cfg);
    let mut lambda = linalg::eigenvalues(&a)?;
    sort_complex(&mut lambda);
    let slowest_mode = lambda.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    Ok(SpectralReport {
        law,
        mu: laplacian.follower_eigenvalues(),
        lambda,
        hurwitz: slowest_mode < -HURWITZ_TOL,
        slowest_mode,
    })
}

/// Closed-loop eigenvalues predicted per follower-block eigenvalue `μ` from
/// the scalar characteristic polynomials.
pub fn predicted_eigenvalues(law: ControlLaw, mu: &[f64], cfg: &ControllerConfig) -> Result<Vec<Complex64>> {
    let mut out = Vec::new();
    for &m in mu {
        let s = if law.uses_acceleration() { 1.0 } else { m };
        let coeffs = if law.is_integral() {
            vec![1.0, cfg.k_v * s, cfg.k_p * s, cfg.k_i * s]
        } else {
            vec![1.0, cfg.k_v * s, cfg.k_p * s]
        };
        out.extend(polynomial_roots(&coeffs)?);
    }
    sort_complex(&mut out);
    Ok(out)
}

fn sort_complex(z: &mut [Complex64]) {
    z.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
}

/// Roots of `c[0] x^n + c[1] x^(n-1) + ... + c[n]` from the companion matrix.
pub fn polynomial_roots(coefficients: &[f64]) -> Result<Vec<Complex64>> {
    let lead = coefficients.iter().position(|c| *c != 0.0);
    let Some(lead) = lead else { return Ok(Vec::new()) };
    let c = &coefficients[lead..];
    let n = c.len() - 1;
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut comp = DMatrix::zeros(n, n);
    for j in 0..n {
        comp[(0, j)] = -c[j + 1] / c[0];
    }
    for i in 1..n {
        comp[(i, i - 1)] = 1.0;
    }
    linalg::eigenvalues(&comp)
}

/// Largest admissible `k_I` for an integral law: `k_p k_v λ_min(L_ff)`, or
/// `k_p k_v` for the acceleration variant.
pub fn integral_gain_bound(law: ControlLaw, laplacian: &BearingLaplacian, k_p: f64, k_v: f64) -> Result<f64> {
    match law {
        ControlLaw::PdIntegral => {
            let report = formation::check_uniqueness(laplacian);
            if !report.unique {
                return Err(Error::SingularFollowerBlock {
                    sigma_min: report.sigma_min,
                });
            }
            Ok(k_p * k_v * laplacian.lambda_min())
        }
        ControlLaw::AccelIntegral => Ok(k_p * k_v),
        other => Err(Error::UnsupportedLaw(other)),
    }
}

pub fn has_lyapunov(law: ControlLaw) -> bool {
    !law.is_integral()
}

/// Lyapunov function value of the error state for the non-integral laws.
pub fn lyapunov_value(
    law: ControlLaw,
    laplacian: &BearingLaplacian,
    cfg: &ControllerConfig,
    delta_p: &DVector<f64>,
    delta_v: &DVector<f64>,
) -> Result<f64> {
    let l = &laplacian.ff;
    match law {
        ControlLaw::Pd => Ok(cfg.k_p * delta_p.dot(&(l * delta_p)) + delta_v.norm_squared()),
        ControlLaw::Accel => Ok(cfg.k_p * delta_p.norm_squared() + delta_v.norm_squared()),
        ControlLaw::PdSat => Ok(controllers::saturated_pd_lyapunov(l, cfg, delta_p, delta_v)),
        ControlLaw::AccelSat => Ok(controllers::saturated_accel_lyapunov(l, cfg, delta_p, delta_v)),
        other => Err(Error::UnsupportedLaw(other)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollisionCertificate {
    pub law: ControlLaw,
    pub gamma: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub min_target_distance: f64,
    /// Whether the error dynamics match the certificate's model: no
    /// disturbance, and for PD, leaders moving at constant velocity.
    pub assumptions_hold: bool,
    pub guaranteed: bool,
}

/// Initial-condition test that keeps every pair of agents at least `gamma`
/// apart for the whole run.
pub fn collision_check(
    prepared: &PreparedScenario,
    target: &TargetTrajectory,
    gamma: f64,
) -> Result<CollisionCertificate> {
    let cfg = prepared.controller();
    let law = cfg.law;
    if !matches!(law, ControlLaw::Pd | ControlLaw::Accel) {
        return Err(Error::UnsupportedLaw(law));
    }
    let min_target_distance = target.min_pairwise_distance();
    if !(gamma >= 0.0) || gamma >= min_target_distance {
        return Err(Error::GammaTooLarge {
            gamma,
            min_distance: min_target_distance,
        });
    }
    let (dp, dv) = prepared.initial_errors()?;
    let n_f = prepared.graph().n_followers() as f64;
    let margin = (min_target_distance - gamma).powi(2);
    let (lhs, rhs) = match law {
        ControlLaw::Pd => (
            cfg.k_p * dp.dot(&(&prepared.laplacian.ff * &dp)) + dv.norm_squared(),
            cfg.k_p * prepared.laplacian.lambda_min() / n_f * margin,
        ),
        _ => (cfg.k_p * dp.norm_squared() + dv.norm_squared(), cfg.k_p / n_f * margin),
    };
    let undisturbed = cfg.disturbance.as_ref().is_none_or(|w| w.iter().all(|x| *x == 0.0));
    let assumptions_hold = undisturbed && (law == ControlLaw::Accel || leaders_unaccelerated(prepared, target)?);
    Ok(CollisionCertificate {
        law,
        gamma,
        lhs,
        rhs,
        min_target_distance,
        assumptions_hold,
        guaranteed: assumptions_hold && lhs < rhs,
    })
}

fn leaders_unaccelerated(prepared: &PreparedScenario, target: &TargetTrajectory) -> Result<bool> {
    let d = target.d;
    let nl = prepared.graph().n_leaders() * d;
    let dynamics = TargetDynamics::new(&prepared.scenario.profile, d);
    for (k, p) in target.positions.iter().enumerate() {
        let t = target.grid.time(k);
        let sample = prepared.scenario.profile.sample(t, t)?;
        let v = dynamics.velocity_from(&sample, p);
        let a = dynamics.acceleration_from(&sample, p, &v);
        if a.rows(0, nl).amax() > STATIC_ACCEL_TOL {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Warning {
    pub code: ReasonCode,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub name: String,
    pub uniqueness: UniquenessReport,
    pub rigidity: RigidityReport,
    pub lambda_min: f64,
    pub spectral: SpectralReport,
    pub integral_gain_bound: Option<f64>,
    pub collision: Option<CollisionCertificate>,
    pub warnings: Vec<Warning>,
}

/// Full static analysis of a validated scenario.
pub fn analyze(prepared: &PreparedScenario, gamma: Option<f64>) -> Result<AnalysisReport> {
    let cfg = prepared.controller();
    let rigidity = formation::rigidity_report(&prepared.scenario.reference, prepared.graph())?;
    let spectral = spectral_report(cfg.law, &prepared.laplacian, cfg)?;
    let mut warnings = Vec::new();
    let integral_gain_bound = if cfg.law.is_integral() {
        let bound = integral_gain_bound(cfg.law, &prepared.laplacian, cfg.k_p, cfg.k_v)?;
        if cfg.k_i >= bound {
            warnings.push(Warning {
                code: ReasonCode::BadGainBound,
                message: format!("k_I = {} is not below the stability bound {bound}", cfg.k_i),
            });
        }
        Some(bound)
    } else {
        None
    };
    let collision = match gamma {
        Some(g) => Some(collision_check(prepared, &prepared.target_trajectory()?, g)?),
        None => None,
    };
    Ok(AnalysisReport {
        name: prepared.scenario.name.clone(),
        uniqueness: prepared.uniqueness,
        rigidity,
        lambda_min: prepared.laplacian.lambda_min(),
        spectral,
        integral_gain_bound,
        collision,
        warnings,
    })
}

/// Greedy nearest-neighbor pairing of two spectra; returns the worst distance.
pub fn spectral_mismatch(a: &[Complex64], b: &[Complex64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let mut used = vec![false; b.len()];
    let mut worst: f64 = 0.0;
    for x in a {
        let (j, dist) = b
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .map(|(j, y)| (j, (x - y).norm()))
            .min_by(|p, q| p.1.total_cmp(&q.1))
            .expect("equal lengths");
        used[j] = true;
        worst = worst.max(dist);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formation::{bearings_of, examples};
    use approx::assert_relative_eq;

    fn square_l() -> BearingLaplacian {
        let (g, p) = examples::square();
        BearingLaplacian::build(&g, &bearings_of(&p, &g).unwrap()).unwrap()
    }

    #[test]
    fn pd_square_slowest_mode() {
        let l = square_l();
        let cfg = ControllerConfig::new(ControlLaw::Pd, 1.0, 1.0);
        let r = spectral_report(ControlLaw::Pd, &l, &cfg).unwrap();
        assert!(r.hurwitz);
        // μ_min = 0.14536232: λ = (-μ + sqrt(μ² - 4μ)) / 2 is complex, Re = -μ/2
        assert_relative_eq!(r.slowest_mode, -0.14536232 / 2.0, epsilon = 1e-7);
        assert_eq!(r.lambda.len(), 8);
    }

    #[test]
    fn spectra_match_scalar_polynomials() {
        let l = square_l();
        for law in [ControlLaw::Pd, ControlLaw::Accel, ControlLaw::PdIntegral, ControlLaw::AccelIntegral] {
            let cfg = ControllerConfig::new(law, 2.0, 1.5).with_integral(if law.is_integral() { 0.1 } else { 0.0 });
            let r = spectral_report(law, &l, &cfg).unwrap();
            let p = predicted_eigenvalues(law, &r.mu, &cfg).unwrap();
            assert!(spectral_mismatch(&r.lambda, &p) < 1e-8, "{law}");
        }
    }

    #[test]
    fn roots_of_known_polynomials() {
        let mut r = polynomial_roots(&[1.0, -6.0, 11.0, -6.0]).unwrap();
        sort_complex(&mut r);
        for (z, e) in r.iter().zip([1.0, 2.0, 3.0]) {
            assert_relative_eq!(z.re, e, epsilon = 1e-10);
            assert!(z.im.abs() < 1e-10);
        }
        let r = polynomial_roots(&[1.0, 0.0, 1.0]).unwrap();
        assert!(r.iter().all(|z| z.re.abs() < 1e-12 && (z.im.abs() - 1.0).abs() < 1e-12));
        assert!(polynomial_roots(&[0.0, 3.0]).unwrap().is_empty());
    }

    #[test]
    fn integral_bound_values() {
        let l = square_l();
        let b = integral_gain_bound(ControlLaw::PdIntegral, &l, 4.0, 4.0).unwrap();
        assert_relative_eq!(b, 16.0 * 0.14536232, epsilon = 1e-6);
        assert_eq!(integral_gain_bound(ControlLaw::AccelIntegral, &l, 2.0, 3.0).unwrap(), 6.0);
        assert!(integral_gain_bound(ControlLaw::Pd, &l, 1.0, 1.0).is_err());
    }

    #[test]
    fn lyapunov_unsupported_for_integral() {
        let l = square_l();
        let cfg = ControllerConfig::new(ControlLaw::PdIntegral, 1.0, 1.0).with_integral(0.1);
        let z = DVector::zeros(4);
        assert!(matches!(
            lyapunov_value(ControlLaw::PdIntegral, &l, &cfg, &z, &z),
            Err(Error::UnsupportedLaw(_))
        ));
    }

    #[test]
    fn mismatch_pairs_greedily() {
        let a = [Complex64::new(1.0, 0.0), Complex64::new(2.0, 0.0)];
        let b = [Complex64::new(2.0, 0.0), Complex64::new(1.0, 1e-9)];
        assert!(spectral_mismatch(&a, &b) < 1e-8);
        assert!(spectral_mismatch(&a, &b[..1]).is_infinite());
    }
}
