//! Matérn covariance kernels, Karhunen-Loève bases and log-normal
//! scattering cross-section fields on the unit interval.

mod cache;
mod nystrom;

pub use cache::KlStore;
pub use nystrom::{build_kl_basis, KlBasis};

use crate::error::{Error, Result};

/// Smoothness of a Matérn kernel. Half-integer orders have closed-form
/// Bessel factors; the Gaussian kernel is the nu -> infinity limit.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Smoothness {
    /// Finite smoothness nu >= 0.5. Only half-integer values are supported.
    Nu(f64),
    /// Limiting Gaussian covariance exp(-|x-y|^2 / lambda^2).
    Gaussian,
}

/// Parameters of a Matérn covariance on [0,1].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MaternParams {
    pub smoothness: Smoothness,
    /// Correlation length lambda_C > 0.
    pub lambda_c: f64,
    /// Marginal variance sigma_var^2 > 0.
    pub sigma_var_sq: f64,
}

impl MaternParams {
    pub fn new(smoothness: Smoothness, lambda_c: f64, sigma_var_sq: f64) -> Result<Self> {
        let p = MaternParams {
            smoothness,
            lambda_c,
            sigma_var_sq,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_c > 0.0) || !self.lambda_c.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "correlation length must be positive, got {}",
                self.lambda_c
            )));
        }
        if !(self.sigma_var_sq > 0.0) || !self.sigma_var_sq.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "variance must be positive, got {}",
                self.sigma_var_sq
            )));
        }
        if let Smoothness::Nu(nu) = self.smoothness {
            if !(nu >= 0.5) {
                return Err(Error::InvalidParameter(format!(
                    "smoothness must satisfy nu >= 0.5, got {nu}"
                )));
            }
            if half_integer_order(nu).is_none() {
                return Err(Error::InvalidParameter(format!(
                    "only half-integer smoothness (0.5, 1.5, 2.5, ...) is supported, got {nu}"
                )));
            }
        }
        Ok(())
    }
}

/// nu = m + 1/2 for integer m >= 0, within floating-point slack.
fn half_integer_order(nu: f64) -> Option<usize> {
    let m = nu - 0.5;
    let rounded = m.round();
    if (m - rounded).abs() < 1e-9 && rounded >= 0.0 {
        Some(rounded as usize)
    } else {
        None
    }
}

/// Matérn covariance C_nu(x, y).
///
/// For half-integer nu = m + 1/2 the modified Bessel factor K_nu reduces to
/// a finite sum, so the kernel is evaluated in closed form with
/// z = 2 sqrt(nu) |x-y| / lambda:
///   nu = 1/2: sigma^2 exp(-z)
///   nu = 3/2: sigma^2 (1 + z) exp(-z)
///   nu = 5/2: sigma^2 (1 + z + z^2/3) exp(-z), and so on.
/// The removable singularity at x = y returns sigma^2 directly.
pub fn matern_covariance(x: f64, y: f64, p: &MaternParams) -> Result<f64> {
    p.validate()?;
    Ok(kernel_value(x, y, p))
}

/// Kernel evaluation for pre-validated parameters.
pub(crate) fn kernel_value(x: f64, y: f64, p: &MaternParams) -> f64 {
    let r = (x - y).abs();
    match p.smoothness {
        Smoothness::Gaussian => {
            let t = r / p.lambda_c;
            p.sigma_var_sq * (-t * t).exp()
        }
        Smoothness::Nu(nu) => {
            if r < 1e-12 * p.lambda_c {
                return p.sigma_var_sq;
            }
            let z = 2.0 * nu.sqrt() * r / p.lambda_c;
            let m = half_integer_order(nu).expect("validated smoothness");
            p.sigma_var_sq * half_integer_matern(m, z)
        }
    }
}

/// Normalised Matérn profile for nu = m + 1/2 at scaled distance z > 0:
///   exp(-z) * m! / (2m)! * sum_{k=0}^{m} (m+k)! / (k! (m-k)!) (2z)^{m-k}
/// which equals 1 at z = 0 and reproduces exp(-z) and (1+z)exp(-z)
/// for m = 0, 1.
fn half_integer_matern(m: usize, z: f64) -> f64 {
    let mut sum = 0.0;
    for k in 0..=m {
        let c = factorial(m + k) / (factorial(k) * factorial(m - k));
        sum += c * (2.0 * z).powi((m - k) as i32);
    }
    let norm = factorial(m) / factorial(2 * m);
    norm * sum * (-z).exp()
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// Field families exercised by the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    /// Matérn with nu = 1.5.
    Matern15,
    /// Matérn with nu = 0.5 (exponential covariance).
    Exponential,
    /// Gaussian covariance (nu -> infinity limit).
    Gaussian,
}

impl FieldKind {
    pub fn params(&self, lambda_c: f64, sigma_var_sq: f64) -> Result<MaternParams> {
        let smoothness = match self {
            FieldKind::Matern15 => Smoothness::Nu(1.5),
            FieldKind::Exponential => Smoothness::Nu(0.5),
            FieldKind::Gaussian => Smoothness::Gaussian,
        };
        MaternParams::new(smoothness, lambda_c, sigma_var_sq)
    }

    pub fn name(&self) -> &'static str {
        match self {
            FieldKind::Matern15 => "matern15",
            FieldKind::Exponential => "exponential",
            FieldKind::Gaussian => "gaussian",
        }
    }
}

impl std::str::FromStr for FieldKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "matern15" => Ok(FieldKind::Matern15),
            "exponential" => Ok(FieldKind::Exponential),
            "gaussian" => Ok(FieldKind::Gaussian),
            other => Err(Error::InvalidParameter(format!(
                "unknown field kind '{other}' (expected matern15 | exponential | gaussian)"
            ))),
        }
    }
}

/// Number of KL modes retained at mesh width h.
///
/// The rule keeps the truncation error negligible relative to the
/// discretisation error: 8/h modes for the Matérn-1.5 field and
/// 225/sqrt(h) for the rougher exponential field. The Gaussian kernel's
/// eigenvalues decay superexponentially, so its count is capped where the
/// modes fall below double-precision resolution.
pub fn truncation_dimension(kind: FieldKind, h: f64) -> usize {
    match kind {
        FieldKind::Matern15 => (8.0 / h).ceil() as usize,
        FieldKind::Exponential => (225.0 / h.sqrt()).ceil() as usize,
        FieldKind::Gaussian => ((8.0 / h).ceil() as usize).min(GAUSSIAN_MODE_CAP),
    }
}

/// Beyond ~40 modes the Gaussian-kernel eigenvalues (lambda_C = 1) are below
/// 1e-50 and indistinguishable from eigensolver noise.
const GAUSSIAN_MODE_CAP: usize = 40;

/// Default Nyström quadrature resolution for a d-mode basis.
pub fn default_quad_size(d: usize) -> usize {
    512.max(8 * d)
}

/// Cross-section values of one field realisation at the mesh midpoints.
#[derive(Debug, Clone)]
pub struct CrossSections {
    /// Scattering cross-section sigma_S at midpoints (log-normal sample).
    pub sigma_s_mid: Vec<f64>,
    /// Deterministic absorption cross-section sigma_A at midpoints.
    pub sigma_a_mid: Vec<f64>,
    /// Total cross-section sigma = sigma_S + sigma_A at midpoints.
    pub sigma_mid: Vec<f64>,
    /// max_j sigma_S / sigma over midpoints; the source-iteration rate proxy.
    pub rho: f64,
}

impl CrossSections {
    pub fn new(sigma_s_mid: Vec<f64>, sigma_a_mid: Vec<f64>) -> Result<Self> {
        if sigma_s_mid.len() != sigma_a_mid.len() {
            return Err(Error::Dimension(format!(
                "sigma_S has {} midpoints, sigma_A has {}",
                sigma_s_mid.len(),
                sigma_a_mid.len()
            )));
        }
        let mut sigma_mid = Vec::with_capacity(sigma_s_mid.len());
        let mut rho: f64 = 0.0;
        for (&s, &a) in sigma_s_mid.iter().zip(&sigma_a_mid) {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "scattering cross-section must be positive and finite, got {s}"
                )));
            }
            if !(a > 0.0) || !a.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "absorption cross-section must be positive and finite, got {a}"
                )));
            }
            let total = s + a;
            rho = rho.max(s / total);
            sigma_mid.push(total);
        }
        Ok(CrossSections {
            sigma_s_mid,
            sigma_a_mid,
            sigma_mid,
            rho,
        })
    }

    /// Purely absorbing medium (sigma_S = 0). Outside the random model
    /// (rho = 0); used for verification problems.
    pub fn pure_absorber(sigma_a_mid: Vec<f64>) -> Self {
        let m = sigma_a_mid.len();
        CrossSections {
            sigma_s_mid: vec![0.0; m],
            sigma_mid: sigma_a_mid.clone(),
            sigma_a_mid,
            rho: 0.0,
        }
    }
}
