//! Severity distributions on `[0, 1]` and the upper concave envelope of their CDF.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default bisection tolerance on `y` for the envelope breakpoint.
pub const ENVELOPE_TOL: f64 = 1e-10;
const ENVELOPE_MAX_ITER: usize = 200;

/// Distribution of the disturbance severity `Y`, supported on `[0, 1]`.
///
/// Every non-uniform kind is S-shaped: the CDF is convex below the mode and
/// concave above it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SeveritySpec", into = "SeveritySpec")]
pub enum SeverityModel {
    Uniform,
    Triangular { beta: f64 },
    /// Piecewise quadratic S-curve: `k1 y^2` below `beta`, `y - k2 (1-y)^2` above.
    SCurve { beta: f64 },
    /// Normal distribution renormalized to `[0, 1]`.
    TruncatedNormal { mean: f64, std: f64 },
}

/// Wire form of [`SeverityModel`]: `{"type": ..., "params": {...}}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", content = "params", rename_all = "snake_case")]
enum SeveritySpec {
    Uniform {},
    Triangular { beta: f64 },
    Scurve { beta: f64 },
    TruncatedNormal { mean: f64, std: f64 },
}

impl TryFrom<SeveritySpec> for SeverityModel {
    type Error = Error;

    fn try_from(spec: SeveritySpec) -> Result<Self> {
        let model = match spec {
            SeveritySpec::Uniform {} => SeverityModel::Uniform,
            SeveritySpec::Triangular { beta } => SeverityModel::Triangular { beta },
            SeveritySpec::Scurve { beta } => SeverityModel::SCurve { beta },
            SeveritySpec::TruncatedNormal { mean, std } => {
                SeverityModel::TruncatedNormal { mean, std }
            }
        };
        model.validate()?;
        Ok(model)
    }
}

impl From<SeverityModel> for SeveritySpec {
    fn from(model: SeverityModel) -> Self {
        match model {
            SeverityModel::Uniform => SeveritySpec::Uniform {},
            SeverityModel::Triangular { beta } => SeveritySpec::Triangular { beta },
            SeverityModel::SCurve { beta } => SeveritySpec::Scurve { beta },
            SeverityModel::TruncatedNormal { mean, std } => {
                SeveritySpec::TruncatedNormal { mean, std }
            }
        }
    }
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn check_unit(y: f64) -> Result<()> {
    if (0.0..=1.0).contains(&y) {
        Ok(())
    } else {
        Err(Error::Domain(y))
    }
}

impl SeverityModel {
    pub fn triangular(beta: f64) -> Result<Self> {
        let m = SeverityModel::Triangular { beta };
        m.validate()?;
        Ok(m)
    }

    pub fn scurve(beta: f64) -> Result<Self> {
        let m = SeverityModel::SCurve { beta };
        m.validate()?;
        Ok(m)
    }

    pub fn truncated_normal(mean: f64, std: f64) -> Result<Self> {
        let m = SeverityModel::TruncatedNormal { mean, std };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SeverityModel::Uniform => Ok(()),
            SeverityModel::Triangular { beta } | SeverityModel::SCurve { beta } => {
                if beta > 0.0 && beta < 1.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidSeverity(format!("mode must lie in (0, 1), got {beta}")))
                }
            }
            SeverityModel::TruncatedNormal { mean, std } => {
                if !(mean > 0.0 && mean < 1.0) {
                    return Err(Error::InvalidSeverity(format!(
                        "mean must lie in (0, 1), got {mean}"
                    )));
                }
                let limit = (mean / 3.0).min((1.0 - mean) / 3.0);
                if !(std > 0.0) || std > limit * (1.0 + 1e-12) {
                    return Err(Error::InvalidSeverity(format!(
                        "std must lie in (0, {limit}], got {std}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Short lowercase name used in reports and CSV output.
    pub fn kind(&self) -> &'static str {
        match self {
            SeverityModel::Uniform => "uniform",
            SeverityModel::Triangular { .. } => "triangular",
            SeverityModel::SCurve { .. } => "scurve",
            SeverityModel::TruncatedNormal { .. } => "truncated_normal",
        }
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self, SeverityModel::Uniform)
    }

    /// `P(Y <= y)`. Rejects `y` outside `[0, 1]`.
    pub fn cdf(&self, y: f64) -> Result<f64> {
        check_unit(y)?;
        Ok(self.eval_cdf(y))
    }

    /// Density of `Y` at `y`. Rejects `y` outside `[0, 1]`.
    pub fn pdf(&self, y: f64) -> Result<f64> {
        check_unit(y)?;
        Ok(self.eval_pdf(y))
    }

    /// The mode `beta`, where the CDF switches from convex to concave.
    pub fn mode(&self) -> Result<f64> {
        match *self {
            SeverityModel::Uniform => Err(Error::ModeUndefined),
            SeverityModel::Triangular { beta } | SeverityModel::SCurve { beta } => Ok(beta),
            SeverityModel::TruncatedNormal { mean, .. } => Ok(mean),
        }
    }

    /// Upper end of the convex region: the mode, or 0 for uniform (treated as concave).
    pub fn convex_limit(&self) -> f64 {
        self.mode().unwrap_or(0.0)
    }

    /// CDF with the argument clamped into `[0, 1]`.
    pub fn eval_cdf(&self, y: f64) -> f64 {
        let y = y.clamp(0.0, 1.0);
        match *self {
            SeverityModel::Uniform => y,
            SeverityModel::Triangular { beta } => {
                if y <= beta {
                    y * y / beta
                } else {
                    1.0 - (1.0 - y) * (1.0 - y) / (1.0 - beta)
                }
            }
            SeverityModel::SCurve { beta } => {
                let (k1, k2) = scurve_coefficients(beta);
                if y <= beta {
                    k1 * y * y
                } else {
                    y - k2 * (1.0 - y) * (1.0 - y)
                }
            }
            SeverityModel::TruncatedNormal { mean, std } => {
                let lo = std_normal_cdf(-mean / std);
                let hi = std_normal_cdf((1.0 - mean) / std);
                if y >= 1.0 {
                    return 1.0;
                }
                ((std_normal_cdf((y - mean) / std) - lo) / (hi - lo)).clamp(0.0, 1.0)
            }
        }
    }

    /// Density with the argument clamped into `[0, 1]`.
    pub fn eval_pdf(&self, y: f64) -> f64 {
        let y = y.clamp(0.0, 1.0);
        match *self {
            SeverityModel::Uniform => 1.0,
            SeverityModel::Triangular { beta } => {
                if y <= beta {
                    2.0 * y / beta
                } else {
                    2.0 * (1.0 - y) / (1.0 - beta)
                }
            }
            SeverityModel::SCurve { beta } => {
                let (k1, k2) = scurve_coefficients(beta);
                if y <= beta {
                    2.0 * k1 * y
                } else {
                    1.0 + 2.0 * k2 * (1.0 - y)
                }
            }
            SeverityModel::TruncatedNormal { mean, std } => {
                let lo = std_normal_cdf(-mean / std);
                let hi = std_normal_cdf((1.0 - mean) / std);
                std_normal_pdf((y - mean) / std) / (std * (hi - lo))
            }
        }
    }

    /// Inverse CDF, used for sampling. `u` is clamped into `[0, 1]`.
    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match *self {
            SeverityModel::Uniform => u,
            SeverityModel::Triangular { beta } => {
                if u <= beta {
                    (u * beta).sqrt()
                } else {
                    1.0 - ((1.0 - u) * (1.0 - beta)).sqrt()
                }
            }
            SeverityModel::SCurve { beta } => {
                let (k1, k2) = scurve_coefficients(beta);
                if u <= k1 * beta * beta {
                    (u / k1).sqrt()
                } else {
                    // y - k2 (1-y)^2 = u with z = 1 - y: k2 z^2 + z - (1 - u) = 0
                    let z = 2.0 * (1.0 - u) / (1.0 + (1.0 + 4.0 * k2 * (1.0 - u)).sqrt());
                    1.0 - z
                }
            }
            SeverityModel::TruncatedNormal { .. } => {
                let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
                while hi - lo > 1e-12 {
                    let mid = 0.5 * (lo + hi);
                    if self.eval_cdf(mid) < u {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
        }
    }
}

/// `(k1, k2)` of the quadratic S-curve with mode `beta`.
pub fn scurve_coefficients(beta: f64) -> (f64, f64) {
    (1.0 / (2.0 * beta) + 0.5, beta / (2.0 * (1.0 - beta)))
}

/// Smallest concave majorant of a severity CDF.
///
/// Linear from the origin with `slope` up to `breakpoint`, then equal to the CDF.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeModel {
    pub base: SeverityModel,
    pub breakpoint: f64,
    pub slope: f64,
    /// Set when no tangent point was found in `[beta, 1]` and the chord to `(1, 1)` is used.
    pub endpoint: bool,
}

impl EnvelopeModel {
    /// The envelope that coincides with the CDF itself (uniform severity).
    pub fn identity(base: SeverityModel) -> Self {
        EnvelopeModel {
            base,
            breakpoint: 0.0,
            slope: 1.0,
            endpoint: false,
        }
    }

    pub fn value(&self, y: f64) -> f64 {
        let y = y.clamp(0.0, 1.0);
        if y < self.breakpoint {
            self.slope * y
        } else {
            self.base.eval_cdf(y)
        }
    }

    /// Supergradient; at the breakpoint the slope of the linear piece is returned.
    pub fn derivative(&self, y: f64) -> f64 {
        if y <= self.breakpoint {
            self.slope
        } else {
            self.base.eval_pdf(y)
        }
    }
}

/// Builds the upper concave envelope by bisection on `g(y) = F(y) - y f(y)` over `[beta, 1]`.
///
/// `g` is nondecreasing on the concave region, so the bisection returns its
/// smallest root. The slope is taken as `F(y~) / y~`, which keeps the
/// envelope continuous; it equals `f(y~)` up to the bisection tolerance.
pub fn concave_envelope(model: &SeverityModel, tol: f64) -> EnvelopeModel {
    let beta = match model.mode() {
        Ok(beta) => beta,
        Err(_) => return EnvelopeModel::identity(*model),
    };
    let g = |y: f64| model.eval_cdf(y) - y * model.eval_pdf(y);
    if g(1.0) < 0.0 {
        return EnvelopeModel {
            base: *model,
            breakpoint: 1.0,
            slope: 1.0,
            endpoint: true,
        };
    }
    let (mut lo, mut hi) = (beta, 1.0);
    if g(lo) >= 0.0 {
        hi = lo;
    }
    let mut iter = 0;
    while hi - lo > tol && iter < ENVELOPE_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if g(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        iter += 1;
    }
    EnvelopeModel {
        base: *model,
        breakpoint: hi,
        slope: model.eval_cdf(hi) / hi,
        endpoint: false,
    }
}
