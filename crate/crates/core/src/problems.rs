//! Manufactured Poisson problems `-lap u = f` with Dirichlet data `g`.
//!
//! Every forcing term below is `-lap` of the stated exact solution, expanded
//! by hand; the finite-difference tests lock the expansions.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::geometry::Rect;
use crate::{Error, Result};

/// Catalog entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "lowercase")]
pub enum ProblemKind {
    /// `u = sin(2 pi x)` on (-1, 1).
    Smooth1d,
    /// Five-scale sine series on (-1, 1).
    Multiscale1d,
    /// `u = sin(pi x) sin(pi y)` on the unit square.
    Smooth2d,
    /// `u = A x(1-x) y(1-y) sin((x-1/2)(y-1/2)/eps)` on the unit square.
    #[serde(rename = "highcontrast2d")]
    HighContrast2d {
        #[serde(rename = "A")]
        amplitude: f64,
        eps: f64,
    },
}

const MULTISCALE_TERMS: [(f64, f64); 5] = [(5.0, 1.0), (1.0, 8.0), (0.5, 16.0), (0.25, 32.0), (0.125, 64.0)];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoissonProblem {
    pub kind: ProblemKind,
    pub domain: Rect,
}

pub fn smooth_1d() -> PoissonProblem {
    PoissonProblem {
        kind: ProblemKind::Smooth1d,
        domain: Rect::interval(-1.0, 1.0),
    }
}

pub fn multiscale_1d() -> PoissonProblem {
    PoissonProblem {
        kind: ProblemKind::Multiscale1d,
        domain: Rect::interval(-1.0, 1.0),
    }
}

pub fn smooth_2d() -> PoissonProblem {
    PoissonProblem {
        kind: ProblemKind::Smooth2d,
        domain: Rect::rectangle([0.0, 0.0], [1.0, 1.0]),
    }
}

pub fn high_contrast_2d(amplitude: f64, eps: f64) -> Result<PoissonProblem> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::config(format!("eps must be positive, got {eps}")));
    }
    if !amplitude.is_finite() {
        return Err(Error::config("amplitude must be finite"));
    }
    Ok(PoissonProblem {
        kind: ProblemKind::HighContrast2d { amplitude, eps },
        domain: Rect::rectangle([0.0, 0.0], [1.0, 1.0]),
    })
}

impl ProblemKind {
    pub fn id(&self) -> &'static str {
        match self {
            ProblemKind::Smooth1d => "smooth1d",
            ProblemKind::Multiscale1d => "multiscale1d",
            ProblemKind::Smooth2d => "smooth2d",
            ProblemKind::HighContrast2d { .. } => "highcontrast2d",
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProblemKind::HighContrast2d { amplitude, eps } => {
                write!(f, "highcontrast2d(A={amplitude}, eps={eps})")
            }
            other => f.write_str(other.id()),
        }
    }
}

impl PoissonProblem {
    /// Looks up a catalog problem by its CLI id.
    pub fn from_id(id: &str, amplitude: Option<f64>, eps: Option<f64>) -> Result<Self> {
        match id {
            "smooth1d" => Ok(smooth_1d()),
            "multiscale1d" => Ok(multiscale_1d()),
            "smooth2d" => Ok(smooth_2d()),
            "highcontrast2d" => high_contrast_2d(
                amplitude.ok_or_else(|| Error::config("highcontrast2d needs parameter A"))?,
                eps.ok_or_else(|| Error::config("highcontrast2d needs parameter eps"))?,
            ),
            other => Err(Error::config(format!("unknown problem id `{other}`"))),
        }
    }

    pub fn dim(&self) -> usize {
        self.domain.dim
    }

    pub fn exact(&self, x: &[f64]) -> f64 {
        match self.kind {
            ProblemKind::Smooth1d => (2.0 * PI * x[0]).sin(),
            ProblemKind::Multiscale1d => MULTISCALE_TERMS
                .iter()
                .map(|(a, k)| a * (k * PI * x[0]).sin())
                .sum(),
            ProblemKind::Smooth2d => (PI * x[0]).sin() * (PI * x[1]).sin(),
            ProblemKind::HighContrast2d { amplitude, eps } => {
                let (px, py) = (x[0] * (1.0 - x[0]), x[1] * (1.0 - x[1]));
                amplitude * px * py * ((x[0] - 0.5) * (x[1] - 0.5) / eps).sin()
            }
        }
    }

    /// Forcing term `f = -lap u`.
    pub fn forcing(&self, x: &[f64]) -> f64 {
        match self.kind {
            ProblemKind::Smooth1d => 4.0 * PI * PI * (2.0 * PI * x[0]).sin(),
            ProblemKind::Multiscale1d => MULTISCALE_TERMS
                .iter()
                .map(|(a, k)| a * (k * PI).powi(2) * (k * PI * x[0]).sin())
                .sum(),
            ProblemKind::Smooth2d => 2.0 * PI * PI * (PI * x[0]).sin() * (PI * x[1]).sin(),
            ProblemKind::HighContrast2d { amplitude, eps } => {
                let (x, y) = (x[0], x[1]);
                // u = P(x,y) sin(q/eps), P = A x(1-x) y(1-y), q = (x-1/2)(y-1/2)
                let p = amplitude * x * (1.0 - x) * y * (1.0 - y);
                let px = amplitude * (1.0 - 2.0 * x) * y * (1.0 - y);
                let py = amplitude * x * (1.0 - x) * (1.0 - 2.0 * y);
                let lap_p = -2.0 * amplitude * (y * (1.0 - y) + x * (1.0 - x));
                let (qx, qy) = (y - 0.5, x - 0.5);
                let (s, c) = ((x - 0.5) * (y - 0.5) / eps).sin_cos();
                let lap_u = lap_p * s + 2.0 * c / eps * (px * qx + py * qy)
                    - p * s * (qx * qx + qy * qy) / (eps * eps);
                -lap_u
            }
        }
    }

    /// Dirichlet data; every catalog problem uses the trace of its exact solution.
    pub fn boundary(&self, x: &[f64]) -> f64 {
        self.exact(x)
    }
}
