use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-physical state at t = {t:.6} s: dc voltage {v_dc} V is not positive")]
    NonPhysicalState { t: f64, v_dc: f64 },

    #[error("non-finite derivative at t = {t:.6} s")]
    NonFiniteDerivative { t: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("grid voltage magnitude {magnitude} V is below 1% of nominal {nominal} V")]
    DegenerateGridVoltage { magnitude: f64, nominal: f64 },

    #[error("modulation magnitude {mu} exceeds 1")]
    ModulationOverflow { mu: f64 },

    #[error("series impedance is zero (R^2 + (L w0)^2 = 0)")]
    DegenerateImpedance,

    #[error("degenerate parameters: {0}")]
    DegenerateParams(&'static str),

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("trajectory log has fewer than two samples")]
    EmptyLog,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for errors that come from bad input rather than from the numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::ModulationOverflow { .. } | Error::DegenerateParams(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
