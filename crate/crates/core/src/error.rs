use core::fmt;

/// Failure modes shared across the crate.
///
/// Infeasibility of an action-minimization problem is *not* an error; it is
/// reported inside [`crate::action::ActionResult`].
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A parameter fails its documented range or consistency requirement.
    InvalidConfig(&'static str),
    /// Two objects built over different triples or grids were combined.
    ShapeMismatch(&'static str),
    /// `dt * K >= 1`: the implicit step has no contractivity margin.
    NonContractive { dt_times_k: f64 },
    /// The implicit solve failed to reach tolerance (Picard and, if enabled,
    /// Newton both exhausted).
    SolverFailure {
        step: usize,
        time: f64,
        residual: f64,
    },
    /// A non-finite value surfaced where one must not.
    NonFinite(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidConfig(what) => write!(f, "invalid configuration: {what}"),
            Error::ShapeMismatch(what) => write!(f, "shape mismatch: {what}"),
            Error::NonContractive { dt_times_k } => write!(
                f,
                "implicit step rejected: dt * declared_k = {dt_times_k} >= 1"
            ),
            Error::SolverFailure {
                step,
                time,
                residual,
            } => write!(
                f,
                "implicit solve failed at step {step} (t = {time}): residual {residual}"
            ),
            Error::NonFinite(what) => write!(f, "non-finite value: {what}"),
        }
    }
}

impl core::error::Error for Error {}
