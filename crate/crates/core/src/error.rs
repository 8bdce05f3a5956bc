use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Layer sizes, batch widths or tensor shapes do not line up.
    Shape(String),
    /// A parameter is outside its documented domain.
    InvalidParameter { name: &'static str, reason: String },
    EmptyMemberSet,
    /// Feature vector handed to a binary-only transform is not 0/1.
    NonBinaryInput { index: usize, value: f64 },
    /// Too few shadow IN/OUT models for a sample.
    InsufficientShadows { sample: usize, n_in: usize, n_out: usize },
    /// Metric needs both members and non-members.
    SingleClass,
    /// Correlation of a constant series is undefined.
    ConstantSeries,
    Unsupported(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(msg) => write!(f, "shape mismatch: {msg}"),
            Error::InvalidParameter { name, reason } => {
                write!(f, "invalid parameter `{name}`: {reason}")
            }
            Error::EmptyMemberSet => f.write_str("member set is empty"),
            Error::NonBinaryInput { index, value } => {
                write!(f, "feature {index} is not binary (value {value})")
            }
            Error::InsufficientShadows { sample, n_in, n_out } => write!(
                f,
                "sample {sample} has {n_in} IN and {n_out} OUT shadow models (need at least 2 of each)"
            ),
            Error::SingleClass => f.write_str("scores need at least one member and one non-member"),
            Error::ConstantSeries => f.write_str("correlation is undefined for a constant series"),
            Error::Unsupported(msg) => write!(f, "unsupported: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
