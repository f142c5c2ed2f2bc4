use thiserror::Error;

/// Errors raised by the geometric core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A point or pixel depth was zero or negative.
    #[error("non-positive depth {depth}")]
    NonPositiveDepth {
        /// offending depth in meters
        depth: f64,
    },
    /// Camera intrinsics violate their invariants.
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
    /// A rotation matrix is not orthonormal with determinant +1.
    #[error("matrix is not a proper rotation (orthogonality error {error:e})")]
    InvalidRotation {
        /// max |RᵀR − I| entry or |det − 1|
        error: f64,
    },
    /// The two back-projected rays are (nearly) parallel.
    #[error("degenerate rays: angle {angle_rad:e} rad below threshold")]
    DegenerateRays {
        /// angle between the rays
        angle_rad: f64,
    },
    /// A requested grid is empty or larger than the memory cap.
    #[error("invalid grid range: {0}")]
    InvalidRange(&'static str),
    /// Two feature maps or a map and a request disagree on channel count.
    #[error("channel mismatch: expected {expected}, found {found}")]
    ChannelMismatch {
        /// expected channel count
        expected: usize,
        /// actual channel count
        found: usize,
    },
    /// Buffer sizes do not match the declared dimensions.
    #[error("buffer length {found} does not match expected {expected}")]
    ShapeMismatch {
        /// expected element count
        expected: usize,
        /// actual element count
        found: usize,
    },
    /// A keypoint lies outside the grid it is rasterized into.
    #[error("keypoint {index} lies outside the grid")]
    KeypointOutsideGrid {
        /// keypoint index
        index: usize,
    },
    /// NaN or infinite input where finite values are required.
    #[error("non-finite input")]
    NonFiniteInput,
    /// Two grids are defined over different specs.
    #[error("grid spec mismatch")]
    SpecMismatch,
    /// Paired sequences differ in length.
    #[error("count mismatch: {left} vs {right}")]
    CountMismatch {
        /// length of the first sequence
        left: usize,
        /// length of the second sequence
        right: usize,
    },
    /// Collinear (or coincident) model points.
    #[error("degenerate point configuration")]
    DegenerateConfiguration,
    /// Fewer points than the operation needs.
    #[error("too few points: need {needed}, got {got}")]
    TooFewPoints {
        /// minimum required
        needed: usize,
        /// provided
        got: usize,
    },
    /// A parameter is outside its valid domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    /// The object mask has no positive pixel.
    #[error("mask has no positive pixel")]
    EmptyMask,
}

/// Result alias for this crate.
pub type Result<T, E = Error> = core::result::Result<T, E>;
