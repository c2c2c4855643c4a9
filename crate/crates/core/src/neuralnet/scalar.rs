//! Float abstraction so the network runs in `f32` for speed and in `f64`
//! where finite-difference gradient checks need the headroom.

/// Element type of network tensors. `ndarray::LinalgScalar` brings the
/// arithmetic and matrix multiplication; the rest is conversion and the
/// handful of scalar functions the net needs.
pub trait Scalar:
    ndarray::LinalgScalar + PartialOrd + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
    /// Lossy conversion from `f64`.
    fn from_f64(v: f64) -> Self;
    /// Widening (or identity) conversion to `f64`.
    fn to_f64(self) -> f64;
    /// `e^self`.
    fn exp(self) -> Self;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
    fn exp(self) -> Self {
        self.exp()
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        self.exp()
    }
}
