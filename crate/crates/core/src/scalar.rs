//! Scalar abstraction. The whole solver core is generic over the floating
//! type; `f64` is what every shipped entry point uses, `f32` merely has to
//! keep compiling (smoke-tested) so the numerics stay cast-free.

use num_traits::{FromPrimitive, ToPrimitive};

/// Floating scalar for grids, fields and dense linear algebra.
///
/// The supertraits pull in everything the crate needs: `RealField` for
/// nalgebra factorizations on `Complex<T>` matrices, `FftNum` for rustfft
/// plans, the `num-traits` casts for embedding literals, and serde so that
/// parameter sets and checkpoints serialize for any scalar choice.
pub trait Real:
    nalgebra::RealField
    + rustfft::FftNum
    + FromPrimitive
    + ToPrimitive
    + Copy
    + Default
    + std::iter::Sum
    + serde::Serialize
    + serde::de::DeserializeOwned
{
    /// Embed an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal not representable in scalar type")
    }

    /// Embed a node/mode count.
    #[inline]
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("count not representable in scalar type")
    }

    /// Lossy view as `f64`, for reports and serialization.
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar not representable as f64")
    }
}

impl<T> Real for T where
    T: nalgebra::RealField
        + rustfft::FftNum
        + FromPrimitive
        + ToPrimitive
        + Copy
        + Default
        + std::iter::Sum
        + serde::Serialize
        + serde::de::DeserializeOwned
{
}
