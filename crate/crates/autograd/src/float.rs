use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// Element type of every tensor: `f32` for training, `f64` for gradient checks.
pub trait Float:
    num_traits::Float
    + num_traits::FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Bytes per element in checkpoint blobs.
    const BYTES: usize;
    const DTYPE: &'static str;

    /// `c = alpha * a·b + beta * c` on row-major buffers with explicit strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn from_f64_lossy(v: f64) -> Self;
    fn to_f64_lossy(self) -> f64;
}

macro_rules! impl_float {
    ($t:ty, $gemm:path, $dtype:literal) => {
        impl Float for $t {
            const BYTES: usize = std::mem::size_of::<$t>();
            const DTYPE: &'static str = $dtype;

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: callers pass buffers whose extents cover the strided
                // m×k, k×n and m×n views; checked by the debug asserts below.
                debug_assert!(m == 0 || k == 0 || max_index(m, k, rsa, csa) < a.len());
                debug_assert!(m == 0 || k == 0 || max_index(k, n, rsb, csb) < b.len());
                debug_assert!(max_index(m, n, rsc, csc) < c.len());
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    );
                }
            }

            fn from_f64_lossy(v: f64) -> Self {
                v as $t
            }

            fn to_f64_lossy(self) -> f64 {
                self as f64
            }
        }
    };
}

impl_float!(f32, matrixmultiply::sgemm, "f32");
impl_float!(f64, matrixmultiply::dgemm, "f64");

fn max_index(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    ((rows as isize - 1) * rs + (cols as isize - 1) * cs) as usize
}

/// Shorthand for lifting an `f64` literal into `T`.
#[inline]
pub fn lit<T: Float>(v: f64) -> T {
    T::from_f64_lossy(v)
}
