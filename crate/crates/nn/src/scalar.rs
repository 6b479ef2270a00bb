//! Floating-point element types the substrate is generic over.
//!
//! Training runs in `f32`; gradient checks run the same code paths in `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Row/column strides of a dense matrix operand.
#[derive(Debug, Clone, Copy)]
pub struct Strides {
    pub row: isize,
    pub col: isize,
}

impl Strides {
    /// Row-major `rows x cols` matrix.
    pub const fn row_major(cols: usize) -> Self {
        Strides { row: cols as isize, col: 1 }
    }

    /// Transposed view of a row-major matrix with `cols` columns.
    pub const fn transposed(cols: usize) -> Self {
        Strides { row: 1, col: cols as isize }
    }
}

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    /// Bit width of the type.
    const BITS: u32;

    /// `c = a * b + (accumulate ? c : 0)` with `a: m x k`, `b: k x n`, `c: m x n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        sa: Strides,
        b: &[Self],
        sb: Strides,
        c: &mut [Self],
        sc: Strides,
        accumulate: bool,
    );

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

fn extent(rows: usize, cols: usize, s: Strides) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    ((rows - 1) as isize * s.row + (cols - 1) as isize * s.col) as usize + 1
}

macro_rules! impl_scalar {
    ($t:ty, $bits:expr, $gemm:path) => {
        impl Scalar for $t {
            const BITS: u32 = $bits;

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                sa: Strides,
                b: &[Self],
                sb: Strides,
                c: &mut [Self],
                sc: Strides,
                accumulate: bool,
            ) {
                assert!(a.len() >= extent(m, k, sa), "gemm: lhs too short");
                assert!(b.len() >= extent(k, n, sb), "gemm: rhs too short");
                assert!(c.len() >= extent(m, n, sc), "gemm: output too short");
                assert!(sa.row >= 0 && sa.col >= 0 && sb.row >= 0 && sb.col >= 0);
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: the extents above bound every index the kernel touches,
                // and `c` is uniquely borrowed.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        sa.row,
                        sa.col,
                        b.as_ptr(),
                        sb.row,
                        sb.col,
                        beta,
                        c.as_mut_ptr(),
                        sc.row,
                        sc.col,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, 32, matrixmultiply::sgemm);
impl_scalar!(f64, 64, matrixmultiply::dgemm);
