use super::Scalar;

/// `C (+)= op(A)·op(B)` for row-major buffers.
///
/// `trans_a` means `a` holds the `[k×m]` matrix whose transpose is used; the
/// same for `trans_b` with `[n×k]`. Per-element results only depend on `k`
/// and the operands, never on `m` or `n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: the asserts above bound every strided access inside the slices.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b) {
        acc += *x * *y;
    }
    acc
}

#[inline]
pub(crate) fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

/// Numerically stable softmax over a dense slice.
pub fn softmax_in_place<T: Scalar>(xs: &mut [T]) {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

/// Given softmax output `p` and upstream `dp`, overwrite `dp` with the
/// gradient with respect to the logits.
pub(crate) fn softmax_backward_in_place<T: Scalar>(p: &[T], dp: &mut [T]) {
    let inner = dot(p, dp);
    for (d, &pi) in dp.iter_mut().zip(p) {
        *d = pi * (*d - inner);
    }
}

const GELU_C: f64 = 0.044_715;

#[inline]
fn sqrt_2_over_pi<T: Scalar>() -> T {
    T::from_f64((2.0 / std::f64::consts::PI).sqrt())
}

/// `tanh` through a single `exp`; several times faster than the libm call.
#[inline]
fn fast_tanh<T: Scalar>(u: T) -> T {
    let two = T::from_f64(2.0);
    T::one() - two / ((two * u).exp() + T::one())
}

/// Tanh approximation of GELU used by the GPT-2 family.
#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    let inner = sqrt_2_over_pi::<T>() * (x + T::from_f64(GELU_C) * x * x * x);
    half * x * (T::one() + fast_tanh(inner))
}

#[inline]
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    let c = T::from_f64(GELU_C);
    let k = sqrt_2_over_pi::<T>();
    let t = fast_tanh(k * (x + c * x * x * x));
    half * (T::one() + t)
        + half * x * (T::one() - t * t) * k * (T::one() + T::from_f64(3.0) * c * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes_agree_with_loops() {
        let (m, k, n) = (3, 4, 2);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.5 - 1.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64).sin()).collect();
        let mut want = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for l in 0..k {
                    want[i * n + j] += a[i * k + l] * b[l * n + j];
                }
            }
        }
        let mut c = vec![0.0; m * n];
        gemm(m, k, n, &a, false, &b, false, &mut c, false);
        assert_eq!(c, want);

        let at: Vec<f64> = (0..k * m).map(|idx| a[(idx % m) * k + idx / m]).collect();
        let bt: Vec<f64> = (0..n * k).map(|idx| b[(idx % k) * n + idx / k]).collect();
        let mut c2 = vec![0.0; m * n];
        gemm(m, k, n, &at, true, &bt, true, &mut c2, false);
        for (x, y) in c2.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn fast_tanh_matches_libm() {
        for i in -400..=400 {
            let u = i as f64 * 0.05;
            assert!((fast_tanh(u) - u.tanh()).abs() < 1e-15, "u={u}");
        }
        assert_eq!(fast_tanh(1e4f32), 1.0);
        assert_eq!(fast_tanh(-1e4f32), -1.0);
    }

    #[test]
    fn gelu_grad_matches_difference() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }
}
