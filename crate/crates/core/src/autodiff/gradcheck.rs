//! Central-difference oracle for reverse-mode gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Relative error used by gradient checks: `|a-b| / max(1, |a|, |b|)`.
pub fn relative_error<T: Scalar>(a: T, b: T) -> T {
    (a - b).abs() / T::one().max(a.abs()).max(b.abs())
}

fn evaluate<T, F>(f: &F, theta: &Tensor<T>) -> Result<T>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.constant(theta.clone());
    let out = f(&mut tape, x)?;
    let v = tape.value(out);
    v.item().ok_or_else(|| Error::NonScalarRoot {
        shape: v.shape().to_vec(),
    })
}

/// Compares the backward-pass gradient of the scalar computation `f` at
/// `theta` against central differences in every coordinate and returns the
/// largest relative error.
pub fn finite_diff_check<T, F>(f: F, theta: &Tensor<T>, eps: T) -> Result<T>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..theta.len()).collect();
    finite_diff_check_coords(f, theta, eps, &coords)
}

/// Like [`finite_diff_check`], restricted to the listed coordinates.
pub fn finite_diff_check_coords<T, F>(f: F, theta: &Tensor<T>, eps: T, coords: &[usize]) -> Result<T>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    if !(eps > T::zero()) {
        return Err(Error::InvalidArgument("eps must be positive".into()));
    }
    if let Some(&bad) = coords.iter().find(|&&c| c >= theta.len()) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            len: theta.len(),
        });
    }

    let mut tape = Tape::new();
    let x = tape.param(theta.clone());
    let out = f(&mut tape, x)?;
    tape.backward(out)?;
    let analytic = tape.grad(x).expect("param leaf has a gradient").to_vec();
    let value = tape.value(out).data()[0];

    let again = evaluate(&f, theta)?;
    if again != value {
        return Err(Error::NonDeterministic);
    }

    let mut worst = T::zero();
    let mut probe = theta.clone();
    for &c in coords {
        let (numeric, _, _) = differences(&f, &mut probe, c, eps)?;
        worst = worst.max(relative_error(analytic[c], numeric));
    }
    Ok(worst)
}

/// Central, forward and backward differences at coordinate `c`.
fn differences<T, F>(f: &F, probe: &mut Tensor<T>, c: usize, eps: T) -> Result<(T, T, T)>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let orig = probe.data()[c];
    let mid = evaluate(f, probe)?;
    probe.data_mut()[c] = orig + eps;
    let plus = evaluate(f, probe)?;
    probe.data_mut()[c] = orig - eps;
    let minus = evaluate(f, probe)?;
    probe.data_mut()[c] = orig;
    Ok(((plus - minus) / (eps + eps), (plus - mid) / eps, (mid - minus) / eps))
}

/// Result of [`finite_diff_check_adaptive`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveCheck<T> {
    pub max_rel_error: T,
    /// Coordinates whose step had to shrink.
    pub shrunk: usize,
    /// Coordinates still straddling a kink at the smallest step.
    pub unresolved: usize,
}

/// Like [`finite_diff_check_coords`] for piecewise-smooth `f`. When the
/// one-sided slopes at a coordinate differ by more than `kink_tol`
/// (relative), a kink lies within the step and the step shrinks tenfold,
/// at most `max_shrinks` times. The decision never looks at the analytic
/// gradient.
pub fn finite_diff_check_adaptive<T, F>(
    f: F,
    theta: &Tensor<T>,
    eps: T,
    coords: &[usize],
    kink_tol: T,
    max_shrinks: usize,
) -> Result<AdaptiveCheck<T>>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    if !(eps > T::zero()) {
        return Err(Error::InvalidArgument("eps must be positive".into()));
    }
    if let Some(&bad) = coords.iter().find(|&&c| c >= theta.len()) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            len: theta.len(),
        });
    }
    let mut tape = Tape::new();
    let x = tape.param(theta.clone());
    let out = f(&mut tape, x)?;
    tape.backward(out)?;
    let analytic = tape.grad(x).expect("param leaf has a gradient").to_vec();

    let ten = T::lit(10.0);
    let mut report = AdaptiveCheck {
        max_rel_error: T::zero(),
        shrunk: 0,
        unresolved: 0,
    };
    let mut probe = theta.clone();
    for &c in coords {
        let mut step = eps;
        let mut shrinks = 0;
        let numeric = loop {
            let (central, fwd, bwd) = differences(&f, &mut probe, c, step)?;
            if relative_error(fwd, bwd) <= kink_tol {
                break central;
            }
            if shrinks == max_shrinks {
                report.unresolved += 1;
                break central;
            }
            shrinks += 1;
            step /= ten;
        };
        report.shrunk += usize::from(shrinks > 0);
        report.max_rel_error = report.max_rel_error.max(relative_error(analytic[c], numeric));
    }
    Ok(report)
}
