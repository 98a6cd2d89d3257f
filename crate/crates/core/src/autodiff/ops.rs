//! Forward constructors for the differentiable primitives.

use super::tape::{axpy, Op, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn finite<T: Scalar>(op: &'static str, data: &[T]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

impl<T: Scalar> Tape<T> {
    fn record(&mut self, op_name: &'static str, shape: Vec<usize>, data: Vec<T>, op: Op<T>) -> Result<Var> {
        finite(op_name, &data)?;
        let needs_grad = op.inputs().iter().any(|&v| self.needs_grad(v));
        Ok(self.push(Tensor::from_parts_unchecked(shape, data), op, needs_grad))
    }

    /// `out[.., :] = input[.., :] · weight + bias`, applied to every row of
    /// the last axis.
    pub fn pointwise_linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        if w.shape().len() != 2 || w.shape()[0] != x.cols() {
            return Err(Error::shape("pointwise_linear", x.shape(), w.shape()));
        }
        let (cin, cout) = (w.shape()[0], w.shape()[1]);
        if b.len() != cout {
            return Err(Error::shape("pointwise_linear", w.shape(), b.shape()));
        }
        let rows = x.rows();
        let (xd, wd, bd) = (x.data(), w.data(), b.data());
        let mut out = Vec::with_capacity(rows * cout);
        for xi in xd.chunks_exact(cin) {
            let start = out.len();
            out.extend_from_slice(bd);
            let oi = &mut out[start..];
            for (k, &a) in xi.iter().enumerate() {
                axpy(a, &wd[k * cout..(k + 1) * cout], oi);
            }
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = cout;
        self.record(
            "pointwise_linear",
            shape,
            out,
            Op::Linear {
                input,
                weight,
                bias,
            },
        )
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Result<Var> {
        if !(slope > T::zero() && slope < T::one()) {
            return Err(Error::InvalidArgument(format!(
                "leaky_relu slope must lie in (0, 1), got {slope}"
            )));
        }
        let v = self.value(x);
        let out = v
            .data()
            .iter()
            .map(|&e| if e >= T::zero() { e } else { slope * e })
            .collect();
        self.record("leaky_relu", v.shape().to_vec(), out, Op::LeakyRelu { x, slope })
    }

    /// Logistic function, clamped so that every output lies strictly
    /// inside (0, 1).
    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let hi = T::one() - T::epsilon() / T::lit(2.0);
        let lo = T::min_positive_value();
        let out = v
            .data()
            .iter()
            .map(|&e| sigmoid_scalar(e).max(lo).min(hi))
            .collect();
        self.record("sigmoid", v.shape().to_vec(), out, Op::Sigmoid { x })
    }

    /// Column-wise max over the first `valid_counts[j]` rows of each
    /// M×K×C group. Returns the pooled M×C node and the winning row per
    /// output entry (lowest row on ties).
    pub fn grouped_max_pool(&mut self, x: Var, valid_counts: &[usize]) -> Result<(Var, Vec<usize>)> {
        let v = self.value(x);
        if v.shape().len() != 3 || v.shape()[0] != valid_counts.len() {
            return Err(Error::shape("grouped_max_pool", v.shape(), &[valid_counts.len()]));
        }
        let (m, k, c) = (v.shape()[0], v.shape()[1], v.shape()[2]);
        let data = v.data();
        let mut out = Vec::with_capacity(m * c);
        let mut argmax = Vec::with_capacity(m * c);
        for (j, &valid) in valid_counts.iter().enumerate() {
            if valid == 0 {
                return Err(Error::EmptyGroup { group: j });
            }
            if valid > k {
                return Err(Error::InvalidArgument(format!(
                    "group {j} claims {valid} valid rows but holds {k}"
                )));
            }
            let group = &data[j * k * c..(j + 1) * k * c];
            let start = out.len();
            out.extend_from_slice(&group[..c]);
            argmax.extend(std::iter::repeat_n(0, c));
            for row in 1..valid {
                let r = &group[row * c..(row + 1) * c];
                for ch in 0..c {
                    if r[ch] > out[start + ch] {
                        out[start + ch] = r[ch];
                        argmax[start + ch] = row;
                    }
                }
            }
        }
        let var = self.record(
            "grouped_max_pool",
            vec![m, c],
            out,
            Op::GroupedMaxPool {
                x,
                argmax: argmax.clone(),
            },
        )?;
        Ok((var, argmax))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, sa, sb));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Vec<T> {
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_with(a, b, |x, y| x + y);
        self.record("add", self.shape(a).to_vec(), out, Op::Add { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_with(a, b, |x, y| x * y);
        self.record("mul", self.shape(a).to_vec(), out, Op::Mul { a, b })
    }

    /// Multiplies every row of an N×C matrix by a 1×C row.
    pub fn broadcast_mul_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb != [1, sa[1]] {
            return Err(Error::shape("broadcast_mul_row", sa, sb));
        }
        let c = sa[1];
        let bd = self.value(b).data();
        let out = self
            .value(a)
            .data()
            .chunks_exact(c)
            .flat_map(|row| row.iter().zip(bd).map(|(&x, &m)| x * m))
            .collect();
        self.record("broadcast_mul_row", sa.to_vec(), out, Op::BroadcastMulRow { a, b })
    }

    /// `sum |a - b|` as a one-element tensor.
    pub fn l1_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("l1_distance", a, b)?;
        let s = self.zip_with(a, b, |x, y| (x - y).abs()).into_iter().fold(T::zero(), |acc, v| acc + v);
        self.record("l1_distance", vec![1], vec![s], Op::L1Distance { a, b })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().fold(T::zero(), |acc, &v| acc + v);
        self.record("sum", vec![1], vec![s], Op::Sum { x })
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        let v = self.value(x);
        let out = v.data().iter().map(|&e| e * factor).collect();
        self.record("scale", v.shape().to_vec(), out, Op::Scale { x, factor })
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let out = v.data().iter().map(|e| e.exp()).collect();
        self.record("exp", v.shape().to_vec(), out, Op::Exp { x })
    }

    /// Picks rows of an N×C source. The result has shape `lead ++ [C]`,
    /// where `lead` multiplies out to `index.len()`.
    pub fn gather_rows(&mut self, src: Var, index: &[usize], lead: &[usize]) -> Result<Var> {
        let v = self.value(src);
        if v.shape().len() != 2 {
            return Err(Error::shape("gather_rows", v.shape(), lead));
        }
        if lead.iter().product::<usize>() != index.len() {
            return Err(Error::shape("gather_rows", lead, &[index.len()]));
        }
        let (n, c) = (v.shape()[0], v.shape()[1]);
        let data = v.data();
        let mut out = Vec::with_capacity(index.len() * c);
        for &i in index {
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i, len: n });
            }
            out.extend_from_slice(&data[i * c..(i + 1) * c]);
        }
        let mut shape = lead.to_vec();
        shape.push(c);
        self.record(
            "gather_rows",
            shape,
            out,
            Op::GatherRows {
                src,
                index: index.to_vec(),
            },
        )
    }

    /// Same values under a new shape with equal element count.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x);
        if shape.iter().product::<usize>() != v.len() || shape.contains(&0) {
            return Err(Error::shape("reshape", v.shape(), shape));
        }
        let data = v.data().to_vec();
        self.record("reshape", shape.to_vec(), data, Op::Reshape { x })
    }

    /// Concatenates along the last axis; leading axes must agree.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(Error::shape("concat_last", sa, sb));
        }
        let (ca, cb) = (sa[sa.len() - 1], sb[sb.len() - 1]);
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = ca + cb;
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(ad.len() + bd.len());
        for (ra, rb) in ad.chunks_exact(ca).zip(bd.chunks_exact(cb)) {
            out.extend_from_slice(ra);
            out.extend_from_slice(rb);
        }
        self.record("concat_last", shape, out, Op::ConcatLast { a, b })
    }
}

/// Two-branch logistic that never evaluates `exp` of a large positive
/// argument.
pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn linear_identity_and_sum() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 2], &[1.0, 2.0]));
        let w = tape.param(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = tape.param(t(&[2], &[0.0, 0.0]));
        let y = tape.pointwise_linear(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0]);
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(b).unwrap(), &[1.0, 1.0]);

        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 2], &[1.0, 1.0]));
        let w = tape.constant(t(&[2, 1], &[2.0, 3.0]));
        let b = tape.constant(t(&[1], &[1.0]));
        let y = tape.pointwise_linear(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[6.0]);
    }

    #[test]
    fn linear_shape_errors_report_both_shapes() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 3], &[1.0, 2.0, 3.0]));
        let w = tape.constant(t(&[2, 2], &[1.0; 4]));
        let b = tape.constant(t(&[2], &[0.0; 2]));
        match tape.pointwise_linear(x, w, b) {
            Err(Error::Shape { left, right, .. }) => {
                assert_eq!(left, vec![1, 3]);
                assert_eq!(right, vec![2, 2]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn leaky_relu_values_and_grad() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[3], &[2.0, -1.0, 0.0]));
        let y = tape.leaky_relu(x, 0.2).unwrap();
        assert_eq!(tape.value(y).data(), &[2.0, -0.2, 0.0]);

        let mut tape = Tape::new();
        let x = tape.param(t(&[1], &[-3.0]));
        let y = tape.leaky_relu(x, 0.2).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.2]);

        assert!(tape.leaky_relu(x, 1.5).is_err());
    }

    #[test]
    fn sigmoid_values_and_saturation() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[1], &[0.0]));
        let y = tape.sigmoid(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5]);
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.25]);

        let mut tape = Tape::new();
        let x = tape.constant(t(&[3], &[40.0, -800.0, 800.0]));
        let y = tape.sigmoid(x).unwrap();
        let v = tape.value(y).data();
        assert!(v[0] < 1.0 && v[0] > 1.0 - 1e-15);
        assert!(v[1] > 0.0 && v[2] < 1.0);
    }

    #[test]
    fn max_pool_example() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[1, 2, 2], &[1.0, 5.0, 3.0, 2.0]));
        let (y, argmax) = tape.grouped_max_pool(x, &[2]).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 5.0]);
        assert_eq!(argmax, vec![1, 0]);
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn max_pool_single_row_ties_and_errors() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[1, 3, 2], &[4.0, 7.0, 9.0, 9.0, 4.0, 7.0]));
        let (y, argmax) = tape.grouped_max_pool(x, &[1]).unwrap();
        assert_eq!(tape.value(y).data(), &[4.0, 7.0]);
        assert_eq!(argmax, vec![0, 0]);
        let (_, argmax) = tape.grouped_max_pool(x, &[3]).unwrap();
        assert_eq!(argmax, vec![1, 1]);
        assert!(matches!(
            tape.grouped_max_pool(x, &[0]),
            Err(Error::EmptyGroup { group: 0 })
        ));
    }

    #[test]
    fn broadcast_mul_row_examples() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let ones = tape.constant(t(&[1, 2], &[1.0, 1.0]));
        let y = tape.broadcast_mul_row(a, ones).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);

        let m = tape.param(t(&[1, 2], &[0.0, 1.0]));
        let y = tape.broadcast_mul_row(a, m).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 2.0, 0.0, 4.0]);
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(m).unwrap(), &[4.0, 6.0]);

        let bad = tape.constant(t(&[1, 3], &[1.0; 3]));
        assert!(tape.broadcast_mul_row(a, bad).is_err());
        assert!(tape.add(a, bad).is_err());
    }

    #[test]
    fn l1_distance_examples() {
        let mut tape = Tape::new();
        let a = tape.param(t(&[2], &[1.0, 2.0]));
        let b = tape.constant(t(&[2], &[1.0, 2.0]));
        let d = tape.l1_distance(a, b).unwrap();
        assert_eq!(tape.value(d).data(), &[0.0]);
        tape.backward(d).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[0.0, 0.0]);

        let mut tape = Tape::new();
        let a = tape.param(t(&[2], &[1.0, 0.0]));
        let b = tape.constant(t(&[2], &[0.0, 2.0]));
        let d = tape.l1_distance(a, b).unwrap();
        assert_eq!(tape.value(d).data(), &[3.0]);
        tape.backward(d).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[1.0, -1.0]);
    }

    #[test]
    fn backward_linear_accumulate_and_disconnected() {
        // loss = sum(w * x), x fixed
        let mut tape = Tape::new();
        let w = tape.param(t(&[3], &[0.5, -1.0, 2.0]));
        let x = tape.constant(t(&[3], &[4.0, 5.0, 6.0]));
        let unused = tape.param(t(&[2], &[1.0, 1.0]));
        let p = tape.mul(w, x).unwrap();
        let l = tape.sum(p).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(w).unwrap(), &[4.0, 5.0, 6.0]);
        assert_eq!(tape.grad(unused).unwrap(), &[0.0, 0.0]);
        assert!(tape.grad(x).is_none());

        // two uses of one tensor accumulate
        let mut tape = Tape::new();
        let a = tape.param(t(&[1], &[3.0]));
        let s = tape.add(a, a).unwrap();
        let sq = tape.mul(s, a).unwrap();
        tape.backward(sq).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[12.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_replays_identically() {
        let mut tape = Tape::new();
        let a = tape.param(t(&[2], &[0.3, -0.7]));
        let e = tape.exp(a).unwrap();
        assert!(matches!(tape.backward(e), Err(Error::NonScalarRoot { .. })));
        let s = tape.sum(e).unwrap();
        tape.backward(s).unwrap();
        let first = tape.grad(a).unwrap().to_vec();
        tape.backward(s).unwrap();
        assert_eq!(first, tape.grad(a).unwrap());
    }

    #[test]
    fn gather_and_concat() {
        let mut tape = Tape::new();
        let src = tape.param(t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let g = tape.gather_rows(src, &[2, 0, 2, 2], &[2, 2]).unwrap();
        assert_eq!(tape.shape(g), &[2, 2, 2]);
        assert_eq!(tape.value(g).data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0, 5.0, 6.0]);
        let off = tape.constant(t(&[2, 2, 1], &[0.1, 0.2, 0.3, 0.4]));
        let c = tape.concat_last(off, g).unwrap();
        assert_eq!(tape.shape(c), &[2, 2, 3]);
        assert_eq!(&tape.value(c).data()[..3], &[0.1, 5.0, 6.0]);
        let s = tape.sum(c).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(src).unwrap(), &[1.0, 1.0, 0.0, 0.0, 3.0, 3.0]);
        assert!(matches!(
            tape.gather_rows(src, &[3], &[1]),
            Err(Error::IndexOutOfRange { index: 3, len: 3 })
        ));
    }

    #[test]
    fn non_finite_values_are_rejected() {
        assert!(Tensor::new(vec![1], vec![f64::NAN]).is_err());
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1], &[1000.0]));
        assert!(matches!(tape.exp(x), Err(Error::NonFinite { op: "exp" })));
    }
}
