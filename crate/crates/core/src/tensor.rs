//! Dense row-major tensors and the handful of primitives the rest of the
//! crate is written against.
//!
//! Values are `f64` in memory. The on-disk format stores `f32`.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu6,
    Softmax,
}

pub const TENSOR_MAGIC: &[u8] = b"FTNS1\n";

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::InvalidArgument(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![v],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Tensor::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Tensor::new(shape.to_vec(), self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, alpha: f64) -> Tensor {
        self.map(|v| v * alpha)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::shape("dot", &self.shape, &other.shape));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Index of the largest entry; the first one wins ties.
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &v) in self.data.iter().enumerate() {
            match best {
                Some((_, b)) if v <= b => {}
                _ => best = Some((i, v)),
            }
        }
        best.map(|(i, _)| i)
    }

    /// Accumulates `other` into `self`.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape("add_assign", &self.shape, &other.shape));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Rounds every element to the nearest `f32`.
    pub fn round_to_f32(&mut self) {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(TENSOR_MAGIC)?;
        writeln!(w, "{}", self.shape.len())?;
        let extents: Vec<String> = self.shape.iter().map(|e| e.to_string()).collect();
        writeln!(w, "{}", extents.join(" "))?;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for &v in &self.data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from(r: &mut impl BufRead) -> Result<Self> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)
            .map_err(|_| Error::TensorFile("truncated before magic".into()))?;
        if magic != TENSOR_MAGIC {
            return Err(Error::TensorFile("bad magic".into()));
        }
        let rank: usize = read_line(r)?
            .trim()
            .parse()
            .map_err(|_| Error::TensorFile("bad rank line".into()))?;
        let extent_line = read_line(r)?;
        let shape: Vec<usize> = extent_line
            .split_whitespace()
            .map(|s| s.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::TensorFile("bad extent line".into()))?;
        if shape.len() != rank {
            return Err(Error::TensorFile(format!(
                "rank {rank} but {} extents",
                shape.len()
            )));
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| Error::TensorFile("element count overflows".into()))?;
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)
            .map_err(|_| Error::TensorFile("truncated payload".into()))?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Ok(Tensor { shape, data })
    }
}

fn read_line(r: &mut impl BufRead) -> Result<String> {
    let mut line = String::new();
    let n = r
        .read_line(&mut line)
        .map_err(|e| Error::TensorFile(e.to_string()))?;
    if n == 0 || !line.ends_with('\n') {
        return Err(Error::TensorFile("truncated header".into()));
    }
    line.pop();
    Ok(line)
}

pub fn elementwise(op: BinaryOp, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape != b.shape {
        return Err(Error::shape("elementwise", &a.shape, &b.shape));
    }
    let f = match op {
        BinaryOp::Add => |x: f64, y: f64| x + y,
        BinaryOp::Sub => |x: f64, y: f64| x - y,
        BinaryOp::Mul => |x: f64, y: f64| x * y,
    };
    Ok(Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    })
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    elementwise(BinaryOp::Add, a, b)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    elementwise(BinaryOp::Sub, a, b)
}

pub fn hadamard(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    elementwise(BinaryOp::Mul, a, b)
}

/// `W · x` for `W: [m, n]`, `x: [n]`.
pub fn matvec(w: &Tensor, x: &Tensor) -> Result<Tensor> {
    if w.rank() != 2 || x.rank() != 1 || w.shape[1] != x.shape[0] {
        return Err(Error::shape("matvec", &w.shape, &x.shape));
    }
    let (m, n) = (w.shape[0], w.shape[1]);
    let mut out = vec![0.0; m];
    for (i, o) in out.iter_mut().enumerate() {
        let row = &w.data[i * n..(i + 1) * n];
        *o = row.iter().zip(&x.data).map(|(a, b)| a * b).sum();
    }
    Ok(Tensor::vector(out))
}

/// `Wᵀ · x` for `W: [m, n]`, `x: [m]`.
pub fn matvec_t(w: &Tensor, x: &Tensor) -> Result<Tensor> {
    if w.rank() != 2 || x.rank() != 1 || w.shape[0] != x.shape[0] {
        return Err(Error::shape("matvec_t", &w.shape, &x.shape));
    }
    let (m, n) = (w.shape[0], w.shape[1]);
    let mut out = vec![0.0; n];
    for i in 0..m {
        let xi = x.data[i];
        let row = &w.data[i * n..(i + 1) * n];
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += wv * xi;
        }
    }
    Ok(Tensor::vector(out))
}

pub fn outer(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 1 || b.rank() != 1 || a.is_empty() || b.is_empty() {
        return Err(Error::shape("outer", &a.shape, &b.shape));
    }
    let mut data = Vec::with_capacity(a.len() * b.len());
    for &x in &a.data {
        data.extend(b.data.iter().map(|&y| x * y));
    }
    Ok(Tensor {
        shape: vec![a.len(), b.len()],
        data,
    })
}

/// `acc += a ⊗ b` without materialising the outer product.
pub(crate) fn outer_accumulate(acc: &mut Tensor, a: &[f64], b: &[f64]) {
    debug_assert_eq!(acc.shape, [a.len(), b.len()]);
    let n = b.len();
    for (i, &x) in a.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (o, &y) in acc.data[i * n..(i + 1) * n].iter_mut().zip(b) {
            *o += x * y;
        }
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn relu6(v: f64) -> f64 {
    v.clamp(0.0, 6.0)
}

pub fn activate(kind: Activation, x: &Tensor) -> Result<Tensor> {
    match kind {
        Activation::Sigmoid => Ok(x.map(sigmoid)),
        Activation::Tanh => Ok(x.map(f64::tanh)),
        Activation::Relu6 => Ok(x.map(relu6)),
        Activation::Softmax => {
            if x.rank() != 1 || x.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "softmax needs a non-empty vector, got shape {:?}",
                    x.shape
                )));
            }
            Ok(Tensor::vector(softmax(&x.data)))
        }
    }
}

/// Max-subtracted softmax.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> Tensor {
        Tensor::vector(xs.to_vec())
    }

    #[test]
    fn elementwise_examples() {
        let z = hadamard(&v(&[1.0, 2.0, 3.0]), &v(&[0.0, 0.0, 0.0])).unwrap();
        assert_eq!(z.data(), &[0.0, 0.0, 0.0]);
        assert_eq!(add(&v(&[1.0, 2.0]), &v(&[3.0, 4.0])).unwrap().data(), &[4.0, 6.0]);
        assert_eq!(
            hadamard(&v(&[0.5, 0.5]), &v(&[2.0, 4.0])).unwrap().data(),
            &[1.0, 2.0]
        );
    }

    #[test]
    fn elementwise_mismatch_reports_both_shapes() {
        let err = add(&v(&[1.0, 2.0]), &v(&[1.0])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2]") && msg.contains("[1]"), "{msg}");
    }

    #[test]
    fn matvec_examples() {
        assert_eq!(
            matvec(&Tensor::identity(2), &v(&[5.0, 7.0])).unwrap().data(),
            &[5.0, 7.0]
        );
        assert_eq!(
            matvec(&Tensor::zeros(&[3, 2]), &v(&[1.5, -2.0])).unwrap().data(),
            &[0.0, 0.0, 0.0]
        );
        let w = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(matvec(&w, &v(&[1.0, 1.0])).unwrap().data(), &[3.0, 7.0]);
        assert!(matvec(&w, &v(&[1.0, 1.0, 1.0])).is_err());
    }

    #[test]
    fn matvec_t_is_transpose() {
        let w = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(
            matvec_t(&w, &v(&[1.0, -1.0])).unwrap().data(),
            &[-3.0, -3.0, -3.0]
        );
    }

    #[test]
    fn activation_examples() {
        assert_eq!(activate(Activation::Sigmoid, &v(&[0.0])).unwrap().data(), &[0.5]);
        assert_eq!(
            activate(Activation::Relu6, &v(&[-1.0, 3.0, 7.0])).unwrap().data(),
            &[0.0, 3.0, 6.0]
        );
        let s = activate(Activation::Softmax, &Tensor::zeros(&[5])).unwrap();
        for &p in s.data() {
            assert!((p - 0.2).abs() < 1e-15);
        }
        assert!(activate(Activation::Softmax, &Tensor::zeros(&[0])).is_err());
        assert!(activate(Activation::Softmax, &Tensor::zeros(&[2, 2])).is_err());
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let s = softmax(&[1000.0, 0.0, -1000.0]);
        assert!(s.iter().all(|p| p.is_finite()));
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn outer_examples() {
        let o = outer(&v(&[1.0, 0.0]), &v(&[3.0, -2.0])).unwrap();
        assert_eq!(o.shape(), &[2, 2]);
        assert_eq!(o.data(), &[3.0, -2.0, 0.0, 0.0]);
        let z = outer(&v(&[0.0, 0.0]), &v(&[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(z, Tensor::zeros(&[2, 3]));
        let p = outer(&v(&[2.0, 3.0]), &v(&[4.0, 5.0])).unwrap();
        assert_eq!(p.data(), &[8.0, 10.0, 12.0, 15.0]);
        assert!(outer(&Tensor::zeros(&[0]), &v(&[1.0])).is_err());
    }

    #[test]
    fn tensor_file_round_trip_and_errors() {
        let t = Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.25, 3.0, 0.0, 1e-3]).unwrap();
        let bytes = t.to_bytes();
        assert!(bytes.starts_with(b"FTNS1\n2\n2 3\n"));
        let back = Tensor::read_from(&mut &bytes[..]).unwrap();
        assert_eq!(back.shape(), t.shape());
        for (a, b) in back.data().iter().zip(t.data()) {
            assert_eq!(*a, *b as f32 as f64);
        }
        let scalar = Tensor::scalar(4.0);
        let back = Tensor::read_from(&mut &scalar.to_bytes()[..]).unwrap();
        assert_eq!(back, scalar);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Tensor::read_from(&mut &bad[..]).unwrap_err().to_string().contains("bad magic"));
        let short = &bytes[..bytes.len() - 1];
        assert!(Tensor::read_from(&mut &short[..])
            .unwrap_err()
            .to_string()
            .contains("truncated"));
    }

    fn shape_strategy() -> impl Strategy<Value = Vec<usize>> {
        prop::collection::vec(1usize..4, 1..4)
    }

    proptest! {
        #[test]
        fn elementwise_shape_and_algebra(shape in shape_strategy(), seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut rand_t = || Tensor::from_fn(&shape, |_| rng.gen_range(-10.0..10.0));
            let (a, b, c) = (rand_t(), rand_t(), rand_t());
            for op in [BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul] {
                prop_assert_eq!(elementwise(op, &a, &b).unwrap().shape().to_vec(), shape.clone());
            }
            let ab = hadamard(&a, &b).unwrap();
            let ba = hadamard(&b, &a).unwrap();
            prop_assert_eq!(&ab, &ba);
            let l = add(&add(&a, &b).unwrap(), &c).unwrap();
            let r = add(&a, &add(&b, &c).unwrap()).unwrap();
            for (x, y) in l.data().iter().zip(r.data()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn softmax_shift_invariance(xs in prop::collection::vec(-50.0f64..50.0, 1..10), c in -100.0f64..100.0) {
            let a = softmax(&xs);
            let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
            let b = softmax(&shifted);
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9);
                prop_assert!(*x > 0.0 && *x <= 1.0);
            }
        }

        #[test]
        fn activation_ranges(xs in prop::collection::vec(-30.0f64..30.0, 1..20)) {
            let t = Tensor::vector(xs);
            for &v in activate(Activation::Relu6, &t).unwrap().data() {
                prop_assert!((0.0..=6.0).contains(&v));
            }
            for &v in activate(Activation::Sigmoid, &t).unwrap().data() {
                prop_assert!(v > 0.0 && v < 1.0);
            }
            // tanh rounds to ±1 in f64 beyond |x| ≈ 19
            let moderate = t.map(|v| v.clamp(-15.0, 15.0));
            for &v in activate(Activation::Tanh, &moderate).unwrap().data() {
                prop_assert!(v > -1.0 && v < 1.0);
            }
        }

        #[test]
        fn matvec_and_outer_shapes(m in 1usize..6, n in 1usize..6) {
            let w = Tensor::filled(&[m, n], 0.5);
            let x = Tensor::filled(&[n], 2.0);
            prop_assert_eq!(matvec(&w, &x).unwrap().shape().to_vec(), vec![m]);
            prop_assert_eq!(outer(&Tensor::filled(&[m], 1.0), &x).unwrap().shape().to_vec(), vec![m, n]);
        }
    }
}
