//! Dense N×C×H×W feature maps and the label grids produced from them.

use std::fmt;

use crate::error::{Error, Result};

/// Dimensions of a rank-4 tensor in N×C×H×W order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub const fn spatial(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn to_vec(&self) -> Vec<usize> {
        vec![self.n, self.c, self.h, self.w]
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}×{}×{}×{}", self.n, self.c, self.h, self.w)
    }
}

/// Rank-4 f32 tensor stored contiguously in row-major N×C×H×W order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    shape: Shape,
    data: Vec<f32>,
}

/// Pointwise operation selector for [`elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseKind {
    Add,
    Sub,
    Mul,
    ScalarAdd,
    ScalarMul,
}

/// Right-hand operand for [`elementwise`].
#[derive(Debug, Clone, Copy)]
pub enum Operand<'a> {
    Tensor(&'a Tensor4),
    Scalar(f32),
}

impl Tensor4 {
    pub fn from_vec(shape: Shape, data: Vec<f32>) -> Result<Self> {
        if shape.n == 0 || shape.c == 0 || shape.h == 0 || shape.w == 0 {
            return Err(Error::invalid("tensor", format!("zero dimension in {shape}")));
        }
        if data.len() != shape.numel() {
            return Err(Error::invalid(
                "tensor",
                format!("buffer of {} elements for shape {shape}", data.len()),
            ));
        }
        Ok(Tensor4 { shape, data })
    }

    pub fn full(shape: Shape, value: f32) -> Self {
        assert!(shape.numel() > 0, "zero dimension in {shape}");
        Tensor4 {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn zeros_like(other: &Tensor4) -> Self {
        Self::zeros(other.shape)
    }

    pub fn ones_like(other: &Tensor4) -> Self {
        Self::full(other.shape, 1.0)
    }

    /// Builds a tensor by evaluating `f(n, c, y, x)` at every index.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Tensor4 { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + y) * self.shape.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f32) {
        let i = self.index(n, c, y, x);
        self.data[i] = v;
    }

    /// The H×W plane of batch item `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f32] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &mut self.data[start..start + p]
    }

    /// The C×H×W block of batch item `n`.
    pub fn item(&self, n: usize) -> &[f32] {
        let len = self.shape.c * self.shape.plane();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor4 {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(
        &self,
        other: &Tensor4,
        op: &'static str,
        f: impl Fn(f32, f32) -> f32,
    ) -> Result<Tensor4> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape,
                right: other.shape,
            });
        }
        Ok(Tensor4 {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor4) -> Result<Tensor4> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor4) -> Result<Tensor4> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor4) -> Result<Tensor4> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn scalar_add(&self, k: f32) -> Tensor4 {
        self.map(|v| v + k)
    }

    pub fn scalar_mul(&self, k: f32) -> Tensor4 {
        self.map(|v| v * k)
    }

    /// Copies `count` channels starting at `start`.
    pub fn channel_slice(&self, start: usize, count: usize) -> Result<Tensor4> {
        if count == 0 || start + count > self.shape.c {
            return Err(Error::invalid(
                "channel_slice",
                format!("channels {start}..{} of {}", start + count, self.shape),
            ));
        }
        let shape = Shape::new(self.shape.n, count, self.shape.h, self.shape.w);
        let p = self.shape.plane();
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..self.shape.n {
            let base = (n * self.shape.c + start) * p;
            data.extend_from_slice(&self.data[base..base + count * p]);
        }
        Ok(Tensor4 { shape, data })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor4) -> f32 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

/// Applies one of the pointwise kinds. Tensor kinds require equal shapes;
/// scalar kinds require a scalar operand.
pub fn elementwise(kind: ElementwiseKind, a: &Tensor4, b: Operand<'_>) -> Result<Tensor4> {
    use ElementwiseKind::*;
    match (kind, b) {
        (Add, Operand::Tensor(t)) => a.add(t),
        (Sub, Operand::Tensor(t)) => a.sub(t),
        (Mul, Operand::Tensor(t)) => a.mul(t),
        (ScalarAdd, Operand::Scalar(k)) => Ok(a.scalar_add(k)),
        (ScalarMul, Operand::Scalar(k)) => Ok(a.scalar_mul(k)),
        (kind, _) => Err(Error::invalid(
            "elementwise",
            format!("operand type does not match {kind:?}"),
        )),
    }
}

/// Concatenates along the channel axis; part `k` lands at channel offset
/// equal to the sum of the earlier parts' channel counts.
pub fn concat_channels(parts: &[&Tensor4]) -> Result<Tensor4> {
    let first = parts
        .first()
        .ok_or_else(|| Error::invalid("concat_channels", "empty part list"))?
        .shape();
    let mut c_total = 0;
    for p in parts {
        let s = p.shape();
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(Error::ShapeMismatch {
                op: "concat_channels",
                left: first,
                right: s,
            });
        }
        c_total += s.c;
    }
    let shape = Shape::new(first.n, c_total, first.h, first.w);
    let mut data = Vec::with_capacity(shape.numel());
    for n in 0..first.n {
        for p in parts {
            data.extend_from_slice(p.item(n));
        }
    }
    Ok(Tensor4 { shape, data })
}

/// Per-pixel softmax over channels, stabilised by subtracting the channel max.
pub fn softmax_channels(x: &Tensor4) -> Tensor4 {
    let s = x.shape();
    let p = s.plane();
    let mut out = Tensor4::zeros(s);
    let mut buf = vec![0f32; s.c];
    for n in 0..s.n {
        let src = x.item(n);
        let base = n * s.c * p;
        for i in 0..p {
            let mut m = f32::NEG_INFINITY;
            for c in 0..s.c {
                m = m.max(src[c * p + i]);
            }
            let mut sum = 0f32;
            for c in 0..s.c {
                let e = (src[c * p + i] - m).exp();
                buf[c] = e;
                sum += e;
            }
            for c in 0..s.c {
                out.data[base + c * p + i] = buf[c] / sum;
            }
        }
    }
    out
}

/// Per-pixel index of the largest channel; ties go to the lowest index.
pub fn argmax_channels(x: &Tensor4) -> Result<ClassMap> {
    let s = x.shape();
    if s.n != 1 {
        return Err(Error::invalid("argmax_channels", format!("batch must be 1, got {s}")));
    }
    let p = s.plane();
    let src = x.data();
    let labels = (0..p)
        .map(|i| {
            let mut best = 0usize;
            let mut best_v = src[i];
            for c in 1..s.c {
                let v = src[c * p + i];
                if v > best_v {
                    best = c;
                    best_v = v;
                }
            }
            best as u32
        })
        .collect();
    Ok(ClassMap::new(s.h, s.w, labels))
}

/// H×W grid of class ids with an ignore sentinel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMap {
    h: usize,
    w: usize,
    data: Vec<u32>,
    ignore: u32,
}

pub const DEFAULT_IGNORE: u32 = 255;

impl ClassMap {
    pub fn new(h: usize, w: usize, data: Vec<u32>) -> Self {
        assert_eq!(data.len(), h * w, "class map buffer length");
        ClassMap {
            h,
            w,
            data,
            ignore: DEFAULT_IGNORE,
        }
    }

    pub fn filled(h: usize, w: usize, label: u32) -> Self {
        Self::new(h, w, vec![label; h * w])
    }

    pub fn with_ignore(mut self, ignore: u32) -> Self {
        self.ignore = ignore;
        self
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn ignore_value(&self) -> u32 {
        self.ignore
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u32] {
        &mut self.data
    }

    pub fn get(&self, y: usize, x: usize) -> u32 {
        self.data[y * self.w + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: u32) {
        self.data[y * self.w + x] = v;
    }

    pub fn is_ignored(&self, y: usize, x: usize) -> bool {
        self.get(y, x) == self.ignore
    }

    /// Checks that every non-ignored label is below `num_classes`.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        for (index, &label) in self.data.iter().enumerate() {
            if label != self.ignore && label as usize >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label,
                    index,
                    num_classes,
                });
            }
        }
        Ok(())
    }
}
