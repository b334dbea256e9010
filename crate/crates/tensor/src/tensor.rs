use crate::{Real, Result, TensorError};

/// `(batch, channels, height, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape(pub [usize; 4]);

impl Shape {
    pub fn new(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        Shape([batch, channels, height, width])
    }

    /// A single `(channels, height, width)` sample.
    pub fn chw(channels: usize, height: usize, width: usize) -> Self {
        Shape([1, channels, height, width])
    }

    pub fn scalar() -> Self {
        Shape([1, 1, 1, 1])
    }

    pub fn batch(&self) -> usize {
        self.0[0]
    }

    pub fn channels(&self) -> usize {
        self.0[1]
    }

    pub fn height(&self) -> usize {
        self.0[2]
    }

    pub fn width(&self) -> usize {
        self.0[3]
    }

    pub fn plane(&self) -> usize {
        self.0[2] * self.0[3]
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    pub fn with_channels(&self, channels: usize) -> Self {
        Shape([self.0[0], channels, self.0[2], self.0[3]])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Tensor { shape, data: vec![T::zero(); shape.numel()] }
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor { shape, data: vec![value; shape.numel()] }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(TensorError::DataLength { len: data.len(), shape: shape.0 });
        }
        Ok(Tensor { shape, data })
    }

    pub fn scalar(value: T) -> Self {
        Tensor { shape: Shape::scalar(), data: vec![value] }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.offset(n, c, y, x)]
    }

    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, value: T) {
        let i = self.offset(n, c, y, x);
        self.data[i] = value;
    }

    fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let [_, cs, hs, ws] = self.shape.0;
        ((n * cs + c) * hs + y) * ws + x
    }

    /// Same data under a new shape with equal element count.
    pub fn reshape(mut self, shape: Shape) -> Result<Self> {
        if shape.numel() != self.data.len() {
            return Err(TensorError::DataLength { len: self.data.len(), shape: shape.0 });
        }
        self.shape = shape;
        Ok(self)
    }

    /// One batch entry as a `(1, c, h, w)` tensor.
    pub fn sample(&self, n: usize) -> Tensor<T> {
        let per = self.shape.numel() / self.shape.batch();
        Tensor {
            shape: Shape::new(1, self.shape.channels(), self.shape.height(), self.shape.width()),
            data: self.data[n * per..(n + 1) * per].to_vec(),
        }
    }

    /// Concatenates equally shaped tensors along the batch axis.
    pub fn stack_batch(items: &[Tensor<T>]) -> Result<Tensor<T>> {
        let first = items
            .first()
            .ok_or_else(|| TensorError::shape("stack_batch", "no tensors"))?;
        let s = first.shape;
        let mut data = Vec::with_capacity(s.numel() * items.len());
        let mut batch = 0;
        for t in items {
            if t.shape.0[1..] != s.0[1..] {
                return Err(TensorError::shape(
                    "stack_batch",
                    format!("{:?} vs {:?}", t.shape.0, s.0),
                ));
            }
            batch += t.shape.batch();
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor { shape: Shape::new(batch, s.channels(), s.height(), s.width()), data })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor { shape: self.shape, data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect() }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).abs())
            .fold(T::zero(), T::max)
    }
}
