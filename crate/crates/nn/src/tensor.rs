use crate::scalar::Scalar;
use crate::spec::Shape;

/// A batch of samples stored contiguously, sample-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub data: Vec<T>,
    pub batch: usize,
    pub shape: Shape,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(data: Vec<T>, batch: usize, shape: Shape) -> Self {
        assert_eq!(
            data.len(),
            batch * shape.iter().product::<usize>(),
            "tensor data length does not match batch x shape"
        );
        Tensor { data, batch, shape }
    }

    pub fn zeros(batch: usize, shape: Shape) -> Self {
        let len = batch * shape.iter().product::<usize>();
        Tensor {
            data: vec![T::zero(); len],
            batch,
            shape,
        }
    }

    pub fn sample_len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn sample(&self, index: usize) -> &[T] {
        let n = self.sample_len();
        &self.data[index * n..(index + 1) * n]
    }
}
