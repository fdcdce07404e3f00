//! Working-precision (f64) image buffer used inside posterior math and
//! sampling. [`ImageTensor`] stays the f32 interchange type.

use crate::error::{Error, Result};
use crate::tensor_io::ImageTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    shape: (usize, usize, usize),
    data: Vec<f64>,
}

impl Field {
    pub fn new(shape: (usize, usize, usize), data: Vec<f64>) -> Result<Self> {
        if shape.0 * shape.1 * shape.2 != data.len() || data.is_empty() {
            return Err(Error::InvalidTensor(format!(
                "field data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: (1, 1, 1),
            data: vec![v],
        }
    }

    /// A 1×len row, the layout used to run many independent scalar trajectories at once.
    pub fn row(data: Vec<f64>) -> Self {
        Self {
            shape: (1, data.len(), 1),
            data,
        }
    }

    pub fn filled(shape: (usize, usize, usize), v: f64) -> Self {
        Self {
            shape,
            data: vec![v; shape.0 * shape.1 * shape.2],
        }
    }

    pub fn from_tensor(t: &ImageTensor) -> Self {
        Self {
            shape: t.shape(),
            data: t.to_f64(),
        }
    }

    pub fn to_tensor(&self, range: (f32, f32)) -> Result<ImageTensor> {
        ImageTensor::from_f64(self.shape.0, self.shape.1, self.shape.2, &self.data, range)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_same_shape(&self, other: &Field) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                left: self.shape,
                right: other.shape,
            });
        }
        Ok(())
    }

    /// `Σ wᵢ·fieldᵢ`, elementwise.
    pub fn combine(terms: &[(f64, &Field)]) -> Result<Field> {
        let (_, first) = terms
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty linear combination".into()))?;
        for (_, f) in &terms[1..] {
            first.ensure_same_shape(f)?;
        }
        let mut out = vec![0.0; first.len()];
        for (w, f) in terms {
            for (o, v) in out.iter_mut().zip(&f.data) {
                *o += w * v;
            }
        }
        Ok(Field {
            shape: first.shape,
            data: out,
        })
    }

    pub fn max_abs_diff(&self, other: &Field) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
