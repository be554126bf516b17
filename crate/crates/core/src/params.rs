//! Named-tensor view over parameter containers, shared by the optimizer
//! and the checkpoint writer.

use crate::error::{Error, Result};

/// A read-only named tensor.
pub struct TensorRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

/// Anything that owns trainable tensors.
///
/// Both methods must list tensors in the same, fixed order.
pub trait Parameters {
    fn tensors(&self) -> Vec<TensorRef<'_>>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])>;

    fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_parameters());
        for t in self.tensors() {
            out.extend_from_slice(t.data);
        }
        out
    }

    fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        let mut offset = 0;
        for (name, dst) in self.tensors_mut() {
            let end = offset + dst.len();
            let src = flat.get(offset..end).ok_or_else(|| {
                Error::Shape(format!("flat parameter vector too short at `{name}`"))
            })?;
            dst.copy_from_slice(src);
            offset = end;
        }
        if offset != flat.len() {
            return Err(Error::Shape(format!(
                "flat parameter vector has {} values, expected {offset}",
                flat.len()
            )));
        }
        Ok(())
    }
}

pub(crate) fn slice_of<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> &[f64] {
    a.as_slice().expect("parameters are stored in standard layout")
}

pub(crate) fn slice_of_mut<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>) -> &mut [f64] {
    a.as_slice_mut()
        .expect("parameters are stored in standard layout")
}

impl Parameters for crate::motion::RecurrentWeights {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        [("w1", &self.w1), ("w2", &self.w2), ("w3", &self.w3)]
            .into_iter()
            .map(|(n, a)| TensorRef {
                name: n.to_string(),
                shape: a.shape().to_vec(),
                data: slice_of(a),
            })
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        vec![
            ("w1".to_string(), slice_of_mut(&mut self.w1)),
            ("w2".to_string(), slice_of_mut(&mut self.w2)),
            ("w3".to_string(), slice_of_mut(&mut self.w3)),
        ]
    }
}

impl Parameters for crate::motion::RolloutGrads {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        [("w1", &self.w1), ("w2", &self.w2), ("w3", &self.w3)]
            .into_iter()
            .map(|(n, a)| TensorRef {
                name: n.to_string(),
                shape: a.shape().to_vec(),
                data: slice_of(a),
            })
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        vec![
            ("w1".to_string(), slice_of_mut(&mut self.w1)),
            ("w2".to_string(), slice_of_mut(&mut self.w2)),
            ("w3".to_string(), slice_of_mut(&mut self.w3)),
        ]
    }
}
