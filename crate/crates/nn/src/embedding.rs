use ndarray::{s, Array2, Array3};
use rand::Rng;

use crate::error::{check_shape, NnError, Result};
use crate::param::{HasParams, Param};

/// Lookup table with rows that stay frozen at zero (padding, "no descriptor").
#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: Param,
    cache: Option<Array2<usize>>,
}

impl Embedding {
    /// Uniform(-0.05, 0.05) init; frozen rows are zeroed.
    pub fn new<R: Rng>(rng: &mut R, rows: usize, dim: usize, frozen_rows: &[usize]) -> Result<Self> {
        let table = Array2::from_shape_simple_fn((rows, dim), || rng.gen_range(-0.05..0.05));
        Self::from_table(table, frozen_rows)
    }

    pub fn from_table(mut table: Array2<f64>, frozen_rows: &[usize]) -> Result<Self> {
        let rows = table.nrows();
        for &r in frozen_rows {
            if r >= rows {
                return Err(NnError::IndexOutOfRange { index: r, rows });
            }
            table.row_mut(r).fill(0.0);
        }
        let mut table = Param::new("embedding.table", table);
        table.frozen_rows = frozen_rows.to_vec();
        Ok(Self { table, cache: None })
    }

    pub fn rows(&self) -> usize {
        self.table.value.nrows()
    }

    pub fn dim(&self) -> usize {
        self.table.value.ncols()
    }

    /// Gathers rows for a `(time, batch)` index grid.
    pub fn forward(&mut self, indices: &Array2<usize>) -> Result<Array3<f64>> {
        let out = self.lookup(indices)?;
        self.cache = Some(indices.clone());
        Ok(out)
    }

    pub fn lookup(&self, indices: &Array2<usize>) -> Result<Array3<f64>> {
        let (t, b) = indices.dim();
        let rows = self.rows();
        let mut out = Array3::zeros((t, b, self.dim()));
        for ((i, j), &idx) in indices.indexed_iter() {
            if idx >= rows {
                return Err(NnError::IndexOutOfRange { index: idx, rows });
            }
            out.slice_mut(s![i, j, ..]).assign(&self.table.value.row(idx));
        }
        Ok(out)
    }

    /// Scatter-adds upstream gradients into the table; frozen rows get nothing.
    pub fn backward(&mut self, d_out: &Array3<f64>) -> Result<()> {
        let indices = self
            .cache
            .take()
            .ok_or_else(|| NnError::Config("embedding backward without forward".into()))?;
        let (t, b) = indices.dim();
        check_shape("embedding upstream gradient", &[t, b, self.dim()], d_out.shape())?;
        for ((i, j), &idx) in indices.indexed_iter() {
            if self.table.frozen_rows.contains(&idx) {
                continue;
            }
            self.table.grad.row_mut(idx).scaled_add(1.0, &d_out.slice(s![i, j, ..]));
        }
        Ok(())
    }
}

impl HasParams for Embedding {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.table]
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.table]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identity_table_gathers_rows() {
        let e = Embedding::from_table(Array2::eye(3), &[]).unwrap();
        let out = e.lookup(&array![[0usize, 2]]).unwrap();
        assert_eq!(out.slice(s![0, 0, ..]), array![1.0, 0.0, 0.0]);
        assert_eq!(out.slice(s![0, 1, ..]), array![0.0, 0.0, 1.0]);
    }

    #[test]
    fn repeated_index_gradient_sums() {
        let mut e = Embedding::from_table(Array2::eye(3), &[]).unwrap();
        e.forward(&array![[1usize, 1]]).unwrap();
        let d = Array3::from_shape_vec((1, 2, 3), vec![1.0, 2.0, 3.0, 10.0, 20.0, 30.0]).unwrap();
        e.backward(&d).unwrap();
        assert_eq!(e.table.grad.row(1), array![11.0, 22.0, 33.0]);
    }

    #[test]
    fn frozen_rows_get_no_gradient() {
        let mut e = Embedding::from_table(Array2::ones((3, 2)), &[0, 1]).unwrap();
        assert!(e.table.value.row(1).iter().all(|&v| v == 0.0));
        e.forward(&array![[1usize, 2]]).unwrap();
        e.backward(&Array3::ones((1, 2, 2))).unwrap();
        assert!(e.table.grad.row(1).iter().all(|&v| v == 0.0));
        assert_eq!(e.table.grad.row(2), array![1.0, 1.0]);
    }

    #[test]
    fn out_of_range_index() {
        let e = Embedding::from_table(Array2::eye(2), &[]).unwrap();
        assert!(matches!(
            e.lookup(&array![[5usize]]),
            Err(NnError::IndexOutOfRange { index: 5, rows: 2 })
        ));
    }
}
