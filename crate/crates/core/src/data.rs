//! Role-typed tabular data.
//!
//! A [`Cohort`] is an immutable table with one row per analysis unit and
//! columns grouped by causal role: confounders `Z`, a binary exposure `X`,
//! mediator blocks `W` and `V`, and an outcome `Y`.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One draw from a structural causal model.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub z: Vec<f64>,
    pub x: u8,
    pub w: Vec<f64>,
    pub v: Vec<f64>,
    pub y: f64,
}

/// Feature blocks, in the order they are assembled into design matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Block {
    V,
    W,
    Z,
}

/// Immutable role-typed dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    z: Array2<f64>,
    x: Vec<u8>,
    w: Array2<f64>,
    v: Array2<f64>,
    y: Array1<f64>,
    z_names: Vec<String>,
    w_names: Vec<String>,
    v_names: Vec<String>,
}

impl Cohort {
    /// Builds a cohort from column blocks, validating shapes, finiteness and
    /// that the exposure is 0/1.
    pub fn new(
        z: Array2<f64>,
        x: Vec<u8>,
        w: Array2<f64>,
        v: Array2<f64>,
        y: Array1<f64>,
    ) -> Result<Self> {
        let n = x.len();
        if n == 0 {
            return Err(Error::data("cohort must contain at least one row"));
        }
        if z.nrows() != n || w.nrows() != n || v.nrows() != n || y.len() != n {
            return Err(Error::data(format!(
                "row count mismatch: x={}, z={}, w={}, v={}, y={}",
                n,
                z.nrows(),
                w.nrows(),
                v.nrows(),
                y.len()
            )));
        }
        if x.iter().any(|&xi| xi > 1) {
            return Err(Error::data("exposure column must be binary 0/1"));
        }
        for (name, arr) in [("z", &z), ("w", &w), ("v", &v)] {
            if arr.iter().any(|val| !val.is_finite()) {
                return Err(Error::data(format!("non-finite value in {name} block")));
            }
        }
        if y.iter().any(|val| !val.is_finite()) {
            return Err(Error::data("non-finite value in y column"));
        }
        let z_names = default_names("z", z.ncols());
        let w_names = default_names("w", w.ncols());
        let v_names = default_names("v", v.ncols());
        Ok(Cohort {
            z,
            x,
            w,
            v,
            y,
            z_names,
            w_names,
            v_names,
        })
    }

    pub fn from_samples(samples: &[Sample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::data("cohort must contain at least one row"));
        }
        let n = samples.len();
        let (dz, dw, dv) = (samples[0].z.len(), samples[0].w.len(), samples[0].v.len());
        let mut z = Array2::zeros((n, dz));
        let mut w = Array2::zeros((n, dw));
        let mut v = Array2::zeros((n, dv));
        let mut y = Array1::zeros(n);
        let mut x = Vec::with_capacity(n);
        for (i, s) in samples.iter().enumerate() {
            if s.z.len() != dz || s.w.len() != dw || s.v.len() != dv {
                return Err(Error::data("inconsistent sample dimensions"));
            }
            z.row_mut(i).assign(&ArrayView1::from(&s.z[..]));
            w.row_mut(i).assign(&ArrayView1::from(&s.w[..]));
            v.row_mut(i).assign(&ArrayView1::from(&s.v[..]));
            y[i] = s.y;
            x.push(s.x);
        }
        Cohort::new(z, x, w, v, y)
    }

    /// Overrides the generated column names (used by the CSV loader).
    pub fn with_names(
        mut self,
        z_names: Vec<String>,
        w_names: Vec<String>,
        v_names: Vec<String>,
    ) -> Result<Self> {
        if z_names.len() != self.z.ncols()
            || w_names.len() != self.w.ncols()
            || v_names.len() != self.v.ncols()
        {
            return Err(Error::data("column name count does not match block width"));
        }
        self.z_names = z_names;
        self.w_names = w_names;
        self.v_names = v_names;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn dim_z(&self) -> usize {
        self.z.ncols()
    }

    pub fn dim_w(&self) -> usize {
        self.w.ncols()
    }

    pub fn dim_v(&self) -> usize {
        self.v.ncols()
    }

    pub fn x(&self) -> &[u8] {
        &self.x
    }

    pub fn y(&self) -> &Array1<f64> {
        &self.y
    }

    pub fn z(&self) -> &Array2<f64> {
        &self.z
    }

    pub fn w(&self) -> &Array2<f64> {
        &self.w
    }

    pub fn v(&self) -> &Array2<f64> {
        &self.v
    }

    pub fn z_names(&self) -> &[String] {
        &self.z_names
    }

    pub fn w_names(&self) -> &[String] {
        &self.w_names
    }

    pub fn v_names(&self) -> &[String] {
        &self.v_names
    }

    /// Looks up a V-block column by name.
    pub fn v_column(&self, name: &str) -> Result<Array1<f64>> {
        let idx = self
            .v_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::data(format!("no V column named '{name}'")))?;
        Ok(self.v.column(idx).to_owned())
    }

    /// Number of rows with X = x.
    pub fn count_x(&self, x: u8) -> usize {
        self.x.iter().filter(|&&xi| xi == x).count()
    }

    /// Assembles a design matrix from the requested blocks, row-aligned with
    /// the cohort.
    pub fn design(&self, blocks: &[Block]) -> Array2<f64> {
        let d: usize = blocks.iter().map(|b| self.block_width(*b)).sum();
        let n = self.n();
        let mut out = Array2::zeros((n, d));
        let mut col = 0;
        for b in blocks {
            let src = match b {
                Block::V => &self.v,
                Block::W => &self.w,
                Block::Z => &self.z,
            };
            let width = src.ncols();
            out.slice_mut(ndarray::s![.., col..col + width]).assign(src);
            col += width;
        }
        out
    }

    fn block_width(&self, b: Block) -> usize {
        match b {
            Block::V => self.dim_v(),
            Block::W => self.dim_w(),
            Block::Z => self.dim_z(),
        }
    }

    /// Design matrix over a row subset.
    pub fn design_rows(&self, blocks: &[Block], rows: &[usize]) -> Array2<f64> {
        let d: usize = blocks.iter().map(|b| self.block_width(*b)).sum();
        let mut out = Array2::zeros((rows.len(), d));
        for (r, &i) in rows.iter().enumerate() {
            let mut col = 0;
            for b in blocks {
                let src = match b {
                    Block::V => &self.v,
                    Block::W => &self.w,
                    Block::Z => &self.z,
                };
                for j in 0..src.ncols() {
                    out[[r, col + j]] = src[[i, j]];
                }
                col += src.ncols();
            }
        }
        out
    }

    /// One raw feature row assembled from the requested blocks.
    pub fn feature_row(&self, blocks: &[Block], i: usize) -> Vec<f64> {
        let d: usize = blocks.iter().map(|b| self.block_width(*b)).sum();
        let mut out = Vec::with_capacity(d);
        for b in blocks {
            let src = match b {
                Block::V => &self.v,
                Block::W => &self.w,
                Block::Z => &self.z,
            };
            out.extend(src.row(i).iter().copied());
        }
        out
    }

    /// Row subset (indices may repeat, enabling bootstrap resamples).
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::data("cannot select an empty cohort"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n()) {
            return Err(Error::data(format!("row index {bad} out of bounds")));
        }
        let take = |src: &Array2<f64>| -> Array2<f64> {
            let mut out = Array2::zeros((indices.len(), src.ncols()));
            for (r, &i) in indices.iter().enumerate() {
                out.row_mut(r).assign(&src.row(i));
            }
            out
        };
        Ok(Cohort {
            z: take(&self.z),
            x: indices.iter().map(|&i| self.x[i]).collect(),
            w: take(&self.w),
            v: take(&self.v),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            z_names: self.z_names.clone(),
            w_names: self.w_names.clone(),
            v_names: self.v_names.clone(),
        })
    }
}

fn default_names(prefix: &str, count: usize) -> Vec<String> {
    (0..count).map(|i| format!("{prefix}{i}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy() -> Cohort {
        Cohort::new(
            array![[0.0], [1.0], [2.0]],
            vec![0, 1, 0],
            array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]],
            array![[7.0], [8.0], [9.0]],
            array![0.5, 1.5, 2.5],
        )
        .unwrap()
    }

    #[test]
    fn design_stacks_blocks_in_order() {
        let c = toy();
        let d = c.design(&[Block::V, Block::W, Block::Z]);
        assert_eq!(d.shape(), &[3, 4]);
        assert_eq!(d[[1, 0]], 8.0);
        assert_eq!(d[[1, 1]], 3.0);
        assert_eq!(d[[1, 3]], 1.0);
    }

    #[test]
    fn rejects_non_binary_exposure() {
        let err = Cohort::new(
            array![[0.0]],
            vec![2],
            array![[0.0]],
            array![[0.0]],
            array![0.0],
        );
        assert!(err.is_err());
    }

    #[test]
    fn select_allows_repeats() {
        let c = toy();
        let s = c.select(&[2, 2, 0]).unwrap();
        assert_eq!(s.n(), 3);
        assert_eq!(s.y()[0], 2.5);
        assert_eq!(s.y()[1], 2.5);
        assert_eq!(s.x(), &[0, 0, 0]);
    }
}
