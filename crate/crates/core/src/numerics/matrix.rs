use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Dense row-major matrix of token embeddings, one token per row.
///
/// Holds encoder outputs (`n_tokens × d_v`) as well as projected embeddings
/// (`n_tokens × d_l`). Entries are always finite. When present, `patch_ids`
/// assigns every token to an image tile; ids form the contiguous range
/// `0..n_patches`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    data: Array2<f32>,
    patch_ids: Option<Vec<u32>>,
}

impl TokenMatrix {
    pub fn new(data: Array2<f32>) -> Result<Self> {
        let (rows, cols) = data.dim();
        if rows == 0 || cols == 0 {
            return Err(Error::contract(format!(
                "token matrix must be non-empty, got {rows}x{cols}"
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "token matrix entry ({}, {}) is not finite",
                pos / cols,
                pos % cols
            )));
        }
        Ok(TokenMatrix {
            data,
            patch_ids: None,
        })
    }

    pub fn from_rows(n_tokens: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != n_tokens * dim {
            return Err(Error::contract(format!(
                "expected {} values for a {n_tokens}x{dim} matrix, got {}",
                n_tokens * dim,
                values.len()
            )));
        }
        let data = Array2::from_shape_vec((n_tokens, dim), values)
            .map_err(|e| Error::contract(e.to_string()))?;
        Self::new(data)
    }

    /// Attaches per-token patch ids after checking length and contiguity.
    pub fn with_patch_ids(mut self, ids: Vec<u32>) -> Result<Self> {
        if ids.len() != self.n_tokens() {
            return Err(Error::contract(format!(
                "patch_ids has {} entries for {} tokens",
                ids.len(),
                self.n_tokens()
            )));
        }
        let max = ids.iter().copied().max().unwrap_or(0) as usize;
        let mut seen = vec![false; max + 1];
        for &id in &ids {
            seen[id as usize] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::contract(format!(
                "patch ids are not contiguous from 0: id {missing} is missing"
            )));
        }
        self.patch_ids = Some(ids);
        Ok(self)
    }

    pub fn n_tokens(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> ArrayView2<'_, f32> {
        self.data.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f32> {
        self.data.row(i)
    }

    /// Row `i` as a contiguous slice.
    pub fn row_slice(&self, i: usize) -> &[f32] {
        let dim = self.dim();
        let all = self
            .data
            .as_slice()
            .expect("token matrix storage is standard layout");
        &all[i * dim..(i + 1) * dim]
    }

    pub fn patch_ids(&self) -> Option<&[u32]> {
        self.patch_ids.as_deref()
    }

    pub fn n_patches(&self) -> usize {
        self.patch_ids
            .as_ref()
            .map(|ids| ids.iter().copied().max().map_or(0, |m| m as usize + 1))
            .unwrap_or(0)
    }

    /// Copies the listed rows into a new matrix (patch ids are dropped).
    pub fn select_rows(&self, rows: &[usize]) -> Result<TokenMatrix> {
        let dim = self.dim();
        let mut values = Vec::with_capacity(rows.len() * dim);
        for &r in rows {
            if r >= self.n_tokens() {
                return Err(Error::contract(format!(
                    "row {r} out of range for {} tokens",
                    self.n_tokens()
                )));
            }
            values.extend_from_slice(self.row_slice(r));
        }
        TokenMatrix::from_rows(rows.len(), dim, values)
    }

    pub fn into_inner(self) -> (Array2<f32>, Option<Vec<u32>>) {
        (self.data, self.patch_ids)
    }
}
