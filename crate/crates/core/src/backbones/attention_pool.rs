use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};

use super::Linear;
use crate::error::{Error, Result};

/// Single-layer multi-head self-attention over `[mean token, cell tokens]`.
///
/// Every token attends to every token, so one pass yields the pooled global
/// embedding (output row 0) together with one attended output per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionPool {
    /// `(cells + 1) x width`
    pub positional: Array2<f64>,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl AttentionPool {
    pub fn new(
        positional: Array2<f64>,
        query: Linear,
        key: Linear,
        value: Linear,
        output: Linear,
        heads: usize,
    ) -> Result<Self> {
        let width = positional.ncols();
        for (name, l) in [("query", &query), ("key", &key), ("value", &value)] {
            if l.input_dim() != width || l.output_dim() != width {
                return Err(Error::Shape(format!("{name} projection must be {width}x{width}")));
            }
        }
        if output.input_dim() != width {
            return Err(Error::Shape(format!("output projection must take width {width}")));
        }
        if heads == 0 || !width.is_multiple_of(heads) {
            return Err(Error::Shape(format!("width {width} not divisible by {heads} heads")));
        }
        Ok(Self {
            positional,
            query,
            key,
            value,
            output,
            heads,
        })
    }

    pub fn width(&self) -> usize {
        self.positional.ncols()
    }

    pub fn cells(&self) -> usize {
        self.positional.nrows() - 1
    }

    pub fn output_dim(&self) -> usize {
        self.output.output_dim()
    }

    /// Returns `(global, local)` for `cells x width` pre-pool tokens.
    pub fn forward(&self, tokens: ArrayView2<'_, f64>) -> Result<(Array1<f64>, Array2<f64>)> {
        if tokens.nrows() != self.cells() || tokens.ncols() != self.width() {
            return Err(Error::Shape(format!(
                "attention pool expects {}x{} tokens, got {}x{}",
                self.cells(),
                self.width(),
                tokens.nrows(),
                tokens.ncols()
            )));
        }
        let mean = tokens.mean_axis(Axis(0)).expect("non-empty token grid");
        let mut x = concatenate![Axis(0), mean.insert_axis(Axis(0)), tokens];
        x += &self.positional;

        let q = self.query.forward(x.view())?;
        let k = self.key.forward(x.view())?;
        let v = self.value.forward(x.view())?;
        let head_dim = self.width() / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut attended = Array2::zeros(x.raw_dim());
        for h in 0..self.heads {
            let cols = s![.., h * head_dim..(h + 1) * head_dim];
            let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            for mut row in scores.rows_mut() {
                let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                row.mapv_inplace(|v| (v - max).exp());
                let sum = row.sum();
                row /= sum;
            }
            attended.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
        }
        let out = self.output.forward(attended.view())?;
        let global = out.row(0).to_owned();
        let local = out.slice(s![1.., ..]).to_owned();
        Ok((global, local))
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    use super::*;

    fn uniform_pool(width: usize, cells: usize) -> AttentionPool {
        AttentionPool::new(
            Array2::zeros((cells + 1, width)),
            Linear::zeros(width, width),
            Linear::zeros(width, width),
            Linear::identity(width),
            Linear::identity(width),
            1,
        )
        .unwrap()
    }

    #[test]
    fn zero_query_key_gives_uniform_attention() {
        // Uniform attention over [mean, cells] returns the cell mean for every token.
        let tokens = array![[1.0, 2.0], [3.0, -4.0], [5.0, 0.5], [-1.0, 1.5]];
        let (global, local) = uniform_pool(2, 4).forward(tokens.view()).unwrap();
        let mean = tokens.mean_axis(Axis(0)).unwrap();
        assert_abs_diff_eq!(global, mean, epsilon = 1e-12);
        for row in local.rows() {
            assert_abs_diff_eq!(row, mean.view(), epsilon = 1e-12);
        }
        let local_mean = local.mean_axis(Axis(0)).unwrap();
        assert_abs_diff_eq!(local_mean, global, epsilon = 1e-12);
    }

    #[test]
    fn two_cell_hand_computed() {
        // width 1, identity q/k/v/out, no positional term.
        // tokens [m, a, b] with m = (a+b)/2; weights for query x are softmax(x*y).
        let pool = AttentionPool::new(
            Array2::zeros((3, 1)),
            Linear::identity(1),
            Linear::identity(1),
            Linear::identity(1),
            Linear::identity(1),
            1,
        )
        .unwrap();
        let (a, b) = (1.0_f64, -0.5_f64);
        let m = (a + b) / 2.0;
        let (global, local) = pool.forward(array![[a], [b]].view()).unwrap();
        let attend = |x: f64| {
            let ws = [(x * m).exp(), (x * a).exp(), (x * b).exp()];
            let z: f64 = ws.iter().sum();
            (ws[0] * m + ws[1] * a + ws[2] * b) / z
        };
        assert_abs_diff_eq!(global[0], attend(m), epsilon = 1e-14);
        assert_abs_diff_eq!(local[[0, 0]], attend(a), epsilon = 1e-14);
        assert_abs_diff_eq!(local[[1, 0]], attend(b), epsilon = 1e-14);
    }

    #[test]
    fn heads_must_divide_width() {
        let r = AttentionPool::new(
            Array2::zeros((2, 3)),
            Linear::identity(3),
            Linear::identity(3),
            Linear::identity(3),
            Linear::identity(3),
            2,
        );
        assert!(r.is_err());
    }

    #[test]
    fn wrong_token_count_is_shape_error() {
        let pool = uniform_pool(2, 4);
        assert!(matches!(pool.forward(Array2::zeros((3, 2)).view()), Err(Error::Shape(_))));
    }
}
