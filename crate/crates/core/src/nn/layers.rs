use super::graph::{Graph, Var};
use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::Result;

/// Parameter handles of one multi-head self-attention block.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

/// Self-attention over the rows of `x (M, D)`.
pub fn multihead_self_attention<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    p: &AttentionParams,
    heads: usize,
) -> Result<Var> {
    let q = g.linear(x, p.wq, Some(p.bq))?;
    let k = g.linear(x, p.wk, Some(p.bk))?;
    let v = g.linear(x, p.wv, Some(p.bv))?;
    let a = g.attention(q, k, v, heads)?;
    g.linear(a, p.wo, Some(p.bo))
}

/// Sinusoidal positional encoding of shape `(frames, width)`; even columns
/// carry sines and odd columns cosines.
pub fn sinusoidal_positional_encoding<T: Scalar>(frames: usize, width: usize) -> Tensor<T> {
    Tensor::from_fn(&[frames, width], |i| {
        let (pos, col) = (i / width, i % width);
        let pair = (col / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * pair / width as f64);
        T::of(if col % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positional_encoding_first_rows() {
        let pe = sinusoidal_positional_encoding::<f64>(3, 4);
        assert_eq!(&pe.data()[..4], &[0.0, 1.0, 0.0, 1.0]);
        let want = [1f64.sin(), 1f64.cos(), 0.01f64.sin(), 0.01f64.cos()];
        for (a, b) in pe.data()[4..8].iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
