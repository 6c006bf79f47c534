use ndarray::{Array1, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Sentence scoring parameters: `score(v) = u·v + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub u: Array1<f64>,
    pub b: f64,
}

impl AttentionParams {
    pub fn zeros(sentence_dim: usize) -> Self {
        AttentionParams {
            u: Array1::zeros(sentence_dim),
            b: 0.0,
        }
    }
}

/// Softmax of the sentence scores over unmasked rows; masked rows get exactly 0.
///
/// `mask[l]` is true for a real sentence and false for padding.
pub fn attention_weights(
    sentences: ArrayView2<'_, f64>,
    mask: &[bool],
    params: &AttentionParams,
) -> Result<Array1<f64>> {
    if mask.len() != sentences.nrows() {
        return Err(Error::validation(format!(
            "mask length {} does not match {} sentences",
            mask.len(),
            sentences.nrows()
        )));
    }
    if sentences.ncols() != params.u.len() {
        return Err(Error::validation(format!(
            "sentence dim {} does not match attention dim {}",
            sentences.ncols(),
            params.u.len()
        )));
    }
    // Shifting by the largest score removes b exactly: (u·v_l + b) - (u·v_max + b).
    let dots: Vec<f64> = sentences
        .rows()
        .into_iter()
        .map(|v| params.u.dot(&v))
        .collect();
    let top = dots
        .iter()
        .zip(mask)
        .filter(|(_, &keep)| keep)
        .map(|(&s, _)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return Err(Error::validation("attention over a fully masked sequence"));
    }

    let mut alpha = Array1::zeros(dots.len());
    let mut total = 0.0;
    for (l, (&s, &keep)) in dots.iter().zip(mask).enumerate() {
        if keep {
            let w = (s - top).exp();
            alpha[l] = w;
            total += w;
        }
    }
    alpha /= total;
    Ok(alpha)
}

/// `E = Σ_l α_l v_l`.
pub fn aggregate(sentences: ArrayView2<'_, f64>, alpha: ArrayView1<'_, f64>) -> Array1<f64> {
    alpha.dot(&sentences)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn zero_scoring_vector_is_uniform() {
        let v = Array2::from_shape_fn((4, 3), |(i, j)| (i * 3 + j) as f64);
        let p = AttentionParams {
            u: Array1::zeros(3),
            b: 1.7,
        };
        let a = attention_weights(v.view(), &[true; 4], &p).unwrap();
        for x in a.iter() {
            assert!((x - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn singleton_and_closed_form() {
        let v = array![[1.0], [0.0], [5.0]];
        let p = AttentionParams {
            u: array![1.0],
            b: 0.0,
        };
        let a = attention_weights(v.view(), &[false, true, false], &p).unwrap();
        assert_eq!(a.to_vec(), vec![0.0, 1.0, 0.0]);

        let v = array![[0.0], [std::f64::consts::LN_2]];
        let a = attention_weights(v.view(), &[true, true], &p).unwrap();
        assert!((a[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((a[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn fully_masked_is_an_error() {
        let v = array![[1.0], [2.0]];
        let p = AttentionParams::zeros(1);
        assert!(attention_weights(v.view(), &[false, false], &p).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let v = array![[0.0, 2.0], [2.0, 0.0]];
        assert_eq!(
            aggregate(v.view(), array![0.5, 0.5].view()).to_vec(),
            vec![1.0, 1.0]
        );
        assert_eq!(
            aggregate(v.view(), array![0.0, 1.0].view()).to_vec(),
            vec![2.0, 0.0]
        );
        let same = array![[3.0, -1.0], [3.0, -1.0], [3.0, -1.0]];
        let e = aggregate(same.view(), array![0.2, 0.5, 0.3].view());
        assert!((e[0] - 3.0).abs() < 1e-15 && (e[1] + 1.0).abs() < 1e-15);
    }
}
