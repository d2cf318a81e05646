use num_complex::Complex64;
use rand::Rng;

use crate::channel::draw_matrix;
use crate::model::ChannelMatrix;

/// Haar-ish random unitary from Gram-Schmidt on a Gaussian matrix.
pub fn random_unitary(rng: &mut impl Rng, m: usize) -> ChannelMatrix {
    let a = draw_matrix(rng, m);
    let mut cols: Vec<Vec<Complex64>> = Vec::new();
    for j in 0..m {
        let mut v: Vec<Complex64> = (0..m).map(|i| a.get(i, j)).collect();
        for q in &cols {
            let proj: Complex64 = q.iter().zip(&v).map(|(qi, vi)| qi.conj() * vi).sum();
            for (vi, qi) in v.iter_mut().zip(q) {
                *vi -= proj * qi;
            }
        }
        let norm = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        cols.push(v.into_iter().map(|x| x / norm).collect());
    }
    let entries = (0..m).flat_map(|i| cols.iter().map(move |col| col[i])).collect();
    ChannelMatrix::from_row_major(m, entries)
}
