//! Principal component analysis through a symmetric eigendecomposition of
//! whichever of the Gram matrix `X Xᵀ` or the scatter matrix `Xᵀ X` is
//! smaller.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues below `RANK_TOL * largest` count as zero.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct Pca {
    /// Column means of the fitted data.
    pub mean: Vec<f64>,
    /// `num_pc × p`, orthonormal rows, ordered by decreasing variance.
    pub components: DMatrix<f64>,
    /// Sample variance (n − 1 denominator) along each component.
    pub explained_variance: Vec<f64>,
    /// Numerical rank of the centered data.
    pub rank: usize,
}

impl Pca {
    pub fn num_components(&self) -> usize {
        self.components.nrows()
    }

    /// Projects rows of `x` onto the components after centering.
    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut centered = x.clone();
        for (j, m) in self.mean.iter().enumerate() {
            centered.column_mut(j).add_scalar_mut(-m);
        }
        centered * self.components.transpose()
    }

    /// Keeps only the leading `k` components.
    pub fn truncated(&self, k: usize) -> Pca {
        let k = k.min(self.num_components());
        Pca {
            mean: self.mean.clone(),
            components: self.components.rows(0, k).into_owned(),
            explained_variance: self.explained_variance[..k].to_vec(),
            rank: self.rank,
        }
    }
}

/// Top `num_pc` right singular directions of the centered data. The largest
/// |loading| of every component is made positive. A request beyond the
/// numerical rank is reduced to the rank with a warning.
pub fn fit_pca(x: &DMatrix<f64>, num_pc: usize) -> Result<Pca> {
    let (n, p) = x.shape();
    let max = n.min(p);
    if num_pc == 0 || num_pc > max {
        return Err(Error::InvalidNumPc {
            requested: num_pc,
            max,
        });
    }
    let mean: Vec<f64> = (0..p).map(|j| x.column(j).mean()).collect();
    let mut xc = x.clone();
    for (j, m) in mean.iter().enumerate() {
        xc.column_mut(j).add_scalar_mut(-m);
    }

    let use_gram = n <= p;
    let sym = if use_gram {
        &xc * xc.transpose()
    } else {
        xc.transpose() * &xc
    };
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let rank = order
        .iter()
        .take_while(|&&i| top > 0.0 && eig.eigenvalues[i] > RANK_TOL * top)
        .count();
    let k = if num_pc > rank {
        log::warn!("requested {num_pc} principal components but data rank is {rank}; reducing");
        rank
    } else {
        num_pc
    };

    let mut components = DMatrix::zeros(k, p);
    let mut explained_variance = Vec::with_capacity(k);
    for (row, &i) in order.iter().take(k).enumerate() {
        let lambda = eig.eigenvalues[i];
        let v = eig.eigenvectors.column(i);
        let mut dir = if use_gram {
            xc.transpose() * v / lambda.sqrt()
        } else {
            v.into_owned()
        };
        let norm = dir.norm();
        dir /= norm;
        let (imax, _) = dir
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |(bi, bv), (j, &d)| if d.abs() > bv { (j, d.abs()) } else { (bi, bv) });
        if dir[imax] < 0.0 {
            dir.neg_mut();
        }
        components.row_mut(row).copy_from(&dir.transpose());
        explained_variance.push(lambda / (n.max(2) - 1) as f64);
    }
    Ok(Pca {
        mean,
        components,
        explained_variance,
        rank,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_data_has_one_component_along_the_line() {
        // points on y = 2x
        let x = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 2.0, 2.0, 4.0, -1.0, -2.0]);
        let pca = fit_pca(&x, 1).unwrap();
        let c = pca.components.row(0);
        let s = 5f64.sqrt();
        assert!((c[0] - 1.0 / s).abs() < 1e-12 && (c[1] - 2.0 / s).abs() < 1e-12);
        // all variance is captured
        let total: f64 = (0..2)
            .map(|j| {
                let col = x.column(j);
                let m = col.mean();
                col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 3.0
            })
            .sum();
        assert!((pca.explained_variance[0] - total).abs() < 1e-12);
        assert_eq!(pca.rank, 1);
        // asking for two reduces to the rank
        assert_eq!(fit_pca(&x, 2).unwrap().num_components(), 1);
    }

    #[test]
    fn full_rank_reconstruction() {
        let x = DMatrix::from_row_slice(
            5,
            3,
            &[1.0, 2.0, 0.5, -1.0, 0.3, 2.0, 0.7, -0.2, 1.1, 3.0, 1.0, -1.0, 0.1, 0.4, 0.9],
        );
        // the 3x5 transpose centres to rank 2 and takes the Gram route
        for pca in [fit_pca(&x, 3).unwrap(), fit_pca(&x.transpose(), 3).unwrap()] {
            let c = &pca.components;
            let k = c.nrows();
            let gram = c * c.transpose();
            assert!((gram - DMatrix::identity(k, k)).abs().max() < 1e-10);
        }
        assert_eq!(fit_pca(&x.transpose(), 3).unwrap().num_components(), 2);
        let pca = fit_pca(&x, 3).unwrap();
        let proj = pca.transform(&x);
        let mut recon = proj * &pca.components;
        for (j, m) in pca.mean.iter().enumerate() {
            recon.column_mut(j).add_scalar_mut(*m);
        }
        assert!((recon - &x).abs().max() < 1e-10);
    }

    #[test]
    fn rejects_oversized_requests() {
        let x = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 7.0]);
        assert!(matches!(fit_pca(&x, 3), Err(Error::InvalidNumPc { .. })));
        assert!(matches!(fit_pca(&x, 0), Err(Error::InvalidNumPc { .. })));
    }

    #[test]
    fn sign_convention() {
        let x = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, -1.0, -3.0, 1.0, 3.0]);
        let pca = fit_pca(&x, 1).unwrap();
        assert!(pca.components[(0, 1)] > 0.0);
    }
}
