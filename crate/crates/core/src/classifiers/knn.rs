use nalgebra::DMatrix;

/// k-nearest-neighbour classifier (Euclidean). Equal distances are broken by
/// training-row index; an even vote goes to class 0. `k` larger than the
/// training set uses every training row.
#[derive(Debug, Clone, PartialEq)]
pub struct Knn {
    k: usize,
    x: DMatrix<f64>,
    y: Vec<u8>,
}

impl Knn {
    pub fn fit(x: &DMatrix<f64>, y: &[u8], k: usize) -> Self {
        Self {
            k,
            x: x.clone(),
            y: y.to_vec(),
        }
    }

    pub fn predict(&self, row: &[f64]) -> u8 {
        let n = self.x.nrows();
        let data = self.x.as_slice();
        let mut dist: Vec<(f64, usize)> = (0..n)
            .map(|i| {
                let d2 = row
                    .iter()
                    .enumerate()
                    .map(|(j, v)| (data[j * n + i] - v).powi(2))
                    .sum::<f64>();
                (d2, i)
            })
            .collect();
        let k = self.k.min(n);
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < n {
            dist.select_nth_unstable_by(k - 1, cmp);
        }
        let ones = dist[..k].iter().filter(|(_, i)| self.y[*i] == 1).count();
        u8::from(2 * ones > k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_nn_recovers_training_labels() {
        let x = DMatrix::from_column_slice(5, 1, &[0.0, 1.0, 2.5, 3.0, 7.0]);
        let y = [1, 0, 0, 1, 1];
        let m = Knn::fit(&x, &y, 1);
        for i in 0..5 {
            assert_eq!(m.predict(&[x[(i, 0)]]), y[i]);
        }
    }

    #[test]
    fn three_nn_majority() {
        let x = DMatrix::from_column_slice(4, 1, &[0.0, 0.1, 0.2, 10.0]);
        let m = Knn::fit(&x, &[0, 0, 1, 1], 3);
        assert_eq!(m.predict(&[0.05]), 0);
    }

    #[test]
    fn even_vote_goes_to_zero() {
        let x = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let m = Knn::fit(&x, &[1, 0], 2);
        assert_eq!(m.predict(&[0.0]), 0);
    }
}
