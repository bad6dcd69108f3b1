//! Tall dense blocks of right-hand sides.
//!
//! A `BlockVector` is an n-by-k column-major array, the unit of work for the
//! global (multiple right-hand side) conjugate gradient solver. The Frobenius
//! inner product over these blocks reduces to the ordinary dot product at
//! k = 1, with the same summation order, so single-column block iterations
//! reproduce vector iterations bit for bit.

/// Dense n-by-k block stored column major.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockVector {
    pub n: usize,
    pub k: usize,
    pub data: Vec<f64>,
}

impl BlockVector {
    pub fn zeros(n: usize, k: usize) -> Self {
        BlockVector {
            n,
            k,
            data: vec![0.0; n * k],
        }
    }

    /// Builds a block from equally long columns.
    pub fn from_columns(cols: &[&[f64]]) -> Self {
        let k = cols.len();
        assert!(k > 0, "block needs at least one column");
        let n = cols[0].len();
        let mut data = Vec::with_capacity(n * k);
        for c in cols {
            assert_eq!(c.len(), n, "columns must have equal length");
            data.extend_from_slice(c);
        }
        BlockVector { n, k, data }
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.n..(j + 1) * self.n]
    }

    pub fn column_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.n..(j + 1) * self.n]
    }

    /// Frobenius inner product trace(X'Y), summed in storage order.
    pub fn frob_dot(&self, other: &BlockVector) -> f64 {
        assert_eq!(self.n, other.n);
        assert_eq!(self.k, other.k);
        let mut acc = 0.0;
        for (a, b) in self.data.iter().zip(&other.data) {
            acc += a * b;
        }
        acc
    }

    pub fn frob_norm(&self) -> f64 {
        self.frob_dot(self).sqrt()
    }

    /// self += alpha * other.
    pub fn axpy(&mut self, alpha: f64, other: &BlockVector) {
        assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    /// self = other + beta * self (the conjugate-direction update).
    pub fn xpby(&mut self, other: &BlockVector, beta: f64) {
        assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = b + beta * *a;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn columns_round_trip() {
        let b = BlockVector::from_columns(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(b.n, 2);
        assert_eq!(b.k, 2);
        assert_eq!(b.column(0), &[1.0, 2.0]);
        assert_eq!(b.column(1), &[3.0, 4.0]);
    }

    #[test]
    fn frobenius_dot_is_symmetric_and_positive() {
        let x = BlockVector::from_columns(&[&[1.0, -2.0], &[0.5, 3.0]]);
        let y = BlockVector::from_columns(&[&[2.0, 1.0], &[-1.0, 0.25]]);
        assert_eq!(x.frob_dot(&y), y.frob_dot(&x));
        assert!(x.frob_dot(&x) > 0.0);
        assert_eq!(BlockVector::zeros(3, 2).frob_norm(), 0.0);
    }

    #[test]
    fn frobenius_reduces_to_dot_product_at_one_column() {
        let x = BlockVector::from_columns(&[&[1.0, 2.0, 3.0]]);
        let y = BlockVector::from_columns(&[&[4.0, 5.0, 6.0]]);
        let dot: f64 = x
            .column(0)
            .iter()
            .zip(y.column(0))
            .map(|(a, b)| a * b)
            .sum();
        assert_eq!(x.frob_dot(&y), dot);
    }

    #[test]
    fn updates_apply_per_entry() {
        let mut x = BlockVector::from_columns(&[&[1.0, 1.0]]);
        let p = BlockVector::from_columns(&[&[2.0, -1.0]]);
        x.axpy(0.5, &p);
        assert_eq!(x.data, vec![2.0, 0.5]);
        x.xpby(&p, 2.0);
        assert_eq!(x.data, vec![6.0, 0.0]);
    }
}
