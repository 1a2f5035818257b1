//! Tridiagonal matrices and the Thomas algorithm.

/// Square tridiagonal matrix stored by diagonals.
///
/// `lower[i]` multiplies `x[i-1]` in row `i` (`lower[0]` unused),
/// `upper[i]` multiplies `x[i+1]` in row `i` (`upper[n-1]` unused).
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiag {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiag {
    pub fn zeros(n: usize) -> Self {
        Self { lower: vec![0.0; n], diag: vec![0.0; n], upper: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// y = M x
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        let n = self.len();
        for i in 0..n {
            let mut v = self.diag[i] * x[i];
            if i > 0 {
                v += self.lower[i] * x[i - 1];
            }
            if i + 1 < n {
                v += self.upper[i] * x[i + 1];
            }
            y[i] = v;
        }
    }

    /// Solves `(I - c M) x = rhs` in place, where `M` is `self`.
    /// Returns `false` if a pivot vanishes.
    pub fn solve_shifted(&self, c: f64, rhs: &mut [f64]) -> bool {
        let n = self.len();
        let mut cp = vec![0.0; n];
        let mut b0 = 1.0 - c * self.diag[0];
        if b0 == 0.0 || !b0.is_finite() {
            return false;
        }
        if n > 1 {
            cp[0] = -c * self.upper[0] / b0;
        }
        rhs[0] /= b0;
        for i in 1..n {
            let a = -c * self.lower[i];
            b0 = 1.0 - c * self.diag[i] - a * cp[i - 1];
            if b0 == 0.0 || !b0.is_finite() {
                return false;
            }
            if i + 1 < n {
                cp[i] = -c * self.upper[i] / b0;
            }
            rhs[i] = (rhs[i] - a * rhs[i - 1]) / b0;
        }
        for i in (0..n.saturating_sub(1)).rev() {
            rhs[i] -= cp[i] * rhs[i + 1];
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shifted_solve_inverts_matvec() {
        let m = Tridiag {
            lower: vec![0.0, 1.0, -2.0, 0.5],
            diag: vec![-3.0, -4.0, -1.0, -2.0],
            upper: vec![1.0, 0.3, 0.7, 0.0],
        };
        let x = [1.0, -2.0, 0.5, 3.0];
        let c = 0.25;
        let mut mx = [0.0; 4];
        m.matvec(&x, &mut mx);
        let mut rhs: Vec<f64> = x.iter().zip(&mx).map(|(xi, mi)| xi - c * mi).collect();
        assert!(m.solve_shifted(c, &mut rhs));
        for (a, b) in rhs.iter().zip(&x) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
