use super::mat::Mat;
use crate::scalar::Real;

/// Householder QR with column pivoting: A·P = Q·R with
/// |R[0,0]| >= |R[1,1]| >= ... (norm-greedy pivoting).
///
/// Storage follows the classic JAMA layout: the k-th Householder vector v
/// occupies column k at and below the diagonal (with head v0 = qr[k][k]),
/// H_k = I - v vᵀ / v0, and R's diagonal lives in `rdiag`.
pub struct ColPivQr<F> {
    qr: Mat<F>,
    pub perm: Vec<usize>,
    pub rdiag: Vec<F>,
}

impl<F: Real> ColPivQr<F> {
    pub fn new(a: &Mat<F>) -> Self {
        let m = a.rows();
        let n = a.cols();
        let k = m.min(n);
        let mut qr = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rdiag = vec![F::zero(); k];
        let mut colnorm: Vec<F> = (0..n)
            .map(|j| (0..m).fold(F::zero(), |s, i| s + qr[(i, j)] * qr[(i, j)]))
            .collect();

        for step in 0..k {
            let mut p = step;
            for j in step + 1..n {
                if colnorm[j] > colnorm[p] {
                    p = j;
                }
            }
            if p != step {
                for i in 0..m {
                    let t = qr[(i, step)];
                    qr[(i, step)] = qr[(i, p)];
                    qr[(i, p)] = t;
                }
                colnorm.swap(step, p);
                perm.swap(step, p);
            }

            let mut nrm = F::zero();
            for i in step..m {
                nrm = nrm.hypot(qr[(i, step)]);
            }
            if nrm == F::zero() {
                rdiag[step] = F::zero();
                continue;
            }
            if qr[(step, step)] < F::zero() {
                nrm = -nrm;
            }
            for i in step..m {
                qr[(i, step)] = qr[(i, step)] / nrm;
            }
            qr[(step, step)] += F::one();

            for j in step + 1..n {
                let mut s = F::zero();
                for i in step..m {
                    s += qr[(i, step)] * qr[(i, j)];
                }
                s = -s / qr[(step, step)];
                for i in step..m {
                    let h = qr[(i, step)];
                    qr[(i, j)] = qr[(i, j)] + s * h;
                }
                let v = qr[(step, j)];
                colnorm[j] = (colnorm[j] - v * v).max(F::zero());
            }
            rdiag[step] = -nrm;
        }

        ColPivQr { qr, perm, rdiag }
    }

    /// Numerical rank against `rel_tol * |R[0,0]|`.
    pub fn rank(&self, rel_tol: F) -> usize {
        let r0 = self.rdiag.first().map(|v| v.abs()).unwrap_or(F::zero());
        if r0 == F::zero() {
            return 0;
        }
        self.rdiag
            .iter()
            .take_while(|v| v.abs() > rel_tol * r0)
            .count()
    }

    /// First `d` columns of Q: an orthonormal basis for the dominant range.
    pub fn q_columns(&self, d: usize) -> Mat<F> {
        let m = self.qr.rows();
        let k = self.rdiag.len();
        assert!(d <= m, "requested more basis vectors than rows");
        let mut q = Mat::zeros(m, d);
        for j in 0..d {
            let mut col = vec![F::zero(); m];
            col[j] = F::one();
            for step in (0..k.min(j + 1)).rev() {
                let head = self.qr[(step, step)];
                if self.rdiag[step] == F::zero() || head == F::zero() {
                    continue;
                }
                let mut s = F::zero();
                for i in step..m {
                    s += self.qr[(i, step)] * col[i];
                }
                s = -s / head;
                for i in step..m {
                    let h = self.qr[(i, step)];
                    col[i] = col[i] + s * h;
                }
            }
            for i in 0..m {
                q[(i, j)] = col[i];
            }
        }
        q
    }
}
