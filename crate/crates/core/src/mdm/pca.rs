use alloc::vec;
use alloc::vec::Vec;

use super::MdmError;
use crate::math;
use crate::tensor::Tensor;

/// Mean-centred projection onto the leading principal directions.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `k × d`, one unit-norm component per row, by decreasing variance.
    pub basis: Tensor,
    pub explained_variance: Vec<f64>,
}

impl Pca {
    pub fn project(&self, x: &Tensor) -> Tensor {
        let d = self.mean.len();
        let k = self.basis.rows();
        let mut out = Vec::with_capacity(x.rows() * k);
        for r in 0..x.rows() {
            let row = x.row(r);
            for c in 0..k {
                let comp = self.basis.row(c);
                out.push((0..d).map(|j| (row[j] - self.mean[j]) * comp[j]).sum());
            }
        }
        Tensor::from_vec(x.rows(), k, out).expect("sized buffer")
    }

    pub fn reconstruct(&self, projected: &Tensor) -> Tensor {
        let d = self.mean.len();
        let mut out = Vec::with_capacity(projected.rows() * d);
        for r in 0..projected.rows() {
            let coords = projected.row(r);
            for j in 0..d {
                let v: f64 = coords
                    .iter()
                    .enumerate()
                    .map(|(c, a)| a * self.basis.get(c, j))
                    .sum();
                out.push(self.mean[j] + v);
            }
        }
        Tensor::from_vec(projected.rows(), d, out).expect("sized buffer")
    }
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in decreasing order and eigenvectors as rows, each
/// signed so its largest-magnitude entry is positive.
pub fn symmetric_eigen(a: &Tensor) -> (Vec<f64>, Tensor) {
    let n = a.rows();
    let mut m: Vec<f64> = a.data().to_vec();
    let mut v = Tensor::identity(n).into_vec();
    let scale: f64 = m.iter().map(|x| x * x).sum::<f64>().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum();
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + math::sqrt(theta * theta + 1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / math::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vectors = Vec::with_capacity(n * n);
    for &i in &order {
        let mut col: Vec<f64> = (0..n).map(|k| v[k * n + i]).collect();
        let lead = col
            .iter()
            .copied()
            .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if lead < 0.0 {
            for x in &mut col {
                *x = -*x;
            }
        }
        vectors.extend(col);
    }
    (values, Tensor::from_vec(n, n, vectors).expect("square"))
}

/// Fits PCA on the rows of `corpus` and returns their projection.
pub fn pca_reduce(corpus: &Tensor, target_dim: usize) -> Result<(Tensor, Pca), MdmError> {
    let (n, d) = (corpus.rows(), corpus.cols());
    if target_dim == 0 || target_dim > n.min(d) {
        return Err(MdmError::BadTargetDim {
            target: target_dim,
            rows: n,
            dim: d,
        });
    }
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, x) in mean.iter_mut().zip(corpus.row(r)) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = vec![0.0; d * d];
    for r in 0..n {
        let row = corpus.row(r);
        for i in 0..d {
            let di = row[i] - mean[i];
            for j in i..d {
                cov[i * d + j] += di * (row[j] - mean[j]);
            }
        }
    }
    let denom = n as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / denom;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    if !(trace > 0.0) {
        return Err(MdmError::DegenerateCorpus);
    }
    let (values, vectors) = symmetric_eigen(&Tensor::from_vec(d, d, cov).expect("square"));
    let basis = Tensor::from_vec(
        target_dim,
        d,
        vectors.data()[..target_dim * d].to_vec(),
    )
    .expect("sized buffer");
    let pca = Pca {
        mean,
        basis,
        explained_variance: values[..target_dim].iter().map(|v| v.max(0.0)).collect(),
    };
    Ok((pca.project(corpus), pca))
}
