//! Truncated Karhunen-Loève eigensystem of a Matérn covariance operator on
//! L^2(0,1), computed by the Nyström method on a composite midpoint rule.
//!
//! The quadrature-discretised eigenproblem is the symmetric matrix problem
//! B u = xi u with B = W^{1/2} C W^{1/2}, where C is the kernel matrix at
//! the quadrature nodes and W the (uniform) weight matrix. Eigenfunction
//! values at the nodes are eta(t_j) = u_j / sqrt(w_j); off-node values use
//! the Nyström interpolation formula
//!     eta(x) = (1/xi) sum_j w_j C(x, t_j) eta(t_j).
//!
//! Two equivalent linear-algebra routes produce the eigenpairs:
//! * a dense symmetric eigensolve (any kernel);
//! * for the exponential kernel (nu = 1/2) on the uniform grid, the kernel
//!   matrix is Kac-Murdock-Szegő (entries r^{|i-j|}) whose inverse is
//!   exactly tridiagonal, so the leading eigenpairs come from a symmetric
//!   tridiagonal problem at O(quad_size * d) cost instead of O(quad_size^3).

use faer::{Mat, Side};

use super::{kernel_value, MaternParams, Smoothness};
use crate::error::{Error, Result};

/// Truncated KL eigensystem for log sigma_S.
#[derive(Debug, Clone)]
pub struct KlBasis {
    pub params: MaternParams,
    /// Truncation dimension d.
    pub dim: usize,
    /// Nyström quadrature resolution used to build the basis.
    pub quad_size: usize,
    /// Eigenvalues xi_1 >= xi_2 >= ... >= xi_d > 0.
    pub eigenvalues: Vec<f64>,
    /// Eigenfunction values at the quadrature nodes, row-major d x quad_size:
    /// eigenfunctions[i * quad_size + j] = eta_i(t_j).
    pub eigenfunctions: Vec<f64>,
}

impl KlBasis {
    /// Midpoint quadrature node t_j = (j + 1/2) / quad_size.
    #[inline]
    pub fn node(&self, j: usize) -> f64 {
        (j as f64 + 0.5) / self.quad_size as f64
    }

    #[inline]
    pub fn weight(&self) -> f64 {
        1.0 / self.quad_size as f64
    }

    pub fn eigenfunction(&self, i: usize) -> &[f64] {
        &self.eigenfunctions[i * self.quad_size..(i + 1) * self.quad_size]
    }

    /// Evaluate eta_i at an arbitrary point by Nyström interpolation.
    pub fn eigenfunction_at(&self, i: usize, x: f64) -> f64 {
        let w = self.weight();
        let eta = self.eigenfunction(i);
        let mut acc = 0.0;
        for j in 0..self.quad_size {
            acc += kernel_value(x, self.node(j), &self.params) * eta[j];
        }
        w * acc / self.eigenvalues[i]
    }

    /// sqrt(xi_i) eta_i(x) for all i at each requested point, row-major
    /// points.len() x d. This is the linear map z -> log sigma_S(points).
    pub fn mode_matrix(&self, points: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let q = self.quad_size;
        let w = self.weight();
        let mut out = vec![0.0; points.len() * d];
        for (pi, &x) in points.iter().enumerate() {
            let row = &mut out[pi * d..(pi + 1) * d];
            let kx: Vec<f64> = (0..q)
                .map(|j| kernel_value(x, self.node(j), &self.params))
                .collect();
            for i in 0..d {
                let eta = &self.eigenfunctions[i * q..(i + 1) * q];
                let mut acc = 0.0;
                for j in 0..q {
                    acc += kx[j] * eta[j];
                }
                row[i] = w * acc / self.eigenvalues[i].sqrt();
            }
        }
        out
    }

    /// Realisation of the log-normal field exp(sum_i sqrt(xi_i) eta_i(x) z_i)
    /// at the requested points.
    pub fn evaluate_field(&self, z: &[f64], points: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dim {
            return Err(Error::Dimension(format!(
                "gaussian vector has dimension {}, basis has {}",
                z.len(),
                self.dim
            )));
        }
        let modes = self.mode_matrix(points);
        let d = self.dim;
        Ok(points
            .iter()
            .enumerate()
            .map(|(pi, _)| {
                let row = &modes[pi * d..(pi + 1) * d];
                let log_val: f64 = row.iter().zip(z).map(|(m, zi)| m * zi).sum();
                log_val.exp()
            })
            .collect())
    }
}

/// Compute the d leading Nyström eigenpairs of the covariance operator.
///
/// Runs single-threaded; the returned basis is immutable and freely
/// shareable afterwards.
pub fn build_kl_basis(p: &MaternParams, dim: usize, quad_size: usize) -> Result<KlBasis> {
    p.validate()?;
    if dim < 1 {
        return Err(Error::InvalidParameter("dimension must be >= 1".into()));
    }
    if quad_size < dim {
        return Err(Error::InvalidParameter(format!(
            "quad_size {quad_size} must be at least the truncation dimension {dim}"
        )));
    }

    let (eigenvalues, mut eigenfunctions) = match p.smoothness {
        Smoothness::Nu(nu) if (nu - 0.5).abs() < 1e-12 => kms_eigenpairs(p, dim, quad_size)?,
        _ => dense_eigenpairs(p, dim, quad_size)?,
    };

    for (i, &xi) in eigenvalues.iter().enumerate() {
        if !(xi > 0.0) || !xi.is_finite() {
            return Err(Error::Numerical(format!(
                "nonpositive Nyström eigenvalue xi_{} = {xi}; increase quad_size or reduce d",
                i + 1
            )));
        }
    }

    // Fix signs so results are deterministic: eta_i(t_0) >= 0.
    let q = quad_size;
    for i in 0..dim {
        if eigenfunctions[i * q] < 0.0 {
            for v in &mut eigenfunctions[i * q..(i + 1) * q] {
                *v = -*v;
            }
        }
    }

    Ok(KlBasis {
        params: *p,
        dim,
        quad_size,
        eigenvalues,
        eigenfunctions,
    })
}

/// Dense route: form B = C/q and take the top-d pairs of a symmetric
/// eigendecomposition.
fn dense_eigenpairs(
    p: &MaternParams,
    dim: usize,
    q: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let qf = q as f64;
    let node = |j: usize| (j as f64 + 0.5) / qf;
    let b = Mat::from_fn(q, q, |i, j| kernel_value(node(i), node(j), p) / qf);

    // The eigensolve itself must stay sequential so identical inputs give
    // bit-identical bases at any worker count.
    let prev = faer::get_global_parallelism();
    faer::set_global_parallelism(faer::Par::Seq);
    let evd = b.self_adjoint_eigen(Side::Lower);
    faer::set_global_parallelism(prev);
    let evd = evd.map_err(|e| Error::Numerical(format!("symmetric eigensolve failed: {e:?}")))?;

    let s = evd.S();
    let u = evd.U();
    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|&a, &b| {
        s[b].partial_cmp(&s[a]).unwrap_or(std::cmp::Ordering::Equal)
    });

    let scale = qf.sqrt(); // eta(t_j) = u_j * sqrt(q)
    let mut eigenvalues = Vec::with_capacity(dim);
    let mut eigenfunctions = vec![0.0; dim * q];
    for (i, &col) in order[..dim].iter().enumerate() {
        eigenvalues.push(s[col]);
        for j in 0..q {
            eigenfunctions[i * q + j] = u[(j, col)] * scale;
        }
    }
    Ok((eigenvalues, eigenfunctions))
}

/// Exponential-kernel route. On the uniform midpoint grid the kernel matrix
/// is K = sigma^2 [r^{|i-j|}] with r = exp(-sqrt(2) / (q lambda)), and
///   K^{-1} = T / (sigma^2 (1 - r^2)),
/// where T is tridiagonal with diagonal (1, 1+r^2, ..., 1+r^2, 1) and
/// off-diagonal -r. The top-d eigenpairs of B = K/q are therefore the
/// bottom-d eigenpairs of T:  xi = sigma^2 (1 - r^2) / (q theta).
fn kms_eigenpairs(p: &MaternParams, dim: usize, q: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let qf = q as f64;
    // r = exp(-z) with z the scaled grid spacing; 1 - r via expm1 to avoid
    // cancellation when q is large.
    let z = 2.0 * 0.5f64.sqrt() / (qf * p.lambda_c);
    let r = (-z).exp();
    let one_minus_r = -(-z).exp_m1();
    let one_minus_r2 = one_minus_r * (1.0 + r);

    let diag_inner = 1.0 + r * r;
    let diag = |i: usize| if i == 0 || i == q - 1 { 1.0 } else { diag_inner };
    let off = -r;

    // Sturm count: number of eigenvalues of T strictly below x.
    let count_below = |x: f64| -> usize {
        let mut count = 0usize;
        let mut d = diag(0) - x;
        if d < 0.0 {
            count += 1;
        }
        for i in 1..q {
            if d == 0.0 {
                d = 1e-300;
            }
            d = (diag(i) - x) - off * off / d;
            if d < 0.0 {
                count += 1;
            }
        }
        count
    };

    // Gershgorin bounds for T.
    let lo0 = (1.0 - r).min(diag_inner - 2.0 * r) - 1e-12;
    let hi0 = (1.0 + r).max(diag_inner + 2.0 * r) + 1e-12;

    let mut thetas = Vec::with_capacity(dim);
    for k in 0..dim {
        // k-th smallest eigenvalue by bisection on the Sturm count.
        let (mut lo, mut hi) = (lo0, hi0);
        for _ in 0..120 {
            let mid = 0.5 * (lo + hi);
            if count_below(mid) > k {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 1e-15 * hi.abs().max(1e-30) {
                break;
            }
        }
        thetas.push(0.5 * (lo + hi));
    }

    // Inverse iteration for each eigenvector. The eigenvalues of T are
    // simple with gaps well above the bisection resolution, so a few
    // iterations from a deterministic start vector converge. The bisected
    // theta is kept as the eigenvalue: Sturm bisection resolves it to full
    // relative precision, which a Rayleigh quotient would not at the small
    // end of the spectrum.
    let mut eigenvalues = Vec::with_capacity(dim);
    let mut eigenfunctions = vec![0.0; dim * q];
    let scale = qf.sqrt();
    let mut v = vec![0.0; q];
    for (k, &theta) in thetas.iter().enumerate() {
        // Start vector: the continuum mode shape, cosine for even modes and
        // sine for odd ones about the midpoint; any rough match works.
        for (j, vj) in v.iter_mut().enumerate() {
            let t = (j as f64 + 0.5) / qf - 0.5;
            let omega = (k + 1) as f64 * std::f64::consts::PI;
            *vj = if k % 2 == 0 {
                (omega * t).cos()
            } else {
                (omega * t).sin()
            };
        }
        normalize(&mut v);
        for _ in 0..3 {
            solve_shifted_tridiag(q, &diag, off, theta, &mut v);
            normalize(&mut v);
        }
        eigenvalues.push(p.sigma_var_sq * one_minus_r2 / (qf * theta));
        for j in 0..q {
            eigenfunctions[k * q + j] = v[j] * scale;
        }
    }
    Ok((eigenvalues, eigenfunctions))
}

fn normalize(v: &mut [f64]) {
    let n = (v.iter().map(|x| x * x).sum::<f64>()).sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
}

/// Solve (T - theta I) x = v in place by tridiagonal LU with partial
/// pivoting. Near-singularity is expected (that is the point of inverse
/// iteration); exact zero pivots are perturbed.
fn solve_shifted_tridiag(
    q: usize,
    diag: &dyn Fn(usize) -> f64,
    off: f64,
    theta: f64,
    v: &mut [f64],
) {
    // Singular pivots get nudged by a tiny scaled amount; the resulting huge
    // solution components are harmless after normalisation.
    let tiny = 1e-18 * (1.0 + theta.abs());
    let guard = |x: f64| if x.abs() < tiny { tiny } else { x };

    if q == 1 {
        v[0] /= guard(diag(0) - theta);
        return;
    }

    // Row i carries columns (i, i+1, i+2) as d[i], e[i], f[i]; row swaps
    // introduce the second superdiagonal f. The sub-diagonal entry below the
    // current pivot is always the original constant `off` because step i
    // touches only rows i and i+1.
    let mut d: Vec<f64> = (0..q).map(|i| diag(i) - theta).collect();
    let mut e = vec![off; q - 1];
    let mut f = vec![0.0; q];

    for i in 0..q - 1 {
        if off.abs() > d[i].abs() {
            // swap rows i and i+1
            let (di_old, ei_old) = (d[i], e[i]);
            d[i] = off;
            e[i] = d[i + 1];
            f[i] = if i + 2 < q { e[i + 1] } else { 0.0 };
            d[i + 1] = ei_old;
            if i + 2 < q {
                e[i + 1] = 0.0;
            }
            v.swap(i, i + 1);
            let m = di_old / d[i];
            d[i + 1] -= m * e[i];
            if i + 2 < q {
                e[i + 1] -= m * f[i];
            }
            v[i + 1] -= m * v[i];
        } else {
            let m = off / guard(d[i]);
            d[i] = guard(d[i]);
            d[i + 1] -= m * e[i];
            v[i + 1] -= m * v[i];
        }
    }
    d[q - 1] = guard(d[q - 1]);

    v[q - 1] /= d[q - 1];
    v[q - 2] = (v[q - 2] - e[q - 2] * v[q - 1]) / d[q - 2];
    for i in (0..q - 2).rev() {
        v[i] = (v[i] - e[i] * v[i + 1] - f[i] * v[i + 2]) / d[i];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{default_quad_size, FieldKind};

    fn gram_max_offdiag(basis: &KlBasis) -> (f64, f64) {
        let w = basis.weight();
        let mut max_off = 0.0f64;
        let mut max_diag_err = 0.0f64;
        for i in 0..basis.dim {
            for j in i..basis.dim {
                let mut acc = 0.0;
                let ei = basis.eigenfunction(i);
                let ej = basis.eigenfunction(j);
                for k in 0..basis.quad_size {
                    acc += w * ei[k] * ej[k];
                }
                if i == j {
                    max_diag_err = max_diag_err.max((acc - 1.0).abs());
                } else {
                    max_off = max_off.max(acc.abs());
                }
            }
        }
        (max_diag_err, max_off)
    }

    #[test]
    fn dense_basis_orthonormal_and_bounded() {
        let p = FieldKind::Matern15.params(1.0, 1.0).unwrap();
        let basis = build_kl_basis(&p, 5, 256).unwrap();
        let (diag_err, off) = gram_max_offdiag(&basis);
        assert!(diag_err < 1e-8, "eigenfunction norms off by {diag_err}");
        assert!(off < 1e-6, "eigenfunctions not orthogonal: {off}");
        // nonincreasing positive eigenvalues, trace bound
        for w in basis.eigenvalues.windows(2) {
            assert!(w[0] >= w[1] && w[1] > 0.0);
        }
        let total: f64 = basis.eigenvalues.iter().sum();
        assert!(total <= 1.0 + 1e-8, "trace bound violated: {total}");
        assert!(basis.eigenvalues[0] <= 1.0 + 1e-8);
    }

    #[test]
    fn kms_route_matches_dense_route() {
        let p = FieldKind::Exponential.params(1.0, 1.0).unwrap();
        let q = 256;
        let (xi_kms, ef_kms) = kms_eigenpairs(&p, 8, q).unwrap();
        let (xi_dense, ef_dense) = dense_eigenpairs(&p, 8, q).unwrap();
        for i in 0..8 {
            let rel = (xi_kms[i] - xi_dense[i]).abs() / xi_dense[i];
            assert!(rel < 1e-9, "eigenvalue {i} differs: rel {rel}");
            let dot: f64 = (0..q)
                .map(|j| ef_kms[i * q + j] * ef_dense[i * q + j])
                .sum::<f64>()
                / q as f64;
            assert!(
                (dot.abs() - 1.0).abs() < 1e-7,
                "eigenvector {i} differs: |<u,v>| = {}",
                dot.abs()
            );
        }
    }

    #[test]
    fn kms_basis_orthonormal() {
        let p = FieldKind::Exponential.params(1.0, 1.0).unwrap();
        let basis = build_kl_basis(&p, 64, 1024).unwrap();
        let (diag_err, off) = gram_max_offdiag(&basis);
        assert!(diag_err < 1e-8, "norm error {diag_err}");
        assert!(off < 1e-6, "orthogonality error {off}");
        let total: f64 = basis.eigenvalues.iter().sum();
        assert!(total <= 1.0 + 1e-8);
    }

    #[test]
    fn nystrom_interpolation_consistent_at_nodes() {
        let p = FieldKind::Matern15.params(1.0, 1.0).unwrap();
        let basis = build_kl_basis(&p, 4, 128).unwrap();
        for i in 0..4 {
            for j in [0usize, 17, 93] {
                let x = basis.node(j);
                let interp = basis.eigenfunction_at(i, x);
                let nodal = basis.eigenfunction(i)[j];
                assert!(
                    (interp - nodal).abs() < 1e-8 * nodal.abs().max(1.0),
                    "interpolation at node {j} mode {i}: {interp} vs {nodal}"
                );
            }
        }
    }

    #[test]
    fn nystrom_eigenvalues_converge_in_quad_size() {
        // doubling the quadrature changes leading eigenvalues by < 1e-3
        // relative once quad_size >= 8 d (nu = 1.5).
        let p = FieldKind::Matern15.params(1.0, 1.0).unwrap();
        let d = 16;
        let b1 = build_kl_basis(&p, d, 8 * d).unwrap();
        let b2 = build_kl_basis(&p, d, 16 * d).unwrap();
        for i in 0..d / 2 {
            let rel = (b1.eigenvalues[i] - b2.eigenvalues[i]).abs() / b2.eigenvalues[i];
            assert!(rel < 1e-3, "eigenvalue {i} drifted by {rel}");
        }
    }

    #[test]
    fn mercer_residual_decreases_with_dimension() {
        let p = FieldKind::Matern15.params(1.0, 1.0).unwrap();
        let quad = 512;
        let pairs = [(0.13, 0.77), (0.4, 0.45), (0.05, 0.95), (0.6, 0.6)];
        let mut last = f64::INFINITY;
        for d in [2usize, 4, 8, 16] {
            let basis = build_kl_basis(&p, d, quad).unwrap();
            let mut worst = 0.0f64;
            for &(x, y) in &pairs {
                let exact = kernel_value(x, y, &p);
                let mut acc = 0.0;
                for i in 0..d {
                    acc += basis.eigenvalues[i]
                        * basis.eigenfunction_at(i, x)
                        * basis.eigenfunction_at(i, y);
                }
                worst = worst.max((exact - acc).abs());
            }
            assert!(
                worst < last * 1.05,
                "Mercer residual did not decrease: {worst} after {last}"
            );
            last = worst;
        }
    }

    #[test]
    fn field_at_zero_vector_is_one() {
        let p = FieldKind::Exponential.params(1.0, 1.0).unwrap();
        let basis = build_kl_basis(&p, 10, 512).unwrap();
        let vals = basis
            .evaluate_field(&vec![0.0; 10], &[0.1, 0.5, 0.9])
            .unwrap();
        for v in vals {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn field_is_log_linear_in_z() {
        let p = FieldKind::Matern15.params(1.0, 1.0).unwrap();
        let basis = build_kl_basis(&p, 6, 256).unwrap();
        let z: Vec<f64> = vec![0.3, -1.2, 0.7, 0.1, -0.4, 2.0];
        let z2: Vec<f64> = z.iter().map(|v| 2.0 * v).collect();
        let pts = [0.25, 0.6];
        let f1 = basis.evaluate_field(&z, &pts).unwrap();
        let f2 = basis.evaluate_field(&z2, &pts).unwrap();
        for (a, b) in f1.iter().zip(&f2) {
            assert!((b.ln() - 2.0 * a.ln()).abs() < 1e-10);
            assert!(*a > 0.0 && *b > 0.0);
        }
    }

    #[test]
    fn single_mode_field_matches_formula() {
        let p = FieldKind::Matern15.params(1.0, 1.0).unwrap();
        let basis = build_kl_basis(&p, 1, 256).unwrap();
        let x = 0.37;
        let v = basis.evaluate_field(&[1.0], &[x]).unwrap()[0];
        let expected = (basis.eigenvalues[0].sqrt() * basis.eigenfunction_at(0, x)).exp();
        assert!((v - expected).abs() < 1e-12);
    }

    #[test]
    fn rejects_dim_larger_than_quad() {
        let p = FieldKind::Matern15.params(1.0, 1.0).unwrap();
        assert!(build_kl_basis(&p, 32, 16).is_err());
    }

    #[test]
    fn default_quad_size_floor() {
        assert_eq!(default_quad_size(4), 512);
        assert_eq!(default_quad_size(256), 2048);
    }
}
