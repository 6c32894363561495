//! Small dense tensor algebra for `n = 2` and `n = 3`.
//!
//! Everything here is written against a const-generic dimension so the
//! kernels work unchanged for a future 3D mesh. Only the determinant and the
//! cofactor need dimension-specific formulas.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub};

use thiserror::Error;

/// Determinant magnitude below which a matrix is treated as singular.
pub const SINGULAR_DET: f64 = 1e-14;

/// Tolerance used when validating the slip system geometry.
pub const SLIP_GEOMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("matrix is singular (|det| = {det:e})")]
    SingularMatrix { det: f64 },
    #[error("non-finite function value at stencil point {index} (component {component})")]
    NonFiniteEvaluation { index: usize, component: usize },
    #[error("invalid slip system: {0}")]
    InvalidSlipSystem(String),
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
}

/// Dense `N x N` matrix stored row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat<const N: usize>(pub [[f64; N]; N]);

pub type Mat2 = Mat<2>;

impl<const N: usize> Default for Mat<N> {
    fn default() -> Self {
        Self::zeros()
    }
}

impl<const N: usize> Mat<N> {
    pub fn zeros() -> Self {
        Mat([[0.0; N]; N])
    }

    pub fn identity() -> Self {
        let mut m = Self::zeros();
        for i in 0..N {
            m.0[i][i] = 1.0;
        }
        m
    }

    pub fn from_diag(d: [f64; N]) -> Self {
        let mut m = Self::zeros();
        for i in 0..N {
            m.0[i][i] = d[i];
        }
        m
    }

    /// `a ⊗ b`, i.e. the matrix with entries `a_i b_j`.
    pub fn outer(a: &[f64; N], b: &[f64; N]) -> Self {
        let mut m = Self::zeros();
        for i in 0..N {
            for j in 0..N {
                m.0[i][j] = a[i] * b[j];
            }
        }
        m
    }

    pub fn transpose(&self) -> Self {
        let mut m = Self::zeros();
        for i in 0..N {
            for j in 0..N {
                m.0[j][i] = self.0[i][j];
            }
        }
        m
    }

    pub fn trace(&self) -> f64 {
        (0..N).map(|i| self.0[i][i]).sum()
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut m = *self;
        for row in m.0.iter_mut() {
            for v in row.iter_mut() {
                *v *= s;
            }
        }
        m
    }

    /// Frobenius inner product `A : B`.
    pub fn ddot(&self, other: &Self) -> f64 {
        let mut s = 0.0;
        for i in 0..N {
            for j in 0..N {
                s += self.0[i][j] * other.0[i][j];
            }
        }
        s
    }

    pub fn norm_sq(&self) -> f64 {
        self.ddot(self)
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }

    pub fn mul_vec(&self, v: &[f64; N]) -> [f64; N] {
        let mut out = [0.0; N];
        for i in 0..N {
            for j in 0..N {
                out[i] += self.0[i][j] * v[j];
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let mut m = 0.0f64;
        for i in 0..N {
            for j in 0..N {
                m = m.max((self.0[i][j] - other.0[i][j]).abs());
            }
        }
        m
    }

    /// Determinant by direct expansion.
    pub fn det(&self) -> f64 {
        let a = &self.0;
        match N {
            1 => a[0][0],
            2 => a[0][0] * a[1][1] - a[0][1] * a[1][0],
            3 => {
                a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
                    + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
            }
            _ => unimplemented!("det is only provided for n <= 3"),
        }
    }

    /// Cofactor matrix from signed minors; for invertible `M` this is
    /// `det(M) M^{-T}`. Well defined for singular matrices too.
    pub fn cof(&self) -> Self {
        let a = &self.0;
        let mut c = Self::zeros();
        match N {
            1 => c.0[0][0] = 1.0,
            2 => {
                c.0[0][0] = a[1][1];
                c.0[0][1] = -a[1][0];
                c.0[1][0] = -a[0][1];
                c.0[1][1] = a[0][0];
            }
            3 => {
                for i in 0..3 {
                    for j in 0..3 {
                        let (i1, i2) = ((i + 1) % 3, (i + 2) % 3);
                        let (j1, j2) = ((j + 1) % 3, (j + 2) % 3);
                        // cyclic index ordering absorbs the (-1)^{i+j} sign
                        c.0[i][j] = a[i1][j1] * a[i2][j2] - a[i1][j2] * a[i2][j1];
                    }
                }
            }
            _ => unimplemented!("cof is only provided for n <= 3"),
        }
        c
    }

    /// Inverse by Cramer's rule, `M^{-1} = cof(M)^T / det(M)`.
    pub fn inv_cramer(&self) -> Result<Self, TensorError> {
        let det = self.det();
        if !(det.abs() > SINGULAR_DET) {
            return Err(TensorError::SingularMatrix { det });
        }
        Ok(self.cof().transpose().scale(1.0 / det))
    }
}

impl<const N: usize> Index<(usize, usize)> for Mat<N> {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.0[i][j]
    }
}

impl<const N: usize> IndexMut<(usize, usize)> for Mat<N> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.0[i][j]
    }
}

impl<const N: usize> Mul for Mat<N> {
    type Output = Mat<N>;
    fn mul(self, rhs: Mat<N>) -> Mat<N> {
        let mut m = Mat::zeros();
        for i in 0..N {
            for k in 0..N {
                let aik = self.0[i][k];
                for j in 0..N {
                    m.0[i][j] += aik * rhs.0[k][j];
                }
            }
        }
        m
    }
}

impl<const N: usize> Add for Mat<N> {
    type Output = Mat<N>;
    fn add(mut self, rhs: Mat<N>) -> Mat<N> {
        self += rhs;
        self
    }
}

impl<const N: usize> AddAssign for Mat<N> {
    fn add_assign(&mut self, rhs: Mat<N>) {
        for i in 0..N {
            for j in 0..N {
                self.0[i][j] += rhs.0[i][j];
            }
        }
    }
}

impl<const N: usize> Sub for Mat<N> {
    type Output = Mat<N>;
    fn sub(self, rhs: Mat<N>) -> Mat<N> {
        self + rhs.scale(-1.0)
    }
}

impl<const N: usize> Neg for Mat<N> {
    type Output = Mat<N>;
    fn neg(self) -> Mat<N> {
        self.scale(-1.0)
    }
}

/// Third-order tensor `T_{ijk}`, used for gradients of matrix fields
/// (the last index is the spatial derivative direction).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tensor3<const N: usize>(pub [[[f64; N]; N]; N]);

impl<const N: usize> Default for Tensor3<N> {
    fn default() -> Self {
        Self::zeros()
    }
}

impl<const N: usize> Tensor3<N> {
    pub fn zeros() -> Self {
        Tensor3([[[0.0; N]; N]; N])
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().flatten().flatten().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().flatten().all(|v| v.is_finite())
    }
}

/// A single glide system: glide direction `a` and slip-plane normal `b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlipSystem<const N: usize> {
    a: [f64; N],
    b: [f64; N],
}

fn dot<const N: usize>(a: &[f64; N], b: &[f64; N]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl<const N: usize> SlipSystem<N> {
    pub fn new(a: [f64; N], b: [f64; N]) -> Result<Self, TensorError> {
        let (na, nb, ab) = (dot(&a, &a).sqrt(), dot(&b, &b).sqrt(), dot(&a, &b));
        if !(na - 1.0).abs().le(&SLIP_GEOMETRY_TOL) || !(nb - 1.0).abs().le(&SLIP_GEOMETRY_TOL) {
            return Err(TensorError::InvalidSlipSystem(format!(
                "a and b must be unit vectors (|a| = {na}, |b| = {nb})"
            )));
        }
        if !ab.abs().le(&SLIP_GEOMETRY_TOL) {
            return Err(TensorError::InvalidSlipSystem(format!("a and b must be orthogonal (a.b = {ab:e})")));
        }
        Ok(SlipSystem { a, b })
    }

    pub fn a(&self) -> &[f64; N] {
        &self.a
    }

    pub fn b(&self) -> &[f64; N] {
        &self.b
    }

    /// The Schmid tensor `a ⊗ b`.
    pub fn schmid(&self) -> Mat<N> {
        Mat::outer(&self.a, &self.b)
    }
}

impl SlipSystem<2> {
    /// Slip system whose glide direction makes angle `theta` with the x-axis.
    pub fn from_angle(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        SlipSystem { a: [c, s], b: [-s, c] }
    }
}

/// Plastic deformation of a single slip, `I + γ a ⊗ b`. Unimodular since `a·b = 0`.
pub fn slip_matrix<const N: usize>(gamma: f64, slip: &SlipSystem<N>) -> Mat<N> {
    Mat::identity() + slip.schmid().scale(gamma)
}

/// Central-difference gradient of `phi` at `x`.
pub fn fd_gradient<F>(phi: F, x: &[f64], h: f64) -> Result<Vec<f64>, TensorError>
where
    F: Fn(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(TensorError::InvalidStep(h));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let fp = phi(&probe);
        if !fp.is_finite() {
            return Err(TensorError::NonFiniteEvaluation { index: 2 * i, component: i });
        }
        probe[i] = x[i] - h;
        let fm = phi(&probe);
        if !fm.is_finite() {
            return Err(TensorError::NonFiniteEvaluation { index: 2 * i + 1, component: i });
        }
        probe[i] = x[i];
        grad.push((fp - fm) / (2.0 * h));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Laplace expansion along the first row; independent of the closed forms.
    fn det_laplace(m: &[Vec<f64>]) -> f64 {
        let n = m.len();
        if n == 1 {
            return m[0][0];
        }
        (0..n)
            .map(|j| {
                let minor: Vec<Vec<f64>> = m[1..]
                    .iter()
                    .map(|row| row.iter().enumerate().filter(|(c, _)| *c != j).map(|(_, v)| *v).collect())
                    .collect();
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                sign * m[0][j] * det_laplace(&minor)
            })
            .sum()
    }

    fn to_rows<const N: usize>(m: &Mat<N>) -> Vec<Vec<f64>> {
        m.0.iter().map(|r| r.to_vec()).collect()
    }

    fn arb_mat3() -> impl Strategy<Value = Mat<3>> {
        prop::array::uniform3(prop::array::uniform3(-2.0f64..2.0)).prop_map(Mat)
    }

    fn arb_mat2() -> impl Strategy<Value = Mat<2>> {
        prop::array::uniform2(prop::array::uniform2(-2.0f64..2.0)).prop_map(Mat)
    }

    #[test]
    fn det_simple_cases() {
        assert_eq!(Mat::<2>::identity().det(), 1.0);
        assert_eq!(Mat::from_diag([2.0, 3.0]).det(), 6.0);
        assert_eq!(Mat::<3>::identity().det(), 1.0);
    }

    #[test]
    fn cof_of_identity_and_2x2_formula() {
        assert_eq!(Mat::<2>::identity().cof(), Mat::identity());
        assert_eq!(Mat::<3>::identity().cof(), Mat::identity());
        let m = Mat([[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(m.cof(), Mat([[4.0, -3.0], [-2.0, 1.0]]));
    }

    #[test]
    fn cof_is_defined_for_singular_matrices() {
        let m = Mat([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [1.0, 0.0, 1.0]]);
        assert_eq!(m.det(), 0.0);
        let prod = m * m.cof().transpose();
        assert!(prod.max_abs_diff(&Mat::zeros()) < 1e-14);
    }

    #[test]
    fn inverse_cases() {
        assert_eq!(Mat::<2>::identity().inv_cramer().unwrap(), Mat::identity());
        assert_eq!(Mat::from_diag([2.0, 4.0]).inv_cramer().unwrap(), Mat::from_diag([0.5, 0.25]));
        let err = Mat([[1.0, 2.0], [2.0, 4.0]]).inv_cramer().unwrap_err();
        assert!(matches!(err, TensorError::SingularMatrix { .. }));
    }

    #[test]
    fn slip_matrix_examples() {
        let s = SlipSystem::new([1.0, 0.0], [0.0, 1.0]).unwrap();
        assert_eq!(slip_matrix(0.0, &s), Mat::identity());
        let fp = slip_matrix(0.3, &s);
        assert_eq!(fp, Mat([[1.0, 0.3], [0.0, 1.0]]));
        assert_eq!(fp.det(), 1.0);
    }

    #[test]
    fn slip_system_validation() {
        assert!(SlipSystem::new([1.0, 0.0], [1.0, 0.0]).is_err());
        assert!(SlipSystem::new([2.0, 0.0], [0.0, 1.0]).is_err());
        let s = SlipSystem::from_angle(0.7);
        assert!(dot(s.a(), s.b()).abs() < 1e-15);
    }

    #[test]
    fn fd_gradient_examples() {
        let g = fd_gradient(|x| x[0] * x[0], &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-8);

        // Jacobi's formula: d det / dF = cof F
        let g = fd_gradient(|x| Mat([[x[0], x[1]], [x[2], x[3]]]).det(), &[1.0, 0.0, 0.0, 1.0], 1e-6).unwrap();
        let c = Mat::<2>::identity().cof();
        for (k, gk) in g.iter().enumerate() {
            assert!((gk - c.0[k / 2][k % 2]).abs() < 1e-8);
        }

        let g = fd_gradient(|x| 3.0 * x[0] - 2.0 * x[1] + 1.0, &[0.4, -7.0], 0.5).unwrap();
        assert!((g[0] - 3.0).abs() < 1e-14 && (g[1] + 2.0).abs() < 1e-14);
    }

    #[test]
    fn fd_gradient_rejects_barrier_crossing() {
        let r = fd_gradient(|x| if x[0] > 0.0 { x[0].ln() } else { f64::INFINITY }, &[1e-7], 1e-6);
        assert!(matches!(r, Err(TensorError::NonFiniteEvaluation { component: 0, .. })));
        assert!(fd_gradient(|x| x[0], &[0.0], 0.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn det_matches_laplace_expansion(m in arb_mat3()) {
            prop_assert!((m.det() - det_laplace(&to_rows(&m))).abs() < 1e-13);
        }

        #[test]
        fn cof_equals_det_times_inverse_transpose(m in arb_mat3()) {
            prop_assume!(m.det().abs() > 0.1);
            let inv = m.inv_cramer().unwrap();
            // inverse via Gauss elimination route: check M * inv = I, then compare cof
            prop_assert!((m * inv).max_abs_diff(&Mat::identity()) < 1e-12);
            let alt = inv.transpose().scale(m.det());
            prop_assert!(m.cof().max_abs_diff(&alt) < 1e-12);
        }

        #[test]
        fn cofactor_product_rule_3d(a in arb_mat3(), b in arb_mat3()) {
            prop_assert!((a * b).cof().max_abs_diff(&(a.cof() * b.cof())) < 1e-12);
        }

        #[test]
        fn cofactor_product_rule_2d(a in arb_mat2(), b in arb_mat2()) {
            prop_assert!((a * b).cof().max_abs_diff(&(a.cof() * b.cof())) < 1e-12);
        }

        #[test]
        fn slip_matrix_is_unimodular(gamma in -5.0f64..5.0, theta in 0.0f64..std::f64::consts::TAU) {
            let s = SlipSystem::from_angle(theta);
            let fp = slip_matrix(gamma, &s);
            prop_assert!((fp.det() - 1.0).abs() < 1e-14);
            let inv = fp.inv_cramer().unwrap();
            prop_assert!(inv.max_abs_diff(&slip_matrix(-gamma, &s)) < 1e-13);
        }
    }
}
