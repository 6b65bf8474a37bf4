//! Small analytic DAEs used to check the integrator and the sensitivities.

use nalgebra::{DMatrix, DVector};

use crate::dae::{BlockEval, DaeSystem, Dims, JacobianBlocks};
use crate::error::ModelError;

/// `x' = -x`, `0 = z - x`, `y = z`, with no input effect.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScalarDecay;

impl DaeSystem for ScalarDecay {
    fn dims(&self) -> Dims {
        Dims { n: 1, m: 1, s: 1, p: 1 }
    }

    fn eval_block(&self, _b: usize, x: &[f64], _u: &[f64], z: &[f64], _g: bool) -> Result<BlockEval, ModelError> {
        Ok(BlockEval { f: vec![-x[0]], h: vec![z[0] - x[0]] })
    }

    fn output_block(&self, _b: usize, _x: &[f64], _u: &[f64], z: &[f64]) -> Result<Vec<f64>, ModelError> {
        Ok(vec![z[0]])
    }

    fn jacobians_block(&self, _b: usize, _x: &[f64], _u: &[f64], _z: &[f64], _g: bool) -> Result<JacobianBlocks, ModelError> {
        let mut j = JacobianBlocks::zeros(1, 1, 1, 1);
        j.fx[(0, 0)] = -1.0;
        j.hx[(0, 0)] = -1.0;
        j.hz[(0, 0)] = 1.0;
        j.gz[(0, 0)] = 1.0;
        Ok(j)
    }
}

/// Linear DAE `x' = A x + B u + F z`, `0 = z - C x - D u`, `y = [x; z]`.
#[derive(Debug, Clone)]
pub struct LinearDae {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl LinearDae {
    /// Matrices of the equivalent ODE `x' = A_e x + B_e u` after eliminating `z`.
    pub fn reduced(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        (&self.a + &self.f * &self.c, &self.b + &self.f * &self.d)
    }
}

impl DaeSystem for LinearDae {
    fn dims(&self) -> Dims {
        let n = self.a.nrows();
        let s = self.c.nrows();
        Dims { n, m: self.b.ncols(), s, p: n + s }
    }

    fn eval_block(&self, _b: usize, x: &[f64], u: &[f64], z: &[f64], _g: bool) -> Result<BlockEval, ModelError> {
        let (x, u, z) = (DVector::from_column_slice(x), DVector::from_column_slice(u), DVector::from_column_slice(z));
        let f = &self.a * &x + &self.b * &u + &self.f * &z;
        let h = &z - &self.c * &x - &self.d * &u;
        Ok(BlockEval { f: f.as_slice().to_vec(), h: h.as_slice().to_vec() })
    }

    fn output_block(&self, _b: usize, x: &[f64], _u: &[f64], z: &[f64]) -> Result<Vec<f64>, ModelError> {
        Ok(x.iter().chain(z).copied().collect())
    }

    fn jacobians_block(&self, _b: usize, _x: &[f64], _u: &[f64], _z: &[f64], _g: bool) -> Result<JacobianBlocks, ModelError> {
        let d = self.dims();
        let mut j = JacobianBlocks::zeros(d.n, d.m, d.s, d.p);
        j.fx.copy_from(&self.a);
        j.fu.copy_from(&self.b);
        j.fz.copy_from(&self.f);
        j.hx.copy_from(&(-&self.c));
        j.hz.fill_with_identity();
        j.hu.copy_from(&(-&self.d));
        j.gx.view_mut((0, 0), (d.n, d.n)).fill_with_identity();
        j.gz.view_mut((d.n, 0), (d.s, d.s)).fill_with_identity();
        Ok(j)
    }
}

/// Matrix exponential by scaling and squaring with a Taylor series.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let norm = a.iter().fold(0.0_f64, |m, v| m.max(v.abs())) * a.nrows() as f64;
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
    let scaled = a / 2f64.powi(squarings as i32);
    let n = a.nrows();
    let mut term = DMatrix::identity(n, n);
    let mut sum = DMatrix::identity(n, n);
    for k in 1..30 {
        term = &term * &scaled / k as f64;
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// `(e^{A t}, int_0^t e^{A s} ds · B)` via the augmented exponential.
pub fn zoh(a: &DMatrix<f64>, b: &DMatrix<f64>, t: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, m) = (a.nrows(), b.ncols());
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * t));
    aug.view_mut((0, n), (n, m)).copy_from(&(b * t));
    let e = expm(&aug);
    (e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, m)).into_owned())
}
