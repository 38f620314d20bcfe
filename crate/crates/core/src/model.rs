//! Plant, watermark and controller data types and the closed-loop assembly.
//!
//! Plant: `x⁺ = A x + B (u + Δu) + D w`, `y = C x + v`, with `w ~ N(0, W)`,
//! `v ~ N(0, V)` and the watermark `Δu ~ N(0, U)`. A full-order dynamic
//! controller `x_c⁺ = A_c x_c + B_c y`, `u = C_c x_c` closes the loop.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::matrix as mjson;
use crate::linalg;

const SYM_TOL: f64 = 1e-9;

/// Discrete-time LTI plant with Gaussian process and measurement noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantModel {
    #[serde(with = "mjson")]
    pub a: DMatrix<f64>,
    #[serde(with = "mjson")]
    pub b: DMatrix<f64>,
    #[serde(with = "mjson")]
    pub c: DMatrix<f64>,
    #[serde(with = "mjson")]
    pub d: DMatrix<f64>,
    #[serde(with = "mjson")]
    pub w: DMatrix<f64>,
    #[serde(with = "mjson")]
    pub v: DMatrix<f64>,
}

fn check_shape(name: &str, m: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(Error::dim(format!("{name} is {}x{}, expected {rows}x{cols}", m.nrows(), m.ncols())));
    }
    Ok(())
}

fn check_psd(name: &str, m: &DMatrix<f64>, strict: bool) -> Result<()> {
    let scale = linalg::max_abs(m).max(1.0);
    if linalg::asymmetry(m) > SYM_TOL * scale {
        return Err(Error::invalid(format!("{name} is not symmetric")));
    }
    if m.nrows() == 0 {
        return Ok(());
    }
    let lo = linalg::min_eigenvalue(m);
    if strict && lo <= 0.0 {
        return Err(Error::invalid(format!("{name} must be positive definite (min eigenvalue {lo:.3e})")));
    }
    if !strict && lo < -SYM_TOL * scale {
        return Err(Error::invalid(format!("{name} must be positive semidefinite (min eigenvalue {lo:.3e})")));
    }
    Ok(())
}

impl PlantModel {
    /// Validates shapes and noise covariances (W ⪰ 0, V ≻ 0).
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        w: DMatrix<f64>,
        v: DMatrix<f64>,
    ) -> Result<Self> {
        let plant = PlantModel { a, b, c, d, w, v };
        plant.validate()?;
        Ok(plant)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        if n == 0 {
            return Err(Error::dim("plant has no states"));
        }
        check_shape("A", &self.a, n, n)?;
        check_shape("B", &self.b, n, self.b.ncols())?;
        check_shape("C", &self.c, self.c.nrows(), n)?;
        check_shape("D", &self.d, n, self.d.ncols())?;
        check_shape("W", &self.w, self.d.ncols(), self.d.ncols())?;
        check_shape("V", &self.v, self.c.nrows(), self.c.nrows())?;
        if self.b.ncols() == 0 || self.c.nrows() == 0 {
            return Err(Error::dim("plant needs at least one input and one output"));
        }
        for (name, m) in [("A", &self.a), ("B", &self.b), ("C", &self.c), ("D", &self.d)] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("{name} has non-finite entries")));
            }
        }
        check_psd("W", &self.w, false)?;
        check_psd("V", &self.v, true)?;
        Ok(())
    }

    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }
    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }
    pub fn n_y(&self) -> usize {
        self.c.nrows()
    }
    pub fn n_w(&self) -> usize {
        self.d.ncols()
    }

    /// Default regularizer ε = 1e-8 · max(1, trace(W)/n_w).
    pub fn default_epsilon(&self) -> f64 {
        1e-8 * (self.w.trace() / self.n_w() as f64).max(1.0)
    }

    /// Three-tank benchmark used throughout the examples.
    pub fn three_tank() -> Self {
        let a = DMatrix::from_row_slice(3, 3, &[0.96, 0.0, 0.0, 0.04, 0.97, 0.0, -0.04, 0.0, 0.9]);
        let b = DMatrix::from_row_slice(
            3,
            4,
            &[
                8.8, -2.3, 0.0, 0.0, //
                0.2, 2.2, 4.9, 0.0, //
                -0.21, -2.2, 1.9, 21.0,
            ],
        );
        let i3 = DMatrix::identity(3, 3);
        PlantModel { a, b, c: i3.clone(), d: i3.clone(), w: &i3 * 1e-3, v: &i3 * 1e-3 }
    }
}

/// Gaussian watermark covariance `U ⪰ 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WatermarkSpec {
    #[serde(with = "mjson")]
    pub u: DMatrix<f64>,
}

impl WatermarkSpec {
    pub fn new(u: DMatrix<f64>) -> Result<Self> {
        if !u.is_square() {
            return Err(Error::dim("watermark covariance must be square"));
        }
        check_psd("U", &u, false)?;
        Ok(WatermarkSpec { u: linalg::symmetrize(&u) })
    }

    /// `scale · I` of size `n_u`.
    pub fn scaled_identity(n_u: usize, scale: f64) -> Result<Self> {
        Self::new(DMatrix::identity(n_u, n_u) * scale)
    }

    pub fn diagonal(values: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(values)))
    }

    pub fn n_u(&self) -> usize {
        self.u.nrows()
    }

    /// Γ = U⁻¹ when U is positive definite.
    pub fn gamma(&self) -> Result<DMatrix<f64>> {
        linalg::inv_pd(&self.u).map_err(|_| Error::invalid("U is singular; Γ = U⁻¹ undefined"))
    }

    pub fn check_against(&self, plant: &PlantModel) -> Result<()> {
        if self.n_u() != plant.n_u() {
            return Err(Error::dim(format!(
                "watermark is {}x{}, plant has {} inputs",
                self.n_u(),
                self.n_u(),
                plant.n_u()
            )));
        }
        Ok(())
    }
}

/// Full-order dynamic output-feedback controller (no direct feedthrough).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicController {
    #[serde(with = "mjson")]
    pub a_c: DMatrix<f64>,
    #[serde(with = "mjson")]
    pub b_c: DMatrix<f64>,
    #[serde(with = "mjson")]
    pub c_c: DMatrix<f64>,
}

impl DynamicController {
    pub fn new(a_c: DMatrix<f64>, b_c: DMatrix<f64>, c_c: DMatrix<f64>) -> Result<Self> {
        let n = a_c.nrows();
        check_shape("A_c", &a_c, n, n)?;
        check_shape("B_c", &b_c, n, b_c.ncols())?;
        check_shape("C_c", &c_c, c_c.nrows(), n)?;
        Ok(DynamicController { a_c, b_c, c_c })
    }

    pub fn check_against(&self, plant: &PlantModel) -> Result<()> {
        let n = plant.n_x();
        check_shape("A_c", &self.a_c, n, n)?;
        check_shape("B_c", &self.b_c, n, plant.n_y())?;
        check_shape("C_c", &self.c_c, plant.n_u(), n)?;
        Ok(())
    }
}

/// Closed loop `z⁺ = 𝔸 z + 𝔹 ζ`, `y = ℂ z + 𝔻 ζ` with `z = [x; x_c]`,
/// `ζ = [Δu; w; v] ~ N(0, 𝕎)`.
#[derive(Clone, Debug)]
pub struct ClosedLoopSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub noise: DMatrix<f64>,
}

pub fn build_closed_loop(plant: &PlantModel, ctrl: &DynamicController, wm: &WatermarkSpec) -> Result<ClosedLoopSystem> {
    ctrl.check_against(plant)?;
    wm.check_against(plant)?;
    let (n, nu, ny, nw) = (plant.n_x(), plant.n_u(), plant.n_y(), plant.n_w());
    let z = |r, c| DMatrix::<f64>::zeros(r, c);
    let a =
        linalg::assemble(&[vec![plant.a.clone(), &plant.b * &ctrl.c_c], vec![&ctrl.b_c * &plant.c, ctrl.a_c.clone()]])?;
    let b = linalg::assemble(&[
        vec![plant.b.clone(), plant.d.clone(), z(n, ny)],
        vec![z(n, nu), z(n, nw), ctrl.b_c.clone()],
    ])?;
    let c = linalg::assemble(&[vec![plant.c.clone(), z(ny, n)]])?;
    let d = linalg::assemble(&[vec![z(ny, nu), z(ny, nw), DMatrix::identity(ny, ny)]])?;
    let noise = linalg::block_diag(&[&wm.u, &plant.w, &plant.v]);
    Ok(ClosedLoopSystem { a, b, c, d, noise })
}

impl ClosedLoopSystem {
    pub fn spectral_radius(&self) -> f64 {
        linalg::spectral_radius(&self.a)
    }

    /// Stationary state covariance 𝕏 = 𝔸 𝕏 𝔸ᵀ + 𝔹 𝕎 𝔹ᵀ.
    pub fn state_covariance(&self) -> Result<DMatrix<f64>> {
        let q = &self.b * &self.noise * self.b.transpose();
        linalg::dlyap(&self.a, &linalg::symmetrize(&q))
    }

    /// Stationary output covariance ℂ 𝕏 ℂᵀ + 𝔻 𝕎 𝔻ᵀ.
    pub fn output_covariance(&self) -> Result<DMatrix<f64>> {
        let x = self.state_covariance()?;
        Ok(linalg::symmetrize(&(&self.c * x * self.c.transpose() + &self.d * &self.noise * self.d.transpose())))
    }

    /// H2 performance: trace of the stationary output covariance.
    pub fn h2_cost(&self) -> Result<f64> {
        Ok(self.output_covariance()?.trace())
    }
}

/// Regularized noise covariance Diag{U, W, ε I} used for estimator design.
pub fn regularized_noise(wm: &WatermarkSpec, plant: &PlantModel, eps: f64) -> DMatrix<f64> {
    let e = DMatrix::identity(plant.n_y(), plant.n_y()) * eps;
    linalg::block_diag(&[&wm.u, &plant.w, &e])
}

pub use crate::linalg::spectral_radius;
