//! Coefficient data for the convection–diffusion–reaction problem
//! `−div(K ∇u) + b · ∇u + c u = f + div f_vec` with homogeneous Dirichlet
//! boundary conditions.

use super::FespaceError;

type MatrixField = Box<dyn Fn(usize, [f64; 2]) -> [[f64; 2]; 2] + Send + Sync>;
type VectorField = Box<dyn Fn(usize, [f64; 2]) -> [f64; 2] + Send + Sync>;
type ScalarField = Box<dyn Fn(usize, [f64; 2]) -> f64 + Send + Sync>;

/// Piecewise-smooth coefficient fields, evaluable per element at physical
/// points (the element index selects the smoothness piece).
///
/// Invariants enforced where decidable: `K` must be symmetric with smallest
/// eigenvalue at least `k_min > 0` (declared by the caller, spot-checked at
/// every quadrature point during assembly), and constant-coefficient data must
/// satisfy `−div b + 2c = 2c ≥ 0` so the bilinear form stays coercive.
pub struct PdeData {
    pub(crate) k: MatrixField,
    pub(crate) b: VectorField,
    pub(crate) c: ScalarField,
    pub(crate) f: ScalarField,
    pub(crate) fvec: VectorField,
    /// Row divergence of `K` (zero for piecewise-constant diffusion).
    pub(crate) div_k: Option<VectorField>,
    /// Divergence of `fvec` (zero for piecewise-constant sources).
    pub(crate) div_fvec: Option<ScalarField>,
    pub(crate) k_min: f64,
}

impl std::fmt::Debug for PdeData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PdeData").field("k_min", &self.k_min).finish()
    }
}

impl PdeData {
    /// Constant-coefficient data. Validates `K` symmetric positive definite
    /// and `2c ≥ 0` (for constant convection `div b = 0`, so this is the full
    /// coercivity condition); `k_min` is the smaller eigenvalue of `K`.
    pub fn constant(
        k: [[f64; 2]; 2],
        b: [f64; 2],
        c: f64,
        f: f64,
    ) -> Result<Self, FespaceError> {
        if (k[0][1] - k[1][0]).abs() > 1e-14 * matrix_scale(&k) {
            return Err(FespaceError::CoefficientViolation(
                "K must be symmetric".into(),
            ));
        }
        let k_min = symmetric_eigmin(&k);
        if k_min <= 0.0 {
            return Err(FespaceError::CoefficientViolation(format!(
                "K must be positive definite (smallest eigenvalue {k_min})"
            )));
        }
        if 2.0 * c < 0.0 {
            return Err(FespaceError::CoefficientViolation(format!(
                "constant data needs -div b + 2c = 2c >= 0, got c = {c}"
            )));
        }
        Ok(Self {
            k: Box::new(move |_, _| k),
            b: Box::new(move |_, _| b),
            c: Box::new(move |_, _| c),
            f: Box::new(move |_, _| f),
            fvec: Box::new(|_, _| [0.0, 0.0]),
            div_k: Some(Box::new(|_, _| [0.0, 0.0])),
            div_fvec: Some(Box::new(|_, _| 0.0)),
            k_min,
        })
    }

    /// The benchmark data: `K = I`, `b = (1, 25)`, `c = 0`, `f = 1`.
    pub fn benchmark() -> Self {
        Self::constant([[1.0, 0.0], [0.0, 1.0]], [1.0, 25.0], 0.0, 1.0)
            .expect("benchmark data is valid")
    }

    /// Pure diffusion with `K = I` and source `f`.
    pub fn poisson(f: f64) -> Self {
        Self::constant([[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0], 0.0, f)
            .expect("Poisson data is valid")
    }

    /// Fully general data from callbacks. `k_min` is the caller's lower bound
    /// on the eigenvalues of `K`; it is spot-checked at assembly quadrature
    /// points. Divergence callbacks may be omitted when the respective fields
    /// are piecewise constant (they then default to zero in the estimator).
    #[allow(clippy::too_many_arguments)]
    pub fn from_callbacks(
        k: MatrixField,
        b: VectorField,
        c: ScalarField,
        f: ScalarField,
        fvec: VectorField,
        div_k: Option<VectorField>,
        div_fvec: Option<ScalarField>,
        k_min: f64,
    ) -> Result<Self, FespaceError> {
        if k_min <= 0.0 {
            return Err(FespaceError::CoefficientViolation(
                "declared k_min must be positive".into(),
            ));
        }
        Ok(Self {
            k,
            b,
            c,
            f,
            fvec,
            div_k,
            div_fvec,
            k_min,
        })
    }

    /// Replaces the scalar source, keeping everything else.
    pub fn with_source(mut self, f: ScalarField, fvec: VectorField) -> Self {
        self.f = f;
        self.fvec = fvec;
        self
    }

    pub fn k(&self, element: usize, x: [f64; 2]) -> [[f64; 2]; 2] {
        (self.k)(element, x)
    }

    pub fn b(&self, element: usize, x: [f64; 2]) -> [f64; 2] {
        (self.b)(element, x)
    }

    pub fn c(&self, element: usize, x: [f64; 2]) -> f64 {
        (self.c)(element, x)
    }

    pub fn f(&self, element: usize, x: [f64; 2]) -> f64 {
        (self.f)(element, x)
    }

    pub fn fvec(&self, element: usize, x: [f64; 2]) -> [f64; 2] {
        (self.fvec)(element, x)
    }

    pub fn div_k(&self, element: usize, x: [f64; 2]) -> [f64; 2] {
        self.div_k.as_ref().map_or([0.0, 0.0], |g| g(element, x))
    }

    pub fn div_fvec(&self, element: usize, x: [f64; 2]) -> f64 {
        self.div_fvec.as_ref().map_or(0.0, |g| g(element, x))
    }

    pub fn k_min(&self) -> f64 {
        self.k_min
    }

    /// Checks symmetry and the declared ellipticity bound of `K` at one point;
    /// assembly calls this at every quadrature point.
    pub(crate) fn check_k_at(&self, element: usize, x: [f64; 2]) -> Result<(), FespaceError> {
        let k = self.k(element, x);
        let scale = matrix_scale(&k);
        if (k[0][1] - k[1][0]).abs() > 1e-12 * scale {
            return Err(FespaceError::CoefficientViolation(format!(
                "K not symmetric at element {element}, point ({}, {})",
                x[0], x[1]
            )));
        }
        let eigmin = symmetric_eigmin(&k);
        if eigmin < self.k_min * (1.0 - 1e-12) {
            return Err(FespaceError::CoefficientViolation(format!(
                "K eigenvalue {eigmin} below declared k_min {} at element {element}",
                self.k_min
            )));
        }
        Ok(())
    }
}

fn matrix_scale(k: &[[f64; 2]; 2]) -> f64 {
    k.iter()
        .flatten()
        .fold(f64::MIN_POSITIVE, |m, v| m.max(v.abs()))
}

/// Smaller eigenvalue of a symmetric 2x2 matrix.
fn symmetric_eigmin(k: &[[f64; 2]; 2]) -> f64 {
    let half_trace = 0.5 * (k[0][0] + k[1][1]);
    let det = k[0][0] * k[1][1] - k[0][1] * k[1][0];
    let disc = (half_trace * half_trace - det).max(0.0).sqrt();
    half_trace - disc
}
