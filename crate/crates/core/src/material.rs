//! Blueprinted director field, order parameters and the membrane stretching
//! energy density.
//!
//! The density is `W(F) = |L_n^{-1/2} [F, b] L_m^{1/2}|² − 3` for a deformation
//! gradient `F ∈ R^{3×2}`, with the frozen director `n = Fm/|Fm|` and the
//! scaled normal `b = (F₁ × F₂)/J`, `J = det(FᵀF)`. Expanding the step-length
//! tensors shows that `W` depends on `F` only through `C = FᵀF`:
//!
//! ```text
//! W = λ (tr C + 1/det C + s₀(1−β) m·Cm − β |Cm|²/(m·Cm)) − 3,   β = s/(s+1)
//! ```
//!
//! [`StretchDensity`] evaluates this form and its first and second
//! derivatives in closed form; [`density_w_trace`] evaluates the literal
//! tensor product and serves as the independent route.

use nalgebra::{Matrix2, Matrix3, Matrix3x2, Matrix6, Vector2, Vector3};

use crate::error::{Error, Result};

/// Degeneracy floor for `J = det(FᵀF)`.
pub const J_FLOOR: f64 = 1e-10;

/// Tolerance on the unit length of a director.
const UNIT_TOL: f64 = 1e-12;

fn check_order(value: f64, name: &str) -> Result<()> {
    if value.is_finite() && value > -1.0 {
        Ok(())
    } else {
        Err(Error::InvalidMaterial(format!("{name} = {value} must exceed -1")))
    }
}

fn check_unit(m: &Vector2<f64>) -> Result<()> {
    let norm = m.norm();
    if (norm - 1.0).abs() <= UNIT_TOL {
        Ok(())
    } else {
        Err(Error::InvalidMaterial(format!("director has length {norm}")))
    }
}

/// Actuation parameter `λ = ((s+1)/(s₀+1))^{1/3}`.
pub fn actuation(s: f64, s0: f64) -> Result<f64> {
    check_order(s, "s")?;
    check_order(s0, "s0")?;
    Ok(((s + 1.0) / (s0 + 1.0)).cbrt())
}

/// Target metric `g = λ² m⊗m + λ⁻¹ m⊥⊗m⊥`.
pub fn target_metric(m: &Vector2<f64>, lambda: f64) -> Matrix2<f64> {
    let perp = Vector2::new(-m.y, m.x);
    m * m.transpose() * (lambda * lambda) + perp * perp.transpose() / lambda
}

/// `L_m^{1/2} = (s₀+1)^{1/3} m̂⊗m̂ + (s₀+1)^{-1/6} (I − m̂⊗m̂)` with `m̂ = (m, 0)`.
pub fn step_tensor_m_sqrt(m: &Vector2<f64>, s0: f64) -> Result<Matrix3<f64>> {
    check_unit(m)?;
    check_order(s0, "s0")?;
    let mhat = Vector3::new(m.x, m.y, 0.0);
    let proj = mhat * mhat.transpose();
    let k = s0 + 1.0;
    Ok(proj * k.cbrt() + (Matrix3::identity() - proj) * k.powf(-1.0 / 6.0))
}

/// `L_n^{-1/2} = (s+1)^{-1/3} n⊗n + (s+1)^{1/6} (I − n⊗n)`.
pub fn step_tensor_n_inv_sqrt(n: &Vector3<f64>, s: f64) -> Result<Matrix3<f64>> {
    let norm = n.norm();
    if (norm - 1.0).abs() > UNIT_TOL {
        return Err(Error::InvalidMaterial(format!("deformed director has length {norm}")));
    }
    check_order(s, "s")?;
    let proj = n * n.transpose();
    let k = s + 1.0;
    Ok(proj / k.cbrt() + (Matrix3::identity() - proj) * k.powf(1.0 / 6.0))
}

/// Deformed director, metric determinant and scaled normal of a 3×2 gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameQuantities {
    pub n: Vector3<f64>,
    pub j: f64,
    pub b: Vector3<f64>,
}

pub fn frame(f: &Matrix3x2<f64>, m: &Vector2<f64>) -> Result<FrameQuantities> {
    let j = (f.transpose() * f).determinant();
    if !(j >= J_FLOOR) {
        return Err(Error::DegenerateElement { element: None, j });
    }
    let fm = f * m;
    let len = fm.norm();
    if !(len > 0.0) {
        return Err(Error::DegenerateElement { element: None, j });
    }
    let f1 = f.column(0).into_owned();
    let f2 = f.column(1).into_owned();
    Ok(FrameQuantities {
        n: fm / len,
        j,
        b: f1.cross(&f2) / j,
    })
}

/// Material data at one point (element barycenter).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementMaterial {
    pub director: Vector2<f64>,
    pub s: f64,
    pub s0: f64,
}

impl ElementMaterial {
    pub fn new(director: Vector2<f64>, s: f64, s0: f64) -> Result<Self> {
        check_unit(&director)?;
        check_order(s, "s")?;
        check_order(s0, "s0")?;
        Ok(ElementMaterial { director, s, s0 })
    }

    pub fn lambda(&self) -> f64 {
        ((self.s + 1.0) / (self.s0 + 1.0)).cbrt()
    }

    pub fn target_metric(&self) -> Matrix2<f64> {
        target_metric(&self.director, self.lambda())
    }

    /// `λ_min(L_m) / λ_max(L_n)`, the coercivity constant of the density.
    pub fn coercivity_constant(&self) -> f64 {
        let (k0, k) = (self.s0 + 1.0, self.s + 1.0);
        let lm_min = k0.powf(2.0 / 3.0).min(k0.powf(-1.0 / 3.0));
        let ln_max = k.powf(2.0 / 3.0).max(k.powf(-1.0 / 3.0));
        lm_min / ln_max
    }
}

/// Per-element fields: director `m`, order parameters `s`, `s₀` and the
/// regularization weight `c_r`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialField {
    directors: Vec<Vector2<f64>>,
    s: Vec<f64>,
    s0: Vec<f64>,
    c_r: Vec<f64>,
}

impl MaterialField {
    pub fn new(directors: Vec<Vector2<f64>>, s: Vec<f64>, s0: Vec<f64>, c_r: Vec<f64>) -> Result<Self> {
        let n = directors.len();
        if s.len() != n || s0.len() != n || c_r.len() != n {
            return Err(Error::InvalidMaterial("field lengths differ".into()));
        }
        for t in 0..n {
            check_unit(&directors[t])
                .and_then(|_| check_order(s[t], "s"))
                .and_then(|_| check_order(s0[t], "s0"))
                .map_err(|e| Error::InvalidMaterial(format!("element {t}: {e}")))?;
            if !(c_r[t].is_finite() && c_r[t] >= 0.0) {
                return Err(Error::InvalidMaterial(format!(
                    "element {t}: regularization weight {} is negative",
                    c_r[t]
                )));
            }
        }
        Ok(MaterialField { directors, s, s0, c_r })
    }

    /// The same material on `n` elements.
    pub fn uniform(n: usize, director: Vector2<f64>, s: f64, s0: f64, c_r: f64) -> Result<Self> {
        MaterialField::new(vec![director; n], vec![s; n], vec![s0; n], vec![c_r; n])
    }

    pub fn len(&self) -> usize {
        self.directors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directors.is_empty()
    }

    pub fn element(&self, t: usize) -> ElementMaterial {
        ElementMaterial {
            director: self.directors[t],
            s: self.s[t],
            s0: self.s0[t],
        }
    }

    pub fn c_r(&self, t: usize) -> f64 {
        self.c_r[t]
    }

    pub fn regularization_weights(&self) -> &[f64] {
        &self.c_r
    }

    pub fn actuation(&self) -> ActuationData {
        let (lambda, metric) = (0..self.len())
            .map(|t| {
                let e = self.element(t);
                (e.lambda(), e.target_metric())
            })
            .unzip();
        ActuationData { lambda, metric }
    }
}

/// Actuation parameter and target metric per element.
#[derive(Debug, Clone, PartialEq)]
pub struct ActuationData {
    pub lambda: Vec<f64>,
    pub metric: Vec<Matrix2<f64>>,
}

/// Value, gradient and Hessian of the density with respect to the
/// independent metric entries `(C₁₁, C₁₂, C₂₂)`.
struct MetricDerivatives {
    value: f64,
    grad: [f64; 3],
    hess: [[f64; 3]; 3],
}

/// Stretching energy density of one element, with precomputed constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StretchDensity {
    m: [f64; 2],
    s0: f64,
    lambda: f64,
    beta: f64,
}

impl StretchDensity {
    pub fn new(material: &ElementMaterial) -> Self {
        StretchDensity {
            m: [material.director.x, material.director.y],
            s0: material.s0,
            lambda: material.lambda(),
            beta: material.s / (material.s + 1.0),
        }
    }

    fn metric_terms(&self, c: [f64; 3], order: usize) -> Result<MetricDerivatives> {
        let [a, b, d] = c;
        let [m1, m2] = self.m;
        let (lambda, beta, s0) = (self.lambda, self.beta, self.s0);

        let j = a * d - b * b;
        if !(j >= J_FLOOR) {
            return Err(Error::DegenerateElement { element: None, j });
        }
        let p = a * m1 * m1 + 2.0 * b * m1 * m2 + d * m2 * m2;
        if !(p > 0.0) {
            return Err(Error::DegenerateElement { element: None, j });
        }
        let u = a * m1 + b * m2;
        let v = b * m1 + d * m2;
        let q = u * u + v * v;
        let value = lambda * (a + d + 1.0 / j + s0 * (1.0 - beta) * p - beta * q / p) - 3.0;

        let mut out = MetricDerivatives {
            value,
            grad: [0.0; 3],
            hess: [[0.0; 3]; 3],
        };
        if order == 0 {
            return Ok(out);
        }

        let gj = [d, -2.0 * b, a];
        let gp = [m1 * m1, 2.0 * m1 * m2, m2 * m2];
        let gu = [m1, m2, 0.0];
        let gv = [0.0, m1, m2];
        let mut gq = [0.0; 3];
        for k in 0..3 {
            gq[k] = 2.0 * (u * gu[k] + v * gv[k]);
        }
        let (j2, p2) = (j * j, p * p);
        for k in 0..3 {
            let trace = if k == 1 { 0.0 } else { 1.0 };
            let inv_j = -gj[k] / j2;
            let ratio = gq[k] / p - q * gp[k] / p2;
            out.grad[k] = lambda * (trace + inv_j + s0 * (1.0 - beta) * gp[k] - beta * ratio);
        }
        if order == 1 {
            return Ok(out);
        }

        let mut hj = [[0.0; 3]; 3];
        hj[0][2] = 1.0;
        hj[2][0] = 1.0;
        hj[1][1] = -2.0;
        let (j3, p3) = (j2 * j, p2 * p);
        for k in 0..3 {
            for l in 0..3 {
                let inv_j = 2.0 * gj[k] * gj[l] / j3 - hj[k][l] / j2;
                let hq = 2.0 * (gu[k] * gu[l] + gv[k] * gv[l]);
                let ratio = hq / p - (gq[k] * gp[l] + gp[k] * gq[l]) / p2 + 2.0 * q * gp[k] * gp[l] / p3;
                out.hess[k][l] = lambda * (inv_j - beta * ratio);
            }
        }
        Ok(out)
    }

    fn metric_of(f: &Matrix3x2<f64>) -> [f64; 3] {
        let f1 = f.column(0);
        let f2 = f.column(1);
        [f1.dot(&f1), f1.dot(&f2), f2.dot(&f2)]
    }

    pub fn value(&self, f: &Matrix3x2<f64>) -> Result<f64> {
        Ok(self.metric_terms(Self::metric_of(f), 0)?.value)
    }

    pub fn value_gradient(&self, f: &Matrix3x2<f64>) -> Result<(f64, Matrix3x2<f64>)> {
        let t = self.metric_terms(Self::metric_of(f), 1)?;
        Ok((t.value, Self::chain_gradient(f, &t.grad)))
    }

    fn chain_gradient(f: &Matrix3x2<f64>, g: &[f64; 3]) -> Matrix3x2<f64> {
        let f1 = f.column(0);
        let f2 = f.column(1);
        let mut out = Matrix3x2::zeros();
        out.set_column(0, &(f1 * (2.0 * g[0]) + f2 * g[1]));
        out.set_column(1, &(f1 * g[1] + f2 * (2.0 * g[2])));
        out
    }

    /// Value, gradient and Hessian. The Hessian acts on `vec(F)` in
    /// column-major order: index `3·α + i` is entry `F[i][α]`.
    pub fn value_gradient_hessian(&self, f: &Matrix3x2<f64>) -> Result<(f64, Matrix3x2<f64>, Matrix6<f64>)> {
        let t = self.metric_terms(Self::metric_of(f), 2)?;
        let grad = Self::chain_gradient(f, &t.grad);

        // Jacobian of (C₁₁, C₁₂, C₂₂) with respect to vec(F).
        let mut jac = [[0.0; 6]; 3];
        for i in 0..3 {
            jac[0][i] = 2.0 * f[(i, 0)];
            jac[1][i] = f[(i, 1)];
            jac[1][3 + i] = f[(i, 0)];
            jac[2][3 + i] = 2.0 * f[(i, 1)];
        }
        let mut hess = Matrix6::zeros();
        for r in 0..6 {
            for c in 0..6 {
                let mut acc = 0.0;
                for k in 0..3 {
                    for l in 0..3 {
                        acc += jac[k][r] * t.hess[k][l] * jac[l][c];
                    }
                }
                hess[(r, c)] = acc;
            }
        }
        for i in 0..3 {
            hess[(i, i)] += 2.0 * t.grad[0];
            hess[(3 + i, 3 + i)] += 2.0 * t.grad[2];
            hess[(i, 3 + i)] += t.grad[1];
            hess[(3 + i, i)] += t.grad[1];
        }
        Ok((t.value, grad, hess))
    }
}

/// `W(F)` through the metric invariants.
pub fn density_w(f: &Matrix3x2<f64>, material: &ElementMaterial) -> Result<f64> {
    StretchDensity::new(material).value(f)
}

/// `W(F) = |L_n^{-1/2} [F, b] L_m^{1/2}|² − 3`, evaluated literally.
pub fn density_w_trace(f: &Matrix3x2<f64>, material: &ElementMaterial) -> Result<f64> {
    let fr = frame(f, &material.director)?;
    let ln = step_tensor_n_inv_sqrt(&fr.n, material.s)?;
    let lm = step_tensor_m_sqrt(&material.director, material.s0)?;
    let full = Matrix3::from_columns(&[f.column(0).into_owned(), f.column(1).into_owned(), fr.b]);
    Ok((ln * full * lm).norm_squared() - 3.0)
}

/// `∂W/∂F`.
pub fn density_grad(f: &Matrix3x2<f64>, material: &ElementMaterial) -> Result<Matrix3x2<f64>> {
    Ok(StretchDensity::new(material).value_gradient(f)?.1)
}

/// `∂²W/∂F²` on `vec(F)` (column-major).
pub fn density_hess(f: &Matrix3x2<f64>, material: &ElementMaterial) -> Result<Matrix6<f64>> {
    Ok(StretchDensity::new(material).value_gradient_hessian(f)?.2)
}
