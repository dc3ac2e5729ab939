//! P1 discretization of the regularized membrane energy.
//!
//! `E_h[y] = Σ_T |T| W(∇y|_T) + Σ_e c_r,e h |e| |[∇y]_e|²`, where the edge
//! sum runs over interior edges (crease edges excluded when requested),
//! `h` is the global mesh size and `c_r,e` the smaller weight of the two
//! adjacent elements. Degrees of freedom are node-major: `3·node + component`.

use std::sync::Arc;

use nalgebra::{Matrix2, Matrix3x2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::material::{MaterialField, StretchDensity};
use crate::mesh::{Point2, TriMesh};
use crate::sparse::{SymPattern, SymSparse};

/// Nodal values of a continuous piecewise linear map into R³.
#[derive(Debug, Clone, PartialEq)]
pub struct Deformation {
    dofs: Vec<f64>,
}

impl Deformation {
    pub fn from_dofs(dofs: Vec<f64>, mesh: &TriMesh) -> Result<Self> {
        if dofs.len() != 3 * mesh.num_vertices() {
            return Err(Error::InvalidArgument(format!(
                "deformation has {} dofs, mesh needs {}",
                dofs.len(),
                3 * mesh.num_vertices()
            )));
        }
        Ok(Deformation { dofs })
    }

    /// The flat embedding `(x₁, x₂, 0)`.
    pub fn identity(mesh: &TriMesh) -> Self {
        let dofs = mesh.vertices().iter().flat_map(|p| [p[0], p[1], 0.0]).collect();
        Deformation { dofs }
    }

    pub fn num_vertices(&self) -> usize {
        self.dofs.len() / 3
    }

    pub fn point(&self, v: usize) -> [f64; 3] {
        [self.dofs[3 * v], self.dofs[3 * v + 1], self.dofs[3 * v + 2]]
    }

    pub fn dofs(&self) -> &[f64] {
        &self.dofs
    }

    pub fn dofs_mut(&mut self) -> &mut [f64] {
        &mut self.dofs
    }

    pub fn into_dofs(self) -> Vec<f64> {
        self.dofs
    }
}

/// The two parts of the discrete energy.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyBreakdown {
    pub stretch: f64,
    pub regularization: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    fn new(stretch: f64, regularization: f64) -> Self {
        EnergyBreakdown {
            stretch,
            regularization,
            total: stretch + regularization,
        }
    }
}

/// The four nodes of the two triangles sharing an interior edge, and the
/// jump `∇φ_k|_right − ∇φ_k|_left` of each node's hat function across it.
#[derive(Debug, Clone, Copy)]
struct EdgeStencil {
    nodes: [usize; 4],
    jumps: [[f64; 2]; 4],
    weight: f64,
}

fn edge_stencils(mesh: &TriMesh, c_r: Option<&[f64]>, crease_aware: bool) -> Vec<EdgeStencil> {
    let h = mesh.h_max();
    mesh.interior_edges()
        .iter()
        .zip(mesh.crease_edges())
        .map(|(edge, &crease)| {
            let (tl, tr) = (mesh.triangles()[edge.left], mesh.triangles()[edge.right]);
            let (gl, gr) = (mesh.basis_gradients(edge.left), mesh.basis_gradients(edge.right));
            let opposite = tr.iter().position(|v| !tl.contains(v)).expect("edge triangles share two vertices");
            let nodes = [tl[0], tl[1], tl[2], tr[opposite]];
            let mut jumps = [[0.0; 2]; 4];
            for (k, &node) in nodes.iter().enumerate() {
                let left = tl.iter().position(|&v| v == node).map_or([0.0; 2], |i| gl[i]);
                let right = tr.iter().position(|&v| v == node).map_or([0.0; 2], |i| gr[i]);
                jumps[k] = [right[0] - left[0], right[1] - left[1]];
            }
            let c = c_r.map_or(0.0, |c| c[edge.left].min(c[edge.right]));
            let weight = if crease_aware && crease { 0.0 } else { c * h * edge.length };
            EdgeStencil { nodes, jumps, weight }
        })
        .collect()
}

/// Node couplings of the stretch term plus those of the stencils with a
/// nonzero weight.
fn pattern_for(mesh: &TriMesh, stencils: &[EdgeStencil]) -> SymPattern {
    let groups = mesh
        .triangles()
        .iter()
        .map(|t| t.as_slice())
        .chain(stencils.iter().filter(|s| s.weight != 0.0).map(|s| s.nodes.as_slice()));
    SymPattern::from_groups(mesh.num_vertices(), groups)
}

fn element_gradient(mesh: &TriMesh, y: &[f64], t: usize) -> Matrix3x2<f64> {
    let tri = mesh.triangles()[t];
    let grads = mesh.basis_gradients(t);
    let mut f = Matrix3x2::zeros();
    for (k, &v) in tri.iter().enumerate() {
        for i in 0..3 {
            f[(i, 0)] += y[3 * v + i] * grads[k][0];
            f[(i, 1)] += y[3 * v + i] * grads[k][1];
        }
    }
    f
}

fn edge_jump(s: &EdgeStencil, y: &[f64]) -> Matrix3x2<f64> {
    let mut j = Matrix3x2::zeros();
    for (k, &v) in s.nodes.iter().enumerate() {
        for i in 0..3 {
            j[(i, 0)] += y[3 * v + i] * s.jumps[k][0];
            j[(i, 1)] += y[3 * v + i] * s.jumps[k][1];
        }
    }
    j
}

/// Element contribution to energy, gradient and Hessian.
struct ElementTerms {
    value: f64,
    grad: [[f64; 3]; 3],
    hess: Option<[[[[f64; 3]; 3]; 3]; 3]>,
}

/// Discrete energy of one problem: mesh, frozen material data and the
/// precomputed regularization operator.
#[derive(Debug, Clone)]
pub struct FemProblem {
    mesh: Arc<TriMesh>,
    densities: Vec<StretchDensity>,
    metrics: Vec<Matrix2<f64>>,
    stencils: Vec<EdgeStencil>,
    pattern: Arc<SymPattern>,
    regularization_hessian: SymSparse,
    parallel: bool,
}

impl FemProblem {
    pub fn new(mesh: Arc<TriMesh>, material: &MaterialField, crease_aware: bool) -> Result<Self> {
        if material.len() != mesh.num_triangles() {
            return Err(Error::InvalidMaterial(format!(
                "material has {} elements, mesh has {}",
                material.len(),
                mesh.num_triangles()
            )));
        }
        let densities = (0..material.len())
            .map(|t| StretchDensity::new(&material.element(t)))
            .collect();
        let metrics = material.actuation().metric;
        let stencils = edge_stencils(&mesh, Some(material.regularization_weights()), crease_aware);
        let pattern = Arc::new(pattern_for(&mesh, &stencils));

        // R_h is the quadratic form Σ_e w_e |Σ_k y_k ⊗ d_k|²; its Hessian is
        // 2 w_e (d_k·d_l) I₃ on block (k, l).
        let mut regularization_hessian = SymSparse::zeros(pattern.clone());
        for s in stencils.iter().filter(|s| s.weight != 0.0) {
            for (a, &k) in s.nodes.iter().enumerate() {
                for (b, &l) in s.nodes.iter().enumerate() {
                    let dot = s.jumps[a][0] * s.jumps[b][0] + s.jumps[a][1] * s.jumps[b][1];
                    regularization_hessian.add_scaled_identity(k, l, 2.0 * s.weight * dot);
                }
            }
        }
        Ok(FemProblem {
            mesh,
            densities,
            metrics,
            stencils,
            pattern,
            regularization_hessian,
            parallel: true,
        })
    }

    /// Enables or disables parallel element evaluation. Results are
    /// identical either way: contributions are always scattered in order.
    pub fn with_parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    pub fn mesh(&self) -> &Arc<TriMesh> {
        &self.mesh
    }

    pub fn pattern(&self) -> &Arc<SymPattern> {
        &self.pattern
    }

    pub fn num_dofs(&self) -> usize {
        3 * self.mesh.num_vertices()
    }

    pub fn target_metrics(&self) -> &[Matrix2<f64>] {
        &self.metrics
    }

    fn check(&self, y: &Deformation) -> Result<()> {
        if y.dofs.len() != self.num_dofs() {
            return Err(Error::InvalidArgument(format!(
                "deformation has {} dofs, problem has {}",
                y.dofs.len(),
                self.num_dofs()
            )));
        }
        Ok(())
    }

    fn map_elements<T: Send>(&self, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
        let n = self.mesh.num_triangles();
        if self.parallel {
            (0..n).into_par_iter().map(f).collect()
        } else {
            (0..n).map(f).collect()
        }
    }

    fn element_terms(&self, y: &[f64], t: usize, order: usize) -> Result<ElementTerms> {
        let f = element_gradient(&self.mesh, y, t);
        let area = self.mesh.area(t);
        let grads = self.mesh.basis_gradients(t);
        let degenerate = |e: Error| match e {
            Error::DegenerateElement { j, .. } => Error::DegenerateElement { element: Some(t), j },
            other => other,
        };
        let density = &self.densities[t];
        let (value, g, h) = match order {
            0 => (density.value(&f).map_err(degenerate)?, None, None),
            1 => {
                let (w, g) = density.value_gradient(&f).map_err(degenerate)?;
                (w, Some(g), None)
            }
            _ => {
                let (w, g, h) = density.value_gradient_hessian(&f).map_err(degenerate)?;
                (w, Some(g), Some(h))
            }
        };
        let mut grad = [[0.0; 3]; 3];
        if let Some(g) = g {
            for (k, gk) in grads.iter().enumerate() {
                for i in 0..3 {
                    grad[k][i] = area * (g[(i, 0)] * gk[0] + g[(i, 1)] * gk[1]);
                }
            }
        }
        let hess = h.map(|h| {
            let mut blocks = [[[[0.0; 3]; 3]; 3]; 3];
            for (k, gk) in grads.iter().enumerate() {
                for (l, gl) in grads.iter().enumerate() {
                    for i in 0..3 {
                        for j in 0..3 {
                            let mut acc = 0.0;
                            for a in 0..2 {
                                for b in 0..2 {
                                    acc += h[(3 * a + i, 3 * b + j)] * gk[a] * gl[b];
                                }
                            }
                            blocks[k][l][i][j] = area * acc;
                        }
                    }
                }
            }
            blocks
        });
        Ok(ElementTerms {
            value: area * value,
            grad,
            hess,
        })
    }

    fn collect_terms(&self, y: &Deformation, order: usize) -> Result<Vec<ElementTerms>> {
        self.check(y)?;
        let dofs = &y.dofs;
        self.map_elements(|t| self.element_terms(dofs, t, order))
            .into_iter()
            .collect()
    }

    fn regularization_energy(&self, y: &[f64]) -> f64 {
        self.stencils
            .iter()
            .filter(|s| s.weight != 0.0)
            .fold(0.0, |acc, s| acc + s.weight * edge_jump(s, y).norm_squared())
    }

    fn add_regularization_gradient(&self, y: &[f64], out: &mut [f64]) {
        for s in self.stencils.iter().filter(|s| s.weight != 0.0) {
            let jump = edge_jump(s, y);
            for (k, &v) in s.nodes.iter().enumerate() {
                let d = s.jumps[k];
                for i in 0..3 {
                    out[3 * v + i] += 2.0 * s.weight * (jump[(i, 0)] * d[0] + jump[(i, 1)] * d[1]);
                }
            }
        }
    }

    pub fn element_gradients(&self, y: &Deformation) -> Result<Vec<Matrix3x2<f64>>> {
        self.check(y)?;
        Ok(self.map_elements(|t| element_gradient(&self.mesh, &y.dofs, t)))
    }

    pub fn energy(&self, y: &Deformation) -> Result<EnergyBreakdown> {
        let terms = self.collect_terms(y, 0)?;
        let stretch = terms.iter().fold(0.0, |acc, t| acc + t.value);
        Ok(EnergyBreakdown::new(stretch, self.regularization_energy(&y.dofs)))
    }

    pub fn gradient(&self, y: &Deformation) -> Result<Vec<f64>> {
        Ok(self.linearize(y, false)?.1)
    }

    pub fn hessian(&self, y: &Deformation) -> Result<SymSparse> {
        Ok(self.linearize(y, true)?.2.expect("hessian requested"))
    }

    /// Energy, gradient and (optionally) Hessian from a single sweep.
    pub fn linearize(&self, y: &Deformation, with_hessian: bool) -> Result<(EnergyBreakdown, Vec<f64>, Option<SymSparse>)> {
        let terms = self.collect_terms(y, if with_hessian { 2 } else { 1 })?;
        let mut grad = vec![0.0; self.num_dofs()];
        let mut stretch = 0.0;
        let mut hess = with_hessian.then(|| self.regularization_hessian.clone());
        for (t, term) in terms.iter().enumerate() {
            stretch += term.value;
            let tri = self.mesh.triangles()[t];
            for (k, &v) in tri.iter().enumerate() {
                for i in 0..3 {
                    grad[3 * v + i] += term.grad[k][i];
                }
            }
            if let (Some(h), Some(blocks)) = (hess.as_mut(), term.hess.as_ref()) {
                for (k, &vk) in tri.iter().enumerate() {
                    for (l, &vl) in tri.iter().enumerate() {
                        h.add_block(vk, vl, &blocks[k][l]);
                    }
                }
            }
        }
        self.add_regularization_gradient(&y.dofs, &mut grad);
        let energy = EnergyBreakdown::new(stretch, self.regularization_energy(&y.dofs));
        Ok((energy, grad, hess))
    }

    /// Hessian of the regularization term alone (independent of `y`).
    pub fn regularization_hessian(&self) -> &SymSparse {
        &self.regularization_hessian
    }

    /// Matrix of the H¹ inner product on this problem's sparsity pattern.
    pub fn h1_matrix(&self) -> SymSparse {
        h1_on_pattern(&self.mesh, self.pattern.clone())
    }

    /// `e_h = Σ_T |T| |∇yᵀ∇y − g|` with the Frobenius norm.
    pub fn metric_deviation(&self, y: &Deformation) -> Result<f64> {
        let grads = self.element_gradients(y)?;
        Ok(grads.iter().enumerate().fold(0.0, |acc, (t, f)| {
            acc + self.mesh.area(t) * (f.transpose() * f - self.metrics[t]).norm()
        }))
    }
}

fn h1_on_pattern(mesh: &TriMesh, pattern: Arc<SymPattern>) -> SymSparse {
    let mut m = SymSparse::zeros(pattern);
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let area = mesh.area(t);
        let g = mesh.basis_gradients(t);
        for k in 0..3 {
            for l in 0..3 {
                let mass = if k == l { area / 6.0 } else { area / 12.0 };
                let stiff = area * (g[k][0] * g[l][0] + g[k][1] * g[l][1]);
                m.add_scaled_identity(tri[k], tri[l], mass + stiff);
            }
        }
    }
    m
}

/// Constant gradient of the P1 interpolant on every triangle.
pub fn grad_per_element(mesh: &TriMesh, y: &Deformation) -> Result<Vec<Matrix3x2<f64>>> {
    if y.dofs.len() != 3 * mesh.num_vertices() {
        return Err(Error::InvalidArgument("deformation does not match mesh".into()));
    }
    Ok((0..mesh.num_triangles()).map(|t| element_gradient(mesh, &y.dofs, t)).collect())
}

pub fn assemble_energy(mesh: &Arc<TriMesh>, y: &Deformation, material: &MaterialField, crease_aware: bool) -> Result<EnergyBreakdown> {
    FemProblem::new(mesh.clone(), material, crease_aware)?.energy(y)
}

pub fn assemble_gradient(mesh: &Arc<TriMesh>, y: &Deformation, material: &MaterialField, crease_aware: bool) -> Result<Vec<f64>> {
    FemProblem::new(mesh.clone(), material, crease_aware)?.gradient(y)
}

pub fn assemble_hessian(mesh: &Arc<TriMesh>, y: &Deformation, material: &MaterialField, crease_aware: bool) -> Result<SymSparse> {
    FemProblem::new(mesh.clone(), material, crease_aware)?.hessian(y)
}

/// `(u, v) ↦ ∫ u·v + ∇u:∇v` on P1, block diagonal over the three components.
pub fn h1_matrix(mesh: &TriMesh) -> SymSparse {
    h1_on_pattern(mesh, Arc::new(pattern_for(mesh, &[])))
}

/// Lagrange interpolant of `f`.
pub fn interpolate(mesh: &TriMesh, f: impl Fn(Point2) -> [f64; 3]) -> Result<Deformation> {
    let mut dofs = Vec::with_capacity(3 * mesh.num_vertices());
    for (v, &p) in mesh.vertices().iter().enumerate() {
        let value = f(p);
        if value.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInitializer { vertex: v });
        }
        dofs.extend(value);
    }
    Ok(Deformation { dofs })
}

pub fn metric_deviation(mesh: &TriMesh, y: &Deformation, material: &MaterialField) -> Result<f64> {
    let metrics = material.actuation().metric;
    if metrics.len() != mesh.num_triangles() {
        return Err(Error::InvalidMaterial("material does not match mesh".into()));
    }
    let grads = grad_per_element(mesh, y)?;
    Ok(grads
        .iter()
        .enumerate()
        .fold(0.0, |acc, (t, f)| acc + mesh.area(t) * (f.transpose() * f - metrics[t]).norm()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{crease_fitted_square, structured_square, CreaseSpec, Rect};
    use nalgebra::{DMatrix, Vector2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_mesh(n: usize) -> Arc<TriMesh> {
        Arc::new(structured_square(n, Rect::unit()).unwrap())
    }

    fn smooth_material(mesh: &TriMesh, c_r: f64) -> MaterialField {
        let mut dirs = Vec::new();
        for t in 0..mesh.num_triangles() {
            let [x, y] = mesh.barycenter(t);
            dirs.push(Vector2::new(x + 1.0, y + 1.0).normalize());
        }
        let n = dirs.len();
        MaterialField::new(dirs, vec![0.1; n], vec![1.0; n], vec![c_r; n]).unwrap()
    }

    fn random_state(mesh: &TriMesh, rng: &mut impl Rng, amp: f64) -> Deformation {
        let mut y = Deformation::identity(mesh);
        for d in y.dofs_mut() {
            *d += amp * rng.gen_range(-1.0..1.0);
        }
        y
    }

    #[test]
    fn gradients_reproduce_affine_maps() {
        let mesh = unit_mesh(3);
        let l = Matrix3x2::new(1.0, 2.0, -0.5, 0.3, 0.7, -1.1);
        let y = interpolate(&mesh, |p| {
            let v = l * Vector2::new(p[0], p[1]);
            [v.x + 0.2, v.y, v.z - 1.0]
        })
        .unwrap();
        for f in grad_per_element(&mesh, &y).unwrap() {
            assert!((f - l).norm() < 1e-12);
        }
        let flat = Matrix3x2::new(1.0, 0.0, 0.0, 1.0, 0.0, 0.0);
        for f in grad_per_element(&mesh, &Deformation::identity(&mesh)).unwrap() {
            assert!((f - flat).norm() < 1e-14);
        }
    }

    #[test]
    fn gradient_on_one_triangle_by_hand() {
        // Triangle (0,0), (1,0), (1,1): y = y0 + (y1 − y0) x + (y2 − y1) y.
        let mesh = TriMesh::new(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]], vec![[0, 1, 2]]).unwrap();
        let y = Deformation::from_dofs(vec![0.1, 0.2, 0.3, 1.0, -0.5, 2.0, 0.4, 0.9, -1.0], &mesh).unwrap();
        let f = grad_per_element(&mesh, &y).unwrap()[0];
        let expected = Matrix3x2::new(0.9, -0.6, -0.7, 1.4, 1.7, -3.0);
        assert!((f - expected).norm() < 1e-14);
    }

    #[test]
    fn energy_examples() {
        let mesh = unit_mesh(4);
        let n = mesh.num_triangles();
        let iso = MaterialField::uniform(n, Vector2::new(1.0, 0.0), 0.0, 0.0, 3.0).unwrap();
        let e = assemble_energy(&mesh, &Deformation::identity(&mesh), &iso, false).unwrap();
        assert!(e.total.abs() < 1e-14);

        let mat = MaterialField::uniform(n, Vector2::new(1.0, 0.0), 0.1, 1.0, 3.0).unwrap();
        let lam = 0.55f64.cbrt();
        let y = interpolate(&mesh, |p| [lam * p[0], p[1] / lam.sqrt(), 0.0]).unwrap();
        let e = assemble_energy(&mesh, &y, &mat, false).unwrap();
        assert!(e.stretch.abs() < 1e-13);
        assert!(e.regularization.abs() < 1e-20);
        assert!(metric_deviation(&mesh, &y, &mat).unwrap() < 1e-13);
    }

    #[test]
    fn tent_regularization_by_hand() {
        // n = 1: triangles (0,1,3) and (0,3,2) share the diagonal from (0,0) to (1,1).
        let mesh = unit_mesh(1);
        assert_eq!(mesh.interior_edges().len(), 1);
        let c_r = 2.5;
        let mat = MaterialField::uniform(2, Vector2::new(1.0, 0.0), 0.0, 0.0, c_r).unwrap();
        // Lift the corner (1,0) only: ∇z = (1, −1) on the lower triangle, 0 on the upper.
        let mut y = Deformation::identity(&mesh);
        y.dofs_mut()[3 * 1 + 2] = 1.0;
        let e = assemble_energy(&mesh, &y, &mat, false).unwrap();
        let h = 2f64.sqrt();
        let edge = 2f64.sqrt();
        let jump2 = 1.0 + 1.0;
        assert!((e.regularization - c_r * h * h / h * edge * jump2).abs() < 1e-12);
    }

    #[test]
    fn energy_decomposition_resums() {
        let mesh = unit_mesh(6);
        let mat = smooth_material(&mesh, 0.7);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = random_state(&mesh, &mut rng, 0.02);
        let problem = FemProblem::new(mesh.clone(), &mat, false).unwrap();
        let e = problem.energy(&y).unwrap();
        assert!((e.total - e.stretch - e.regularization).abs() <= 1e-14 * e.total.abs().max(1.0));
        assert!(e.regularization >= 0.0);

        // Independent re-summation with the trace formula and explicit jumps.
        let grads = grad_per_element(&mesh, &y).unwrap();
        let stretch: f64 = (0..mesh.num_triangles())
            .map(|t| mesh.area(t) * crate::material::density_w_trace(&grads[t], &mat.element(t)).unwrap())
            .sum();
        let reg: f64 = mesh
            .interior_edges()
            .iter()
            .map(|e| 0.7 * mesh.h_max() * e.length * (grads[e.right] - grads[e.left]).norm_squared())
            .sum();
        assert!((stretch - e.stretch).abs() <= 1e-12 * stretch.abs().max(1e-3));
        assert!((reg - e.regularization).abs() <= 1e-13 * reg.max(1e-3));
    }

    #[test]
    fn gradient_matches_energy_differences() {
        let mesh = unit_mesh(4);
        let mat = smooth_material(&mesh, 1.0);
        let problem = FemProblem::new(mesh.clone(), &mat, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let eps = 1e-6;
        for _ in 0..10 {
            let y = random_state(&mesh, &mut rng, 0.05);
            let g = problem.gradient(&y).unwrap();
            let v: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let shifted = |s: f64| {
                let dofs = y.dofs().iter().zip(&v).map(|(a, b)| a + s * b).collect();
                problem.energy(&Deformation::from_dofs(dofs, &mesh).unwrap()).unwrap().total
            };
            let fd = (shifted(eps) - shifted(-eps)) / (2.0 * eps);
            let exact: f64 = g.iter().zip(&v).map(|(a, b)| a * b).sum();
            assert!((fd - exact).abs() <= 1e-5 * exact.abs().max(1e-3), "{fd} vs {exact}");
        }
    }

    #[test]
    fn stretch_gradient_is_translation_invariant() {
        let mesh = unit_mesh(3);
        let mat = smooth_material(&mesh, 0.0);
        let problem = FemProblem::new(mesh.clone(), &mat, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = random_state(&mesh, &mut rng, 0.05);
        let mut shifted = y.clone();
        for (i, d) in shifted.dofs_mut().iter_mut().enumerate() {
            *d += [0.3, -1.2, 4.0][i % 3];
        }
        let (g0, g1) = (problem.gradient(&y).unwrap(), problem.gradient(&shifted).unwrap());
        for (a, b) in g0.iter().zip(&g1) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_vanishes_at_global_minimum() {
        let mesh = unit_mesh(4);
        let mat = MaterialField::uniform(mesh.num_triangles(), Vector2::new(0.6, 0.8), 0.1, 1.0, 5.0).unwrap();
        let g = mat.element(0).target_metric();
        let eig = nalgebra::SymmetricEigen::new(g);
        let sqrt = eig.eigenvectors * Matrix2::from_diagonal(&eig.eigenvalues.map(f64::sqrt)) * eig.eigenvectors.transpose();
        let y = interpolate(&mesh, |p| {
            let v = sqrt * Vector2::new(p[0], p[1]);
            [v.x, v.y, 0.0]
        })
        .unwrap();
        let grad = assemble_gradient(&mesh, &y, &mat, false).unwrap();
        assert!(crate::sparse::norm(&grad) <= 1e-8);
    }

    #[test]
    fn hessian_matches_gradient_differences() {
        let mesh = unit_mesh(3);
        let mat = smooth_material(&mesh, 1.0);
        let problem = FemProblem::new(mesh.clone(), &mat, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y = random_state(&mesh, &mut rng, 0.05);
        let h = problem.hessian(&y).unwrap();
        assert!(h.asymmetry() <= 1e-10 * h.max_abs());
        let eps = 1e-6;
        for _ in 0..20 {
            let v: Vec<f64> = (0..problem.num_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let at = |s: f64| {
                let dofs = y.dofs().iter().zip(&v).map(|(a, b)| a + s * b).collect();
                problem.gradient(&Deformation::from_dofs(dofs, &mesh).unwrap()).unwrap()
            };
            let (gp, gm) = (at(eps), at(-eps));
            let hv = h.matvec(&v);
            let fd: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
            let diff: Vec<f64> = fd.iter().zip(&hv).map(|(a, b)| a - b).collect();
            assert!(crate::sparse::norm(&diff) <= 1e-4 * crate::sparse::norm(&hv));
        }
    }

    #[test]
    fn regularization_hessian_is_psd() {
        let mesh = unit_mesh(3);
        let mat = smooth_material(&mesh, 2.0);
        let problem = FemProblem::new(mesh.clone(), &mat, false).unwrap();
        let dense = problem.regularization_hessian().to_dense();
        let n = dense.len();
        let m = DMatrix::from_fn(n, n, |i, j| dense[i][j]);
        let min = m.symmetric_eigen().eigenvalues.min();
        assert!(min >= -1e-10 * problem.regularization_hessian().max_abs());
    }

    #[test]
    fn h1_matrix_examples() {
        let mesh = unit_mesh(4);
        let m = h1_matrix(&mesh);
        let c = [0.3, -2.0, 1.5];
        let constant: Vec<f64> = (0..mesh.num_vertices()).flat_map(|_| c).collect();
        let expected = c.iter().map(|x| x * x).sum::<f64>();
        assert!((m.quadratic_form(&constant) - expected).abs() < 1e-12);

        let linear: Vec<f64> = mesh.vertices().iter().flat_map(|p| [p[0], 0.0, 0.0]).collect();
        assert!((m.quadratic_form(&linear) - (1.0 / 3.0 + 1.0)).abs() < 1e-12);

        let dense = m.to_dense();
        let n = dense.len();
        let min = DMatrix::from_fn(n, n, |i, j| dense[i][j]).symmetric_eigen().eigenvalues.min();
        assert!(min > 0.0);
    }

    #[test]
    fn interpolation_examples() {
        let mesh = unit_mesh(4);
        let y = interpolate(&mesh, |p| [p[0], p[1], 0.0]).unwrap();
        assert_eq!(y, Deformation::identity(&mesh));

        let bubble = interpolate(&mesh, |p| [p[0], p[1], 0.8 * p[0] * (1.0 - p[0]) * p[1] * (1.0 - p[1])]).unwrap();
        for (v, p) in mesh.vertices().iter().enumerate() {
            let on_boundary = p.iter().any(|&c| c == 0.0 || c == 1.0);
            let z = bubble.point(v)[2];
            assert!(if on_boundary { z == 0.0 } else { z > 0.0 });
        }

        let cosine = |p: Point2| 0.2 * (7.0 * std::f64::consts::PI * (p[0] - 0.5)).cos() * p[1] * (p[1] - 1.0);
        let y = interpolate(&mesh, |p| [p[0], p[1], cosine(p)]).unwrap();
        for (v, p) in mesh.vertices().iter().enumerate() {
            assert_eq!(y.point(v)[2], cosine(*p));
        }

        let err = interpolate(&mesh, |p| [p[0], f64::NAN, 0.0]).unwrap_err();
        assert!(matches!(err, Error::InvalidInitializer { vertex: 0 }));
    }

    #[test]
    fn metric_deviation_of_flat_dilation() {
        let mesh = unit_mesh(4);
        let mat = MaterialField::uniform(mesh.num_triangles(), Vector2::new(1.0, 0.0), 0.1, 1.0, 0.0).unwrap();
        let lam = 0.55f64.cbrt();
        let y = interpolate(&mesh, |p| [lam * p[0], lam * p[1], 0.0]).unwrap();
        // λ² I − g = diag(0, λ² − λ⁻¹).
        let expected = (lam * lam - 1.0 / lam).abs();
        assert!((metric_deviation(&mesh, &y, &mat).unwrap() - expected).abs() < 1e-13);
    }

    #[test]
    fn crease_edges_do_not_penalize_folds() {
        let creases = CreaseSpec::new(Rect::unit().diagonals());
        let mesh = Arc::new(crease_fitted_square(4, Rect::unit(), &creases).unwrap());
        let mat = MaterialField::uniform(mesh.num_triangles(), Vector2::new(1.0, 0.0), 0.0, 0.0, 1.0).unwrap();
        let fold = interpolate(&mesh, |p| [p[0], p[1], 0.3 * (p[0] - p[1]).max(0.0)]).unwrap();
        let kink = interpolate(&mesh, |p| [p[0], p[1], 0.3 * (p[0] - 0.5).max(0.0)]).unwrap();
        let aware = |y: &Deformation| assemble_energy(&mesh, y, &mat, true).unwrap().regularization;
        let plain = |y: &Deformation| assemble_energy(&mesh, y, &mat, false).unwrap().regularization;
        assert!(aware(&fold) < 1e-24);
        assert!(plain(&fold) > 0.0);
        assert!(aware(&kink) > 0.0);
    }

    #[test]
    fn stretch_energy_converges_under_refinement() {
        let energies: Vec<f64> = [8, 16, 32, 64]
            .iter()
            .map(|&n| {
                let mesh = unit_mesh(n);
                let mat = MaterialField::uniform(mesh.num_triangles(), Vector2::new(1.0, 0.0), 0.1, 1.0, 0.0).unwrap();
                let y = interpolate(&mesh, |p| [p[0] + 0.1 * p[1] * p[1], p[1], 0.3 * p[0] * p[1]]).unwrap();
                assemble_energy(&mesh, &y, &mat, false).unwrap().stretch
            })
            .collect();
        let diffs: Vec<f64> = energies.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
        for w in diffs.windows(2) {
            assert!(w[0] >= 2.0 * w[1], "{diffs:?}");
        }
    }

    #[test]
    fn sequential_and_parallel_agree_bitwise() {
        let mesh = unit_mesh(8);
        let mat = smooth_material(&mesh, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = random_state(&mesh, &mut rng, 0.03);
        let par = FemProblem::new(mesh.clone(), &mat, false).unwrap();
        let seq = par.clone().with_parallel(false);
        let (ep, gp, hp) = par.linearize(&y, true).unwrap();
        let (es, gs, hs) = seq.linearize(&y, true).unwrap();
        assert_eq!(ep, es);
        assert_eq!(gp, gs);
        assert_eq!(hp.unwrap().values(), hs.unwrap().values());
    }

    #[test]
    fn degenerate_element_is_reported_with_its_index() {
        let mesh = unit_mesh(2);
        let mat = smooth_material(&mesh, 0.0);
        let mut y = Deformation::identity(&mesh);
        // Collapse every x coordinate: all triangles become degenerate.
        for v in 0..mesh.num_vertices() {
            y.dofs_mut()[3 * v] = 0.0;
        }
        let err = assemble_energy(&mesh, &y, &mat, false).unwrap_err();
        assert!(matches!(err, Error::DegenerateElement { element: Some(0), .. }), "{err}");
    }
}
