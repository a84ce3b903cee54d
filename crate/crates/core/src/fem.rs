//! Linear finite elements: 2-node bars, bilinear quads for plane-strain
//! elasticity and for the scalar wave equation. Consistent mass throughout.

use crate::error::{Error, Result};
use crate::linalg::SparseMatrix;

const GAUSS_2: [f64; 2] = [-0.577_350_269_189_625_8, 0.577_350_269_189_625_8];

#[derive(Clone, Debug, PartialEq)]
pub struct Mesh1D {
    nodes: Vec<f64>,
    elements: Vec<[usize; 2]>,
    pub youngs_modulus: f64,
    pub density: f64,
    pub area: f64,
}

impl Mesh1D {
    pub fn new(nodes: Vec<f64>, elements: Vec<[usize; 2]>, youngs_modulus: f64, density: f64, area: f64) -> Result<Self> {
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidMesh("node coordinates must be strictly increasing".into()));
        }
        for (e, el) in elements.iter().enumerate() {
            if el.iter().any(|&n| n >= nodes.len()) || el[0] == el[1] {
                return Err(Error::InvalidMesh(format!("element {e} has invalid connectivity {el:?}")));
            }
        }
        if !(youngs_modulus > 0.0 && density > 0.0 && area > 0.0) {
            return Err(Error::InvalidMesh("material constants must be positive".into()));
        }
        Ok(Self {
            nodes,
            elements,
            youngs_modulus,
            density,
            area,
        })
    }

    /// `n` equal elements on `[x0, x1]`.
    pub fn uniform(x0: f64, x1: f64, n: usize, youngs_modulus: f64, density: f64, area: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidMesh("at least one element is required".into()));
        }
        let h = (x1 - x0) / n as f64;
        let nodes = (0..=n).map(|i| if i == n { x1 } else { x0 + i as f64 * h }).collect();
        let elements = (0..n).map(|e| [e, e + 1]).collect();
        Self::new(nodes, elements, youngs_modulus, density, area)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn elements(&self) -> &[[usize; 2]] {
        &self.elements
    }

    /// Element stiffness and consistent mass.
    pub fn element_matrices(&self, e: usize) -> ([[f64; 2]; 2], [[f64; 2]; 2]) {
        let [a, b] = self.elements[e];
        let h = (self.nodes[b] - self.nodes[a]).abs();
        let k = self.youngs_modulus * self.area / h;
        let m = self.density * self.area * h / 6.0;
        ([[k, -k], [-k, k]], [[2.0 * m, m], [m, 2.0 * m]])
    }

    /// Global `(K, M)` over all nodes.
    pub fn assemble(&self) -> (SparseMatrix, SparseMatrix) {
        let n = self.nodes.len();
        let mut kt = Vec::with_capacity(4 * self.elements.len());
        let mut mt = Vec::with_capacity(4 * self.elements.len());
        for (e, el) in self.elements.iter().enumerate() {
            let (ke, me) = self.element_matrices(e);
            for p in 0..2 {
                for q in 0..2 {
                    kt.push((el[p], el[q], ke[p][q]));
                    mt.push((el[p], el[q], me[p][q]));
                }
            }
        }
        (SparseMatrix::from_triplets(n, n, &kt), SparseMatrix::from_triplets(n, n, &mt))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Material {
    /// Plane-strain isotropic elasticity, two DOFs per node.
    Elastic { lame_lambda: f64, mu: f64, rho: f64 },
    /// Scalar wave equation `u_tt / c0^2 = lap u`, one DOF per node.
    Wave { c0: f64 },
}

impl Material {
    pub fn dofs_per_node(&self) -> usize {
        match self {
            Material::Elastic { .. } => 2,
            Material::Wave { .. } => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mesh2D {
    nodes: Vec<[f64; 2]>,
    elements: Vec<[usize; 4]>,
    material: Material,
}

type Quad = [[f64; 2]; 4];

fn shape(xi: f64, eta: f64) -> ([f64; 4], [[f64; 2]; 4]) {
    let n = [
        0.25 * (1.0 - xi) * (1.0 - eta),
        0.25 * (1.0 + xi) * (1.0 - eta),
        0.25 * (1.0 + xi) * (1.0 + eta),
        0.25 * (1.0 - xi) * (1.0 + eta),
    ];
    let dn = [
        [-0.25 * (1.0 - eta), -0.25 * (1.0 - xi)],
        [0.25 * (1.0 - eta), -0.25 * (1.0 + xi)],
        [0.25 * (1.0 + eta), 0.25 * (1.0 + xi)],
        [-0.25 * (1.0 + eta), 0.25 * (1.0 - xi)],
    ];
    (n, dn)
}

/// Shape values, physical gradients and `det J` at a reference point.
fn shape_physical(x: &Quad, xi: f64, eta: f64) -> ([f64; 4], [[f64; 2]; 4], f64) {
    let (n, dn) = shape(xi, eta);
    let mut j = [[0.0; 2]; 2];
    for a in 0..4 {
        for r in 0..2 {
            for c in 0..2 {
                j[r][c] += dn[a][c] * x[a][r];
            }
        }
    }
    // j[r][c] = d x_r / d xi_c
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let inv = [[j[1][1] / det, -j[0][1] / det], [-j[1][0] / det, j[0][0] / det]];
    let mut g = [[0.0; 2]; 4];
    for a in 0..4 {
        for r in 0..2 {
            g[a][r] = dn[a][0] * inv[0][r] + dn[a][1] * inv[1][r];
        }
    }
    (n, g, det)
}

/// Plane-strain stiffness and consistent mass of one quad (8 x 8, DOFs `(ux, uy)` per node).
pub fn elastic_quad(x: &Quad, lame_lambda: f64, mu: f64, rho: f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let d = [
        [lame_lambda + 2.0 * mu, lame_lambda, 0.0],
        [lame_lambda, lame_lambda + 2.0 * mu, 0.0],
        [0.0, 0.0, mu],
    ];
    let mut k = vec![vec![0.0; 8]; 8];
    let mut m = vec![vec![0.0; 8]; 8];
    for &xi in &GAUSS_2 {
        for &eta in &GAUSS_2 {
            let (n, g, det) = shape_physical(x, xi, eta);
            let mut b = [[0.0; 8]; 3];
            for a in 0..4 {
                b[0][2 * a] = g[a][0];
                b[1][2 * a + 1] = g[a][1];
                b[2][2 * a] = g[a][1];
                b[2][2 * a + 1] = g[a][0];
            }
            for p in 0..8 {
                for q in 0..8 {
                    let mut s = 0.0;
                    for r in 0..3 {
                        for c in 0..3 {
                            s += b[r][p] * d[r][c] * b[c][q];
                        }
                    }
                    k[p][q] += s * det;
                }
            }
            for a in 0..4 {
                for bb in 0..4 {
                    let v = rho * n[a] * n[bb] * det;
                    m[2 * a][2 * bb] += v;
                    m[2 * a + 1][2 * bb + 1] += v;
                }
            }
        }
    }
    (k, m)
}

/// Scalar Laplacian stiffness and `1/c0^2` mass of one quad (4 x 4).
pub fn wave_quad(x: &Quad, c0: f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut k = vec![vec![0.0; 4]; 4];
    let mut m = vec![vec![0.0; 4]; 4];
    let rho = 1.0 / (c0 * c0);
    for &xi in &GAUSS_2 {
        for &eta in &GAUSS_2 {
            let (n, g, det) = shape_physical(x, xi, eta);
            for a in 0..4 {
                for b in 0..4 {
                    k[a][b] += (g[a][0] * g[b][0] + g[a][1] * g[b][1]) * det;
                    m[a][b] += rho * n[a] * n[b] * det;
                }
            }
        }
    }
    (k, m)
}

impl Mesh2D {
    pub fn new(nodes: Vec<[f64; 2]>, elements: Vec<[usize; 4]>, material: Material) -> Result<Self> {
        for (e, el) in elements.iter().enumerate() {
            if el.iter().any(|&n| n >= nodes.len()) {
                return Err(Error::InvalidMesh(format!("element {e} references a missing node")));
            }
            let x: Quad = el.map(|n| nodes[n]);
            for &xi in &GAUSS_2 {
                for &eta in &GAUSS_2 {
                    let (_, _, det) = shape_physical(&x, xi, eta);
                    if !(det > 0.0) {
                        return Err(Error::InvalidMesh(format!(
                            "element {e} is clockwise or degenerate (det J = {det:e})"
                        )));
                    }
                }
            }
        }
        match material {
            Material::Elastic { lame_lambda, mu, rho } if !(mu > 0.0 && rho > 0.0 && lame_lambda + mu > 0.0) => {
                return Err(Error::InvalidMesh("elastic constants out of range".into()));
            }
            Material::Wave { c0 } if !(c0 > 0.0) => {
                return Err(Error::InvalidMesh("wave speed must be positive".into()));
            }
            _ => {}
        }
        Ok(Self {
            nodes,
            elements,
            material,
        })
    }

    /// `nx` by `ny` rectangles on `[x0, x1] x [y0, y1]`; node `(i, j)` has index
    /// `i * (ny + 1) + j`.
    pub fn structured(x0: f64, x1: f64, y0: f64, y1: f64, nx: usize, ny: usize, material: Material) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidMesh("at least one element per direction".into()));
        }
        let coord = |a: f64, b: f64, k: usize, n: usize| if k == n { b } else { a + (b - a) * k as f64 / n as f64 };
        let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
        for i in 0..=nx {
            for j in 0..=ny {
                nodes.push([coord(x0, x1, i, nx), coord(y0, y1, j, ny)]);
            }
        }
        let id = |i: usize, j: usize| i * (ny + 1) + j;
        let mut elements = Vec::with_capacity(nx * ny);
        for i in 0..nx {
            for j in 0..ny {
                elements.push([id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
        Self::new(nodes, elements, material)
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn elements(&self) -> &[[usize; 4]] {
        &self.elements
    }

    pub fn material(&self) -> Material {
        self.material
    }

    pub fn dofs_per_node(&self) -> usize {
        self.material.dofs_per_node()
    }

    pub fn num_dofs(&self) -> usize {
        self.nodes.len() * self.dofs_per_node()
    }

    /// Global `(K, M)` over all node DOFs (node-major).
    pub fn assemble(&self) -> (SparseMatrix, SparseMatrix) {
        let dpn = self.dofs_per_node();
        let nd = self.num_dofs();
        let per = (4 * dpn) * (4 * dpn);
        let mut kt = Vec::with_capacity(per * self.elements.len());
        let mut mt = Vec::with_capacity(per * self.elements.len());
        for el in &self.elements {
            let x: Quad = el.map(|n| self.nodes[n]);
            let (ke, me) = match self.material {
                Material::Elastic { lame_lambda, mu, rho } => elastic_quad(&x, lame_lambda, mu, rho),
                Material::Wave { c0 } => wave_quad(&x, c0),
            };
            let dofs: Vec<usize> = el.iter().flat_map(|&n| (0..dpn).map(move |c| n * dpn + c)).collect();
            for (p, &gp) in dofs.iter().enumerate() {
                for (q, &gq) in dofs.iter().enumerate() {
                    kt.push((gp, gq, ke[p][q]));
                    mt.push((gp, gq, me[p][q]));
                }
            }
        }
        (SparseMatrix::from_triplets(nd, nd, &kt), SparseMatrix::from_triplets(nd, nd, &mt))
    }
}

/// Keeps the rows and columns listed in `free` (in that order).
pub fn restrict(a: &SparseMatrix, free: &[usize]) -> SparseMatrix {
    let mut map = vec![usize::MAX; a.rows()];
    for (new, &old) in free.iter().enumerate() {
        map[old] = new;
    }
    let t: Vec<(usize, usize, f64)> = a
        .iter()
        .filter_map(|(i, j, v)| {
            let (r, c) = (map[i], map[j]);
            (r != usize::MAX && c != usize::MAX).then_some((r, c, v))
        })
        .collect();
    SparseMatrix::from_triplets(free.len(), free.len(), &t)
}

/// Consistent nodal loads of a line traction `q` on the straight segment of
/// a 2-node linear edge between `s0` and `s1` (edge coordinates), restricted
/// to the loaded interval `[a, b]`.
pub fn edge_load(s0: f64, s1: f64, a: f64, b: f64, q: f64) -> [f64; 2] {
    let lo = a.max(s0);
    let hi = b.min(s1);
    if hi <= lo {
        return [0.0, 0.0];
    }
    let h = s1 - s0;
    // N1 = (s1 - s) / h, N2 = (s - s0) / h integrated over [lo, hi]
    let int_n2 = ((hi - s0).powi(2) - (lo - s0).powi(2)) / (2.0 * h);
    let len = hi - lo;
    [q * (len - int_n2), q * int_n2]
}
