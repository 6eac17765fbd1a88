//! Lagrange bases of degree 1..=3 on the reference simplex, represented as
//! polynomials in the barycentric coordinates so values and gradients share
//! one exact code path across degrees and dimensions.

use crate::scalar::Scalar;

/// Reference edges in ascending local-vertex order.
pub fn local_edges(dim: usize) -> &'static [[usize; 2]] {
    match dim {
        2 => &[[0, 1], [0, 2], [1, 2]],
        3 => &[[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]],
        _ => panic!("unsupported dimension {dim}"),
    }
}

/// Reference faces (3D only) in ascending local-vertex order.
pub fn local_faces(dim: usize) -> &'static [[usize; 3]] {
    match dim {
        2 => &[],
        3 => &[[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]],
        _ => panic!("unsupported dimension {dim}"),
    }
}

/// Which mesh entity a local basis node sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalEntity {
    Vertex(usize),
    /// `along` counts interior nodes from the lower local endpoint (0-based).
    Edge { edge: usize, along: usize },
    Face(usize),
    Interior,
}

/// Polynomial in barycentric coordinates: sum of `coef * prod(lambda_i ^ pow_i)`.
#[derive(Debug, Clone, Default)]
struct Poly {
    terms: Vec<(f64, [u8; 4])>,
}

impl Poly {
    fn one() -> Self {
        Self { terms: vec![(1.0, [0; 4])] }
    }

    /// Multiplies by the linear factor `scale * lambda_i + shift`.
    fn mul_linear(&self, i: usize, scale: f64, shift: f64) -> Self {
        let mut out = Poly::default();
        for &(c, p) in &self.terms {
            if scale != 0.0 {
                let mut q = p;
                q[i] += 1;
                out.push(c * scale, q);
            }
            if shift != 0.0 {
                out.push(c * shift, p);
            }
        }
        out
    }

    fn scaled(mut self, s: f64) -> Self {
        for t in &mut self.terms {
            t.0 *= s;
        }
        self
    }

    fn push(&mut self, c: f64, p: [u8; 4]) {
        if let Some(t) = self.terms.iter_mut().find(|t| t.1 == p) {
            t.0 += c;
        } else {
            self.terms.push((c, p));
        }
    }

    fn eval(&self, lambda: &[f64; 4]) -> f64 {
        let mut acc = 0.0;
        for &(c, p) in &self.terms {
            let mut v = c;
            for (m, &pw) in p.iter().enumerate() {
                for _ in 0..pw {
                    v *= lambda[m];
                }
            }
            acc += v;
        }
        acc
    }

    /// Partial derivative with respect to `lambda_m`, evaluated at `lambda`.
    fn eval_dlambda(&self, m: usize, lambda: &[f64; 4]) -> f64 {
        let mut acc = 0.0;
        for &(c, p) in &self.terms {
            if p[m] == 0 {
                continue;
            }
            let mut v = c * p[m] as f64;
            for (k, &pw) in p.iter().enumerate() {
                let pw = if k == m { pw - 1 } else { pw };
                for _ in 0..pw {
                    v *= lambda[k];
                }
            }
            acc += v;
        }
        acc
    }
}

fn product(i: usize, factors: &[(f64, f64)]) -> Poly {
    // prod over factors (scale * lambda_i + shift)
    let mut p = Poly::one();
    for &(scale, shift) in factors {
        p = p.mul_linear(i, scale, shift);
    }
    p
}

/// Tabulated basis values and reference gradients at a point set.
/// `values[pt * n_basis + b]`, `grads[(pt * n_basis + b) * dim + r]`.
#[derive(Debug, Clone)]
pub struct Tabulation<S> {
    pub n_basis: usize,
    pub n_points: usize,
    pub dim: usize,
    pub values: Vec<S>,
    pub grads: Vec<S>,
}

/// Lagrange element of degree 1..=3 on the reference simplex.
pub struct ElementBasis {
    pub dim: usize,
    pub degree: usize,
    fns: Vec<Poly>,
    /// Reference coordinates of the basis nodes.
    pub nodes: Vec<[f64; 3]>,
    pub entities: Vec<LocalEntity>,
}

impl ElementBasis {
    pub fn new(dim: usize, degree: usize) -> Self {
        assert!((2..=3).contains(&dim), "dim must be 2 or 3");
        assert!((1..=3).contains(&degree), "degree must be 1..=3");
        let nl = dim + 1; // number of barycentric coordinates
        let vert = |k: usize| -> [f64; 4] {
            let mut l = [0.0; 4];
            l[k] = 1.0;
            l
        };
        let mut fns = Vec::new();
        let mut bary_nodes: Vec<[f64; 4]> = Vec::new();
        let mut entities = Vec::new();

        for k in 0..nl {
            let f = match degree {
                1 => product(k, &[(1.0, 0.0)]),
                2 => product(k, &[(2.0, -1.0)]).mul_linear(k, 1.0, 0.0),
                3 => product(k, &[(3.0, -1.0), (3.0, -2.0)]).mul_linear(k, 1.0, 0.0).scaled(0.5),
                _ => unreachable!(),
            };
            fns.push(f);
            bary_nodes.push(vert(k));
            entities.push(LocalEntity::Vertex(k));
        }
        if degree >= 2 {
            for (e, &[i, j]) in local_edges(dim).iter().enumerate() {
                match degree {
                    2 => {
                        fns.push(product(i, &[(4.0, 0.0)]).mul_linear(j, 1.0, 0.0));
                        let mut l = [0.0; 4];
                        l[i] = 0.5;
                        l[j] = 0.5;
                        bary_nodes.push(l);
                        entities.push(LocalEntity::Edge { edge: e, along: 0 });
                    }
                    3 => {
                        for (along, major) in [(0, i), (1, j)] {
                            let f = product(i, &[(1.0, 0.0)])
                                .mul_linear(j, 1.0, 0.0)
                                .mul_linear(major, 3.0, -1.0)
                                .scaled(4.5);
                            fns.push(f);
                            let mut l = [0.0; 4];
                            l[major] = 2.0 / 3.0;
                            l[if major == i { j } else { i }] = 1.0 / 3.0;
                            bary_nodes.push(l);
                            entities.push(LocalEntity::Edge { edge: e, along });
                        }
                    }
                    _ => unreachable!(),
                }
            }
        }
        if degree == 3 {
            if dim == 2 {
                fns.push(product(0, &[(27.0, 0.0)]).mul_linear(1, 1.0, 0.0).mul_linear(2, 1.0, 0.0));
                bary_nodes.push([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0]);
                entities.push(LocalEntity::Interior);
            } else {
                for (fi, &[i, j, k]) in local_faces(dim).iter().enumerate() {
                    fns.push(product(i, &[(27.0, 0.0)]).mul_linear(j, 1.0, 0.0).mul_linear(k, 1.0, 0.0));
                    let mut l = [0.0; 4];
                    l[i] = 1.0 / 3.0;
                    l[j] = 1.0 / 3.0;
                    l[k] = 1.0 / 3.0;
                    bary_nodes.push(l);
                    entities.push(LocalEntity::Face(fi));
                }
            }
        }

        let nodes = bary_nodes
            .iter()
            .map(|l| {
                // reference vertices: v0 = origin, v_k = e_k
                let mut x = [0.0; 3];
                for k in 0..dim {
                    x[k] = l[k + 1];
                }
                x
            })
            .collect();
        Self { dim, degree, fns, nodes, entities }
    }

    pub fn n_basis(&self) -> usize {
        self.fns.len()
    }

    fn lambda(&self, x: &[f64; 3]) -> [f64; 4] {
        let mut l = [0.0; 4];
        let mut rest = 1.0;
        for k in 0..self.dim {
            l[k + 1] = x[k];
            rest -= x[k];
        }
        l[0] = rest;
        l
    }

    /// Evaluates all basis functions and their reference gradients at `points`.
    pub fn tabulate<S: Scalar>(&self, points: &[[S; 3]]) -> Tabulation<S> {
        let nb = self.n_basis();
        let np = points.len();
        let mut values = Vec::with_capacity(np * nb);
        let mut grads = Vec::with_capacity(np * nb * self.dim);
        for pt in points {
            let xf = [pt[0].as_f64(), pt[1].as_f64(), pt[2].as_f64()];
            let lam = self.lambda(&xf);
            for f in &self.fns {
                values.push(S::of(f.eval(&lam)));
                // d lambda_0 / d x_r = -1, d lambda_{r+1} / d x_r = 1
                let d0 = f.eval_dlambda(0, &lam);
                for r in 0..self.dim {
                    grads.push(S::of(f.eval_dlambda(r + 1, &lam) - d0));
                }
            }
        }
        Tabulation { n_basis: nb, n_points: np, dim: self.dim, values, grads }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p1_at_barycenter_is_one_third() {
        let eb = ElementBasis::new(2, 1);
        let tab = eb.tabulate::<f64>(&[[1.0 / 3.0, 1.0 / 3.0, 0.0]]);
        for b in 0..3 {
            assert!((tab.values[b] - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn nodal_delta_property_all_degrees_and_dims() {
        for dim in [2usize, 3] {
            for degree in 1..=3usize {
                let eb = ElementBasis::new(dim, degree);
                let pts: Vec<[f64; 3]> = eb.nodes.clone();
                let tab = eb.tabulate::<f64>(&pts);
                for p in 0..pts.len() {
                    for b in 0..eb.n_basis() {
                        let expect = if p == b { 1.0 } else { 0.0 };
                        let got = tab.values[p * eb.n_basis() + b];
                        assert!(
                            (got - expect).abs() < 1e-12,
                            "dim {dim} deg {degree} node {p} basis {b}: {got}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn partition_of_unity_and_zero_gradient_sum() {
        let pts = [[0.21, 0.33, 0.0], [0.05, 0.9, 0.0], [0.6, 0.1, 0.0]];
        for degree in 1..=3usize {
            let eb = ElementBasis::new(2, degree);
            let tab = eb.tabulate::<f64>(&pts);
            for p in 0..pts.len() {
                let sum: f64 = (0..eb.n_basis()).map(|b| tab.values[p * eb.n_basis() + b]).sum();
                assert!((sum - 1.0).abs() < 1e-13, "deg {degree}: partition of unity {sum}");
                for r in 0..2 {
                    let gsum: f64 = (0..eb.n_basis())
                        .map(|b| tab.grads[(p * eb.n_basis() + b) * 2 + r])
                        .sum();
                    assert!(gsum.abs() < 1e-12, "deg {degree}: gradient sum {gsum}");
                }
            }
        }
        let pts3 = [[0.2, 0.3, 0.1], [0.05, 0.1, 0.7]];
        for degree in 1..=3usize {
            let eb = ElementBasis::new(3, degree);
            let tab = eb.tabulate::<f64>(&pts3);
            for p in 0..pts3.len() {
                let sum: f64 = (0..eb.n_basis()).map(|b| tab.values[p * eb.n_basis() + b]).sum();
                assert!((sum - 1.0).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn basis_counts() {
        assert_eq!(ElementBasis::new(2, 1).n_basis(), 3);
        assert_eq!(ElementBasis::new(2, 2).n_basis(), 6);
        assert_eq!(ElementBasis::new(2, 3).n_basis(), 10);
        assert_eq!(ElementBasis::new(3, 1).n_basis(), 4);
        assert_eq!(ElementBasis::new(3, 2).n_basis(), 10);
        assert_eq!(ElementBasis::new(3, 3).n_basis(), 20);
    }
}
