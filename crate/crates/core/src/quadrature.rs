//! Quadrature on reference simplices via conical (collapsed-coordinate) product
//! rules built from Gauss-Legendre and Gauss-Jacobi points. Rules of any degree
//! are generated on demand; weights are positive and points lie strictly inside
//! the simplex.

use crate::scalar::Scalar;

/// Quadrature rule on the unit simplex of the given dimension.
///
/// Weights sum to the reference measure (1, 1/2, 1/6 for dim 1, 2, 3) and the
/// rule integrates polynomials up to `degree` exactly.
#[derive(Debug, Clone)]
pub struct QuadratureRule<S> {
    pub dim: usize,
    pub degree: usize,
    pub points: Vec<[S; 3]>,
    pub weights: Vec<S>,
}

impl<S: Scalar> QuadratureRule<S> {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Gauss rule on the unit simplex (interval, triangle, tetrahedron) exact for
/// polynomials of total degree `degree`.
pub fn simplex_rule<S: Scalar>(dim: usize, degree: usize) -> QuadratureRule<S> {
    assert!((1..=3).contains(&dim), "dim must be 1, 2 or 3");
    let m = (degree / 2) + 1; // 2m - 1 >= degree
    let (ta, wa) = gauss_jacobi_01(m, 0);
    let mut points = Vec::new();
    let mut weights = Vec::new();
    match dim {
        1 => {
            for i in 0..m {
                points.push([S::of(ta[i]), S::zero(), S::zero()]);
                weights.push(S::of(wa[i]));
            }
        }
        2 => {
            let (tb, wb) = gauss_jacobi_01(m, 1);
            for j in 0..m {
                for i in 0..m {
                    let x = ta[i] * (1.0 - tb[j]);
                    let y = tb[j];
                    points.push([S::of(x), S::of(y), S::zero()]);
                    weights.push(S::of(wa[i] * wb[j]));
                }
            }
        }
        3 => {
            let (tb, wb) = gauss_jacobi_01(m, 1);
            let (tc, wc) = gauss_jacobi_01(m, 2);
            for k in 0..m {
                for j in 0..m {
                    for i in 0..m {
                        let x = ta[i] * (1.0 - tb[j]) * (1.0 - tc[k]);
                        let y = tb[j] * (1.0 - tc[k]);
                        let z = tc[k];
                        points.push([S::of(x), S::of(y), S::of(z)]);
                        weights.push(S::of(wa[i] * wb[j] * wc[k]));
                    }
                }
            }
        }
        _ => unreachable!(),
    }
    QuadratureRule { dim, degree: 2 * m - 1, points, weights }
}

/// Jacobi polynomial P_m^{(alpha, 0)} evaluated at x in [-1, 1].
fn jacobi(m: usize, alpha: f64, x: f64) -> f64 {
    if m == 0 {
        return 1.0;
    }
    let mut p_prev = 1.0;
    let mut p = (alpha + 1.0) + (alpha + 2.0) * (x - 1.0) / 2.0;
    for k in 2..=m {
        let n = k as f64;
        let a = 2.0 * n * (n + alpha) * (2.0 * n + alpha - 2.0);
        let b = 2.0 * n + alpha - 1.0;
        let c = (2.0 * n + alpha) * (2.0 * n + alpha - 2.0);
        let d = alpha * alpha;
        let e = 2.0 * (n + alpha - 1.0) * (n - 1.0) * (2.0 * n + alpha);
        let p_next = (b * (c * x + d) * p - e * p_prev) / a;
        p_prev = p;
        p = p_next;
    }
    p
}

/// Nodes and weights of the m-point Gauss-Jacobi rule on [0, 1] with weight
/// (1 - t)^alpha, for integer alpha. Roots are bracketed by sign changes and
/// refined by bisection; weights come from the exact monomial moments.
fn gauss_jacobi_01(m: usize, alpha: u32) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1);
    let a = alpha as f64;
    // roots of P_m^{(alpha,0)} on (-1, 1)
    let samples = 200 * m;
    let mut roots = Vec::with_capacity(m);
    let mut x_prev = -1.0 + 1e-12;
    let mut f_prev = jacobi(m, a, x_prev);
    for s in 1..=samples {
        let x = -1.0 + 2.0 * (s as f64) / (samples as f64) - 1e-12;
        let f = jacobi(m, a, x);
        if f_prev == 0.0 {
            roots.push(x_prev);
        } else if f_prev * f < 0.0 {
            let (mut lo, mut hi) = (x_prev, x);
            let mut flo = f_prev;
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                let fm = jacobi(m, a, mid);
                if fm == 0.0 {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if flo * fm < 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                    flo = fm;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        x_prev = x;
        f_prev = f;
    }
    assert_eq!(roots.len(), m, "expected {m} Jacobi roots, found {}", roots.len());
    let nodes: Vec<f64> = roots.iter().map(|x| 0.5 * (x + 1.0)).collect();

    // moments mu_k = int_0^1 t^k (1-t)^alpha dt = k! alpha! / (k + alpha + 1)!
    let mut moments = vec![0.0f64; m];
    for (k, mu) in moments.iter_mut().enumerate() {
        let mut v = 1.0;
        for i in 1..=alpha as usize {
            v *= i as f64;
        }
        for i in (k + 1)..=(k + alpha as usize + 1) {
            v /= i as f64;
        }
        *mu = v;
    }
    // solve the Vandermonde moment system for the weights
    let mut mat: Vec<Vec<f64>> = (0..m)
        .map(|k| nodes.iter().map(|t| t.powi(k as i32)).collect())
        .collect();
    let mut rhs = moments;
    for k in 0..m {
        let p = (k..m)
            .max_by(|&i, &j| mat[i][k].abs().partial_cmp(&mat[j][k].abs()).unwrap())
            .unwrap();
        mat.swap(k, p);
        rhs.swap(k, p);
        for i in (k + 1)..m {
            let f = mat[i][k] / mat[k][k];
            for j in k..m {
                mat[i][j] -= f * mat[k][j];
            }
            rhs[i] -= f * rhs[k];
        }
    }
    for k in (0..m).rev() {
        for j in (k + 1)..m {
            let r = rhs[j];
            rhs[k] -= mat[k][j] * r;
        }
        rhs[k] /= mat[k][k];
    }
    (nodes, rhs)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exact integral of x^p y^q z^r over the unit simplex: p! q! r! / (p+q+r+dim)!.
    fn exact_monomial(dim: usize, pows: [u32; 3]) -> f64 {
        let fact = |n: u32| (1..=n as u64).product::<u64>() as f64;
        let total: u32 = pows.iter().sum::<u32>() + dim as u32;
        fact(pows[0]) * fact(pows[1]) * fact(pows[2]) / fact(total)
    }

    #[test]
    fn weights_sum_to_reference_measure() {
        for (dim, measure) in [(1usize, 1.0), (2, 0.5), (3, 1.0 / 6.0)] {
            for degree in 1..=9 {
                let rule = simplex_rule::<f64>(dim, degree);
                let sum: f64 = rule.weights.iter().sum();
                assert!((sum - measure).abs() < 1e-13, "dim {dim} degree {degree}: {sum}");
                assert!(rule.weights.iter().all(|&w| w > 0.0));
            }
        }
    }

    #[test]
    fn monomials_integrate_exactly_up_to_declared_degree() {
        for dim in 1..=3usize {
            for degree in 1..=9usize {
                let rule = simplex_rule::<f64>(dim, degree);
                for p in 0..=degree as u32 {
                    for q in 0..=(degree as u32 - p) {
                        for r in 0..=(degree as u32 - p - q) {
                            if dim < 3 && r > 0 || dim < 2 && q > 0 {
                                continue;
                            }
                            let mut acc = 0.0;
                            for (pt, w) in rule.points.iter().zip(&rule.weights) {
                                acc += w * pt[0].powi(p as i32) * pt[1].powi(q as i32) * pt[2].powi(r as i32);
                            }
                            let exact = exact_monomial(dim, [p, q, r]);
                            assert!(
                                (acc - exact).abs() < 1e-12 * (1.0 + exact.abs()),
                                "dim {dim} deg {degree} mono ({p},{q},{r}): {acc} vs {exact}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn points_lie_inside_the_simplex() {
        for dim in 1..=3usize {
            let rule = simplex_rule::<f64>(dim, 7);
            for pt in &rule.points {
                let sum: f64 = pt.iter().take(dim).sum();
                assert!(pt.iter().take(dim).all(|&c| c > 0.0) && sum < 1.0);
            }
        }
    }
}
