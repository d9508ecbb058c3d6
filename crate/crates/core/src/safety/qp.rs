//! Dense dual active-set solver for Euclidean projection onto a polyhedron:
//!
//! ```text
//! minimize ½‖x − x₀‖²   subject to   nᵢ·x ≥ bᵢ
//! ```
//!
//! This is the Goldfarb–Idnani method specialized to an identity Hessian.
//! It starts from the unconstrained minimizer, repeatedly adds the most
//! violated constraint and drops blocking ones, and certifies infeasibility
//! when a violated constraint is linearly dependent on the active set with no
//! multiplier left to release. Ties are broken by the lowest index so the
//! iteration sequence is fully deterministic.

use nalgebra::{DMatrix, DVector};

#[derive(Clone, Debug, PartialEq)]
pub struct LinearConstraint {
    pub normal: DVector<f64>,
    pub offset: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionSolution {
    pub x: DVector<f64>,
    /// Multipliers, one per input constraint (zero for inactive ones).
    pub multipliers: Vec<f64>,
    pub active: Vec<usize>,
    pub feasible: bool,
    pub iterations: usize,
}

const MAX_ITERATIONS: usize = 200;

fn slack(c: &LinearConstraint, x: &DVector<f64>) -> f64 {
    c.normal.dot(x) - c.offset
}

/// Solves the projection problem. `x0` must be finite.
pub fn project(x0: &DVector<f64>, constraints: &[LinearConstraint]) -> ProjectionSolution {
    let n = x0.len();
    let mut x = x0.clone();
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut iterations = 0;

    let scale = |c: &LinearConstraint| 1.0 + c.offset.abs() + c.normal.amax();
    let violation_tol = |c: &LinearConstraint| 1e-12 * scale(c);

    loop {
        // most violated inactive constraint, lowest index on ties
        let mut pick: Option<(usize, f64)> = None;
        for (i, c) in constraints.iter().enumerate() {
            if active.contains(&i) {
                continue;
            }
            let s = slack(c, &x);
            if s < -violation_tol(c) && pick.map_or(true, |(_, best)| s < best) {
                pick = Some((i, s));
            }
        }
        let Some((p, _)) = pick else {
            let mut multipliers = vec![0.0; constraints.len()];
            for (k, &j) in active.iter().enumerate() {
                multipliers[j] = u[k];
            }
            return ProjectionSolution {
                x,
                multipliers,
                active,
                feasible: true,
                iterations,
            };
        };

        let np = &constraints[p].normal;
        let mut up = 0.0;
        loop {
            iterations += 1;
            if iterations > MAX_ITERATIONS {
                return infeasible(x, constraints.len(), active, u, iterations);
            }
            let k = active.len();
            // r solves (N Nᵀ) r = N n_p, z = n_p − Nᵀ r
            let (r, z) = if k == 0 {
                (DVector::zeros(0), np.clone())
            } else {
                let nmat = DMatrix::from_fn(k, n, |a, b| constraints[active[a]].normal[b]);
                let gram = &nmat * nmat.transpose();
                let rhs = &nmat * np;
                let r = match gram.clone().cholesky() {
                    Some(ch) => ch.solve(&rhs),
                    None => gram.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(k)),
                };
                let z = np - nmat.transpose() * &r;
                (r, z)
            };

            // largest dual step that keeps active multipliers nonnegative
            let mut t1 = f64::INFINITY;
            let mut block = None;
            for j in 0..k {
                if r[j] > 1e-14 {
                    let t = u[j] / r[j];
                    if t < t1 {
                        t1 = t;
                        block = Some(j);
                    }
                }
            }
            let zz = z.norm_squared();
            let sp = slack(&constraints[p], &x);
            let t2 = if zz > 1e-14 * np.norm_squared().max(1e-300) {
                -sp / zz
            } else {
                f64::INFINITY
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                return infeasible(x, constraints.len(), active, u, iterations);
            }
            if t2.is_finite() {
                x += &z * t;
            }
            for j in 0..k {
                u[j] -= t * r[j];
            }
            up += t;
            if t2 <= t1 {
                active.push(p);
                u.push(up);
                break;
            }
            let drop = block.expect("blocking constraint exists when t1 < t2");
            active.remove(drop);
            u.remove(drop);
        }
    }
}

fn infeasible(
    x: DVector<f64>,
    m: usize,
    active: Vec<usize>,
    u: Vec<f64>,
    iterations: usize,
) -> ProjectionSolution {
    let mut multipliers = vec![0.0; m];
    for (k, &j) in active.iter().enumerate() {
        multipliers[j] = u[k];
    }
    ProjectionSolution {
        x,
        multipliers,
        active,
        feasible: false,
        iterations,
    }
}

/// Largest KKT residual: stationarity, primal and dual feasibility and
/// complementary slackness.
pub fn kkt_residual(x0: &DVector<f64>, constraints: &[LinearConstraint], sol: &ProjectionSolution) -> f64 {
    let mut grad = &sol.x - x0;
    let mut worst: f64 = 0.0;
    for (c, &l) in constraints.iter().zip(&sol.multipliers) {
        grad -= &c.normal * l;
        let s = slack(c, &sol.x);
        worst = worst.max((-s).max(0.0)).max((-l).max(0.0)).max((l * s).abs());
    }
    worst.max(grad.amax())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(n: &[f64], b: f64) -> LinearConstraint {
        LinearConstraint {
            normal: DVector::from_column_slice(n),
            offset: b,
        }
    }

    #[test]
    fn unconstrained_returns_start() {
        let x0 = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        let sol = project(&x0, &[]);
        assert!(sol.feasible);
        assert_eq!(sol.x, x0);
    }

    #[test]
    fn single_halfspace_projection() {
        let x0 = DVector::from_vec(vec![0.0, 0.0, 0.0]);
        let sol = project(&x0, &[c(&[1.0, 1.0, 0.0], 2.0)]);
        assert!(sol.feasible);
        assert!((sol.x[0] - 1.0).abs() < 1e-12 && (sol.x[1] - 1.0).abs() < 1e-12);
        assert!((sol.multipliers[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn opposing_halfspaces_are_infeasible() {
        let x0 = DVector::from_vec(vec![0.0, 0.0, 0.0]);
        let sol = project(&x0, &[c(&[1.0, 0.0, 0.0], 1.0), c(&[-1.0, 0.0, 0.0], 1.0)]);
        assert!(!sol.feasible);
    }

    #[test]
    fn drops_blocking_constraint() {
        // x ≥ 1 first, then x + y ≤ 0 pushes the solution to the corner
        let x0 = DVector::from_vec(vec![0.0, 0.0]);
        let cons = [c(&[1.0, 0.0], 1.0), c(&[-1.0, -1.0], 0.0), c(&[0.0, 1.0], -5.0)];
        let sol = project(&x0, &cons);
        assert!(sol.feasible);
        assert!(kkt_residual(&x0, &cons, &sol) < 1e-10);
        assert!((sol.x[0] - 1.0).abs() < 1e-12 && (sol.x[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn redundant_constraints() {
        let x0 = DVector::from_vec(vec![0.0, 0.0, 0.0]);
        let cons = [c(&[1.0, 0.0, 0.0], 1.0), c(&[2.0, 0.0, 0.0], 2.0), c(&[1.0, 0.0, 0.0], 0.5)];
        let sol = project(&x0, &cons);
        assert!(sol.feasible);
        assert!((sol.x[0] - 1.0).abs() < 1e-12);
        assert!(kkt_residual(&x0, &cons, &sol) < 1e-10);
    }
}
