//! Derivative-free minimization (Nelder-Mead simplex).

#[derive(Debug, Clone)]
pub struct NelderMead {
    pub max_evals: usize,
    /// Stop when the spread of simplex values falls below this (absolute).
    pub f_tol: f64,
    /// ... and the simplex diameter falls below this.
    pub x_tol: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        Self {
            max_evals: 2000,
            f_tol: 1e-10,
            x_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

impl NelderMead {
    /// Minimizes `f` from `x0` with initial simplex offsets `step`.
    /// Non-finite objective values are treated as +infinity.
    pub fn minimize(&self, mut f: impl FnMut(&[f64]) -> f64, x0: &[f64], step: &[f64]) -> Minimum {
        let n = x0.len();
        let mut evals = 0;
        let mut eval = |x: &[f64], evals: &mut usize| {
            *evals += 1;
            let v = f(x);
            if v.is_finite() {
                v
            } else {
                f64::INFINITY
            }
        };

        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        simplex.push((x0.to_vec(), eval(x0, &mut evals)));
        for i in 0..n {
            let mut x = x0.to_vec();
            x[i] += step[i];
            let v = eval(&x, &mut evals);
            simplex.push((x, v));
        }

        let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
        let mut converged = false;
        while evals < self.max_evals {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let best = simplex[0].1;
            let worst = simplex[n].1;
            let diameter = simplex[1..]
                .iter()
                .map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                .fold(0.0, f64::max);
            if (worst - best).abs() <= self.f_tol && diameter <= self.x_tol {
                converged = true;
                break;
            }

            let centroid: Vec<f64> = (0..n)
                .map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64)
                .collect();
            let along = |t: f64| -> Vec<f64> {
                centroid.iter().zip(&simplex[n].0).map(|(c, w)| c + t * (w - c)).collect()
            };

            let xr = along(-alpha);
            let fr = eval(&xr, &mut evals);
            if fr < simplex[0].1 {
                let xe = along(-gamma);
                let fe = eval(&xe, &mut evals);
                simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else if fr < simplex[n - 1].1 {
                simplex[n] = (xr, fr);
            } else {
                let (xc, fc) = if fr < simplex[n].1 {
                    let xc = along(-rho);
                    let fc = eval(&xc, &mut evals);
                    (xc, fc)
                } else {
                    let xc = along(rho);
                    let fc = eval(&xc, &mut evals);
                    (xc, fc)
                };
                if fc < simplex[n].1.min(fr) {
                    simplex[n] = (xc, fc);
                } else {
                    let x_best = simplex[0].0.clone();
                    for (x, v) in simplex.iter_mut().skip(1) {
                        for (xi, bi) in x.iter_mut().zip(&x_best) {
                            *xi = bi + sigma * (*xi - bi);
                        }
                        *v = eval(x, &mut evals);
                    }
                }
            }
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (x, value) = simplex.swap_remove(0);
        Minimum {
            x,
            value,
            evals,
            converged,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let nm = NelderMead {
            max_evals: 10_000,
            ..Default::default()
        };
        let m = nm.minimize(
            |x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
            &[-1.2, 1.0],
            &[0.5, 0.5],
        );
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5, "{:?}", m.x);
    }

    #[test]
    fn never_worse_than_start() {
        let nm = NelderMead {
            max_evals: 5,
            ..Default::default()
        };
        let f = |x: &[f64]| (x[0] - 3.0).powi(2);
        let m = nm.minimize(f, &[0.0], &[0.1]);
        assert!(m.value <= 9.0);
    }
}
