//! Derivative-free minimization for the small nonlinear fits.

/// Nelder-Mead settings. Convergence needs both the simplex diameter and the
/// spread of function values below their tolerances.
#[derive(Debug, Clone, Copy)]
pub struct NelderMead {
    pub x_tol: f64,
    pub f_tol: f64,
    pub max_iter: usize,
    /// Initial simplex edge along each coordinate.
    pub step: f64,
    /// Restarts from the best vertex with a fresh simplex.
    pub restarts: usize,
}

impl Default for NelderMead {
    fn default() -> Self {
        NelderMead { x_tol: 1e-10, f_tol: 1e-22, max_iter: 4000, step: 0.5, restarts: 2 }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
}

impl NelderMead {
    pub fn minimize<F: FnMut(&[f64]) -> f64>(&self, mut f: F, start: &[f64]) -> Minimum {
        let mut best = self.run(&mut f, start);
        for _ in 0..self.restarts {
            let again = self.run(&mut f, &best.x);
            let improved = again.f < best.f;
            let iterations = best.iterations + again.iterations;
            if improved {
                best = again;
            }
            best.iterations = iterations;
            if !improved {
                break;
            }
        }
        best
    }

    fn run<F: FnMut(&[f64]) -> f64>(&self, f: &mut F, start: &[f64]) -> Minimum {
        let d = start.len();
        let eval = |f: &mut F, x: &[f64]| {
            let v = f(x);
            if v.is_nan() {
                f64::INFINITY
            } else {
                v
            }
        };
        let mut simplex: Vec<Vec<f64>> = vec![start.to_vec()];
        for i in 0..d {
            let mut p = start.to_vec();
            p[i] += self.step;
            simplex.push(p);
        }
        let mut values: Vec<f64> = simplex.iter().map(|p| eval(f, p)).collect();
        let mut iterations = 0;
        while iterations < self.max_iter {
            iterations += 1;
            let mut order: Vec<usize> = (0..=d).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            values = order.iter().map(|&i| values[i]).collect();

            let diameter = simplex[1..]
                .iter()
                .map(|p| p.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                .fold(0.0, f64::max);
            if diameter < self.x_tol && (values[d] - values[0]).abs() <= self.f_tol.max(1e-15 * values[0].abs()) {
                break;
            }

            let centroid: Vec<f64> =
                (0..d).map(|j| simplex[..d].iter().map(|p| p[j]).sum::<f64>() / d as f64).collect();
            let along = |t: f64| -> Vec<f64> { (0..d).map(|j| centroid[j] + t * (simplex[d][j] - centroid[j])).collect() };

            let reflected = along(-1.0);
            let fr = eval(f, &reflected);
            if fr < values[0] {
                let expanded = along(-2.0);
                let fe = eval(f, &expanded);
                if fe < fr {
                    simplex[d] = expanded;
                    values[d] = fe;
                } else {
                    simplex[d] = reflected;
                    values[d] = fr;
                }
                continue;
            }
            if fr < values[d - 1] {
                simplex[d] = reflected;
                values[d] = fr;
                continue;
            }
            let (contracted, fc) = if fr < values[d] {
                let p = along(-0.5);
                let v = eval(f, &p);
                (p, v)
            } else {
                let p = along(0.5);
                let v = eval(f, &p);
                (p, v)
            };
            if fc < values[d].min(fr) {
                simplex[d] = contracted;
                values[d] = fc;
                continue;
            }
            for i in 1..=d {
                let p: Vec<f64> = (0..d).map(|j| simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j])).collect();
                values[i] = eval(f, &p);
                simplex[i] = p;
            }
        }
        let i = (0..=d).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap_or(0);
        Minimum { x: simplex[i].clone(), f: values[i], iterations }
    }
}
