//! Derivative-free minimization.
//!
//! Composite likelihood surfaces here are cheap per evaluation but not
//! smooth enough at the working tolerances for quasi-Newton methods to
//! pay off, so fitting runs on a plain Nelder-Mead simplex with a
//! restart around the incumbent before declaring convergence.

/// Tuning knobs for [`nelder_mead`].
#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    /// Hard cap on objective evaluations.
    pub max_evals: usize,
    /// Converged when the simplex f-spread drops below this.
    pub ftol: f64,
    /// Converged when the simplex diameter drops below this.
    pub xtol: f64,
    /// Initial displacement per coordinate, scaled by max(|x0_i|, 1).
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_evals: 20_000,
            ftol: 1e-10,
            xtol: 1e-8,
            initial_step: 0.1,
        }
    }
}

/// Outcome of a simplex run.
#[derive(Debug, Clone)]
pub struct OptimResult {
    /// Best point found.
    pub x: Vec<f64>,
    /// Objective value at `x`.
    pub fx: f64,
    /// Objective evaluations spent.
    pub evals: usize,
    /// Whether the simplex collapsed below the tolerances.
    pub converged: bool,
}

struct Simplex {
    points: Vec<(Vec<f64>, f64)>,
}

impl Simplex {
    fn order(&mut self) {
        self.points
            .sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    }

    fn centroid_excluding_worst(&self) -> Vec<f64> {
        let dim = self.points[0].0.len();
        let mut c = vec![0.0; dim];
        for (x, _) in &self.points[..self.points.len() - 1] {
            for (ci, xi) in c.iter_mut().zip(x) {
                *ci += xi;
            }
        }
        let m = (self.points.len() - 1) as f64;
        for ci in &mut c {
            *ci /= m;
        }
        c
    }

    fn f_spread(&self) -> f64 {
        self.points.last().unwrap().1 - self.points[0].1
    }

    fn diameter(&self) -> f64 {
        let best = &self.points[0].0;
        self.points[1..]
            .iter()
            .map(|(x, _)| {
                x.iter()
                    .zip(best)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }
}

fn lerp(c: &[f64], x: &[f64], t: f64) -> Vec<f64> {
    c.iter().zip(x).map(|(ci, xi)| ci + t * (xi - ci)).collect()
}

/// Minimizes `f` from `x0` with the Nelder-Mead simplex.
///
/// Non-finite objective values are treated as +inf so the simplex backs
/// away from invalid regions instead of poisoning the ordering. After the
/// first collapse the simplex is re-inflated once around the incumbent;
/// `converged` reports the second collapse.
pub fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    opts: &NelderMeadOptions,
) -> OptimResult {
    let dim = x0.len();
    assert!(dim > 0, "cannot optimize a zero-dimensional point");
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| -> f64 {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let build = |center: &[f64], step: f64, evals: &mut usize, eval: &mut dyn FnMut(&[f64], &mut usize) -> f64| {
        let mut points = Vec::with_capacity(dim + 1);
        points.push((center.to_vec(), eval(center, evals)));
        for i in 0..dim {
            let mut x = center.to_vec();
            x[i] += step * x[i].abs().max(1.0);
            let fx = eval(&x, evals);
            points.push((x, fx));
        }
        Simplex { points }
    };

    let mut simplex = build(x0, opts.initial_step, &mut evals, &mut eval);
    simplex.order();
    let mut restarted = false;
    let mut converged = false;

    while evals < opts.max_evals {
        if simplex.f_spread() <= opts.ftol && simplex.diameter() <= opts.xtol {
            if restarted || !simplex.points[0].1.is_finite() {
                converged = simplex.points[0].1.is_finite();
                break;
            }
            restarted = true;
            let best = simplex.points[0].0.clone();
            simplex = build(&best, opts.initial_step * 0.1, &mut evals, &mut eval);
            simplex.order();
            continue;
        }

        let centroid = simplex.centroid_excluding_worst();
        let worst = simplex.points.last().unwrap().clone();
        let second_worst = simplex.points[simplex.points.len() - 2].1;
        let best = simplex.points[0].1;

        let xr = lerp(&centroid, &worst.0, -1.0);
        let fr = eval(&xr, &mut evals);

        if fr < best {
            let xe = lerp(&centroid, &worst.0, -2.0);
            let fe = eval(&xe, &mut evals);
            *simplex.points.last_mut().unwrap() =
                if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < second_worst {
            *simplex.points.last_mut().unwrap() = (xr, fr);
        } else {
            // Contract toward the better of the worst point and its reflection.
            let (xc, fc) = if fr < worst.1 {
                let xc = lerp(&centroid, &xr, 0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = lerp(&centroid, &worst.0, 0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc < worst.1.min(fr) {
                *simplex.points.last_mut().unwrap() = (xc, fc);
            } else {
                // Shrink everything toward the best vertex.
                let best_x = simplex.points[0].0.clone();
                for (x, fx) in simplex.points.iter_mut().skip(1) {
                    *x = lerp(&best_x, x, 0.5);
                    *fx = eval(x, &mut evals);
                }
            }
        }
        simplex.order();
    }

    let (x, fx) = simplex.points.swap_remove(0);
    OptimResult {
        x,
        fx,
        evals,
        converged,
    }
}
