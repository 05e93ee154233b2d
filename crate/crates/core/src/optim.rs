//! Derivative-free simplex search, finite-difference BFGS and the hybrid
//! schedule that runs the first until it stalls and then polishes with the
//! second.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;


#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadOptions {
    pub max_iter: usize,
    /// Stop when every vertex is within this distance (sup norm) of the best.
    pub tol_x: f64,
    pub initial_step: f64,
    /// Stop once the best value improved by less than `rel` (relative) over
    /// the last `window` iterations.
    pub stall: Option<(usize, f64)>,
    pub max_evals: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol_x: 1e-6,
            initial_step: 0.25,
            stall: None,
            max_evals: usize::MAX,
        }
    }
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Nelder-Mead with dimension-adaptive coefficients.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], opts: &NelderMeadOptions) -> OptimResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        sanitize(f(x))
    };
    if n == 0 {
        let v = eval(x0, &mut evals);
        return OptimResult {
            x: Vec::new(),
            value: v,
            evaluations: evals,
            iterations: 0,
            converged: true,
        };
    }
    let nf = n as f64;
    let (alpha, gamma, rho, sigma) = if n >= 2 {
        (1.0, 1.0 + 2.0 / nf, 0.75 - 1.0 / (2.0 * nf), 1.0 - 1.0 / nf)
    } else {
        (1.0, 2.0, 0.5, 0.5)
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut values: Vec<f64> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    values.push(eval(x0, &mut evals));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += opts.initial_step;
        values.push(eval(&x, &mut evals));
        simplex.push(x);
    }

    let mut order: Vec<usize> = (0..=n).collect();
    let mut history: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut centroid = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial2 = vec![0.0; n];

    loop {
        // stable sort keeps the earliest vertex first on ties
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let best = order[0];
        let worst = order[n];
        let second_worst = order[n - 1];

        let diameter = simplex
            .iter()
            .map(|x| {
                x.iter()
                    .zip(&simplex[best])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if diameter < opts.tol_x {
            converged = true;
            break;
        }
        if let Some((window, rel)) = opts.stall {
            history.push(values[best]);
            if history.len() > window {
                let old = history[history.len() - 1 - window];
                let now = values[best];
                if old - now <= rel * (now.abs() + 1e-12) {
                    converged = true;
                    break;
                }
            }
        }
        if iterations >= opts.max_iter || evals >= opts.max_evals {
            break;
        }
        iterations += 1;

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for &i in &order[..n] {
            for (c, x) in centroid.iter_mut().zip(&simplex[i]) {
                *c += x;
            }
        }
        centroid.iter_mut().for_each(|c| *c /= nf);

        for k in 0..n {
            trial[k] = centroid[k] + alpha * (centroid[k] - simplex[worst][k]);
        }
        let fr = eval(&trial, &mut evals);

        if fr < values[best] {
            for k in 0..n {
                trial2[k] = centroid[k] + gamma * (trial[k] - centroid[k]);
            }
            let fe = eval(&trial2, &mut evals);
            if fe < fr {
                simplex[worst].copy_from_slice(&trial2);
                values[worst] = fe;
            } else {
                simplex[worst].copy_from_slice(&trial);
                values[worst] = fr;
            }
            continue;
        }
        if fr < values[second_worst] {
            simplex[worst].copy_from_slice(&trial);
            values[worst] = fr;
            continue;
        }
        let accepted = if fr < values[worst] {
            for k in 0..n {
                trial2[k] = centroid[k] + rho * (trial[k] - centroid[k]);
            }
            let fc = eval(&trial2, &mut evals);
            if fc <= fr {
                simplex[worst].copy_from_slice(&trial2);
                values[worst] = fc;
                true
            } else {
                false
            }
        } else {
            for k in 0..n {
                trial2[k] = centroid[k] + rho * (simplex[worst][k] - centroid[k]);
            }
            let fc = eval(&trial2, &mut evals);
            if fc < values[worst] {
                simplex[worst].copy_from_slice(&trial2);
                values[worst] = fc;
                true
            } else {
                false
            }
        };
        if !accepted {
            let anchor = simplex[best].clone();
            for &i in &order[1..] {
                for (x, a) in simplex[i].iter_mut().zip(&anchor) {
                    *x = a + sigma * (*x - a);
                }
                values[i] = eval(&simplex[i], &mut evals);
            }
        }
    }

    let best = (0..=n)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .unwrap_or(0);
    OptimResult {
        x: simplex[best].clone(),
        value: values[best],
        evaluations: evals,
        iterations,
        converged,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BfgsOptions {
    /// Budget of objective evaluations, with each finite-difference
    /// gradient counted as a single evaluation.
    pub max_evals: usize,
    /// Stop once the gradient norm is below `grad_tol * (1 + |f|)`.
    pub grad_tol: f64,
    /// Central-difference step is `fd_step * (1 + |x_i|)`.
    pub fd_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_evals: 500,
            grad_tol: 1e-6,
            fd_step: 1e-5,
        }
    }
}

fn fd_gradient<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    x: &[f64],
    step: f64,
    evals: &mut usize,
) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = step * (1.0 + x[i].abs());
            probe[i] = x[i] + h;
            let up = sanitize(f(&probe));
            probe[i] = x[i] - h;
            let down = sanitize(f(&probe));
            probe[i] = x[i];
            *evals += 2;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Quasi-Newton minimization with finite-difference gradients and a
/// backtracking Armijo line search.
pub fn bfgs<F>(mut f: F, x0: &[f64], opts: &BfgsOptions) -> OptimResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut evals = 1usize;
    let mut x = x0.to_vec();
    let mut fx = sanitize(f(&x));
    if n == 0 || !fx.is_finite() {
        return OptimResult {
            x,
            value: fx,
            evaluations: evals,
            iterations: 0,
            converged: n == 0,
        };
    }
    let mut g = fd_gradient(&mut f, &x, opts.fd_step, &mut evals);
    let mut budget = 2usize;
    // inverse Hessian approximation, row-major
    let mut hinv = vec![0.0; n * n];
    let reset = |h: &mut [f64], scale: f64| {
        h.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            h[i * n + i] = scale;
        }
    };
    reset(&mut hinv, 1.0);
    let mut fresh = true;
    let mut iterations = 0;
    let mut converged = false;
    let mut dir = vec![0.0; n];
    let mut xn = vec![0.0; n];

    loop {
        if norm(&g) < opts.grad_tol * (1.0 + fx.abs()) {
            converged = true;
            break;
        }
        if budget >= opts.max_evals {
            break;
        }
        iterations += 1;
        for i in 0..n {
            dir[i] = -(0..n).map(|j| hinv[i * n + j] * g[j]).sum::<f64>();
        }
        let mut slope = dot(&dir, &g);
        if slope >= 0.0 {
            reset(&mut hinv, 1.0);
            fresh = true;
            for i in 0..n {
                dir[i] = -g[i];
            }
            slope = dot(&dir, &g);
        }
        if fresh {
            // keep the first step modest relative to the point's scale
            let scale = (1.0 + norm(&x)) / norm(&dir).max(1e-300);
            if scale < 1.0 {
                dir.iter_mut().for_each(|d| *d *= scale);
                slope *= scale;
            }
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            for i in 0..n {
                xn[i] = x[i] + t * dir[i];
            }
            let fxn = sanitize(f(&xn));
            evals += 1;
            budget += 1;
            if fxn <= fx + 1e-4 * t * slope {
                accepted = Some(fxn);
                break;
            }
            t *= 0.5;
        }
        let Some(fxn) = accepted else {
            if fresh {
                break;
            }
            reset(&mut hinv, 1.0);
            fresh = true;
            continue;
        };
        let gn = fd_gradient(&mut f, &xn, opts.fd_step, &mut evals);
        budget += 1;
        let s: Vec<f64> = (0..n).map(|i| xn[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| gn[i] - g[i]).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            if fresh {
                reset(&mut hinv, sy / dot(&y, &y));
            }
            let hy: Vec<f64> = (0..n)
                .map(|i| (0..n).map(|j| hinv[i * n + j] * y[j]).sum())
                .collect();
            let yhy = dot(&y, &hy);
            let rho = 1.0 / sy;
            for i in 0..n {
                for j in 0..n {
                    hinv[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j])
                        + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
            fresh = false;
        }
        x.copy_from_slice(&xn);
        fx = fxn;
        g = gn;
    }
    OptimResult {
        x,
        value: fx,
        evaluations: evals,
        iterations,
        converged,
    }
}

/// Newton iterations on finite-difference derivatives, for the last digits
/// that a value-based line search cannot resolve: near a minimum the change
/// in `f` drops below rounding long before the gradient does.
///
/// A step is kept only when it shrinks the gradient norm without raising
/// `f` by more than `slack` (relative). Converged means the final gradient
/// norm is below `grad_tol * (1 + |f|)`. Meant for low dimensions; each step
/// costs `O(n^2)` evaluations.
pub fn newton_polish<F>(mut f: F, x0: &[f64], fd_step: f64, max_steps: usize, slack: f64, grad_tol: f64) -> OptimResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut evals = 1usize;
    let mut x = x0.to_vec();
    let mut fx = sanitize(f(&x));
    let mut g = fd_gradient(&mut f, &x, fd_step, &mut evals);
    let mut iterations = 0;
    let mut xt = x.clone();
    for _ in 0..max_steps {
        if n == 0 || !fx.is_finite() {
            break;
        }
        let h = fd_step;
        let mut hess = nalgebra::DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let mut at = |di: f64, dj: f64| {
                    xt.copy_from_slice(&x);
                    xt[i] += di;
                    xt[j] += dj;
                    evals += 1;
                    sanitize(f(&xt))
                };
                let v = if i == j {
                    (at(h, 0.0) - 2.0 * fx + at(-h, 0.0)) / (h * h)
                } else {
                    (at(h, h) - at(h, -h) - at(-h, h) + at(-h, -h)) / (4.0 * h * h)
                };
                hess[(i, j)] = v;
                hess[(j, i)] = v;
            }
        }
        let Some(chol) = nalgebra::Cholesky::new(hess) else {
            break;
        };
        let step = chol.solve(&nalgebra::DVector::from_column_slice(&g));
        for i in 0..n {
            xt[i] = x[i] - step[i];
        }
        let ft = sanitize(f(&xt));
        evals += 1;
        if !(ft <= fx + slack * (1.0 + fx.abs())) {
            break;
        }
        let xn = xt.clone();
        let gn = fd_gradient(&mut f, &xn, fd_step, &mut evals);
        if norm(&gn) >= norm(&g) {
            break;
        }
        iterations += 1;
        x = xn;
        fx = ft;
        g = gn;
    }
    OptimResult {
        x,
        value: fx,
        evaluations: evals,
        iterations,
        converged: norm(&g) < grad_tol * (1.0 + fx.abs()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridOptions {
    pub simplex: NelderMeadOptions,
    pub quasi_newton: BfgsOptions,
}

impl Default for HybridOptions {
    fn default() -> Self {
        Self {
            simplex: NelderMeadOptions {
                max_iter: 5_000,
                tol_x: 1e-8,
                initial_step: 0.1,
                stall: Some((20, 1e-4)),
                max_evals: 20_000,
            },
            quasi_newton: BfgsOptions::default(),
        }
    }
}

/// Simplex search until the stall criterion fires, then BFGS from the best
/// simplex vertex. Convergence is judged by the BFGS gradient norm.
pub fn hybrid<F>(mut f: F, x0: &[f64], opts: &HybridOptions) -> OptimResult
where
    F: FnMut(&[f64]) -> f64,
{
    let stage1 = nelder_mead(&mut f, x0, &opts.simplex);
    let stage2 = bfgs(&mut f, &stage1.x, &opts.quasi_newton);
    let (x, value) = if stage2.value <= stage1.value {
        (stage2.x, stage2.value)
    } else {
        (stage1.x, stage1.value)
    };
    OptimResult {
        x,
        value,
        evaluations: stage1.evaluations + stage2.evaluations,
        iterations: stage1.iterations + stage2.iterations,
        converged: stage2.converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    #[test]
    fn nelder_mead_quadratic() {
        let r = nelder_mead(
            |x: &[f64]| (x[0] - 1.0).powi(2) + 2.0 * (x[1] + 0.5).powi(2) + (x[2] - 3.0).powi(2),
            &[0.0, 0.0, 0.0],
            &NelderMeadOptions {
                max_iter: 2000,
                tol_x: 1e-9,
                ..Default::default()
            },
        );
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] + 0.5).abs() < 1e-6);
    }

    #[test]
    fn nelder_mead_keeps_start_when_it_is_optimal() {
        let r = nelder_mead(|x: &[f64]| x.iter().map(|v| v * v).sum(), &[0.0; 5], &Default::default());
        assert_eq!(r.x, vec![0.0; 5]);
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn bfgs_rosenbrock() {
        let r = bfgs(
            rosenbrock,
            &[-1.2, 1.0],
            &BfgsOptions {
                max_evals: 5000,
                grad_tol: 1e-7,
                fd_step: 1e-6,
            },
        );
        assert!(r.converged, "{r:?}");
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn hybrid_reaches_gradient_tolerance() {
        let r = hybrid(rosenbrock, &[-1.2, 1.0], &HybridOptions::default());
        assert!(r.converged);
        assert!(r.value < 1e-10);
    }

    #[test]
    fn nan_is_treated_as_infinite() {
        let r = nelder_mead(
            |x: &[f64]| if x[0] < 0.0 { f64::NAN } else { (x[0] - 0.5).powi(2) },
            &[0.2],
            &Default::default(),
        );
        assert!((r.x[0] - 0.5).abs() < 1e-5);
    }
}
