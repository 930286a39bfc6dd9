//! Limited-memory BFGS with Armijo backtracking.

use std::collections::VecDeque;

use crate::error::Result;

pub trait Problem {
    fn value_and_gradient(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)>;

    /// Orthogonal projection onto the admissible subspace, applied to every
    /// trial point and gradient. Identity by default.
    fn project(&self, _v: &mut [f64]) {}

    /// Known quadratic part of the objective used to shape the initial
    /// inverse Hessian. `None` uses the scalar `s^T y / y^T y` scaling.
    fn preconditioner(&self) -> Option<&dyn Preconditioner> {
        None
    }
}

/// Quadratic part `1/2 x^T B x` of an objective.
pub trait Preconditioner {
    /// `v^T B v`.
    fn quadratic_form(&self, v: &[f64]) -> f64;

    /// Overwrites `v` with `(B + mu I)^{-1} v`.
    fn solve_shifted(&self, v: &mut [f64], mu: f64);
}

impl<F> Problem for F
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    fn value_and_gradient(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iterations: usize,
    /// Sufficient-decrease constant of the Armijo test.
    pub armijo_c1: f64,
    /// Backtracking gives up below this step.
    pub min_step: f64,
    /// Stop when `|g| <= gradient_tolerance`.
    pub gradient_tolerance: f64,
    /// Stop when `|g| <= relative_tolerance * |g_0|`.
    pub relative_tolerance: f64,
    /// Length of the very first (steepest-descent) trial step.
    pub initial_step: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            memory: 10,
            max_iterations: 100,
            armijo_c1: 1e-4,
            min_step: 1e-10,
            gradient_tolerance: 1e-10,
            relative_tolerance: 0.0,
            initial_step: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    MaxIterations,
    LineSearchFailed,
}

/// State after each accepted iterate (iteration 0 is the start point).
#[derive(Debug, Clone, PartialEq)]
pub struct Iterate {
    pub iteration: usize,
    pub value: f64,
    pub gradient_norm: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient_norm: f64,
    pub termination: Termination,
    pub history: Vec<Iterate>,
    pub evaluations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Minimizes `problem` from `x0`. `on_accept` sees every accepted iterate
/// together with its position.
pub fn lbfgs_minimize<P: Problem + ?Sized>(
    problem: &mut P,
    x0: &[f64],
    cfg: &LbfgsConfig,
    mut on_accept: impl FnMut(&Iterate, &[f64]) -> Result<()>,
) -> Result<LbfgsResult> {
    let mut x = x0.to_vec();
    problem.project(&mut x);
    let (mut f, mut g) = problem.value_and_gradient(&x)?;
    problem.project(&mut g);
    let mut evaluations = 1;
    let g0 = norm(&g);
    let mu_floor = 1e-6 * first_shift(&g, cfg.initial_step);
    let mut history = Vec::new();
    let first = Iterate {
        iteration: 0,
        value: f,
        gradient_norm: g0,
        evaluations,
    };
    on_accept(&first, &x)?;
    history.push(first);

    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut termination = Termination::MaxIterations;
    for k in 1..=cfg.max_iterations {
        let gn = norm(&g);
        if gn <= cfg.gradient_tolerance || gn <= cfg.relative_tolerance * g0 {
            termination = Termination::GradientTolerance;
            break;
        }
        let mut d = two_loop(&mem, &g, |q| initial_inverse(problem.preconditioner(), &mem, q, mu_floor));
        let mut slope = dot(&g, &d);
        if mem.is_empty() || slope >= 0.0 {
            mem.clear();
            let mu = first_shift(&g, cfg.initial_step);
            d = g.iter().map(|v| -v).collect();
            match problem.preconditioner() {
                Some(p) => p.solve_shifted(&mut d, mu),
                None => d.iter_mut().for_each(|v| *v /= mu),
            }
            slope = dot(&g, &d);
        }

        let mut step = 1.0;
        let accepted = loop {
            let mut xt: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            problem.project(&mut xt);
            let (ft, mut gt) = problem.value_and_gradient(&xt)?;
            evaluations += 1;
            if ft.is_finite() && ft <= f + cfg.armijo_c1 * step * slope {
                problem.project(&mut gt);
                break Some((xt, ft, gt));
            }
            step *= 0.5;
            if step < cfg.min_step {
                break None;
            }
        };
        let Some((xt, ft, gt)) = accepted else {
            termination = Termination::LineSearchFailed;
            break;
        };

        let s: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            if mem.len() == cfg.memory {
                mem.pop_front();
            }
            mem.push_back((s, y, 1.0 / sy));
        }
        x = xt;
        f = ft;
        g = gt;
        let it = Iterate {
            iteration: k,
            value: f,
            gradient_norm: norm(&g),
            evaluations,
        };
        on_accept(&it, &x)?;
        history.push(it);
    }
    Ok(LbfgsResult {
        gradient_norm: norm(&g),
        x,
        value: f,
        termination,
        history,
        evaluations,
    })
}

/// Shift that makes the first steepest-descent step move the largest
/// coordinate by `initial_step`.
fn first_shift(g: &[f64], initial_step: f64) -> f64 {
    let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if gmax > 0.0 {
        gmax / initial_step
    } else {
        1.0
    }
}

/// `H_0 q`: `(B + mu I)^{-1} q` with `mu` the curvature of the remaining
/// part along the last step, or the scalar `s^T y / y^T y` scaling.
fn initial_inverse(
    pre: Option<&dyn Preconditioner>,
    mem: &VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    q: &mut [f64],
    mu_floor: f64,
) {
    let Some((s, y, _)) = mem.back() else { return };
    match pre {
        Some(p) => {
            let ss = dot(s, s);
            let mu = ((dot(s, y) - p.quadratic_form(s)) / ss).max(mu_floor);
            p.solve_shifted(q, mu);
        }
        None => {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
    }
}

/// `-H g` from the stored curvature pairs.
fn two_loop(
    mem: &VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    g: &[f64],
    h0: impl FnOnce(&mut [f64]),
) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(mem.len());
    for (s, y, rho) in mem.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    h0(&mut q);
    for ((s, y, rho), a) in mem.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadratic_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let target: Vec<f64> = (0..20).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let x0: Vec<f64> = (0..20).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let t = target.clone();
        let mut f = move |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let r: Vec<f64> = x.iter().zip(&t).map(|(a, b)| a - b).collect();
            Ok((0.5 * dot(&r, &r), r))
        };
        let cfg = LbfgsConfig { max_iterations: 30, ..Default::default() };
        let res = lbfgs_minimize(&mut f, &x0, &cfg, |_, _| Ok(())).unwrap();
        assert!(res.history.len() <= 31);
        for (a, b) in res.x.iter().zip(&target) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn rosenbrock() {
        let mut f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            Ok((v, g))
        };
        let cfg = LbfgsConfig { max_iterations: 500, ..Default::default() };
        let res = lbfgs_minimize(&mut f, &[-1.2, 1.0], &cfg, |_, _| Ok(())).unwrap();
        assert!(res.value < 1e-6, "value {}", res.value);
        assert!(res.history.windows(2).all(|w| w[1].value <= w[0].value));
        assert!(res.history.windows(2).all(|w| w[1].iteration == w[0].iteration + 1));
    }

    struct MeanFree;

    impl Problem for MeanFree {
        fn value_and_gradient(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
            // minimum at (1, 2, 3) which has mean 2
            let t = [1.0, 2.0, 3.0];
            let r: Vec<f64> = x.iter().zip(&t).map(|(a, b)| a - b).collect();
            Ok((0.5 * dot(&r, &r), r))
        }

        fn project(&self, v: &mut [f64]) {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter_mut().for_each(|x| *x -= m);
        }
    }

    #[test]
    fn projection_keeps_iterates_in_subspace() {
        let cfg = LbfgsConfig::default();
        let res = lbfgs_minimize(&mut MeanFree, &[5.0, 0.0, 1.0], &cfg, |_, x| {
            assert!(x.iter().sum::<f64>().abs() < 1e-12);
            Ok(())
        })
        .unwrap();
        assert!((res.x[0] + 1.0).abs() < 1e-8 && res.x[1].abs() < 1e-8 && (res.x[2] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn line_search_failure_keeps_best_iterate() {
        // gradient points the wrong way: no descent possible
        let mut f = |x: &[f64]| -> Result<(f64, Vec<f64>)> { Ok((x[0], vec![-1.0])) };
        let res = lbfgs_minimize(&mut f, &[0.0], &LbfgsConfig::default(), |_, _| Ok(())).unwrap();
        assert_eq!(res.termination, Termination::LineSearchFailed);
        assert_eq!(res.x, vec![0.0]);
    }
}
