//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! Minimizes smooth unconstrained objectives via the classic two-loop
//! recursion over a short history of curvature pairs. The line search
//! only ever accepts decreasing steps, so the iterate cost is monotone;
//! enforcing the curvature condition keeps the quasi-Newton pairs well
//! scaled, which matters on stiff penalty objectives.

/// Options controlling the minimization loop.
#[derive(Debug, Clone)]
pub struct LbfgsOptions {
    /// Number of curvature pairs kept for the inverse-Hessian estimate.
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop when `||g|| < gradient_tolerance * max(1, |J|)`.
    pub gradient_tolerance: f64,
    /// Sufficient-decrease constant of the Wolfe conditions.
    pub armijo_c1: f64,
    /// Curvature constant of the strong Wolfe condition.
    pub wolfe_c2: f64,
    /// Evaluation budget of one line search.
    pub max_line_evals: usize,
    /// Also stop when the cost plateaus: relative decrease below this
    /// over `plateau_window` accepted iterations.
    pub plateau_tolerance: f64,
    pub plateau_window: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 8,
            max_iterations: 3000,
            gradient_tolerance: 1e-5,
            armijo_c1: 1e-4,
            wolfe_c2: 0.9,
            max_line_evals: 30,
            plateau_tolerance: 1e-5,
            plateau_window: 20,
        }
    }
}

/// Termination condition of a minimization run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    GradientTolerance,
    MaxIterations,
    /// Line search could not find any decreasing step.
    LineSearchStalled,
    /// Cost stopped improving measurably.
    Plateau,
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub cost: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub stop: StopReason,
    /// Cost of every accepted iterate, starting with the initial point.
    pub history: Vec<f64>,
}

impl LbfgsResult {
    pub fn converged(&self) -> bool {
        self.stop == StopReason::GradientTolerance
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct LineEval {
    step: f64,
    cost: f64,
    slope: f64,
}

/// Strong-Wolfe line search (bracket + zoom with bisection). Returns the
/// accepted step with its cost; `x_new`/`g_new` hold the matching point
/// and gradient on success.
#[allow(clippy::too_many_arguments)]
fn wolfe_search<F>(
    f: &mut F,
    x: &[f64],
    direction: &[f64],
    cost0: f64,
    slope0: f64,
    opts: &LbfgsOptions,
    x_new: &mut [f64],
    g_new: &mut [f64],
    evaluations: &mut usize,
) -> Option<(f64, f64)>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x.len();
    let c1 = opts.armijo_c1;
    let c2 = opts.wolfe_c2;
    let mut eval_at = |step: f64, x_new: &mut [f64], g_new: &mut [f64]| -> LineEval {
        for i in 0..n {
            x_new[i] = x[i] + step * direction[i];
        }
        let cost = f(x_new, g_new);
        *evaluations += 1;
        LineEval {
            step,
            cost,
            slope: dot(g_new, direction),
        }
    };

    let mut budget = opts.max_line_evals;
    let mut prev = LineEval { step: 0.0, cost: cost0, slope: slope0 };
    let mut step = 1.0;
    let mut bracket: Option<(LineEval, LineEval)> = None;
    while budget > 0 {
        budget -= 1;
        let cur = eval_at(step, x_new, g_new);
        if !cur.cost.is_finite() || cur.cost > cost0 + c1 * step * slope0 || (prev.step > 0.0 && cur.cost >= prev.cost) {
            bracket = Some((prev, cur));
            break;
        }
        if cur.slope.abs() <= -c2 * slope0 {
            return Some((cur.step, cur.cost));
        }
        if cur.slope >= 0.0 {
            bracket = Some((cur, prev));
            break;
        }
        prev = cur;
        step *= 2.0;
        if step > 1e4 {
            break;
        }
    }
    let (mut lo, mut hi) = bracket?;
    // zoom: keep the low end satisfying sufficient decrease
    while budget > 0 {
        budget -= 1;
        let trial = 0.5 * (lo.step + hi.step);
        let cur = eval_at(trial, x_new, g_new);
        if !cur.cost.is_finite() || cur.cost > cost0 + c1 * trial * slope0 || cur.cost >= lo.cost {
            hi = cur;
        } else {
            if cur.slope.abs() <= -c2 * slope0 {
                return Some((cur.step, cur.cost));
            }
            if cur.slope * (hi.step - lo.step) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
        if (hi.step - lo.step).abs() < 1e-14 {
            break;
        }
    }
    // settle for the best sufficient-decrease point found
    if lo.step > 0.0 && lo.cost < cost0 {
        let cur = eval_at(lo.step, x_new, g_new);
        return Some((cur.step, cur.cost));
    }
    None
}

/// Minimize `f`, which writes the gradient into its second argument and
/// returns the cost.
pub fn minimize<F>(mut f: F, x0: &[f64], opts: &LbfgsOptions) -> LbfgsResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut cost = f(&x, &mut g);
    let mut evaluations = 1;
    let mut history = vec![cost];

    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();

    let mut direction = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];

    let mut iterations = 0;
    let mut stop = StopReason::MaxIterations;

    while iterations < opts.max_iterations {
        let gnorm = norm(&g);
        if gnorm < opts.gradient_tolerance * cost.abs().max(1.0) {
            stop = StopReason::GradientTolerance;
            break;
        }
        if history.len() > opts.plateau_window {
            let before = history[history.len() - 1 - opts.plateau_window];
            if before - cost <= opts.plateau_tolerance * cost.abs().max(1.0) {
                stop = StopReason::Plateau;
                break;
            }
        }

        // two-loop recursion
        direction.copy_from_slice(&g);
        let m = s_hist.len();
        let mut alpha = vec![0.0; m];
        for i in (0..m).rev() {
            alpha[i] = rho_hist[i] * dot(&s_hist[i], &direction);
            for (d, y) in direction.iter_mut().zip(&y_hist[i]) {
                *d -= alpha[i] * y;
            }
        }
        if m > 0 {
            let last = m - 1;
            let gamma = dot(&s_hist[last], &y_hist[last]) / dot(&y_hist[last], &y_hist[last]);
            for d in direction.iter_mut() {
                *d *= gamma;
            }
        }
        for i in 0..m {
            let beta = rho_hist[i] * dot(&y_hist[i], &direction);
            for (d, s) in direction.iter_mut().zip(&s_hist[i]) {
                *d += (alpha[i] - beta) * s;
            }
        }
        for d in direction.iter_mut() {
            *d = -*d;
        }
        let mut slope = dot(&g, &direction);
        if slope >= 0.0 {
            // not a descent direction: drop the history and fall back
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            for (d, gi) in direction.iter_mut().zip(&g) {
                *d = -gi;
            }
            slope = -dot(&g, &g);
        }

        match wolfe_search(
            &mut f,
            &x,
            &direction,
            cost,
            slope,
            opts,
            &mut x_new,
            &mut g_new,
            &mut evaluations,
        ) {
            Some((_, cost_new)) => {
                let s: Vec<f64> = (0..n).map(|i| x_new[i] - x[i]).collect();
                let y: Vec<f64> = (0..n).map(|i| g_new[i] - g[i]).collect();
                let sy = dot(&s, &y);
                if sy > 1e-12 * norm(&s) * norm(&y) {
                    s_hist.push(s);
                    y_hist.push(y);
                    rho_hist.push(1.0 / sy);
                    if s_hist.len() > opts.memory {
                        s_hist.remove(0);
                        y_hist.remove(0);
                        rho_hist.remove(0);
                    }
                }
                x.copy_from_slice(&x_new);
                g.copy_from_slice(&g_new);
                cost = cost_new;
                history.push(cost);
            }
            None => {
                stop = StopReason::LineSearchStalled;
                break;
            }
        }
        iterations += 1;
    }

    if stop == StopReason::MaxIterations && norm(&g) < opts.gradient_tolerance * cost.abs().max(1.0)
    {
        stop = StopReason::GradientTolerance;
    }
    LbfgsResult {
        gradient_norm: norm(&g),
        x,
        cost,
        iterations,
        evaluations,
        stop,
        history,
    }
}
