//! Unconstrained minimizers for small dense problems: BFGS with a strong-Wolfe line search,
//! Adam with a plateau learning-rate schedule, and Adam followed by BFGS.

use std::fmt;

use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimOptions<T> {
    /// Stop when the gradient's max-norm falls below this.
    pub grad_tol: T,
    /// Stop when a step's max-norm falls below this.
    pub param_tol: T,
    pub max_iters: usize,
    pub adam_lr0: T,
    /// Consecutive non-improving iterations before the learning rate is cut.
    pub adam_patience: usize,
    pub adam_lr_factor: T,
}

impl<T: Real> Default for OptimOptions<T> {
    fn default() -> Self {
        Self {
            grad_tol: T::lit(1e-5),
            param_tol: T::lit(1e-6),
            max_iters: 200,
            adam_lr0: T::lit(1e-3),
            adam_patience: 3,
            adam_lr_factor: T::half(),
        }
    }
}

impl<T: Real> OptimOptions<T> {
    pub fn validate(&self) -> Result<(), crate::Error> {
        let ok = self.grad_tol > T::zero()
            && self.param_tol > T::zero()
            && self.max_iters >= 1
            && self.adam_lr0 > T::zero()
            && self.adam_patience >= 1
            && self.adam_lr_factor > T::zero()
            && self.adam_lr_factor < T::one();
        if ok {
            Ok(())
        } else {
            Err(crate::Error::InvalidConfig("optimizer options out of range".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradTol,
    ParamTol,
    MaxIters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult<T> {
    pub x: Vec<T>,
    pub loss: T,
    pub iterations: usize,
    pub function_evals: usize,
    pub converged_by: Termination,
}

#[derive(Debug)]
pub enum OptimError<T, E> {
    /// The objective produced a non-finite value or gradient.
    NumericalFailure { best_x: Vec<T>, best_loss: T },
    /// The objective itself failed.
    Objective { error: E, best_x: Vec<T> },
}

impl<T: Real, E: fmt::Display> fmt::Display for OptimError<T, E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NumericalFailure { best_loss, .. } => write!(f, "non-finite objective (best loss {best_loss})"),
            Self::Objective { error, .. } => write!(f, "objective failed: {error}"),
        }
    }
}

impl<T: Real, E: fmt::Debug + fmt::Display> std::error::Error for OptimError<T, E> {}

impl<T, E> OptimError<T, E> {
    pub fn best_x(&self) -> &[T] {
        match self {
            Self::NumericalFailure { best_x, .. } | Self::Objective { best_x, .. } => best_x,
        }
    }
}

/// Counts evaluations and tracks the best finite point seen.
struct Tracked<'a, T, E> {
    f: &'a mut dyn FnMut(&[T]) -> Result<(T, Vec<T>), E>,
    evals: usize,
    best_x: Vec<T>,
    best_loss: T,
}

impl<'a, T: Real, E> Tracked<'a, T, E> {
    fn new(f: &'a mut dyn FnMut(&[T]) -> Result<(T, Vec<T>), E>, x0: &[T]) -> Self {
        Self { f, evals: 0, best_x: x0.to_vec(), best_loss: T::infinity() }
    }

    fn eval(&mut self, x: &[T]) -> Result<(T, Vec<T>), OptimError<T, E>> {
        self.evals += 1;
        let (loss, grad) = (self.f)(x).map_err(|error| OptimError::Objective { error, best_x: self.best_x.clone() })?;
        if !loss.is_finite() || grad.len() != x.len() || grad.iter().any(|g| !g.is_finite()) {
            return Err(OptimError::NumericalFailure { best_x: self.best_x.clone(), best_loss: self.best_loss });
        }
        if loss < self.best_loss {
            self.best_loss = loss;
            self.best_x.clear();
            self.best_x.extend_from_slice(x);
        }
        Ok((loss, grad))
    }

    /// Like `eval`, but an objective error at a trial point becomes `None` so the caller can
    /// step back. Non-finite results are still failures.
    fn try_eval(&mut self, x: &[T]) -> Result<Option<(T, Vec<T>)>, OptimError<T, E>> {
        match self.eval(x) {
            Ok(v) => Ok(Some(v)),
            Err(OptimError::Objective { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

fn max_abs<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(x, y)| *x * *y).sum()
}

const WOLFE_C1: f64 = 1e-4;
const WOLFE_C2: f64 = 0.9;
const CURVATURE_EPS: f64 = 1e-10;
const LINE_SEARCH_MAX_EVALS: usize = 40;
const STEP_MAX: f64 = 1e10;

#[derive(Clone)]
struct LsPoint<T> {
    alpha: T,
    f: T,
    g: Vec<T>,
    d: T,
}

/// Strong-Wolfe line search (bracketing then zoom with safeguarded cubic interpolation).
/// Returns `None` when no acceptable step was found within the evaluation budget.
fn strong_wolfe<T: Real, E>(
    obj: &mut Tracked<'_, T, E>,
    x: &[T],
    p: &[T],
    f0: T,
    d0: T,
    alpha_init: T,
) -> Result<Option<LsPoint<T>>, OptimError<T, E>> {
    let c1 = T::lit(WOLFE_C1);
    let c2 = T::lit(WOLFE_C2);
    let mut evals = 0usize;
    let probe = |obj: &mut Tracked<'_, T, E>, alpha: T| -> Result<LsPoint<T>, OptimError<T, E>> {
        let xa: Vec<T> = x.iter().zip(p).map(|(xi, pi)| *xi + alpha * *pi).collect();
        Ok(match obj.try_eval(&xa)? {
            Some((f, g)) => {
                let d = dot(&g, p);
                LsPoint { alpha, f, g, d }
            }
            // rejected point: too far, bracket it from above
            None => LsPoint { alpha, f: T::infinity(), g: Vec::new(), d: T::nan() },
        })
    };
    let armijo = |pt: &LsPoint<T>| pt.f <= f0 + c1 * pt.alpha * d0;
    let curvature = |pt: &LsPoint<T>| pt.d.abs() <= -c2 * d0;

    let mut prev = LsPoint { alpha: T::zero(), f: f0, g: Vec::new(), d: d0 };
    let mut alpha = alpha_init;
    let (mut lo, mut hi);
    let mut first = true;
    loop {
        if evals >= LINE_SEARCH_MAX_EVALS {
            return Ok(None);
        }
        evals += 1;
        let cur = probe(obj, alpha)?;
        if !armijo(&cur) || (!first && cur.f >= prev.f) {
            lo = prev;
            hi = cur;
            break;
        }
        if curvature(&cur) {
            return Ok(Some(cur));
        }
        if cur.d >= T::zero() {
            lo = cur;
            hi = prev;
            break;
        }
        first = false;
        let next = (alpha * T::two()).min(T::lit(STEP_MAX));
        if next <= alpha {
            return Ok(None);
        }
        prev = cur;
        alpha = next;
    }
    // zoom: lo satisfies Armijo and has the lowest value seen; the minimizer lies between lo and hi
    loop {
        if evals >= LINE_SEARCH_MAX_EVALS {
            return Ok(None);
        }
        let (a, b) = (lo.alpha, hi.alpha);
        let width = (b - a).abs();
        if width <= T::epsilon() * a.abs().max(b.abs()).max(T::one()) {
            return Ok(None);
        }
        let trial = cubic_minimizer(&lo, &hi)
            .filter(|t| {
                let (l, h) = if a < b { (a, b) } else { (b, a) };
                let guard = T::lit(0.1) * width;
                *t >= l + guard && *t <= h - guard
            })
            .unwrap_or((a + b) * T::half());
        evals += 1;
        let cur = probe(obj, trial)?;
        if !armijo(&cur) || cur.f >= lo.f {
            hi = cur;
        } else {
            if curvature(&cur) {
                return Ok(Some(cur));
            }
            if cur.d * (hi.alpha - lo.alpha) >= T::zero() {
                hi = lo;
            }
            lo = cur;
        }
    }
}

fn cubic_minimizer<T: Real>(a: &LsPoint<T>, b: &LsPoint<T>) -> Option<T> {
    let (x1, f1, d1) = (a.alpha, a.f, a.d);
    let (x2, f2, d2) = (b.alpha, b.f, b.d);
    let three = T::lit(3.0);
    let t1 = d1 + d2 - three * (f1 - f2) / (x1 - x2);
    let disc = t1 * t1 - d1 * d2;
    if disc < T::zero() {
        return None;
    }
    let sign = if x2 > x1 { T::one() } else { -T::one() };
    let t2 = sign * disc.sqrt();
    let denom = d2 - d1 + T::two() * t2;
    if denom == T::zero() {
        return None;
    }
    let x = x2 - (x2 - x1) * (d2 + t2 - t1) / denom;
    x.is_finite().then_some(x)
}

fn is_positive_definite<T: Real>(h: &[T], n: usize) -> bool {
    let mut l = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = h[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= T::zero() {
                    return false;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    true
}

fn identity<T: Real>(n: usize) -> Vec<T> {
    let mut h = vec![T::zero(); n * n];
    for i in 0..n {
        h[i * n + i] = T::one();
    }
    h
}

/// BFGS on the inverse Hessian. Updates are skipped when `y's <= 1e-10`, which keeps the
/// estimate symmetric positive definite.
pub fn minimize_bfgs<T: Real, E>(
    mut f_and_grad: impl FnMut(&[T]) -> Result<(T, Vec<T>), E>,
    x0: &[T],
    opts: &OptimOptions<T>,
) -> Result<OptimizationResult<T>, OptimError<T, E>> {
    let mut obj = Tracked::new(&mut f_and_grad, x0);
    bfgs_with(&mut obj, x0, opts)
}

fn bfgs_with<T: Real, E>(obj: &mut Tracked<'_, T, E>, x0: &[T], opts: &OptimOptions<T>) -> Result<OptimizationResult<T>, OptimError<T, E>> {
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut f, mut g) = obj.eval(&x)?;
    let mut h = identity::<T>(n);
    let mut updated = false;
    let done = |x: Vec<T>, loss: T, iterations: usize, evals: usize, by: Termination| OptimizationResult {
        x,
        loss,
        iterations,
        function_evals: evals,
        converged_by: by,
    };
    for iter in 0..opts.max_iters {
        if max_abs(&g) < opts.grad_tol {
            return Ok(done(x, f, iter, obj.evals, Termination::GradTol));
        }
        debug_assert!(is_positive_definite(&h, n), "inverse Hessian lost positive definiteness");
        let mut p: Vec<T> = (0..n).map(|i| -(0..n).map(|j| h[i * n + j] * g[j]).sum::<T>()).collect();
        let mut d0 = dot(&g, &p);
        if !(d0 < T::zero()) {
            h = identity(n);
            updated = false;
            p = g.iter().map(|v| -*v).collect();
            d0 = dot(&g, &p);
        }
        // first step of roughly unit length, as the curvature scale is still unknown
        let alpha0 = if updated { T::one() } else { T::one().min(T::lit(1.01) / dot(&g, &g).sqrt()) };
        let Some(step) = strong_wolfe(obj, &x, &p, f, d0, alpha0)? else {
            // no acceptable step: the iterate cannot move
            return Ok(done(x, f, iter, obj.evals, Termination::ParamTol));
        };
        let s: Vec<T> = p.iter().map(|pi| step.alpha * *pi).collect();
        let y: Vec<T> = step.g.iter().zip(&g).map(|(a, b)| *a - *b).collect();
        for i in 0..n {
            x[i] += s[i];
        }
        f = step.f;
        g = step.g;
        if max_abs(&s) < opts.param_tol {
            return Ok(done(x, f, iter + 1, obj.evals, Termination::ParamTol));
        }
        let ys = dot(&y, &s);
        if ys > T::lit(CURVATURE_EPS) {
            if !updated {
                // rescale the initial guess before the first update
                let yy = dot(&y, &y);
                h = identity(n);
                let scale = ys / yy;
                h.iter_mut().for_each(|v| *v *= scale);
                updated = true;
            }
            let rho = T::one() / ys;
            let hy: Vec<T> = (0..n).map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum()).collect();
            let yhy = dot(&y, &hy);
            let k = (T::one() + rho * yhy) * rho;
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += k * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
                }
            }
        }
    }
    let evals = obj.evals;
    if max_abs(&g) < opts.grad_tol {
        return Ok(done(x, f, opts.max_iters, evals, Termination::GradTol));
    }
    Ok(done(x, f, opts.max_iters, evals, Termination::MaxIters))
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Multiplies the learning rate by `factor` after `patience` consecutive observations that do
/// not improve on the best loss so far.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauSchedule<T> {
    pub lr: T,
    best: T,
    stale: usize,
    patience: usize,
    factor: T,
}

impl<T: Real> PlateauSchedule<T> {
    pub fn new(lr0: T, patience: usize, factor: T, baseline: T) -> Self {
        Self { lr: lr0, best: baseline, stale: 0, patience, factor }
    }

    /// Records a loss and returns the learning rate for the next step.
    pub fn observe(&mut self, loss: T) -> T {
        if loss < self.best {
            self.best = loss;
            self.stale = 0;
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                self.lr *= self.factor;
                self.stale = 0;
            }
        }
        self.lr
    }
}

/// Adam with bias correction; one iteration is one gradient step. Returns the best point seen.
pub fn minimize_adam<T: Real, E>(
    mut f_and_grad: impl FnMut(&[T]) -> Result<(T, Vec<T>), E>,
    x0: &[T],
    opts: &OptimOptions<T>,
) -> Result<OptimizationResult<T>, OptimError<T, E>> {
    let mut obj = Tracked::new(&mut f_and_grad, x0);
    let n = x0.len();
    let mut x = x0.to_vec();
    let (f0, mut g) = obj.eval(&x)?;
    let mut schedule = PlateauSchedule::new(opts.adam_lr0, opts.adam_patience, opts.adam_lr_factor, f0);
    let (b1, b2, eps) = (T::lit(ADAM_BETA1), T::lit(ADAM_BETA2), T::lit(ADAM_EPS));
    let mut m = vec![T::zero(); n];
    let mut v = vec![T::zero(); n];
    let (mut b1t, mut b2t) = (T::one(), T::one());
    let finish = |obj: &Tracked<'_, T, E>, iterations: usize, by: Termination| OptimizationResult {
        x: obj.best_x.clone(),
        loss: obj.best_loss,
        iterations,
        function_evals: obj.evals,
        converged_by: by,
    };
    for iter in 0..opts.max_iters {
        if max_abs(&g) < opts.grad_tol {
            return Ok(finish(&obj, iter, Termination::GradTol));
        }
        b1t *= b1;
        b2t *= b2;
        let lr = schedule.lr;
        let mut step_max = T::zero();
        for i in 0..n {
            m[i] = b1 * m[i] + (T::one() - b1) * g[i];
            v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
            let mh = m[i] / (T::one() - b1t);
            let vh = v[i] / (T::one() - b2t);
            let step = lr * mh / (vh.sqrt() + eps);
            x[i] -= step;
            step_max = step_max.max(step.abs());
        }
        let (f, gn) = obj.eval(&x)?;
        g = gn;
        schedule.observe(f);
        if step_max < opts.param_tol {
            return Ok(finish(&obj, iter + 1, Termination::ParamTol));
        }
    }
    let by = if max_abs(&g) < opts.grad_tol { Termination::GradTol } else { Termination::MaxIters };
    Ok(finish(&obj, opts.max_iters, by))
}

/// Adam until it stops, then BFGS from Adam's best point. Counts are summed over both phases.
pub fn minimize_hybrid<T: Real, E>(
    mut f_and_grad: impl FnMut(&[T]) -> Result<(T, Vec<T>), E>,
    x0: &[T],
    opts: &OptimOptions<T>,
) -> Result<OptimizationResult<T>, OptimError<T, E>> {
    let adam = minimize_adam(&mut f_and_grad, x0, opts)?;
    let mut obj = Tracked::new(&mut f_and_grad, &adam.x);
    let bfgs = bfgs_with(&mut obj, &adam.x.clone(), opts)?;
    Ok(OptimizationResult {
        iterations: adam.iterations + bfgs.iterations,
        function_evals: adam.function_evals + bfgs.function_evals,
        ..bfgs
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Bfgs,
    Adam,
    Hybrid,
}

impl std::str::FromStr for Optimizer {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self, crate::Error> {
        match s {
            "bfgs" => Ok(Self::Bfgs),
            "adam" => Ok(Self::Adam),
            "hybrid" | "adam+bfgs" => Ok(Self::Hybrid),
            o => Err(crate::Error::InvalidConfig(format!("unknown optimizer {o:?}"))),
        }
    }
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Bfgs => "bfgs",
            Self::Adam => "adam",
            Self::Hybrid => "hybrid",
        })
    }
}

impl Optimizer {
    pub fn minimize<T: Real, E>(
        self,
        f_and_grad: impl FnMut(&[T]) -> Result<(T, Vec<T>), E>,
        x0: &[T],
        opts: &OptimOptions<T>,
    ) -> Result<OptimizationResult<T>, OptimError<T, E>> {
        match self {
            Self::Bfgs => minimize_bfgs(f_and_grad, x0, opts),
            Self::Adam => minimize_adam(f_and_grad, x0, opts),
            Self::Hybrid => minimize_hybrid(f_and_grad, x0, opts),
        }
    }
}
