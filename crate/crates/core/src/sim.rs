//! Fixed-step classical Runge-Kutta integration with decimated recording,
//! early stopping and divergence detection.

use std::fmt::Debug;

use thiserror::Error;

/// An autonomous or time-varying vector field `x' = f(t, x)` together with
/// the residual it reports at recorded points.
pub trait VectorField {
    type Report: Clone + Debug;

    fn dim(&self) -> usize;
    fn eval(&self, t: f64, state: &[f64], out: &mut [f64]);
    fn report(&self, t: f64, state: &[f64]) -> Self::Report;

    /// Early-stop test applied to recorded reports.
    fn converged(&self, _report: &Self::Report, _tol: f64) -> bool {
        false
    }

    /// Largest step for which fixed-step RK4 is considered stable.
    fn max_stable_step(&self) -> Option<f64> {
        None
    }
}

/// Closure-backed field with no report.
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(f64, &[f64], &mut [f64])> FnField<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(f64, &[f64], &mut [f64])> VectorField for FnField<F> {
    type Report = ();

    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, t: f64, state: &[f64], out: &mut [f64]) {
        (self.f)(t, state, out)
    }

    fn report(&self, _t: f64, _state: &[f64]) {}
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IntegratorConfig {
    pub step: f64,
    pub t_end: f64,
    pub record_every: usize,
    /// Early stop once the recorded residual is at or below this; `0`
    /// disables.
    pub stop_tol: f64,
}

impl IntegratorConfig {
    pub fn new(step: f64, t_end: f64) -> Self {
        Self { step, t_end, record_every: 1, stop_tol: 0.0 }
    }

    pub fn record_every(mut self, every: usize) -> Self {
        self.record_every = every;
        self
    }

    pub fn stop_tol(mut self, tol: f64) -> Self {
        self.stop_tol = tol;
        self
    }

    pub fn n_steps(&self) -> usize {
        (self.t_end / self.step - 1e-9).ceil().max(0.0) as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<R> {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub residuals: Vec<R>,
}

impl<R> Trajectory<R> {
    fn with_capacity(cap: usize) -> Self {
        Self { times: Vec::with_capacity(cap), states: Vec::with_capacity(cap), residuals: Vec::with_capacity(cap) }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn final_time(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    pub fn final_residual(&self) -> Option<&R> {
        self.residuals.last()
    }

    /// Scalar series extracted from the recorded residuals.
    pub fn series(&self, select: impl Fn(&R) -> f64) -> Vec<f64> {
        self.residuals.iter().map(select).collect()
    }
}

#[derive(Debug, Error)]
pub enum SimError<R: Debug> {
    #[error("step {step} exceeds stability limit {limit}")]
    StepTooLarge { step: f64, limit: f64 },
    #[error("invalid integrator configuration: {0}")]
    Config(String),
    #[error("initial state has length {got}, field expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("integration diverged at t = {time}")]
    Diverged { time: f64, partial: Box<Trajectory<R>> },
}

/// Integrates `field` from `x0` with classical RK4.
///
/// Records the initial point, every `record_every`-th step and the final
/// step. Stops early when the field reports convergence at a recorded
/// point. Deterministic for identical inputs.
pub fn integrate<F: VectorField>(
    field: &F,
    x0: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Trajectory<F::Report>, SimError<F::Report>> {
    if !(cfg.step > 0.0 && cfg.step.is_finite()) || !(cfg.t_end > 0.0) || cfg.record_every == 0 || cfg.stop_tol < 0.0 {
        return Err(SimError::Config(format!("{cfg:?}")));
    }
    if let Some(limit) = field.max_stable_step() {
        if cfg.step > limit * (1.0 + 1e-12) {
            return Err(SimError::StepTooLarge { step: cfg.step, limit });
        }
    }
    let dim = field.dim();
    if x0.len() != dim {
        return Err(SimError::Dimension { expected: dim, got: x0.len() });
    }

    let n_steps = cfg.n_steps();
    let mut traj = Trajectory::with_capacity(n_steps / cfg.record_every + 2);
    let mut x = x0.to_vec();
    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut tmp = vec![0.0; dim];

    let record = |traj: &mut Trajectory<F::Report>, t: f64, x: &[f64]| -> bool {
        let rep = field.report(t, x);
        let done = cfg.stop_tol > 0.0 && field.converged(&rep, cfg.stop_tol);
        traj.times.push(t);
        traj.states.push(x.to_vec());
        traj.residuals.push(rep);
        done
    };

    if record(&mut traj, 0.0, &x) {
        return Ok(traj);
    }
    let h = cfg.step;
    for step in 1..=n_steps {
        let t0 = (step - 1) as f64 * h;
        field.eval(t0, &x, &mut k1);
        for j in 0..dim {
            tmp[j] = x[j] + 0.5 * h * k1[j];
        }
        field.eval(t0 + 0.5 * h, &tmp, &mut k2);
        for j in 0..dim {
            tmp[j] = x[j] + 0.5 * h * k2[j];
        }
        field.eval(t0 + 0.5 * h, &tmp, &mut k3);
        for j in 0..dim {
            tmp[j] = x[j] + h * k3[j];
        }
        field.eval(t0 + h, &tmp, &mut k4);
        for j in 0..dim {
            x[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        let t = step as f64 * h;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SimError::Diverged { time: t, partial: Box::new(traj) });
        }
        if (step % cfg.record_every == 0 || step == n_steps) && record(&mut traj, t, &x) {
            break;
        }
    }
    Ok(traj)
}

/// Result of a log-linear least-squares fit `log r(t) ~ c + rate * t`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct RateFit {
    pub rate: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("series lengths differ ({0} times, {1} values)")]
    Length(usize, usize),
    #[error("need at least two positive samples in the fitted window, got {0}")]
    TooFew(usize),
    #[error("negative or non-finite residual at index {0}")]
    BadValue(usize),
}

/// Fits an exponential rate to a positive residual series, skipping the
/// first 20% of samples. A residual that reaches exactly zero truncates the
/// series before the zero.
pub fn fit_exponential_rate(times: &[f64], values: &[f64]) -> Result<RateFit, FitError> {
    if times.len() != values.len() {
        return Err(FitError::Length(times.len(), values.len()));
    }
    let mut end = values.len();
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() || v < 0.0 {
            return Err(FitError::BadValue(i));
        }
        if v == 0.0 {
            end = i;
            break;
        }
    }
    let start = end / 5;
    let n = end - start;
    if n < 2 {
        return Err(FitError::TooFew(n));
    }
    let ts = &times[start..end];
    let ls: Vec<f64> = values[start..end].iter().map(|v| v.ln()).collect();
    let nf = n as f64;
    let tm = ts.iter().sum::<f64>() / nf;
    let lm = ls.iter().sum::<f64>() / nf;
    let mut stt = 0.0;
    let mut stl = 0.0;
    let mut sll = 0.0;
    for (t, l) in ts.iter().zip(&ls) {
        stt += (t - tm) * (t - tm);
        stl += (t - tm) * (l - lm);
        sll += (l - lm) * (l - lm);
    }
    if stt == 0.0 {
        return Err(FitError::TooFew(1));
    }
    let rate = stl / stt;
    // a perfectly flat series is fit exactly
    let r_squared = if sll == 0.0 { 1.0 } else { (stl * stl) / (stt * sll) };
    Ok(RateFit { rate, r_squared, n_points: n })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rk4_exponential_decay() {
        let f = FnField::new(1, |_, x: &[f64], o: &mut [f64]| o[0] = -x[0]);
        let traj = integrate(&f, &[1.0], &IntegratorConfig::new(0.01, 1.0)).unwrap();
        assert!((traj.final_time() - 1.0).abs() < 1e-12);
        assert!((traj.final_state()[0] - (-1.0f64).exp()).abs() < 1e-9);
        assert_eq!(traj.len(), 101);
    }

    #[test]
    fn constant_field() {
        let f = FnField::new(2, |_, _: &[f64], o: &mut [f64]| o.fill(0.0));
        let traj = integrate(&f, &[1.5, -2.0], &IntegratorConfig::new(0.1, 2.0).record_every(5)).unwrap();
        assert!(traj.states.iter().all(|s| s == &vec![1.5, -2.0]));
        assert!(traj.times.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(traj.times.len(), traj.residuals.len());
    }

    #[test]
    fn divergence_reports_time() {
        let f = FnField::new(1, |_, x: &[f64], o: &mut [f64]| o[0] = x[0] * x[0]);
        match integrate(&f, &[1.0], &IntegratorConfig::new(0.1, 10.0)) {
            Err(SimError::Diverged { time, partial }) => {
                assert!(time > 0.5 && time < 2.0, "{time}");
                assert!(!partial.is_empty());
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_config() {
        let f = FnField::new(1, |_, _: &[f64], o: &mut [f64]| o[0] = 0.0);
        assert!(matches!(integrate(&f, &[0.0], &IntegratorConfig::new(0.0, 1.0)), Err(SimError::Config(_))));
        assert!(matches!(integrate(&f, &[0.0, 1.0], &IntegratorConfig::new(0.1, 1.0)), Err(SimError::Dimension { .. })));
    }

    #[test]
    fn fit_exact_exponential() {
        let t: Vec<f64> = (0..200).map(|k| k as f64 * 0.05).collect();
        let v: Vec<f64> = t.iter().map(|t| (-2.0 * t).exp()).collect();
        let fit = fit_exponential_rate(&t, &v).unwrap();
        assert!((fit.rate + 2.0).abs() < 1e-10);
        assert!(fit.r_squared > 0.999);
        assert_eq!(fit.n_points, 160);
    }

    #[test]
    fn fit_constant_series() {
        let t: Vec<f64> = (0..50).map(|k| k as f64).collect();
        let fit = fit_exponential_rate(&t, &vec![3.0; 50]).unwrap();
        assert!(fit.rate.abs() < 1e-14);
    }

    #[test]
    fn fit_truncates_at_zero() {
        let t: Vec<f64> = (0..20).map(|k| k as f64).collect();
        let mut v: Vec<f64> = t.iter().map(|t| (-t).exp()).collect();
        v[10] = 0.0;
        let fit = fit_exponential_rate(&t, &v).unwrap();
        assert_eq!(fit.n_points, 8);
        assert!((fit.rate + 1.0).abs() < 1e-10);
        assert!(fit_exponential_rate(&t, &[0.0; 20]).is_err());
    }
}
