//! Time integration of the coupled system.
//!
//! The stepper is a stabilized first-order IMEX scheme: the linear
//! stiff part (fourth-order diffusion, the Oono reaction, and an added
//! damping `kappa Laplace(next - current)`) is implicit, the potential
//! nonlinearity explicit. Every solve is diagonal in cosine space,
//!
//! ```text
//! (u+ - u)/dt             = Laplace(-eps_u^2 Laplace u+ + kappa_u (u+ - u) + dF/du(u, v)),
//! (v+ - v)/dt + sigma (v+ - c) = Laplace(-eps_v^2 Laplace v+ + kappa_v (v+ - v) + dF/dv(u, v)),
//! ```
//!
//! so the mean mode of `u` is carried through the solve bit for bit
//! (exact discrete mass conservation) and the mean of `v` obeys the
//! exact recurrence `mean(v+) = (mean(v) + dt sigma c) / (1 + dt sigma)`.
//!
//! In conserved mode (`c := mean(v0)` at run start) the stepper guards
//! the discrete Ohta-Kawasaki energy: a step that raises it beyond
//! roundoff tolerance is retried with a halved dt, leaving the nominal
//! dt unchanged.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diagnostics::{self, DiagnosticsRecord, StationarityReport};
use crate::error::{Error, Result};
use crate::potential::PotentialParams;
use crate::spectral::{Field, Grid, SpectralField, Workspace};

/// Relative tolerance of the conserved-mode energy guard.
pub const GUARD_TOL: f64 = 1e-10;

/// Mass behavior of the `v` equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// `c = mean(v0)`: mass of `v` conserved, the system is the
    /// gradient flow of the Ohta-Kawasaki energy.
    Conserved,
    /// Prescribed `c != mean(v0)`: `mean(v)` relaxes exponentially to `c`.
    OffCritical,
}

/// Physical constants of the coupled system.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub eps_u_sq: f64,
    pub eps_v_sq: f64,
    pub sigma: f64,
    pub c: f64,
    pub mode: Mode,
    pub potential: PotentialParams,
}

impl ModelParams {
    pub fn new(
        eps_u_sq: f64,
        eps_v_sq: f64,
        sigma: f64,
        c: f64,
        mode: Mode,
        potential: PotentialParams,
    ) -> Result<Self> {
        let p = Self {
            eps_u_sq,
            eps_v_sq,
            sigma,
            c,
            mode,
            potential,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, x) in [("eps_u_sq", self.eps_u_sq), ("eps_v_sq", self.eps_v_sq)] {
            if !(x.is_finite() && x > 0.0) {
                return Err(Error::InvalidParams {
                    what: name,
                    why: format!("must be positive, got {x}"),
                });
            }
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::InvalidParams {
                what: "sigma",
                why: format!("must be >= 0, got {}", self.sigma),
            });
        }
        if !(self.c.is_finite() && self.c.abs() < 1.0) {
            return Err(Error::InvalidParams {
                what: "c",
                why: format!("must satisfy |c| < 1, got {}", self.c),
            });
        }
        self.potential.validate()
    }
}

/// Pair of order parameters plus simulation time.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    u: Field,
    v: Field,
    t: f64,
}

impl State {
    pub fn new(u: Field, v: Field, t: f64) -> Result<Self> {
        if u.grid() != v.grid() {
            return Err(Error::GridMismatch(
                u.grid().nx,
                u.grid().ny,
                v.grid().nx,
                v.grid().ny,
            ));
        }
        if !(u.all_finite() && v.all_finite() && t.is_finite() && t >= 0.0) {
            return Err(Error::NonFinite { what: "state", t });
        }
        Ok(Self { u, v, t })
    }

    pub fn u(&self) -> &Field {
        &self.u
    }

    pub fn v(&self) -> &Field {
        &self.v
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn grid(&self) -> Grid {
        self.u.grid()
    }
}

/// Shape of the initial data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    /// Prescribed means plus seeded, mean-subtracted uniform noise.
    ConstantPlusNoise,
    /// Prescribed means plus one cosine mode per field: `(1,0)` for u,
    /// `(0,1)` for v. Deterministic, for reproducible linear probes.
    TwoMode,
}

/// Deterministic initial state with exact prescribed means.
///
/// The fluctuation is mean-subtracted and, if the centering pushed any
/// sample past `1 - 2 delta`, rescaled to fit, so the state always
/// starts inside the region where the regularized and singular
/// potentials coincide.
pub fn initial_state(
    grid: Grid,
    kind: InitKind,
    u_mean: f64,
    v_mean: f64,
    amplitude: f64,
    seed: u64,
    delta: f64,
) -> Result<State> {
    if !(amplitude.is_finite() && amplitude >= 0.0) {
        return Err(Error::InvalidParams {
            what: "amplitude",
            why: format!("must be >= 0, got {amplitude}"),
        });
    }
    let limit = 1.0 - 2.0 * delta;
    for (name, m) in [("u_mean", u_mean), ("v_mean", v_mean)] {
        if !(m.is_finite() && m.abs() < 1.0) {
            return Err(Error::InvalidParams {
                what: name,
                why: format!("must lie in (-1, 1), got {m}"),
            });
        }
        if m.abs() + amplitude > limit {
            return Err(Error::AmplitudeTooLarge {
                amplitude,
                sum: m.abs() + amplitude,
                limit,
            });
        }
    }

    let make = |mean: f64, fluct: Vec<f64>| -> Field {
        let mut f = Field::from_vec(grid, fluct).expect("length by construction");
        // Two centering passes leave the fluctuation mean at the last ulp.
        for _ in 0..2 {
            let m = f.mean();
            for x in f.data_mut() {
                *x -= m;
            }
        }
        let room = limit - mean.abs();
        let max = f.max_abs();
        if max > room {
            let s = room / max * (1.0 - 1e-12);
            for x in f.data_mut() {
                *x *= s;
            }
        }
        for x in f.data_mut() {
            *x += mean;
        }
        f
    };

    let (u, v) = match kind {
        InitKind::ConstantPlusNoise => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut noise = || -> Vec<f64> {
                (0..grid.len())
                    .map(|_| {
                        if amplitude == 0.0 {
                            0.0
                        } else {
                            rng.gen_range(-amplitude..amplitude)
                        }
                    })
                    .collect()
            };
            let nu = noise();
            let nv = noise();
            (make(u_mean, nu), make(v_mean, nv))
        }
        InitKind::TwoMode => {
            let pi = std::f64::consts::PI;
            let fu = Field::from_fn(grid, |x, _| amplitude * (pi * x / grid.lx).cos());
            let fv = Field::from_fn(grid, |_, y| amplitude * (pi * y / grid.ly).cos());
            (
                make(u_mean, fu.data().to_vec()),
                make(v_mean, fv.data().to_vec()),
            )
        }
    };
    State::new(u, v, 0.0)
}

/// Time step, stabilization overrides, and guard settings.
#[derive(Debug, Clone, PartialEq)]
pub struct StepperConfig {
    pub dt: f64,
    /// Fixed stabilization constants; `None` means recompute from the
    /// state via [`auto_stabilization`].
    pub kappa_u: Option<f64>,
    pub kappa_v: Option<f64>,
    /// Backoff budget of the conserved-mode energy guard.
    pub max_retries: usize,
    /// Steps between refreshes of the automatic stabilization; 0 means
    /// compute once at start and keep.
    pub recompute_interval: usize,
}

impl StepperConfig {
    pub fn new(dt: f64) -> Self {
        Self {
            dt,
            kappa_u: None,
            kappa_v: None,
            max_retries: 8,
            recompute_interval: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidParams {
                what: "dt",
                why: format!("must be positive, got {}", self.dt),
            });
        }
        for (name, k) in [("kappa_u", self.kappa_u), ("kappa_v", self.kappa_v)] {
            if let Some(k) = k {
                if !(k.is_finite() && k >= 0.0) {
                    return Err(Error::InvalidParams {
                        what: name,
                        why: format!("must be >= 0, got {k}"),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Stabilization constants that dominate the explicit part on the
/// current iterate range: the largest negative part of the smallest
/// Hessian eigenvalue of `F_delta` over the grid, plus the margin
/// `theta_0u + theta_0v`.
pub fn auto_stabilization(s: &State, p: &ModelParams) -> (f64, f64) {
    let pot = &p.potential;
    let mut worst = 0.0f64;
    for (&u, &v) in s.u.data().iter().zip(s.v.data()) {
        let h = pot.f_delta_hessian(u, v);
        let half_tr = 0.5 * (h[0][0] + h[1][1]);
        let rad = (0.5 * (h[0][0] - h[1][1])).hypot(h[0][1]);
        let lambda_min = half_tr - rad;
        worst = worst.max(-lambda_min);
    }
    let kappa = worst + pot.theta_0u + pot.theta_0v;
    (kappa, kappa)
}

/// Chemical potentials of a state:
/// `mu = -eps_u^2 Lap u + dF/du`, `phi = -eps_v^2 Lap v + dF/dv`, and
/// `phi_tilde = phi + sigma N(v - mean v)` in conserved mode (`phi`
/// itself in off-critical mode, where the reformulated energy identity
/// does not apply).
pub fn chemical_potentials(
    ws: &Workspace,
    s: &State,
    p: &ModelParams,
) -> Result<(Field, Field, Field)> {
    let lap_u = ws.laplacian(&s.u);
    let lap_v = ws.laplacian(&s.v);
    let mut mu = Field::zeros(s.grid());
    let mut phi = Field::zeros(s.grid());
    for i in 0..s.grid().len() {
        let (du, dv) = p.potential.f_delta_grad(s.u.data()[i], s.v.data()[i]);
        mu.data_mut()[i] = -p.eps_u_sq * lap_u.data()[i] + du;
        phi.data_mut()[i] = -p.eps_v_sq * lap_v.data()[i] + dv;
    }
    let phi_tilde = match p.mode {
        Mode::OffCritical => phi.clone(),
        Mode::Conserved => {
            if p.sigma == 0.0 {
                phi.clone()
            } else {
                let fluct = s.v.centered();
                let nv = ws.inv_neumann_laplacian(&fluct)?;
                let mut out = phi.clone();
                for (o, n) in out.data_mut().iter_mut().zip(nv.data()) {
                    *o += p.sigma * n;
                }
                out
            }
        }
    };
    Ok((mu, phi, phi_tilde))
}

/// Why a run stopped.
#[derive(Debug, Clone)]
pub enum StopReason {
    TimeReached,
    Stationary(StationarityReport),
}

/// Counters of one completed run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub stop: StopReason,
    pub steps: usize,
    pub records: usize,
    /// Total energy-guard retries over the run.
    pub guard_retries: usize,
}

/// Per-step report.
#[derive(Debug, Clone, Copy)]
pub struct StepInfo {
    pub dt_effective: f64,
    pub retries: usize,
}

/// Record / snapshot cadences and the optional stationarity stop.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunSchedule {
    /// Emit a diagnostics record every this many steps; 0 disables.
    pub diag_every: usize,
    /// Emit a state snapshot every this many steps; 0 disables.
    pub snapshot_every: usize,
    /// Stop early once the stationarity criterion holds at this
    /// tolerance (conserved mode only; checked at the record cadence).
    pub stationarity_tol: Option<f64>,
}

/// Owns one trajectory. The spectral representation of the state is
/// carried across steps, so the mean mode of `u` never passes through
/// a transform round trip and is conserved bit for bit.
pub struct Stepper {
    ws: Workspace,
    params: ModelParams,
    cfg: StepperConfig,
    state: State,
    u_hat: SpectralField,
    v_hat: SpectralField,
    kappa: (f64, f64),
    /// Effective Oono target: `mean(v0)` in conserved mode, `params.c`
    /// in off-critical mode.
    c_eff: f64,
    step_index: usize,
    /// Energy of the current state (conserved mode; NaN otherwise).
    last_energy: f64,
    guard_retries_total: usize,
}

impl Stepper {
    pub fn new(params: ModelParams, cfg: StepperConfig, s0: State) -> Result<Self> {
        params.validate()?;
        cfg.validate()?;
        let ws = Workspace::new(s0.grid());
        let c_eff = match params.mode {
            Mode::Conserved => s0.v.mean(),
            Mode::OffCritical => params.c,
        };
        let kappa = match (cfg.kappa_u, cfg.kappa_v) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                let auto = auto_stabilization(&s0, &params);
                (cfg.kappa_u.unwrap_or(auto.0), cfg.kappa_v.unwrap_or(auto.1))
            }
        };
        let u_hat = ws.forward(&s0.u);
        let v_hat = ws.forward(&s0.v);
        let last_energy = match params.mode {
            Mode::Conserved => {
                diagnostics::energy_given_spectra(&ws, &u_hat, &v_hat, &s0.u, &s0.v, &params)
                    .psi_tilde
            }
            Mode::OffCritical => f64::NAN,
        };
        Ok(Self {
            ws,
            params,
            cfg,
            state: s0,
            u_hat,
            v_hat,
            kappa,
            c_eff,
            step_index: 0,
            last_energy,
            guard_retries_total: 0,
        })
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn into_state(self) -> State {
        self.state
    }

    pub fn workspace(&self) -> &Workspace {
        &self.ws
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn c_eff(&self) -> f64 {
        self.c_eff
    }

    pub fn kappa(&self) -> (f64, f64) {
        self.kappa
    }

    pub fn guard_retries_total(&self) -> usize {
        self.guard_retries_total
    }

    /// One IMEX solve from the carried spectra with the given dt.
    fn attempt(
        &self,
        dt: f64,
        fu_hat: &SpectralField,
        fv_hat: &SpectralField,
    ) -> (SpectralField, SpectralField, Field, Field) {
        let grid = self.ws.grid();
        let (ku, kv) = self.kappa;
        let (eu, ev) = (self.params.eps_u_sq, self.params.eps_v_sq);
        let sigma = self.params.sigma;
        let c00 = self.c_eff * (grid.len() as f64).sqrt();

        let mut u_new = self.u_hat.clone();
        let mut v_new = self.v_hat.clone();
        for j in 0..grid.nx {
            for k in 0..grid.ny {
                let idx = j * grid.ny + k;
                let l = self.ws.eigenvalue(j, k);
                let fu = fu_hat.coeffs()[idx];
                let fv = fv_hat.coeffs()[idx];
                let uc = self.u_hat.coeffs()[idx];
                let vc = self.v_hat.coeffs()[idx];

                let num_u = uc * (1.0 + dt * ku * l) - dt * l * fu;
                let den_u = 1.0 + dt * ku * l + dt * eu * l * l;
                u_new.coeffs_mut()[idx] = num_u / den_u;

                let src = if idx == 0 { dt * sigma * c00 } else { 0.0 };
                let num_v = vc * (1.0 + dt * kv * l) - dt * l * fv + src;
                let den_v = 1.0 + dt * sigma + dt * kv * l + dt * ev * l * l;
                v_new.coeffs_mut()[idx] = num_v / den_v;
            }
        }
        let u_field = self.ws.inverse(&u_new);
        let v_field = self.ws.inverse(&v_new);
        (u_new, v_new, u_field, v_field)
    }

    /// Advance by one step of the nominal dt, retrying with halved dt
    /// when the conserved-mode energy guard trips. The nominal dt is
    /// untouched by retries.
    pub fn step(&mut self) -> Result<StepInfo> {
        // Explicit data at the current state, reused across retries.
        let grid = self.ws.grid();
        let mut fu = Field::zeros(grid);
        let mut fv = Field::zeros(grid);
        for i in 0..grid.len() {
            let (du, dv) = self
                .params
                .potential
                .f_delta_grad(self.state.u.data()[i], self.state.v.data()[i]);
            fu.data_mut()[i] = du;
            fv.data_mut()[i] = dv;
        }
        let fu_hat = self.ws.forward(&fu);
        let fv_hat = self.ws.forward(&fv);

        let conserved = self.params.mode == Mode::Conserved;
        let mut dt = self.cfg.dt;
        let mut retries = 0usize;
        loop {
            let (uh, vh, u, v) = self.attempt(dt, &fu_hat, &fv_hat);
            let energy = if conserved {
                Some(
                    diagnostics::energy_given_spectra(&self.ws, &uh, &vh, &u, &v, &self.params)
                        .psi_tilde,
                )
            } else {
                None
            };
            // A non-finite energy is treated as a guard violation so a
            // halved step can recover from overshoot.
            let guard_ok = match energy {
                Some(e) => {
                    e.is_finite()
                        && e - self.last_energy <= GUARD_TOL * (1.0 + self.last_energy.abs())
                }
                None => true,
            };
            if guard_ok {
                if !(u.all_finite() && v.all_finite()) {
                    return Err(Error::NonFinite {
                        what: "state after step",
                        t: self.state.t,
                    });
                }
                self.u_hat = uh;
                self.v_hat = vh;
                self.state.u = u;
                self.state.v = v;
                self.state.t += dt;
                if let Some(e) = energy {
                    self.last_energy = e;
                }
                self.step_index += 1;
                self.guard_retries_total += retries;
                self.maybe_refresh_kappa();
                return Ok(StepInfo {
                    dt_effective: dt,
                    retries,
                });
            }
            if retries >= self.cfg.max_retries {
                let inc = energy.expect("guard only trips in conserved mode") - self.last_energy;
                return Err(Error::GuardExhausted {
                    retries,
                    last_increment: inc,
                });
            }
            retries += 1;
            dt *= 0.5;
        }
    }

    fn maybe_refresh_kappa(&mut self) {
        if self.cfg.kappa_u.is_some() && self.cfg.kappa_v.is_some() {
            return;
        }
        let every = self.cfg.recompute_interval;
        if every == 0 || self.step_index % every != 0 {
            return;
        }
        let auto = auto_stabilization(&self.state, &self.params);
        self.kappa = (
            self.cfg.kappa_u.unwrap_or(auto.0),
            self.cfg.kappa_v.unwrap_or(auto.1),
        );
    }

    /// Iterate [`Stepper::step`] until `t_end`, emitting diagnostics
    /// records and snapshots on their cadences. With a cadence of `n`,
    /// a run of `k` steps emits exactly `ceil(k / n)` records.
    pub fn run(
        &mut self,
        t_end: f64,
        sched: &RunSchedule,
        mut on_diag: impl FnMut(&DiagnosticsRecord),
        mut on_snap: impl FnMut(&State),
    ) -> Result<RunOutcome> {
        if t_end < self.state.t {
            return Err(Error::InvalidParams {
                what: "t_end",
                why: format!("t_end = {t_end} is before current t = {}", self.state.t),
            });
        }
        let mut steps = 0usize;
        let mut records = 0usize;
        let retries_at_start = self.guard_retries_total;
        while self.state.t < t_end - 0.5 * self.cfg.dt {
            let will_record = sched.diag_every > 0 && steps % sched.diag_every == 0;
            let prev = if will_record {
                Some(self.state.clone())
            } else {
                None
            };
            let info = self.step()?;
            steps += 1;
            if sched.snapshot_every > 0 && (steps - 1) % sched.snapshot_every == 0 {
                on_snap(&self.state);
            }
            if let Some(prev) = prev {
                let rec = diagnostics::record(
                    &self.ws,
                    &prev,
                    &self.state,
                    &self.params,
                    info.dt_effective,
                )?;
                records += 1;
                on_diag(&rec);
                if let Some(tol) = sched.stationarity_tol {
                    if self.params.mode == Mode::Conserved {
                        let report =
                            diagnostics::stationarity(&self.ws, &self.state, &self.params, tol)?;
                        if report.is_stationary {
                            return Ok(RunOutcome {
                                stop: StopReason::Stationary(report),
                                steps,
                                records,
                                guard_retries: self.guard_retries_total - retries_at_start,
                            });
                        }
                    }
                }
            }
        }
        Ok(RunOutcome {
            stop: StopReason::TimeReached,
            steps,
            records,
            guard_retries: self.guard_retries_total - retries_at_start,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::Partial;
    use approx::assert_relative_eq;

    fn grid16() -> Grid {
        Grid::new(16, 16, 1.0, 1.0).unwrap()
    }

    fn params(mode: Mode, sigma: f64, c: f64) -> ModelParams {
        ModelParams::new(1e-3, 1e-3, sigma, c, mode, PotentialParams::default()).unwrap()
    }

    #[test]
    fn constant_state_is_fixed_point() {
        let grid = grid16();
        let s0 = initial_state(grid, InitKind::ConstantPlusNoise, 0.2, -0.1, 0.0, 1, 1e-3).unwrap();
        let p = params(Mode::Conserved, 0.5, 0.0);
        let mut st = Stepper::new(p, StepperConfig::new(1e-3), s0.clone()).unwrap();
        for _ in 0..5 {
            st.step().unwrap();
        }
        for (a, b) in st.state().u().data().iter().zip(s0.u().data()) {
            assert_relative_eq!(a, b, max_relative = 1e-13);
        }
        for (a, b) in st.state().v().data().iter().zip(s0.v().data()) {
            assert_relative_eq!(a, b, max_relative = 1e-13);
        }
        assert_relative_eq!(st.state().t(), 5e-3, max_relative = 1e-12);
    }

    #[test]
    fn mass_laws_per_step() {
        let grid = grid16();
        let s0 =
            initial_state(grid, InitKind::ConstantPlusNoise, 0.1, 0.1, 0.05, 7, 1e-3).unwrap();
        let p = params(Mode::OffCritical, 1.0, 0.0);
        let dt = 0.1;
        let mut st = Stepper::new(p, StepperConfig::new(dt), s0.clone()).unwrap();
        let mu0 = s0.u().mean();
        let mut vbar = s0.v().mean();
        for _ in 0..20 {
            st.step().unwrap();
            assert!((st.state().u().mean() - mu0).abs() <= 1e-14);
            let predicted = vbar / (1.0 + dt * 1.0);
            vbar = st.state().v().mean();
            assert!((vbar - predicted).abs() <= 1e-14);
        }
        // sigma = 1, c = 0, vbar0 = 0.1, dt = 0.1: after one step 0.1/1.1.
        let s1 = initial_state(grid, InitKind::ConstantPlusNoise, 0.0, 0.1, 0.0, 3, 1e-3).unwrap();
        let mut st1 =
            Stepper::new(params(Mode::OffCritical, 1.0, 0.0), StepperConfig::new(0.1), s1).unwrap();
        st1.step().unwrap();
        assert_relative_eq!(st1.state().v().mean(), 0.1 / 1.1, max_relative = 1e-13);
    }

    #[test]
    fn conserved_mode_pins_c_to_initial_mean() {
        let grid = grid16();
        let s0 =
            initial_state(grid, InitKind::ConstantPlusNoise, 0.0, 0.25, 0.05, 11, 1e-3).unwrap();
        // params.c deliberately different from mean(v0)
        let p = params(Mode::Conserved, 0.8, -0.5);
        let mut st = Stepper::new(p, StepperConfig::new(1e-3), s0.clone()).unwrap();
        assert_relative_eq!(st.c_eff(), s0.v().mean(), max_relative = 1e-14);
        for _ in 0..50 {
            st.step().unwrap();
        }
        assert!((st.state().v().mean() - s0.v().mean()).abs() <= 1e-13);
    }

    #[test]
    fn initial_state_contract() {
        let grid = grid16();
        // amplitude 0 is a constant state
        let s = initial_state(grid, InitKind::ConstantPlusNoise, 0.2, 0.0, 0.0, 1, 1e-3).unwrap();
        assert!(s.u().data().iter().all(|&x| x == 0.2));
        // exact means
        let s = initial_state(grid, InitKind::ConstantPlusNoise, 0.2, -0.3, 0.1, 42, 1e-3).unwrap();
        assert!((s.u().mean() - 0.2).abs() <= 1e-15);
        assert!((s.v().mean() + 0.3).abs() <= 1e-15);
        // determinism
        let a = initial_state(grid, InitKind::ConstantPlusNoise, 0.1, 0.1, 0.3, 9, 1e-3).unwrap();
        let b = initial_state(grid, InitKind::ConstantPlusNoise, 0.1, 0.1, 0.3, 9, 1e-3).unwrap();
        assert_eq!(a.u().data(), b.u().data());
        assert_eq!(a.v().data(), b.v().data());
        let c = initial_state(grid, InitKind::ConstantPlusNoise, 0.1, 0.1, 0.3, 10, 1e-3).unwrap();
        assert_ne!(a.u().data(), c.u().data());
        // amplitude too large
        assert!(matches!(
            initial_state(grid, InitKind::ConstantPlusNoise, 0.9, 0.0, 0.2, 1, 1e-3),
            Err(Error::AmplitudeTooLarge { .. })
        ));
        // omega >= 2 delta for anything the constructor produces
        let s = initial_state(grid, InitKind::ConstantPlusNoise, 0.5, -0.5, 0.4, 5, 1e-2).unwrap();
        assert!(s.u().max_abs() <= 1.0 - 2.0 * 1e-2 + 1e-12);
        assert!(s.v().max_abs() <= 1.0 - 2.0 * 1e-2 + 1e-12);
    }

    #[test]
    fn two_mode_excites_single_modes() {
        let grid = grid16();
        let ws = Workspace::new(grid);
        let s = initial_state(grid, InitKind::TwoMode, 0.0, 0.0, 1e-3, 0, 1e-3).unwrap();
        let su = ws.forward(s.u());
        let sv = ws.forward(s.v());
        for j in 0..grid.nx {
            for k in 0..grid.ny {
                if !((j, k) == (1, 0) || (j, k) == (0, 0)) {
                    assert!(su.coeff(j, k).abs() < 1e-15);
                }
                if !((j, k) == (0, 1) || (j, k) == (0, 0)) {
                    assert!(sv.coeff(j, k).abs() < 1e-15);
                }
            }
        }
        assert!(su.coeff(1, 0).abs() > 0.0);
        assert!(sv.coeff(0, 1).abs() > 0.0);
    }

    #[test]
    fn auto_stabilization_properties() {
        let grid = grid16();
        let s = initial_state(grid, InitKind::ConstantPlusNoise, 0.0, 0.0, 0.05, 2, 1e-3).unwrap();
        // decoupled: Hessian diagonal, entries S'' - theta0; the margin
        // alone is theta_0u + theta_0v.
        let p0 = ModelParams::new(
            1e-3,
            1e-3,
            0.5,
            0.0,
            Mode::Conserved,
            PotentialParams::new(1.0, 2.0, 1.0, 2.0, 0.0, 0.0, 0.0, 1e-3).unwrap(),
        )
        .unwrap();
        let (ku, kv) = auto_stabilization(&s, &p0);
        assert_eq!(ku, kv);
        assert!(ku >= 2.0);

        // kappa is nondecreasing in |alpha|.
        let mut last = 0.0;
        for alpha in [0.0, 0.5, 1.0, 2.0] {
            let p = ModelParams::new(
                1e-3,
                1e-3,
                0.5,
                0.0,
                Mode::Conserved,
                PotentialParams::new(1.0, 2.0, 1.0, 2.0, alpha, 0.0, 0.0, 1e-3).unwrap(),
            )
            .unwrap();
            let (k, _) = auto_stabilization(&s, &p);
            assert!(k >= last);
            last = k;
        }
    }

    #[test]
    fn chemical_potentials_constant_state() {
        let grid = grid16();
        let s = initial_state(grid, InitKind::ConstantPlusNoise, 0.3, -0.2, 0.0, 1, 1e-3).unwrap();
        let p = params(Mode::Conserved, 0.5, 0.0);
        let ws = Workspace::new(grid);
        let (mu, _phi, phit) = chemical_potentials(&ws, &s, &p).unwrap();
        let expect = p.potential.f_delta(0.3, -0.2, Partial::Du);
        for &x in mu.data() {
            assert_relative_eq!(x, expect, max_relative = 1e-12, epsilon = 1e-13);
        }
        // phi_tilde constant too (fluctuation part vanishes)
        let first = phit.data()[0];
        for &x in phit.data() {
            assert!((x - first).abs() <= 1e-12);
        }
    }

    #[test]
    fn run_bookkeeping() {
        let grid = grid16();
        let s0 = initial_state(grid, InitKind::ConstantPlusNoise, 0.0, 0.0, 0.05, 3, 1e-3).unwrap();
        let p = params(Mode::Conserved, 0.5, 0.0);
        let mut st = Stepper::new(p, StepperConfig::new(1e-3), s0).unwrap();

        // t_end == t0: zero steps.
        let out = st.run(0.0, &RunSchedule::default(), |_| {}, |_| {}).unwrap();
        assert_eq!(out.steps, 0);

        // 10 steps at cadence 3: ceil(10/3) = 4 records.
        let mut n = 0;
        let sched = RunSchedule {
            diag_every: 3,
            ..Default::default()
        };
        let out = st.run(10.0 * 1e-3, &sched, |_| n += 1, |_| {}).unwrap();
        assert_eq!(out.steps, 10);
        assert_eq!(out.records, 4);
        assert_eq!(n, 4);
    }

    #[test]
    fn guard_triggers_on_oversized_step() {
        let grid = grid16();
        let s0 = initial_state(grid, InitKind::ConstantPlusNoise, 0.0, 0.0, 0.4, 5, 1e-3).unwrap();
        let p = params(Mode::Conserved, 0.5, 0.0);
        // kappa forced to zero and a huge dt: the explicit nonlinearity
        // overshoots and the energy rises.
        let mut cfg = StepperConfig::new(5.0);
        cfg.kappa_u = Some(0.0);
        cfg.kappa_v = Some(0.0);
        cfg.max_retries = 0;
        let mut st = Stepper::new(p.clone(), cfg, s0.clone()).unwrap();
        match st.step() {
            Err(Error::GuardExhausted { .. }) => {}
            other => panic!("expected guard exhaustion, got {other:?}"),
        }

        // With retries allowed the step halves dt and proceeds.
        let mut cfg = StepperConfig::new(5.0);
        cfg.kappa_u = Some(0.0);
        cfg.kappa_v = Some(0.0);
        cfg.max_retries = 30;
        let mut st = Stepper::new(p, cfg, s0).unwrap();
        let info = st.step().unwrap();
        assert!(info.retries > 0);
        assert!(info.dt_effective < 5.0);
    }

    #[test]
    fn consistency_is_first_order() {
        let grid = grid16();
        let p = params(Mode::Conserved, 0.5, 0.0);
        let s0 = initial_state(grid, InitKind::TwoMode, 0.4, 0.4, 0.05, 0, 1e-3).unwrap();
        let t_end = 0.02;
        let sup_gap = |dta: f64, dtb: f64| -> f64 {
            let mut a = Stepper::new(p.clone(), StepperConfig::new(dta), s0.clone()).unwrap();
            a.run(t_end, &RunSchedule::default(), |_| {}, |_| {}).unwrap();
            let mut b = Stepper::new(p.clone(), StepperConfig::new(dtb), s0.clone()).unwrap();
            b.run(t_end, &RunSchedule::default(), |_| {}, |_| {}).unwrap();
            a.state()
                .u()
                .sub(b.state().u())
                .unwrap()
                .max_abs()
                .max(a.state().v().sub(b.state().v()).unwrap().max_abs())
        };
        let g1 = sup_gap(2e-3, 1e-3);
        let g2 = sup_gap(1e-3, 5e-4);
        let ratio = g1 / g2;
        assert!(
            (1.5..2.5).contains(&ratio),
            "not first order: gaps {g1:.3e}/{g2:.3e} ratio {ratio:.3}"
        );
    }

    #[test]
    fn trajectory_independent_of_delta_when_separated() {
        let grid = grid16();
        let s0 = initial_state(grid, InitKind::ConstantPlusNoise, 0.0, 0.0, 0.05, 8, 1e-3).unwrap();
        let run = |delta: f64| -> State {
            let pot = PotentialParams {
                delta,
                ..PotentialParams::default()
            };
            let p = ModelParams::new(1e-3, 1e-3, 0.5, 0.0, Mode::Conserved, pot).unwrap();
            let mut st = Stepper::new(p, StepperConfig::new(1e-3), s0.clone()).unwrap();
            st.run(0.05, &RunSchedule::default(), |_| {}, |_| {}).unwrap();
            st.into_state()
        };
        let a = run(1e-3);
        let b = run(1e-4);
        assert!(a.u().max_abs() < 1.0 - 1e-3);
        let gap = a
            .u()
            .sub(b.u())
            .unwrap()
            .max_abs()
            .max(a.v().sub(b.v()).unwrap().max_abs());
        assert!(gap <= 1e-12, "delta leaked into the trajectory: {gap:.3e}");
    }

    #[test]
    fn rejects_t_end_in_past() {
        let grid = grid16();
        let s0 = initial_state(grid, InitKind::ConstantPlusNoise, 0.0, 0.0, 0.0, 1, 1e-3).unwrap();
        let p = params(Mode::Conserved, 0.5, 0.0);
        let mut st = Stepper::new(p, StepperConfig::new(1e-3), s0).unwrap();
        st.run(0.01, &RunSchedule::default(), |_| {}, |_| {}).unwrap();
        assert!(st.run(0.0, &RunSchedule::default(), |_| {}, |_| {}).is_err());
    }
}
