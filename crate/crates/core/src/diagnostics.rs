//! Observables: energies, the energy-identity residual, the
//! dissipative-bound witness, mass trajectories against closed forms,
//! separation margins, stationarity detection, continuous-dependence
//! probes, and the linearized growth-rate oracle.

use crate::dynamics::{chemical_potentials, Mode, ModelParams, State};
use crate::error::{Error, Result};
use crate::spectral::{pairwise_sum, Field, SpectralField, Workspace};

/// Energy of a state, split by term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBreakdown {
    /// `(eps_u^2 / 2) ||grad u||^2`
    pub grad_u: f64,
    /// `(eps_v^2 / 2) ||grad v||^2`
    pub grad_v: f64,
    /// `integral of F_delta(u, v)`
    pub bulk: f64,
    /// `(sigma / 2) ||v - mean v||_*^2`
    pub nonlocal: f64,
    /// `grad_u + grad_v + bulk`
    pub psi: f64,
    /// `psi + nonlocal`: the Ohta-Kawasaki energy, the Lyapunov
    /// functional of the conserved system.
    pub psi_tilde: f64,
}

/// Energy from precomputed spectra plus the physical-space samples.
/// Shared by [`energy`] and the stepper's guard so both see the same
/// discrete energy.
pub fn energy_given_spectra(
    ws: &Workspace,
    u_hat: &SpectralField,
    v_hat: &SpectralField,
    u: &Field,
    v: &Field,
    p: &ModelParams,
) -> EnergyBreakdown {
    let h1u = ws.h1_seminorm_from_coeffs(u_hat);
    let h1v = ws.h1_seminorm_from_coeffs(v_hat);
    let grad_u = 0.5 * p.eps_u_sq * h1u * h1u;
    let grad_v = 0.5 * p.eps_v_sq * h1v * h1v;

    let fvals: Vec<f64> = u
        .data()
        .iter()
        .zip(v.data())
        .map(|(&a, &b)| p.potential.f_delta(a, b, crate::potential::Partial::Value))
        .collect();
    let bulk = u.grid().cell_area() * pairwise_sum(&fvals);

    let nonlocal = if p.sigma == 0.0 {
        0.0
    } else {
        let star = ws.star_norm_from_coeffs(v_hat);
        0.5 * p.sigma * star * star
    };
    let psi = grad_u + grad_v + bulk;
    EnergyBreakdown {
        grad_u,
        grad_v,
        bulk,
        nonlocal,
        psi,
        psi_tilde: psi + nonlocal,
    }
}

/// Energy of a state.
pub fn energy(ws: &Workspace, s: &State, p: &ModelParams) -> EnergyBreakdown {
    let u_hat = ws.forward(s.u());
    let v_hat = ws.forward(s.v());
    energy_given_spectra(ws, &u_hat, &v_hat, s.u(), s.v(), p)
}

/// Per-record scalar observables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub mean_u: f64,
    pub mean_v: f64,
    pub psi: f64,
    pub psi_tilde: f64,
    /// `||grad mu||`
    pub grad_mu_norm: f64,
    /// `||grad phi_tilde||`
    pub grad_phit_norm: f64,
    /// `1 - max |u|`; negative only if the regularized region was entered.
    pub omega_u: f64,
    pub omega_v: f64,
    pub dt_effective: f64,
    /// Discrete energy-identity residual over the last step
    /// (conserved mode; NaN in off-critical mode).
    pub energy_residual: f64,
}

/// Assemble a record for the step `prev -> next`.
pub fn record(
    ws: &Workspace,
    prev: &State,
    next: &State,
    p: &ModelParams,
    dt_effective: f64,
) -> Result<DiagnosticsRecord> {
    let e = energy(ws, next, p);
    let (mu, _phi, phit) = chemical_potentials(ws, next, p)?;
    let (omega_u, omega_v) = separation(next);
    let energy_residual = match p.mode {
        Mode::Conserved => energy_identity_residual(ws, prev, next, p, dt_effective)?,
        Mode::OffCritical => f64::NAN,
    };
    Ok(DiagnosticsRecord {
        t: next.t(),
        mean_u: next.u().mean(),
        mean_v: next.v().mean(),
        psi: e.psi,
        psi_tilde: e.psi_tilde,
        grad_mu_norm: ws.h1_seminorm(&mu),
        grad_phit_norm: ws.h1_seminorm(&phit),
        omega_u,
        omega_v,
        dt_effective,
        energy_residual,
    })
}

/// Residual of the discrete energy identity over one step,
/// `(E(next) - E(prev))/dt + ||grad mu||^2 + ||grad phi_tilde||^2`,
/// with the gradient terms averaged between the endpoints (midpoint
/// convention, one order more accurate than one-sided evaluation).
/// O(dt) on smooth trajectories. Conserved mode only.
pub fn energy_identity_residual(
    ws: &Workspace,
    prev: &State,
    next: &State,
    p: &ModelParams,
    dt: f64,
) -> Result<f64> {
    if p.mode != Mode::Conserved {
        return Err(Error::ConservedOnly {
            what: "energy_identity_residual",
        });
    }
    let e_prev = energy(ws, prev, p).psi_tilde;
    let e_next = energy(ws, next, p).psi_tilde;
    let (mu_p, _, phit_p) = chemical_potentials(ws, prev, p)?;
    let (mu_n, _, phit_n) = chemical_potentials(ws, next, p)?;
    let gmu = 0.5 * (ws.h1_seminorm(&mu_p).powi(2) + ws.h1_seminorm(&mu_n).powi(2));
    let gph = 0.5 * (ws.h1_seminorm(&phit_p).powi(2) + ws.h1_seminorm(&phit_n).powi(2));
    Ok((e_next - e_prev) / dt + gmu + gph)
}

/// Smallest constant C for which the sampled dissipative inequality
/// `Psi(t) + (1/2) int_t^{t+1} (||grad mu||^2 + ||grad phi_tilde||^2)
///   <= Psi(0) e^(-sigma t) + C`
/// holds over all recorded t with a full unit window available.
/// Times are measured relative to the first record, whose `psi` plays
/// the role of `Psi(0)`. Report-only: the constant is an empirical
/// envelope.
pub fn dissipative_bound_witness(series: &[DiagnosticsRecord], p: &ModelParams) -> Result<f64> {
    if series.len() < 2 {
        return Err(Error::InsufficientSeries {
            why: format!("need at least 2 records, got {}", series.len()),
        });
    }
    let t0 = series[0].t;
    let t_last = series[series.len() - 1].t;
    if t_last - t0 < 1.0 {
        return Err(Error::InsufficientSeries {
            why: format!("series spans {:.3}, need a full unit window", t_last - t0),
        });
    }
    let g = |r: &DiagnosticsRecord| r.grad_mu_norm.powi(2) + r.grad_phit_norm.powi(2);
    let psi0 = series[0].psi;
    let mut c_max = f64::NEG_INFINITY;
    for (i, r) in series.iter().enumerate() {
        let tau = r.t - t0;
        let end = r.t + 1.0;
        if end > t_last + 1e-9 {
            break;
        }
        // Trapezoid over records in [r.t, r.t + 1], linear
        // interpolation at the right edge.
        let mut integral = 0.0;
        let mut j = i;
        while j + 1 < series.len() && series[j + 1].t <= end + 1e-12 {
            let dt = series[j + 1].t - series[j].t;
            integral += 0.5 * dt * (g(&series[j]) + g(&series[j + 1]));
            j += 1;
        }
        if series[j].t < end && j + 1 < series.len() {
            let (a, b) = (&series[j], &series[j + 1]);
            let frac = (end - a.t) / (b.t - a.t);
            let g_end = g(a) + frac * (g(b) - g(a));
            integral += 0.5 * (end - a.t) * (g(a) + g_end);
        }
        let c = r.psi + 0.5 * integral - psi0 * (-p.sigma * tau).exp();
        c_max = c_max.max(c);
    }
    if c_max.is_finite() {
        Ok(c_max)
    } else {
        Err(Error::InsufficientSeries {
            why: "no record has a full unit window after it".into(),
        })
    }
}

/// Mass-trajectory errors of `mean(v)`.
#[derive(Debug, Clone, Copy)]
pub struct MeanTrajectoryError {
    /// `max_t |mean_v(t) - (c + e^(-sigma t) (vbar0 - c))|`
    pub max_abs_error: f64,
    /// Max over adjacent single-step records of the exact-recurrence
    /// residual `|vbar' (1 + dt sigma) - vbar - dt sigma c|`; NaN when
    /// no adjacent records are one step apart.
    pub max_recurrence_residual: f64,
}

/// Compare the recorded `mean_v` trajectory with the closed forms.
/// `v_bar0` is the mean of `v` at t = 0 (records start after the first
/// step, so it cannot be recovered from the series itself).
pub fn mean_trajectory_error(
    series: &[DiagnosticsRecord],
    p: &ModelParams,
    v_bar0: f64,
) -> Result<MeanTrajectoryError> {
    if series.is_empty() {
        return Err(Error::InsufficientSeries {
            why: "empty series".into(),
        });
    }
    let c = match p.mode {
        Mode::Conserved => v_bar0,
        Mode::OffCritical => p.c,
    };
    let mut max_err = 0.0f64;
    for r in series {
        let expect = c + (-p.sigma * r.t).exp() * (v_bar0 - c);
        max_err = max_err.max((r.mean_v - expect).abs());
    }
    let mut max_res = f64::NAN;
    for w in series.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let dt = b.dt_effective;
        if (b.t - a.t - dt).abs() <= 1e-9 * dt.max(1e-300) {
            let res = (b.mean_v * (1.0 + dt * p.sigma) - a.mean_v - dt * p.sigma * c).abs();
            max_res = if max_res.is_nan() { res } else { max_res.max(res) };
        }
    }
    Ok(MeanTrajectoryError {
        max_abs_error: max_err,
        max_recurrence_residual: max_res,
    })
}

/// Separation margins `(1 - max|u|, 1 - max|v|)`. A non-positive value
/// flags that the regularized region was entered.
pub fn separation(s: &State) -> (f64, f64) {
    (1.0 - s.u().max_abs(), 1.0 - s.v().max_abs())
}

/// Stationarity test per the equilibrium definition: both chemical
/// potentials spatially constant at the prescribed means.
#[derive(Debug, Clone, Copy)]
pub struct StationarityReport {
    pub is_stationary: bool,
    /// Fitted constant `mean(mu)`.
    pub mu_infty: f64,
    /// Fitted constant `mean(phi_tilde)`.
    pub phi_infty: f64,
    /// Spatial standard deviation of `mu`.
    pub residual_mu: f64,
    /// Spatial standard deviation of `phi_tilde`.
    pub residual_phi: f64,
    /// `||grad mu|| + ||grad phi_tilde||`
    pub grad_sum: f64,
}

/// Conserved mode only. Two redundant criteria (gradient norms and
/// spatial scatter) guard against false positives on coarse grids.
pub fn stationarity(
    ws: &Workspace,
    s: &State,
    p: &ModelParams,
    tol: f64,
) -> Result<StationarityReport> {
    if p.mode != Mode::Conserved {
        return Err(Error::ConservedOnly {
            what: "stationarity",
        });
    }
    let (mu, _, phit) = chemical_potentials(ws, s, p)?;
    let mu_infty = mu.mean();
    let phi_infty = phit.mean();
    let residual_mu = mu.stddev();
    let residual_phi = phit.stddev();
    let grad_sum = ws.h1_seminorm(&mu) + ws.h1_seminorm(&phit);
    let is_stationary = grad_sum < tol
        && residual_mu < tol * (1.0 + mu_infty.abs())
        && residual_phi < tol * (1.0 + phi_infty.abs());
    Ok(StationarityReport {
        is_stationary,
        mu_infty,
        phi_infty,
        residual_mu,
        residual_phi,
        grad_sum,
    })
}

/// Per-time `||u1 - u2||_{-1} + ||v1 - v2||_{-1}` for two aligned runs.
#[derive(Debug, Clone)]
pub struct GapSeries {
    /// `(t, gap)` pairs.
    pub gaps: Vec<(f64, f64)>,
}

impl GapSeries {
    /// Final-to-initial amplification of the gap.
    pub fn max_over_initial(&self) -> f64 {
        let first = self.gaps.first().map(|&(_, g)| g).unwrap_or(0.0);
        let max = self.gaps.iter().fold(0.0f64, |m, &(_, g)| m.max(g));
        if first == 0.0 {
            if max == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            max / first
        }
    }
}

/// Continuous-dependence probe over two state series with aligned
/// time stamps and a shared grid.
pub fn continuous_dependence_probe(
    ws: &Workspace,
    run1: &[State],
    run2: &[State],
) -> Result<GapSeries> {
    if run1.len() != run2.len() {
        return Err(Error::MisalignedSeries {
            why: format!("lengths differ: {} vs {}", run1.len(), run2.len()),
        });
    }
    let mut gaps = Vec::with_capacity(run1.len());
    for (a, b) in run1.iter().zip(run2) {
        if a.grid() != b.grid() {
            return Err(Error::MisalignedSeries {
                why: "grids differ".into(),
            });
        }
        if (a.t() - b.t()).abs() > 1e-9 * (1.0 + a.t().abs()) {
            return Err(Error::MisalignedSeries {
                why: format!("time stamps differ: {} vs {}", a.t(), b.t()),
            });
        }
        let du = a.u().sub(b.u())?;
        let dv = a.v().sub(b.v())?;
        gaps.push((a.t(), ws.minus_one_norm(&du) + ws.minus_one_norm(&dv)));
    }
    Ok(GapSeries { gaps })
}

/// Linearization of the dynamics about the constant state
/// `(u_bar, v_bar)` restricted to one cosine mode with eigenvalue
/// `lambda`: the coefficient pair evolves by `d/dt w = L w` with
/// `L = -lambda (diag(eps_u^2 lambda, eps_v^2 lambda) + H) - diag(0, sigma)`
/// and `H` the Hessian of the potential. `L` is symmetric, so the
/// eigenvalues are real; they are returned sorted ascending.
#[derive(Debug, Clone, Copy)]
pub struct LinearizedMode {
    pub matrix: [[f64; 2]; 2],
    pub eigenvalues: [f64; 2],
}

pub fn linear_growth_rates(
    p: &ModelParams,
    u_bar: f64,
    v_bar: f64,
    lambda: f64,
) -> Result<LinearizedMode> {
    let interior = 1.0 - p.potential.delta;
    for (name, x) in [("u_bar", u_bar), ("v_bar", v_bar)] {
        if !(x.is_finite() && x.abs() < interior) {
            return Err(Error::Domain {
                what: name,
                value: x,
                domain: "(-(1 - delta), 1 - delta)",
            });
        }
    }
    let h = p.potential.f_delta_hessian(u_bar, v_bar);
    let matrix = [
        [
            -lambda * (p.eps_u_sq * lambda + h[0][0]),
            -lambda * h[0][1],
        ],
        [
            -lambda * h[1][0],
            -lambda * (p.eps_v_sq * lambda + h[1][1]) - p.sigma,
        ],
    ];
    let m = 0.5 * (matrix[0][0] + matrix[1][1]);
    let rad = (0.5 * (matrix[0][0] - matrix[1][1])).hypot(matrix[0][1]);
    Ok(LinearizedMode {
        matrix,
        eigenvalues: [m - rad, m + rad],
    })
}
