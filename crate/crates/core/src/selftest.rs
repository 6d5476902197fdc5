//! Operator-identity and potential-certificate self-tests, runnable
//! from the CLI (`check` subcommand). Each check returns a pass flag
//! plus a one-line detail so failures are diagnosable from the output.

use crate::error::Result;
use crate::potential::{Component, PotentialParams};
use crate::spectral::{Field, Grid, Workspace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn zero_mean_field(grid: Grid, rng: &mut ChaCha8Rng) -> Field {
    let mut f = Field::from_vec(
        grid,
        (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .expect("sized by construction");
    for _ in 0..2 {
        let m = f.mean();
        for v in f.data_mut() {
            *v -= m;
        }
    }
    f
}

/// Run the whole suite on a 64x64 grid with the default potential.
pub fn run_all() -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let grid = Grid::new(64, 64, 1.0, 1.0)?;
    let ws = Workspace::new(grid);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);

    // Inverse pair N(Af) = f and A(Nf) = f on random zero-mean fields.
    {
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let f = zero_mean_field(grid, &mut rng);
            let af = ws.laplacian(&f).map(|v| -v);
            let back = ws.inv_neumann_laplacian(&af)?;
            worst = worst.max(back.sub(&f)?.l2_norm() / f.l2_norm());
            let nf = ws.inv_neumann_laplacian(&f)?;
            let fwd = ws.laplacian(&nf).map(|v| -v);
            worst = worst.max(fwd.sub(&f)?.l2_norm() / f.l2_norm());
        }
        checks.push(Check {
            name: "inverse-pair",
            passed: worst <= 1e-12,
            detail: format!("max relative defect {worst:.3e} (tol 1e-12)"),
        });
    }

    // Adjoint identity <Au, NL> = <L, u>.
    {
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let u = zero_mean_field(grid, &mut rng);
            let l = zero_mean_field(grid, &mut rng);
            let au = ws.laplacian(&u).map(|v| -v);
            let nl = ws.inv_neumann_laplacian(&l)?;
            let lhs = au.inner(&nl)?;
            let rhs = l.inner(&u)?;
            worst = worst.max((lhs - rhs).abs() / (u.l2_norm() * l.l2_norm()));
        }
        checks.push(Check {
            name: "adjoint-identity",
            passed: worst <= 1e-12,
            detail: format!("max scaled defect {worst:.3e} (tol 1e-12)"),
        });
    }

    // Parseval and transform round trip.
    {
        let f = zero_mean_field(grid, &mut rng);
        let s = ws.forward(&f);
        let spec = grid.cell_area() * s.coeffs().iter().map(|c| c * c).sum::<f64>();
        let phys = f.l2_norm().powi(2);
        let parseval = (spec - phys).abs() / phys;
        let back = ws.inverse(&s);
        let round = back.sub(&f)?.max_abs() / f.max_abs();
        let passed = parseval <= 1e-12 && round <= 1e-13;
        checks.push(Check {
            name: "parseval-roundtrip",
            passed,
            detail: format!("parseval {parseval:.3e} (tol 1e-12), roundtrip {round:.3e} (tol 1e-13)"),
        });
    }

    // Helmholtz residual against the forward symbol.
    {
        let rhs = zero_mean_field(grid, &mut rng);
        let (a, b, c) = (1.0, 0.05, 1e-4);
        let x = ws.helmholtz_solve(a, b, c, &rhs)?;
        // forward apply: a x + b (-Lap) x + c Lap^2 x
        let lap = ws.laplacian(&x);
        let lap2 = ws.laplacian(&lap);
        let mut res = Field::zeros(grid);
        for i in 0..grid.len() {
            res.data_mut()[i] =
                a * x.data()[i] - b * lap.data()[i] + c * lap2.data()[i] - rhs.data()[i];
        }
        let rel = res.l2_norm() / rhs.l2_norm();
        checks.push(Check {
            name: "helmholtz-residual",
            passed: rel <= 1e-11,
            detail: format!("relative residual {rel:.3e} (tol 1e-11)"),
        });
    }

    // Potential certificates for the default parameters.
    {
        let p = PotentialParams::default();
        let mut convex_ok = true;
        let mut worst_margin = f64::INFINITY;
        for comp in [Component::U, Component::V] {
            let theta = p.theta(comp);
            let n = 100_000;
            for i in 0..n {
                let r = -3.0 + 6.0 * (i as f64) / ((n - 1) as f64);
                let margin = p.hat_s_delta(r, comp, 2) / theta - (1.0 - 1e-9);
                worst_margin = worst_margin.min(margin);
                if margin < 0.0 {
                    convex_ok = false;
                }
            }
        }
        checks.push(Check {
            name: "entropy-convexity",
            passed: convex_ok,
            detail: format!("min scaled margin {worst_margin:.3e}"),
        });

        match p.coercivity_constants() {
            Ok((k1, k2)) => {
                let verified = p.verify_coercivity(k1, k2);
                checks.push(Check {
                    name: "coercivity-certificate",
                    passed: k1 > 0.0 && k2 > 0.0 && verified,
                    detail: format!("k1 = {k1:.6e}, k2 = {k2:.6e}, lattice verified: {verified}"),
                });
            }
            Err(e) => checks.push(Check {
                name: "coercivity-certificate",
                passed: false,
                detail: format!("{e}"),
            }),
        }

        // Knot smoothness: FD of order-j derivative across the knot
        // approaches the (j+1)-th closed form as h shrinks.
        let p = PotentialParams {
            delta: 0.1,
            ..PotentialParams::default()
        };
        let mut slopes_ok = true;
        let mut min_slope = f64::INFINITY;
        for knot in [0.9, -0.9] {
            for j in 0..=3 {
                let exact = p.hat_s_delta(knot, Component::U, j + 1);
                let err = |h: f64| {
                    ((p.hat_s_delta(knot + h, Component::U, j)
                        - p.hat_s_delta(knot - h, Component::U, j))
                        / (2.0 * h)
                        - exact)
                        .abs()
                };
                let (h0, h1) = (1e-2, 1.25e-3);
                let slope = (err(h0) / err(h1)).ln() / (h0 / h1).ln();
                min_slope = min_slope.min(slope);
                if slope < 0.9 {
                    slopes_ok = false;
                }
            }
        }
        checks.push(Check {
            name: "knot-smoothness",
            passed: slopes_ok,
            detail: format!("min error slope {min_slope:.2} (need >= 0.9, O(h) or better)"),
        });
    }

    Ok(checks)
}
