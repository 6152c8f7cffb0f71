//! Trajectory-level diagnostics: the randomized inequality sweep, the
//! mean-mode budget on real runs, and the frozen-baseline regression guards
//! for the observed constants.

use std::sync::Arc;

use channelpks::diagnostics::{
    classify_trajectory, random_state, worst_by_entry, zero_mode_report, AuditFault, BoundKind,
    InequalityAuditor, Outcome,
};
use channelpks::dynamics::{GaussianBump, InitialData, Integrator, SimParams, SimState};
use channelpks::elliptic::DensityBc;
use channelpks::grid::{ChannelGrid, PhysField};

fn grid(nx: usize, ny: usize) -> Arc<ChannelGrid<f64>> {
    ChannelGrid::new(nx, ny, true).unwrap()
}

/// Deterministic observed-constant baselines from the 100-state sweep below
/// (seeds 0..100, 32x32 grid, both wall conditions alternating). The sweep
/// itself proves the fixed-constant bounds; these numbers only pin the
/// *observed* constants so a silent behavior change cannot hide: a drift
/// beyond 20 percent fails the regression guard.
const OBSERVED_BASELINES: [(&str, f64); 4] = [
    ("chemo_zero_slope_l4", 0.260680),
    ("chemo_ne_grad_l4", 0.274670),
    ("velocity_grad_l2", 1.000000),
    ("velocity_sup_interp", 0.399729),
];

#[test]
fn hundred_random_states_never_violate_fixed_constants() {
    let g = grid(32, 32);
    let neumann = InequalityAuditor::new(&g, DensityBc::Neumann).unwrap();
    let dirichlet = InequalityAuditor::new(&g, DensityBc::Dirichlet).unwrap();

    let mut reports = Vec::with_capacity(100);
    for seed in 0..100u64 {
        let state = random_state(&g, seed).unwrap();
        let auditor = if seed % 2 == 0 { &neumann } else { &dirichlet };
        let report = auditor.audit(&state).unwrap();
        assert_eq!(
            report.violations(),
            0,
            "seed {seed} violated a fixed-constant inequality:\n{}",
            report.to_json().unwrap()
        );
        reports.push(report);
    }

    let worst = worst_by_entry(&reports);
    assert_eq!(worst.len(), 11);
    for w in &worst {
        println!(
            "{:22} kind={:?} min_slack={:+.6e} max_ratio={:.6}",
            w.name, w.kind, w.min_slack, w.max_ratio
        );
        assert_eq!(w.violations, 0);
        if w.kind == BoundKind::Fixed {
            assert!(
                w.min_slack >= -1e-12,
                "{}: fixed bound ran negative: {}",
                w.name,
                w.min_slack
            );
        }
    }

    // the gradient of the recovered velocity carries exactly the enstrophy:
    // the observed constant must sit at 1 up to quadrature error
    let vg = worst.iter().find(|w| w.name == "velocity_grad_l2").unwrap();
    assert!(
        (vg.max_ratio - 1.0).abs() < 1e-2,
        "velocity gradient constant should be 1, got {}",
        vg.max_ratio
    );

    // regression guard on the observed constants (logged above)
    for (name, frozen) in OBSERVED_BASELINES {
        let w = worst.iter().find(|w| w.name == name).unwrap();
        assert!(
            (w.max_ratio - frozen).abs() <= 0.2 * frozen,
            "{name}: observed constant drifted from {frozen} to {}",
            w.max_ratio
        );
    }
}

#[test]
fn decoupled_heat_flow_attains_its_density_peak_at_start() {
    // no chemotaxis, no flow, x-independent data: the densities obey a pure
    // heat equation, so their L2 norms decrease and the mean-mode budget
    // peaks at t = 0
    let g = grid(16, 32);
    let n1 = PhysField::from_fn(&g, |_, y| {
        let p = 1.0 - y * y;
        0.5 + p * p
    });
    let state = SimState {
        t: 0.0,
        n1,
        n2: PhysField::zeros(&g),
        omega: PhysField::zeros(&g),
        u01: vec![0.0; g.ny() + 1],
    };
    let mut params = SimParams::new(0.0, 0.0, 0.0, DensityBc::Neumann).unwrap();
    params.dt = 2e-3;
    params.t_end = 0.5;
    let mut integ = Integrator::new(&g, params.clone(), &state).unwrap();
    let traj = integ.run(0.05).unwrap();

    assert!(matches!(
        traj.termination,
        channelpks::dynamics::Termination::Completed
    ));
    assert_eq!(classify_trajectory(&traj), Outcome::Bounded);

    for pair in traj.samples.windows(2) {
        assert!(
            pair[1].n1_zero_l2 <= pair[0].n1_zero_l2 * (1.0 + 1e-10),
            "density L2 must not grow under pure diffusion"
        );
        assert!(pair[1].omega_zero_l2 < 1e-12);
        assert!(pair[1].n1_ne_l2 < 1e-12, "no x-dependence should appear");
    }

    let report = zero_mode_report(&traj, &params).unwrap();
    let first = &traj.samples[0];
    assert!(
        (report.t1_emp - first.n1_zero_l2 * first.n1_zero_l2).abs()
            <= 1e-10 * report.t1_emp,
        "budget must be attained at t = 0"
    );
    assert_eq!(report.t2_emp, 0.0);
    assert_eq!(report.t3_emp, 0.0);
}

/// Frozen from the deterministic coupled run below: the observed mean-flow
/// constant `c3 = t3_emp / t3_pred`. The assertion window is a factor of 4
/// either way, wide enough for benign numerical drift and tight enough to
/// catch a broken mean-flow update or budget.
const C3_BASELINE: f64 = 0.178793;

#[test]
fn coupled_run_keeps_budget_near_baseline_and_final_state_clean() {
    let g = grid(32, 32);
    let bc = DensityBc::Neumann;
    let init = InitialData {
        n1_bumps: vec![GaussianBump {
            mass: 2.0,
            x0: 1.0,
            y0: 0.2,
            sigma: 0.7,
        }],
        n2_bumps: vec![GaussianBump {
            mass: 1.0,
            x0: 4.0,
            y0: -0.3,
            sigma: 0.8,
        }],
        omega_bumps: Vec::new(),
        u01_amplitude: 0.3,
        noise_amplitude: 0.0,
        noise_seed: 0,
    };
    let state = channelpks::dynamics::make_initial(&g, bc, &init).unwrap();
    let mut params = SimParams::new(100.0, 1.0, 0.5, bc).unwrap();
    params.dt = 2e-3;
    params.t_end = 0.4;
    let mut integ = Integrator::new(&g, params.clone(), &state).unwrap();
    let traj = integ.run(0.02).unwrap();
    assert!(matches!(
        traj.termination,
        channelpks::dynamics::Termination::Completed
    ));

    let report = zero_mode_report(&traj, &params).unwrap();
    println!(
        "mean-mode budget: c1={:.6} c2={:.6} c3={:.6} (t3_emp={:.6}, t3_pred={:.6})",
        report.c1, report.c2, report.c3, report.t3_emp, report.t3_pred
    );
    assert!(report.t1_emp > 0.0 && report.t1_emp.is_finite());
    assert!(report.t2_emp.is_finite() && report.t3_emp.is_finite());

    assert!(
        report.c3 <= 4.0 * C3_BASELINE && report.c3 >= C3_BASELINE / 4.0,
        "mean-flow constant {} left the factor-4 window around {}",
        report.c3,
        C3_BASELINE
    );

    // the evolved state must still satisfy every fixed-constant inequality
    let auditor = InequalityAuditor::new(&g, bc).unwrap();
    let final_report = auditor.audit(&integ.state()).unwrap();
    assert_eq!(
        final_report.violations(),
        0,
        "evolved state broke a fixed bound:\n{}",
        final_report.to_json().unwrap()
    );
}

#[test]
fn fault_injection_is_visible_end_to_end() {
    let g = grid(24, 24);
    let mut auditor = InequalityAuditor::new(&g, DensityBc::Neumann).unwrap();
    auditor.set_fault(AuditFault::SwapPoincareOperands);
    let mut tripped = 0usize;
    for seed in 0..5u64 {
        let state = random_state(&g, seed).unwrap();
        tripped += auditor.audit(&state).unwrap().violations();
    }
    assert!(
        tripped >= 15,
        "every faulted state must trip all three swapped checks, got {tripped}"
    );
}
