//! Network engine behavior on small hand-checkable scenarios.

use kinwave_core::fd::FdCurve;
use kinwave_core::junction::MergeScheme;
use kinwave_core::network::{
    cfl_number, run, validate, Commodity, DestinationBc, Junction, JunctionKind, LinkInit,
    LinkKind, LinkSpec, Network, OriginBc, Probe, ProbeCells, Profile, Scenario, StepError,
};
use kinwave_core::units::UnitSystem;

fn tri_mph() -> FdCurve {
    FdCurve::triangular(65.0, 36.0, 180.0).unwrap()
}

fn link(id: usize, length: f64, lanes: f64, cells: usize) -> LinkSpec {
    LinkSpec { id, kind: LinkKind::Regular, length, lanes, fd: Some(tri_mph()), cells }
}

fn origin(id: usize) -> LinkSpec {
    LinkSpec { id, kind: LinkKind::Origin, length: 0.0, lanes: 1.0, fd: None, cells: 0 }
}

fn destination(id: usize) -> LinkSpec {
    LinkSpec { id, kind: LinkKind::Destination, length: 0.0, lanes: 1.0, fd: None, cells: 0 }
}

fn base_scenario(network: Network, dt: f64, steps: usize) -> Scenario {
    Scenario {
        units: UnitSystem::miles_hours(),
        network,
        dt,
        steps,
        origins: vec![],
        destinations: vec![],
        controls: vec![],
        incidents: vec![],
        init: vec![],
        probes: vec![],
        boundary_probes: vec![],
    }
}

/// Single link fed by an origin and drained by a destination.
fn pipe(cells: usize) -> Network {
    Network {
        links: vec![origin(0), destination(1), link(2, 10.0, 1.0, cells)],
        junctions: vec![
            Junction { upstream: vec![0], downstream: vec![2], kind: JunctionKind::Linear },
            Junction { upstream: vec![2], downstream: vec![1], kind: JunctionKind::Linear },
        ],
        commodities: vec![Commodity { path: vec![0, 2, 1] }],
    }
}

#[test]
fn uniform_under_critical_flow_is_steady() {
    let mut s = base_scenario(pipe(50), 0.002, 200);
    let q_in = 65.0 * 20.0; // flow at rho = 20 vpm
    s.origins =
        vec![(0, OriginBc::Demand(vec![(0, Profile::constant(q_in))]))];
    s.destinations = vec![(1, DestinationBc::Supply(Profile::constant(1e9)))];
    s.init = vec![(2, LinkInit::Uniform { density: 20.0, proportions: vec![1.0] })];
    let art = run(&s).unwrap();
    for cell in &art.final_state_of(2).unwrap().cells {
        assert!((cell.rho - 20.0).abs() < 1e-9, "rho = {}", cell.rho);
    }
    // All recorded fluxes equal the inflow.
    let ef = art.end_flux_of(2).unwrap();
    assert!(ef.inflow.total.iter().all(|f| (f - q_in).abs() < 1e-9));
    assert!(ef.outflow.total.iter().all(|f| (f - q_in).abs() < 1e-9));
    assert!(art.conservation_defect <= 1e-12);
}

#[test]
fn global_vehicle_count_telescopes() {
    // Loading an empty link: the network count equals (inflow - outflow) dt
    // summed over steps, exactly. The horizon outlasts the queue spillback
    // to the origin (the shock needs about 0.83 hours to cross 10 miles).
    let mut s = base_scenario(pipe(40), 0.002, 700);
    s.origins = vec![(0, OriginBc::Demand(vec![(0, Profile::constant(2000.0))]))];
    s.destinations = vec![(1, DestinationBc::Supply(Profile::constant(800.0)))];
    let art = run(&s).unwrap();
    let ef = art.end_flux_of(2).unwrap();
    let loaded: f64 = ef.inflow.total.iter().sum::<f64>() * s.dt;
    let drained: f64 = ef.outflow.total.iter().sum::<f64>() * s.dt;
    let on_link: f64 =
        art.final_state_of(2).unwrap().cells.iter().map(|c| c.rho * c.dx).sum();
    assert!(
        (on_link - (loaded - drained)).abs() <= 1e-9 * loaded.max(1.0),
        "{on_link} vs {}",
        loaded - drained
    );
    // The destination bound binds, so a queue of unreleased demand forms
    // once the link jams back to the origin.
    assert!(art.queues[0].1[0].1 > 0.0);
}

#[test]
fn zero_demand_empty_network_stays_empty() {
    let mut s = base_scenario(pipe(40), 0.002, 100);
    s.origins = vec![(0, OriginBc::Demand(vec![(0, Profile::constant(0.0))]))];
    s.destinations = vec![(1, DestinationBc::Supply(Profile::constant(1e9)))];
    let art = run(&s).unwrap();
    assert!(art.final_state_of(2).unwrap().cells.iter().all(|c| c.rho == 0.0));
    assert!(art.max_delta.iter().all(|d| *d == 0.0));
}

/// The merge exercised at coarse resolution: two-lane mainline at 0.36 rho_j
/// and a one-lane ramp at 0.175 rho_j, both with zero-gradient upstream
/// boundaries, reach the documented stationary states.
#[test]
fn merge_reaches_stationary_states() {
    let units = UnitSystem::new(0.028, 5.0).unwrap();
    let rho_j = units.density_from_per_km(180.0);
    let fd_main = FdCurve::triangular(
        units.speed_from_mph(65.0),
        0.2 * rho_j,
        rho_j,
    )
    .unwrap();
    let fd_ramp = FdCurve::triangular(
        units.speed_from_mph(35.0),
        0.2 * rho_j,
        rho_j,
    )
    .unwrap();
    let length = 400.0;
    let n = 100;
    let network = Network {
        links: vec![
            origin(0),
            origin(1),
            destination(2),
            LinkSpec { id: 3, kind: LinkKind::Regular, length, lanes: 2.0, fd: Some(fd_main), cells: n },
            LinkSpec { id: 4, kind: LinkKind::Regular, length, lanes: 1.0, fd: Some(fd_ramp), cells: n },
            LinkSpec { id: 5, kind: LinkKind::Regular, length, lanes: 2.0, fd: Some(fd_main), cells: n },
        ],
        junctions: vec![
            Junction { upstream: vec![0], downstream: vec![3], kind: JunctionKind::Linear },
            Junction { upstream: vec![1], downstream: vec![4], kind: JunctionKind::Linear },
            Junction {
                upstream: vec![3, 4],
                downstream: vec![5],
                kind: JunctionKind::Merge { scheme: MergeScheme::Fairness },
            },
            Junction { upstream: vec![5], downstream: vec![2], kind: JunctionKind::Linear },
        ],
        commodities: vec![
            Commodity { path: vec![0, 3, 5, 2] },
            Commodity { path: vec![1, 4, 5, 2] },
        ],
    };
    let mut s = base_scenario(network, 0.5, 1000);
    s.units = units;
    s.origins = vec![(0, OriginBc::ZeroGradient), (1, OriginBc::ZeroGradient)];
    s.destinations = vec![(2, DestinationBc::ZeroGradient)];
    // Proportions align with each link's own commodity slots: links 3 and 4
    // carry a single commodity, link 5 both.
    s.init = vec![
        (3, LinkInit::Uniform { density: 0.36 * rho_j, proportions: vec![1.0] }),
        (4, LinkInit::Uniform { density: 0.175 * rho_j, proportions: vec![1.0] }),
        (5, LinkInit::Uniform { density: 0.36 * rho_j, proportions: vec![1.0, 0.0] }),
    ];
    assert!(cfl_number(&s) < 1.0, "cfl = {}", cfl_number(&s));
    let art = run(&s).unwrap();

    // Stationary states near the merge.
    let main = art.final_state_of(3).unwrap();
    let ramp = art.final_state_of(4).unwrap();
    let down = art.final_state_of(5).unwrap();
    let rho_b = main.cells[n - 2].rho / rho_j;
    let rho_e = ramp.cells[n - 2].rho / rho_j;
    let rho_c = down.cells[1].rho / rho_j;
    assert!((rho_b - 0.7394).abs() < 0.01, "rho_B = {rho_b}");
    assert!((rho_e - 0.3697).abs() < 0.01, "rho_E = {rho_e}");
    assert!((rho_c - 0.4).abs() < 0.01, "rho_C = {rho_c}");

    // Merge out-fluxes match the fairness split.
    let q_b = *art.end_flux_of(3).unwrap().outflow.total.last().unwrap();
    let q_e = *art.end_flux_of(4).unwrap().outflow.total.last().unwrap();
    let unit = rho_j; // rho_j l/tau in canonical flow units
    assert!((q_b / unit - 1.6349).abs() < 0.01, "q_B = {}", q_b / unit);
    assert!((q_e / unit - 0.4402).abs() < 0.01, "q_E = {}", q_e / unit);
    assert!(art.conservation_defect <= 1e-10, "defect {}", art.conservation_defect);
}

#[test]
fn ring_conserves_vehicles() {
    let units = UnitSystem::new(0.028, 5.0).unwrap();
    let fd = FdCurve::kerner_konhauser(units.density_from_per_km(180.0)).unwrap();
    let n = 100;
    let densities: Vec<f64> = (0..n)
        .map(|i| {
            let x = (i as f64 + 0.5) / n as f64;
            units.density_from_per_km(28.0 + 3.0 * (2.0 * std::f64::consts::PI * x).sin())
        })
        .collect();
    let network = Network {
        links: vec![LinkSpec {
            id: 0,
            kind: LinkKind::Regular,
            length: 800.0,
            lanes: 1.0,
            fd: Some(fd),
            cells: n,
        }],
        junctions: vec![Junction {
            upstream: vec![0],
            downstream: vec![0],
            kind: JunctionKind::Linear,
        }],
        commodities: vec![Commodity { path: vec![0] }],
    };
    let mut s = base_scenario(network, 1.0, 500);
    s.units = units;
    s.init = vec![(0, LinkInit::Cells {
        densities: densities.clone(),
        proportions: vec![vec![1.0]; n],
    })];
    assert!(validate(&s.network).is_empty());
    let art = run(&s).unwrap();
    let before: f64 = densities.iter().sum::<f64>() * 8.0;
    let after: f64 =
        art.final_state_of(0).unwrap().cells.iter().map(|c| c.rho * c.dx).sum();
    assert!((after - before).abs() <= 1e-9 * before);
    assert!(art.conservation_defect <= 1e-10);
}

#[test]
fn cfl_violation_refused() {
    let s = {
        let mut s = base_scenario(pipe(50), 0.01, 10); // dx = 0.2, 65*0.01/0.2 > 1
        s.origins = vec![(0, OriginBc::Demand(vec![(0, Profile::constant(0.0))]))];
        s
    };
    assert!(matches!(run(&s), Err(StepError::CflExceeded { .. })));
}

#[test]
fn probes_record_with_stride() {
    let mut s = base_scenario(pipe(20), 0.001, 100);
    s.origins = vec![(0, OriginBc::Demand(vec![(0, Profile::constant(1000.0))]))];
    s.destinations = vec![(1, DestinationBc::Supply(Profile::constant(1e9)))];
    s.probes = vec![
        Probe { link: 2, cells: ProbeCells::All, every: 10 },
        Probe { link: 2, cells: ProbeCells::One(5), every: 1 },
    ];
    let art = run(&s).unwrap();
    assert_eq!(art.probes[0].t.len(), 11);
    assert_eq!(art.probes[0].rho[0].len(), 20);
    assert_eq!(art.probes[1].t.len(), 101);
    assert_eq!(art.probes[1].rho[0].len(), 1);
    // Time axis is uniform with the declared stride.
    assert!((art.probes[0].t[1] - 0.01).abs() < 1e-12);
}

#[test]
fn fifo_proportions_advect() {
    // Two commodities loaded in sequence: the 50% composition interface
    // should cross the link at the cell speed.
    let mut s = base_scenario(pipe(50), 0.002, 400);
    s.origins = vec![(0, OriginBc::Demand(vec![
        (0, Profile { points: vec![(0.0, 1000.0), (0.2, 0.0)] }),
    ]))];
    s.destinations = vec![(1, DestinationBc::Supply(Profile::constant(1e9)))];
    // Wait: single-commodity pipe; use a two-commodity variant instead.
    let mut network = pipe(50);
    network.commodities = vec![
        Commodity { path: vec![0, 2, 1] },
        Commodity { path: vec![0, 2, 1] },
    ];
    s.network = network;
    s.origins = vec![(0, OriginBc::Demand(vec![
        (0, Profile { points: vec![(0.0, 1000.0), (0.2, 0.0)] }),
        (1, Profile { points: vec![(0.0, 0.0), (0.2, 1000.0)] }),
    ]))];
    s.probes = vec![Probe { link: 2, cells: ProbeCells::All, every: 1 }];
    let art = run(&s).unwrap();
    // Total inflow is constant, so density is steady at 1000/65 vpm while
    // the composition front advects at 65 mph.
    let p = &art.probes[0];
    let last = p.xi.last().unwrap();
    let t_end = s.dt * s.steps as f64; // 0.8 hr
    let front = 65.0 * (t_end - 0.2); // miles from the upstream end
    for (ci, xi) in last.iter().enumerate() {
        let x = p.x[ci];
        if x < front - 1.0 {
            assert!(xi[1] > 0.95, "behind the front at x={x}: xi1 = {}", xi[1]);
        }
        if x > front + 1.0 {
            assert!(xi[0] > 0.95, "ahead of the front at x={x}: xi0 = {}", xi[0]);
        }
    }
    assert!(art.conservation_defect <= 1e-10);
}

#[test]
fn incident_lane_drop_activates_and_clears() {
    // A mid-link lane drop throttles flow during its window and restores
    // afterwards; vehicles are conserved throughout.
    let mut s = base_scenario(pipe(40), 0.002, 2500);
    let q_in = 2000.0;
    s.origins = vec![(0, OriginBc::Demand(vec![(0, Profile::constant(q_in))]))];
    s.destinations = vec![(1, DestinationBc::Supply(Profile::constant(1e9)))];
    s.init = vec![(2, LinkInit::Uniform { density: q_in / 65.0, proportions: vec![1.0] })];
    s.incidents = vec![kinwave_core::network::Incident {
        link: 2,
        cells: (18, 22),
        window: (0.3, 0.9),
        lanes: Some(0.5),
        fd: None,
    }];
    let art = run(&s).unwrap();
    // During the window the half-lane capacity is 1170 vph; afterwards the
    // stored queue discharges at full capacity and eventually the inflow
    // level is restored.
    let ef = art.end_flux_of(2).unwrap();
    let during = ef.outflow.total[(0.8 / 0.002) as usize];
    let draining = ef.outflow.total[(1.2 / 0.002) as usize];
    let after = *ef.outflow.total.last().unwrap();
    assert!((during - 1170.0).abs() < 1.0, "during incident: {during}");
    assert!((draining - 2340.0).abs() < 1.0, "queue discharge: {draining}");
    assert!((after - q_in).abs() < 1.0, "after recovery: {after}");
    assert!(art.conservation_defect <= 1e-10);
}

#[test]
fn signal_caps_end_demand() {
    // Green ratio one half at the downstream end halves the discharge of a
    // saturated link.
    let mut s = base_scenario(pipe(20), 0.002, 500);
    s.origins = vec![(0, OriginBc::Demand(vec![(0, Profile::constant(1e9))]))];
    s.destinations = vec![(1, DestinationBc::Supply(Profile::constant(1e9)))];
    s.controls = vec![kinwave_core::network::Control {
        link: 2,
        kind: kinwave_core::network::ControlKind::Signal {
            green_ratio: Profile::constant(0.5),
        },
    }];
    let art = run(&s).unwrap();
    let out = *art.end_flux_of(2).unwrap().outflow.total.last().unwrap();
    assert!((out - 0.5 * 2340.0).abs() < 1e-6, "outflow {out}");
}

#[test]
fn invalid_profiles_and_windows_rejected() {
    let mut s = base_scenario(pipe(20), 0.002, 100);
    s.origins = vec![(0, OriginBc::Demand(vec![(0, Profile { points: vec![(0.0, -5.0)] })]))];
    assert!(matches!(run(&s), Err(StepError::BadInit { .. })));

    let mut s = base_scenario(pipe(20), 0.002, 100);
    s.origins = vec![(0, OriginBc::Demand(vec![(0, Profile::constant(0.0))]))];
    s.incidents = vec![kinwave_core::network::Incident {
        link: 2,
        cells: (0, 5),
        window: (5.0, 1.0),
        lanes: Some(0.5),
        fd: None,
    }];
    assert!(matches!(run(&s), Err(StepError::BadInit { .. })));
}

#[test]
fn unknown_link_references_rejected() {
    let mut s = base_scenario(pipe(10), 0.002, 10);
    s.origins = vec![(0, OriginBc::Demand(vec![(0, Profile::constant(0.0))]))];
    s.probes = vec![Probe { link: 99, cells: ProbeCells::All, every: 1 }];
    assert!(matches!(run(&s), Err(StepError::BadInit { link: 99, .. })));
}
