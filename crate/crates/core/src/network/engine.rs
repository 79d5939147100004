//! The step loop: demand/supply evaluation, boundary conditions, junction
//! fluxes, and conservative per-commodity updates.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::fd::{FdCurve, FdError};
use crate::junction::{self, JunctionError, PartialCriticalCache};
use crate::math;
use crate::network::{
    cfl_number, validate, CommodityId, ControlKind, DestinationBc, Diagnostic, Junction,
    JunctionKind, LinkId, LinkInit, LinkKind, Network, OriginBc, ProbeCells, Scenario, Severity,
};

#[derive(Clone, Debug)]
pub enum StepError {
    Invalid(Vec<Diagnostic>),
    CflExceeded { number: f64 },
    /// A cell density fell below the roundoff floor; a flux rule is broken.
    NegativeDensity { link: LinkId, cell: usize, value: f64 },
    JamExceeded { link: LinkId, cell: usize, value: f64 },
    /// Activating the incident would strand more vehicles than the reduced
    /// section can hold.
    IncidentInfeasible { link: LinkId, cell: usize },
    UnsupportedControl(String),
    BadInit { link: LinkId, reason: &'static str },
    Junction(JunctionError),
    Fd(FdError),
}

impl fmt::Display for StepError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepError::Invalid(diags) => {
                write!(f, "invalid network:")?;
                for d in diags {
                    write!(f, " {d};")?;
                }
                Ok(())
            }
            StepError::CflExceeded { number } => {
                write!(f, "CFL number {number} exceeds 1; refine dt")
            }
            StepError::NegativeDensity { link, cell, value } => write!(
                f,
                "negative density {value} in link {link} cell {cell}: flux computation is inconsistent"
            ),
            StepError::JamExceeded { link, cell, value } => {
                write!(f, "density {value} above jam in link {link} cell {cell}")
            }
            StepError::IncidentInfeasible { link, cell } => {
                write!(f, "incident on link {link} would strand vehicles in cell {cell}")
            }
            StepError::UnsupportedControl(what) => write!(f, "unsupported control: {what}"),
            StepError::BadInit { link, reason } => {
                write!(f, "bad initial state for link {link}: {reason}")
            }
            StepError::Junction(e) => write!(f, "{e}"),
            StepError::Fd(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for StepError {}

impl From<JunctionError> for StepError {
    fn from(e: JunctionError) -> Self {
        StepError::Junction(e)
    }
}

impl From<FdError> for StepError {
    fn from(e: FdError) -> Self {
        StepError::Fd(e)
    }
}

/// Per-step series at one boundary: total flux and per-commodity fluxes
/// (one row per commodity carried by the link).
#[derive(Clone, Debug, Default)]
pub struct FluxSeries {
    pub total: Vec<f64>,
    pub per_commodity: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct LinkEndFlux {
    pub link: LinkId,
    pub commodities: Vec<CommodityId>,
    pub inflow: FluxSeries,
    pub outflow: FluxSeries,
}

#[derive(Clone, Debug)]
pub struct ProbeSeries {
    pub link: LinkId,
    /// Cell-center coordinates from the link's upstream end.
    pub x: Vec<f64>,
    pub cell_indices: Vec<usize>,
    pub t: Vec<f64>,
    /// `rho[sample][cell]`, likewise flow and speed.
    pub rho: Vec<Vec<f64>>,
    pub flow: Vec<Vec<f64>>,
    pub speed: Vec<Vec<f64>>,
    /// `xi[sample][cell][slot]`.
    pub xi: Vec<Vec<Vec<f64>>>,
    pub commodities: Vec<CommodityId>,
}

#[derive(Clone, Debug)]
pub struct BoundarySeries {
    pub link: LinkId,
    pub boundary: usize,
    pub commodities: Vec<CommodityId>,
    pub flux: FluxSeries,
}

#[derive(Clone, Debug)]
pub struct CellSnapshot {
    pub x: f64,
    pub dx: f64,
    pub lanes: f64,
    pub rho: f64,
    pub xi: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct LinkFinalState {
    pub link: LinkId,
    pub commodities: Vec<CommodityId>,
    pub cells: Vec<CellSnapshot>,
}

#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub dt: f64,
    pub steps: usize,
    pub cfl: f64,
    pub end_flux: Vec<LinkEndFlux>,
    pub probes: Vec<ProbeSeries>,
    pub boundary_probes: Vec<BoundarySeries>,
    /// Per step, the largest |drho| over cells normalized by the cell jam
    /// density.
    pub max_delta: Vec<f64>,
    pub final_state: Vec<LinkFinalState>,
    /// Final origin queue counts per (origin link, commodity).
    pub queues: Vec<(LinkId, Vec<(CommodityId, f64)>)>,
    /// Largest per-step violation of per-commodity conservation, normalized
    /// by the largest jam density times cell length.
    pub conservation_defect: f64,
    pub warnings: Vec<String>,
}

impl RunArtifacts {
    pub fn end_flux_of(&self, link: LinkId) -> Option<&LinkEndFlux> {
        self.end_flux.iter().find(|e| e.link == link)
    }

    pub fn final_state_of(&self, link: LinkId) -> Option<&LinkFinalState> {
        self.final_state.iter().find(|s| s.link == link)
    }
}

struct Cell {
    dx: f64,
    lanes: f64,
    fd: FdCurve,
    base_lanes: f64,
    base_fd: FdCurve,
    rho: f64,
    /// Per-commodity densities, aligned with the link's commodity slots.
    rho_c: Vec<f64>,
    /// Cached proportions; carried over when the cell is near vacuum.
    xi: Vec<f64>,
    demand: f64,
    supply: f64,
}

impl Cell {
    fn jam(&self) -> f64 {
        self.fd.jam_density(self.lanes)
    }

    /// Composition used to split fluxes. The exact discrete FIFO rule is
    /// `f_p rho = f rho_p`; roundoff-scale negative commodity densities are
    /// clamped out so fractions stay in [0, 1], and the cached proportions
    /// stand in at exact vacuum, where the flux vanishes anyway.
    fn frac(&self, slot: usize) -> f64 {
        let total: f64 = self.rho_c.iter().map(|v| v.max(0.0)).sum();
        if total > 0.0 {
            self.rho_c[slot].max(0.0) / total
        } else {
            self.xi[slot]
        }
    }
}

struct LinkState {
    id: LinkId,
    kind: LinkKind,
    commodities: Vec<CommodityId>,
    cells: Vec<Cell>,
    /// Demand at the downstream end after control modulation.
    end_demand: f64,
}

struct OriginState {
    link: LinkId,
    bc: OriginBc,
    /// Diagnostic queue of unreleased demand per commodity slot.
    queue: Vec<f64>,
}

struct Flux {
    /// `total[b]` for boundaries `0..=cells`.
    total: Vec<f64>,
    /// `per_slot[slot][b]`.
    per_slot: Vec<Vec<f64>>,
}

/// Kahan-compensated sum.
fn ksum(values: impl Iterator<Item = f64>) -> f64 {
    let mut s = 0.0;
    let mut c = 0.0;
    for v in values {
        let y = v - c;
        let t = s + y;
        c = (t - s) - y;
        s = t;
    }
    s
}

pub fn run(scenario: &Scenario) -> Result<RunArtifacts, StepError> {
    let diags = validate(&scenario.network);
    let warnings: Vec<String> = diags
        .iter()
        .filter(|d| d.severity == Severity::Warning)
        .map(|d| d.message.clone())
        .collect();
    if diags.iter().any(|d| d.severity == Severity::Error) {
        return Err(StepError::Invalid(diags));
    }
    let cfl = cfl_number(scenario);
    if cfl > 1.0 + 1e-12 {
        return Err(StepError::CflExceeded { number: cfl });
    }

    let net = &scenario.network;
    let n_commodities = net.commodities.len().max(1);
    let dt = scenario.dt;

    let link_index: BTreeMap<LinkId, usize> =
        net.links.iter().enumerate().map(|(i, l)| (l.id, i)).collect();

    // Every link the scenario references must exist before anything indexes
    // into the state tables.
    let referenced = scenario
        .origins
        .iter()
        .map(|(l, _)| *l)
        .chain(scenario.destinations.iter().map(|(l, _)| *l))
        .chain(scenario.incidents.iter().map(|i| i.link))
        .chain(scenario.init.iter().map(|(l, _)| *l))
        .chain(scenario.probes.iter().map(|p| p.link))
        .chain(scenario.boundary_probes.iter().map(|b| b.link));
    for link in referenced {
        if !link_index.contains_key(&link) {
            return Err(StepError::BadInit { link, reason: "scenario references an unknown link" });
        }
    }

    // Materialize link states.
    let mut links: Vec<LinkState> = Vec::new();
    for spec in &net.links {
        let commodities = if net.commodities.is_empty() {
            vec![0]
        } else {
            net.commodities_on(spec.id)
        };
        let mut cells = Vec::new();
        if spec.kind == LinkKind::Regular {
            let fd = spec.fd.expect("validated");
            let dx = spec.length / spec.cells as f64;
            let init = scenario
                .init
                .iter()
                .find(|(id, _)| *id == spec.id)
                .map(|(_, i)| i)
                .unwrap_or(&LinkInit::Empty);
            for i in 0..spec.cells {
                let (rho, lanes, xi) = initial_cell(init, i, spec.lanes, &commodities, spec.id)?;
                let jam = fd.jam_density(lanes);
                if rho > jam * (1.0 + 1e-9) {
                    return Err(StepError::BadInit { link: spec.id, reason: "density above jam" });
                }
                let rho_c: Vec<f64> = xi.iter().map(|x| x * rho).collect();
                cells.push(Cell {
                    dx,
                    lanes,
                    fd,
                    base_lanes: lanes,
                    base_fd: fd,
                    rho,
                    rho_c,
                    xi,
                    demand: 0.0,
                    supply: 0.0,
                });
            }
        }
        links.push(LinkState { id: spec.id, kind: spec.kind, commodities, cells, end_demand: 0.0 });
    }

    // Origin and destination bookkeeping.
    let mut origins: Vec<OriginState> = Vec::new();
    for (link, bc) in &scenario.origins {
        let li = link_index[link];
        let n = links[li].commodities.len();
        if let OriginBc::Demand(profiles) = bc {
            for (c, p) in profiles {
                if !links[li].commodities.contains(c) {
                    return Err(StepError::BadInit {
                        link: *link,
                        reason: "demand profile for a commodity not passing this origin",
                    });
                }
                if !p.is_valid() {
                    return Err(StepError::BadInit { link: *link, reason: "invalid demand profile" });
                }
            }
        }
        origins.push(OriginState { link: *link, bc: bc.clone(), queue: vec![0.0; n] });
    }
    for (link, bc) in &scenario.destinations {
        if let DestinationBc::Supply(p) = bc {
            if !p.is_valid() {
                return Err(StepError::BadInit { link: *link, reason: "invalid supply profile" });
            }
        }
    }
    for inc in &scenario.incidents {
        let horizon = scenario.dt * scenario.steps as f64;
        if !(inc.window.0 >= 0.0 && inc.window.0 < inc.window.1 && inc.window.0 < horizon) {
            return Err(StepError::BadInit {
                link: inc.link,
                reason: "incident window must be ordered and start within the horizon",
            });
        }
    }
    for control in &scenario.controls {
        let li = link_index
            .get(&control.link)
            .copied()
            .ok_or(StepError::UnsupportedControl(String::from("control on unknown link")))?;
        if links[li].kind != LinkKind::Regular {
            return Err(StepError::UnsupportedControl(String::from(
                "controls attach to regular links",
            )));
        }
        if let Some(j) = net.junction_downstream_of(control.link) {
            if j.kind == JunctionKind::DivergeInstantaneous {
                return Err(StepError::UnsupportedControl(String::from(
                    "metering an instantaneous diverge is not defined",
                )));
            }
        }
    }

    // Per-boundary flux scratch space, reused every step.
    let mut fluxes: Vec<Flux> = links
        .iter()
        .map(|l| Flux {
            total: vec![0.0; l.cells.len() + 1],
            per_slot: vec![vec![0.0; l.cells.len() + 1]; l.commodities.len()],
        })
        .collect();

    // Output series.
    let mut end_flux: Vec<LinkEndFlux> = links
        .iter()
        .filter(|l| l.kind == LinkKind::Regular)
        .map(|l| LinkEndFlux {
            link: l.id,
            commodities: l.commodities.clone(),
            inflow: FluxSeries {
                total: Vec::with_capacity(scenario.steps),
                per_commodity: vec![Vec::with_capacity(scenario.steps); l.commodities.len()],
            },
            outflow: FluxSeries {
                total: Vec::with_capacity(scenario.steps),
                per_commodity: vec![Vec::with_capacity(scenario.steps); l.commodities.len()],
            },
        })
        .collect();
    let mut probes: Vec<ProbeSeries> = scenario
        .probes
        .iter()
        .map(|p| {
            let li = link_index[&p.link];
            let link = &links[li];
            let idx: Vec<usize> = match p.cells {
                ProbeCells::All => (0..link.cells.len()).collect(),
                ProbeCells::One(i) => vec![i.min(link.cells.len().saturating_sub(1))],
            };
            ProbeSeries {
                link: p.link,
                x: idx.iter().map(|i| (*i as f64 + 0.5) * link.cells[*i].dx).collect(),
                cell_indices: idx,
                t: Vec::new(),
                rho: Vec::new(),
                flow: Vec::new(),
                speed: Vec::new(),
                xi: Vec::new(),
                commodities: link.commodities.clone(),
            }
        })
        .collect();
    let mut boundary_probes: Vec<BoundarySeries> = scenario
        .boundary_probes
        .iter()
        .map(|b| {
            let li = link_index[&b.link];
            BoundarySeries {
                link: b.link,
                boundary: b.boundary.min(links[li].cells.len()),
                commodities: links[li].commodities.clone(),
                flux: FluxSeries {
                    total: Vec::with_capacity(scenario.steps),
                    per_commodity: vec![
                        Vec::with_capacity(scenario.steps);
                        links[li].commodities.len()
                    ],
                },
            }
        })
        .collect();

    let mut incident_active = vec![false; scenario.incidents.len()];
    let mut partial_caches: Vec<Option<(FdCurve, f64, PartialCriticalCache)>> =
        (0..net.junctions.len()).map(|_| None).collect();
    let mut max_delta = Vec::with_capacity(scenario.steps);
    let mut conservation_defect = 0.0f64;

    record_probes(&mut probes, scenario, &links, &link_index, 0.0, 0);

    for step in 0..scenario.steps {
        let t = step as f64 * dt;

        // Incident windows toggle cell characteristics.
        for (i, inc) in scenario.incidents.iter().enumerate() {
            let active = t + 1e-12 >= inc.window.0 && t + 1e-12 < inc.window.1;
            if active == incident_active[i] {
                continue;
            }
            incident_active[i] = active;
            let li = link_index[&inc.link];
            let lim = links[li].cells.len();
            for ci in inc.cells.0..inc.cells.1.min(lim) {
                let cell = &mut links[li].cells[ci];
                if active {
                    if let Some(lanes) = inc.lanes {
                        cell.lanes = lanes;
                    }
                    if let Some(fd) = inc.fd {
                        cell.fd = fd;
                    }
                    if cell.rho > cell.jam() * (1.0 + 1e-9) {
                        return Err(StepError::IncidentInfeasible { link: inc.link, cell: ci });
                    }
                } else {
                    cell.lanes = cell.base_lanes;
                    cell.fd = cell.base_fd;
                }
            }
        }

        // Demand and supply of every regular cell.
        for link in links.iter_mut() {
            for cell in &mut link.cells {
                cell.demand = cell.fd.demand(cell.lanes, cell.rho)?;
                cell.supply = cell.fd.supply(cell.lanes, cell.rho)?;
            }
            if let Some(last) = link.cells.last() {
                link.end_demand = last.demand;
            }
        }

        // Controls modulate end demands.
        for control in &scenario.controls {
            let li = link_index[&control.link];
            let link = &mut links[li];
            let last = link.cells.last().expect("regular link");
            link.end_demand = match &control.kind {
                ControlKind::Meter { rate } => {
                    junction::metered_demand(link.end_demand, rate.value_at(t))
                }
                ControlKind::Signal { green_ratio } => junction::metered_demand(
                    link.end_demand,
                    green_ratio.value_at(t) * last.fd.capacity(last.lanes),
                ),
            };
        }

        // Intra-link boundary fluxes with FIFO commodity splits.
        for (li, link) in links.iter().enumerate() {
            let flux = &mut fluxes[li];
            for b in 1..link.cells.len() {
                let up = &link.cells[b - 1];
                let down = &link.cells[b];
                let f = up.demand.min(down.supply);
                flux.total[b] = f;
                for slot in 0..up.rho_c.len() {
                    flux.per_slot[slot][b] = f * up.frac(slot);
                }
            }
        }

        // Junction fluxes fill the end boundaries and account for what
        // enters and leaves the network.
        let mut boundary_net = vec![0.0f64; n_commodities];
        for (ji, junction) in net.junctions.iter().enumerate() {
            apply_junction(JunctionCtx {
                junction,
                ji,
                t,
                scenario,
                net,
                links: &mut links,
                fluxes: &mut fluxes,
                origins: &mut origins,
                partial_caches: &mut partial_caches,
                link_index: &link_index,
                boundary_net: &mut boundary_net,
                dt,
            })?;
        }

        // Conservative update with per-commodity conservation accounting.
        let mut worst_delta = 0.0f64;
        let mut balance_before = vec![0.0f64; n_commodities];
        let mut balance_after = vec![0.0f64; n_commodities];
        let mut jam_dx_scale = 0.0f64;
        for (li, link) in links.iter_mut().enumerate() {
            if link.kind != LinkKind::Regular {
                continue;
            }
            let flux = &fluxes[li];
            for (slot, &c) in link.commodities.iter().enumerate() {
                balance_before[c] += ksum(link.cells.iter().map(|cell| cell.rho_c[slot] * cell.dx));
            }
            for (ci, cell) in link.cells.iter_mut().enumerate() {
                jam_dx_scale = jam_dx_scale.max(cell.jam() * cell.dx);
                let r = dt / cell.dx;
                let mut rho_new = 0.0;
                for slot in 0..cell.rho_c.len() {
                    let f_in = flux.per_slot[slot][ci];
                    let f_out = flux.per_slot[slot][ci + 1];
                    let v = cell.rho_c[slot] + r * (f_in - f_out);
                    if v < -1e-12 * cell.jam() {
                        return Err(StepError::NegativeDensity {
                            link: link.id,
                            cell: ci,
                            value: v,
                        });
                    }
                    cell.rho_c[slot] = v;
                    rho_new += v;
                }
                if rho_new > cell.jam() * (1.0 + 1e-9) {
                    return Err(StepError::JamExceeded { link: link.id, cell: ci, value: rho_new });
                }
                let delta = math::abs(rho_new - cell.rho) / cell.jam();
                if delta > worst_delta {
                    worst_delta = delta;
                }
                cell.rho = rho_new;
                // Proportions carried over near vacuum, renormalized
                // otherwise.
                if rho_new >= 1e-9 * cell.jam() {
                    for slot in 0..cell.rho_c.len() {
                        cell.xi[slot] = cell.rho_c[slot] / rho_new;
                    }
                }
            }
            for (slot, &c) in link.commodities.iter().enumerate() {
                balance_after[c] += ksum(link.cells.iter().map(|cell| cell.rho_c[slot] * cell.dx));
            }
        }
        for c in 0..n_commodities {
            let defect = math::abs(balance_after[c] - balance_before[c] - dt * boundary_net[c]);
            conservation_defect = conservation_defect.max(defect / jam_dx_scale.max(1e-300));
        }
        max_delta.push(worst_delta);

        // Bookkeeping: end-flux series, probes, boundary probes.
        let mut ei = 0;
        for (li, link) in links.iter().enumerate() {
            if link.kind != LinkKind::Regular {
                continue;
            }
            let flux = &fluxes[li];
            let series = &mut end_flux[ei];
            series.inflow.total.push(flux.total[0]);
            series.outflow.total.push(flux.total[link.cells.len()]);
            for slot in 0..link.commodities.len() {
                series.inflow.per_commodity[slot].push(flux.per_slot[slot][0]);
                series.outflow.per_commodity[slot].push(flux.per_slot[slot][link.cells.len()]);
            }
            ei += 1;
        }
        for (bi, bp) in scenario.boundary_probes.iter().enumerate() {
            let li = link_index[&bp.link];
            let flux = &fluxes[li];
            let b = boundary_probes[bi].boundary;
            boundary_probes[bi].flux.total.push(flux.total[b]);
            for slot in 0..links[li].commodities.len() {
                boundary_probes[bi].flux.per_commodity[slot].push(flux.per_slot[slot][b]);
            }
        }
        record_probes(&mut probes, scenario, &links, &link_index, (step + 1) as f64 * dt, step + 1);
    }

    let final_state = links
        .iter()
        .filter(|l| l.kind == LinkKind::Regular)
        .map(|l| LinkFinalState {
            link: l.id,
            commodities: l.commodities.clone(),
            cells: l
                .cells
                .iter()
                .enumerate()
                .map(|(i, c)| CellSnapshot {
                    x: (i as f64 + 0.5) * c.dx,
                    dx: c.dx,
                    lanes: c.lanes,
                    rho: c.rho,
                    xi: c.xi.clone(),
                })
                .collect(),
        })
        .collect();

    let queues = origins
        .iter()
        .map(|o| {
            let li = link_index[&o.link];
            (o.link, links[li].commodities.iter().copied().zip(o.queue.iter().copied()).collect())
        })
        .collect();

    Ok(RunArtifacts {
        dt,
        steps: scenario.steps,
        cfl,
        end_flux,
        probes,
        boundary_probes,
        max_delta,
        final_state,
        queues,
        conservation_defect,
        warnings,
    })
}

fn initial_cell(
    init: &LinkInit,
    i: usize,
    default_lanes: f64,
    commodities: &[CommodityId],
    link: LinkId,
) -> Result<(f64, f64, Vec<f64>), StepError> {
    let n = commodities.len();
    let checked_xi = |props: &Vec<f64>| -> Result<Vec<f64>, StepError> {
        if props.is_empty() && n == 1 {
            return Ok(vec![1.0]);
        }
        if props.len() != n {
            return Err(StepError::BadInit { link, reason: "proportion count mismatch" });
        }
        let sum: f64 = props.iter().sum();
        if math::abs(sum - 1.0) > 1e-9 || props.iter().any(|p| *p < 0.0) {
            return Err(StepError::BadInit { link, reason: "proportions must sum to 1" });
        }
        Ok(props.clone())
    };
    match init {
        LinkInit::Empty => Ok((0.0, default_lanes, vec![1.0 / n as f64; n])),
        LinkInit::Uniform { density, proportions } => {
            Ok((*density, default_lanes, checked_xi(proportions)?))
        }
        LinkInit::Cells { densities, proportions } => {
            let rho = *densities
                .get(i)
                .ok_or(StepError::BadInit { link, reason: "missing cell density" })?;
            let xi = proportions
                .get(i)
                .ok_or(StepError::BadInit { link, reason: "missing cell proportions" })?;
            Ok((rho, default_lanes, checked_xi(xi)?))
        }
        LinkInit::CellsWithLanes { densities, lanes, proportions } => {
            let rho = *densities
                .get(i)
                .ok_or(StepError::BadInit { link, reason: "missing cell density" })?;
            let lane = *lanes
                .get(i)
                .ok_or(StepError::BadInit { link, reason: "missing cell lane count" })?;
            Ok((rho, lane, checked_xi(proportions)?))
        }
    }
}

fn record_probes(
    probes: &mut [ProbeSeries],
    scenario: &Scenario,
    links: &[LinkState],
    link_index: &BTreeMap<LinkId, usize>,
    t: f64,
    step: usize,
) {
    for (pi, p) in scenario.probes.iter().enumerate() {
        let due = step == scenario.steps || step % p.every.max(1) == 0;
        if !due {
            continue;
        }
        let link = &links[link_index[&p.link]];
        let series = &mut probes[pi];
        series.t.push(t);
        let mut rho_row = Vec::with_capacity(series.cell_indices.len());
        let mut q_row = Vec::with_capacity(series.cell_indices.len());
        let mut v_row = Vec::with_capacity(series.cell_indices.len());
        let mut xi_row = Vec::with_capacity(series.cell_indices.len());
        for &ci in &series.cell_indices {
            let cell = &link.cells[ci];
            rho_row.push(cell.rho);
            q_row.push(cell.fd.flow(cell.lanes, cell.rho).unwrap_or(0.0));
            v_row.push(cell.fd.speed(cell.lanes, cell.rho).unwrap_or(0.0));
            xi_row.push(cell.xi.clone());
        }
        series.rho.push(rho_row);
        series.flow.push(q_row);
        series.speed.push(v_row);
        series.xi.push(xi_row);
    }
}

/// Demand offered by an upstream side of a junction with its commodity
/// composition (global commodity ids).
struct UpSide {
    total: f64,
    by_commodity: Vec<(CommodityId, f64)>,
    origin_index: Option<usize>,
}

struct JunctionCtx<'a> {
    junction: &'a Junction,
    ji: usize,
    t: f64,
    scenario: &'a Scenario,
    net: &'a Network,
    links: &'a mut [LinkState],
    fluxes: &'a mut [Flux],
    origins: &'a mut [OriginState],
    partial_caches: &'a mut [Option<(FdCurve, f64, PartialCriticalCache)>],
    link_index: &'a BTreeMap<LinkId, usize>,
    boundary_net: &'a mut Vec<f64>,
    dt: f64,
}

fn apply_junction(ctx: JunctionCtx<'_>) -> Result<(), StepError> {
    let JunctionCtx {
        junction,
        ji,
        t,
        scenario,
        net,
        links,
        fluxes,
        origins,
        partial_caches,
        link_index,
        boundary_net,
        dt,
    } = ctx;
    let n_down = junction.downstream.len();
    let n_up = junction.upstream.len();

    // Upstream demand sides.
    let mut up_sides: Vec<UpSide> = Vec::with_capacity(n_up);
    for &u in &junction.upstream {
        let li = link_index[&u];
        match links[li].kind {
            LinkKind::Origin => {
                let oi = origins.iter().position(|o| o.link == u);
                let side = match oi.map(|i| &origins[i].bc) {
                    Some(OriginBc::Demand(profiles)) => {
                        let mut by = Vec::new();
                        let mut total = 0.0;
                        for (c, p) in profiles {
                            let d = p.value_at(t);
                            total += d;
                            by.push((*c, d));
                        }
                        UpSide { total, by_commodity: by, origin_index: oi }
                    }
                    Some(OriginBc::ZeroGradient) => {
                        // Ghost cell copying the first downstream cell: the
                        // offered demand equals that cell's flow with its
                        // composition.
                        let mut total = 0.0;
                        let mut by = Vec::new();
                        if let Some(&did) = junction.downstream.first() {
                            let dli = link_index[&did];
                            if let Some(first) = links[dli].cells.first() {
                                total = first.fd.flow(first.lanes, first.rho).unwrap_or(0.0);
                                for (slot, &c) in links[dli].commodities.iter().enumerate() {
                                    by.push((c, total * first.frac(slot)));
                                }
                            }
                        }
                        UpSide { total, by_commodity: by, origin_index: oi }
                    }
                    None => UpSide { total: 0.0, by_commodity: Vec::new(), origin_index: None },
                };
                up_sides.push(side);
            }
            LinkKind::Regular => {
                let link = &links[li];
                let cell = link.cells.last().expect("regular link has cells");
                let total = link.end_demand;
                let by = link
                    .commodities
                    .iter()
                    .enumerate()
                    .map(|(slot, &c)| (c, total * cell.frac(slot)))
                    .collect();
                up_sides.push(UpSide { total, by_commodity: by, origin_index: None });
            }
            LinkKind::Destination => {
                up_sides.push(UpSide { total: 0.0, by_commodity: Vec::new(), origin_index: None });
            }
        }
    }

    // Downstream supplies.
    let mut supplies: Vec<f64> = Vec::with_capacity(n_down);
    for &d in &junction.downstream {
        let li = link_index[&d];
        let s = match links[li].kind {
            LinkKind::Destination => {
                match scenario.destinations.iter().find(|(id, _)| *id == d).map(|(_, bc)| bc) {
                    Some(DestinationBc::Supply(p)) => p.value_at(t),
                    Some(DestinationBc::ZeroGradient) => junction
                        .upstream
                        .first()
                        .and_then(|uid| links[link_index[uid]].cells.last())
                        .map(|c| c.supply)
                        .unwrap_or(0.0),
                    None => 0.0,
                }
            }
            LinkKind::Regular => links[li].cells.first().map(|c| c.supply).unwrap_or(0.0),
            LinkKind::Origin => 0.0,
        };
        supplies.push(s);
    }

    let mut up_out = vec![0.0f64; n_up];
    let mut up_out_c: Vec<Vec<(CommodityId, f64)>> = vec![Vec::new(); n_up];
    let mut down_in = vec![0.0f64; n_down];
    let mut down_in_c: Vec<Vec<(CommodityId, f64)>> = vec![Vec::new(); n_down];

    // FIFO split of an upstream out-flux by that side's composition.
    let split_up = |side: &UpSide, q: f64| -> Vec<(CommodityId, f64)> {
        if side.total > 0.0 {
            side.by_commodity.iter().map(|(c, d)| (*c, q * d / side.total)).collect()
        } else {
            side.by_commodity.iter().map(|(c, _)| (*c, 0.0)).collect()
        }
    };
    // Aggregate fractions of an upstream side heading each downstream link.
    let turning_of = |side: &UpSide, u: LinkId| -> Vec<f64> {
        let mut xi = vec![0.0f64; n_down];
        if side.total > 0.0 {
            for (c, d) in &side.by_commodity {
                if let Some(next) = net.next_link_on_path(*c, u) {
                    if let Some(di) = junction.downstream.iter().position(|x| *x == next) {
                        xi[di] += d / side.total;
                    }
                }
            }
        }
        xi
    };

    match &junction.kind {
        JunctionKind::Linear => {
            let side = &up_sides[0];
            let q = side.total.min(supplies[0]);
            up_out[0] = q;
            up_out_c[0] = split_up(side, q);
            down_in[0] = q;
            down_in_c[0] = up_out_c[0].clone();
        }
        JunctionKind::Merge { scheme } => {
            let demands: Vec<f64> = up_sides.iter().map(|s| s.total).collect();
            let m = junction::merge_flux(&demands, supplies[0], scheme)?;
            let mut in_c: Vec<(CommodityId, f64)> = Vec::new();
            for (ui, side) in up_sides.iter().enumerate() {
                up_out[ui] = m.per_branch[ui];
                up_out_c[ui] = split_up(side, m.per_branch[ui]);
                for (c, f) in &up_out_c[ui] {
                    match in_c.iter_mut().find(|(cc, _)| cc == c) {
                        Some((_, acc)) => *acc += f,
                        None => in_c.push((*c, *f)),
                    }
                }
            }
            down_in[0] = m.per_branch.iter().sum();
            down_in_c[0] = in_c;
        }
        JunctionKind::DivergeProportional => {
            let side = &up_sides[0];
            if side.total > 0.0 {
                let xi = turning_of(side, junction.upstream[0]);
                let xi_sum: f64 = xi.iter().sum();
                if math::abs(xi_sum - 1.0) > 1e-9 {
                    return Err(StepError::Junction(JunctionError::BadFractions));
                }
                let d = junction::diverge_flux_proportional(side.total, &supplies, &xi)?;
                up_out[0] = d.out;
                up_out_c[0] = split_up(side, d.out);
                for di in 0..n_down {
                    down_in[di] = d.per_branch[di];
                    let mut by = Vec::new();
                    for (c, dem) in &side.by_commodity {
                        if net.next_link_on_path(*c, junction.upstream[0])
                            == Some(junction.downstream[di])
                        {
                            by.push((*c, d.out * dem / side.total));
                        }
                    }
                    down_in_c[di] = by;
                }
            }
        }
        JunctionKind::DivergeInstantaneous => {
            let u = junction.upstream[0];
            let uli = link_index[&u];
            let (cell_fd, cell_lanes, rho_total) = {
                let cell = links[uli].cells.last().expect("regular upstream");
                (cell.fd, cell.lanes, cell.rho)
            };
            // One cache per junction, rebuilt if an incident changed the
            // upstream cell's diagram.
            let cache_slot = &mut partial_caches[ji];
            let rebuild = match cache_slot {
                Some((fd, lanes, _)) => *fd != cell_fd || *lanes != cell_lanes,
                None => true,
            };
            if rebuild {
                *cache_slot =
                    Some((cell_fd, cell_lanes, PartialCriticalCache::new(cell_fd, cell_lanes)));
            }
            let cache = &mut cache_slot.as_mut().expect("just built").2;

            let mut own = vec![0.0f64; n_down];
            let mut own_by: Vec<Vec<(CommodityId, f64)>> = vec![Vec::new(); n_down];
            {
                let link = &links[uli];
                let cell = link.cells.last().expect("regular upstream");
                for (slot, &c) in link.commodities.iter().enumerate() {
                    if let Some(next) = net.next_link_on_path(c, u) {
                        if let Some(di) = junction.downstream.iter().position(|x| *x == next) {
                            own[di] += cell.rho_c[slot];
                            own_by[di].push((c, cell.rho_c[slot]));
                        }
                    }
                }
            }
            let mut out_total = 0.0;
            for di in 0..n_down {
                let k = (rho_total - own[di]).max(0.0);
                let d_partial = cache.partial_demand(own[di], k);
                let f = supplies[di].min(d_partial);
                down_in[di] = f;
                down_in_c[di] = if own[di] > 0.0 {
                    own_by[di].iter().map(|(c, r)| (*c, f * r / own[di])).collect()
                } else {
                    own_by[di].iter().map(|(c, _)| (*c, 0.0)).collect()
                };
                out_total += f;
            }
            up_out[0] = out_total;
            let mut by = Vec::new();
            for d in &down_in_c {
                for (c, f) in d {
                    by.push((*c, *f));
                }
            }
            up_out_c[0] = by;
        }
        JunctionKind::DivergeFree => {
            let side = &up_sides[0];
            let d = junction::diverge_flux_free(side.total, &supplies)?;
            up_out[0] = d.out;
            up_out_c[0] = split_up(side, d.out);
            for di in 0..n_down {
                down_in[di] = d.per_branch[di];
                // The whole composition flows into every branch.
                down_in_c[di] = if d.out > 0.0 {
                    up_out_c[0].iter().map(|(c, f)| (*c, f * d.per_branch[di] / d.out)).collect()
                } else {
                    Vec::new()
                };
            }
        }
        JunctionKind::General { turning } => {
            let demands: Vec<f64> = up_sides.iter().map(|s| s.total).collect();
            let single = net.commodities.is_empty();
            let matrix: Vec<Vec<f64>> = match turning {
                Some(m) if single => m.clone(),
                _ => junction
                    .upstream
                    .iter()
                    .zip(&up_sides)
                    .map(|(u, side)| {
                        if side.total > 0.0 {
                            turning_of(side, *u)
                        } else {
                            vec![1.0 / n_down as f64; n_down]
                        }
                    })
                    .collect(),
            };
            let g = junction::general_junction_flux(&demands, &supplies, &matrix)?;
            for (ui, side) in up_sides.iter().enumerate() {
                up_out[ui] = g.per_upstream[ui];
                up_out_c[ui] = split_up(side, g.per_upstream[ui]);
            }
            for di in 0..n_down {
                down_in[di] = g.per_downstream[di];
                let mut by: Vec<(CommodityId, f64)> = Vec::new();
                for (ui, _) in up_sides.iter().enumerate() {
                    for (c, f) in &up_out_c[ui] {
                        let share = if single {
                            f * matrix[ui][di]
                        } else if net.next_link_on_path(*c, junction.upstream[ui])
                            == Some(junction.downstream[di])
                        {
                            *f
                        } else {
                            0.0
                        };
                        if share != 0.0 {
                            match by.iter_mut().find(|(cc, _)| cc == c) {
                                Some((_, acc)) => *acc += share,
                                None => by.push((*c, share)),
                            }
                        }
                    }
                }
                down_in_c[di] = by;
            }
        }
    }

    // Scatter the solution into boundary arrays, track what crosses the
    // network boundary, and book origin queues.
    for (ui, &u) in junction.upstream.iter().enumerate() {
        let li = link_index[&u];
        if links[li].kind == LinkKind::Regular {
            let b = links[li].cells.len();
            fluxes[li].total[b] = up_out[ui];
            for (c, f) in &up_out_c[ui] {
                if let Some(slot) = links[li].commodities.iter().position(|x| x == c) {
                    fluxes[li].per_slot[slot][b] = *f;
                }
            }
        } else {
            // Flow released by an origin enters the network here.
            for (c, f) in &up_out_c[ui] {
                boundary_net[*c] += *f;
            }
            if let Some(oi) = up_sides[ui].origin_index {
                for (c, d) in &up_sides[ui].by_commodity {
                    let released = up_out_c[ui]
                        .iter()
                        .find(|(cc, _)| cc == c)
                        .map(|(_, f)| *f)
                        .unwrap_or(0.0);
                    if let Some(slot) = links[li].commodities.iter().position(|x| x == c) {
                        origins[oi].queue[slot] += (d - released).max(0.0) * dt;
                    }
                }
            }
        }
    }
    for (di, &d) in junction.downstream.iter().enumerate() {
        let li = link_index[&d];
        if links[li].kind == LinkKind::Regular {
            fluxes[li].total[0] = down_in[di];
            for (c, f) in &down_in_c[di] {
                if let Some(slot) = links[li].commodities.iter().position(|x| x == c) {
                    fluxes[li].per_slot[slot][0] = *f;
                }
            }
        } else {
            // Flow absorbed by a destination leaves the network here.
            for (c, f) in &down_in_c[di] {
                boundary_net[*c] -= *f;
            }
        }
    }
    Ok(())
}
