//! Multi-commodity kinematic wave network engine.
//!
//! A network is a list of links (origins and destinations included, with the
//! same structure as regular links) joined by junctions. Each regular link is
//! partitioned into cells; commodities follow fixed link paths and advect
//! with the flow (FIFO). The engine advances the whole network with the
//! supply-demand rules: intra-link boundaries take `min{D, S}`, junction
//! boundaries use the merge/diverge models of [`crate::junction`].

mod engine;

pub use engine::{
    run, BoundarySeries, CellSnapshot, LinkEndFlux, ProbeSeries, RunArtifacts, StepError,
};

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::fd::FdCurve;
use crate::junction::MergeScheme;
use crate::units::UnitSystem;

pub type LinkId = usize;
pub type CommodityId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinkKind {
    Origin,
    Destination,
    Regular,
}

#[derive(Clone, Debug)]
pub struct LinkSpec {
    pub id: LinkId,
    pub kind: LinkKind,
    /// Length in canonical units; ignored for origins and destinations.
    pub length: f64,
    pub lanes: f64,
    pub fd: Option<FdCurve>,
    /// Cell count; origins and destinations hold a single virtual cell.
    pub cells: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum JunctionKind {
    /// One upstream, one downstream. A link may connect to itself, which
    /// closes it into a ring.
    Linear,
    Merge { scheme: MergeScheme },
    /// Out-flux split by the upstream cell's commodity composition.
    DivergeProportional,
    /// Per-branch fluxes from partial demands at frozen other-commodity
    /// densities.
    DivergeInstantaneous,
    /// No predefined route choice; branch in-fluxes proportional to supplies.
    DivergeFree,
    /// Fairness merge combined with the proportional diverge. Turning
    /// fractions come from commodity compositions unless a static matrix is
    /// given.
    General { turning: Option<Vec<Vec<f64>>> },
}

#[derive(Clone, Debug)]
pub struct Junction {
    pub upstream: Vec<LinkId>,
    pub downstream: Vec<LinkId>,
    pub kind: JunctionKind,
}

#[derive(Clone, Debug)]
pub struct Commodity {
    /// Ordered link sequence from an origin to a destination (or a single
    /// ring link).
    pub path: Vec<LinkId>,
}

#[derive(Clone, Debug)]
pub struct Network {
    pub links: Vec<LinkSpec>,
    pub junctions: Vec<Junction>,
    pub commodities: Vec<Commodity>,
}

/// Piecewise-constant profile: the value at time `t` is the value of the
/// last breakpoint at or before `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct Profile {
    pub points: Vec<(f64, f64)>,
}

impl Profile {
    pub fn constant(value: f64) -> Self {
        Profile { points: alloc::vec![(0.0, value)] }
    }

    pub fn value_at(&self, t: f64) -> f64 {
        let mut v = 0.0;
        for (start, value) in &self.points {
            if t + 1e-12 >= *start {
                v = *value;
            } else {
                break;
            }
        }
        v
    }

    pub fn is_valid(&self) -> bool {
        !self.points.is_empty()
            && self.points.windows(2).all(|w| w[0].0 < w[1].0)
            && self.points.iter().all(|(_, v)| *v >= 0.0)
    }
}

#[derive(Clone, Debug)]
pub enum OriginBc {
    /// Per-commodity demand profiles. Unmet demand accumulates in a
    /// diagnostic queue count but is never released beyond the profile.
    Demand(Vec<(CommodityId, Profile)>),
    /// Ghost-cell copy of the first regular cell.
    ZeroGradient,
}

#[derive(Clone, Debug)]
pub enum DestinationBc {
    Supply(Profile),
    /// Ghost-cell copy of the last regular cell.
    ZeroGradient,
}

#[derive(Clone, Debug)]
pub enum ControlKind {
    /// Meter capping the demand at the link's downstream end: `min{r, D}`.
    Meter { rate: Profile },
    /// Signal modulating that demand: `min{r Qmax, D}` with green ratio `r`.
    Signal { green_ratio: Profile },
}

#[derive(Clone, Debug)]
pub struct Control {
    pub link: LinkId,
    pub kind: ControlKind,
}

/// Time-windowed override of cell characteristics (lane drop, speed drop).
#[derive(Clone, Debug)]
pub struct Incident {
    pub link: LinkId,
    /// Affected cell range `[from, to)`.
    pub cells: (usize, usize),
    /// Active window `[start, end)`.
    pub window: (f64, f64),
    pub lanes: Option<f64>,
    pub fd: Option<FdCurve>,
}

#[derive(Clone, Debug)]
pub enum LinkInit {
    Empty,
    Uniform { density: f64, proportions: Vec<f64> },
    /// Per-cell densities with per-cell commodity proportions.
    Cells { densities: Vec<f64>, proportions: Vec<Vec<f64>> },
    /// Per-cell densities and lane counts (inhomogeneous ring roads), with
    /// uniform proportions.
    CellsWithLanes { densities: Vec<f64>, lanes: Vec<f64>, proportions: Vec<f64> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeCells {
    All,
    One(usize),
}

#[derive(Clone, Debug)]
pub struct Probe {
    pub link: LinkId,
    pub cells: ProbeCells,
    /// Temporal stride: record every `every`-th step (plus the last).
    pub every: usize,
}

/// Interior boundary whose per-step flux record is kept.
#[derive(Clone, Debug)]
pub struct BoundaryProbe {
    pub link: LinkId,
    /// Boundary index within the link: 0 is the upstream end, `cells` the
    /// downstream end.
    pub boundary: usize,
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub units: UnitSystem,
    pub network: Network,
    pub dt: f64,
    pub steps: usize,
    pub origins: Vec<(LinkId, OriginBc)>,
    pub destinations: Vec<(LinkId, DestinationBc)>,
    pub controls: Vec<Control>,
    pub incidents: Vec<Incident>,
    /// Initial state per regular link, keyed by link id.
    pub init: Vec<(LinkId, LinkInit)>,
    pub probes: Vec<Probe>,
    pub boundary_probes: Vec<BoundaryProbe>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Clone, Debug)]
pub struct Diagnostic {
    pub severity: Severity,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{tag}: {}", self.message)
    }
}

impl Network {
    pub fn link(&self, id: LinkId) -> Option<&LinkSpec> {
        self.links.iter().find(|l| l.id == id)
    }

    /// Commodities whose path traverses the link, in ascending id order.
    pub fn commodities_on(&self, link: LinkId) -> Vec<CommodityId> {
        self.commodities
            .iter()
            .enumerate()
            .filter(|(_, c)| c.path.contains(&link))
            .map(|(i, _)| i)
            .collect()
    }

    /// The link commodity `c` visits right after `link`, if any.
    pub fn next_link_on_path(&self, c: CommodityId, link: LinkId) -> Option<LinkId> {
        let path = &self.commodities.get(c)?.path;
        let pos = path.iter().position(|l| *l == link)?;
        path.get(pos + 1).copied()
    }

    pub fn junction_downstream_of(&self, link: LinkId) -> Option<&Junction> {
        self.junctions.iter().find(|j| j.upstream.contains(&link))
    }

    pub fn junction_upstream_of(&self, link: LinkId) -> Option<&Junction> {
        self.junctions.iter().find(|j| j.downstream.contains(&link))
    }

    fn is_ring(&self, link: LinkId) -> bool {
        self.junctions.iter().any(|j| {
            j.kind == JunctionKind::Linear && j.upstream == [link] && j.downstream == [link]
        })
    }
}

/// Structural validation. Returns an empty list when all invariants hold;
/// errors make the network unusable, warnings flag known gotchas.
pub fn validate(network: &Network) -> Vec<Diagnostic> {
    let mut out: Vec<Diagnostic> = Vec::new();
    macro_rules! err {
        ($($arg:tt)*) => {
            out.push(Diagnostic { severity: Severity::Error, message: format!($($arg)*) })
        };
    }

    for (i, l) in network.links.iter().enumerate() {
        if network.links[i + 1..].iter().any(|m| m.id == l.id) {
            err!("duplicate link id {}", l.id);
        }
        if l.kind == LinkKind::Regular {
            if l.fd.is_none() {
                err!("link {} has no fundamental diagram", l.id);
            }
            if l.cells == 0 {
                err!("link {} has no cells", l.id);
            }
            if !(l.length > 0.0) {
                err!("link {} has non-positive length", l.id);
            }
            if !(l.lanes > 0.0) {
                err!("link {} has non-positive lane count", l.id);
            }
        }
    }

    for (ji, j) in network.junctions.iter().enumerate() {
        let arity_ok = match &j.kind {
            JunctionKind::Linear => j.upstream.len() == 1 && j.downstream.len() == 1,
            JunctionKind::Merge { .. } => !j.upstream.is_empty() && j.downstream.len() == 1,
            JunctionKind::DivergeProportional
            | JunctionKind::DivergeInstantaneous
            | JunctionKind::DivergeFree => j.upstream.len() == 1 && !j.downstream.is_empty(),
            JunctionKind::General { .. } => !j.upstream.is_empty() && !j.downstream.is_empty(),
        };
        if !arity_ok {
            err!("junction {ji} has the wrong number of incident links");
        }
        for id in j.upstream.iter().chain(&j.downstream) {
            if network.link(*id).is_none() {
                err!("junction {ji} references unknown link {id}");
            }
        }
        if let JunctionKind::General { turning: Some(matrix) } = &j.kind {
            if matrix.len() != j.upstream.len()
                || matrix.iter().any(|row| row.len() != j.downstream.len())
            {
                err!("junction {ji}: turning matrix does not match incident links");
            }
            if !network.commodities.is_empty() {
                out.push(Diagnostic {
                    severity: Severity::Warning,
                    message: format!(
                        "junction {ji}: commodity paths take precedence over the static \
                         turning matrix"
                    ),
                });
            }
        }
    }

    // Each link end attaches to at most one junction; origins release, and
    // destinations absorb, at exactly one side.
    for l in &network.links {
        let down_count = network.junctions.iter().filter(|j| j.upstream.contains(&l.id)).count();
        let up_count = network.junctions.iter().filter(|j| j.downstream.contains(&l.id)).count();
        if l.kind == LinkKind::Regular && network.is_ring(l.id) {
            continue;
        }
        if down_count > 1 || up_count > 1 {
            err!("link {} attaches to multiple junctions at one end", l.id);
        }
        match l.kind {
            LinkKind::Origin => {
                if up_count != 0 {
                    err!("origin link {} has an upstream junction", l.id);
                }
            }
            LinkKind::Destination => {
                if down_count != 0 {
                    err!("destination link {} has a downstream junction", l.id);
                }
            }
            LinkKind::Regular => {}
        }
    }

    let has_origins = network.links.iter().any(|l| l.kind == LinkKind::Origin);
    for (ci, c) in network.commodities.iter().enumerate() {
        if c.path.is_empty() {
            err!("commodity {ci} has an empty path");
            continue;
        }
        if has_origins {
            let first = network.link(c.path[0]);
            let last = network.link(*c.path.last().expect("non-empty"));
            if first.map(|l| l.kind) != Some(LinkKind::Origin) {
                err!("commodity {ci} does not start at an origin");
            }
            if last.map(|l| l.kind) != Some(LinkKind::Destination) {
                err!("commodity {ci} does not end at a destination");
            }
        } else if c.path.len() == 1 && !network.is_ring(c.path[0]) {
            err!("commodity {ci}: single-link path requires a ring link");
        }
        for w in c.path.windows(2) {
            let connected = network
                .junctions
                .iter()
                .any(|j| j.upstream.contains(&w[0]) && j.downstream.contains(&w[1]));
            if !connected {
                err!("commodity {ci}: disconnected path between links {} and {}", w[0], w[1]);
            }
        }
    }

    // Vehicle identity through cumulative curves needs FIFO of commodities,
    // which a free-choice diverge does not guarantee.
    if network.commodities.len() > 1 {
        for (ji, j) in network.junctions.iter().enumerate() {
            if j.kind == JunctionKind::DivergeFree {
                out.push(Diagnostic {
                    severity: Severity::Warning,
                    message: format!(
                        "junction {ji} is a free-choice diverge; travel times from cumulative \
                         curves are unreliable for multi-commodity traffic"
                    ),
                });
            }
        }
    }

    out
}

/// CFL number of the scenario: the maximum over cells (incident overrides
/// included) of the cell's wave-speed bound times `dt/dx`.
pub fn cfl_number(scenario: &Scenario) -> f64 {
    let mut worst = 0.0f64;
    for link in &scenario.network.links {
        if link.kind != LinkKind::Regular {
            continue;
        }
        let dx = link.length / link.cells as f64;
        if let Some(fd) = &link.fd {
            let c = fd.max_wave_speed() * scenario.dt / dx;
            if c > worst {
                worst = c;
            }
        }
        for inc in &scenario.incidents {
            if inc.link == link.id {
                if let Some(fd) = &inc.fd {
                    let c = fd.max_wave_speed() * scenario.dt / dx;
                    if c > worst {
                        worst = c;
                    }
                }
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fd::FdCurve;

    fn tri() -> FdCurve {
        FdCurve::triangular(65.0, 36.0, 180.0).unwrap()
    }

    /// The six-link, two-commodity demonstration network: origin 0, sink 1,
    /// a three-lane feeder 2 diverging into 3 and 4, merging into 5.
    pub(crate) fn demo_network(n: usize) -> Network {
        let fd = tri();
        let link = |id, kind, length: f64, lanes: f64, cells| LinkSpec {
            id,
            kind,
            length,
            lanes,
            fd: Some(fd),
            cells,
        };
        Network {
            links: alloc::vec![
                LinkSpec { id: 0, kind: LinkKind::Origin, length: 0.0, lanes: 3.0, fd: None, cells: 0 },
                LinkSpec { id: 1, kind: LinkKind::Destination, length: 0.0, lanes: 2.0, fd: None, cells: 0 },
                link(2, LinkKind::Regular, 20.0, 3.0, n),
                link(3, LinkKind::Regular, 20.0, 2.0, n),
                link(4, LinkKind::Regular, 40.0, 2.0, 2 * n),
                link(5, LinkKind::Regular, 20.0, 2.0, n),
            ],
            junctions: alloc::vec![
                Junction { upstream: alloc::vec![0], downstream: alloc::vec![2], kind: JunctionKind::Linear },
                Junction {
                    upstream: alloc::vec![2],
                    downstream: alloc::vec![3, 4],
                    kind: JunctionKind::DivergeProportional,
                },
                Junction {
                    upstream: alloc::vec![3, 4],
                    downstream: alloc::vec![5],
                    kind: JunctionKind::Merge { scheme: MergeScheme::Fairness },
                },
                Junction { upstream: alloc::vec![5], downstream: alloc::vec![1], kind: JunctionKind::Linear },
            ],
            commodities: alloc::vec![
                Commodity { path: alloc::vec![0, 2, 3, 5, 1] },
                Commodity { path: alloc::vec![0, 2, 4, 5, 1] },
            ],
        }
    }

    #[test]
    fn demo_network_is_valid() {
        let diags = validate(&demo_network(10));
        assert!(diags.is_empty(), "{diags:?}");
    }

    #[test]
    fn disconnected_path_is_flagged() {
        let mut net = demo_network(10);
        net.commodities[0].path = alloc::vec![0, 2, 5, 1]; // skips the diverge
        let diags = validate(&net);
        assert!(diags.iter().any(|d| d.message.contains("disconnected path")));
    }

    #[test]
    fn junction_arity_is_checked() {
        let mut net = demo_network(10);
        net.junctions[0].downstream.push(3);
        let diags = validate(&net);
        assert!(diags
            .iter()
            .any(|d| d.severity == Severity::Error && d.message.contains("wrong number")));
    }

    #[test]
    fn free_diverge_with_commodities_warns() {
        let mut net = demo_network(10);
        net.junctions[1].kind = JunctionKind::DivergeFree;
        let diags = validate(&net);
        assert!(diags
            .iter()
            .any(|d| d.severity == Severity::Warning && d.message.contains("free-choice")));
    }

    #[test]
    fn profile_lookup() {
        let p = Profile { points: alloc::vec![(0.0, 3.0), (6.0, 0.0)] };
        assert_eq!(p.value_at(0.0), 3.0);
        assert_eq!(p.value_at(5.999), 3.0);
        assert_eq!(p.value_at(6.0), 0.0);
        assert_eq!(p.value_at(8.0), 0.0);
        assert!(p.is_valid());
        assert!(!Profile { points: alloc::vec![] }.is_valid());
    }

    #[test]
    fn cfl_of_demo_scenario() {
        // dx = 0.05 miles, dt = 0.0007 hours, vf = 65 mph: CFL 0.91.
        let scenario = Scenario {
            units: UnitSystem::miles_hours(),
            network: demo_network(400),
            dt: 0.0007,
            steps: 10,
            origins: alloc::vec![],
            destinations: alloc::vec![],
            controls: alloc::vec![],
            incidents: alloc::vec![],
            init: alloc::vec![],
            probes: alloc::vec![],
            boundary_probes: alloc::vec![],
        };
        let c = cfl_number(&scenario);
        assert!((c - 0.91).abs() < 1e-12, "{c}");
    }
}
