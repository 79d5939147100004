//! Scenario file schema and its conversion into engine scenarios.
//!
//! Documents are JSON with explicit units on every physical quantity; the
//! declared unit system defines the canonical units everything is converted
//! into at parse time. Serialization is canonical: fixed field order, sorted
//! maps, and default float formatting, so a parse/serialize round trip is a
//! fixed point.

use std::collections::BTreeMap;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use kinwave_core::fd::FdCurve;
use kinwave_core::junction::MergeScheme;
use kinwave_core::mixed::MixedParams;
use kinwave_core::network as net;
use kinwave_core::units::{UnitSystem, KM_PER_FOOT, KM_PER_MILE};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum Speed {
    Mph(f64),
    Kmh(f64),
    /// Canonical `l/tau`.
    LTau(f64),
    FtS(f64),
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum Density {
    PerKm(f64),
    PerMile(f64),
    /// Canonical `veh/l`.
    PerL(f64),
    PerFt(f64),
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum Flow {
    PerHour(f64),
    /// Canonical `veh/tau`.
    PerTau(f64),
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum Length {
    L(f64),
    Km(f64),
    Miles(f64),
    Ft(f64),
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum Time {
    Tau(f64),
    S(f64),
    Hours(f64),
}

impl Speed {
    pub fn canonical(&self, u: &UnitSystem) -> f64 {
        match *self {
            Speed::Mph(v) => u.speed_from_mph(v),
            Speed::Kmh(v) => u.speed_from_kmh(v),
            Speed::LTau(v) => v,
            Speed::FtS(v) => u.speed_from_kmh(v * KM_PER_FOOT * 3600.0),
        }
    }
}

impl Density {
    pub fn canonical(&self, u: &UnitSystem) -> f64 {
        match *self {
            Density::PerKm(v) => u.density_from_per_km(v),
            Density::PerMile(v) => u.density_from_per_km(v / KM_PER_MILE),
            Density::PerL(v) => v,
            Density::PerFt(v) => u.density_from_per_km(v / KM_PER_FOOT),
        }
    }
}

impl Flow {
    pub fn canonical(&self, u: &UnitSystem) -> f64 {
        match *self {
            Flow::PerHour(v) => u.flow_from_per_hour(v),
            Flow::PerTau(v) => v,
        }
    }
}

impl Length {
    pub fn canonical(&self, u: &UnitSystem) -> f64 {
        match *self {
            Length::L(v) => v,
            Length::Km(v) => u.length_from_km(v),
            Length::Miles(v) => u.length_from_miles(v),
            Length::Ft(v) => u.length_from_km(v * KM_PER_FOOT),
        }
    }
}

impl Time {
    pub fn canonical(&self, u: &UnitSystem) -> f64 {
        match *self {
            Time::Tau(v) => v,
            Time::S(v) => v / u.tau_s,
            Time::Hours(v) => u.time_from_hours(v),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct UnitsDoc {
    pub l_km: f64,
    pub tau_s: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FdDoc {
    Triangular { vf: Speed, rho_c: Density, rho_j: Density },
    Greenshields { vf: Speed, rho_j: Density },
    KernerKonhauser { rho_j: Density },
    Exponential { vf: Speed, c_j: Speed, rho_j: Density },
}

impl FdDoc {
    pub fn build(&self, u: &UnitSystem) -> Result<FdCurve> {
        let fd = match self {
            FdDoc::Triangular { vf, rho_c, rho_j } => {
                FdCurve::triangular(vf.canonical(u), rho_c.canonical(u), rho_j.canonical(u))
            }
            FdDoc::Greenshields { vf, rho_j } => {
                FdCurve::greenshields(vf.canonical(u), rho_j.canonical(u))
            }
            FdDoc::KernerKonhauser { rho_j } => FdCurve::kerner_konhauser(rho_j.canonical(u)),
            FdDoc::Exponential { vf, c_j, rho_j } => FdCurve::exponential(
                vf.canonical(u),
                c_j.canonical(u),
                rho_j.canonical(u),
            ),
        };
        fd.map_err(|e| anyhow!("fundamental diagram: {e}"))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum LinkKindDoc {
    Origin,
    Destination,
    Regular,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct LaneRange {
    pub from: Length,
    pub to: Length,
    pub lanes: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct LinkDoc {
    pub id: usize,
    pub kind: LinkKindDoc,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub length: Option<Length>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lanes: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fd: Option<String>,
    /// Explicit cell count; defaults to a uniform grid from `numerics.cells`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cells: Option<usize>,
    /// Piecewise lane overrides along the link (ring bottlenecks).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lane_profile: Option<Vec<LaneRange>>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum JunctionDoc {
    Linear { up: Vec<usize>, down: Vec<usize> },
    Merge {
        up: Vec<usize>,
        down: Vec<usize>,
        scheme: MergeSchemeDoc,
    },
    Diverge {
        up: Vec<usize>,
        down: Vec<usize>,
        model: DivergeModelDoc,
    },
    General {
        up: Vec<usize>,
        down: Vec<usize>,
        #[serde(skip_serializing_if = "Option::is_none")]
        turning: Option<Vec<Vec<f64>>>,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum MergeSchemeDoc {
    Fairness,
    DaganzoPriority { priority: f64 },
    LebacqueLanes {
        up_lanes: Vec<f64>,
        down_lanes: f64,
        #[serde(default)]
        strict: bool,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum DivergeModelDoc {
    Proportional,
    Instantaneous,
    Free,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CommodityDoc {
    pub path: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ProfilePoint {
    pub t: Time,
    pub flow: Flow,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DemandDoc {
    pub commodity: usize,
    pub profile: Vec<ProfilePoint>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct OriginDoc {
    pub link: usize,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub zero_gradient: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub demands: Vec<DemandDoc>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DestinationDoc {
    pub link: usize,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub zero_gradient: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub supply: Vec<ProfilePoint>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GreenPoint {
    pub t: Time,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ControlDoc {
    pub link: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub meter: Option<Vec<ProfilePoint>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub signal: Option<Vec<GreenPoint>>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct IncidentDoc {
    pub link: usize,
    pub cells: (usize, usize),
    pub window: (Time, Time),
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lanes: Option<f64>,
    /// Scale factor on the free-flow speed during the window.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vf_scale: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SinusoidDoc {
    /// Base and amplitude as per-lane fractions of the jam density.
    pub base: f64,
    pub amplitude: f64,
    /// Number of sine periods along the link.
    pub periods: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct InitDoc {
    pub link: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub uniform: Option<Density>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sinusoidal: Option<SinusoidDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub proportions: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct NumericsDoc {
    /// Cell count of the first regular link; other links scale by length so
    /// the grid spacing is uniform network-wide.
    pub cells: usize,
    pub steps: usize,
    pub horizon: Time,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ProbeDoc {
    pub link: usize,
    /// "all" or a cell index.
    pub cells: ProbeCellsDoc,
    #[serde(default = "default_every")]
    pub every: usize,
}

fn default_every() -> usize {
    1
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case", untagged)]
pub enum ProbeCellsDoc {
    Index(usize),
    Keyword(String),
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct BoundaryProbeDoc {
    pub link: usize,
    pub boundary: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Default)]
pub struct BoundaryConditionsDoc {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub origins: Vec<OriginDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub destinations: Vec<DestinationDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub controls: Vec<ControlDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub incidents: Vec<IncidentDoc>,
}

/// Two-class ring scenario (the mixed-traffic model has its own stepper).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MixedRingDoc {
    pub v_free: Speed,
    pub l1: Length,
    pub l2: Length,
    pub tau1: Time,
    pub tau2: Time,
    pub ring_length: Length,
    pub cells: usize,
    pub steps: usize,
    pub horizon: Time,
    /// Initial sinusoids as fractions of each class's jam density.
    pub init1: SinusoidDoc,
    pub init2: SinusoidDoc,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct NetworkScenarioDoc {
    pub units: UnitsDoc,
    pub fds: BTreeMap<String, FdDoc>,
    pub links: Vec<LinkDoc>,
    pub junctions: Vec<JunctionDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub commodities: Vec<CommodityDoc>,
    #[serde(default)]
    pub boundary_conditions: BoundaryConditionsDoc,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub initial: Vec<InitDoc>,
    pub numerics: NumericsDoc,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub probes: Vec<ProbeDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub boundary_probes: Vec<BoundaryProbeDoc>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioBody {
    Network(NetworkScenarioDoc),
    MixedRing(MixedRingDoc),
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ScenarioDoc {
    pub schema_version: u32,
    pub id: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    #[serde(flatten)]
    pub body: ScenarioBody,
}

impl ScenarioDoc {
    pub fn parse(text: &str) -> Result<Self> {
        let doc: ScenarioDoc = serde_json::from_str(text)
            .map_err(|e| anyhow!("schema violation at line {}, column {}: {e}", e.line(), e.column()))?;
        if doc.schema_version != SCHEMA_VERSION {
            bail!("unsupported schema_version {}", doc.schema_version);
        }
        Ok(doc)
    }

    /// Canonical serialization: fixed field order, two-space indentation.
    pub fn canonical_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("serializable");
        s.push('\n');
        s
    }

    /// Hash of the canonical form; changes iff a semantic field changes.
    pub fn param_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.canonical_json().as_bytes());
        let digest = hasher.finalize();
        let mut out = String::with_capacity(64);
        for b in digest {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }
}

fn profile_from(points: &[ProfilePoint], u: &UnitSystem) -> net::Profile {
    net::Profile {
        points: points.iter().map(|p| (p.t.canonical(u), p.flow.canonical(u))).collect(),
    }
}

/// Convert the parsed document into an engine scenario (with an optional
/// cell-count override preserving the file's `dt/dx` ratio).
pub fn build_network_scenario(doc: &NetworkScenarioDoc) -> Result<net::Scenario> {
    let units = UnitSystem::new(doc.units.l_km, doc.units.tau_s)
        .map_err(|e| anyhow!("units: {e}"))?;
    let mut fds: BTreeMap<&str, FdCurve> = BTreeMap::new();
    for (name, fd_doc) in &doc.fds {
        fds.insert(name.as_str(), fd_doc.build(&units).with_context(|| format!("fd `{name}`"))?);
    }

    // Uniform grid spacing derived from the first regular link.
    let first_regular = doc
        .links
        .iter()
        .find(|l| l.kind == LinkKindDoc::Regular)
        .ok_or_else(|| anyhow!("no regular links"))?;
    let first_len = first_regular
        .length
        .as_ref()
        .ok_or_else(|| anyhow!("link {} missing length", first_regular.id))?
        .canonical(&units);
    if doc.numerics.cells == 0 {
        bail!("numerics.cells must be positive");
    }
    let dx = first_len / doc.numerics.cells as f64;

    let mut links = Vec::new();
    for l in &doc.links {
        match l.kind {
            LinkKindDoc::Origin | LinkKindDoc::Destination => {
                links.push(net::LinkSpec {
                    id: l.id,
                    kind: if l.kind == LinkKindDoc::Origin {
                        net::LinkKind::Origin
                    } else {
                        net::LinkKind::Destination
                    },
                    length: 0.0,
                    lanes: l.lanes.unwrap_or(1.0),
                    fd: None,
                    cells: 0,
                });
            }
            LinkKindDoc::Regular => {
                let length = l
                    .length
                    .as_ref()
                    .ok_or_else(|| anyhow!("link {} missing length", l.id))?
                    .canonical(&units);
                let fd_name =
                    l.fd.as_ref().ok_or_else(|| anyhow!("link {} missing fd", l.id))?;
                let fd = *fds
                    .get(fd_name.as_str())
                    .ok_or_else(|| anyhow!("link {}: unknown fd `{fd_name}`", l.id))?;
                let cells = match l.cells {
                    Some(c) => c,
                    None => {
                        let c = (length / dx).round() as usize;
                        if c == 0 {
                            bail!("link {} shorter than one cell", l.id);
                        }
                        c
                    }
                };
                links.push(net::LinkSpec {
                    id: l.id,
                    kind: net::LinkKind::Regular,
                    length,
                    lanes: l.lanes.unwrap_or(1.0),
                    fd: Some(fd),
                    cells,
                });
            }
        }
    }

    let junctions = doc
        .junctions
        .iter()
        .map(|j| match j {
            JunctionDoc::Linear { up, down } => net::Junction {
                upstream: up.clone(),
                downstream: down.clone(),
                kind: net::JunctionKind::Linear,
            },
            JunctionDoc::Merge { up, down, scheme } => net::Junction {
                upstream: up.clone(),
                downstream: down.clone(),
                kind: net::JunctionKind::Merge {
                    scheme: match scheme {
                        MergeSchemeDoc::Fairness => MergeScheme::Fairness,
                        MergeSchemeDoc::DaganzoPriority { priority } => {
                            MergeScheme::DaganzoPriority { priority: *priority }
                        }
                        MergeSchemeDoc::LebacqueLanes { up_lanes, down_lanes, strict } => {
                            MergeScheme::LebacqueLanes {
                                up_lanes: up_lanes.clone(),
                                down_lanes: *down_lanes,
                                strict: *strict,
                            }
                        }
                    },
                },
            },
            JunctionDoc::Diverge { up, down, model } => net::Junction {
                upstream: up.clone(),
                downstream: down.clone(),
                kind: match model {
                    DivergeModelDoc::Proportional => net::JunctionKind::DivergeProportional,
                    DivergeModelDoc::Instantaneous => net::JunctionKind::DivergeInstantaneous,
                    DivergeModelDoc::Free => net::JunctionKind::DivergeFree,
                },
            },
            JunctionDoc::General { up, down, turning } => net::Junction {
                upstream: up.clone(),
                downstream: down.clone(),
                kind: net::JunctionKind::General { turning: turning.clone() },
            },
        })
        .collect();

    let commodities =
        doc.commodities.iter().map(|c| net::Commodity { path: c.path.clone() }).collect();

    let network = net::Network { links, junctions, commodities };

    // Boundary conditions.
    let mut origins = Vec::new();
    for o in &doc.boundary_conditions.origins {
        let bc = if o.zero_gradient {
            net::OriginBc::ZeroGradient
        } else {
            net::OriginBc::Demand(
                o.demands
                    .iter()
                    .map(|d| (d.commodity, profile_from(&d.profile, &units)))
                    .collect(),
            )
        };
        origins.push((o.link, bc));
    }
    let mut destinations = Vec::new();
    for d in &doc.boundary_conditions.destinations {
        let bc = if d.zero_gradient {
            net::DestinationBc::ZeroGradient
        } else {
            net::DestinationBc::Supply(profile_from(&d.supply, &units))
        };
        destinations.push((d.link, bc));
    }
    let mut controls = Vec::new();
    for c in &doc.boundary_conditions.controls {
        let kind = match (&c.meter, &c.signal) {
            (Some(rate), None) => net::ControlKind::Meter { rate: profile_from(rate, &units) },
            (None, Some(green)) => net::ControlKind::Signal {
                green_ratio: net::Profile {
                    points: green.iter().map(|g| (g.t.canonical(&units), g.value)).collect(),
                },
            },
            _ => bail!("control on link {} must set exactly one of meter/signal", c.link),
        };
        controls.push(net::Control { link: c.link, kind });
    }
    let mut incidents = Vec::new();
    for i in &doc.boundary_conditions.incidents {
        let spec = network
            .link(i.link)
            .ok_or_else(|| anyhow!("incident on unknown link {}", i.link))?;
        let fd_override = match i.vf_scale {
            None => None,
            Some(scale) => {
                let base = spec.fd.ok_or_else(|| anyhow!("incident on a link without fd"))?;
                Some(scale_vf(&base, scale)?)
            }
        };
        incidents.push(net::Incident {
            link: i.link,
            cells: i.cells,
            window: (i.window.0.canonical(&units), i.window.1.canonical(&units)),
            lanes: i.lanes,
            fd: fd_override,
        });
    }

    // Initial states.
    let mut init = Vec::new();
    for ic in &doc.initial {
        let spec = network
            .link(ic.link)
            .ok_or_else(|| anyhow!("initial state for unknown link {}", ic.link))?;
        let fd = spec.fd.ok_or_else(|| anyhow!("initial state for non-regular link {}", ic.link))?;
        let lane_profile = doc
            .links
            .iter()
            .find(|l| l.id == ic.link)
            .and_then(|l| l.lane_profile.clone());
        let lanes_at = |x: f64| -> f64 {
            if let Some(profile) = &lane_profile {
                for r in profile {
                    if x >= r.from.canonical(&units) && x < r.to.canonical(&units) {
                        return r.lanes;
                    }
                }
            }
            spec.lanes
        };
        let n = spec.cells;
        let dx_l = spec.length / n as f64;
        let entry = match (&ic.uniform, &ic.sinusoidal) {
            (Some(rho), None) if lane_profile.is_none() => net::LinkInit::Uniform {
                density: rho.canonical(&units),
                proportions: ic.proportions.clone(),
            },
            (Some(rho), None) => {
                let rho = rho.canonical(&units);
                let lanes: Vec<f64> =
                    (0..n).map(|i| lanes_at((i as f64 + 0.5) * dx_l)).collect();
                net::LinkInit::CellsWithLanes {
                    densities: vec![rho; n],
                    lanes,
                    proportions: ic.proportions.clone(),
                }
            }
            (None, Some(sine)) => {
                let jam_lane = fd.jam_density_lane();
                let mut densities = Vec::with_capacity(n);
                let mut lanes = Vec::with_capacity(n);
                for i in 0..n {
                    let x = (i as f64 + 0.5) * dx_l;
                    let a = lanes_at(x);
                    let frac = sine.base
                        + sine.amplitude
                            * (2.0 * std::f64::consts::PI * sine.periods * x / spec.length
                                + sine.phase)
                                .sin();
                    densities.push(a * jam_lane * frac);
                    lanes.push(a);
                }
                net::LinkInit::CellsWithLanes { densities, lanes, proportions: ic.proportions.clone() }
            }
            (None, None) => net::LinkInit::Empty,
            _ => bail!("initial state for link {}: set at most one of uniform/sinusoidal", ic.link),
        };
        init.push((ic.link, entry));
    }

    let probes = doc
        .probes
        .iter()
        .map(|p| {
            let cells = match &p.cells {
                ProbeCellsDoc::Index(i) => net::ProbeCells::One(*i),
                ProbeCellsDoc::Keyword(k) if k == "all" => net::ProbeCells::All,
                ProbeCellsDoc::Keyword(k) if k == "first" => net::ProbeCells::One(0),
                ProbeCellsDoc::Keyword(k) if k == "last" => net::ProbeCells::One(usize::MAX),
                ProbeCellsDoc::Keyword(k) => bail!("unknown probe cells keyword `{k}`"),
            };
            Ok(net::Probe { link: p.link, cells, every: p.every.max(1) })
        })
        .collect::<Result<Vec<_>>>()?;
    let boundary_probes = doc
        .boundary_probes
        .iter()
        .map(|b| net::BoundaryProbe { link: b.link, boundary: b.boundary })
        .collect();

    let horizon = doc.numerics.horizon.canonical(&units);
    if doc.numerics.steps == 0 {
        bail!("numerics.steps must be positive");
    }
    let dt = horizon / doc.numerics.steps as f64;

    Ok(net::Scenario {
        units,
        network,
        dt,
        steps: doc.numerics.steps,
        origins,
        destinations,
        controls,
        incidents,
        init,
        probes,
        boundary_probes,
    })
}

/// Rebuild a curve with its free-flow speed scaled (incident slowdowns).
fn scale_vf(fd: &FdCurve, scale: f64) -> Result<FdCurve> {
    use kinwave_core::fd::FdShape;
    if !(scale > 0.0) {
        bail!("vf_scale must be positive");
    }
    let scaled = match *fd.shape() {
        FdShape::Triangular { vf, rho_c, rho_j } => FdCurve::triangular(vf * scale, rho_c, rho_j),
        FdShape::Greenshields { vf, rho_j } => FdCurve::greenshields(vf * scale, rho_j),
        FdShape::Exponential { vf, c_j, rho_j } => FdCurve::exponential(vf * scale, c_j, rho_j),
        FdShape::KernerKonhauser { .. } => {
            bail!("the Kerner-Konhäuser curve has a fixed speed scale; use a lane override")
        }
    };
    scaled.map_err(|e| anyhow!("scaled fd: {e}"))
}

pub fn build_mixed_params(doc: &MixedRingDoc) -> Result<(MixedParams, UnitSystem)> {
    // Canonical units: the declared l/tau system of the ring (feet/seconds
    // in the published experiment).
    let units = UnitSystem::feet_seconds();
    let p = MixedParams::new(
        doc.v_free.canonical(&units),
        doc.l1.canonical(&units),
        doc.l2.canonical(&units),
        doc.tau1.canonical(&units),
        doc.tau2.canonical(&units),
    )
    .map_err(|e| anyhow!("mixed params: {e}"))?;
    Ok((p, units))
}

/// Apply dotted-path overrides (`numerics.cells=200`) onto the raw JSON
/// value. Overriding `numerics.cells` without `numerics.steps` rescales the
/// step count to preserve the file's `dt/dx` ratio.
pub fn apply_overrides(value: &mut serde_json::Value, sets: &[(String, String)]) -> Result<()> {
    let old_cells = value.pointer("/numerics/cells").and_then(|v| v.as_u64());
    let old_steps = value.pointer("/numerics/steps").and_then(|v| v.as_u64());
    let mut touched_cells = false;
    let mut touched_steps = false;
    for (path, raw) in sets {
        if path == "params.xi" {
            let xi: f64 = raw.parse().with_context(|| format!("bad value for {path}"))?;
            set_xi(value, xi)?;
            continue;
        }
        let parsed: serde_json::Value = match serde_json::from_str(raw) {
            Ok(v) => v,
            Err(_) => serde_json::Value::String(raw.clone()),
        };
        // A trailing `+` appends to an array (creating it when absent).
        if let Some(parent_path) = path.strip_suffix(".+") {
            let pointer = format!("/{}", parent_path.replace('.', "/"));
            let slot = value
                .pointer_mut(&pointer)
                .ok_or_else(|| anyhow!("override path `{parent_path}` not found in the scenario"))?;
            if slot.is_null() {
                *slot = serde_json::Value::Array(vec![]);
            }
            let arr = slot
                .as_array_mut()
                .ok_or_else(|| anyhow!("override path `{parent_path}` is not an array"))?;
            arr.push(parsed);
            continue;
        }
        let pointer = format!("/{}", path.replace('.', "/"));
        let slot = value
            .pointer_mut(&pointer)
            .ok_or_else(|| anyhow!("override path `{path}` not found in the scenario"))?;
        *slot = parsed;
        touched_cells |= path == "numerics.cells";
        touched_steps |= path == "numerics.steps";
    }
    if touched_cells && !touched_steps {
        if let (Some(oc), Some(os)) = (old_cells, old_steps) {
            let nc = value
                .pointer("/numerics/cells")
                .and_then(|v| v.as_u64())
                .ok_or_else(|| anyhow!("numerics.cells must be an integer"))?;
            if oc > 0 {
                let ns = (os as f64 * nc as f64 / oc as f64).round() as u64;
                *value.pointer_mut("/numerics/steps").expect("exists") =
                    serde_json::Value::from(ns.max(1));
            }
        }
    }
    Ok(())
}

/// Rewrite the commodity split of the first origin's demand profiles,
/// keeping the total demand: commodity 0 gets `xi`, commodity 1 the rest.
pub fn set_xi(value: &mut serde_json::Value, xi: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&xi) {
        bail!("xi must lie in [0, 1]");
    }
    let demands = value
        .pointer_mut("/boundary_conditions/origins/0/demands")
        .and_then(|v| v.as_array_mut())
        .ok_or_else(|| anyhow!("scenario has no origin demand profiles to split"))?;
    if demands.len() != 2 {
        bail!("xi override needs exactly two commodity demand profiles");
    }
    // Totals per breakpoint from the current two profiles.
    let read = |d: &serde_json::Value| -> Result<Vec<f64>> {
        d.pointer("/profile")
            .and_then(|v| v.as_array())
            .ok_or_else(|| anyhow!("malformed demand profile"))?
            .iter()
            .map(|p| {
                p.pointer("/flow/per_hour")
                    .or_else(|| p.pointer("/flow/per_tau"))
                    .and_then(|v| v.as_f64())
                    .ok_or_else(|| anyhow!("demand profile flow must be numeric"))
            })
            .collect()
    };
    let f0 = read(&demands[0])?;
    let f1 = read(&demands[1])?;
    if f0.len() != f1.len() {
        bail!("demand profiles must share breakpoints for the xi override");
    }
    for (i, (a, b)) in f0.iter().zip(&f1).enumerate() {
        let total = a + b;
        for (di, share) in [(0usize, xi), (1usize, 1.0 - xi)] {
            let slot = demands[di]
                .pointer_mut(&format!("/profile/{i}/flow"))
                .and_then(|v| v.as_object_mut())
                .ok_or_else(|| anyhow!("malformed demand profile"))?;
            let key = if slot.contains_key("per_hour") { "per_hour" } else { "per_tau" };
            slot.insert(key.to_string(), serde_json::Value::from(total * share));
        }
    }
    Ok(())
}
