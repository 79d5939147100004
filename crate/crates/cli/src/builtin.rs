//! Built-in experiment library. Parameters are frozen in the JSON data
//! files under `scenarios/` and embedded at compile time; ids may carry a
//! route-split argument, e.g. `ch7-equilibrium(0.4)`.

use anyhow::{anyhow, Result};

use crate::schema::{self, ScenarioDoc};

pub const BUILTIN_IDS: &[&str] = &[
    "ch2-ring-homogeneous",
    "ch2-ring-bottleneck",
    "ch3-merge",
    "ch3-merge-metered",
    "ch3-converge",
    "ch4-diverge-general",
    "ch4-diverge-extreme",
    "ch5-mixed-ring",
    "ch6-network",
    "ch6-converge",
    "ch7-equilibrium",
    "ch7-periodic",
];

fn raw_json(id: &str) -> Option<&'static str> {
    Some(match id {
        "ch2-ring-homogeneous" => include_str!("../scenarios/ch2-ring-homogeneous.json"),
        "ch2-ring-bottleneck" => include_str!("../scenarios/ch2-ring-bottleneck.json"),
        "ch3-merge" => include_str!("../scenarios/ch3-merge.json"),
        "ch3-merge-metered" => include_str!("../scenarios/ch3-merge-metered.json"),
        "ch3-converge" => include_str!("../scenarios/ch3-converge.json"),
        "ch4-diverge-general" => include_str!("../scenarios/ch4-diverge-general.json"),
        "ch4-diverge-extreme" => include_str!("../scenarios/ch4-diverge-extreme.json"),
        "ch5-mixed-ring" => include_str!("../scenarios/ch5-mixed-ring.json"),
        // The convergence study reruns the base network at nested grids.
        "ch6-network" | "ch6-converge" => include_str!("../scenarios/ch6-network.json"),
        "ch7-equilibrium" => include_str!("../scenarios/ch7-equilibrium.json"),
        "ch7-periodic" => include_str!("../scenarios/ch7-periodic.json"),
        _ => return None,
    })
}

/// A scenario reference: builtin id (with optional split argument) as it
/// appeared on the command line.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioRef {
    pub base: String,
    pub xi: Option<f64>,
}

impl ScenarioRef {
    pub fn parse(text: &str) -> Result<Self> {
        if let Some(open) = text.find('(') {
            let close = text
                .rfind(')')
                .ok_or_else(|| anyhow!("unbalanced parenthesis in scenario id `{text}`"))?;
            let base = text[..open].to_string();
            let xi: f64 = text[open + 1..close]
                .parse()
                .map_err(|_| anyhow!("bad split argument in `{text}`"))?;
            Ok(ScenarioRef { base, xi: Some(xi) })
        } else {
            Ok(ScenarioRef { base: text.to_string(), xi: None })
        }
    }

    pub fn display_id(&self) -> String {
        match self.xi {
            Some(xi) => format!("{}({})", self.base, xi),
            None => self.base.clone(),
        }
    }
}

pub fn is_builtin(id: &str) -> bool {
    ScenarioRef::parse(id).map(|r| raw_json(&r.base).is_some()).unwrap_or(false)
}

/// Load a builtin by reference, applying the split argument and any dotted
/// `--set` overrides to the raw document before parsing.
pub fn load(reference: &ScenarioRef, sets: &[(String, String)]) -> Result<ScenarioDoc> {
    let raw = raw_json(&reference.base)
        .ok_or_else(|| anyhow!("unknown builtin scenario `{}`", reference.base))?;
    let mut value: serde_json::Value = serde_json::from_str(raw).expect("builtin files parse");
    if let Some(xi) = reference.xi {
        schema::set_xi(&mut value, xi)?;
    }
    schema::apply_overrides(&mut value, sets)?;
    let text = serde_json::to_string(&value).expect("value serializes");
    ScenarioDoc::parse(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_builtin_parses() {
        for id in BUILTIN_IDS {
            let reference = ScenarioRef::parse(id).unwrap();
            let doc = load(&reference, &[]).unwrap();
            assert_eq!(doc.schema_version, 1);
        }
    }

    #[test]
    fn split_argument_is_applied() {
        let reference = ScenarioRef::parse("ch7-equilibrium(0.4)").unwrap();
        assert_eq!(reference.base, "ch7-equilibrium");
        assert_eq!(reference.xi, Some(0.4));
        let doc = load(&reference, &[]).unwrap();
        let crate::schema::ScenarioBody::Network(net) = &doc.body else {
            panic!("network scenario expected");
        };
        let d0 = &net.boundary_conditions.origins[0].demands[0].profile[0].flow;
        assert_eq!(*d0, crate::schema::Flow::PerHour(7020.0 * 0.4));
    }

    #[test]
    fn unknown_id_rejected() {
        assert!(!is_builtin("ch9-imaginary"));
        assert!(load(&ScenarioRef::parse("ch9-imaginary").unwrap(), &[]).is_err());
    }
}
