//! Declarative regression specifications and the built-in registry.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Edge,
    Session,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "ols", alias = "OLS")]
    Ols,
    #[serde(rename = "2sls", alias = "2SLS")]
    Tsls,
    #[serde(rename = "ils", alias = "ILS")]
    Ils,
}

impl Method {
    /// Column header used in rendered tables.
    pub fn table_label(self) -> &'static str {
        match self {
            Method::Ols => "OLS",
            Method::Tsls | Method::Ils => "IV",
        }
    }
}

/// How excluded instruments are built from the arm column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InstrumentExpr {
    #[serde(rename = "none")]
    None,
    /// `1(arm = treatment)`.
    #[serde(rename = "arm")]
    Arm,
    /// `1(arm = treatment) * 1(reason = r)` for every observed reason `r`.
    #[serde(rename = "arm_x_reason", alias = "arm×reason")]
    ArmXReason,
}

fn default_cluster() -> String {
    "user_id".to_owned()
}

fn default_treatment() -> String {
    crate::simulator::TREATMENT.to_owned()
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub level: Level,
    pub outcome: String,
    #[serde(default)]
    pub endogenous: Vec<String>,
    pub instruments: InstrumentExpr,
    /// Exogenous regressors. For OLS these are all the regressors; an intercept is always added.
    #[serde(default)]
    pub controls: Vec<String>,
    #[serde(default = "default_cluster")]
    pub cluster: String,
    pub method: Method,
    /// Arm level coded as treated when building instruments.
    #[serde(default = "default_treatment")]
    pub treatment_arm: String,
    #[serde(default, skip_serializing_if = "is_false")]
    pub preferred: bool,
}

pub const EDGE_NUMERIC: [&str; 4] = ["position", "outcome", "relevance_score", "session_depth"];
pub const SESSION_NUMERIC: [&str; 3] = ["n_top_spot", "n_bottom_spot", "invite_total"];
const EDGE_CLUSTERS: [&str; 3] = ["user_id", "request_id", "item_id"];
const SESSION_CLUSTERS: [&str; 2] = ["user_id", "request_id"];

impl ModelSpec {
    /// Checks the structural invariants of a specification.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(format!("{}: {m}", self.name)));
        if self.name.trim().is_empty() {
            return bad("name is empty".into());
        }
        let is_ols = self.method == Method::Ols;
        if is_ols != (self.instruments == InstrumentExpr::None) {
            return bad("OLS must have no instruments and IV methods must have some".into());
        }
        if is_ols && !self.endogenous.is_empty() {
            return bad("OLS takes its regressors as controls, not endogenous columns".into());
        }
        if !is_ols && self.endogenous.is_empty() {
            return bad("IV needs at least one endogenous column".into());
        }
        if self.method == Method::Ils
            && (self.endogenous.len() != 1 || self.instruments != InstrumentExpr::Arm)
        {
            return bad("ILS needs one endogenous column and the single `arm` instrument".into());
        }
        let (numeric, clusters): (&[&str], &[&str]) = match self.level {
            Level::Edge => (&EDGE_NUMERIC, &EDGE_CLUSTERS),
            Level::Session => (&SESSION_NUMERIC, &SESSION_CLUSTERS),
        };
        let level = match self.level {
            Level::Edge => "edge",
            Level::Session => "session",
        };
        for col in std::iter::once(&self.outcome)
            .chain(&self.endogenous)
            .chain(&self.controls)
        {
            if !numeric.contains(&col.as_str()) {
                return bad(format!("`{col}` is not a numeric {level}-level column"));
            }
        }
        if !clusters.contains(&self.cluster.as_str()) {
            return bad(format!("`{}` is not a {level}-level cluster column", self.cluster));
        }
        let mut seen = std::collections::HashSet::new();
        for col in self.endogenous.iter().chain(&self.controls) {
            if col == &self.outcome || !seen.insert(col) {
                return bad(format!("`{col}` appears more than once among the variables"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ModelSpec serializes")
    }
}

/// Parses and validates a JSON specification.
pub fn parse_spec(text: &str) -> Result<ModelSpec> {
    let spec: ModelSpec = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| (*s).to_owned()).collect()
}

fn spec(
    name: &str,
    level: Level,
    outcome: &str,
    endogenous: &[&str],
    instruments: InstrumentExpr,
    controls: &[&str],
    method: Method,
) -> ModelSpec {
    ModelSpec {
        name: name.to_owned(),
        level,
        outcome: outcome.to_owned(),
        endogenous: strings(endogenous),
        instruments,
        controls: strings(controls),
        cluster: default_cluster(),
        method,
        treatment_arm: default_treatment(),
        preferred: false,
    }
}

/// The nine named specifications: ads (1-3), PYMK edge level (4-7), PYMK session level (A1-A2).
pub fn builtin_specs() -> Vec<ModelSpec> {
    use InstrumentExpr::*;
    use Level::*;
    use Method::*;
    let rel = "relevance_score";
    let mut specs = vec![
        spec("spec1", Edge, "outcome", &["position"], Arm, &[], Tsls),
        spec("spec2", Edge, "outcome", &["position"], Arm, &[rel], Tsls),
        spec("spec3", Edge, "outcome", &[], None, &["position", rel], Ols),
        spec("spec4", Edge, "outcome", &["position"], ArmXReason, &[], Tsls),
        spec("spec5", Edge, "outcome", &["position"], ArmXReason, &[rel], Tsls),
        spec(
            "spec6",
            Edge,
            "outcome",
            &["position", "session_depth"],
            ArmXReason,
            &[rel],
            Tsls,
        ),
        spec(
            "spec7",
            Edge,
            "outcome",
            &[],
            None,
            &["position", "session_depth", rel],
            Ols,
        ),
        spec(
            "specA1",
            Session,
            "invite_total",
            &["n_top_spot", "n_bottom_spot"],
            ArmXReason,
            &[],
            Tsls,
        ),
        spec(
            "specA2",
            Session,
            "invite_total",
            &[],
            None,
            &["n_top_spot", "n_bottom_spot"],
            Ols,
        ),
    ];
    for s in &mut specs {
        s.preferred = matches!(s.name.as_str(), "spec2" | "spec6" | "specA1");
    }
    specs
}

pub fn builtin_spec(name: &str) -> Option<ModelSpec> {
    builtin_specs().into_iter().find(|s| s.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_are_valid_and_named() {
        let specs = builtin_specs();
        let names: Vec<_> = specs.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(
            names,
            ["spec1", "spec2", "spec3", "spec4", "spec5", "spec6", "spec7", "specA1", "specA2"]
        );
        for s in &specs {
            s.validate().unwrap();
            assert_eq!(s.cluster, "user_id");
        }
    }

    #[test]
    fn spec2_is_preferred() {
        assert!(builtin_spec("spec2").unwrap().preferred);
        assert!(!builtin_spec("spec1").unwrap().preferred);
    }

    #[test]
    fn spec6_has_two_endogenous_columns() {
        assert_eq!(
            builtin_spec("spec6").unwrap().endogenous,
            ["position", "session_depth"]
        );
    }

    #[test]
    fn spec_a1_has_no_controls() {
        let a1 = builtin_spec("specA1").unwrap();
        assert!(a1.controls.is_empty());
        assert_eq!(a1.level, Level::Session);
    }

    #[test]
    fn spec5_round_trips() {
        let s5 = builtin_spec("spec5").unwrap();
        assert_eq!(parse_spec(&s5.to_json()).unwrap(), s5);
    }

    #[test]
    fn ols_with_instruments_is_invalid() {
        let mut s = builtin_spec("spec3").unwrap();
        s.instruments = InstrumentExpr::Arm;
        assert!(matches!(parse_spec(&s.to_json()), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn session_spec_cannot_use_edge_columns() {
        let mut s = builtin_spec("specA2").unwrap();
        s.controls.push("relevance_score".into());
        assert!(matches!(parse_spec(&s.to_json()), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn unknown_fields_and_bad_json_are_parse_errors() {
        let mut v: serde_json::Value =
            serde_json::from_str(&builtin_spec("spec1").unwrap().to_json()).unwrap();
        v["extra"] = 1.into();
        assert!(matches!(parse_spec(&v.to_string()), Err(Error::Parse(_))));
        assert!(matches!(parse_spec("{not json"), Err(Error::Parse(_))));
    }

    #[test]
    fn ils_needs_single_arm_instrument() {
        let mut s = builtin_spec("spec4").unwrap();
        s.method = Method::Ils;
        assert!(matches!(s.validate(), Err(Error::InvalidSpec(_))));
        let mut s1 = builtin_spec("spec1").unwrap();
        s1.method = Method::Ils;
        s1.validate().unwrap();
    }
}
