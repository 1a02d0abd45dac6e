use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FortificationPlan, Instance, NodeSpec, SolveReport};
use crate::distributions::SeverityModel;
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    budget: f64,
    severity: SeverityModel,
    nodes: Vec<NodeRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeRecord {
    id: usize,
    parent: Option<usize>,
    w: f64,
    c: f64,
}

impl Instance {
    pub fn to_json(&self) -> String {
        let file = InstanceFile {
            budget: self.budget(),
            severity: *self.severity(),
            nodes: self
                .node_specs()
                .into_iter()
                .map(|s| NodeRecord { id: s.id, parent: s.parent, w: s.weight, c: s.cost })
                .collect(),
        };
        // serde_json writes the shortest representation that round-trips exactly
        let mut out = serde_json::to_string_pretty(&file).expect("instance serializes");
        out.push('\n');
        out
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: InstanceFile = serde_json::from_str(text)?;
        let nodes: Vec<NodeSpec> = file
            .nodes
            .into_iter()
            .map(|r| NodeSpec { id: r.id, parent: r.parent, weight: r.w, cost: r.c })
            .collect();
        Instance::build(&nodes, file.budget, file.severity)
    }
}

pub fn read_instance(path: impl AsRef<Path>) -> Result<Instance> {
    Instance::from_json(&fs::read_to_string(path)?)
}

pub fn write_instance(instance: &Instance, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, instance.to_json())?;
    Ok(())
}

/// Reads a plan and checks its length against the instance.
pub fn read_plan(path: impl AsRef<Path>, instance: &Instance) -> Result<FortificationPlan> {
    let plan: FortificationPlan = serde_json::from_str(&fs::read_to_string(path)?)?;
    if plan.len() != instance.len() {
        return Err(Error::Schema(format!(
            "plan has {} levels, instance has {} nodes",
            plan.len(),
            instance.len()
        )));
    }
    Ok(plan)
}

pub fn write_plan(plan: &FortificationPlan, path: impl AsRef<Path>) -> Result<()> {
    let mut out = serde_json::to_string_pretty(plan)?;
    out.push('\n');
    fs::write(path, out)?;
    Ok(())
}

pub fn read_report(path: impl AsRef<Path>) -> Result<SolveReport> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn write_report(report: &SolveReport, path: impl AsRef<Path>) -> Result<()> {
    let mut out = serde_json::to_string_pretty(report)?;
    out.push('\n');
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_random, GeneratorParams};
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn instance_round_trips(seed in any::<u64>(), n in 1usize..40, depth in 1usize..8, frac in 0.05f64..0.95) {
            let p = GeneratorParams { node_count: n, max_depth: depth, budget_fraction: frac, seed, ..Default::default() };
            let inst = generate_random(&p).unwrap();
            let back = Instance::from_json(&inst.to_json()).unwrap();
            prop_assert_eq!(back, inst);
        }
    }

    #[test]
    fn file_round_trip_and_schema_errors() {
        let dir = tempfile::tempdir().unwrap();
        let inst = generate_random(&GeneratorParams { node_count: 12, seed: 5, ..Default::default() }).unwrap();
        let path = dir.path().join("inst.json");
        write_instance(&inst, &path).unwrap();
        assert_eq!(read_instance(&path).unwrap(), inst);

        let missing_budget = r#"{"severity":{"type":"uniform","params":{}},"nodes":[{"id":1,"parent":null,"w":1,"c":1}]}"#;
        let err = Instance::from_json(missing_budget).unwrap_err();
        assert!(err.to_string().contains("budget"), "{err}");
        assert!(err.to_string().contains("line"), "{err}");

        let plan_path = dir.path().join("plan.json");
        write_plan(&FortificationPlan::zeros(3), &plan_path).unwrap();
        assert!(matches!(read_plan(&plan_path, &inst), Err(Error::Schema(_))));
        write_plan(&FortificationPlan::zeros(12), &plan_path).unwrap();
        assert_eq!(read_plan(&plan_path, &inst).unwrap(), FortificationPlan::zeros(12));
    }

    #[test]
    fn instance_json_layout() {
        let nodes = vec![
            NodeSpec { id: 1, parent: None, weight: 1.0, cost: 1.0 },
            NodeSpec { id: 2, parent: Some(1), weight: 2.0, cost: 1.5 },
        ];
        let inst = Instance::build(&nodes, 1.0, SeverityModel::Triangular { beta: 0.4 }).unwrap();
        let v: serde_json::Value = serde_json::from_str(&inst.to_json()).unwrap();
        assert_eq!(v["budget"], 1.0);
        assert_eq!(v["severity"]["type"], "triangular");
        assert_eq!(v["severity"]["params"]["beta"], 0.4);
        assert_eq!(v["nodes"][0]["parent"], serde_json::Value::Null);
        assert_eq!(v["nodes"][1]["parent"], 1);
        assert_eq!(v["nodes"][1]["c"], 1.5);
    }
}
