use std::fmt;

use serde::de::{Deserializer, MapAccess, Visitor};
use serde::{Deserialize, Serialize};

use super::{repair_json, AgentError, TaskType};
use crate::gateway::{AgentRole, Gateway};
use crate::prompts;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtaskStep {
    pub task_type: TaskType,
    pub description: String,
}

/// Ordered subtasks with pairwise-distinct task types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtaskPlan {
    pub steps: Vec<SubtaskStep>,
}

impl SubtaskPlan {
    pub fn descriptions(&self) -> Vec<&str> {
        self.steps.iter().map(|s| s.description.as_str()).collect()
    }
}

/// A JSON object read as ordered pairs, keeping duplicates visible.
struct OrderedPairs(Vec<(String, String)>);

impl<'de> Deserialize<'de> for OrderedPairs {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct PairsVisitor;

        impl<'de> Visitor<'de> for PairsVisitor {
            type Value = OrderedPairs;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an object mapping task types to descriptions")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
                let mut pairs = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, String>()? {
                    pairs.push((k, v));
                }
                Ok(OrderedPairs(pairs))
            }
        }

        d.deserialize_map(PairsVisitor)
    }
}

fn parse_plan(reply: &str, allowed: &[TaskType]) -> Result<SubtaskPlan, AgentError> {
    let body = repair_json(reply)
        .ok_or_else(|| AgentError::UnparseablePlan("no JSON object in reply".into()))?;
    let OrderedPairs(pairs) =
        serde_json::from_str(body).map_err(|e| AgentError::UnparseablePlan(e.to_string()))?;
    if pairs.is_empty() {
        return Err(AgentError::UnparseablePlan("plan has no steps".into()));
    }
    let mut steps: Vec<SubtaskStep> = Vec::with_capacity(pairs.len());
    for (key, description) in pairs {
        let task_type = TaskType::parse(&key)
            .filter(|t| allowed.contains(t))
            .ok_or_else(|| AgentError::UnknownTaskType(key.clone()))?;
        if steps.iter().any(|s| s.task_type == task_type) {
            return Err(AgentError::UnparseablePlan(format!(
                "task type `{key}` appears twice"
            )));
        }
        steps.push(SubtaskStep {
            task_type,
            description,
        });
    }
    Ok(SubtaskPlan { steps })
}

/// Splits a multi-step instruction into typed subtasks, in reply order.
pub fn decompose(
    instruction: &str,
    allowed_types: &[TaskType],
    gateway: &Gateway,
) -> Result<SubtaskPlan, AgentError> {
    let labels: Vec<&str> = allowed_types.iter().map(|t| t.as_str()).collect();
    let rendered = serde_json::to_string(&labels).expect("labels serialize");
    let system = prompts::fill(prompts::DECOMPOSER, &[("benchmark_task_types", &rendered)]);
    let (reply, _) = gateway.complete(AgentRole::Decomposer, &system, instruction)?;
    parse_plan(&reply, allowed_types)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::MockTurn;

    fn all() -> Vec<TaskType> {
        TaskType::all().collect()
    }

    #[test]
    fn worked_example_parses_in_order() {
        let reply = r#"{"TableTransformation-SplittingANDConcatenation": "Merge multiple CSV files", "TableCleaning-Deduplication": "Deduplicate entries based on a primary key"}"#;
        let gw = Gateway::mock(vec![MockTurn::new(AgentRole::Decomposer, reply)]);
        let plan = decompose(
            "Merge multiple CSV files and deduplicate entries based on a primary key.",
            &all(),
            &gw,
        )
        .unwrap();
        assert_eq!(plan.steps.len(), 2);
        assert_eq!(
            plan.steps[0].task_type.as_str(),
            "TableTransformation-SplittingANDConcatenation"
        );
        assert_eq!(plan.steps[0].description, "Merge multiple CSV files");
        assert_eq!(
            plan.steps[1].task_type.as_str(),
            "TableCleaning-Deduplication"
        );
        assert_eq!(
            plan.steps[1].description,
            "Deduplicate entries based on a primary key"
        );
    }

    #[test]
    fn single_entry_plan() {
        let plan =
            parse_plan(r#"{"TableTransformation-Sorting": "sort by date"}"#, &all()).unwrap();
        assert_eq!(plan.steps.len(), 1);
    }

    #[test]
    fn duplicate_keys_are_rejected() {
        let reply = r#"{"TableTransformation-Sorting": "a", "TableTransformation-Sorting": "b"}"#;
        assert!(matches!(
            parse_plan(reply, &all()),
            Err(AgentError::UnparseablePlan(_))
        ));
    }

    #[test]
    fn keys_outside_allowed_set_are_rejected() {
        let allowed = vec![TaskType::parse("TableTransformation-Sorting").unwrap()];
        let reply = r#"{"TableTransformation-Filtering": "a"}"#;
        assert!(
            matches!(parse_plan(reply, &allowed), Err(AgentError::UnknownTaskType(k)) if k == "TableTransformation-Filtering")
        );
        assert!(matches!(
            parse_plan(r#"{"Bogus": "a"}"#, &all()),
            Err(AgentError::UnknownTaskType(_))
        ));
    }

    #[test]
    fn empty_or_non_object_replies_fail() {
        assert!(parse_plan("{}", &all()).is_err());
        assert!(parse_plan("nothing", &all()).is_err());
        assert!(parse_plan(r#"{"TableTransformation-Sorting": 3}"#, &all()).is_err());
    }
}
