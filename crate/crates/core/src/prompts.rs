//! Built-in prompt sets: a system-prompt template plus role definitions.

use crate::types::{validate_role_set, RoleSet, RoleSpec};

/// A system-prompt template and the roles that share it.
#[derive(Debug, Clone)]
pub struct PromptSet {
    pub name: &'static str,
    pub system: &'static str,
    pub roles: RoleSet,
}

struct RoleDef {
    name: &'static str,
    prompt: &'static str,
    may_terminate: bool,
    description: &'static str,
}

const fn role(
    name: &'static str,
    prompt: &'static str,
    may_terminate: bool,
    description: &'static str,
) -> RoleDef {
    RoleDef {
        name,
        prompt,
        may_terminate,
        description,
    }
}

fn build(name: &'static str, system: &'static str, defs: &[RoleDef]) -> PromptSet {
    let roles = defs
        .iter()
        .map(|d| RoleSpec {
            name: d.name.to_string(),
            prompt: d.prompt.to_string(),
            may_terminate: d.may_terminate,
            cost: 1.0,
            description: d.description.to_string(),
        })
        .collect();
    PromptSet {
        name,
        system,
        roles: validate_role_set(roles).expect("built-in role set is valid"),
    }
}

pub const SET_NAMES: [&str; 4] = ["code", "math", "general", "nine"];

/// Code-generation roles.
pub fn code() -> PromptSet {
    build(
        "code",
        include_str!("../prompts/code/system.txt"),
        &[
            role("Algorithm Designer", include_str!("../prompts/code/algorithm_designer.txt"), false, "designs the algorithm and pseudocode"),
            role("Researcher", include_str!("../prompts/code/researcher.txt"), false, "searches for solutions to open issues"),
            role("Programming Expert", include_str!("../prompts/code/programming_expert.txt"), false, "writes the Python implementation"),
            role("Code Auditor", include_str!("../prompts/code/code_auditor.txt"), false, "checks code for fatal bugs"),
            role("Test Engineer", include_str!("../prompts/code/test_engineer.txt"), true, "tests the solution and can finish the task"),
        ],
    )
}

/// Math-reasoning roles.
pub fn math() -> PromptSet {
    build(
        "math",
        include_str!("../prompts/math/system.txt"),
        &[
            role("MathSolverAgent", include_str!("../prompts/math/math_solver.txt"), false, "solves step by step"),
            role("MathematicalAnalystAgent", include_str!("../prompts/math/mathematical_analyst.txt"), false, "analyses symbolically and computes"),
            role("ProgrammingExpertAgent", include_str!("../prompts/math/programming_expert.txt"), false, "solves with Python code"),
            role("InspectorAgent", include_str!("../prompts/math/inspector.txt"), true, "verifies the answer and can finish the task"),
        ],
    )
}

/// Mixed code and math roles.
pub fn general() -> PromptSet {
    build(
        "general",
        include_str!("../prompts/general/system.txt"),
        &[
            role("Planner", include_str!("../prompts/general/planner.txt"), false, "leads the team and plans the approach"),
            role("Programming Expert", include_str!("../prompts/general/programming_expert.txt"), false, "writes Python code"),
            role("Mathematical Analyst", include_str!("../prompts/general/mathematical_analyst.txt"), false, "analyses math and code"),
            role("Inspector", include_str!("../prompts/general/inspector.txt"), true, "checks reasoning and code, can finish the task"),
            role("Code Auditor", include_str!("../prompts/general/code_auditor.txt"), true, "audits code, can finish the task"),
            role("Test Engineer", include_str!("../prompts/general/test_engineer.txt"), false, "tests and hands back for repair"),
        ],
    )
}

/// The nine general-purpose roles.
pub fn nine_roles() -> PromptSet {
    build(
        "nine",
        include_str!("../prompts/code/system.txt"),
        &[
            role("Algorithm Designer", include_str!("../prompts/roles/algorithm_designer.txt"), false, "designs the algorithm and pseudocode"),
            role("Researcher", include_str!("../prompts/roles/researcher.txt"), false, "searches for solutions to open issues"),
            role("Programming Expert", include_str!("../prompts/roles/programming_expert.txt"), false, "writes the Python implementation"),
            role("Code Reviewer", include_str!("../prompts/roles/code_reviewer.txt"), false, "reviews code for fatal bugs"),
            role("Test Engineer", include_str!("../prompts/roles/test_engineer.txt"), true, "tests the solution and can finish the task"),
            role("Mathematician", include_str!("../prompts/roles/mathematician.txt"), false, "solves math problems step by step"),
            role("Programming Assistant", include_str!("../prompts/roles/programming_assistant.txt"), false, "helps the programming expert with focused edits"),
            role("Data Analyst", include_str!("../prompts/roles/data_analyst.txt"), false, "analyses and computes results"),
            role("Inspector", include_str!("../prompts/roles/inspector.txt"), true, "verifies results and can finish the task"),
        ],
    )
}

pub fn by_name(name: &str) -> Option<PromptSet> {
    match name {
        "code" => Some(code()),
        "math" => Some(math()),
        "general" => Some(general()),
        "nine" => Some(nine_roles()),
        _ => None,
    }
}

/// Text the dispatcher sees when picking the first node.
pub const DISPATCHER_PROMPT: &str = "You are the dispatcher. Do not solve the task yourself.\n\
Read the task and choose which available node should work on it first.\n\n\
Final format: /* next_node: <node name> */";
