//! Tool registry and the action requests checked by the gateway.
//!
//! Every tool call an agent proposes is represented as an [`ActionRequest`]
//! whose arguments are bound to labeled data (see [`crate::flow`]). The
//! registry records, per tool, whether it mutates external state and which
//! rate-limit class it draws tokens from.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

use crate::flow::Datum;

/// Rate-limit class a tool draws throttle tokens from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionClass {
    Navigate,
    FormMutation,
    Egress,
    Other,
}

impl ActionClass {
    pub const ALL: [ActionClass; 4] = [
        ActionClass::Navigate,
        ActionClass::FormMutation,
        ActionClass::Egress,
        ActionClass::Other,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActionClass::Navigate => "navigate",
            ActionClass::FormMutation => "form_mutation",
            ActionClass::Egress => "egress",
            ActionClass::Other => "other",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "navigate" => Some(ActionClass::Navigate),
            "form_mutation" => Some(ActionClass::FormMutation),
            "egress" => Some(ActionClass::Egress),
            "other" => Some(ActionClass::Other),
            _ => None,
        }
    }
}

impl fmt::Display for ActionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Registry entry for one tool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolSpec {
    pub name: &'static str,
    /// Mutating tools are denied outright in safe mode.
    pub mutating: bool,
    pub class: ActionClass,
}

/// The built-in tool set. Extensible at runtime via [`ToolRegistry::register`].
const BUILTIN_TOOLS: &[ToolSpec] = &[
    ToolSpec { name: "navigate", mutating: false, class: ActionClass::Navigate },
    ToolSpec { name: "extract_content", mutating: false, class: ActionClass::Other },
    ToolSpec { name: "input_text", mutating: true, class: ActionClass::FormMutation },
    ToolSpec { name: "submit_input", mutating: true, class: ActionClass::FormMutation },
    ToolSpec { name: "done", mutating: false, class: ActionClass::Other },
    ToolSpec { name: "send", mutating: true, class: ActionClass::Egress },
    // Registered for rule completeness; the browsing tool set never emits it.
    ToolSpec { name: "exec", mutating: true, class: ActionClass::Other },
];

/// Maps tool names to their specs.
#[derive(Debug, Clone)]
pub struct ToolRegistry {
    tools: BTreeMap<String, ToolSpec>,
}

impl Default for ToolRegistry {
    fn default() -> Self {
        let tools = BUILTIN_TOOLS
            .iter()
            .map(|spec| (spec.name.to_string(), spec.clone()))
            .collect();
        Self { tools }
    }
}

impl ToolRegistry {
    pub fn builtin() -> Self {
        Self::default()
    }

    pub fn register(&mut self, spec: ToolSpec) {
        self.tools.insert(spec.name.to_string(), spec);
    }

    pub fn get(&self, name: &str) -> Option<&ToolSpec> {
        self.tools.get(name)
    }

    pub fn is_registered(&self, name: &str) -> bool {
        self.tools.contains_key(name)
    }
}

/// One named argument of a proposed action, bound to its labeled datum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionArg {
    pub name: String,
    /// Argument text in pre-rehydration form: secrets appear only as
    /// placeholder tokens, never as raw values.
    pub value: String,
    pub datum: Datum,
}

/// A proposed tool call, checked by the gateway before execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRequest {
    pub tool: String,
    pub args: Vec<ActionArg>,
    pub session_id: String,
    pub step: u64,
}

impl ActionRequest {
    pub fn new(tool: impl Into<String>, session_id: impl Into<String>, step: u64) -> Self {
        Self {
            tool: tool.into(),
            args: Vec::new(),
            session_id: session_id.into(),
            step,
        }
    }

    pub fn with_arg(mut self, name: impl Into<String>, value: impl Into<String>, datum: Datum) -> Self {
        self.args.push(ActionArg {
            name: name.into(),
            value: value.into(),
            datum,
        });
        self
    }

    pub fn arg(&self, name: &str) -> Option<&ActionArg> {
        self.args.iter().find(|a| a.name == name)
    }

    /// The `url` argument, present on navigate and on form actions that
    /// record the page they operate on.
    pub fn url_arg(&self) -> Option<&str> {
        self.arg("url").map(|a| a.value.as_str())
    }
}
