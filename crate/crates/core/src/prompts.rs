//! The prompt templates used by the distiller and the retriever.
//!
//! Built-in English templates are compiled in; a deployment can override any
//! of them by dropping a file with the same name into a directory and calling
//! [`Prompts::load_dir`].

use std::path::Path;

use crate::error::Result;
use crate::template::Template;

pub const SYSTEM_FILE: &str = "system.txt";
pub const REFLECTION_FILE: &str = "reflection.txt";
pub const REWRITE_FILE: &str = "rewrite.txt";
pub const SUMMARIZE_FILE: &str = "summarize.txt";

pub const BUILTIN_SYSTEM: &str = include_str!("../templates/system.txt");
pub const BUILTIN_REFLECTION: &str = include_str!("../templates/reflection.txt");
pub const BUILTIN_REWRITE: &str = include_str!("../templates/rewrite.txt");
pub const BUILTIN_SUMMARIZE: &str = include_str!("../templates/summarize.txt");

/// Section headings of the built-in templates. The offline LLM backend keys
/// on these to tell prompt kinds apart.
pub mod headings {
    pub const TASK_SCENARIO: &str = "Task Scenario\n";
    pub const EXECUTION_HISTORY: &str = "Complete Execution History\n";
    pub const EVALUATION: &str = "Performance Evaluation Result\n";
    pub const HISTORICAL: &str = "Reflection on Historical Failures (if any)\n";
    pub const GUIDANCE: &str = "Reflection Guidance\n";
    pub const CUSTOMER_MESSAGE: &str = "Customer message:\n";
    pub const DIALOGUE_CONTEXT: &str = "Dialogue context:\n";
    pub const REFLECTION_ITEM: &str = "Reflection ";
}

#[derive(Debug, Clone)]
pub struct Prompts {
    pub system: Template,
    pub reflection: Template,
    pub rewrite: Template,
    pub summarize: Template,
}

impl Default for Prompts {
    fn default() -> Self {
        Prompts {
            system: Template::parse(BUILTIN_SYSTEM),
            reflection: Template::parse(BUILTIN_REFLECTION),
            rewrite: Template::parse(BUILTIN_REWRITE),
            summarize: Template::parse(BUILTIN_SUMMARIZE),
        }
    }
}

impl Prompts {
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut prompts = Prompts::default();
        for (name, slot) in [
            (SYSTEM_FILE, &mut prompts.system),
            (REFLECTION_FILE, &mut prompts.reflection),
            (REWRITE_FILE, &mut prompts.rewrite),
            (SUMMARIZE_FILE, &mut prompts.summarize),
        ] {
            let path = dir.join(name);
            if path.exists() {
                *slot = Template::from_file(&path)?;
            }
        }
        Ok(prompts)
    }
}

/// Scores print the way the reflection template expects: `1.0`, `0.6`, `0.0`.
pub fn format_score(x: f64) -> String {
    if x.fract() == 0.0 {
        format!("{x:.1}")
    } else {
        format!("{x}")
    }
}
