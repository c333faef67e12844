use crate::data::Example;

/// Letter for a 0-based choice index (`0 -> 'A'`).
pub fn choice_letter(index: usize) -> char {
    assert!(index < 26, "choice index {index} has no letter");
    (b'A' + index as u8) as char
}

/// Rendering rules for ICL prompts. Demonstrations and the query share one
/// block layout; blocks are separated by a blank line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSpec {
    pub task_definition: String,
}

impl PromptSpec {
    pub fn new(task_definition: impl Into<String>) -> Self {
        PromptSpec {
            task_definition: task_definition.into(),
        }
    }

    /// `Question: {q}` then one `X. {choice}` line per choice, then
    /// `Answer: X` (or a bare `Answer:` for the query).
    pub fn render_block(&self, example: &Example, label: Option<usize>) -> String {
        let mut s = format!("Question: {}\n", example.query);
        for (i, c) in example.choices.iter().enumerate() {
            s.push(choice_letter(i));
            s.push_str(". ");
            s.push_str(c);
            s.push('\n');
        }
        match label {
            Some(l) => {
                s.push_str("Answer: ");
                s.push(choice_letter(l));
            }
            None => s.push_str("Answer:"),
        }
        s
    }
}

/// Task definition, each `(demo, label)` in the given order, then the query.
pub fn build_prompt(spec: &PromptSpec, demos: &[(&Example, usize)], query: &Example) -> String {
    let mut blocks = Vec::with_capacity(demos.len() + 2);
    if !spec.task_definition.is_empty() {
        blocks.push(spec.task_definition.clone());
    }
    for (ex, label) in demos {
        debug_assert!(*label < ex.n_choices());
        blocks.push(spec.render_block(ex, Some(*label)));
    }
    blocks.push(spec.render_block(query, None));
    blocks.join("\n\n")
}
