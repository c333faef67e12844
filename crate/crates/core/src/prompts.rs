//! Task-definition preambles shipped with the crate, one plain-text asset per task.

macro_rules! assets {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../assets/prompts/", $name, ".txt")))),*]
    };
}

const SOURCE_TASKS: &[(&str, &str)] = assets!(
    "ag_news",
    "arc_easy",
    "boolq",
    "commonsense_qa",
    "qqp",
    "race",
    "sst2",
);

const TARGET_TASKS: &[(&str, &str)] = assets!(
    "arc_challenge",
    "financial_phrasebank",
    "medmcqa",
    "sciq",
    "social_i_qa",
);

/// Looks up a shipped definition by asset name (e.g. `"arc_challenge"`).
pub fn task_definition(name: &str) -> Option<&'static str> {
    SOURCE_TASKS
        .iter()
        .chain(TARGET_TASKS)
        .find(|(n, _)| *n == name)
        .map(|(_, text)| text.trim_end())
}

pub fn source_task_names() -> impl Iterator<Item = &'static str> {
    SOURCE_TASKS.iter().map(|(n, _)| *n)
}

pub fn target_task_names() -> impl Iterator<Item = &'static str> {
    TARGET_TASKS.iter().map(|(n, _)| *n)
}
