use clap::ValueEnum;
use serde_json::{json, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// `name: value`, one per line.
    Human,
    /// One JSON object per line: `{"metric": name, "value": value}`.
    Records,
}

#[derive(Debug, Default)]
pub struct Report {
    lines: Vec<(&'static str, Value)>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: &'static str, value: impl Into<Value>) -> &mut Self {
        self.lines.push((name, value.into()));
        self
    }

    pub fn render(&self, format: Format) -> String {
        let mut out = String::new();
        for (name, value) in &self.lines {
            match format {
                Format::Human => {
                    let v = match value {
                        Value::String(s) => s.clone(),
                        Value::Null => "none".into(),
                        other => other.to_string(),
                    };
                    out.push_str(&format!("{name}: {v}\n"));
                }
                Format::Records => {
                    out.push_str(&json!({"metric": name, "value": value}).to_string());
                    out.push('\n');
                }
            }
        }
        out
    }
}
