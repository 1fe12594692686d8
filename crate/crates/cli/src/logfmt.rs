//! Structured progress lines on standard error, in logfmt.

use std::borrow::Cow;
use std::fmt::{Display, Write as _};
use std::time::Instant;

pub struct Line(String);

fn quote(v: &str) -> Cow<'_, str> {
    if v.is_empty() || v.contains(|c: char| c.is_whitespace() || c == '=' || c == '"' || c == '\\') {
        Cow::Owned(format!("{v:?}"))
    } else {
        Cow::Borrowed(v)
    }
}

impl Line {
    pub fn new(image: &str, stage: &str) -> Self {
        Line(String::new()).field("image", image).field("stage", stage)
    }

    pub fn field(mut self, key: &str, value: impl Display) -> Self {
        if !self.0.is_empty() {
            self.0.push(' ');
        }
        let _ = write!(self.0, "{key}={}", quote(&value.to_string()));
        self
    }

    pub fn elapsed(self, start: Instant) -> Self {
        let ms = start.elapsed().as_secs_f64() * 1000.0;
        self.field("ms", format!("{ms:.1}"))
    }

    pub fn render(&self) -> &str {
        &self.0
    }

    pub fn emit(self) {
        eprintln!("{}", self.render());
    }
}
