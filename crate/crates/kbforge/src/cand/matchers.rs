//! Built-in matchers: regular expressions, dictionaries, numeric ranges,
//! and arbitrary closures for programmatic use.

use super::{Matcher, MatcherFailure, Span};
use crate::doc::Document;
use regex::Regex;
use std::collections::HashSet;

/// Accepts spans whose full text matches the pattern.
pub struct RegexMatcher {
    regex: Regex,
}

impl RegexMatcher {
    pub fn new(pattern: &str) -> Result<Self, regex::Error> {
        Ok(RegexMatcher { regex: Regex::new(&format!("^(?:{pattern})$"))? })
    }
}

impl Matcher for RegexMatcher {
    fn accept(&self, _doc: &Document, span: &Span) -> Result<bool, MatcherFailure> {
        Ok(self.regex.is_match(&span.text))
    }
}

/// Accepts spans found verbatim in a dictionary.
pub struct DictionaryMatcher {
    entries: HashSet<String>,
    ignore_case: bool,
}

impl DictionaryMatcher {
    pub fn new<I, S>(entries: I, ignore_case: bool) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let entries = entries
            .into_iter()
            .map(|e| {
                let e: String = e.into();
                if ignore_case {
                    e.to_lowercase()
                } else {
                    e
                }
            })
            .collect();
        DictionaryMatcher { entries, ignore_case }
    }
}

impl Matcher for DictionaryMatcher {
    fn accept(&self, _doc: &Document, span: &Span) -> Result<bool, MatcherFailure> {
        let found = if self.ignore_case {
            self.entries.contains(&span.text.to_lowercase())
        } else {
            self.entries.contains(&span.text)
        };
        Ok(found)
    }
}

/// Accepts single-token spans parseable as a number within `[lo, hi]`.
pub struct NumericRangeMatcher {
    pub lo: f64,
    pub hi: f64,
}

impl Matcher for NumericRangeMatcher {
    fn accept(&self, _doc: &Document, span: &Span) -> Result<bool, MatcherFailure> {
        if span.len() != 1 {
            return Ok(false);
        }
        Ok(span.text.parse::<f64>().map(|v| v >= self.lo && v <= self.hi).unwrap_or(false))
    }
}

/// Wraps a closure as a matcher.
pub struct FnMatcher<F>(F);

impl<F> FnMatcher<F>
where
    F: Fn(&Document, &Span) -> Result<bool, MatcherFailure> + Send + Sync,
{
    pub fn new(f: F) -> Self {
        FnMatcher(f)
    }
}

impl<F> Matcher for FnMatcher<F>
where
    F: Fn(&Document, &Span) -> Result<bool, MatcherFailure> + Send + Sync,
{
    fn accept(&self, doc: &Document, span: &Span) -> Result<bool, MatcherFailure> {
        (self.0)(doc, span)
    }
}
