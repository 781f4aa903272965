//! The security-rule language.
//!
//! ```text
//! # comment
//! set confidential = { sheets.internal.example.com, docs.internal.example.com }
//!
//! deny send when has_untrusted and origin_in(confidential)
//! deny navigate when origin_not_in(confidential) and has_secret
//! approve exec when has_untrusted
//! ```
//!
//! Set declarations come first in spirit but may appear anywhere before
//! their first use. Rules are `deny | approve | allow <tool> when
//! <predicate>` with predicate atoms `has_secret`, `has_untrusted`,
//! `origin_in(set)`, `origin_not_in(set)` combined by `and`, `or`, `not`,
//! and parentheses (`not` binds tightest, then `and`, then `or`). Rule ids
//! are positional: `r1`, `r2`, ... in file order.

use std::collections::{BTreeMap, BTreeSet};

use super::{Effect, LabelPredicate, Policy, Rule, SinkPattern};
use crate::threat::ThreatClass;

pub const POLICY_FORMAT_VERSION: u32 = 1;

/// Syntax or reference error with 1-based position and expected tokens.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PolicySyntaxError {
    #[error("syntax error at line {line}, col {col}: found {found:?}, expected {}", expected.join(" | "))]
    Unexpected {
        line: usize,
        col: usize,
        found: String,
        expected: Vec<String>,
    },
    #[error("line {line}, col {col}: set {name:?} is not declared")]
    UndeclaredSet {
        line: usize,
        col: usize,
        name: String,
    },
    #[error("line {line}, col {col}: set {name:?} is declared twice")]
    DuplicateSet {
        line: usize,
        col: usize,
        name: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
struct Token {
    text: String,
    line: usize,
    col: usize,
}

fn is_word_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-' | ':' | '~')
}

fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    for (line_idx, line) in text.lines().enumerate() {
        let line_no = line_idx + 1;
        let mut chars = line.char_indices().peekable();
        while let Some(&(i, c)) = chars.peek() {
            if c == '#' {
                break;
            }
            if c.is_whitespace() {
                chars.next();
                continue;
            }
            if matches!(c, '{' | '}' | '(' | ')' | ',' | '=') {
                tokens.push(Token {
                    text: c.to_string(),
                    line: line_no,
                    col: i + 1,
                });
                chars.next();
                continue;
            }
            if is_word_char(c) {
                let start = i;
                let mut end = i;
                while let Some(&(j, c2)) = chars.peek() {
                    if is_word_char(c2) {
                        end = j + c2.len_utf8();
                        chars.next();
                    } else {
                        break;
                    }
                }
                tokens.push(Token {
                    text: line[start..end].to_string(),
                    line: line_no,
                    col: start + 1,
                });
                continue;
            }
            // Unknown character becomes its own token so the parser can
            // report it with a position.
            tokens.push(Token {
                text: c.to_string(),
                line: line_no,
                col: i + 1,
            });
            chars.next();
        }
    }
    tokens
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    end_line: usize,
}

impl Parser {
    fn new(text: &str) -> Self {
        let tokens = tokenize(text);
        let end_line = text.lines().count().max(1);
        Self {
            tokens,
            pos: 0,
            end_line,
        }
    }

    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn error_here(&self, expected: &[&str]) -> PolicySyntaxError {
        match self.peek() {
            Some(t) => PolicySyntaxError::Unexpected {
                line: t.line,
                col: t.col,
                found: t.text.clone(),
                expected: expected.iter().map(|s| s.to_string()).collect(),
            },
            None => PolicySyntaxError::Unexpected {
                line: self.end_line,
                col: 1,
                found: "end of input".to_string(),
                expected: expected.iter().map(|s| s.to_string()).collect(),
            },
        }
    }

    fn expect(&mut self, text: &str) -> Result<Token, PolicySyntaxError> {
        match self.peek() {
            Some(t) if t.text == text => Ok(self.next().unwrap()),
            _ => Err(self.error_here(&[text])),
        }
    }

    // Identifiers only occur in positions where no keyword can follow, so
    // keywords (e.g. "allow") are legal set and tool names.
    fn expect_ident(&mut self, what: &str) -> Result<Token, PolicySyntaxError> {
        match self.peek() {
            Some(t) if t.text.chars().all(is_word_char) => Ok(self.next().unwrap()),
            _ => Err(self.error_here(&[what])),
        }
    }
}

/// Parse policy text into a [`Policy`]. Rule order is preserved;
/// `pretty_print` followed by `parse_policy` reproduces an equal value.
pub fn parse_policy(text: &str) -> Result<Policy, PolicySyntaxError> {
    let mut parser = Parser::new(text);
    let mut sets: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut rules: Vec<Rule> = Vec::new();
    let mut format_version = POLICY_FORMAT_VERSION;

    // Optional leading version marker: `format_version <n>`.
    if matches!(parser.peek(), Some(t) if t.text == "format_version") {
        parser.next();
        let tok = parser.expect_ident("version number")?;
        format_version = tok.text.parse().map_err(|_| PolicySyntaxError::Unexpected {
            line: tok.line,
            col: tok.col,
            found: tok.text.clone(),
            expected: vec!["version number".to_string()],
        })?;
    }

    while let Some(tok) = parser.peek().cloned() {
        match tok.text.as_str() {
            "set" => {
                parser.next();
                let name_tok = parser.expect_ident("set name")?;
                if sets.contains_key(&name_tok.text) {
                    return Err(PolicySyntaxError::DuplicateSet {
                        line: name_tok.line,
                        col: name_tok.col,
                        name: name_tok.text,
                    });
                }
                parser.expect("=")?;
                parser.expect("{")?;
                let mut members = BTreeSet::new();
                loop {
                    match parser.peek() {
                        Some(t) if t.text == "}" => {
                            parser.next();
                            break;
                        }
                        Some(_) => {
                            let member = parser.expect_ident("host")?;
                            members.insert(member.text.to_ascii_lowercase());
                            match parser.peek() {
                                Some(t) if t.text == "," => {
                                    parser.next();
                                }
                                Some(t) if t.text == "}" => {}
                                _ => return Err(parser.error_here(&[",", "}"])),
                            }
                        }
                        None => return Err(parser.error_here(&["host", "}"])),
                    }
                }
                sets.insert(name_tok.text, members);
            }
            "deny" | "approve" | "allow" => {
                parser.next();
                let effect = match tok.text.as_str() {
                    "deny" => Effect::Deny,
                    "approve" => Effect::RequireApproval,
                    _ => Effect::Allow,
                };
                let tool = parser.expect_ident("tool name")?;
                parser.expect("when")?;
                let predicate = parse_or(&mut parser, &sets)?;
                rules.push(Rule {
                    id: format!("r{}", rules.len() + 1),
                    sink: SinkPattern::tool(tool.text),
                    predicate,
                    effect,
                    threat_class: ThreatClass::SecurityCompliance,
                });
            }
            _ => return Err(parser.error_here(&["set", "deny", "approve", "allow"])),
        }
    }

    Ok(Policy {
        format_version,
        sets,
        rules,
        default_effect: Effect::Allow,
    })
}

fn parse_or(
    parser: &mut Parser,
    sets: &BTreeMap<String, BTreeSet<String>>,
) -> Result<LabelPredicate, PolicySyntaxError> {
    let mut left = parse_and(parser, sets)?;
    while matches!(parser.peek(), Some(t) if t.text == "or") {
        parser.next();
        let right = parse_and(parser, sets)?;
        left = LabelPredicate::Or(Box::new(left), Box::new(right));
    }
    Ok(left)
}

fn parse_and(
    parser: &mut Parser,
    sets: &BTreeMap<String, BTreeSet<String>>,
) -> Result<LabelPredicate, PolicySyntaxError> {
    let mut left = parse_unary(parser, sets)?;
    while matches!(parser.peek(), Some(t) if t.text == "and") {
        parser.next();
        let right = parse_unary(parser, sets)?;
        left = LabelPredicate::And(Box::new(left), Box::new(right));
    }
    Ok(left)
}

fn parse_unary(
    parser: &mut Parser,
    sets: &BTreeMap<String, BTreeSet<String>>,
) -> Result<LabelPredicate, PolicySyntaxError> {
    match parser.peek().cloned() {
        Some(t) if t.text == "not" => {
            parser.next();
            let inner = parse_unary(parser, sets)?;
            Ok(LabelPredicate::Not(Box::new(inner)))
        }
        Some(t) if t.text == "(" => {
            parser.next();
            let inner = parse_or(parser, sets)?;
            parser.expect(")")?;
            Ok(inner)
        }
        Some(t) if t.text == "has_secret" => {
            parser.next();
            Ok(LabelPredicate::HasSecret)
        }
        Some(t) if t.text == "has_untrusted" => {
            parser.next();
            Ok(LabelPredicate::HasUntrusted)
        }
        Some(t) if t.text == "origin_in" || t.text == "origin_not_in" => {
            parser.next();
            parser.expect("(")?;
            let set_tok = parser.expect_ident("set name")?;
            if !sets.contains_key(&set_tok.text) {
                return Err(PolicySyntaxError::UndeclaredSet {
                    line: set_tok.line,
                    col: set_tok.col,
                    name: set_tok.text,
                });
            }
            parser.expect(")")?;
            if t.text == "origin_in" {
                Ok(LabelPredicate::OriginIn(set_tok.text))
            } else {
                Ok(LabelPredicate::OriginNotIn(set_tok.text))
            }
        }
        _ => Err(parser.error_here(&[
            "has_secret",
            "has_untrusted",
            "origin_in",
            "origin_not_in",
            "not",
            "(",
        ])),
    }
}

fn predicate_text(pred: &LabelPredicate, parent_level: u8) -> String {
    // Levels: or = 0, and = 1, atom/not = 2. Parenthesize when a child binds
    // looser than its context.
    let (text, level) = match pred {
        LabelPredicate::HasSecret => ("has_secret".to_string(), 2),
        LabelPredicate::HasUntrusted => ("has_untrusted".to_string(), 2),
        LabelPredicate::OriginIn(set) => (format!("origin_in({set})"), 2),
        LabelPredicate::OriginNotIn(set) => (format!("origin_not_in({set})"), 2),
        LabelPredicate::And(a, b) => (
            format!("{} and {}", predicate_text(a, 1), predicate_text(b, 2)),
            1,
        ),
        LabelPredicate::Or(a, b) => (
            format!("{} or {}", predicate_text(a, 0), predicate_text(b, 1)),
            0,
        ),
        LabelPredicate::Not(inner) => (format!("not {}", predicate_text(inner, 2)), 2),
    };
    if level < parent_level {
        format!("({text})")
    } else {
        text
    }
}

/// Canonical text form. Parsing the output yields a policy equal to the
/// input (set order is normalized by name; rule ids are positional).
pub fn pretty_print(policy: &Policy) -> String {
    let mut out = format!("format_version {}\n", policy.format_version);
    for (name, members) in &policy.sets {
        let members: Vec<&str> = members.iter().map(String::as_str).collect();
        out.push_str(&format!("set {name} = {{ {} }}\n", members.join(", ")));
    }
    if !policy.rules.is_empty() {
        out.push('\n');
    }
    for rule in &policy.rules {
        out.push_str(&format!(
            "{} {} when {}\n",
            rule.effect.keyword(),
            rule.sink.tool,
            predicate_text(&rule.predicate, 0)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn email_rule_parses() {
        let policy = parse_policy("deny send when has_secret and has_untrusted").unwrap();
        assert_eq!(policy.rules.len(), 1);
        assert_eq!(policy.rules[0].effect, Effect::Deny);
        assert_eq!(policy.rules[0].sink.tool, "send");
        assert_eq!(
            policy.rules[0].predicate,
            LabelPredicate::And(
                Box::new(LabelPredicate::HasSecret),
                Box::new(LabelPredicate::HasUntrusted)
            )
        );
    }

    #[test]
    fn empty_policy_has_default_allow() {
        let policy = parse_policy("").unwrap();
        assert!(policy.rules.is_empty());
        assert_eq!(policy.default_effect, Effect::Allow);
        let commented = parse_policy("# nothing here\n\n# still nothing\n").unwrap();
        assert_eq!(commented, policy);
    }

    #[test]
    fn sets_and_references() {
        let text = "set allow = { example.com, api.example.com }\n\
                    deny navigate when origin_not_in(allow) and has_secret\n";
        let policy = parse_policy(text).unwrap();
        assert_eq!(policy.sets["allow"].len(), 2);
        assert_eq!(policy.rules[0].id, "r1");
    }

    #[test]
    fn undeclared_set_is_an_error() {
        let err = parse_policy("deny send when origin_in(ghosts)").unwrap_err();
        match err {
            PolicySyntaxError::UndeclaredSet { name, line, col } => {
                assert_eq!(name, "ghosts");
                assert_eq!(line, 1);
                assert!(col > 1);
            }
            other => panic!("expected UndeclaredSet, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_set_is_an_error() {
        let err = parse_policy("set a = { x.io }\nset a = { y.io }\n").unwrap_err();
        assert!(matches!(err, PolicySyntaxError::DuplicateSet { line: 2, .. }));
    }

    #[test]
    fn syntax_error_carries_position_and_expectations() {
        let err = parse_policy("deny send has_secret").unwrap_err();
        match err {
            PolicySyntaxError::Unexpected {
                line,
                col,
                found,
                expected,
            } => {
                assert_eq!(line, 1);
                assert_eq!(col, 11);
                assert_eq!(found, "has_secret");
                assert_eq!(expected, vec!["when".to_string()]);
            }
            other => panic!("unexpected error {other:?}"),
        }

        let err = parse_policy("deny send when").unwrap_err();
        assert!(matches!(err, PolicySyntaxError::Unexpected { found, .. } if found == "end of input"));
    }

    #[test]
    fn precedence_not_and_or() {
        let policy = parse_policy(
            "set s = { a.io }\nallow send when not has_secret and has_untrusted or origin_in(s)",
        )
        .unwrap();
        // ((not has_secret) and has_untrusted) or origin_in(s)
        let expected = LabelPredicate::Or(
            Box::new(LabelPredicate::And(
                Box::new(LabelPredicate::Not(Box::new(LabelPredicate::HasSecret))),
                Box::new(LabelPredicate::HasUntrusted),
            )),
            Box::new(LabelPredicate::OriginIn("s".to_string())),
        );
        assert_eq!(policy.rules[0].predicate, expected);
    }

    #[test]
    fn parens_override_precedence() {
        let policy =
            parse_policy("deny send when has_secret and (has_untrusted or not has_secret)").unwrap();
        let expected = LabelPredicate::And(
            Box::new(LabelPredicate::HasSecret),
            Box::new(LabelPredicate::Or(
                Box::new(LabelPredicate::HasUntrusted),
                Box::new(LabelPredicate::Not(Box::new(LabelPredicate::HasSecret))),
            )),
        );
        assert_eq!(policy.rules[0].predicate, expected);
    }

    #[test]
    fn pretty_print_round_trips() {
        let sources = [
            "deny send when has_secret and has_untrusted",
            "set allow = { example.com }\ndeny navigate when origin_not_in(allow) and has_secret",
            "set confidential = { sheets.internal.example.com }\n\
             deny send when has_untrusted and origin_in(confidential)",
            "deny send when has_secret and (has_untrusted or not has_secret)",
            "set s = { a.io, b.io }\nallow send when not (has_secret or origin_in(s))",
            "approve exec when has_untrusted",
            "",
        ];
        for source in sources {
            let parsed = parse_policy(source).unwrap();
            let printed = pretty_print(&parsed);
            let reparsed = parse_policy(&printed).unwrap();
            assert_eq!(parsed, reparsed, "round trip failed for {source:?}\nprinted:\n{printed}");
        }
    }

    #[test]
    fn format_version_marker_is_parsed_and_emitted() {
        let policy = parse_policy("format_version 1\ndeny send when has_secret\n").unwrap();
        assert_eq!(policy.format_version, 1);
        assert!(pretty_print(&policy).starts_with("format_version 1\n"));
        // Inline strings may omit it; the default applies.
        assert_eq!(parse_policy("").unwrap().format_version, POLICY_FORMAT_VERSION);
        assert!(parse_policy("format_version x\n").is_err());
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = "# allowlist\nset allow = { example.com } # trailing\n\n# rule\ndeny send when has_secret\n";
        let policy = parse_policy(text).unwrap();
        assert_eq!(policy.sets.len(), 1);
        assert_eq!(policy.rules.len(), 1);
    }
}
