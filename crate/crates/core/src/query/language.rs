//! Textual query language.
//!
//! ```text
//! SELECT <db>.<metric>{k=v,...} RANGE <t0> <t1>
//! DERIVE metric=<tok> entity=<path> [unit=<u>] [db=<db>] RANGE <t0> <t1>
//! MATCH [system~"..."] [entity~"..."] [metric~"..."] [sensor~"..."] [top=<k>] [min=<s>] RANGE <t0> <t1>
//! ```
//!
//! Keywords and clause names are case-insensitive. Clause values may be
//! quoted; inside quotes `\"` and `\\` are escapes.

use std::fmt;

use thiserror::Error;

use crate::reasoning::SemanticQuery;
use crate::store::{SeriesKey, Window};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("query parse error at position {position}: {message}")]
pub struct QueryParseError {
    pub position: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchQuery {
    /// Whitespace-separated tokens of each tilde clause.
    pub system: Option<Vec<String>>,
    pub entity: Option<Vec<String>>,
    pub metric: Option<Vec<String>>,
    pub sensor: Option<Vec<String>>,
    pub top: Option<usize>,
    pub min: Option<f64>,
    pub window: Window,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Query {
    Basic { key: SeriesKey, t0: i64, t1: i64 },
    Exact(SemanticQuery),
    Similarity(MatchQuery),
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Quoted(String),
}

struct Lexer {
    toks: Vec<(usize, Tok, bool)>,
}

fn lex(src: &str) -> Result<Lexer, QueryParseError> {
    let mut toks = Vec::new();
    let mut chars = src.char_indices().peekable();
    let mut prev_end = usize::MAX;
    while let Some(&(i, c)) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
            continue;
        }
        let adjacent = i == prev_end;
        if c == '"' {
            chars.next();
            let mut s = String::new();
            let mut closed = false;
            while let Some((j, c)) = chars.next() {
                match c {
                    '"' => {
                        closed = true;
                        prev_end = j + 1;
                        break;
                    }
                    '\\' => match chars.next() {
                        Some((_, e @ ('"' | '\\'))) => s.push(e),
                        Some((k, e)) => {
                            return Err(QueryParseError {
                                position: k,
                                message: format!("unknown escape `\\{e}`"),
                            })
                        }
                        None => break,
                    },
                    c => s.push(c),
                }
            }
            if !closed {
                return Err(QueryParseError {
                    position: i,
                    message: "unterminated string".into(),
                });
            }
            toks.push((i, Tok::Quoted(s), adjacent));
        } else {
            let mut s = String::new();
            let mut end = i;
            while let Some(&(j, c)) = chars.peek() {
                if c.is_whitespace() || c == '"' {
                    break;
                }
                s.push(c);
                end = j + c.len_utf8();
                chars.next();
            }
            prev_end = end;
            toks.push((i, Tok::Word(s), adjacent));
        }
    }
    Ok(Lexer { toks })
}

struct Parser {
    toks: Vec<(usize, Tok, bool)>,
    pos: usize,
    len: usize,
}

fn err<T>(position: usize, message: impl Into<String>) -> Result<T, QueryParseError> {
    Err(QueryParseError {
        position,
        message: message.into(),
    })
}

impl Parser {
    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|t| t.0).unwrap_or(self.len)
    }

    fn next_word(&mut self, what: &str) -> Result<(usize, String), QueryParseError> {
        match self.toks.get(self.pos) {
            Some((p, Tok::Word(w), _)) => {
                let out = (*p, w.clone());
                self.pos += 1;
                Ok(out)
            }
            Some((p, Tok::Quoted(_), _)) => err(*p, format!("expected {what}, found a string")),
            None => err(self.len, format!("expected {what}, found end of input")),
        }
    }

    fn at_range(&self) -> bool {
        matches!(self.toks.get(self.pos), Some((_, Tok::Word(w), _)) if w.eq_ignore_ascii_case("RANGE"))
    }

    fn integer(&mut self, what: &str) -> Result<i64, QueryParseError> {
        let (p, w) = self.next_word(what)?;
        w.parse()
            .or_else(|_| err(p, format!("expected {what} (integer milliseconds), found `{w}`")))
    }

    fn range(&mut self) -> Result<(usize, i64, i64), QueryParseError> {
        let (p, w) = self.next_word("RANGE")?;
        if !w.eq_ignore_ascii_case("RANGE") {
            return err(p, format!("expected RANGE, found `{w}`"));
        }
        let t0 = self.integer("start timestamp")?;
        let t1 = self.integer("end timestamp")?;
        if self.pos < self.toks.len() {
            return err(self.offset(), "unexpected input after RANGE");
        }
        Ok((p, t0, t1))
    }

    fn window(&mut self) -> Result<Window, QueryParseError> {
        let (p, t0, t1) = self.range()?;
        Window::new(t0, t1).or_else(|_| err(p, format!("empty range: need {t0} < {t1}")))
    }

    /// A `name=value` or `name~value` clause; `value` may be a quoted string
    /// directly after the operator.
    fn clause(&mut self) -> Result<(usize, String, char, String, bool), QueryParseError> {
        let (p, w) = self.next_word("a clause")?;
        let Some(op_at) = w.find(['=', '~']) else {
            return err(p, format!("expected `name=value` or `name~\"...\"`, found `{w}`"));
        };
        let name = w[..op_at].to_ascii_lowercase();
        let op = w[op_at..].chars().next().expect("found above");
        let rest = &w[op_at + 1..];
        if !rest.is_empty() {
            return Ok((p, name, op, rest.to_string(), false));
        }
        match self.toks.get(self.pos) {
            Some((_, Tok::Quoted(s), true)) => {
                let s = s.clone();
                self.pos += 1;
                Ok((p, name, op, s, true))
            }
            _ => err(self.offset(), format!("missing value for `{name}`")),
        }
    }
}

fn tokens(payload: &str) -> Vec<String> {
    payload.split_whitespace().map(str::to_string).collect()
}

pub fn parse_query(text: &str) -> Result<Query, QueryParseError> {
    let lexer = lex(text)?;
    let mut p = Parser {
        toks: lexer.toks,
        pos: 0,
        len: text.len(),
    };
    let (start, head) = p.next_word("SELECT, DERIVE or MATCH")?;
    match head.to_ascii_uppercase().as_str() {
        "SELECT" => {
            let (kp, k) = p.next_word("series key")?;
            let key: SeriesKey = k
                .parse()
                .or_else(|e| err(kp, format!("invalid series key `{k}`: {e}")))?;
            let (rp, t0, t1) = p.range()?;
            if t0 > t1 {
                return err(rp, format!("invalid range: {t0} > {t1}"));
            }
            Ok(Query::Basic { key, t0, t1 })
        }
        "DERIVE" => {
            let (mut metric, mut entity, mut unit, mut db) = (None, None, None, None);
            while !p.at_range() && p.pos < p.toks.len() {
                let (cp, name, op, value, _) = p.clause()?;
                if op != '=' {
                    return err(cp, format!("DERIVE clauses use `=`, found `{name}{op}`"));
                }
                let slot = match name.as_str() {
                    "metric" => &mut metric,
                    "entity" => &mut entity,
                    "unit" => &mut unit,
                    "db" => &mut db,
                    other => return err(cp, format!("unknown DERIVE clause `{other}`")),
                };
                if slot.replace(value).is_some() {
                    return err(cp, format!("duplicate clause `{name}`"));
                }
            }
            let Some(metric) = metric else {
                return err(p.offset(), "DERIVE needs metric=");
            };
            let Some(entity) = entity else {
                return err(p.offset(), "DERIVE needs entity=");
            };
            let window = p.window()?;
            Ok(Query::Exact(SemanticQuery {
                entity,
                metric,
                desired_unit: unit,
                window,
                database: db,
            }))
        }
        "MATCH" => {
            let mut q = MatchQuery {
                system: None,
                entity: None,
                metric: None,
                sensor: None,
                top: None,
                min: None,
                window: Window { start: 0, end: 1 },
            };
            while !p.at_range() && p.pos < p.toks.len() {
                let (cp, name, op, value, _) = p.clause()?;
                let dup = || err(cp, format!("duplicate clause `{name}`"));
                match (name.as_str(), op) {
                    ("system" | "entity" | "metric" | "sensor", '~') => {
                        let slot = match name.as_str() {
                            "system" => &mut q.system,
                            "entity" => &mut q.entity,
                            "metric" => &mut q.metric,
                            _ => &mut q.sensor,
                        };
                        let toks = tokens(&value);
                        if toks.is_empty() {
                            return err(cp, format!("`{name}~` needs at least one keyword"));
                        }
                        if slot.replace(toks).is_some() {
                            return dup();
                        }
                    }
                    ("top", '=') => {
                        let k: usize = value
                            .parse()
                            .ok()
                            .filter(|k| *k > 0)
                            .map_or_else(|| err(cp, "top= needs a positive integer"), Ok)?;
                        if q.top.replace(k).is_some() {
                            return dup();
                        }
                    }
                    ("min", '=') => {
                        let s: f64 = value
                            .parse()
                            .ok()
                            .filter(|s: &f64| (0.0..=1.0).contains(s))
                            .map_or_else(|| err(cp, "min= needs a number in [0, 1]"), Ok)?;
                        if q.min.replace(s).is_some() {
                            return dup();
                        }
                    }
                    _ => return err(cp, format!("unknown MATCH clause `{name}{op}`")),
                }
            }
            if q.system.is_none() && q.entity.is_none() && q.metric.is_none() && q.sensor.is_none()
            {
                return err(
                    p.offset(),
                    "MATCH needs at least one of system~, entity~, metric~, sensor~",
                );
            }
            q.window = p.window()?;
            Ok(Query::Similarity(q))
        }
        other => err(start, format!("expected SELECT, DERIVE or MATCH, found `{other}`")),
    }
}

fn quote(s: &str) -> String {
    let mut out = String::from("\"");
    for c in s.chars() {
        if c == '"' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
    out
}

fn value(s: &str) -> String {
    if s.is_empty() || s.chars().any(|c| c.is_whitespace() || c == '"') {
        quote(s)
    } else {
        s.to_string()
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Query::Basic { key, t0, t1 } => write!(f, "SELECT {key} RANGE {t0} {t1}"),
            Query::Exact(q) => {
                write!(f, "DERIVE metric={} entity={}", value(&q.metric), value(&q.entity))?;
                if let Some(u) = &q.desired_unit {
                    write!(f, " unit={}", value(u))?;
                }
                if let Some(d) = &q.database {
                    write!(f, " db={}", value(d))?;
                }
                write!(f, " RANGE {} {}", q.window.start, q.window.end)
            }
            Query::Similarity(q) => {
                f.write_str("MATCH")?;
                for (name, toks) in [
                    ("system", &q.system),
                    ("entity", &q.entity),
                    ("metric", &q.metric),
                    ("sensor", &q.sensor),
                ] {
                    if let Some(t) = toks {
                        write!(f, " {name}~{}", quote(&t.join(" ")))?;
                    }
                }
                if let Some(k) = q.top {
                    write!(f, " top={k}")?;
                }
                if let Some(s) = q.min {
                    write!(f, " min={s}")?;
                }
                write!(f, " RANGE {} {}", q.window.start, q.window.end)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grammar_examples() {
        let q = parse_query("SELECT clouddb.status{host=h1} RANGE 0 100").unwrap();
        assert_eq!(
            q,
            Query::Basic {
                key: SeriesKey::new("clouddb", "status", [("host", "h1")]).unwrap(),
                t0: 0,
                t1: 100
            }
        );
        let q = parse_query("derive metric=availability entity=/dc1/c1/h1 range 0 100").unwrap();
        let Query::Exact(sq) = &q else { panic!() };
        assert_eq!(sq.metric, "availability");
        assert_eq!(sq.entity, "/dc1/c1/h1");
        assert_eq!(
            q.to_string(),
            "DERIVE metric=availability entity=/dc1/c1/h1 RANGE 0 100"
        );
        assert!(parse_query("MATCH RANGE 0 100").is_err());
    }

    #[test]
    fn match_clauses() {
        let q = parse_query(r#"MATCH metric~"availability" entity~"host \"one\"" top=3 min=0.25 RANGE 0 10"#)
            .unwrap();
        let Query::Similarity(m) = &q else { panic!() };
        assert_eq!(m.metric.as_deref(), Some(&["availability".to_string()][..]));
        assert_eq!(
            m.entity.as_deref(),
            Some(&["host".to_string(), "\"one\"".to_string()][..])
        );
        assert_eq!(m.top, Some(3));
        assert_eq!(parse_query(&q.to_string()).unwrap(), q);
    }

    #[test]
    fn errors_have_positions() {
        assert_eq!(parse_query("").unwrap_err().position, 0);
        assert_eq!(parse_query("FROB x").unwrap_err().position, 0);
        assert_eq!(parse_query("SELECT db.m RANGE 0").unwrap_err().position, 19);
        assert_eq!(parse_query("SELECT db.m RANGE 5 1").unwrap_err().position, 12);
        assert!(parse_query("DERIVE metric=a RANGE 0 1").is_err());
        assert!(parse_query("DERIVE metric=a entity=/x RANGE 1 1").is_err());
        assert!(parse_query("DERIVE metric=a metric=b entity=/x RANGE 0 1").is_err());
        assert!(parse_query(r#"MATCH metric~"unterminated RANGE 0 1"#).is_err());
        assert!(parse_query("MATCH metric~x top=0 RANGE 0 1").is_err());
        assert!(parse_query("SELECT db.m RANGE 0 1 extra").is_err());
    }
}
