use std::collections::BTreeMap;

use thiserror::Error;

use super::ast::*;
use crate::graph::{Direction, PropValue};
use crate::{Modality, ModalityRegistry};

const KEYWORDS: &[&str] = &[
    "MATCH",
    "WHERE",
    "AND",
    "VECTOR_SEARCH",
    "TRAVERSE",
    "SIMILARITY_WEIGHT",
    "BUDGET",
    "RETURN",
    "TOP",
    "NODE",
    "AUTO",
    "TRUE",
    "FALSE",
];

pub(crate) fn is_keyword(s: &str) -> bool {
    KEYWORDS.iter().any(|k| k.eq_ignore_ascii_case(s))
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("{line}:{col}: expected {}, found {found}", expected.join(" or "))]
    Syntax {
        line: usize,
        col: usize,
        expected: Vec<String>,
        found: String,
    },
    #[error("{line}:{col}: unknown modality '{name}'")]
    UnknownModality {
        line: usize,
        col: usize,
        name: String,
    },
    #[error("{line}:{col}: weight {value} is negative")]
    NegativeWeight { line: usize, col: usize, value: f64 },
    #[error("{line}:{col}: weights must not both be zero")]
    ZeroWeights { line: usize, col: usize },
    #[error("{line}:{col}: unknown variable '{name}'")]
    UnknownVariable {
        line: usize,
        col: usize,
        name: String,
    },
}

impl ParseError {
    pub fn position(&self) -> (usize, usize) {
        match *self {
            ParseError::Syntax { line, col, .. }
            | ParseError::UnknownModality { line, col, .. }
            | ParseError::NegativeWeight { line, col, .. }
            | ParseError::ZeroWeights { line, col }
            | ParseError::UnknownVariable { line, col, .. } => (line, col),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Number(String),
    Param(String),
    Sym(&'static str),
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("'{s}'"),
            Tok::Str(s) => format!("string \"{s}\""),
            Tok::Number(s) => format!("number {s}"),
            Tok::Param(s) => format!("${s}"),
            Tok::Sym(s) => format!("'{s}'"),
            Tok::Eof => "end of input".into(),
        }
    }
}

struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

const SYMBOLS: &[&str] = &[
    "!=", "<=", ">=", "(", ")", "[", "]", "{", "}", ",", ":", ".", "=", "<", ">", ";",
];

fn lex(text: &str) -> Result<Vec<Spanned>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let advance = |i: &mut usize, line: &mut usize, col: &mut usize, c: char| {
        *i += 1;
        if c == '\n' {
            *line += 1;
            *col = 1;
        } else {
            *col += 1;
        }
    };
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            advance(&mut i, &mut line, &mut col, c);
            continue;
        }
        let (tl, tc) = (line, col);
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                let ch = chars[i];
                advance(&mut i, &mut line, &mut col, ch);
            }
            out.push(Spanned {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                line: tl,
                col: tc,
            });
        } else if c == '$' {
            advance(&mut i, &mut line, &mut col, c);
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                let ch = chars[i];
                advance(&mut i, &mut line, &mut col, ch);
            }
            if start == i {
                return Err(ParseError::Syntax {
                    line: tl,
                    col: tc,
                    expected: vec!["parameter name".into()],
                    found: "'$'".into(),
                });
            }
            out.push(Spanned {
                tok: Tok::Param(chars[start..i].iter().collect()),
                line: tl,
                col: tc,
            });
        } else if c.is_ascii_digit()
            || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()))
        {
            let start = i;
            advance(&mut i, &mut line, &mut col, c);
            while i < chars.len() && chars[i].is_ascii_digit() {
                let ch = chars[i];
                advance(&mut i, &mut line, &mut col, ch);
            }
            if i + 1 < chars.len() && chars[i] == '.' && chars[i + 1].is_ascii_digit() {
                advance(&mut i, &mut line, &mut col, '.');
                while i < chars.len() && chars[i].is_ascii_digit() {
                    let ch = chars[i];
                    advance(&mut i, &mut line, &mut col, ch);
                }
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    while i < j {
                        let ch = chars[i];
                        advance(&mut i, &mut line, &mut col, ch);
                    }
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        let ch = chars[i];
                        advance(&mut i, &mut line, &mut col, ch);
                    }
                }
            }
            out.push(Spanned {
                tok: Tok::Number(chars[start..i].iter().collect()),
                line: tl,
                col: tc,
            });
        } else if c == '"' || c == '\'' {
            let quote = c;
            advance(&mut i, &mut line, &mut col, c);
            let mut s = String::new();
            loop {
                let Some(&ch) = chars.get(i) else {
                    return Err(ParseError::Syntax {
                        line: tl,
                        col: tc,
                        expected: vec![format!("closing {quote}")],
                        found: "end of input".into(),
                    });
                };
                advance(&mut i, &mut line, &mut col, ch);
                if ch == quote {
                    break;
                }
                if ch == '\\' {
                    let Some(&esc) = chars.get(i) else { continue };
                    advance(&mut i, &mut line, &mut col, esc);
                    s.push(match esc {
                        'n' => '\n',
                        't' => '\t',
                        other => other,
                    });
                } else {
                    s.push(ch);
                }
            }
            out.push(Spanned {
                tok: Tok::Str(s),
                line: tl,
                col: tc,
            });
        } else {
            let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
            let Some(sym) = SYMBOLS.iter().find(|s| rest.starts_with(**s)) else {
                return Err(ParseError::Syntax {
                    line: tl,
                    col: tc,
                    expected: vec!["a token".into()],
                    found: format!("'{c}'"),
                });
            };
            for ch in sym.chars() {
                advance(&mut i, &mut line, &mut col, ch);
            }
            out.push(Spanned {
                tok: Tok::Sym(sym),
                line: tl,
                col: tc,
            });
        }
    }
    out.push(Spanned {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<Spanned>,
    pos: usize,
    registry: Option<&'a ModalityRegistry>,
}

type PResult<T> = Result<T, ParseError>;

impl<'a> Parser<'a> {
    fn peek(&self) -> &Spanned {
        &self.toks[self.pos]
    }

    fn bump(&mut self) -> &Spanned {
        let t = &self.toks[self.pos];
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &[&str]) -> ParseError {
        let t = self.peek();
        ParseError::Syntax {
            line: t.line,
            col: t.col,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: t.tok.describe(),
        }
    }

    fn at_kw(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(s) if s.eq_ignore_ascii_case(kw))
    }

    fn kw(&mut self, kw: &str) -> PResult<()> {
        if self.at_kw(kw) {
            self.bump();
            Ok(())
        } else {
            Err(self.error(&[kw]))
        }
    }

    fn at_sym(&self, sym: &str) -> bool {
        matches!(&self.peek().tok, Tok::Sym(s) if *s == sym)
    }

    fn sym(&mut self, sym: &'static str) -> PResult<()> {
        if self.at_sym(sym) {
            self.bump();
            Ok(())
        } else {
            Err(self.error(&[&format!("'{sym}'")]))
        }
    }

    /// A plain (non-keyword) identifier or a quoted string.
    fn name(&mut self, what: &str) -> PResult<String> {
        match &self.peek().tok {
            Tok::Ident(s) if !is_keyword(s) => {
                let s = s.clone();
                self.bump();
                Ok(s)
            }
            Tok::Str(s) => {
                let s = s.clone();
                self.bump();
                Ok(s)
            }
            _ => Err(self.error(&[what])),
        }
    }

    /// A contextual word such as `k` or `hops`, case-insensitive.
    fn word(&mut self, w: &str) -> PResult<()> {
        self.kw(w)
    }

    fn uint(&mut self, what: &str) -> PResult<u64> {
        if let Tok::Number(n) = &self.peek().tok {
            if let Ok(v) = n.parse::<u64>() {
                self.bump();
                return Ok(v);
            }
        }
        Err(self.error(&[what]))
    }

    fn positive(&mut self, what: &str) -> PResult<usize> {
        let at = self.pos;
        let v = self.uint(what)?;
        if v == 0 {
            self.pos = at;
            return Err(self.error(&[what]));
        }
        Ok(v as usize)
    }

    fn float(&mut self) -> PResult<f64> {
        if let Tok::Number(n) = &self.peek().tok {
            if let Ok(v) = n.parse::<f64>() {
                if v.is_finite() {
                    self.bump();
                    return Ok(v);
                }
            }
        }
        Err(self.error(&["number"]))
    }

    fn literal(&mut self) -> PResult<PropValue> {
        let v = match &self.peek().tok {
            Tok::Str(s) => PropValue::Str(s.clone()),
            Tok::Ident(s) if s.eq_ignore_ascii_case("true") => PropValue::Bool(true),
            Tok::Ident(s) if s.eq_ignore_ascii_case("false") => PropValue::Bool(false),
            Tok::Number(n) => {
                if let Ok(i) = n.parse::<i64>() {
                    PropValue::Int(i)
                } else if let Ok(f) = n.parse::<f64>() {
                    PropValue::Float(f)
                } else {
                    return Err(self.error(&["literal"]));
                }
            }
            _ => return Err(self.error(&["literal"])),
        };
        self.bump();
        Ok(v)
    }

    fn query(&mut self) -> PResult<HybridQueryAst> {
        let pattern = if self.at_kw("MATCH") {
            Some(self.match_clause()?)
        } else {
            None
        };
        let mut filters = Vec::new();
        if self.at_kw("WHERE") {
            self.bump();
            loop {
                filters.push(self.predicate(pattern.as_ref())?);
                if self.at_kw("AND") {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        if !self.at_kw("VECTOR_SEARCH") {
            let mut expected = Vec::new();
            if pattern.is_none() && filters.is_empty() {
                expected.push("MATCH");
            }
            if filters.is_empty() {
                expected.push("WHERE");
            }
            expected.push("VECTOR_SEARCH");
            return Err(self.error(&expected));
        }
        let vector = self.vector_clause()?;
        let traversal = if self.at_kw("TRAVERSE") {
            Some(self.traverse_clause()?)
        } else {
            None
        };
        let weights = if self.at_kw("SIMILARITY_WEIGHT") {
            self.weight_clause()?
        } else {
            Weights::default()
        };
        let budget_ms = if self.at_kw("BUDGET") {
            self.bump();
            let b = self.uint("budget in milliseconds")?;
            if self.at_kw("ms") {
                self.bump();
            }
            Some(b)
        } else {
            None
        };
        if !self.at_kw("RETURN") {
            let mut expected = Vec::new();
            if traversal.is_none() && budget_ms.is_none() {
                expected.push("TRAVERSE");
            }
            if budget_ms.is_none() {
                expected.push("SIMILARITY_WEIGHT");
                expected.push("BUDGET");
            }
            expected.push("RETURN");
            return Err(self.error(&expected));
        }
        self.bump();
        self.kw("TOP")?;
        let top = self.positive("positive integer")?;
        if self.at_sym(";") {
            self.bump();
        }
        if self.peek().tok != Tok::Eof {
            return Err(self.error(&["end of input"]));
        }
        Ok(HybridQueryAst {
            pattern,
            filters,
            vector,
            traversal,
            weights,
            budget_ms,
            top,
        })
    }

    fn match_clause(&mut self) -> PResult<MatchClause> {
        self.kw("MATCH")?;
        self.sym("(")?;
        let var = self.name("variable")?;
        let label = if self.at_sym(":") {
            self.bump();
            Some(self.name("label")?)
        } else {
            None
        };
        let mut properties = BTreeMap::new();
        if self.at_sym("{") {
            self.bump();
            if !self.at_sym("}") {
                loop {
                    let k = self.name("property name")?;
                    self.sym(":")?;
                    let v = self.literal()?;
                    properties.insert(k, v);
                    if self.at_sym(",") {
                        self.bump();
                    } else {
                        break;
                    }
                }
            }
            self.sym("}")?;
        }
        self.sym(")")?;
        Ok(MatchClause {
            var,
            label,
            properties,
        })
    }

    fn predicate(&mut self, pattern: Option<&MatchClause>) -> PResult<Predicate> {
        let (line, col) = (self.peek().line, self.peek().col);
        let var = self.name("variable")?;
        if let Some(m) = pattern {
            if m.var != var {
                return Err(ParseError::UnknownVariable {
                    line,
                    col,
                    name: var,
                });
            }
        }
        self.sym(".")?;
        let property = self.name("property name")?;
        let op = match &self.peek().tok {
            Tok::Sym("=") => CmpOp::Eq,
            Tok::Sym("!=") => CmpOp::Ne,
            Tok::Sym("<") => CmpOp::Lt,
            Tok::Sym("<=") => CmpOp::Le,
            Tok::Sym(">") => CmpOp::Gt,
            Tok::Sym(">=") => CmpOp::Ge,
            _ => return Err(self.error(&["'='", "'!='", "'<'", "'<='", "'>'", "'>='"])),
        };
        self.bump();
        let value = self.literal()?;
        Ok(Predicate {
            var,
            property,
            op,
            value,
        })
    }

    fn vector_clause(&mut self) -> PResult<VectorClause> {
        self.kw("VECTOR_SEARCH")?;
        self.sym("(")?;
        let (line, col) = (self.peek().line, self.peek().col);
        let name = self.name("modality")?;
        let modality: Modality = name.parse().unwrap_or_else(|e| match e {});
        if let Some(reg) = self.registry {
            if !reg.contains(&modality) {
                return Err(ParseError::UnknownModality { line, col, name });
            }
        }
        self.sym(",")?;
        let source = match &self.peek().tok {
            Tok::Param(p) => {
                let p = p.clone();
                self.bump();
                VectorSource::Param(p)
            }
            Tok::Sym("[") => {
                self.bump();
                let mut xs = Vec::new();
                loop {
                    match &self.peek().tok {
                        Tok::Number(n) => match n.parse::<f32>() {
                            Ok(x) if x.is_finite() => {
                                xs.push(x);
                                self.bump();
                            }
                            _ => return Err(self.error(&["finite number"])),
                        },
                        _ => return Err(self.error(&["number"])),
                    }
                    if self.at_sym(",") {
                        self.bump();
                    } else {
                        break;
                    }
                }
                self.sym("]")?;
                VectorSource::Literal(xs)
            }
            Tok::Ident(s) if s.eq_ignore_ascii_case("node") => {
                self.bump();
                self.sym("(")?;
                let id = self.uint("node id")?;
                self.sym(")")?;
                VectorSource::Node(id)
            }
            _ => return Err(self.error(&["$parameter", "'['", "node(id)"])),
        };
        self.sym(",")?;
        self.word("k")?;
        self.sym("=")?;
        let k = self.positive("positive integer")?;
        let ef = if self.at_sym(",") {
            self.bump();
            self.word("ef")?;
            self.sym("=")?;
            Some(self.positive("positive integer")?)
        } else {
            None
        };
        self.sym(")")?;
        Ok(VectorClause {
            modality,
            source,
            k,
            ef,
        })
    }

    fn traverse_clause(&mut self) -> PResult<TraversalClause> {
        self.kw("TRAVERSE")?;
        self.word("hops")?;
        self.sym("=")?;
        let hops = self.uint("hop count")? as usize;
        let mut edge_types = None;
        if self.at_kw("types") {
            self.bump();
            self.sym("=")?;
            self.sym("(")?;
            let mut types = Vec::new();
            loop {
                types.push(self.name("edge type")?);
                if self.at_sym(",") {
                    self.bump();
                } else {
                    break;
                }
            }
            self.sym(")")?;
            edge_types = Some(types);
        }
        let mut direction = Direction::Out;
        if self.at_kw("dir") {
            self.bump();
            self.sym("=")?;
            direction = match &self.peek().tok {
                Tok::Ident(s) if s.eq_ignore_ascii_case("out") => Direction::Out,
                Tok::Ident(s) if s.eq_ignore_ascii_case("in") => Direction::In,
                Tok::Ident(s) if s.eq_ignore_ascii_case("both") => Direction::Both,
                _ => return Err(self.error(&["out", "in", "both"])),
            };
            self.bump();
        }
        Ok(TraversalClause {
            hops,
            edge_types,
            direction,
        })
    }

    fn weight_clause(&mut self) -> PResult<Weights> {
        self.kw("SIMILARITY_WEIGHT")?;
        if self.at_kw("AUTO") {
            self.bump();
            return Ok(Weights::Auto);
        }
        let (line, col) = (self.peek().line, self.peek().col);
        self.word("v")?;
        self.sym("=")?;
        let vpos = (self.peek().line, self.peek().col);
        let v = self.float()?;
        self.word("g")?;
        self.sym("=")?;
        let gpos = (self.peek().line, self.peek().col);
        let g = self.float()?;
        for (value, (l, c)) in [(v, vpos), (g, gpos)] {
            if value < 0.0 {
                return Err(ParseError::NegativeWeight {
                    line: l,
                    col: c,
                    value,
                });
            }
        }
        if v + g <= 0.0 {
            return Err(ParseError::ZeroWeights { line, col });
        }
        Ok(Weights::normalized(v, g))
    }
}

/// Parses query text without checking the modality against a registry.
pub fn parse(text: &str) -> Result<HybridQueryAst, ParseError> {
    parse_with(text, None)
}

pub fn parse_with(
    text: &str,
    registry: Option<&ModalityRegistry>,
) -> Result<HybridQueryAst, ParseError> {
    let toks = lex(text)?;
    Parser {
        toks,
        pos: 0,
        registry,
    }
    .query()
}
