use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::graph::{Direction, PropValue};
use crate::{Modality, NodeId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum VectorSource {
    /// `$name`, bound at execution time.
    Param(String),
    Literal(Vec<f32>),
    /// `node(id)`: the stored embedding of an existing node.
    Node(NodeId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorClause {
    pub modality: Modality,
    pub source: VectorSource,
    pub k: usize,
    pub ef: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraversalClause {
    pub hops: usize,
    pub edge_types: Option<Vec<String>>,
    pub direction: Direction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Weights {
    Fixed {
        v: f64,
        g: f64,
    },
    /// `w_v = found / requested`, `w_g = 1 - w_v`, decided at execution.
    Auto,
}

impl Default for Weights {
    fn default() -> Self {
        Weights::Fixed { v: 0.5, g: 0.5 }
    }
}

impl Weights {
    /// Scales a non-negative pair to sum to one. Pairs already summing to one
    /// within 1e-12 are left untouched so normalization is idempotent.
    pub fn normalized(v: f64, g: f64) -> Weights {
        let sum = v + g;
        if (sum - 1.0).abs() <= 1e-12 {
            Weights::Fixed { v, g }
        } else {
            let a = v / sum;
            Weights::Fixed { v: a, g: 1.0 - a }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    pub fn holds(self, left: &PropValue, right: &PropValue) -> bool {
        use std::cmp::Ordering::*;
        let ord = match (left, right) {
            (PropValue::Str(a), PropValue::Str(b)) => Some(a.cmp(b)),
            (PropValue::Bool(a), PropValue::Bool(b)) => Some(a.cmp(b)),
            (a, b) => match (a.as_f64(), b.as_f64()) {
                (Some(x), Some(y)) => x.partial_cmp(&y),
                _ => None,
            },
        };
        match (self, ord) {
            (CmpOp::Ne, None) => true,
            (_, None) => false,
            (CmpOp::Eq, Some(o)) => o == Equal,
            (CmpOp::Ne, Some(o)) => o != Equal,
            (CmpOp::Lt, Some(o)) => o == Less,
            (CmpOp::Le, Some(o)) => o != Greater,
            (CmpOp::Gt, Some(o)) => o == Greater,
            (CmpOp::Ge, Some(o)) => o != Less,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub var: String,
    pub property: String,
    pub op: CmpOp,
    pub value: PropValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchClause {
    pub var: String,
    pub label: Option<String>,
    pub properties: BTreeMap<String, PropValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridQueryAst {
    pub pattern: Option<MatchClause>,
    pub filters: Vec<Predicate>,
    pub vector: VectorClause,
    pub traversal: Option<TraversalClause>,
    pub weights: Weights,
    pub budget_ms: Option<u64>,
    pub top: usize,
}

impl HybridQueryAst {
    pub fn hops(&self) -> usize {
        self.traversal.as_ref().map_or(0, |t| t.hops)
    }

    /// True when MATCH/WHERE restrict the anchor set.
    pub fn binds_seeds(&self) -> bool {
        self.pattern
            .as_ref()
            .is_some_and(|m| m.label.is_some() || !m.properties.is_empty())
            || !self.filters.is_empty()
    }
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !super::parser::is_keyword(s)
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            _ => out.push(c),
        }
    }
    out.push('"');
    out
}

fn name(s: &str) -> String {
    if is_ident(s) {
        s.to_string()
    } else {
        quote(s)
    }
}

fn literal(v: &PropValue) -> String {
    match v {
        PropValue::Bool(b) => b.to_string(),
        PropValue::Int(i) => i.to_string(),
        PropValue::Float(f) => format!("{f:?}"),
        PropValue::Str(s) => quote(s),
    }
}

impl fmt::Display for HybridQueryAst {
    /// Canonical text form; parsing it yields an equal AST.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        if let Some(m) = &self.pattern {
            let _ = write!(out, "MATCH ({}", name(&m.var));
            if let Some(l) = &m.label {
                let _ = write!(out, ":{}", name(l));
            }
            if !m.properties.is_empty() {
                let props: Vec<String> = m
                    .properties
                    .iter()
                    .map(|(k, v)| format!("{}: {}", name(k), literal(v)))
                    .collect();
                let _ = write!(out, " {{{}}}", props.join(", "));
            }
            out.push_str(") ");
        }
        if !self.filters.is_empty() {
            let preds: Vec<String> = self
                .filters
                .iter()
                .map(|p| {
                    format!(
                        "{}.{} {} {}",
                        name(&p.var),
                        name(&p.property),
                        p.op.symbol(),
                        literal(&p.value)
                    )
                })
                .collect();
            let _ = write!(out, "WHERE {} ", preds.join(" AND "));
        }
        let v = &self.vector;
        let source = match &v.source {
            VectorSource::Param(p) => format!("${p}"),
            VectorSource::Literal(xs) => {
                let parts: Vec<String> = xs.iter().map(|x| format!("{x:?}")).collect();
                format!("[{}]", parts.join(", "))
            }
            VectorSource::Node(id) => format!("node({id})"),
        };
        let _ = write!(
            out,
            "VECTOR_SEARCH({}, {}, k={}",
            name(v.modality.as_str()),
            source,
            v.k
        );
        if let Some(ef) = v.ef {
            let _ = write!(out, ", ef={ef}");
        }
        out.push_str(") ");
        if let Some(t) = &self.traversal {
            let _ = write!(out, "TRAVERSE hops={}", t.hops);
            if let Some(types) = &t.edge_types {
                let names: Vec<String> = types.iter().map(|t| name(t)).collect();
                let _ = write!(out, " types=({})", names.join(", "));
            }
            let dir = match t.direction {
                Direction::Out => "out",
                Direction::In => "in",
                Direction::Both => "both",
            };
            let _ = write!(out, " dir={dir} ");
        }
        match self.weights {
            Weights::Fixed { v, g } => {
                let _ = write!(out, "SIMILARITY_WEIGHT v={v:?} g={g:?} ");
            }
            Weights::Auto => out.push_str("SIMILARITY_WEIGHT auto "),
        }
        if let Some(b) = self.budget_ms {
            let _ = write!(out, "BUDGET {b}ms ");
        }
        let _ = write!(out, "RETURN TOP {}", self.top);
        f.write_str(&out)
    }
}
