//! Shared generators and corpora for integration tests.
#![allow(dead_code)]

use hmgi_core::graph::{Direction, PropValue};
use hmgi_core::query::{
    CmpOp, HybridQueryAst, MatchClause, Predicate, TraversalClause, VectorClause, VectorSource,
    Weights,
};
use hmgi_core::Modality;
use proptest::prelude::*;

fn ident() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-z_][a-z0-9_]{0,6}",
        // Keywords and odd names go through the quoted form.
        Just("match".to_string()),
        Just("Top".to_string()),
        "[a-z ]{1,5}",
    ]
}

fn text() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9 _'é\"\\\\\n-]{0,8}"
}

fn prop_value() -> impl Strategy<Value = PropValue> {
    prop_oneof![
        any::<bool>().prop_map(PropValue::Bool),
        any::<i64>().prop_map(PropValue::Int),
        (-1e12f64..1e12).prop_map(PropValue::Float),
        text().prop_map(PropValue::Str),
    ]
}

fn modality() -> impl Strategy<Value = Modality> {
    prop_oneof![
        Just(Modality::Text),
        Just(Modality::Image),
        Just(Modality::Audio),
        Just(Modality::Video),
        "[a-z][a-z0-9_]{0,5}".prop_map(|s| Modality::from(s.as_str())),
    ]
}

fn source() -> impl Strategy<Value = VectorSource> {
    prop_oneof![
        "[a-z][a-z0-9_]{0,5}".prop_map(VectorSource::Param),
        prop::collection::vec(-1e6f32..1e6, 1..6).prop_map(VectorSource::Literal),
        any::<u32>().prop_map(|n| VectorSource::Node(n as u64)),
    ]
}

fn op() -> impl Strategy<Value = CmpOp> {
    prop_oneof![
        Just(CmpOp::Eq),
        Just(CmpOp::Ne),
        Just(CmpOp::Lt),
        Just(CmpOp::Le),
        Just(CmpOp::Gt),
        Just(CmpOp::Ge),
    ]
}

pub fn ast() -> impl Strategy<Value = HybridQueryAst> {
    let pattern = proptest::option::of((
        ident(),
        proptest::option::of(ident()),
        prop::collection::btree_map(ident(), prop_value(), 0..3),
    ));
    let traversal = proptest::option::of((
        0usize..5,
        proptest::option::of(prop::collection::vec(ident(), 1..3)),
        prop_oneof![
            Just(Direction::Out),
            Just(Direction::In),
            Just(Direction::Both)
        ],
    ));
    let weights = prop_oneof![
        Just(Weights::Auto),
        (0.0f64..10.0, 0.0f64..10.0)
            .prop_filter("not both zero", |(v, g)| v + g > 0.0)
            .prop_map(|(v, g)| Weights::normalized(v, g)),
    ];
    (
        pattern,
        prop::collection::vec((ident(), op(), prop_value()), 0..3),
        (
            modality(),
            source(),
            1usize..500,
            proptest::option::of(1usize..2000),
        ),
        traversal,
        weights,
        proptest::option::of(0u64..10_000),
        1usize..200,
    )
        .prop_map(
            |(pattern, filters, (m, s, k, ef), traversal, weights, budget, top)| {
                let pattern = pattern.map(|(var, label, properties)| MatchClause {
                    var,
                    label,
                    properties,
                });
                let var = pattern.as_ref().map(|p| p.var.clone());
                let filters = filters
                    .into_iter()
                    .map(|(property, op, value)| Predicate {
                        var: var.clone().unwrap_or_else(|| "v".into()),
                        property,
                        op,
                        value,
                    })
                    .collect();
                HybridQueryAst {
                    pattern,
                    filters,
                    vector: VectorClause {
                        modality: m,
                        source: s,
                        k,
                        ef,
                    },
                    traversal: traversal.map(|(hops, edge_types, direction)| TraversalClause {
                        hops,
                        edge_types,
                        direction,
                    }),
                    weights,
                    budget_ms: budget,
                    top,
                }
            },
        )
}

pub const MALFORMED: &[&str] = &[
    "",
    ";",
    "VECTOR_SEARCH",
    "VECTOR_SEARCH(",
    "VECTOR_SEARCH(text",
    "VECTOR_SEARCH(text, $q",
    "VECTOR_SEARCH(text, $q, k=)",
    "VECTOR_SEARCH(text, $q, k=10",
    "VECTOR_SEARCH(text, $q, k=10) RETURN",
    "VECTOR_SEARCH(text, $q, k=10) RETURN TOP",
    "VECTOR_SEARCH(text, $q, k=10) RETURN TOP x",
    "VECTOR_SEARCH(text, $q, k=0) RETURN TOP 3",
    "VECTOR_SEARCH(text, $q, k=1.5) RETURN TOP 3",
    "VECTOR_SEARCH(text, q, k=10) RETURN TOP 3",
    "VECTOR_SEARCH(text, $, k=10) RETURN TOP 3",
    "VECTOR_SEARCH(text, [1.0, , 2.0], k=10) RETURN TOP 3",
    "VECTOR_SEARCH(text, [], k=10) RETURN TOP 3",
    "VECTOR_SEARCH(text, node(), k=10) RETURN TOP 3",
    "VECTOR_SEARCH(text, $q, k=10, ef=) RETURN TOP 3",
    "VECTOR_SEARCH(text, $q, k=10) TRAVERSE RETURN TOP 3",
    "VECTOR_SEARCH(text, $q, k=10) TRAVERSE hops=two RETURN TOP 3",
    "VECTOR_SEARCH(text, $q, k=10) TRAVERSE hops=2 dir=sideways RETURN TOP 3",
    "VECTOR_SEARCH(text, $q, k=10) TRAVERSE hops=2 types=() RETURN TOP 3",
    "VECTOR_SEARCH(text, $q, k=10) SIMILARITY_WEIGHT RETURN TOP 3",
    "VECTOR_SEARCH(text, $q, k=10) SIMILARITY_WEIGHT v= g=0.5 RETURN TOP 3",
    "VECTOR_SEARCH(text, $q, k=10) BUDGET ms RETURN TOP 3",
    "VECTOR_SEARCH(text, $q, k=10) RETURN TOP 3 extra",
    "VECTOR_SEARCH(text, $q, k=10) RETURN TOP 3 ;;",
    "MATCH VECTOR_SEARCH(text, $q, k=10) RETURN TOP 3",
    "MATCH (v VECTOR_SEARCH(text, $q, k=10) RETURN TOP 3",
    "MATCH (v:) VECTOR_SEARCH(text, $q, k=10) RETURN TOP 3",
    "MATCH (v {a 1}) VECTOR_SEARCH(text, $q, k=10) RETURN TOP 3",
    "MATCH (v {a: }) VECTOR_SEARCH(text, $q, k=10) RETURN TOP 3",
    "MATCH (v) WHERE VECTOR_SEARCH(text, $q, k=10) RETURN TOP 3",
    "MATCH (v) WHERE v.x VECTOR_SEARCH(text, $q, k=10) RETURN TOP 3",
    "MATCH (v) WHERE v.x == 1 VECTOR_SEARCH(text, $q, k=10) RETURN TOP 3",
    "MATCH (v) WHERE v.x = 1 AND VECTOR_SEARCH(text, $q, k=10) RETURN TOP 3",
    "MATCH (v) WHERE v. = 1 VECTOR_SEARCH(text, $q, k=10) RETURN TOP 3",
    "VECTOR_SEARCH(text, \"unterminated, k=10) RETURN TOP 3",
    "VECTOR_SEARCH(text, $q, k=10) RETURN TOP 3 @",
    "VECTOR_SEARCH(text, $q, k=1e) RETURN TOP 3",
    "RETURN TOP 3",
    "VECTOR_SEARCH(text, $q, k=10)\nTRAVERSE hops=1\nRETURN BOTTOM 3",
    "VECTOR_SEARCH(text, $q, k=99999999999999999999999) RETURN TOP 3",
    "\u{0}\u{1}\u{2}",
    "VECTOR_SEARCH(téxt, $q, k=10) RETURN TOP 3 \u{1F600}",
];
