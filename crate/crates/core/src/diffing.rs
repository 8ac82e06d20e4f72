//! Tokenization of serialized key expressions, MinHash signatures, and
//! Jaccard similarity estimation.
//!
//! Tokens are depth-wrapped operand/operator atoms lexed from the display
//! form of each expression: an atom nested under d memory brackets is
//! wrapped in d pairs of `[]`, under d parentheses in d pairs of `()`. The
//! `+` operator is dropped entirely (it would dominate token sequences);
//! `-` is always a standalone operator token. Kind prefixes per node:
//! `RET_(t)`, `cmp t`, `branch t`, `t=` / `=t` for the two sides of a store,
//! plus a literal `WHILE` token on marked loop headers.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::mix64;
use crate::graph::KeyNode;
use crate::keysem::KeyExpr;

/// Lex one displayed expression into depth-wrapped atoms.
pub fn tokenize_expr(display: &str) -> Vec<String> {
    #[derive(Clone, Copy)]
    enum Wrap {
        Bracket,
        Paren,
    }
    let wrap = |stack: &[Wrap], atom: &str| -> String {
        let mut out = atom.to_string();
        for w in stack.iter().rev() {
            out = match w {
                Wrap::Bracket => format!("[{out}]"),
                Wrap::Paren => format!("({out})"),
            };
        }
        out
    };

    let mut tokens = Vec::new();
    let mut stack: Vec<Wrap> = Vec::new();
    let chars: Vec<char> = display.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            ' ' | '\t' | ',' => i += 1,
            '[' => {
                stack.push(Wrap::Bracket);
                i += 1;
            }
            '(' => {
                stack.push(Wrap::Paren);
                i += 1;
            }
            ']' | ')' => {
                stack.pop();
                i += 1;
            }
            '+' => i += 1,
            '-' | '*' | '&' | '|' | '^' | '~' | '%' | '/' => {
                tokens.push(wrap(&stack, &c.to_string()));
                i += 1;
            }
            '<' | '>' => {
                let mut op = String::new();
                while i < chars.len() && chars[i] == c {
                    op.push(c);
                    i += 1;
                }
                tokens.push(wrap(&stack, &op));
            }
            '"' => {
                let mut atom = String::from('"');
                i += 1;
                while i < chars.len() && chars[i] != '"' {
                    atom.push(chars[i]);
                    i += 1;
                }
                atom.push('"');
                i += 1;
                tokens.push(wrap(&stack, &atom));
            }
            c if c.is_ascii_alphanumeric() || c == '_' => {
                // identifiers and numbers, including 0x-prefixed hex
                let mut atom = String::new();
                while i < chars.len()
                    && (chars[i].is_ascii_alphanumeric() || chars[i] == '_' || chars[i] == '.')
                {
                    atom.push(chars[i]);
                    i += 1;
                }
                tokens.push(wrap(&stack, &atom));
            }
            _ => i += 1,
        }
    }
    tokens
}

/// Tokenize one serialized node per its key-expression kind.
pub fn tokenize_node(node: &KeyNode) -> Vec<String> {
    let mut out = Vec::new();
    if node.while_marker {
        out.push("WHILE".to_string());
    }
    match &node.expr {
        KeyExpr::Call { args, .. } => {
            // The callee label never contributes tokens; absolute addresses
            // differ across binaries.
            for arg in args {
                for t in tokenize_expr(&arg.to_string()) {
                    out.push(format!("RET_({t})"));
                }
            }
        }
        KeyExpr::Compare { lhs, rhs } => {
            for part in [lhs, rhs] {
                for t in tokenize_expr(&part.to_string()) {
                    out.push(format!("cmp {t}"));
                }
            }
        }
        KeyExpr::Branch { dest } => {
            for t in tokenize_expr(&dest.to_string()) {
                out.push(format!("branch {t}"));
            }
        }
        KeyExpr::Store { addr, value } => {
            for t in tokenize_expr(&format!("[{addr}]")) {
                out.push(format!("{t}="));
            }
            for t in tokenize_expr(&value.to_string()) {
                out.push(format!("={t}"));
            }
        }
    }
    out
}

/// Concatenated token sequence for a whole serialized graph.
pub fn tokenize_serialized(nodes: &[KeyNode]) -> Vec<String> {
    nodes.iter().flat_map(tokenize_node).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinHashParams {
    pub k: usize,
    pub w: usize,
    pub seed: u64,
}

impl Default for MinHashParams {
    fn default() -> Self {
        MinHashParams { k: 128, w: 1, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinHashSignature {
    pub params: MinHashParams,
    pub slots: Vec<u64>,
    pub empty: bool,
}

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("incomparable signatures: params {0:?} vs {1:?}")]
    ParamMismatch(MinHashParams, MinHashParams),
}

fn hash_bytes(bytes: &[u8]) -> u64 {
    // FNV-1a with a splitmix64 finalizer.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix64(h)
}

fn slot_seeds(params: &MinHashParams) -> Vec<u64> {
    let mut seeds = Vec::with_capacity(params.k);
    let mut s = params.seed;
    for _ in 0..params.k {
        s = mix64(s.wrapping_add(0x9e37_79b9_7f4a_7c15));
        seeds.push(s);
    }
    seeds
}

/// MinHash signature over the w-gram shingle set of a token stream (w = 1
/// reduces to the token set). An empty shingle set yields the sentinel
/// all-max signature flagged `empty`.
pub fn signature(tokens: &[String], params: &MinHashParams) -> MinHashSignature {
    let shingle_hashes: HashSet<u64> = if params.w <= 1 {
        tokens.iter().map(|t| hash_bytes(t.as_bytes())).collect()
    } else {
        tokens
            .windows(params.w)
            .map(|w| hash_bytes(w.join("\u{1f}").as_bytes()))
            .collect()
    };

    if shingle_hashes.is_empty() {
        return MinHashSignature {
            params: *params,
            slots: vec![u64::MAX; params.k],
            empty: true,
        };
    }

    let slots = slot_seeds(params)
        .iter()
        .map(|seed| {
            shingle_hashes
                .iter()
                .map(|h| mix64(h ^ seed))
                .min()
                .expect("non-empty shingle set")
        })
        .collect();
    MinHashSignature {
        params: *params,
        slots,
        empty: false,
    }
}

/// Fraction of matching slots: an unbiased estimate of the Jaccard
/// similarity of the underlying shingle sets.
pub fn similarity(a: &MinHashSignature, b: &MinHashSignature) -> Result<f64, DiffError> {
    if a.params != b.params || a.slots.len() != b.slots.len() {
        return Err(DiffError::ParamMismatch(a.params, b.params));
    }
    if a.empty && b.empty {
        return Ok(1.0);
    }
    if a.empty || b.empty {
        return Ok(0.0);
    }
    let matching = a
        .slots
        .iter()
        .zip(&b.slots)
        .filter(|(x, y)| x == y)
        .count();
    Ok(matching as f64 / a.slots.len() as f64)
}

/// Exact set Jaccard; the testing oracle for `similarity`.
pub fn exact_jaccard<T: std::hash::Hash + Eq>(a: &HashSet<T>, b: &HashSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// On-disk signature index: `{"params": {...}, "functions": [...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignatureFile {
    pub params: MinHashParams,
    #[serde(default)]
    pub binary: String,
    pub functions: Vec<FunctionSignature>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FunctionSignature {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub entry: u64,
    pub slots: Vec<u64>,
    pub empty: bool,
}

impl FunctionSignature {
    pub fn to_signature(&self, params: MinHashParams) -> MinHashSignature {
        MinHashSignature {
            params,
            slots: self.slots.clone(),
            empty: self.empty,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{BinaryOp, SymExpr};

    fn node(expr: KeyExpr, while_marker: bool) -> KeyNode {
        KeyNode { address: 0, expr, while_marker }
    }

    #[test]
    fn golden_plain_expression() {
        // X+3-Y+7*Z splits into operands and operators; `+` is dropped.
        assert_eq!(
            tokenize_expr("X+3-Y+7*Z"),
            vec!["X", "3", "-", "Y", "7", "*", "Z"]
        );
    }

    #[test]
    fn golden_brackets_retained_per_depth() {
        assert_eq!(
            tokenize_expr("[X+[Y+Z-3]*2]"),
            vec!["[X]", "[[Y]]", "[[Z]]", "[[-]]", "[[3]]", "[*]", "[2]"]
        );
    }

    #[test]
    fn golden_parens_retained_per_depth() {
        assert_eq!(
            tokenize_expr("(X+(Y*6+(Z-3+K)))"),
            vec![
                "(X)", "((Y))", "((*))", "((6))", "(((Z)))", "(((-)))", "(((3)))", "(((K)))"
            ]
        );
    }

    #[test]
    fn golden_call_tokens() {
        // RET_(3, VAR0+4)  =>  RET_(3), RET_(VAR0), RET_(4)
        let call = KeyExpr::Call {
            callee: "f".into(),
            args: vec![
                SymExpr::num(3),
                SymExpr::binop(BinaryOp::Add, SymExpr::num(4), SymExpr::var(0)),
            ],
        };
        assert_eq!(
            tokenize_node(&node(call, false)),
            vec!["RET_(3)", "RET_(VAR0)", "RET_(4)"]
        );
    }

    #[test]
    fn golden_compare_tokens() {
        // 4 cmp [VAR1+18]  =>  cmp 4, cmp [VAR1], cmp [18]
        let cmp = KeyExpr::Compare {
            lhs: SymExpr::num(4),
            rhs: SymExpr::mem(SymExpr::binop(
                BinaryOp::Add,
                SymExpr::num(18),
                SymExpr::var(1),
            )),
        };
        assert_eq!(
            tokenize_node(&node(cmp, false)),
            vec!["cmp 4", "cmp [VAR1]", "cmp [18]"]
        );
    }

    #[test]
    fn golden_branch_tokens() {
        // branch [[VAR2+10]+16]  =>  branch [[VAR2]], branch [[10]], branch [16]
        let inner = SymExpr::mem(SymExpr::binop(
            BinaryOp::Add,
            SymExpr::num(10),
            SymExpr::var(2),
        ));
        let branch = KeyExpr::Branch {
            dest: SymExpr::mem(SymExpr::binop(BinaryOp::Add, SymExpr::num(16), inner)),
        };
        assert_eq!(
            tokenize_node(&node(branch, false)),
            vec!["branch [[VAR2]]", "branch [[10]]", "branch [16]"]
        );
    }

    #[test]
    fn golden_store_tokens() {
        // [VAR2+18]=(VAR1+10)*3  =>  [VAR2]=, [18]=, =(VAR1), =(10), =*, =3
        let store = KeyExpr::Store {
            addr: SymExpr::binop(BinaryOp::Add, SymExpr::num(18), SymExpr::var(2)),
            value: SymExpr::binop(
                BinaryOp::Mul,
                SymExpr::num(3),
                SymExpr::binop(BinaryOp::Add, SymExpr::num(10), SymExpr::var(1)),
            ),
        };
        assert_eq!(
            tokenize_node(&node(store, false)),
            vec!["[VAR2]=", "[18]=", "=(VAR1)", "=(10)", "=*", "=3"]
        );
    }

    #[test]
    fn while_marker_emits_leading_token() {
        let cmp = KeyExpr::Compare { lhs: SymExpr::var(0), rhs: SymExpr::num(5) };
        let tokens = tokenize_node(&node(cmp, true));
        assert_eq!(tokens[0], "WHILE");
        assert_eq!(tokens[1], "cmp VAR0");
    }

    #[test]
    fn negative_displacement_lexes_as_minus_and_hex_atom() {
        let store = KeyExpr::Store {
            addr: SymExpr::binop(BinaryOp::Add, SymExpr::disp(-0x48), SymExpr::var(6)),
            value: SymExpr::var(2),
        };
        assert_eq!(
            tokenize_node(&node(store, false)),
            vec!["[VAR6]=", "[-]=", "[0x48]=", "=VAR2"]
        );
    }

    #[test]
    fn iter_and_strings_tokenize() {
        let cmp = KeyExpr::Compare {
            lhs: SymExpr::iter(SymExpr::var(0)),
            rhs: SymExpr::Str("Rtmin".into()),
        };
        assert_eq!(
            tokenize_node(&node(cmp, false)),
            vec!["cmp ITER", "cmp (VAR0)", "cmp \"Rtmin\""]
        );
    }

    #[test]
    fn signatures_deterministic_and_set_semantics() {
        let params = MinHashParams::default();
        let a: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
        let b: Vec<String> = ["z", "x", "y", "x"].iter().map(|s| s.to_string()).collect();
        let sa = signature(&a, &params);
        let sb = signature(&b, &params);
        assert_eq!(sa, signature(&a, &params));
        // permutation + duplication invariant at w = 1
        assert_eq!(similarity(&sa, &sb).unwrap(), 1.0);
    }

    #[test]
    fn shingles_make_order_matter() {
        let params = MinHashParams { w: 2, ..Default::default() };
        let a: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
        let b: Vec<String> = ["z", "y", "x"].iter().map(|s| s.to_string()).collect();
        let sa = signature(&a, &params);
        let sb = signature(&b, &params);
        assert!(similarity(&sa, &sb).unwrap() < 1.0);
    }

    #[test]
    fn empty_streams() {
        let params = MinHashParams::default();
        let empty = signature(&[], &params);
        assert!(empty.empty);
        let full = signature(&["x".to_string()], &params);
        assert_eq!(similarity(&empty, &empty).unwrap(), 1.0);
        assert_eq!(similarity(&empty, &full).unwrap(), 0.0);
    }

    #[test]
    fn param_mismatch_is_an_error_not_zero() {
        let a = signature(&["x".to_string()], &MinHashParams::default());
        let b = signature(
            &["x".to_string()],
            &MinHashParams { seed: 1, ..Default::default() },
        );
        assert!(similarity(&a, &b).is_err());
    }

    #[test]
    fn estimator_close_to_exact_jaccard() {
        // {a,b,c} vs {b,c,d}: exact J = 0.5, binomial std ~ 0.044 at k=128.
        let params = MinHashParams::default();
        let a: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let b: Vec<String> = ["b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let est = similarity(&signature(&a, &params), &signature(&b, &params)).unwrap();
        let sa: HashSet<&str> = ["a", "b", "c"].into_iter().collect();
        let sb: HashSet<&str> = ["b", "c", "d"].into_iter().collect();
        let exact = exact_jaccard(&sa, &sb);
        assert_eq!(exact, 0.5);
        assert!((est - exact).abs() <= 0.15, "estimate {est} too far from {exact}");
    }

    #[test]
    fn exact_jaccard_basics() {
        let x: HashSet<&str> = ["x"].into_iter().collect();
        let y: HashSet<&str> = ["y"].into_iter().collect();
        let none: HashSet<&str> = HashSet::new();
        assert_eq!(exact_jaccard(&x, &x), 1.0);
        assert_eq!(exact_jaccard(&x, &y), 0.0);
        assert_eq!(exact_jaccard(&none, &none), 1.0);
    }

    #[test]
    fn disjoint_sets_estimate_zero() {
        let params = MinHashParams::default();
        let a: Vec<String> = (0..40).map(|i| format!("a{i}")).collect();
        let b: Vec<String> = (0..40).map(|i| format!("b{i}")).collect();
        let est = similarity(&signature(&a, &params), &signature(&b, &params)).unwrap();
        assert!(est < 0.06, "disjoint estimate {est}");
    }

    mod properties {
        use super::*;
        use crate::expr::UnaryOp;
        use proptest::prelude::*;

        fn arb_expr() -> impl Strategy<Value = SymExpr> {
            let leaf = prop_oneof![
                (0u32..4).prop_map(SymExpr::var),
                (-512i64..512).prop_map(SymExpr::num),
                (-512i64..0).prop_map(SymExpr::disp),
            ];
            leaf.prop_recursive(4, 32, 2, |inner| {
                prop_oneof![
                    (inner.clone(), inner.clone(), 0usize..6).prop_map(|(l, r, op)| {
                        let op = [
                            BinaryOp::Add,
                            BinaryOp::Sub,
                            BinaryOp::Mul,
                            BinaryOp::And,
                            BinaryOp::Or,
                            BinaryOp::Xor,
                        ][op];
                        SymExpr::binop(op, l, r)
                    }),
                    inner.clone().prop_map(SymExpr::mem),
                    inner.clone().prop_map(SymExpr::iter),
                    inner.prop_map(|a| SymExpr::unop(UnaryOp::Neg, a)),
                ]
            })
        }

        fn arb_key(e: SymExpr, e2: SymExpr, pick: u8) -> KeyExpr {
            match pick % 4 {
                0 => KeyExpr::Call { callee: "f".into(), args: vec![e, e2] },
                1 => KeyExpr::Compare { lhs: e, rhs: e2 },
                2 => KeyExpr::Branch { dest: e },
                _ => KeyExpr::Store { addr: e, value: e2 },
            }
        }

        proptest! {
            // the plus operator never survives tokenization
            #[test]
            fn no_plus_token_ever(a in arb_expr(), b in arb_expr(), pick in 0u8..4, w in proptest::bool::ANY) {
                let node = KeyNode {
                    address: 0,
                    expr: arb_key(a, b, pick),
                    while_marker: w,
                };
                for t in tokenize_node(&node) {
                    prop_assert!(!t.is_empty());
                    prop_assert!(!t.contains('+'), "token `{t}` contains +");
                }
            }
        }
    }
}
