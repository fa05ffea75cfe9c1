//! Token estimation, budget admission, and top-level declaration segmentation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Contract;

/// Deterministic `ceil(bytes / 4)` token estimate.
pub fn estimate_tokens(text: &str) -> usize {
    text.len().div_ceil(4)
}

pub const DEFAULT_ORCHESTRATION_RESERVE: usize = 1000;
pub const GPT35_CONTEXT_LIMIT: usize = 4096;
pub const GPT4_CONTEXT_LIMIT: usize = 128_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("contract allowance {allowance} + reserve {reserve} exceeds context limit {limit}")]
pub struct BudgetError {
    pub limit: usize,
    pub reserve: usize,
    pub allowance: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenBudget {
    model_context_limit: usize,
    orchestration_reserve: usize,
    contract_allowance: usize,
}

impl TokenBudget {
    pub fn new(limit: usize, reserve: usize, allowance: usize) -> Result<Self, BudgetError> {
        if allowance.saturating_add(reserve) > limit {
            return Err(BudgetError {
                limit,
                reserve,
                allowance,
            });
        }
        Ok(Self {
            model_context_limit: limit,
            orchestration_reserve: reserve,
            contract_allowance: allowance,
        })
    }

    /// Budget with the given reserve; the contract allowance is what remains,
    /// rounded down to a whole thousand tokens (4096 - 1000 leaves 3000).
    pub fn with_reserve(limit: usize, reserve: usize) -> Self {
        let remaining = limit.saturating_sub(reserve);
        let allowance = if remaining >= 1000 {
            remaining - remaining % 1000
        } else {
            remaining
        };
        Self {
            model_context_limit: limit,
            orchestration_reserve: reserve,
            contract_allowance: allowance,
        }
    }

    pub fn for_context_limit(limit: usize) -> Self {
        Self::with_reserve(limit, DEFAULT_ORCHESTRATION_RESERVE)
    }

    pub fn model_context_limit(&self) -> usize {
        self.model_context_limit
    }

    pub fn orchestration_reserve(&self) -> usize {
        self.orchestration_reserve
    }

    pub fn contract_allowance(&self) -> usize {
        self.contract_allowance
    }
}

impl Default for TokenBudget {
    fn default() -> Self {
        Self::for_context_limit(GPT35_CONTEXT_LIMIT)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Admission {
    Admit(Contract),
    Segment(Vec<Contract>),
    Reject(Rejection),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("`{segment_id}` needs an estimated {estimate} tokens but the contract allowance is {allowance}")]
pub struct Rejection {
    pub segment_id: String,
    pub estimate: usize,
    pub allowance: usize,
}

/// Admits, splits, or rejects a contract against the budget's allowance.
pub fn admit_contract(contract: &Contract, budget: &TokenBudget) -> Admission {
    let allowance = budget.contract_allowance();
    if contract.token_estimate() <= allowance {
        return Admission::Admit(contract.clone());
    }
    let segments = segment_source(contract.source());
    if segments.len() < 2 {
        return Admission::Reject(Rejection {
            segment_id: contract.id().to_string(),
            estimate: contract.token_estimate(),
            allowance,
        });
    }
    let mut units = Vec::with_capacity(segments.len());
    for (index, segment) in segments.into_iter().enumerate() {
        let id = format!("{}#{}:{}", contract.id(), index + 1, segment.name);
        let estimate = estimate_tokens(&segment.source);
        if estimate > allowance {
            return Admission::Reject(Rejection {
                segment_id: id,
                estimate,
                allowance,
            });
        }
        match contract.derive_segment(id.clone(), segment.source) {
            Ok(unit) => units.push(unit),
            Err(_) => {
                return Admission::Reject(Rejection {
                    segment_id: id,
                    estimate,
                    allowance,
                })
            }
        }
    }
    Admission::Segment(units)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceSegment {
    pub kind: DeclarationKind,
    pub name: String,
    /// Shared preamble (pragmas, imports) followed by the declaration text.
    pub source: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeclarationKind {
    Contract,
    AbstractContract,
    Library,
    Interface,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Declaration {
    pub kind: DeclarationKind,
    pub name: String,
    /// Byte offset of the declaration's line start in the original source.
    pub offset: usize,
}

/// Finds top-level `contract`/`abstract contract`/`library`/`interface`
/// declarations that begin at column 0 once comments and string literals are
/// blanked out.
pub fn top_level_declarations(source: &str) -> Vec<Declaration> {
    let masked = mask_comments_and_strings(source);
    let mut out = Vec::new();
    let mut offset = 0;
    for line in masked.split_inclusive('\n') {
        if let Some((kind, rest)) = declaration_keyword(line) {
            let name: String = rest
                .trim_start()
                .chars()
                .take_while(|c| c.is_alphanumeric() || *c == '_' || *c == '$')
                .collect();
            if !name.is_empty() {
                out.push(Declaration { kind, name, offset });
            }
        }
        offset += line.len();
    }
    out
}

fn declaration_keyword(line: &str) -> Option<(DeclarationKind, &str)> {
    const KEYWORDS: [(&str, DeclarationKind); 4] = [
        ("abstract contract", DeclarationKind::AbstractContract),
        ("contract", DeclarationKind::Contract),
        ("library", DeclarationKind::Library),
        ("interface", DeclarationKind::Interface),
    ];
    KEYWORDS.iter().find_map(|(kw, kind)| {
        let rest = line.strip_prefix(kw)?;
        rest.starts_with(|c: char| c.is_whitespace()).then_some((*kind, rest))
    })
}

/// Splits a source file into one segment per top-level declaration. Text
/// before the first declaration is prepended to every segment.
pub fn segment_source(source: &str) -> Vec<SourceSegment> {
    let decls = top_level_declarations(source);
    let Some(first) = decls.first() else {
        return Vec::new();
    };
    let preamble = &source[..first.offset];
    let preamble = if preamble.trim().is_empty() { "" } else { preamble };
    decls
        .iter()
        .enumerate()
        .map(|(i, decl)| {
            let end = decls.get(i + 1).map_or(source.len(), |next| next.offset);
            let mut text = String::with_capacity(preamble.len() + end - decl.offset);
            text.push_str(preamble);
            text.push_str(&source[decl.offset..end]);
            SourceSegment {
                kind: decl.kind,
                name: decl.name.clone(),
                source: text,
            }
        })
        .collect()
}

/// Replaces comment bodies and string literal contents with spaces, keeping
/// every byte offset and newline in place.
fn mask_comments_and_strings(source: &str) -> String {
    #[derive(Clone, Copy, PartialEq)]
    enum State {
        Code,
        Line,
        Block,
        Str(u8),
    }
    let bytes = source.as_bytes();
    let mut out = bytes.to_vec();
    let mut state = State::Code;
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        let next = bytes.get(i + 1).copied();
        match state {
            State::Code => match (b, next) {
                (b'/', Some(b'/')) => {
                    state = State::Line;
                    blank(&mut out, i);
                    blank(&mut out, i + 1);
                    i += 1;
                }
                (b'/', Some(b'*')) => {
                    state = State::Block;
                    blank(&mut out, i);
                    blank(&mut out, i + 1);
                    i += 1;
                }
                (b'"' | b'\'', _) => state = State::Str(b),
                _ => {}
            },
            State::Line => {
                if b == b'\n' {
                    state = State::Code;
                } else {
                    blank(&mut out, i);
                }
            }
            State::Block => {
                if b == b'*' && next == Some(b'/') {
                    blank(&mut out, i);
                    blank(&mut out, i + 1);
                    i += 1;
                    state = State::Code;
                } else if b != b'\n' {
                    blank(&mut out, i);
                }
            }
            State::Str(quote) => {
                if b == b'\\' && next.is_some() {
                    blank(&mut out, i);
                    if next != Some(b'\n') {
                        blank(&mut out, i + 1);
                    }
                    i += 1;
                } else if b == quote {
                    state = State::Code;
                } else if b != b'\n' {
                    blank(&mut out, i);
                }
            }
        }
        i += 1;
    }
    String::from_utf8(out).expect("only ASCII bytes are blanked")
}

fn blank(out: &mut [u8], i: usize) {
    if out[i].is_ascii() {
        out[i] = b' ';
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn contract_of(src: &str) -> Contract {
        Contract::user_supplied("file.sol", src).unwrap()
    }

    #[test]
    fn estimate_edges() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("a"), 1);
        assert_eq!(estimate_tokens("abcd"), 1);
        assert_eq!(estimate_tokens("abcde"), 2);
        assert_eq!(estimate_tokens(&"x".repeat(12_000)), 3000);
    }

    #[test]
    fn budget_defaults() {
        let b = TokenBudget::for_context_limit(GPT35_CONTEXT_LIMIT);
        assert_eq!(b.contract_allowance(), 3000);
        assert_eq!(b.orchestration_reserve(), 1000);
        let big = TokenBudget::for_context_limit(GPT4_CONTEXT_LIMIT);
        assert_eq!(big.contract_allowance(), 127_000);
        assert!(TokenBudget::new(4096, 1000, 3097).is_err());
        assert!(TokenBudget::new(4096, 1000, 3096).is_ok());
        let tiny = TokenBudget::for_context_limit(500);
        assert_eq!(tiny.contract_allowance(), 0);
    }

    #[test]
    fn admit_just_under_allowance() {
        let c = contract_of(&format!("contract A {{{}}}", "x".repeat(2999 * 4 - 13)));
        assert_eq!(c.token_estimate(), 2999);
        assert!(matches!(
            admit_contract(&c, &TokenBudget::default()),
            Admission::Admit(_)
        ));
    }

    #[test]
    fn monolith_over_allowance_is_rejected() {
        let body = "x".repeat(5000 * 4 - 13);
        let c = contract_of(&format!("contract A {{{body}}}"));
        assert_eq!(c.token_estimate(), 5000);
        match admit_contract(&c, &TokenBudget::default()) {
            Admission::Reject(r) => {
                assert_eq!(r.segment_id, "file.sol");
                assert_eq!(r.estimate, 5000);
                assert_eq!(r.allowance, 3000);
            }
            other => panic!("expected reject, got {other:?}"),
        }
    }

    #[test]
    fn declarations_ignore_comments_strings_and_indented_keywords() {
        let src = "pragma solidity ^0.8.0;\n\
                   // contract Fake {}\n\
                   /*\ncontract AlsoFake {}\n*/\n\
                   interface IToken { function f() external; }\n\
                   library Math {}\n  contract Indented {}\n\
                   abstract contract Base {}\n\
                   contract Main is Base { string s = \"\n\"; }\n\
                   contractual x;\n";
        let names: Vec<_> = top_level_declarations(src)
            .into_iter()
            .map(|d| (d.kind, d.name))
            .collect();
        assert_eq!(
            names,
            vec![
                (DeclarationKind::Interface, "IToken".to_string()),
                (DeclarationKind::Library, "Math".to_string()),
                (DeclarationKind::AbstractContract, "Base".to_string()),
                (DeclarationKind::Contract, "Main".to_string()),
            ]
        );
    }

    #[test]
    fn segments_carry_preamble_and_cover_source() {
        let src = "pragma solidity ^0.8.0;\n\ncontract A {}\ncontract B {}\n";
        let segs = segment_source(src);
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[0].source, "pragma solidity ^0.8.0;\n\ncontract A {}\n");
        assert_eq!(segs[1].source, "pragma solidity ^0.8.0;\n\ncontract B {}\n");
    }
}
