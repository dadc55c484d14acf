//! `[periodic=P ;] x<b1: e1 ; x<b2: e2 ; ... ; else: en` or `all: e`.
//!
//! NUMBER positions accept constant expressions, so `x<2*pi` and
//! `periodic=2*pi` are exact.

use super::expr::{parse_expr, parse_number, PieceExpr};
use super::{ParseError, PiecewiseError, PiecewiseFunction};

pub(crate) fn parse_piecewise(spec: &str) -> Result<PiecewiseFunction, PiecewiseError> {
    let mut period = None;
    let mut breaks = Vec::new();
    let mut pieces = Vec::new();
    let mut tail: Option<PieceExpr> = None;
    let mut all = false;

    let mut offset = 0;
    let mut clause_no = 0;
    for raw in spec.split(';') {
        let start = offset;
        offset += raw.len() + 1;
        let lead = raw.len() - raw.trim_start().len();
        let text = raw.trim();
        let at = start + lead;
        if text.is_empty() {
            return Err(ParseError::new(at, "empty clause").into());
        }
        if tail.is_some() || all {
            return Err(ParseError::new(at, "no clause may follow 'else' or 'all'").into());
        }
        if let Some(rest) = strip_keyword(text, "periodic") {
            let rest_at = at + (text.len() - rest.len());
            let Some(value) = rest.trim_start().strip_prefix('=') else {
                return Err(ParseError::new(rest_at, "expected '=' after 'periodic'").into());
            };
            if clause_no != 0 {
                return Err(ParseError::new(at, "'periodic' must be the first clause").into());
            }
            let value_at = at + (text.len() - value.len());
            period = Some(parse_number(value, value_at)?);
            clause_no += 1;
            continue;
        }
        clause_no += 1;
        let Some(colon) = text.find(':') else {
            return Err(ParseError::new(at, "expected ':' in clause").into());
        };
        let (head, body) = (text[..colon].trim(), &text[colon + 1..]);
        let body_at = at + colon + 1;
        if body.trim().is_empty() {
            return Err(ParseError::new(body_at, "empty expression").into());
        }
        let piece = PieceExpr::new(parse_expr(body, body_at)?, body.trim());
        match head {
            "else" => tail = Some(piece),
            "all" => {
                if !pieces.is_empty() {
                    return Err(ParseError::new(at, "'all' must be the only piece").into());
                }
                all = true;
                tail = Some(piece);
            }
            _ => {
                let Some(bound) = head.strip_prefix('x').and_then(|h| h.trim_start().strip_prefix('<')) else {
                    return Err(ParseError::new(at, "expected 'x<NUMBER', 'else' or 'all'").into());
                };
                let bound_at = at + (head.len() - bound.len());
                let b = parse_number(bound, bound_at)?;
                if let Some(&prev) = breaks.last() {
                    if !(b > prev) {
                        return Err(PiecewiseError::NonIncreasing { clause: clause_no });
                    }
                }
                breaks.push(b);
                pieces.push(piece);
            }
        }
    }

    match tail {
        Some(t) => pieces.push(t),
        None => {
            if pieces.is_empty() {
                return Err(PiecewiseError::Empty);
            }
            if period.is_some() {
                return Err(ParseError::new(spec.len(), "periodic function needs an 'else' piece").into());
            }
            // no 'else': the domain ends at the last breakpoint
            let hi = breaks.pop().unwrap_or(f64::INFINITY);
            return Ok(PiecewiseFunction::new(breaks, pieces, None)?.with_domain(f64::NEG_INFINITY, hi));
        }
    }
    if pieces.is_empty() {
        return Err(PiecewiseError::Empty);
    }
    PiecewiseFunction::new(breaks, pieces, period)
}

fn strip_keyword<'a>(text: &'a str, kw: &str) -> Option<&'a str> {
    let rest = text.strip_prefix(kw)?;
    match rest.chars().next() {
        Some(c) if c.is_ascii_alphanumeric() => None,
        _ => Some(rest),
    }
}
