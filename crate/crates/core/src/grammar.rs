//! Parser and canonical serializer for the tagged flow transcript:
//!
//! ```text
//! <analyze>plan</analyze><localize><box>[x1, y1, x2, y2]</box> caption ... </localize>[suffix]
//! ```
//!
//! Tags are case-sensitive and always structural, including inside captions.
//! Coordinates are integers on the `0..=1000` grid. Text after the closing
//! localize tag (thinking and answer blocks) is kept verbatim as an opaque
//! suffix. A transcript without a closing localize tag parses as an
//! unterminated flow.

use std::fmt;

use crate::flow::{
    normalize_roi, relative_coords, PerceptualFlow, PerceptualState, PlanningState,
};

const ANALYZE_OPEN: &str = "<analyze>";
const ANALYZE_CLOSE: &str = "</analyze>";
const LOCALIZE_OPEN: &str = "<localize>";
const LOCALIZE_CLOSE: &str = "</localize>";
const BOX_OPEN: &str = "<box>";
const BOX_CLOSE: &str = "</box>";

const TAGS: [&str; 10] = [
    ANALYZE_OPEN,
    ANALYZE_CLOSE,
    LOCALIZE_OPEN,
    LOCALIZE_CLOSE,
    BOX_OPEN,
    BOX_CLOSE,
    "<thinking>",
    "</thinking>",
    "<answer>",
    "</answer>",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    InvalidUtf8,
    MissingAnalyze,
    UnexpectedText { expected: &'static str },
    UnterminatedBlock(&'static str),
    UnexpectedTag { tag: &'static str, context: &'static str },
    EmptyAnalyze,
    MissingLocalize,
    NestedLocalize,
    RepeatedBlock(&'static str),
    MissingCaption,
    MalformedCoordinates(String),
    CoordinateArity(usize),
    InvalidCoordinates(String),
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use ParseErrorKind::*;
        match self {
            InvalidUtf8 => write!(f, "invalid UTF-8"),
            MissingAnalyze => write!(f, "missing <analyze> block"),
            UnexpectedText { expected } => write!(f, "unexpected text, expected {expected}"),
            UnterminatedBlock(tag) => write!(f, "unterminated {tag} block"),
            UnexpectedTag { tag, context } => write!(f, "unexpected {tag} {context}"),
            EmptyAnalyze => write!(f, "empty <analyze> block"),
            MissingLocalize => write!(f, "missing <localize> block"),
            NestedLocalize => write!(f, "nested <localize> block"),
            RepeatedBlock(tag) => write!(f, "repeated {tag} block"),
            MissingCaption => write!(f, "box without following caption text"),
            MalformedCoordinates(s) => write!(f, "malformed coordinate list: {s}"),
            CoordinateArity(n) => write!(f, "expected 4 coordinates, found {n}"),
            InvalidCoordinates(s) => write!(f, "invalid coordinates: {s}"),
        }
    }
}

/// Parse failure at a byte offset into the input.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("byte {offset}: {kind}")]
pub struct ParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
}

fn err<T>(offset: usize, kind: ParseErrorKind) -> Result<T, ParseError> {
    Err(ParseError { offset, kind })
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        let rest = self.rest();
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn eat(&mut self, tag: &str) -> bool {
        if self.rest().starts_with(tag) {
            self.pos += tag.len();
            true
        } else {
            false
        }
    }

    fn at_end(&self) -> bool {
        self.pos == self.src.len()
    }

    /// Next structural tag at or after the cursor.
    fn next_tag(&self) -> Option<(usize, &'static str)> {
        next_tag(self.src, self.pos)
    }
}

fn next_tag(src: &str, from: usize) -> Option<(usize, &'static str)> {
    let bytes = src.as_bytes();
    let mut i = from;
    while let Some(off) = bytes[i..].iter().position(|&b| b == b'<') {
        let at = i + off;
        if let Some(tag) = TAGS.iter().find(|t| src[at..].starts_with(**t)) {
            return Some((at, tag));
        }
        i = at + 1;
    }
    None
}

pub fn parse_flow_bytes(bytes: &[u8]) -> Result<PerceptualFlow, ParseError> {
    match std::str::from_utf8(bytes) {
        Ok(s) => parse_flow(s),
        Err(e) => err(e.valid_up_to(), ParseErrorKind::InvalidUtf8),
    }
}

pub fn parse_flow(text: &str) -> Result<PerceptualFlow, ParseError> {
    let mut cur = Cursor { src: text, pos: 0 };
    cur.skip_ws();
    if !cur.eat(ANALYZE_OPEN) {
        return if cur.rest().contains(ANALYZE_OPEN) {
            err(
                cur.pos,
                ParseErrorKind::UnexpectedText {
                    expected: ANALYZE_OPEN,
                },
            )
        } else {
            err(cur.pos, ParseErrorKind::MissingAnalyze)
        };
    }

    let plan_start = cur.pos;
    let planning = match cur.next_tag() {
        Some((at, ANALYZE_CLOSE)) => {
            let text = &text[plan_start..at];
            cur.pos = at + ANALYZE_CLOSE.len();
            PlanningState::new(text)
                .map_err(|_| ParseError {
                    offset: plan_start,
                    kind: ParseErrorKind::EmptyAnalyze,
                })?
        }
        Some((at, tag)) => {
            return err(
                at,
                ParseErrorKind::UnexpectedTag {
                    tag,
                    context: "inside <analyze>",
                },
            )
        }
        None => return err(plan_start, ParseErrorKind::UnterminatedBlock(ANALYZE_OPEN)),
    };

    cur.skip_ws();
    if !cur.eat(LOCALIZE_OPEN) {
        return match cur.next_tag() {
            Some((at, ANALYZE_OPEN)) if at == cur.pos => {
                err(at, ParseErrorKind::RepeatedBlock(ANALYZE_OPEN))
            }
            _ if cur.rest().contains(LOCALIZE_OPEN) => err(
                cur.pos,
                ParseErrorKind::UnexpectedText {
                    expected: LOCALIZE_OPEN,
                },
            ),
            _ => err(cur.pos, ParseErrorKind::MissingLocalize),
        };
    }

    let mut states = Vec::new();
    loop {
        cur.skip_ws();
        if cur.at_end() {
            return Ok(PerceptualFlow::new(planning, states, false));
        }
        if cur.eat(LOCALIZE_CLOSE) {
            let suffix = &text[cur.pos..];
            check_suffix(text, cur.pos)?;
            let mut flow = PerceptualFlow::new(planning, states, true);
            flow.suffix = suffix.to_string();
            return Ok(flow);
        }
        let here = cur.pos;
        if !cur.eat(BOX_OPEN) {
            return match cur.next_tag() {
                Some((at, tag)) if at == here => err(at, unexpected_in_localize(tag)),
                _ => err(
                    here,
                    ParseErrorKind::UnexpectedText {
                        expected: "<box> or </localize>",
                    },
                ),
            };
        }
        states.push(parse_state(&mut cur)?);
    }
}

fn unexpected_in_localize(tag: &'static str) -> ParseErrorKind {
    match tag {
        LOCALIZE_OPEN => ParseErrorKind::NestedLocalize,
        ANALYZE_OPEN => ParseErrorKind::RepeatedBlock(ANALYZE_OPEN),
        _ => ParseErrorKind::UnexpectedTag {
            tag,
            context: "inside <localize>",
        },
    }
}

/// Parses `[..]</box> caption` after an opening box tag.
fn parse_state(cur: &mut Cursor<'_>) -> Result<PerceptualState, ParseError> {
    let coord_start = cur.pos;
    let coord_end = match cur.next_tag() {
        Some((at, BOX_CLOSE)) => at,
        Some((at, tag)) => {
            return err(
                at,
                ParseErrorKind::UnexpectedTag {
                    tag,
                    context: "inside <box>",
                },
            )
        }
        None => return err(coord_start, ParseErrorKind::UnterminatedBlock(BOX_OPEN)),
    };
    let roi = parse_coords(&cur.src[coord_start..coord_end], coord_start)?;
    cur.pos = coord_end + BOX_CLOSE.len();

    let cap_start = cur.pos;
    let cap_end = cur.next_tag().map_or(cur.src.len(), |(at, _)| at);
    let caption = cur.src[cap_start..cap_end].trim();
    if caption.is_empty() {
        return err(cap_start, ParseErrorKind::MissingCaption);
    }
    cur.pos = cap_end;
    Ok(PerceptualState {
        roi,
        caption: caption.to_string(),
    })
}

fn parse_coords(raw: &str, offset: usize) -> Result<crate::geometry::RoiBox, ParseError> {
    let malformed = |why: &str| ParseError {
        offset,
        kind: ParseErrorKind::MalformedCoordinates(why.to_string()),
    };
    let inner = raw
        .trim()
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| malformed("expected [x1, y1, x2, y2]"))?;
    let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        let n = if inner.trim().is_empty() { 0 } else { parts.len() };
        return err(offset, ParseErrorKind::CoordinateArity(n));
    }
    let mut rel = [0i64; 4];
    for (slot, part) in rel.iter_mut().zip(&parts) {
        if part.is_empty() || !part.bytes().all(|b| b.is_ascii_digit()) {
            return Err(malformed(&format!("non-integer coordinate {part:?}")));
        }
        *slot = part
            .parse()
            .map_err(|_| malformed(&format!("coordinate {part:?} too large")))?;
    }
    normalize_roi(rel).map_err(|e| ParseError {
        offset,
        kind: ParseErrorKind::InvalidCoordinates(e.to_string()),
    })
}

fn check_suffix(src: &str, from: usize) -> Result<(), ParseError> {
    let mut pos = from;
    while let Some((at, tag)) = next_tag(src, pos) {
        match tag {
            LOCALIZE_OPEN | LOCALIZE_CLOSE => {
                return err(at, ParseErrorKind::RepeatedBlock(LOCALIZE_OPEN))
            }
            ANALYZE_OPEN | ANALYZE_CLOSE => {
                return err(at, ParseErrorKind::RepeatedBlock(ANALYZE_OPEN))
            }
            _ => pos = at + tag.len(),
        }
    }
    Ok(())
}

/// Canonical text form. Coordinates are re-scaled to the integer grid with
/// round-half-up, so flows whose boxes lie on the grid round-trip exactly.
pub fn serialize_flow(flow: &PerceptualFlow) -> String {
    let mut out = String::new();
    out.push_str(ANALYZE_OPEN);
    out.push_str(flow.planning.text());
    out.push_str(ANALYZE_CLOSE);
    out.push_str(LOCALIZE_OPEN);
    for s in &flow.states {
        let [x1, y1, x2, y2] = relative_coords(&s.roi);
        out.push_str(&format!(
            "{BOX_OPEN}[{x1}, {y1}, {x2}, {y2}]{BOX_CLOSE} {} ",
            s.caption
        ));
    }
    if flow.terminated {
        out.push_str(LOCALIZE_CLOSE);
        out.push_str(&flow.suffix);
    }
    out
}
