//! System-aware reasoning traces.
//!
//! A response interleaves a think span and an answer span. Inside the think
//! span, content may be wrapped in fast or slow thinking tags:
//!
//! ```text
//! <think><slow_think>a b</slow_think><fast_think>c</fast_think></think><answer>d</answer>
//! ```
//!
//! Parsing never fails. Anything the grammar does not allow sets
//! [`Trace::malformed`] and the parser continues with a best-effort reading.

use std::collections::HashMap;
use std::fmt;
use std::ops::Range;

/// The eight reserved framing tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Marker {
    ThinkOpen,
    ThinkClose,
    AnswerOpen,
    AnswerClose,
    FastOpen,
    FastClose,
    SlowOpen,
    SlowClose,
}

impl Marker {
    pub const ALL: [Marker; 8] = [
        Marker::ThinkOpen,
        Marker::ThinkClose,
        Marker::AnswerOpen,
        Marker::AnswerClose,
        Marker::FastOpen,
        Marker::FastClose,
        Marker::SlowOpen,
        Marker::SlowClose,
    ];

    /// Canonical wire string.
    pub fn as_str(self) -> &'static str {
        match self {
            Marker::ThinkOpen => "<think>",
            Marker::ThinkClose => "</think>",
            Marker::AnswerOpen => "<answer>",
            Marker::AnswerClose => "</answer>",
            Marker::FastOpen => "<fast_think>",
            Marker::FastClose => "</fast_think>",
            Marker::SlowOpen => "<slow_think>",
            Marker::SlowClose => "</slow_think>",
        }
    }

    /// Position of this marker in [`Marker::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }

    fn system_mode(self) -> Option<(Mode, bool)> {
        match self {
            Marker::FastOpen => Some((Mode::Fast, true)),
            Marker::FastClose => Some((Mode::Fast, false)),
            Marker::SlowOpen => Some((Mode::Slow, true)),
            Marker::SlowClose => Some((Mode::Slow, false)),
            _ => None,
        }
    }
}

impl fmt::Display for Marker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One response token: either a reserved marker or a content symbol.
///
/// Content symbols are opaque ids; a [`SymbolTable`] maps them to text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Token {
    Marker(Marker),
    Content(u32),
}

impl Token {
    pub const THINK_OPEN: Token = Token::Marker(Marker::ThinkOpen);
    pub const THINK_CLOSE: Token = Token::Marker(Marker::ThinkClose);
    pub const ANSWER_OPEN: Token = Token::Marker(Marker::AnswerOpen);
    pub const ANSWER_CLOSE: Token = Token::Marker(Marker::AnswerClose);
    pub const FAST_OPEN: Token = Token::Marker(Marker::FastOpen);
    pub const FAST_CLOSE: Token = Token::Marker(Marker::FastClose);
    pub const SLOW_OPEN: Token = Token::Marker(Marker::SlowOpen);
    pub const SLOW_CLOSE: Token = Token::Marker(Marker::SlowClose);

    pub fn is_marker(self) -> bool {
        matches!(self, Token::Marker(_))
    }

    /// Dense vocabulary index: markers first, then content ids.
    pub fn vocab_index(self) -> usize {
        match self {
            Token::Marker(m) => m.index(),
            Token::Content(c) => Marker::ALL.len() + c as usize,
        }
    }

    /// Inverse of [`Token::vocab_index`].
    pub fn from_vocab_index(index: usize) -> Token {
        if index < Marker::ALL.len() {
            Token::Marker(Marker::ALL[index])
        } else {
            Token::Content((index - Marker::ALL.len()) as u32)
        }
    }
}

/// Thinking mode of a segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Fast,
    Slow,
    Untagged,
}

/// A run of content positions sharing one mode. Spans never include tags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub mode: Mode,
    pub span: Range<usize>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.span.len()
    }

    pub fn is_empty(&self) -> bool {
        self.span.is_empty()
    }
}

/// A parsed response.
///
/// `think_span` and `answer_span` cover the positions strictly between their
/// open and close tags.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Trace {
    pub tokens: Vec<Token>,
    pub think_span: Option<Range<usize>>,
    pub answer_span: Option<Range<usize>>,
    pub segments: Vec<Segment>,
    pub malformed: bool,
}

impl Trace {
    /// Number of slow segments, the unit of deliberate reasoning steps.
    pub fn slow_segments(&self) -> usize {
        self.segments.iter().filter(|s| s.mode == Mode::Slow).count()
    }

    /// Content tokens inside the answer span.
    pub fn answer_content(&self) -> impl Iterator<Item = u32> + '_ {
        let span = self.answer_span.clone().unwrap_or(0..0);
        self.tokens[span].iter().filter_map(|t| match t {
            Token::Content(c) => Some(*c),
            Token::Marker(_) => None,
        })
    }

    /// The single answer symbol, if the answer span holds exactly one.
    pub fn answer_symbol(&self) -> Option<u32> {
        let mut it = self.answer_content();
        match (it.next(), it.next()) {
            (Some(a), None) => Some(a),
            _ => None,
        }
    }
}

/// Length and mode-ratio summary of a trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceStats {
    /// Every token of the response, markers included.
    pub total_len: usize,
    /// Content tokens inside the think span.
    pub think_len: usize,
    pub fast_tokens: usize,
    pub slow_tokens: usize,
    pub rho_fast: f64,
    pub rho_slow: f64,
}

#[derive(Clone, Copy)]
enum Phase {
    BeforeThink,
    InThink,
    AfterThink,
    InAnswer,
    AfterAnswer,
}

struct ThinkScanner {
    segments: Vec<Segment>,
    open: Option<(Mode, usize)>,
    untagged_start: Option<usize>,
}

impl ThinkScanner {
    fn new() -> Self {
        ThinkScanner {
            segments: Vec::new(),
            open: None,
            untagged_start: None,
        }
    }

    fn content(&mut self, i: usize) {
        if self.open.is_none() && self.untagged_start.is_none() {
            self.untagged_start = Some(i);
        }
    }

    fn end_untagged(&mut self, i: usize) {
        if let Some(start) = self.untagged_start.take() {
            self.segments.push(Segment {
                mode: Mode::Untagged,
                span: start..i,
            });
        }
    }

    /// Skips a tag at position `i` that carries no meaning. An open segment is
    /// split around it so that spans stay tag-free.
    fn skip_tag(&mut self, i: usize) {
        self.end_untagged(i);
        if let Some((mode, start)) = self.open {
            if start < i {
                self.segments.push(Segment {
                    mode,
                    span: start..i,
                });
            }
            self.open = Some((mode, i + 1));
        }
    }

    fn close_open(&mut self, i: usize) -> bool {
        match self.open.take() {
            Some((mode, start)) => {
                self.segments.push(Segment {
                    mode,
                    span: start..i,
                });
                true
            }
            None => false,
        }
    }
}

/// Parses a token sequence. Never fails; see [`Trace::malformed`].
pub fn parse_trace(tokens: &[Token]) -> Trace {
    let mut malformed = false;
    let mut phase = Phase::BeforeThink;
    let mut think_start = 0;
    let mut think_span = None;
    let mut answer_start = 0;
    let mut answer_span = None;
    let mut scan = ThinkScanner::new();

    for (i, &tok) in tokens.iter().enumerate() {
        match phase {
            Phase::BeforeThink => match tok {
                Token::THINK_OPEN => {
                    think_start = i + 1;
                    phase = Phase::InThink;
                }
                Token::ANSWER_OPEN => {
                    malformed = true;
                    answer_start = i + 1;
                    phase = Phase::InAnswer;
                }
                _ => malformed = true,
            },
            Phase::InThink => match tok {
                Token::Content(_) => scan.content(i),
                Token::THINK_CLOSE => {
                    if scan.close_open(i) {
                        malformed = true;
                    }
                    scan.end_untagged(i);
                    think_span = Some(think_start..i);
                    phase = Phase::AfterThink;
                }
                Token::Marker(m) => match m.system_mode() {
                    Some((mode, true)) => {
                        if scan.open.is_some() {
                            malformed = true;
                            scan.skip_tag(i);
                        } else {
                            scan.end_untagged(i);
                            scan.open = Some((mode, i + 1));
                        }
                    }
                    Some((mode, false)) => match scan.open {
                        Some((open_mode, _)) if open_mode == mode => {
                            scan.close_open(i);
                        }
                        _ => {
                            malformed = true;
                            scan.skip_tag(i);
                        }
                    },
                    None => {
                        malformed = true;
                        scan.skip_tag(i);
                    }
                },
            },
            Phase::AfterThink => match tok {
                Token::ANSWER_OPEN => {
                    answer_start = i + 1;
                    phase = Phase::InAnswer;
                }
                _ => malformed = true,
            },
            Phase::InAnswer => match tok {
                Token::ANSWER_CLOSE => {
                    answer_span = Some(answer_start..i);
                    phase = Phase::AfterAnswer;
                }
                Token::Content(_) => {}
                Token::Marker(_) => malformed = true,
            },
            Phase::AfterAnswer => malformed = true,
        }
    }

    let end = tokens.len();
    match phase {
        Phase::BeforeThink | Phase::AfterThink => malformed = true,
        Phase::InThink => {
            malformed = true;
            scan.close_open(end);
            scan.end_untagged(end);
            think_span = Some(think_start..end);
        }
        Phase::InAnswer => {
            malformed = true;
            answer_span = Some(answer_start..end);
        }
        Phase::AfterAnswer => {}
    }
    if think_span.is_none() {
        malformed = true;
    }

    Trace {
        tokens: tokens.to_vec(),
        think_span,
        answer_span,
        segments: scan.segments,
        malformed,
    }
}

/// Counts and ratios of a parsed trace.
pub fn trace_stats(trace: &Trace) -> TraceStats {
    let mut fast = 0;
    let mut slow = 0;
    let mut think = 0;
    for seg in &trace.segments {
        think += seg.len();
        match seg.mode {
            Mode::Fast => fast += seg.len(),
            Mode::Slow => slow += seg.len(),
            Mode::Untagged => {}
        }
    }
    let (rho_fast, rho_slow) = if think > 0 {
        (fast as f64 / think as f64, slow as f64 / think as f64)
    } else {
        (0.0, 0.0)
    };
    TraceStats {
        total_len: trace.tokens.len(),
        think_len: think,
        fast_tokens: fast,
        slow_tokens: slow,
        rho_fast,
        rho_slow,
    }
}

/// Bidirectional mapping between content ids and their text.
#[derive(Debug, Clone, Default)]
pub struct SymbolTable {
    names: Vec<String>,
    ids: HashMap<String, u32>,
}

impl SymbolTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Table pre-seeded with `c0 .. c{count-1}`.
    pub fn numbered(count: usize) -> Self {
        let mut table = Self::new();
        for i in 0..count {
            table.intern(&format!("c{i}"));
        }
        table
    }

    pub fn intern(&mut self, word: &str) -> u32 {
        if let Some(&id) = self.ids.get(word) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(word.to_owned());
        self.ids.insert(word.to_owned(), id);
        id
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Splits text on whitespace and tag boundaries. Words that are not one of
/// the eight tag strings become content tokens, interned in `symbols`.
pub fn lex(text: &str, symbols: &mut SymbolTable) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut rest = text;
    'outer: while !rest.is_empty() {
        let trimmed = rest.trim_start();
        if trimmed.is_empty() {
            break;
        }
        rest = trimmed;
        if rest.starts_with('<') {
            for m in Marker::ALL {
                if let Some(after) = rest.strip_prefix(m.as_str()) {
                    tokens.push(Token::Marker(m));
                    rest = after;
                    continue 'outer;
                }
            }
        }
        // A word runs to the next whitespace or to a '<' past its first byte.
        let first = rest.chars().next().map_or(0, char::len_utf8);
        let stop = rest[first..]
            .find(|c: char| c.is_whitespace() || c == '<')
            .map_or(rest.len(), |p| p + first);
        tokens.push(Token::Content(symbols.intern(&rest[..stop])));
        rest = &rest[stop..];
    }
    tokens
}

/// Canonical text form. Tags are written without surrounding spaces and
/// adjacent content words are joined by one space. Content ids missing from
/// `symbols` render as `c{id}`.
pub fn render_trace(trace: &Trace, symbols: &SymbolTable) -> String {
    render_tokens(&trace.tokens, symbols)
}

pub fn render_tokens(tokens: &[Token], symbols: &SymbolTable) -> String {
    let mut out = String::new();
    let mut prev_content = false;
    for tok in tokens {
        match tok {
            Token::Marker(m) => {
                out.push_str(m.as_str());
                prev_content = false;
            }
            Token::Content(c) => {
                if prev_content {
                    out.push(' ');
                }
                match symbols.name(*c) {
                    Some(name) => out.push_str(name),
                    None => {
                        use fmt::Write;
                        let _ = write!(out, "c{c}");
                    }
                }
                prev_content = true;
            }
        }
    }
    out
}
