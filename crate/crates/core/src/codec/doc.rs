//! Structured form of a token trace, with a writer and a parser that are
//! exact inverses of each other.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{mask_token, CodecError, Encoded, Role};
use crate::domains::tree::Move;
use crate::domains::{Lit, PegTok, Tree};
use crate::search::{ClauseVerdict, Evidence, LitVerdict, Truth, Val, ValueSet, Var};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ProblemDoc {
    Clauses(Vec<Vec<Lit>>),
    Graph(Vec<Vec<u32>>),
    Input(Vec<PegTok>),
    Tree(Tree),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StateDoc {
    /// Every variable with its current truth value.
    Values(Vec<(Var, Truth)>),
    /// Unassigned variables with the value field masked.
    Open(Vec<Var>),
    /// Simplified clauses under the current assignment.
    Residual(Vec<(u32, Vec<Lit>)>),
    /// Open nodes with their domain size, or `None` when masked.
    Domains(Vec<(Var, Option<usize>)>),
    Parse { cursor: u32, stack: Vec<u8> },
    Tree { node: u32, parent: Option<u32>, visited: Option<Vec<u32>> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Culprit {
    None,
    Clause(u32),
    Node(u32),
    Cursor(u32),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ActionDoc {
    Assign { var: Var, value: Val },
    Color { node: Var, available: ValueSet, colors: usize, color: Val },
    Alt { choice: Var, alt: Val },
    Backtrack { culprit: Culprit, backjump_to: Option<u32> },
    /// Tree move; `Visit` carries the child's label.
    Move(Move),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Terminal {
    Solved,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockDoc {
    pub state: StateDoc,
    /// `[PROP]` section; present only for SAT blocks.
    pub evidence: Option<Evidence>,
    pub action: ActionDoc,
    /// Assignments accepted by the infrastructure, echoed after `OK`.
    pub accepted: Option<Vec<(Var, Val)>>,
    pub terminal: Option<Terminal>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceDoc {
    pub problem: ProblemDoc,
    pub blocks: Vec<BlockDoc>,
    pub eos: bool,
}

fn truth_tok(t: Truth) -> &'static str {
    match t {
        Truth::True => "T",
        Truth::False => "F",
        Truth::Unknown => "U",
    }
}

fn value_tok(v: Val) -> &'static str {
    if v == crate::domains::sat::TRUE {
        "T"
    } else {
        "F"
    }
}

pub fn lit_tok(l: Lit) -> String {
    format!("{}v{}", if l.positive { '+' } else { '-' }, l.var)
}

fn verdict_tok(v: ClauseVerdict) -> &'static str {
    match v {
        ClauseVerdict::SatOk => "SAT_OK",
        ClauseVerdict::Unit => "UNIT",
        ClauseVerdict::Conflict => "CONFLICT",
    }
}

#[derive(Default)]
pub(crate) struct Writer {
    pub tokens: Vec<String>,
    pub roles: Vec<Role>,
}

impl Writer {
    pub fn push(&mut self, tok: impl Into<String>, role: Role) {
        self.tokens.push(tok.into());
        self.roles.push(role);
    }

    fn clause(&mut self, id: u32, lits: &[Lit], role: Role) {
        self.push(format!("C{id}"), role);
        self.push(":", role);
        for &l in lits {
            self.push(lit_tok(l), role);
        }
        self.push("SEP", role);
    }

    pub fn problem(&mut self, p: &ProblemDoc) {
        let r = Role::Prefix;
        self.push("[BOS]", r);
        match p {
            ProblemDoc::Clauses(cs) => {
                self.push("[CLAUSES]", r);
                for (i, c) in cs.iter().enumerate() {
                    self.clause(i as u32, c, r);
                }
            }
            ProblemDoc::Graph(adj) => {
                self.push("[GRAPH]", r);
                for (i, ns) in adj.iter().enumerate() {
                    self.push(format!("N{i}"), r);
                    self.push(":", r);
                    for n in ns {
                        self.push(format!("N{n}"), r);
                    }
                    self.push("SEP", r);
                }
            }
            ProblemDoc::Input(toks) => {
                self.push("[INPUT]", r);
                for t in toks {
                    self.push(t.text(), r);
                }
            }
            ProblemDoc::Tree(t) => {
                self.push("[TREE]", r);
                for tok in t.to_text().split(' ') {
                    self.push(tok, r);
                }
            }
        }
        self.push("[SEARCH]", r);
    }

    pub fn state(&mut self, s: &StateDoc, evidence: Option<&Evidence>) {
        let r = Role::State;
        self.push("STATE", r);
        match s {
            StateDoc::Values(vs) => {
                for &(v, t) in vs {
                    self.push(format!("v{v}"), r);
                    self.push(truth_tok(t), r);
                }
                self.push("SEP", r);
            }
            StateDoc::Open(vs) => {
                for &v in vs {
                    self.push(format!("v{v}"), r);
                    self.push("?", r);
                }
                self.push("SEP", r);
            }
            StateDoc::Residual(cs) => {
                for (id, lits) in cs {
                    self.clause(*id, lits, r);
                }
            }
            StateDoc::Domains(ds) => {
                for &(v, d) in ds {
                    match d {
                        Some(d) => self.push(format!("DS{d}"), r),
                        None => self.push("?", r),
                    }
                    self.push(format!("N{v}"), r);
                }
                self.push("SEP", r);
            }
            StateDoc::Parse { cursor, stack } => {
                self.push(format!("@{cursor}"), r);
                for &s in stack {
                    self.push(crate::domains::peg::sym::name(s), r);
                }
                self.push("SEP", r);
            }
            StateDoc::Tree { node, parent, visited } => {
                self.push(format!("N{node}"), r);
                if let Some(p) = parent {
                    self.push("P", r);
                    self.push(format!("N{p}"), r);
                }
                if let Some(vs) = visited {
                    self.push("V", r);
                    for v in vs {
                        self.push(format!("N{v}"), r);
                    }
                }
                self.push("SEP", r);
            }
        }
        if let Some(e) = evidence {
            self.push("[PROP]", r);
            match e {
                Evidence::Clause { id, literals, verdict } => {
                    let lits: Vec<Lit> = literals.iter().map(|l| Lit { var: l.var, positive: l.positive }).collect();
                    self.clause(*id, &lits, r);
                    for l in literals {
                        self.push(lit_tok(Lit { var: l.var, positive: l.positive }), r);
                        self.push(truth_tok(l.value), r);
                    }
                    self.push("SEP", r);
                    self.push(verdict_tok(*verdict), r);
                }
                _ => self.push("NONE", r),
            }
            self.push("[/PROP]", r);
        }
    }

    pub fn action(&mut self, a: &ActionDoc) {
        let (m, i) = (Role::Action, Role::Infra);
        match *a {
            ActionDoc::Assign { var, value } => {
                self.push(format!("v{var}"), m);
                self.push(value_tok(value), m);
            }
            ActionDoc::Color { node, available, colors, color } => {
                self.push(format!("N{node}"), m);
                self.push(mask_token(available, colors), i);
                self.push(format!("C{}", color as u32 + 1), m);
            }
            ActionDoc::Alt { choice, alt } => {
                self.push(format!("K{choice}"), i);
                self.push(format!("ALT{alt}"), m);
            }
            ActionDoc::Backtrack { culprit, backjump_to } => {
                self.push("CONFLICT", m);
                self.push(
                    match culprit {
                        Culprit::None => "NONE".to_string(),
                        Culprit::Clause(c) => format!("C{c}"),
                        Culprit::Node(n) => format!("N{n}"),
                        Culprit::Cursor(k) => format!("@{k}"),
                    },
                    i,
                );
                if let Some(l) = backjump_to {
                    self.push("BJ", i);
                    self.push(format!("L{l}"), i);
                }
            }
            ActionDoc::Move(Move::Visit(c)) => self.push(format!("N{c}"), m),
            ActionDoc::Move(Move::Up) => self.push("UP", m),
        }
    }

    pub fn block(&mut self, b: &BlockDoc) {
        self.state(&b.state, b.evidence.as_ref());
        self.action(&b.action);
        self.block_tail(b);
    }

    /// Acceptance echo and terminal marker after the action.
    pub fn block_tail(&mut self, b: &BlockDoc) {
        if let Some(acc) = &b.accepted {
            self.push("OK", Role::Infra);
            for &(v, x) in acc {
                self.push(format!("v{v}"), Role::Infra);
                self.push(value_tok(x), Role::Infra);
            }
        }
        match b.terminal {
            Some(Terminal::Solved) => self.push("SOLVED", Role::Infra),
            Some(Terminal::Failed) => self.push("FAILED", Role::Infra),
            None => {}
        }
    }

    pub fn finish(self) -> Encoded {
        let layout = super::parse_layout(&self.tokens).expect("writer emits well-formed traces");
        Encoded { tokens: self.tokens, roles: self.roles, layout }
    }
}

pub fn write_doc(doc: &TraceDoc) -> Encoded {
    let mut w = Writer::default();
    w.problem(&doc.problem);
    for b in &doc.blocks {
        w.block(b);
    }
    if doc.eos {
        w.push("[EOS]", Role::End);
    }
    w.finish()
}

struct Cursor<'a, S> {
    toks: &'a [S],
    pos: usize,
}

fn malformed(pos: usize, what: &str) -> CodecError {
    CodecError::Malformed(format!("{what} at token {pos}"))
}

impl<'a, S: AsRef<str>> Cursor<'a, S> {
    fn peek(&self) -> Option<&'a str> {
        self.toks.get(self.pos).map(|s| s.as_ref())
    }

    fn next(&mut self) -> Result<&'a str, CodecError> {
        let t = self.peek().ok_or_else(|| malformed(self.pos, "unexpected end"))?;
        self.pos += 1;
        Ok(t)
    }

    fn eat(&mut self, tok: &str) -> bool {
        if self.peek() == Some(tok) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: &str) -> Result<(), CodecError> {
        if self.eat(tok) {
            Ok(())
        } else {
            Err(malformed(self.pos, &format!("expected {tok}")))
        }
    }

    fn indexed(&mut self, prefix: &str) -> Result<u32, CodecError> {
        let pos = self.pos;
        let t = self.next()?;
        t.strip_prefix(prefix).and_then(|s| s.parse().ok()).ok_or_else(|| malformed(pos, &format!("expected {prefix}<index>")))
    }

    fn peek_indexed(&self, prefix: &str) -> bool {
        self.peek().and_then(|t| t.strip_prefix(prefix)).is_some_and(|s| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()))
    }

    fn truth(&mut self) -> Result<Truth, CodecError> {
        match self.next()? {
            "T" => Ok(Truth::True),
            "F" => Ok(Truth::False),
            "U" => Ok(Truth::Unknown),
            _ => Err(malformed(self.pos - 1, "expected truth value")),
        }
    }

    fn value(&mut self) -> Result<Val, CodecError> {
        match self.next()? {
            "T" => Ok(crate::domains::sat::TRUE),
            "F" => Ok(crate::domains::sat::FALSE),
            _ => Err(malformed(self.pos - 1, "expected T or F")),
        }
    }

    fn lit(&mut self) -> Result<Lit, CodecError> {
        let pos = self.pos;
        let t = self.next()?;
        let (positive, rest) = match t.as_bytes().first() {
            Some(b'+') => (true, &t[1..]),
            Some(b'-') => (false, &t[1..]),
            _ => return Err(malformed(pos, "expected literal")),
        };
        let var = rest.strip_prefix('v').and_then(|s| s.parse().ok()).ok_or_else(|| malformed(pos, "expected literal"))?;
        Ok(Lit { var, positive })
    }

    fn clause(&mut self) -> Result<(u32, Vec<Lit>), CodecError> {
        let id = self.indexed("C")?;
        self.expect(":")?;
        let mut lits = Vec::new();
        while !self.eat("SEP") {
            lits.push(self.lit()?);
        }
        Ok((id, lits))
    }
}

fn peg_symbol(t: &str) -> Option<u8> {
    use crate::domains::peg::sym;
    [sym::EXPR, sym::TERM, sym::FACTOR, sym::EXPR_TAIL, sym::TERM_TAIL]
        .into_iter()
        .chain(PegTok::ALL.iter().map(|&p| sym::TOKEN + p as u8))
        .find(|&s| sym::name(s) == t)
}

/// Which state-field grammar the blocks of a trace use.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum StateKind {
    Values,
    Open,
    Residual,
    Domains,
    Parse,
    Tree,
}

fn parse_problem<S: AsRef<str>>(c: &mut Cursor<S>) -> Result<ProblemDoc, CodecError> {
    c.expect("[BOS]")?;
    let pos = c.pos;
    match c.next()? {
        "[CLAUSES]" => {
            let mut cs = Vec::new();
            while c.peek_indexed("C") {
                let (id, lits) = c.clause()?;
                if id as usize != cs.len() {
                    return Err(malformed(c.pos, "clause ids out of order"));
                }
                cs.push(lits);
            }
            c.expect("[SEARCH]")?;
            Ok(ProblemDoc::Clauses(cs))
        }
        "[GRAPH]" => {
            let mut adj = Vec::new();
            while c.peek_indexed("N") {
                let id = c.indexed("N")?;
                if id as usize != adj.len() {
                    return Err(malformed(c.pos, "node ids out of order"));
                }
                c.expect(":")?;
                let mut ns = Vec::new();
                while !c.eat("SEP") {
                    ns.push(c.indexed("N")?);
                }
                adj.push(ns);
            }
            c.expect("[SEARCH]")?;
            Ok(ProblemDoc::Graph(adj))
        }
        "[INPUT]" => {
            let mut toks = Vec::new();
            while !c.eat("[SEARCH]") {
                let pos = c.pos;
                toks.push(PegTok::from_text(c.next()?).ok_or_else(|| malformed(pos, "expected input token"))?);
            }
            Ok(ProblemDoc::Input(toks))
        }
        "[TREE]" => {
            let mut text: Vec<&str> = Vec::new();
            while !c.eat("[SEARCH]") {
                text.push(c.next()?);
            }
            Tree::from_text(&text.join(" ")).map(ProblemDoc::Tree).map_err(|e| CodecError::Malformed(e.to_string()))
        }
        _ => Err(malformed(pos, "expected problem section")),
    }
}

fn parse_state<S: AsRef<str>>(c: &mut Cursor<S>, kind: StateKind) -> Result<StateDoc, CodecError> {
    Ok(match kind {
        StateKind::Values => {
            let mut vs = Vec::new();
            while !c.eat("SEP") {
                let v = c.indexed("v")?;
                vs.push((v, c.truth()?));
            }
            StateDoc::Values(vs)
        }
        StateKind::Open => {
            let mut vs = Vec::new();
            while !c.eat("SEP") {
                vs.push(c.indexed("v")?);
                c.expect("?")?;
            }
            StateDoc::Open(vs)
        }
        StateKind::Residual => {
            let mut cs = Vec::new();
            while c.peek_indexed("C") {
                cs.push(c.clause()?);
            }
            StateDoc::Residual(cs)
        }
        StateKind::Domains => {
            let mut ds = Vec::new();
            while !c.eat("SEP") {
                let d = if c.eat("?") { None } else { Some(c.indexed("DS")? as usize) };
                ds.push((c.indexed("N")?, d));
            }
            StateDoc::Domains(ds)
        }
        StateKind::Parse => {
            let cursor = c.indexed("@")?;
            let mut stack = Vec::new();
            while !c.eat("SEP") {
                let pos = c.pos;
                stack.push(peg_symbol(c.next()?).ok_or_else(|| malformed(pos, "expected grammar symbol"))?);
            }
            StateDoc::Parse { cursor, stack }
        }
        StateKind::Tree => {
            let node = c.indexed("N")?;
            let parent = if c.eat("P") { Some(c.indexed("N")?) } else { None };
            let visited = if c.eat("V") {
                let mut vs = Vec::new();
                while c.peek_indexed("N") {
                    vs.push(c.indexed("N")?);
                }
                Some(vs)
            } else {
                None
            };
            c.expect("SEP")?;
            StateDoc::Tree { node, parent, visited }
        }
    })
}

fn parse_evidence<S: AsRef<str>>(c: &mut Cursor<S>) -> Result<Evidence, CodecError> {
    if c.eat("NONE") {
        c.expect("[/PROP]")?;
        return Ok(Evidence::None);
    }
    let (id, lits) = c.clause()?;
    let mut literals = Vec::new();
    for l in lits {
        let got = c.lit()?;
        if got != l {
            return Err(malformed(c.pos, "evidence literal mismatch"));
        }
        literals.push(LitVerdict { var: l.var, positive: l.positive, value: c.truth()? });
    }
    c.expect("SEP")?;
    let verdict = match c.next()? {
        "SAT_OK" => ClauseVerdict::SatOk,
        "UNIT" => ClauseVerdict::Unit,
        "CONFLICT" => ClauseVerdict::Conflict,
        _ => return Err(malformed(c.pos - 1, "expected verdict")),
    };
    c.expect("[/PROP]")?;
    Ok(Evidence::Clause { id, literals, verdict })
}

fn parse_action<S: AsRef<str>>(c: &mut Cursor<S>, kind: StateKind) -> Result<ActionDoc, CodecError> {
    if c.eat("CONFLICT") {
        let pos = c.pos;
        let t = c.next()?;
        let num = |p: &str| t.strip_prefix(p).and_then(|s| s.parse::<u32>().ok());
        let culprit = if t == "NONE" {
            Culprit::None
        } else if let Some(x) = num("C") {
            Culprit::Clause(x)
        } else if let Some(x) = num("N") {
            Culprit::Node(x)
        } else if let Some(x) = num("@") {
            Culprit::Cursor(x)
        } else {
            return Err(malformed(pos, "expected conflict culprit"));
        };
        let backjump_to = if c.eat("BJ") { Some(c.indexed("L")?) } else { None };
        return Ok(ActionDoc::Backtrack { culprit, backjump_to });
    }
    Ok(match kind {
        StateKind::Values | StateKind::Open | StateKind::Residual => {
            let var = c.indexed("v")?;
            ActionDoc::Assign { var, value: c.value()? }
        }
        StateKind::Domains => {
            let node = c.indexed("N")?;
            let pos = c.pos;
            let bits = c.next()?.strip_prefix('M').ok_or_else(|| malformed(pos, "expected color mask"))?;
            let mut available = ValueSet::EMPTY;
            for (i, b) in bits.bytes().enumerate() {
                match b {
                    b'1' => available.insert(i as Val),
                    b'0' => {}
                    _ => return Err(malformed(pos, "bad color mask")),
                }
            }
            let color = c.indexed("C")?;
            if color == 0 {
                return Err(malformed(c.pos - 1, "colors are 1-indexed"));
            }
            ActionDoc::Color { node, available, colors: bits.len(), color: (color - 1) as Val }
        }
        StateKind::Parse => {
            let choice = c.indexed("K")?;
            ActionDoc::Alt { choice, alt: c.indexed("ALT")? as Val }
        }
        StateKind::Tree => {
            if c.eat("UP") {
                ActionDoc::Move(Move::Up)
            } else {
                ActionDoc::Move(Move::Visit(c.indexed("N")?))
            }
        }
    })
}

/// Decide the state grammar from the first token after `STATE`.
fn state_kind<S: AsRef<str>>(problem: &ProblemDoc, c: &Cursor<S>) -> Result<StateKind, CodecError> {
    Ok(match problem {
        ProblemDoc::Clauses(_) => {
            if c.peek_indexed("C") || c.peek() == Some("[PROP]") {
                StateKind::Residual
            } else {
                let second = c.toks.get(c.pos + 1).map(|s| s.as_ref());
                match (c.peek(), second) {
                    (Some("SEP"), _) => StateKind::Open,
                    (_, Some("?")) => StateKind::Open,
                    _ => StateKind::Values,
                }
            }
        }
        ProblemDoc::Graph(_) => StateKind::Domains,
        ProblemDoc::Input(_) => StateKind::Parse,
        ProblemDoc::Tree(_) => StateKind::Tree,
    })
}

/// Parse a complete or partial trace. A block cut off before its action is
/// rejected; use [`super::parse_layout`] for partial sequences.
pub fn decode<S: AsRef<str>>(tokens: &[S]) -> Result<TraceDoc, CodecError> {
    let mut c = Cursor { toks: tokens, pos: 0 };
    let problem = parse_problem(&mut c)?;
    let mut blocks = Vec::new();
    let mut eos = false;
    while let Some(t) = c.peek() {
        if t == "[EOS]" {
            c.pos += 1;
            eos = true;
            break;
        }
        c.expect("STATE")?;
        let kind = state_kind(&problem, &c)?;
        let state = parse_state(&mut c, kind)?;
        let evidence = if c.eat("[PROP]") { Some(parse_evidence(&mut c)?) } else { None };
        let action = parse_action(&mut c, kind)?;
        let accepted = if c.eat("OK") {
            let mut acc = Vec::new();
            while c.peek_indexed("v") {
                let v = c.indexed("v")?;
                acc.push((v, c.value()?));
            }
            Some(acc)
        } else {
            None
        };
        let terminal = if c.eat("SOLVED") {
            Some(Terminal::Solved)
        } else if c.eat("FAILED") {
            Some(Terminal::Failed)
        } else {
            None
        };
        blocks.push(BlockDoc { state, evidence, action, accepted, terminal });
    }
    if c.pos != tokens.len() {
        return Err(malformed(c.pos, "trailing tokens after [EOS]"));
    }
    Ok(TraceDoc { problem, blocks, eos })
}
