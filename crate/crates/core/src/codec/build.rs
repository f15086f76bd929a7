use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::doc::{write_doc, ActionDoc, BlockDoc, Culprit, ProblemDoc, StateDoc, Terminal, TraceDoc, Writer};
use super::{CodecError, Encoded, Role, TraceFormat, TreeFormat, RESIDUAL_CLAUSES};
use crate::domains::tree::Move;
use crate::domains::{Instance, Tree};
use crate::search::{Action, DomainAdapter, Engine, Evidence, Outcome, SearchState, StepEvent, Truth};

pub fn problem_doc(inst: &Instance) -> ProblemDoc {
    match inst {
        Instance::Sat(cnf) => ProblemDoc::Clauses(cnf.clauses.clone()),
        Instance::Coloring(g) => ProblemDoc::Graph(g.graph.adj.clone()),
        Instance::Peg(p) => ProblemDoc::Input(p.input.clone()),
    }
}

pub fn state_doc(inst: &Instance, state: &SearchState, format: TraceFormat) -> Result<StateDoc, CodecError> {
    let a = &state.assignment;
    let open = || (0..a.len() as u32).filter(|&v| a[v as usize].is_none());
    Ok(match (inst, format) {
        (Instance::Sat(_), TraceFormat::Enriched) => StateDoc::Values(
            a.iter()
                .enumerate()
                .map(|(v, x)| {
                    let t = match x {
                        None => Truth::Unknown,
                        Some(x) if *x == crate::domains::sat::TRUE => Truth::True,
                        Some(_) => Truth::False,
                    };
                    (v as u32, t)
                })
                .collect(),
        ),
        (Instance::Sat(_), TraceFormat::Stripped) => StateDoc::Open(open().collect()),
        (Instance::Sat(cnf), TraceFormat::ResidualCnf) => {
            let mut r = cnf.residual(a);
            r.truncate(RESIDUAL_CLAUSES);
            StateDoc::Residual(r)
        }
        (Instance::Coloring(_), TraceFormat::Enriched) => {
            StateDoc::Domains(open().map(|v| (v, Some(state.domains[v as usize].len()))).collect())
        }
        (Instance::Coloring(_), TraceFormat::Stripped) => StateDoc::Domains(open().map(|v| (v, None)).collect()),
        (Instance::Peg(p), TraceFormat::Enriched) => match p.evidence(state) {
            Evidence::Parse { cursor, stack } => StateDoc::Parse { cursor, stack },
            _ => StateDoc::Parse { cursor: p.input.len() as u32, stack: Vec::new() },
        },
        (Instance::Coloring(_), TraceFormat::ResidualCnf) => return Err(CodecError::Unsupported("residual-cnf on coloring")),
        (Instance::Peg(_), _) => return Err(CodecError::Unsupported("parse traces have a single format")),
    })
}

fn evidence_doc(inst: &Instance, evidence: Evidence) -> Option<Evidence> {
    matches!(inst, Instance::Sat(_)).then_some(evidence)
}

fn culprit(inst: &Instance, state: &SearchState) -> Culprit {
    match (&state.conflict, inst) {
        (None, _) => Culprit::None,
        (Some(c), Instance::Sat(_)) => Culprit::Clause(c.id),
        (Some(c), Instance::Coloring(_)) => Culprit::Node(c.id),
        (Some(c), Instance::Peg(_)) => Culprit::Cursor(c.id),
    }
}

fn block_doc(inst: &Instance, e: &StepEvent, format: TraceFormat) -> Result<BlockDoc, CodecError> {
    let state = state_doc(inst, &e.state, format)?;
    let evidence = evidence_doc(inst, e.evidence.clone());
    let (action, accepted) = match e.action {
        Action::Branch { var, value } => {
            let action = match inst {
                Instance::Sat(_) => ActionDoc::Assign { var, value },
                Instance::Coloring(c) => {
                    ActionDoc::Color { node: var, available: e.state.domains[var as usize], colors: c.colors, color: value }
                }
                Instance::Peg(_) => ActionDoc::Alt { choice: var, alt: value },
            };
            let accepted = match inst {
                Instance::Sat(_) => {
                    let mut after = e.state.clone();
                    Engine::new(inst)
                        .step(&mut after, e.action, e.origin)
                        .map_err(|_| CodecError::Malformed(format!("event action {:?} is not replayable", e.action)))?;
                    after.trail[e.state.trail.len()..].iter().map(|t| (t.var, t.value)).collect()
                }
                _ => Vec::new(),
            };
            (action, Some(accepted))
        }
        Action::Backtrack => (ActionDoc::Backtrack { culprit: culprit(inst, &e.state), backjump_to: e.backjump_to }, None),
    };
    let terminal = match e.outcome {
        Outcome::Solved => Some(Terminal::Solved),
        Outcome::Failed => Some(Terminal::Failed),
        _ => None,
    };
    Ok(BlockDoc { state, evidence, action, accepted, terminal })
}

pub fn trace_doc(inst: &Instance, events: &[StepEvent], format: TraceFormat, eos: bool) -> Result<TraceDoc, CodecError> {
    let blocks = events.iter().map(|e| block_doc(inst, e, format)).collect::<Result<_, _>>()?;
    Ok(TraceDoc { problem: problem_doc(inst), blocks, eos })
}

/// Full episode: prefix, one block per event, `[EOS]`.
pub fn encode_trace(inst: &Instance, events: &[StepEvent], format: TraceFormat) -> Result<Encoded, CodecError> {
    Ok(write_doc(&trace_doc(inst, events, format, true)?))
}

pub fn encode_prefix(inst: &Instance) -> Encoded {
    write_doc(&TraceDoc { problem: problem_doc(inst), blocks: Vec::new(), eos: false })
}

/// One decision block as emitted in a trace, with the length of its state
/// field (state plus propagation evidence).
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BlockTokens {
    pub tokens: Vec<String>,
    pub roles: Vec<Role>,
    pub state_len: usize,
}

pub fn block_tokens(inst: &Instance, e: &StepEvent, format: TraceFormat) -> Result<BlockTokens, CodecError> {
    let doc = block_doc(inst, e, format)?;
    let mut w = Writer::default();
    w.state(&doc.state, doc.evidence.as_ref());
    let state_len = w.tokens.len();
    w.action(&doc.action);
    w.block_tail(&doc);
    Ok(BlockTokens { tokens: w.tokens, roles: w.roles, state_len })
}

/// State field of the block the infrastructure writes for `state`.
pub fn state_tokens(inst: &Instance, state: &SearchState, format: TraceFormat) -> Result<Vec<String>, CodecError> {
    let doc = state_doc(inst, state, format)?;
    let mut w = Writer::default();
    w.state(&doc, evidence_doc(inst, inst.evidence(state)).as_ref());
    Ok(w.tokens)
}

/// Identity of a search state as the model sees it under state rebuilding:
/// the serialized state field, the conflict flag, and the decision depth.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StateKey {
    pub text: String,
    pub hash: u64,
}

pub fn canonical_key(inst: &Instance, state: &SearchState, format: TraceFormat) -> Result<StateKey, CodecError> {
    let text = format!("{}|{}|{}", state_tokens(inst, state, format)?.join(" "), state.has_conflict() as u8, state.level);
    let hash = crate::rng::fnv1a(text.as_bytes());
    Ok(StateKey { text, hash })
}

/// State field for a traversal positioned at `node` (an index into `tree`)
/// after visiting `visited` (indices, in visit order).
pub fn tree_state(tree: &Tree, parents: &[Option<u32>], node: u32, visited: &[u32], format: TreeFormat) -> StateDoc {
    let label = |i: u32| tree.label[i as usize];
    StateDoc::Tree {
        node: label(node),
        parent: match format {
            TreeFormat::Mid => parents[node as usize].map(label),
            _ => None,
        },
        visited: match format {
            TreeFormat::Verbose => Some(visited.iter().map(|&v| label(v)).collect()),
            _ => None,
        },
    }
}

/// Reference depth-first traversal as a trace; actions carry child labels.
pub fn tree_doc(tree: &Tree, format: TreeFormat) -> TraceDoc {
    let parents = tree.parent();
    let mut cur = 0u32;
    let mut visited = alloc::vec![0u32];
    let mut blocks = Vec::new();
    for m in tree.dfs_moves() {
        let state = tree_state(tree, &parents, cur, &visited, format);
        let action = match m {
            Move::Visit(c) => {
                cur = c;
                visited.push(c);
                ActionDoc::Move(Move::Visit(tree.label[c as usize]))
            }
            Move::Up => {
                cur = parents[cur as usize].unwrap_or(0);
                ActionDoc::Move(Move::Up)
            }
        };
        blocks.push(BlockDoc { state, evidence: None, action, accepted: None, terminal: None });
    }
    // Preorder numbering is what the text form parses back to.
    let canonical = Tree::from_text(&tree.to_text()).expect("text form of a tree parses");
    TraceDoc { problem: ProblemDoc::Tree(canonical), blocks, eos: true }
}
