use super::{DslError, Program, ProgramNode, QuestionType, Relation};
use crate::vocab::{ConceptKind, ConceptVocabulary};

#[derive(Debug, Clone, PartialEq)]
enum Tok<'a> {
    Ident(&'a str),
    Open,
    Close,
    Comma,
}

fn tokenize(text: &str) -> Result<Vec<(usize, Tok<'_>)>, DslError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        match b {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'(' => {
                out.push((i, Tok::Open));
                i += 1;
            }
            b')' => {
                out.push((i, Tok::Close));
                i += 1;
            }
            b',' => {
                out.push((i, Tok::Comma));
                i += 1;
            }
            b if b.is_ascii_alphanumeric() || b == b'_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((start, Tok::Ident(&text[start..i])));
            }
            _ => {
                return Err(DslError::Syntax { pos: i, msg: format!("unexpected character {:?}", text[i..].chars().next()) })
            }
        }
    }
    Ok(out)
}

struct Parser<'a, 'v> {
    toks: Vec<(usize, Tok<'a>)>,
    pos: usize,
    end: usize,
    vocab: &'v ConceptVocabulary,
}

impl<'a, 'v> Parser<'a, 'v> {
    fn here(&self) -> usize {
        self.toks.get(self.pos).map(|t| t.0).unwrap_or(self.end)
    }

    fn next(&mut self) -> Option<Tok<'a>> {
        let t = self.toks.get(self.pos).map(|t| t.1.clone());
        self.pos += 1;
        t
    }

    fn peek(&self) -> Option<&Tok<'a>> {
        self.toks.get(self.pos).map(|t| &t.1)
    }

    fn syntax<T>(&self, msg: impl Into<String>) -> Result<T, DslError> {
        Err(DslError::Syntax { pos: self.here(), msg: msg.into() })
    }

    fn expect(&mut self, want: Tok<'static>, what: &str) -> Result<(), DslError> {
        let pos = self.here();
        match self.next() {
            Some(t) if t == want => Ok(()),
            Some(t) => Err(DslError::Syntax { pos, msg: format!("expected {what}, found {t:?}") }),
            None => Err(DslError::Syntax { pos, msg: format!("expected {what}, found end of input") }),
        }
    }

    fn ident(&mut self, what: &str) -> Result<&'a str, DslError> {
        let pos = self.here();
        match self.next() {
            Some(Tok::Ident(s)) => Ok(s),
            Some(t) => Err(DslError::Syntax { pos, msg: format!("expected {what}, found {t:?}") }),
            None => Err(DslError::Syntax { pos, msg: format!("expected {what}, found end of input") }),
        }
    }

    /// Parses comma-separated call arguments up to and including `)`.
    fn args(&mut self) -> Result<Vec<ProgramNode>, DslError> {
        let mut args = Vec::new();
        if self.peek() == Some(&Tok::Close) {
            self.next();
            return Ok(args);
        }
        loop {
            args.push(self.expr()?);
            match self.next() {
                Some(Tok::Comma) => continue,
                Some(Tok::Close) => return Ok(args),
                _ => return self.syntax("expected `,` or `)` in argument list"),
            }
        }
    }

    fn concept_arg(&mut self, kind: Option<ConceptKind>, func: &str) -> Result<ProgramNode, DslError> {
        if self.peek() == Some(&Tok::Close) {
            return Err(DslError::Arity(format!("{func} takes one concept")));
        }
        let label = self.ident("concept label")?;
        if self.peek() == Some(&Tok::Comma) {
            return Err(DslError::Arity(format!("{func} takes one concept")));
        }
        self.expect(Tok::Close, "`)`")?;
        let concept = match kind {
            Some(k) => self.vocab.concept(k, label).ok_or_else(|| DslError::UnknownConcept(label.to_string()))?,
            None => {
                let kinds = self.vocab.kinds_of(label);
                match kinds.as_slice() {
                    [] => return Err(DslError::UnknownConcept(label.to_string())),
                    [k] => self.vocab.concept(*k, label).expect("kind lookup agrees"),
                    _ => return Err(DslError::AmbiguousConcept { label: label.to_string(), kinds }),
                }
            }
        };
        Ok(ProgramNode::filter(concept))
    }

    fn expr(&mut self) -> Result<ProgramNode, DslError> {
        let start = self.here();
        let func = self.ident("function name")?;
        self.expect(Tok::Open, "`(`")?;
        match func {
            "filter" => self.concept_arg(None, func),
            "filter_action" => self.concept_arg(Some(ConceptKind::Action), func),
            "filter_direction" => self.concept_arg(Some(ConceptKind::Direction), func),
            "filter_body_part" | "filter_bodypart" => self.concept_arg(Some(ConceptKind::BodyPart), func),
            "relate" => {
                let rel_pos = self.here();
                let name = self.ident("relation")?;
                let relation = Relation::from_name(name)
                    .ok_or_else(|| DslError::Syntax { pos: rel_pos, msg: format!("unknown relation `{name}`") })?;
                let args = match self.next() {
                    Some(Tok::Comma) => self.args()?,
                    Some(Tok::Close) => Vec::new(),
                    _ => return self.syntax("expected `,` after relation"),
                };
                if args.len() != relation.arity() {
                    return Err(DslError::Arity(format!(
                        "relate({relation}) takes {} argument(s), got {}",
                        relation.arity(),
                        args.len()
                    )));
                }
                Ok(ProgramNode::Relate(relation, args))
            }
            other => match QuestionType::from_name(other) {
                Some(qtype) => {
                    let mut args = self.args()?;
                    if args.len() != 1 {
                        return Err(DslError::Arity(format!("{other} takes one argument, got {}", args.len())));
                    }
                    Ok(ProgramNode::query(qtype, args.remove(0)))
                }
                None => Err(DslError::Syntax { pos: start, msg: format!("unknown function `{other}`") }),
            },
        }
    }
}

/// Parses program text. Accepts bare `filter(x)` and resolves it by
/// vocabulary lookup; the result always carries typed filters.
pub fn parse_program(text: &str, vocab: &ConceptVocabulary) -> Result<Program, DslError> {
    if text.trim().is_empty() {
        return Err(DslError::Syntax { pos: 0, msg: "empty program".into() });
    }
    let toks = tokenize(text)?;
    let mut parser = Parser { toks, pos: 0, end: text.len(), vocab };
    let root = parser.expr()?;
    if parser.pos < parser.toks.len() {
        return parser.syntax("trailing input after program");
    }
    Program::new(root)
}
