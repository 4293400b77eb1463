//! Parser for the textual IR.
//!
//! ```text
//! data 4096 "0a0b0c"                    # raw hex bytes
//! data 8192 i64 1, 2, -3                 # typed little-endian words
//! extern func @print(%v: i64) -> void
//! func @main() -> i64 {
//! entry:
//!   %a = const i64 7
//!   %b = add i64 %a, %a
//!   ret %b
//! }
//! ```
//!
//! Whitespace (including newlines) only separates tokens; `#` starts a comment
//! running to the end of the line.

use std::collections::HashMap;

use super::validate::{validate_located, Located};
use super::{
    BinOp, Block, BlockId, CastOp, CmpPred, DataSegment, ExtMode, FuncId, Function, Instr,
    IrError, Op, Origin, Program, RecoveryMode, ScalarKind, ScalarType, Site, Tag, Type,
    ValueDef, ValueId, Widening,
};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Local(String),
    Global(String),
    Word(String),
    Num(String),
    Str(String),
    Annot(String),
    Arrow,
    Punct(char),
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn syntax(line: usize, col: usize, msg: impl Into<String>) -> IrError {
    IrError::Syntax { line, col, msg: msg.into() }
}

fn is_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.'
}

fn lex(src: &str) -> Result<Vec<Token>, IrError> {
    let chars: Vec<char> = src.chars().collect();
    let mut toks = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    while i < chars.len() {
        let c = chars[i];
        let (tl, tc) = (line, col);
        let advance = |n: usize, i: &mut usize, col: &mut usize| {
            *i += n;
            *col += n;
        };
        match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => advance(1, &mut i, &mut col),
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '%' | '@' | '!' => {
                let start = i + 1;
                let mut j = start;
                while j < chars.len() && (is_name_char(chars[j]) || (c == '!' && chars[j] == ':')) {
                    j += 1;
                }
                if j == start {
                    return Err(syntax(tl, tc, format!("expected a name after '{c}'")));
                }
                let text: String = chars[start..j].iter().collect();
                let tok = match c {
                    '%' => Tok::Local(text),
                    '@' => Tok::Global(text),
                    _ => Tok::Annot(text),
                };
                toks.push(Token { tok, line: tl, col: tc });
                let n = j - i;
                advance(n, &mut i, &mut col);
            }
            '"' => {
                let mut j = i + 1;
                while j < chars.len() && chars[j] != '"' && chars[j] != '\n' {
                    j += 1;
                }
                if j >= chars.len() || chars[j] != '"' {
                    return Err(syntax(tl, tc, "unterminated string"));
                }
                let text: String = chars[i + 1..j].iter().collect();
                toks.push(Token { tok: Tok::Str(text), line: tl, col: tc });
                let n = j + 1 - i;
                advance(n, &mut i, &mut col);
            }
            '-' if chars.get(i + 1) == Some(&'>') => {
                toks.push(Token { tok: Tok::Arrow, line: tl, col: tc });
                advance(2, &mut i, &mut col);
            }
            c if c.is_ascii_digit()
                || ((c == '-' || c == '+')
                    && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit() || *d == 'i')) =>
            {
                let mut j = i + 1;
                while j < chars.len() {
                    let d = chars[j];
                    let exp_sign = (d == '-' || d == '+') && matches!(chars[j - 1], 'e' | 'E')
                        && !chars[i..j].contains(&'x');
                    if d.is_ascii_alphanumeric() || d == '.' || exp_sign {
                        j += 1;
                    } else {
                        break;
                    }
                }
                let text: String = chars[i..j].iter().collect();
                toks.push(Token { tok: Tok::Num(text), line: tl, col: tc });
                let n = j - i;
                advance(n, &mut i, &mut col);
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut j = i;
                while j < chars.len() && is_name_char(chars[j]) {
                    j += 1;
                }
                let text: String = chars[i..j].iter().collect();
                toks.push(Token { tok: Tok::Word(text), line: tl, col: tc });
                let n = j - i;
                advance(n, &mut i, &mut col);
            }
            '(' | ')' | '{' | '}' | '[' | ']' | ',' | ':' | '=' | '<' | '>' => {
                toks.push(Token { tok: Tok::Punct(c), line: tl, col: tc });
                advance(1, &mut i, &mut col);
            }
            other => return Err(syntax(tl, tc, format!("unexpected character '{other}'"))),
        }
    }
    Ok(toks)
}

// Unresolved syntax tree.

#[derive(Clone, Debug)]
struct RawInstr {
    result: Option<String>,
    opcode: String,
    pred: Option<CmpPred>,
    ty: Option<Type>,
    operands: Vec<String>,
    imm: Option<String>,
    labels: Vec<String>,
    incoming: Vec<(String, String)>,
    callee: Option<String>,
    origin: Origin,
    widened: Option<Widening>,
    line: usize,
    col: usize,
}

#[derive(Clone, Debug)]
struct RawBlock {
    label: String,
    instrs: Vec<RawInstr>,
    line: usize,
    col: usize,
}

#[derive(Clone, Debug)]
struct RawFunc {
    name: String,
    params: Vec<(String, Type, Option<Widening>)>,
    ret: Option<Type>,
    blocks: Vec<RawBlock>,
    is_extern: bool,
    line: usize,
    col: usize,
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    eof: (usize, usize),
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn peek_at(&self, n: usize) -> Option<&Tok> {
        self.toks.get(self.pos + n).map(|t| &t.tok)
    }

    fn here(&self) -> (usize, usize) {
        self.toks.get(self.pos).map(|t| (t.line, t.col)).unwrap_or(self.eof)
    }

    fn err(&self, msg: impl Into<String>) -> IrError {
        let (l, c) = self.here();
        syntax(l, c, msg)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.tok.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect_punct(&mut self, c: char) -> Result<(), IrError> {
        match self.peek() {
            Some(Tok::Punct(p)) if *p == c => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.err(format!("expected '{c}'"))),
        }
    }

    fn eat_punct(&mut self, c: char) -> bool {
        if matches!(self.peek(), Some(Tok::Punct(p)) if *p == c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_word(&mut self, w: &str) -> Result<(), IrError> {
        match self.peek() {
            Some(Tok::Word(x)) if x == w => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.err(format!("expected '{w}'"))),
        }
    }

    fn local(&mut self) -> Result<String, IrError> {
        match self.peek() {
            Some(Tok::Local(n)) => {
                let n = n.clone();
                self.pos += 1;
                Ok(n)
            }
            _ => Err(self.err("expected a %value")),
        }
    }

    fn global(&mut self) -> Result<String, IrError> {
        match self.peek() {
            Some(Tok::Global(n)) => {
                let n = n.clone();
                self.pos += 1;
                Ok(n)
            }
            _ => Err(self.err("expected an @name")),
        }
    }

    fn num(&mut self) -> Result<String, IrError> {
        match self.peek() {
            Some(Tok::Num(n)) => {
                let n = n.clone();
                self.pos += 1;
                Ok(n)
            }
            Some(Tok::Word(w)) if w == "inf" || w == "nan" => {
                let n = w.clone();
                self.pos += 1;
                Ok(n)
            }
            _ => Err(self.err("expected a number")),
        }
    }

    fn scalar_type_word(&self, w: &str) -> Result<ScalarType, IrError> {
        let (kind, digits) = match w.split_at(1) {
            ("i", d) => (ScalarKind::Int, d),
            ("f", d) => (ScalarKind::Float, d),
            _ => return Err(self.err(format!("unknown type '{w}'"))),
        };
        let bits: u8 = digits
            .parse()
            .ok()
            .filter(|b| (1..=64).contains(b))
            .ok_or_else(|| self.err(format!("unknown type '{w}'")))?;
        if kind == ScalarKind::Float && bits != 32 && bits != 64 {
            return Err(self.err(format!("unsupported float type '{w}'")));
        }
        Ok(ScalarType { kind, bits })
    }

    fn ty(&mut self) -> Result<Type, IrError> {
        match self.peek().cloned() {
            Some(Tok::Word(w)) => {
                let t = self.scalar_type_word(&w)?;
                self.pos += 1;
                Ok(Type::Scalar(t))
            }
            Some(Tok::Punct('<')) => {
                self.pos += 1;
                let n = self.num()?;
                self.expect_word("x")?;
                let w = match self.next() {
                    Some(Tok::Word(w)) => w,
                    _ => return Err(self.err("expected an element type")),
                };
                let elem = self.scalar_type_word(&w)?;
                self.expect_punct('>')?;
                let t = Type::Vector(elem);
                if !elem.is_canonical() || n.parse::<usize>().ok() != Some(t.lanes()) {
                    return Err(self.err(format!(
                        "vector type <{n} x {w}> does not fill a 256-bit register"
                    )));
                }
                Ok(t)
            }
            _ => Err(self.err("expected a type")),
        }
    }

    fn ret_type(&mut self) -> Result<Option<Type>, IrError> {
        if matches!(self.peek(), Some(Tok::Word(w)) if w == "void") {
            self.pos += 1;
            Ok(None)
        } else {
            self.ty().map(Some)
        }
    }

    fn annotations(&mut self) -> Result<(Origin, Option<Widening>), IrError> {
        let mut origin = Origin::ORIGINAL;
        let mut widened = None;
        while let Some(Tok::Annot(a)) = self.peek().cloned() {
            if let Some(rest) = a.strip_prefix("widened:") {
                widened = Some(self.parse_widening(rest)?);
            } else {
                origin = self.parse_origin(&a)?;
            }
            self.pos += 1;
        }
        Ok((origin, widened))
    }

    fn parse_widening(&self, s: &str) -> Result<Widening, IrError> {
        let mut parts = s.split(':');
        let from = parts
            .next()
            .and_then(|w| w.strip_prefix('i'))
            .and_then(|d| d.parse::<u8>().ok())
            .filter(|b| (1..=64).contains(b));
        let mode = match parts.next() {
            Some("zext") => Some(ExtMode::Zero),
            Some("sext") => Some(ExtMode::Sign),
            _ => None,
        };
        match (from, mode, parts.next()) {
            (Some(from_bits), Some(mode), None) => Ok(Widening { from_bits, mode }),
            _ => Err(self.err(format!("malformed widening annotation '{s}'"))),
        }
    }

    fn parse_origin(&self, s: &str) -> Result<Origin, IrError> {
        let (tag, site) = s.split_once(':').unwrap_or((s, "none"));
        let tag = Tag::ALL
            .into_iter()
            .find(|t| t.name() == tag)
            .ok_or_else(|| self.err(format!("unknown annotation '!{s}'")))?;
        let site = Site::ALL
            .into_iter()
            .find(|t| t.name() == site)
            .ok_or_else(|| self.err(format!("unknown annotation '!{s}'")))?;
        Ok(Origin { tag, site })
    }

    fn program(&mut self) -> Result<(Vec<RawFunc>, Vec<DataSegment>, String), IrError> {
        let mut funcs = Vec::new();
        let mut data = Vec::new();
        let mut entry = "main".to_string();
        while let Some(t) = self.peek().cloned() {
            match t {
                Tok::Word(w) if w == "entry" => {
                    self.pos += 1;
                    entry = self.global()?;
                }
                Tok::Word(w) if w == "data" => {
                    self.pos += 1;
                    data.push(self.data_segment()?);
                }
                Tok::Word(w) if w == "func" || w == "extern" => funcs.push(self.function()?),
                _ => return Err(self.err("expected 'func', 'extern', 'data' or 'entry'")),
            }
        }
        Ok((funcs, data, entry))
    }

    fn data_segment(&mut self) -> Result<DataSegment, IrError> {
        let off = self.num()?;
        let offset = parse_u64(&off).ok_or_else(|| self.err(format!("bad offset '{off}'")))?;
        if let Some(Tok::Str(s)) = self.peek().cloned() {
            self.pos += 1;
            let clean: String = s.chars().filter(|c| !c.is_whitespace()).collect();
            if !clean.len().is_multiple_of(2) {
                return Err(self.err("hex data must have an even number of digits"));
            }
            let bytes = (0..clean.len())
                .step_by(2)
                .map(|i| u8::from_str_radix(&clean[i..i + 2], 16))
                .collect::<Result<Vec<u8>, _>>()
                .map_err(|_| self.err("invalid hex data"))?;
            return Ok(DataSegment { offset, bytes });
        }
        let t = match self.ty()? {
            Type::Scalar(t) if t.is_canonical() => t,
            _ => return Err(self.err("data words must have a canonical scalar type")),
        };
        let mut bytes = Vec::new();
        loop {
            let (l, c) = self.here();
            let lit = self.num()?;
            let bits = parse_literal(t, &lit).ok_or_else(|| syntax(l, c, format!("bad literal '{lit}'")))?;
            bytes.extend_from_slice(&bits.to_le_bytes()[..t.mem_bytes()]);
            if !self.eat_punct(',') {
                break;
            }
        }
        Ok(DataSegment { offset, bytes })
    }

    fn function(&mut self) -> Result<RawFunc, IrError> {
        let (line, col) = self.here();
        let is_extern = matches!(self.peek(), Some(Tok::Word(w)) if w == "extern");
        if is_extern {
            self.pos += 1;
        }
        self.expect_word("func")?;
        let name = self.global()?;
        self.expect_punct('(')?;
        let mut params = Vec::new();
        if !self.eat_punct(')') {
            loop {
                let p = self.local()?;
                self.expect_punct(':')?;
                let t = self.ty()?;
                let (_, w) = self.annotations()?;
                params.push((p, t, w));
                if self.eat_punct(')') {
                    break;
                }
                self.expect_punct(',')?;
            }
        }
        if self.peek() != Some(&Tok::Arrow) {
            return Err(self.err("expected '->'"));
        }
        self.pos += 1;
        let ret = self.ret_type()?;
        let mut blocks = Vec::new();
        if !is_extern {
            self.expect_punct('{')?;
            while !self.eat_punct('}') {
                let (bl, bc) = self.here();
                let label = match (self.peek().cloned(), self.peek_at(1)) {
                    (Some(Tok::Word(w)), Some(Tok::Punct(':'))) => w,
                    (None, _) => return Err(self.err("unexpected end of input in function body")),
                    _ => return Err(self.err("expected a block label")),
                };
                self.pos += 2;
                let mut instrs = Vec::new();
                while !self.at_block_end() {
                    instrs.push(self.instr()?);
                }
                blocks.push(RawBlock { label, instrs, line: bl, col: bc });
            }
        }
        Ok(RawFunc { name, params, ret, blocks, is_extern, line, col })
    }

    fn at_block_end(&self) -> bool {
        matches!(
            (self.peek(), self.peek_at(1)),
            (None, _) | (Some(Tok::Punct('}')), _) | (Some(Tok::Word(_)), Some(Tok::Punct(':')))
        )
    }

    fn instr(&mut self) -> Result<RawInstr, IrError> {
        let (line, col) = self.here();
        let mut result = None;
        if let (Some(Tok::Local(n)), Some(Tok::Punct('='))) = (self.peek().cloned(), self.peek_at(1)) {
            result = Some(n);
            self.pos += 2;
        }
        let opcode = match self.next() {
            Some(Tok::Word(w)) => w,
            _ => {
                self.pos -= 1;
                return Err(syntax(line, col, "expected an instruction"));
            }
        };
        let mut ri = RawInstr {
            result,
            opcode: opcode.clone(),
            pred: None,
            ty: None,
            operands: Vec::new(),
            imm: None,
            labels: Vec::new(),
            incoming: Vec::new(),
            callee: None,
            origin: Origin::ORIGINAL,
            widened: None,
            line,
            col,
        };
        match opcode.as_str() {
            "const" => {
                ri.ty = Some(self.ty()?);
                ri.imm = Some(self.num()?);
            }
            "add" | "sub" | "mul" | "and" | "or" | "xor" | "shl" | "shr" | "div" | "rem"
            | "fadd" | "fsub" | "fmul" | "fdiv" => {
                ri.ty = Some(self.ty()?);
                ri.operands = self.locals(2)?;
            }
            "neg" | "trunc" | "zext" | "sext" | "copy" | "load" | "broadcast" | "shuffle"
            | "ptest" => {
                ri.ty = Some(self.ty()?);
                ri.operands = self.locals(1)?;
            }
            "cmp" => {
                let p = match self.next() {
                    Some(Tok::Word(w)) => w,
                    _ => return Err(self.err("expected a comparison predicate")),
                };
                ri.pred = Some(
                    CmpPred::ALL
                        .into_iter()
                        .find(|c| c.name() == p)
                        .ok_or_else(|| syntax(line, col, format!("unknown predicate '{p}'")))?,
                );
                ri.ty = Some(self.ty()?);
                ri.operands = self.locals(2)?;
            }
            "select" | "vote" => {
                ri.ty = Some(self.ty()?);
                ri.operands = self.locals(3)?;
            }
            "store" => {
                ri.ty = Some(self.ty()?);
                ri.operands = self.locals(2)?;
            }
            "extract" => {
                ri.ty = Some(self.ty()?);
                ri.operands = self.locals(1)?;
                self.expect_punct(',')?;
                ri.imm = Some(self.num()?);
            }
            "recover" => {
                ri.ty = Some(self.ty()?);
                ri.operands = self.locals(1)?;
                self.expect_punct(',')?;
                match self.next() {
                    Some(Tok::Word(w)) if w == "basic" || w == "extended" => ri.imm = Some(w),
                    _ => return Err(self.err("expected 'basic' or 'extended'")),
                }
            }
            "phi" => {
                ri.ty = Some(self.ty()?);
                loop {
                    self.expect_punct('[')?;
                    let v = self.local()?;
                    self.expect_punct(',')?;
                    let b = self.global()?;
                    self.expect_punct(']')?;
                    ri.incoming.push((v, b));
                    if !self.eat_punct(',') {
                        break;
                    }
                }
            }
            "call" => {
                ri.callee = Some(self.global()?);
                self.expect_punct('(')?;
                if !self.eat_punct(')') {
                    loop {
                        ri.operands.push(self.local()?);
                        if self.eat_punct(')') {
                            break;
                        }
                        self.expect_punct(',')?;
                    }
                }
            }
            "br" => {
                ri.operands.push(self.local()?);
                for _ in 0..2 {
                    self.expect_punct(',')?;
                    ri.labels.push(self.global()?);
                }
            }
            "brp" => {
                ri.operands.push(self.local()?);
                for _ in 0..3 {
                    self.expect_punct(',')?;
                    ri.labels.push(self.global()?);
                }
            }
            "jmp" => ri.labels.push(self.global()?),
            "ret" => {
                if let Some(Tok::Local(_)) = self.peek() {
                    let is_def = matches!(self.peek_at(1), Some(Tok::Punct('=')));
                    if !is_def {
                        ri.operands.push(self.local()?);
                    }
                }
            }
            other => return Err(syntax(line, col, format!("unknown opcode '{other}'"))),
        }
        let (origin, widened) = self.annotations()?;
        ri.origin = origin;
        ri.widened = widened;
        Ok(ri)
    }

    fn locals(&mut self, n: usize) -> Result<Vec<String>, IrError> {
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            if i > 0 {
                self.expect_punct(',')?;
            }
            out.push(self.local()?);
        }
        Ok(out)
    }
}

pub(crate) fn parse_u64(s: &str) -> Option<u64> {
    if let Some(h) = s.strip_prefix("0x") {
        u64::from_str_radix(h, 16).ok()
    } else {
        s.parse().ok()
    }
}

/// Parses a literal into the raw bits of `t`. Integer literals must fit the
/// width as either a signed or an unsigned number.
pub(crate) fn parse_literal(t: ScalarType, s: &str) -> Option<u64> {
    match t.kind {
        ScalarKind::Int => {
            let v: i128 = if let Some(h) = s.strip_prefix("0x") {
                u64::from_str_radix(h, 16).ok()? as i128
            } else if let Some(h) = s.strip_prefix("-0x") {
                -(u64::from_str_radix(h, 16).ok()? as i128)
            } else {
                s.parse().ok()?
            };
            let bits = t.bits as u32;
            let min = -(1i128 << (bits - 1));
            let max = (1i128 << bits) - 1;
            if v < min || v > max {
                return None;
            }
            Some((v as u64) & t.mask())
        }
        ScalarKind::Float => {
            if let Some(h) = s.strip_prefix("0x") {
                let bits = u64::from_str_radix(h, 16).ok()?;
                return (bits & !t.mask() == 0).then_some(bits);
            }
            if t.bits == 32 {
                s.parse::<f32>().ok().map(|v| v.to_bits() as u64)
            } else {
                s.parse::<f64>().ok().map(f64::to_bits)
            }
        }
    }
}

pub(crate) fn cmp_result_type(operand: Type) -> Type {
    operand.with_elem(ScalarType::I8)
}

fn type_error(func: &str, line: usize, msg: impl Into<String>) -> IrError {
    IrError::Type { func: func.to_string(), line: Some(line), msg: msg.into() }
}

fn ssa_error(func: &str, line: usize, msg: impl Into<String>) -> IrError {
    IrError::Ssa { func: func.to_string(), line: Some(line), msg: msg.into() }
}

/// Parses and validates a program.
pub fn parse_program(text: &str) -> Result<Program, IrError> {
    let toks = lex(text)?;
    let line_count = text.lines().count().max(1);
    let mut parser = Parser { toks, pos: 0, eof: (line_count, 1) };
    let (raw_funcs, data, entry) = parser.program()?;

    let mut func_ids: HashMap<&str, FuncId> = HashMap::new();
    for (i, f) in raw_funcs.iter().enumerate() {
        if func_ids.insert(&f.name, FuncId(i as u32)).is_some() {
            return Err(syntax(f.line, f.col, format!("function @{} defined twice", f.name)));
        }
    }

    let mut functions = Vec::with_capacity(raw_funcs.len());
    let mut lines: Vec<Vec<Vec<usize>>> = Vec::with_capacity(raw_funcs.len());
    for rf in &raw_funcs {
        let (f, l) = resolve_function(rf, &raw_funcs, &func_ids)?;
        functions.push(f);
        lines.push(l);
    }
    let program = Program { functions, data, entry };
    if let Err(Located { err, loc }) = validate_located(&program) {
        let line = loc.and_then(|l| lines.get(l.func)?.get(l.block)?.get(l.index).copied());
        return Err(match err {
            IrError::Type { func, msg, line: None } => IrError::Type { func, line, msg },
            IrError::Ssa { func, msg, line: None } => IrError::Ssa { func, line, msg },
            other => other,
        });
    }
    Ok(program)
}

fn resolve_function(
    rf: &RawFunc,
    all: &[RawFunc],
    func_ids: &HashMap<&str, FuncId>,
) -> Result<(Function, Vec<Vec<usize>>), IrError> {
    let fname = rf.name.as_str();
    let mut values: Vec<ValueDef> = Vec::new();
    let mut names: HashMap<&str, ValueId> = HashMap::new();
    let mut params = Vec::new();
    for (p, t, w) in &rf.params {
        if names.contains_key(p.as_str()) {
            return Err(ssa_error(fname, rf.line, format!("%{p} defined more than once")));
        }
        let id = ValueId(values.len() as u32);
        names.insert(p, id);
        values.push(ValueDef { name: p.clone(), ty: *t, widened: *w });
        params.push(id);
    }
    if rf.is_extern {
        let f = Function {
            name: rf.name.clone(),
            params,
            ret: rf.ret,
            values,
            blocks: Vec::new(),
            is_extern: true,
        };
        return Ok((f, Vec::new()));
    }

    let mut block_ids: HashMap<&str, BlockId> = HashMap::new();
    for (i, b) in rf.blocks.iter().enumerate() {
        if block_ids.insert(&b.label, BlockId(i as u32)).is_some() {
            return Err(syntax(b.line, b.col, format!("block {} defined twice", b.label)));
        }
    }
    if rf.blocks.is_empty() {
        return Err(syntax(rf.line, rf.col, format!("function @{fname} has no blocks")));
    }

    // Result types are derivable from syntax alone (and callee signatures).
    for b in &rf.blocks {
        for ri in &b.instrs {
            let Some(r) = &ri.result else { continue };
            let ty = match ri.opcode.as_str() {
                "cmp" => cmp_result_type(ri.ty.expect("cmp has a type")),
                "extract" => match ri.ty {
                    Some(Type::Vector(e)) => Type::Scalar(e),
                    _ => return Err(type_error(fname, ri.line, "extract needs a vector type")),
                },
                "ptest" => Type::Scalar(ScalarType::I8),
                "call" => {
                    let callee = ri.callee.as_deref().unwrap_or_default();
                    let id = func_ids
                        .get(callee)
                        .ok_or_else(|| type_error(fname, ri.line, format!("unknown function @{callee}")))?;
                    all[id.index()].ret.ok_or_else(|| {
                        type_error(fname, ri.line, format!("@{callee} returns void"))
                    })?
                }
                "store" | "br" | "brp" | "jmp" | "ret" => {
                    return Err(type_error(fname, ri.line, format!("{} produces no value", ri.opcode)))
                }
                _ => ri.ty.expect("value-producing opcode has a type"),
            };
            if names.contains_key(r.as_str()) {
                return Err(ssa_error(fname, ri.line, format!("%{r} defined more than once")));
            }
            names.insert(r, ValueId(values.len() as u32));
            values.push(ValueDef { name: r.clone(), ty, widened: ri.widened });
        }
    }

    let mut blocks = Vec::with_capacity(rf.blocks.len());
    let mut lines = Vec::with_capacity(rf.blocks.len());
    for b in &rf.blocks {
        let mut instrs = Vec::with_capacity(b.instrs.len());
        let mut blines = Vec::with_capacity(b.instrs.len());
        for ri in &b.instrs {
            instrs.push(resolve_instr(fname, ri, &names, &block_ids, func_ids, &values)?);
            blines.push(ri.line);
        }
        blocks.push(Block { label: b.label.clone(), instrs });
        lines.push(blines);
    }
    let f = Function { name: rf.name.clone(), params, ret: rf.ret, values, blocks, is_extern: false };
    Ok((f, lines))
}

fn resolve_instr(
    fname: &str,
    ri: &RawInstr,
    names: &HashMap<&str, ValueId>,
    block_ids: &HashMap<&str, BlockId>,
    func_ids: &HashMap<&str, FuncId>,
    values: &[ValueDef],
) -> Result<Instr, IrError> {
    let val = |n: &str| {
        names
            .get(n)
            .copied()
            .ok_or_else(|| ssa_error(fname, ri.line, format!("use of undefined value %{n}")))
    };
    let blk = |n: &str| {
        block_ids
            .get(n)
            .copied()
            .ok_or_else(|| type_error(fname, ri.line, format!("branch to unknown block @{n}")))
    };
    let ops: Vec<ValueId> = ri.operands.iter().map(|o| val(o)).collect::<Result<_, _>>()?;
    let result = ri.result.as_deref().map(|r| names[r]);
    let needs_result = !matches!(ri.opcode.as_str(), "store" | "br" | "brp" | "jmp" | "ret" | "call");
    if needs_result && result.is_none() {
        return Err(syntax(ri.line, ri.col, format!("{} must define a value", ri.opcode)));
    }
    let check_ty = |v: ValueId| -> Result<(), IrError> {
        match ri.ty {
            Some(t) if values[v.index()].ty != t => Err(type_error(
                fname,
                ri.line,
                format!("%{} has type {}, expected {}", values[v.index()].name, values[v.index()].ty, t),
            )),
            _ => Ok(()),
        }
    };
    let bin = |op| Op::Bin { op, lhs: ops[0], rhs: ops[1] };
    let op = match ri.opcode.as_str() {
        "const" => {
            let t = ri.ty.expect("const type").elem();
            let lit = ri.imm.as_deref().unwrap_or_default();
            let bits = parse_literal(t, lit)
                .ok_or_else(|| syntax(ri.line, ri.col, format!("literal '{lit}' does not fit {t}")))?;
            Op::Const { bits }
        }
        "add" => bin(BinOp::Add),
        "sub" => bin(BinOp::Sub),
        "mul" => bin(BinOp::Mul),
        "and" => bin(BinOp::And),
        "or" => bin(BinOp::Or),
        "xor" => bin(BinOp::Xor),
        "shl" => bin(BinOp::Shl),
        "shr" => bin(BinOp::Shr),
        "div" => bin(BinOp::Div),
        "rem" => bin(BinOp::Rem),
        "fadd" => bin(BinOp::FAdd),
        "fsub" => bin(BinOp::FSub),
        "fmul" => bin(BinOp::FMul),
        "fdiv" => bin(BinOp::FDiv),
        "neg" => Op::Neg { arg: ops[0] },
        "trunc" => Op::Cast { op: CastOp::Trunc, arg: ops[0] },
        "zext" => Op::Cast { op: CastOp::ZExt, arg: ops[0] },
        "sext" => Op::Cast { op: CastOp::SExt, arg: ops[0] },
        "copy" => Op::Copy { arg: ops[0] },
        "load" => Op::Load { addr: ops[0] },
        "broadcast" => Op::Broadcast { arg: ops[0] },
        "shuffle" => Op::Shuffle { arg: ops[0] },
        "ptest" => {
            check_ty(ops[0])?;
            Op::Ptest { arg: ops[0] }
        }
        "cmp" => {
            check_ty(ops[0])?;
            Op::Cmp { pred: ri.pred.expect("cmp predicate"), lhs: ops[0], rhs: ops[1] }
        }
        "select" => Op::Select { cond: ops[0], on_true: ops[1], on_false: ops[2] },
        "vote" => Op::Vote { a: ops[0], b: ops[1], c: ops[2] },
        "store" => {
            check_ty(ops[0])?;
            Op::Store { value: ops[0], addr: ops[1] }
        }
        "extract" => {
            check_ty(ops[0])?;
            let lit = ri.imm.as_deref().unwrap_or_default();
            let lane = lit
                .parse::<u8>()
                .map_err(|_| syntax(ri.line, ri.col, format!("bad lane index '{lit}'")))?;
            Op::Extract { arg: ops[0], lane }
        }
        "recover" => {
            let mode = match ri.imm.as_deref() {
                Some("basic") => RecoveryMode::Basic,
                _ => RecoveryMode::Extended,
            };
            Op::Recover { arg: ops[0], mode }
        }
        "phi" => {
            let incoming = ri
                .incoming
                .iter()
                .map(|(v, b)| Ok((val(v)?, blk(b)?)))
                .collect::<Result<Vec<_>, IrError>>()?;
            Op::Phi { incoming }
        }
        "call" => {
            let callee = ri.callee.as_deref().unwrap_or_default();
            let id = *func_ids
                .get(callee)
                .ok_or_else(|| type_error(fname, ri.line, format!("unknown function @{callee}")))?;
            Op::Call { callee: id, args: ops }
        }
        "br" => Op::Br { cond: ops[0], on_true: blk(&ri.labels[0])?, on_false: blk(&ri.labels[1])? },
        "brp" => Op::Brp {
            test: ops[0],
            all_true: blk(&ri.labels[0])?,
            all_false: blk(&ri.labels[1])?,
            mix: blk(&ri.labels[2])?,
        },
        "jmp" => Op::Jmp { target: blk(&ri.labels[0])? },
        "ret" => Op::Ret { value: ops.first().copied() },
        other => return Err(syntax(ri.line, ri.col, format!("unknown opcode '{other}'"))),
    };
    Ok(Instr { result, op, origin: ri.origin })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_program() {
        let p = parse_program("func @main() -> i64 { entry: %a = const i64 7  ret %a }").unwrap();
        assert_eq!(p.functions.len(), 1);
        assert_eq!(p.functions[0].instr_count(), 2);
    }

    #[test]
    fn self_reference_is_ssa_violation() {
        let src = "func @main(%b: i64) -> i64 {\nentry:\n  %a = add i64 %a, %b\n  ret %a\n}\n";
        let err = parse_program(src).unwrap_err();
        assert_eq!(err.kind(), "ssa", "{err}");
        assert_eq!(err.line(), Some(3));
    }

    #[test]
    fn syntax_error_reports_position() {
        let err = parse_program("func @main() -> i64 {\nentry:\n  %a = bogus i64 1\n}").unwrap_err();
        assert_eq!(err.kind(), "syntax");
        assert_eq!(err.line(), Some(3));
    }

    #[test]
    fn type_error_is_distinct() {
        let src = "func @main() -> i64 {\nentry:\n  %a = const i32 1\n  %b = add i64 %a, %a\n  ret %b\n}";
        let err = parse_program(src).unwrap_err();
        assert_eq!(err.kind(), "type", "{err}");
        assert_eq!(err.line(), Some(4));
    }

    #[test]
    fn undefined_value() {
        let err = parse_program("func @main() -> i64 { entry: ret %x }").unwrap_err();
        assert_eq!(err.kind(), "ssa");
    }

    #[test]
    fn literals() {
        assert_eq!(parse_literal(ScalarType::I8, "-1"), Some(0xff));
        assert_eq!(parse_literal(ScalarType::I8, "255"), Some(0xff));
        assert_eq!(parse_literal(ScalarType::I8, "256"), None);
        assert_eq!(parse_literal(ScalarType::int(1), "1"), Some(1));
        assert_eq!(parse_literal(ScalarType::F64, "1.5"), Some(1.5f64.to_bits()));
        assert_eq!(parse_literal(ScalarType::F64, "-2e-3"), Some((-2e-3f64).to_bits()));
        assert_eq!(parse_literal(ScalarType::I64, "-9223372036854775808"), Some(1 << 63));
    }

    #[test]
    fn typed_data_segments() {
        let p = parse_program("data 16 i16 1, -1\nfunc @main() -> void { entry: ret }").unwrap();
        assert_eq!(p.data[0].offset, 16);
        assert_eq!(p.data[0].bytes, vec![1, 0, 0xff, 0xff]);
    }

    #[test]
    fn vector_types_must_fill_the_register() {
        assert!(parse_program("func @main() -> void { entry: %v = const <4 x i64> 1 ret }").is_ok());
        let err = parse_program("func @main() -> void { entry: %v = const <2 x i64> 1 ret }").unwrap_err();
        assert_eq!(err.kind(), "syntax");
    }

    #[test]
    fn rejects_odd_float_width() {
        let err = parse_program("func @main(%x: f16) -> void { entry: ret }").unwrap_err();
        assert_eq!(err.kind(), "syntax");
    }
}
