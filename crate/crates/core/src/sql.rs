//! Parser for the conjunctive SELECT-FROM-WHERE-GROUP BY subset.
//!
//! ```text
//! SELECT <* | item, ...> FROM table [AS] alias, ... [WHERE cond AND ...] [GROUP BY col, ...] [;]
//! item := col | COUNT(*) | COUNT(col) | SUM(col) | MIN(col) | MAX(col)   [AS name]
//! cond := col = literal | col {<,<=,>,>=,!=,<>} literal | col LIKE 'prefix%' | col = col
//! ```
//!
//! Single-relation conjuncts become a Filter directly above that relation's Scan;
//! equi-join conjuncts stay pending for the optimizer. Scans are chained by a
//! left-deep CrossProduct spine in FROM order.

use rustc_hash::FxHashMap;

use crate::catalog::Catalog;
use crate::error::{Error, Result};
use crate::plan::{
    AggExpr, AggFunc, CmpOp, ColumnRef, JoinPredicate, Literal, LogicalPlan, PlanNode, Predicate,
};
use crate::types::DataType;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Str(String),
    Sym(&'static str),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    pos: usize,
}

fn syntax(pos: usize, message: impl Into<String>) -> Error {
    Error::Syntax {
        pos,
        message: message.into(),
    }
}

fn tokenize(text: &str) -> Result<Vec<Token>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if c == b'-' && bytes.get(i + 1) == Some(&b'-') {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Ident(text[start..i].to_string()),
                pos: start,
            });
            continue;
        }
        let negative_number = c == b'-' && bytes.get(i + 1).is_some_and(|b| b.is_ascii_digit());
        if c.is_ascii_digit() || negative_number {
            i += 1;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let v = text[start..i]
                .parse::<i64>()
                .map_err(|_| syntax(start, "integer literal out of range"))?;
            out.push(Token {
                tok: Tok::Int(v),
                pos: start,
            });
            continue;
        }
        if c == b'\'' {
            let mut s = String::new();
            i += 1;
            loop {
                if i >= bytes.len() {
                    return Err(syntax(start, "unterminated string literal"));
                }
                if bytes[i] == b'\'' {
                    if bytes.get(i + 1) == Some(&b'\'') {
                        s.push('\'');
                        i += 2;
                        continue;
                    }
                    i += 1;
                    break;
                }
                let ch = text[i..].chars().next().expect("in bounds");
                s.push(ch);
                i += ch.len_utf8();
            }
            out.push(Token {
                tok: Tok::Str(s),
                pos: start,
            });
            continue;
        }
        let two = text.get(i..i + 2).unwrap_or("");
        let sym: &'static str = match two {
            "<=" => "<=",
            ">=" => ">=",
            "!=" => "!=",
            "<>" => "!=",
            _ => match c {
                b',' => ",",
                b'.' => ".",
                b'(' => "(",
                b')' => ")",
                b'*' => "*",
                b'=' => "=",
                b'<' => "<",
                b'>' => ">",
                b';' => ";",
                _ => {
                    let ch = text[i..].chars().next().expect("in bounds");
                    return Err(syntax(i, format!("unexpected character {ch:?}")));
                }
            },
        };
        i += if matches!(sym, "<=" | ">=" | "!=") {
            2
        } else {
            1
        };
        out.push(Token {
            tok: Tok::Sym(sym),
            pos: start,
        });
    }
    out.push(Token {
        tok: Tok::Eof,
        pos: text.len(),
    });
    Ok(out)
}

/// A column reference as written, before resolution against FROM.
#[derive(Debug, Clone)]
struct RawCol {
    qualifier: Option<String>,
    name: String,
    pos: usize,
}

#[derive(Debug, Clone)]
enum Operand {
    Col(RawCol),
    Lit(Literal),
}

enum SelectItem {
    Col(RawCol),
    Agg(AggFunc, Option<RawCol>),
}

struct FromItem {
    table: String,
    alias: String,
    pos: usize,
}

enum RawCond {
    Cmp {
        left: Operand,
        op: &'static str,
        right: Operand,
        pos: usize,
    },
    Like {
        col: RawCol,
        pattern: String,
        pos: usize,
    },
}

struct Parser {
    toks: Vec<Token>,
    i: usize,
}

const RESERVED: &[&str] = &[
    "select", "from", "where", "and", "or", "group", "by", "as", "like", "not", "order", "having",
    "limit", "join", "on", "union",
];

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.i].tok
    }

    fn pos(&self) -> usize {
        self.toks[self.i].pos
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.i].clone();
        if self.i + 1 < self.toks.len() {
            self.i += 1;
        }
        t
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s.eq_ignore_ascii_case(kw))
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.is_kw(kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<()> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(syntax(
                self.pos(),
                format!("expected {}", kw.to_uppercase()),
            ))
        }
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if matches!(self.peek(), Tok::Sym(x) if *x == s) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> Result<()> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            Err(syntax(self.pos(), format!("expected `{s}`")))
        }
    }

    fn ident(&mut self) -> Result<(String, usize)> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::Ident(s) if !RESERVED.iter().any(|k| s.eq_ignore_ascii_case(k)) => {
                self.bump();
                Ok((s, pos))
            }
            _ => Err(syntax(pos, "expected identifier")),
        }
    }

    fn column(&mut self) -> Result<RawCol> {
        let (first, pos) = self.ident()?;
        if self.eat_sym(".") {
            let (name, _) = self.ident()?;
            Ok(RawCol {
                qualifier: Some(first),
                name,
                pos,
            })
        } else {
            Ok(RawCol {
                qualifier: None,
                name: first,
                pos,
            })
        }
    }

    fn agg_func(&self) -> Option<AggFunc> {
        let Tok::Ident(s) = self.peek() else {
            return None;
        };
        let next_is_paren = matches!(
            self.toks.get(self.i + 1).map(|t| &t.tok),
            Some(Tok::Sym("("))
        );
        if !next_is_paren {
            return None;
        }
        match s.to_ascii_uppercase().as_str() {
            "COUNT" => Some(AggFunc::Count),
            "SUM" => Some(AggFunc::Sum),
            "MIN" => Some(AggFunc::Min),
            "MAX" => Some(AggFunc::Max),
            _ => None,
        }
    }

    fn select_item(&mut self) -> Result<SelectItem> {
        let item = if let Some(func) = self.agg_func() {
            let pos = self.pos();
            self.bump();
            self.expect_sym("(")?;
            let arg = if self.eat_sym("*") {
                if func != AggFunc::Count {
                    return Err(syntax(pos, format!("{}(*) is not allowed", func.name())));
                }
                None
            } else {
                Some(self.column()?)
            };
            self.expect_sym(")")?;
            SelectItem::Agg(func, arg)
        } else {
            SelectItem::Col(self.column()?)
        };
        if self.eat_kw("as") {
            self.ident()?;
        }
        Ok(item)
    }

    fn operand(&mut self) -> Result<Operand> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(Operand::Lit(Literal::Int(v)))
            }
            Tok::Str(s) => {
                self.bump();
                Ok(Operand::Lit(Literal::Text(s)))
            }
            Tok::Ident(_) => Ok(Operand::Col(self.column()?)),
            _ => Err(syntax(pos, "expected column or literal")),
        }
    }

    fn condition(&mut self) -> Result<RawCond> {
        let pos = self.pos();
        let left = self.operand()?;
        if self.is_kw("not") {
            return Err(Error::Unsupported("NOT in predicates".into()));
        }
        if self.eat_kw("like") {
            let Operand::Col(col) = left else {
                return Err(syntax(pos, "LIKE needs a column on the left"));
            };
            let ppos = self.pos();
            let Tok::Str(pattern) = self.bump().tok else {
                return Err(syntax(ppos, "LIKE needs a string pattern"));
            };
            return Ok(RawCond::Like { col, pattern, pos });
        }
        let opos = self.pos();
        let op = match self.bump().tok {
            Tok::Sym(s @ ("=" | "<" | "<=" | ">" | ">=" | "!=")) => s,
            _ => return Err(syntax(opos, "expected comparison operator")),
        };
        let right = self.operand()?;
        Ok(RawCond::Cmp {
            left,
            op,
            right,
            pos,
        })
    }
}

/// Parses one SQL statement into an unoptimized logical plan, resolving names
/// against `catalog`.
pub fn parse_query(text: &str, catalog: &Catalog) -> Result<LogicalPlan> {
    let mut p = Parser {
        toks: tokenize(text)?,
        i: 0,
    };
    p.expect_kw("select")?;
    let mut star = false;
    let mut items = Vec::new();
    if p.eat_sym("*") {
        star = true;
    } else {
        loop {
            items.push(p.select_item()?);
            if !p.eat_sym(",") {
                break;
            }
        }
    }
    p.expect_kw("from")?;
    let mut from = Vec::new();
    loop {
        let (table, pos) = p.ident()?;
        p.eat_kw("as");
        let alias = match p.peek() {
            Tok::Ident(s) if !RESERVED.iter().any(|k| s.eq_ignore_ascii_case(k)) => p.ident()?.0,
            _ => table.clone(),
        };
        from.push(FromItem { table, alias, pos });
        if !p.eat_sym(",") {
            break;
        }
    }
    let mut conds = Vec::new();
    if p.eat_kw("where") {
        loop {
            conds.push(p.condition()?);
            if p.is_kw("or") {
                return Err(Error::Unsupported("OR (disjunctive predicates)".into()));
            }
            if !p.eat_kw("and") {
                break;
            }
        }
    }
    let mut group_by = Vec::new();
    if p.eat_kw("group") {
        p.expect_kw("by")?;
        loop {
            group_by.push(p.column()?);
            if !p.eat_sym(",") {
                break;
            }
        }
    }
    p.eat_sym(";");
    if !matches!(p.peek(), Tok::Eof) {
        let pos = p.pos();
        if p.is_kw("or") {
            return Err(Error::Unsupported("OR (disjunctive predicates)".into()));
        }
        return Err(syntax(pos, "unexpected trailing input"));
    }

    let scope = Scope::new(&from, catalog)?;
    let mut filters: FxHashMap<String, Vec<Predicate>> = FxHashMap::default();
    let mut joins = Vec::new();
    for cond in conds {
        match scope.resolve_cond(cond)? {
            Predicate::ColEqCol { left, right } => joins.push(JoinPredicate::new(left, right)),
            pred => {
                let rel = pred
                    .relation()
                    .expect("single-relation predicate")
                    .to_string();
                filters.entry(rel).or_default().push(pred);
            }
        }
    }

    let mut spine: Option<PlanNode> = None;
    for f in &from {
        let mut leaf = PlanNode::scan(&f.table, &f.alias);
        if let Some(preds) = filters.remove(&f.alias) {
            leaf = PlanNode::filter(preds, leaf);
        }
        spine = Some(match spine {
            None => leaf,
            Some(acc) => PlanNode::cross(acc, leaf),
        });
    }
    let spine = spine.expect("FROM has at least one item");

    let group_cols = group_by
        .iter()
        .map(|c| scope.resolve(c))
        .collect::<Result<Vec<_>>>()?;
    let has_agg = items.iter().any(|i| matches!(i, SelectItem::Agg(..)));
    let root = if star {
        if !group_cols.is_empty() {
            return Err(Error::Unsupported("SELECT * with GROUP BY".into()));
        }
        spine
    } else if has_agg || !group_cols.is_empty() {
        let mut aggregates = Vec::new();
        for item in &items {
            match item {
                SelectItem::Agg(func, arg) => {
                    let arg = arg.as_ref().map(|c| scope.resolve(c)).transpose()?;
                    if let (AggFunc::Sum, Some(a)) = (func, &arg) {
                        if scope.type_of(a) != DataType::Int64 {
                            return Err(Error::TypeMismatch(format!("SUM over text column {a}")));
                        }
                    }
                    aggregates.push(AggExpr { func: *func, arg });
                }
                SelectItem::Col(c) => {
                    let col = scope.resolve(c)?;
                    if !group_cols.contains(&col) {
                        return Err(syntax(
                            c.pos,
                            format!("column {col} must appear in GROUP BY"),
                        ));
                    }
                }
            }
        }
        PlanNode::Aggregate {
            group_by: group_cols,
            aggregates,
            input: Box::new(spine),
        }
    } else {
        let columns = items
            .iter()
            .map(|i| match i {
                SelectItem::Col(c) => scope.resolve(c),
                SelectItem::Agg(..) => unreachable!("no aggregates in this branch"),
            })
            .collect::<Result<Vec<_>>>()?;
        PlanNode::Project {
            columns,
            input: Box::new(spine),
        }
    };
    Ok(LogicalPlan::new(root, joins))
}

struct Scope<'a> {
    /// (alias, table definition) in FROM order.
    rels: Vec<(String, &'a crate::catalog::TableDef)>,
}

impl<'a> Scope<'a> {
    fn new(from: &[FromItem], catalog: &'a Catalog) -> Result<Scope<'a>> {
        let mut rels: Vec<(String, &crate::catalog::TableDef)> = Vec::new();
        for f in from {
            let table = catalog
                .table_by_name(&f.table)
                .ok_or_else(|| Error::UnknownTable(f.table.clone()))?;
            if rels.iter().any(|(a, _)| a == &f.alias) {
                return Err(syntax(f.pos, format!("duplicate alias `{}`", f.alias)));
            }
            rels.push((f.alias.clone(), &table.def));
        }
        Ok(Scope { rels })
    }

    fn resolve(&self, c: &RawCol) -> Result<ColumnRef> {
        match &c.qualifier {
            Some(q) => {
                let (alias, def) = self
                    .rels
                    .iter()
                    .find(|(a, _)| a == q)
                    .ok_or_else(|| Error::UnknownTable(q.clone()))?;
                if def.column_index(&c.name).is_none() {
                    return Err(Error::UnknownColumn(format!("{q}.{}", c.name)));
                }
                Ok(ColumnRef::new(alias, &c.name))
            }
            None => {
                let mut hits = self
                    .rels
                    .iter()
                    .filter(|(_, def)| def.column_index(&c.name).is_some());
                let first = hits
                    .next()
                    .ok_or_else(|| Error::UnknownColumn(c.name.clone()))?;
                if hits.next().is_some() {
                    return Err(Error::AmbiguousColumn(c.name.clone()));
                }
                Ok(ColumnRef::new(&first.0, &c.name))
            }
        }
    }

    fn type_of(&self, c: &ColumnRef) -> DataType {
        let (_, def) = self
            .rels
            .iter()
            .find(|(a, _)| a == &c.relation)
            .expect("resolved");
        def.columns[def.column_index(&c.column).expect("resolved")].data_type
    }

    fn resolve_cond(&self, cond: RawCond) -> Result<Predicate> {
        match cond {
            RawCond::Like { col, pattern, pos } => {
                let column = self.resolve(&col)?;
                if self.type_of(&column) != DataType::Text {
                    return Err(Error::TypeMismatch(format!(
                        "LIKE on non-text column {column}"
                    )));
                }
                let Some(prefix) = pattern.strip_suffix('%') else {
                    return Err(Error::Unsupported(format!(
                        "LIKE pattern '{pattern}' at {pos}: only 'prefix%' patterns are supported"
                    )));
                };
                if prefix.contains(['%', '_']) {
                    return Err(Error::Unsupported(format!(
                        "LIKE pattern '{pattern}' at {pos}: only 'prefix%' patterns are supported"
                    )));
                }
                Ok(Predicate::ColPrefix {
                    column,
                    prefix: prefix.to_string(),
                })
            }
            RawCond::Cmp {
                left,
                op,
                right,
                pos,
            } => match (left, right) {
                (Operand::Col(l), Operand::Col(r)) => {
                    let (l, r) = (self.resolve(&l)?, self.resolve(&r)?);
                    if op != "=" {
                        return Err(Error::Unsupported(format!(
                            "non-equi column comparison {l} {op} {r}"
                        )));
                    }
                    if l.relation == r.relation {
                        return Err(Error::Unsupported(format!(
                            "column comparison {l} = {r} within one relation"
                        )));
                    }
                    if self.type_of(&l) != self.type_of(&r) {
                        return Err(Error::TypeMismatch(format!("{l} = {r}")));
                    }
                    Ok(Predicate::ColEqCol { left: l, right: r })
                }
                (Operand::Col(c), Operand::Lit(v)) => self.literal_pred(c, op, v),
                (Operand::Lit(v), Operand::Col(c)) => {
                    let flipped = match op {
                        "<" => ">",
                        "<=" => ">=",
                        ">" => "<",
                        ">=" => "<=",
                        other => other,
                    };
                    self.literal_pred(c, flipped, v)
                }
                (Operand::Lit(..), Operand::Lit(..)) => {
                    Err(syntax(pos, "comparison between two literals"))
                }
            },
        }
    }

    fn literal_pred(&self, c: RawCol, op: &str, value: Literal) -> Result<Predicate> {
        let column = self.resolve(&c)?;
        let ty = self.type_of(&column);
        let lit_ty = match value {
            Literal::Int(_) => DataType::Int64,
            Literal::Text(_) => DataType::Text,
        };
        if ty != lit_ty {
            return Err(Error::TypeMismatch(format!(
                "{column} is {ty} but literal {value} is {lit_ty}"
            )));
        }
        let cmp = match op {
            "=" => return Ok(Predicate::ColEqLiteral { column, value }),
            "!=" => CmpOp::Ne,
            "<" => CmpOp::Lt,
            "<=" => CmpOp::Le,
            ">" => CmpOp::Gt,
            ">=" => CmpOp::Ge,
            other => unreachable!("operator {other}"),
        };
        if ty == DataType::Text && cmp != CmpOp::Ne {
            return Err(Error::TypeMismatch(format!(
                "range comparison {} on text column {column}",
                cmp.symbol()
            )));
        }
        Ok(Predicate::ColCmpLiteral {
            column,
            op: cmp,
            value,
        })
    }
}
