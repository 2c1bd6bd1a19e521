//! A miniature relational engine for the database task.
//!
//! Supported subset (keywords case-insensitive, identifiers case-sensitive):
//!
//! ```text
//! SELECT * | COUNT(*) | col [, col]* FROM table [WHERE cond]
//! INSERT INTO table VALUES (lit [, lit]*)
//! UPDATE table SET col = lit [, col = lit]* [WHERE cond]
//! DELETE FROM table [WHERE cond]
//! cond := col (= | < | >) lit [AND cond]
//! lit  := integer | 'text'   ('' escapes a quote)
//! ```
//!
//! A trailing `;` is allowed. No joins, ordering, indexes or transactions;
//! rows come back in insertion order.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    Int,
    Text,
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnType::Int => f.write_str("int"),
            ColumnType::Text => f.write_str("text"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Text(String),
}

impl Value {
    pub fn column_type(&self) -> ColumnType {
        match self {
            Value::Int(_) => ColumnType::Int,
            Value::Text(_) => ColumnType::Text,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Text(s) => write!(f, "'{}'", s.replace('\'', "''")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ColumnType,
}

impl Column {
    pub fn new(name: impl Into<String>, ty: ColumnType) -> Self {
        Self { name: name.into(), ty }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DbSchema {
    pub tables: BTreeMap<String, Vec<Column>>,
}

impl DbSchema {
    pub fn columns(&self, table: &str) -> Result<&[Column], DbError> {
        self.tables
            .get(table)
            .map(Vec::as_slice)
            .ok_or_else(|| DbError::Semantic(format!("no such table: {table}")))
    }

    fn column_index(&self, table: &str, column: &str) -> Result<(usize, ColumnType), DbError> {
        self.columns(table)?
            .iter()
            .position(|c| c.name == column)
            .map(|i| (i, self.tables[table][i].ty))
            .ok_or_else(|| DbError::Semantic(format!("no such column: {table}.{column}")))
    }

    fn validate(&self) -> Result<(), DbError> {
        for (table, cols) in &self.tables {
            for (i, c) in cols.iter().enumerate() {
                if cols[..i].iter().any(|o| o.name == c.name) {
                    return Err(DbError::Semantic(format!(
                        "duplicate column {} in table {table}",
                        c.name
                    )));
                }
            }
        }
        Ok(())
    }
}

pub type Row = Vec<Value>;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DbState {
    pub schema: DbSchema,
    pub rows: BTreeMap<String, Vec<Row>>,
}

impl DbState {
    /// Builds a state, checking that every row matches its table's arity and types.
    pub fn new(schema: DbSchema, mut rows: BTreeMap<String, Vec<Row>>) -> Result<Self, DbError> {
        schema.validate()?;
        for (table, table_rows) in &rows {
            let cols = schema.columns(table)?;
            for row in table_rows {
                check_row(table, cols, row)?;
            }
        }
        for table in schema.tables.keys() {
            rows.entry(table.clone()).or_default();
        }
        Ok(Self { schema, rows })
    }

    pub fn table_rows(&self, table: &str) -> &[Row] {
        self.rows.get(table).map(Vec::as_slice).unwrap_or(&[])
    }
}

fn check_row(table: &str, cols: &[Column], row: &[Value]) -> Result<(), DbError> {
    if row.len() != cols.len() {
        return Err(DbError::Semantic(format!(
            "table {table} expects {} values, got {}",
            cols.len(),
            row.len()
        )));
    }
    for (c, v) in cols.iter().zip(row) {
        if c.ty != v.column_type() {
            return Err(DbError::Semantic(format!(
                "type mismatch for {table}.{}: expected {}, got {}",
                c.name,
                c.ty,
                v.column_type()
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at token {position}: {message}")]
pub struct ParseError {
    /// 1-based index of the offending token.
    pub position: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DbError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("{0}")]
    Semantic(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    Eq,
    Lt,
    Gt,
}

impl CmpOp {
    pub fn holds(self, ord: Ordering) -> bool {
        match self {
            CmpOp::Eq => ord == Ordering::Equal,
            CmpOp::Lt => ord == Ordering::Less,
            CmpOp::Gt => ord == Ordering::Greater,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Comparison {
    pub column: String,
    pub op: CmpOp,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Projection {
    All,
    Count,
    Columns(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Statement {
    Select {
        projection: Projection,
        table: String,
        conjuncts: Vec<Comparison>,
    },
    Insert {
        table: String,
        values: Vec<Value>,
    },
    Update {
        table: String,
        assignments: Vec<(String, Value)>,
        conjuncts: Vec<Comparison>,
    },
    Delete {
        table: String,
        conjuncts: Vec<Comparison>,
    },
}

impl Statement {
    pub fn table(&self) -> &str {
        match self {
            Statement::Select { table, .. }
            | Statement::Insert { table, .. }
            | Statement::Update { table, .. }
            | Statement::Delete { table, .. } => table,
        }
    }

    pub fn is_read_only(&self) -> bool {
        matches!(self, Statement::Select { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Token {
    Word(String),
    Int(i64),
    Str(String),
    Sym(char),
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Word(w) => write!(f, "{w}"),
            Token::Int(v) => write!(f, "{v}"),
            Token::Str(s) => write!(f, "'{s}'"),
            Token::Sym(c) => write!(f, "{c}"),
        }
    }
}

fn tokenize(sql: &str) -> Result<Vec<Token>, ParseError> {
    let mut tokens = Vec::new();
    let mut chars = sql.chars().peekable();
    let err = |tokens: &Vec<Token>, message: String| ParseError {
        position: tokens.len() + 1,
        message,
    };
    while let Some(&c) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
        } else if c.is_ascii_alphabetic() || c == '_' {
            let mut word = String::new();
            while let Some(&c) = chars.peek() {
                if c.is_ascii_alphanumeric() || c == '_' {
                    word.push(c);
                    chars.next();
                } else {
                    break;
                }
            }
            tokens.push(Token::Word(word));
        } else if c.is_ascii_digit() || c == '-' {
            let mut digits = String::new();
            digits.push(c);
            chars.next();
            while let Some(&c) = chars.peek() {
                if c.is_ascii_digit() {
                    digits.push(c);
                    chars.next();
                } else {
                    break;
                }
            }
            let v = digits
                .parse::<i64>()
                .map_err(|_| err(&tokens, format!("invalid integer literal {digits}")))?;
            tokens.push(Token::Int(v));
        } else if c == '\'' {
            chars.next();
            let mut s = String::new();
            loop {
                match chars.next() {
                    Some('\'') if chars.peek() == Some(&'\'') => {
                        chars.next();
                        s.push('\'');
                    }
                    Some('\'') => break,
                    Some(c) => s.push(c),
                    None => return Err(err(&tokens, "unterminated string literal".into())),
                }
            }
            tokens.push(Token::Str(s));
        } else if matches!(c, ',' | '(' | ')' | '*' | '=' | '<' | '>' | ';') {
            chars.next();
            tokens.push(Token::Sym(c));
        } else {
            return Err(err(&tokens, format!("unexpected character {c:?}")));
        }
    }
    Ok(tokens)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn error(&self, message: impl Into<String>) -> ParseError {
        ParseError {
            position: self.pos + 1,
            message: message.into(),
        }
    }

    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn describe_next(&self) -> String {
        self.peek()
            .map(|t| format!("`{t}`"))
            .unwrap_or_else(|| "end of input".into())
    }

    fn peek_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Token::Word(w)) if w.eq_ignore_ascii_case(kw))
    }

    fn keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.peek_keyword(kw) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(format!("expected {kw}, found {}", self.describe_next())))
        }
    }

    fn symbol(&mut self, sym: char) -> Result<(), ParseError> {
        if self.peek() == Some(&Token::Sym(sym)) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(format!("expected `{sym}`, found {}", self.describe_next())))
        }
    }

    fn eat_symbol(&mut self, sym: char) -> bool {
        if self.peek() == Some(&Token::Sym(sym)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn identifier(&mut self) -> Result<String, ParseError> {
        match self.peek() {
            Some(Token::Word(w)) if !is_reserved(w) => {
                let w = w.clone();
                self.pos += 1;
                Ok(w)
            }
            _ => Err(self.error(format!("expected identifier, found {}", self.describe_next()))),
        }
    }

    fn literal(&mut self) -> Result<Value, ParseError> {
        let v = match self.peek() {
            Some(Token::Int(v)) => Value::Int(*v),
            Some(Token::Str(s)) => Value::Text(s.clone()),
            _ => return Err(self.error(format!("expected literal, found {}", self.describe_next()))),
        };
        self.pos += 1;
        Ok(v)
    }

    fn statement(&mut self) -> Result<Statement, ParseError> {
        let stmt = match self.peek() {
            Some(Token::Word(w)) if w.eq_ignore_ascii_case("SELECT") => self.select()?,
            Some(Token::Word(w)) if w.eq_ignore_ascii_case("INSERT") => self.insert()?,
            Some(Token::Word(w)) if w.eq_ignore_ascii_case("UPDATE") => self.update()?,
            Some(Token::Word(w)) if w.eq_ignore_ascii_case("DELETE") => self.delete()?,
            _ => {
                return Err(self.error(format!(
                    "expected SELECT, INSERT, UPDATE or DELETE, found {}",
                    self.describe_next()
                )))
            }
        };
        self.eat_symbol(';');
        if self.pos < self.tokens.len() {
            return Err(self.error(format!("unexpected trailing {}", self.describe_next())));
        }
        Ok(stmt)
    }

    fn select(&mut self) -> Result<Statement, ParseError> {
        self.keyword("SELECT")?;
        let projection = if self.eat_symbol('*') {
            Projection::All
        } else if self.peek_keyword("COUNT") {
            self.pos += 1;
            self.symbol('(')?;
            self.symbol('*')?;
            self.symbol(')')?;
            Projection::Count
        } else {
            let mut cols = vec![self.identifier()?];
            while self.eat_symbol(',') {
                cols.push(self.identifier()?);
            }
            Projection::Columns(cols)
        };
        self.keyword("FROM")?;
        let table = self.identifier()?;
        let conjuncts = self.opt_where()?;
        Ok(Statement::Select {
            projection,
            table,
            conjuncts,
        })
    }

    fn insert(&mut self) -> Result<Statement, ParseError> {
        self.keyword("INSERT")?;
        self.keyword("INTO")?;
        let table = self.identifier()?;
        self.keyword("VALUES")?;
        self.symbol('(')?;
        let mut values = vec![self.literal()?];
        while self.eat_symbol(',') {
            values.push(self.literal()?);
        }
        self.symbol(')')?;
        Ok(Statement::Insert { table, values })
    }

    fn update(&mut self) -> Result<Statement, ParseError> {
        self.keyword("UPDATE")?;
        let table = self.identifier()?;
        self.keyword("SET")?;
        let mut assignments = Vec::new();
        loop {
            let col = self.identifier()?;
            self.symbol('=')?;
            assignments.push((col, self.literal()?));
            if !self.eat_symbol(',') {
                break;
            }
        }
        let conjuncts = self.opt_where()?;
        Ok(Statement::Update {
            table,
            assignments,
            conjuncts,
        })
    }

    fn delete(&mut self) -> Result<Statement, ParseError> {
        self.keyword("DELETE")?;
        self.keyword("FROM")?;
        let table = self.identifier()?;
        let conjuncts = self.opt_where()?;
        Ok(Statement::Delete { table, conjuncts })
    }

    fn opt_where(&mut self) -> Result<Vec<Comparison>, ParseError> {
        if !self.peek_keyword("WHERE") {
            return Ok(Vec::new());
        }
        self.pos += 1;
        let mut out = vec![self.comparison()?];
        while self.peek_keyword("AND") {
            self.pos += 1;
            out.push(self.comparison()?);
        }
        Ok(out)
    }

    fn comparison(&mut self) -> Result<Comparison, ParseError> {
        let column = self.identifier()?;
        let op = match self.peek() {
            Some(Token::Sym('=')) => CmpOp::Eq,
            Some(Token::Sym('<')) => CmpOp::Lt,
            Some(Token::Sym('>')) => CmpOp::Gt,
            _ => return Err(self.error(format!("expected comparison operator, found {}", self.describe_next()))),
        };
        self.pos += 1;
        let value = self.literal()?;
        Ok(Comparison { column, op, value })
    }
}

const RESERVED: &[&str] = &[
    "SELECT", "FROM", "WHERE", "AND", "INSERT", "INTO", "VALUES", "UPDATE", "SET", "DELETE", "COUNT",
];

fn is_reserved(word: &str) -> bool {
    RESERVED.iter().any(|k| k.eq_ignore_ascii_case(word))
}

/// Parses one statement of the supported subset.
pub fn db_parse(sql: &str) -> Result<Statement, ParseError> {
    let tokens = tokenize(sql)?;
    if tokens.is_empty() {
        return Err(ParseError {
            position: 1,
            message: "empty statement".into(),
        });
    }
    Parser { tokens, pos: 0 }.statement()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryOutput {
    Rows { columns: Vec<String>, rows: Vec<Row> },
    Affected(usize),
}

impl fmt::Display for QueryOutput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QueryOutput::Rows { rows, .. } => {
                f.write_str("[")?;
                for (i, row) in rows.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    f.write_str("(")?;
                    for (j, v) in row.iter().enumerate() {
                        if j > 0 {
                            f.write_str(", ")?;
                        }
                        write!(f, "{v}")?;
                    }
                    f.write_str(")")?;
                }
                f.write_str("]")
            }
            QueryOutput::Affected(n) => write!(f, "{n} row(s) affected"),
        }
    }
}

/// Predicate with every column resolved to an index.
struct Filter(Vec<(usize, CmpOp, Value)>);

impl Filter {
    fn matches(&self, row: &[Value]) -> bool {
        self.0.iter().all(|(i, op, v)| op.holds(row[*i].cmp(v)))
    }
}

fn typed_value(schema: &DbSchema, table: &str, column: &str, v: &Value) -> Result<usize, DbError> {
    let (i, ty) = schema.column_index(table, column)?;
    if ty != v.column_type() {
        return Err(DbError::Semantic(format!(
            "type mismatch: {table}.{column} is {ty}, literal {v} is {}",
            v.column_type()
        )));
    }
    Ok(i)
}

fn resolve_filter(schema: &DbSchema, table: &str, conjuncts: &[Comparison]) -> Result<Filter, DbError> {
    conjuncts
        .iter()
        .map(|c| Ok((typed_value(schema, table, &c.column, &c.value)?, c.op, c.value.clone())))
        .collect::<Result<_, DbError>>()
        .map(Filter)
}

/// Resolves every name and literal type against the schema without touching any rows.
pub fn db_check(schema: &DbSchema, stmt: &Statement) -> Result<(), DbError> {
    let table = stmt.table();
    let cols = schema.columns(table)?;
    match stmt {
        Statement::Select {
            projection, conjuncts, ..
        } => {
            if let Projection::Columns(names) = projection {
                for n in names {
                    schema.column_index(table, n)?;
                }
            }
            resolve_filter(schema, table, conjuncts)?;
        }
        Statement::Insert { values, .. } => check_row(table, cols, values)?,
        Statement::Update {
            assignments, conjuncts, ..
        } => {
            for (c, v) in assignments {
                typed_value(schema, table, c, v)?;
            }
            resolve_filter(schema, table, conjuncts)?;
        }
        Statement::Delete { conjuncts, .. } => {
            resolve_filter(schema, table, conjuncts)?;
        }
    }
    Ok(())
}

/// Executes a parsed statement. The input state is never modified.
pub fn db_execute_statement(state: &DbState, stmt: &Statement) -> Result<(DbState, QueryOutput), DbError> {
    db_check(&state.schema, stmt)?;
    let table = stmt.table();
    let schema = &state.schema;
    match stmt {
        Statement::Select {
            projection, conjuncts, ..
        } => {
            let filter = resolve_filter(schema, table, conjuncts)?;
            let matching = state.table_rows(table).iter().filter(|r| filter.matches(r));
            let out = match projection {
                Projection::Count => QueryOutput::Rows {
                    columns: vec!["COUNT(*)".into()],
                    rows: vec![vec![Value::Int(matching.count() as i64)]],
                },
                Projection::All => QueryOutput::Rows {
                    columns: schema.tables[table].iter().map(|c| c.name.clone()).collect(),
                    rows: matching.cloned().collect(),
                },
                Projection::Columns(names) => {
                    let idx = names
                        .iter()
                        .map(|n| schema.column_index(table, n).map(|(i, _)| i))
                        .collect::<Result<Vec<_>, _>>()?;
                    QueryOutput::Rows {
                        columns: names.clone(),
                        rows: matching.map(|r| idx.iter().map(|&i| r[i].clone()).collect()).collect(),
                    }
                }
            };
            Ok((state.clone(), out))
        }
        Statement::Insert { values, .. } => {
            let mut next = state.clone();
            next.rows.entry(table.to_string()).or_default().push(values.clone());
            Ok((next, QueryOutput::Affected(1)))
        }
        Statement::Update {
            assignments, conjuncts, ..
        } => {
            let filter = resolve_filter(schema, table, conjuncts)?;
            let sets = assignments
                .iter()
                .map(|(c, v)| Ok((typed_value(schema, table, c, v)?, v.clone())))
                .collect::<Result<Vec<_>, DbError>>()?;
            let mut next = state.clone();
            let mut affected = 0;
            for row in next.rows.entry(table.to_string()).or_default() {
                if filter.matches(row) {
                    for (i, v) in &sets {
                        row[*i] = v.clone();
                    }
                    affected += 1;
                }
            }
            if affected == 0 {
                return Ok((state.clone(), QueryOutput::Affected(0)));
            }
            Ok((next, QueryOutput::Affected(affected)))
        }
        Statement::Delete { conjuncts, .. } => {
            let filter = resolve_filter(schema, table, conjuncts)?;
            let mut next = state.clone();
            let rows = next.rows.entry(table.to_string()).or_default();
            let before = rows.len();
            rows.retain(|r| !filter.matches(r));
            let affected = before - rows.len();
            Ok((next, QueryOutput::Affected(affected)))
        }
    }
}

/// Parses and executes `sql` against `state`.
pub fn db_execute(state: &DbState, sql: &str) -> Result<(DbState, QueryOutput), DbError> {
    let stmt = db_parse(sql)?;
    db_execute_statement(state, &stmt)
}
