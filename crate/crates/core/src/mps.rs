//! Free-format MPS reading and writing for binary programs.
//!
//! Parsing happens in two steps: the text is read into an [`MpsDocument`] that
//! mirrors the file's sections (keeping line numbers for diagnostics), and the
//! document is then lowered into a [`BipInstance`]. Lowering rejects any column
//! that is not binary: it must be declared `BV`, or be integer with bounds
//! exactly `[0, 1]`.
//!
//! Ranged rows are split in two: the original name keeps the original sense and
//! right-hand side, and a `<name>_rng` row carries the other end of the interval.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use thiserror::Error;

use crate::error::Result;
use crate::model::{BipInstance, ObjectiveSense, Row, Sense};

/// Bound magnitudes at or above this are read as infinite.
const MPS_INFINITY: f64 = 1e30;

#[derive(Debug, Error)]
pub enum MpsError {
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },

    #[error("line {line}: unknown section {section}")]
    UnknownSection { line: usize, section: String },

    #[error("line {line}: variable {name} is not binary: {detail}")]
    UnsupportedVariable {
        name: String,
        line: usize,
        detail: String,
    },

    #[error("missing ENDATA")]
    MissingEndata,

    #[error("invalid model: {0}")]
    Invalid(String),

    #[error("reading MPS input: {0}")]
    Io(#[from] std::io::Error),
}

fn format_err(line: usize, msg: impl Into<String>) -> MpsError {
    MpsError::Format {
        line,
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Section {
    Name,
    ObjSense,
    Rows,
    Columns,
    Rhs,
    Ranges,
    Bounds,
    Endata,
}

impl Section {
    fn from_keyword(word: &str) -> Option<Self> {
        Some(match word {
            "NAME" => Section::Name,
            "OBJSENSE" => Section::ObjSense,
            "ROWS" => Section::Rows,
            "COLUMNS" => Section::Columns,
            "RHS" => Section::Rhs,
            "RANGES" => Section::Ranges,
            "BOUNDS" => Section::Bounds,
            "ENDATA" => Section::Endata,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    N,
    L,
    G,
    E,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowDecl {
    pub name: String,
    pub kind: RowKind,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnDecl {
    pub name: String,
    pub line: usize,
    /// Declared between `INTORG` / `INTEND` markers.
    pub integer: bool,
    pub objective: f64,
    /// `(row declaration index, coefficient)`, objective row excluded.
    pub entries: Vec<(usize, f64)>,
    pub lower: f64,
    pub upper: f64,
    pub binary_bound: bool,
    pub bound_line: Option<usize>,
}

/// Raw contents of an MPS file, section by section.
#[derive(Debug, Clone, PartialEq)]
pub struct MpsDocument {
    pub name: String,
    pub sense: ObjectiveSense,
    pub rows: Vec<RowDecl>,
    /// Index into `rows` of the objective (first `N` row).
    pub objective_row: Option<usize>,
    pub columns: Vec<ColumnDecl>,
    pub rhs: Vec<f64>,
    pub ranges: Vec<Option<f64>>,
    pub objective_constant: f64,
}

struct Parser {
    doc: MpsDocument,
    row_index: HashMap<String, usize>,
    col_index: HashMap<String, usize>,
    in_integer_block: bool,
    rhs_set: Option<String>,
    range_set: Option<String>,
    bound_set: Option<String>,
    seen_rhs: Vec<bool>,
    seen_objsense_value: bool,
}

impl MpsDocument {
    pub fn parse(text: &str) -> Result<Self, MpsError> {
        let mut p = Parser {
            doc: MpsDocument {
                name: String::new(),
                sense: ObjectiveSense::Minimize,
                rows: Vec::new(),
                objective_row: None,
                columns: Vec::new(),
                rhs: Vec::new(),
                ranges: Vec::new(),
                objective_constant: 0.0,
            },
            row_index: HashMap::new(),
            col_index: HashMap::new(),
            in_integer_block: false,
            rhs_set: None,
            range_set: None,
            bound_set: None,
            seen_rhs: Vec::new(),
            seen_objsense_value: false,
        };
        let mut section: Option<Section> = None;
        let mut ended = false;

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim_end();
            if trimmed.trim_start().is_empty() || trimmed.trim_start().starts_with('*') {
                continue;
            }
            if ended {
                return Err(format_err(line, "content after ENDATA"));
            }
            let is_header = !trimmed.starts_with(char::is_whitespace);
            if is_header {
                let mut words = trimmed.split_whitespace();
                let keyword = words.next().unwrap_or_default();
                let Some(next) = Section::from_keyword(keyword) else {
                    return Err(MpsError::UnknownSection {
                        line,
                        section: keyword.to_string(),
                    });
                };
                if let Some(cur) = section {
                    if next <= cur {
                        return Err(format_err(
                            line,
                            format!("section {keyword} out of order or repeated"),
                        ));
                    }
                }
                if next > Section::Columns && section < Some(Section::Columns) {
                    return Err(format_err(
                        line,
                        format!("section {keyword} before COLUMNS"),
                    ));
                }
                if next == Section::Columns && section < Some(Section::Rows) {
                    return Err(format_err(line, "COLUMNS before ROWS"));
                }
                section = Some(next);
                let rest: Vec<&str> = words.collect();
                match next {
                    Section::Name => p.doc.name = rest.join(" "),
                    Section::ObjSense => {
                        if let Some(word) = rest.first() {
                            p.objsense(word, line)?;
                        }
                    }
                    Section::Endata => ended = true,
                    _ => {}
                }
                if next == Section::Columns || next == Section::Endata {
                    p.finish_rows(line)?;
                }
                continue;
            }

            let tokens: Vec<&str> = trimmed.split_whitespace().collect();
            match section {
                None | Some(Section::Name) | Some(Section::Endata) => {
                    return Err(format_err(line, "data line outside of a section"));
                }
                Some(Section::ObjSense) => p.objsense(tokens[0], line)?,
                Some(Section::Rows) => p.row(&tokens, line)?,
                Some(Section::Columns) => p.column(&tokens, line)?,
                Some(Section::Rhs) => p.rhs(&tokens, line)?,
                Some(Section::Ranges) => p.range(&tokens, line)?,
                Some(Section::Bounds) => p.bound(&tokens, line)?,
            }
        }
        if !ended {
            return Err(MpsError::MissingEndata);
        }
        if p.in_integer_block {
            return Err(format_err(0, "INTORG marker without matching INTEND"));
        }
        Ok(p.doc)
    }

    /// Lowers the document into a validated binary instance.
    pub fn into_instance(self) -> Result<BipInstance, MpsError> {
        let obj_row = self.objective_row;
        let mut objective = Vec::with_capacity(self.columns.len());
        let mut var_names = Vec::with_capacity(self.columns.len());
        for col in &self.columns {
            let declared = if col.binary_bound {
                "declared BV"
            } else if col.integer {
                "integer"
            } else {
                return Err(MpsError::UnsupportedVariable {
                    name: col.name.clone(),
                    line: col.line,
                    detail: "continuous variable".into(),
                });
            };
            if col.lower != 0.0 || col.upper != 1.0 {
                return Err(MpsError::UnsupportedVariable {
                    name: col.name.clone(),
                    line: col.bound_line.unwrap_or(col.line),
                    detail: format!("{declared} with bounds [{}, {}]", col.lower, col.upper),
                });
            }
            objective.push(col.objective);
            var_names.push(col.name.clone());
        }
        if objective.is_empty() {
            return Err(MpsError::Invalid("no columns".into()));
        }

        // declared row -> its constraint entries
        let mut entries: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.rows.len()];
        for (j, col) in self.columns.iter().enumerate() {
            for &(i, a) in &col.entries {
                entries[i].push((j, a));
            }
        }

        let mut rows = Vec::new();
        let mut row_names: Vec<String> = Vec::new();
        let mut taken: std::collections::HashSet<String> =
            self.rows.iter().map(|r| r.name.clone()).collect();
        for (i, decl) in self.rows.iter().enumerate() {
            if decl.kind == RowKind::N {
                debug_assert!(Some(i) != obj_row || entries[i].is_empty());
                continue;
            }
            let b = self.rhs[i];
            let row_entries = std::mem::take(&mut entries[i]);
            let (sense, other) = match (decl.kind, self.ranges[i]) {
                (RowKind::L, None) => (Sense::Le, None),
                (RowKind::G, None) => (Sense::Ge, None),
                (RowKind::E, None) => (Sense::Eq, None),
                (RowKind::L, Some(r)) => (Sense::Le, Some((Sense::Ge, b - r.abs()))),
                (RowKind::G, Some(r)) => (Sense::Ge, Some((Sense::Le, b + r.abs()))),
                (RowKind::E, Some(r)) if r > 0.0 => (Sense::Ge, Some((Sense::Le, b + r))),
                (RowKind::E, Some(r)) if r < 0.0 => (Sense::Le, Some((Sense::Ge, b + r))),
                (RowKind::E, Some(_)) => (Sense::Eq, None),
                (RowKind::N, _) => unreachable!(),
            };
            rows.push(Row::new(row_entries.clone(), sense, b));
            row_names.push(decl.name.clone());
            if let Some((sense2, b2)) = other {
                let mut name = format!("{}_rng", decl.name);
                while taken.contains(&name) {
                    name.push('_');
                }
                taken.insert(name.clone());
                rows.push(Row::new(row_entries, sense2, b2));
                row_names.push(name);
            }
        }

        BipInstance::with_sense(
            self.name,
            self.sense,
            objective,
            self.objective_constant,
            rows,
            var_names,
            row_names,
        )
        .map_err(|e| MpsError::Invalid(e.to_string()))
    }
}

fn parse_number(token: &str, line: usize) -> Result<f64, MpsError> {
    let v: f64 = token
        .parse()
        .map_err(|_| format_err(line, format!("cannot parse number {token:?}")))?;
    if v.is_nan() {
        return Err(format_err(line, "NaN value"));
    }
    Ok(v)
}

fn parse_finite(token: &str, line: usize) -> Result<f64, MpsError> {
    let v = parse_number(token, line)?;
    if !v.is_finite() {
        return Err(format_err(line, format!("value {token} is not finite")));
    }
    Ok(v)
}

fn parse_bound(token: &str, line: usize) -> Result<f64, MpsError> {
    let v = parse_number(token, line)?;
    Ok(if v >= MPS_INFINITY {
        f64::INFINITY
    } else if v <= -MPS_INFINITY {
        f64::NEG_INFINITY
    } else {
        v
    })
}

impl Parser {
    fn objsense(&mut self, word: &str, line: usize) -> Result<(), MpsError> {
        if self.seen_objsense_value {
            return Err(format_err(line, "OBJSENSE given twice"));
        }
        self.seen_objsense_value = true;
        self.doc.sense = match word.to_ascii_uppercase().as_str() {
            "MAX" | "MAXIMIZE" => ObjectiveSense::Maximize,
            "MIN" | "MINIMIZE" => ObjectiveSense::Minimize,
            other => return Err(format_err(line, format!("unknown objective sense {other}"))),
        };
        Ok(())
    }

    fn row(&mut self, tokens: &[&str], line: usize) -> Result<(), MpsError> {
        if tokens.len() != 2 {
            return Err(format_err(line, "ROWS entries need a type and a name"));
        }
        let kind = match tokens[0].to_ascii_uppercase().as_str() {
            "N" => RowKind::N,
            "L" => RowKind::L,
            "G" => RowKind::G,
            "E" => RowKind::E,
            other => return Err(format_err(line, format!("unknown row type {other}"))),
        };
        let name = tokens[1].to_string();
        if self.row_index.contains_key(&name) {
            return Err(format_err(line, format!("duplicate row {name}")));
        }
        if kind == RowKind::N && self.doc.objective_row.is_none() {
            self.doc.objective_row = Some(self.doc.rows.len());
        }
        self.row_index.insert(name.clone(), self.doc.rows.len());
        self.doc.rows.push(RowDecl { name, kind, line });
        Ok(())
    }

    fn finish_rows(&mut self, line: usize) -> Result<(), MpsError> {
        if self.doc.rhs.len() != self.doc.rows.len() {
            if self.doc.objective_row.is_none() {
                return Err(format_err(line, "no objective (N) row declared"));
            }
            self.doc.rhs = vec![0.0; self.doc.rows.len()];
            self.doc.ranges = vec![None; self.doc.rows.len()];
            self.seen_rhs = vec![false; self.doc.rows.len()];
        }
        Ok(())
    }

    fn lookup_row(&self, name: &str, line: usize) -> Result<usize, MpsError> {
        self.row_index
            .get(name)
            .copied()
            .ok_or_else(|| format_err(line, format!("unknown row {name}")))
    }

    fn column(&mut self, tokens: &[&str], line: usize) -> Result<(), MpsError> {
        if tokens.len() >= 3 && tokens[1] == "'MARKER'" {
            match tokens[2] {
                "'INTORG'" if !self.in_integer_block => self.in_integer_block = true,
                "'INTEND'" if self.in_integer_block => self.in_integer_block = false,
                other => return Err(format_err(line, format!("unexpected marker {other}"))),
            }
            return Ok(());
        }
        if tokens.len() != 3 && tokens.len() != 5 {
            return Err(format_err(
                line,
                "COLUMNS entries need a column and one or two (row, value) pairs",
            ));
        }
        let name = tokens[0];
        let j = match self.doc.columns.last() {
            Some(last) if last.name == name => {
                if last.integer != self.in_integer_block {
                    return Err(format_err(
                        line,
                        format!("column {name} spans an integrality marker"),
                    ));
                }
                self.doc.columns.len() - 1
            }
            _ => {
                if self.col_index.contains_key(name) {
                    return Err(format_err(line, format!("duplicate column {name}")));
                }
                self.col_index
                    .insert(name.to_string(), self.doc.columns.len());
                self.doc.columns.push(ColumnDecl {
                    name: name.to_string(),
                    line,
                    integer: self.in_integer_block,
                    objective: 0.0,
                    entries: Vec::new(),
                    lower: 0.0,
                    upper: f64::INFINITY,
                    binary_bound: false,
                    bound_line: None,
                });
                self.doc.columns.len() - 1
            }
        };
        for pair in tokens[1..].chunks(2) {
            let i = self.lookup_row(pair[0], line)?;
            let v = parse_finite(pair[1], line)?;
            let col = &mut self.doc.columns[j];
            if Some(i) == self.doc.objective_row {
                col.objective = v;
            } else if self.doc.rows[i].kind == RowKind::N {
                // extra free rows carry no constraint
            } else {
                if col.entries.iter().any(|&(r, _)| r == i) {
                    return Err(format_err(
                        line,
                        format!("column {name} has two entries in row {}", pair[0]),
                    ));
                }
                col.entries.push((i, v));
            }
        }
        Ok(())
    }

    /// Splits `[set] row value [row value]` into the set name and the pairs.
    fn set_pairs<'t>(
        tokens: &'t [&'t str],
        line: usize,
    ) -> Result<(Option<&'t str>, &'t [&'t str]), MpsError> {
        match tokens.len() {
            2 | 4 => Ok((None, tokens)),
            3 | 5 => Ok((Some(tokens[0]), &tokens[1..])),
            _ => Err(format_err(line, "expected one or two (row, value) pairs")),
        }
    }

    fn rhs(&mut self, tokens: &[&str], line: usize) -> Result<(), MpsError> {
        let (set, pairs) = Self::set_pairs(tokens, line)?;
        if let Some(set) = set {
            match &self.rhs_set {
                None => self.rhs_set = Some(set.to_string()),
                Some(s) if s != set => return Ok(()),
                _ => {}
            }
        }
        for pair in pairs.chunks(2) {
            let i = self.lookup_row(pair[0], line)?;
            let v = parse_finite(pair[1], line)?;
            if self.seen_rhs[i] {
                return Err(format_err(
                    line,
                    format!("duplicate RHS for row {}", pair[0]),
                ));
            }
            self.seen_rhs[i] = true;
            if Some(i) == self.doc.objective_row {
                self.doc.objective_constant = -v;
            } else {
                self.doc.rhs[i] = v;
            }
        }
        Ok(())
    }

    fn range(&mut self, tokens: &[&str], line: usize) -> Result<(), MpsError> {
        let (set, pairs) = Self::set_pairs(tokens, line)?;
        if let Some(set) = set {
            match &self.range_set {
                None => self.range_set = Some(set.to_string()),
                Some(s) if s != set => return Ok(()),
                _ => {}
            }
        }
        for pair in pairs.chunks(2) {
            let i = self.lookup_row(pair[0], line)?;
            let v = parse_finite(pair[1], line)?;
            if self.doc.rows[i].kind == RowKind::N {
                return Err(format_err(line, format!("range on free row {}", pair[0])));
            }
            if self.doc.ranges[i].is_some() {
                return Err(format_err(
                    line,
                    format!("duplicate range for row {}", pair[0]),
                ));
            }
            self.doc.ranges[i] = Some(v);
        }
        Ok(())
    }

    fn bound(&mut self, tokens: &[&str], line: usize) -> Result<(), MpsError> {
        let kind = tokens[0].to_ascii_uppercase();
        let needs_value = matches!(kind.as_str(), "UP" | "LO" | "FX" | "LI" | "UI" | "SC");
        let (set, col_name, value) = match (tokens.len(), needs_value) {
            (4, _) => (Some(tokens[1]), tokens[2], Some(tokens[3])),
            (3, true) => (None, tokens[1], Some(tokens[2])),
            (3, false) if self.col_index.contains_key(tokens[2]) => {
                (Some(tokens[1]), tokens[2], None)
            }
            (3, false) => (None, tokens[1], Some(tokens[2])),
            (2, false) => (None, tokens[1], None),
            _ => return Err(format_err(line, format!("malformed {kind} bound"))),
        };
        if let Some(set) = set {
            match &self.bound_set {
                None => self.bound_set = Some(set.to_string()),
                Some(s) if s != set => return Ok(()),
                _ => {}
            }
        }
        let j = *self
            .col_index
            .get(col_name)
            .ok_or_else(|| format_err(line, format!("bound on unknown column {col_name}")))?;
        let value = value.map(|v| parse_bound(v, line)).transpose()?;
        let col = &mut self.doc.columns[j];
        col.bound_line = Some(line);
        match kind.as_str() {
            "UP" | "UI" => col.upper = value.unwrap_or_default(),
            "LO" | "LI" => col.lower = value.unwrap_or_default(),
            "FX" => {
                let v = value.unwrap_or_default();
                col.lower = v;
                col.upper = v;
            }
            "MI" => col.lower = f64::NEG_INFINITY,
            "PL" => col.upper = f64::INFINITY,
            "FR" => {
                col.lower = f64::NEG_INFINITY;
                col.upper = f64::INFINITY;
            }
            "BV" => {
                col.lower = 0.0;
                col.upper = 1.0;
                col.binary_bound = true;
            }
            "SC" => {
                return Err(MpsError::UnsupportedVariable {
                    name: col_name.to_string(),
                    line,
                    detail: "semicontinuous variable".into(),
                })
            }
            other => return Err(format_err(line, format!("unknown bound type {other}"))),
        }
        if matches!(kind.as_str(), "LI" | "UI") {
            col.integer = true;
        }
        Ok(())
    }
}

/// Parses MPS text into a binary instance.
pub fn parse_mps_str(text: &str) -> Result<BipInstance, MpsError> {
    MpsDocument::parse(text)?.into_instance()
}

/// Parses MPS from a byte stream.
pub fn parse_mps<R: Read>(mut reader: R) -> Result<BipInstance, MpsError> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    parse_mps_str(&String::from_utf8_lossy(&bytes))
}

/// Reads an `.mps` file, transparently decompressing `.gz`.
pub fn read_mps_file(path: impl AsRef<Path>) -> Result<BipInstance, MpsError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        parse_mps(flate2::read::GzDecoder::new(file))
    } else {
        parse_mps(std::io::BufReader::new(file))
    }
}

/// Shortest text that parses back to exactly `v`.
fn fmt_num(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-4 || v.abs() >= 1e15) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

/// Renders an instance as free-format MPS with every column binary.
pub fn mps_string(instance: &BipInstance) -> String {
    let mut obj_name = String::from("OBJ");
    while instance.row_names().contains(&obj_name) {
        obj_name.push('_');
    }
    let original = instance.original_objective();
    let mut out = String::new();
    let _ = writeln!(out, "NAME          {}", instance.name());
    if instance.is_negated() {
        out.push_str("OBJSENSE\n    MAX\n");
    }
    out.push_str("ROWS\n");
    let _ = writeln!(out, " N  {obj_name}");
    for (row, name) in instance.rows().iter().zip(instance.row_names()) {
        let kind = match row.sense {
            Sense::Le => 'L',
            Sense::Ge => 'G',
            Sense::Eq => 'E',
        };
        let _ = writeln!(out, " {kind}  {name}");
    }
    out.push_str("COLUMNS\n");
    out.push_str("    MARKER                 'MARKER'                 'INTORG'\n");
    for (j, (var, &c)) in instance.var_names().iter().zip(&original).enumerate() {
        let column = instance.column(j);
        if c != 0.0 || column.is_empty() {
            let _ = writeln!(out, "    {var}  {obj_name}  {}", fmt_num(c));
        }
        for &(i, a) in column {
            let _ = writeln!(
                out,
                "    {var}  {}  {}",
                instance.row_names()[i],
                fmt_num(a)
            );
        }
    }
    out.push_str("    MARKER                 'MARKER'                 'INTEND'\n");
    out.push_str("RHS\n");
    for (row, name) in instance.rows().iter().zip(instance.row_names()) {
        if row.rhs != 0.0 {
            let _ = writeln!(out, "    RHS  {name}  {}", fmt_num(row.rhs));
        }
    }
    let constant = instance.report_objective(instance.objective_offset());
    if constant != 0.0 {
        let _ = writeln!(out, "    RHS  {obj_name}  {}", fmt_num(-constant));
    }
    out.push_str("BOUNDS\n");
    for var in instance.var_names() {
        let _ = writeln!(out, " BV BND  {var}");
    }
    out.push_str("ENDATA\n");
    out
}

/// Writes `instance` to `path` in free-format MPS.
pub fn write_mps(instance: &BipInstance, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, mps_string(instance))?;
    Ok(())
}
