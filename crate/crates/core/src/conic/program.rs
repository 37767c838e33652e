use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Sparse row `Σ coeff·v[index]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseRow {
    pub entries: Vec<(usize, f64)>,
}

impl SparseRow {
    pub fn new(entries: Vec<(usize, f64)>) -> Self {
        Self { entries }
    }

    pub fn dot(&self, v: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, c)| c * v[i]).sum()
    }

    fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0_f64, |m, &(_, c)| m.max(c.abs()))
    }

    fn scale(&mut self, factor: f64) {
        for (_, c) in &mut self.entries {
            *c *= factor;
        }
    }

    fn max_index(&self) -> Option<usize> {
        self.entries.iter().map(|&(i, _)| i).max()
    }
}

/// `‖rows·v + offsets‖ ≤ rhs·v + rhs_offset`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SocConstraint {
    pub label: String,
    pub rows: Vec<SparseRow>,
    pub offsets: Vec<f64>,
    pub rhs: SparseRow,
    pub rhs_offset: f64,
}

impl SocConstraint {
    /// `‖A v + b‖ − (cᵀv + d)`; positive means violated.
    pub fn violation(&self, v: &[f64]) -> f64 {
        let norm = self
            .rows
            .iter()
            .zip(&self.offsets)
            .map(|(r, b)| {
                let u = r.dot(v) + b;
                u * u
            })
            .sum::<f64>()
            .sqrt();
        norm - (self.rhs.dot(v) + self.rhs_offset)
    }

    fn max_abs(&self) -> f64 {
        let rows = self.rows.iter().map(SparseRow::max_abs).fold(0.0_f64, f64::max);
        let offsets = self.offsets.iter().fold(0.0_f64, |m, b| m.max(b.abs()));
        rows.max(offsets).max(self.rhs.max_abs()).max(self.rhs_offset.abs())
    }

    fn scale(&mut self, factor: f64) {
        for r in &mut self.rows {
            r.scale(factor);
        }
        for b in &mut self.offsets {
            *b *= factor;
        }
        self.rhs.scale(factor);
        self.rhs_offset *= factor;
    }
}

/// `row·v + offset ≥ 0`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinearConstraint {
    pub label: String,
    pub row: SparseRow,
    pub offset: f64,
}

impl LinearConstraint {
    pub fn violation(&self, v: &[f64]) -> f64 {
        -(self.row.dot(v) + self.offset)
    }

    /// `v[index] ≥ 0`.
    pub fn nonnegative(label: impl Into<String>, index: usize) -> Self {
        Self { label: label.into(), row: SparseRow::new(vec![(index, 1.0)]), offset: 0.0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SocProgram {
    pub var_names: Vec<String>,
    pub cones: Vec<SocConstraint>,
    pub linear: Vec<LinearConstraint>,
    /// Optional starting point for the solver; any point works, a good one
    /// saves iterations.
    pub start: Option<Vec<f64>>,
}

impl SocProgram {
    pub fn with_vars(names: impl IntoIterator<Item = String>) -> Self {
        Self { var_names: names.into_iter().collect(), ..Default::default() }
    }

    pub fn num_vars(&self) -> usize {
        self.var_names.len()
    }

    pub fn add_var(&mut self, name: impl Into<String>) -> usize {
        self.var_names.push(name.into());
        self.var_names.len() - 1
    }

    /// Checks that every referenced variable exists and that row and
    /// offset counts agree.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        let bad = |what: String| Err(Error::DimensionMismatch(what));
        for c in &self.cones {
            if c.rows.len() != c.offsets.len() {
                return bad(format!("cone `{}` has {} rows but {} offsets", c.label, c.rows.len(), c.offsets.len()));
            }
            let max = c.rows.iter().chain(std::iter::once(&c.rhs)).filter_map(SparseRow::max_index).max();
            if let Some(idx) = max.filter(|&i| i >= n) {
                return bad(format!("cone `{}` references variable {idx} of {n}", c.label));
            }
        }
        for l in &self.linear {
            if let Some(idx) = l.row.max_index().filter(|&i| i >= n) {
                return bad(format!("linear `{}` references variable {idx} of {n}", l.label));
            }
        }
        if let Some(start) = &self.start {
            if start.len() != n {
                return bad(format!("start point has {} entries, expected {n}", start.len()));
            }
        }
        let finite = self.cones.iter().all(|c| c.max_abs().is_finite())
            && self.linear.iter().all(|l| l.row.max_abs().is_finite() && l.offset.is_finite());
        if !finite {
            return bad("non-finite coefficient".into());
        }
        Ok(())
    }

    /// Largest violation over all constraints at `v`.
    pub fn max_violation(&self, v: &[f64]) -> f64 {
        let cones = self.cones.iter().map(|c| c.violation(v));
        let linear = self.linear.iter().map(|l| l.violation(v));
        cones.chain(linear).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Copy with each constraint divided by its largest coefficient
    /// magnitude, so all data is O(1).
    pub fn normalized(&self) -> Self {
        let mut out = self.clone();
        for c in &mut out.cones {
            let m = c.max_abs();
            if m > 0.0 {
                c.scale(1.0 / m);
            }
        }
        for l in &mut out.linear {
            let m = l.row.max_abs().max(l.offset.abs());
            if m > 0.0 {
                l.row.scale(1.0 / m);
                l.offset /= m;
            }
        }
        out
    }

    /// One constraint per line:
    ///
    /// ```text
    /// var <index> <name>
    /// soc <label> t <d> [<idx>:<coef> ...] ; u <b> [<idx>:<coef> ...] ; u ...
    /// lin <label> <d> [<idx>:<coef> ...]
    /// ```
    ///
    /// Labels and names must not contain whitespace.
    pub fn to_text(&self) -> String {
        fn row(out: &mut String, offset: f64, r: &SparseRow) {
            let _ = write!(out, "{offset}");
            for &(i, c) in &r.entries {
                let _ = write!(out, " {i}:{c}");
            }
        }
        let mut out = String::from("# dmimo soc program\n");
        for (i, name) in self.var_names.iter().enumerate() {
            let _ = writeln!(out, "var {i} {name}");
        }
        for c in &self.cones {
            let _ = write!(out, "soc {} t ", c.label);
            row(&mut out, c.rhs_offset, &c.rhs);
            for (r, b) in c.rows.iter().zip(&c.offsets) {
                out.push_str(" ; u ");
                row(&mut out, *b, r);
            }
            out.push('\n');
        }
        for l in &self.linear {
            let _ = write!(out, "lin {} ", l.label);
            row(&mut out, l.offset, &l.row);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, reason: &str| Error::Parse { what: "soc program", reason: format!("line {line}: {reason}") };
        fn parse_row<'a>(tokens: impl Iterator<Item = &'a str>) -> Option<(f64, SparseRow)> {
            let mut tokens = tokens;
            let offset: f64 = tokens.next()?.parse().ok()?;
            let mut entries = Vec::new();
            for tok in tokens {
                let (i, c) = tok.split_once(':')?;
                entries.push((i.parse().ok()?, c.parse().ok()?));
            }
            Some((offset, SparseRow::new(entries)))
        }
        let mut program = SocProgram::default();
        for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut head = line.splitn(3, char::is_whitespace);
            let kind = head.next().unwrap_or_default();
            let label = head.next().ok_or_else(|| bad(lineno, "missing label"))?.to_string();
            let rest = head.next().unwrap_or_default();
            match kind {
                "var" => {
                    let idx: usize = label.parse().map_err(|_| bad(lineno, "bad variable index"))?;
                    if idx != program.var_names.len() {
                        return Err(bad(lineno, "variables must be listed in order"));
                    }
                    program.var_names.push(rest.trim().to_string());
                }
                "soc" => {
                    let mut parts = rest.split(';');
                    let t = parts.next().ok_or_else(|| bad(lineno, "missing rhs"))?;
                    let mut t_tokens = t.split_whitespace();
                    if t_tokens.next() != Some("t") {
                        return Err(bad(lineno, "expected `t`"));
                    }
                    let (rhs_offset, rhs) = parse_row(t_tokens).ok_or_else(|| bad(lineno, "bad rhs row"))?;
                    let mut cone = SocConstraint { label, rows: vec![], offsets: vec![], rhs, rhs_offset };
                    for part in parts {
                        let mut tokens = part.split_whitespace();
                        if tokens.next() != Some("u") {
                            return Err(bad(lineno, "expected `u`"));
                        }
                        let (b, r) = parse_row(tokens).ok_or_else(|| bad(lineno, "bad cone row"))?;
                        cone.rows.push(r);
                        cone.offsets.push(b);
                    }
                    program.cones.push(cone);
                }
                "lin" => {
                    let (offset, row) = parse_row(rest.split_whitespace()).ok_or_else(|| bad(lineno, "bad linear row"))?;
                    program.linear.push(LinearConstraint { label, row, offset });
                }
                other => return Err(bad(lineno, &format!("unknown record `{other}`"))),
            }
        }
        program.validate()?;
        Ok(program)
    }
}
