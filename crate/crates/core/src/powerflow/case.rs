//! Grid description and its plain-text file format.
//!
//! ```text
//! # comment (anything after '#' is ignored)
//! case <name>
//! base_mva <MVA>              # optional, default 100
//!
//! [bus]
//! # id type(slack|pv|pq) Pd Qd Gs Bs Vm Va(deg) baseKV
//! [branch]
//! # from to r x b tap shift(deg)
//! [gen]
//! # bus Pg Qg Vset
//! ```
//!
//! Loads, generation and shunts are in MW / MVAr; impedances in per unit.
//! `tap` is the off-nominal ratio on the from side (1 for lines).

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusType {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub kind: BusType,
    pub pd: f64,
    pub qd: f64,
    pub gs: f64,
    pub bs: f64,
    pub vm: f64,
    /// Degrees.
    pub va: f64,
    pub base_kv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    pub b: f64,
    pub tap: f64,
    /// Degrees.
    pub shift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: usize,
    pub pg: f64,
    pub qg: f64,
    pub vset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCase {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
}

pub const IEEE14: &str = include_str!("../../data/ieee14.case");
pub const IEEE30: &str = include_str!("../../data/ieee30.case");

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Header,
    Bus,
    Branch,
    Gen,
}

fn parse_error(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column,
        message: message.into(),
    }
}

/// Whitespace tokens with 1-based start columns.
fn tokens(line: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                out.push((s + 1, &line[s..i]));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push((s + 1, &line[s..]));
    }
    out
}

fn number(line: usize, (col, tok): (usize, &str)) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| parse_error(line, col, format!("expected a number, found {tok:?}")))?;
    if !v.is_finite() {
        return Err(parse_error(line, col, "value must be finite"));
    }
    Ok(v)
}

fn index(line: usize, (col, tok): (usize, &str)) -> Result<usize> {
    tok.parse()
        .map_err(|_| parse_error(line, col, format!("expected a bus id, found {tok:?}")))
}

pub fn parse_case(text: &str) -> Result<GridCase> {
    let mut case = GridCase {
        name: String::new(),
        base_mva: 100.0,
        buses: Vec::new(),
        branches: Vec::new(),
        generators: Vec::new(),
    };
    let mut section = Section::Header;
    let mut last_line = 0;
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        last_line = line_no;
        let content = raw.split('#').next().unwrap_or("");
        let toks = tokens(content);
        if toks.is_empty() {
            continue;
        }
        let first = toks[0].1;
        if first.starts_with('[') {
            section = match first {
                "[bus]" => Section::Bus,
                "[branch]" => Section::Branch,
                "[gen]" => Section::Gen,
                other => return Err(parse_error(line_no, toks[0].0, format!("unknown section {other}"))),
            };
            continue;
        }
        let expect = |k: usize| -> Result<()> {
            if toks.len() != k {
                let col = toks.get(k).map(|t| t.0).unwrap_or(content.trim_end().len() + 1);
                return Err(parse_error(line_no, col, format!("expected {k} columns, found {}", toks.len())));
            }
            Ok(())
        };
        match section {
            Section::Header => match first {
                "case" => {
                    expect(2)?;
                    case.name = toks[1].1.to_string();
                }
                "base_mva" => {
                    expect(2)?;
                    case.base_mva = number(line_no, toks[1])?;
                }
                other => return Err(parse_error(line_no, toks[0].0, format!("unknown header key {other}"))),
            },
            Section::Bus => {
                expect(9)?;
                let kind = match toks[1].1.to_ascii_lowercase().as_str() {
                    "slack" | "ref" => BusType::Slack,
                    "pv" => BusType::Pv,
                    "pq" => BusType::Pq,
                    other => return Err(parse_error(line_no, toks[1].0, format!("unknown bus type {other}"))),
                };
                case.buses.push(Bus {
                    id: index(line_no, toks[0])?,
                    kind,
                    pd: number(line_no, toks[2])?,
                    qd: number(line_no, toks[3])?,
                    gs: number(line_no, toks[4])?,
                    bs: number(line_no, toks[5])?,
                    vm: number(line_no, toks[6])?,
                    va: number(line_no, toks[7])?,
                    base_kv: number(line_no, toks[8])?,
                });
            }
            Section::Branch => {
                expect(7)?;
                case.branches.push(Branch {
                    from: index(line_no, toks[0])?,
                    to: index(line_no, toks[1])?,
                    r: number(line_no, toks[2])?,
                    x: number(line_no, toks[3])?,
                    b: number(line_no, toks[4])?,
                    tap: number(line_no, toks[5])?,
                    shift: number(line_no, toks[6])?,
                });
            }
            Section::Gen => {
                expect(4)?;
                case.generators.push(Generator {
                    bus: index(line_no, toks[0])?,
                    pg: number(line_no, toks[1])?,
                    qg: number(line_no, toks[2])?,
                    vset: number(line_no, toks[3])?,
                });
            }
        }
    }
    if case.buses.is_empty() {
        return Err(parse_error(last_line.max(1), 1, "no bus table"));
    }
    case.validate()?;
    Ok(case)
}

impl GridCase {
    pub fn ieee14() -> Self {
        parse_case(IEEE14).expect("embedded case parses")
    }

    pub fn ieee30() -> Self {
        parse_case(IEEE30).expect("embedded case parses")
    }

    /// Embedded case by name.
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "ieee14" | "case14" => Some(Self::ieee14()),
            "ieee30" | "case30" => Some(Self::ieee30()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_mva > 0.0) {
            return Err(Error::Validation("base_mva must be positive".into()));
        }
        let slack = self.buses.iter().filter(|b| b.kind == BusType::Slack).count();
        if slack != 1 {
            return Err(Error::Validation(format!("expected exactly one slack bus, found {slack}")));
        }
        let mut ids = HashSet::new();
        for b in &self.buses {
            if !ids.insert(b.id) {
                return Err(Error::Validation(format!("duplicate bus id {}", b.id)));
            }
            if !(b.vm > 0.0) {
                return Err(Error::Validation(format!("bus {} has non-positive Vm", b.id)));
            }
        }
        for br in &self.branches {
            for end in [br.from, br.to] {
                if !ids.contains(&end) {
                    return Err(Error::Validation(format!("branch endpoint {end} is not a bus")));
                }
            }
            if br.from == br.to {
                return Err(Error::Validation(format!("branch {}-{} is a self loop", br.from, br.to)));
            }
            if !(br.tap > 0.0) {
                return Err(Error::Validation(format!("branch {}-{} has tap <= 0", br.from, br.to)));
            }
        }
        for g in &self.generators {
            if !ids.contains(&g.bus) {
                return Err(Error::Validation(format!("generator at unknown bus {}", g.bus)));
            }
            if !(g.vset > 0.0) {
                return Err(Error::Validation(format!("generator at bus {} has non-positive Vset", g.bus)));
            }
        }
        if self.buses.len() > 1 && !self.is_connected() {
            return Err(Error::Validation("network is not connected".into()));
        }
        Ok(())
    }

    fn is_connected(&self) -> bool {
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for br in &self.branches {
            let (f, t) = (self.bus_index(br.from).unwrap(), self.bus_index(br.to).unwrap());
            adj[f].push(t);
            adj[t].push(f);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn slack_index(&self) -> usize {
        self.buses.iter().position(|b| b.kind == BusType::Slack).expect("validated case")
    }

    /// Bus indices with unknown angle (PV then PQ, in bus order).
    pub fn pvpq(&self) -> Vec<usize> {
        (0..self.buses.len()).filter(|&i| self.buses[i].kind != BusType::Slack).collect()
    }

    pub fn pq(&self) -> Vec<usize> {
        (0..self.buses.len()).filter(|&i| self.buses[i].kind == BusType::Pq).collect()
    }

    pub fn unknown_count(&self) -> usize {
        self.pvpq().len() + self.pq().len()
    }

    /// Per-bus generator totals `(Pg, Qg)` in MW / MVAr.
    pub fn generation(&self) -> (Vec<f64>, Vec<f64>) {
        let mut pg = vec![0.0; self.buses.len()];
        let mut qg = vec![0.0; self.buses.len()];
        for g in &self.generators {
            let i = self.bus_index(g.bus).unwrap();
            pg[i] += g.pg;
            qg[i] += g.qg;
        }
        (pg, qg)
    }

    /// Voltage magnitude set points: generator `Vset` at slack/PV buses,
    /// the bus `Vm` column elsewhere.
    pub fn voltage_setpoints(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.buses.iter().map(|b| b.vm).collect();
        for g in &self.generators {
            let i = self.bus_index(g.bus).unwrap();
            if self.buses[i].kind != BusType::Pq {
                v[i] = g.vset;
            }
        }
        v
    }

    /// SHA-256 of a canonical JSON rendering, for manifests.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("case serializes");
        hex(&Sha256::digest(bytes))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedded_counts() {
        let c = GridCase::ieee14();
        assert_eq!((c.buses.len(), c.branches.len(), c.generators.len()), (14, 20, 5));
        assert_eq!(c.unknown_count(), 13 + 9);
        let c = GridCase::ieee30();
        assert_eq!((c.buses.len(), c.branches.len(), c.generators.len()), (30, 41, 6));
        assert_eq!(c.unknown_count(), 29 + 24);
    }

    #[test]
    fn two_slack_buses_rejected() {
        let text = IEEE14.replacen("2     pv ", "2     slack ", 1);
        assert!(matches!(parse_case(&text), Err(Error::Validation(_))));
    }

    #[test]
    fn empty_file_is_parse_error() {
        assert!(matches!(parse_case(""), Err(Error::Parse { .. })));
        assert!(matches!(parse_case("# only a comment\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn bad_number_reports_position() {
        let text = "case t\n[bus]\n1 slack 0 0 0 0 1.0 zero 0\n";
        match parse_case(text) {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (3, 21)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_column_count() {
        let text = "[bus]\n1 slack 0 0 0 0 1.0 0\n";
        assert!(matches!(parse_case(text), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn dangling_branch_and_bad_tap() {
        let base = "[bus]\n1 slack 0 0 0 0 1 0 0\n2 pq 1 0 0 0 1 0 0\n[branch]\n";
        assert!(matches!(parse_case(&format!("{base}1 3 0 0.1 0 1 0\n")), Err(Error::Validation(_))));
        assert!(matches!(parse_case(&format!("{base}1 2 0 0.1 0 0 0\n")), Err(Error::Validation(_))));
        assert!(parse_case(&format!("{base}1 2 0 0.1 0 1 0\n")).is_ok());
        assert!(matches!(parse_case(base), Err(Error::Validation(_))), "disconnected");
    }
}
