//! Grid case description and the line-oriented case file format.
//!
//! A case file has four sections, each introduced by a line holding only the
//! section name (`BUS`, `BRANCH`, `GEN`, `BASE`). Records are comma-separated
//! and `#` starts a comment. See `docs/case-format.md`.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::str::FromStr;

use super::GridError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

impl BusKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BusKind::Slack => "slack",
            BusKind::Pv => "pv",
            BusKind::Pq => "pq",
        }
    }
}

impl FromStr for BusKind {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "slack" | "ref" => Ok(BusKind::Slack),
            "pv" => Ok(BusKind::Pv),
            "pq" => Ok(BusKind::Pq),
            _ => Err(()),
        }
    }
}

/// Loads are in MW / MVAr, voltage limits and shunts in per-unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: u32,
    pub kind: BusKind,
    pub p_load: f64,
    pub q_load: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub g_shunt: f64,
    pub b_shunt: f64,
}

/// π-model branch. `tap` is the off-nominal ratio on the from side (1.0 = none).
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from: u32,
    pub to: u32,
    pub r: f64,
    pub x: f64,
    pub b_charging: f64,
    pub tap: f64,
}

/// Quadratic cost `a·P² + b·P + c` with `P` in MW and the result in $/h.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostCurve {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl CostCurve {
    pub fn eval(&self, p_mw: f64) -> f64 {
        (self.a * p_mw + self.b) * p_mw + self.c
    }

    /// Marginal cost in $/MWh.
    pub fn marginal(&self, p_mw: f64) -> f64 {
        2.0 * self.a * p_mw + self.b
    }

    pub fn scaled(&self, s: f64) -> CostCurve {
        CostCurve {
            a: self.a * s,
            b: self.b * s,
            c: self.c * s,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub bus: u32,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub cost: CostCurve,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCase {
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    pub base_mva: f64,
}

impl GridCase {
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_generators(&self) -> usize {
        self.generators.len()
    }

    /// Bus id → row index in every bus-ordered vector and matrix.
    pub fn bus_order(&self) -> HashMap<u32, usize> {
        self.buses
            .iter()
            .enumerate()
            .map(|(i, b)| (b.id, i))
            .collect()
    }

    pub fn slack_index(&self) -> Option<usize> {
        self.buses.iter().position(|b| b.kind == BusKind::Slack)
    }

    pub fn bus_ids(&self) -> Vec<u32> {
        self.buses.iter().map(|b| b.id).collect()
    }

    /// Checks every structural invariant. Generator limit checks run last so
    /// that topology errors are reported first.
    pub fn validate(&self) -> Result<(), GridError> {
        let mut seen = HashSet::new();
        for bus in &self.buses {
            if !seen.insert(bus.id) {
                return Err(GridError::DuplicateBusId(bus.id));
            }
            if bus.v_min > bus.v_max {
                return Err(GridError::InvalidLimits(format!(
                    "bus {}: v_min {} > v_max {}",
                    bus.id, bus.v_min, bus.v_max
                )));
            }
        }
        let slack = self
            .buses
            .iter()
            .filter(|b| b.kind == BusKind::Slack)
            .count();
        match slack {
            0 => return Err(GridError::NoSlackBus),
            1 => {}
            n => return Err(GridError::MultipleSlackBuses(n)),
        }
        for (i, br) in self.branches.iter().enumerate() {
            for end in [br.from, br.to] {
                if !seen.contains(&end) {
                    return Err(GridError::DanglingBranch {
                        branch: i,
                        line: None,
                        bus: end,
                    });
                }
            }
            if br.r * br.r + br.x * br.x <= 0.0 {
                return Err(GridError::ZeroImpedanceBranch { branch: i });
            }
            if !(br.tap > 0.0) {
                return Err(GridError::InvalidLimits(format!(
                    "branch {i}: tap ratio must be positive, got {}",
                    br.tap
                )));
            }
        }
        for (k, gen) in self.generators.iter().enumerate() {
            if !seen.contains(&gen.bus) {
                return Err(GridError::UnknownGeneratorBus {
                    generator: k,
                    bus: gen.bus,
                });
            }
        }
        self.check_generator_limits()?;
        if !(self.base_mva > 0.0) {
            return Err(GridError::InvalidLimits(format!(
                "base_mva must be positive, got {}",
                self.base_mva
            )));
        }
        Ok(())
    }

    pub fn check_generator_limits(&self) -> Result<(), GridError> {
        for (k, gen) in self.generators.iter().enumerate() {
            if gen.p_min > gen.p_max || gen.q_min > gen.q_max {
                return Err(GridError::InvalidLimits(format!(
                    "generator {k} at bus {}: p [{}, {}], q [{}, {}]",
                    gen.bus, gen.p_min, gen.p_max, gen.q_min, gen.q_max
                )));
            }
        }
        Ok(())
    }

    /// Renders the case in the text format accepted by [`parse_case`].
    /// Floats use the shortest representation that reparses exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("BASE\n");
        let _ = writeln!(out, "{}", self.base_mva);
        out.push_str("\nBUS\n# id, type, p_load, q_load, v_min, v_max, g_shunt, b_shunt\n");
        for b in &self.buses {
            let _ = writeln!(
                out,
                "{}, {}, {}, {}, {}, {}, {}, {}",
                b.id,
                b.kind.as_str(),
                b.p_load,
                b.q_load,
                b.v_min,
                b.v_max,
                b.g_shunt,
                b.b_shunt
            );
        }
        out.push_str("\nBRANCH\n# from, to, r, x, b_charging, tap\n");
        for br in &self.branches {
            let _ = writeln!(
                out,
                "{}, {}, {}, {}, {}, {}",
                br.from, br.to, br.r, br.x, br.b_charging, br.tap
            );
        }
        out.push_str("\nGEN\n# bus, p_min, p_max, q_min, q_max, a, b, c\n");
        for g in &self.generators {
            let _ = writeln!(
                out,
                "{}, {}, {}, {}, {}, {}, {}, {}",
                g.bus, g.p_min, g.p_max, g.q_min, g.q_max, g.cost.a, g.cost.b, g.cost.c
            );
        }
        out
    }
}

impl FromStr for GridCase {
    type Err = GridError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_case(s)
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Bus,
    Branch,
    Gen,
    Base,
}

struct Record<'a> {
    line: usize,
    fields: Vec<(usize, &'a str)>,
}

impl<'a> Record<'a> {
    fn split(line_no: usize, content: &'a str) -> Self {
        let mut fields = Vec::new();
        let mut start = 0;
        for piece in content.split(',') {
            let lead = piece.len() - piece.trim_start().len();
            fields.push((start + lead + 1, piece.trim()));
            start += piece.len() + 1;
        }
        Record {
            line: line_no,
            fields,
        }
    }

    fn expect_len(&self, n: usize) -> Result<(), GridError> {
        if self.fields.len() != n {
            let column = self.fields.last().map(|f| f.0).unwrap_or(1);
            return Err(GridError::MalformedField {
                line: self.line,
                column,
                message: format!("expected {n} fields, found {}", self.fields.len()),
            });
        }
        Ok(())
    }

    fn err(&self, idx: usize, message: String) -> GridError {
        GridError::MalformedField {
            line: self.line,
            column: self.fields[idx].0,
            message,
        }
    }

    fn float(&self, idx: usize, name: &str) -> Result<f64, GridError> {
        let raw = self.fields[idx].1;
        match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(self.err(
                idx,
                format!("{name}: expected a finite number, got {raw:?}"),
            )),
        }
    }

    fn id(&self, idx: usize, name: &str) -> Result<u32, GridError> {
        let raw = self.fields[idx].1;
        raw.parse::<u32>()
            .map_err(|_| self.err(idx, format!("{name}: expected a bus id, got {raw:?}")))
    }
}

/// Parses and validates a case file.
pub fn parse_case(text: &str) -> Result<GridCase, GridError> {
    let mut section = None;
    let mut buses = Vec::new();
    let mut branches = Vec::new();
    let mut generators = Vec::new();
    let mut base_mva = None;
    let mut branch_lines = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let content = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let trimmed = content.trim();
        if trimmed.is_empty() {
            continue;
        }
        let header = match trimmed.to_ascii_uppercase().as_str() {
            "BUS" => Some(Section::Bus),
            "BRANCH" => Some(Section::Branch),
            "GEN" => Some(Section::Gen),
            "BASE" => Some(Section::Base),
            _ => None,
        };
        if let Some(h) = header {
            section = Some(h);
            continue;
        }
        let rec = Record::split(line_no, content);
        match section {
            None => {
                return Err(GridError::MalformedField {
                    line: line_no,
                    column: 1,
                    message: "record before any section header".into(),
                })
            }
            Some(Section::Base) => {
                rec.expect_len(1)?;
                if base_mva.is_some() {
                    return Err(rec.err(0, "BASE given more than once".into()));
                }
                base_mva = Some(rec.float(0, "base_mva")?);
            }
            Some(Section::Bus) => {
                rec.expect_len(8)?;
                let kind = rec.fields[1]
                    .1
                    .parse::<BusKind>()
                    .map_err(|_| rec.err(1, format!("unknown bus type {:?}", rec.fields[1].1)))?;
                buses.push(Bus {
                    id: rec.id(0, "id")?,
                    kind,
                    p_load: rec.float(2, "p_load")?,
                    q_load: rec.float(3, "q_load")?,
                    v_min: rec.float(4, "v_min")?,
                    v_max: rec.float(5, "v_max")?,
                    g_shunt: rec.float(6, "g_shunt")?,
                    b_shunt: rec.float(7, "b_shunt")?,
                });
            }
            Some(Section::Branch) => {
                rec.expect_len(6)?;
                branch_lines.push(line_no);
                branches.push(Branch {
                    from: rec.id(0, "from")?,
                    to: rec.id(1, "to")?,
                    r: rec.float(2, "r")?,
                    x: rec.float(3, "x")?,
                    b_charging: rec.float(4, "b_charging")?,
                    tap: rec.float(5, "tap")?,
                });
            }
            Some(Section::Gen) => {
                rec.expect_len(8)?;
                generators.push(Generator {
                    bus: rec.id(0, "bus")?,
                    p_min: rec.float(1, "p_min")?,
                    p_max: rec.float(2, "p_max")?,
                    q_min: rec.float(3, "q_min")?,
                    q_max: rec.float(4, "q_max")?,
                    cost: CostCurve {
                        a: rec.float(5, "a")?,
                        b: rec.float(6, "b")?,
                        c: rec.float(7, "c")?,
                    },
                });
            }
        }
    }

    let case = GridCase {
        buses,
        branches,
        generators,
        base_mva: base_mva.unwrap_or(100.0),
    };
    case.validate().map_err(|e| match e {
        GridError::DanglingBranch { branch, bus, .. } => GridError::DanglingBranch {
            branch,
            line: Some(branch_lines[branch]),
            bus,
        },
        other => other,
    })?;
    Ok(case)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const ONE_BUS: &str = "\
BASE
100
BUS
1, slack, 100, 0, 0.95, 1.05, 0, 0
GEN
1, 0, 200, -100, 100, 0.01, 20, 0
";

    #[test]
    fn minimal_one_bus_case() {
        let case = parse_case(ONE_BUS).unwrap();
        assert_eq!(case.n_buses(), 1);
        assert_eq!(case.n_generators(), 1);
        assert_eq!(case.buses[0].p_load, 100.0);
        assert_eq!(case.generators[0].cost.marginal(100.0), 22.0);
    }

    #[test]
    fn dangling_branch_reports_line_and_bus() {
        let text = format!("{ONE_BUS}BRANCH\n1, 99, 0.01, 0.1, 0, 1\n");
        match parse_case(&text) {
            Err(GridError::DanglingBranch { line, bus, .. }) => {
                assert_eq!(bus, 99);
                assert_eq!(line, Some(8));
            }
            other => panic!("expected DanglingBranch, got {other:?}"),
        }
    }

    #[test]
    fn malformed_field_has_position() {
        let text = ONE_BUS.replace("1, slack, 100,", "1, slack, 1O0,");
        match parse_case(&text) {
            Err(GridError::MalformedField { line, column, .. }) => {
                assert_eq!(line, 4);
                assert_eq!(column, 11);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_and_duplicate_ids() {
        let no_slack = ONE_BUS.replace("slack", "pq");
        assert!(matches!(parse_case(&no_slack), Err(GridError::NoSlackBus)));
        let dup = ONE_BUS.replace(
            "GEN",
            "2, pq, 0, 0, 0.9, 1.1, 0, 0\n1, pq, 0, 0, 0.9, 1.1, 0, 0\nGEN",
        );
        assert!(matches!(
            parse_case(&dup),
            Err(GridError::DuplicateBusId(1))
        ));
    }

    #[test]
    fn rejects_bad_limits_and_zero_impedance() {
        let bad = ONE_BUS.replace("1, 0, 200,", "1, 300, 200,");
        assert!(matches!(parse_case(&bad), Err(GridError::InvalidLimits(_))));
        let two = ONE_BUS.replace(
            "GEN",
            "2, pq, 0, 0, 0.9, 1.1, 0, 0\nBRANCH\n1, 2, 0, 0, 0, 1\nGEN",
        );
        assert!(matches!(
            parse_case(&two),
            Err(GridError::ZeroImpedanceBranch { branch: 0 })
        ));
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = format!(
            "# header comment\n\n{}",
            ONE_BUS.replace("100\n", "100  # MVA\n")
        );
        assert_eq!(parse_case(&text).unwrap(), parse_case(ONE_BUS).unwrap());
    }

    #[test]
    fn serialized_case_reparses_identically() {
        let case = parse_case(ONE_BUS).unwrap();
        assert_eq!(parse_case(&case.to_text()).unwrap(), case);
    }
}
