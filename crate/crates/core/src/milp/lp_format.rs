use std::io::{self, Write};

use super::{MilpProblem, Relation};

fn sanitize(name: &str, fallback: String) -> String {
    let clean: String =
        name.chars().map(|c| if c.is_ascii_alphanumeric() || "_.[]".contains(c) { c } else { '_' }).collect();
    match clean.chars().next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => clean,
        _ => fallback,
    }
}

fn term(out: &mut impl Write, first: bool, coeff: f64, name: &str) -> io::Result<()> {
    let sign = if coeff < 0.0 {
        "-"
    } else if first {
        ""
    } else {
        "+"
    };
    let sep = if first && coeff >= 0.0 { "" } else { " " };
    write!(out, " {sign}{sep}{} {name}", coeff.abs())
}

/// Writes `problem` in CPLEX LP text format so it can be cross-checked with
/// an external solver.
pub fn write_lp(problem: &MilpProblem, out: &mut impl Write) -> io::Result<()> {
    let names: Vec<String> =
        problem.variables.iter().enumerate().map(|(j, v)| sanitize(&v.name, format!("x{j}"))).collect();

    writeln!(out, "Maximize")?;
    write!(out, " obj:")?;
    let mut first = true;
    for (j, &c) in problem.objective.iter().enumerate() {
        if c != 0.0 {
            term(out, first, c, &names[j])?;
            first = false;
        }
    }
    if first {
        write!(out, " 0 {}", names.first().map_or("x0", |s| s.as_str()))?;
    }
    writeln!(out)?;

    writeln!(out, "Subject To")?;
    for (i, c) in problem.constraints.iter().enumerate() {
        write!(out, " {}:", sanitize(&c.name, format!("c{i}")))?;
        let mut first = true;
        for &(j, a) in &c.coeffs {
            term(out, first, a, &names[j])?;
            first = false;
        }
        if first {
            write!(out, " 0 {}", names[0])?;
        }
        let rel = match c.relation {
            Relation::Le => "<=",
            Relation::Ge => ">=",
            Relation::Eq => "=",
        };
        writeln!(out, " {rel} {}", c.rhs)?;
    }

    writeln!(out, "Bounds")?;
    for (v, name) in problem.variables.iter().zip(&names) {
        match (v.lower.is_finite(), v.upper.is_finite()) {
            (false, false) => writeln!(out, " {name} free")?,
            (true, true) => writeln!(out, " {} <= {name} <= {}", v.lower, v.upper)?,
            (true, false) => writeln!(out, " {name} >= {}", v.lower)?,
            (false, true) => writeln!(out, " -inf <= {name} <= {}", v.upper)?,
        }
    }
    let ints: Vec<&str> =
        problem.variables.iter().zip(&names).filter(|(v, _)| v.integer).map(|(_, n)| n.as_str()).collect();
    if !ints.is_empty() {
        writeln!(out, "General")?;
        for chunk in ints.chunks(8) {
            writeln!(out, " {}", chunk.join(" "))?;
        }
    }
    writeln!(out, "End")
}
