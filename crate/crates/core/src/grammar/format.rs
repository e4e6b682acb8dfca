//! Text format for grammar files.
//!
//! ```text
//! # comments run to end of line
//! [symbols]
//! C J
//!
//! [pose_spaces]
//! C width=32 height=32 orientations=8
//! J width=32 height=32
//! F width=40 height=40 scales=1,1.5,2.25
//!
//! [params]
//! rho = 0.9
//! epsilon C = 0.001          # omitted epsilons default to 0
//!
//! [rules]
//! C 0.05 -> J{offsets 0,0}
//! C 0.73 -> J{offsets 0,0} C{offsets 1,0 rotate}
//! F 1 -> L{region base=-0.3,-0.2 radius=1,1 scales=0:0.8,1:0.2}
//! A 1 -> B{table 0:0=0.5,1=0.5; 1:1=1}
//! T 1 ->                     # termination rule, empty right-hand side
//! ```
//!
//! Slot kernels:
//! - `offsets dx,dy [dx,dy ...] [rotate]`: uniform over the listed offsets,
//!   rotated by the parent orientation when `rotate` is given.
//! - `region base=bx,by radius=rx,ry [scales=step:p,...]`: uniform box at
//!   `(x, y) + s·b` with half-extent `s·r`; `scales` defaults to `0:1`.
//! - `table parent:child=p,... ; ...`: explicit rows over flat pose indices.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use super::{validate_grammar, GeometryKernel, Grammar, GrammarError, GrammarSpec, PoseSpace, RuleSpec, Symbol};

#[derive(Debug, Error, PartialEq, Eq, Clone)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

fn err<T>(line: usize, message: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError { line, message: message.into() })
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Symbols,
    PoseSpaces,
    Params,
    Rules,
}

/// Parses and validates a grammar file.
pub fn parse_grammar(text: &str) -> Result<Grammar, GrammarError> {
    validate_grammar(parse_spec(text)?)
}

/// Parses a grammar file without validating it.
pub fn parse_spec(text: &str) -> Result<GrammarSpec, ParseError> {
    let mut section = Section::None;
    let mut names: Vec<(String, usize)> = Vec::new();
    let mut spaces: BTreeMap<String, PoseSpace> = BTreeMap::new();
    let mut epsilons: BTreeMap<String, f64> = BTreeMap::new();
    let mut rho = None;
    let mut rules = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') {
            section = match line {
                "[symbols]" => Section::Symbols,
                "[pose_spaces]" => Section::PoseSpaces,
                "[params]" => Section::Params,
                "[rules]" => Section::Rules,
                other => return err(line_no, format!("unknown section {other}")),
            };
            continue;
        }
        match section {
            Section::None => return err(line_no, "content before the first section"),
            Section::Symbols => {
                for name in line.split_whitespace() {
                    check_name(name, line_no)?;
                    names.push((name.to_string(), line_no));
                }
            }
            Section::PoseSpaces => {
                let (name, space) = parse_pose_space(line, line_no)?;
                if spaces.insert(name.clone(), space).is_some() {
                    return err(line_no, format!("pose space for `{name}` given twice"));
                }
            }
            Section::Params => {
                let Some((key, value)) = line.split_once('=') else {
                    return err(line_no, "expected `key = value`");
                };
                let value = parse_f64(value.trim(), line_no)?;
                let key: Vec<&str> = key.split_whitespace().collect();
                match key.as_slice() {
                    ["rho"] => rho = Some(value),
                    ["epsilon", name] => {
                        epsilons.insert(name.to_string(), value);
                    }
                    _ => return err(line_no, format!("unknown parameter `{}`", key.join(" "))),
                }
            }
            Section::Rules => rules.push(parse_rule(line, line_no)?),
        }
    }

    let mut symbols = Vec::with_capacity(names.len());
    for (name, line_no) in &names {
        let Some(poses) = spaces.remove(name) else {
            return err(*line_no, format!("no pose space declared for `{name}`"));
        };
        let self_rooting = epsilons.remove(name).unwrap_or(0.0);
        symbols.push(Symbol { name: name.clone(), poses, self_rooting });
    }
    if let Some(name) = spaces.keys().next() {
        return err(0, format!("pose space for undeclared symbol `{name}`"));
    }
    if let Some(name) = epsilons.keys().next() {
        return err(0, format!("epsilon for undeclared symbol `{name}`"));
    }
    let Some(rho) = rho else {
        return err(0, "missing `rho` parameter");
    };
    Ok(GrammarSpec { symbols, rules, rho })
}

fn check_name(name: &str, line: usize) -> Result<(), ParseError> {
    let mut chars = name.chars();
    let ok = chars.next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_');
    if ok {
        Ok(())
    } else {
        err(line, format!("invalid symbol name `{name}`"))
    }
}

fn parse_f64(s: &str, line: usize) -> Result<f64, ParseError> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => err(line, format!("invalid number `{s}`")),
    }
}

fn parse_int<T: std::str::FromStr>(s: &str, line: usize) -> Result<T, ParseError> {
    s.parse::<T>().or_else(|_| err(line, format!("invalid integer `{s}`")))
}

fn parse_pair<T: std::str::FromStr>(s: &str, line: usize, parse: fn(&str, usize) -> Result<T, ParseError>) -> Result<(T, T), ParseError> {
    let Some((a, b)) = s.split_once(',') else {
        return err(line, format!("expected a pair `a,b`, got `{s}`"));
    };
    Ok((parse(a, line)?, parse(b, line)?))
}

fn parse_pose_space(line: &str, line_no: usize) -> Result<(String, PoseSpace), ParseError> {
    let mut words = line.split_whitespace();
    let name = words.next().unwrap().to_string();
    let (mut width, mut height, mut orientations, mut scales) = (None, None, 1u32, Vec::new());
    for word in words {
        let Some((key, value)) = word.split_once('=') else {
            return err(line_no, format!("expected key=value, got `{word}`"));
        };
        match key {
            "width" => width = Some(parse_int(value, line_no)?),
            "height" => height = Some(parse_int(value, line_no)?),
            "orientations" => orientations = parse_int(value, line_no)?,
            "scales" => {
                scales = value.split(',').map(|v| parse_f64(v, line_no)).collect::<Result<_, _>>()?;
            }
            other => return err(line_no, format!("unknown pose-space key `{other}`")),
        }
    }
    let (Some(width), Some(height)) = (width, height) else {
        return err(line_no, format!("pose space for `{name}` needs width and height"));
    };
    Ok((name, PoseSpace::grid(width, height).with_orientations(orientations).with_scales(scales)))
}

fn parse_rule(line: &str, line_no: usize) -> Result<RuleSpec, ParseError> {
    let Some((head, body)) = line.split_once("->") else {
        return err(line_no, "rule needs `->`");
    };
    let head: Vec<&str> = head.split_whitespace().collect();
    let [lhs, prob] = head.as_slice() else {
        return err(line_no, "rule head must be `SYMBOL PROBABILITY`");
    };
    check_name(lhs, line_no)?;
    let probability = parse_f64(prob, line_no)?;
    let mut rhs = Vec::new();
    let mut rest = body.trim();
    while !rest.is_empty() {
        let Some(open) = rest.find('{') else {
            return err(line_no, format!("slot `{rest}` needs a kernel in braces"));
        };
        let Some(close) = rest.find('}') else {
            return err(line_no, "unclosed `{`");
        };
        if close < open {
            return err(line_no, "unbalanced braces");
        }
        let name = rest[..open].trim();
        check_name(name, line_no)?;
        let kernel = parse_kernel(&rest[open + 1..close], line_no)?;
        rhs.push((name.to_string(), kernel));
        rest = rest[close + 1..].trim_start();
    }
    Ok(RuleSpec { lhs: lhs.to_string(), probability, rhs })
}

fn parse_kernel(body: &str, line: usize) -> Result<GeometryKernel, ParseError> {
    let body = body.trim();
    let (kind, args) = body.split_once(char::is_whitespace).unwrap_or((body, ""));
    match kind {
        "offsets" => {
            let mut offsets = Vec::new();
            let mut rotate = false;
            for word in args.split_whitespace() {
                if word == "rotate" {
                    rotate = true;
                } else {
                    offsets.push(parse_pair(word, line, parse_int::<i32>)?);
                }
            }
            if offsets.is_empty() {
                return err(line, "offsets kernel needs at least one offset");
            }
            Ok(GeometryKernel::Offsets { offsets, rotate })
        }
        "region" => {
            let (mut base, mut radius, mut scale_steps) = (None, None, vec![(0, 1.0)]);
            for word in args.split_whitespace() {
                let Some((key, value)) = word.split_once('=') else {
                    return err(line, format!("expected key=value, got `{word}`"));
                };
                match key {
                    "base" => base = Some(parse_pair(value, line, parse_f64)?),
                    "radius" => radius = Some(parse_pair(value, line, parse_f64)?),
                    "scales" => {
                        scale_steps = value
                            .split(',')
                            .map(|entry| {
                                let Some((step, p)) = entry.split_once(':') else {
                                    return err(line, format!("expected step:probability, got `{entry}`"));
                                };
                                Ok((parse_int::<i32>(step, line)?, parse_f64(p, line)?))
                            })
                            .collect::<Result<_, _>>()?;
                    }
                    other => return err(line, format!("unknown region key `{other}`")),
                }
            }
            let (Some(base), Some(radius)) = (base, radius) else {
                return err(line, "region kernel needs base and radius");
            };
            Ok(GeometryKernel::Region { base, radius, scale_steps })
        }
        "table" => {
            let mut table = BTreeMap::new();
            for row in args.split(';').map(str::trim).filter(|r| !r.is_empty()) {
                let Some((parent, entries)) = row.split_once(':') else {
                    return err(line, format!("table row `{row}` needs `parent:`"));
                };
                let parent: u32 = parse_int(parent.trim(), line)?;
                let mut out = Vec::new();
                for entry in entries.split(',').map(str::trim) {
                    let Some((child, p)) = entry.split_once('=') else {
                        return err(line, format!("table entry `{entry}` needs `child=p`"));
                    };
                    out.push((parse_int::<u32>(child.trim(), line)?, parse_f64(p.trim(), line)?));
                }
                if table.insert(parent, out).is_some() {
                    return err(line, format!("table row for parent {parent} given twice"));
                }
            }
            Ok(GeometryKernel::Table(table))
        }
        other => err(line, format!("unknown kernel kind `{other}`")),
    }
}

/// Writes a grammar in the file format. Parsing the output yields the same
/// grammar.
pub fn write_grammar(g: &Grammar) -> String {
    write_spec(&g.to_spec())
}

pub fn write_spec(spec: &GrammarSpec) -> String {
    let mut out = String::new();
    out.push_str("[symbols]\n");
    let names: Vec<&str> = spec.symbols.iter().map(|s| s.name.as_str()).collect();
    let _ = writeln!(out, "{}", names.join(" "));

    out.push_str("\n[pose_spaces]\n");
    for s in &spec.symbols {
        let p = &s.poses;
        let _ = write!(out, "{} width={} height={}", s.name, p.width(), p.height());
        if p.orientations() != 1 {
            let _ = write!(out, " orientations={}", p.orientations());
        }
        if p.scales() != [1.0] {
            let scales: Vec<String> = p.scales().iter().map(f64::to_string).collect();
            let _ = write!(out, " scales={}", scales.join(","));
        }
        out.push('\n');
    }

    out.push_str("\n[params]\n");
    let _ = writeln!(out, "rho = {}", spec.rho);
    for s in &spec.symbols {
        let _ = writeln!(out, "epsilon {} = {}", s.name, s.self_rooting);
    }

    out.push_str("\n[rules]\n");
    for r in &spec.rules {
        let _ = write!(out, "{} {} ->", r.lhs, r.probability);
        for (name, kernel) in &r.rhs {
            let _ = write!(out, " {name}{{{}}}", kernel_text(kernel));
        }
        out.push('\n');
    }
    out
}

fn kernel_text(k: &GeometryKernel) -> String {
    match k {
        GeometryKernel::Offsets { offsets, rotate } => {
            let mut s = String::from("offsets");
            for (dx, dy) in offsets {
                let _ = write!(s, " {dx},{dy}");
            }
            if *rotate {
                s.push_str(" rotate");
            }
            s
        }
        GeometryKernel::Region { base, radius, scale_steps } => {
            let steps: Vec<String> = scale_steps.iter().map(|(d, p)| format!("{d}:{p}")).collect();
            format!(
                "region base={},{} radius={},{} scales={}",
                base.0,
                base.1,
                radius.0,
                radius.1,
                steps.join(",")
            )
        }
        GeometryKernel::Table(table) => {
            let rows: Vec<String> = table
                .iter()
                .map(|(parent, row)| {
                    let entries: Vec<String> = row.iter().map(|(z, p)| format!("{z}={p}")).collect();
                    format!("{parent}:{}", entries.join(","))
                })
                .collect();
            format!("table {}", rows.join("; "))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{Pose, RuleId};

    const CURVE: &str = "
        [symbols]
        C J
        [pose_spaces]
        C width=8 height=8 orientations=8
        J width=8 height=8
        [params]
        rho = 0.9
        epsilon C = 0.01
        [rules]
        C 0.05 -> J{offsets 0,0}
        C 0.73 -> J{offsets 0,0} C{offsets 1,0 rotate}
        C 0.11 -> J{offsets 0,0} C{offsets 1,1 rotate}
        C 0.11 -> J{offsets 0,0} C{offsets 1,-1 rotate}
    ";

    #[test]
    fn parses_curve_grammar() {
        let g = parse_grammar(CURVE).unwrap();
        assert_eq!(g.num_symbols(), 2);
        assert_eq!(g.num_bricks(), 8 * 8 * 8 + 64);
        assert_eq!(g.symbol(g.symbol_id("J").unwrap()).self_rooting, 0.0);
        let probs: Vec<f64> = g.rules().iter().map(|r| r.probability).collect();
        assert_eq!(probs, vec![0.05, 0.73, 0.11, 0.11]);
        let s = g.support(RuleId(2), 1, Pose::oriented(3, 3, 2));
        let c = &g.symbol(g.symbol_id("C").unwrap()).poses;
        assert_eq!(s.len(), 1);
        assert_eq!(c.pose(s[0].0), Pose::oriented(2, 4, 2));
    }

    #[test]
    fn write_parse_round_trip() {
        let g = parse_grammar(CURVE).unwrap();
        let again = parse_grammar(&write_grammar(&g)).unwrap();
        assert_eq!(g, again);

        let text = "
            [symbols]
            F L T
            [pose_spaces]
            F width=20 height=20 scales=1,1.5
            L width=20 height=20 scales=1,1.5
            T width=2 height=1
            [params]
            rho = 1
            epsilon F = 0.25
            [rules]
            F 1 -> L{region base=-3.5,2 radius=1,0 scales=0:0.75,1:0.25}
            T 0.5 -> T{table 0:1=1}
            T 0.5 ->
        ";
        let g = parse_grammar(text).unwrap();
        assert_eq!(parse_grammar(&write_grammar(&g)).unwrap(), g);
    }

    #[test]
    fn reports_line_numbers() {
        let e = parse_spec("[symbols]\nA\n[rules]\nA 1 -> B{offsets}\n").unwrap_err();
        assert_eq!(e.line, 4);
        let e = parse_spec("[symbols]\nA\n[params]\nrho = 0.5\n").unwrap_err();
        assert!(e.message.contains("no pose space"));
        let e = parse_spec("[symbols]\nA\n[pose_spaces]\nA width=1 height=1\n").unwrap_err();
        assert!(e.message.contains("rho"));
    }
}
