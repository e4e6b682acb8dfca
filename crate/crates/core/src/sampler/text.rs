//! Plain-text scene format, one present brick per line:
//!
//! ```text
//! C 3 4 2 0 rule=1 C@4,4,2,0:1 -
//! ```
//!
//! Fields are the symbol, pose `x y orientation scale`, the rule's index
//! within the symbol's rules (`-` if the symbol has none), then one token per
//! slot: `SYM@x,y,o,s:<survived>` or `-` when the slot had no support.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use super::{ChildDraw, Expansion, Scene};
use crate::grammar::{BrickId, Grammar, Pose};

#[derive(Debug, Error, PartialEq, Eq)]
#[error("scene line {line}: {message}")]
pub struct SceneParseError {
    pub line: usize,
    pub message: String,
}

pub fn write_scene(scene: &Scene, g: &Grammar) -> String {
    let mut out = String::new();
    for (brick, e) in scene.iter() {
        let (symbol, pose) = g.brick_pose(brick);
        let _ = write!(out, "{} {} {} {} {}", g.symbol(symbol).name, pose.x, pose.y, pose.orientation, pose.scale);
        match e.rule {
            Some(rule) => {
                let k = g.rules_for(symbol).iter().position(|&r| r == rule).unwrap_or(0);
                let _ = write!(out, " rule={k}");
            }
            None => out.push_str(" rule=-"),
        }
        for child in &e.children {
            match child {
                Some(c) => {
                    let (cs, cp) = g.brick_pose(c.brick);
                    let _ = write!(
                        out,
                        " {}@{},{},{},{}:{}",
                        g.symbol(cs).name,
                        cp.x,
                        cp.y,
                        cp.orientation,
                        cp.scale,
                        u8::from(c.survived)
                    );
                }
                None => out.push_str(" -"),
            }
        }
        out.push('\n');
    }
    out
}

pub fn parse_scene(text: &str, g: &Grammar) -> Result<Scene, SceneParseError> {
    let mut expansions = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let err = |message: String| SceneParseError { line, message };
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = body.split_whitespace().collect();
        if tokens.len() < 6 {
            return Err(err("expected `SYM x y o s rule=K ...`".into()));
        }
        let brick = resolve(g, tokens[0], &tokens[1..5]).map_err(err)?;
        let symbol = g.bricks().symbol_of(brick);
        let rule_tok = tokens[5].strip_prefix("rule=").ok_or_else(|| err(format!("expected rule=, got `{}`", tokens[5])))?;
        let rules = g.rules_for(symbol);
        let rule = if rule_tok == "-" {
            if !rules.is_empty() {
                return Err(err("symbol has rules but none was given".into()));
            }
            None
        } else {
            let k: usize = rule_tok.parse().map_err(|_| err(format!("bad rule index `{rule_tok}`")))?;
            Some(*rules.get(k).ok_or_else(|| err(format!("rule index {k} out of range")))?)
        };
        let slots = rule.map_or(0, |r| g.rule(r).rhs.len());
        if tokens.len() - 6 != slots {
            return Err(err(format!("expected {slots} child tokens, got {}", tokens.len() - 6)));
        }
        let mut children = Vec::with_capacity(slots);
        for (i, tok) in tokens[6..].iter().enumerate() {
            if *tok == "-" {
                children.push(None);
                continue;
            }
            let (name, rest) = tok.split_once('@').ok_or_else(|| err(format!("bad child token `{tok}`")))?;
            let (pose, flag) = rest.rsplit_once(':').ok_or_else(|| err(format!("bad child token `{tok}`")))?;
            let fields: Vec<&str> = pose.split(',').collect();
            let child = resolve(g, name, &fields).map_err(err)?;
            let expected = g.rule(rule.unwrap()).rhs[i].symbol;
            if g.bricks().symbol_of(child) != expected {
                return Err(err(format!("slot {i} expects symbol {}", g.symbol(expected).name)));
            }
            let survived = match flag {
                "0" => false,
                "1" => true,
                _ => return Err(err(format!("bad survival flag `{flag}`"))),
            };
            children.push(Some(ChildDraw { brick: child, survived }));
        }
        if expansions.insert(brick, Expansion { rule, children }).is_some() {
            return Err(err("brick listed twice".into()));
        }
    }
    Ok(Scene::from_expansions(expansions))
}

fn resolve(g: &Grammar, name: &str, fields: &[&str]) -> Result<BrickId, String> {
    let symbol = g.symbol_id(name).ok_or_else(|| format!("unknown symbol `{name}`"))?;
    if fields.len() != 4 {
        return Err(format!("pose needs 4 fields, got {}", fields.len()));
    }
    let mut v = [0u32; 4];
    for (slot, f) in v.iter_mut().zip(fields) {
        *slot = f.parse().map_err(|_| format!("bad pose field `{f}`"))?;
    }
    let pose = Pose { x: v[0], y: v[1], orientation: v[2], scale: v[3] };
    g.brick_id(symbol, pose).ok_or_else(|| format!("pose {pose} outside the pose space of {name}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::format::parse_grammar;
    use crate::sampler::sample_scene;

    fn curve() -> Grammar {
        parse_grammar(
            "[symbols]\nC\n[pose_spaces]\nC width=10 height=10 orientations=8\n[params]\nrho=0.95\nepsilon C=0.02\n[rules]\n\
             C 0.2 ->\nC 0.8 -> C{offsets 1,0 1,1 1,-1 rotate}\n",
        )
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let g = curve();
        for seed in 0..20 {
            let s = sample_scene(&g, seed).unwrap();
            let text = write_scene(&s, &g);
            assert_eq!(parse_scene(&text, &g).unwrap(), s);
        }
    }

    #[test]
    fn rejects_unknown_symbol() {
        let g = curve();
        let e = parse_scene("\nQ 0 0 0 0 rule=0\n", &g).unwrap_err();
        assert_eq!(e.line, 2);
    }

    #[test]
    fn rejects_wrong_child_count() {
        let g = curve();
        assert!(parse_scene("C 0 0 0 0 rule=1\n", &g).is_err());
        assert!(parse_scene("C 0 0 0 0 rule=0\n", &g).is_ok());
    }
}
