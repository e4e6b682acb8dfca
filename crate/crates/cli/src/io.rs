//! File formats used by the commands: grammars, graymaps, clamps, and CSV
//! beliefs, scores and locations.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use scenegram::bp::Marginals;
use scenegram::evidence::Platt;
use scenegram::factorgraph::VarLayout;
use scenegram::grammar::format::parse_grammar;
use scenegram::grammar::{BrickId, Grammar, Pose, SymbolId};
use scenegram::image::{read_pgm, write_pgm, Graymap, Grid};
use serde::{Deserialize, Serialize};

use crate::manifest::sha256_hex;

/// Parses a grammar file; returns it with the SHA-256 of the file bytes.
pub fn read_grammar(path: &Path) -> Result<(Grammar, String)> {
    let bytes = std::fs::read(path).with_context(|| format!("reading grammar {}", path.display()))?;
    let text = String::from_utf8(bytes.clone()).with_context(|| format!("{} is not UTF-8", path.display()))?;
    let g = parse_grammar(&text).with_context(|| format!("invalid grammar {}", path.display()))?;
    Ok((g, sha256_hex(&bytes)))
}

pub fn symbol(g: &Grammar, name: &str) -> Result<SymbolId> {
    g.symbol_id(name).ok_or_else(|| anyhow!("grammar has no symbol `{name}`"))
}

pub fn read_graymap(path: &Path) -> Result<Graymap> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_pgm(std::io::BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

pub fn write_graymap(path: &Path, img: &Graymap) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_pgm(BufWriter::new(f), img).with_context(|| format!("writing {}", path.display()))
}

/// Binary map from a graymap: dark pixels (below half the maxval) are set.
pub fn read_binary_map(path: &Path) -> Result<Grid<bool>> {
    let img = read_graymap(path)?;
    let half = img.maxval as f64 / 2.0;
    Ok(img.to_f64().map(|&v| v < half))
}

/// Set cells drawn black on white.
pub fn binary_to_graymap(map: &Grid<bool>) -> Graymap {
    Graymap::from_values(&map.map(|&on| if on { 0.0 } else { 255.0 }), 255)
}

/// Probabilities drawn as `255·(1 - p)`, so likely cells are dark.
pub fn probability_to_graymap(p: &Grid<f64>) -> Graymap {
    Graymap::from_unit(&p.map(|&v| 1.0 - v), 255)
}

pub fn graymap_to_probability(img: &Graymap) -> Grid<f64> {
    let m = img.maxval as f64;
    img.to_f64().map(|&v| 1.0 - v / m)
}

/// Parses `SYM@x,y` or `SYM@x,y,o,s`, optionally followed by `:0` or `:1`
/// (default present).
pub fn parse_clamp(g: &Grammar, text: &str) -> Result<(BrickId, bool)> {
    let (name, rest) = text.split_once('@').ok_or_else(|| anyhow!("clamp `{text}`: expected SYM@x,y[,o,s][:0|1]"))?;
    let (coords, value) = match rest.split_once(':') {
        Some((c, "1")) => (c, true),
        Some((c, "0")) => (c, false),
        Some((_, v)) => bail!("clamp `{text}`: value must be 0 or 1, got `{v}`"),
        None => (rest, true),
    };
    let nums: Vec<u32> = coords
        .split(',')
        .map(|c| c.trim().parse::<u32>().map_err(|_| anyhow!("clamp `{text}`: bad coordinate `{c}`")))
        .collect::<Result<_>>()?;
    let pose = match nums[..] {
        [x, y] => Pose::at(x, y),
        [x, y, orientation, scale] => Pose { x, y, orientation, scale },
        _ => bail!("clamp `{text}`: expected 2 or 4 coordinates"),
    };
    let s = symbol(g, name)?;
    let brick = g.brick_id(s, pose).ok_or_else(|| anyhow!("clamp `{text}`: pose outside the pose space of `{name}`"))?;
    Ok((brick, value))
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct BeliefRow {
    pub symbol: String,
    pub x: u32,
    pub y: u32,
    pub orientation: u32,
    pub scale: u32,
    pub belief: f64,
}

/// One row per brick with its `P(X = 1)`.
pub fn write_beliefs_csv(path: &Path, g: &Grammar, layout: &VarLayout, m: &Marginals) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for b in 0..g.num_bricks() as u32 {
        let (s, pose) = g.brick_pose(BrickId(b));
        w.serialize(BeliefRow {
            symbol: g.symbol(s).name.clone(),
            x: pose.x,
            y: pose.y,
            orientation: pose.orientation,
            scale: pose.scale,
            belief: m.p1(layout.x(BrickId(b))),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_beliefs_csv(path: &Path) -> Result<Vec<BeliefRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    r.deserialize().collect::<Result<_, _>>().with_context(|| format!("reading {}", path.display()))
}

#[derive(Debug, Deserialize)]
struct ScoreRow {
    symbol: String,
    x: u32,
    y: u32,
    orientation: u32,
    scale: u32,
    score: f64,
}

/// Detector scores per symbol, one per brick in brick order. A listed
/// symbol needs a score for every pose; unlisted symbols get `None`.
pub fn read_scores(path: &Path, g: &Grammar) -> Result<Vec<Option<Vec<f64>>>> {
    let mut out: Vec<Option<Vec<f64>>> = vec![None; g.num_symbols()];
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    for (i, row) in r.deserialize::<ScoreRow>().enumerate() {
        let row = row.with_context(|| format!("{} row {}", path.display(), i + 1))?;
        let s = symbol(g, &row.symbol)?;
        let pose = Pose { x: row.x, y: row.y, orientation: row.orientation, scale: row.scale };
        let idx = g
            .symbol(s)
            .poses
            .index(pose)
            .ok_or_else(|| anyhow!("{} row {}: pose {pose} outside `{}`", path.display(), i + 1, row.symbol))?;
        let field = out[s.index()].get_or_insert_with(|| vec![f64::NAN; g.symbol(s).poses.len()]);
        field[idx as usize] = row.score;
    }
    for (s, field) in out.iter().enumerate() {
        if let Some(f) = field {
            if let Some(missing) = f.iter().position(|v| v.is_nan()) {
                let pose = g.symbol(SymbolId(s as u32)).poses.pose(missing as u32);
                bail!("{}: no score for {} at {pose}; score files must cover every pose", path.display(), g.symbols()[s].name);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Deserialize, Serialize)]
struct CalibrationRow {
    symbol: String,
    slope: f64,
    offset: f64,
}

/// Platt parameters per symbol; symbols not listed get slope 1, offset 0
/// (scores are already logits).
pub fn read_calibration(path: Option<&Path>, g: &Grammar) -> Result<Vec<Platt>> {
    let mut out = vec![Platt { slope: 1.0, offset: 0.0 }; g.num_symbols()];
    if let Some(path) = path {
        let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
        for row in r.deserialize::<CalibrationRow>() {
            let row = row.with_context(|| format!("reading {}", path.display()))?;
            out[symbol(g, &row.symbol)?.index()] = Platt { slope: row.slope, offset: row.offset };
        }
    }
    Ok(out)
}

#[derive(Debug, Deserialize, Serialize, PartialEq)]
pub struct Location {
    pub symbol: String,
    pub x: f64,
    pub y: f64,
}

pub fn read_locations(path: &Path) -> Result<Vec<Location>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    r.deserialize().collect::<Result<_, _>>().with_context(|| format!("reading {}", path.display()))
}
