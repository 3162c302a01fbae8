//! Line-oriented text formats. Blank lines and lines starting with `#` are
//! ignored by every parser; floats are written with 17 significant digits so
//! that parsing returns the exact value written.

use std::fmt::Write as _;

use crate::decoding::{DecodeStatus, DecodeTrace, Decoded, StepRecord};
use crate::image::ImageGrid;
use crate::ot::{Distribution, GroundMetric, SolveStatus, TokenId};
use crate::scene_models::{LogitsDump, Placement, Scene, COLOR_NAMES, OBJECT_NAMES};

use super::FormatError;

pub type Result<T> = std::result::Result<T, FormatError>;

/// Formats a float so that `str::parse` gives back the same bits.
pub fn float(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn err(line: usize, msg: impl Into<String>) -> FormatError {
    FormatError::Parse { line, msg: msg.into() }
}

/// Content lines with their 1-based numbers.
pub(crate) struct Lines<'a> {
    inner: std::iter::Peekable<Box<dyn Iterator<Item = (usize, &'a str)> + 'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    pub(crate) fn new(text: &'a str) -> Self {
        let it: Box<dyn Iterator<Item = (usize, &'a str)> + 'a> = Box::new(
            text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty() && !l.starts_with('#')),
        );
        Self { inner: it.peekable(), last: 0 }
    }

    pub(crate) fn next(&mut self) -> Option<(usize, &'a str)> {
        let item = self.inner.next();
        if let Some((n, _)) = item {
            self.last = n;
        }
        item
    }

    pub(crate) fn peek(&mut self) -> Option<&(usize, &'a str)> {
        self.inner.peek()
    }

    pub(crate) fn expect(&mut self, what: &str) -> Result<(usize, &'a str)> {
        self.next().ok_or_else(|| err(self.last + 1, format!("unexpected end of input, expected {what}")))
    }

    pub(crate) fn finish(mut self) -> Result<()> {
        match self.next() {
            Some((n, l)) => Err(err(n, format!("unexpected trailing content '{l}'"))),
            None => Ok(()),
        }
    }
}

pub(crate) fn parse_num<T: std::str::FromStr>(line: usize, s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| err(line, format!("invalid {what} '{s}'")))
}

/// Splits a header like `dist 3` after checking its keyword.
fn header<'a>(line: usize, text: &'a str, keyword: &str, fields: usize) -> Result<Vec<&'a str>> {
    let mut parts = text.split_whitespace();
    if parts.next() != Some(keyword) {
        return Err(err(line, format!("expected '{keyword}' header, got '{text}'")));
    }
    let rest: Vec<&str> = parts.collect();
    if rest.len() != fields {
        return Err(err(line, format!("'{keyword}' header takes {fields} fields, got {}", rest.len())));
    }
    Ok(rest)
}

// ---- distributions ----

fn dist_body(out: &mut String, d: &Distribution) {
    for (id, p) in d.support().iter().zip(d.probs()) {
        let _ = writeln!(out, "{id} {}", float(*p));
    }
}

pub fn write_dist(d: &Distribution) -> String {
    let mut out = format!("dist {}\n", d.len());
    dist_body(&mut out, d);
    out
}

fn dist_payload(lines: &mut Lines, n: usize, header_line: usize) -> Result<Distribution> {
    let mut ids = Vec::with_capacity(n);
    let mut probs = Vec::with_capacity(n);
    for _ in 0..n {
        let (ln, text) = lines.expect("a '<token_id> <prob>' line")?;
        let parts: Vec<&str> = text.split_whitespace().collect();
        if parts.len() != 2 {
            return Err(err(ln, format!("expected '<token_id> <prob>', got '{text}'")));
        }
        let id = parse_num::<TokenId>(ln, parts[0], "token id")?;
        if ids.last().is_some_and(|&prev| prev >= id) {
            return Err(err(ln, format!("token ids must be strictly increasing, got {id} after {}", ids[ids.len() - 1])));
        }
        ids.push(id);
        probs.push(parse_num::<f64>(ln, parts[1], "probability")?);
    }
    Distribution::new(probs, ids).map_err(|e| err(header_line, e.to_string()))
}

pub(crate) fn parse_dist_block(lines: &mut Lines) -> Result<Distribution> {
    let (ln, text) = lines.expect("a 'dist <n>' header")?;
    let n: usize = parse_num(ln, header(ln, text, "dist", 1)?[0], "support size")?;
    if n == 0 {
        return Err(err(ln, "support size must be positive"));
    }
    dist_payload(lines, n, ln)
}

pub fn parse_dist(text: &str) -> Result<Distribution> {
    let mut lines = Lines::new(text);
    let d = parse_dist_block(&mut lines)?;
    lines.finish()?;
    Ok(d)
}

// ---- cost matrices ----

pub fn write_cost(m: &GroundMetric) -> String {
    let n = m.size();
    let mut out = format!("cost {n}\n");
    for i in 0..n {
        let row: Vec<String> = m.row(i).iter().map(|&c| float(c)).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}

pub fn parse_cost(text: &str) -> Result<GroundMetric> {
    let mut lines = Lines::new(text);
    let (ln, head) = lines.expect("a 'cost <n>' header")?;
    let n: usize = parse_num(ln, header(ln, head, "cost", 1)?[0], "matrix size")?;
    let mut costs = Vec::with_capacity(n * n);
    for _ in 0..n {
        let (rl, row) = lines.expect("a cost row")?;
        let values: Vec<f64> = row.split_whitespace().map(|s| parse_num(rl, s, "cost")).collect::<Result<_>>()?;
        if values.len() != n {
            return Err(err(rl, format!("row has {} entries, expected {n}", values.len())));
        }
        costs.extend(values);
    }
    lines.finish()?;
    GroundMetric::new(n, costs).map_err(|e| err(ln, e.to_string()))
}

// ---- embeddings ----

pub fn write_embeddings(emb: &[Vec<f64>]) -> String {
    let dim = emb.first().map_or(0, Vec::len);
    let mut out = format!("emb {} {dim}\n", emb.len());
    for (id, e) in emb.iter().enumerate() {
        let values: Vec<String> = e.iter().map(|&v| float(v)).collect();
        let _ = writeln!(out, "{id} {}", values.join(" "));
    }
    out
}

pub fn parse_embeddings(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut lines = Lines::new(text);
    let (ln, head) = lines.expect("an 'emb <n> <dim>' header")?;
    let h = header(ln, head, "emb", 2)?;
    let n: usize = parse_num(ln, h[0], "token count")?;
    let dim: usize = parse_num(ln, h[1], "dimension")?;
    if n == 0 || dim == 0 {
        return Err(err(ln, "token count and dimension must be positive"));
    }
    let mut out = Vec::with_capacity(n);
    for expected in 0..n {
        let (rl, row) = lines.expect("an embedding row")?;
        let mut parts = row.split_whitespace();
        let id: usize = parse_num(rl, parts.next().unwrap_or(""), "token id")?;
        if id != expected {
            return Err(err(rl, format!("expected token id {expected}, got {id}")));
        }
        let values: Vec<f64> = parts.map(|s| parse_num(rl, s, "embedding value")).collect::<Result<_>>()?;
        if values.len() != dim {
            return Err(err(rl, format!("embedding has {} values, expected {dim}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(err(rl, "embedding values must be finite"));
        }
        out.push(values);
    }
    lines.finish()?;
    Ok(out)
}

// ---- raster images ----

fn grid_body(out: &mut String, img: &ImageGrid) {
    for px in img.pixels().chunks(img.channels()) {
        let values: Vec<String> = px.iter().map(|&v| float(v)).collect();
        let _ = writeln!(out, "{}", values.join(" "));
    }
}

pub fn write_grid(img: &ImageGrid) -> String {
    let mut out = format!("grid {} {} {}\n", img.width(), img.height(), img.channels());
    grid_body(&mut out, img);
    out
}

pub(crate) fn parse_grid_block(lines: &mut Lines) -> Result<ImageGrid> {
    let (ln, head) = lines.expect("a 'grid <w> <h> <channels>' header")?;
    let h = header(ln, head, "grid", 3)?;
    let (w, hgt, ch): (usize, usize, usize) =
        (parse_num(ln, h[0], "width")?, parse_num(ln, h[1], "height")?, parse_num(ln, h[2], "channel count")?);
    let count = w.checked_mul(hgt).ok_or_else(|| err(ln, "image too large"))?;
    let mut pixels = Vec::with_capacity(count.saturating_mul(ch));
    for _ in 0..count {
        let (pl, row) = lines.expect("a pixel line")?;
        let values: Vec<f64> = row.split_whitespace().map(|s| parse_num(pl, s, "pixel value")).collect::<Result<_>>()?;
        if values.len() != ch {
            return Err(err(pl, format!("pixel has {} channels, expected {ch}", values.len())));
        }
        pixels.extend(values);
    }
    ImageGrid::new(w, hgt, ch, pixels).map_err(|e| err(ln, e.to_string()))
}

pub fn parse_grid(text: &str) -> Result<ImageGrid> {
    let mut lines = Lines::new(text);
    let img = parse_grid_block(&mut lines)?;
    lines.finish()?;
    Ok(img)
}

// ---- scenes ----

pub fn write_scene(scene: &Scene) -> String {
    let (gw, gh) = scene.grid();
    let mut out = format!("# objects: {}\n# colors: {}\nscene {gw} {gh}\n", scene.object_names().join(" "), scene.color_names().join(" "));
    for p in scene.placements() {
        let _ = writeln!(out, "{} {} {} {}", p.x, p.y, scene.object_names()[p.object], scene.color_names()[p.color]);
    }
    out
}

/// Reads a scene. Object and color names come from `# objects:` and
/// `# colors:` header comments when present, else the standard names.
pub fn parse_scene(text: &str) -> Result<Scene> {
    let declared = |key: &str| {
        text.lines().take_while(|l| l.trim().is_empty() || l.trim_start().starts_with('#')).find_map(|l| {
            let body = l.trim().trim_start_matches('#').trim();
            body.strip_prefix(key).map(|rest| rest.split_whitespace().map(String::from).collect::<Vec<_>>())
        })
    };
    let objects = declared("objects:").unwrap_or_else(|| OBJECT_NAMES.iter().map(|s| s.to_string()).collect());
    let colors = declared("colors:").unwrap_or_else(|| COLOR_NAMES.iter().map(|s| s.to_string()).collect());
    let mut lines = Lines::new(text);
    let (ln, head) = lines.expect("a 'scene <gw> <gh>' header")?;
    let h = header(ln, head, "scene", 2)?;
    let (gw, gh): (usize, usize) = (parse_num(ln, h[0], "grid width")?, parse_num(ln, h[1], "grid height")?);
    let mut placements = Vec::new();
    while let Some((pl, row)) = lines.next() {
        let parts: Vec<&str> = row.split_whitespace().collect();
        if parts.len() != 4 {
            return Err(err(pl, format!("expected '<x> <y> <object> <color>', got '{row}'")));
        }
        let object = objects.iter().position(|o| o == parts[2]).ok_or_else(|| err(pl, format!("unknown object '{}'", parts[2])))?;
        let color = colors.iter().position(|c| c == parts[3]).ok_or_else(|| err(pl, format!("unknown color '{}'", parts[3])))?;
        placements.push(Placement { x: parse_num(pl, parts[0], "x")?, y: parse_num(pl, parts[1], "y")?, object, color });
    }
    Scene::new(gw, gh, placements, objects, colors).map_err(|e| err(ln, e.to_string()))
}

// ---- logits dumps ----

const SOURCE_LABELS: [&str; 3] = ["v", "c", "f"];

pub fn write_dump(dump: &LogitsDump) -> String {
    let mut out = String::new();
    for (t, triple) in dump.steps.iter().enumerate() {
        let _ = writeln!(out, "step {t}");
        for (label, d) in SOURCE_LABELS.iter().zip(triple) {
            let _ = writeln!(out, "{label} dist {}", d.len());
            dist_body(&mut out, d);
        }
    }
    out
}

pub fn parse_dump(text: &str) -> Result<LogitsDump> {
    let mut lines = Lines::new(text);
    let mut steps = Vec::new();
    while let Some((ln, head)) = lines.next() {
        let t: usize = parse_num(ln, header(ln, head, "step", 1)?[0], "step index")?;
        if t != steps.len() {
            return Err(err(ln, format!("expected step {}, got {t}", steps.len())));
        }
        let mut triple = Vec::with_capacity(3);
        for label in SOURCE_LABELS {
            let (dl, dh) = lines.expect("a labelled 'dist <n>' header")?;
            let rest = dh.strip_prefix(label).map(str::trim_start).filter(|r| r.starts_with("dist"));
            let rest = rest.ok_or_else(|| err(dl, format!("step {t}: expected '{label} dist <n>', got '{dh}'")))?;
            let n: usize = parse_num(dl, header(dl, rest, "dist", 1)?[0], "support size")?;
            if n == 0 {
                return Err(err(dl, "support size must be positive"));
            }
            triple.push(dist_payload(&mut lines, n, dl).map_err(|e| step_context(t, e))?);
        }
        let triple: [Distribution; 3] = triple.try_into().expect("three sources");
        steps.push(triple);
    }
    if steps.is_empty() {
        return Err(err(1, "dump holds no steps"));
    }
    Ok(LogitsDump { steps })
}

fn step_context(step: usize, e: FormatError) -> FormatError {
    let FormatError::Parse { line, msg } = e;
    FormatError::Parse { line, msg: format!("step {step}: {msg}") }
}

// ---- captions ----

fn status_word(s: DecodeStatus) -> &'static str {
    match s {
        DecodeStatus::Complete => "complete",
        DecodeStatus::Truncated => "truncated",
    }
}

fn parse_status(line: usize, s: &str) -> Result<DecodeStatus> {
    match s {
        "complete" => Ok(DecodeStatus::Complete),
        "truncated" => Ok(DecodeStatus::Truncated),
        other => Err(err(line, format!("unknown decode status '{other}'"))),
    }
}

fn ids(tokens: &[TokenId]) -> String {
    tokens.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ")
}

fn parse_ids(line: usize, text: &str) -> Result<Vec<TokenId>> {
    text.split_whitespace().map(|s| parse_num(line, s, "token id")).collect()
}

/// `caption <n> <status>`, the ids on one line, then the words as a comment
/// when `names` is given.
pub fn write_caption(tokens: &[TokenId], status: DecodeStatus, names: Option<&[String]>) -> String {
    let mut out = format!("caption {} {}\n{}\n", tokens.len(), status_word(status), ids(tokens));
    if let Some(names) = names {
        let words: Vec<&str> = tokens.iter().map(|&t| names.get(t).map_or("?", String::as_str)).collect();
        let _ = writeln!(out, "# {}", words.join(" "));
    }
    out
}

pub fn parse_caption_file(text: &str) -> Result<(Vec<TokenId>, DecodeStatus)> {
    let mut lines = Lines::new(text);
    let (ln, head) = lines.expect("a 'caption <n> <status>' header")?;
    let h = header(ln, head, "caption", 2)?;
    let n: usize = parse_num(ln, h[0], "token count")?;
    let status = parse_status(ln, h[1])?;
    let tokens = if n == 0 { Vec::new() } else { let (tl, t) = lines.expect("the token ids")?; parse_ids(tl, t)? };
    if tokens.len() != n {
        return Err(err(ln, format!("header announces {n} tokens, found {}", tokens.len())));
    }
    lines.finish()?;
    Ok((tokens, status))
}

// ---- traces ----

fn solve_word(s: SolveStatus) -> &'static str {
    match s {
        SolveStatus::Converged => "converged",
        SolveStatus::Truncated => "truncated",
    }
}

fn inline_dist(d: &Distribution) -> String {
    let mut s = d.len().to_string();
    for (id, p) in d.support().iter().zip(d.probs()) {
        let _ = write!(s, " {id} {}", float(*p));
    }
    s
}

fn parse_inline_dist(line: usize, fields: &[&str]) -> Result<Distribution> {
    let n: usize = parse_num(line, fields.first().copied().unwrap_or(""), "support size")?;
    if fields.len() != 1 + 2 * n || n == 0 {
        return Err(err(line, format!("inline distribution announces {n} entries but has {} fields", fields.len() - 1)));
    }
    let mut ids = Vec::with_capacity(n);
    let mut probs = Vec::with_capacity(n);
    for pair in fields[1..].chunks(2) {
        ids.push(parse_num(line, pair[0], "token id")?);
        probs.push(parse_num(line, pair[1], "probability")?);
    }
    Distribution::new(probs, ids).map_err(|e| err(line, e.to_string()))
}

/// Every step: the chosen token, the per-source cost triple and the fused
/// distribution, followed by the three sources when the step was fused.
/// Drafts and pseudo-images come first.
pub fn write_trace(out: &Decoded) -> String {
    let t = &out.trace;
    let mut s = format!("trace {} {}\n", t.steps.len(), status_word(out.status));
    let _ = writeln!(s, "tokens {}", ids(&out.tokens));
    let _ = writeln!(s, "r0 {}", ids(&t.r0));
    let _ = writeln!(s, "rc {}", ids(&t.rc));
    let _ = writeln!(s, "rf {}", ids(&t.rf));
    let _ = writeln!(s, "fine_fallback {}", t.fine_fallback);
    for (label, img) in [("v_c", &t.v_c), ("v_f", &t.v_f)] {
        match img {
            Some(img) => {
                let _ = writeln!(s, "{label} present");
                s.push_str(&write_grid(img));
            }
            None => {
                let _ = writeln!(s, "{label} none");
            }
        }
    }
    for (i, r) in t.steps.iter().enumerate() {
        let status = r.solver_status.map_or("none", solve_word);
        let _ = writeln!(s, "step {i} chosen {} solver {status}", r.chosen);
        match r.per_source_cost {
            Some(c) => {
                let _ = writeln!(s, "cost {} {} {}", float(c[0]), float(c[1]), float(c[2]));
            }
            None => {
                let _ = writeln!(s, "cost none");
            }
        }
        let _ = writeln!(s, "fused {}", inline_dist(&r.fused));
        if let Some(sources) = &r.sources {
            for (label, d) in ["p_v", "p_c", "p_f"].iter().zip(sources) {
                let _ = writeln!(s, "{label} {}", inline_dist(d));
            }
        }
    }
    s
}

fn keyed<'a>(lines: &mut Lines<'a>, key: &str) -> Result<(usize, Vec<&'a str>)> {
    let (ln, text) = lines.expect(&format!("a '{key}' line"))?;
    let mut parts = text.split_whitespace();
    if parts.next() != Some(key) {
        return Err(err(ln, format!("expected '{key}', got '{text}'")));
    }
    Ok((ln, parts.collect()))
}

pub fn parse_trace(text: &str) -> Result<Decoded> {
    let mut lines = Lines::new(text);
    let (ln, head) = lines.expect("a 'trace <steps> <status>' header")?;
    let h = header(ln, head, "trace", 2)?;
    let n_steps: usize = parse_num(ln, h[0], "step count")?;
    let status = parse_status(ln, h[1])?;
    let token_list = |lines: &mut Lines, key: &str| -> Result<Vec<TokenId>> {
        let (l, f) = keyed(lines, key)?;
        f.iter().map(|s| parse_num(l, s, "token id")).collect()
    };
    let tokens = token_list(&mut lines, "tokens")?;
    let r0 = token_list(&mut lines, "r0")?;
    let rc = token_list(&mut lines, "rc")?;
    let rf = token_list(&mut lines, "rf")?;
    let (fl, f) = keyed(&mut lines, "fine_fallback")?;
    let fine_fallback: bool = parse_num(fl, f.first().copied().unwrap_or(""), "flag")?;
    let mut images = Vec::new();
    for label in ["v_c", "v_f"] {
        let (il, f) = keyed(&mut lines, label)?;
        images.push(match f.as_slice() {
            ["present"] => Some(parse_grid_block(&mut lines)?),
            ["none"] => None,
            _ => return Err(err(il, format!("expected '{label} present' or '{label} none'"))),
        });
    }
    let mut steps = Vec::with_capacity(n_steps);
    for i in 0..n_steps {
        let (sl, f) = keyed(&mut lines, "step")?;
        if f.len() != 5 || f[1] != "chosen" || f[3] != "solver" || parse_num::<usize>(sl, f[0], "step index")? != i {
            return Err(err(sl, format!("expected 'step {i} chosen <id> solver <status>'")));
        }
        let chosen: TokenId = parse_num(sl, f[2], "token id")?;
        let solver_status = match f[4] {
            "converged" => Some(SolveStatus::Converged),
            "truncated" => Some(SolveStatus::Truncated),
            "none" => None,
            other => return Err(err(sl, format!("unknown solver status '{other}'"))),
        };
        let (cl, c) = keyed(&mut lines, "cost")?;
        let per_source_cost = match c.as_slice() {
            ["none"] => None,
            [a, b, d] => Some([parse_num(cl, a, "cost")?, parse_num(cl, b, "cost")?, parse_num(cl, d, "cost")?]),
            _ => return Err(err(cl, "expected 'cost none' or three costs")),
        };
        let (dl, d) = keyed(&mut lines, "fused")?;
        let fused = parse_inline_dist(dl, &d)?;
        let sources = if lines.peek().is_some_and(|(_, l)| l.starts_with("p_v ")) {
            let mut src = Vec::with_capacity(3);
            for key in ["p_v", "p_c", "p_f"] {
                let (pl, p) = keyed(&mut lines, key)?;
                src.push(parse_inline_dist(pl, &p)?);
            }
            Some(src.try_into().expect("three sources"))
        } else {
            None
        };
        steps.push(StepRecord { sources, fused, per_source_cost, solver_status, chosen });
    }
    lines.finish()?;
    let [v_c, v_f]: [Option<ImageGrid>; 2] = images.try_into().expect("two images");
    Ok(Decoded { tokens, status, trace: DecodeTrace { steps, r0, rc, rf, v_c, v_f, fine_fallback } })
}

/// Output of a replay fusion: one record per dump step.
pub fn write_replay(records: &[StepRecord]) -> String {
    let mut s = format!("replay {}\n", records.len());
    for (i, r) in records.iter().enumerate() {
        let c = r.per_source_cost.unwrap_or([f64::NAN; 3]);
        let status = r.solver_status.map_or("none", solve_word);
        let _ = writeln!(s, "step {i} chosen {} solver {status}", r.chosen);
        let _ = writeln!(s, "cost {} {} {}", float(c[0]), float(c[1]), float(c[2]));
        let _ = writeln!(s, "dist {}", r.fused.len());
        dist_body(&mut s, &r.fused);
    }
    s
}

/// `(chosen, costs, fused)` per step.
pub fn parse_replay(text: &str) -> Result<Vec<(TokenId, [f64; 3], Distribution)>> {
    let mut lines = Lines::new(text);
    let (ln, head) = lines.expect("a 'replay <steps>' header")?;
    let n: usize = parse_num(ln, header(ln, head, "replay", 1)?[0], "step count")?;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let (sl, f) = keyed(&mut lines, "step")?;
        if f.len() != 5 || f[1] != "chosen" || parse_num::<usize>(sl, f[0], "step index")? != i {
            return Err(err(sl, format!("expected 'step {i} chosen <id> solver <status>'")));
        }
        let chosen = parse_num(sl, f[2], "token id")?;
        let (cl, c) = keyed(&mut lines, "cost")?;
        if c.len() != 3 {
            return Err(err(cl, "expected three costs"));
        }
        let costs = [parse_num(cl, c[0], "cost")?, parse_num(cl, c[1], "cost")?, parse_num(cl, c[2], "cost")?];
        out.push((chosen, costs, parse_dist_block(&mut lines)?));
    }
    lines.finish()?;
    Ok(out)
}
