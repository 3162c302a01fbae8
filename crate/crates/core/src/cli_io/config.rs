//! `key = value` configuration files for single runs and experiments, and the
//! sectioned report format.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::bench::{metric_rows, Arm, ArmMode, ExperimentReport, ExperimentSpec, PopeSetup, SceneGenerator};
use crate::decoding::{DecodeConfig, Selection};
use crate::fusion::{FusionConfig, FusionSolver};
use crate::ot::MetricKind;
use crate::scene_models::CaptionerParams;
use crate::views::ViewConfig;

use super::formats::{err, float, Lines, Result};

/// Keys of one block, each with the line it came from.
#[derive(Debug, Default)]
struct Block {
    entries: BTreeMap<String, (usize, String)>,
}

impl Block {
    fn insert(&mut self, line: usize, key: &str, value: &str) -> Result<()> {
        if let Some((first, _)) = self.entries.get(key) {
            return Err(err(line, format!("key '{key}' repeats line {first}")));
        }
        self.entries.insert(key.to_string(), (line, value.to_string()));
        Ok(())
    }

    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.remove(key)
    }

    fn get<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|_| err(line, format!("invalid value '{v}' for '{key}'"))),
        }
    }

    fn list<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<(usize, Vec<T>)>> {
        match self.take(key) {
            None => Ok(None),
            Some((line, v)) => {
                let items = v
                    .split(',')
                    .map(|s| s.trim().parse().map_err(|_| err(line, format!("invalid item '{}' in '{key}'", s.trim()))))
                    .collect::<Result<Vec<T>>>()?;
                Ok(Some((line, items)))
            }
        }
    }

    fn pair(&mut self, key: &str) -> Result<Option<(usize, usize)>> {
        match self.list::<usize>(key)? {
            None => Ok(None),
            Some((_, v)) if v.len() == 2 => Ok(Some((v[0], v[1]))),
            Some((line, _)) => Err(err(line, format!("'{key}' takes two comma-separated integers"))),
        }
    }

    /// `auto` maps to `None`.
    fn auto<T, F>(&mut self, key: &str, parse: F) -> Result<Option<Option<T>>>
    where
        F: FnOnce(&mut Self, &str) -> Result<Option<T>>,
    {
        match self.entries.get(key) {
            Some((_, v)) if v == "auto" => {
                self.take(key);
                Ok(Some(None))
            }
            Some(_) => Ok(parse(self, key)?.map(Some)),
            None => Ok(None),
        }
    }

    fn reject_rest(self) -> Result<()> {
        match self.entries.into_iter().min_by_key(|(_, (line, _))| *line) {
            Some((key, (line, _))) => Err(err(line, format!("unknown key '{key}'"))),
            None => Ok(()),
        }
    }
}

fn parse_line(line: usize, text: &str) -> Result<(String, String)> {
    let (k, v) = text.split_once('=').ok_or_else(|| err(line, format!("expected 'key = value', got '{text}'")))?;
    let (k, v) = (k.trim(), v.trim());
    if k.is_empty() || k.contains(char::is_whitespace) {
        return Err(err(line, format!("malformed key '{k}'")));
    }
    Ok((k.to_string(), v.to_string()))
}

fn apply_decode(b: &mut Block, cfg: &mut DecodeConfig) -> Result<()> {
    if let Some(v) = b.get("max_new_tokens")? {
        cfg.max_new_tokens = v;
    }
    let temperature: Option<f64> = b.get("temperature")?;
    let seed: Option<u64> = b.get("sample_seed")?;
    match b.take("selection") {
        Some((_, s)) if s == "greedy" => cfg.selection = Selection::Greedy,
        Some((_, s)) if s == "sample" => {
            cfg.selection = Selection::Sample { temperature: temperature.unwrap_or(1.0), seed: seed.unwrap_or(0) }
        }
        Some((line, s)) => return Err(err(line, format!("selection must be 'greedy' or 'sample', got '{s}'"))),
        None => {}
    }
    if let Some(v) = b.get("feedback_enabled")? {
        cfg.feedback_enabled = v;
    }
    apply_fusion(b, &mut cfg.fusion)?;
    apply_views(b, &mut cfg.views)
}

fn apply_fusion(b: &mut Block, f: &mut FusionConfig) -> Result<()> {
    if let Some((line, s)) = b.take("solver") {
        f.solver = s.parse::<FusionSolver>().map_err(|e| err(line, e.to_string()))?;
    }
    if let Some(v) = b.get("top_k")? {
        f.top_k = v;
    }
    if let Some((line, w)) = b.list::<f64>("weights")? {
        f.weights = w.try_into().map_err(|_| err(line, "weights takes three values"))?;
    }
    if let Some(v) = b.get("smoothing_alpha")? {
        f.smoothing_alpha = v;
    }
    if let Some(v) = b.get("epsilon")? {
        f.sinkhorn.epsilon = v;
    }
    if let Some(v) = b.get("max_iter")? {
        f.sinkhorn.max_iter = v;
    }
    if let Some(v) = b.get("tol")? {
        f.sinkhorn.tol = v;
    }
    if let Some(v) = b.auto("min_prob", |b, k| b.get::<f64>(k))? {
        f.sinkhorn.min_prob = v;
    }
    Ok(())
}

fn apply_views(b: &mut Block, v: &mut ViewConfig) -> Result<()> {
    if let Some(g) = b.pair("grid")? {
        v.grid = g;
    }
    if let Some(d) = b.get("downsample")? {
        v.downsample = d;
    }
    if let Some(m) = b.get("fine_count")? {
        v.fine_count = m;
    }
    if let Some(c) = b.auto("crop", |b, k| b.pair(k))? {
        v.crop = c;
    }
    if let Some(w) = b.auto("window", |b, k| b.get::<usize>(k))? {
        v.window = w;
    }
    Ok(())
}

fn apply_captioner(b: &mut Block, c: &mut CaptionerParams, allow_seed: bool) -> Result<()> {
    if let Some(v) = b.get("bias_beta")? {
        c.bias_beta = v;
    }
    if let Some(v) = b.get("evidence_noise")? {
        c.evidence_noise = v;
    }
    if let Some(v) = b.get("resolution_penalty")? {
        c.resolution_penalty = v;
    }
    if let Some(v) = b.get("and_decay")? {
        c.and_decay = v;
    }
    if let Some(v) = b.get("cell_px")? {
        c.cell_px = v;
    }
    if allow_seed {
        if let Some(v) = b.get("captioner_seed")? {
            c.seed = v;
        }
    }
    if let Some((_, v)) = b.list::<f64>("object_freq")? {
        c.object_freq = v;
    }
    if let Some((line, v)) = b.take("cooccurrence") {
        let rows = v
            .split(';')
            .map(|row| {
                row.split(',')
                    .map(|s| s.trim().parse().map_err(|_| err(line, format!("invalid cooccurrence entry '{}'", s.trim()))))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        c.cooccurrence = rows;
    }
    Ok(())
}

fn join<T>(items: &[T], f: impl Fn(&T) -> String, sep: &str) -> String {
    items.iter().map(f).collect::<Vec<_>>().join(sep)
}

fn decode_entries(cfg: &DecodeConfig) -> Vec<(String, String)> {
    let mut e = vec![("max_new_tokens".to_string(), cfg.max_new_tokens.to_string())];
    match cfg.selection {
        Selection::Greedy => e.push(("selection".into(), "greedy".into())),
        Selection::Sample { temperature, seed } => e.extend([
            ("selection".into(), "sample".into()),
            ("temperature".into(), float(temperature)),
            ("sample_seed".into(), seed.to_string()),
        ]),
    }
    let f = &cfg.fusion;
    let v = &cfg.views;
    e.extend([
        ("feedback_enabled".into(), cfg.feedback_enabled.to_string()),
        ("solver".into(), f.solver.to_string()),
        ("top_k".into(), f.top_k.to_string()),
        ("weights".into(), join(&f.weights, |w| float(*w), ",")),
        ("smoothing_alpha".into(), float(f.smoothing_alpha)),
        ("epsilon".into(), float(f.sinkhorn.epsilon)),
        ("max_iter".into(), f.sinkhorn.max_iter.to_string()),
        ("tol".into(), float(f.sinkhorn.tol)),
        ("min_prob".into(), f.sinkhorn.min_prob.map_or("auto".into(), float)),
        ("grid".into(), format!("{},{}", v.grid.0, v.grid.1)),
        ("downsample".into(), v.downsample.to_string()),
        ("fine_count".into(), v.fine_count.to_string()),
        ("crop".into(), v.crop.map_or("auto".into(), |(w, h)| format!("{w},{h}"))),
        ("window".into(), v.window.map_or("auto".into(), |w| w.to_string())),
    ]);
    e
}

fn captioner_entries(c: &CaptionerParams, with_seed: bool) -> Vec<(String, String)> {
    let mut e = vec![
        ("bias_beta".to_string(), float(c.bias_beta)),
        ("evidence_noise".into(), float(c.evidence_noise)),
        ("resolution_penalty".into(), float(c.resolution_penalty)),
        ("and_decay".into(), float(c.and_decay)),
        ("cell_px".into(), c.cell_px.to_string()),
    ];
    if with_seed {
        e.push(("captioner_seed".into(), c.seed.to_string()));
    }
    e.push(("object_freq".into(), join(&c.object_freq, |v| float(*v), ",")));
    e.push(("cooccurrence".into(), join(&c.cooccurrence, |row| join(row, |v| float(*v), ","), ";")));
    e
}

fn render_entries(out: &mut String, entries: &[(String, String)]) {
    for (k, v) in entries {
        let _ = writeln!(out, "{k} = {v}");
    }
}

/// Everything one `decode` run needs besides its input image.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub decode: DecodeConfig,
    pub captioner: CaptionerParams,
    pub metric: MetricKind,
    /// Noise and seed used when the input is a scene that must be rendered.
    pub render_noise: f64,
    pub render_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            decode: DecodeConfig::default(),
            captioner: CaptionerParams::default(),
            metric: MetricKind::SquaredEuclidean,
            render_noise: 0.05,
            render_seed: 0,
        }
    }
}

/// Parses a run configuration; absent keys keep their defaults and unknown
/// keys are rejected.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut lines = Lines::new(text);
    let mut b = Block::default();
    while let Some((line, t)) = lines.next() {
        let (k, v) = parse_line(line, t)?;
        b.insert(line, &k, &v)?;
    }
    let mut cfg = RunConfig::default();
    apply_decode(&mut b, &mut cfg.decode)?;
    apply_captioner(&mut b, &mut cfg.captioner, true)?;
    if let Some((line, m)) = b.take("metric") {
        cfg.metric = m.parse().map_err(|e: crate::ot::OtError| err(line, e.to_string()))?;
    }
    if let Some(v) = b.get("render_noise")? {
        cfg.render_noise = v;
    }
    if let Some(v) = b.get("render_seed")? {
        cfg.render_seed = v;
    }
    b.reject_rest()?;
    Ok(cfg)
}

pub fn write_config(cfg: &RunConfig) -> String {
    let mut out = String::new();
    render_entries(&mut out, &decode_entries(&cfg.decode));
    render_entries(&mut out, &captioner_entries(&cfg.captioner, true));
    render_entries(
        &mut out,
        &[
            ("metric".into(), cfg.metric.to_string()),
            ("render_noise".into(), float(cfg.render_noise)),
            ("render_seed".into(), cfg.render_seed.to_string()),
        ],
    );
    out
}

fn spec_entries(spec: &ExperimentSpec) -> Vec<(String, String)> {
    let g = &spec.generator;
    let mut e = vec![
        ("n_scenes".to_string(), spec.n_scenes.to_string()),
        ("seeds".into(), join(&spec.seeds, u64::to_string, ",")),
        ("scene_grid".into(), format!("{},{}", g.grid.0, g.grid.1)),
        ("object_count".into(), format!("{},{}", g.count_range.0, g.count_range.1)),
        ("scene_freq".into(), join(&g.object_freq, |v| float(*v), ",")),
        ("render_noise".into(), float(spec.render_noise)),
        ("metric".into(), spec.metric.to_string()),
        ("pope_setups".into(), join(&spec.pope_setups, PopeSetup::to_string, ",")),
        ("pope_k".into(), spec.pope_k.to_string()),
    ];
    e.extend(captioner_entries(&spec.captioner, false));
    e
}

/// Experiment file: global keys, then one `[arm <name>]` section per arm
/// holding `mode` and decode keys.
pub fn write_experiment(spec: &ExperimentSpec) -> String {
    let mut out = String::new();
    render_entries(&mut out, &spec_entries(spec));
    for arm in &spec.arms {
        let _ = writeln!(out, "\n[arm {}]\nmode = {}", arm.name, arm.mode);
        render_entries(&mut out, &decode_entries(&arm.decode));
    }
    out
}

pub fn parse_experiment(text: &str) -> Result<ExperimentSpec> {
    let mut lines = Lines::new(text);
    let mut global = Block::default();
    let mut arms: Vec<(usize, String, Block)> = Vec::new();
    while let Some((line, t)) = lines.next() {
        if let Some(rest) = t.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .and_then(|r| r.strip_prefix("arm "))
                .map(str::trim)
                .filter(|n| !n.is_empty() && !n.contains(char::is_whitespace))
                .ok_or_else(|| err(line, format!("expected '[arm <name>]', got '{t}'")))?;
            arms.push((line, name.to_string(), Block::default()));
            continue;
        }
        let (k, v) = parse_line(line, t)?;
        match arms.last_mut() {
            Some((_, _, b)) => b.insert(line, &k, &v)?,
            None => global.insert(line, &k, &v)?,
        }
    }
    let mut spec = ExperimentSpec::standard(1, 0);
    let freq_given = global.entries.contains_key("scene_freq");
    if let Some(v) = global.get("n_scenes")? {
        spec.n_scenes = v;
    }
    if let Some((_, s)) = global.list::<u64>("seeds")? {
        spec.seeds = s;
    }
    if let Some(g) = global.pair("scene_grid")? {
        spec.generator.grid = g;
    }
    if let Some(c) = global.pair("object_count")? {
        spec.generator.count_range = c;
    }
    if let Some((_, f)) = global.list::<f64>("scene_freq")? {
        spec.generator.object_freq = f;
    }
    if let Some(v) = global.get("render_noise")? {
        spec.render_noise = v;
    }
    if let Some((line, m)) = global.take("metric") {
        spec.metric = m.parse().map_err(|e: crate::ot::OtError| err(line, e.to_string()))?;
    }
    if let Some((line, s)) = global.take("pope_setups") {
        spec.pope_setups = if s.is_empty() {
            Vec::new()
        } else {
            s.split(',').map(|x| x.trim().parse::<PopeSetup>().map_err(|e| err(line, e))).collect::<Result<_>>()?
        };
    }
    if let Some(v) = global.get("pope_k")? {
        spec.pope_k = v;
    }
    apply_captioner(&mut global, &mut spec.captioner, false)?;
    if !freq_given {
        spec.generator.object_freq = spec.captioner.object_freq.clone();
    }
    global.reject_rest()?;
    if !arms.is_empty() {
        spec.arms = Vec::with_capacity(arms.len());
        for (line, name, mut b) in arms {
            let (ml, mode) = b.take("mode").ok_or_else(|| err(line, format!("arm '{name}' needs a 'mode' key")))?;
            let mode: ArmMode = mode.parse().map_err(|e| err(ml, e))?;
            let mut decode = DecodeConfig::default();
            apply_decode(&mut b, &mut decode)?;
            b.reject_rest()?;
            spec.arms.push(Arm { name, mode, decode });
        }
    }
    Ok(spec)
}

/// Sectioned report: `[name]` headers followed by `key = value` lines.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub sections: Vec<(String, Vec<(String, String)>)>,
}

impl Report {
    pub fn section(&self, name: &str) -> Option<&[(String, String)]> {
        self.sections.iter().find(|(n, _)| n == name).map(|(_, e)| e.as_slice())
    }

    pub fn value(&self, section: &str, key: &str) -> Option<&str> {
        self.section(section)?.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

pub fn write_report(r: &Report) -> String {
    let mut out = String::new();
    for (i, (name, entries)) in r.sections.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "[{name}]");
        render_entries(&mut out, entries);
    }
    out
}

pub fn parse_report(text: &str) -> Result<Report> {
    let mut lines = Lines::new(text);
    let mut r = Report::default();
    while let Some((line, t)) = lines.next() {
        if let Some(name) = t.strip_prefix('[').and_then(|x| x.strip_suffix(']')) {
            r.sections.push((name.to_string(), Vec::new()));
            continue;
        }
        let (k, v) = parse_line(line, t)?;
        let (_, entries) = r.sections.last_mut().ok_or_else(|| err(line, "entry before the first section"))?;
        entries.push((k, v));
    }
    Ok(r)
}

fn suite_of(metric: &str) -> (&str, &str) {
    metric.split_once('.').unwrap_or(("status", metric))
}

/// Groups `suite.metric` rows into `[arm/suite]` sections, in row order.
fn arm_sections(arm: &str, rows: &[(String, String)], tag: &str, out: &mut Vec<(String, Vec<(String, String)>)>) {
    let start = out.len();
    for (metric, value) in rows {
        let (suite, key) = suite_of(metric);
        let name = format!("{arm}/{suite}{tag}");
        match out[start..].iter_mut().find(|(n, _)| *n == name) {
            Some((_, entries)) => entries.push((key.to_string(), value.clone())),
            None => out.push((name, vec![(key.to_string(), value.clone())])),
        }
    }
}

fn format_value(metric: &str, v: f64) -> String {
    if metric == "failures" {
        format!("{}", v as usize)
    } else {
        float(v)
    }
}

/// Config echo, per-arm metric blocks, and the seed list. With several seeds
/// each run gets `[arm/suite@seed]` blocks and the `[arm/suite]` blocks hold
/// the mean with a `<metric>_std` companion (population formula).
pub fn render_experiment(report: &ExperimentReport) -> Report {
    let spec = &report.spec;
    let mut sections = Vec::new();
    let mut config = spec_entries(spec);
    for arm in &spec.arms {
        config.push((format!("arm.{}.mode", arm.name), arm.mode.to_string()));
        config.extend(decode_entries(&arm.decode).into_iter().map(|(k, v)| (format!("arm.{}.{k}", arm.name), v)));
    }
    sections.push(("config".to_string(), config));
    let several = report.runs.len() > 1;
    for run in &report.runs {
        let tag = if several { format!("@{}", run.seed) } else { String::new() };
        for arm in &run.arms {
            let rows: Vec<(String, String)> = metric_rows(arm).into_iter().map(|(m, v)| (m.clone(), format_value(&m, v))).collect();
            arm_sections(&arm.name, &rows, &tag, &mut sections);
            if let Some(msg) = &arm.first_failure {
                let name = format!("{}/status{tag}", arm.name);
                if let Some((_, e)) = sections.iter_mut().find(|(n, _)| *n == name) {
                    e.push(("first_failure".into(), msg.replace('\n', " ")));
                }
            }
        }
    }
    if several {
        for (arm, metric, ms) in report.summary() {
            let rows = [(metric.clone(), float(ms.mean)), (format!("{metric}_std"), float(ms.std))];
            arm_sections(&arm, &rows, "", &mut sections);
        }
    }
    sections.push(("seeds".to_string(), vec![("list".into(), join(&spec.seeds, u64::to_string, ","))]));
    Report { sections }
}

pub fn default_scene_generator() -> SceneGenerator {
    ExperimentSpec::standard(1, 0).generator
}
