//! Report artifacts: SVG heatmaps of a profile, run manifests, and
//! all-or-nothing writes of output files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::estimators::MemorisationProfile;

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapOptions {
    pub title: String,
    /// Step after which a dashed vertical rule is drawn (e.g. end of the
    /// first epoch).
    pub epoch_boundary: Option<u64>,
    /// Leave non-significant cells blank when significance is known.
    pub mask_insignificant: bool,
}

impl Default for HeatmapOptions {
    fn default() -> Self {
        Self {
            title: "Memorisation profile".into(),
            epoch_boundary: None,
            mask_insignificant: true,
        }
    }
}

const LEFT: f64 = 80.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;
const LEGEND: f64 = 120.0;

/// Diverging blue-white-red colour for `t` in [-1, 1].
fn diverging(t: f64) -> String {
    let t = t.clamp(-1.0, 1.0);
    let (end, w) = if t < 0.0 {
        ((59.0, 76.0, 192.0), -t)
    } else {
        ((180.0, 4.0, 38.0), t)
    };
    let mix = |e: f64| (255.0 + (e - 255.0) * w).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(end.0), mix(end.1), mix(end.2))
}

fn tick_stride(n: usize) -> usize {
    n.div_ceil(12).max(1)
}

/// Renders the profile as a heatmap: treatment step `g` on the vertical
/// axis, checkpoint `c` on the horizontal axis, colour centred at zero.
/// Every admissible cell is exactly one `<rect>`; cells known to be
/// non-significant are drawn without fill.
pub fn render_heatmap(profile: &MemorisationProfile, options: &HeatmapOptions) -> String {
    let rows = profile.treatment_steps();
    let cols = profile.checkpoint_steps();
    let cell = if cols.len().max(rows.len()) <= 40 {
        14.0
    } else {
        6.0
    };
    let width = LEFT + cell * cols.len() as f64 + LEGEND;
    let height = TOP + cell * rows.len() as f64 + BOTTOM;

    let shown = |x: &crate::estimators::ProfileCell| {
        !options.mask_insignificant || x.significant != Some(false)
    };
    let scale = profile
        .cells()
        .iter()
        .filter(|x| shown(x))
        .map(|x| x.estimate.abs())
        .fold(0.0, f64::max);
    let scale = if scale > 0.0 { scale } else { 1.0 };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(
        svg,
        r#"<defs><linearGradient id="scale" x1="0" y1="1" x2="0" y2="0"><stop offset="0" stop-color="{}"/><stop offset="0.5" stop-color="{}"/><stop offset="1" stop-color="{}"/></linearGradient></defs>"#,
        diverging(-1.0),
        diverging(0.0),
        diverging(1.0)
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
        LEFT + cell * cols.len() as f64 / 2.0,
        escape(&options.title)
    );

    let _ = writeln!(svg, r#"<g class="cells">"#);
    for x in profile.cells() {
        let i = rows.binary_search(&x.g).expect("row of own cell");
        let j = cols.binary_search(&x.c).expect("column of own cell");
        let fill = if shown(x) {
            diverging(x.estimate / scale)
        } else {
            "none".to_string()
        };
        let _ = writeln!(
            svg,
            r#"<rect x="{}" y="{}" width="{cell}" height="{cell}" fill="{fill}"><title>g={} c={} estimate={}</title></rect>"#,
            LEFT + cell * j as f64,
            TOP + cell * i as f64,
            x.g,
            x.c,
            x.estimate
        );
    }
    let _ = writeln!(svg, "</g>");

    // Frame and axes.
    let grid_right = LEFT + cell * cols.len() as f64;
    let grid_bottom = TOP + cell * rows.len() as f64;
    let _ = writeln!(
        svg,
        r##"<path d="M{LEFT} {TOP} H{grid_right} V{grid_bottom} H{LEFT} Z" fill="none" stroke="#444" stroke-width="0.5"/>"##
    );
    for (j, c) in cols.iter().enumerate().step_by(tick_stride(cols.len())) {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">{c}</text>"#,
            LEFT + cell * (j as f64 + 0.5),
            grid_bottom + 14.0
        );
    }
    for (i, g) in rows.iter().enumerate().step_by(tick_stride(rows.len())) {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end" dominant-baseline="middle">{g}</text>"#,
            LEFT - 4.0,
            TOP + cell * (i as f64 + 0.5)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">checkpoint step c</text>"#,
        LEFT + cell * cols.len() as f64 / 2.0,
        grid_bottom + 36.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">treatment step g</text>"#,
        TOP + cell * rows.len() as f64 / 2.0,
        TOP + cell * rows.len() as f64 / 2.0
    );

    if let Some(boundary) = options.epoch_boundary {
        let k = cols.partition_point(|&c| c <= boundary);
        let x = LEFT + cell * k as f64;
        let _ = writeln!(
            svg,
            r##"<line class="epoch" x1="{x}" y1="{TOP}" x2="{x}" y2="{grid_bottom}" stroke="#222" stroke-width="1" stroke-dasharray="4 3"/>"##
        );
    }

    // Colour legend.
    let lx = grid_right + 30.0;
    let lh = (grid_bottom - TOP).max(60.0);
    let _ = writeln!(
        svg,
        r##"<path d="M{lx} {TOP} h12 v{lh} h-12 Z" fill="url(#scale)" stroke="#444" stroke-width="0.5"/>"##
    );
    for (frac, value) in [(0.0, scale), (0.5, 0.0), (1.0, -scale)] {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" dominant-baseline="middle">{}</text>"#,
            lx + 16.0,
            TOP + lh * frac,
            format_tick(value)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        lx + 6.0,
        TOP + lh + 16.0,
        escape(profile.metric_name())
    );
    svg.push_str("</svg>\n");
    svg
}

fn format_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else {
        format!("{v:.3e}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Record of how a report bundle was produced. Contains no timestamps so
/// identical inputs give identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub rng: &'static str,
    pub seed: Option<u64>,
    pub parameters: BTreeMap<String, String>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    /// SHA-256 over the parameters and input digests.
    pub config_hash: String,
}

impl Manifest {
    pub fn new(
        seed: Option<u64>,
        parameters: BTreeMap<String, String>,
        inputs: BTreeMap<String, String>,
        outputs: BTreeMap<String, String>,
    ) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(format!("seed={seed:?}\n"));
        for (k, v) in parameters.iter().chain(&inputs) {
            hasher.update(format!("{k}={v}\n"));
        }
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            rng: crate::rng::ALGORITHM,
            seed,
            parameters,
            inputs,
            outputs,
            config_hash: hex::encode(hasher.finalize()),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Writes every file or none: contents go to temporary files beside their
/// targets first and are renamed into place only after all writes succeed.
pub fn write_all_or_nothing(files: &[(PathBuf, Vec<u8>)]) -> Result<()> {
    let mut staged = Vec::with_capacity(files.len());
    for (path, bytes) in files {
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(bytes)?;
        tmp.flush()?;
        staged.push((tmp, path));
    }
    for (tmp, path) in staged {
        tmp.persist(path).map_err(|e| e.error)?;
    }
    Ok(())
}
