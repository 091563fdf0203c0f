//! Two-component PCA of sentence embeddings and scatter-plot export.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use crate::checkpoint::Model;
use crate::data::{Trait, Tweet};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::Vector;

pub const PCA_TOLERANCE: f64 = 1e-10;
pub const PCA_MAX_ITERATIONS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Unit-norm, mutually orthogonal rows, by decreasing variance.
    pub components: Vec<Vec<f64>>,
    /// Sample variance along each component (1/(N-1) estimator).
    pub explained_variance: Vec<f64>,
    /// Power iterations spent per component.
    pub iterations: Vec<usize>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn sym_matvec(a: &[f64], d: usize, v: &[f64]) -> Vec<f64> {
    (0..d).map(|i| dot(&a[i * d..(i + 1) * d], v)).collect()
}

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let p = dot(v, b);
        v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
    }
}

/// Flips `v` so its largest-magnitude entry is positive (first such entry
/// on ties).
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Leading eigenvector of the symmetric PSD matrix `a` restricted to the
/// orthogonal complement of `found`.
///
/// The deflated matrix is squared repeatedly (each square doubles the
/// power applied) to get a good starting vector, then plain power steps
/// refine it until successive iterates differ by less than the tolerance.
fn leading_eigenvector(a: &[f64], d: usize, found: &[Vec<f64>]) -> (Vec<f64>, usize) {
    // Deflation by projection: B = P A P with P = I - Σ v vᵀ.
    let project = |m: &[f64]| -> Vec<f64> {
        let mut out = m.to_vec();
        for pass in 0..2 {
            for j in 0..d {
                let mut col: Vec<f64> = (0..d)
                    .map(|i| if pass == 0 { out[i * d + j] } else { out[j * d + i] })
                    .collect();
                orthogonalize(&mut col, found);
                for i in 0..d {
                    if pass == 0 {
                        out[i * d + j] = col[i];
                    } else {
                        out[j * d + i] = col[i];
                    }
                }
            }
        }
        out
    };
    let b = project(a);
    let trace: f64 = (0..d).map(|i| b[i * d + i]).sum();
    let fallback = || {
        // No variance left: the basis vector with the largest residual.
        let mut best = vec![0.0; d];
        let mut best_norm = -1.0;
        for k in 0..d {
            let mut e = vec![0.0; d];
            e[k] = 1.0;
            orthogonalize(&mut e, found);
            orthogonalize(&mut e, found);
            let n = dot(&e, &e);
            if n > best_norm + 1e-12 {
                best_norm = n;
                best = e;
            }
        }
        normalize(&mut best);
        best
    };
    let total: f64 = (0..d).map(|i| a[i * d + i]).sum();
    if !(trace > 1e-13 * total) {
        return (fallback(), 0);
    }

    let mut iterations = 0;
    let mut m: Vec<f64> = b.iter().map(|x| x / trace).collect();
    for _ in 0..64 {
        let mut sq = vec![0.0; d * d];
        for i in 0..d {
            for k in 0..d {
                let aik = m[i * d + k];
                if aik != 0.0 {
                    for j in 0..d {
                        sq[i * d + j] += aik * m[k * d + j];
                    }
                }
            }
        }
        let t: f64 = (0..d).map(|i| sq[i * d + i]).sum();
        if !(t > 0.0) {
            break;
        }
        sq.iter_mut().for_each(|x| *x /= t);
        iterations += 1;
        let delta = sq.iter().zip(&m).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        m = sq;
        if delta < 1e-15 {
            break;
        }
    }
    let col = (0..d)
        .max_by(|&x, &y| {
            let nx: f64 = (0..d).map(|i| m[i * d + x].powi(2)).sum();
            let ny: f64 = (0..d).map(|i| m[i * d + y].powi(2)).sum();
            nx.total_cmp(&ny)
        })
        .unwrap_or(0);
    let mut v: Vec<f64> = (0..d).map(|i| m[i * d + col]).collect();
    orthogonalize(&mut v, found);
    if normalize(&mut v) == 0.0 {
        return (fallback(), iterations);
    }
    fix_sign(&mut v);

    while iterations < PCA_MAX_ITERATIONS {
        iterations += 1;
        let mut next = sym_matvec(&b, d, &v);
        orthogonalize(&mut next, found);
        if normalize(&mut next) == 0.0 {
            return (fallback(), iterations);
        }
        fix_sign(&mut next);
        let delta = next.iter().zip(&v).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        v = next;
        if delta < PCA_TOLERANCE {
            break;
        }
    }
    (v, iterations)
}

/// Fits `n_components` principal directions of `points`.
///
/// When the data has fewer than `n_components` directions of variance, the
/// remaining components are orthonormal completions with zero explained
/// variance.
pub fn pca_fit(points: &[Vector], n_components: usize) -> Result<PcaModel> {
    if points.len() < 2 {
        return Err(Error::Invalid(format!("PCA needs at least 2 points, got {}", points.len())));
    }
    let d = points[0].len();
    if points.iter().any(|p| p.len() != d) {
        return Err(Error::Invalid("PCA points have differing dimensions".into()));
    }
    if d < n_components || n_components == 0 {
        return Err(Error::Invalid(format!("cannot fit {n_components} components in {d} dimensions")));
    }
    let n = points.len() as f64;
    let mut mean = vec![0.0; d];
    for p in points {
        mean.iter_mut().zip(p.iter()).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = vec![0.0; d * d];
    for p in points {
        let c: Vec<f64> = p.iter().zip(&mean).map(|(x, m)| x - m).collect();
        for i in 0..d {
            for j in i..d {
                cov[i * d + j] += c[i] * c[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / (n - 1.0);
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }

    let mut components: Vec<Vec<f64>> = Vec::with_capacity(n_components);
    let mut explained_variance = Vec::with_capacity(n_components);
    let mut iterations = Vec::with_capacity(n_components);
    for _ in 0..n_components {
        let (v, it) = leading_eigenvector(&cov, d, &components);
        let lambda = dot(&v, &sym_matvec(&cov, d, &v)).max(0.0);
        explained_variance.push(lambda);
        iterations.push(it);
        components.push(v);
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
        iterations,
    })
}

/// Coordinates of `v` along each component: `components · (v - mean)`.
pub fn pca_project(model: &PcaModel, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != model.mean.len() {
        return Err(Error::Shape {
            op: "pca_project",
            left: format!("vector of length {}", v.len()),
            right: format!("model of dimension {}", model.mean.len()),
        });
    }
    let c: Vec<f64> = v.iter().zip(&model.mean).map(|(x, m)| x - m).collect();
    Ok(model.components.iter().map(|row| dot(row, &c)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    High,
    Low,
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Group::High => "HIGH",
            Group::Low => "LOW",
        })
    }
}

/// Tweet indices drawn from the two ends of a trait's spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct Extremes {
    pub high: Vec<usize>,
    pub low: Vec<usize>,
}

pub const DEFAULT_TAIL_QUANTILE: f64 = 0.25;

/// Samples `n_per_side` tweets from users in the top `quantile` and the
/// bottom `quantile` of user scores. Each group is returned in record
/// order.
pub fn select_extremes(
    corpus: &[Tweet],
    target: Trait,
    n_per_side: usize,
    quantile: f64,
    seed: u64,
) -> Result<Extremes> {
    if n_per_side == 0 {
        return Err(Error::Invalid("n_per_side must be at least 1".into()));
    }
    if !(quantile > 0.0 && quantile <= 0.5) {
        return Err(Error::Invalid(format!("tail quantile {quantile} outside (0, 0.5]")));
    }
    if corpus.len() < 2 * n_per_side {
        return Err(Error::Invalid(format!(
            "need at least {} tweets, corpus has {}",
            2 * n_per_side,
            corpus.len()
        )));
    }
    let mut scores = crate::eval::user_scores(corpus, target);
    scores.sort_by(f64::total_cmp);
    let last = (scores.len() - 1) as f64;
    let low_cut = scores[(quantile * last).floor() as usize];
    let high_cut = scores[((1.0 - quantile) * last).ceil() as usize];
    if high_cut <= low_cut {
        return Err(Error::Invalid("user scores are too concentrated to form two tails".into()));
    }
    let high: Vec<usize> = (0..corpus.len()).filter(|&i| corpus[i].score(target) >= high_cut).collect();
    let low: Vec<usize> = (0..corpus.len()).filter(|&i| corpus[i].score(target) <= low_cut).collect();
    let mut rng = SplitMix64::stream(seed, 0xE47);
    let mut pick = |mut pool: Vec<usize>, side: &str| -> Result<Vec<usize>> {
        if pool.len() < n_per_side {
            return Err(Error::Invalid(format!(
                "only {} tweets in the {side} tail, {n_per_side} requested",
                pool.len()
            )));
        }
        rng.shuffle(&mut pool);
        pool.truncate(n_per_side);
        pool.sort_unstable();
        Ok(pool)
    };
    let high = pick(high, "high")?;
    let low = pick(low, "low")?;
    Ok(Extremes { high, low })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterPoint {
    pub pc1: f64,
    pub pc2: f64,
    pub label: Group,
    pub text: String,
}

/// Selects tweets from both ends of `target`, embeds them with `model` and projects the
/// embeddings onto their first two principal components.
pub fn scatter_points(
    model: &Model,
    corpus: &[Tweet],
    target: Trait,
    n_per_side: usize,
    quantile: f64,
    seed: u64,
) -> Result<(Vec<ScatterPoint>, PcaModel)> {
    let ex = select_extremes(corpus, target, n_per_side, quantile, seed)?;
    let chosen: Vec<(usize, Group)> = ex
        .high
        .iter()
        .map(|&i| (i, Group::High))
        .chain(ex.low.iter().map(|&i| (i, Group::Low)))
        .collect();
    let embeddings = chosen
        .iter()
        .map(|&(i, _)| model.sentence_embedding(&corpus[i]))
        .collect::<Result<Vec<_>>>()?;
    let pca = pca_fit(&embeddings, 2)?;
    let points = chosen
        .iter()
        .zip(&embeddings)
        .map(|(&(i, label), e)| {
            let p = pca_project(&pca, e)?;
            Ok(ScatterPoint {
                pc1: p[0],
                pc2: p[1],
                label,
                text: corpus[i].raw_text.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((points, pca))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScatterFormat {
    Csv,
    Svg,
}

impl FromStr for ScatterFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ScatterFormat::Csv),
            "svg" => Ok(ScatterFormat::Svg),
            _ => Err(Error::Invalid(format!("unknown format '{s}' (expected csv or svg)"))),
        }
    }
}

/// Backslash-escapes control whitespace and backslashes.
pub fn tsv_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

pub fn render_csv(points: &[ScatterPoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Invalid(format!("csv: {e}"));
    w.write_record(["pc1", "pc2", "label", "text"]).map_err(csv_err)?;
    for p in points {
        w.write_record([p.pc1.to_string(), p.pc2.to_string(), p.label.to_string(), tsv_escape(&p.text)])
            .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Invalid(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            c if (c as u32) < 0x20 && c != '\t' && c != '\n' => out.push(' '),
            c => out.push(c),
        }
    }
    out
}

pub const SVG_WIDTH: f64 = 800.0;
pub const SVG_HEIGHT: f64 = 600.0;
const MARGIN: f64 = 50.0;
const HIGH_COLOR: &str = "#d62728";
const LOW_COLOR: &str = "#1f77b4";

/// Self-contained SVG scatter plot; identical input gives identical bytes.
pub fn render_svg(points: &[ScatterPoint], title: &str) -> String {
    let range = |f: fn(&ScatterPoint) -> f64| {
        let (lo, hi) = points.iter().map(f).fold((0.0f64, 0.0f64), |(a, b), x| (a.min(x), b.max(x)));
        let pad = ((hi - lo) * 0.05).max(1e-9);
        (lo - pad, hi + pad)
    };
    let (x0, x1) = range(|p| p.pc1);
    let (y0, y1) = range(|p| p.pc2);
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (SVG_WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| SVG_HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (SVG_HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="30" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
        SVG_WIDTH / 2.0,
        xml_escape(title)
    );
    // Axes through the origin, which always lies inside the padded range.
    let _ = writeln!(
        s,
        r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#444" stroke-width="1"/>"##,
        MARGIN,
        sy(0.0),
        SVG_WIDTH - MARGIN,
        sy(0.0)
    );
    let _ = writeln!(
        s,
        r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#444" stroke-width="1"/>"##,
        sx(0.0),
        MARGIN,
        sx(0.0),
        SVG_HEIGHT - MARGIN
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="end">PC1</text>"#,
        SVG_WIDTH - MARGIN,
        SVG_HEIGHT - MARGIN / 2.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12">PC2</text>"#,
        MARGIN / 4.0,
        MARGIN - 8.0
    );
    for (i, (label, color)) in [(Group::High, HIGH_COLOR), (Group::Low, LOW_COLOR)].into_iter().enumerate() {
        let y = 50.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="10" height="10" fill="{color}"/><text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12">{label}</text>"#,
            SVG_WIDTH - 110.0,
            y,
            SVG_WIDTH - 95.0,
            y + 9.0
        );
    }
    for p in points {
        let color = match p.label {
            Group::High => HIGH_COLOR,
            Group::Low => LOW_COLOR,
        };
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{color}" fill-opacity="0.8"><title>{}</title></circle>"#,
            sx(p.pc1),
            sy(p.pc2),
            xml_escape(&p.text)
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn export_scatter(points: &[ScatterPoint], path: impl AsRef<Path>, format: ScatterFormat, title: &str) -> Result<()> {
    if points.is_empty() {
        return Err(Error::EmptyInput("no points to export"));
    }
    if let Some(p) = points.iter().find(|p| !(p.pc1.is_finite() && p.pc2.is_finite())) {
        return Err(Error::Invalid(format!("non-finite coordinates for '{}'", p.text)));
    }
    let body = match format {
        ScatterFormat::Csv => render_csv(points)?,
        ScatterFormat::Svg => render_svg(points, title),
    };
    let path = path.as_ref();
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}
