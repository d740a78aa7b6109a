//! Independent oracles and generators shared by the integration tests.
//! Nothing here calls into the crate's matching, metric, geometry or
//! regression code.
#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use nbclaims::corpus::{CleanListing, RawListing};
use rand::Rng;

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(rel)
}

pub fn listing(id: &str, title: &str, body: &str, field: Option<&str>) -> CleanListing {
    CleanListing {
        raw: RawListing {
            id: id.to_string(),
            title: title.to_string(),
            body: body.to_string(),
            neighborhood_field: field.map(str::to_string),
            latitude: None,
            longitude: None,
            rent: None,
            bedrooms: None,
            bathrooms: None,
            square_footage: None,
            posted_at: None,
        },
        cleaned_title: title.to_string(),
        cleaned_body: body.to_string(),
        duplicate_of: None,
    }
}

// ---------------------------------------------------------------------------
// matcher

/// Literal-alias gazetteer scanned character by character.
pub struct ScanGazetteer {
    /// (canonical, token lists of every alias including the canonical)
    pub entries: Vec<(String, Vec<Vec<String>>)>,
}

impl ScanGazetteer {
    pub fn parse(text: &str) -> Self {
        let mut entries = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let names: Vec<String> = line.split('|').map(|s| s.trim().to_lowercase()).collect();
            let aliases = names
                .iter()
                .map(|n| n.split_whitespace().map(str::to_string).collect())
                .collect();
            entries.push((names[0].split_whitespace().collect::<Vec<_>>().join(" "), aliases));
        }
        ScanGazetteer { entries }
    }

    /// Earliest mention; ties go to the longer span, then the smaller name.
    pub fn first_mention(&self, text: &str) -> Option<String> {
        let chars: Vec<char> = text.to_lowercase().chars().collect();
        let mut best: Option<(usize, usize, &str)> = None;
        for start in 0..chars.len() {
            if start > 0 && is_word(chars[start - 1]) {
                continue;
            }
            for (canonical, aliases) in &self.entries {
                for tokens in aliases {
                    let Some(end) = match_tokens(&chars, start, tokens) else {
                        continue;
                    };
                    if end < chars.len() && is_word(chars[end]) {
                        continue;
                    }
                    let cand = (start, end - start, canonical.as_str());
                    let better = match best {
                        None => true,
                        Some((s, l, c)) => {
                            (start, std::cmp::Reverse(end - start), cand.2) < (s, std::cmp::Reverse(l), c)
                        }
                    };
                    if better {
                        best = Some(cand);
                    }
                }
            }
        }
        best.map(|(_, _, c)| c.to_string())
    }

    /// Title, then body, then neighborhood field.
    pub fn label(&self, l: &CleanListing) -> Option<String> {
        self.first_mention(&l.cleaned_title)
            .or_else(|| self.first_mention(&l.cleaned_body))
            .or_else(|| l.raw.neighborhood_field.as_deref().and_then(|f| self.first_mention(f)))
    }
}

fn is_word(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn match_tokens(chars: &[char], start: usize, tokens: &[String]) -> Option<usize> {
    let mut i = start;
    for (k, tok) in tokens.iter().enumerate() {
        if k > 0 {
            while i < chars.len() && chars[i].is_whitespace() {
                i += 1;
            }
        }
        for c in tok.chars() {
            if i < chars.len() && chars[i] == c {
                i += 1;
            } else {
                return None;
            }
        }
    }
    Some(i)
}

const FILLER: &[&str] = &[
    "sunny",
    "apartment",
    "near",
    "the",
    "with",
    "great",
    "views",
    "of",
    "lake",
    "park",
    "west",
    "town",
    "hall",
    "north",
    "side",
    "river",
    "east",
    "view",
    "village",
    "loop",
    "lakeviewing",
    "parkway",
    "uptowner",
    "sq",
    "logan",
    "square",
    "hyde",
    "south",
    "near",
    "wicker",
    "parks",
    "in",
    "a",
    "2br",
];
const SEPARATORS: &[&str] = &[" ", " ", " ", ", ", ". ", " - ", " / ", "\n", "", "!"];

fn random_case(rng: &mut impl Rng, s: &str) -> String {
    match rng.random_range(0..4) {
        0 => s.to_uppercase(),
        1 => s
            .split(' ')
            .map(|w| {
                let mut c = w.chars();
                c.next()
                    .map(|f| f.to_uppercase().chain(c).collect::<String>())
                    .unwrap_or_default()
            })
            .collect::<Vec<_>>()
            .join(" "),
        _ => s.to_string(),
    }
}

/// Random text mixing filler words with alias spellings, odd spacing and
/// glued-on neighbors that should defeat word boundaries.
pub fn random_text(rng: &mut impl Rng, gaz: &ScanGazetteer) -> String {
    let n = rng.random_range(0..12);
    let mut out = String::new();
    for i in 0..n {
        if i > 0 {
            out.push_str(SEPARATORS[rng.random_range(0..SEPARATORS.len())]);
        }
        if rng.random_bool(0.3) {
            let (_, aliases) = &gaz.entries[rng.random_range(0..gaz.entries.len())];
            let tokens = &aliases[rng.random_range(0..aliases.len())];
            let gap = [" ", "", "  ", "\t"][rng.random_range(0..4)];
            out.push_str(&random_case(rng, &tokens.join(gap)));
        } else {
            let word = FILLER[rng.random_range(0..FILLER.len())];
            out.push_str(&random_case(rng, word));
        }
    }
    out
}

pub fn random_listing(rng: &mut impl Rng, gaz: &ScanGazetteer, id: usize) -> CleanListing {
    let title = random_text(rng, gaz);
    let body = random_text(rng, gaz);
    let field = match rng.random_range(0..3) {
        0 => None,
        1 => Some(String::new()),
        _ => Some(random_text(rng, gaz)),
    };
    listing(&format!("R{id:04}"), &title, &body, field.as_deref())
}

// ---------------------------------------------------------------------------
// evaluation

#[derive(Debug, Clone)]
pub struct ClassScore {
    pub precision: Option<f64>,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone)]
pub struct ConfusionScores {
    pub classes: BTreeMap<String, ClassScore>,
    pub accuracy: f64,
    pub macro_p: f64,
    pub macro_r: f64,
    pub macro_f1: f64,
    pub weighted_p: f64,
    pub weighted_r: f64,
    pub weighted_f1: f64,
}

/// Metrics read off an explicit confusion matrix. Classes with no
/// predictions have undefined precision, count as F1 = 0, and are left out
/// of both precision averages.
pub fn confusion_scores(pairs: &[(String, String)]) -> ConfusionScores {
    let mut labels: Vec<&str> = pairs.iter().flat_map(|(g, p)| [g.as_str(), p.as_str()]).collect();
    labels.sort();
    labels.dedup();
    let k = labels.len();
    let pos = |s: &str| labels.iter().position(|l| *l == s).unwrap();
    let mut m = vec![vec![0usize; k]; k];
    for (g, p) in pairs {
        m[pos(g)][pos(p)] += 1;
    }
    let total = pairs.len() as f64;
    let diag: usize = (0..k).map(|i| m[i][i]).sum();
    let mut classes = BTreeMap::new();
    for (i, name) in labels.iter().enumerate() {
        let support: usize = m[i].iter().sum();
        if support == 0 {
            continue;
        }
        let col: usize = (0..k).map(|r| m[r][i]).sum();
        let tp = m[i][i] as f64;
        let precision = if col == 0 { None } else { Some(tp / col as f64) };
        let recall = tp / support as f64;
        let f1 = match precision {
            Some(p) if p + recall > 0.0 => 2.0 * p * recall / (p + recall),
            _ => 0.0,
        };
        classes.insert(
            name.to_string(),
            ClassScore {
                precision,
                recall,
                f1,
                support,
            },
        );
    }
    let n = classes.len() as f64;
    let defined: Vec<&ClassScore> = classes.values().filter(|c| c.precision.is_some()).collect();
    let dsup: usize = defined.iter().map(|c| c.support).sum();
    ConfusionScores {
        accuracy: diag as f64 / total,
        macro_p: if defined.is_empty() {
            0.0
        } else {
            defined.iter().map(|c| c.precision.unwrap()).sum::<f64>() / defined.len() as f64
        },
        macro_r: classes.values().map(|c| c.recall).sum::<f64>() / n,
        macro_f1: classes.values().map(|c| c.f1).sum::<f64>() / n,
        weighted_p: if dsup == 0 {
            0.0
        } else {
            defined
                .iter()
                .map(|c| c.precision.unwrap() * c.support as f64)
                .sum::<f64>()
                / dsup as f64
        },
        weighted_r: classes.values().map(|c| c.recall * c.support as f64).sum::<f64>() / total,
        weighted_f1: classes.values().map(|c| c.f1 * c.support as f64).sum::<f64>() / total,
        classes,
    }
}

pub fn random_pairs(rng: &mut impl Rng) -> Vec<(String, String)> {
    const POOL: &[&str] = &[
        "uptown",
        "pilsen",
        "lake view",
        "bucktown",
        "hyde park",
        "edgewater",
        "unknown",
    ];
    let n = rng.random_range(1..=200);
    let classes = rng.random_range(1..=POOL.len());
    let accuracy = rng.random_range(0.0..1.0);
    (0..n)
        .map(|_| {
            let g = POOL[rng.random_range(0..classes)];
            let p = if rng.random_bool(accuracy) {
                g
            } else {
                POOL[rng.random_range(0..POOL.len())]
            };
            (g.to_string(), p.to_string())
        })
        .collect()
}

// ---------------------------------------------------------------------------
// geometry

/// Even-odd ray casting toward +longitude. Rings are `(lon, lat)`.
pub fn ray_cast(ring: &[(f64, f64)], lat: f64, lon: f64) -> bool {
    let mut inside = false;
    let n = ring.len();
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = ring[i];
        let (xj, yj) = ring[j];
        if (yi > lat) != (yj > lat) && lon < (xj - xi) * (lat - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Polygons as `[exterior, holes...]` rings of `(lon, lat)`.
pub type RawPolygon = Vec<Vec<(f64, f64)>>;

pub fn polygon_contains(poly: &RawPolygon, lat: f64, lon: f64) -> bool {
    ray_cast(&poly[0], lat, lon) && !poly[1..].iter().any(|h| ray_cast(h, lat, lon))
}

/// Named polygons straight from a GeoJSON FeatureCollection.
pub fn read_geojson_polygons(text: &str, name_property: &str) -> Vec<(String, Vec<RawPolygon>)> {
    let v: serde_json::Value = serde_json::from_str(text).unwrap();
    let ring = |r: &serde_json::Value| -> Vec<(f64, f64)> {
        r.as_array()
            .unwrap()
            .iter()
            .map(|p| (p[0].as_f64().unwrap(), p[1].as_f64().unwrap()))
            .collect()
    };
    let poly = |p: &serde_json::Value| -> RawPolygon { p.as_array().unwrap().iter().map(ring).collect() };
    v["features"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| {
            let name = f["properties"][name_property].as_str().unwrap().to_lowercase();
            let g = &f["geometry"];
            let polys = match g["type"].as_str().unwrap() {
                "Polygon" => vec![poly(&g["coordinates"])],
                "MultiPolygon" => g["coordinates"].as_array().unwrap().iter().map(poly).collect(),
                other => panic!("unexpected geometry {other}"),
            };
            (name, polys)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// least squares

pub struct NormalEquationsFit {
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub t_values: Vec<f64>,
    pub p_values: Vec<f64>,
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn invert(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        let d = m[col][col];
        assert!(d.abs() > 1e-300, "singular matrix");
        for v in m[col].iter_mut() {
            *v /= d;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    for c in 0..2 * n {
                        m[r][c] -= f * m[col][c];
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

pub fn normal_equations(x: &[Vec<f64>], y: &[f64]) -> NormalEquationsFit {
    let p = x[0].len();
    let n = x.len();
    let mut xtx = vec![vec![0.0; p]; p];
    let mut xty = vec![0.0; p];
    for (row, &yi) in x.iter().zip(y) {
        for a in 0..p {
            xty[a] += row[a] * yi;
            for b in 0..p {
                xtx[a][b] += row[a] * row[b];
            }
        }
    }
    let inv = invert(&xtx);
    let beta: Vec<f64> = (0..p).map(|a| (0..p).map(|b| inv[a][b] * xty[b]).sum()).collect();
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(row, &yi)| {
            let fitted: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
            (yi - fitted).powi(2)
        })
        .sum();
    let df = (n - p) as f64;
    let s2 = rss / df;
    let se: Vec<f64> = (0..p).map(|j| (s2 * inv[j][j]).sqrt()).collect();
    let t: Vec<f64> = beta.iter().zip(&se).map(|(b, s)| b / s).collect();
    let pv = t.iter().map(|&t| student_t_two_sided(t, df)).collect();
    NormalEquationsFit {
        coefficients: beta,
        std_errors: se,
        t_values: t,
        p_values: pv,
    }
}

/// Lanczos log-gamma (g = 7, nine coefficients).
pub fn ln_gamma(x: f64) -> f64 {
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return (std::f64::consts::PI / (std::f64::consts::PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + 7.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Two-sided Student-t p-value by composite Simpson integration of the density.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    let log_norm = ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
    let density = |x: f64| (log_norm - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp();
    let b = t.abs();
    if b == 0.0 {
        return 1.0;
    }
    let mut panels = ((b / 5e-4).ceil() as usize).max(2000);
    panels += panels % 2;
    let h = b / panels as f64;
    let mut s = density(0.0) + density(b);
    for i in 1..panels {
        s += density(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    (1.0 - 2.0 * s * h / 3.0).clamp(0.0, 1.0)
}

/// Box-Muller standard normal draw.
pub fn normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

// ---------------------------------------------------------------------------
// topics

/// A corpus drawn from known topics: each topic is uniform over its own
/// disjoint block of `words_per_topic` words. Every document leans on one
/// topic with weight `lean` and spreads the rest evenly.
pub struct PlantedCorpus {
    pub words: Vec<String>,
    pub topics: Vec<Vec<f64>>,
    pub docs: Vec<Vec<usize>>,
}

pub fn planted_corpus(
    rng: &mut impl Rng,
    k: usize,
    words_per_topic: usize,
    n_docs: usize,
    doc_len: usize,
    lean: f64,
) -> PlantedCorpus {
    let v = k * words_per_topic;
    let words: Vec<String> = (0..v).map(|i| format!("w{i:03}")).collect();
    let topics: Vec<Vec<f64>> = (0..k)
        .map(|t| {
            (0..v)
                .map(|w| {
                    if w / words_per_topic == t {
                        1.0 / words_per_topic as f64
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let docs = (0..n_docs)
        .map(|_| {
            let main = rng.random_range(0..k);
            (0..doc_len)
                .map(|_| {
                    let t = if rng.random_bool(lean) {
                        main
                    } else {
                        rng.random_range(0..k)
                    };
                    t * words_per_topic + rng.random_range(0..words_per_topic)
                })
                .collect()
        })
        .collect();
    PlantedCorpus { words, topics, docs }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Best one-to-one matching of recovered to planted rows by mean cosine;
/// returns the per-topic cosines under that matching.
pub fn matched_cosines(recovered: &[Vec<f64>], planted: &[Vec<f64>]) -> Vec<f64> {
    fn perms(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in perms(n - 1) {
            for i in 0..=p.len() {
                let mut q = p.clone();
                q.insert(i, n - 1);
                out.push(q);
            }
        }
        out
    }
    perms(planted.len())
        .into_iter()
        .map(|p| {
            p.iter()
                .enumerate()
                .map(|(i, &j)| cosine(&recovered[j], &planted[i]))
                .collect::<Vec<_>>()
        })
        .max_by(|a, b| a.iter().sum::<f64>().total_cmp(&b.iter().sum::<f64>()))
        .unwrap()
}
