//! One PASS/FAIL line per acceptance criterion. Runs without network access.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use nbclaims::claims::{label_corpus_string, label_listing, match_field, resolve_claim, Field, Method};
use nbclaims::evaluation::evaluate_pairs;
use nbclaims::gazetteer::{Gazetteer, NormalizationTable};
use nbclaims::geo::{distances, peripheral_flags, social_centers, BoundarySet, ClaimPoint, DistanceMode};
use nbclaims::llm::parse_response;
use nbclaims::regression::fit_ols;
use nbclaims::topics::{fit_lda, LdaParams, TokenizedDoc, Vocabulary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_time(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:.2?}, limit {limit:?}"))
}

fn matcher_oracle() -> Check {
    let text = fs::read_to_string(fixture("gazetteer20.txt")).unwrap();
    let gaz = Gazetteer::parse(&text).map_err(|e| e.to_string())?;
    ensure(gaz.len() == 20, || {
        format!("fixture gazetteer has {} entries", gaz.len())
    })?;
    let scan = ScanGazetteer::parse(&text);
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let listings: Vec<_> = (0..1000).map(|i| random_listing(&mut rng, &scan, i)).collect();

    let start = Instant::now();
    let labels = label_corpus_string(&listings, &gaz);
    let elapsed = start.elapsed();

    let mut claimed = 0;
    for (l, label) in listings.iter().zip(&labels) {
        let expected = scan.label(l);
        ensure(label.claim == expected, || {
            format!(
                "{}: got {:?}, oracle {:?} (title {:?}, body {:?}, field {:?})",
                l.id(),
                label.claim,
                expected,
                l.cleaned_title,
                l.cleaned_body,
                l.raw.neighborhood_field
            )
        })?;
        claimed += expected.is_some() as usize;
    }
    within_time(elapsed, Duration::from_secs(5))?;
    Ok(format!("1000/1000 identical, {claimed} with a claim, {elapsed:.2?}"))
}

fn cascade_table() -> Check {
    // M = names a neighborhood, N = text without one, E = empty
    #[rustfmt::skip]
    const TABLE: [(&str, Option<&str>); 27] = [
        ("MMM", Some("title")), ("MMN", Some("title")), ("MME", Some("title")),
        ("MNM", Some("title")), ("MNN", Some("title")), ("MNE", Some("title")),
        ("MEM", Some("title")), ("MEN", Some("title")), ("MEE", Some("title")),
        ("NMM", Some("body")), ("NMN", Some("body")), ("NME", Some("body")),
        ("NNM", Some("neighborhood_field")), ("NNN", None), ("NNE", None),
        ("NEM", Some("neighborhood_field")), ("NEN", None), ("NEE", None),
        ("EMM", Some("body")), ("EMN", Some("body")), ("EME", Some("body")),
        ("ENM", Some("neighborhood_field")), ("ENN", None), ("ENE", None),
        ("EEM", Some("neighborhood_field")), ("EEN", None), ("EEE", None),
    ];
    let gaz = Gazetteer::parse(&fs::read_to_string(fixture("gazetteer20.txt")).unwrap()).map_err(|e| e.to_string())?;
    let claim_for = |field: &str| match field {
        "title" => "uptown",
        "body" => "pilsen",
        _ => "bucktown",
    };
    let text = |code: u8, name: &str| match code {
        b'M' => format!("Renovated unit in {}", name.to_uppercase()),
        b'N' => "Renovated unit, great light".to_string(),
        _ => String::new(),
    };
    let mut ok = 0;
    for (code, expected) in TABLE {
        let c = code.as_bytes();
        let l = listing(
            code,
            &text(c[0], "uptown"),
            &text(c[1], "pilsen"),
            Some(&text(c[2], "bucktown")),
        );
        let label = label_listing(&l, &gaz);
        let direct = resolve_claim(
            code,
            &match_field(&l.cleaned_title, Field::Title, &gaz),
            &match_field(&l.cleaned_body, Field::Body, &gaz),
            &match_field(
                l.raw.neighborhood_field.as_deref().unwrap(),
                Field::NeighborhoodField,
                &gaz,
            ),
            Method::StringMatch,
        );
        let got_field = label.source_field.map(|f| f.as_str());
        ensure(got_field == expected, || {
            format!("{code}: source {got_field:?}, expected {expected:?}")
        })?;
        ensure(label.claim.as_deref() == expected.map(claim_for), || {
            format!("{code}: claim {:?}", label.claim)
        })?;
        ensure(label == direct, || {
            format!("{code}: label_listing and resolve_claim disagree")
        })?;
        ok += 1;
    }
    Ok(format!("{ok}/27 rows"))
}

fn llm_transcript() -> Check {
    let gaz = Gazetteer::chicago();
    let table = NormalizationTable::chicago(&gaz).map_err(|e| e.to_string())?;
    let text = fs::read_to_string(fixture("llm_transcript.jsonl")).unwrap();
    let mut n = 0;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let raw = v["raw"].as_str().unwrap();
        let expected = v["expected"].as_str().unwrap();
        let got = parse_response(raw, &table, &gaz);
        let got = got.label.as_deref().unwrap_or(nbclaims::UNKNOWN);
        ensure(got == expected, || {
            format!("{raw:?}: got {got:?}, expected {expected:?}")
        })?;
        n += 1;
    }
    ensure(n >= 30, || format!("only {n} recorded responses"))?;
    Ok(format!("{n}/{n} responses"))
}

fn evaluation_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let mut dashed = 0;
    for set in 0..500 {
        let pairs = random_pairs(&mut rng);
        let refs: Vec<(&str, &str)> = pairs.iter().map(|(g, p)| (g.as_str(), p.as_str())).collect();
        let report = evaluate_pairs(&refs);
        let oracle = confusion_scores(&pairs);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
        let checks = [
            ("accuracy", report.accuracy, oracle.accuracy),
            ("macro precision", report.macro_avg.precision, oracle.macro_p),
            ("macro recall", report.macro_avg.recall, oracle.macro_r),
            ("macro F1", report.macro_avg.f1, oracle.macro_f1),
            ("weighted precision", report.weighted_avg.precision, oracle.weighted_p),
            ("weighted recall", report.weighted_avg.recall, oracle.weighted_r),
            ("weighted F1", report.weighted_avg.f1, oracle.weighted_f1),
        ];
        for (name, got, want) in checks {
            ensure(close(got, want), || format!("set {set}: {name} {got} vs oracle {want}"))?;
        }
        ensure(report.rows.len() == oracle.classes.len(), || {
            format!("set {set}: class count differs")
        })?;
        for row in &report.rows {
            let o = &oracle.classes[&row.class];
            ensure(row.support == o.support, || {
                format!("set {set}: support of {}", row.class)
            })?;
            ensure(row.precision.is_none() == o.precision.is_none(), || {
                format!("set {set}: dash for {}", row.class)
            })?;
            if let (Some(a), Some(b)) = (row.precision, o.precision) {
                ensure(close(a, b), || format!("set {set}: precision of {}", row.class))?;
            }
            ensure(close(row.recall, o.recall) && close(row.f1, o.f1), || {
                format!("set {set}: recall/F1 of {}", row.class)
            })?;
            dashed += row.precision.is_none() as usize;
        }
    }
    ensure(dashed > 0, || "no class without predictions was generated".into())?;
    Ok(format!("500/500 sets within 1e-12, {dashed} dashed classes"))
}

fn geospatial() -> Check {
    let mut points = Vec::new();
    let mut rdr = csv::Reader::from_path(fixture("geo_city/points.csv")).unwrap();
    for rec in rdr.records() {
        let r = rec.unwrap();
        points.push(ClaimPoint {
            listing_id: r[0].to_string(),
            neighborhood: r[1].to_string(),
            lat: r[2].parse().unwrap(),
            lon: r[3].parse().unwrap(),
        });
    }
    ensure(points.len() == 300, || format!("{} points", points.len()))?;
    let centers = social_centers(&points);
    ensure(centers.len() == 8, || format!("{} centers", centers.len()))?;

    let mut rdr = csv::Reader::from_path(fixture("geo_city/centroids.csv")).unwrap();
    let expected: BTreeMap<String, (f64, f64, usize)> = rdr
        .records()
        .map(|r| {
            let r = r.unwrap();
            (
                r[0].to_string(),
                (r[1].parse().unwrap(), r[2].parse().unwrap(), r[3].parse().unwrap()),
            )
        })
        .collect();
    for c in &centers {
        let (lat, lon, n) = expected[&c.neighborhood];
        ensure(c.claim_count == n, || {
            format!("{}: count {}", c.neighborhood, c.claim_count)
        })?;
        ensure((c.lat - lat).abs() <= 1e-9 && (c.lon - lon).abs() <= 1e-9, || {
            format!("{}: center ({}, {}) vs ({lat}, {lon})", c.neighborhood, c.lat, c.lon)
        })?;
    }

    let mut records = distances(&points, &centers, DistanceMode::GreatCircle).map_err(|e| e.to_string())?;
    peripheral_flags(&mut records, 0.2, 5);
    let mut groups: BTreeMap<&str, Vec<&nbclaims::geo::DistanceRecord>> = BTreeMap::new();
    for r in &records {
        groups.entry(r.neighborhood.as_str()).or_default().push(r);
    }
    for (name, g) in &groups {
        ensure(g.iter().all(|r| (0.0..=1.0).contains(&r.relative)), || {
            format!("{name}: relative out of range")
        })?;
        let min = g.iter().map(|r| r.relative).fold(f64::INFINITY, f64::min);
        let max = g.iter().map(|r| r.relative).fold(f64::NEG_INFINITY, f64::max);
        ensure(min == 0.0 && max == 1.0, || {
            format!("{name}: relative spans [{min}, {max}]")
        })?;
        let n = g.len();
        let want = if n >= 5 {
            (n as f64 * 0.2 - 1e-9).ceil() as usize
        } else {
            0
        };
        let flagged: Vec<_> = g.iter().filter(|r| r.peripheral).collect();
        ensure(flagged.len() == want, || {
            format!("{name}: {} peripheral of {n}, expected {want}", flagged.len())
        })?;
        let cutoff = flagged.iter().map(|r| r.raw).fold(f64::INFINITY, f64::min);
        ensure(g.iter().filter(|r| !r.peripheral).all(|r| r.raw <= cutoff), || {
            format!("{name}: a nearer claim was flagged")
        })?;
    }

    let text = fs::read_to_string(fixture("geo_city/boundaries.geojson")).unwrap();
    let set = BoundarySet::from_geojson(&text, "grid", "name").map_err(|e| e.to_string())?;
    let raw = read_geojson_polygons(&text, "name");
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut inside = 0;
    for _ in 0..1000 {
        let lat = rng.random_range(41.795..41.845);
        let lon = rng.random_range(-87.705..-87.615);
        let oracle: Vec<&str> = raw
            .iter()
            .filter(|(_, polys)| polys.iter().any(|p| polygon_contains(p, lat, lon)))
            .map(|(n, _)| n.as_str())
            .collect();
        for (name, _) in &raw {
            let got = set.region(name).unwrap().contains(lat, lon);
            ensure(got == oracle.contains(&name.as_str()), || {
                format!("({lat}, {lon}) in {name}: {got}")
            })?;
        }
        ensure(set.assign(lat, lon) == oracle.first().copied(), || {
            format!("({lat}, {lon}) assigned {:?}", set.assign(lat, lon))
        })?;
        inside += !oracle.is_empty() as usize;
    }
    Ok(format!(
        "8 centers within 1e-9, peripheral counts exact, 1000 points agree ({inside} inside)"
    ))
}

fn lda() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let planted = planted_corpus(&mut rng, 3, 12, 500, 60, 0.8);
    let vocab = Vocabulary::new(planted.words.clone());
    let docs: Vec<TokenizedDoc> = planted
        .docs
        .iter()
        .enumerate()
        .map(|(i, t)| TokenizedDoc {
            listing_id: format!("d{i}"),
            tokens: t.clone(),
        })
        .collect();
    let params = LdaParams {
        k: 3,
        alpha: 0.1,
        eta: 0.01,
        iterations: 100,
        seed: 42,
    };

    let start = Instant::now();
    let (model, _) = fit_lda(&docs, &vocab, params).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();

    for (what, rows) in [("phi", &model.phi), ("theta", &model.theta)] {
        for (i, row) in rows.iter().enumerate() {
            let s: f64 = row.iter().sum();
            ensure((s - 1.0).abs() <= 1e-9 && row.iter().all(|&x| x >= 0.0), || {
                format!("{what} row {i} sums to {s}")
            })?;
        }
    }
    let (again, _) = fit_lda(&docs, &vocab, params).map_err(|e| e.to_string())?;
    ensure(model == again, || "same seed gave a different model".into())?;
    let cos = matched_cosines(&model.phi, &planted.topics);
    ensure(cos.iter().all(|&c| c > 0.8), || format!("matched cosines {cos:?}"))?;
    within_time(elapsed, Duration::from_secs(30))?;
    let shown: Vec<String> = cos.iter().map(|c| format!("{c:.3}")).collect();
    Ok(format!(
        "rows sum to 1, bit-exact rerun, cosines [{}], {elapsed:.2?}",
        shown.join(", ")
    ))
}

fn random_design(rng: &mut impl Rng, n: usize, p: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let mut row = vec![1.0];
            row.extend((1..p).map(|j| normal(rng) * (1.0 + j as f64)));
            row
        })
        .collect()
}

fn residual_orthogonal(x: &[Vec<f64>], y: &[f64], beta: &[f64]) -> Result<(), String> {
    let resid: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(r, yi)| yi - r.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    for j in 0..beta.len() {
        let dot: f64 = x.iter().zip(&resid).map(|(r, e)| r[j] * e).sum();
        ensure(dot.abs() <= 1e-8, || format!("column {j}: X'r = {dot:e}"))?;
    }
    Ok(())
}

fn ols() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut fits = 0;
    for case in 0..10 {
        let (n, p) = (rng.random_range(10..80), rng.random_range(2..7));
        let x = random_design(&mut rng, n, p);
        let beta: Vec<f64> = (0..p).map(|_| rng.random_range(-5.0..5.0)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|r| r.iter().zip(&beta).map(|(a, b)| a * b).sum())
            .collect();
        let cols: Vec<String> = (0..p).map(|j| format!("x{j}")).collect();
        let fit = fit_ols(&cols, &x, &y).map_err(|e| e.to_string())?;
        for (got, want) in fit.coefficients.iter().zip(&beta) {
            ensure((got - want).abs() <= 1e-10, || {
                format!("noiseless case {case}: {got} vs {want}")
            })?;
        }
        residual_orthogonal(&x, &y, &fit.coefficients)?;
        fits += 1;
    }
    for case in 0..40 {
        let (n, p) = (rng.random_range(12..120), rng.random_range(2..8));
        let x = random_design(&mut rng, n, p);
        let beta: Vec<f64> = (0..p).map(|_| rng.random_range(-2.0..2.0)).collect();
        let noise = rng.random_range(0.1..3.0);
        let y: Vec<f64> = x
            .iter()
            .map(|r| r.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() + noise * normal(&mut rng))
            .collect();
        let cols: Vec<String> = (0..p).map(|j| format!("x{j}")).collect();
        let fit = fit_ols(&cols, &x, &y).map_err(|e| e.to_string())?;
        let oracle = normal_equations(&x, &y);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-8 * b.abs().max(1.0);
        for j in 0..p {
            let pairs = [
                ("coef", fit.coefficients[j], oracle.coefficients[j]),
                ("se", fit.std_errors[j], oracle.std_errors[j]),
                ("t", fit.t_values[j], oracle.t_values[j]),
                ("p", fit.p_values[j], oracle.p_values[j]),
            ];
            for (what, got, want) in pairs {
                ensure(close(got, want), || {
                    format!("case {case} x{j} {what}: {got} vs oracle {want}")
                })?;
            }
        }
        residual_orthogonal(&x, &y, &fit.coefficients)?;
        fits += 1;
    }
    Ok(format!(
        "{fits} fits: 10 noiseless exact, 40 match the oracle within 1e-8, residuals orthogonal"
    ))
}

fn end_to_end() -> Check {
    let city = fixture("synthetic_city");
    let out = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_nbclaims"))
        .args(["run-all", "--config"])
        .arg(city.join("config.txt"))
        .arg("--out")
        .arg(out.path())
        .arg("--offline")
        .output()
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(status.status.success(), || {
        format!("run-all failed: {}", String::from_utf8_lossy(&status.stderr))
    })?;

    let golden = city.join("golden");
    let mut compared = 0;
    let mut names: Vec<_> = fs::read_dir(&golden).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    for name in &names {
        if name == "llm_requests.jsonl" {
            continue;
        }
        let want = fs::read(golden.join(name)).unwrap();
        let got = fs::read(out.path().join(name)).map_err(|e| format!("{}: {e}", name.to_string_lossy()))?;
        ensure(got == want, || {
            format!("{} differs from golden", name.to_string_lossy())
        })?;
        compared += 1;
    }
    ensure(out.path().join("manifest.json").exists(), || "no manifest".into())?;

    let laundering = laundering_check(out.path())?;
    let curve = generic_curve(out.path())?;
    within_time(elapsed, Duration::from_secs(60))?;
    Ok(format!(
        "{compared} files identical, {laundering}, {curve}, {elapsed:.2?}"
    ))
}

fn laundering_check(dir: &Path) -> Check {
    let mut rdr = csv::Reader::from_path(dir.join("representation_city.csv")).map_err(|e| e.to_string())?;
    for rec in rdr.records() {
        let r = rec.unwrap();
        if &r[0] == "lake view" {
            let ratio: f64 = r[4].parse().map_err(|_| "lake view ratio undefined".to_string())?;
            ensure(ratio > 1.0 && &r[6] == "true", || {
                format!("lake view ratio {ratio}, flagged {}", &r[6])
            })?;
            return Ok(format!("lake view claims/contained {ratio:.3} flagged"));
        }
    }
    Err("lake view missing from representation report".into())
}

fn generic_curve(dir: &Path) -> Check {
    let words = fs::read_to_string(dir.join("topic_words.csv")).map_err(|e| e.to_string())?;
    let topic = words
        .lines()
        .skip(1)
        .find(|l| l.contains("credit") && l.contains("lease"))
        .and_then(|l| l.split(',').next())
        .ok_or("no generic topic among the fitted topics")?
        .to_string();
    let mut rdr = csv::Reader::from_path(dir.join("decile_shares.csv")).map_err(|e| e.to_string())?;
    let header = rdr.headers().unwrap().clone();
    let col = header
        .iter()
        .position(|h| h == format!("topic_{topic}"))
        .ok_or("topic column missing")?;
    let means: Vec<f64> = rdr
        .records()
        .map(|r| r.unwrap())
        .filter(|r| &r[3] != "0")
        .map(|r| r[col].parse().unwrap())
        .collect();
    ensure(means.windows(2).all(|w| w[1] > w[0]), || {
        format!("generic topic shares by decile {means:?}")
    })?;
    Ok(format!(
        "generic topic rises {:.2} -> {:.2} over {} non-empty deciles",
        means[0],
        means[means.len() - 1],
        means.len()
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("matcher equals brute-force oracle on 1000 listings", matcher_oracle),
        ("claim cascade truth table", cascade_table),
        ("LLM response transcript parses to expected claims", llm_transcript),
        ("evaluation metrics equal confusion-matrix oracle", evaluation_oracle),
        ("synthetic-city geospatial checks", geospatial),
        ("topic model sums, determinism and planted recovery", lda),
        ("least squares against normal equations", ols),
        ("end-to-end synthetic city against golden outputs", end_to_end),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {} PASS: {name} ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} FAIL: {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
