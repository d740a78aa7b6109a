//! Boundary polygons, social centers, distance metrics, peripheral flags and
//! claim representation.
//!
//! Coordinates are decimal degrees. Polygons are stored `(lon, lat)` like
//! GeoJSON; listing locations are `(lat, lon)` like the input records.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;
use serde_json::{json, Value};

use crate::claims::ClaimLabel;
use crate::corpus::CleanListing;
use crate::error::{Error, Result};

/// Mean Earth radius in kilometers.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Great-circle distance in kilometers.
pub fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin()
}

/// How raw distances are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DistanceMode {
    /// Haversine kilometers.
    #[default]
    GreatCircle,
    /// Straight-line distance in degree space, `sqrt(dlat² + dlon²)`.
    DegreeEuclidean,
}

impl DistanceMode {
    pub fn distance(self, (lat1, lon1): (f64, f64), (lat2, lon2): (f64, f64)) -> f64 {
        match self {
            DistanceMode::GreatCircle => haversine_km(lat1, lon1, lat2, lon2),
            DistanceMode::DegreeEuclidean => (lat1 - lat2).hypot(lon1 - lon2),
        }
    }
}

impl FromStr for DistanceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "great-circle" => Ok(DistanceMode::GreatCircle),
            "degree-euclidean" => Ok(DistanceMode::DegreeEuclidean),
            other => Err(Error::Config(format!("unknown distance mode {other:?}"))),
        }
    }
}

impl fmt::Display for DistanceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistanceMode::GreatCircle => "great-circle",
            DistanceMode::DegreeEuclidean => "degree-euclidean",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Inside,
    OnBoundary,
    Outside,
}

/// Closed ring of `(lon, lat)` vertices; the last vertex repeats the first.
#[derive(Debug, Clone, PartialEq)]
pub struct Ring(Vec<(f64, f64)>);

impl Ring {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 4 {
            return Err(Error::Geometry(format!(
                "ring has {} vertices, need at least 4",
                points.len()
            )));
        }
        if points.first() != points.last() {
            return Err(Error::Geometry("ring is not closed".into()));
        }
        if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::Geometry("non-finite coordinate".into()));
        }
        Ok(Ring(points))
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.0
    }

    fn edges(&self) -> impl Iterator<Item = ((f64, f64), (f64, f64))> + '_ {
        self.0.windows(2).map(|w| (w[0], w[1]))
    }

    /// Shoelace area in square degrees.
    fn area(&self) -> f64 {
        self.edges()
            .map(|((x1, y1), (x2, y2))| x1 * y2 - x2 * y1)
            .sum::<f64>()
            .abs()
            / 2.0
    }

    /// Winding-number test; any point on an edge is reported as on the boundary.
    fn locate(&self, (px, py): (f64, f64)) -> Location {
        let mut winding = 0i32;
        for ((x1, y1), (x2, y2)) in self.edges() {
            let cross = (x2 - x1) * (py - y1) - (px - x1) * (y2 - y1);
            if cross == 0.0 && px >= x1.min(x2) && px <= x1.max(x2) && py >= y1.min(y2) && py <= y1.max(y2) {
                return Location::OnBoundary;
            }
            if y1 <= py {
                if y2 > py && cross > 0.0 {
                    winding += 1;
                }
            } else if y2 <= py && cross < 0.0 {
                winding -= 1;
            }
        }
        if winding != 0 {
            Location::Inside
        } else {
            Location::Outside
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    pub exterior: Ring,
    pub holes: Vec<Ring>,
}

impl Polygon {
    pub fn area(&self) -> f64 {
        (self.exterior.area() - self.holes.iter().map(Ring::area).sum::<f64>()).max(0.0)
    }

    pub fn locate(&self, p: (f64, f64)) -> Location {
        match self.exterior.locate(p) {
            Location::Outside => Location::Outside,
            Location::OnBoundary => Location::OnBoundary,
            Location::Inside => {
                for hole in &self.holes {
                    match hole.locate(p) {
                        Location::Inside => return Location::Outside,
                        Location::OnBoundary => return Location::OnBoundary,
                        Location::Outside => {}
                    }
                }
                Location::Inside
            }
        }
    }
}

/// One named area, possibly made of several polygons.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub name: String,
    pub polygons: Vec<Polygon>,
    area: f64,
    // (min_lon, min_lat, max_lon, max_lat)
    bbox: (f64, f64, f64, f64),
}

impl Region {
    pub fn new(name: impl Into<String>, polygons: Vec<Polygon>) -> Self {
        let area = polygons.iter().map(Polygon::area).sum();
        let mut bbox = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &(x, y) in polygons.iter().flat_map(|p| p.exterior.points()) {
            bbox = (bbox.0.min(x), bbox.1.min(y), bbox.2.max(x), bbox.3.max(y));
        }
        Region {
            name: name.into(),
            polygons,
            area,
            bbox,
        }
    }

    pub fn area(&self) -> f64 {
        self.area
    }

    /// Point given as `(lat, lon)`; boundary points count as inside.
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        let (x0, y0, x1, y1) = self.bbox;
        if lon < x0 || lon > x1 || lat < y0 || lat > y1 {
            return false;
        }
        self.polygons.iter().any(|p| p.locate((lon, lat)) != Location::Outside)
    }
}

/// A named set of neighborhood polygons from one source (city, Zillow, …).
#[derive(Debug, Clone)]
pub struct BoundarySet {
    pub source: String,
    regions: Vec<Region>,
    index: HashMap<String, usize>,
}

impl BoundarySet {
    /// Regions sharing a name are merged.
    pub fn new(source: impl Into<String>, regions: Vec<Region>) -> Self {
        let mut merged: BTreeMap<String, Vec<Polygon>> = BTreeMap::new();
        for r in regions {
            merged.entry(r.name).or_default().extend(r.polygons);
        }
        let regions: Vec<Region> = merged.into_iter().map(|(n, p)| Region::new(n, p)).collect();
        let index = regions.iter().enumerate().map(|(i, r)| (r.name.clone(), i)).collect();
        BoundarySet {
            source: source.into(),
            regions,
            index,
        }
    }

    /// Parse a GeoJSON FeatureCollection of Polygon / MultiPolygon features.
    /// Names come from `name_property` and are lowercased with whitespace collapsed.
    pub fn from_geojson(text: &str, source: impl Into<String>, name_property: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Geometry(e.to_string()))?;
        if value["type"] != "FeatureCollection" {
            return Err(Error::Geometry("expected a FeatureCollection".into()));
        }
        let features = value["features"]
            .as_array()
            .ok_or_else(|| Error::Geometry("FeatureCollection without features".into()))?;
        let mut regions = Vec::new();
        for (i, feature) in features.iter().enumerate() {
            let name = feature["properties"][name_property]
                .as_str()
                .ok_or_else(|| Error::Geometry(format!("feature {i} has no {name_property:?} property")))?;
            let name = crate::corpus::collapse_whitespace(&name.to_lowercase());
            let geometry = &feature["geometry"];
            let coords = &geometry["coordinates"];
            let polygons = match geometry["type"].as_str() {
                Some("Polygon") => vec![parse_polygon(coords)?],
                Some("MultiPolygon") => coords
                    .as_array()
                    .ok_or_else(|| Error::Geometry(format!("{name}: bad MultiPolygon")))?
                    .iter()
                    .map(parse_polygon)
                    .collect::<Result<_>>()?,
                other => return Err(Error::Geometry(format!("{name}: unsupported geometry {other:?}"))),
            }
            .into_iter()
            .collect();
            regions.push(Region::new(name, polygons));
        }
        Ok(Self::new(source, regions))
    }

    pub fn load(path: &Path, source: impl Into<String>, name_property: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_geojson(&text, source, name_property).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn region(&self, name: &str) -> Option<&Region> {
        self.index.get(name).map(|&i| &self.regions[i])
    }

    /// Rename regions, e.g. to gazetteer canonical names. Regions that map to
    /// the same name are merged.
    pub fn renamed(self, rename: impl Fn(&str) -> Option<String>) -> Self {
        let regions = self
            .regions
            .into_iter()
            .map(|r| Region::new(rename(&r.name).unwrap_or(r.name), r.polygons))
            .collect();
        Self::new(self.source, regions)
    }

    /// Name of the region containing `(lat, lon)`. Boundary points count as
    /// inside; if several regions qualify the smallest by area wins.
    pub fn assign(&self, lat: f64, lon: f64) -> Option<&str> {
        self.regions
            .iter()
            .filter(|r| r.contains(lat, lon))
            .min_by(|a, b| a.area.total_cmp(&b.area).then_with(|| a.name.cmp(&b.name)))
            .map(|r| r.name.as_str())
    }
}

fn parse_ring(v: &Value) -> Result<Ring> {
    let pts = v
        .as_array()
        .ok_or_else(|| Error::Geometry("ring is not an array".into()))?
        .iter()
        .map(
            |p| match (p.get(0).and_then(Value::as_f64), p.get(1).and_then(Value::as_f64)) {
                (Some(x), Some(y)) => Ok((x, y)),
                _ => Err(Error::Geometry("bad position".into())),
            },
        )
        .collect::<Result<Vec<_>>>()?;
    Ring::new(pts)
}

fn parse_polygon(v: &Value) -> Result<Polygon> {
    let rings = v
        .as_array()
        .filter(|r| !r.is_empty())
        .ok_or_else(|| Error::Geometry("polygon without rings".into()))?;
    Ok(Polygon {
        exterior: parse_ring(&rings[0])?,
        holes: rings[1..].iter().map(parse_ring).collect::<Result<_>>()?,
    })
}

/// A located listing with a known claim.
#[derive(Debug, Clone, PartialEq)]
pub struct ClaimPoint {
    pub listing_id: String,
    pub neighborhood: String,
    pub lat: f64,
    pub lon: f64,
}

/// Join labels to listing coordinates, dropping unknown claims and listings
/// without a location.
pub fn claim_points(labels: &[ClaimLabel], listings: &[CleanListing]) -> Vec<ClaimPoint> {
    let coords: HashMap<&str, (f64, f64)> = listings
        .iter()
        .filter_map(|l| l.raw.coordinates().map(|c| (l.id(), c)))
        .collect();
    labels
        .iter()
        .filter_map(|l| {
            let name = l.claim.as_ref()?;
            let &(lat, lon) = coords.get(l.listing_id.as_str())?;
            Some(ClaimPoint {
                listing_id: l.listing_id.clone(),
                neighborhood: name.clone(),
                lat,
                lon,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SocialCenter {
    pub neighborhood: String,
    pub lat: f64,
    pub lon: f64,
    pub claim_count: usize,
}

/// Arithmetic mean of claim coordinates per neighborhood, sorted by name.
pub fn social_centers(points: &[ClaimPoint]) -> Vec<SocialCenter> {
    let mut acc: BTreeMap<&str, (f64, f64, usize)> = BTreeMap::new();
    for p in points {
        let e = acc.entry(&p.neighborhood).or_insert((0.0, 0.0, 0));
        e.0 += p.lat;
        e.1 += p.lon;
        e.2 += 1;
    }
    acc.into_iter()
        .map(|(name, (lat, lon, n))| SocialCenter {
            neighborhood: name.to_string(),
            lat: lat / n as f64,
            lon: lon / n as f64,
            claim_count: n,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceRecord {
    pub listing_id: String,
    pub neighborhood: String,
    /// Kilometers, or degrees in [`DistanceMode::DegreeEuclidean`].
    pub raw: f64,
    pub relative: f64,
    pub z: f64,
    pub peripheral: bool,
}

/// Raw, min-max scaled and z-scored distance of each claim to its
/// neighborhood's social center. Degenerate groups (one listing, or all
/// distances equal) get relative = z = 0. Output is sorted by neighborhood,
/// then listing id; `peripheral` is left false.
pub fn distances(points: &[ClaimPoint], centers: &[SocialCenter], mode: DistanceMode) -> Result<Vec<DistanceRecord>> {
    let by_name: HashMap<&str, &SocialCenter> = centers.iter().map(|c| (c.neighborhood.as_str(), c)).collect();
    let mut groups: BTreeMap<&str, Vec<(&str, f64)>> = BTreeMap::new();
    for p in points {
        let c = by_name
            .get(p.neighborhood.as_str())
            .ok_or_else(|| Error::InvalidInput(format!("no social center for {:?}", p.neighborhood)))?;
        let raw = mode.distance((p.lat, p.lon), (c.lat, c.lon));
        groups.entry(&p.neighborhood).or_default().push((&p.listing_id, raw));
    }

    let mut out = Vec::with_capacity(points.len());
    for (name, mut group) in groups {
        group.sort_by(|a, b| a.0.cmp(b.0));
        let n = group.len() as f64;
        let min = group.iter().map(|g| g.1).fold(f64::INFINITY, f64::min);
        let max = group.iter().map(|g| g.1).fold(f64::NEG_INFINITY, f64::max);
        let mean = group.iter().map(|g| g.1).sum::<f64>() / n;
        let sd = (group.iter().map(|g| (g.1 - mean).powi(2)).sum::<f64>() / n).sqrt();
        for (id, raw) in group {
            out.push(DistanceRecord {
                listing_id: id.to_string(),
                neighborhood: name.to_string(),
                raw,
                relative: if max > min { (raw - min) / (max - min) } else { 0.0 },
                z: if sd > 0.0 { (raw - mean) / sd } else { 0.0 },
                peripheral: false,
            });
        }
    }
    Ok(out)
}

/// `ceil(fraction · n)`, treating products within 1e-9 of an integer as exact.
pub fn peripheral_count(n: usize, fraction: f64) -> usize {
    let x = fraction * n as f64;
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// Flag the `ceil(fraction · n)` furthest claims in each neighborhood with at
/// least `min_posts` claims. Ties at the cutoff go to the smaller listing id.
pub fn peripheral_flags(records: &mut [DistanceRecord], fraction: f64, min_posts: usize) {
    let mut groups: HashMap<String, Vec<usize>> = HashMap::new();
    for (i, r) in records.iter_mut().enumerate() {
        r.peripheral = false;
        groups.entry(r.neighborhood.clone()).or_default().push(i);
    }
    for (_, mut idx) in groups {
        if idx.len() < min_posts {
            continue;
        }
        idx.sort_by(|&a, &b| {
            records[b]
                .raw
                .total_cmp(&records[a].raw)
                .then_with(|| records[a].listing_id.cmp(&records[b].listing_id))
        });
        for &i in idx.iter().take(peripheral_count(idx.len(), fraction)) {
            records[i].peripheral = true;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepresentationRow {
    pub neighborhood: String,
    /// Located listings claiming this neighborhood.
    pub claims: usize,
    /// Located listings inside the polygon, whatever they claim; `None` when
    /// the neighborhood has no polygon in this boundary set.
    pub contained: Option<usize>,
    /// Claims whose location lies inside the neighborhood's own polygon.
    pub claims_inside: Option<usize>,
    /// `claims / contained`; `None` when undefined.
    pub ratio: Option<f64>,
    /// Whether the social center lies inside the polygon.
    pub center_inside: Option<bool>,
    /// Set when the neighborhood has no polygon or its social center falls outside it.
    pub flagged: bool,
}

/// Claims per neighborhood against listings geometrically contained in its
/// polygon. `located` holds every listing with coordinates together with its
/// claim (`None` = unknown). Rows are sorted by ratio, highest first, with
/// undefined ratios last.
pub fn representation(located: &[(Option<&str>, f64, f64)], boundaries: &BoundarySet) -> Vec<RepresentationRow> {
    let mut claims: BTreeMap<&str, usize> = BTreeMap::new();
    let mut contained: HashMap<&str, usize> = HashMap::new();
    let mut inside: HashMap<&str, usize> = HashMap::new();
    let mut sums: HashMap<&str, (f64, f64)> = HashMap::new();
    for &(claim, lat, lon) in located {
        let home = boundaries.assign(lat, lon);
        if let Some(h) = home {
            *contained.entry(h).or_default() += 1;
        }
        if let Some(c) = claim {
            *claims.entry(c).or_default() += 1;
            let s = sums.entry(c).or_insert((0.0, 0.0));
            s.0 += lat;
            s.1 += lon;
            if boundaries.region(c).is_some_and(|r| r.contains(lat, lon)) {
                *inside.entry(c).or_default() += 1;
            }
        }
    }
    for r in boundaries.regions() {
        claims.entry(&r.name).or_default();
    }

    let mut rows: Vec<RepresentationRow> = claims
        .into_iter()
        .map(|(name, n_claims)| {
            let region = boundaries.region(name);
            let n_contained = region.map(|_| contained.get(name).copied().unwrap_or(0));
            let center_inside = match (region, sums.get(name)) {
                (Some(r), Some(&(lat, lon))) if n_claims > 0 => {
                    Some(r.contains(lat / n_claims as f64, lon / n_claims as f64))
                }
                _ => None,
            };
            RepresentationRow {
                neighborhood: name.to_string(),
                claims: n_claims,
                contained: n_contained,
                claims_inside: region.map(|_| inside.get(name).copied().unwrap_or(0)),
                ratio: n_contained.filter(|&c| c > 0).map(|c| n_claims as f64 / c as f64),
                center_inside,
                flagged: region.is_none() || center_inside == Some(false),
            }
        })
        .collect();
    rows.sort_by(|a, b| match (a.ratio, b.ratio) {
        (Some(x), Some(y)) => y.total_cmp(&x).then_with(|| a.neighborhood.cmp(&b.neighborhood)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.neighborhood.cmp(&b.neighborhood),
    });
    rows
}

pub fn distances_to_csv(records: &[DistanceRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["listing_id", "neighborhood", "raw", "relative", "z", "peripheral"])
        .unwrap();
    for r in records {
        w.write_record([
            r.listing_id.clone(),
            r.neighborhood.clone(),
            r.raw.to_string(),
            r.relative.to_string(),
            r.z.to_string(),
            r.peripheral.to_string(),
        ])
        .unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

pub fn read_distances_csv(path: &Path) -> Result<Vec<DistanceRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut out = Vec::new();
    for record in reader.records() {
        let r = record.map_err(|e| Error::format(path, e.to_string()))?;
        let num = |i: usize| -> Result<f64> {
            r.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::format(path, format!("bad number in column {i}")))
        };
        out.push(DistanceRecord {
            listing_id: r.get(0).unwrap_or_default().to_string(),
            neighborhood: r.get(1).unwrap_or_default().to_string(),
            raw: num(2)?,
            relative: num(3)?,
            z: num(4)?,
            peripheral: r.get(5) == Some("true"),
        });
    }
    Ok(out)
}

pub fn representation_to_csv(rows: &[RepresentationRow]) -> String {
    let opt = |v: Option<String>| v.unwrap_or_default();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "neighborhood",
        "claims",
        "contained",
        "claims_inside",
        "ratio",
        "center_inside",
        "flagged",
    ])
    .unwrap();
    for r in rows {
        w.write_record([
            r.neighborhood.clone(),
            r.claims.to_string(),
            opt(r.contained.map(|v| v.to_string())),
            opt(r.claims_inside.map(|v| v.to_string())),
            opt(r.ratio.map(|v| v.to_string())),
            opt(r.center_inside.map(|v| v.to_string())),
            r.flagged.to_string(),
        ])
        .unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

/// Social centers as GeoJSON points.
pub fn centers_to_geojson(centers: &[SocialCenter]) -> Value {
    json!({
        "type": "FeatureCollection",
        "features": centers.iter().map(|c| json!({
            "type": "Feature",
            "properties": {"neighborhood": c.neighborhood, "claim_count": c.claim_count, "kind": "social_center"},
            "geometry": {"type": "Point", "coordinates": [c.lon, c.lat]},
        })).collect::<Vec<_>>(),
    })
}

pub fn region_to_geojson(region: &Region, source: &str, group: &str) -> Value {
    let rings = |p: &Polygon| {
        std::iter::once(&p.exterior)
            .chain(&p.holes)
            .map(|r| r.points().iter().map(|&(x, y)| json!([x, y])).collect::<Vec<_>>())
            .collect::<Vec<_>>()
    };
    json!({
        "type": "Feature",
        "properties": {"group": group, "kind": "boundary", "source": source, "neighborhood": region.name},
        "geometry": {"type": "MultiPolygon", "coordinates": region.polygons.iter().map(rings).collect::<Vec<_>>()},
    })
}
