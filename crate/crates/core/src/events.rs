//! Event aggregation: review embeddings of each event are clustered spectrally, each cluster
//! is averaged, and the stacked cluster means of all events in a sector are averaged together
//! with their title embeddings into one unified feature of dimension `(b + 1) · d`.
//!
//! Embedding file (comma-separated, header `event_id,sector,kind,v0,...,v{d-1}`): `kind` is
//! `title` or `review`; `d` is taken from the header. Only the first `max_reviews` review
//! rows of an event are kept. Event metadata file: `event_id,sector,date,start_hour`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SectorId;
use crate::rng::{rng_from, stream};

pub const DEFAULT_GAMMA: f64 = 1.0;
pub const DEFAULT_CLUSTERS: usize = 3;
pub const DEFAULT_MAX_REVIEWS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub event_id: String,
    pub venue_sector: SectorId,
    pub title_embedding: Vec<f64>,
    pub review_embeddings: Vec<Vec<f64>>,
    pub date: Option<String>,
    pub start_hour: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorFeature {
    pub sector: SectorId,
    pub unified: Vec<f64>,
}

fn squared_distance(a: &[f64], c: &[f64]) -> f64 {
    a.iter().zip(c).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Gaussian kernel `exp(−γ‖a − c‖²)`.
pub fn rbf_similarity(a: &[f64], c: &[f64], gamma: f64) -> Result<f64> {
    if a.len() != c.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), actual: c.len() });
    }
    if !(gamma > 0.0) {
        return Err(Error::domain(format!("gamma must be positive, got {gamma}")));
    }
    Ok((-gamma * squared_distance(a, c)).exp())
}

fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    let d = points.first().map_or(0, Vec::len);
    if let Some(p) = points.iter().find(|p| p.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, actual: p.len() });
    }
    Ok(d)
}

/// Complete RBF similarity matrix with zero diagonal.
pub fn affinity(points: &[Vec<f64>], gamma: f64) -> Result<DMatrix<f64>> {
    check_points(points)?;
    let n = points.len();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let s = rbf_similarity(&points[i], &points[j], gamma)?;
            w[(i, j)] = s;
            w[(j, i)] = s;
        }
    }
    Ok(w)
}

/// `I − D^{-1/2} W D^{-1/2}`; isolated vertices get a zero row of the normalised part.
pub fn normalized_laplacian(points: &[Vec<f64>], gamma: f64) -> Result<DMatrix<f64>> {
    let w = affinity(points, gamma)?;
    let n = w.nrows();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = w.row(i).sum();
            if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 }
        })
        .collect();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - inv_sqrt[i] * w[(i, j)] * inv_sqrt[j]
    }))
}

/// Spectral clustering into `b` clusters: symmetric normalised Laplacian of the complete RBF
/// graph, the `b` eigenvectors of smallest eigenvalue, row normalisation, seeded k-means.
///
/// Labels are `0..b`, numbered by ascending first coordinate of each cluster's mean in the
/// original embedding space; every label is used.
pub fn spectral_cluster(points: &[Vec<f64>], b: usize, gamma: f64, seed: u64) -> Result<Vec<usize>> {
    if b == 0 {
        return Err(Error::domain("cluster count must be at least 1"));
    }
    if points.len() < b {
        return Err(Error::domain(format!("{} points cannot form {b} clusters", points.len())));
    }
    check_points(points)?;
    if b == 1 {
        return Ok(vec![0; points.len()]);
    }
    let lap = normalized_laplacian(points, gamma)?;
    let n = lap.nrows();
    let eig = SymmetricEigen::new(lap);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &c| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[c]).then(a.cmp(&c)));
    let embedded: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let row: Vec<f64> = order[..b].iter().map(|&k| eig.eigenvectors[(i, k)]).collect();
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 { row.iter().map(|x| x / norm).collect() } else { row }
        })
        .collect();
    let labels = kmeans_nonempty(&embedded, b, seed);
    Ok(canonical_labels(points, &labels, b))
}

fn canonical_labels(points: &[Vec<f64>], labels: &[usize], b: usize) -> Vec<usize> {
    let mut keys: Vec<(f64, usize, usize)> = (0..b)
        .map(|a| {
            let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == a).collect();
            let first = members.iter().map(|&i| points[i][0]).sum::<f64>() / members.len() as f64;
            (first, members[0], a)
        })
        .collect();
    keys.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    let mut rename = vec![0; b];
    for (new, &(_, _, old)) in keys.iter().enumerate() {
        rename[old] = new;
    }
    labels.iter().map(|&l| rename[l]).collect()
}

const KMEANS_RESTARTS: u64 = 10;
const KMEANS_ITERATIONS: usize = 100;
const EMPTY_CLUSTER_RETRIES: u64 = 10;

/// k-means that never returns an empty cluster: retries with the next seed, then moves the
/// point farthest from the centroid of the largest cluster into each empty one.
fn kmeans_nonempty(points: &[Vec<f64>], k: usize, seed: u64) -> Vec<usize> {
    let mut labels = Vec::new();
    for attempt in 0..EMPTY_CLUSTER_RETRIES {
        labels = kmeans(points, k, seed.wrapping_add(attempt));
        if (0..k).all(|a| labels.contains(&a)) {
            return labels;
        }
    }
    while let Some(empty) = (0..k).find(|a| !labels.contains(a)) {
        let mut sizes = vec![0usize; k];
        labels.iter().for_each(|&l| sizes[l] += 1);
        let largest = (0..k).max_by_key(|&a| (sizes[a], std::cmp::Reverse(a))).expect("k >= 1");
        let centroid = mean_of(points, &labels, largest);
        let far = (0..points.len())
            .filter(|&i| labels[i] == largest)
            .max_by(|&i, &j| {
                squared_distance(&points[i], &centroid)
                    .total_cmp(&squared_distance(&points[j], &centroid))
                    .then(i.cmp(&j))
            })
            .expect("largest cluster is non-empty");
        labels[far] = empty;
    }
    labels
}

fn mean_of(points: &[Vec<f64>], labels: &[usize], a: usize) -> Vec<f64> {
    let d = points[0].len();
    let mut sum = vec![0.0; d];
    let mut count = 0usize;
    for (p, _) in points.iter().zip(labels).filter(|(_, &l)| l == a) {
        sum.iter_mut().zip(p).for_each(|(s, x)| *s += x);
        count += 1;
    }
    sum.iter_mut().for_each(|s| *s /= count.max(1) as f64);
    sum
}

/// Best-of-restarts Lloyd iterations with k-means++ seeding. May return empty clusters.
fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Vec<usize> {
    let mut best: Option<(f64, Vec<usize>)> = None;
    for restart in 0..KMEANS_RESTARTS {
        let mut rng = rng_from(seed, &[stream::KMEANS, restart]);
        let mut centers = kmeans_pp(points, k, &mut rng);
        let mut labels = vec![usize::MAX; points.len()];
        for _ in 0..KMEANS_ITERATIONS {
            let mut changed = false;
            for (i, p) in points.iter().enumerate() {
                let nearest = nearest_center(p, &centers).0;
                if labels[i] != nearest {
                    labels[i] = nearest;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
            for (a, c) in centers.iter_mut().enumerate() {
                if labels.contains(&a) {
                    *c = mean_of(points, &labels, a);
                }
            }
        }
        let inertia: f64 = points.iter().map(|p| nearest_center(p, &centers).1).sum();
        if best.as_ref().is_none_or(|(b, _)| inertia < *b - 1e-12) {
            best = Some((inertia, labels));
        }
    }
    best.expect("at least one restart").1
}

fn nearest_center(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    centers
        .iter()
        .enumerate()
        .map(|(a, c)| (a, squared_distance(p, c)))
        .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc })
}

fn kmeans_pp<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    while centers.len() < k {
        let d2: Vec<f64> = points.iter().map(|p| nearest_center(p, &centers).1).collect();
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            d2.iter()
                .position(|&w| {
                    u -= w;
                    u <= 0.0
                })
                .unwrap_or(points.len() - 1)
        } else {
            rng.random_range(0..points.len())
        };
        centers.push(points[pick].clone());
    }
    centers
}

/// Stacks the mean of each label class, in label order: a `(b · d)`-vector.
pub fn cluster_average(points: &[Vec<f64>], labels: &[usize], b: usize) -> Result<Vec<f64>> {
    let d = check_points(points)?;
    if labels.len() != points.len() {
        return Err(Error::DimensionMismatch { expected: points.len(), actual: labels.len() });
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= b) {
        return Err(Error::domain(format!("label {l} outside 0..{b}")));
    }
    let mut out = Vec::with_capacity(b * d);
    for a in 0..b {
        if !labels.contains(&a) {
            return Err(Error::domain(format!("cluster {a} is empty")));
        }
        out.extend(mean_of(points, labels, a));
    }
    Ok(out)
}

/// Stacked cluster means `R_w` of one event.
pub fn event_representation(event: &EventRecord, b: usize, gamma: f64, seed: u64) -> Result<Vec<f64>> {
    let labels = spectral_cluster(&event.review_embeddings, b, gamma, seed)?;
    cluster_average(&event.review_embeddings, &labels, b)
}

/// `[mean title embedding ; mean R_w]` over the events of one sector; `None` without events.
pub fn sector_feature(events: &[EventRecord], b: usize, gamma: f64, seed: u64) -> Result<Option<SectorFeature>> {
    let Some(first) = events.first() else {
        return Ok(None);
    };
    let sector = first.venue_sector;
    let d = first.title_embedding.len();
    let mut title = vec![0.0; d];
    let mut stacked = vec![0.0; b * d];
    for e in events {
        if e.venue_sector != sector {
            return Err(Error::domain(format!(
                "event {} is in sector {}, expected {sector}",
                e.event_id, e.venue_sector
            )));
        }
        if e.title_embedding.len() != d {
            return Err(Error::DimensionMismatch { expected: d, actual: e.title_embedding.len() });
        }
        let r = event_representation(e, b, gamma, seed)?;
        if r.len() != b * d {
            return Err(Error::DimensionMismatch { expected: b * d, actual: r.len() });
        }
        title.iter_mut().zip(&e.title_embedding).for_each(|(s, x)| *s += x);
        stacked.iter_mut().zip(&r).for_each(|(s, x)| *s += x);
    }
    let count = events.len() as f64;
    let mut unified: Vec<f64> = title.into_iter().map(|x| x / count).collect();
    unified.extend(stacked.into_iter().map(|x| x / count));
    Ok(Some(SectorFeature { sector, unified }))
}

/// Feature key of the events held in `sector` on `date`; dataset rows refer to it.
pub fn feature_key(sector: SectorId, date: Option<&str>) -> String {
    match date {
        Some(d) => format!("{sector}@{d}"),
        None => sector.to_string(),
    }
}

/// One unified feature per (sector, date) group of events, keyed by [`feature_key`].
pub fn grouped_features(
    events: &[EventRecord],
    b: usize,
    gamma: f64,
    seed: u64,
) -> Result<BTreeMap<String, (SectorId, Vec<f64>)>> {
    let mut groups: BTreeMap<String, Vec<EventRecord>> = BTreeMap::new();
    for e in events {
        groups.entry(feature_key(e.venue_sector, e.date.as_deref())).or_default().push(e.clone());
    }
    let mut out = BTreeMap::new();
    for (key, group) in groups {
        if let Some(f) = sector_feature(&group, b, gamma, seed)? {
            out.insert(key, (f.sector, f.unified));
        }
    }
    Ok(out)
}

/// Writes the embedding file and the metadata file read by [`read_events`].
pub fn write_events<W: Write, M: Write>(events: &[EventRecord], embeddings: W, metadata: M) -> Result<()> {
    let d = events.first().map_or(0, |e| e.title_embedding.len());
    let mut wtr = csv::Writer::from_writer(embeddings);
    let mut header = vec!["event_id".to_string(), "sector".to_string(), "kind".to_string()];
    header.extend((0..d).map(|i| format!("v{i}")));
    wtr.write_record(&header)?;
    for e in events {
        let rows = std::iter::once(("title", &e.title_embedding)).chain(e.review_embeddings.iter().map(|r| ("review", r)));
        for (kind, v) in rows {
            if v.len() != d {
                return Err(Error::DimensionMismatch { expected: d, actual: v.len() });
            }
            let mut rec = vec![e.event_id.clone(), e.venue_sector.0.to_string(), kind.to_string()];
            rec.extend(v.iter().map(|x| format!("{x:?}")));
            wtr.write_record(&rec)?;
        }
    }
    wtr.flush()?;
    let mut meta = csv::Writer::from_writer(metadata);
    meta.write_record(["event_id", "sector", "date", "start_hour"])?;
    for e in events {
        if let (Some(date), Some(h)) = (&e.date, e.start_hour) {
            meta.write_record([e.event_id.clone(), e.venue_sector.0.to_string(), date.clone(), h.to_string()])?;
        }
    }
    meta.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct EventMeta {
    event_id: String,
    sector: u32,
    date: String,
    start_hour: u8,
}

/// Loads events from an embedding file and an optional metadata file.
pub fn read_events<R: Read, M: Read>(embeddings: R, metadata: Option<M>, max_reviews: usize) -> Result<Vec<EventRecord>> {
    let mut rdr = csv::Reader::from_reader(embeddings);
    let header = rdr.headers()?.clone();
    if header.len() < 4 || &header[0] != "event_id" || &header[1] != "sector" || &header[2] != "kind" {
        return Err(Error::parse(1, "expected header event_id,sector,kind,v0,..."));
    }
    let d = header.len() - 3;
    let mut events: BTreeMap<String, EventRecord> = BTreeMap::new();
    let mut order = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let id = rec[0].to_string();
        let sector = rec[1].trim().parse::<u32>().map_err(|e| Error::parse(line, e.to_string()))?;
        let v = (3..rec.len())
            .map(|i| rec[i].trim().parse::<f64>().map_err(|e| Error::parse(line, e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        if v.len() != d {
            return Err(Error::parse(line, format!("expected {d} values, got {}", v.len())));
        }
        let e = events.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            EventRecord {
                event_id: id.clone(),
                venue_sector: SectorId(sector),
                title_embedding: Vec::new(),
                review_embeddings: Vec::new(),
                date: None,
                start_hour: None,
            }
        });
        if e.venue_sector != SectorId(sector) {
            return Err(Error::parse(line, format!("event {id} listed in two sectors")));
        }
        match &rec[2] {
            "title" => e.title_embedding = v,
            "review" if e.review_embeddings.len() < max_reviews => e.review_embeddings.push(v),
            "review" => {}
            other => return Err(Error::parse(line, format!("unknown kind `{other}`"))),
        }
    }
    if let Some(meta) = metadata {
        let mut rdr = csv::Reader::from_reader(meta);
        for m in rdr.deserialize::<EventMeta>() {
            let m = m?;
            if let Some(e) = events.get_mut(&m.event_id) {
                if e.venue_sector != SectorId(m.sector) {
                    return Err(Error::domain(format!("event {} metadata disagrees on sector", m.event_id)));
                }
                e.date = Some(m.date);
                e.start_hour = Some(m.start_hour);
            }
        }
    }
    let mut out = Vec::with_capacity(order.len());
    for id in order {
        let e = events.remove(&id).expect("inserted above");
        if e.title_embedding.is_empty() {
            return Err(Error::domain(format!("event {id} has no title embedding")));
        }
        out.push(e);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rbf_values() {
        assert_eq!(rbf_similarity(&[1.0, 2.0], &[1.0, 2.0], 1.0).unwrap(), 1.0);
        let a = [0.0];
        let c = [std::f64::consts::LN_2.sqrt()];
        assert!((rbf_similarity(&a, &c, 1.0).unwrap() - 0.5).abs() < 1e-12);
        assert!(rbf_similarity(&[0.0], &[0.0, 1.0], 1.0).is_err());
        assert!(rbf_similarity(&[0.0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn one_cluster_of_identical_points() {
        let pts = vec![vec![0.3, 0.3]; 5];
        assert_eq!(spectral_cluster(&pts, 1, 1.0, 0).unwrap(), vec![0; 5]);
    }

    #[test]
    fn identical_points_still_fill_every_cluster() {
        let pts = vec![vec![1.0, -1.0]; 6];
        let labels = spectral_cluster(&pts, 3, 1.0, 4).unwrap();
        for a in 0..3 {
            assert!(labels.contains(&a));
        }
    }

    #[test]
    fn cluster_errors() {
        let pts = vec![vec![0.0], vec![1.0]];
        assert!(spectral_cluster(&pts, 3, 1.0, 0).is_err());
        assert!(spectral_cluster(&pts, 0, 1.0, 0).is_err());
        assert!(cluster_average(&pts, &[0, 0], 2).is_err(), "empty cluster 1");
    }

    #[test]
    fn averages() {
        let pts = vec![vec![1.0, 2.0], vec![5.0, 6.0], vec![3.0, 0.0]];
        assert_eq!(cluster_average(&pts, &[1, 0, 2], 3).unwrap(), vec![5.0, 6.0, 1.0, 2.0, 3.0, 0.0]);
        let pair = vec![vec![0.0, 0.0], vec![2.0, 4.0]];
        assert_eq!(cluster_average(&pair, &[0, 0], 1).unwrap(), vec![1.0, 2.0]);
        let swapped = vec![pts[2].clone(), pts[0].clone(), pts[1].clone()];
        assert_eq!(
            cluster_average(&swapped, &[2, 1, 0], 3).unwrap(),
            cluster_average(&pts, &[1, 0, 2], 3).unwrap()
        );
    }

    fn event(id: &str, title: Vec<f64>, reviews: Vec<Vec<f64>>) -> EventRecord {
        EventRecord {
            event_id: id.into(),
            venue_sector: SectorId(2),
            title_embedding: title,
            review_embeddings: reviews,
            date: None,
            start_hour: None,
        }
    }

    #[test]
    fn single_event_feature_is_title_and_representation() {
        let e = event("a", vec![0.5, -0.5], vec![vec![0.0, 0.0], vec![10.0, 0.0]]);
        let f = sector_feature(std::slice::from_ref(&e), 2, 1.0, 0).unwrap().unwrap();
        let mut want = e.title_embedding.clone();
        want.extend(event_representation(&e, 2, 1.0, 0).unwrap());
        assert_eq!(f.unified, want);
        assert_eq!(f.unified.len(), 3 * 2);
        assert_eq!(sector_feature(&[], 2, 1.0, 0).unwrap(), None);
    }

    #[test]
    fn opposite_titles_cancel() {
        let r = vec![vec![0.0, 0.0], vec![9.0, 9.0]];
        let f = sector_feature(
            &[event("a", vec![1.0, 3.0], r.clone()), event("b", vec![-1.0, -3.0], r)],
            2,
            1.0,
            0,
        )
        .unwrap()
        .unwrap();
        assert_eq!(&f.unified[..2], &[0.0, 0.0]);
    }

    #[test]
    fn three_events_hand_computed() {
        // d = 2, b = 2; each event's reviews form two far-apart groups so the clusters are fixed.
        // Event 1: {(0,0),(0,2)} and {(10,0)} -> means (0,1), (10,0).
        // Event 2: {(1,1)} and {(20,4),(20,6)} -> means (1,1), (20,5).
        // Event 3: {(-2,0)} and {(8,8)} -> means (-2,0), (8,8).
        // Averages: low cluster (-1/3, 2/3), high cluster (38/3, 13/3); titles average to (1, 1).
        let events = vec![
            event("1", vec![3.0, 0.0], vec![vec![0.0, 0.0], vec![0.0, 2.0], vec![10.0, 0.0]]),
            event("2", vec![0.0, 3.0], vec![vec![1.0, 1.0], vec![20.0, 4.0], vec![20.0, 6.0]]),
            event("3", vec![0.0, 0.0], vec![vec![-2.0, 0.0], vec![8.0, 8.0]]),
        ];
        let f = sector_feature(&events, 2, 1.0, 5).unwrap().unwrap();
        let want = [1.0, 1.0, -1.0 / 3.0, 2.0 / 3.0, 38.0 / 3.0, 13.0 / 3.0];
        for (a, b) in f.unified.iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{:?}", f.unified);
        }
    }

    #[test]
    fn reads_embedding_file_with_cap() {
        let text = "event_id,sector,kind,v0,v1\n\
                    e1,3,title,1,2\n\
                    e1,3,review,0,0\n\
                    e1,3,review,1,1\n\
                    e1,3,review,2,2\n\
                    e2,1,title,0,1\n\
                    e2,1,review,5,5\n";
        let meta = "event_id,sector,date,start_hour\ne1,3,2022-11-17,19\n";
        let events = read_events(text.as_bytes(), Some(meta.as_bytes()), 2).unwrap();
        assert_eq!(events.len(), 2);
        assert_eq!(events[0].review_embeddings, vec![vec![0.0, 0.0], vec![1.0, 1.0]]);
        assert_eq!(events[0].date.as_deref(), Some("2022-11-17"));
        assert_eq!(events[1].venue_sector, SectorId(1));
        let bad = "event_id,sector,kind,v0\ne1,0,photo,1\n";
        assert!(read_events(bad.as_bytes(), None::<&[u8]>, 2).is_err());
    }
}
