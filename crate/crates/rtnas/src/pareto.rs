//! Pareto frontier over (maximize score, minimize latency), the real-time
//! valid region, and the plain-text point format shared by the CLI
//! commands.

use crate::error::{Error, Result};

/// One evaluated architecture in the score/latency plane.
#[derive(Clone, Debug, PartialEq)]
pub struct ParetoPoint {
    pub id: String,
    pub score: f64,
    pub latency_ms: f64,
    pub throughput_fps: f64,
    /// Where the point came from: search, random, greedy or ga.
    pub source: String,
}

/// The real-time constraint box: latency at most `max_latency_ms` and
/// throughput at least `min_throughput_fps`.
#[derive(Clone, Copy, Debug)]
pub struct ValidRegion {
    pub max_latency_ms: f64,
    pub min_throughput_fps: f64,
}

impl ValidRegion {
    pub fn contains(&self, p: &ParetoPoint) -> bool {
        p.latency_ms <= self.max_latency_ms && p.throughput_fps >= self.min_throughput_fps
    }
}

/// Indices of the non-dominated points under (score up, latency down).
/// A point is dominated when another scores at least as well at no more
/// latency, strictly better in one of the two. Duplicate coordinates stay
/// on the frontier together.
pub fn frontier(points: &[ParetoPoint]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .latency_ms
            .total_cmp(&points[b].latency_ms)
            .then_with(|| points[b].score.total_cmp(&points[a].score))
            .then_with(|| points[a].id.cmp(&points[b].id))
    });
    let mut keep = Vec::new();
    let mut best_before = f64::NEG_INFINITY;
    let mut i = 0;
    while i < order.len() {
        // Group equal-latency points; only the group's score maximum can
        // survive, and it must strictly beat everything faster.
        let mut j = i;
        let lat = points[order[i]].latency_ms;
        let mut group_max = f64::NEG_INFINITY;
        while j < order.len() && points[order[j]].latency_ms == lat {
            group_max = group_max.max(points[order[j]].score);
            j += 1;
        }
        for &idx in &order[i..j] {
            if points[idx].score == group_max && group_max > best_before {
                keep.push(idx);
            }
        }
        best_before = best_before.max(group_max);
        i = j;
    }
    keep.sort_unstable();
    keep
}

pub const POINTS_HEADER: &str = "id,score,latency_ms,throughput_fps,source";

/// Fixed-width numeric formatting used in every emitted table, so outputs
/// are byte-reproducible.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.9}")
}

pub fn write_points_csv(points: &[ParetoPoint]) -> String {
    let mut out = String::from(POINTS_HEADER);
    out.push('\n');
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            p.id,
            fmt_num(p.score),
            fmt_num(p.latency_ms),
            fmt_num(p.throughput_fps),
            p.source
        ));
    }
    out
}

/// Parse a points table, reporting malformed rows with their line number.
pub fn parse_points_csv(text: &str, path: &str) -> Result<Vec<ParetoPoint>> {
    let mut out = Vec::new();
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == POINTS_HEADER => {}
        Some((_, header)) => {
            return Err(Error::Malformed {
                path: path.into(),
                line: 1,
                msg: format!("expected header `{POINTS_HEADER}`, got `{header}`"),
            })
        }
        None => {
            return Err(Error::Malformed {
                path: path.into(),
                line: 1,
                msg: "empty points file".into(),
            })
        }
    }
    for (idx, raw) in lines {
        let line = idx + 1;
        let row = raw.trim();
        if row.is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Malformed {
                path: path.into(),
                line,
                msg: format!("expected 5 fields, got {}", fields.len()),
            });
        }
        let parse = |s: &str, what: &str| -> Result<f64> {
            let v: f64 = s.parse().map_err(|_| Error::Malformed {
                path: path.into(),
                line,
                msg: format!("bad {what} `{s}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Malformed {
                    path: path.into(),
                    line,
                    msg: format!("non-finite {what}"),
                });
            }
            Ok(v)
        };
        let latency_ms = parse(fields[2], "latency")?;
        if latency_ms <= 0.0 {
            return Err(Error::Malformed {
                path: path.into(),
                line,
                msg: "latency must be positive".into(),
            });
        }
        out.push(ParetoPoint {
            id: fields[0].to_string(),
            score: parse(fields[1], "score")?,
            latency_ms,
            throughput_fps: parse(fields[3], "throughput")?,
            source: fields[4].to_string(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;

    fn pt(id: &str, score: f64, lat: f64) -> ParetoPoint {
        ParetoPoint {
            id: id.into(),
            score,
            latency_ms: lat,
            throughput_fps: 1000.0 / lat,
            source: "random".into(),
        }
    }

    #[test]
    fn single_point_is_its_own_frontier() {
        let pts = vec![pt("a", 1.0, 10.0)];
        assert_eq!(frontier(&pts), vec![0]);
    }

    #[test]
    fn dominated_point_is_dropped() {
        let pts = vec![pt("a", 2.0, 10.0), pt("b", 1.0, 12.0)];
        assert_eq!(frontier(&pts), vec![0]);
        let pts = vec![pt("a", 2.0, 10.0), pt("b", 2.0, 10.0)];
        assert_eq!(frontier(&pts), vec![0, 1], "exact duplicates both stay");
        let pts = vec![pt("a", 2.0, 10.0), pt("b", 2.0, 11.0)];
        assert_eq!(frontier(&pts), vec![0], "same score, slower: dominated");
    }

    /// O(n^2) pairwise-domination oracle.
    fn brute_force(points: &[ParetoPoint]) -> Vec<usize> {
        (0..points.len())
            .filter(|&i| {
                !(0..points.len()).any(|j| {
                    j != i
                        && points[j].score >= points[i].score
                        && points[j].latency_ms <= points[i].latency_ms
                        && (points[j].score > points[i].score
                            || points[j].latency_ms < points[i].latency_ms)
                })
            })
            .collect()
    }

    #[test]
    fn frontier_matches_brute_force_on_random_clouds() {
        let mut rng = substream(3, "pareto");
        for _ in 0..20 {
            let pts: Vec<ParetoPoint> = (0..200)
                .map(|i| {
                    // Coarse grid so ties actually happen.
                    let score = (rng.gen::<f64>() * 10.0).round() / 2.0;
                    let lat = (rng.gen::<f64>() * 20.0).round() + 1.0;
                    pt(&format!("p{i}"), score, lat)
                })
                .collect();
            assert_eq!(frontier(&pts), brute_force(&pts));
        }
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let pts = vec![pt("a", 1.25, 10.0), pt("b", 0.5, 8.0)];
        let text = write_points_csv(&pts);
        let back = parse_points_csv(&text, "points.csv").unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].id, "a");
        assert!((back[0].score - 1.25).abs() < 1e-9);

        let bad = "id,score,latency_ms,throughput_fps,source\nx,1.0,oops,2.0,random\n";
        match parse_points_csv(bad, "points.csv") {
            Err(Error::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn valid_region_checks_both_constraints() {
        let region = ValidRegion {
            max_latency_ms: 50.0,
            min_throughput_fps: 22.0,
        };
        let mut p = pt("a", 1.0, 40.0);
        p.throughput_fps = 25.0;
        assert!(region.contains(&p));
        p.throughput_fps = 20.0;
        assert!(!region.contains(&p));
        p.throughput_fps = 25.0;
        p.latency_ms = 55.0;
        assert!(!region.contains(&p));
    }
}
