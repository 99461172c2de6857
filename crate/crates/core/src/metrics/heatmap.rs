//! Visit-count heatmaps in the textual portable graymap/pixmap formats,
//! dependency-free and diffable.

use crate::error::Result;
use crate::metrics::coverage::CoverageTracker;
use crate::sim::OccupancyMap;
use std::path::Path;

/// P2 graymap: visit counts scaled to 0..255, walls at 0.
pub fn pgm_string(tracker: &CoverageTracker, map: &OccupancyMap) -> String {
    let max = tracker.counts().iter().copied().max().unwrap_or(0).max(1);
    let mut out = format!("P2\n{} {}\n255\n", map.width(), map.height());
    for row in 0..map.height() {
        let mut line = String::new();
        for col in 0..map.width() {
            let v = if map.is_wall(col, row) {
                0
            } else {
                (tracker.count_at(col, row) * 255 / max).min(255)
            };
            if col > 0 {
                line.push(' ');
            }
            line.push_str(&v.to_string());
        }
        out.push_str(&line);
        out.push('\n');
    }
    out
}

/// P3 pixmap: walls dark gray, unvisited free cells near black, visited
/// cells on a red-to-yellow heat ramp, the start cell blue.
pub fn ppm_string(tracker: &CoverageTracker, map: &OccupancyMap) -> String {
    let max = tracker.counts().iter().copied().max().unwrap_or(0).max(1) as f64;
    let mut out = format!("P3\n{} {}\n255\n", map.width(), map.height());
    for row in 0..map.height() {
        let mut line = String::new();
        for col in 0..map.width() {
            let (r, g, b) = if (col, row) == tracker.start() {
                (40, 90, 235)
            } else if map.is_wall(col, row) {
                (60, 60, 60)
            } else {
                let count = tracker.count_at(col, row);
                if count == 0 {
                    (15, 15, 15)
                } else {
                    // log scaling keeps rarely visited cells distinguishable
                    let t = ((count as f64).ln_1p() / max.ln_1p()).clamp(0.0, 1.0);
                    (255, (t * 220.0) as u32, 30)
                }
            };
            if col > 0 {
                line.push(' ');
            }
            line.push_str(&format!("{r} {g} {b}"));
        }
        out.push_str(&line);
        out.push('\n');
    }
    out
}

pub fn write_heatmaps(tracker: &CoverageTracker, map: &OccupancyMap, dir: &Path) -> Result<()> {
    std::fs::write(dir.join("heatmap.pgm"), pgm_string(tracker, map))?;
    std::fs::write(dir.join("heatmap.ppm"), ppm_string(tracker, map))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::MapSpec;

    #[test]
    fn empty_tracker_renders_zero_matrix() {
        let map = OccupancyMap::generate(3, &MapSpec { width: 5, height: 5, rooms: 1, door_width: 1 }).unwrap();
        let tracker = CoverageTracker::new(&map);
        let pgm = pgm_string(&tracker, &map);
        let mut lines = pgm.lines();
        assert_eq!(lines.next(), Some("P2"));
        assert_eq!(lines.next(), Some("5 5"));
        assert_eq!(lines.next(), Some("255"));
        for line in lines {
            for tok in line.split_whitespace() {
                assert_eq!(tok, "0");
            }
        }
    }

    #[test]
    fn start_cell_is_blue_in_ppm() {
        let map = OccupancyMap::generate(3, &MapSpec { width: 5, height: 5, rooms: 1, door_width: 1 }).unwrap();
        let mut tracker = CoverageTracker::new(&map);
        let (c, r) = map.start();
        tracker.update(c, r, 0).unwrap();
        let ppm = ppm_string(&tracker, &map);
        let body: Vec<&str> = ppm.lines().skip(3).collect();
        let row_tokens: Vec<&str> = body[r].split_whitespace().collect();
        assert_eq!(&row_tokens[c * 3..c * 3 + 3], &["40", "90", "235"]);
    }
}
