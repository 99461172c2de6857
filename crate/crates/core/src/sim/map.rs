//! Occupancy maps: procedural generation, reachability, mutation, and the
//! ASCII file format.
//!
//! A map is a bordered grid of wall and free cells. Wall cells carry a
//! texture id, by default a deterministic hash of the cell coordinates so
//! distinct regions stay visually distinguishable. The visitable set is the
//! 4-connected flood fill from the start cell.

use crate::error::{Error, Result};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Wall { texture: u8 },
    Free,
}

impl Cell {
    pub fn is_wall(&self) -> bool {
        matches!(self, Cell::Wall { .. })
    }
}

/// Default wall texture: a mix of the cell coordinates, stable across runs.
pub fn texture_hash(col: usize, row: usize) -> u8 {
    let mut h = (col as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    h ^= (row as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    h ^= h >> 29;
    h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h ^= h >> 32;
    (h & 0xFF) as u8
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMap {
    width: usize,
    height: usize,
    cells: Vec<Cell>,
    start: (usize, usize),
    visitable: Vec<bool>,
    visitable_count: usize,
}

/// Room layout request for the generator.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MapSpec {
    pub width: usize,
    pub height: usize,
    /// Number of rooms to partition the interior into (1 = open room).
    pub rooms: usize,
    /// Width of the gap carved into every dividing wall.
    pub door_width: usize,
}

impl Default for MapSpec {
    fn default() -> Self {
        MapSpec { width: 15, height: 15, rooms: 3, door_width: 1 }
    }
}

/// One rectangular free region: inclusive cell bounds.
#[derive(Debug, Clone, Copy)]
struct Region {
    c0: usize,
    r0: usize,
    c1: usize,
    r1: usize,
}

impl Region {
    fn cols(&self) -> usize {
        self.c1 - self.c0 + 1
    }
    fn rows(&self) -> usize {
        self.r1 - self.r0 + 1
    }
    fn area(&self) -> usize {
        self.cols() * self.rows()
    }
}

impl OccupancyMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn start(&self) -> (usize, usize) {
        self.start
    }

    pub fn cell(&self, col: usize, row: usize) -> Cell {
        self.cells[row * self.width + col]
    }

    pub fn is_wall(&self, col: usize, row: usize) -> bool {
        self.cell(col, row).is_wall()
    }

    pub fn is_visitable(&self, col: usize, row: usize) -> bool {
        self.visitable[row * self.width + col]
    }

    pub fn visitable_count(&self) -> usize {
        self.visitable_count
    }

    pub fn visitable_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.visitable
            .iter()
            .enumerate()
            .filter(|(_, v)| **v)
            .map(move |(i, _)| (i % w, i / w))
    }

    /// Override one wall cell's texture (used for probes and tests).
    pub fn set_texture(&mut self, col: usize, row: usize, texture: u8) -> Result<()> {
        let idx = row * self.width + col;
        match self.cells[idx] {
            Cell::Wall { .. } => {
                self.cells[idx] = Cell::Wall { texture };
                Ok(())
            }
            Cell::Free => Err(Error::Mutation(format!("({col},{row}) is not a wall"))),
        }
    }

    /// Build a map from explicit cells. Validates the border, the start
    /// cell, and computes the visitable set.
    pub fn from_cells(width: usize, height: usize, cells: Vec<Cell>, start: (usize, usize)) -> Result<Self> {
        if width < 3 || height < 3 || cells.len() != width * height {
            return Err(Error::MapGen(format!(
                "invalid dimensions {width}x{height} for {} cells",
                cells.len()
            )));
        }
        for col in 0..width {
            if !cells[col].is_wall() || !cells[(height - 1) * width + col].is_wall() {
                return Err(Error::MapGen("border must be walls".into()));
            }
        }
        for row in 0..height {
            if !cells[row * width].is_wall() || !cells[row * width + width - 1].is_wall() {
                return Err(Error::MapGen("border must be walls".into()));
            }
        }
        if cells[start.1 * width + start.0].is_wall() {
            return Err(Error::MapGen(format!("start {start:?} is a wall")));
        }
        let (visitable, visitable_count) = flood_fill(width, height, &cells, start);
        Ok(OccupancyMap { width, height, cells, start, visitable, visitable_count })
    }

    /// Procedurally generate a connected multi-room map.
    pub fn generate(seed: u64, spec: &MapSpec) -> Result<Self> {
        if spec.rooms == 0 {
            return Err(Error::MapGen("at least one room required".into()));
        }
        if spec.width < 5 || spec.height < 5 {
            return Err(Error::MapGen(format!(
                "map {}x{} too small for bordered rooms",
                spec.width, spec.height
            )));
        }
        if spec.door_width == 0 {
            return Err(Error::MapGen("door width must be positive".into()));
        }
        let mut rng = StdRng::seed_from_u64(seed);
        let (width, height) = (spec.width, spec.height);
        let mut cells = vec![Cell::Free; width * height];
        for col in 0..width {
            cells[col] = Cell::Wall { texture: texture_hash(col, 0) };
            cells[(height - 1) * width + col] = Cell::Wall { texture: texture_hash(col, height - 1) };
        }
        for row in 0..height {
            cells[row * width] = Cell::Wall { texture: texture_hash(0, row) };
            cells[row * width + width - 1] = Cell::Wall { texture: texture_hash(width - 1, row) };
        }

        // Split the largest region until we have the requested room count.
        // A later wall can seal an earlier door, so every carve is validated
        // against full connectivity and retried at new random positions.
        let mut regions = vec![Region { c0: 1, r0: 1, c1: width - 2, r1: height - 2 }];
        let min_side = 2;
        while regions.len() < spec.rooms {
            regions.sort_by_key(|r| std::cmp::Reverse(r.area()));
            let mut split_done = false;
            for i in 0..regions.len() {
                let region = regions[i];
                let vertical = match (region.cols() >= 2 * min_side + 1, region.rows() >= 2 * min_side + 1) {
                    (true, true) => region.cols() >= region.rows(),
                    (true, false) => true,
                    (false, true) => false,
                    (false, false) => continue,
                };
                let span = if vertical { region.rows() } else { region.cols() };
                if span < spec.door_width {
                    continue;
                }
                for _attempt in 0..20 {
                    let mut scratch = cells.clone();
                    if vertical {
                        let wall_col = rng.random_range(region.c0 + min_side..=region.c1 - min_side);
                        let door_start = rng.random_range(region.r0..=region.r1 + 1 - spec.door_width);
                        for row in region.r0..=region.r1 {
                            if row < door_start || row >= door_start + spec.door_width {
                                scratch[row * width + wall_col] =
                                    Cell::Wall { texture: texture_hash(wall_col, row) };
                            }
                        }
                        if !fully_connected(width, height, &scratch) {
                            continue;
                        }
                        regions[i] = Region { c1: wall_col - 1, ..region };
                        regions.push(Region { c0: wall_col + 1, ..region });
                    } else {
                        let wall_row = rng.random_range(region.r0 + min_side..=region.r1 - min_side);
                        let door_start = rng.random_range(region.c0..=region.c1 + 1 - spec.door_width);
                        for col in region.c0..=region.c1 {
                            if col < door_start || col >= door_start + spec.door_width {
                                scratch[wall_row * width + col] =
                                    Cell::Wall { texture: texture_hash(col, wall_row) };
                            }
                        }
                        if !fully_connected(width, height, &scratch) {
                            continue;
                        }
                        regions[i] = Region { r1: wall_row - 1, ..region };
                        regions.push(Region { r0: wall_row + 1, ..region });
                    }
                    cells = scratch;
                    split_done = true;
                    break;
                }
                if split_done {
                    break;
                }
            }
            if !split_done {
                return Err(Error::MapGen(format!(
                    "cannot fit {} rooms into {}x{}",
                    spec.rooms, width, height
                )));
            }
        }

        let free: Vec<usize> = cells
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.is_wall())
            .map(|(i, _)| i)
            .collect();
        let start_idx = free[rng.random_range(0..free.len())];
        let start = (start_idx % width, start_idx / width);
        let map = Self::from_cells(width, height, cells, start)?;
        // Doors keep every free cell reachable; anything else is a generator bug.
        debug_assert_eq!(map.visitable_count, free.len());
        Ok(map)
    }

    /// Apply a mutation, returning the new map and the set of changed cells.
    pub fn mutate(&self, mutation: &Mutation) -> Result<(OccupancyMap, BTreeSet<(usize, usize)>)> {
        let mut cells = self.cells.clone();
        let mut changed = BTreeSet::new();
        let add_wall = |cells: &mut Vec<Cell>, (col, row): (usize, usize)| -> Result<()> {
            if col == 0 || row == 0 || col >= self.width - 1 || row >= self.height - 1 {
                return Err(Error::Mutation(format!("({col},{row}) is on the border")));
            }
            if cells[row * self.width + col].is_wall() {
                return Err(Error::Mutation(format!("({col},{row}) is already a wall")));
            }
            if (col, row) == self.start {
                return Err(Error::Mutation("cannot place an obstacle on the start cell".into()));
            }
            cells[row * self.width + col] = Cell::Wall { texture: texture_hash(col, row) };
            Ok(())
        };
        let remove_wall = |cells: &mut Vec<Cell>, (col, row): (usize, usize)| -> Result<()> {
            if col == 0 || row == 0 || col >= self.width - 1 || row >= self.height - 1 {
                return Err(Error::Mutation(format!("({col},{row}) is on the border")));
            }
            if !cells[row * self.width + col].is_wall() {
                return Err(Error::Mutation(format!("({col},{row}) is not a wall")));
            }
            cells[row * self.width + col] = Cell::Free;
            Ok(())
        };
        match mutation {
            Mutation::Identity => {}
            Mutation::AddObstacle { cell } => {
                add_wall(&mut cells, *cell)?;
                changed.insert(*cell);
            }
            Mutation::RemoveObstacle { cell } => {
                remove_wall(&mut cells, *cell)?;
                changed.insert(*cell);
            }
            Mutation::MoveObstacle { from, to } => {
                remove_wall(&mut cells, *from)?;
                add_wall(&mut cells, *to)?;
                changed.insert(*from);
                changed.insert(*to);
            }
        }
        let map = Self::from_cells(self.width, self.height, cells, self.start)?;
        // The mutated space must stay connected: every free cell reachable.
        let free_count = map.cells.iter().filter(|c| !c.is_wall()).count();
        if map.visitable_count != free_count {
            return Err(Error::Mutation(format!(
                "mutation disconnects the space: {} of {free_count} free cells reachable",
                map.visitable_count
            )));
        }
        Ok((map, changed))
    }

    // ── ASCII format: '#' wall, '.' free, 'S' start, one row per line ──

    pub fn to_ascii(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for row in 0..self.height {
            for col in 0..self.width {
                out.push(if (col, row) == self.start {
                    'S'
                } else if self.is_wall(col, row) {
                    '#'
                } else {
                    '.'
                });
            }
            out.push('\n');
        }
        out
    }

    pub fn from_ascii(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        let height = lines.len();
        let width = lines.first().map(|l| l.chars().count()).unwrap_or(0);
        let mut cells = Vec::with_capacity(width * height);
        let mut start = None;
        for (row, line) in lines.iter().enumerate() {
            if line.chars().count() != width {
                return Err(Error::MapGen(format!("ragged row {row} in map file")));
            }
            for (col, ch) in line.chars().enumerate() {
                match ch {
                    '#' => cells.push(Cell::Wall { texture: texture_hash(col, row) }),
                    '.' => cells.push(Cell::Free),
                    'S' => {
                        if start.replace((col, row)).is_some() {
                            return Err(Error::MapGen("multiple start cells".into()));
                        }
                        cells.push(Cell::Free);
                    }
                    other => return Err(Error::MapGen(format!("unknown map character {other:?}"))),
                }
            }
        }
        let start = start.ok_or_else(|| Error::MapGen("no start cell ('S') in map file".into()))?;
        Self::from_cells(width, height, cells, start)
    }

    pub fn save_ascii(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_ascii())?;
        Ok(())
    }

    /// Load an ASCII map. A sidecar `<stem>.textures.json` next to the
    /// file, when present, overrides individual wall textures.
    pub fn load_ascii(path: &std::path::Path) -> Result<Self> {
        let mut map = Self::from_ascii(&std::fs::read_to_string(path)?)?;
        let sidecar = path.with_extension("textures.json");
        if sidecar.exists() {
            let overrides: TextureOverrides = serde_json::from_str(&std::fs::read_to_string(&sidecar)?)?;
            map.apply_texture_overrides(&overrides)?;
        }
        Ok(map)
    }

    /// Apply texture overrides from a sidecar JSON document.
    pub fn apply_texture_overrides(&mut self, overrides: &TextureOverrides) -> Result<()> {
        for o in &overrides.overrides {
            self.set_texture(o.col, o.row, o.texture)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mutation {
    Identity,
    AddObstacle { cell: (usize, usize) },
    RemoveObstacle { cell: (usize, usize) },
    MoveObstacle { from: (usize, usize), to: (usize, usize) },
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct TextureOverrides {
    pub overrides: Vec<TextureOverride>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TextureOverride {
    pub col: usize,
    pub row: usize,
    pub texture: u8,
}

/// Whether every free cell is reachable from every other free cell.
fn fully_connected(width: usize, height: usize, cells: &[Cell]) -> bool {
    let free_total = cells.iter().filter(|c| !c.is_wall()).count();
    if free_total == 0 {
        return false;
    }
    let first = cells.iter().position(|c| !c.is_wall()).expect("free cell exists");
    let (_, reached) = flood_fill(width, height, cells, (first % width, first / width));
    reached == free_total
}

fn flood_fill(width: usize, height: usize, cells: &[Cell], start: (usize, usize)) -> (Vec<bool>, usize) {
    let mut visited = vec![false; width * height];
    let mut queue = std::collections::VecDeque::new();
    visited[start.1 * width + start.0] = true;
    queue.push_back(start);
    let mut count = 1;
    while let Some((col, row)) = queue.pop_front() {
        let neighbors = [
            (col.wrapping_sub(1), row),
            (col + 1, row),
            (col, row.wrapping_sub(1)),
            (col, row + 1),
        ];
        for (nc, nr) in neighbors {
            if nc < width && nr < height {
                let idx = nr * width + nc;
                if !visited[idx] && !cells[idx].is_wall() {
                    visited[idx] = true;
                    count += 1;
                    queue.push_back((nc, nr));
                }
            }
        }
    }
    (visited, count)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent reachability check used as the oracle: depth-first from
    /// the start over an adjacency list, no shared code with `flood_fill`.
    fn reachable_oracle(map: &OccupancyMap) -> BTreeSet<(usize, usize)> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![map.start()];
        while let Some((c, r)) = stack.pop() {
            if !seen.insert((c, r)) {
                continue;
            }
            for (dc, dr) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                let (nc, nr) = ((c as i64 + dc) as usize, (r as i64 + dr) as usize);
                if nc < map.width() && nr < map.height() && !map.is_wall(nc, nr) {
                    stack.push((nc, nr));
                }
            }
        }
        seen
    }

    #[test]
    fn five_by_five_open_room_has_nine_visitable() {
        let spec = MapSpec { width: 5, height: 5, rooms: 1, door_width: 1 };
        let map = OccupancyMap::generate(7, &spec).unwrap();
        assert_eq!(map.visitable_count(), 9);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = MapSpec::default();
        let a = OccupancyMap::generate(123, &spec).unwrap();
        let b = OccupancyMap::generate(123, &spec).unwrap();
        assert_eq!(a, b);
        let c = OccupancyMap::generate(124, &spec).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn multi_room_map_is_fully_connected() {
        for seed in 0..20 {
            let spec = MapSpec { width: 15, height: 15, rooms: 3, door_width: 1 };
            let map = OccupancyMap::generate(seed, &spec).unwrap();
            let oracle = reachable_oracle(&map);
            assert_eq!(oracle.len(), map.visitable_count(), "seed {seed}");
            let free_count = (0..map.height())
                .flat_map(|r| (0..map.width()).map(move |c| (c, r)))
                .filter(|&(c, r)| !map.is_wall(c, r))
                .count();
            assert_eq!(map.visitable_count(), free_count, "seed {seed}");
        }
    }

    #[test]
    fn unsatisfiable_spec_is_error() {
        let spec = MapSpec { width: 5, height: 5, rooms: 10, door_width: 1 };
        assert!(OccupancyMap::generate(1, &spec).is_err());
        let spec = MapSpec { width: 15, height: 15, rooms: 0, door_width: 1 };
        assert!(OccupancyMap::generate(1, &spec).is_err());
    }

    #[test]
    fn identity_mutation_changes_nothing() {
        let map = OccupancyMap::generate(5, &MapSpec::default()).unwrap();
        let (mutated, changed) = map.mutate(&Mutation::Identity).unwrap();
        assert!(changed.is_empty());
        assert_eq!(map, mutated);
    }

    #[test]
    fn move_obstacle_changes_exactly_two_cells() {
        let map = OccupancyMap::generate(5, &MapSpec { width: 11, height: 11, rooms: 1, door_width: 1 }).unwrap();
        // Put an obstacle somewhere free, then move it.
        let free: Vec<(usize, usize)> = map.visitable_cells().filter(|&c| c != map.start()).collect();
        let (added, _) = map.mutate(&Mutation::AddObstacle { cell: free[0] }).unwrap();
        let (moved, changed) = added
            .mutate(&Mutation::MoveObstacle { from: free[0], to: free[1] })
            .unwrap();
        assert_eq!(changed.len(), 2);
        assert!(changed.contains(&free[0]) && changed.contains(&free[1]));
        // Flood-fill count is conserved by a move.
        assert_eq!(moved.visitable_count(), added.visitable_count());
        // And off by one for add/remove.
        assert_eq!(added.visitable_count() + 1, map.visitable_count());
    }

    #[test]
    fn disconnecting_mutation_is_rejected() {
        // (2,2) is the only passage between the two open rows.
        let text = "#####\n#S..#\n##.##\n#...#\n#####\n";
        let map = OccupancyMap::from_ascii(text).unwrap();
        let result = map.mutate(&Mutation::AddObstacle { cell: (2, 2) });
        assert!(matches!(result, Err(Error::Mutation(_))));
    }

    #[test]
    fn ascii_roundtrip() {
        let map = OccupancyMap::generate(9, &MapSpec::default()).unwrap();
        let text = map.to_ascii();
        let parsed = OccupancyMap::from_ascii(&text).unwrap();
        assert_eq!(map, parsed);
    }

    #[test]
    fn ascii_rejects_bad_input() {
        assert!(OccupancyMap::from_ascii("###\n#.#\n###\n").is_err()); // no start
        assert!(OccupancyMap::from_ascii("###\n#S\n###\n").is_err()); // ragged
        assert!(OccupancyMap::from_ascii("###\n#X#\n###\n").is_err()); // unknown char
    }

    #[test]
    fn texture_override_applies_to_walls_only() {
        let mut map = OccupancyMap::generate(3, &MapSpec::default()).unwrap();
        assert!(map.set_texture(0, 0, 42).is_ok());
        assert_eq!(map.cell(0, 0), Cell::Wall { texture: 42 });
        let start = map.start();
        assert!(map.set_texture(start.0, start.1, 42).is_err());
    }

    #[test]
    fn sidecar_texture_overrides_load_with_the_map() {
        let dir = std::env::temp_dir().join(format!("roam_sidecar_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("room.txt");
        let map = OccupancyMap::generate(3, &MapSpec::default()).unwrap();
        map.save_ascii(&path).unwrap();
        std::fs::write(
            dir.join("room.textures.json"),
            r#"{"overrides": [{"col": 0, "row": 0, "texture": 99}]}"#,
        )
        .unwrap();
        let loaded = OccupancyMap::load_ascii(&path).unwrap();
        assert_eq!(loaded.cell(0, 0), Cell::Wall { texture: 99 });
        std::fs::remove_dir_all(&dir).ok();
    }
}
