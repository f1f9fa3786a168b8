use serde::{Deserialize, Serialize};

/// Displacements of the 2-D action set: left, right, stay, up, down.
pub const MOVES_2D: [(i64, i64); 5] = [(-1, 0), (1, 0), (0, 0), (0, 1), (0, -1)];

/// Rectangular grid metadata. Cell `(x, y)` flattens to `y * width + x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub width: usize,
    pub height: usize,
    pub periodic: bool,
    /// One flag per flattened cell.
    pub walls: Vec<bool>,
    pub doors: Vec<(usize, usize)>,
}

impl GridGeometry {
    pub fn open(width: usize, height: usize, periodic: bool) -> Self {
        Self { width, height, periodic, walls: vec![false; width * height], doors: Vec::new() }
    }

    pub fn num_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.width, idx / self.width)
    }

    /// Flattened target of `(x, y) + (dx, dy)`, or `None` if it leaves the grid or hits a wall.
    pub fn step(&self, idx: usize, dx: i64, dy: i64) -> Option<usize> {
        let (x, y) = self.coords(idx);
        let (w, h) = (self.width as i64, self.height as i64);
        let (mut nx, mut ny) = (x as i64 + dx, y as i64 + dy);
        if self.periodic {
            nx = nx.rem_euclid(w);
            ny = ny.rem_euclid(h);
        } else if nx < 0 || ny < 0 || nx >= w || ny >= h {
            return None;
        }
        let j = self.index(nx as usize, ny as usize);
        (!self.walls[j]).then_some(j)
    }

    /// Kernel row for a move with additive disturbance: each `(displacement, prob)` is
    /// added to the chosen move and blocked destinations fall back to the origin.
    pub fn noisy_move(&self, idx: usize, mv: (i64, i64), noise: &[((i64, i64), f64)]) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(noise.len());
        for &((ex, ey), q) in noise {
            if q == 0.0 {
                continue;
            }
            let y = self.step(idx, mv.0 + ex, mv.1 + ey).unwrap_or(idx);
            match out.iter_mut().find(|e| e.0 == y) {
                Some(e) => e.1 += q,
                None => out.push((y, q)),
            }
        }
        out
    }
}
