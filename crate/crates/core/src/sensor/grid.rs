//! Marker grid layout and displacement fields.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

pub const IMAGE_WIDTH: usize = 212;
pub const IMAGE_HEIGHT: usize = 120;

/// Printed-dot grid embedded in the membrane.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MarkerGrid {
    pub rest_positions: Vec<Vector2<f64>>,
    pub current_positions: Vec<Vector2<f64>>,
    pub marker_radius: f64,
    pub cols: usize,
    pub rows: usize,
}

impl MarkerGrid {
    /// Regular `cols x rows` grid centred in the image with uniform pitch.
    pub fn regular(cols: usize, rows: usize, marker_radius: f64) -> Self {
        assert!(cols * rows >= 30, "need at least 30 markers");
        let pitch = 16.0;
        let x0 = (IMAGE_WIDTH as f64 - pitch * (cols - 1) as f64) / 2.0;
        let y0 = (IMAGE_HEIGHT as f64 - pitch * (rows - 1) as f64) / 2.0;
        assert!(x0 >= 2.0 * marker_radius && y0 >= 2.0 * marker_radius);
        let mut rest = Vec::with_capacity(cols * rows);
        for r in 0..rows {
            for c in 0..cols {
                rest.push(Vector2::new(
                    x0 + pitch * c as f64,
                    y0 + pitch * r as f64,
                ));
            }
        }
        Self {
            current_positions: rest.clone(),
            rest_positions: rest,
            marker_radius,
            cols,
            rows,
        }
    }

    pub fn len(&self) -> usize {
        self.rest_positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rest_positions.is_empty()
    }

    pub fn pitch(&self) -> f64 {
        (self.rest_positions[1] - self.rest_positions[0]).norm()
    }

    /// Adjacency of Voronoi-neighbouring rest markers (Gabriel graph: i and j
    /// are linked when no third marker lies inside their diametral circle).
    pub fn neighbor_graph(&self) -> Vec<Vec<usize>> {
        let n = self.len();
        let mut adj = vec![Vec::new(); n];
        for i in 0..n {
            for j in (i + 1)..n {
                let mid = (self.rest_positions[i] + self.rest_positions[j]) / 2.0;
                let r2 = (self.rest_positions[i] - mid).norm_squared();
                // Cocircular points (square-grid diagonals) count as blocked.
                let blocked = (0..n).any(|k| {
                    k != i && k != j && (self.rest_positions[k] - mid).norm_squared() < r2 + 1e-9
                });
                if !blocked {
                    adj[i].push(j);
                    adj[j].push(i);
                }
            }
        }
        adj
    }
}

/// Per-marker tracked displacement, validity and estimated depth.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DisplacementField {
    pub displacement: Vec<Vector2<f64>>,
    pub valid: Vec<bool>,
    pub depth: Vec<f64>,
}

impl DisplacementField {
    pub fn invalid(n: usize) -> Self {
        Self {
            displacement: vec![Vector2::zeros(); n],
            valid: vec![false; n],
            depth: vec![0.0; n],
        }
    }

    pub fn from_displacements(displacement: Vec<Vector2<f64>>, valid: Vec<bool>) -> Self {
        let n = displacement.len();
        Self {
            displacement,
            valid,
            depth: vec![0.0; n],
        }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn valid_fraction(&self) -> f64 {
        if self.valid.is_empty() {
            0.0
        } else {
            self.valid_count() as f64 / self.valid.len() as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regular_grid_inside_bounds_with_margin() {
        let g = MarkerGrid::regular(12, 7, 3.0);
        assert_eq!(g.len(), 84);
        for p in &g.rest_positions {
            assert!(p.x >= 6.0 && p.x <= IMAGE_WIDTH as f64 - 6.0);
            assert!(p.y >= 6.0 && p.y <= IMAGE_HEIGHT as f64 - 6.0);
        }
    }

    #[test]
    fn pitch_uniform() {
        let g = MarkerGrid::regular(12, 7, 3.0);
        // Horizontal neighbours all share the same spacing within 1%.
        let p = g.pitch();
        for r in 0..g.rows {
            for c in 1..g.cols {
                let i = r * g.cols + c;
                let d = (g.rest_positions[i] - g.rest_positions[i - 1]).norm();
                assert!((d - p).abs() / p < 0.01);
            }
        }
    }

    #[test]
    fn neighbor_graph_is_grid_adjacency() {
        let g = MarkerGrid::regular(12, 7, 3.0);
        let adj = g.neighbor_graph();
        // Interior marker: 4 axis neighbours (diagonals are blocked).
        let i = 3 * g.cols + 5;
        assert_eq!(adj[i].len(), 4);
        // Corner: 2 neighbours.
        assert_eq!(adj[0].len(), 2);
        // Symmetry.
        for (i, nbrs) in adj.iter().enumerate() {
            for &j in nbrs {
                assert!(adj[j].contains(&i));
            }
        }
    }
}
