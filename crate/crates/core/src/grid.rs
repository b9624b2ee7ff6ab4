//! The 3 x 6 antenna base-plate and the occupancy context around a pickup.
//!
//! Antennas are numbered column-major from 1: ids 1, 2, 3 form the first
//! column (rows 0, 1, 2), so ids 1, 4, 7, 10, 13 and 16 share row 0.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;

pub const GRID_ROWS: usize = 3;
pub const GRID_COLS: usize = 6;
pub const ANTENNA_COUNT: usize = GRID_ROWS * GRID_COLS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Antenna(u8);

impl Antenna {
    pub fn new(id: u8) -> Result<Self> {
        if id == 0 || id as usize > ANTENNA_COUNT {
            return Err(Error::Domain(format!("antenna id {id} outside 1..={ANTENNA_COUNT}")));
        }
        Ok(Antenna(id))
    }

    pub fn from_row_col(row: usize, col: usize) -> Result<Self> {
        if row >= GRID_ROWS || col >= GRID_COLS {
            return Err(Error::Domain(format!("cell ({row}, {col}) is off the grid")));
        }
        Ok(Antenna((col * GRID_ROWS + row + 1) as u8))
    }

    pub fn id(self) -> u8 {
        self.0
    }

    pub fn row(self) -> usize {
        (self.0 as usize - 1) % GRID_ROWS
    }

    pub fn col(self) -> usize {
        (self.0 as usize - 1) / GRID_ROWS
    }

    pub fn all() -> impl Iterator<Item = Antenna> {
        (1..=ANTENNA_COUNT as u8).map(Antenna)
    }

    /// In-grid cells within one row and one column of this one, excluding itself.
    pub fn neighbours(self) -> Vec<Antenna> {
        let (r, c) = (self.row() as i64, self.col() as i64);
        let mut out = Vec::new();
        for dc in -1..=1i64 {
            for dr in -1..=1i64 {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let (nr, nc) = (r + dr, c + dc);
                if nr >= 0 && nc >= 0 && (nr as usize) < GRID_ROWS && (nc as usize) < GRID_COLS {
                    out.push(Antenna::from_row_col(nr as usize, nc as usize).expect("in grid"));
                }
            }
        }
        out
    }
}

impl TryFrom<u8> for Antenna {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        Antenna::new(v)
    }
}

impl From<Antenna> for u8 {
    fn from(a: Antenna) -> u8 {
        a.0
    }
}

impl fmt::Display for Antenna {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Base-plate geometry: world position (mm) of each antenna centre.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AntennaGrid {
    /// World position of antenna 1.
    pub origin_mm: [f64; 2],
    /// Spacing between columns (x) and rows (y).
    pub pitch_mm: [f64; 2],
}

impl Default for AntennaGrid {
    fn default() -> Self {
        AntennaGrid {
            origin_mm: [50.0, 50.0],
            pitch_mm: [100.0, 100.0],
        }
    }
}

impl AntennaGrid {
    pub fn world(&self, a: Antenna) -> Point2 {
        Point2::new(
            self.origin_mm[0] + self.pitch_mm[0] * a.col() as f64,
            self.origin_mm[1] + self.pitch_mm[1] * a.row() as f64,
        )
    }
}

/// Occupancy counts of the other identities over the 3 x 3 neighbourhood of
/// a pickup, row-major with the pickup itself in cell 4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ContextVector(pub [u8; 9]);

impl ContextVector {
    pub fn counts(&self) -> &[u8; 9] {
        &self.0
    }

    pub fn total(&self) -> usize {
        self.0.iter().map(|&c| c as usize).sum()
    }
}

/// Counts `others` falling in the neighbourhood of `p`. Others outside the
/// neighbourhood (or off the grid) do not contribute.
pub fn context_vector(p: Antenna, others: &[Antenna]) -> ContextVector {
    let mut counts = [0u8; 9];
    let (pr, pc) = (p.row() as i64, p.col() as i64);
    for o in others {
        let dr = o.row() as i64 - pr;
        let dc = o.col() as i64 - pc;
        if dr.abs() <= 1 && dc.abs() <= 1 {
            counts[((dr + 1) * 3 + (dc + 1)) as usize] += 1;
        }
    }
    ContextVector(counts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbering_is_column_major() {
        let row0: Vec<u8> = Antenna::all().filter(|a| a.row() == 0).map(|a| a.id()).collect();
        assert_eq!(row0, vec![1, 4, 7, 10, 13, 16]);
        let a = Antenna::new(18).unwrap();
        assert_eq!((a.row(), a.col()), (2, 5));
        assert!(Antenna::new(0).is_err());
        assert!(Antenna::new(19).is_err());
        assert_eq!(Antenna::from_row_col(1, 2).unwrap().id(), 8);
    }

    #[test]
    fn empty_context() {
        let p = Antenna::new(8).unwrap();
        assert_eq!(context_vector(p, &[]).0, [0; 9]);
    }

    #[test]
    fn same_antenna_lands_in_centre() {
        let p = Antenna::new(8).unwrap();
        let c = context_vector(p, &[p]);
        assert_eq!(c.0[4], 1);
        assert_eq!(c.total(), 1);
    }

    #[test]
    fn corner_neighbourhood_by_enumeration() {
        // Antenna 1 is row 0, col 0. Antenna 2 is row 1, col 0 (dr = +1, dc = 0),
        // antenna 4 is row 0, col 1 (dr = 0, dc = +1), antenna 5 is (1, 1).
        let p = Antenna::new(1).unwrap();
        let others = [2u8, 4, 5, 9].map(|i| Antenna::new(i).unwrap());
        let c = context_vector(p, &others);
        let mut expected = [0u8; 9];
        expected[7] = 1; // (dr 1, dc 0)
        expected[5] = 1; // (dr 0, dc 1)
        expected[8] = 1; // (dr 1, dc 1)
        assert_eq!(c.0, expected);
        // Cells above/left of a corner antenna are off-grid and stay zero.
        for k in [0, 1, 2, 3, 6] {
            assert_eq!(c.0[k], 0);
        }
    }

    #[test]
    fn neighbours_of_corner_and_interior() {
        assert_eq!(Antenna::new(1).unwrap().neighbours().len(), 3);
        assert_eq!(Antenna::new(5).unwrap().neighbours().len(), 8);
    }

    #[test]
    fn world_coordinates() {
        let g = AntennaGrid::default();
        let p = g.world(Antenna::new(6).unwrap()); // row 2, col 1
        assert_eq!((p.x, p.y), (150.0, 250.0));
    }
}
