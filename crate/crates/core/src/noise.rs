//! Space-time white noise on the characteristic lattice.
//!
//! The noise integrated over a lattice cell `[τ_i, τ_{i+1}] × [λ_j, λ_{j+1}]`
//! is `N(0, ε²)` (the rotation preserves area). Points on the first
//! anti-diagonal `i + j = 1` additionally need the noise on the right
//! triangle between them and the initial line, which has area `ε²/2`.
//!
//! Draws are counter based: every lattice row owns a ChaCha8 stream selected
//! by `(kind, i)` under a key derived from `(master_seed, n)`, and the draw
//! for cell `(i, j)` sits at position `i + j` along that stream. A value
//! therefore depends only on `(master_seed, n, i, j, kind)`, never on the
//! window, the generation order or the thread schedule.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::coords::RotatedGrid;
use crate::error::{Error, Result};

const DUMP_MAGIC: u64 = u64::from_le_bytes(*b"KGQVNOIS");
const DUMP_VERSION: u64 = 1;

const KIND_CELL: u64 = 0;
const KIND_TRIANGLE: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseField {
    grid: RotatedGrid,
    master_seed: u64,
    /// Dense over the grid's point rectangle, indexed by bottom vertex.
    /// Slots that are not cells of the window hold NaN.
    cells: Vec<f64>,
    /// Layer-1 triangles, indexed by `i - first_triangle`.
    triangles: Vec<f64>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream_key(master_seed: u64, n: u32) -> [u8; 32] {
    let mut key = [0u8; 32];
    let mut state = master_seed ^ splitmix64(u64::from(n));
    for chunk in key.chunks_exact_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    key
}

fn stream_id(kind: u64, row: i64) -> u64 {
    (kind << 56) ^ (row as u64 & 0x00FF_FFFF_FFFF_FFFF)
}

fn row_rng(key: [u8; 32], kind: u64, row: i64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream_id(kind, row));
    rng
}

impl NoiseField {
    pub fn generate(grid: RotatedGrid, master_seed: u64) -> Self {
        let key = stream_key(master_seed, grid.n());
        let h = grid.eps();
        let width = grid.width();
        let mut cells = vec![f64::NAN; grid.height() * width];

        for i in grid.i_min()..grid.i_max() {
            let j_first = -i;
            if j_first >= grid.j_max() {
                continue;
            }
            let mut rng = row_rng(key, KIND_CELL, i);
            let row = grid.offset(i, grid.j_min());
            for j in j_first..grid.j_max() {
                let z: f64 = rng.sample(StandardNormal);
                cells[row + (j - grid.j_min()) as usize] = h * z;
            }
        }

        let tri_sd = h * std::f64::consts::FRAC_1_SQRT_2;
        let triangles = Self::triangle_range(&grid)
            .map(|i| {
                let z: f64 = row_rng(key, KIND_TRIANGLE, i).sample(StandardNormal);
                tri_sd * z
            })
            .collect();

        Self {
            grid,
            master_seed,
            cells,
            triangles,
        }
    }

    /// Same lattice, every increment zero.
    pub fn zeros(grid: RotatedGrid) -> Self {
        let mut field = Self::generate(grid, 0);
        field.cells.iter_mut().filter(|v| !v.is_nan()).for_each(|v| *v = 0.0);
        field.triangles.iter_mut().for_each(|v| *v = 0.0);
        field
    }

    fn triangle_range(grid: &RotatedGrid) -> std::ops::RangeInclusive<i64> {
        (1 - grid.j_max())..=grid.i_max()
    }

    pub fn grid(&self) -> &RotatedGrid {
        &self.grid
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// Noise over the cell with bottom vertex `(i, j)`.
    pub fn increment_over_cell(&self, i: i64, j: i64) -> Result<f64> {
        if !self.grid.contains_cell(i, j) {
            return Err(Error::Index {
                i,
                j,
                what: "noise cell window (cells need i + j >= 0)",
            });
        }
        Ok(self.cells[self.grid.offset(i, j)])
    }

    /// Noise over the initial-layer triangle below the point `(i, 1 - i)`.
    pub fn increment_over_seed_triangle(&self, i: i64) -> Result<f64> {
        let range = Self::triangle_range(&self.grid);
        if !range.contains(&i) {
            return Err(Error::Index {
                i,
                j: 1 - i,
                what: "layer-1 triangle range",
            });
        }
        Ok(self.triangles[(i - range.start()) as usize])
    }

    /// Unchecked cell access for the marching hot loop.
    #[inline]
    pub(crate) fn cell_at_offset(&self, offset: usize) -> f64 {
        self.cells[offset]
    }

    #[inline]
    pub(crate) fn triangle_unchecked(&self, i: i64) -> f64 {
        self.triangles[(i - (1 - self.grid.j_max())) as usize]
    }

    /// Iterator over `(i, j, increment)` for every cell of the window.
    pub fn cells(&self) -> impl Iterator<Item = (i64, i64, f64)> + '_ {
        let g = self.grid;
        (g.i_min()..g.i_max()).flat_map(move |i| {
            ((-i).max(g.j_min())..g.j_max()).map(move |j| (i, j, self.cells[g.offset(i, j)]))
        })
    }

    /// Iterator over `(i, increment)` for the layer-1 triangles.
    pub fn triangles(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        Self::triangle_range(&self.grid).zip(self.triangles.iter().copied())
    }

    /// Binary dump: little-endian `u64` header
    /// `[magic, version, n, master_seed, i_max, j_max]`, then the cell
    /// rectangle row-major (NaN below the initial line), then the layer-1
    /// triangles in increasing `i`, all as `f64`.
    pub fn write_dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header = [
            DUMP_MAGIC,
            DUMP_VERSION,
            u64::from(self.grid.n()),
            self.master_seed,
            self.grid.i_max() as u64,
            self.grid.j_max() as u64,
        ];
        for word in header {
            w.write_all(&word.to_le_bytes())?;
        }
        let g = self.grid;
        for i in g.i_min()..g.i_max() {
            for j in g.j_min()..g.j_max() {
                w.write_all(&self.cells[g.offset(i, j)].to_le_bytes())?;
            }
        }
        for v in &self.triangles {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_dump<R: Read>(mut r: R) -> Result<Self> {
        let io = |e: std::io::Error| Error::Configuration(format!("noise dump: {e}"));
        let mut word = [0u8; 8];
        let mut header = [0u64; 6];
        for slot in header.iter_mut() {
            r.read_exact(&mut word).map_err(io)?;
            *slot = u64::from_le_bytes(word);
        }
        if header[0] != DUMP_MAGIC || header[1] != DUMP_VERSION {
            return Err(Error::Configuration("noise dump: bad magic or version".into()));
        }
        let n = u32::try_from(header[2])
            .map_err(|_| Error::Configuration("noise dump: resolution overflow".into()))?;
        let grid = RotatedGrid::new(n, header[4] as i64, header[5] as i64)?;
        let mut cells = vec![f64::NAN; grid.height() * grid.width()];
        for i in grid.i_min()..grid.i_max() {
            for j in grid.j_min()..grid.j_max() {
                r.read_exact(&mut word).map_err(io)?;
                cells[grid.offset(i, j)] = f64::from_le_bytes(word);
            }
        }
        let mut triangles = Vec::new();
        for _ in Self::triangle_range(&grid) {
            r.read_exact(&mut word).map_err(io)?;
            triangles.push(f64::from_le_bytes(word));
        }
        Ok(Self {
            grid,
            master_seed: header[3],
            cells,
            triangles,
        })
    }
}
